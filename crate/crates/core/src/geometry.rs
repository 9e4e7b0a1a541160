//! SE(2) group operations.
//!
//! Tangent vectors are ordered `(dx, dy, dtheta)`, translation first. Updates
//! are applied on the right: `x ⊕ ξ = x · exp(ξ)`, so every Jacobian in this
//! module is expressed in the body frame of the pose being perturbed.

use core::fmt;
use core::ops::Mul;

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

use crate::math::{self, wrap_angle};

/// Below this rotation magnitude `exp`, `log` and the Jacobians switch to
/// Taylor expansions.
pub const SMALL_ANGLE: f64 = 1e-7;

/// A planar rigid transform. `theta` is kept in (-pi, pi].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

/// Local coordinates of a small motion, `(dx, dy, dtheta)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Tangent2 {
    pub dx: f64,
    pub dy: f64,
    pub dtheta: f64,
}

impl Tangent2 {
    pub const ZERO: Tangent2 = Tangent2 { dx: 0.0, dy: 0.0, dtheta: 0.0 };

    pub const fn new(dx: f64, dy: f64, dtheta: f64) -> Self {
        Self { dx, dy, dtheta }
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.dx, self.dy, self.dtheta)
    }

    pub fn is_finite(&self) -> bool {
        self.dx.is_finite() && self.dy.is_finite() && self.dtheta.is_finite()
    }

    /// Max-abs norm.
    pub fn norm_inf(&self) -> f64 {
        self.dx.abs().max(self.dy.abs()).max(self.dtheta.abs())
    }
}

impl Default for Pose2 {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl fmt::Display for Pose2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Pose2({}, {}, {})", self.x, self.y, self.theta)
    }
}

/// `(sin θ / θ, (1 - cos θ) / θ)`, the coefficients of the SE(2) V matrix.
fn v_coefficients(theta: f64) -> (f64, f64) {
    if theta.abs() < SMALL_ANGLE {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0, theta / 2.0 - theta * t2 / 24.0)
    } else {
        let (s, c) = math::sin_cos(theta);
        (s / theta, (1.0 - c) / theta)
    }
}

impl Pose2 {
    pub const IDENTITY: Pose2 = Pose2 { x: 0.0, y: 0.0, theta: 0.0 };

    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta: wrap_angle(theta) }
    }

    pub fn from_translation(x: f64, y: f64) -> Self {
        Self { x, y, theta: 0.0 }
    }

    pub fn from_rotation(theta: f64) -> Self {
        Self::new(0.0, 0.0, theta)
    }

    pub fn translation(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    pub fn rotation_matrix(&self) -> Matrix2<f64> {
        let (s, c) = math::sin_cos(self.theta);
        Matrix2::new(c, -s, s, c)
    }

    /// Homogeneous 3x3 matrix.
    pub fn to_matrix(&self) -> Matrix3<f64> {
        let (s, c) = math::sin_cos(self.theta);
        Matrix3::new(c, -s, self.x, s, c, self.y, 0.0, 0.0, 1.0)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }

    /// Group exponential.
    pub fn exp(xi: &Tangent2) -> Self {
        let (a, b) = v_coefficients(xi.dtheta);
        Self::new(a * xi.dx - b * xi.dy, b * xi.dx + a * xi.dy, xi.dtheta)
    }

    /// Group logarithm. At `theta = pi` the branch with `dtheta = pi` is
    /// returned, since that is how `theta` is stored.
    pub fn log(&self) -> Tangent2 {
        let (a, b) = v_coefficients(self.theta);
        let det = a * a + b * b;
        Tangent2::new(
            (a * self.x + b * self.y) / det,
            (-b * self.x + a * self.y) / det,
            self.theta,
        )
    }

    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let (s, c) = math::sin_cos(self.theta);
        Pose2::new(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.theta + other.theta,
        )
    }

    pub fn inverse(&self) -> Pose2 {
        let (s, c) = math::sin_cos(self.theta);
        Pose2::new(-(c * self.x + s * self.y), s * self.x - c * self.y, -self.theta)
    }

    /// `self⁻¹ · other`: `other` expressed in the frame of `self`.
    pub fn between(&self, other: &Pose2) -> Pose2 {
        let (s, c) = math::sin_cos(self.theta);
        let dx = other.x - self.x;
        let dy = other.y - self.y;
        Pose2::new(c * dx + s * dy, -s * dx + c * dy, other.theta - self.theta)
    }

    pub fn transform_point(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = math::sin_cos(self.theta);
        [c * p[0] - s * p[1] + self.x, s * p[0] + c * p[1] + self.y]
    }

    /// Right retraction `self · exp(xi)`.
    pub fn retract(&self, xi: &Tangent2) -> Pose2 {
        self.compose(&Pose2::exp(xi))
    }

    /// `log(self⁻¹ · other)`, the inverse of [`Pose2::retract`].
    pub fn local(&self, other: &Pose2) -> Tangent2 {
        self.between(other).log()
    }

    /// Adjoint map: `self · exp(ξ) · self⁻¹ = exp(Adj · ξ)`.
    pub fn adjoint(&self) -> Matrix3<f64> {
        let (s, c) = math::sin_cos(self.theta);
        Matrix3::new(c, -s, self.y, s, c, -self.x, 0.0, 0.0, 1.0)
    }
}

impl Mul for Pose2 {
    type Output = Pose2;

    fn mul(self, rhs: Pose2) -> Pose2 {
        self.compose(&rhs)
    }
}

/// Right Jacobian of the exponential: `exp(ξ + δ) ≈ exp(ξ) · exp(Jr(ξ) δ)`.
pub fn right_jacobian(xi: &Tangent2) -> Matrix3<f64> {
    let t = xi.dtheta;
    let (a, b) = v_coefficients(t);
    let (p1, p2) = (xi.dx, xi.dy);
    // (θ - sin θ)/θ² and (1 - cos θ)/θ²
    let (f, g) = if t.abs() < SMALL_ANGLE {
        let t2 = t * t;
        (t / 6.0 - t * t2 / 120.0, 0.5 - t2 / 24.0)
    } else {
        let (s, c) = math::sin_cos(t);
        ((t - s) / (t * t), (1.0 - c) / (t * t))
    };
    Matrix3::new(
        a,
        b,
        p1 * f - p2 * g,
        -b,
        a,
        p1 * g + p2 * f,
        0.0,
        0.0,
        1.0,
    )
}

/// Inverse of [`right_jacobian`]: `log(X · exp(δ)) ≈ log(X) + Jr⁻¹(log X) δ`.
pub fn right_jacobian_inv(xi: &Tangent2) -> Matrix3<f64> {
    let jr = right_jacobian(xi);
    let (a, b) = (jr[(0, 0)], jr[(0, 1)]);
    let det = a * a + b * b;
    // inverse of [[a, b], [-b, a]]
    let m = Matrix2::new(a / det, -b / det, b / det, a / det);
    let col = m * Vector2::new(jr[(0, 2)], jr[(1, 2)]);
    Matrix3::new(
        m[(0, 0)],
        m[(0, 1)],
        -col[0],
        m[(1, 0)],
        m[(1, 1)],
        -col[1],
        0.0,
        0.0,
        1.0,
    )
}

/// Jacobians of `between(a ⊕ ξa, b ⊕ ξb)` with respect to `ξa` and `ξb` at
/// zero, in local coordinates at `between(a, b)`.
///
/// The result is `(-Adj(between(b, a)), I)`.
pub fn between_jacobians(a: &Pose2, b: &Pose2) -> (Matrix3<f64>, Matrix3<f64>) {
    (-b.between(a).adjoint(), Matrix3::identity())
}

/// Jacobians of the between-factor error `log(z⁻¹ · between(a ⊕ ξa, b ⊕ ξb))`
/// at zero. Returns `(error, d error / d ξa, d error / d ξb)`.
pub fn between_error_jacobians(
    a: &Pose2,
    b: &Pose2,
    z: &Pose2,
) -> (Tangent2, Matrix3<f64>, Matrix3<f64>) {
    let err = z.between(&a.between(b)).log();
    let jinv = right_jacobian_inv(&err);
    let (ja, _) = between_jacobians(a, b);
    (err, jinv * ja, jinv)
}

/// Error and Jacobian of a prior `log(z⁻¹ · (x ⊕ ξ))` at zero.
pub fn prior_error_jacobian(x: &Pose2, z: &Pose2) -> (Tangent2, Matrix3<f64>) {
    let err = z.between(x).log();
    (err, right_jacobian_inv(&err))
}

/// A 3x3 covariance over `(dx, dy, dtheta)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cov3(Matrix3<f64>);

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
pub enum CovError {
    #[error("covariance is not symmetric")]
    NotSymmetric,
    #[error("covariance is not positive definite")]
    NotPositiveDefinite,
}

impl Cov3 {
    pub fn new(m: Matrix3<f64>) -> Result<Self, CovError> {
        for i in 0..3 {
            for j in 0..i {
                if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 {
                    return Err(CovError::NotSymmetric);
                }
            }
        }
        if m.cholesky().is_none() {
            return Err(CovError::NotPositiveDefinite);
        }
        Ok(Self(m))
    }

    pub fn diagonal(sx: f64, sy: f64, stheta: f64) -> Result<Self, CovError> {
        Self::new(Matrix3::from_diagonal(&Vector3::new(sx * sx, sy * sy, stheta * stheta)))
    }

    pub fn isotropic(sigma: f64) -> Result<Self, CovError> {
        Self::diagonal(sigma, sigma, sigma)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }
}
