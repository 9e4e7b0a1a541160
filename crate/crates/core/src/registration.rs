//! Scan-to-scan registration: point-to-point ICP and planar GICP.
//!
//! Both return the transform that maps source coordinates into the target
//! frame. For two scans taken at poses `p_target` and `p_source`, the result
//! estimates `p_target.between(&p_source)`.

use alloc::vec::Vec;

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use crate::geometry::{Pose2, Tangent2};
use crate::kdtree::KdTree;
use crate::math;
use crate::scan::PointCloud2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GicpConfig {
    /// Neighbors used for each local covariance.
    pub k_neighbors: usize,
    /// Minor eigenvalue after regularization (the major one is 1).
    pub epsilon: f64,
    /// Pairs farther apart than this are rejected, meters.
    pub max_corr_dist: f64,
    pub max_iterations: usize,
    /// Relative cost change that ends the iteration.
    pub tol: f64,
}

impl Default for GicpConfig {
    fn default() -> Self {
        Self { k_neighbors: 20, epsilon: 1e-3, max_corr_dist: 1.0, max_iterations: 50, tol: 1e-6 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchResult {
    pub relative_pose: Pose2,
    pub iterations: usize,
    pub final_cost: f64,
    pub converged: bool,
    pub num_correspondences: usize,
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum RegistrationError {
    #[error("cloud has {have} points, need at least {need}")]
    EmptyCloud { have: usize, need: usize },
    #[error("no correspondences within {max_dist} m at iteration {iteration}")]
    NoCorrespondences { iteration: usize, max_dist: f64 },
    #[error("cloud is missing per-point covariances")]
    MissingCovariances,
    #[error("combined covariance of pair {0} is not invertible")]
    SingularInformation(usize),
}

/// Below this many surviving pairs the alignment is considered lost.
const MIN_CORRESPONDENCES: usize = 3;
/// Costs below this are treated as an exact fit.
const ABS_COST_TOL: f64 = 1e-20;
const INNER_MAX_ITERATIONS: usize = 20;
const INNER_STEP_TOL: f64 = 1e-12;

/// A target cloud prepared for repeated alignment.
#[derive(Clone, Debug)]
pub struct RegistrationTarget {
    pub cloud: PointCloud2,
    pub tree: KdTree,
}

impl RegistrationTarget {
    pub fn new(cloud: PointCloud2) -> Self {
        let tree = KdTree::build(&cloud.points);
        Self { cloud, tree }
    }
}

/// Attaches a regularized local covariance to every point.
///
/// Each covariance is the sample covariance of the point's `k` nearest
/// neighbors (itself included) with its eigenvalues replaced by `(1, epsilon)`,
/// keeping the eigenvectors: points are modelled as lying on a line along the
/// dominant local direction.
pub fn estimate_covariances(
    cloud: &PointCloud2,
    k: usize,
    epsilon: f64,
) -> Result<PointCloud2, RegistrationError> {
    let need = k.max(3);
    if cloud.len() < need {
        return Err(RegistrationError::EmptyCloud { have: cloud.len(), need });
    }
    let tree = KdTree::build(&cloud.points);
    Ok(estimate_covariances_with(cloud, &tree, k, epsilon))
}

pub(crate) fn estimate_covariances_with(
    cloud: &PointCloud2,
    tree: &KdTree,
    k: usize,
    epsilon: f64,
) -> PointCloud2 {
    let covs = cloud
        .points
        .iter()
        .map(|&p| {
            let nbrs = tree.k_nearest(p, k);
            let n = nbrs.len() as f64;
            let mut mean = [0.0; 2];
            for nb in &nbrs {
                let q = cloud.points[nb.index];
                mean[0] += q[0];
                mean[1] += q[1];
            }
            mean[0] /= n;
            mean[1] /= n;
            let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
            for nb in &nbrs {
                let q = cloud.points[nb.index];
                let (dx, dy) = (q[0] - mean[0], q[1] - mean[1]);
                sxx += dx * dx;
                sxy += dx * dy;
                syy += dy * dy;
            }
            regularize(sxx, sxy, syy, epsilon)
        })
        .collect();
    PointCloud2 { points: cloud.points.clone(), covs: Some(covs) }
}

/// `R(φ) diag(1, ε) R(φ)ᵀ` with `φ` the direction of the major eigenvector of
/// `[[sxx, sxy], [sxy, syy]]`.
fn regularize(sxx: f64, sxy: f64, syy: f64, epsilon: f64) -> Matrix2<f64> {
    let phi = 0.5 * math::atan2(2.0 * sxy, sxx - syy);
    let (s, c) = math::sin_cos(phi);
    Matrix2::new(
        c * c + epsilon * s * s,
        c * s * (1.0 - epsilon),
        c * s * (1.0 - epsilon),
        s * s + epsilon * c * c,
    )
}

struct Pair {
    source: usize,
    target: usize,
}

/// Nearest-neighbor pairs under `pose`, with the mean squared distance.
fn correspond(
    source: &PointCloud2,
    target: &RegistrationTarget,
    pose: &Pose2,
    max_dist: f64,
    pairs: &mut Vec<Pair>,
) -> f64 {
    pairs.clear();
    let max_sq = max_dist * max_dist;
    let mut sum = 0.0;
    for (i, &a) in source.points.iter().enumerate() {
        let q = pose.transform_point(a);
        if let Some(nb) = target.tree.nearest(q) {
            if nb.dist_sq <= max_sq {
                pairs.push(Pair { source: i, target: nb.index });
                sum += nb.dist_sq;
            }
        }
    }
    if pairs.is_empty() {
        0.0
    } else {
        sum / pairs.len() as f64
    }
}

fn cost_converged(prev: Option<f64>, cost: f64, tol: f64) -> bool {
    if cost < ABS_COST_TOL {
        return true;
    }
    match prev {
        Some(p) => (p - cost).abs() <= tol * p.max(ABS_COST_TOL),
        None => false,
    }
}

/// Closed-form rigid fit of paired points, `b ≈ R a + t`.
fn procrustes(source: &[[f64; 2]], target: &[[f64; 2]], pairs: &[Pair]) -> Pose2 {
    let n = pairs.len() as f64;
    let (mut ca, mut cb) = ([0.0; 2], [0.0; 2]);
    for p in pairs {
        let (a, b) = (source[p.source], target[p.target]);
        ca[0] += a[0];
        ca[1] += a[1];
        cb[0] += b[0];
        cb[1] += b[1];
    }
    for v in [&mut ca, &mut cb] {
        v[0] /= n;
        v[1] /= n;
    }
    let (mut dot, mut cross) = (0.0, 0.0);
    for p in pairs {
        let (a, b) = (source[p.source], target[p.target]);
        let (ax, ay) = (a[0] - ca[0], a[1] - ca[1]);
        let (bx, by) = (b[0] - cb[0], b[1] - cb[1]);
        dot += ax * bx + ay * by;
        cross += ax * by - ay * bx;
    }
    let theta = math::atan2(cross, dot);
    let (s, c) = math::sin_cos(theta);
    Pose2::new(cb[0] - (c * ca[0] - s * ca[1]), cb[1] - (s * ca[0] + c * ca[1]), theta)
}

fn check_sizes(source: &PointCloud2, target: &PointCloud2) -> Result<(), RegistrationError> {
    for c in [source, target] {
        if c.len() < crate::scan::MIN_VALID_RETURNS {
            return Err(RegistrationError::EmptyCloud {
                have: c.len(),
                need: crate::scan::MIN_VALID_RETURNS,
            });
        }
    }
    Ok(())
}

/// Point-to-point ICP with closed-form updates.
pub fn icp_point_to_point(
    source: &PointCloud2,
    target: &RegistrationTarget,
    init: &Pose2,
    cfg: &GicpConfig,
) -> Result<MatchResult, RegistrationError> {
    check_sizes(source, &target.cloud)?;
    let mut pose = *init;
    let mut pairs = Vec::with_capacity(source.len());
    let mut prev = None;
    let mut result = MatchResult {
        relative_pose: pose,
        iterations: 0,
        final_cost: f64::INFINITY,
        converged: false,
        num_correspondences: 0,
    };
    for it in 1..=cfg.max_iterations {
        let cost = correspond(source, target, &pose, cfg.max_corr_dist, &mut pairs);
        if pairs.len() < MIN_CORRESPONDENCES {
            return Err(RegistrationError::NoCorrespondences {
                iteration: it,
                max_dist: cfg.max_corr_dist,
            });
        }
        result = MatchResult {
            relative_pose: pose,
            iterations: it,
            final_cost: cost,
            converged: cost_converged(prev, cost, cfg.tol),
            num_correspondences: pairs.len(),
        };
        if result.converged {
            break;
        }
        prev = Some(cost);
        pose = procrustes(&source.points, &target.cloud.points, &pairs);
    }
    Ok(result)
}

/// Generalized ICP: minimizes `Σ dᵀ (C_b + R C_a Rᵀ)⁻¹ d` with `d = b - T(a)`.
///
/// Correspondences are refreshed every outer iteration; with them fixed, the
/// Mahalanobis cost is minimized by Gauss-Newton on right perturbations of the
/// current estimate.
pub fn gicp_align(
    source: &PointCloud2,
    target: &RegistrationTarget,
    init: &Pose2,
    cfg: &GicpConfig,
) -> Result<MatchResult, RegistrationError> {
    check_sizes(source, &target.cloud)?;
    let (src_covs, tgt_covs) = match (&source.covs, &target.cloud.covs) {
        (Some(a), Some(b)) if source.has_covariances() && target.cloud.has_covariances() => (a, b),
        _ => return Err(RegistrationError::MissingCovariances),
    };
    let mut pose = *init;
    let mut pairs = Vec::with_capacity(source.len());
    let mut info = Vec::with_capacity(source.len());
    let mut prev = None;
    let mut result = MatchResult {
        relative_pose: pose,
        iterations: 0,
        final_cost: f64::INFINITY,
        converged: false,
        num_correspondences: 0,
    };
    for it in 1..=cfg.max_iterations {
        correspond(source, target, &pose, cfg.max_corr_dist, &mut pairs);
        if pairs.len() < MIN_CORRESPONDENCES {
            return Err(RegistrationError::NoCorrespondences {
                iteration: it,
                max_dist: cfg.max_corr_dist,
            });
        }
        mahalanobis(&pose, &pairs, src_covs, tgt_covs, &mut info)?;
        let cost = gicp_cost(source, target, &pose, &pairs, &info);
        result = MatchResult {
            relative_pose: pose,
            iterations: it,
            final_cost: cost,
            converged: cost_converged(prev, cost, cfg.tol),
            num_correspondences: pairs.len(),
        };
        if result.converged {
            break;
        }
        prev = Some(cost);
        for _ in 0..INNER_MAX_ITERATIONS {
            let step = gauss_newton_step(source, target, &pose, &pairs, &info);
            pose = pose.retract(&step);
            if step.norm_inf() < INNER_STEP_TOL {
                break;
            }
            mahalanobis(&pose, &pairs, src_covs, tgt_covs, &mut info)?;
        }
    }
    Ok(result)
}

fn mahalanobis(
    pose: &Pose2,
    pairs: &[Pair],
    src_covs: &[Matrix2<f64>],
    tgt_covs: &[Matrix2<f64>],
    out: &mut Vec<Matrix2<f64>>,
) -> Result<(), RegistrationError> {
    let r = pose.rotation_matrix();
    out.clear();
    for (k, p) in pairs.iter().enumerate() {
        let combined = tgt_covs[p.target] + r * src_covs[p.source] * r.transpose();
        let m = combined.try_inverse().ok_or(RegistrationError::SingularInformation(k))?;
        if !m.iter().all(|v| v.is_finite()) {
            return Err(RegistrationError::SingularInformation(k));
        }
        out.push(m);
    }
    Ok(())
}

fn residual(source: &PointCloud2, target: &RegistrationTarget, pose: &Pose2, p: &Pair) -> Vector2<f64> {
    let a = pose.transform_point(source.points[p.source]);
    let b = target.cloud.points[p.target];
    Vector2::new(b[0] - a[0], b[1] - a[1])
}

fn gicp_cost(
    source: &PointCloud2,
    target: &RegistrationTarget,
    pose: &Pose2,
    pairs: &[Pair],
    info: &[Matrix2<f64>],
) -> f64 {
    let sum: f64 = pairs
        .iter()
        .zip(info)
        .map(|(p, m)| {
            let d = residual(source, target, pose, p);
            d.dot(&(m * d))
        })
        .sum();
    sum / pairs.len() as f64
}

fn gauss_newton_step(
    source: &PointCloud2,
    target: &RegistrationTarget,
    pose: &Pose2,
    pairs: &[Pair],
    info: &[Matrix2<f64>],
) -> Tangent2 {
    let r = pose.rotation_matrix();
    let mut h = Matrix3::zeros();
    let mut g = Vector3::zeros();
    for (p, m) in pairs.iter().zip(info) {
        let a = source.points[p.source];
        let d = residual(source, target, pose, p);
        // d(b - T·exp(ξ)·a)/dξ = -R [I | a⊥]
        let j: Matrix2x3<f64> = -r * Matrix2x3::new(1.0, 0.0, -a[1], 0.0, 1.0, a[0]);
        let jtm = j.transpose() * m;
        h += jtm * j;
        g += jtm * d;
    }
    let delta = match h.cholesky() {
        Some(ch) => ch.solve(&-g),
        // rank-deficient geometry (e.g. a single straight wall): damp it
        None => {
            let damped = h + Matrix3::identity() * (1e-9 * h.trace().max(1e-12));
            damped.cholesky().map(|ch| ch.solve(&-g)).unwrap_or_else(Vector3::zeros)
        }
    };
    Tangent2::from_vector(&delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// An L-shaped room corner plus a pillar, densely sampled.
    fn room_cloud() -> PointCloud2 {
        let mut pts = Vec::new();
        for i in 0..60 {
            let s = i as f64 * 0.05;
            pts.push([s, 0.0]);
            pts.push([0.0, s + 0.05]);
            pts.push([3.0, s * 0.5]);
        }
        for i in 0..24 {
            let a = i as f64 * core::f64::consts::TAU / 24.0;
            pts.push([1.5 + 0.2 * libm::cos(a), 1.5 + 0.2 * libm::sin(a)]);
        }
        PointCloud2::new(pts)
    }

    fn with_covs(c: &PointCloud2) -> PointCloud2 {
        estimate_covariances(c, 20, 1e-3).unwrap()
    }

    fn pose_err(a: &Pose2, b: &Pose2) -> (f64, f64) {
        let d = a.between(b);
        (math::hypot(d.x, d.y), d.theta.abs())
    }

    #[test]
    fn collinear_points_give_horizontal_covariance() {
        let c = PointCloud2::new((0..20).map(|i| [i as f64 * 0.1, 0.0]).collect());
        let c = estimate_covariances(&c, 5, 1e-3).unwrap();
        for m in c.covs.unwrap() {
            let eig = SymmetricEigen::new(m);
            let (imax, imin) = if eig.eigenvalues[0] > eig.eigenvalues[1] { (0, 1) } else { (1, 0) };
            assert!((eig.eigenvalues[imax] - 1.0).abs() < 1e-12);
            assert!((eig.eigenvalues[imin] - 1e-3).abs() < 1e-12);
            let v = eig.eigenvectors.column(imax);
            assert!((v[0].abs() - 1.0).abs() < 1e-12 && v[1].abs() < 1e-12);
        }
    }

    #[test]
    fn vertical_wall_gives_vertical_major_axis() {
        let c = PointCloud2::new((0..20).map(|i| [2.0, i as f64 * 0.1]).collect());
        let c = estimate_covariances(&c, 5, 1e-3).unwrap();
        for m in c.covs.unwrap() {
            let eig = SymmetricEigen::new(m);
            let imax = if eig.eigenvalues[0] > eig.eigenvalues[1] { 0 } else { 1 };
            let v = eig.eigenvectors.column(imax);
            assert!(v[0].abs() < 1e-12 && (v[1].abs() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn isotropic_blob_regularizes_to_fixed_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c = PointCloud2::new(
            (0..200).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect(),
        );
        let c = estimate_covariances(&c, 20, 1e-3).unwrap();
        for m in c.covs.unwrap() {
            let eig = SymmetricEigen::new(m);
            let mut ev = [eig.eigenvalues[0], eig.eigenvalues[1]];
            ev.sort_by(f64::total_cmp);
            assert!((ev[0] - 1e-3).abs() < 1e-12 && (ev[1] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn too_few_points_for_k() {
        let c = PointCloud2::new(alloc::vec![[0.0, 0.0]; 4]);
        assert!(matches!(estimate_covariances(&c, 5, 1e-3), Err(RegistrationError::EmptyCloud { .. })));
    }

    #[test]
    fn icp_self_match() {
        let c = room_cloud();
        let r = icp_point_to_point(&c, &RegistrationTarget::new(c.clone()), &Pose2::IDENTITY, &GicpConfig::default())
            .unwrap();
        assert_eq!(r.relative_pose, Pose2::IDENTITY);
        assert!(r.converged && r.iterations <= 2);
    }

    #[test]
    fn icp_recovers_applied_transform() {
        // walls sampled on a lattice give aliased minima for point-to-point,
        // so use scattered points
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let source = PointCloud2::new(
            (0..300).map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect(),
        );
        let truth = Pose2::new(0.03, -0.02, 0.01);
        let target = RegistrationTarget::new(source.transformed(&truth));
        let cfg = GicpConfig { max_iterations: 500, tol: 1e-12, ..GicpConfig::default() };
        let r = icp_point_to_point(&source, &target, &Pose2::IDENTITY, &cfg).unwrap();
        let (et, er) = pose_err(&r.relative_pose, &truth);
        assert!(et < 1e-3 && er < 1e-3, "{} {et} {er}", r.relative_pose);
    }

    #[test]
    fn icp_rejects_far_init() {
        let c = room_cloud();
        let far = Pose2::new(50.0, 50.0, 0.0);
        let e = icp_point_to_point(&c, &RegistrationTarget::new(c.clone()), &far, &GicpConfig::default());
        assert!(matches!(e, Err(RegistrationError::NoCorrespondences { iteration: 1, .. })));
        let cc = with_covs(&c);
        let e = gicp_align(&cc, &RegistrationTarget::new(cc.clone()), &far, &GicpConfig::default());
        assert!(matches!(e, Err(RegistrationError::NoCorrespondences { .. })));
    }

    #[test]
    fn gicp_self_match() {
        let c = with_covs(&room_cloud());
        let r = gicp_align(&c, &RegistrationTarget::new(c.clone()), &Pose2::IDENTITY, &GicpConfig::default())
            .unwrap();
        assert_eq!(r.relative_pose, Pose2::IDENTITY);
        assert!(r.final_cost < 1e-9 && r.converged);
    }

    #[test]
    fn gicp_requires_covariances() {
        let c = room_cloud();
        let e = gicp_align(&c, &RegistrationTarget::new(c.clone()), &Pose2::IDENTITY, &GicpConfig::default());
        assert_eq!(e.unwrap_err(), RegistrationError::MissingCovariances);
    }

    #[test]
    fn gicp_recovers_applied_transform() {
        let base = room_cloud();
        let truth = Pose2::new(0.2, 0.0, 0.1);
        let source = with_covs(&base);
        let target = RegistrationTarget::new(with_covs(&base.transformed(&truth)));
        let r = gicp_align(&source, &target, &Pose2::IDENTITY, &GicpConfig::default()).unwrap();
        let (et, er) = pose_err(&r.relative_pose, &truth);
        assert!(et < 1e-3 && er < 1e-3, "{} {et} {er}", r.relative_pose);
    }

    #[test]
    fn gicp_with_identity_covariances_matches_icp() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let base = room_cloud();
        for _ in 0..10 {
            let truth = Pose2::new(
                rng.random_range(-0.2..0.2),
                rng.random_range(-0.2..0.2),
                rng.random_range(-0.15..0.15),
            );
            let mut target = base.transformed(&truth);
            for p in &mut target.points {
                p[0] += rng.random_range(-0.01..0.01);
                p[1] += rng.random_range(-0.01..0.01);
            }
            let source = base.clone().with_identity_covariances();
            let target = RegistrationTarget::new(target.with_identity_covariances());
            let cfg = GicpConfig::default();
            let g = gicp_align(&source, &target, &Pose2::IDENTITY, &cfg).unwrap();
            let i = icp_point_to_point(&source, &target, &Pose2::IDENTITY, &cfg).unwrap();
            let (et, er) = pose_err(&g.relative_pose, &i.relative_pose);
            assert!(et < 1e-6 && er < 1e-6, "{et} {er}");
            assert_eq!(g.iterations, i.iterations);
        }
    }

    #[test]
    fn registration_is_equivariant() {
        let base = room_cloud();
        let truth = Pose2::new(0.12, -0.07, 0.08);
        let g = Pose2::new(3.0, -1.0, 0.9);
        let cfg = GicpConfig::default();

        let source = with_covs(&base);
        let target = with_covs(&base.transformed(&truth));
        let r = gicp_align(&source, &RegistrationTarget::new(target.clone()), &Pose2::IDENTITY, &cfg).unwrap();

        let gs = source.transformed(&g);
        let gt = target.transformed(&g);
        let init = g * Pose2::IDENTITY * g.inverse();
        let rg = gicp_align(&gs, &RegistrationTarget::new(gt), &init, &cfg).unwrap();
        let expected = g * r.relative_pose * g.inverse();
        let (et, er) = pose_err(&rg.relative_pose, &expected);
        assert!(et < 1e-6 && er < 1e-6, "{et} {er}");
    }

    #[test]
    fn final_cost_not_above_initial() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let base = room_cloud();
        for _ in 0..10 {
            let truth = Pose2::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.2..0.2));
            let source = with_covs(&base);
            let target = RegistrationTarget::new(with_covs(&base.transformed(&truth)));
            let cfg = GicpConfig { max_iterations: 1, ..GicpConfig::default() };
            let first = gicp_align(&source, &target, &Pose2::IDENTITY, &cfg).unwrap();
            let last = gicp_align(&source, &target, &Pose2::IDENTITY, &GicpConfig::default()).unwrap();
            assert!(last.final_cost <= first.final_cost);
            let cfg = GicpConfig { max_iterations: 1, ..GicpConfig::default() };
            let first = icp_point_to_point(&source, &target, &Pose2::IDENTITY, &cfg).unwrap();
            let last = icp_point_to_point(&source, &target, &Pose2::IDENTITY, &GicpConfig::default()).unwrap();
            assert!(last.final_cost <= first.final_cost);
        }
    }
}
