//! Pose factor graphs and their MAP estimate.
//!
//! Under Gaussian noise the MAP assignment minimizes the sum of squared
//! whitened residuals `‖W · log(z⁻¹ · h(X))‖²` over all factors, where `h` is
//! the identity for priors and `between` for relative-pose factors. The
//! problem is solved with Levenberg-Marquardt in local coordinates: every
//! step linearizes all factors, solves the damped normal equations with a
//! sparse Cholesky factorization and retracts each pose by `exp(ξ)`.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;
use core::fmt;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::geometry::{between_error_jacobians, prior_error_jacobian, Cov3, Pose2, Tangent2};
use crate::sparse::{CscUpper, SymbolicCholesky};

/// Key of a pose variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct VarId(pub u64);

impl fmt::Display for VarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x{}", self.0)
    }
}

/// Gaussian noise with its square-root information matrix `W`
/// (upper triangular, `WᵀW = Σ⁻¹`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseModel {
    cov: Cov3,
    sqrt_info: Matrix3<f64>,
}

impl NoiseModel {
    pub fn new(cov: Cov3) -> Self {
        // Cov3 guarantees positive definiteness, so both factorizations succeed.
        let info = cov.matrix().cholesky().expect("positive definite").inverse();
        let l = info.cholesky().expect("positive definite").unpack();
        Self { cov, sqrt_info: l.transpose() }
    }

    /// Diagonal noise from standard deviations. Panics on non-positive sigmas.
    pub fn diagonal(sigma_x: f64, sigma_y: f64, sigma_theta: f64) -> Self {
        Self::new(Cov3::diagonal(sigma_x, sigma_y, sigma_theta).expect("sigmas must be positive"))
    }

    pub fn isotropic(sigma: f64) -> Self {
        Self::diagonal(sigma, sigma, sigma)
    }

    pub fn covariance(&self) -> &Cov3 {
        &self.cov
    }

    pub fn sqrt_info(&self) -> &Matrix3<f64> {
        &self.sqrt_info
    }

    pub fn whiten(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.sqrt_info * v
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PriorFactor {
    pub var: VarId,
    pub z: Pose2,
    pub noise: NoiseModel,
}

/// Relative-pose constraint: `z` measures `between(x_a, x_b)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BetweenFactor {
    pub var_a: VarId,
    pub var_b: VarId,
    pub z: Pose2,
    pub noise: NoiseModel,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Factor {
    Prior(PriorFactor),
    Between(BetweenFactor),
}

impl Factor {
    pub fn prior(var: VarId, z: Pose2, noise: NoiseModel) -> Self {
        Factor::Prior(PriorFactor { var, z, noise })
    }

    pub fn between(var_a: VarId, var_b: VarId, z: Pose2, noise: NoiseModel) -> Self {
        Factor::Between(BetweenFactor { var_a, var_b, z, noise })
    }

    pub fn keys(&self) -> impl Iterator<Item = VarId> {
        let (a, b) = match self {
            Factor::Prior(f) => (f.var, None),
            Factor::Between(f) => (f.var_a, Some(f.var_b)),
        };
        core::iter::once(a).chain(b)
    }

    pub fn noise(&self) -> &NoiseModel {
        match self {
            Factor::Prior(f) => &f.noise,
            Factor::Between(f) => &f.noise,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum GraphError {
    #[error("variable {0} is referenced by a factor but has no value")]
    MissingVariable(VarId),
    #[error("between factor connects {0} to itself")]
    SelfLoop(VarId),
    #[error("normal equations are not positive definite; is the graph anchored by a prior?")]
    IndefiniteSystem,
}

/// Assignment of poses to variables.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Values(BTreeMap<VarId, Pose2>);

impl Values {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: VarId, pose: Pose2) -> Option<Pose2> {
        self.0.insert(id, pose)
    }

    pub fn get(&self, id: VarId) -> Option<&Pose2> {
        self.0.get(&id)
    }

    pub fn try_get(&self, id: VarId) -> Result<&Pose2, GraphError> {
        self.0.get(&id).ok_or(GraphError::MissingVariable(id))
    }

    pub fn contains(&self, id: VarId) -> bool {
        self.0.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (VarId, &Pose2)> {
        self.0.iter().map(|(k, v)| (*k, v))
    }

    pub fn keys(&self) -> impl Iterator<Item = VarId> + '_ {
        self.0.keys().copied()
    }

    /// Right retraction of every variable present in `delta`.
    pub fn retract(&self, delta: &BTreeMap<VarId, Tangent2>) -> Values {
        let mut out = self.clone();
        for (id, xi) in delta {
            if let Some(p) = out.0.get_mut(id) {
                *p = p.retract(xi);
            }
        }
        out
    }
}

impl FromIterator<(VarId, Pose2)> for Values {
    fn from_iter<I: IntoIterator<Item = (VarId, Pose2)>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// Whitened residual of one factor.
pub fn factor_error(f: &Factor, v: &Values) -> Result<Vector3<f64>, GraphError> {
    let raw = match f {
        Factor::Prior(p) => p.z.between(v.try_get(p.var)?).log(),
        Factor::Between(b) => {
            if b.var_a == b.var_b {
                return Err(GraphError::SelfLoop(b.var_a));
            }
            let xa = v.try_get(b.var_a)?;
            let xb = v.try_get(b.var_b)?;
            b.z.between(&xa.between(xb)).log()
        }
    };
    Ok(f.noise().whiten(&raw.to_vector()))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FactorGraph {
    factors: Vec<Factor>,
}

impl FactorGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, f: Factor) {
        self.factors.push(f);
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    /// Factors touching `id`.
    pub fn factors_on(&self, id: VarId) -> impl Iterator<Item = &Factor> {
        self.factors.iter().filter(move |f| f.keys().any(|k| k == id))
    }

    /// Total weighted squared residual.
    pub fn error(&self, v: &Values) -> Result<f64, GraphError> {
        let mut sum = 0.0;
        for f in &self.factors {
            sum += factor_error(f, v)?.norm_squared();
        }
        Ok(sum)
    }

    /// Variables referenced by any factor, in key order.
    pub fn ordering(&self) -> Vec<VarId> {
        let keys: BTreeSet<VarId> = self.factors.iter().flat_map(|f| f.keys()).collect();
        keys.into_iter().collect()
    }

    /// Writes one factor per line:
    /// `PRIOR id x y theta var_x var_y var_theta` or
    /// `BETWEEN id_a id_b x y theta var_x var_y var_theta`.
    pub fn write_edge_list<W: fmt::Write>(&self, w: &mut W) -> fmt::Result {
        for f in &self.factors {
            let c = f.noise().covariance().matrix();
            match f {
                Factor::Prior(p) => write!(w, "PRIOR {} {} {} {}", p.var.0, p.z.x, p.z.y, p.z.theta)?,
                Factor::Between(b) => write!(
                    w,
                    "BETWEEN {} {} {} {} {}",
                    b.var_a.0, b.var_b.0, b.z.x, b.z.y, b.z.theta
                )?,
            }
            writeln!(w, " {} {} {}", c[(0, 0)], c[(1, 1)], c[(2, 2)])?;
        }
        Ok(())
    }
}

/// One block row of the whitened Jacobian: one or two 3x3 blocks.
#[derive(Clone, Copy, Debug)]
pub struct JacobianRow {
    pub cols: [usize; 2],
    pub blocks: [Matrix3<f64>; 2],
    pub len: usize,
    pub residual: Vector3<f64>,
}

impl JacobianRow {
    pub fn entries(&self) -> impl Iterator<Item = (usize, &Matrix3<f64>)> {
        self.cols.iter().copied().zip(self.blocks.iter()).take(self.len)
    }
}

/// Linearized graph `‖J ξ + r‖²`, block-sparse with 3 rows per factor and
/// 3 columns per variable.
#[derive(Clone, Debug)]
pub struct LinearSystem {
    pub ordering: Vec<VarId>,
    pub rows: Vec<JacobianRow>,
}

impl LinearSystem {
    pub fn num_vars(&self) -> usize {
        self.ordering.len()
    }

    pub fn error(&self) -> f64 {
        self.rows.iter().map(|r| r.residual.norm_squared()).sum()
    }

    pub fn dense_jacobian(&self) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(3 * self.rows.len(), 3 * self.num_vars());
        for (k, row) in self.rows.iter().enumerate() {
            for (c, b) in row.entries() {
                j.fixed_view_mut::<3, 3>(3 * k, 3 * c).copy_from(b);
            }
        }
        j
    }

    pub fn dense_residual(&self) -> DVector<f64> {
        let mut r = DVector::zeros(3 * self.rows.len());
        for (k, row) in self.rows.iter().enumerate() {
            r.fixed_rows_mut::<3>(3 * k).copy_from(&row.residual);
        }
        r
    }

    /// Number of nonzero 3x3 blocks in `J`.
    pub fn num_blocks(&self) -> usize {
        self.rows.iter().map(|r| r.len).sum()
    }
}

pub fn linearize(g: &FactorGraph, v: &Values) -> Result<LinearSystem, GraphError> {
    let ordering = g.ordering();
    let index: BTreeMap<VarId, usize> = ordering.iter().enumerate().map(|(i, k)| (*k, i)).collect();
    let rows = linearize_rows(g, v, &index)?;
    Ok(LinearSystem { ordering, rows })
}

fn linearize_rows(
    g: &FactorGraph,
    v: &Values,
    index: &BTreeMap<VarId, usize>,
) -> Result<Vec<JacobianRow>, GraphError> {
    g.factors
        .iter()
        .map(|f| {
            let w = f.noise().sqrt_info();
            Ok(match f {
                Factor::Prior(p) => {
                    let (e, j) = prior_error_jacobian(v.try_get(p.var)?, &p.z);
                    JacobianRow {
                        cols: [index[&p.var], 0],
                        blocks: [w * j, Matrix3::zeros()],
                        len: 1,
                        residual: w * e.to_vector(),
                    }
                }
                Factor::Between(b) => {
                    if b.var_a == b.var_b {
                        return Err(GraphError::SelfLoop(b.var_a));
                    }
                    let xa = v.try_get(b.var_a)?;
                    let xb = v.try_get(b.var_b)?;
                    let (e, ja, jb) = between_error_jacobians(xa, xb, &b.z);
                    JacobianRow {
                        cols: [index[&b.var_a], index[&b.var_b]],
                        blocks: [w * ja, w * jb],
                        len: 2,
                        residual: w * e.to_vector(),
                    }
                }
            })
        })
        .collect()
}

/// Scalar CSC layout of the block-sparse `JᵀJ`, fixed by graph structure.
struct HessianLayout {
    pattern: CscUpper,
    /// For each block column, its block rows (all `<=` the column) and the
    /// value offset of row `3·i` in each of the three scalar columns.
    columns: Vec<Vec<(usize, [usize; 3])>>,
}

impl HessianLayout {
    fn new(n_vars: usize, rows: &[JacobianRow]) -> Self {
        let mut blocks: Vec<BTreeSet<usize>> = alloc::vec![BTreeSet::new(); n_vars];
        for row in rows {
            for (ci, _) in row.entries() {
                for (cj, _) in row.entries() {
                    if ci <= cj {
                        blocks[cj].insert(ci);
                    }
                }
            }
        }
        let n = 3 * n_vars;
        let mut col_ptr = alloc::vec![0usize; n + 1];
        let mut row_idx = Vec::new();
        let mut columns = Vec::with_capacity(n_vars);
        for (j, set) in blocks.iter().enumerate() {
            let mut offsets: Vec<(usize, [usize; 3])> = set.iter().map(|&i| (i, [0; 3])).collect();
            for c in 0..3 {
                let col = 3 * j + c;
                for entry in offsets.iter_mut() {
                    let i = entry.0;
                    entry.1[c] = row_idx.len();
                    let last = if i == j { 3 * i + c } else { 3 * i + 2 };
                    row_idx.extend(3 * i..=last);
                }
                col_ptr[col + 1] = row_idx.len();
            }
            columns.push(offsets);
        }
        let values = alloc::vec![0.0; row_idx.len()];
        Self { pattern: CscUpper { n, col_ptr, row_idx, values }, columns }
    }

    /// Assembles `JᵀJ` and `-Jᵀr`.
    fn assemble(&mut self, rows: &[JacobianRow]) -> Vec<f64> {
        self.pattern.values.iter_mut().for_each(|v| *v = 0.0);
        let mut rhs = alloc::vec![0.0; self.pattern.n];
        for row in rows {
            for (ci, bi) in row.entries() {
                let g = bi.transpose() * row.residual;
                for k in 0..3 {
                    rhs[3 * ci + k] -= g[k];
                }
                for (cj, bj) in row.entries() {
                    if ci > cj {
                        continue;
                    }
                    let h = bi.transpose() * bj;
                    let col = &self.columns[cj];
                    let pos = col.binary_search_by_key(&ci, |e| e.0).expect("block in layout");
                    let offs = col[pos].1;
                    for c in 0..3 {
                        let rmax = if ci == cj { c } else { 2 };
                        for r in 0..=rmax {
                            self.pattern.values[offs[c] + r] += h[(r, c)];
                        }
                    }
                }
            }
        }
        rhs
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    /// Relative error decrease that counts as converged.
    pub tol: f64,
    /// Absolute error that counts as converged.
    pub abs_tol: f64,
    pub lambda_init: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub lambda_factor: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            tol: 1e-9,
            abs_tol: 1e-20,
            lambda_init: 1e-5,
            lambda_min: 1e-12,
            lambda_max: 1e4,
            lambda_factor: 10.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveReport {
    pub initial_error: f64,
    pub final_error: f64,
    /// Number of linearizations.
    pub iterations: usize,
    pub converged: bool,
}

/// Levenberg-Marquardt over all variables referenced by `g`. Variables in
/// `v0` that no factor touches are returned unchanged.
/// True when every variable is connected to a prior through between factors.
fn anchored(g: &FactorGraph, index: &BTreeMap<VarId, usize>) -> bool {
    let n = index.len();
    let mut adj: Vec<Vec<usize>> = alloc::vec![Vec::new(); n];
    let mut seen = alloc::vec![false; n];
    let mut queue = Vec::new();
    for f in &g.factors {
        match f {
            Factor::Prior(p) => {
                let i = index[&p.var];
                if !seen[i] {
                    seen[i] = true;
                    queue.push(i);
                }
            }
            Factor::Between(b) => {
                let (i, j) = (index[&b.var_a], index[&b.var_b]);
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    while let Some(i) = queue.pop() {
        for &j in &adj[i] {
            if !seen[j] {
                seen[j] = true;
                queue.push(j);
            }
        }
    }
    seen.iter().all(|&s| s)
}

pub fn optimize(
    g: &FactorGraph,
    v0: &Values,
    cfg: &OptimizerConfig,
) -> Result<(Values, SolveReport), GraphError> {
    let ordering = g.ordering();
    let index: BTreeMap<VarId, usize> = ordering.iter().enumerate().map(|(i, k)| (*k, i)).collect();
    for id in &ordering {
        v0.try_get(*id)?;
    }
    if !anchored(g, &index) {
        return Err(GraphError::IndefiniteSystem);
    }

    let mut values = v0.clone();
    let mut rows = linearize_rows(g, &values, &index)?;
    let mut error: f64 = rows.iter().map(|r| r.residual.norm_squared()).sum();
    let mut report =
        SolveReport { initial_error: error, final_error: error, iterations: 0, converged: false };
    if error < cfg.abs_tol {
        report.converged = true;
        return Ok((values, report));
    }

    let mut layout = HessianLayout::new(ordering.len(), &rows);
    let symbolic = SymbolicCholesky::analyze(&layout.pattern);
    let diag_pos: Vec<usize> = (0..layout.pattern.n)
        .map(|c| layout.pattern.col_ptr[c + 1] - 1)
        .collect();
    let mut lambda = cfg.lambda_init;
    let mut ever_factored = false;

    'outer: for iter in 1..=cfg.max_iterations {
        report.iterations = iter;
        let rhs = layout.assemble(&rows);
        let undamped: Vec<f64> = diag_pos.iter().map(|&p| layout.pattern.values[p]).collect();
        loop {
            let mut damped = layout.pattern.clone();
            for (&p, &d) in diag_pos.iter().zip(&undamped) {
                damped.values[p] = d + lambda * d.max(1e-12);
            }
            let step = match symbolic.factor(&damped) {
                Ok(chol) => {
                    ever_factored = true;
                    let mut x = rhs.clone();
                    chol.solve_in_place(&mut x);
                    Some(x)
                }
                Err(_) => None,
            };
            if let Some(x) = step {
                let delta: BTreeMap<VarId, Tangent2> = ordering
                    .iter()
                    .enumerate()
                    .map(|(i, id)| (*id, Tangent2::new(x[3 * i], x[3 * i + 1], x[3 * i + 2])))
                    .collect();
                let candidate = values.retract(&delta);
                let cand_rows = linearize_rows(g, &candidate, &index)?;
                let cand_error: f64 = cand_rows.iter().map(|r| r.residual.norm_squared()).sum();
                if cand_error <= error {
                    let rel = (error - cand_error) / error;
                    values = candidate;
                    rows = cand_rows;
                    error = cand_error;
                    lambda = (lambda / cfg.lambda_factor).max(cfg.lambda_min);
                    if rel < cfg.tol || error < cfg.abs_tol {
                        report.converged = true;
                        break 'outer;
                    }
                    continue 'outer;
                }
                if cand_error - error <= cfg.tol * error {
                    // numerically flat: the current point is the minimum
                    report.converged = true;
                    break 'outer;
                }
            }
            lambda *= cfg.lambda_factor;
            if lambda > cfg.lambda_max {
                if !ever_factored {
                    return Err(GraphError::IndefiniteSystem);
                }
                break 'outer;
            }
        }
    }
    report.final_error = error;
    Ok((values, report))
}
