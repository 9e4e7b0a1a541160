//! Scan ingestion, sliding-window factor generation and pose publication.
//!
//! Each accepted scan becomes a pose variable. The new scan is registered with
//! GICP against every scan still in the window (the `W` most recent accepted
//! scans), and each successful alignment adds a between factor, so the window
//! is fully connected. The graph is then re-optimized from the previous
//! estimate and the new pose is emitted.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::vec::Vec;

use crate::evaluation::Trajectory;
use crate::factor_graph::{optimize, Factor, FactorGraph, GraphError, NoiseModel, OptimizerConfig, SolveReport, Values, VarId};
use crate::geometry::Pose2;
use crate::math;
use crate::registration::{estimate_covariances_with, gicp_align, GicpConfig, MatchResult, RegistrationError, RegistrationTarget};
use crate::scan::{scan_to_cloud, LaserScan, ScanError, MIN_VALID_RETURNS};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PipelineConfig {
    /// Number of previous scans each new scan is matched against.
    pub window: usize,
    pub sigma_xy: f64,
    pub sigma_theta: f64,
    /// Standard deviation of the anchoring prior on the first pose (all axes).
    pub prior_sigma: f64,
    pub gicp: GicpConfig,
    /// Scans that moved less than both thresholds are dropped; 0 disables.
    pub keyframe_min_translation: f64,
    pub keyframe_min_rotation: f64,
    pub min_valid_returns: usize,
    pub optimizer: OptimizerConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            window: 8,
            sigma_xy: 0.05,
            sigma_theta: 0.02,
            prior_sigma: 1e-3,
            gicp: GicpConfig::default(),
            keyframe_min_translation: 0.0,
            keyframe_min_rotation: 0.0,
            min_valid_returns: MIN_VALID_RETURNS,
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        let bad = |m: &'static str| Err(PipelineError::BadConfig(m));
        if self.window == 0 {
            return bad("window must be at least 1");
        }
        if !positive(self.sigma_xy) || !positive(self.sigma_theta) || !positive(self.prior_sigma) {
            return bad("noise sigmas must be positive");
        }
        if !(self.keyframe_min_translation >= 0.0) || !(self.keyframe_min_rotation >= 0.0) {
            return bad("keyframe thresholds must be non-negative");
        }
        let g = &self.gicp;
        if g.k_neighbors < 3 || !positive(g.epsilon) || !positive(g.max_corr_dist) || g.max_iterations == 0 || !positive(g.tol) {
            return bad("invalid registration settings");
        }
        Ok(())
    }

    pub fn keyframing(&self) -> bool {
        self.keyframe_min_translation > 0.0 || self.keyframe_min_rotation > 0.0
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum PipelineError {
    #[error("bad config: {0}")]
    BadConfig(&'static str),
    #[error("invalid scan: {0}")]
    InvalidScan(ScanError),
    #[error("scan at t={t} is not after the last accepted scan at t={last}")]
    OutOfOrder { t: f64, last: f64 },
    #[error("degenerate scan: {0}")]
    DegenerateScan(ScanError),
    #[error("consecutive scan match failed: {0}")]
    MatchFailure(RegistrationError),
    #[error("optimization failed: {0}")]
    Graph(GraphError),
}

/// Source of wall-clock time for the timing counters.
pub trait Clock {
    /// Seconds since an arbitrary fixed origin.
    fn now(&self) -> f64;
}

/// A clock that never advances; timing counters stay at zero.
#[derive(Clone, Copy, Debug, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn now(&self) -> f64 {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseEstimate {
    pub t: f64,
    pub pose: Pose2,
    pub var: VarId,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PipelineStats {
    pub scans_accepted: usize,
    pub scans_skipped: usize,
    pub keyframes_rejected: usize,
    pub skip_matches_dropped: usize,
    pub optimize_calls: usize,
    pub optimize_seconds: f64,
    pub process_seconds: f64,
}

#[derive(Clone, Debug)]
struct WindowEntry {
    var: VarId,
    target: RegistrationTarget,
}

#[derive(Clone, Debug)]
pub struct SlamState {
    cfg: PipelineConfig,
    graph: FactorGraph,
    values: Values,
    window: VecDeque<WindowEntry>,
    stamps: BTreeMap<VarId, f64>,
    next_id: VarId,
    last_motion: Pose2,
    last_t: Option<f64>,
    last_report: Option<SolveReport>,
    stats: PipelineStats,
}

impl SlamState {
    pub fn new(cfg: PipelineConfig) -> Result<Self, PipelineError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            graph: FactorGraph::new(),
            values: Values::new(),
            window: VecDeque::with_capacity(cfg.window + 1),
            stamps: BTreeMap::new(),
            next_id: VarId(0),
            last_motion: Pose2::IDENTITY,
            last_t: None,
            last_report: None,
            stats: PipelineStats::default(),
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn graph(&self) -> &FactorGraph {
        &self.graph
    }

    pub fn values(&self) -> &Values {
        &self.values
    }

    pub fn next_id(&self) -> VarId {
        self.next_id
    }

    pub fn last_motion(&self) -> Pose2 {
        self.last_motion
    }

    pub fn window_vars(&self) -> impl Iterator<Item = VarId> + '_ {
        self.window.iter().map(|e| e.var)
    }

    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    pub fn stats(&self) -> &PipelineStats {
        &self.stats
    }

    pub fn last_report(&self) -> Option<&SolveReport> {
        self.last_report.as_ref()
    }

    /// Current estimate of every pose, in acceptance order.
    pub fn trajectory(&self) -> Trajectory {
        let mut traj = Trajectory::new();
        for (id, t) in &self.stamps {
            let pose = *self.values.get(*id).expect("every stamped variable has a value");
            traj.push(*t, pose).expect("accepted scans are strictly increasing in time");
        }
        traj
    }

    pub fn process_scan(&mut self, scan: &LaserScan) -> Result<Option<PoseEstimate>, PipelineError> {
        self.process_scan_timed(scan, &NoClock)
    }

    /// Like [`SlamState::process_scan`], accumulating wall time from `clock`
    /// into [`PipelineStats`].
    pub fn process_scan_timed(
        &mut self,
        scan: &LaserScan,
        clock: &dyn Clock,
    ) -> Result<Option<PoseEstimate>, PipelineError> {
        let start = clock.now();
        let out = self.step(scan, clock);
        self.stats.process_seconds += clock.now() - start;
        match &out {
            Ok(Some(_)) => self.stats.scans_accepted += 1,
            Ok(None) => self.stats.keyframes_rejected += 1,
            Err(PipelineError::BadConfig(_)) => {}
            Err(_) => self.stats.scans_skipped += 1,
        }
        out
    }

    fn step(&mut self, scan: &LaserScan, clock: &dyn Clock) -> Result<Option<PoseEstimate>, PipelineError> {
        scan.validate().map_err(PipelineError::InvalidScan)?;
        if let Some(last) = self.last_t {
            if !(scan.t > last) {
                return Err(PipelineError::OutOfOrder { t: scan.t, last });
            }
        }
        let target = self.prepare(scan)?;

        let Some(prev) = self.window.back() else {
            let id = self.allocate();
            let noise = NoiseModel::isotropic(self.cfg.prior_sigma);
            self.graph.add(Factor::prior(id, Pose2::IDENTITY, noise));
            self.values.insert(id, Pose2::IDENTITY);
            self.accept(id, scan.t, target);
            return Ok(Some(PoseEstimate { t: scan.t, pose: Pose2::IDENTITY, var: id }));
        };

        // Constant-velocity guess, refined by the consecutive match.
        let prev_pose = *self.values.get(prev.var).expect("window vars have values");
        let predicted = prev_pose * self.last_motion;
        let consecutive = gicp_align(&target.cloud, &prev.target, &prev_pose.between(&predicted), &self.cfg.gicp)
            .map_err(PipelineError::MatchFailure)?;
        let motion = consecutive.relative_pose;
        if self.cfg.keyframing()
            && math::hypot(motion.x, motion.y) < self.cfg.keyframe_min_translation
            && motion.theta.abs() < self.cfg.keyframe_min_rotation
        {
            return Ok(None);
        }
        let estimate = prev_pose * motion;
        let prev_var = prev.var;

        let skips = self.match_window(&target, &estimate);
        let noise = NoiseModel::diagonal(self.cfg.sigma_xy, self.cfg.sigma_xy, self.cfg.sigma_theta);
        let id = self.allocate();
        let mark = self.graph.len();
        for (var, result) in skips {
            match result {
                Ok(m) => self.graph.add(Factor::between(var, id, m.relative_pose, noise)),
                Err(e) => {
                    log::debug!("dropping skip factor {var} -> {id}: {e}");
                    self.stats.skip_matches_dropped += 1;
                }
            }
        }
        self.graph.add(Factor::between(prev_var, id, motion, noise));
        self.values.insert(id, estimate);

        let t0 = clock.now();
        let solved = optimize(&self.graph, &self.values, &self.cfg.optimizer);
        self.stats.optimize_seconds += clock.now() - t0;
        self.stats.optimize_calls += 1;
        let (values, report) = match solved {
            Ok(v) => v,
            Err(e) => {
                // roll back so the state stays consistent
                self.rollback(mark, id);
                return Err(PipelineError::Graph(e));
            }
        };
        self.values = values;
        self.last_report = Some(report);
        let pose = *self.values.get(id).expect("just inserted");
        self.last_motion = self.values.get(prev_var).expect("window var").between(&pose);
        self.accept(id, scan.t, target);
        Ok(Some(PoseEstimate { t: scan.t, pose, var: id }))
    }

    fn prepare(&self, scan: &LaserScan) -> Result<RegistrationTarget, PipelineError> {
        let min_valid = self.cfg.min_valid_returns.max(self.cfg.gicp.k_neighbors);
        let cloud = scan_to_cloud(scan, min_valid).map_err(PipelineError::DegenerateScan)?;
        let mut target = RegistrationTarget::new(cloud);
        target.cloud = estimate_covariances_with(&target.cloud, &target.tree, self.cfg.gicp.k_neighbors, self.cfg.gicp.epsilon);
        Ok(target)
    }

    /// Aligns the new scan against every window scan except the newest one,
    /// oldest first.
    fn match_window(
        &self,
        source: &RegistrationTarget,
        estimate: &Pose2,
    ) -> Vec<(VarId, Result<MatchResult, RegistrationError>)> {
        let older = self.window.len().saturating_sub(1);
        let run = |e: &WindowEntry| {
            let pose = self.values.get(e.var).expect("window vars have values");
            (e.var, gicp_align(&source.cloud, &e.target, &pose.between(estimate), &self.cfg.gicp))
        };
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            let entries: Vec<&WindowEntry> = self.window.iter().take(older).collect();
            entries.into_par_iter().map(run).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            self.window.iter().take(older).map(run).collect()
        }
    }

    fn allocate(&mut self) -> VarId {
        let id = self.next_id;
        self.next_id = VarId(id.0 + 1);
        id
    }

    fn accept(&mut self, id: VarId, t: f64, target: RegistrationTarget) {
        self.stamps.insert(id, t);
        self.last_t = Some(t);
        self.window.push_back(WindowEntry { var: id, target });
        while self.window.len() > self.cfg.window {
            self.window.pop_front();
        }
    }

    fn rollback(&mut self, mark: usize, id: VarId) {
        let kept: Vec<Factor> = self.graph.factors()[..mark].to_vec();
        self.graph = FactorGraph::new();
        for f in kept {
            self.graph.add(f);
        }
        let values: Values = self.values.iter().filter(|(k, _)| *k != id).map(|(k, v)| (k, *v)).collect();
        self.values = values;
        self.next_id = id;
    }
}

/// Runs the pipeline over a whole scan log and returns the final estimate of
/// every accepted pose. Per-scan failures are logged and skipped.
pub fn run_offline(cfg: &PipelineConfig, scans: &[LaserScan]) -> Result<Trajectory, PipelineError> {
    run_offline_with(cfg, scans, &NoClock, |_| {}).map(|s| s.trajectory())
}

/// [`run_offline`] with a clock for the timing counters and a hook called on
/// every emitted estimate. Returns the final state.
pub fn run_offline_with(
    cfg: &PipelineConfig,
    scans: &[LaserScan],
    clock: &dyn Clock,
    mut on_estimate: impl FnMut(&PoseEstimate),
) -> Result<SlamState, PipelineError> {
    let mut state = SlamState::new(*cfg)?;
    for (i, scan) in scans.iter().enumerate() {
        match state.process_scan_timed(scan, clock) {
            Ok(Some(est)) => on_estimate(&est),
            Ok(None) => {}
            Err(e) => log::warn!("skipping scan {i} (t={}): {e}", scan.t),
        }
    }
    Ok(state)
}
