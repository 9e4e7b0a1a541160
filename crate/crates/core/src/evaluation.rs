//! Trajectory evaluation: timestamp association, downsampling, rigid
//! alignment and absolute pose error (APE).
//!
//! The APE of a pair is `between(P_ref, P_est)`; its translational norm is the
//! headline number, with the rotational magnitude kept alongside.

use alloc::vec::Vec;

use crate::geometry::Pose2;
use crate::math;

/// Default association window, seconds.
pub const DEFAULT_MAX_DT: f64 = 0.02;
/// Default evaluation rate, Hz.
pub const DEFAULT_HZ: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StampedPose {
    pub t: f64,
    pub pose: Pose2,
}

/// Poses with strictly increasing timestamps.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    samples: Vec<StampedPose>,
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("timestamp {t} at index {index} does not increase")]
    NotIncreasing { index: usize, t: f64 },
    #[error("no pose pairs within the association window")]
    NoMatches,
    #[error("estimated positions coincide; alignment is undefined")]
    DegenerateAlignment,
    #[error("trajectory needs at least {need} poses, has {have}")]
    TooShort { need: usize, have: usize },
    #[error("invalid parameter: {0}")]
    BadParameter(&'static str),
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_samples(samples: Vec<StampedPose>) -> Result<Self, EvalError> {
        for (i, w) in samples.windows(2).enumerate() {
            if !(w[1].t > w[0].t) {
                return Err(EvalError::NotIncreasing { index: i + 1, t: w[1].t });
            }
        }
        Ok(Self { samples })
    }

    pub fn push(&mut self, t: f64, pose: Pose2) -> Result<(), EvalError> {
        if let Some(last) = self.samples.last() {
            if !(t > last.t) {
                return Err(EvalError::NotIncreasing { index: self.samples.len(), t });
            }
        }
        self.samples.push(StampedPose { t, pose });
        Ok(())
    }

    pub fn samples(&self) -> &[StampedPose] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&StampedPose> {
        self.samples.get(i)
    }

    /// Every pose left-multiplied by `g`.
    pub fn transformed(&self, g: &Pose2) -> Trajectory {
        Trajectory {
            samples: self.samples.iter().map(|s| StampedPose { t: s.t, pose: *g * s.pose }).collect(),
        }
    }

    /// Index of the sample nearest to `t` within `max_dt`, if any.
    pub fn nearest_index(&self, t: f64, max_dt: f64) -> Option<usize> {
        let i = self.samples.partition_point(|s| s.t < t);
        let mut best: Option<(f64, usize)> = None;
        for j in [i.wrapping_sub(1), i] {
            if let Some(s) = self.samples.get(j) {
                let dt = (s.t - t).abs();
                if dt <= max_dt && best.is_none_or(|(b, _)| dt < b) {
                    best = Some((dt, j));
                }
            }
        }
        best.map(|(_, j)| j)
    }
}

/// Greedy nearest-timestamp pairing. Candidate pairs within `max_dt` are
/// taken in order of increasing `|Δt|`, each pose at most once; the result is
/// `(ref_index, est_index)` sorted by estimate time.
pub fn associate(ref_traj: &Trajectory, est: &Trajectory, max_dt: f64) -> Result<Vec<(usize, usize)>, EvalError> {
    if !(max_dt > 0.0) {
        return Err(EvalError::BadParameter("max_dt must be positive"));
    }
    let refs = ref_traj.samples();
    let mut candidates = Vec::new();
    for (ei, e) in est.samples().iter().enumerate() {
        let start = refs.partition_point(|r| r.t < e.t - max_dt);
        for (ri, r) in refs.iter().enumerate().skip(start) {
            if r.t > e.t + max_dt {
                break;
            }
            let dt = (r.t - e.t).abs();
            if dt <= max_dt {
                candidates.push((dt, ei, ri));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut ref_used = alloc::vec![false; refs.len()];
    let mut est_used = alloc::vec![false; est.len()];
    let mut pairs = Vec::new();
    for (_, ei, ri) in candidates {
        if !ref_used[ri] && !est_used[ei] {
            ref_used[ri] = true;
            est_used[ei] = true;
            pairs.push((ri, ei));
        }
    }
    if pairs.is_empty() {
        return Err(EvalError::NoMatches);
    }
    pairs.sort_by_key(|p| p.1);
    Ok(pairs)
}

/// Keeps the first pose, then each pose at least `1/hz` after the last kept
/// one. A relative slack of 1e-6 of the period absorbs timestamp rounding.
pub fn downsample(traj: &Trajectory, hz: f64) -> Result<Trajectory, EvalError> {
    if !(hz > 0.0) {
        return Err(EvalError::BadParameter("hz must be positive"));
    }
    let period = 1.0 / hz;
    let slack = 1e-6 * period;
    let mut out = Vec::new();
    let mut last: Option<f64> = None;
    for s in traj.samples() {
        if last.is_none_or(|l| s.t >= l + period - slack) {
            out.push(*s);
            last = Some(s.t);
        }
    }
    Ok(Trajectory { samples: out })
}

/// Rigid transform `G` minimizing `Σ ‖t_ref - G·t_est‖²` over the paired
/// positions (no scale).
pub fn align(ref_traj: &Trajectory, est: &Trajectory, pairs: &[(usize, usize)]) -> Result<Pose2, EvalError> {
    if pairs.len() < 2 {
        return Err(EvalError::TooShort { need: 2, have: pairs.len() });
    }
    let n = pairs.len() as f64;
    let (mut cr, mut ce) = ([0.0; 2], [0.0; 2]);
    for &(ri, ei) in pairs {
        let (r, e) = (ref_traj.samples[ri].pose, est.samples[ei].pose);
        cr[0] += r.x;
        cr[1] += r.y;
        ce[0] += e.x;
        ce[1] += e.y;
    }
    for c in [&mut cr, &mut ce] {
        c[0] /= n;
        c[1] /= n;
    }
    let (mut dot, mut cross, mut spread) = (0.0, 0.0, 0.0);
    for &(ri, ei) in pairs {
        let (r, e) = (ref_traj.samples[ri].pose, est.samples[ei].pose);
        let (ex, ey) = (e.x - ce[0], e.y - ce[1]);
        let (rx, ry) = (r.x - cr[0], r.y - cr[1]);
        dot += ex * rx + ey * ry;
        cross += ex * ry - ey * rx;
        spread += ex * ex + ey * ey;
    }
    if spread <= 1e-24 {
        return Err(EvalError::DegenerateAlignment);
    }
    let theta = math::atan2(cross, dot);
    let (s, c) = math::sin_cos(theta);
    Ok(Pose2::new(cr[0] - (c * ce[0] - s * ce[1]), cr[1] - (s * ce[0] + c * ce[1]), theta))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ApeOptions {
    pub align: bool,
    pub hz: f64,
    pub max_dt: f64,
}

impl Default for ApeOptions {
    fn default() -> Self {
        Self { align: true, hz: DEFAULT_HZ, max_dt: DEFAULT_MAX_DT }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ApeResult {
    /// Translational error per pair, meters.
    pub errors: Vec<f64>,
    /// Rotational error magnitude per pair, radians.
    pub rotation_errors: Vec<f64>,
    pub rmse: f64,
    pub mean: f64,
    pub median: f64,
    pub max: f64,
    pub num_pairs: usize,
    /// Transform applied to the estimate (identity when not aligning).
    pub alignment: Pose2,
}

pub fn ape(ref_traj: &Trajectory, est: &Trajectory, opts: &ApeOptions) -> Result<ApeResult, EvalError> {
    let r = downsample(ref_traj, opts.hz)?;
    let e = downsample(est, opts.hz)?;
    let pairs = associate(&r, &e, opts.max_dt)?;
    let g = if opts.align { align(&r, &e, &pairs)? } else { Pose2::IDENTITY };
    let mut errors = Vec::with_capacity(pairs.len());
    let mut rotation_errors = Vec::with_capacity(pairs.len());
    for &(ri, ei) in &pairs {
        let err = r.samples[ri].pose.between(&(g * e.samples[ei].pose));
        errors.push(math::hypot(err.x, err.y));
        rotation_errors.push(err.theta.abs());
    }
    let n = errors.len() as f64;
    let sum_sq: f64 = errors.iter().map(|x| x * x).sum();
    let mean = errors.iter().sum::<f64>() / n;
    let mut sorted = errors.clone();
    sorted.sort_by(f64::total_cmp);
    let median = if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2]
    } else {
        0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
    };
    Ok(ApeResult {
        rmse: math::sqrt(sum_sq / n),
        mean,
        median,
        max: sorted.last().copied().unwrap_or(0.0),
        num_pairs: errors.len(),
        errors,
        rotation_errors,
        alignment: g,
    })
}

/// Duration, path length and average speed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajStats {
    pub duration: f64,
    pub total_distance: f64,
    pub avg_velocity: f64,
}

pub fn traj_stats(traj: &Trajectory) -> Result<TrajStats, EvalError> {
    let s = traj.samples();
    if s.len() < 2 {
        return Err(EvalError::TooShort { need: 2, have: s.len() });
    }
    let duration = s[s.len() - 1].t - s[0].t;
    let total_distance: f64 =
        s.windows(2).map(|w| math::hypot(w[1].pose.x - w[0].pose.x, w[1].pose.y - w[0].pose.y)).sum();
    Ok(TrajStats { duration, total_distance, avg_velocity: total_distance / duration })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn traj(ts: &[f64]) -> Trajectory {
        Trajectory::from_samples(
            ts.iter().enumerate().map(|(i, &t)| StampedPose { t, pose: Pose2::new(i as f64, 0.5 * i as f64, 0.1 * i as f64) }).collect(),
        )
        .unwrap()
    }

    fn random_traj(rng: &mut ChaCha8Rng, n: usize) -> Trajectory {
        let mut t = Trajectory::new();
        let mut p = Pose2::IDENTITY;
        for i in 0..n {
            p = p * Pose2::new(rng.random_range(0.0..0.2), rng.random_range(-0.05..0.05), rng.random_range(-0.3..0.3));
            t.push(i as f64 * 0.1, p).unwrap();
        }
        t
    }

    #[test]
    fn trajectory_rejects_non_increasing() {
        let s = alloc::vec![StampedPose { t: 1.0, pose: Pose2::IDENTITY }, StampedPose { t: 1.0, pose: Pose2::IDENTITY }];
        assert_eq!(Trajectory::from_samples(s), Err(EvalError::NotIncreasing { index: 1, t: 1.0 }));
    }

    #[test]
    fn associate_examples() {
        let a = traj(&[0.0, 0.1, 0.2, 0.3]);
        assert_eq!(associate(&a, &a, 0.02).unwrap(), alloc::vec![(0, 0), (1, 1), (2, 2), (3, 3)]);
        let b = traj(&[0.01, 0.11, 0.21, 0.31]);
        assert_eq!(associate(&a, &b, 0.02).unwrap().len(), 4);
        let r = traj(&[0.0, 1.0, 2.0]);
        let e = traj(&[0.4]);
        assert_eq!(associate(&r, &e, 0.3), Err(EvalError::NoMatches));
    }

    #[test]
    fn associate_uses_each_pose_once() {
        let r = traj(&[0.0, 1.0]);
        let e = traj(&[0.05, 0.08, 0.95]);
        let pairs = associate(&r, &e, 0.2).unwrap();
        assert_eq!(pairs, alloc::vec![(0, 0), (1, 2)]);
    }

    #[test]
    fn downsample_examples() {
        let fast: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
        let d = downsample(&traj(&fast), 10.0).unwrap();
        assert_eq!(d.len(), 10);
        for (k, s) in d.samples().iter().enumerate() {
            assert_eq!(s.t, (10 * k) as f64 / 100.0);
        }
        let ten: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let t = traj(&ten);
        assert_eq!(downsample(&t, 10.0).unwrap(), t);
        let one = traj(&[3.0]);
        assert_eq!(downsample(&one, 10.0).unwrap(), one);
    }

    #[test]
    fn align_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let r = random_traj(&mut rng, 30);
        let pairs: Vec<_> = (0..30).map(|i| (i, i)).collect();
        let g = align(&r, &r, &pairs).unwrap();
        assert!(g.x.abs() < 1e-12 && g.y.abs() < 1e-12 && g.theta.abs() < 1e-12);

        let rot = Pose2::new(0.0, 0.0, 30f64.to_radians());
        let e = r.transformed(&rot);
        let g = align(&r, &e, &pairs).unwrap();
        assert!(g.x.abs() < 1e-9 && g.y.abs() < 1e-9 && (g.theta + 30f64.to_radians()).abs() < 1e-12);
    }

    #[test]
    fn align_degenerate() {
        let mut a = Trajectory::new();
        a.push(0.0, Pose2::new(1.0, 1.0, 0.0)).unwrap();
        a.push(0.1, Pose2::new(1.0, 1.0, 0.5)).unwrap();
        assert_eq!(align(&a, &a, &[(0, 0), (1, 1)]), Err(EvalError::DegenerateAlignment));
    }

    #[test]
    fn ape_constant_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let r = random_traj(&mut rng, 40);
        let e = r.transformed(&Pose2::new(0.3, 0.4, 0.0));
        assert_eq!(ape(&r, &r, &ApeOptions::default()).unwrap().rmse, 0.0);
        let res = ape(&r, &e, &ApeOptions { align: false, ..Default::default() }).unwrap();
        assert_eq!(res.num_pairs, 40);
        for x in &res.errors {
            assert!((x - 0.5).abs() < 1e-12);
        }
        assert!((res.rmse - 0.5).abs() < 1e-12);
        let res = ape(&r, &e, &ApeOptions::default()).unwrap();
        assert!(res.rmse < 1e-9);
    }

    #[test]
    fn ape_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let r = random_traj(&mut rng, 25);
        let mut e = Trajectory::new();
        for s in r.samples() {
            e.push(s.t, s.pose * Pose2::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), 0.0)).unwrap();
        }
        let res = ape(&r, &e, &ApeOptions { align: false, ..Default::default() }).unwrap();
        let mean_sq = res.errors.iter().map(|x| x * x).sum::<f64>() / res.num_pairs as f64;
        assert!((res.rmse * res.rmse - mean_sq).abs() < 1e-12);
        assert!(res.errors.iter().all(|x| *x <= res.max));
        let aligned = ape(&r, &e, &ApeOptions::default()).unwrap();
        assert!(aligned.rmse <= res.rmse);
    }

    #[test]
    fn traj_stats_examples() {
        let mut t = Trajectory::new();
        t.push(0.0, Pose2::IDENTITY).unwrap();
        t.push(34.5, Pose2::new(5.3, 0.0, 0.0)).unwrap();
        let s = traj_stats(&t).unwrap();
        assert_eq!(libm::round(s.avg_velocity * 100.0) / 100.0, 0.15);

        let mut t = Trajectory::new();
        t.push(0.0, Pose2::IDENTITY).unwrap();
        t.push(14.4, Pose2::new(0.0, 5.0, 0.0)).unwrap();
        assert_eq!(libm::round(traj_stats(&t).unwrap().avg_velocity * 100.0) / 100.0, 0.35);

        let mut t = Trajectory::new();
        t.push(0.0, Pose2::new(1.0, 1.0, 0.0)).unwrap();
        t.push(2.0, Pose2::new(1.0, 1.0, 0.0)).unwrap();
        let s = traj_stats(&t).unwrap();
        assert_eq!((s.total_distance, s.avg_velocity), (0.0, 0.0));
        assert!(matches!(traj_stats(&Trajectory::new()), Err(EvalError::TooShort { .. })));
    }
}
