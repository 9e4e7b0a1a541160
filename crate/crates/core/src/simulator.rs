//! Synthetic datasets: a world of line segments, a ray-casting range finder
//! and waypoint-interpolated ground truth.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::evaluation::{StampedPose, Trajectory};
use crate::geometry::Pose2;
use crate::math::{self, PI};
use crate::scan::LaserScan;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub a: [f64; 2],
    pub b: [f64; 2],
}

impl Segment {
    pub fn new(a: [f64; 2], b: [f64; 2]) -> Self {
        Self { a, b }
    }

    pub fn length(&self) -> f64 {
        math::hypot(self.b[0] - self.a[0], self.b[1] - self.a[1])
    }

    /// Euclidean distance from `p` to the segment.
    pub fn distance_to(&self, p: [f64; 2]) -> f64 {
        let (dx, dy) = (self.b[0] - self.a[0], self.b[1] - self.a[1]);
        let len_sq = dx * dx + dy * dy;
        let u = (((p[0] - self.a[0]) * dx + (p[1] - self.a[1]) * dy) / len_sq).clamp(0.0, 1.0);
        math::hypot(p[0] - (self.a[0] + u * dx), p[1] - (self.a[1] + u * dy))
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("segment {0} has zero length")]
    ZeroLengthSegment(usize),
    #[error("bad waypoints: {0}")]
    BadWaypoints(&'static str),
    #[error("bad sim config: {0}")]
    BadConfig(&'static str),
}

/// Walls as line segments, meters.
#[derive(Clone, Debug, PartialEq)]
pub struct World2D {
    segments: Vec<Segment>,
}

impl World2D {
    pub fn new(segments: Vec<Segment>) -> Result<Self, SimError> {
        if let Some(i) = segments.iter().position(|s| !(s.length() > 0.0)) {
            return Err(SimError::ZeroLengthSegment(i));
        }
        Ok(Self { segments })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Closed square room of side `size` centered on the origin.
    pub fn square_room(size: f64) -> Self {
        let h = size / 2.0;
        let c = [[-h, -h], [h, -h], [h, h], [-h, h]];
        Self { segments: (0..4).map(|i| Segment::new(c[i], c[(i + 1) % 4])).collect() }
    }

    /// Square room with a few interior obstacles.
    pub fn furnished_room(size: f64) -> Self {
        let mut w = Self::square_room(size);
        let h = size / 2.0;
        let mut rect = |x0: f64, y0: f64, x1: f64, y1: f64| {
            let c = [[x0, y0], [x1, y0], [x1, y1], [x0, y1]];
            for i in 0..4 {
                w.segments.push(Segment::new(c[i], c[(i + 1) % 4]));
            }
        };
        rect(h - 0.9, h - 0.6, h - 0.3, h - 0.3);
        rect(-h + 0.4, -0.3, -h + 0.7, 0.4);
        w
    }

    /// Distance along the ray from `origin` with unit direction `dir` to the
    /// closest wall, if any.
    pub fn ray_distance(&self, origin: [f64; 2], dir: [f64; 2]) -> Option<f64> {
        let mut best: Option<f64> = None;
        for s in &self.segments {
            let e = [s.b[0] - s.a[0], s.b[1] - s.a[1]];
            // origin + t·dir = a + u·e
            let denom = dir[0] * (-e[1]) - dir[1] * (-e[0]);
            if denom.abs() < 1e-15 {
                continue;
            }
            let w = [s.a[0] - origin[0], s.a[1] - origin[1]];
            let t = (w[0] * (-e[1]) - w[1] * (-e[0])) / denom;
            let u = (dir[0] * w[1] - dir[1] * w[0]) / denom;
            if t > 1e-12 && (0.0..=1.0).contains(&u) && best.is_none_or(|b| t < b) {
                best = Some(t);
            }
        }
        best
    }

    /// Distance from `p` to the nearest wall.
    pub fn distance_to_walls(&self, p: [f64; 2]) -> f64 {
        self.segments.iter().map(|s| s.distance_to(p)).fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimConfig {
    pub angle_min: f64,
    pub angle_increment: f64,
    pub count: usize,
    pub range_min: f64,
    pub range_max: f64,
    pub range_noise_sigma: f64,
    pub scan_hz: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            angle_min: -PI,
            angle_increment: 2.0 * PI / 360.0,
            count: 360,
            range_min: 0.15,
            range_max: 12.0,
            range_noise_sigma: 0.01,
            scan_hz: 10.0,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.scan_hz > 0.0) {
            return Err(SimError::BadConfig("scan_hz must be positive"));
        }
        if !(self.range_noise_sigma >= 0.0) {
            return Err(SimError::BadConfig("range_noise_sigma must be non-negative"));
        }
        if !(self.angle_increment > 0.0) || self.count == 0 {
            return Err(SimError::BadConfig("need a positive angle_increment and at least one beam"));
        }
        if !(self.range_min < self.range_max) {
            return Err(SimError::BadConfig("range_min must be below range_max"));
        }
        Ok(())
    }
}

fn cast(world: &World2D, pose: &Pose2, cfg: &SimConfig, t: f64, mut noise: impl FnMut() -> f64) -> LaserScan {
    let ranges = (0..cfg.count)
        .map(|i| {
            let a = pose.theta + cfg.angle_min + i as f64 * cfg.angle_increment;
            let (s, c) = math::sin_cos(a);
            match world.ray_distance([pose.x, pose.y], [c, s]) {
                Some(d) => {
                    let r = d + noise();
                    if r >= cfg.range_min && r <= cfg.range_max {
                        r
                    } else {
                        f64::NAN
                    }
                }
                None => f64::NAN,
            }
        })
        .collect();
    LaserScan {
        t,
        angle_min: cfg.angle_min,
        angle_increment: cfg.angle_increment,
        range_min: cfg.range_min,
        range_max: cfg.range_max,
        ranges,
    }
}

/// Noise-free scan from `pose`.
pub fn raycast_exact(world: &World2D, pose: &Pose2, cfg: &SimConfig, t: f64) -> LaserScan {
    cast(world, pose, cfg, t, || 0.0)
}

/// Scan from `pose` with Gaussian range noise drawn from `rng`.
pub fn raycast(world: &World2D, pose: &Pose2, cfg: &SimConfig, t: f64, rng: &mut ChaCha8Rng) -> LaserScan {
    if cfg.range_noise_sigma > 0.0 {
        let normal = Normal::new(0.0, cfg.range_noise_sigma).expect("finite sigma");
        cast(world, pose, cfg, t, || normal.sample(rng))
    } else {
        raycast_exact(world, pose, cfg, t)
    }
}

/// Pose at time `t` along time-ordered waypoints: linear in translation,
/// shortest arc in heading.
pub fn interpolate(waypoints: &[(f64, Pose2)], t: f64) -> Pose2 {
    let i = waypoints.partition_point(|w| w.0 <= t);
    if i == 0 {
        return waypoints[0].1;
    }
    if i == waypoints.len() {
        return waypoints[i - 1].1;
    }
    let (t0, p0) = waypoints[i - 1];
    let (t1, p1) = waypoints[i];
    if t == t0 {
        return p0;
    }
    let s = (t - t0) / (t1 - t0);
    let dtheta = math::wrap_angle(p1.theta - p0.theta);
    Pose2::new(p0.x + s * (p1.x - p0.x), p0.y + s * (p1.y - p0.y), p0.theta + s * dtheta)
}

/// Scans at `scan_hz` along the waypoints, starting at the first waypoint
/// and ending at or before the last. Ground truth is the noise-free
/// interpolated pose of each scan; ticks that land on a waypoint (within a
/// nanosecond) take its exact time and pose.
pub fn generate_dataset(
    world: &World2D,
    waypoints: &[(f64, Pose2)],
    cfg: &SimConfig,
) -> Result<(Vec<LaserScan>, Trajectory), SimError> {
    cfg.validate()?;
    if waypoints.len() < 2 {
        return Err(SimError::BadWaypoints("need at least two waypoints"));
    }
    if waypoints.iter().any(|(t, p)| !t.is_finite() || !p.is_finite()) {
        return Err(SimError::BadWaypoints("waypoints must be finite"));
    }
    if waypoints.windows(2).any(|w| !(w[1].0 > w[0].0)) {
        return Err(SimError::BadWaypoints("waypoint times must strictly increase"));
    }
    let t_start = waypoints[0].0;
    let t_end = waypoints[waypoints.len() - 1].0;
    let period = 1.0 / cfg.scan_hz;
    let snap = 1e-9;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut scans = Vec::new();
    let mut truth = Vec::new();
    let mut k = 0u64;
    loop {
        let mut t = t_start + k as f64 * period;
        if t > t_end + snap {
            break;
        }
        let exact = waypoints.iter().find(|w| (w.0 - t).abs() <= snap);
        let pose = match exact {
            Some(w) => {
                t = w.0;
                w.1
            }
            None => interpolate(waypoints, t),
        };
        scans.push(raycast(world, &pose, cfg, t, &mut rng));
        truth.push(StampedPose { t, pose });
        k += 1;
    }
    let truth = Trajectory::from_samples(truth).map_err(|_| SimError::BadWaypoints("scan period too small"))?;
    Ok((scans, truth))
}

/// Canned trajectories in a 5 m x 5 m room, one per motion regime.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// 5.3 m square loop over 34.5 s.
    SquareLoop,
    /// 5.0 m rectangle over 14.4 s.
    FastShort,
    /// 5.0 m loop over 22.4 s with full in-place spins at the corners.
    AggressiveRotation,
    /// 5.2 m square loop over 44.3 s.
    SlowLong,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::SquareLoop, Preset::FastShort, Preset::AggressiveRotation, Preset::SlowLong];

    pub fn name(&self) -> &'static str {
        match self {
            Preset::SquareLoop => "square-loop",
            Preset::FastShort => "fast-short",
            Preset::AggressiveRotation => "aggressive-rotation",
            Preset::SlowLong => "slow-long",
        }
    }

    pub fn from_name(name: &str) -> Option<Preset> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }

    pub fn world(&self) -> World2D {
        World2D::square_room(5.0)
    }

    pub fn waypoints(&self) -> Vec<(f64, Pose2)> {
        match self {
            Preset::SquareLoop => polygon_loop(&square(1.325), 34.5, 1.5, 0),
            Preset::FastShort => polygon_loop(&rectangle(1.5, 1.0), 14.4, 0.6, 0),
            Preset::AggressiveRotation => polygon_loop(&rectangle(1.5, 1.0), 22.4, 0.5, 1),
            Preset::SlowLong => polygon_loop(&square(1.3), 44.3, 2.0, 0),
        }
    }

    /// Scans and ground truth with the default sensor and `seed`.
    pub fn dataset(&self, seed: u64) -> (Vec<LaserScan>, Trajectory) {
        let cfg = SimConfig { seed, ..SimConfig::default() };
        generate_dataset(&self.world(), &self.waypoints(), &cfg).expect("presets are valid")
    }
}

fn square(side: f64) -> [[f64; 2]; 4] {
    rectangle(side, side)
}

fn rectangle(w: f64, h: f64) -> [[f64; 2]; 4] {
    let (x, y) = (w / 2.0, h / 2.0);
    [[-x, -y], [x, -y], [x, y], [-x, y]]
}

/// Drives around the closed polygon: straight legs at constant speed, then
/// an in-place turn of `turn_time` seconds at every corner (including the
/// last, which restores the initial heading). Each corner also gets `spins`
/// extra full turns, split into quarter turns so shortest-arc interpolation
/// follows them.
fn polygon_loop(corners: &[[f64; 2]], duration: f64, turn_time: f64, spins: usize) -> Vec<(f64, Pose2)> {
    let n = corners.len();
    let heading = |i: usize| {
        let (a, b) = (corners[i], corners[(i + 1) % n]);
        math::atan2(b[1] - a[1], b[0] - a[0])
    };
    let lengths: Vec<f64> =
        (0..n).map(|i| math::hypot(corners[(i + 1) % n][0] - corners[i][0], corners[(i + 1) % n][1] - corners[i][1])).collect();
    let perimeter: f64 = lengths.iter().sum();
    let corner_time = turn_time * (1 + spins) as f64;
    let drive_time = duration - n as f64 * corner_time;
    assert!(drive_time > 0.0, "turns take longer than the whole loop");

    let mut t = 0.0;
    let mut out = alloc::vec![(0.0, Pose2::new(corners[0][0], corners[0][1], heading(0)))];
    for i in 0..n {
        let end = corners[(i + 1) % n];
        t += drive_time * lengths[i] / perimeter;
        let h = heading(i);
        out.push((t, Pose2::new(end[0], end[1], h)));
        let next = heading((i + 1) % n);
        let turn = math::wrap_angle(next - h);
        // quarter turns for the spins, then the actual corner turn
        let steps = 4 * spins;
        let mut theta = h;
        for _ in 0..steps {
            t += turn_time / 4.0;
            theta += PI / 2.0;
            out.push((t, Pose2::new(end[0], end[1], theta)));
        }
        t += turn_time;
        out.push((t, Pose2::new(end[0], end[1], h + turn)));
    }
    // absorb accumulated rounding so the loop ends exactly at `duration`
    if let Some(last) = out.last_mut() {
        last.0 = duration;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::traj_stats;

    fn one_beam() -> SimConfig {
        SimConfig { angle_min: 0.0, count: 1, range_noise_sigma: 0.0, ..Default::default() }
    }

    fn wall_x2() -> World2D {
        World2D::new(alloc::vec![Segment::new([2.0, -5.0], [2.0, 5.0])]).unwrap()
    }

    #[test]
    fn raycast_examples() {
        let s = raycast_exact(&wall_x2(), &Pose2::IDENTITY, &one_beam(), 0.0);
        assert_eq!(s.ranges, alloc::vec![2.0]);
        let s = raycast_exact(&wall_x2(), &Pose2::new(1.0, 0.0, 0.0), &one_beam(), 0.0);
        assert_eq!(s.ranges, alloc::vec![1.0]);
        let parallel = World2D::new(alloc::vec![Segment::new([0.0, 1.0], [5.0, 1.0])]).unwrap();
        let s = raycast_exact(&parallel, &Pose2::IDENTITY, &one_beam(), 0.0);
        assert!(s.ranges[0].is_nan());
    }

    #[test]
    fn zero_length_segment_rejected() {
        let e = World2D::new(alloc::vec![Segment::new([1.0, 1.0], [1.0, 1.0])]);
        assert_eq!(e, Err(SimError::ZeroLengthSegment(0)));
    }

    #[test]
    fn noise_free_ranges_match_geometry() {
        let world = World2D::furnished_room(5.0);
        let cfg = SimConfig { range_noise_sigma: 0.0, ..Default::default() };
        let pose = Pose2::new(0.3, -0.4, 0.7);
        let scan = raycast_exact(&world, &pose, &cfg, 0.0);
        for p in scan.points() {
            let w = pose.transform_point(p);
            assert!(world.distance_to_walls(w) < 1e-9);
        }
        assert_eq!(scan.num_valid(), 360);
    }

    #[test]
    fn dataset_fencepost() {
        let wps = [(0.0, Pose2::IDENTITY), (1.0, Pose2::new(1.0, 0.0, 0.0))];
        let (scans, gt) = generate_dataset(&World2D::square_room(5.0), &wps, &SimConfig::default()).unwrap();
        assert_eq!(scans.len(), 11);
        assert_eq!(gt.len(), 11);
        assert_eq!(gt.samples()[10].t, 1.0);
        assert_eq!(gt.samples()[10].pose, wps[1].1);
    }

    #[test]
    fn stationary_waypoints() {
        let p = Pose2::new(0.5, 0.5, 1.0);
        let wps = [(0.0, p), (2.0, p)];
        let (_, gt) = generate_dataset(&World2D::square_room(5.0), &wps, &SimConfig::default()).unwrap();
        assert!(gt.samples().iter().all(|s| s.pose == p));
    }

    #[test]
    fn bad_waypoints() {
        let w = World2D::square_room(5.0);
        let cfg = SimConfig::default();
        assert!(matches!(generate_dataset(&w, &[(0.0, Pose2::IDENTITY)], &cfg), Err(SimError::BadWaypoints(_))));
        let wps = [(1.0, Pose2::IDENTITY), (1.0, Pose2::IDENTITY)];
        assert!(matches!(generate_dataset(&w, &wps, &cfg), Err(SimError::BadWaypoints(_))));
    }

    #[test]
    fn shortest_arc_interpolation() {
        let wps = [(0.0, Pose2::new(0.0, 0.0, 3.0)), (1.0, Pose2::new(0.0, 0.0, -3.0))];
        let mid = interpolate(&wps, 0.5);
        assert!((mid.theta.abs() - PI).abs() < 1e-12);
    }

    #[test]
    fn seeded_datasets_are_identical() {
        let (a, _) = Preset::FastShort.dataset(7);
        let (b, _) = Preset::FastShort.dataset(7);
        let (c, _) = Preset::FastShort.dataset(8);
        assert_eq!(a.len(), b.len());
        assert!(a.iter().zip(&b).all(|(x, y)| x.ranges.iter().zip(&y.ranges).all(|(p, q)| p.to_bits() == q.to_bits())));
        assert!(a.iter().zip(&c).any(|(x, y)| x.ranges != y.ranges));
    }

    #[test]
    fn presets_match_their_regimes() {
        let expected = [(34.5, 5.3), (14.4, 5.0), (22.4, 5.0), (44.3, 5.2)];
        for (p, (dur, dist)) in Preset::ALL.iter().zip(expected) {
            let wps = p.waypoints();
            let (scans, gt) = generate_dataset(&p.world(), &wps, &SimConfig { range_noise_sigma: 0.0, ..Default::default() }).unwrap();
            let s = traj_stats(&gt).unwrap();
            assert!((s.duration - dur).abs() < 1e-9, "{}: {}", p.name(), s.duration);
            assert!((s.total_distance - dist).abs() < 1e-6, "{}: {}", p.name(), s.total_distance);
            assert_eq!(scans.len(), gt.len());
            // trajectory passes through every waypoint on the tick grid
            for (t, pose) in &wps {
                if let Some(i) = gt.nearest_index(*t, 1e-9) {
                    assert_eq!(gt.samples()[i].pose, *pose);
                }
            }
            assert_eq!(Preset::from_name(p.name()), Some(*p));
        }
    }
}
