//! On-disk formats: JSON-lines scan logs, TUM-style trajectory files, and the
//! plain-text world and waypoint files used by the simulator.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use slam2d_core::evaluation::{StampedPose, Trajectory};
use slam2d_core::simulator::{Segment, World2D};
use slam2d_core::{LaserScan, Pose2};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{}:{line}: timestamp {t} does not follow {prev}", path.display())]
    Order { path: PathBuf, line: usize, t: f64, prev: f64 },
}

impl FormatError {
    fn io(path: &Path, source: io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }

    fn parse(path: &Path, line: usize, msg: impl Into<String>) -> Self {
        Self::Parse { path: path.to_path_buf(), line, msg: msg.into() }
    }

    /// 1-based line number, when the error points at one.
    pub fn line(&self) -> Option<usize> {
        match self {
            Self::Io { .. } => None,
            Self::Parse { line, .. } | Self::Order { line, .. } => Some(*line),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScanRecord {
    t: f64,
    angle_min: f64,
    angle_increment: f64,
    range_min: f64,
    range_max: f64,
    ranges: Vec<Option<f64>>,
}

impl From<&LaserScan> for ScanRecord {
    fn from(s: &LaserScan) -> Self {
        Self {
            t: s.t,
            angle_min: s.angle_min,
            angle_increment: s.angle_increment,
            range_min: s.range_min,
            range_max: s.range_max,
            ranges: s.ranges.iter().map(|r| r.is_finite().then_some(*r)).collect(),
        }
    }
}

impl From<ScanRecord> for LaserScan {
    fn from(r: ScanRecord) -> Self {
        Self {
            t: r.t,
            angle_min: r.angle_min,
            angle_increment: r.angle_increment,
            range_min: r.range_min,
            range_max: r.range_max,
            ranges: r.ranges.into_iter().map(|r| r.unwrap_or(f64::NAN)).collect(),
        }
    }
}

fn open(path: &Path) -> Result<BufReader<fs::File>, FormatError> {
    fs::File::open(path).map(BufReader::new).map_err(|e| FormatError::io(path, e))
}

fn lines(path: &Path) -> Result<impl Iterator<Item = Result<(usize, String), FormatError>> + '_, FormatError> {
    Ok(open(path)?.lines().enumerate().map(move |(i, l)| l.map(|l| (i + 1, l)).map_err(|e| FormatError::io(path, e))))
}

/// Lines that carry data: comments (`#`) and blank lines are skipped.
fn data_lines(path: &Path) -> Result<impl Iterator<Item = Result<(usize, String), FormatError>> + '_, FormatError> {
    Ok(lines(path)?.filter(|r| match r {
        Ok((_, l)) => {
            let l = l.trim();
            !l.is_empty() && !l.starts_with('#')
        }
        Err(_) => true,
    }))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> io::Result<()>) -> Result<(), FormatError> {
    let file = fs::File::create(path).map_err(|e| FormatError::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| FormatError::io(path, e))
}

/// Parses one scan record. Invalid returns may be `null`.
pub fn parse_scan(line: &str) -> Result<LaserScan, String> {
    let rec: ScanRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let scan = LaserScan::from(rec);
    scan.validate().map_err(|e| e.to_string())?;
    Ok(scan)
}

/// One scan as a single JSON line (no trailing newline); NaN becomes `null`.
pub fn format_scan(scan: &LaserScan) -> String {
    serde_json::to_string(&ScanRecord::from(scan)).expect("finite scan fields")
}

pub fn load_scans(path: &Path) -> Result<Vec<LaserScan>, FormatError> {
    let mut scans: Vec<LaserScan> = Vec::new();
    for line in lines(path)? {
        let (n, text) = line?;
        if text.trim().is_empty() {
            continue;
        }
        let scan = parse_scan(&text).map_err(|m| FormatError::parse(path, n, m))?;
        if let Some(prev) = scans.last() {
            if !(scan.t > prev.t) {
                return Err(FormatError::Order { path: path.to_path_buf(), line: n, t: scan.t, prev: prev.t });
            }
        }
        scans.push(scan);
    }
    Ok(scans)
}

pub fn save_scans(path: &Path, scans: &[LaserScan]) -> Result<(), FormatError> {
    write_file(path, |w| {
        for s in scans {
            writeln!(w, "{}", format_scan(s))?;
        }
        Ok(())
    })
}

/// `-0` prints as `-0`; fold it into `0` so files do not depend on the sign
/// of zero.
fn num(x: f64) -> f64 {
    x + 0.0
}

/// `t x y z qx qy qz qw` with a yaw-only quaternion.
pub fn format_pose_line(t: f64, p: &Pose2) -> String {
    let (s, c) = (p.theta / 2.0).sin_cos();
    format!("{} {} {} 0 0 0 {} {}", num(t), num(p.x), num(p.y), num(s), num(c))
}

/// Inverse of [`format_pose_line`]. Any unit quaternion is accepted and
/// reduced to its yaw.
pub fn parse_pose_line(line: &str) -> Result<(f64, Pose2), String> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 8 {
        return Err(format!("expected 8 fields (t x y z qx qy qz qw), got {}", fields.len()));
    }
    let mut v = [0.0; 8];
    for (slot, f) in v.iter_mut().zip(&fields) {
        *slot = f.parse::<f64>().map_err(|_| format!("not a number: {f:?}"))?;
        if !slot.is_finite() {
            return Err(format!("not finite: {f:?}"));
        }
    }
    let [t, x, y, _z, qx, qy, qz, qw] = v;
    let norm = (qx * qx + qy * qy + qz * qz + qw * qw).sqrt();
    if !(norm > 1e-9) {
        return Err("zero quaternion".into());
    }
    let (qx, qy, qz, qw) = (qx / norm, qy / norm, qz / norm, qw / norm);
    let yaw = (2.0 * (qw * qz + qx * qy)).atan2(1.0 - 2.0 * (qy * qy + qz * qz));
    Ok((t, Pose2::new(x, y, yaw)))
}

pub fn format_trajectory(traj: &Trajectory) -> String {
    let mut out = String::from("# t x y z qx qy qz qw\n");
    for s in traj.samples() {
        let _ = writeln!(out, "{}", format_pose_line(s.t, &s.pose));
    }
    out
}

pub fn save_trajectory(path: &Path, traj: &Trajectory) -> Result<(), FormatError> {
    fs::write(path, format_trajectory(traj)).map_err(|e| FormatError::io(path, e))
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory, FormatError> {
    let mut samples: Vec<StampedPose> = Vec::new();
    for line in data_lines(path)? {
        let (n, text) = line?;
        let (t, pose) = parse_pose_line(&text).map_err(|m| FormatError::parse(path, n, m))?;
        if let Some(prev) = samples.last() {
            if !(t > prev.t) {
                return Err(FormatError::Order { path: path.to_path_buf(), line: n, t, prev: prev.t });
            }
        }
        samples.push(StampedPose { t, pose });
    }
    Ok(Trajectory::from_samples(samples).expect("checked while reading"))
}

fn numbers<const N: usize>(line: &str) -> Result<[f64; N], String> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != N {
        return Err(format!("expected {N} numbers, got {}", fields.len()));
    }
    let mut v = [0.0; N];
    for (slot, f) in v.iter_mut().zip(&fields) {
        *slot = f.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| format!("not a finite number: {f:?}"))?;
    }
    Ok(v)
}

/// One wall per line: `x1 y1 x2 y2`.
pub fn load_world(path: &Path) -> Result<World2D, FormatError> {
    let mut segments = Vec::new();
    for line in data_lines(path)? {
        let (n, text) = line?;
        let [x1, y1, x2, y2] = numbers::<4>(&text).map_err(|m| FormatError::parse(path, n, m))?;
        let s = Segment::new([x1, y1], [x2, y2]);
        if !(s.length() > 0.0) {
            return Err(FormatError::parse(path, n, "zero-length segment"));
        }
        segments.push(s);
    }
    if segments.is_empty() {
        return Err(FormatError::parse(path, 0, "world has no segments"));
    }
    Ok(World2D::new(segments).expect("lengths checked"))
}

pub fn save_world(path: &Path, world: &World2D) -> Result<(), FormatError> {
    write_file(path, |w| {
        for s in world.segments() {
            writeln!(w, "{} {} {} {}", num(s.a[0]), num(s.a[1]), num(s.b[0]), num(s.b[1]))?;
        }
        Ok(())
    })
}

/// One waypoint per line: `t x y theta`.
pub fn load_waypoints(path: &Path) -> Result<Vec<(f64, Pose2)>, FormatError> {
    let mut out: Vec<(f64, Pose2)> = Vec::new();
    for line in data_lines(path)? {
        let (n, text) = line?;
        let [t, x, y, th] = numbers::<4>(&text).map_err(|m| FormatError::parse(path, n, m))?;
        if let Some(&(prev, _)) = out.last() {
            if !(t > prev) {
                return Err(FormatError::Order { path: path.to_path_buf(), line: n, t, prev });
            }
        }
        out.push((t, Pose2::new(x, y, th)));
    }
    Ok(out)
}

pub fn save_waypoints(path: &Path, waypoints: &[(f64, Pose2)]) -> Result<(), FormatError> {
    write_file(path, |w| {
        for (t, p) in waypoints {
            writeln!(w, "{} {} {} {}", num(*t), num(p.x), num(p.y), num(p.theta))?;
        }
        Ok(())
    })
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    fs::write(path, bytes).map_err(|e| FormatError::io(path, e))
}
