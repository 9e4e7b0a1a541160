//! World-frame hit-count maps.
//!
//! Every valid return is projected through its scan's pose and counted in the
//! grid cell it lands in. There is no free-space model: a cell is occupied
//! when it has collected enough hits, and everything else is unknown.

use alloc::vec::Vec;

use crate::evaluation::{Trajectory, DEFAULT_MAX_DT};
use crate::geometry::Pose2;
use crate::math;
use crate::scan::LaserScan;

/// Margin added around the projected points when sizing the grid, meters.
pub const MAP_MARGIN: f64 = 1.0;
pub const DEFAULT_RESOLUTION: f64 = 0.05;
pub const DEFAULT_OCCUPIED_THRESHOLD: u32 = 2;

pub const PIXEL_OCCUPIED: u8 = 0;
pub const PIXEL_UNKNOWN: u8 = 205;
pub const PIXEL_EMPTY: u8 = 254;

#[derive(Clone, Debug, PartialEq)]
pub struct GridMap {
    pub resolution: f64,
    /// World pose of the lower-left corner of cell (0, 0).
    pub origin: Pose2,
    pub width: usize,
    pub height: usize,
    /// Row-major, row 0 at the bottom (minimum y).
    pub hits: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum MapError {
    #[error("no scan could be associated with a trajectory pose")]
    NoAssociations,
    #[error("resolution must be positive")]
    BadResolution,
}

impl GridMap {
    pub fn hits_at(&self, ix: usize, iy: usize) -> u32 {
        self.hits[iy * self.width + ix]
    }

    pub fn total_hits(&self) -> u64 {
        self.hits.iter().map(|&h| h as u64).sum()
    }

    /// Cell containing world point `p`, if inside the grid.
    pub fn cell_of(&self, p: [f64; 2]) -> Option<(usize, usize)> {
        let local = self.origin.inverse().transform_point(p);
        let ix = math::floor(local[0] / self.resolution);
        let iy = math::floor(local[1] / self.resolution);
        if ix < 0.0 || iy < 0.0 || ix >= self.width as f64 || iy >= self.height as f64 {
            return None;
        }
        Some((ix as usize, iy as usize))
    }

    /// World coordinates of a cell's center.
    pub fn cell_center(&self, ix: usize, iy: usize) -> [f64; 2] {
        self.origin.transform_point([(ix as f64 + 0.5) * self.resolution, (iy as f64 + 0.5) * self.resolution])
    }

    /// Cells with at least `threshold` hits.
    pub fn occupied_cells(&self, threshold: u32) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.height)
            .flat_map(move |iy| (0..self.width).map(move |ix| (ix, iy)))
            .filter(move |&(ix, iy)| self.hits_at(ix, iy) >= threshold)
    }

    /// Binary portable graymap: header `P5 <w> <h> 255\n`, then one byte per
    /// cell with the top row (maximum y) first.
    pub fn to_pgm(&self, occupied_threshold: u32) -> Vec<u8> {
        let threshold = occupied_threshold.max(1);
        let header = alloc::format!("P5 {} {} 255\n", self.width, self.height);
        let mut out = Vec::with_capacity(header.len() + self.width * self.height);
        out.extend_from_slice(header.as_bytes());
        for iy in (0..self.height).rev() {
            for ix in 0..self.width {
                let h = self.hits_at(ix, iy);
                out.push(if h >= threshold {
                    PIXEL_OCCUPIED
                } else if h > 0 {
                    PIXEL_UNKNOWN
                } else {
                    PIXEL_EMPTY
                });
            }
        }
        out
    }
}

/// Projects every scan through its associated pose into an auto-sized grid.
/// Scans are matched to poses by nearest timestamp within the default
/// evaluation window.
pub fn build_map(traj: &Trajectory, scans: &[LaserScan], resolution: f64) -> Result<GridMap, MapError> {
    build_map_with(traj, scans, resolution, DEFAULT_MAX_DT)
}

pub fn build_map_with(
    traj: &Trajectory,
    scans: &[LaserScan],
    resolution: f64,
    max_dt: f64,
) -> Result<GridMap, MapError> {
    if !(resolution > 0.0) || !resolution.is_finite() {
        return Err(MapError::BadResolution);
    }
    let mut points = Vec::new();
    let mut associated = 0;
    for scan in scans {
        let Some(i) = traj.nearest_index(scan.t, max_dt) else { continue };
        associated += 1;
        let pose = traj.samples()[i].pose;
        points.extend(scan.points().map(|p| pose.transform_point(p)));
    }
    if associated == 0 {
        return Err(MapError::NoAssociations);
    }
    let (mut min, mut max) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in &points {
        for a in 0..2 {
            min[a] = min[a].min(p[a]);
            max[a] = max[a].max(p[a]);
        }
    }
    if points.is_empty() {
        min = [0.0; 2];
        max = [0.0; 2];
    }
    // snap the origin to the resolution lattice
    let ox = math::floor((min[0] - MAP_MARGIN) / resolution) * resolution;
    let oy = math::floor((min[1] - MAP_MARGIN) / resolution) * resolution;
    let width = math::floor((max[0] + MAP_MARGIN - ox) / resolution) as usize + 1;
    let height = math::floor((max[1] + MAP_MARGIN - oy) / resolution) as usize + 1;
    let mut hits = alloc::vec![0u32; width * height];
    for p in &points {
        let ix = (math::floor((p[0] - ox) / resolution) as usize).min(width - 1);
        let iy = (math::floor((p[1] - oy) / resolution) as usize).min(height - 1);
        hits[iy * width + ix] += 1;
    }
    Ok(GridMap { resolution, origin: Pose2::from_translation(ox, oy), width, height, hits })
}
