//! Laser scans and their Cartesian point clouds.

use alloc::vec::Vec;

use nalgebra::Matrix2;

use crate::math;

/// Fewer valid returns than this and a scan is treated as degenerate.
pub const MIN_VALID_RETURNS: usize = 10;

/// One sweep of a planar range finder. Invalid returns are NaN or fall
/// outside `[range_min, range_max]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LaserScan {
    pub t: f64,
    pub angle_min: f64,
    pub angle_increment: f64,
    pub range_min: f64,
    pub range_max: f64,
    pub ranges: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum ScanError {
    #[error("angle_increment must be positive, got {0}")]
    BadIncrement(f64),
    #[error("range_min ({min}) must be below range_max ({max})")]
    BadRangeBounds { min: f64, max: f64 },
    #[error("scan needs at least 2 ranges, got {0}")]
    TooFewRanges(usize),
    #[error("scan timestamp or geometry is not finite")]
    NotFinite,
    #[error("only {valid} valid returns, need at least {required}")]
    EmptyCloud { valid: usize, required: usize },
}

impl LaserScan {
    pub fn validate(&self) -> Result<(), ScanError> {
        if !(self.t.is_finite()
            && self.angle_min.is_finite()
            && self.angle_increment.is_finite()
            && self.range_min.is_finite()
            && self.range_max.is_finite())
        {
            return Err(ScanError::NotFinite);
        }
        if self.angle_increment <= 0.0 {
            return Err(ScanError::BadIncrement(self.angle_increment));
        }
        if self.range_min >= self.range_max {
            return Err(ScanError::BadRangeBounds { min: self.range_min, max: self.range_max });
        }
        if self.ranges.len() < 2 {
            return Err(ScanError::TooFewRanges(self.ranges.len()));
        }
        Ok(())
    }

    pub fn is_valid_range(&self, r: f64) -> bool {
        r.is_finite() && r >= self.range_min && r <= self.range_max
    }

    pub fn beam_angle(&self, i: usize) -> f64 {
        self.angle_min + i as f64 * self.angle_increment
    }

    /// Valid returns in the sensor frame, in beam order.
    pub fn points(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        self.ranges.iter().enumerate().filter(|(_, r)| self.is_valid_range(**r)).map(|(i, &r)| {
            let (s, c) = math::sin_cos(self.beam_angle(i));
            [r * c, r * s]
        })
    }

    pub fn num_valid(&self) -> usize {
        self.ranges.iter().filter(|r| self.is_valid_range(**r)).count()
    }
}

/// Planar points with optional per-point 2x2 covariances.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud2 {
    pub points: Vec<[f64; 2]>,
    pub covs: Option<Vec<Matrix2<f64>>>,
}

impl PointCloud2 {
    pub fn new(points: Vec<[f64; 2]>) -> Self {
        Self { points, covs: None }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn has_covariances(&self) -> bool {
        self.covs.as_ref().is_some_and(|c| c.len() == self.points.len())
    }

    /// Same cloud with every covariance replaced by the identity.
    pub fn with_identity_covariances(mut self) -> Self {
        self.covs = Some(alloc::vec![Matrix2::identity(); self.points.len()]);
        self
    }

    pub fn transformed(&self, pose: &crate::Pose2) -> Self {
        let points = self.points.iter().map(|p| pose.transform_point(*p)).collect();
        let covs = self.covs.as_ref().map(|covs| {
            let r = pose.rotation_matrix();
            covs.iter().map(|c| r * c * r.transpose()).collect()
        });
        Self { points, covs }
    }
}

/// Converts a scan to a point cloud, dropping invalid returns. Fails with
/// [`ScanError::EmptyCloud`] when fewer than `min_valid` returns survive.
pub fn scan_to_cloud(scan: &LaserScan, min_valid: usize) -> Result<PointCloud2, ScanError> {
    let points: Vec<_> = scan.points().collect();
    if points.len() < min_valid {
        return Err(ScanError::EmptyCloud { valid: points.len(), required: min_valid });
    }
    Ok(PointCloud2::new(points))
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::FRAC_PI_2;

    fn scan(ranges: Vec<f64>, angle_min: f64, inc: f64) -> LaserScan {
        LaserScan { t: 0.0, angle_min, angle_increment: inc, range_min: 0.1, range_max: 10.0, ranges }
    }

    #[test]
    fn single_return() {
        let c = scan_to_cloud(&scan(alloc::vec![1.0], 0.0, 0.1), 1).unwrap();
        assert_eq!(c.points, alloc::vec![[1.0, 0.0]]);
    }

    #[test]
    fn two_returns_quarter_turn() {
        let c = scan_to_cloud(&scan(alloc::vec![1.0, 1.0], 0.0, FRAC_PI_2), 1).unwrap();
        assert_eq!(c.points[0], [1.0, 0.0]);
        assert!(c.points[1][0].abs() < 1e-15 && (c.points[1][1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn invalid_returns_are_dropped() {
        let s = scan(alloc::vec![f64::NAN, 0.05, 2.0], 0.0, 0.5);
        let c = scan_to_cloud(&s, 1).unwrap();
        assert_eq!(c.len(), 1);
        let (sn, cs) = math::sin_cos(1.0);
        assert_eq!(c.points[0], [2.0 * cs, 2.0 * sn]);
    }

    #[test]
    fn degenerate_scan_is_rejected() {
        let s = scan(alloc::vec![1.0; 9], 0.0, 0.1);
        assert_eq!(
            scan_to_cloud(&s, MIN_VALID_RETURNS),
            Err(ScanError::EmptyCloud { valid: 9, required: 10 })
        );
        let s = scan(alloc::vec![1.0; 10], 0.0, 0.1);
        assert_eq!(scan_to_cloud(&s, MIN_VALID_RETURNS).unwrap().len(), 10);
    }

    #[test]
    fn validation() {
        assert!(scan(alloc::vec![1.0, 2.0], 0.0, 0.1).validate().is_ok());
        assert_eq!(scan(alloc::vec![1.0], 0.0, 0.1).validate(), Err(ScanError::TooFewRanges(1)));
        assert_eq!(scan(alloc::vec![1.0, 1.0], 0.0, 0.0).validate(), Err(ScanError::BadIncrement(0.0)));
        let mut s = scan(alloc::vec![1.0, 1.0], 0.0, 0.1);
        s.range_max = 0.1;
        assert!(matches!(s.validate(), Err(ScanError::BadRangeBounds { .. })));
    }
}
