//! Timestamped trajectories, TUM text I/O and absolute trajectory error.

use std::fmt::Write as _;

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, PoseSE3};

/// Maximum timestamp difference for associating two records, seconds.
pub const ASSOCIATION_WINDOW: f64 = 0.010;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    records: Vec<(f64, PoseSE3)>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: Vec<(f64, PoseSE3)>) -> Result<Self> {
        let mut t = Self::new();
        for (stamp, pose) in records {
            t.push(stamp, pose)?;
        }
        Ok(t)
    }

    /// Appends a record; timestamps must be finite and strictly increasing.
    pub fn push(&mut self, timestamp: f64, pose: PoseSE3) -> Result<()> {
        if !timestamp.is_finite() {
            return Err(Error::InvalidParameter("non-finite timestamp".into()));
        }
        if let Some((last, _)) = self.records.last() {
            if timestamp <= *last {
                return Err(Error::InvalidParameter(format!("timestamp {timestamp} not after {last}")));
            }
        }
        self.records.push((timestamp, pose));
        Ok(())
    }

    pub fn records(&self) -> &[(f64, PoseSE3)] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// `timestamp tx ty tz qx qy qz qw` per line, camera-to-world.
    pub fn to_tum(&self) -> String {
        let mut s = String::new();
        for (stamp, pose) in &self.records {
            let (t, q) = pose.to_tum();
            writeln!(
                s,
                "{stamp:.6} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9}",
                t[0], t[1], t[2], q[0], q[1], q[2], q[3]
            )
            .expect("writing to a String cannot fail");
        }
        s
    }

    /// Parses TUM text; blank lines and `#` comments are skipped.
    pub fn from_tum(text: &str) -> Result<Self> {
        let mut t = Self::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
            if fields.len() != 8 {
                return Err(Error::Parse(format!("line {}: expected 8 fields, got {}", lineno + 1, fields.len())));
            }
            let pose = PoseSE3::from_tum([fields[1], fields[2], fields[3]], [fields[4], fields[5], fields[6], fields[7]])
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
            t.push(fields[0], pose).map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(t)
    }
}

/// Nearest-timestamp pairs `(estimate index, ground-truth index)` within
/// [`ASSOCIATION_WINDOW`]. Each ground-truth record is used at most once.
pub fn associate(estimate: &Trajectory, ground_truth: &Trajectory) -> Vec<(usize, usize)> {
    let gt = ground_truth.records();
    let mut out = Vec::new();
    let mut last_gt: Option<usize> = None;
    for (i, (stamp, _)) in estimate.records().iter().enumerate() {
        let pos = gt.partition_point(|(s, _)| s < stamp);
        let best = [pos.checked_sub(1), Some(pos)]
            .into_iter()
            .flatten()
            .filter(|j| *j < gt.len())
            .min_by(|a, b| (gt[*a].0 - stamp).abs().total_cmp(&(gt[*b].0 - stamp).abs()));
        if let Some(j) = best {
            if (gt[j].0 - stamp).abs() <= ASSOCIATION_WINDOW && last_gt.is_none_or(|l| j > l) {
                out.push((i, j));
                last_gt = Some(j);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct AteResult {
    pub rmse: f64,
    /// `(estimate timestamp, translational error)` per associated pair.
    pub errors: Vec<(f64, f64)>,
    /// Rigid transform mapping estimated positions onto ground truth.
    pub alignment: PoseSE3,
}

/// Rotation and translation minimizing `Σ‖b − (R a + t)‖²`.
pub fn align_rigid(a: &[Point3], b: &[Point3]) -> PoseSE3 {
    let n = a.len() as f64;
    let ca = a.iter().fold(Vector3::zeros(), |s, p| s + p.coords) / n;
    let cb = b.iter().fold(Vector3::zeros(), |s, p| s + p.coords) / n;
    let mut h = Matrix3::zeros();
    for (pa, pb) in a.iter().zip(b) {
        h += (pb.coords - cb) * (pa.coords - ca).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u.expect("requested");
    let v_t = svd.v_t.expect("requested");
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * v_t;
    let rotation = Rotation3::from_matrix_unchecked(r);
    PoseSE3::new(rotation, cb - r * ca)
}

/// Absolute trajectory error after rigid (scale-free) alignment of camera
/// positions.
pub fn evaluate_ate(estimate: &Trajectory, ground_truth: &Trajectory) -> Result<AteResult> {
    let pairs = associate(estimate, ground_truth);
    if pairs.is_empty() {
        return Err(Error::NoTimestampOverlap);
    }
    if pairs.len() < 2 {
        return Err(Error::TooFewCorrespondences { got: pairs.len(), need: 2 });
    }
    let est: Vec<Point3> = pairs.iter().map(|(i, _)| estimate.records()[*i].1.center()).collect();
    let gt: Vec<Point3> = pairs.iter().map(|(_, j)| ground_truth.records()[*j].1.center()).collect();
    let alignment = align_rigid(&est, &gt);
    let errors: Vec<(f64, f64)> = pairs
        .iter()
        .zip(est.iter().zip(&gt))
        .map(|((i, _), (e, g))| (estimate.records()[*i].0, (alignment.transform_point(e) - g).norm()))
        .collect();
    let rmse = (errors.iter().map(|(_, e)| e * e).sum::<f64>() / errors.len() as f64).sqrt();
    Ok(AteResult { rmse, errors, alignment })
}

/// `timestamp,error` rows; header only for an empty list.
pub fn errors_csv(errors: &[(f64, f64)]) -> String {
    let mut s = String::from("timestamp,error_m\n");
    for (t, e) in errors {
        writeln!(s, "{t:.6},{e:.12e}").expect("writing to a String cannot fail");
    }
    s
}

/// Empirical CDF of the errors: at each sorted error value, the fraction of
/// errors not exceeding it.
pub fn error_cdf(errors: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut sorted: Vec<f64> = errors.iter().map(|(_, e)| *e).collect();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(sorted.len());
    for (i, e) in sorted.iter().enumerate() {
        let p = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == *e => last.1 = p,
            _ => out.push((*e, p)),
        }
    }
    out
}

pub fn cdf_csv(errors: &[(f64, f64)]) -> String {
    let mut s = String::from("threshold_m,proportion\n");
    for (t, p) in error_cdf(errors) {
        writeln!(s, "{t:.12e},{p:.6}").expect("writing to a String cannot fail");
    }
    s
}
