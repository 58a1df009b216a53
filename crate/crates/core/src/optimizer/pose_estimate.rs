//! Motion-only pose estimation against known 3D landmarks.

use super::bundle::{BaProblem, BaState, LineObservation, LineParam, LmConfig, PointObservation};
use super::robust::CHI2_2DOF_95;
use crate::error::{Error, Result};
use crate::geometry::{LineSegment2D, PinholeIntrinsics, PluckerLine, Point2, Point3, PoseSE3};

/// Fewest 3D-2D point correspondences accepted.
pub const MIN_POSE_POINTS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct PoseEstimate {
    pub pose: PoseSE3,
    pub point_inliers: Vec<bool>,
    pub line_inliers: Vec<bool>,
    pub final_cost: f64,
}

impl PoseEstimate {
    pub fn num_point_inliers(&self) -> usize {
        self.point_inliers.iter().filter(|x| **x).count()
    }
}

fn problem(
    points: &[(Point3, Point2)],
    lines: &[(PluckerLine, LineSegment2D)],
    point_mask: &[bool],
    line_mask: &[bool],
    pose: PoseSE3,
    k: &PinholeIntrinsics,
) -> BaProblem {
    let state = BaState {
        poses: vec![pose],
        points: points.iter().map(|(x, _)| *x).collect(),
        lines: lines.iter().map(|(l, _)| LineParam::Fixed(*l)).collect(),
    };
    let mut p = BaProblem::new(*k, state);
    p.fixed_points = vec![true; points.len()];
    p.point_obs = points
        .iter()
        .enumerate()
        .filter(|(i, _)| point_mask[*i])
        .map(|(i, (_, px))| PointObservation { pose: 0, point: i, pixel: *px, x_offset: 0.0 })
        .collect();
    p.line_obs = lines
        .iter()
        .enumerate()
        .filter(|(i, _)| line_mask[*i])
        .map(|(i, (_, seg))| LineObservation { pose: 0, line: i, segment: *seg, x_offset: 0.0 })
        .collect();
    p
}

fn classify(
    pose: &PoseSE3,
    points: &[(Point3, Point2)],
    lines: &[(PluckerLine, LineSegment2D)],
    k: &PinholeIntrinsics,
    config: &LmConfig,
) -> (Vec<bool>, Vec<bool>) {
    let pg = CHI2_2DOF_95 * config.point_sigma * config.point_sigma;
    let lg = CHI2_2DOF_95 * config.line_sigma * config.line_sigma;
    let pi = points
        .iter()
        .map(|(x, px)| {
            super::residuals::point_residual(x, pose, k, px).map(|r| r.value.norm_squared() <= pg).unwrap_or(false)
        })
        .collect();
    let li = lines
        .iter()
        .map(|(l, s)| super::residuals::line_residual(l, pose, k, s).map(|r| r.value.norm_squared() <= lg).unwrap_or(false))
        .collect();
    (pi, li)
}

/// Robust solve from `prior`, gate outliers by the 95% chi-square bound and
/// re-solve on the inliers. Line correspondences may be empty.
pub fn initial_pose_estimate(
    points: &[(Point3, Point2)],
    lines: &[(PluckerLine, LineSegment2D)],
    prior: &PoseSE3,
    k: &PinholeIntrinsics,
    config: &LmConfig,
) -> Result<PoseEstimate> {
    if points.len() < MIN_POSE_POINTS {
        return Err(Error::TooFewCorrespondences { got: points.len(), need: MIN_POSE_POINTS });
    }
    let all_p = vec![true; points.len()];
    let all_l = vec![true; lines.len()];
    let mut first = problem(points, lines, &all_p, &all_l, *prior, k);
    first.solve(config)?;
    let pose = first.state.poses[0];

    let (point_inliers, line_inliers) = classify(&pose, points, lines, k, config);
    let n_in = point_inliers.iter().filter(|x| **x).count();
    if n_in < MIN_POSE_POINTS {
        return Err(Error::TooFewCorrespondences { got: n_in, need: MIN_POSE_POINTS });
    }
    let mut second = problem(points, lines, &point_inliers, &line_inliers, pose, k);
    let report = second.solve(config)?;
    let pose = second.state.poses[0];
    if !pose.translation().iter().all(|x| x.is_finite()) {
        return Err(Error::Diverged);
    }
    let (point_inliers, line_inliers) = classify(&pose, points, lines, k, config);
    Ok(PoseEstimate { pose, point_inliers, line_inliers, final_cost: report.final_cost })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{plucker_from_two_points, segment_from_endpoints};
    use nalgebra::{Rotation3, Vector3, Vector6};

    fn k() -> PinholeIntrinsics {
        PinholeIntrinsics::new(400.0, 400.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn scene(truth: &PoseSE3) -> Vec<(Point3, Point2)> {
        (0..40)
            .map(|i| {
                let f = i as f64;
                let x = Point3::new(1.5 * (f * 0.7).sin(), (f * 1.3).cos(), 5.0 + 2.0 * (f * 0.31).sin());
                (x, k().project(&truth.transform_point(&x)).unwrap())
            })
            .collect()
    }

    #[test]
    fn recovers_pose_with_outliers() {
        let truth = PoseSE3::new(Rotation3::from_euler_angles(0.02, -0.05, 0.01), Vector3::new(0.1, -0.05, 0.2));
        let mut corr = scene(&truth);
        for c in corr.iter_mut().take(6) {
            c.1 += nalgebra::Vector2::new(40.0, -25.0);
        }
        let prior = truth.retract(&Vector6::new(0.05, 0.03, -0.04, 0.02, -0.01, 0.015));
        let est = initial_pose_estimate(&corr, &[], &prior, &k(), &LmConfig::default()).unwrap();
        assert!(est.pose.distance_to(&truth) < 1e-6, "{}", est.pose.distance_to(&truth));
        assert!(est.point_inliers[..6].iter().all(|x| !x));
        assert!(est.point_inliers[6..].iter().all(|x| *x));
    }

    #[test]
    fn lines_alone_are_consistent() {
        let truth = PoseSE3::new(Rotation3::from_euler_angles(0.0, 0.03, 0.0), Vector3::new(0.05, 0.0, 0.0));
        let corr = scene(&truth);
        let lines: Vec<_> = (0..6)
            .map(|i| {
                let f = i as f64;
                let a = Point3::new(-1.0 + 0.3 * f, -0.5, 4.0 + 0.2 * f);
                let b = Point3::new(-0.6 + 0.3 * f, 0.7, 4.5);
                let l = plucker_from_two_points(&a, &b).unwrap();
                let pa = k().project(&truth.transform_point(&a)).unwrap();
                let pb = k().project(&truth.transform_point(&b)).unwrap();
                (l, segment_from_endpoints(pa, pb).unwrap())
            })
            .collect();
        let est = initial_pose_estimate(&corr, &lines, &PoseSE3::identity(), &k(), &LmConfig::default()).unwrap();
        assert!(est.pose.distance_to(&truth) < 1e-6);
        assert!(est.line_inliers.iter().all(|x| *x));
    }

    #[test]
    fn too_few_points() {
        let corr = scene(&PoseSE3::identity());
        assert!(matches!(
            initial_pose_estimate(&corr[..3], &[], &PoseSE3::identity(), &k(), &LmConfig::default()),
            Err(Error::TooFewCorrespondences { got: 3, need: 4 })
        ));
    }
}
