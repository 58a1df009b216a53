//! Nonlinear least squares: robust motion-only tracking and windowed bundle
//! adjustment over keyframe poses, map points and map lines.

pub mod bundle;
pub mod pose_estimate;
pub mod residuals;
pub mod robust;

use std::collections::BTreeMap;

pub use bundle::{BaProblem, BaReport, BaState, IterationLog, LineObservation, LineParam, LmConfig, PointObservation};
pub use pose_estimate::{initial_pose_estimate, PoseEstimate};
pub use robust::{HuberKernel, CHI2_2DOF_95};

use crate::error::{Error, Result};
use crate::geometry::{plucker_to_orthonormal, StereoRig};
use crate::map::{KeyframeId, Map, MapLineId, MapPointId};

/// Outcome of one windowed adjustment.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LocalBaReport {
    pub keyframes: usize,
    pub points: usize,
    pub lines: usize,
    pub point_observations: usize,
    pub line_observations: usize,
    pub solver: BaReport,
}

/// Jointly refines the keyframes of `window` (oldest first; the oldest one
/// is held fixed) and every landmark they observe at least twice, counting
/// right-camera observations. Results are written back into `map`.
pub fn local_bundle_adjustment(
    map: &mut Map,
    window: &[KeyframeId],
    rig: &StereoRig,
    use_lines: bool,
    config: &LmConfig,
) -> Result<LocalBaReport> {
    if window.len() < 2 {
        return Ok(LocalBaReport { keyframes: window.len(), ..Default::default() });
    }
    let mut pose_index = BTreeMap::new();
    let mut poses = Vec::with_capacity(window.len());
    for (i, id) in window.iter().enumerate() {
        let kf = map.keyframe(*id).ok_or_else(|| Error::UnknownId(id.to_string()))?;
        pose_index.insert(*id, i);
        poses.push(*kf.pose());
    }

    // Gather candidate observations per landmark.
    let mut point_obs: BTreeMap<MapPointId, Vec<PointObservation>> = BTreeMap::new();
    let mut line_obs: BTreeMap<MapLineId, Vec<LineObservation>> = BTreeMap::new();
    for id in window {
        let kf = map.keyframe(*id).expect("checked above");
        let pose = pose_index[id];
        for (i, lm) in kf.point_landmarks.iter().enumerate() {
            let Some(lm) = lm else { continue };
            let entry = point_obs.entry(*lm).or_default();
            entry.push(PointObservation { pose, point: 0, pixel: kf.frame.keypoints[i], x_offset: 0.0 });
            if let Some(Some(right)) = kf.right_keypoints.get(i) {
                entry.push(PointObservation { pose, point: 0, pixel: *right, x_offset: rig.baseline });
            }
        }
        if use_lines {
            for (i, lm) in kf.line_landmarks.iter().enumerate() {
                let Some(lm) = lm else { continue };
                let entry = line_obs.entry(*lm).or_default();
                entry.push(LineObservation { pose, line: 0, segment: kf.frame.segments[i], x_offset: 0.0 });
                if let Some(Some(right)) = kf.right_segments.get(i) {
                    entry.push(LineObservation { pose, line: 0, segment: *right, x_offset: rig.baseline });
                }
            }
        }
    }
    point_obs.retain(|_, v| v.len() >= 2);
    line_obs.retain(|_, v| v.len() >= 2);

    let mut state = BaState { poses, points: Vec::new(), lines: Vec::new() };
    let mut point_ids = Vec::new();
    let mut line_ids = Vec::new();
    let mut all_point_obs = Vec::new();
    let mut all_line_obs = Vec::new();
    for (id, obs) in &point_obs {
        let idx = state.points.len();
        state.points.push(map.points()[id].position);
        point_ids.push(*id);
        all_point_obs.extend(obs.iter().map(|o| PointObservation { point: idx, ..*o }));
    }
    for (id, obs) in &line_obs {
        let idx = state.lines.len();
        let pl = map.lines()[id].line;
        state.lines.push(match plucker_to_orthonormal(&pl) {
            Ok(o) => LineParam::Free(o),
            Err(_) => LineParam::Fixed(pl),
        });
        line_ids.push(*id);
        all_line_obs.extend(obs.iter().map(|o| LineObservation { line: idx, ..*o }));
    }

    let mut problem = BaProblem::new(rig.intrinsics, state);
    problem.fixed_poses[0] = true;
    problem.point_obs = all_point_obs;
    problem.line_obs = all_line_obs;
    let solver = problem.solve(config)?;

    for (id, pose) in window.iter().zip(&problem.state.poses).skip(1) {
        map.keyframe_mut(*id).expect("checked above").frame.pose = *pose;
    }
    for (id, p) in point_ids.iter().zip(&problem.state.points) {
        map.point_mut(*id).expect("collected from map").position = *p;
    }
    for (id, l) in line_ids.iter().zip(&problem.state.lines) {
        let line = l.plucker()?;
        let ml = map.line_mut(*id).expect("collected from map");
        // Keep the stored extent by sliding old endpoints onto the new line.
        let snap = |x: &crate::geometry::Point3| {
            let d = line.direction();
            let base = line.closest_point_to_origin();
            base + d * d.dot(&(x - base))
        };
        ml.endpoints = (snap(&ml.endpoints.0), snap(&ml.endpoints.1));
        ml.line = line;
    }
    Ok(LocalBaReport {
        keyframes: window.len(),
        points: point_ids.len(),
        lines: line_ids.len(),
        point_observations: problem.point_obs.len(),
        line_observations: problem.line_obs.len(),
        solver,
    })
}

/// Unlinks window observations whose reprojection error, in either camera,
/// exceeds the 95% chi-square gate, or which project behind a camera.
/// Returns the number of (point, line) observations removed.
pub fn prune_outlier_observations(
    map: &mut Map,
    window: &[KeyframeId],
    rig: &StereoRig,
    config: &LmConfig,
) -> (usize, usize) {
    let k = &rig.intrinsics;
    let pg = CHI2_2DOF_95 * config.point_sigma * config.point_sigma;
    let lg = CHI2_2DOF_95 * config.line_sigma * config.line_sigma;
    let mut bad_points = Vec::new();
    let mut bad_lines = Vec::new();
    for id in window {
        let Some(kf) = map.keyframe(*id) else { continue };
        let left = *kf.pose();
        let right = rig.right_pose(&left);
        for (i, lm) in kf.point_landmarks.iter().enumerate() {
            let Some(lm) = lm else { continue };
            let x = map.points()[lm].position;
            let within = |pose: &crate::geometry::PoseSE3, px: &crate::geometry::Point2| {
                residuals::point_residual(&x, pose, k, px).is_ok_and(|r| r.value.norm_squared() <= pg)
            };
            let ok = within(&left, &kf.frame.keypoints[i])
                && kf.right_keypoints.get(i).copied().flatten().is_none_or(|r| within(&right, &r));
            if !ok {
                bad_points.push((*lm, *id));
            }
        }
        for (i, lm) in kf.line_landmarks.iter().enumerate() {
            let Some(lm) = lm else { continue };
            let line = map.lines()[lm].line;
            let within = |pose: &crate::geometry::PoseSE3, seg: &crate::geometry::LineSegment2D| {
                residuals::line_residual(&line, pose, k, seg).is_ok_and(|r| r.value.norm_squared() <= lg)
                    && crate::triangulation::line_in_front(&line, seg, pose, k)
            };
            let ok = within(&left, &kf.frame.segments[i])
                && kf.right_segments.get(i).copied().flatten().is_none_or(|r| within(&right, &r));
            if !ok {
                bad_lines.push((*lm, *id));
            }
        }
    }
    for (lm, kf) in &bad_points {
        map.remove_point_observation(*lm, *kf);
    }
    for (lm, kf) in &bad_lines {
        map.remove_line_observation(*lm, *kf);
    }
    (bad_points.len(), bad_lines.len())
}
