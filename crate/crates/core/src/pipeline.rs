//! Frame-by-frame orchestration.
//!
//! A frontend thread produces [`FrontendOutput`] bundles into a bounded
//! queue; the [`Backend`] consumes them in order. Per frame it merges and
//! filters segments, associates points with lines, matches against the last
//! keyframe, estimates the pose, and decides on promotion. New keyframes get
//! stereo points, triangulated lines and a local bundle adjustment.
//!
//! Each frame pose is stored relative to its reference keyframe, so the
//! final trajectory reflects later keyframe refinements.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::mpsc::sync_channel;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, SourceConfig};
use crate::error::{Error, Result};
use crate::frontend::{FeatureMatcher, FrontendOutput, StereoFeatures, TrackIdMatcher};
use crate::geometry::{LineSegment2D, PluckerLine, Point2, PoseSE3, StereoRig};
use crate::line2d::{
    ambiguous_segments, associate_points_to_lines, filter_short, match_lines, merge_segments_tracked, source_misfit, source_overlap, LineMatch,
    MatchParams, MergeParams, PointLineAssociation,
};
use crate::map::{covisibility_window, keyframe_decision, Frame, Keyframe, KeyframeId, KeyframeThresholds, Map, MapLineId, MapPointId};
use crate::optimizer::{
    initial_pose_estimate, local_bundle_adjustment, prune_outlier_observations, residuals, IterationLog, LmConfig,
    CHI2_2DOF_95,
};
use crate::synthetic::{generate_scene, render_frame, NoiseModel, OracleMatcher, SyntheticScene};
use crate::trajectory::{cdf_csv, errors_csv, evaluate_ate, AteResult, Trajectory};
use crate::triangulation::{
    back_project_plane, line_in_front, plane_angle, select_two_closest, triangulate_line_from_points,
    triangulate_line_two_planes, triangulate_point_stereo, trim_endpoints, TriangulationParams, MAX_ROW_DISAGREEMENT,
};

/// Stereo points with less disparity than this are not triangulated, pixels.
const MIN_DISPARITY: f64 = 1.0;
/// Merged segments whose inputs overlap more than this fraction are dropped
/// as ambiguous (several lines projecting onto one image line).
const MAX_SOURCE_OVERLAP: f64 = 0.1;

/// Accumulated wall time per named stage.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageTimer {
    stages: BTreeMap<&'static str, (Duration, usize)>,
}

impl StageTimer {
    pub fn add(&mut self, stage: &'static str, d: Duration) {
        let e = self.stages.entry(stage).or_default();
        e.0 += d;
        e.1 += 1;
    }

    pub fn total(&self) -> Duration {
        self.stages.values().map(|v| v.0).sum()
    }

    pub fn stages(&self) -> &BTreeMap<&'static str, (Duration, usize)> {
        &self.stages
    }
}

/// Deterministic per-frame record.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub frame_index: usize,
    pub timestamp: f64,
    pub keyframe: bool,
    pub rule: Option<String>,
    pub tracking_failed: bool,
    pub point_matches: usize,
    pub point_inliers: usize,
    pub line_matches: usize,
    pub line_inliers: usize,
    pub new_points: usize,
    pub new_lines: usize,
    pub ba_iterations: usize,
    pub ba_final_cost: f64,
}

pub const METRICS_HEADER: &str = "frame,timestamp,keyframe,rule,tracking_failed,point_matches,point_inliers,line_matches,line_inliers,new_points,new_lines,ba_iterations,ba_final_cost";

impl FrameReport {
    fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{},{},{},{},{},{},{},{},{},{},{:.9e}",
            self.frame_index,
            self.timestamp,
            self.keyframe as u8,
            self.rule.as_deref().unwrap_or(""),
            self.tracking_failed as u8,
            self.point_matches,
            self.point_inliers,
            self.line_matches,
            self.line_inliers,
            self.new_points,
            self.new_lines,
            self.ba_iterations,
            self.ba_final_cost
        )
    }
}

/// Tunables of the backend, in module units (radians, pixels, meters).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackendParams {
    pub merge: MergeParams,
    pub matching: MatchParams,
    pub keyframe: KeyframeThresholds,
    pub triangulation: TriangulationParams,
    pub optimizer: LmConfig,
    pub use_lines: bool,
    pub audit_map: bool,
}

impl BackendParams {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            merge: cfg.line.merge_params(),
            matching: cfg.line.match_params(),
            keyframe: cfg.keyframe.thresholds(),
            triangulation: cfg.triangulation_params(),
            optimizer: cfg.optimizer.lm(),
            use_lines: cfg.use_lines,
            audit_map: cfg.audit_map,
        }
    }
}

struct FrameRecord {
    timestamp: f64,
    reference: KeyframeId,
    /// `T_frame · T_ref⁻¹`.
    relative: PoseSE3,
}

pub struct Backend {
    rig: StereoRig,
    params: BackendParams,
    map: Map,
    last_kf: Option<KeyframeId>,
    prev_frame: Option<Frame>,
    records: Vec<FrameRecord>,
    reports: Vec<FrameReport>,
    ba_log: Vec<(KeyframeId, IterationLog)>,
    timer: StageTimer,
}

struct TrackResult {
    pose: PoseSE3,
    failed: bool,
    inliers: usize,
    point_matches: Vec<(usize, usize)>,
    line_matches: Vec<LineMatch>,
    point_links: Vec<(usize, MapPointId)>,
    line_links: Vec<(usize, MapLineId)>,
    line_inliers: usize,
}

impl Backend {
    pub fn new(rig: StereoRig, params: BackendParams) -> Result<Self> {
        rig.validate()?;
        params.merge.validate()?;
        params.matching.validate()?;
        params.keyframe.validate()?;
        params.optimizer.validate()?;
        Ok(Self {
            rig,
            params,
            map: Map::new(),
            last_kf: None,
            prev_frame: None,
            records: Vec::new(),
            reports: Vec::new(),
            ba_log: Vec::new(),
            timer: StageTimer::default(),
        })
    }

    pub fn map(&self) -> &Map {
        &self.map
    }

    pub fn reports(&self) -> &[FrameReport] {
        &self.reports
    }

    pub fn timer(&self) -> &StageTimer {
        &self.timer
    }

    pub fn timer_mut(&mut self) -> &mut StageTimer {
        &mut self.timer
    }

    /// Trajectory with every frame re-anchored on its reference keyframe's
    /// current pose.
    pub fn trajectory(&self) -> Result<Trajectory> {
        let mut t = Trajectory::new();
        for r in &self.records {
            let kf = self.map.keyframe(r.reference).ok_or_else(|| Error::UnknownId(r.reference.to_string()))?;
            t.push(r.timestamp, r.relative.compose(kf.pose()))?;
        }
        Ok(t)
    }

    fn process_segments(&self, raw: &[LineSegment2D]) -> Vec<LineSegment2D> {
        if !self.params.use_lines {
            return Vec::new();
        }
        let merged: Vec<LineSegment2D> = merge_segments_tracked(raw, &self.params.merge)
            .into_iter()
            .filter(|m| source_overlap(m, raw) <= MAX_SOURCE_OVERLAP)
            // Inputs straying further than the line measurement sigma mean two
            // nearly collinear lines were joined.
            .filter(|m| source_misfit(m, raw) <= self.params.optimizer.line_sigma)
            .map(|m| m.segment)
            .collect();
        filter_short(&merged, self.params.merge.min_length)
    }

    /// Processed segments and their point associations, without segments that
    /// share more than `min_shared_points` associated points with a neighbour.
    fn associated_segments(&self, keypoints: &[Point2], raw: &[LineSegment2D]) -> (Vec<LineSegment2D>, PointLineAssociation) {
        let segments = self.process_segments(raw);
        let assoc = associate_points_to_lines(keypoints, &segments, self.params.matching.assoc_max_dist);
        let ambiguous = ambiguous_segments(&assoc, self.params.matching.min_shared_points);
        let mut kept = Vec::with_capacity(segments.len());
        let mut line_points = Vec::with_capacity(segments.len());
        for ((seg, pts), amb) in segments.into_iter().zip(assoc.line_points).zip(ambiguous) {
            if !amb {
                kept.push(seg);
                line_points.push(pts);
            }
        }
        (kept, PointLineAssociation { line_points, num_points: assoc.num_points })
    }

    /// Runs one frame through the backend.
    pub fn process(&mut self, output: FrontendOutput, matcher: &mut dyn FeatureMatcher) -> Result<FrameReport> {
        let features = &output.features;
        let t = Instant::now();
        let (segments, associations) = self.associated_segments(&features.keypoints, &features.segments);
        self.timer.add("line_processing", t.elapsed());

        let prior = self.prev_frame.as_ref().map_or_else(PoseSE3::identity, |f| f.pose);
        let mut frame = Frame {
            id: self.records.len() as u64,
            timestamp: features.timestamp,
            pose: prior,
            keypoints: features.keypoints.clone(),
            segments,
            associations,
            tracked_map_point_count: 0,
        };
        let mut report = FrameReport { frame_index: output.frame_index, timestamp: features.timestamp, ..Default::default() };

        let Some(last_kf) = self.last_kf else {
            // Bootstrap: the first frame anchors the map at the identity.
            report.keyframe = true;
            report.rule = Some("initial".into());
            let t = Instant::now();
            let (id, np, nl) = self.create_keyframe(frame.clone(), &output, &TrackResult::empty(prior))?;
            self.timer.add("mapping", t.elapsed());
            report.new_points = np;
            report.new_lines = nl;
            frame.tracked_map_point_count = np;
            self.finish_frame(frame, id, report.clone())?;
            return Ok(report);
        };

        let t = Instant::now();
        let track = self.track(&frame, &output, last_kf, matcher)?;
        self.timer.add("tracking", t.elapsed());
        frame.pose = track.pose;
        frame.tracked_map_point_count = track.inliers;
        report.tracking_failed = track.failed;
        report.point_matches = track.point_matches.len();
        report.point_inliers = track.inliers;
        report.line_matches = track.line_matches.len();
        report.line_inliers = track.line_inliers;

        let t = Instant::now();
        let last_frame = &self.map.keyframe(last_kf).expect("last keyframe exists").frame;
        let prev = self.prev_frame.as_ref().expect("set after the first frame");
        let decision = keyframe_decision(&frame, last_frame, prev, &self.params.keyframe);
        self.timer.add("keyframe_decision", t.elapsed());

        let mut reference = last_kf;
        if decision.is_keyframe && !track.failed {
            report.keyframe = true;
            report.rule = decision.rule.map(|r| r.label().to_string());
            let t = Instant::now();
            let (id, np, nl) = self.create_keyframe(frame.clone(), &output, &track)?;
            self.timer.add("mapping", t.elapsed());
            report.new_points = np;
            report.new_lines = nl;
            reference = id;

            let t = Instant::now();
            let window = covisibility_window(&self.map, id, self.params.keyframe.window);
            if let Ok(ba) = local_bundle_adjustment(&mut self.map, &window, &self.rig, self.params.use_lines, &self.params.optimizer) {
                report.ba_iterations = ba.solver.iterations;
                report.ba_final_cost = ba.solver.final_cost;
                self.ba_log.extend(ba.solver.log.iter().map(|l| (id, *l)));
            }
            prune_outlier_observations(&mut self.map, &window, &self.rig, &self.params.optimizer);
            self.timer.add("local_ba", t.elapsed());

            let t = Instant::now();
            self.map.cull_landmarks();
            self.timer.add("culling", t.elapsed());
            frame.pose = *self.map.keyframe(id).expect("just inserted").pose();
        }
        self.finish_frame(frame, reference, report.clone())?;
        Ok(report)
    }

    fn finish_frame(&mut self, frame: Frame, reference: KeyframeId, report: FrameReport) -> Result<()> {
        if self.params.audit_map {
            let t = Instant::now();
            self.map.audit()?;
            self.timer.add("audit", t.elapsed());
        }
        let ref_pose = *self.map.keyframe(reference).expect("reference keyframe exists").pose();
        self.records.push(FrameRecord {
            timestamp: frame.timestamp,
            reference,
            relative: frame.pose.compose(&ref_pose.inverse()),
        });
        if report.keyframe {
            self.last_kf = Some(reference);
        }
        self.reports.push(report);
        self.prev_frame = Some(frame);
        Ok(())
    }

    fn track(
        &mut self,
        frame: &Frame,
        output: &FrontendOutput,
        last_kf: KeyframeId,
        matcher: &mut dyn FeatureMatcher,
    ) -> Result<TrackResult> {
        let kf = self.map.keyframe(last_kf).expect("last keyframe exists");
        let np_kf = kf.frame.keypoints.len();
        let np = frame.keypoints.len();
        let point_matches: Vec<(usize, usize)> =
            matcher.match_points(&kf.source, output).into_iter().filter(|(i, j)| *i < np_kf && *j < np).collect();
        let line_matches = if self.params.use_lines {
            match_lines(&kf.frame.associations, &frame.associations, &point_matches, &self.params.matching)
        } else {
            Vec::new()
        };

        let mut point_corr = Vec::new();
        let mut point_ids = Vec::new();
        for (i, j) in &point_matches {
            if let Some(id) = kf.point_landmarks[*i] {
                point_corr.push((self.map.points()[&id].position, frame.keypoints[*j]));
                point_ids.push((*j, id));
            }
        }
        let mut line_corr: Vec<(PluckerLine, LineSegment2D)> = Vec::new();
        let mut line_ids = Vec::new();
        for m in &line_matches {
            if let Some(id) = kf.line_landmarks[m.line_k] {
                line_corr.push((self.map.lines()[&id].line, frame.segments[m.line_k1]));
                line_ids.push((m.line_k1, id));
            }
        }

        let prior = frame.pose;
        // The pose comes from points alone; matched lines are only gated
        // against it and linked at the next keyframe. Lines reach the pose
        // estimates through the local bundle adjustment.
        match initial_pose_estimate(&point_corr, &[], &prior, &self.rig.intrinsics, &self.params.optimizer) {
            Ok(mut est) => {
                est.line_inliers = line_corr.iter().map(|(l, s)| self.line_fits(l, &est.pose, s)).collect();
                let inliers = est.num_point_inliers();
                let point_links =
                    point_ids.iter().zip(&est.point_inliers).filter(|(_, ok)| **ok).map(|(l, _)| *l).collect();
                let line_links: Vec<(usize, MapLineId)> =
                    line_ids.iter().zip(&est.line_inliers).filter(|(_, ok)| **ok).map(|(l, _)| *l).collect();
                Ok(TrackResult {
                    pose: est.pose,
                    failed: false,
                    inliers,
                    point_matches,
                    line_inliers: line_links.len(),
                    line_matches,
                    point_links,
                    line_links,
                })
            }
            Err(_) => Ok(TrackResult { point_matches, line_matches, ..TrackResult::empty(prior).failed() }),
        }
    }

    fn point_fits(&self, x: &crate::geometry::Point3, pose: &PoseSE3, px: &Point2) -> bool {
        let gate = CHI2_2DOF_95 * self.params.optimizer.point_sigma.powi(2);
        residuals::point_residual(x, pose, &self.rig.intrinsics, px).is_ok_and(|r| r.value.norm_squared() <= gate)
    }

    fn line_fits(&self, line: &PluckerLine, pose: &PoseSE3, seg: &LineSegment2D) -> bool {
        let gate = CHI2_2DOF_95 * self.params.optimizer.line_sigma.powi(2);
        residuals::line_residual(line, pose, &self.rig.intrinsics, seg).is_ok_and(|r| r.value.norm_squared() <= gate)
            && line_in_front(line, seg, pose, &self.rig.intrinsics)
    }

    /// Inserts the keyframe, links tracked landmarks and creates new ones.
    /// Returns (id, new points, new lines).
    fn create_keyframe(&mut self, frame: Frame, output: &FrontendOutput, track: &TrackResult) -> Result<(KeyframeId, usize, usize)> {
        let features = &output.features;
        let k = self.rig.intrinsics;
        let pose = frame.pose;
        let right_pose = self.rig.right_pose(&pose);

        let mut right_kps: Vec<Option<Point2>> = vec![None; frame.keypoints.len()];
        let mut stereo_pairs = Vec::new();
        for &(l, r) in &features.stereo_matches {
            let (Some(pl), Some(pr)) = (features.keypoints.get(l), features.right_keypoints.get(r)) else { continue };
            if (pl.y - pr.y).abs() <= MAX_ROW_DISAGREEMENT && pl.x - pr.x >= MIN_DISPARITY && right_kps[l].is_none() {
                right_kps[l] = Some(*pr);
                stereo_pairs.push((l, r));
            }
        }

        let (right_segments, right_assoc) = self.associated_segments(&features.right_keypoints, &features.right_segments);
        let mut right_segs: Vec<Option<LineSegment2D>> = vec![None; frame.segments.len()];
        if self.params.use_lines && !right_segments.is_empty() {
            for m in match_lines(&frame.associations, &right_assoc, &stereo_pairs, &self.params.matching) {
                right_segs[m.line_k] = Some(right_segments[m.line_k1]);
            }
        }

        let id = self.map.next_keyframe_id();
        let previous = self.last_kf;
        let segments = frame.segments.clone();
        let keypoints = frame.keypoints.clone();
        let associations = frame.associations.clone();
        self.map.insert_keyframe(Keyframe::new(id, frame, right_kps.clone(), right_segs.clone(), output.clone()))?;

        for (j, mp) in &track.point_links {
            let _ = self.map.insert_point_observation(*mp, id, *j);
        }
        for (n, ml) in &track.line_links {
            let _ = self.map.insert_line_observation(*ml, id, *n);
        }

        // Current keypoint → last-keyframe keypoint.
        let to_prev: BTreeMap<usize, usize> = track.point_matches.iter().map(|(i, j)| (*j, *i)).collect();
        let mut new_points = 0;
        for (j, right) in right_kps.iter().enumerate() {
            let Some(right) = right else { continue };
            if self.map.keyframe(id).expect("inserted").point_landmarks[j].is_some() {
                continue;
            }
            let Ok(xc) = triangulate_point_stereo(&keypoints[j], right, &self.rig) else { continue };
            let xw = pose.inverse().transform_point(&xc);
            let mp = self.map.create_point(xw, id, j)?;
            new_points += 1;
            if let (Some(prev), Some(i)) = (previous, to_prev.get(&j)) {
                let pk = self.map.keyframe(prev).expect("previous keyframe exists");
                if pk.point_landmarks[*i].is_none() && self.point_fits(&xw, pk.pose(), &pk.frame.keypoints[*i]) {
                    self.map.insert_point_observation(mp, prev, *i)?;
                }
            }
        }

        let mut new_lines = 0;
        if self.params.use_lines {
            let to_prev_line: BTreeMap<usize, usize> = track.line_matches.iter().map(|m| (m.line_k1, m.line_k)).collect();
            for (n, seg) in segments.iter().enumerate() {
                let kf = self.map.keyframe(id).expect("inserted");
                if kf.line_landmarks[n].is_some() {
                    continue;
                }
                // Second views: the right image and the matched segment of the previous keyframe.
                let mut views: Vec<(PoseSE3, LineSegment2D, Option<usize>)> = Vec::new();
                if let Some(r) = right_segs[n] {
                    views.push((right_pose, r, None));
                }
                let prev_view = previous.zip(to_prev_line.get(&n).copied()).and_then(|(p, m)| {
                    let pk = self.map.keyframe(p).expect("previous keyframe exists");
                    pk.line_landmarks[m].is_none().then(|| (*pk.pose(), pk.frame.segments[m], m))
                });
                if let Some((pp, ps, m)) = prev_view {
                    views.push((pp, ps, Some(m)));
                }
                let plane = back_project_plane(seg, &pose, &k);
                views.sort_by(|a, b| {
                    let aa = plane_angle(&plane, &back_project_plane(&a.1, &a.0, &k));
                    let ab = plane_angle(&plane, &back_project_plane(&b.1, &b.0, &k));
                    ab.total_cmp(&aa)
                });
                let mut line = views.iter().find_map(|(vp, vs, _)| {
                    triangulate_line_two_planes(seg, &pose, vs, vp, &k, &self.params.triangulation).ok()
                });
                if line.is_none() {
                    let candidates: Vec<(MapPointId, f64)> = associations
                        .points_of(n)
                        .iter()
                        .filter_map(|p| {
                            kf.point_landmarks[*p].map(|mp| (mp, crate::geometry::point_line_distance(&keypoints[*p], seg)))
                        })
                        .collect();
                    if let Ok((a, b)) = select_two_closest(&candidates) {
                        let (xa, xb) = (self.map.points()[&a].position, self.map.points()[&b].position);
                        line = triangulate_line_from_points(&xa, &xb).ok().filter(|l| line_in_front(l, seg, &pose, &k));
                    }
                }
                let Some(line) = line.map(|l| l.normalized()) else { continue };
                if !self.line_fits(&line, &pose, seg) {
                    continue;
                }
                let fitting: Vec<&(PoseSE3, LineSegment2D, Option<usize>)> =
                    views.iter().filter(|(vp, vs, _)| self.line_fits(&line, vp, vs)).collect();
                let mut obs = vec![(pose, *seg)];
                obs.extend(fitting.iter().map(|(vp, vs, _)| (*vp, *vs)));
                let Some(endpoints) = trim_endpoints(&line, &obs, &k) else { continue };
                let ml = self.map.create_line(line, endpoints, id, n)?;
                new_lines += 1;
                if let (Some(prev), Some((_, _, Some(m)))) = (previous, fitting.iter().find(|v| v.2.is_some())) {
                    self.map.insert_line_observation(ml, prev, *m)?;
                }
            }
        }
        Ok((id, new_points, new_lines))
    }
}

impl TrackResult {
    fn empty(pose: PoseSE3) -> Self {
        Self {
            pose,
            failed: false,
            inliers: 0,
            point_matches: Vec::new(),
            line_matches: Vec::new(),
            point_links: Vec::new(),
            line_links: Vec::new(),
            line_inliers: 0,
        }
    }

    fn failed(mut self) -> Self {
        self.failed = true;
        self
    }
}

/// Frames supplied by an external detector: one [`StereoFeatures`] JSON
/// object per line, in time order.
pub struct FeatureFileSource;

impl FeatureFileSource {
    pub fn read(path: &Path) -> Result<Vec<FrontendOutput>> {
        let text = std::fs::read_to_string(path)?;
        let mut out = Vec::new();
        for (i, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
            let features: StereoFeatures =
                serde_json::from_str(line).map_err(|e| Error::Parse(format!("{}: record {}: {e}", path.display(), i + 1)))?;
            out.push(FrontendOutput { frame_index: i, features, truth: None });
        }
        Ok(out)
    }
}

enum Source {
    Synthetic(SyntheticScene, NoiseModel),
    Frames(Vec<FrontendOutput>),
}

impl Source {
    fn len(&self) -> usize {
        match self {
            Source::Synthetic(s, _) => s.trajectory.len(),
            Source::Frames(f) => f.len(),
        }
    }

    fn frame(&self, i: usize) -> Result<FrontendOutput> {
        match self {
            Source::Synthetic(s, noise) => render_frame(s, i, noise),
            Source::Frames(f) => Ok(f[i].clone()),
        }
    }
}

pub struct PipelineOutput {
    pub trajectory: Trajectory,
    pub ground_truth: Option<Trajectory>,
    pub ate: Option<AteResult>,
    pub map: Map,
    pub reports: Vec<FrameReport>,
    pub ba_log: Vec<(KeyframeId, IterationLog)>,
    /// Backend stages plus `queue_wait`.
    pub timer: StageTimer,
    /// Frontend time spent in the producer thread.
    pub frontend_time: Duration,
    /// Backend processing time per frame.
    pub frame_times: Vec<Duration>,
    pub backend_wall: Duration,
}

impl PipelineOutput {
    pub fn keyframe_count(&self) -> usize {
        self.map.keyframes().len()
    }

    pub fn metrics_csv(&self) -> String {
        let mut s = String::from(METRICS_HEADER);
        s.push('\n');
        for r in &self.reports {
            s.push_str(&r.csv_row());
            s.push('\n');
        }
        s
    }

    pub fn summary_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Summary {
            frames: usize,
            keyframes: usize,
            tracking_failures: usize,
            map_points: usize,
            map_lines: usize,
            ate_rmse_m: Option<f64>,
            ate_pairs: Option<usize>,
        }
        let s = Summary {
            frames: self.reports.len(),
            keyframes: self.keyframe_count(),
            tracking_failures: self.reports.iter().filter(|r| r.tracking_failed).count(),
            map_points: self.map.points().len(),
            map_lines: self.map.lines().len(),
            ate_rmse_m: self.ate.as_ref().map(|a| a.rmse),
            ate_pairs: self.ate.as_ref().map(|a| a.errors.len()),
        };
        Ok(serde_json::to_string_pretty(&s)?)
    }

    pub fn ba_cost_csv(&self) -> String {
        let mut s = String::from("keyframe,iteration,cost,lambda,accepted\n");
        for (kf, l) in &self.ba_log {
            writeln!(s, "{},{},{:.12e},{:.3e},{}", kf.0, l.iteration, l.cost, l.lambda, l.accepted as u8)
                .expect("writing to a String cannot fail");
        }
        s
    }

    /// Wall-clock stage breakdown; not deterministic.
    pub fn timing_csv(&self) -> String {
        let mut s = String::from("stage,total_ms,calls,mean_ms\n");
        let row = |s: &mut String, name: &str, d: Duration, n: usize| {
            let ms = d.as_secs_f64() * 1e3;
            writeln!(s, "{name},{ms:.3},{n},{:.4}", if n > 0 { ms / n as f64 } else { 0.0 }).expect("String write");
        };
        for (name, (d, n)) in self.timer.stages() {
            row(&mut s, name, *d, *n);
        }
        row(&mut s, "frontend_thread", self.frontend_time, self.reports.len());
        row(&mut s, "backend_wall", self.backend_wall, 1);
        let covered = self.timer.total().as_secs_f64() / self.backend_wall.as_secs_f64().max(1e-12);
        writeln!(s, "coverage,{:.4},,", covered).expect("String write");
        s
    }

    /// Writes every output file into `dir` and returns their paths.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut files = vec![
            ("trajectory.tum", self.trajectory.to_tum()),
            ("map.json", serde_json::to_string_pretty(&self.map.dump())?),
            ("metrics.csv", self.metrics_csv()),
            ("summary.json", self.summary_json()?),
            ("ba_cost.csv", self.ba_cost_csv()),
            ("timing.csv", self.timing_csv()),
        ];
        if let Some(gt) = &self.ground_truth {
            files.push(("ground_truth.tum", gt.to_tum()));
        }
        if let Some(ate) = &self.ate {
            files.push(("ate_errors.csv", errors_csv(&ate.errors)));
            files.push(("ate_cdf.csv", cdf_csv(&ate.errors)));
        }
        let mut written = Vec::new();
        for (name, body) in files {
            let p = dir.join(name);
            std::fs::write(&p, body)?;
            written.push(p);
        }
        Ok(written)
    }
}

/// Loads or generates the scene described by `cfg`.
pub fn load_scene(cfg: &RunConfig) -> Result<SyntheticScene> {
    match &cfg.source {
        SourceConfig::Synthetic { scene_file: Some(p) } => SyntheticScene::from_json(&std::fs::read_to_string(p)?),
        _ => generate_scene(&cfg.scene, cfg.seed),
    }
}

/// Runs the whole pipeline described by `cfg`.
pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let (source, rig, ground_truth, mut matcher): (Source, StereoRig, Option<Trajectory>, Box<dyn FeatureMatcher>) =
        match &cfg.source {
            SourceConfig::Synthetic { .. } => {
                let scene = load_scene(cfg)?;
                let gt = Trajectory::from_records(scene.trajectory.iter().map(|t| (t.timestamp, t.pose)).collect())?;
                let rig = scene.rig;
                let matcher = OracleMatcher { corruption: cfg.noise.match_corruption, seed: cfg.seed };
                (Source::Synthetic(scene, cfg.noise), rig, Some(gt), Box::new(matcher))
            }
            SourceConfig::Features { path, ground_truth } => {
                let frames = FeatureFileSource::read(path)?;
                let gt = match ground_truth {
                    Some(p) => Some(Trajectory::from_tum(&std::fs::read_to_string(p)?)?),
                    None => None,
                };
                (Source::Frames(frames), cfg.scene.rig(), gt, Box::new(TrackIdMatcher))
            }
        };
    let mut backend = Backend::new(rig, BackendParams::from_config(cfg))?;
    let n = source.len();
    let (tx, rx) = sync_channel::<Result<FrontendOutput>>(cfg.queue_capacity);
    let mut frame_times = Vec::with_capacity(n);

    let (frontend_time, backend_wall) = std::thread::scope(|scope| -> Result<(Duration, Duration)> {
        let source = &source;
        let producer = scope.spawn(move || {
            let mut spent = Duration::ZERO;
            for i in 0..n {
                let t = Instant::now();
                let frame = source.frame(i);
                spent += t.elapsed();
                let stop = frame.is_err();
                if tx.send(frame).is_err() || stop {
                    break;
                }
            }
            spent
        });
        let start = Instant::now();
        let mut result = Ok(());
        loop {
            let t = Instant::now();
            let Ok(frame) = rx.recv() else { break };
            backend.timer_mut().add("queue_wait", t.elapsed());
            let t = Instant::now();
            match frame.and_then(|f| backend.process(f, matcher.as_mut())) {
                Ok(_) => frame_times.push(t.elapsed()),
                Err(e) => {
                    result = Err(e);
                    break;
                }
            }
        }
        // Dropping the receiver unblocks the producer if we stopped early.
        drop(rx);
        let wall = start.elapsed();
        let spent = producer.join().map_err(|_| Error::InvalidParameter("frontend thread panicked".into()))?;
        result.map(|_| (spent, wall))
    })?;

    let trajectory = backend.trajectory()?;
    let ate = ground_truth.as_ref().and_then(|gt| evaluate_ate(&trajectory, gt).ok());
    Ok(PipelineOutput {
        trajectory,
        ground_truth,
        ate,
        reports: backend.reports.clone(),
        ba_log: std::mem::take(&mut backend.ba_log),
        timer: backend.timer.clone(),
        map: backend.map,
        frontend_time,
        frame_times,
        backend_wall,
    })
}
