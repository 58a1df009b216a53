//! Deterministic synthetic stereo scenes and a feature renderer.
//!
//! A scene is a cloud of 3D points, a set of wall-aligned 3D segments (with
//! extra points placed on them) and a smooth camera path. Rendering projects
//! everything into both cameras and perturbs the result with the
//! [`NoiseModel`]: pixel noise, per-feature dropout, segment splitting and,
//! at matching time, rewired point matches.

use nalgebra::{Rotation3, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::{match_by_identity, FeatureMatcher, FrontendOutput, GroundTruthChannel, StereoFeatures};
use crate::geometry::{segment_from_endpoints, LineSegment2D, PinholeIntrinsics, Point2, Point3, PoseSE3, StereoRig};

/// Nearest depth at which geometry is still rendered.
const NEAR_PLANE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajectoryPreset {
    /// Arc around the landmark box, always looking at its center.
    Circle,
    /// Forward motion down a corridor with gentle sway and yaw.
    Corridor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub preset: TrajectoryPreset,
    pub num_frames: usize,
    /// Frames per second.
    pub frame_rate: f64,
    /// Free 3D points, not counting the ones placed on lines.
    pub num_points: usize,
    pub num_lines: usize,
    pub points_per_line: usize,
    pub camera: PinholeIntrinsics,
    pub baseline: f64,
    /// Circle radius in meters.
    pub radius: f64,
    /// Angle swept by the circle, degrees.
    pub arc_degrees: f64,
    /// Half extent of the landmark box around the origin (circle preset).
    pub box_half_extent: [f64; 3],
    /// Distance travelled along +Z (corridor preset).
    pub corridor_length: f64,
    /// Half width and half height of the corridor.
    pub corridor_half_size: [f64; 2],
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            preset: TrajectoryPreset::Circle,
            num_frames: 100,
            frame_rate: 20.0,
            num_points: 200,
            num_lines: 40,
            points_per_line: 5,
            camera: PinholeIntrinsics { fx: 400.0, fy: 400.0, cx: 320.0, cy: 240.0, width: 640, height: 480 },
            baseline: 0.12,
            radius: 3.0,
            arc_degrees: 120.0,
            box_half_extent: [1.0, 0.6, 1.0],
            corridor_length: 6.0,
            corridor_half_size: [1.5, 1.0],
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(format!("scene: {m}")));
        if self.num_frames == 0 {
            return bad("num_frames must be positive");
        }
        if !(self.frame_rate > 0.0) {
            return bad("frame_rate must be positive");
        }
        self.camera.validate()?;
        StereoRig::new(self.camera, self.baseline)?;
        if !(self.radius > 0.0) || !(self.arc_degrees >= 0.0) || !(self.corridor_length > 0.0) {
            return bad("trajectory extents must be positive");
        }
        if self.box_half_extent.iter().chain(&self.corridor_half_size).any(|v| !(*v > 0.0)) {
            return bad("box extents must be positive");
        }
        Ok(())
    }

    pub fn rig(&self) -> StereoRig {
        StereoRig { intrinsics: self.camera, baseline: self.baseline }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    pub pixel_sigma: f64,
    pub endpoint_sigma: f64,
    pub detection_dropout: f64,
    pub segment_split_prob: f64,
    pub match_corruption: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self::noiseless()
    }
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        Self { pixel_sigma: 0.0, endpoint_sigma: 0.0, detection_dropout: 0.0, segment_split_prob: 0.0, match_corruption: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [self.detection_dropout, self.segment_split_prob, self.match_corruption];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidParameter("noise probabilities must lie in [0, 1]".into()));
        }
        if !(self.pixel_sigma >= 0.0) || !(self.endpoint_sigma >= 0.0) {
            return Err(Error::InvalidParameter("noise sigmas must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedPose {
    pub timestamp: f64,
    /// World-to-camera transform of the left camera.
    pub pose: PoseSE3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub config: SceneConfig,
    pub rng_seed: u64,
    pub landmarks: Vec<Point3>,
    /// For each landmark, the line it was placed on.
    pub point_line: Vec<Option<usize>>,
    pub gt_lines: Vec<(Point3, Point3)>,
    pub trajectory: Vec<TimedPose>,
    pub rig: StereoRig,
}

impl SyntheticScene {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let scene: Self = serde_json::from_str(text)?;
        scene.config.validate()?;
        if scene.point_line.len() != scene.landmarks.len() {
            return Err(Error::Parse("point_line length differs from landmarks".into()));
        }
        if scene.gt_lines.iter().any(|(a, b)| a == b) {
            return Err(Error::Parse("degenerate ground-truth line".into()));
        }
        Ok(scene)
    }
}

fn look_at(center: Point3, target: Point3) -> PoseSE3 {
    let z = (target - center).normalize();
    let x = z.cross(&Vector3::y()).normalize();
    let y = z.cross(&x);
    let orientation = Rotation3::from_matrix_unchecked(nalgebra::Matrix3::from_columns(&[x, y, z]));
    PoseSE3::from_camera_center(orientation, center)
}

fn trajectory(config: &SceneConfig) -> Vec<TimedPose> {
    let n = config.num_frames;
    (0..n)
        .map(|i| {
            let s = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
            let pose = match config.preset {
                TrajectoryPreset::Circle => {
                    let theta = (s - 0.5) * config.arc_degrees.to_radians();
                    let c = Point3::new(config.radius * theta.sin(), 0.2 * (2.0 * theta).sin(), -config.radius * theta.cos());
                    look_at(c, Point3::origin())
                }
                TrajectoryPreset::Corridor => {
                    let tau = std::f64::consts::TAU * s;
                    let c = Point3::new(0.3 * tau.sin(), 0.1 * (2.0 * tau).sin(), config.corridor_length * s);
                    let yaw = 10f64.to_radians() * (1.5 * tau).sin();
                    let forward = Vector3::new(yaw.sin(), 0.0, yaw.cos());
                    look_at(c, c + forward)
                }
            };
            TimedPose { timestamp: i as f64 / config.frame_rate, pose }
        })
        .collect()
}

/// Axis-aligned box holding the landmarks: (min, max).
fn landmark_box(config: &SceneConfig) -> (Vector3<f64>, Vector3<f64>) {
    match config.preset {
        TrajectoryPreset::Circle => {
            let h = Vector3::from(config.box_half_extent);
            (-h, h)
        }
        TrajectoryPreset::Corridor => {
            let [w, h] = config.corridor_half_size;
            (Vector3::new(-w, -h, -1.0), Vector3::new(w, h, config.corridor_length + 8.0))
        }
    }
}

/// A random segment lying on a face of the box, with a random direction
/// inside that face.
fn wall_segment(rng: &mut ChaCha8Rng, lo: &Vector3<f64>, hi: &Vector3<f64>, preset: TrajectoryPreset) -> (Point3, Point3) {
    loop {
        // Corridor walls exclude the near end cap (behind the start).
        let face = match preset {
            TrajectoryPreset::Circle => rng.random_range(0..6),
            TrajectoryPreset::Corridor => [0, 1, 2, 3, 5][rng.random_range(0..5)],
        };
        let fixed_axis = [0, 0, 1, 1, 2, 2][face];
        let (ua, va) = match fixed_axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let mut mid = Vector3::zeros();
        mid[fixed_axis] = if face % 2 == 0 { lo[fixed_axis] } else { hi[fixed_axis] };
        mid[ua] = rng.random_range(lo[ua]..hi[ua]);
        mid[va] = rng.random_range(lo[va]..hi[va]);
        let phi = rng.random_range(0.0..std::f64::consts::PI);
        let mut dir = Vector3::zeros();
        dir[ua] = phi.cos();
        dir[va] = phi.sin();
        let half = 0.5 * rng.random_range(0.6..1.2f64);
        let a = mid - dir * half;
        let b = mid + dir * half;
        let inside = |p: &Vector3<f64>| (0..3).all(|i| p[i] >= lo[i] - 1e-12 && p[i] <= hi[i] + 1e-12);
        if inside(&a) && inside(&b) {
            return (Point3::from(a), Point3::from(b));
        }
    }
}

/// Builds a scene; identical `(config, seed)` pairs give identical scenes.
pub fn generate_scene(config: &SceneConfig, seed: u64) -> Result<SyntheticScene> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = landmark_box(config);
    let mut landmarks = Vec::new();
    let mut point_line = Vec::new();
    for _ in 0..config.num_points {
        landmarks.push(Point3::new(
            rng.random_range(lo.x..hi.x),
            rng.random_range(lo.y..hi.y),
            rng.random_range(lo.z..hi.z),
        ));
        point_line.push(None);
    }
    let mut gt_lines = Vec::new();
    for li in 0..config.num_lines {
        let (a, b) = wall_segment(&mut rng, &lo, &hi, config.preset);
        for _ in 0..config.points_per_line {
            let t = rng.random_range(0.05..0.95);
            landmarks.push(a + (b - a) * t);
            point_line.push(Some(li));
        }
        gt_lines.push((a, b));
    }
    Ok(SyntheticScene {
        config: config.clone(),
        rng_seed: seed,
        landmarks,
        point_line,
        gt_lines,
        trajectory: trajectory(config),
        rig: config.rig(),
    })
}

fn frame_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Liang-Barsky clip of the segment `p`→`q` against the image rectangle.
fn clip_to_image(p: Point2, q: Point2, k: &PinholeIntrinsics) -> Option<(Point2, Point2)> {
    let d = q - p;
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    let checks = [(-d.x, p.x), (d.x, k.width as f64 - p.x), (-d.y, p.y), (d.y, k.height as f64 - p.y)];
    for (pk, qk) in checks {
        if pk == 0.0 {
            if qk < 0.0 {
                return None;
            }
        } else {
            let r = qk / pk;
            if pk < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    (t0 < t1).then(|| (p + d * t0, p + d * t1))
}

/// Projects a 3D segment into a camera, clipping against the near plane and
/// the image border.
fn render_segment(a: &Point3, b: &Point3, pose: &PoseSE3, k: &PinholeIntrinsics) -> Option<(Point2, Point2)> {
    let mut ac = pose.transform_point(a);
    let mut bc = pose.transform_point(b);
    if ac.z < NEAR_PLANE && bc.z < NEAR_PLANE {
        return None;
    }
    if ac.z < NEAR_PLANE || bc.z < NEAR_PLANE {
        let t = (NEAR_PLANE - ac.z) / (bc.z - ac.z);
        let cut = ac + (bc - ac) * t;
        if ac.z < NEAR_PLANE {
            ac = cut;
        } else {
            bc = cut;
        }
    }
    let (p, q) = clip_to_image(k.project(&ac).ok()?, k.project(&bc).ok()?, k)?;
    ((q - p).norm() > 1.0).then_some((p, q))
}

fn clamp_to_image(p: Point2, k: &PinholeIntrinsics) -> Point2 {
    Point2::new(p.x.clamp(0.0, k.width as f64), p.y.clamp(0.0, k.height as f64))
}

fn gaussian(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma > 0.0 {
        Normal::new(0.0, sigma).expect("sigma validated").sample(rng)
    } else {
        0.0
    }
}

struct CameraView {
    keypoints: Vec<(Point2, usize)>,
    segments: Vec<(LineSegment2D, usize)>,
}

fn render_camera(scene: &SyntheticScene, pose: &PoseSE3, noise: &NoiseModel, rng: &mut ChaCha8Rng) -> CameraView {
    let k = &scene.rig.intrinsics;
    let mut keypoints = Vec::new();
    for (id, x) in scene.landmarks.iter().enumerate() {
        let xc = pose.transform_point(x);
        let dropped = rng.random_bool(noise.detection_dropout);
        let nx = gaussian(rng, noise.pixel_sigma);
        let ny = gaussian(rng, noise.pixel_sigma);
        if dropped || xc.z < NEAR_PLANE {
            continue;
        }
        let Ok(p) = k.project(&xc) else { continue };
        let p = Point2::new(p.x + nx, p.y + ny);
        if k.contains(&p) {
            keypoints.push((p, id));
        }
    }
    let mut segments = Vec::new();
    for (id, (a, b)) in scene.gt_lines.iter().enumerate() {
        let dropped = rng.random_bool(noise.detection_dropout);
        let noise_xy: [f64; 4] = std::array::from_fn(|_| gaussian(rng, noise.endpoint_sigma));
        let split = rng.random_bool(noise.segment_split_prob);
        let split_at = rng.random_range(0.35..0.65);
        let gap = rng.random_range(2.0..6.0);
        if dropped {
            continue;
        }
        let Some((p, q)) = render_segment(a, b, pose, k) else { continue };
        let p = clamp_to_image(Point2::new(p.x + noise_xy[0], p.y + noise_xy[1]), k);
        let q = clamp_to_image(Point2::new(q.x + noise_xy[2], q.y + noise_xy[3]), k);
        let Ok(full) = segment_from_endpoints(p, q) else { continue };
        let len = full.length();
        if split && len > gap + 2.0 {
            let dir = full.direction();
            let cut = split_at * len;
            let m1 = p + dir * (cut - gap / 2.0);
            let m2 = p + dir * (cut + gap / 2.0);
            for (s, e) in [(p, m1), (m2, q)] {
                if let Ok(seg) = segment_from_endpoints(s, e) {
                    segments.push((seg, id));
                }
            }
        } else {
            segments.push((full, id));
        }
    }
    keypoints.shuffle(rng);
    segments.shuffle(rng);
    CameraView { keypoints, segments }
}

/// Renders stereo features for one frame. Noise draws depend only on the
/// scene seed and the frame index.
pub fn render_frame(scene: &SyntheticScene, frame_index: usize, noise: &NoiseModel) -> Result<FrontendOutput> {
    noise.validate()?;
    let tp = scene
        .trajectory
        .get(frame_index)
        .ok_or_else(|| Error::InvalidParameter(format!("frame {frame_index} out of range")))?;
    let mut rng = frame_rng(scene.rng_seed, 1 + frame_index as u64);
    let left = render_camera(scene, &tp.pose, noise, &mut rng);
    let right = render_camera(scene, &scene.rig.right_pose(&tp.pose), noise, &mut rng);

    let left_ids: Vec<usize> = left.keypoints.iter().map(|k| k.1).collect();
    let right_ids: Vec<usize> = right.keypoints.iter().map(|k| k.1).collect();
    let stereo_matches = match_by_identity(&left_ids, &right_ids);
    Ok(FrontendOutput {
        frame_index,
        features: StereoFeatures {
            timestamp: tp.timestamp,
            keypoints: left.keypoints.iter().map(|k| k.0).collect(),
            right_keypoints: right.keypoints.iter().map(|k| k.0).collect(),
            stereo_matches,
            segments: left.segments.iter().map(|s| s.0).collect(),
            right_segments: right.segments.iter().map(|s| s.0).collect(),
            track_ids: None,
        },
        truth: Some(GroundTruthChannel {
            keypoint_landmarks: left_ids,
            right_keypoint_landmarks: right_ids,
            segment_lines: left.segments.iter().map(|s| s.1).collect(),
            right_segment_lines: right.segments.iter().map(|s| s.1).collect(),
        }),
    })
}

/// Matches left keypoints of two frames by hidden identity, then rewires a
/// `corruption` fraction of the pairs to wrong partners. The result stays
/// injective.
pub fn oracle_match(a: &FrontendOutput, b: &FrontendOutput, corruption: f64, seed: u64) -> Vec<(usize, usize)> {
    let (Some(ta), Some(tb)) = (&a.truth, &b.truth) else { return Vec::new() };
    let mut matches = match_by_identity(&ta.keypoint_landmarks, &tb.keypoint_landmarks);
    if corruption <= 0.0 || matches.is_empty() {
        return matches;
    }
    let stream = ((a.frame_index as u64) << 32) ^ (b.frame_index as u64) ^ 0x5eed_0000_0000_0000;
    let mut rng = frame_rng(seed, stream);
    let picked: Vec<usize> = (0..matches.len()).filter(|_| rng.random_bool(corruption.min(1.0))).collect();
    match picked.len() {
        0 => {}
        1 => {
            let used: std::collections::BTreeSet<usize> = matches.iter().map(|m| m.1).collect();
            let free: Vec<usize> = (0..tb.keypoint_landmarks.len()).filter(|j| !used.contains(j)).collect();
            let i = picked[0];
            if free.is_empty() {
                matches.remove(i);
            } else {
                matches[i].1 = free[rng.random_range(0..free.len())];
            }
        }
        n => {
            // Sattolo's algorithm: a single n-cycle, so nobody keeps its partner.
            let targets: Vec<usize> = picked.iter().map(|&i| matches[i].1).collect();
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                let j = rng.random_range(0..i);
                perm.swap(i, j);
            }
            for (slot, &i) in picked.iter().enumerate() {
                matches[i].1 = targets[perm[slot]];
            }
        }
    }
    matches
}

/// [`FeatureMatcher`] backed by [`oracle_match`].
#[derive(Debug, Clone, Copy)]
pub struct OracleMatcher {
    pub corruption: f64,
    pub seed: u64,
}

impl FeatureMatcher for OracleMatcher {
    fn match_points(&mut self, a: &FrontendOutput, b: &FrontendOutput) -> Vec<(usize, usize)> {
        oracle_match(a, b, self.corruption, self.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::line2d::{merge_segments_tracked, MergeParams};

    fn scene() -> SyntheticScene {
        generate_scene(&SceneConfig::default(), 7).unwrap()
    }

    #[test]
    fn generation_is_deterministic() {
        let a = scene().to_json().unwrap();
        let b = scene().to_json().unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_scene(&SceneConfig::default(), 8).unwrap().to_json().unwrap());
        let back = SyntheticScene::from_json(&a).unwrap();
        assert_eq!(back.to_json().unwrap(), a);
    }

    #[test]
    fn zero_lines_gives_no_gt_lines() {
        let cfg = SceneConfig { num_lines: 0, ..Default::default() };
        assert!(generate_scene(&cfg, 1).unwrap().gt_lines.is_empty());
    }

    #[test]
    fn corridor_looks_down_the_corridor() {
        let cfg = SceneConfig { preset: TrajectoryPreset::Corridor, ..Default::default() };
        let s = generate_scene(&cfg, 3).unwrap();
        for tp in &s.trajectory {
            let forward = tp.pose.rotation().inverse() * Vector3::z();
            assert!(forward.angle(&Vector3::z()) < 30f64.to_radians());
        }
    }

    #[test]
    fn noiseless_rendering_is_exact_and_visible() {
        let s = scene();
        let out = render_frame(&s, 10, &NoiseModel::noiseless()).unwrap();
        let truth = out.truth.as_ref().unwrap();
        let pose = s.trajectory[10].pose;
        let k = s.rig.intrinsics;
        assert!(!out.features.keypoints.is_empty());
        for (p, id) in out.features.keypoints.iter().zip(&truth.keypoint_landmarks) {
            let exact = k.project(&pose.transform_point(&s.landmarks[*id])).unwrap();
            assert!((p - exact).norm() < 1e-9);
            assert!(k.contains(p));
        }
        let right = s.rig.right_pose(&pose);
        for (p, id) in out.features.right_keypoints.iter().zip(&truth.right_keypoint_landmarks) {
            assert!((p - k.project(&right.transform_point(&s.landmarks[*id])).unwrap()).norm() < 1e-9);
        }
        for (seg, id) in out.features.segments.iter().zip(&truth.segment_lines) {
            let (a, b) = s.gt_lines[*id];
            let pa = pose.transform_point(&a);
            let pb = pose.transform_point(&b);
            let line = crate::geometry::plucker_from_two_points(&pa, &pb).unwrap();
            let l = crate::geometry::project_line(&k, &line).unwrap();
            for e in [seg.p1(), seg.p2()] {
                assert!((l.x * e.x + l.y * e.y + l.z).abs() < 1e-9);
                assert!(k.contains(&e));
            }
        }
    }

    #[test]
    fn full_dropout_is_empty() {
        let noise = NoiseModel { detection_dropout: 1.0, ..NoiseModel::noiseless() };
        let out = render_frame(&scene(), 0, &noise).unwrap();
        assert!(out.features.keypoints.is_empty() && out.features.segments.is_empty());
        assert!(out.features.right_keypoints.is_empty() && out.features.stereo_matches.is_empty());
    }

    #[test]
    fn split_segments_merge_back() {
        let s = scene();
        let noise = NoiseModel { segment_split_prob: 1.0, ..NoiseModel::noiseless() };
        let out = render_frame(&s, 5, &noise).unwrap();
        let truth = out.truth.unwrap();
        let mut pieces = std::collections::BTreeMap::<usize, Vec<usize>>::new();
        for (i, id) in truth.segment_lines.iter().enumerate() {
            pieces.entry(*id).or_default().push(i);
        }
        assert!(pieces.values().all(|p| p.len() >= 2));
        let merged = merge_segments_tracked(&out.features.segments, &MergeParams::default());
        let restored = pieces
            .values()
            .filter(|p| merged.iter().filter(|m| p.iter().any(|i| m.sources.contains(i))).count() == 1)
            .count();
        assert_eq!(restored, pieces.len());
    }

    #[test]
    fn oracle_matching_corruption() {
        let s = scene();
        let a = render_frame(&s, 0, &NoiseModel::noiseless()).unwrap();
        let b = render_frame(&s, 3, &NoiseModel::noiseless()).unwrap();
        let ta = a.truth.as_ref().unwrap();
        let tb = b.truth.as_ref().unwrap();
        let correct = |m: &[(usize, usize)]| m.iter().filter(|(i, j)| ta.keypoint_landmarks[*i] == tb.keypoint_landmarks[*j]).count();
        let clean = oracle_match(&a, &b, 0.0, 1);
        assert_eq!(correct(&clean), clean.len());
        let all_bad = oracle_match(&a, &b, 1.0, 1);
        assert_eq!(correct(&all_bad), 0);
        let set: std::collections::BTreeSet<usize> = all_bad.iter().map(|m| m.1).collect();
        assert_eq!(set.len(), all_bad.len());
    }
}
