//! Frames, keyframes, landmarks, the co-visibility graph and keyframe selection.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::FrontendOutput;
use crate::geometry::{LineSegment2D, PluckerLine, Point2, Point3, PoseSE3};
use crate::line2d::PointLineAssociation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct KeyframeId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MapPointId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MapLineId(pub u64);

impl fmt::Display for KeyframeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "kf{}", self.0)
    }
}

impl fmt::Display for MapPointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "pt{}", self.0)
    }
}

impl fmt::Display for MapLineId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ln{}", self.0)
    }
}

/// Per-image bundle after line post-processing.
#[derive(Debug, Clone, Default)]
pub struct Frame {
    pub id: u64,
    pub timestamp: f64,
    pub pose: PoseSE3,
    pub keypoints: Vec<Point2>,
    /// Merged and length-filtered segments.
    pub segments: Vec<LineSegment2D>,
    pub associations: PointLineAssociation,
    pub tracked_map_point_count: usize,
}

#[derive(Debug, Clone)]
pub struct Keyframe {
    pub id: KeyframeId,
    pub frame: Frame,
    /// Right-image observation of each left keypoint, if stereo-matched.
    pub right_keypoints: Vec<Option<Point2>>,
    /// Right-image segment matched to each left segment.
    pub right_segments: Vec<Option<LineSegment2D>>,
    pub point_landmarks: Vec<Option<MapPointId>>,
    pub line_landmarks: Vec<Option<MapLineId>>,
    /// Raw frontend bundle kept for matching later frames against.
    pub source: FrontendOutput,
}

impl Keyframe {
    pub fn new(
        id: KeyframeId,
        frame: Frame,
        right_keypoints: Vec<Option<Point2>>,
        right_segments: Vec<Option<LineSegment2D>>,
        source: FrontendOutput,
    ) -> Self {
        let np = frame.keypoints.len();
        let nl = frame.segments.len();
        Self {
            id,
            frame,
            right_keypoints,
            right_segments,
            point_landmarks: vec![None; np],
            line_landmarks: vec![None; nl],
            source,
        }
    }

    pub fn pose(&self) -> &PoseSE3 {
        &self.frame.pose
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapPoint {
    pub position: Point3,
    pub observations: Vec<(KeyframeId, usize)>,
    /// Keyframes inserted into the map before this landmark was created.
    pub born_at: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapLine {
    pub line: PluckerLine,
    pub endpoints: (Point3, Point3),
    pub observations: Vec<(KeyframeId, usize)>,
    pub born_at: usize,
}

/// Keyframes with fewer distinct observers than this are culled...
pub const CULL_MIN_KEYFRAMES: usize = 2;
/// ...once this many keyframes were inserted after their creation.
pub const CULL_AFTER_KEYFRAMES: usize = 3;

#[derive(Debug, Clone, Default)]
pub struct Map {
    keyframes: BTreeMap<KeyframeId, Keyframe>,
    points: BTreeMap<MapPointId, MapPoint>,
    lines: BTreeMap<MapLineId, MapLine>,
    next_point: u64,
    next_line: u64,
    keyframes_inserted: usize,
}

impl Map {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn keyframes(&self) -> &BTreeMap<KeyframeId, Keyframe> {
        &self.keyframes
    }

    pub fn points(&self) -> &BTreeMap<MapPointId, MapPoint> {
        &self.points
    }

    pub fn lines(&self) -> &BTreeMap<MapLineId, MapLine> {
        &self.lines
    }

    pub fn keyframe(&self, id: KeyframeId) -> Option<&Keyframe> {
        self.keyframes.get(&id)
    }

    pub fn keyframe_mut(&mut self, id: KeyframeId) -> Option<&mut Keyframe> {
        self.keyframes.get_mut(&id)
    }

    pub fn point_mut(&mut self, id: MapPointId) -> Option<&mut MapPoint> {
        self.points.get_mut(&id)
    }

    pub fn line_mut(&mut self, id: MapLineId) -> Option<&mut MapLine> {
        self.lines.get_mut(&id)
    }

    pub fn latest_keyframe(&self) -> Option<&Keyframe> {
        self.keyframes.values().next_back()
    }

    pub fn next_keyframe_id(&self) -> KeyframeId {
        KeyframeId(self.keyframes.keys().next_back().map_or(0, |k| k.0 + 1))
    }

    pub fn insert_keyframe(&mut self, kf: Keyframe) -> Result<KeyframeId> {
        let id = kf.id;
        if self.keyframes.contains_key(&id) {
            return Err(Error::IdCollision(id.to_string()));
        }
        if kf.point_landmarks.iter().any(Option::is_some) || kf.line_landmarks.iter().any(Option::is_some) {
            return Err(Error::InvalidParameter("new keyframes must not carry landmark links".into()));
        }
        self.keyframes.insert(id, kf);
        self.keyframes_inserted += 1;
        Ok(id)
    }

    fn check_point_slot(&self, kf: KeyframeId, index: usize) -> Result<()> {
        let k = self.keyframes.get(&kf).ok_or_else(|| Error::UnknownId(kf.to_string()))?;
        match k.point_landmarks.get(index) {
            None => Err(Error::InvalidParameter(format!("{kf} has no keypoint {index}"))),
            Some(Some(existing)) => Err(Error::IdCollision(format!("{kf} keypoint {index} already linked to {existing}"))),
            Some(None) => Ok(()),
        }
    }

    fn check_line_slot(&self, kf: KeyframeId, index: usize) -> Result<()> {
        let k = self.keyframes.get(&kf).ok_or_else(|| Error::UnknownId(kf.to_string()))?;
        match k.line_landmarks.get(index) {
            None => Err(Error::InvalidParameter(format!("{kf} has no segment {index}"))),
            Some(Some(existing)) => Err(Error::IdCollision(format!("{kf} segment {index} already linked to {existing}"))),
            Some(None) => Ok(()),
        }
    }

    pub fn create_point(&mut self, position: Point3, kf: KeyframeId, index: usize) -> Result<MapPointId> {
        self.check_point_slot(kf, index)?;
        let id = MapPointId(self.next_point);
        self.next_point += 1;
        self.points.insert(id, MapPoint { position, observations: vec![(kf, index)], born_at: self.keyframes_inserted });
        self.keyframes.get_mut(&kf).expect("checked").point_landmarks[index] = Some(id);
        Ok(id)
    }

    pub fn create_line(&mut self, line: PluckerLine, endpoints: (Point3, Point3), kf: KeyframeId, index: usize) -> Result<MapLineId> {
        self.check_line_slot(kf, index)?;
        let id = MapLineId(self.next_line);
        self.next_line += 1;
        self.lines.insert(id, MapLine { line, endpoints, observations: vec![(kf, index)], born_at: self.keyframes_inserted });
        self.keyframes.get_mut(&kf).expect("checked").line_landmarks[index] = Some(id);
        Ok(id)
    }

    /// Links keypoint `index` of `kf` to an existing map point. A point may be
    /// observed at most once per keyframe.
    pub fn insert_point_observation(&mut self, id: MapPointId, kf: KeyframeId, index: usize) -> Result<()> {
        self.check_point_slot(kf, index)?;
        let mp = self.points.get_mut(&id).ok_or_else(|| Error::UnknownId(id.to_string()))?;
        if mp.observations.iter().any(|(k, _)| *k == kf) {
            return Err(Error::IdCollision(format!("{id} already observed by {kf}")));
        }
        mp.observations.push((kf, index));
        self.keyframes.get_mut(&kf).expect("checked").point_landmarks[index] = Some(id);
        Ok(())
    }

    pub fn insert_line_observation(&mut self, id: MapLineId, kf: KeyframeId, index: usize) -> Result<()> {
        self.check_line_slot(kf, index)?;
        let ml = self.lines.get_mut(&id).ok_or_else(|| Error::UnknownId(id.to_string()))?;
        if ml.observations.iter().any(|(k, _)| *k == kf) {
            return Err(Error::IdCollision(format!("{id} already observed by {kf}")));
        }
        ml.observations.push((kf, index));
        self.keyframes.get_mut(&kf).expect("checked").line_landmarks[index] = Some(id);
        Ok(())
    }

    pub fn remove_point(&mut self, id: MapPointId) -> Option<MapPoint> {
        let mp = self.points.remove(&id)?;
        for (kf, idx) in &mp.observations {
            if let Some(k) = self.keyframes.get_mut(kf) {
                k.point_landmarks[*idx] = None;
            }
        }
        Some(mp)
    }

    pub fn remove_line(&mut self, id: MapLineId) -> Option<MapLine> {
        let ml = self.lines.remove(&id)?;
        for (kf, idx) in &ml.observations {
            if let Some(k) = self.keyframes.get_mut(kf) {
                k.line_landmarks[*idx] = None;
            }
        }
        Some(ml)
    }

    /// Unlinks one keyframe observation; a point left without observations
    /// is deleted. Returns whether a link was removed.
    pub fn remove_point_observation(&mut self, id: MapPointId, kf: KeyframeId) -> bool {
        let Some(mp) = self.points.get_mut(&id) else { return false };
        let Some(pos) = mp.observations.iter().position(|(k, _)| *k == kf) else { return false };
        let (_, idx) = mp.observations.remove(pos);
        let empty = mp.observations.is_empty();
        if let Some(k) = self.keyframes.get_mut(&kf) {
            k.point_landmarks[idx] = None;
        }
        if empty {
            self.points.remove(&id);
        }
        true
    }

    pub fn remove_line_observation(&mut self, id: MapLineId, kf: KeyframeId) -> bool {
        let Some(ml) = self.lines.get_mut(&id) else { return false };
        let Some(pos) = ml.observations.iter().position(|(k, _)| *k == kf) else { return false };
        let (_, idx) = ml.observations.remove(pos);
        let empty = ml.observations.is_empty();
        if let Some(k) = self.keyframes.get_mut(&kf) {
            k.line_landmarks[idx] = None;
        }
        if empty {
            self.lines.remove(&id);
        }
        true
    }

    /// Removes landmarks seen by fewer than two keyframes once three further
    /// keyframes had the chance to observe them. Returns (points, lines) removed.
    pub fn cull_landmarks(&mut self) -> (usize, usize) {
        let now = self.keyframes_inserted;
        let stale = |born: usize, obs: &[(KeyframeId, usize)]| {
            now >= born + CULL_AFTER_KEYFRAMES && distinct_keyframes(obs) < CULL_MIN_KEYFRAMES
        };
        let dead_points: Vec<_> =
            self.points.iter().filter(|(_, p)| stale(p.born_at, &p.observations)).map(|(id, _)| *id).collect();
        let dead_lines: Vec<_> =
            self.lines.iter().filter(|(_, l)| stale(l.born_at, &l.observations)).map(|(id, _)| *id).collect();
        for id in &dead_points {
            self.remove_point(*id);
        }
        for id in &dead_lines {
            self.remove_line(*id);
        }
        (dead_points.len(), dead_lines.len())
    }

    /// Number of landmarks each other keyframe shares with `kf`.
    pub fn shared_landmarks(&self, kf: KeyframeId) -> BTreeMap<KeyframeId, usize> {
        let mut counts = BTreeMap::new();
        let Some(k) = self.keyframes.get(&kf) else { return counts };
        for id in k.point_landmarks.iter().flatten() {
            for (other, _) in &self.points[id].observations {
                if *other != kf {
                    *counts.entry(*other).or_insert(0) += 1;
                }
            }
        }
        for id in k.line_landmarks.iter().flatten() {
            for (other, _) in &self.lines[id].observations {
                if *other != kf {
                    *counts.entry(*other).or_insert(0) += 1;
                }
            }
        }
        counts
    }

    /// Full-scan bidirectional consistency check.
    pub fn audit(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidParameter(format!("map audit: {msg}")));
        for (id, mp) in &self.points {
            if mp.observations.is_empty() || !mp.position.coords.iter().all(|x| x.is_finite()) {
                return fail(format!("{id} invalid"));
            }
            for (kf, idx) in &mp.observations {
                match self.keyframes.get(kf).and_then(|k| k.point_landmarks.get(*idx)) {
                    Some(Some(back)) if back == id => {}
                    _ => return fail(format!("{id} -> ({kf}, {idx}) not mirrored")),
                }
            }
        }
        for (id, ml) in &self.lines {
            if ml.observations.is_empty() || ml.line.constraint_residual().abs() > 1e-9 * ml.line.n.norm().max(1.0) {
                return fail(format!("{id} invalid"));
            }
            for (kf, idx) in &ml.observations {
                match self.keyframes.get(kf).and_then(|k| k.line_landmarks.get(*idx)) {
                    Some(Some(back)) if back == id => {}
                    _ => return fail(format!("{id} -> ({kf}, {idx}) not mirrored")),
                }
            }
        }
        for (kid, k) in &self.keyframes {
            for (idx, link) in k.point_landmarks.iter().enumerate() {
                if let Some(id) = link {
                    let ok = self.points.get(id).is_some_and(|p| p.observations.contains(&(*kid, idx)));
                    if !ok {
                        return fail(format!("({kid}, {idx}) -> {id} not mirrored"));
                    }
                }
            }
            for (idx, link) in k.line_landmarks.iter().enumerate() {
                if let Some(id) = link {
                    let ok = self.lines.get(id).is_some_and(|l| l.observations.contains(&(*kid, idx)));
                    if !ok {
                        return fail(format!("({kid}, {idx}) -> {id} not mirrored"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn dump(&self) -> MapDump {
        MapDump {
            keyframes: self
                .keyframes
                .values()
                .map(|k| KeyframeDump {
                    id: k.id,
                    frame_id: k.frame.id,
                    timestamp: k.frame.timestamp,
                    pose: k.frame.pose,
                    keypoints: k.frame.keypoints.len(),
                    segments: k.frame.segments.len(),
                })
                .collect(),
            points: self
                .points
                .iter()
                .map(|(id, p)| PointDump { id: *id, position: p.position, observations: p.observations.clone() })
                .collect(),
            lines: self
                .lines
                .iter()
                .map(|(id, l)| LineDump { id: *id, line: l.line, endpoints: l.endpoints, observations: l.observations.clone() })
                .collect(),
        }
    }
}

fn distinct_keyframes(obs: &[(KeyframeId, usize)]) -> usize {
    obs.iter().map(|(k, _)| *k).collect::<BTreeSet<_>>().len()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyframeDump {
    pub id: KeyframeId,
    pub frame_id: u64,
    pub timestamp: f64,
    pub pose: PoseSE3,
    pub keypoints: usize,
    pub segments: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointDump {
    pub id: MapPointId,
    pub position: Point3,
    pub observations: Vec<(KeyframeId, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineDump {
    pub id: MapLineId,
    pub line: PluckerLine,
    pub endpoints: (Point3, Point3),
    pub observations: Vec<(KeyframeId, usize)>,
}

/// JSON map dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapDump {
    pub keyframes: Vec<KeyframeDump>,
    pub points: Vec<PointDump>,
    pub lines: Vec<LineDump>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyframeThresholds {
    /// Translation to the last keyframe, meters.
    pub min_distance: f64,
    /// Rotation to the last keyframe, radians.
    pub min_angle: f64,
    /// Upper tracked-point bound of the "weak tracking" rule.
    pub low_track: usize,
    /// Tracking-lost level; must be below `low_track`.
    pub critical_track: usize,
    /// Co-visibility window size for local optimization.
    pub window: usize,
}

impl Default for KeyframeThresholds {
    fn default() -> Self {
        Self { min_distance: 0.3, min_angle: 15f64.to_radians(), low_track: 60, critical_track: 20, window: 5 }
    }
}

impl KeyframeThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_distance > 0.0 && self.min_angle > 0.0) || self.critical_track == 0 || self.window == 0 {
            return Err(Error::InvalidParameter("keyframe thresholds must be positive".into()));
        }
        if self.critical_track >= self.low_track {
            return Err(Error::InvalidParameter("critical_track must be below low_track".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KeyframeRule {
    /// Moved farther than `min_distance` from the last keyframe.
    Distance,
    /// Rotated more than `min_angle` from the last keyframe.
    Angle,
    /// Tracked count strictly between the two tracking thresholds.
    WeakTracking,
    /// Recovered from a tracking loss in the previous frame.
    Recovery,
}

impl KeyframeRule {
    pub fn label(&self) -> &'static str {
        match self {
            KeyframeRule::Distance => "distance",
            KeyframeRule::Angle => "angle",
            KeyframeRule::WeakTracking => "weak_tracking",
            KeyframeRule::Recovery => "recovery",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeyframeDecision {
    pub is_keyframe: bool,
    /// First rule (in rule order) that fired.
    pub rule: Option<KeyframeRule>,
}

pub fn keyframe_decision(frame: &Frame, last_kf: &Frame, prev_frame: &Frame, th: &KeyframeThresholds) -> KeyframeDecision {
    let tracked = frame.tracked_map_point_count;
    let rule = if frame.pose.distance_to(&last_kf.pose) > th.min_distance {
        Some(KeyframeRule::Distance)
    } else if frame.pose.angle_to(&last_kf.pose) > th.min_angle {
        Some(KeyframeRule::Angle)
    } else if th.critical_track < tracked && tracked < th.low_track {
        Some(KeyframeRule::WeakTracking)
    } else if tracked > th.critical_track && prev_frame.tracked_map_point_count < th.critical_track {
        Some(KeyframeRule::Recovery)
    } else {
        None
    };
    KeyframeDecision { is_keyframe: rule.is_some(), rule }
}

/// The `size` keyframes sharing the most landmarks with `current` (ties by
/// recency), always including `current`. Returned oldest first.
pub fn covisibility_window(map: &Map, current: KeyframeId, size: usize) -> Vec<KeyframeId> {
    let shared = map.shared_landmarks(current);
    let mut others: Vec<(KeyframeId, usize)> =
        map.keyframes().keys().filter(|k| **k != current).map(|k| (*k, shared.get(k).copied().unwrap_or(0))).collect();
    others.sort_by(|a, b| b.1.cmp(&a.1).then(b.0.cmp(&a.0)));
    let mut window: Vec<KeyframeId> = others.into_iter().take(size.saturating_sub(1)).map(|(k, _)| k).collect();
    window.push(current);
    window.sort();
    window
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn kf(map: &Map, n_points: usize) -> Keyframe {
        let frame = Frame { keypoints: vec![Point2::origin(); n_points], ..Default::default() };
        Keyframe::new(map.next_keyframe_id(), frame, vec![None; n_points], vec![], FrontendOutput::default())
    }

    #[test]
    fn create_and_observe() {
        let mut map = Map::new();
        let a = map.insert_keyframe(kf(&map, 3)).unwrap();
        let b = map.insert_keyframe(kf(&map, 3)).unwrap();
        let c = map.insert_keyframe(kf(&map, 3)).unwrap();
        let p = map.create_point(Point3::new(0.0, 0.0, 1.0), a, 0).unwrap();
        map.insert_point_observation(p, b, 1).unwrap();
        map.insert_point_observation(p, c, 2).unwrap();
        assert_eq!(map.points()[&p].observations.len(), 3);
        // Same keyframe twice, or an occupied slot.
        assert!(map.insert_point_observation(p, b, 0).is_err());
        assert!(map.create_point(Point3::origin(), a, 0).is_err());
        assert!(map.insert_point_observation(MapPointId(99), c, 0).is_err());
        map.audit().unwrap();
    }

    #[test]
    fn keyframe_id_collision() {
        let mut map = Map::new();
        let k = kf(&map, 1);
        map.insert_keyframe(k.clone()).unwrap();
        assert!(matches!(map.insert_keyframe(k), Err(Error::IdCollision(_))));
    }

    #[test]
    fn culling() {
        let mut map = Map::new();
        let a = map.insert_keyframe(kf(&map, 2)).unwrap();
        let lonely = map.create_point(Point3::new(0.0, 0.0, 1.0), a, 0).unwrap();
        let b = map.insert_keyframe(kf(&map, 2)).unwrap();
        let shared = map.create_point(Point3::new(1.0, 0.0, 1.0), a, 1).unwrap();
        map.insert_point_observation(shared, b, 1).unwrap();
        assert_eq!(map.cull_landmarks(), (0, 0));
        map.insert_keyframe(kf(&map, 2)).unwrap();
        map.insert_keyframe(kf(&map, 2)).unwrap();
        assert_eq!(map.cull_landmarks(), (1, 0));
        assert!(!map.points().contains_key(&lonely));
        assert!(map.points().contains_key(&shared));
        assert_eq!(map.keyframe(a).unwrap().point_landmarks[0], None);
        assert_eq!(map.shared_landmarks(a).get(&b), Some(&1));
        map.audit().unwrap();
    }

    #[test]
    fn culled_landmark_leaves_covisibility() {
        let mut map = Map::new();
        let a = map.insert_keyframe(kf(&map, 2)).unwrap();
        let b = map.insert_keyframe(kf(&map, 2)).unwrap();
        let p = map.create_point(Point3::new(0.0, 0.0, 1.0), a, 0).unwrap();
        map.insert_point_observation(p, b, 0).unwrap();
        assert_eq!(map.shared_landmarks(a).get(&b), Some(&1));
        map.remove_point(p);
        assert!(map.shared_landmarks(a).is_empty());
        map.audit().unwrap();
    }

    fn frame_at(x: f64, yaw_deg: f64, tracked: usize) -> Frame {
        Frame {
            pose: PoseSE3::from_camera_center(
                nalgebra::Rotation3::from_axis_angle(&Vector3::y_axis(), yaw_deg.to_radians()),
                Point3::new(x, 0.0, 0.0),
            ),
            tracked_map_point_count: tracked,
            ..Default::default()
        }
    }

    #[test]
    fn keyframe_rules() {
        let th = KeyframeThresholds::default();
        let kf = frame_at(0.0, 0.0, 200);
        let prev = frame_at(0.0, 0.0, 100);
        let d = keyframe_decision(&frame_at(0.0, 0.0, 70), &kf, &prev, &th);
        assert_eq!(d, KeyframeDecision { is_keyframe: false, rule: None });
        let d = keyframe_decision(&frame_at(0.0, 0.0, 40), &kf, &prev, &th);
        assert_eq!(d.rule, Some(KeyframeRule::WeakTracking));
        let d = keyframe_decision(&frame_at(0.0, 0.0, 70), &kf, &frame_at(0.0, 0.0, 19), &th);
        assert_eq!(d.rule, Some(KeyframeRule::Recovery));
        let d = keyframe_decision(&frame_at(0.31, 0.0, 70), &kf, &prev, &th);
        assert_eq!(d.rule, Some(KeyframeRule::Distance));
        let d = keyframe_decision(&frame_at(0.0, 16.0, 70), &kf, &prev, &th);
        assert_eq!(d.rule, Some(KeyframeRule::Angle));
    }

    fn chain_map(n: usize) -> Map {
        let mut map = Map::new();
        let ids: Vec<_> = (0..n).map(|_| map.insert_keyframe(kf(&map, 4)).unwrap()).collect();
        // Keyframe i shares one landmark with i+1 only.
        for w in ids.windows(2) {
            let p = map.create_point(Point3::new(0.0, 0.0, 1.0), w[0], 0).unwrap();
            map.insert_point_observation(p, w[1], 1).unwrap();
        }
        map
    }

    #[test]
    fn window_single_and_chain() {
        let map = chain_map(1);
        assert_eq!(covisibility_window(&map, KeyframeId(0), 5), vec![KeyframeId(0)]);
        let map = chain_map(6);
        assert_eq!(covisibility_window(&map, KeyframeId(5), 3), vec![KeyframeId(3), KeyframeId(4), KeyframeId(5)]);
        assert_eq!(covisibility_window(&map, KeyframeId(5), 50).len(), 6);
    }

    #[test]
    fn window_prefers_shared_over_recent() {
        let mut map = Map::new();
        let ids: Vec<_> = (0..5).map(|_| map.insert_keyframe(kf(&map, 4)).unwrap()).collect();
        let p = map.create_point(Point3::new(0.0, 0.0, 1.0), ids[0], 0).unwrap();
        map.insert_point_observation(p, ids[4], 0).unwrap();
        // Disjoint elsewhere: kf0 shares, then recency pads with kf3.
        assert_eq!(covisibility_window(&map, ids[4], 3), vec![ids[0], ids[3], ids[4]]);
    }
}
