//! Feature bundles exchanged between a detector/matcher and the pipeline.
//!
//! Any provider can feed the pipeline as long as it fills
//! [`StereoFeatures`]. The synthetic generator additionally fills the
//! ground-truth channel, which only matchers built on it and test auditors
//! look at.

use serde::{Deserialize, Serialize};

use crate::geometry::{LineSegment2D, Point2};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StereoFeatures {
    pub timestamp: f64,
    pub keypoints: Vec<Point2>,
    pub right_keypoints: Vec<Point2>,
    /// `(left index, right index)` pairs.
    pub stereo_matches: Vec<(usize, usize)>,
    /// Raw (unmerged) left-image segments.
    pub segments: Vec<LineSegment2D>,
    pub right_segments: Vec<LineSegment2D>,
    /// Per-keypoint track identifiers supplied by an external tracker.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track_ids: Option<Vec<u64>>,
}

/// Landmark identities behind every emitted feature.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthChannel {
    pub keypoint_landmarks: Vec<usize>,
    pub right_keypoint_landmarks: Vec<usize>,
    pub segment_lines: Vec<usize>,
    pub right_segment_lines: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrontendOutput {
    pub frame_index: usize,
    pub features: StereoFeatures,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<GroundTruthChannel>,
}

/// Point matcher between two frames (e.g. a keyframe and the current frame).
pub trait FeatureMatcher: Send {
    /// Injective `(index in a, index in b)` keypoint matches.
    fn match_points(&mut self, a: &FrontendOutput, b: &FrontendOutput) -> Vec<(usize, usize)>;
}

/// Matches keypoints carrying equal external track ids.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrackIdMatcher;

impl FeatureMatcher for TrackIdMatcher {
    fn match_points(&mut self, a: &FrontendOutput, b: &FrontendOutput) -> Vec<(usize, usize)> {
        let (Some(ids_a), Some(ids_b)) = (&a.features.track_ids, &b.features.track_ids) else {
            return Vec::new();
        };
        match_by_identity(ids_a, ids_b)
    }
}

/// Pairs equal identities; identities repeated within one side are skipped.
pub fn match_by_identity<T: Ord + Copy>(a: &[T], b: &[T]) -> Vec<(usize, usize)> {
    use std::collections::BTreeMap;
    let mut index_b: BTreeMap<T, Option<usize>> = BTreeMap::new();
    for (j, id) in b.iter().enumerate() {
        index_b.entry(*id).and_modify(|e| *e = None).or_insert(Some(j));
    }
    let mut seen_a: BTreeMap<T, usize> = BTreeMap::new();
    for id in a {
        *seen_a.entry(*id).or_default() += 1;
    }
    a.iter()
        .enumerate()
        .filter(|(_, id)| seen_a[id] == 1)
        .filter_map(|(i, id)| index_b.get(id).copied().flatten().map(|j| (i, j)))
        .collect()
}
