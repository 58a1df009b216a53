//! Image-line post-processing: merging fragmented segments, length
//! filtering, point-to-segment association and point-vote line matching.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{point_line_distance, segment_from_endpoints, LineSegment2D, Point2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergeParams {
    /// Maximum angle between two mergeable segments, radians.
    pub max_angle: f64,
    /// Maximum distance of a midpoint to the other segment's line, pixels.
    pub max_midpoint_dist: f64,
    /// Maximum closest-endpoint gap for segments without axis overlap, pixels.
    pub max_endpoint_gap: f64,
    /// Segments shorter than this are dropped after merging, pixels.
    pub min_length: f64,
}

impl Default for MergeParams {
    fn default() -> Self {
        Self { max_angle: 3f64.to_radians(), max_midpoint_dist: 3.0, max_endpoint_gap: 10.0, min_length: 50.0 }
    }
}

impl MergeParams {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.max_angle, self.max_midpoint_dist, self.max_endpoint_gap, self.min_length]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite());
        if !ok {
            return Err(Error::InvalidParameter("merge thresholds must be strictly positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchParams {
    /// Score threshold, strict.
    pub min_score: f64,
    /// Shared matched point threshold, strict.
    pub min_shared_points: usize,
    /// Point-to-line distance gate for association, strict, pixels.
    pub assoc_max_dist: f64,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self { min_score: 0.8, min_shared_points: 3, assoc_max_dist: 3.0 }
    }
}

impl MatchParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_score > 0.0 && self.min_score <= 1.0) {
            return Err(Error::InvalidParameter("min_score must lie in (0, 1]".into()));
        }
        if self.min_shared_points < 1 {
            return Err(Error::InvalidParameter("min_shared_points must be at least 1".into()));
        }
        if !(self.assoc_max_dist > 0.0) {
            return Err(Error::InvalidParameter("assoc_max_dist must be positive".into()));
        }
        Ok(())
    }
}

/// Angle between the infinite lines of two segments, in `[0, π/2]`.
pub fn segment_angle(s1: &LineSegment2D, s2: &LineSegment2D) -> f64 {
    let d1 = s1.direction();
    let d2 = s2.direction();
    let cross = (d1.x * d2.y - d1.y * d2.x).abs();
    let dot = d1.dot(&d2).abs();
    cross.atan2(dot)
}

fn intervals_overlap(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0.min(a.1).max(b.0.min(b.1)) <= a.0.max(a.1).min(b.0.max(b.1))
}

fn closest_endpoint_gap(s1: &LineSegment2D, s2: &LineSegment2D) -> f64 {
    [(s1.p1(), s2.p1()), (s1.p1(), s2.p2()), (s1.p2(), s2.p1()), (s1.p2(), s2.p2())]
        .iter()
        .map(|(a, b)| (a - b).norm())
        .fold(f64::INFINITY, f64::min)
}

/// All three merge conditions.
pub fn can_merge(s1: &LineSegment2D, s2: &LineSegment2D, params: &MergeParams) -> bool {
    if segment_angle(s1, s2) >= params.max_angle {
        return false;
    }
    if point_line_distance(&s1.midpoint(), s2) > params.max_midpoint_dist
        || point_line_distance(&s2.midpoint(), s1) > params.max_midpoint_dist
    {
        return false;
    }
    let x_overlap = intervals_overlap((s1.p1().x, s1.p2().x), (s2.p1().x, s2.p2().x));
    let y_overlap = intervals_overlap((s1.p1().y, s1.p2().y), (s2.p1().y, s2.p2().y));
    if !x_overlap && !y_overlap {
        return closest_endpoint_gap(s1, s2) < params.max_endpoint_gap;
    }
    true
}

/// Segment spanned by the two mutually farthest endpoints of the pair.
pub fn merge_pair(s1: &LineSegment2D, s2: &LineSegment2D) -> LineSegment2D {
    let pts = [s1.p1(), s1.p2(), s2.p1(), s2.p2()];
    let mut best = (0, 1);
    let mut best_d = -1.0;
    for i in 0..4 {
        for j in i + 1..4 {
            let d = (pts[i] - pts[j]).norm_squared();
            if d > best_d {
                best_d = d;
                best = (i, j);
            }
        }
    }
    segment_from_endpoints(pts[best.0], pts[best.1]).expect("merged segment has positive length")
}

/// A merged segment and the input indices it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedSegment {
    pub segment: LineSegment2D,
    pub sources: Vec<usize>,
}

/// Greedy fixed-point merge: repeatedly merge the mergeable pair with the
/// largest combined length (ties by lowest indices) until none remains.
pub fn merge_segments_tracked(segments: &[LineSegment2D], params: &MergeParams) -> Vec<MergedSegment> {
    let mut out: Vec<MergedSegment> =
        segments.iter().enumerate().map(|(i, s)| MergedSegment { segment: *s, sources: vec![i] }).collect();
    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..out.len() {
            for j in i + 1..out.len() {
                let (a, b) = (&out[i].segment, &out[j].segment);
                let combined = a.length() + b.length();
                if best.is_some_and(|(_, _, c)| combined <= c) {
                    continue;
                }
                if can_merge(a, b, params) {
                    best = Some((i, j, combined));
                }
            }
        }
        let Some((i, j, _)) = best else { break };
        let removed = out.remove(j);
        let keep = &mut out[i];
        keep.segment = merge_pair(&keep.segment, &removed.segment);
        keep.sources.extend(removed.sources);
        keep.sources.sort_unstable();
    }
    out
}

/// Largest pairwise overlap between the inputs of a merged segment, measured
/// along the merged direction as a fraction of the shorter input. Pieces of a
/// single split line sit end to end (near 0); distinct lines that happen to
/// project onto one image line stack on top of each other (near 1).
pub fn source_overlap(merged: &MergedSegment, segments: &[LineSegment2D]) -> f64 {
    let d = (merged.segment.p2() - merged.segment.p1()).normalize();
    let o = merged.segment.p1();
    let span = |s: &LineSegment2D| {
        let (a, b) = ((s.p1() - o).dot(&d), (s.p2() - o).dot(&d));
        (a.min(b), a.max(b))
    };
    let mut worst = 0.0_f64;
    for (i, a) in merged.sources.iter().enumerate() {
        for b in &merged.sources[i + 1..] {
            let (sa, sb) = (span(&segments[*a]), span(&segments[*b]));
            let overlap = (sa.1.min(sb.1) - sa.0.max(sb.0)).max(0.0);
            let shorter = (sa.1 - sa.0).min(sb.1 - sb.0);
            if shorter > 0.0 {
                worst = worst.max(overlap / shorter);
            }
        }
    }
    worst
}

/// Largest distance in pixels from an input endpoint to the infinite line of
/// the merged segment.
pub fn source_misfit(merged: &MergedSegment, segments: &[LineSegment2D]) -> f64 {
    merged
        .sources
        .iter()
        .flat_map(|&i| [segments[i].p1(), segments[i].p2()])
        .map(|p| point_line_distance(&p, &merged.segment))
        .fold(0.0, f64::max)
}

pub fn merge_segments(segments: &[LineSegment2D], params: &MergeParams) -> Vec<LineSegment2D> {
    merge_segments_tracked(segments, params).into_iter().map(|m| m.segment).collect()
}

/// Keeps segments with `length ≥ min_length`.
pub fn filter_short(segments: &[LineSegment2D], min_length: f64) -> Vec<LineSegment2D> {
    segments.iter().filter(|s| s.length() >= min_length).copied().collect()
}

/// Which keypoints belong to which segment. A point may belong to several.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PointLineAssociation {
    /// Sorted keypoint indices per segment.
    pub line_points: Vec<Vec<usize>>,
    pub num_points: usize,
}

impl PointLineAssociation {
    pub fn num_lines(&self) -> usize {
        self.line_points.len()
    }

    pub fn points_of(&self, line: usize) -> &[usize] {
        &self.line_points[line]
    }

    /// Inverse mapping: segment indices per keypoint.
    pub fn lines_of_points(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_points];
        for (l, pts) in self.line_points.iter().enumerate() {
            for &p in pts {
                out[p].push(l);
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.line_points.iter().flatten().any(|&p| p >= self.num_points) {
            return Err(Error::InvalidParameter("association references a missing keypoint".into()));
        }
        Ok(())
    }
}

fn within(v: f64, a: f64, b: f64) -> bool {
    a.min(b) <= v && v <= a.max(b)
}

pub fn point_belongs_to(p: &Point2, seg: &LineSegment2D, max_dist: f64) -> bool {
    point_line_distance(p, seg) < max_dist
        && (within(p.x, seg.p1().x, seg.p2().x) || within(p.y, seg.p1().y, seg.p2().y))
}

pub fn associate_points_to_lines(points: &[Point2], segments: &[LineSegment2D], assoc_max_dist: f64) -> PointLineAssociation {
    let line_points = segments
        .iter()
        .map(|seg| (0..points.len()).filter(|&i| point_belongs_to(&points[i], seg, assoc_max_dist)).collect())
        .collect();
    PointLineAssociation { line_points, num_points: points.len() }
}

/// Flags segments that share more than `max_shared` associated points with
/// another segment of the same image. Point votes cannot tell such segments
/// apart.
pub fn ambiguous_segments(assoc: &PointLineAssociation, max_shared: usize) -> Vec<bool> {
    let lines_of = assoc.lines_of_points();
    let mut flagged = vec![false; assoc.num_lines()];
    for (l, pts) in assoc.line_points.iter().enumerate() {
        let mut shared: BTreeMap<usize, usize> = BTreeMap::new();
        for &p in pts {
            for &other in lines_of[p].iter().filter(|&&o| o != l) {
                *shared.entry(other).or_default() += 1;
            }
        }
        flagged[l] = shared.values().any(|&n| n > max_shared);
    }
    flagged
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineMatch {
    pub line_k: usize,
    pub line_k1: usize,
    pub score: f64,
    pub shared: usize,
}

/// Matches segments of two frames by voting with point matches.
///
/// A point contributes to every segment it belongs to. Pairs pass when
/// `score > min_score` and `shared > min_shared_points`; the accepted set is
/// made one-to-one by descending score, ties broken by lower frame-k index.
pub fn match_lines(
    assoc_k: &PointLineAssociation,
    assoc_k1: &PointLineAssociation,
    point_matches: &[(usize, usize)],
    params: &MatchParams,
) -> Vec<LineMatch> {
    let lines_k = assoc_k.lines_of_points();
    let lines_k1 = assoc_k1.lines_of_points();
    let mut shared: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for &(i, j) in point_matches {
        let (Some(ls_k), Some(ls_k1)) = (lines_k.get(i), lines_k1.get(j)) else { continue };
        for &m in ls_k {
            for &n in ls_k1 {
                *shared.entry((m, n)).or_default() += 1;
            }
        }
    }
    let mut candidates: Vec<LineMatch> = shared
        .into_iter()
        .filter_map(|((m, n), count)| {
            let denom = assoc_k.points_of(m).len().min(assoc_k1.points_of(n).len());
            let score = count as f64 / denom as f64;
            (score > params.min_score && count > params.min_shared_points)
                .then_some(LineMatch { line_k: m, line_k1: n, score, shared: count })
        })
        .collect();
    candidates.sort_by(|a, b| {
        b.score.total_cmp(&a.score).then(a.line_k.cmp(&b.line_k)).then(a.line_k1.cmp(&b.line_k1))
    });
    let mut used_k = vec![false; assoc_k.num_lines()];
    let mut used_k1 = vec![false; assoc_k1.num_lines()];
    let mut out = Vec::new();
    for c in candidates {
        if !used_k[c.line_k] && !used_k1[c.line_k1] {
            used_k[c.line_k] = true;
            used_k1[c.line_k1] = true;
            out.push(c);
        }
    }
    out
}
