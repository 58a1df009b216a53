//! Landmark initialization: rectified stereo points, two-plane line
//! intersection, the two-point fallback and 3D endpoint trimming.

use nalgebra::{Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{plucker_from_two_points, LineSegment2D, PinholeIntrinsics, PluckerLine, Point2, Point3, PoseSE3, StereoRig};

/// Stereo rows must agree within this many pixels.
pub const MAX_ROW_DISAGREEMENT: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriangulationParams {
    /// Minimum angle between back-projected planes, radians.
    pub min_plane_angle: f64,
}

impl Default for TriangulationParams {
    fn default() -> Self {
        Self { min_plane_angle: 1f64.to_radians() }
    }
}

/// Plane `normal·X + offset = 0` with a unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane3D {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

impl Plane3D {
    pub fn signed_distance(&self, x: &Point3) -> f64 {
        self.normal.dot(&x.coords) + self.offset
    }

    pub fn homogeneous(&self) -> Vector4<f64> {
        Vector4::new(self.normal.x, self.normal.y, self.normal.z, self.offset)
    }
}

/// Left-camera-frame point from a rectified stereo observation.
pub fn triangulate_point_stereo(u_left: &Point2, u_right: &Point2, rig: &StereoRig) -> Result<Point3> {
    let disparity = u_left.x - u_right.x;
    if !(disparity > 0.0) {
        return Err(Error::NonPositiveDisparity(disparity));
    }
    let row_gap = (u_left.y - u_right.y).abs();
    if row_gap > MAX_ROW_DISAGREEMENT {
        return Err(Error::RowMismatch(row_gap));
    }
    let k = &rig.intrinsics;
    let b = rig.baseline;
    Ok(Point3::new(
        b * (u_left.x - k.cx) / disparity,
        b * (u_left.y - k.cy) * (k.fx / k.fy) / disparity,
        b * k.fx / disparity,
    ))
}

/// World-frame plane through the camera center and the segment's two viewing rays.
pub fn back_project_plane(seg: &LineSegment2D, pose: &PoseSE3, k: &PinholeIntrinsics) -> Plane3D {
    let r1 = k.unproject(&seg.p1());
    let r2 = k.unproject(&seg.p2());
    let n_cam = r1.cross(&r2).normalize();
    let normal = pose.rotation().inverse() * n_cam;
    let offset = -normal.dot(&pose.center().coords);
    Plane3D { normal, offset }
}

/// Angle between two plane normals, in `[0, π/2]`.
pub fn plane_angle(p1: &Plane3D, p2: &Plane3D) -> f64 {
    p1.normal.cross(&p2.normal).norm().atan2(p1.normal.dot(&p2.normal).abs())
}

/// Plücker line from the dual Plücker matrix `L* = π₁π₂ᵀ − π₂π₁ᵀ`.
pub fn intersect_planes(p1: &Plane3D, p2: &Plane3D) -> Result<PluckerLine> {
    let (a, b) = (p1.homogeneous(), p2.homogeneous());
    let dual: Matrix4<f64> = a * b.transpose() - b * a.transpose();
    let v = -Vector3::new(dual[(2, 1)], dual[(0, 2)], dual[(1, 0)]);
    let n = -Vector3::new(dual[(0, 3)], dual[(1, 3)], dual[(2, 3)]);
    if v.norm() == 0.0 {
        return Err(Error::DegenerateTriangulation { angle_deg: 0.0 });
    }
    // Remove the rounding component along v so the constraint holds exactly.
    let v_hat = v.normalize();
    let n = n - v_hat * n.dot(&v_hat);
    Ok(PluckerLine { n, v }.normalized())
}

/// Closest approach between a ray `c + τ·d` and a line.
/// Returns `(τ, s)` where `s` is the arc position along the line's unit
/// direction from its point closest to the origin.
pub fn ray_line_closest(c: &Point3, d: &Vector3<f64>, line: &PluckerLine) -> Option<(f64, f64)> {
    let u = line.direction();
    let p0 = line.closest_point_to_origin();
    let w0 = p0 - c;
    let b = u.dot(d);
    let cc = d.dot(d);
    let dd = u.dot(&w0);
    let e = d.dot(&w0);
    let denom = cc - b * b;
    if denom <= 1e-12 * cc {
        return None;
    }
    let s = (b * e - cc * dd) / denom;
    let tau = (e - b * dd) / denom;
    Some((tau, s))
}

fn endpoint_rays(seg: &LineSegment2D, pose: &PoseSE3, k: &PinholeIntrinsics) -> [Vector3<f64>; 2] {
    let r_inv = pose.rotation().inverse();
    [r_inv * k.unproject(&seg.p1()), r_inv * k.unproject(&seg.p2())]
}

/// Whether the line is in front of the camera along both endpoint rays.
pub fn line_in_front(line: &PluckerLine, seg: &LineSegment2D, pose: &PoseSE3, k: &PinholeIntrinsics) -> bool {
    let c = pose.center();
    endpoint_rays(seg, pose, k)
        .iter()
        .all(|d| ray_line_closest(&c, d, line).is_some_and(|(tau, _)| tau > 0.0))
}

/// Two-view line triangulation by intersecting back-projected planes.
pub fn triangulate_line_two_planes(
    seg1: &LineSegment2D,
    pose1: &PoseSE3,
    seg2: &LineSegment2D,
    pose2: &PoseSE3,
    k: &PinholeIntrinsics,
    params: &TriangulationParams,
) -> Result<PluckerLine> {
    let pi1 = back_project_plane(seg1, pose1, k);
    let pi2 = back_project_plane(seg2, pose2, k);
    let angle = plane_angle(&pi1, &pi2);
    if angle < params.min_plane_angle {
        return Err(Error::DegenerateTriangulation { angle_deg: angle.to_degrees() });
    }
    let line = intersect_planes(&pi1, &pi2)?;
    if !line_in_front(&line, seg1, pose1, k) || !line_in_front(&line, seg2, pose2, k) {
        return Err(Error::BehindCamera);
    }
    Ok(line)
}

/// Fallback through two triangulated points lying on the line.
pub fn triangulate_line_from_points(x1: &Point3, x2: &Point3) -> Result<PluckerLine> {
    plucker_from_two_points(x1, x2)
}

/// Picks the two candidates closest to the image line.
///
/// `candidates` holds `(id, image distance)`; returns ids in order of distance.
pub fn select_two_closest<T: Copy>(candidates: &[(T, f64)]) -> Result<(T, T)> {
    if candidates.len() < 2 {
        return Err(Error::TooFewCorrespondences { got: candidates.len(), need: 2 });
    }
    let mut sorted: Vec<(usize, f64)> = candidates.iter().enumerate().map(|(i, c)| (i, c.1)).collect();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    Ok((candidates[sorted[0].0].0, candidates[sorted[1].0].0))
}

/// 3D endpoints of `line` covering the extent of every observation.
pub fn trim_endpoints(
    line: &PluckerLine,
    observations: &[(PoseSE3, LineSegment2D)],
    k: &PinholeIntrinsics,
) -> Option<(Point3, Point3)> {
    let u = line.direction();
    let p0 = line.closest_point_to_origin();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (pose, seg) in observations {
        let c = pose.center();
        for d in endpoint_rays(seg, pose, k) {
            if let Some((_, s)) = ray_line_closest(&c, &d, line) {
                lo = lo.min(s);
                hi = hi.max(s);
            }
        }
    }
    (lo <= hi).then(|| (p0 + u * lo, p0 + u * hi))
}
