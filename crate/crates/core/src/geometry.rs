//! Poses, pinhole cameras and 3D line algebra.
//!
//! Lines are carried in two forms. [`PluckerLine`] `(n, v)` is used for
//! triangulation, transformation and projection; [`OrthonormalLine`]
//! `(U, W) ∈ SO(3) × SO(2)` is the minimal 4-DoF form used by the optimizer.
//! Plücker lines follow the moment convention `n = X × v` for any point `X`
//! on the line.

use nalgebra::{Matrix2, Matrix3, Rotation2, Rotation3, UnitQuaternion, Vector2, Vector3, Vector4, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point2 = nalgebra::Point2<f64>;
pub type Point3 = nalgebra::Point3<f64>;

/// Tolerance for exact-math invariants (orthogonality, incidence in 3D).
pub const EXACT_TOL: f64 = 1e-9;
/// Tolerance for projective checks in pixels.
pub const PIXEL_TOL: f64 = 1e-6;

/// Chained orthonormal updates between two SO(3) re-projections.
pub const REORTHONORMALIZE_EVERY: u32 = 100;

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation angle of a rotation matrix, accurate near zero.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let s = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]).norm() / 2.0;
    let c = (r.trace() - 1.0) / 2.0;
    s.atan2(c)
}

/// Closest rotation in the Frobenius sense (polar projection).
pub fn project_to_so3(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let vt = svd.v_t.expect("svd v_t");
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * vt;
    }
    r
}

/// Rigid world→camera transform: `X_c = R·X_w + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "PoseRepr", try_from = "PoseRepr")]
pub struct PoseSE3 {
    rotation: Rotation3<f64>,
    translation: Vector3<f64>,
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl From<PoseSE3> for PoseRepr {
    fn from(p: PoseSE3) -> Self {
        let m = p.rotation.matrix();
        PoseRepr {
            rotation: [
                [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
                [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
                [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
            ],
            translation: p.translation.into(),
        }
    }
}

impl TryFrom<PoseRepr> for PoseSE3 {
    type Error = Error;

    fn try_from(r: PoseRepr) -> Result<Self> {
        let m = Matrix3::from_fn(|i, j| r.rotation[i][j]);
        PoseSE3::from_matrix(m, Vector3::from(r.translation))
    }
}

impl Default for PoseSE3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl PoseSE3 {
    pub fn identity() -> Self {
        Self { rotation: Rotation3::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    /// Builds a pose from a raw matrix, rejecting anything outside SO(3).
    pub fn from_matrix(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        let det = rotation.determinant();
        if ortho > EXACT_TOL || (det - 1.0).abs() > EXACT_TOL || !translation.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "rotation not in SO(3): |RtR - I| = {ortho:e}, det = {det}"
            )));
        }
        Ok(Self { rotation: Rotation3::from_matrix_unchecked(rotation), translation })
    }

    /// Pose of a camera whose center is `center` (world) and whose
    /// camera→world rotation is `orientation`.
    pub fn from_camera_center(orientation: Rotation3<f64>, center: Point3) -> Self {
        let rotation = orientation.inverse();
        let translation = -(rotation * center.coords);
        Self { rotation, translation }
    }

    pub fn rotation(&self) -> &Rotation3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn inverse(&self) -> Self {
        let rotation = self.rotation.inverse();
        Self { translation: -(rotation * self.translation), rotation }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &PoseSE3) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn transform_point(&self, x: &Point3) -> Point3 {
        Point3::from(self.rotation * x.coords + self.translation)
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Point3 {
        Point3::from(-(self.rotation.inverse() * self.translation))
    }

    /// Local update used throughout the optimizer.
    ///
    /// `delta = (ρ, φ)`: `R ← Exp(φ)·R`, `t ← t + ρ`.
    pub fn retract(&self, delta: &Vector6<f64>) -> Self {
        let rho = Vector3::new(delta[0], delta[1], delta[2]);
        let phi = Vector3::new(delta[3], delta[4], delta[5]);
        let rotation = Rotation3::new(phi) * self.rotation;
        let rotation = Rotation3::from_matrix_unchecked(project_to_so3(rotation.matrix()));
        Self { rotation, translation: self.translation + rho }
    }

    /// Camera-center distance between two poses, meters.
    pub fn distance_to(&self, other: &PoseSE3) -> f64 {
        (self.center() - other.center()).norm()
    }

    /// Relative rotation angle between two poses, radians.
    pub fn angle_to(&self, other: &PoseSE3) -> f64 {
        rotation_angle(&(self.rotation.matrix() * other.rotation.matrix().transpose()))
    }

    /// Camera→world quaternion and camera center, as stored in TUM files.
    pub fn to_tum(&self) -> ([f64; 3], [f64; 4]) {
        let inv = self.inverse();
        let q = UnitQuaternion::from_rotation_matrix(&inv.rotation);
        let t = inv.translation;
        ([t.x, t.y, t.z], [q.i, q.j, q.k, q.w])
    }

    pub fn from_tum(position: [f64; 3], quat_xyzw: [f64; 4]) -> Result<Self> {
        let [x, y, z, w] = quat_xyzw;
        let q = nalgebra::Quaternion::new(w, x, y, z);
        if q.norm() < 1e-12 {
            return Err(Error::Parse("zero quaternion".into()));
        }
        let q = UnitQuaternion::from_quaternion(q);
        let cam_to_world = PoseSE3::new(q.to_rotation_matrix(), Vector3::from(position));
        Ok(cam_to_world.inverse())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinholeIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl PinholeIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let k = Self { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidParameter("focal lengths must be positive".into()));
        }
        if !(0.0..=self.width as f64).contains(&self.cx) || !(0.0..=self.height as f64).contains(&self.cy) {
            return Err(Error::InvalidParameter("principal point outside the image".into()));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Pinhole projection of a camera-frame point.
    pub fn project(&self, x_cam: &Point3) -> Result<Point2> {
        if x_cam.z <= 0.0 {
            return Err(Error::NonPositiveDepth(x_cam.z));
        }
        Ok(Point2::new(self.fx * x_cam.x / x_cam.z + self.cx, self.fy * x_cam.y / x_cam.z + self.cy))
    }

    /// Viewing ray through a pixel (camera frame, z = 1).
    pub fn unproject(&self, p: &Point2) -> Vector3<f64> {
        Vector3::new((p.x - self.cx) / self.fx, (p.y - self.cy) / self.fy, 1.0)
    }

    pub fn contains(&self, p: &Point2) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x <= self.width as f64 && p.y <= self.height as f64
    }

    /// Line projection matrix mapping a camera-frame Plücker normal to
    /// image line coefficients. Exact for `fx ≠ fy` as well.
    pub fn line_projection_matrix(&self) -> Matrix3<f64> {
        let (fx, fy, cx, cy) = (self.fx, self.fy, self.cx, self.cy);
        Matrix3::new(fy, 0.0, 0.0, 0.0, fx, 0.0, -fy * cx, -fx * cy, fx * fy)
    }
}

/// Rectified stereo pair. The right camera sits `baseline` meters along the
/// left camera's +X axis, so `X_right = X_left − (baseline, 0, 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StereoRig {
    pub intrinsics: PinholeIntrinsics,
    pub baseline: f64,
}

impl StereoRig {
    pub fn new(intrinsics: PinholeIntrinsics, baseline: f64) -> Result<Self> {
        let rig = Self { intrinsics, baseline };
        rig.validate()?;
        Ok(rig)
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        if !(self.baseline > 0.0) {
            return Err(Error::InvalidParameter("baseline must be positive".into()));
        }
        Ok(())
    }

    /// World→right-camera pose given the world→left-camera pose.
    pub fn right_pose(&self, left: &PoseSE3) -> PoseSE3 {
        PoseSE3::new(*left.rotation(), left.translation() - Vector3::new(self.baseline, 0.0, 0.0))
    }
}

/// Image segment carrying unit-normal implicit coefficients `a·x + b·y + c = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSegment2D {
    a: f64,
    b: f64,
    c: f64,
    p1: Point2,
    p2: Point2,
}

impl LineSegment2D {
    pub fn a(&self) -> f64 {
        self.a
    }
    pub fn b(&self) -> f64 {
        self.b
    }
    pub fn c(&self) -> f64 {
        self.c
    }
    pub fn p1(&self) -> Point2 {
        self.p1
    }
    pub fn p2(&self) -> Point2 {
        self.p2
    }
    pub fn coefficients(&self) -> Vector3<f64> {
        Vector3::new(self.a, self.b, self.c)
    }

    pub fn length(&self) -> f64 {
        (self.p2 - self.p1).norm()
    }

    pub fn midpoint(&self) -> Point2 {
        nalgebra::center(&self.p1, &self.p2)
    }

    /// Unit direction from `p1` to `p2`.
    pub fn direction(&self) -> Vector2<f64> {
        (self.p2 - self.p1).normalize()
    }

    pub fn reversed(&self) -> Self {
        Self { p1: self.p2, p2: self.p1, ..*self }
    }
}

pub fn segment_from_endpoints(p1: Point2, p2: Point2) -> Result<LineSegment2D> {
    let d = p2 - p1;
    let len = d.norm();
    if !(len > 0.0) || !len.is_finite() {
        return Err(Error::DegenerateSegment);
    }
    let a = -d.y / len;
    let b = d.x / len;
    // Anchor c at the midpoint so both endpoints share the rounding error.
    let m = nalgebra::center(&p1, &p2);
    let c = -(a * m.x + b * m.y);
    Ok(LineSegment2D { a, b, c, p1, p2 })
}

/// Perpendicular distance of a pixel to the infinite line of `l`.
pub fn point_line_distance(p: &Point2, l: &LineSegment2D) -> f64 {
    line_distance(p, &l.coefficients())
}

/// Distance of a pixel to a line given by (possibly unnormalized) coefficients.
pub fn line_distance(p: &Point2, l: &Vector3<f64>) -> f64 {
    (l.x * p.x + l.y * p.y + l.z).abs() / (l.x * l.x + l.y * l.y).sqrt()
}

/// Plücker line `(n, v)` with `n·v = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PluckerLine {
    pub n: Vector3<f64>,
    pub v: Vector3<f64>,
}

impl PluckerLine {
    /// Validates the Plücker constraint (relative to the magnitudes involved).
    pub fn new(n: Vector3<f64>, v: Vector3<f64>) -> Result<Self> {
        if v.norm() == 0.0 || !v.iter().chain(n.iter()).all(|x| x.is_finite()) {
            return Err(Error::DegenerateLine);
        }
        let scale = (n.norm() * v.norm()).max(1.0);
        if n.dot(&v).abs() > EXACT_TOL * scale {
            return Err(Error::InvalidParameter(format!("Plücker constraint violated: n·v = {:e}", n.dot(&v))));
        }
        Ok(Self { n, v })
    }

    /// Rescaled so that `‖v‖ = 1`, the storage convention.
    pub fn normalized(&self) -> Self {
        let s = self.v.norm();
        Self { n: self.n / s, v: self.v / s }
    }

    pub fn constraint_residual(&self) -> f64 {
        self.n.dot(&self.v)
    }

    pub fn direction(&self) -> Vector3<f64> {
        self.v.normalize()
    }

    /// Point of the line closest to the origin.
    pub fn closest_point_to_origin(&self) -> Point3 {
        Point3::from(self.v.cross(&self.n) / self.v.norm_squared())
    }

    pub fn distance_to_point(&self, x: &Point3) -> f64 {
        let d = self.direction();
        let rel = x - self.closest_point_to_origin();
        (rel - d * rel.dot(&d)).norm()
    }

    /// Angle between the two line directions, orientation ignored.
    pub fn direction_angle(&self, other: &PluckerLine) -> f64 {
        let c = self.direction().dot(&other.direction()).abs().min(1.0);
        let s = self.direction().cross(&other.direction()).norm();
        s.atan2(c)
    }

    /// Largest distance from points of `other` near the origin to `self`,
    /// a symmetric-enough closeness measure for tests.
    pub fn line_distance(&self, other: &PluckerLine) -> f64 {
        let a = self.distance_to_point(&other.closest_point_to_origin());
        let b = other.distance_to_point(&self.closest_point_to_origin());
        a.max(b)
    }

    /// Whether two lines coincide as point sets (orientation ignored).
    pub fn same_line(&self, other: &PluckerLine, angle_tol: f64, dist_tol: f64) -> bool {
        self.direction_angle(other) < angle_tol && self.line_distance(other) < dist_tol
    }

    pub fn reversed(&self) -> Self {
        Self { n: -self.n, v: -self.v }
    }
}

/// Minimal line representation `(U, W) ∈ SO(3) × SO(2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrthonormalLine {
    u: Matrix3<f64>,
    w: Rotation2<f64>,
    updates_since_projection: u32,
}

impl OrthonormalLine {
    pub fn new(u: Matrix3<f64>, w: Rotation2<f64>) -> Result<Self> {
        let ortho = (u.transpose() * u - Matrix3::identity()).amax();
        if ortho > EXACT_TOL || (u.determinant() - 1.0).abs() > EXACT_TOL {
            return Err(Error::InvalidParameter("U not in SO(3)".into()));
        }
        Ok(Self { u, w, updates_since_projection: 0 })
    }

    pub fn u(&self) -> &Matrix3<f64> {
        &self.u
    }

    pub fn w(&self) -> &Rotation2<f64> {
        &self.w
    }

    /// Angle of `W` as a planar rotation.
    pub fn w_angle(&self) -> f64 {
        self.w.angle()
    }

    pub fn w_matrix(&self) -> Matrix2<f64> {
        *self.w.matrix()
    }
}

/// Closed-form conversion: `U = [n/‖n‖, v/‖v‖, n×v/‖n×v‖]`,
/// `W` the rotation whose first column is `(‖n‖, ‖v‖)/‖(‖n‖, ‖v‖)‖`.
pub fn plucker_to_orthonormal(line: &PluckerLine) -> Result<OrthonormalLine> {
    let nn = line.n.norm();
    let vn = line.v.norm();
    if vn == 0.0 {
        return Err(Error::DegenerateLine);
    }
    if nn <= EXACT_TOL * vn {
        return Err(Error::LineThroughOrigin);
    }
    let u1 = line.n / nn;
    let u2 = line.v / vn;
    let u3 = u1.cross(&u2);
    let u3 = u3 / u3.norm();
    // Re-orthogonalize u2 so U is exactly orthonormal even with a tiny n·v.
    let u2 = u3.cross(&u1);
    let u = Matrix3::from_columns(&[u1, u2, u3]);
    Ok(OrthonormalLine { u, w: Rotation2::new(vn.atan2(nn)), updates_since_projection: 0 })
}

/// The same conversion through a QR factorization of the 3×2 matrix `[n | v]`.
pub fn plucker_to_orthonormal_qr(line: &PluckerLine) -> Result<OrthonormalLine> {
    let vn = line.v.norm();
    if vn == 0.0 {
        return Err(Error::DegenerateLine);
    }
    if line.n.norm() <= EXACT_TOL * vn {
        return Err(Error::LineThroughOrigin);
    }
    let m = nalgebra::Matrix3x2::from_columns(&[line.n, line.v]);
    let qr = m.qr();
    let mut q = qr.q();
    let mut r = qr.r();
    for k in 0..2 {
        if r[(k, k)] < 0.0 {
            q.column_mut(k).neg_mut();
            r.row_mut(k).neg_mut();
        }
    }
    let q1: Vector3<f64> = q.column(0).into();
    let q2: Vector3<f64> = q.column(1).into();
    let u = Matrix3::from_columns(&[q1, q2, q1.cross(&q2)]);
    Ok(OrthonormalLine { u, w: Rotation2::new(r[(1, 1)].atan2(r[(0, 0)])), updates_since_projection: 0 })
}

/// `n = w₁₁·u₁`, `v = w₂₁·u₂`. The scale is that of a unit `(w₁₁, w₂₁)`.
pub fn orthonormal_to_plucker(line: &OrthonormalLine) -> Result<PluckerLine> {
    let w = line.w.matrix();
    let n = line.u.column(0) * w[(0, 0)];
    let v = line.u.column(1) * w[(1, 0)];
    if v.norm() <= EXACT_TOL {
        return Err(Error::DegenerateLine);
    }
    Ok(PluckerLine { n: n.into(), v: v.into() })
}

/// Plücker line through two points, direction `v = (X1 − X2)/‖X1 − X2‖`.
///
/// The moment is `n = X1 × v`, i.e. `(X2 × X1)/‖X1 − X2‖`, which keeps the
/// result consistent with [`transform_line`] and [`project_line`].
pub fn plucker_from_two_points(x1: &Point3, x2: &Point3) -> Result<PluckerLine> {
    let d = x1 - x2;
    let len = d.norm();
    if !(len > 0.0) {
        return Err(Error::CoincidentPoints);
    }
    let v = d / len;
    let n = x2.coords.cross(&x1.coords) / len;
    Ok(PluckerLine { n, v })
}

/// World→camera line transform: `n_c = R·n + [t]×·R·v`, `v_c = R·v`.
pub fn transform_line(pose: &PoseSE3, line: &PluckerLine) -> PluckerLine {
    let r = pose.rotation();
    let rv = r * line.v;
    PluckerLine { n: r * line.n + pose.translation().cross(&rv), v: rv }
}

/// Raw image-line coefficients `P·n_c` before normalization.
pub fn project_line_raw(k: &PinholeIntrinsics, line_cam: &PluckerLine) -> Vector3<f64> {
    k.line_projection_matrix() * line_cam.n
}

/// Projects a camera-frame line to unit-normalized image coefficients.
pub fn project_line(k: &PinholeIntrinsics, line_cam: &PluckerLine) -> Result<Vector3<f64>> {
    if line_cam.n.norm() <= EXACT_TOL * line_cam.v.norm() {
        return Err(Error::ProjectionUndefined);
    }
    let l = project_line_raw(k, line_cam);
    let s = (l.x * l.x + l.y * l.y).sqrt();
    // A line in the camera's z = 0 plane projects to the line at infinity.
    if s <= EXACT_TOL * l.norm() {
        return Err(Error::ProjectionUndefined);
    }
    Ok(l / s)
}

/// Minimal update `U ← U·Exp([δ₁ δ₂ δ₃]×)`, `W ← W·Rot(δ₄)`.
pub fn orthonormal_update(line: &OrthonormalLine, delta: &Vector4<f64>) -> OrthonormalLine {
    let dr = Rotation3::new(Vector3::new(delta[0], delta[1], delta[2]));
    let mut u = line.u * dr.matrix();
    let mut w = line.w * Rotation2::new(delta[3]);
    let mut count = line.updates_since_projection + 1;
    if count >= REORTHONORMALIZE_EVERY {
        u = project_to_so3(&u);
        w = Rotation2::new(w.angle());
        count = 0;
    }
    OrthonormalLine { u, w, updates_since_projection: count }
}

/// Derivatives of the Plücker coordinates `(n, v)` (from
/// [`orthonormal_to_plucker`]) with respect to the update of
/// [`orthonormal_update`], evaluated at `δ = 0`.
pub fn plucker_update_jacobian(line: &OrthonormalLine) -> (nalgebra::Matrix3x4<f64>, nalgebra::Matrix3x4<f64>) {
    let u1: Vector3<f64> = line.u.column(0).into();
    let u2: Vector3<f64> = line.u.column(1).into();
    let u3: Vector3<f64> = line.u.column(2).into();
    let w = line.w.matrix();
    let (w1, w2) = (w[(0, 0)], w[(1, 0)]);
    let dn = nalgebra::Matrix3x4::from_columns(&[Vector3::zeros(), -w1 * u3, w1 * u2, -w2 * u1]);
    let dv = nalgebra::Matrix3x4::from_columns(&[w2 * u3, Vector3::zeros(), -w2 * u1, w1 * u2]);
    (dn, dv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_4};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn same_up_to_sign(s: &LineSegment2D, a: f64, b: f64, c: f64) -> bool {
        let plus = close(s.a(), a, 1e-12) && close(s.b(), b, 1e-12) && close(s.c(), c, 1e-12);
        let minus = close(s.a(), -a, 1e-12) && close(s.b(), -b, 1e-12) && close(s.c(), -c, 1e-12);
        plus || minus
    }

    #[test]
    fn segment_coefficients() {
        let s = segment_from_endpoints(Point2::new(0.0, 0.0), Point2::new(4.0, 0.0)).unwrap();
        assert!(same_up_to_sign(&s, 0.0, 1.0, 0.0));
        let s = segment_from_endpoints(Point2::new(0.0, 0.0), Point2::new(0.0, 5.0)).unwrap();
        assert!(same_up_to_sign(&s, 1.0, 0.0, 0.0));
        let s = segment_from_endpoints(Point2::new(0.0, 1.0), Point2::new(1.0, 0.0)).unwrap();
        assert!(same_up_to_sign(&s, FRAC_1_SQRT_2, FRAC_1_SQRT_2, -FRAC_1_SQRT_2));
        assert_eq!(
            segment_from_endpoints(Point2::new(1.0, 1.0), Point2::new(1.0, 1.0)),
            Err(Error::DegenerateSegment)
        );
    }

    #[test]
    fn distances() {
        let axis = segment_from_endpoints(Point2::new(0.0, -1.0), Point2::new(0.0, 1.0)).unwrap();
        assert!(close(point_line_distance(&Point2::new(3.0, 4.0), &axis), 3.0, 1e-12));
        assert!(close(point_line_distance(&Point2::new(0.0, 7.0), &axis), 0.0, 1e-12));
        let l = Vector3::new(3.0, 4.0, 12.0) / 5.0;
        assert!(close(line_distance(&Point2::origin(), &l), 2.4, 1e-12));
        // Unnormalized coefficients give the same value.
        assert!(close(line_distance(&Point2::origin(), &Vector3::new(3.0, 4.0, 12.0)), 2.4, 1e-12));
    }

    #[test]
    fn orthonormal_axis_cases() {
        let l = PluckerLine::new(Vector3::z(), Vector3::x()).unwrap();
        let o = plucker_to_orthonormal(&l).unwrap();
        assert!((o.u() - Matrix3::from_columns(&[Vector3::z(), Vector3::x(), Vector3::y()])).amax() < 1e-15);
        assert!(close(o.w_angle(), FRAC_PI_4, 1e-15));

        let l = PluckerLine::new(Vector3::new(0.0, 0.0, 2.0), Vector3::x()).unwrap();
        let o = plucker_to_orthonormal(&l).unwrap();
        assert!((o.u() - Matrix3::from_columns(&[Vector3::z(), Vector3::x(), Vector3::y()])).amax() < 1e-15);
        assert!(close(o.w_angle(), 1f64.atan2(2.0), 1e-15));

        let qr = plucker_to_orthonormal_qr(&l).unwrap();
        assert!((qr.u() - o.u()).amax() < 1e-12);
        assert!(close(qr.w_angle(), o.w_angle(), 1e-12));
    }

    #[test]
    fn orthonormal_to_plucker_cases() {
        let o = OrthonormalLine::new(Matrix3::identity(), Rotation2::new(FRAC_PI_4)).unwrap();
        let l = orthonormal_to_plucker(&o).unwrap();
        assert!((l.n - Vector3::x() * FRAC_1_SQRT_2).norm() < 1e-15);
        assert!((l.v - Vector3::y() * FRAC_1_SQRT_2).norm() < 1e-15);

        let o = OrthonormalLine::new(Matrix3::identity(), Rotation2::identity()).unwrap();
        assert_eq!(orthonormal_to_plucker(&o), Err(Error::DegenerateLine));
    }

    #[test]
    fn line_through_origin_is_signaled() {
        let l = plucker_from_two_points(&Point3::new(1.0, 0.0, 0.0), &Point3::new(2.0, 0.0, 0.0)).unwrap();
        assert_eq!(l.n, Vector3::zeros());
        assert_eq!(l.v, Vector3::new(-1.0, 0.0, 0.0));
        assert_eq!(plucker_to_orthonormal(&l), Err(Error::LineThroughOrigin));
    }

    #[test]
    fn two_point_lines() {
        let l = plucker_from_two_points(&Point3::new(1.0, 0.0, 0.0), &Point3::new(0.0, 1.0, 0.0)).unwrap();
        assert!((l.v - Vector3::new(1.0, -1.0, 0.0) / 2f64.sqrt()).norm() < 1e-15);
        assert!((l.n - Vector3::new(0.0, 0.0, -1.0) / 2f64.sqrt()).norm() < 1e-15);

        let x1 = Point3::new(1.0, 1.0, 1.0);
        let x2 = Point3::new(2.0, 3.0, 5.0);
        let l = plucker_from_two_points(&x1, &x2).unwrap();
        let s21 = 21f64.sqrt();
        assert!((l.v - Vector3::new(-1.0, -2.0, -4.0) / s21).norm() < 1e-15);
        assert!((l.n - Vector3::new(-2.0, 3.0, -1.0) / s21).norm() < 1e-15);
        // Both points lie on the represented line.
        assert!(l.distance_to_point(&x1) < 1e-12);
        assert!(l.distance_to_point(&x2) < 1e-12);
        assert!((x1.coords.cross(&l.v) - l.n).norm() < 1e-15);

        assert_eq!(plucker_from_two_points(&x1, &x1), Err(Error::CoincidentPoints));
    }

    #[test]
    fn transform_identity_and_rotation() {
        let l = plucker_from_two_points(&Point3::new(1.0, 2.0, 3.0), &Point3::new(-1.0, 0.5, 4.0)).unwrap();
        let t = transform_line(&PoseSE3::identity(), &l);
        assert_eq!(t, l);
        let r = Rotation3::from_euler_angles(0.3, -0.2, 1.1);
        let t = transform_line(&PoseSE3::new(r, Vector3::zeros()), &l);
        assert!((t.n - r * l.n).norm() < 1e-15);
        assert!((t.v - r * l.v).norm() < 1e-15);
    }

    #[test]
    fn project_line_matrix() {
        let k = PinholeIntrinsics { fx: 1.0, fy: 1.0, cx: 0.0, cy: 0.0, width: 10, height: 10 };
        let l = PluckerLine { n: Vector3::new(0.3, -0.4, 1.2), v: Vector3::new(4.0, 3.0, 0.0) };
        assert!((project_line_raw(&k, &l) - l.n).norm() < 1e-15);

        let k = PinholeIntrinsics { fx: 100.0, fy: 100.0, cx: 50.0, cy: 50.0, width: 100, height: 100 };
        let l = PluckerLine { n: Vector3::x(), v: Vector3::y() };
        assert!((project_line_raw(&k, &l) - Vector3::new(100.0, 0.0, -5000.0)).norm() < 1e-12);
        // n_c = (0, 0, 1): the line lies in the camera's z = 0 plane.
        let l = PluckerLine { n: Vector3::z(), v: Vector3::x() };
        assert_eq!(project_line(&k, &l), Err(Error::ProjectionUndefined));
        let l = PluckerLine { n: Vector3::zeros(), v: Vector3::z() };
        assert_eq!(project_line(&k, &l), Err(Error::ProjectionUndefined));
    }

    #[test]
    fn project_line_matches_point_projection_anisotropic() {
        let k = PinholeIntrinsics { fx: 410.0, fy: 380.0, cx: 322.0, cy: 241.0, width: 640, height: 480 };
        let x1 = Point3::new(-0.4, 0.3, 3.0);
        let x2 = Point3::new(0.7, -0.2, 4.5);
        let l = plucker_from_two_points(&x1, &x2).unwrap();
        let coeffs = project_line(&k, &l).unwrap();
        for x in [x1, x2] {
            let p = k.project(&x).unwrap();
            assert!(line_distance(&p, &coeffs) < 1e-9);
        }
    }

    #[test]
    fn update_blocks() {
        let l = plucker_from_two_points(&Point3::new(1.0, 2.0, 3.0), &Point3::new(-1.0, 0.5, 4.0)).unwrap();
        let o = plucker_to_orthonormal(&l).unwrap();
        let same = orthonormal_update(&o, &Vector4::zeros());
        assert!((same.u() - o.u()).amax() < 1e-15);
        assert!(close(same.w_angle(), o.w_angle(), 1e-15));
        let rot = orthonormal_update(&o, &Vector4::new(0.0, 0.0, 0.0, 0.2));
        assert!((rot.u() - o.u()).amax() < 1e-15);
        assert!(close(rot.w_angle(), o.w_angle() + 0.2, 1e-14));
    }

    #[test]
    fn small_updates_compose_to_first_order() {
        let l = plucker_from_two_points(&Point3::new(1.0, 2.0, 3.0), &Point3::new(-1.0, 0.5, 4.0)).unwrap();
        let o = plucker_to_orthonormal(&l).unwrap();
        let d1 = Vector4::new(1.0, -2.0, 0.5, 0.3);
        let d2 = Vector4::new(-0.4, 0.7, 1.2, -0.8);
        let mut prev = f64::INFINITY;
        for eps in [1e-2, 1e-3, 1e-4] {
            let chained = orthonormal_update(&orthonormal_update(&o, &(d1 * eps)), &(d2 * eps));
            let summed = orthonormal_update(&o, &((d1 + d2) * eps));
            let err = (chained.u() - summed.u()).amax() + (chained.w_angle() - summed.w_angle()).abs();
            // Second-order discrepancy: shrinks ~100x per decade.
            assert!(err < 2.0 * eps * eps, "eps {eps}: {err}");
            assert!(err < prev);
            prev = err;
        }
    }

    #[test]
    fn pose_inverse_and_tum_round_trip() {
        let p = PoseSE3::new(Rotation3::from_euler_angles(0.1, 0.2, -0.3), Vector3::new(1.0, -2.0, 0.5));
        let id = p.compose(&p.inverse());
        assert!(id.rotation().angle() < 1e-12 && id.translation().norm() < 1e-12);
        let (t, q) = p.to_tum();
        let back = PoseSE3::from_tum(t, q).unwrap();
        assert!(back.angle_to(&p) < 1e-12 && (back.translation() - p.translation()).norm() < 1e-12);
        assert!((p.center().coords - Vector3::from(t)).norm() < 1e-12);
    }

    #[test]
    fn pose_rejects_non_rotation() {
        let m = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(PoseSE3::from_matrix(m, Vector3::zeros()).is_err());
    }
}
