//! Point and line reprojection residuals with analytic Jacobians.
//!
//! Pose increments are `δ = (ρ, φ)` as in [`PoseSE3::retract`]; line
//! increments are the 4-vector of [`orthonormal_update`](crate::geometry::orthonormal_update).

use nalgebra::{Matrix2x3, Matrix2x4, Matrix2x6, Matrix3, Matrix3x6, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{
    orthonormal_to_plucker, plucker_update_jacobian, project_line, skew, transform_line, LineSegment2D,
    OrthonormalLine, PinholeIntrinsics, PluckerLine, Point2, Point3, PoseSE3,
};

/// Distances of both observed endpoints to the reprojected line, pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineResidual {
    pub value: Vector2<f64>,
}

/// Observation minus projection, pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointResidual {
    pub value: Vector2<f64>,
}

pub fn point_residual(x_world: &Point3, pose: &PoseSE3, k: &PinholeIntrinsics, obs: &Point2) -> Result<PointResidual> {
    let projected = k.project(&pose.transform_point(x_world))?;
    Ok(PointResidual { value: obs - projected })
}

/// Signed endpoint-to-line distances; the sign is that of `a·x + b·y + c`
/// with the unit-normalized reprojected coefficients.
pub fn line_residual_signed(
    line_world: &PluckerLine,
    pose: &PoseSE3,
    k: &PinholeIntrinsics,
    obs: &LineSegment2D,
) -> Result<Vector2<f64>> {
    let l = project_line(k, &transform_line(pose, line_world))?;
    let eval = |p: Point2| l.x * p.x + l.y * p.y + l.z;
    Ok(Vector2::new(eval(obs.p1()), eval(obs.p2())))
}

pub fn line_residual(line_world: &PluckerLine, pose: &PoseSE3, k: &PinholeIntrinsics, obs: &LineSegment2D) -> Result<LineResidual> {
    Ok(LineResidual { value: line_residual_signed(line_world, pose, k, obs)?.abs() })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointJacobians {
    pub residual: Vector2<f64>,
    pub d_pose: Matrix2x6<f64>,
    pub d_point: Matrix2x3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineJacobians {
    /// Signed residual.
    pub residual: Vector2<f64>,
    pub d_pose: Matrix2x6<f64>,
    pub d_line: Matrix2x4<f64>,
}

/// `∂π/∂X` of the pinhole projection at a camera-frame point.
pub fn projection_jacobian(k: &PinholeIntrinsics, x_cam: &Point3) -> Matrix2x3<f64> {
    let (x, y, z) = (x_cam.x, x_cam.y, x_cam.z);
    let iz = 1.0 / z;
    Matrix2x3::new(k.fx * iz, 0.0, -k.fx * x * iz * iz, 0.0, k.fy * iz, -k.fy * y * iz * iz)
}

pub fn point_jacobians(x_world: &Point3, pose: &PoseSE3, k: &PinholeIntrinsics, obs: &Point2) -> Result<PointJacobians> {
    let rx = pose.rotation() * x_world.coords;
    let x_cam = Point3::from(rx + pose.translation());
    let projected = k.project(&x_cam)?;
    let jp = projection_jacobian(k, &x_cam);
    let mut d_xc_d_pose = Matrix3x6::zeros();
    d_xc_d_pose.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
    d_xc_d_pose.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-skew(&rx)));
    Ok(PointJacobians {
        residual: obs - projected,
        d_pose: -jp * d_xc_d_pose,
        d_point: -jp * pose.rotation().matrix(),
    })
}

/// Jacobians of the signed line residual at a line in orthonormal form.
pub fn line_jacobians(line: &OrthonormalLine, pose: &PoseSE3, k: &PinholeIntrinsics, obs: &LineSegment2D) -> Result<LineJacobians> {
    let plucker = orthonormal_to_plucker(line)?;
    let (dn_dl, dv_dl) = plucker_update_jacobian(line);
    let (r, d_pose, d_nv) = line_jacobians_plucker(&plucker, pose, k, obs)?;
    let d_n = d_nv.fixed_view::<2, 3>(0, 0);
    let d_v = d_nv.fixed_view::<2, 3>(0, 3);
    Ok(LineJacobians { residual: r, d_pose, d_line: d_n * dn_dl + d_v * dv_dl })
}

/// Signed residual, its pose Jacobian and its Jacobian w.r.t. the world
/// Plücker coordinates `(n, v)` stacked as a 6-vector.
pub fn line_jacobians_plucker(
    line: &PluckerLine,
    pose: &PoseSE3,
    k: &PinholeIntrinsics,
    obs: &LineSegment2D,
) -> Result<(Vector2<f64>, Matrix2x6<f64>, nalgebra::Matrix2x6<f64>)> {
    let r_mat = pose.rotation().matrix();
    let t = pose.translation();
    let cam = transform_line(pose, line);
    if cam.n.norm() <= 1e-12 * cam.v.norm() {
        return Err(Error::ProjectionUndefined);
    }
    let p = k.line_projection_matrix();
    let l = p * cam.n;
    let s2 = l.x * l.x + l.y * l.y;
    if s2 <= 1e-24 * l.norm_squared() {
        return Err(Error::ProjectionUndefined);
    }
    let s = s2.sqrt();

    let mut residual = Vector2::zeros();
    let mut d_l = nalgebra::Matrix2x3::zeros();
    for (row, pt) in [obs.p1(), obs.p2()].iter().enumerate() {
        let e = l.x * pt.x + l.y * pt.y + l.z;
        residual[row] = e / s;
        let g = Vector3::new(pt.x / s - e * l.x / (s * s2), pt.y / s - e * l.y / (s * s2), 1.0 / s);
        d_l.set_row(row, &g.transpose());
    }

    let rn = r_mat * line.n;
    let rv = r_mat * line.v;
    let mut dnc_dpose = Matrix3x6::zeros();
    dnc_dpose.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew(&rv)));
    dnc_dpose.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-skew(&rn) - skew(t) * skew(&rv)));

    let d_nc = d_l * p;
    let mut d_nv = nalgebra::Matrix2x6::zeros();
    d_nv.fixed_view_mut::<2, 3>(0, 0).copy_from(&(d_nc * r_mat));
    d_nv.fixed_view_mut::<2, 3>(0, 3).copy_from(&(d_nc * skew(t) * r_mat));
    Ok((residual, d_nc * dnc_dpose, d_nv))
}
