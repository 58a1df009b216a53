//! Levenberg-Marquardt over poses, points and orthonormal lines.
//!
//! Landmarks only couple to poses, so every landmark block is eliminated
//! with a Schur complement and only the (small) pose system is factorized.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Vector2, Vector3, Vector4, Vector6};
use serde::{Deserialize, Serialize};

use super::residuals::{line_jacobians, line_jacobians_plucker, point_jacobians};
use super::robust::HuberKernel;
use crate::error::{Error, Result};
use crate::geometry::{
    orthonormal_to_plucker, orthonormal_update, LineSegment2D, OrthonormalLine, PinholeIntrinsics, PluckerLine, Point2,
    Point3, PoseSE3,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub initial_lambda: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    pub max_iterations: usize,
    pub relative_tolerance: f64,
    pub kernel: HuberKernel,
    pub point_sigma: f64,
    pub line_sigma: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            initial_lambda: 1e-4,
            lambda_up: 10.0,
            lambda_down: 0.1,
            max_iterations: 20,
            relative_tolerance: 1e-8,
            kernel: HuberKernel::default(),
            point_sigma: 1.0,
            line_sigma: 1.0,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.initial_lambda > 0.0
            && self.lambda_up > 1.0
            && self.lambda_down > 0.0
            && self.lambda_down < 1.0
            && self.max_iterations > 0
            && self.relative_tolerance >= 0.0
            && self.kernel.delta > 0.0
            && self.point_sigma > 0.0
            && self.line_sigma > 0.0;
        if !ok {
            return Err(Error::InvalidParameter("invalid optimizer configuration".into()));
        }
        Ok(())
    }
}

/// A line variable; lines through the origin cannot take orthonormal
/// updates and stay fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LineParam {
    Free(OrthonormalLine),
    Fixed(PluckerLine),
}

impl LineParam {
    pub fn plucker(&self) -> Result<PluckerLine> {
        match self {
            LineParam::Free(o) => Ok(orthonormal_to_plucker(o)?.normalized()),
            LineParam::Fixed(p) => Ok(*p),
        }
    }
}

/// Observation by a camera offset `x_offset` meters along the keyframe's +X
/// axis (0 for the left camera, the baseline for the right one).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointObservation {
    pub pose: usize,
    pub point: usize,
    pub pixel: Point2,
    pub x_offset: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineObservation {
    pub pose: usize,
    pub line: usize,
    pub segment: LineSegment2D,
    pub x_offset: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaState {
    pub poses: Vec<PoseSE3>,
    pub points: Vec<Point3>,
    pub lines: Vec<LineParam>,
}

#[derive(Debug, Clone)]
pub struct BaProblem {
    pub intrinsics: PinholeIntrinsics,
    pub state: BaState,
    pub fixed_poses: Vec<bool>,
    pub fixed_points: Vec<bool>,
    pub point_obs: Vec<PointObservation>,
    pub line_obs: Vec<LineObservation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub cost: f64,
    pub lambda: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BaReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub accepted_steps: usize,
    pub log: Vec<IterationLog>,
}

impl BaReport {
    /// CSV cost trace: `iteration,cost,lambda,accepted`.
    pub fn cost_csv(&self) -> String {
        let mut s = String::from("iteration,cost,lambda,accepted\n");
        for l in &self.log {
            s.push_str(&format!("{},{:.12e},{:.3e},{}\n", l.iteration, l.cost, l.lambda, l.accepted as u8));
        }
        s
    }
}

fn offset_pose(pose: &PoseSE3, x_offset: f64) -> PoseSE3 {
    if x_offset == 0.0 {
        *pose
    } else {
        PoseSE3::new(*pose.rotation(), pose.translation() - Vector3::new(x_offset, 0.0, 0.0))
    }
}

struct Landmark {
    dim: usize,
    hll: DMatrix<f64>,
    gl: DVector<f64>,
    /// Pose variable index → 6×dim coupling block.
    couplings: BTreeMap<usize, DMatrix<f64>>,
}

impl Landmark {
    fn new(dim: usize) -> Self {
        Self { dim, hll: DMatrix::zeros(dim, dim), gl: DVector::zeros(dim), couplings: BTreeMap::new() }
    }
}

struct LinearSystem {
    hpp: DMatrix<f64>,
    gp: DVector<f64>,
    /// (kind, index) keyed landmarks: kind 0 = point, 1 = line.
    landmarks: BTreeMap<(u8, usize), Landmark>,
}

impl BaProblem {
    pub fn new(intrinsics: PinholeIntrinsics, state: BaState) -> Self {
        let np = state.poses.len();
        let npt = state.points.len();
        Self {
            intrinsics,
            state,
            fixed_poses: vec![false; np],
            fixed_points: vec![false; npt],
            point_obs: Vec::new(),
            line_obs: Vec::new(),
        }
    }

    fn point_residual_at(&self, state: &BaState, o: &PointObservation) -> Option<Vector2<f64>> {
        let pose = offset_pose(&state.poses[o.pose], o.x_offset);
        super::residuals::point_residual(&state.points[o.point], &pose, &self.intrinsics, &o.pixel)
            .ok()
            .map(|r| r.value)
    }

    fn line_residual_at(&self, state: &BaState, o: &LineObservation) -> Option<Vector2<f64>> {
        let pose = offset_pose(&state.poses[o.pose], o.x_offset);
        let line = state.lines[o.line].plucker().ok()?;
        super::residuals::line_residual_signed(&line, &pose, &self.intrinsics, &o.segment).ok()
    }

    /// Which observations are evaluable at the current state.
    fn active_masks(&self) -> (Vec<bool>, Vec<bool>) {
        (
            self.point_obs.iter().map(|o| self.point_residual_at(&self.state, o).is_some()).collect(),
            self.line_obs.iter().map(|o| self.line_residual_at(&self.state, o).is_some()).collect(),
        )
    }

    /// Robust cost; `None` when an active residual became undefined.
    fn cost_of(&self, state: &BaState, masks: &(Vec<bool>, Vec<bool>), config: &LmConfig) -> Option<f64> {
        let mut cost = 0.0;
        for (o, active) in self.point_obs.iter().zip(&masks.0) {
            if *active {
                let r = self.point_residual_at(state, o)?;
                cost += config.kernel.cost(r.norm_squared() / (config.point_sigma * config.point_sigma));
            }
        }
        for (o, active) in self.line_obs.iter().zip(&masks.1) {
            if *active {
                let r = self.line_residual_at(state, o)?;
                cost += config.kernel.cost(r.norm_squared() / (config.line_sigma * config.line_sigma));
            }
        }
        cost.is_finite().then_some(cost)
    }

    /// Robust cost of all currently evaluable residuals.
    pub fn total_cost(&self, config: &LmConfig) -> f64 {
        let masks = self.active_masks();
        self.cost_of(&self.state, &masks, config).unwrap_or(f64::INFINITY)
    }

    /// Plain (non-robust) squared residual sum.
    pub fn squared_error(&self) -> f64 {
        let p: f64 = self.point_obs.iter().filter_map(|o| self.point_residual_at(&self.state, o)).map(|r| r.norm_squared()).sum();
        let l: f64 = self.line_obs.iter().filter_map(|o| self.line_residual_at(&self.state, o)).map(|r| r.norm_squared()).sum();
        p + l
    }

    fn pose_vars(&self) -> (Vec<Option<usize>>, usize) {
        let mut next = 0;
        let vars = self
            .fixed_poses
            .iter()
            .map(|fixed| {
                (!fixed).then(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect();
        (vars, next)
    }

    fn build(&self, masks: &(Vec<bool>, Vec<bool>), config: &LmConfig, pose_vars: &[Option<usize>], n_pose_vars: usize) -> LinearSystem {
        let mut sys = LinearSystem {
            hpp: DMatrix::zeros(6 * n_pose_vars, 6 * n_pose_vars),
            gp: DVector::zeros(6 * n_pose_vars),
            landmarks: BTreeMap::new(),
        };
        let k = &self.intrinsics;
        for (o, active) in self.point_obs.iter().zip(&masks.0) {
            if !*active {
                continue;
            }
            let pose = offset_pose(&self.state.poses[o.pose], o.x_offset);
            let Ok(j) = point_jacobians(&self.state.points[o.point], &pose, k, &o.pixel) else { continue };
            let inv_var = 1.0 / (config.point_sigma * config.point_sigma);
            let w = config.kernel.weight(j.residual.norm_squared() * inv_var) * inv_var;
            let jp = (!self.fixed_points[o.point]).then(|| DMatrix::from_column_slice(2, 3, j.d_point.as_slice()));
            let jc = pose_vars[o.pose].map(|v| (v, DMatrix::from_column_slice(2, 6, j.d_pose.as_slice())));
            accumulate(&mut sys, (0, o.point), jp, jc, &j.residual, w);
        }
        for (o, active) in self.line_obs.iter().zip(&masks.1) {
            if !*active {
                continue;
            }
            let pose = offset_pose(&self.state.poses[o.pose], o.x_offset);
            let (residual, d_pose, d_line) = match &self.state.lines[o.line] {
                LineParam::Free(ortho) => {
                    let Ok(j) = line_jacobians(ortho, &pose, k, &o.segment) else { continue };
                    (j.residual, j.d_pose, Some(DMatrix::from_column_slice(2, 4, j.d_line.as_slice())))
                }
                LineParam::Fixed(pl) => {
                    let Ok((r, dp, _)) = line_jacobians_plucker(pl, &pose, k, &o.segment) else { continue };
                    (r, dp, None)
                }
            };
            let inv_var = 1.0 / (config.line_sigma * config.line_sigma);
            let w = config.kernel.weight(residual.norm_squared() * inv_var) * inv_var;
            let jc = pose_vars[o.pose].map(|v| (v, DMatrix::from_column_slice(2, 6, d_pose.as_slice())));
            accumulate(&mut sys, (1, o.line), d_line, jc, &residual, w);
        }
        sys
    }

    fn apply(&self, step: &Step, pose_vars: &[Option<usize>]) -> BaState {
        let mut next = self.state.clone();
        for (i, var) in pose_vars.iter().enumerate() {
            if let Some(v) = var {
                let d = Vector6::from_iterator(step.poses.rows(6 * v, 6).iter().copied());
                next.poses[i] = self.state.poses[i].retract(&d);
            }
        }
        for ((kind, idx), d) in &step.landmarks {
            match kind {
                0 => next.points[*idx] += Vector3::new(d[0], d[1], d[2]),
                _ => {
                    if let LineParam::Free(o) = &self.state.lines[*idx] {
                        next.lines[*idx] = LineParam::Free(orthonormal_update(o, &Vector4::new(d[0], d[1], d[2], d[3])));
                    }
                }
            }
        }
        next
    }

    /// Runs Levenberg-Marquardt in place. On numerical failure the state is
    /// left at its pre-optimization value and an error is returned.
    pub fn solve(&mut self, config: &LmConfig) -> Result<BaReport> {
        config.validate()?;
        let masks = self.active_masks();
        let (pose_vars, n_pose_vars) = self.pose_vars();
        let initial = self.state.clone();
        let mut cost = self.cost_of(&self.state, &masks, config).ok_or(Error::Diverged)?;
        let mut report = BaReport { initial_cost: cost, final_cost: cost, ..Default::default() };
        let mut lambda = config.initial_lambda;
        let mut iteration = 0;
        let mut any_solve = false;

        'outer: while iteration < config.max_iterations && cost > 0.0 {
            let sys = self.build(&masks, config, &pose_vars, n_pose_vars);
            loop {
                if iteration >= config.max_iterations {
                    break 'outer;
                }
                iteration += 1;
                let Some(step) = solve_damped(&sys, lambda) else {
                    lambda *= config.lambda_up;
                    report.log.push(IterationLog { iteration, cost, lambda, accepted: false });
                    if lambda > 1e16 {
                        break 'outer;
                    }
                    continue;
                };
                any_solve = true;
                let candidate = self.apply(&step, &pose_vars);
                match self.cost_of(&candidate, &masks, config) {
                    Some(new_cost) if new_cost < cost => {
                        let rel = (cost - new_cost) / cost;
                        self.state = candidate;
                        cost = new_cost;
                        lambda = (lambda * config.lambda_down).max(1e-12);
                        report.accepted_steps += 1;
                        report.log.push(IterationLog { iteration, cost, lambda, accepted: true });
                        if rel < config.relative_tolerance {
                            break 'outer;
                        }
                        continue 'outer;
                    }
                    _ => {
                        lambda *= config.lambda_up;
                        report.log.push(IterationLog { iteration, cost, lambda, accepted: false });
                        if lambda > 1e16 {
                            break 'outer;
                        }
                    }
                }
            }
        }
        if !any_solve && iteration > 0 {
            self.state = initial;
            return Err(Error::Diverged);
        }
        report.iterations = iteration;
        report.final_cost = cost;
        Ok(report)
    }
}

fn accumulate(
    sys: &mut LinearSystem,
    key: (u8, usize),
    j_landmark: Option<DMatrix<f64>>,
    j_pose: Option<(usize, DMatrix<f64>)>,
    residual: &Vector2<f64>,
    w: f64,
) {
    let r = DVector::from_column_slice(residual.as_slice());
    if let Some((v, jc)) = &j_pose {
        let jt = jc.transpose();
        let mut block = sys.hpp.view_mut((6 * v, 6 * v), (6, 6));
        block += &jt * jc * w;
        let mut g = sys.gp.rows_mut(6 * v, 6);
        g -= &jt * &r * w;
    }
    if let Some(jl) = j_landmark {
        let lm = sys.landmarks.entry(key).or_insert_with(|| Landmark::new(jl.ncols()));
        let jlt = jl.transpose();
        lm.hll += &jlt * &jl * w;
        lm.gl -= &jlt * &r * w;
        if let Some((v, jc)) = j_pose {
            let c = lm.couplings.entry(v).or_insert_with(|| DMatrix::zeros(6, jl.ncols()));
            *c += jc.transpose() * &jl * w;
        }
    }
}

struct Step {
    poses: DVector<f64>,
    landmarks: BTreeMap<(u8, usize), DVector<f64>>,
}

fn damp(m: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let mut d = m.clone();
    for i in 0..d.nrows() {
        d[(i, i)] += lambda * m[(i, i)].max(1e-6);
    }
    d
}

fn solve_damped(sys: &LinearSystem, lambda: f64) -> Option<Step> {
    let mut s = damp(&sys.hpp, lambda);
    let mut rhs = sys.gp.clone();
    let mut inverses = BTreeMap::new();
    for (key, lm) in &sys.landmarks {
        let inv = damp(&lm.hll, lambda).cholesky()?.inverse();
        for (vi, ci) in &lm.couplings {
            let ci_inv = ci * &inv;
            let mut r = rhs.rows_mut(6 * vi, 6);
            r -= &ci_inv * &lm.gl;
            for (vj, cj) in &lm.couplings {
                let mut block = s.view_mut((6 * vi, 6 * vj), (6, 6));
                block -= &ci_inv * cj.transpose();
            }
        }
        inverses.insert(*key, inv);
    }
    let poses = if s.nrows() > 0 { s.cholesky()?.solve(&rhs) } else { DVector::zeros(0) };
    if !poses.iter().all(|x| x.is_finite()) {
        return None;
    }
    let mut landmarks = BTreeMap::new();
    for (key, lm) in &sys.landmarks {
        let mut g = lm.gl.clone();
        for (v, c) in &lm.couplings {
            g -= c.transpose() * poses.rows(6 * v, 6);
        }
        let d = &inverses[key] * g;
        debug_assert_eq!(d.len(), lm.dim);
        if !d.iter().all(|x| x.is_finite()) {
            return None;
        }
        landmarks.insert(*key, d);
    }
    Some(Step { poses, landmarks })
}
