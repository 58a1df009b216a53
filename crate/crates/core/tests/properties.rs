use std::collections::BTreeSet;

use nalgebra::{Point2, Point3, Rotation3, Vector3, Vector4};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use plvo::frontend::FrontendOutput;
use plvo::geometry::{
    orthonormal_to_plucker, orthonormal_update, plucker_from_two_points, plucker_to_orthonormal, point_line_distance,
    project_line, segment_from_endpoints, transform_line, LineSegment2D, PinholeIntrinsics, PluckerLine, PoseSE3,
};
use plvo::line2d::{associate_points_to_lines, match_lines, merge_segments, MatchParams, MergeParams, PointLineAssociation};
use plvo::map::{covisibility_window, keyframe_decision, Frame, Keyframe, KeyframeThresholds, Map};
use plvo::optimizer::residuals::{line_residual, point_residual};
use plvo::trajectory::{error_cdf, evaluate_ate, Trajectory};
use plvo::triangulation::{triangulate_line_two_planes, TriangulationParams};

fn camera() -> PinholeIntrinsics {
    PinholeIntrinsics::new(400.0, 400.0, 320.0, 240.0, 640, 480).unwrap()
}

fn point() -> impl Strategy<Value = Point3<f64>> {
    (-5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64).prop_map(|(x, y, z)| Point3::new(x, y, z))
}

fn pose() -> impl Strategy<Value = PoseSE3> {
    (-1.5..1.5f64, -1.5..1.5f64, -1.5..1.5f64, -3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64)
        .prop_map(|(a, b, c, x, y, z)| PoseSE3::new(Rotation3::new(Vector3::new(a, b, c)), Vector3::new(x, y, z)))
}

fn line() -> impl Strategy<Value = PluckerLine> {
    (point(), point())
        .prop_filter("distinct points", |(a, b)| (a - b).norm() > 1e-2)
        .prop_map(|(a, b)| plucker_from_two_points(&a, &b).unwrap())
}

/// A point in front of the camera, expressed in camera coordinates.
fn visible_cam_point() -> impl Strategy<Value = Point3<f64>> {
    (-2.0..2.0f64, -1.5..1.5f64, 1.0..10.0f64).prop_map(|(x, y, z)| Point3::new(x, y, z))
}

fn constraint(l: &PluckerLine) -> f64 {
    l.n.dot(&l.v).abs() / (l.n.norm() * l.v.norm()).max(1.0)
}

/// Pieces scattered along a handful of image lines, plus a few strays, so the
/// merge has something to do.
fn segment_soup() -> impl Strategy<Value = Vec<LineSegment2D>> {
    let family = (50.0..590.0f64, 50.0..430.0f64, 0.0..std::f64::consts::PI, prop::collection::vec((-200.0..200.0f64, 10.0..120.0f64, -1.0..1.0f64), 1..5));
    (prop::collection::vec(family, 1..4), prop::collection::vec((0.0..640.0f64, 0.0..480.0f64, 0.0..640.0f64, 0.0..480.0f64), 0..4)).prop_map(
        |(families, strays)| {
            let mut out = Vec::new();
            for (cx, cy, th, pieces) in families {
                let d = nalgebra::Vector2::new(th.cos(), th.sin());
                let nrm = nalgebra::Vector2::new(-d.y, d.x);
                for (t, len, off) in pieces {
                    let a = Point2::new(cx, cy) + d * t + nrm * off;
                    if let Ok(s) = segment_from_endpoints(a, a + d * len) {
                        out.push(s);
                    }
                }
            }
            for (x1, y1, x2, y2) in strays {
                if let Ok(s) = segment_from_endpoints(Point2::new(x1, y1), Point2::new(x2, y2)) {
                    out.push(s);
                }
            }
            out
        },
    )
}

fn same_segments(a: &[LineSegment2D], b: &[LineSegment2D]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(s, t)| (s.p1() - t.p1()).norm() < 1e-9 && (s.p2() - t.p2()).norm() < 1e-9)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn two_point_construction_is_antisymmetric(a in point(), b in point()) {
        prop_assume!((a - b).norm() > 1e-3);
        let ab = plucker_from_two_points(&a, &b).unwrap();
        let ba = plucker_from_two_points(&b, &a).unwrap();
        prop_assert!((ab.n + ba.n).norm() < 1e-9);
        prop_assert!((ab.v + ba.v).norm() < 1e-9);
        prop_assert!((ab.v.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rigid_motion_keeps_plucker_constraint(l in line(), p in pose()) {
        prop_assert!(constraint(&transform_line(&p, &l)) < 1e-9);
    }

    #[test]
    fn projected_points_lie_on_projected_line(xa in visible_cam_point(), xb in visible_cam_point(), p in pose()) {
        prop_assume!((xa - xb).norm() > 1e-2);
        let k = camera();
        let inv = p.inverse();
        let (wa, wb) = (inv.transform_point(&xa), inv.transform_point(&xb));
        let l = plucker_from_two_points(&wa, &wb).unwrap();
        let Ok(img_line) = project_line(&k, &transform_line(&p, &l)) else { return Ok(()) };
        for x in [xa, xb] {
            let px = k.project(&x).unwrap();
            let d = (img_line.x * px.x + img_line.y * px.y + img_line.z).abs();
            prop_assert!(d < 1e-6, "distance {d}");
        }
    }

    #[test]
    fn zero_update_is_identity(l in line()) {
        prop_assume!(l.n.norm() > 1e-6);
        let o = plucker_to_orthonormal(&l).unwrap();
        let same = orthonormal_update(&o, &Vector4::zeros());
        prop_assert!((same.u() - o.u()).norm() < 1e-12);
        prop_assert!((same.w_angle() - o.w_angle()).abs() < 1e-12);
        // The conversion back fixes the scale, so compare with ‖v‖ = 1.
        let back = orthonormal_to_plucker(&same).unwrap();
        let s = back.v.norm();
        prop_assert!((back.v / s - l.v).norm() < 1e-9);
        prop_assert!((back.n / s - l.n).norm() < 1e-9 * l.n.norm().max(1.0));
    }

    #[test]
    fn merge_is_idempotent_and_never_grows(segs in segment_soup()) {
        let p = MergeParams::default();
        let once = merge_segments(&segs, &p);
        let twice = merge_segments(&once, &p);
        prop_assert!(same_segments(&once, &twice));
        prop_assert!(once.len() <= segs.len());
        let longest = |v: &[LineSegment2D]| v.iter().map(|s| s.length()).fold(0.0, f64::max);
        prop_assert!(longest(&once) >= longest(&segs) - 1e-9);
    }

    #[test]
    fn association_ignores_input_order(
        segs in segment_soup(),
        pts in prop::collection::vec((0.0..640.0f64, 0.0..480.0f64), 0..60),
        seed in any::<u64>(),
    ) {
        let points: Vec<Point2<f64>> = pts.iter().map(|(x, y)| Point2::new(*x, *y)).collect();
        let base = associate_points_to_lines(&points, &segs, 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pp: Vec<usize> = (0..points.len()).collect();
        let mut sp: Vec<usize> = (0..segs.len()).collect();
        pp.shuffle(&mut rng);
        sp.shuffle(&mut rng);
        let shuffled_pts: Vec<Point2<f64>> = pp.iter().map(|&i| points[i]).collect();
        let shuffled_segs: Vec<LineSegment2D> = sp.iter().map(|&j| segs[j]).collect();
        let other = associate_points_to_lines(&shuffled_pts, &shuffled_segs, 3.0);
        for (new_j, &old_j) in sp.iter().enumerate() {
            let relabeled: BTreeSet<usize> = other.points_of(new_j).iter().map(|&i| pp[i]).collect();
            let original: BTreeSet<usize> = base.points_of(old_j).iter().copied().collect();
            prop_assert_eq!(relabeled, original);
        }
    }

    #[test]
    fn line_matches_are_one_to_one_and_pass_thresholds(
        lines_a in prop::collection::vec(prop::collection::btree_set(0usize..40, 0..12), 0..8),
        lines_b in prop::collection::vec(prop::collection::btree_set(0usize..40, 0..12), 0..8),
        matches in prop::collection::vec((0usize..40, 0usize..40), 0..60),
        min_score in 0.3..1.0f64,
        min_shared in 1usize..5,
    ) {
        let to_assoc = |ls: &Vec<BTreeSet<usize>>| PointLineAssociation {
            line_points: ls.iter().map(|s| s.iter().copied().collect()).collect(),
            num_points: 40,
        };
        let (aa, ab) = (to_assoc(&lines_a), to_assoc(&lines_b));
        let params = MatchParams { min_score, min_shared_points: min_shared, ..MatchParams::default() };
        let out = match_lines(&aa, &ab, &matches, &params);
        let ks: BTreeSet<usize> = out.iter().map(|m| m.line_k).collect();
        let k1s: BTreeSet<usize> = out.iter().map(|m| m.line_k1).collect();
        prop_assert_eq!(ks.len(), out.len());
        prop_assert_eq!(k1s.len(), out.len());
        for m in &out {
            let (pa, pb) = (&lines_a[m.line_k], &lines_b[m.line_k1]);
            let shared = matches.iter().filter(|(i, j)| pa.contains(i) && pb.contains(j)).count();
            let score = shared as f64 / pa.len().min(pb.len()) as f64;
            prop_assert_eq!(m.shared, shared);
            prop_assert!((m.score - score).abs() < 1e-12);
            prop_assert!(m.score > min_score && m.shared > min_shared);
        }
    }

    #[test]
    fn two_plane_triangulation_is_consistent(
        xa in visible_cam_point(),
        xb in visible_cam_point(),
        motion in (-0.6..0.6f64, -0.3..0.3f64, -0.3..0.3f64, -0.2..0.2f64),
    ) {
        prop_assume!((xa - xb).norm() > 0.3);
        let k = camera();
        let pose1 = PoseSE3::identity();
        let (tx, ty, tz, yaw) = motion;
        let pose2 = PoseSE3::new(Rotation3::new(Vector3::new(0.0, yaw, 0.0)), Vector3::new(tx, ty, tz));
        let (ca, cb) = (pose2.transform_point(&xa), pose2.transform_point(&xb));
        prop_assume!(ca.z > 0.5 && cb.z > 0.5);
        let seg = |p: Point3<f64>, q: Point3<f64>| segment_from_endpoints(k.project(&p).unwrap(), k.project(&q).unwrap());
        let (Ok(s1), Ok(s2)) = (seg(xa, xb), seg(ca, cb)) else { return Ok(()) };
        let Ok(l) = triangulate_line_two_planes(&s1, &pose1, &s2, &pose2, &k, &TriangulationParams::default()) else { return Ok(()) };
        prop_assert!(constraint(&l) < 1e-9);
        for (p, s) in [(&pose1, &s1), (&pose2, &s2)] {
            let r = line_residual(&l, p, &k, s).unwrap();
            prop_assert!(r.value.norm() < 1e-6, "reprojection {}", r.value.norm());
        }
    }

    #[test]
    fn shrinking_baseline_turns_degenerate_for_good(
        xa in visible_cam_point(),
        xb in visible_cam_point(),
        dir in (-1.0..1.0f64, -1.0..1.0f64, -0.3..0.3f64),
    ) {
        prop_assume!((xa - xb).norm() > 0.3);
        let k = camera();
        let t = Vector3::new(dir.0, dir.1, dir.2);
        prop_assume!(t.norm() > 0.1);
        let Ok(s1) = segment_from_endpoints(k.project(&xa).unwrap(), k.project(&xb).unwrap()) else { return Ok(()) };
        let mut degenerate_seen = false;
        for step in 0..40 {
            let shift = t.normalize() * 0.5 * 0.7f64.powi(step);
            let pose2 = PoseSE3::new(Rotation3::identity(), shift);
            let (ca, cb) = (pose2.transform_point(&xa), pose2.transform_point(&xb));
            let Ok(s2) = segment_from_endpoints(k.project(&ca).unwrap(), k.project(&cb).unwrap()) else { continue };
            let degenerate = matches!(
                triangulate_line_two_planes(&s1, &PoseSE3::identity(), &s2, &pose2, &k, &TriangulationParams::default()),
                Err(plvo::Error::DegenerateTriangulation { .. })
            );
            prop_assert!(!(degenerate_seen && !degenerate), "degenerate signal switched off at step {step}");
            degenerate_seen |= degenerate;
        }
        prop_assert!(degenerate_seen);
    }

    #[test]
    fn keyframe_decision_is_monotone(
        d in 0.0..0.6f64,
        yaw in 0.0..30.0f64,
        more_d in 0.0..0.5f64,
        more_yaw in 0.0..20.0f64,
        tracked in 0usize..150,
        prev in 0usize..150,
    ) {
        let th = KeyframeThresholds::default();
        let frame = |x: f64, yaw_deg: f64, tracked: usize| Frame {
            pose: PoseSE3::from_camera_center(Rotation3::from_euler_angles(0.0, yaw_deg.to_radians(), 0.0), Point3::new(x, 0.0, 0.0)),
            tracked_map_point_count: tracked,
            ..Frame::default()
        };
        let last = frame(0.0, 0.0, 200);
        let previous = frame(0.0, 0.0, prev);
        let base = keyframe_decision(&frame(d, yaw, tracked), &last, &previous, &th);
        prop_assert_eq!(&base, &keyframe_decision(&frame(d, yaw, tracked), &last, &previous, &th));
        if base.is_keyframe {
            prop_assert!(keyframe_decision(&frame(d + more_d, yaw, tracked), &last, &previous, &th).is_keyframe);
            prop_assert!(keyframe_decision(&frame(d, yaw + more_yaw, tracked), &last, &previous, &th).is_keyframe);
        }
    }

    #[test]
    fn covisibility_window_is_bounded_and_contains_current(
        n_kf in 1usize..10,
        obs in prop::collection::vec(prop::collection::btree_set(0usize..10, 1..5), 0..40),
        size in 1usize..8,
        current in 0usize..10,
    ) {
        let mut map = Map::new();
        let mut ids = Vec::new();
        for _ in 0..n_kf {
            let frame = Frame { keypoints: vec![Point2::origin(); 40], ..Frame::default() };
            let kf = Keyframe::new(map.next_keyframe_id(), frame, vec![None; 40], vec![], FrontendOutput::default());
            ids.push(map.insert_keyframe(kf).unwrap());
        }
        for (slot, kfs) in obs.iter().enumerate() {
            let mut seen = kfs.iter().filter(|&&k| k < n_kf);
            let Some(&first) = seen.next() else { continue };
            let p = map.create_point(Point3::new(0.0, 0.0, 1.0), ids[first], slot).unwrap();
            for &k in seen {
                map.insert_point_observation(p, ids[k], slot).unwrap();
            }
        }
        let cur = ids[current % n_kf];
        let window = covisibility_window(&map, cur, size);
        prop_assert!(window.len() <= size.max(1));
        prop_assert!(window.contains(&cur));
        prop_assert!(window.windows(2).all(|w| w[0] < w[1]));
        map.audit().unwrap();
    }

    #[test]
    fn residuals_are_gauge_invariant(x in point(), l in line(), p in pose(), g in pose(), px in (0.0..640.0f64, 0.0..480.0f64)) {
        let k = camera();
        let obs = Point2::new(px.0, px.1);
        // Moving the world by g and every camera by g⁻¹ changes nothing.
        let p2 = p.compose(&g.inverse());
        let x2 = g.transform_point(&x);
        if let (Ok(a), Ok(b)) = (point_residual(&x, &p, &k, &obs), point_residual(&x2, &p2, &k, &obs)) {
            prop_assert!((a.value - b.value).norm() < 1e-9 * (1.0 + a.value.norm()));
        }
        let Ok(seg) = segment_from_endpoints(obs, Point2::new(320.0, 240.0)) else { return Ok(()) };
        let l2 = transform_line(&g, &l);
        if let (Ok(a), Ok(b)) = (line_residual(&l, &p, &k, &seg), line_residual(&l2, &p2, &k, &seg)) {
            prop_assert!((a.value - b.value).norm() < 1e-7 * (1.0 + a.value.norm()));
        }
    }

    #[test]
    fn line_residual_ignores_plucker_scale(l in line(), p in pose(), s in prop_oneof![0.05..20.0f64, -20.0..-0.05f64]) {
        let k = camera();
        let seg = segment_from_endpoints(Point2::new(100.0, 120.0), Point2::new(400.0, 300.0)).unwrap();
        let scaled = PluckerLine { n: l.n * s, v: l.v * s };
        if let (Ok(a), Ok(b)) = (line_residual(&l, &p, &k, &seg), line_residual(&scaled, &p, &k, &seg)) {
            prop_assert!((a.value - b.value).norm() < 1e-9 * (1.0 + a.value.norm()));
        }
    }

    #[test]
    fn ate_ignores_rigid_transform_of_estimate(
        noise in prop::collection::vec((-0.05..0.05f64, -0.05..0.05f64, -0.05..0.05f64), 12),
        g in pose(),
    ) {
        let gt: Vec<(f64, PoseSE3)> = (0..12)
            .map(|i| {
                let a = i as f64 * 0.3;
                (i as f64 * 0.05, PoseSE3::from_camera_center(Rotation3::new(Vector3::new(0.0, a, 0.0)), Point3::new(a.cos() * 2.0, 0.1 * a, a.sin() * 2.0)))
            })
            .collect();
        let est: Vec<(f64, PoseSE3)> = gt
            .iter()
            .zip(&noise)
            .map(|((t, p), (x, y, z))| (*t, PoseSE3::from_camera_center(*p.rotation(), p.center() + Vector3::new(*x, *y, *z))))
            .collect();
        let moved: Vec<(f64, PoseSE3)> = est.iter().map(|(t, p)| (*t, p.compose(&g.inverse()))).collect();
        let gt = Trajectory::from_records(gt).unwrap();
        let a = evaluate_ate(&Trajectory::from_records(est).unwrap(), &gt).unwrap();
        let b = evaluate_ate(&Trajectory::from_records(moved).unwrap(), &gt).unwrap();
        prop_assert!((a.rmse - b.rmse).abs() < 1e-9);
    }

    #[test]
    fn error_cdf_is_monotone_and_ends_at_one(errs in prop::collection::vec(0.0..1.0f64, 1..100)) {
        let errors: Vec<(f64, f64)> = errs.iter().enumerate().map(|(i, e)| (i as f64, *e)).collect();
        let cdf = error_cdf(&errors);
        prop_assert!(cdf.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 < w[1].1));
        prop_assert!((cdf.last().unwrap().1 - 1.0).abs() < 1e-12);
        prop_assert!(cdf.iter().all(|(_, p)| *p > 0.0 && *p <= 1.0));
    }
}

#[test]
fn chained_updates_stay_orthonormal() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let l = plucker_from_two_points(&Point3::new(1.0, 0.5, 3.0), &Point3::new(-1.0, 0.2, 4.0)).unwrap();
    let mut o = plucker_to_orthonormal(&l).unwrap();
    for _ in 0..10_000 {
        let d = Vector4::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
        o = orthonormal_update(&o, &d);
        let u = o.u();
        assert!((u.transpose() * u - nalgebra::Matrix3::identity()).norm() < 1e-6);
        assert!((u.determinant() - 1.0).abs() < 1e-6);
    }
    let back = orthonormal_to_plucker(&o).unwrap();
    assert!(constraint(&back) < 1e-9);
}

#[test]
fn chi2_gate_rejects_about_five_percent_of_gaussian_noise() {
    let k = camera();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let x = Point3::new(0.2, -0.1, 4.0);
    let clean = k.project(&x).unwrap();
    let n = 50_000;
    let rejected = (0..n)
        .filter(|_| {
            let obs = Point2::new(clean.x + noise.sample(&mut rng), clean.y + noise.sample(&mut rng));
            point_residual(&x, &PoseSE3::identity(), &k, &obs).unwrap().value.norm_squared() > 5.991
        })
        .count();
    let rate = rejected as f64 / n as f64;
    assert!(rate <= 0.08 && rate > 0.03, "rejection rate {rate}");
}

#[test]
fn segment_distance_helper_agrees_with_coefficients() {
    let s = segment_from_endpoints(Point2::new(0.0, 0.0), Point2::new(3.0, 4.0)).unwrap();
    assert!((point_line_distance(&Point2::new(4.0, -3.0), &s) - 5.0).abs() < 1e-12);
}
