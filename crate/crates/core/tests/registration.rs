use microreg::evaluation::{pose_error, PoseError};
use microreg::labeling::{colorize_model, LabelMask, LabelPalette};
use microreg::projection::{CloudPoint, LabeledCloud};
use microreg::registration::{
    color_icp_refine, estimate_inplane_orientation, estimate_normals, median_spacing,
    ransac_coarse_align, register, register_clouds, voxel_downsample, ColorIcpParams, Frame,
    NormalCloud, RansacParams, RegistrationError, RegistrationParams, Variant,
};
use microreg::synthgen::{make_skull_surface, perturb_pose, random_inplane_delta, SkullParams, SyntheticScene};
use microreg::transform::RigidTransform;
use nalgebra::{Point3, Unit, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

struct Fixture {
    scene: SyntheticScene,
    model: LabeledCloud,
    ann: microreg::labeling::ModelAnnotation,
    /// Coloured model features.
    a: LabeledCloud,
}

fn fixture(seed: u64) -> Fixture {
    let scene = make_skull_surface(seed, &SkullParams::registration()).unwrap();
    let (model, ann) = scene.model_cloud(0.12);
    let a = colorize_model(&model, &ann, &LabelPalette::default()).unwrap();
    Fixture { scene, model, ann, a }
}

fn moved(c: &LabeledCloud, t: &RigidTransform, sigma: f64, seed: u64) -> LabeledCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(0.0, sigma).unwrap();
    let jitter = |rng: &mut ChaCha8Rng| if sigma > 0.0 { n.sample(rng) } else { 0.0 };
    let pts = c
        .points
        .iter()
        .map(|p| {
            let q = t.apply(&p.position);
            let d = Vector3::new(jitter(&mut rng), jitter(&mut rng), jitter(&mut rng));
            CloudPoint::new(q + d, p.color, p.label)
        })
        .collect();
    LabeledCloud::new(pts)
}

fn coarse(c: &LabeledCloud) -> NormalCloud {
    let pos: Vec<Point3<f64>> = c.points.iter().map(|p| p.position).collect();
    let s = median_spacing(&pos).unwrap();
    estimate_normals(&voxel_downsample(c, 4.0 * s), 20).unwrap()
}

fn small_offset(rng: &mut ChaCha8Rng, shift: f64, angle_deg: f64) -> RigidTransform {
    let axis = Unit::new_normalize(Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    ));
    let dir = Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    )
    .normalize();
    let w = axis.into_inner() * angle_deg.to_radians();
    let rot = RigidTransform::exp(&Vector6::new(w.x, w.y, w.z, 0.0, 0.0, 0.0));
    RigidTransform::from_parts_unchecked(rot.rotation, dir * shift)
}

fn within(e: &PoseError, mm: f64, deg: f64) -> bool {
    e.e_t <= mm && e.e_r <= deg
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}

#[test]
fn ransac_on_identical_clouds_returns_identity() {
    let f = fixture(1);
    let a = coarse(&f.a);
    for seed in [0, 7, 123] {
        let params = RansacParams { rng_seed: seed, ..Default::default() };
        let r = ransac_coarse_align(&a, &a, &params, 0.0).unwrap();
        let e = pose_error(&r.transform, &RigidTransform::identity());
        assert!(e.e_t < 1e-6 && e.e_r < 1e-6, "seed {seed}: {e:?}");
    }
}

#[test]
fn ransac_recovers_inplane_rotation_inside_window() {
    let f = fixture(2);
    let truth = RigidTransform::from_inplane(15f64.to_radians(), Vector3::new(2.0, -1.0, 0.5));
    let b_full = moved(&f.a, &truth, 0.02, 9);
    let inplane = estimate_inplane_orientation(&f.a, &b_full).unwrap();
    let (a, b) = (coarse(&f.a), coarse(&b_full));
    let params = RansacParams { inplane_angle_window: 25f64.to_radians(), ..Default::default() };
    let good = ransac_coarse_align(&a, &b, &params, inplane).unwrap();
    let e = pose_error(&good.transform, &truth);
    assert!(within(&e, 0.5, 2.0), "{e:?}");

    // a 5 degree window around a wrong orientation excludes the truth
    let narrow = RansacParams { inplane_angle_window: 5f64.to_radians(), ..Default::default() };
    match ransac_coarse_align(&a, &b, &narrow, 0.0) {
        Err(RegistrationError::ConstraintRejectedAll { .. }) => {}
        Ok(bad) => assert!(bad.inliers < good.inliers, "{} vs {}", bad.inliers, good.inliers),
        Err(other) => panic!("unexpected error {other}"),
    }
}

#[test]
fn inplane_estimate_on_rendered_frames() {
    let f = fixture(3);
    let palette = LabelPalette::default();
    for seed in 0..5 {
        let delta = RigidTransform::from_inplane(10f64.to_radians(), Vector3::new(0.5 * seed as f64, -0.3, 0.0));
        let frame = perturb_pose(&f.scene, &delta, 0.1, 0.0, seed).unwrap();
        let b = microreg::labeling::mask_cloud(&frame.disparity, &frame.rgb, &frame.mask, &palette, &f.scene.calib).unwrap();
        let angle = estimate_inplane_orientation(&f.a, &b).unwrap();
        assert!((angle.to_degrees() - 10.0).abs() < 2.0, "seed {seed}: {}", angle.to_degrees());
    }
}

#[test]
fn icp_converges_from_nearby_start() {
    let f = fixture(4);
    let a = estimate_normals(&f.a, 20).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let trials = 100;
    let mut ok = 0;
    for seed in 0..trials {
        let truth = random_inplane_delta(&mut rng, 3.0, 15f64.to_radians(), 1.0);
        let b = moved(&f.a, &truth, 0.05, seed);
        let init = truth.compose(&small_offset(&mut rng, 1.0, 3.0));
        let r = color_icp_refine(&a, &b, &init, &ColorIcpParams::default()).unwrap();
        if within(&pose_error(&r.transform, &truth), 0.2, 1.0) {
            ok += 1;
        }
    }
    assert!(ok >= 95, "{ok}/{trials}");
}

#[test]
fn icp_identity_is_fixed_point() {
    let f = fixture(5);
    let a = estimate_normals(&f.a, 20).unwrap();
    let r = color_icp_refine(&a, &f.a, &RigidTransform::identity(), &ColorIcpParams::default()).unwrap();
    let e = pose_error(&r.transform, &RigidTransform::identity());
    assert!(e.e_t < 1e-6 && e.e_r < 1e-6, "{e:?}");
    assert_eq!(r.fitness, 1.0);
    assert!(r.rmse < 1e-6);
}

#[test]
fn icp_objective_never_increases() {
    let f = fixture(6);
    let a = estimate_normals(&f.a, 20).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for seed in 0..5 {
        let truth = random_inplane_delta(&mut rng, 2.0, 0.2, 0.5);
        let b = moved(&f.a, &truth, 0.05, seed);
        let init = truth.compose(&small_offset(&mut rng, 1.0, 3.0));
        let r = color_icp_refine(&a, &b, &init, &ColorIcpParams::default()).unwrap();
        assert_eq!(r.scales.len(), 3);
        for s in &r.scales {
            assert!(s.objective.windows(2).all(|w| w[1] <= w[0]), "{:?}", s.objective);
        }
    }
}

fn mislabel(c: &LabeledCloud, fraction: f64, seed: u64) -> LabeledCloud {
    let palette = LabelPalette::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts = c
        .points
        .iter()
        .map(|p| {
            let Some(l) = p.label else { return p.clone() };
            if rng.random::<f64>() >= fraction {
                return p.clone();
            }
            let mut other = rng.random_range(1..6u8);
            if other >= l {
                other += 1;
            }
            CloudPoint::new(p.position, palette.rgb(other).unwrap(), Some(other))
        })
        .collect();
    LabeledCloud::new(pts)
}

#[test]
fn both_label_modes_tolerate_mislabeling() {
    let f = fixture(7);
    let a = estimate_normals(&f.a, 20).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut strict, mut loose) = (Vec::new(), Vec::new());
    for seed in 0..50 {
        let truth = random_inplane_delta(&mut rng, 3.0, 15f64.to_radians(), 1.0);
        let b = mislabel(&moved(&f.a, &truth, 0.05, seed), 0.1, seed);
        let init = truth.compose(&small_offset(&mut rng, 1.0, 3.0));
        for (flag, out) in [(true, &mut strict), (false, &mut loose)] {
            let p = ColorIcpParams { label_strict: flag, ..Default::default() };
            let r = color_icp_refine(&a, &b, &init, &p).unwrap();
            out.push(pose_error(&r.transform, &truth).e_r);
        }
    }
    let (ms, ml) = (median(&mut strict), median(&mut loose));
    println!("median e_r: strict {ms:.4} deg, loose {ml:.4} deg");
    assert!(ms < 1.0 && ml < 1.0);
}

fn apply_cloud(g: &RigidTransform, c: &LabeledCloud) -> LabeledCloud {
    moved(c, g, 0.0, 0)
}

fn conj(g: &RigidTransform, t: &RigidTransform) -> RigidTransform {
    g.compose(t).compose(&g.inverse())
}

#[test]
fn icp_is_equivariant_under_rigid_motion() {
    let f = fixture(8);
    let truth = RigidTransform::from_inplane(0.1, Vector3::new(0.8, -0.4, 0.3));
    let b = moved(&f.a, &truth, 0.03, 4);
    let init = truth.compose(&RigidTransform::from_inplane(0.02, Vector3::new(0.3, 0.2, 0.0)));
    let params = ColorIcpParams {
        multi_scale: false,
        convergence_eps: 0.0,
        max_iterations: 100,
        ..Default::default()
    };
    let base = color_icp_refine(&estimate_normals(&f.a, 20).unwrap(), &b, &init, &params).unwrap();
    let g = RigidTransform::new(
        *nalgebra::Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::new(0.3, -1.0, 0.4)), 0.8).matrix(),
        Vector3::new(5.0, -2.0, 11.0),
    )
    .unwrap();
    let ga = apply_cloud(&g, &f.a);
    let gb = apply_cloud(&g, &b);
    let moved_run = color_icp_refine(&estimate_normals(&ga, 20).unwrap(), &gb, &conj(&g, &init), &params).unwrap();
    let e = pose_error(&moved_run.transform, &conj(&g, &base.transform));
    assert!(e.e_t < 1e-6 && e.e_r < 1e-6, "{e:?}");
}

#[test]
fn pipeline_is_equivariant_under_inplane_motion() {
    let f = fixture(9);
    let truth = RigidTransform::from_inplane(0.2, Vector3::new(1.0, 2.0, 0.0));
    let b = moved(&f.a, &truth, 0.03, 2);
    let params = RegistrationParams::default();
    let base = register_clouds(&f.a, &b, &params).unwrap();
    let g = RigidTransform::from_inplane(-0.6, Vector3::new(3.0, -1.0, 0.7));
    let run = register_clouds(&apply_cloud(&g, &f.a), &apply_cloud(&g, &b), &params).unwrap();
    // voxel grids are axis aligned, so only agreement to the solver's noise floor is expected
    let e = pose_error(&run.t_refined, &conj(&g, &base.t_refined));
    assert!(within(&e, 0.02, 0.05), "{e:?}");
}

fn frame_of(p: &microreg::synthgen::PosedFrame) -> Frame<'_> {
    Frame { disparity: &p.disparity, rgb: &p.rgb, mask: &p.mask }
}

#[test]
fn end_to_end_recovers_pose() {
    let f = fixture(10);
    let palette = LabelPalette::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for seed in 0..4 {
        let delta = random_inplane_delta(&mut rng, 5.0, 15f64.to_radians(), 1.0);
        let frame = perturb_pose(&f.scene, &delta, 0.05, 0.0, seed).unwrap();
        let out = register(&f.model, &f.ann, &palette, frame_of(&frame), &f.scene.calib, &RegistrationParams::default()).unwrap();
        let e = pose_error(&out.t_refined, &frame.truth);
        assert!(within(&e, 0.2, 1.0), "seed {seed}: {e:?}");
        let names: Vec<&str> = out.diagnostics.stages.iter().map(|s| s.stage).collect();
        assert_eq!(
            names,
            ["colorize_model", "mask_cloud", "normals_a", "normals_b", "inplane_orientation", "ransac", "normals_icp", "color_icp"]
        );
    }
}

#[test]
fn unperturbed_frame_registers_to_base_pose() {
    let f = fixture(11);
    let frame = perturb_pose(&f.scene, &RigidTransform::identity(), 0.0, 0.0, 0).unwrap();
    let out = register(&f.model, &f.ann, &LabelPalette::default(), frame_of(&frame), &f.scene.calib, &RegistrationParams::default())
        .unwrap();
    // model and frame are sampled on different grids, which sets the floor
    let e = pose_error(&out.t_refined, &f.scene.pose);
    assert!(within(&e, 0.05, 0.1), "{e:?}");
}

#[test]
fn undefined_mask_is_a_stage_error() {
    let f = fixture(12);
    let frame = perturb_pose(&f.scene, &RigidTransform::identity(), 0.0, 0.0, 0).unwrap();
    let (w, h) = (frame.mask.width(), frame.mask.height());
    let blank = LabelMask::new(w, h, frame.mask.classes(), vec![0; w * h]).unwrap();
    let err = register(
        &f.model,
        &f.ann,
        &LabelPalette::default(),
        Frame { disparity: &frame.disparity, rgb: &frame.rgb, mask: &blank },
        &f.scene.calib,
        &RegistrationParams::default(),
    )
    .unwrap_err();
    assert_eq!(err.stage(), Some("mask_cloud"));
    assert!(err.to_string().contains("empty Cloud B"), "{err}");
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let f = fixture(13);
    let delta = RigidTransform::from_inplane(0.15, Vector3::new(2.0, 1.0, -0.5));
    let frame = perturb_pose(&f.scene, &delta, 0.05, 0.1, 4).unwrap();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            register(&f.model, &f.ann, &LabelPalette::default(), frame_of(&frame), &f.scene.calib, &RegistrationParams::default())
                .unwrap()
        })
    };
    let one = run(1);
    for threads in [1, 3, 8] {
        let other = run(threads);
        assert_eq!(one.t_refined, other.t_refined);
        assert_eq!(one.t_init, other.t_init);
        assert_eq!(one.diagnostics.rmse.to_bits(), other.diagnostics.rmse.to_bits());
    }
}

#[test]
fn every_variant_returns_proper_rotations() {
    let f = fixture(14);
    let delta = RigidTransform::from_inplane(-0.2, Vector3::new(-1.0, 2.0, 0.0));
    let frame = perturb_pose(&f.scene, &delta, 0.05, 0.1, 1).unwrap();
    for variant in Variant::ALL {
        let params = RegistrationParams { variant, ..Default::default() };
        let out = register(&f.model, &f.ann, &LabelPalette::default(), frame_of(&frame), &f.scene.calib, &params).unwrap();
        for t in [out.t_refined, out.t_init] {
            assert!(RigidTransform::new(t.rotation, t.translation).is_ok(), "{variant}");
        }
        assert_eq!(out.diagnostics.inplane_angle.is_some(), variant.uses_constraint());
    }
}
