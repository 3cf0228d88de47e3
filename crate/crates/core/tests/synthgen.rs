use microreg::calibration::{compare_models, fit_linear};
use microreg::distortion::{compensate, estimate_field, plane_fit_rmse};
use microreg::imaging::{compute_disparity, to_grayscale, SgbmParams};
use microreg::projection::{reconstruct_cloud, reconstruct_cloud_indexed};
use microreg::synthgen::{
    make_bowl_plane, make_skull_surface, make_step_log, render_stereo, BowlPlaneParams, SkullParams,
    StepPreset, SynthError,
};

fn reduced() -> SkullParams {
    SkullParams {
        width: 320,
        height: 180,
        pixel_mm: 0.13,
        ..SkullParams::default()
    }
}

#[test]
fn true_disparity_reconstructs_height_field() {
    let s = make_skull_surface(21, &reduced()).unwrap();
    let cloud = reconstruct_cloud(&s.disparity, &s.texture, &s.calib, Some(&s.labels)).unwrap();
    assert_eq!(cloud.len(), s.params.width * s.params.height);
    let mut worst: f64 = 0.0;
    for (i, p) in cloud.points.iter().enumerate() {
        let (x, y) = (i % s.params.width, i / s.params.width);
        worst = worst.max((p.position - s.height_field_point(x, y)).norm());
    }
    assert!(worst <= 1e-6, "{worst}");
}

#[test]
fn labels_follow_painted_geometry() {
    let s = make_skull_surface(22, &reduced()).unwrap();
    let c = &s.calib;
    for y in (0..s.params.height).step_by(7) {
        for x in (0..s.params.width).step_by(7) {
            let (mx, my) = ((x as f64 - c.c_x) * c.p_rho_x, (y as f64 - c.c_y) * c.p_rho_y);
            let m = s.pose.inverse().apply(&nalgebra::Point3::new(mx, my, 0.0));
            assert_eq!(s.labels.get(x, y), s.geometry.label(m.x, m.y));
        }
    }
}

#[test]
fn sgbm_recovers_rendered_disparity() {
    let s = make_skull_surface(23, &reduced()).unwrap();
    let pair = render_stereo(&s).unwrap();
    let d = compute_disparity(&to_grayscale(&pair.left), &to_grayscale(&pair.right), &SgbmParams::default()).unwrap();
    let (mut scored, mut good) = (0usize, 0usize);
    for (i, truth) in s.disparity.values().iter().enumerate() {
        let (x, y) = (i % s.params.width, i / s.params.width);
        if !pair.visible[i] {
            continue;
        }
        if let Some(est) = d.get(x, y) {
            scored += 1;
            if (est - truth).abs() <= 1.0 {
                good += 1;
            }
        }
    }
    assert!(scored > s.params.width * s.params.height / 2);
    assert!(good as f64 >= 0.95 * scored as f64, "{good}/{scored}");
}

#[test]
fn swapping_eyes_negates_disparity() {
    let p = SkullParams {
        dome_amplitude: 0.0,
        bump_amplitude: 0.0,
        ridge_height: 0.0,
        ..reduced()
    };
    let s = make_skull_surface(24, &p).unwrap();
    let h0 = s.disparity.values()[0];
    let pair = render_stereo(&s).unwrap();
    let (l, r) = (to_grayscale(&pair.left), to_grayscale(&pair.right));
    let fwd = compute_disparity(&l, &r, &SgbmParams::default()).unwrap();
    let rev = compute_disparity(&r, &l, &SgbmParams { min_disparity: -63, ..SgbmParams::default() }).unwrap();
    let near = |m: &microreg::imaging::DisparityMap, v: f64| {
        let vals: Vec<f64> = m.values().iter().copied().filter(|d| d.is_finite()).collect();
        vals.iter().filter(|d| (*d - v).abs() < 0.25).count() as f64 / vals.len() as f64
    };
    assert!(near(&fwd, h0) > 0.99);
    assert!(near(&rev, -h0) > 0.99);
}

#[test]
fn oversized_disparity_is_rejected() {
    let p = SkullParams { standoff: 200.0, ..reduced() };
    assert!(matches!(make_skull_surface(0, &p), Err(SynthError::DisparityExceedsWidth { .. })));
}

#[test]
fn step_presets_fit_linear() {
    let hp = StepPreset::StepHeightPaper.params();
    assert_eq!((hp.steps, hp.increment, hp.repeats), (21, 0.5, 10));
    let log = make_step_log(&hp, 1).unwrap();
    assert_eq!(log.first().unwrap().z_true, 0.0);
    assert_eq!(log.last().unwrap().z_true, 10.0);
    assert!(fit_linear(&log).unwrap().r_squared >= 0.999);
    compare_models(&log).unwrap();

    let res = StepPreset::ResolutionPaper.params();
    let log = make_step_log(&res, 1).unwrap();
    assert_eq!(log.len(), 21);
    assert!((log.last().unwrap().z_true - 1.0).abs() < 1e-12);
}

#[test]
fn bowl_plane_compensates_across_captures() {
    let p = BowlPlaneParams::default();
    let calib = p.calib();
    let gray = microreg::imaging::RgbImage::filled(p.width, p.height, [128, 128, 128]).unwrap();
    let (first, idx) = reconstruct_cloud_indexed(&make_bowl_plane(&p, 1), &gray, &calib, None).unwrap();
    let field = estimate_field(&first, &idx, p.width).unwrap();
    let (second, idx2) = reconstruct_cloud_indexed(&make_bowl_plane(&p, 2), &gray, &calib, None).unwrap();
    let before = plane_fit_rmse(&second).unwrap();
    let after = plane_fit_rmse(&compensate(&second, &idx2, &field).unwrap()).unwrap();
    assert!(before >= 0.2, "{before}");
    assert!(after <= 0.02, "{after}");
}
