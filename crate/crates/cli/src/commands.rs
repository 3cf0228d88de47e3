use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use microreg::calibration::{average_readings, compare_models, read_step_log, write_step_log, FitParams, ModelComparison, ModelKind};
use microreg::distortion::{compensate, estimate_field, plane_fit_rmse, DistortionField};
use microreg::evaluation::{pose_error, sequence_statistics, PoseError, SequenceReport};
use microreg::imaging::{compute_disparity, to_grayscale, RgbImage};
use microreg::io::{read_json, read_label_png, read_pfm, read_rgb_png, write_json, write_label_png, write_pfm, write_ply, write_rgb_png};
use microreg::labeling::{colorize_model, mask_cloud_indexed, LabelPalette, ModelAnnotation};
use microreg::projection::{reconstruct_cloud_indexed, CalibrationParams, LabeledCloud};
use microreg::registration::{register, register_clouds, Frame, RegistrationError, RegistrationOutput, RegistrationParams, Variant};
use microreg::synthgen::{
    make_bowl_plane, make_skull_surface, make_step_readings, perturb_pose, random_inplane_delta, render_stereo,
    BowlPlaneParams, SkullParams, StepPreset,
};
use microreg::transform::RigidTransform;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::args::{BenchArgs, CalibrateArgs, EvaluateArgs, Preset, ReconstructArgs, RegisterArgs, Surface, SynthArgs};
use crate::bundle::{self, FrameData, PoseFile, SequenceIndex};
use crate::config::Settings;
use crate::error::CliError;
use crate::manifest::TIMINGS;

/// Files a command read, for the manifest.
pub type Inputs = Vec<PathBuf>;

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn mkdir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn frame_rng(seed: u64, frame: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(frame as u64 + 1);
    rng
}

fn frame_seed(seed: u64, frame: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (frame as u64).wrapping_add(1)
}

#[derive(Serialize)]
struct SceneInfo {
    seed: u64,
    params: SkullParams,
}

pub fn synth(a: &SynthArgs, s: &Settings) -> Result<Inputs, CliError> {
    mkdir(&s.out)?;
    if !(a.max_shift >= 0.0 && a.max_angle >= 0.0 && a.max_dz >= 0.0 && a.spacing > 0.0) {
        return Err(CliError::Invalid("perturbation limits must be >= 0 and spacing > 0".into()));
    }
    match (a.preset, a.frames) {
        (Some(Preset::StepHeightPaper), _) => synth_steps(StepPreset::StepHeightPaper, s),
        (Some(Preset::ResolutionPaper), _) => synth_steps(StepPreset::ResolutionPaper, s),
        (Some(Preset::BowlPlane), _) => {
            let p = BowlPlaneParams::default();
            write_pfm(&s.out.join(bundle::DISPARITY), &make_bowl_plane(&p, s.seed))?;
            write_json(&s.out.join(bundle::CALIB), &p.calib())?;
            write_json(&s.out.join("bowl.json"), &p)?;
            Ok(Vec::new())
        }
        (None, Some(n)) => synth_sequence(a, n, s),
        (None, None) => synth_bundle(a, s),
    }
}

fn synth_steps(preset: StepPreset, s: &Settings) -> Result<Inputs, CliError> {
    let p = preset.params();
    let readings = make_step_readings(&p, s.seed)?;
    write_step_log(create(&s.out.join("steps.csv"))?, &readings)?;
    write_json(&s.out.join("steps.json"), &p)?;
    Ok(Vec::new())
}

fn write_shared(out: &Path, seed: u64, params: &SkullParams, calib: &CalibrationParams, model: &LabeledCloud, ann: &ModelAnnotation) -> Result<(), CliError> {
    let mut model = model.clone();
    for (p, c) in model.points.iter_mut().zip(&ann.classes) {
        p.label = *c;
    }
    write_json(&out.join(bundle::CALIB), calib)?;
    write_json(&out.join(bundle::PALETTE), &LabelPalette::default())?;
    write_ply(&out.join(bundle::MODEL), &model)?;
    write_json(&out.join("scene.json"), &SceneInfo { seed, params: *params })?;
    Ok(())
}

fn surface(a: &SynthArgs, p: SkullParams) -> SkullParams {
    match a.surface {
        Surface::Relief => p,
        Surface::Smooth => p.smooth(),
    }
}

fn synth_bundle(a: &SynthArgs, s: &Settings) -> Result<Inputs, CliError> {
    let params = surface(a, SkullParams::default());
    let base = make_skull_surface(s.seed, &params)?;
    let delta = random_inplane_delta(&mut frame_rng(s.seed, 0), a.max_shift, a.max_angle.to_radians(), a.max_dz);
    let scene = base.moved(&delta)?;
    let pair = render_stereo(&scene)?;
    let out = &s.out;
    let (model, ann) = scene.model_cloud(a.spacing);
    write_shared(out, s.seed, &params, &scene.calib, &model, &ann)?;
    write_rgb_png(&out.join(bundle::LEFT), &pair.left)?;
    write_rgb_png(&out.join(bundle::RIGHT), &pair.right)?;
    write_label_png(&out.join(bundle::LABELS), &scene.labels)?;
    write_pfm(&out.join(bundle::DISPARITY), &scene.disparity)?;
    let vis: Vec<u8> = pair.visible.iter().flat_map(|&v| [if v { 255 } else { 0 }; 3]).collect();
    write_rgb_png(&out.join("visible.png"), &RgbImage::new(params.width, params.height, vis)?)?;
    write_json(&out.join(bundle::POSE), &PoseFile { truth: scene.pose, delta })?;
    Ok(Vec::new())
}

fn synth_sequence(a: &SynthArgs, n: usize, s: &Settings) -> Result<Inputs, CliError> {
    if n == 0 {
        return Err(CliError::Invalid("--frames must be at least 1".into()));
    }
    let params = surface(a, SkullParams::registration());
    let scene = make_skull_surface(s.seed, &params)?;
    let (model, ann) = scene.model_cloud(a.spacing);
    write_shared(&s.out, s.seed, &params, &scene.calib, &model, &ann)?;
    let names: Vec<String> = (0..n).map(|i| format!("frames/{i:04}")).collect();
    names.par_iter().enumerate().try_for_each(|(i, name)| {
        let delta = random_inplane_delta(&mut frame_rng(s.seed, i), a.max_shift, a.max_angle.to_radians(), a.max_dz);
        let f = perturb_pose(&scene, &delta, a.noise, a.mislabel, frame_seed(s.seed, i))?;
        let dir = s.out.join(name);
        mkdir(&dir)?;
        write_rgb_png(&dir.join(bundle::LEFT), &f.rgb)?;
        write_label_png(&dir.join(bundle::LABELS), &f.mask)?;
        write_pfm(&dir.join(bundle::DISPARITY), &f.disparity)?;
        write_json(&dir.join(bundle::POSE), &PoseFile { truth: f.truth, delta: f.delta })?;
        Ok::<_, CliError>(())
    })?;
    let index = SequenceIndex {
        seed: s.seed,
        width: params.width,
        height: params.height,
        frames: names,
    };
    write_json(&s.out.join(bundle::INDEX), &index)?;
    Ok(Vec::new())
}

#[derive(Serialize)]
struct LogSummary {
    log: PathBuf,
    winner: ModelKind,
    linear_r_squared: f64,
    linear_rmse: f64,
    pinhole_r_squared: f64,
    pinhole_rmse: f64,
}

#[derive(Serialize)]
struct PlaneSummary {
    plane_rmse_before: f64,
    plane_rmse_after: f64,
}

pub fn calibrate(a: &CalibrateArgs, s: &Settings) -> Result<Inputs, CliError> {
    if a.logs.is_empty() && a.plane.is_none() {
        return Err(CliError::Invalid("nothing to calibrate: give --log and/or --plane".into()));
    }
    mkdir(&s.out)?;
    let mut inputs = a.logs.clone();
    let mut summaries = Vec::new();
    let mut first: Option<ModelComparison> = None;
    for (i, log) in a.logs.iter().enumerate() {
        let readings = read_step_log(File::open(log).map_err(|e| CliError::io(log, e))?)
            .map_err(|e| CliError::Parse(format!("{}: {e}", log.display())))?;
        let cmp = compare_models(&average_readings(&readings))?;
        write_json(&s.out.join(format!("fit_{i:02}.json")), &cmp)?;
        summaries.push(LogSummary {
            log: log.clone(),
            winner: cmp.winner,
            linear_r_squared: cmp.linear.r_squared,
            linear_rmse: cmp.linear.rmse,
            pinhole_r_squared: cmp.pinhole.r_squared,
            pinhole_rmse: cmp.pinhole.rmse,
        });
        first.get_or_insert(cmp);
    }
    if !summaries.is_empty() {
        write_json(&s.out.join("comparison.json"), &summaries)?;
    }
    let explicit = a.calib.as_deref();
    let plane_calib = a.plane.as_ref().and_then(|p| p.parent()).map(|d| d.join(bundle::CALIB));
    let needs_calib = a.plane.is_some() || explicit.is_some() || s.config.calib.is_some();
    if needs_calib {
        let calib_path = explicit.map(Path::to_path_buf).or_else(|| s.config.calib.clone()).or(plane_calib);
        let mut calib = s.calib(calib_path.as_deref(), None)?;
        inputs.extend(calib_path);
        if let Some(plane) = &a.plane {
            inputs.push(plane.clone());
            let d = read_pfm(plane)?;
            let gray = RgbImage::filled(d.width(), d.height(), [128; 3])?;
            let (cloud, idx) = reconstruct_cloud_indexed(&d, &gray, &calib, None)?;
            let field = estimate_field(&cloud, &idx, d.width())?;
            field.write_csv(create(&s.out.join("distortion.csv"))?)?;
            let summary = PlaneSummary {
                plane_rmse_before: plane_fit_rmse(&cloud)?,
                plane_rmse_after: plane_fit_rmse(&compensate(&cloud, &idx, &field)?)?,
            };
            write_json(&s.out.join("plane.json"), &summary)?;
        }
        if let Some(FitParams::Linear { h_rho, .. }) = first.map(|c| c.linear.params) {
            calib.h_rho = h_rho;
            calib.validate()?;
            write_json(&s.out.join(bundle::CALIB), &calib)?;
        }
    }
    Ok(inputs)
}

fn bundle_calib(s: &Settings, explicit: Option<&Path>, root: &Path, inputs: &mut Inputs) -> Result<CalibrationParams, CliError> {
    let path = explicit
        .map(Path::to_path_buf)
        .or_else(|| s.config.calib.clone())
        .unwrap_or_else(|| root.join(bundle::CALIB));
    let calib = s.calib(Some(&path), None)?;
    inputs.push(path);
    Ok(calib)
}

fn bundle_palette(s: &Settings, root: &Path, inputs: &mut Inputs) -> Result<LabelPalette, CliError> {
    let fallback = root.join(bundle::PALETTE);
    if s.config.palette.is_none() && fallback.is_file() {
        inputs.push(fallback.clone());
    }
    s.palette(Some(&fallback))
}

fn distortion(s: &Settings, explicit: Option<&Path>, inputs: &mut Inputs) -> Result<Option<DistortionField>, CliError> {
    inputs.extend(explicit.map(Path::to_path_buf));
    s.distortion(explicit)
}

#[derive(Serialize)]
struct ReconstructSummary {
    width: usize,
    height: usize,
    valid_pixels: usize,
    points: usize,
    compensated: bool,
}

pub fn reconstruct(a: &ReconstructArgs, s: &Settings) -> Result<Inputs, CliError> {
    let root = &a.bundle;
    let mut inputs = vec![root.join(bundle::LEFT), root.join(bundle::RIGHT)];
    let calib = bundle_calib(s, a.calib.as_deref(), root, &mut inputs)?;
    let sgbm = s.sgbm()?;
    let field = distortion(s, a.distortion.as_deref(), &mut inputs)?;
    let left = read_rgb_png(&inputs[0])?;
    let right = read_rgb_png(&inputs[1])?;
    let labels_path = root.join(bundle::LABELS);
    let labels = if labels_path.is_file() {
        let palette = bundle_palette(s, root, &mut inputs)?;
        inputs.push(labels_path.clone());
        Some(read_label_png(&labels_path, &palette)?)
    } else {
        None
    };
    let d = compute_disparity(&to_grayscale(&left), &to_grayscale(&right), &sgbm)?;
    let (mut cloud, idx) = reconstruct_cloud_indexed(&d, &left, &calib, labels.as_ref())?;
    if let Some(f) = &field {
        cloud = compensate(&cloud, &idx, f)?;
    }
    mkdir(&s.out)?;
    write_pfm(&s.out.join(bundle::DISPARITY), &d)?;
    write_ply(&s.out.join("cloud.ply"), &cloud)?;
    let summary = ReconstructSummary {
        width: d.width(),
        height: d.height(),
        valid_pixels: d.valid_count(),
        points: cloud.len(),
        compensated: field.is_some(),
    };
    write_json(&s.out.join("reconstruct.json"), &summary)?;
    Ok(inputs)
}

/// Everything registration needs that is shared across frames.
struct RegistrationJob {
    frames: Vec<(String, PathBuf)>,
    disparity: Option<PathBuf>,
    model: LabeledCloud,
    annotation: ModelAnnotation,
    palette: LabelPalette,
    calib: CalibrationParams,
    params: RegistrationParams,
    field: Option<DistortionField>,
}

impl RegistrationJob {
    fn load(root: &Path, disparity: Option<&Path>, s: &Settings, inputs: &mut Inputs) -> Result<Self, CliError> {
        let frames = bundle::frame_dirs(root)?;
        if disparity.is_some() && frames.len() != 1 {
            return Err(CliError::Invalid("--disparity applies to single bundles only".into()));
        }
        let calib = bundle_calib(s, None, root, inputs)?;
        let palette = bundle_palette(s, root, inputs)?;
        let (model, annotation) = bundle::read_model(root)?;
        inputs.push(root.join(bundle::MODEL));
        let field = distortion(s, None, inputs)?;
        if root.join(bundle::INDEX).is_file() {
            inputs.push(root.join(bundle::INDEX));
        }
        for (_, dir) in &frames {
            inputs.extend(bundle::frame_files(dir, disparity));
        }
        Ok(Self {
            frames,
            disparity: disparity.map(Path::to_path_buf),
            model,
            annotation,
            palette,
            calib,
            params: s.registration()?,
            field,
        })
    }

    fn read(&self, dir: &Path) -> Result<FrameData, CliError> {
        bundle::read_frame(dir, self.disparity.as_deref(), &self.palette)
    }

    fn run(&self, f: &FrameData, params: &RegistrationParams) -> Result<RegistrationOutput, RegistrationError> {
        let frame = Frame {
            disparity: &f.disparity,
            rgb: &f.rgb,
            mask: &f.mask,
        };
        let Some(field) = &self.field else {
            return register(&self.model, &self.annotation, &self.palette, frame, &self.calib, params);
        };
        let stage = |stage: &'static str| {
            move |e: Box<dyn std::error::Error + Send + Sync>| RegistrationError::Stage { stage, source: e }
        };
        let a = colorize_model(&self.model, &self.annotation, &self.palette).map_err(|e| stage("colorize_model")(e.into()))?;
        let (b, idx) = mask_cloud_indexed(frame.disparity, frame.rgb, frame.mask, &self.palette, &self.calib)
            .map_err(|e| stage("mask_cloud")(e.into()))?;
        let b = compensate(&b, &idx, field).map_err(|e| stage("distortion")(e.into()))?;
        register_clouds(&a, &b, params)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameTransform {
    pub frame: String,
    pub t_refined: RigidTransform,
    pub t_init: RigidTransform,
}

#[derive(Serialize)]
struct StageSummary {
    stage: &'static str,
    points: usize,
}

#[derive(Serialize)]
struct FrameDiagnostics {
    frame: String,
    variant: Variant,
    stages: Vec<StageSummary>,
    inplane_angle: Option<f64>,
    ransac_inliers: usize,
    ransac_inlier_fraction: f64,
    fitness: f64,
    rmse: f64,
    converged: bool,
    icp_iterations: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameTiming {
    pub frame: String,
    /// Wall-clock seconds for the frame, reading included.
    pub latency_s: f64,
    pub stages: Vec<StageTiming>,
}

pub fn register_cmd(a: &RegisterArgs, s: &Settings) -> Result<Inputs, CliError> {
    let mut inputs = Vec::new();
    let job = RegistrationJob::load(&a.input, a.disparity.as_deref(), s, &mut inputs)?;
    let results: Vec<(RegistrationOutput, f64)> = job
        .frames
        .par_iter()
        .map(|(name, dir)| {
            let start = Instant::now();
            let f = job.read(dir)?;
            let out = job.run(&f, &job.params).map_err(|e| frame_error(name, e.into()))?;
            Ok((out, start.elapsed().as_secs_f64()))
        })
        .collect::<Result<_, CliError>>()?;
    mkdir(&s.out)?;
    let mut transforms = Vec::new();
    let mut diagnostics = Vec::new();
    let mut timings = Vec::new();
    for ((name, _), (out, latency)) in job.frames.iter().zip(results) {
        let d = out.diagnostics;
        transforms.push(FrameTransform {
            frame: name.clone(),
            t_refined: out.t_refined,
            t_init: out.t_init,
        });
        timings.push(FrameTiming {
            frame: name.clone(),
            latency_s: latency,
            stages: d.stages.iter().map(|st| StageTiming { stage: st.stage.into(), ms: st.ms }).collect(),
        });
        diagnostics.push(FrameDiagnostics {
            frame: name.clone(),
            variant: d.variant,
            stages: d.stages.iter().map(|st| StageSummary { stage: st.stage, points: st.points }).collect(),
            inplane_angle: d.inplane_angle,
            ransac_inliers: d.ransac_inliers,
            ransac_inlier_fraction: d.ransac_inlier_fraction,
            fitness: d.fitness,
            rmse: d.rmse,
            converged: d.converged,
            icp_iterations: d.icp_iterations,
        });
    }
    write_json(&s.out.join("transforms.json"), &transforms)?;
    write_json(&s.out.join("diagnostics.json"), &diagnostics)?;
    write_json(&s.out.join(TIMINGS), &timings)?;
    Ok(inputs)
}

fn frame_error(name: &str, e: CliError) -> CliError {
    match e {
        CliError::Stage { stage, message } => CliError::Stage {
            stage,
            message: format!("frame {name}: {message}"),
        },
        other => other,
    }
}

pub fn evaluate(a: &EvaluateArgs, s: &Settings) -> Result<Inputs, CliError> {
    let results: Vec<FrameTransform> = read_json(&a.results)?;
    let mut inputs = vec![a.results.clone()];
    let mut errors = Vec::with_capacity(results.len());
    for r in &results {
        let pose_path = a.reference.join(&r.frame).join(bundle::POSE);
        let pose: PoseFile = read_json(&pose_path)?;
        inputs.push(pose_path);
        errors.push(pose_error(&r.t_refined, &pose.truth));
    }
    let timings_path = a
        .timings
        .clone()
        .or_else(|| Some(a.results.parent()?.join(TIMINGS)).filter(|p| p.is_file()));
    let latencies = match &timings_path {
        Some(p) => {
            let t: Vec<FrameTiming> = read_json(p)?;
            inputs.push(p.clone());
            let mut lat = Vec::with_capacity(results.len());
            for r in &results {
                let ft = t
                    .iter()
                    .find(|f| f.frame == r.frame)
                    .ok_or_else(|| CliError::Invalid(format!("{}: no timing for frame {}", p.display(), r.frame)))?;
                lat.push(ft.latency_s);
            }
            lat
        }
        None => vec![0.0; results.len()],
    };
    mkdir(&s.out)?;
    if errors.len() < 2 {
        // too few frames for sequence statistics; per-frame rows only
        let mut w = csv::Writer::from_writer(create(&s.out.join("report.csv"))?);
        w.write_record(["frame", "e_t_mm", "e_r_deg", "latency_s", "outlier"])?;
        for (i, (e, l)) in errors.iter().zip(&latencies).enumerate() {
            w.write_record([i.to_string(), e.e_t.to_string(), e.e_r.to_string(), l.to_string(), String::new()])?;
        }
        w.flush().map_err(|e| CliError::io(s.out.join("report.csv"), e))?;
        write_json(&s.out.join("summary.json"), &serde_json::json!({ "errors": errors, "latencies": latencies }))?;
        return Ok(inputs);
    }
    let report = sequence_statistics(&errors, &latencies)?;
    report.write_csv(create(&s.out.join("report.csv"))?)?;
    write_json(&s.out.join("summary.json"), &report)?;
    Ok(inputs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub frame: String,
    pub variant: Variant,
    pub status: String,
    pub e_t_mm: f64,
    pub e_r_deg: f64,
    pub ransac_inliers: usize,
    pub fitness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub variant: Variant,
    pub frames: usize,
    pub failed: usize,
    /// Mean and standard deviation after Tukey exclusion.
    pub e_t_mean: f64,
    pub e_t_std: f64,
    pub e_r_mean: f64,
    pub e_r_std: f64,
    /// Median and interquartile range over all registered frames.
    pub e_t_median: f64,
    pub e_t_iqr: f64,
    pub e_r_median: f64,
    pub e_r_iqr: f64,
    pub t_outliers: usize,
    pub r_outliers: usize,
}

impl BenchSummary {
    /// Fewer than two frames registered: no statistics.
    fn failed(variant: Variant, frames: usize, ok: usize) -> Self {
        Self {
            variant,
            frames,
            failed: frames - ok,
            e_t_mean: f64::NAN,
            e_t_std: f64::NAN,
            e_r_mean: f64::NAN,
            e_r_std: f64::NAN,
            e_t_median: f64::NAN,
            e_t_iqr: f64::NAN,
            e_r_median: f64::NAN,
            e_r_iqr: f64::NAN,
            t_outliers: 0,
            r_outliers: 0,
        }
    }

    fn new(variant: Variant, frames: usize, report: &SequenceReport) -> Self {
        Self {
            variant,
            frames,
            failed: frames - report.errors.len(),
            e_t_mean: report.translation.mean,
            e_t_std: report.translation.std,
            e_r_mean: report.rotation.mean,
            e_r_std: report.rotation.std,
            e_t_median: report.translation_raw.median,
            e_t_iqr: report.translation_raw.iqr,
            e_r_median: report.rotation_raw.median,
            e_r_iqr: report.rotation_raw.iqr,
            t_outliers: report.translation_outliers.len(),
            r_outliers: report.rotation_outliers.len(),
        }
    }
}

pub fn bench(a: &BenchArgs, s: &Settings) -> Result<Inputs, CliError> {
    let mut inputs = Vec::new();
    let job = RegistrationJob::load(&a.input, None, s, &mut inputs)?;
    for (_, dir) in &job.frames {
        inputs.push(dir.join(bundle::POSE));
    }
    type Cell = (BenchRow, f64);
    let per_frame: Vec<Vec<Cell>> = job
        .frames
        .par_iter()
        .map(|(name, dir)| {
            let f = job.read(dir)?;
            let truth = bundle::read_pose(dir)?.truth;
            let row = |variant: Variant| {
                let params = RegistrationParams { variant, ..job.params };
                let start = Instant::now();
                let r = job.run(&f, &params);
                let secs = start.elapsed().as_secs_f64();
                let row = match r {
                    Ok(out) => {
                        let e = pose_error(&out.t_refined, &truth);
                        BenchRow {
                            frame: name.clone(),
                            variant,
                            status: "ok".into(),
                            e_t_mm: e.e_t,
                            e_r_deg: e.e_r,
                            ransac_inliers: out.diagnostics.ransac_inliers,
                            fitness: out.diagnostics.fitness,
                        }
                    }
                    Err(e) => BenchRow {
                        frame: name.clone(),
                        variant,
                        status: CliError::from(e).to_string(),
                        e_t_mm: f64::NAN,
                        e_r_deg: f64::NAN,
                        ransac_inliers: 0,
                        fitness: 0.0,
                    },
                };
                (row, secs)
            };
            Ok(Variant::ALL.into_iter().map(row).collect())
        })
        .collect::<Result<_, CliError>>()?;
    let cells: Vec<Cell> = per_frame.into_iter().flatten().collect();
    mkdir(&s.out)?;
    let mut w = csv::Writer::from_writer(create(&s.out.join("bench.csv"))?);
    for (row, _) in &cells {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| CliError::io(s.out.join("bench.csv"), e))?;

    let mut summaries = Vec::new();
    let mut timings = Vec::new();
    for variant in Variant::ALL {
        let mine: Vec<&Cell> = cells.iter().filter(|(r, _)| r.variant == variant).collect();
        let ok: Vec<&Cell> = mine.iter().copied().filter(|(r, _)| r.status == "ok").collect();
        let errors: Vec<PoseError> = ok.iter().map(|(r, _)| PoseError { e_t: r.e_t_mm, e_r: r.e_r_deg }).collect();
        let latencies: Vec<f64> = ok.iter().map(|(_, t)| *t).collect();
        summaries.push(match sequence_statistics(&errors, &vec![0.0; errors.len()]) {
            Ok(report) => BenchSummary::new(variant, mine.len(), &report),
            Err(_) => BenchSummary::failed(variant, mine.len(), errors.len()),
        });
        timings.push(serde_json::json!({
            "variant": variant,
            "mean_latency_s": latencies.iter().sum::<f64>() / latencies.len().max(1) as f64,
        }));
    }
    let mut w = csv::Writer::from_writer(create(&s.out.join("summary.csv"))?);
    for row in &summaries {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| CliError::io(s.out.join("summary.csv"), e))?;
    write_json(&s.out.join(TIMINGS), &timings)?;
    Ok(inputs)
}
