//! Calibration of the linear model: pixel size from checkerboard corners and
//! depth response from step-height logs, plus the linear vs reciprocal model
//! comparison.

use std::io::Read;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::projection::{pinhole_depth, PinholeFitParams};

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("all disparities are equal; the fit is rank deficient")]
    RankDeficient,
    #[error("pinhole fit diverged")]
    Divergence,
    #[error("model pole at h = {b} lies inside the data range [{lo}, {hi}]")]
    PoleInsideData { b: f64, lo: f64, hi: f64 },
    #[error("corner grid must be at least 2x2, got {rows}x{cols}")]
    DegenerateGrid { rows: usize, cols: usize },
    #[error("expected {expected} corners, got {got}")]
    CornerCount { expected: usize, got: usize },
    #[error("non-finite corner coordinate")]
    NonFiniteCorner,
    #[error("square size must be positive")]
    InvalidSquareSize,
    #[error("invalid step sample: {0}")]
    InvalidSample(String),
    #[error("step log: {0}")]
    Csv(#[from] csv::Error),
}

/// One stage position of a step-height experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSample {
    /// Relative stage height, mm.
    pub z_true: f64,
    /// Mean disparity over the repeats, px.
    pub h_mean: f64,
    pub repeats: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Linear,
    Pinhole,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FitParams {
    Linear {
        /// px/mm, reciprocal of the fitted slope.
        h_rho: f64,
        /// Fitted intercept, mm.
        d_e: f64,
    },
    Pinhole(PinholeFitParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub model: ModelKind,
    pub params: FitParams,
    pub r_squared: f64,
    /// Root mean square of the depth residuals, mm.
    pub rmse: f64,
    /// Mean absolute depth residual, mm.
    pub mae: f64,
    /// `z_true - z_fit` per sample, mm.
    pub residuals: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl FitReport {
    fn new(
        model: ModelKind,
        params: FitParams,
        samples: &[StepSample],
        predicted: &[f64],
        iterations: usize,
        converged: bool,
    ) -> Self {
        let residuals: Vec<f64> = samples
            .iter()
            .zip(predicted)
            .map(|(s, p)| s.z_true - p)
            .collect();
        let n = residuals.len() as f64;
        let ss_res: f64 = residuals.iter().map(|r| r * r).sum();
        Self {
            model,
            params,
            r_squared: r_squared(samples, ss_res),
            rmse: (ss_res / n).sqrt(),
            mae: residuals.iter().map(|r| r.abs()).sum::<f64>() / n,
            residuals,
            iterations,
            converged,
        }
    }
}

fn r_squared(samples: &[StepSample], ss_res: f64) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().map(|s| s.z_true).sum::<f64>() / n;
    let ss_tot: f64 = samples.iter().map(|s| (s.z_true - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return if ss_res == 0.0 { 1.0 } else { 0.0 };
    }
    (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
}

fn check_samples(samples: &[StepSample], need: usize) -> Result<(), CalibrationError> {
    if samples.len() < need {
        return Err(CalibrationError::TooFewSamples {
            need,
            got: samples.len(),
        });
    }
    for s in samples {
        if !(s.z_true.is_finite() && s.h_mean.is_finite()) || s.repeats == 0 {
            return Err(CalibrationError::InvalidSample(format!("{s:?}")));
        }
    }
    Ok(())
}

/// Ordinary least squares `z = alpha h + beta`; `h_rho = 1 / alpha`, `d_e = beta`.
pub fn fit_linear(samples: &[StepSample]) -> Result<FitReport, CalibrationError> {
    check_samples(samples, 3)?;
    let n = samples.len() as f64;
    let mh = samples.iter().map(|s| s.h_mean).sum::<f64>() / n;
    let mz = samples.iter().map(|s| s.z_true).sum::<f64>() / n;
    let (mut shh, mut shz) = (0.0, 0.0);
    for s in samples {
        shh += (s.h_mean - mh).powi(2);
        shz += (s.h_mean - mh) * (s.z_true - mz);
    }
    if shh == 0.0 || shz == 0.0 {
        return Err(CalibrationError::RankDeficient);
    }
    let alpha = shz / shh;
    let beta = mz - alpha * mh;
    let predicted: Vec<f64> = samples.iter().map(|s| alpha * s.h_mean + beta).collect();
    Ok(FitReport::new(
        ModelKind::Linear,
        FitParams::Linear {
            h_rho: 1.0 / alpha,
            d_e: beta,
        },
        samples,
        &predicted,
        1,
        true,
    ))
}

const PINHOLE_MAX_ITERATIONS: usize = 200;
const PINHOLE_STEP_TOL: f64 = 1e-10;

/// Least squares for `(a, c)` with the pole `b` held fixed.
fn solve_ac(samples: &[StepSample], b: f64) -> Option<(f64, f64)> {
    let n = samples.len() as f64;
    let u: Vec<f64> = samples.iter().map(|s| 1.0 / (s.h_mean - b)).collect();
    let mu = u.iter().sum::<f64>() / n;
    let mz = samples.iter().map(|s| s.z_true).sum::<f64>() / n;
    let (mut suu, mut suz) = (0.0, 0.0);
    for (ui, s) in u.iter().zip(samples) {
        suu += (ui - mu).powi(2);
        suz += (ui - mu) * (s.z_true - mz);
    }
    (suu > 0.0).then(|| {
        let a = suz / suu;
        (a, mz - a * mu)
    })
}

fn pinhole_sse(samples: &[StepSample], p: &PinholeFitParams) -> f64 {
    samples
        .iter()
        .map(|s| (p.a / (s.h_mean - p.b) + p.c - s.z_true).powi(2))
        .sum()
}

/// Levenberg-style damped Gauss-Newton fit of `z = a / (h - b) + c`.
///
/// The pole starts one pixel below the smallest disparity and is never
/// allowed to cross into the data range. Iteration stops when the scaled
/// step norm drops below 1e-10 or after 200 iterations.
pub fn fit_pinhole(samples: &[StepSample]) -> Result<FitReport, CalibrationError> {
    check_samples(samples, 4)?;
    let lo = samples.iter().map(|s| s.h_mean).fold(f64::INFINITY, f64::min);
    let hi = samples.iter().map(|s| s.h_mean).fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return Err(CalibrationError::RankDeficient);
    }
    let b0 = lo - 1.0;
    let (a0, c0) = solve_ac(samples, b0).ok_or(CalibrationError::RankDeficient)?;
    let mut p = PinholeFitParams { a: a0, b: b0, c: c0 };
    let mut sse = pinhole_sse(samples, &p);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < PINHOLE_MAX_ITERATIONS {
        iterations += 1;
        let mut jtj = Matrix3::<f64>::zeros();
        let mut jtr = Vector3::<f64>::zeros();
        for s in samples {
            let inv = 1.0 / (s.h_mean - p.b);
            let j = Vector3::new(inv, p.a * inv * inv, 1.0);
            let r = p.a * inv + p.c - s.z_true;
            jtj += j * j.transpose();
            jtr += j * r;
        }
        let mut accepted = false;
        while lambda < 1e20 {
            let mut damped = jtj;
            for k in 0..3 {
                damped[(k, k)] += lambda * jtj[(k, k)].max(f64::MIN_POSITIVE);
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&(-jtr))) else {
                lambda *= 10.0;
                continue;
            };
            let cand = PinholeFitParams {
                a: p.a + step[0],
                b: p.b + step[1],
                c: p.c + step[2],
            };
            let cand_sse = pinhole_sse(samples, &cand);
            if cand.b < lo && cand_sse.is_finite() && cand_sse <= sse {
                let scaled = Vector3::new(
                    step[0] / (p.a.abs() + 1.0),
                    step[1] / (p.b.abs() + 1.0),
                    step[2] / (p.c.abs() + 1.0),
                )
                .norm();
                p = cand;
                sse = cand_sse;
                lambda = (lambda * 0.1).max(1e-12);
                accepted = true;
                if scaled < PINHOLE_STEP_TOL {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No descent direction left at any damping: stationary point.
            converged = true;
        }
        if converged {
            break;
        }
    }

    if ![p.a, p.b, p.c].iter().all(|v| v.is_finite()) {
        return Err(CalibrationError::Divergence);
    }
    if p.b >= lo && p.b <= hi {
        return Err(CalibrationError::PoleInsideData { b: p.b, lo, hi });
    }
    let predicted: Vec<f64> = samples
        .iter()
        .map(|s| pinhole_depth(s.h_mean, &p).map_err(|_| CalibrationError::Divergence))
        .collect::<Result<_, _>>()?;
    Ok(FitReport::new(
        ModelKind::Pinhole,
        FitParams::Pinhole(p),
        samples,
        &predicted,
        iterations,
        converged,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelComparison {
    pub linear: FitReport,
    pub pinhole: FitReport,
    pub winner: ModelKind,
}

/// Fits both models on the same samples; the lower RMSE wins, ties go to linear.
pub fn compare_models(samples: &[StepSample]) -> Result<ModelComparison, CalibrationError> {
    let linear = fit_linear(samples)?;
    let pinhole = fit_pinhole(samples)?;
    let winner = if pinhole.rmse < linear.rmse {
        ModelKind::Pinhole
    } else {
        ModelKind::Linear
    };
    Ok(ModelComparison {
        linear,
        pinhole,
        winner,
    })
}

/// One row of a step log: a single disparity reading at a stage height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepReading {
    pub z_true_mm: f64,
    pub h_px: f64,
}

/// Averages repeated readings per stage height, keeping first-seen order.
pub fn average_readings(readings: &[StepReading]) -> Vec<StepSample> {
    let mut out: Vec<(f64, f64, usize)> = Vec::new();
    for r in readings {
        match out.iter_mut().find(|(z, _, _)| *z == r.z_true_mm) {
            Some(entry) => {
                entry.1 += r.h_px;
                entry.2 += 1;
            }
            None => out.push((r.z_true_mm, r.h_px, 1)),
        }
    }
    out.into_iter()
        .map(|(z, sum, n)| StepSample {
            z_true: z,
            h_mean: sum / n as f64,
            repeats: n,
        })
        .collect()
}

/// Reads a `z_true_mm,h_px` CSV step log.
pub fn read_step_log<R: Read>(reader: R) -> Result<Vec<StepReading>, CalibrationError> {
    let mut rdr = csv::Reader::from_reader(reader);
    rdr.deserialize()
        .map(|r| r.map_err(CalibrationError::from))
        .collect()
}

pub fn write_step_log<W: std::io::Write>(
    writer: W,
    readings: &[StepReading],
) -> Result<(), CalibrationError> {
    let mut wtr = csv::Writer::from_writer(writer);
    for r in readings {
        wtr.serialize(r)?;
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Detected checkerboard corners in row-major grid order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CornerObservation {
    /// `(rows, cols)` of inner corners.
    pub grid: (usize, usize),
    #[serde(rename = "square_size_mm")]
    pub square_size: f64,
    pub corners: Vec<[f64; 2]>,
}

/// Object-space pixel size `(P_rho_x, P_rho_y)` in mm/px from the mean
/// horizontal and vertical corner spacing.
pub fn calibrate_pixel_size(obs: &CornerObservation) -> Result<(f64, f64), CalibrationError> {
    let (rows, cols) = obs.grid;
    if rows < 2 || cols < 2 {
        return Err(CalibrationError::DegenerateGrid { rows, cols });
    }
    if obs.corners.len() != rows * cols {
        return Err(CalibrationError::CornerCount {
            expected: rows * cols,
            got: obs.corners.len(),
        });
    }
    if !(obs.square_size > 0.0 && obs.square_size.is_finite()) {
        return Err(CalibrationError::InvalidSquareSize);
    }
    if obs.corners.iter().flatten().any(|v| !v.is_finite()) {
        return Err(CalibrationError::NonFiniteCorner);
    }
    let at = |r: usize, c: usize| obs.corners[r * cols + c];
    let dist = |a: [f64; 2], b: [f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    let mut horiz = 0.0;
    let mut vert = 0.0;
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                horiz += dist(at(r, c), at(r, c + 1));
            }
            if r + 1 < rows {
                vert += dist(at(r, c), at(r + 1, c));
            }
        }
    }
    let horiz = horiz / (rows * (cols - 1)) as f64;
    let vert = vert / ((rows - 1) * cols) as f64;
    if horiz == 0.0 || vert == 0.0 {
        return Err(CalibrationError::DegenerateGrid { rows, cols });
    }
    Ok((obs.square_size / horiz, obs.square_size / vert))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn line_samples(slope: f64, icpt: f64, hs: &[f64]) -> Vec<StepSample> {
        hs.iter()
            .map(|&h| StepSample {
                z_true: slope * h + icpt,
                h_mean: h,
                repeats: 1,
            })
            .collect()
    }

    #[test]
    fn exact_line() {
        let hs: Vec<f64> = (0..10).map(|i| i as f64 * 3.0).collect();
        let r = fit_linear(&line_samples(0.1, 500.0, &hs)).unwrap();
        let FitParams::Linear { h_rho, d_e } = r.params else {
            panic!()
        };
        assert!((h_rho - 10.0).abs() < 1e-9);
        assert!((d_e - 500.0).abs() < 1e-9);
        assert_eq!(r.r_squared, 1.0);
        assert!(r.rmse < 1e-9);
    }

    #[test]
    fn rank_deficiency() {
        let s = line_samples(0.0, 1.0, &[2.0, 2.0, 2.0]);
        assert!(matches!(fit_linear(&s), Err(CalibrationError::RankDeficient)));
        let s = vec![
            StepSample {
                z_true: 0.0,
                h_mean: 2.0,
                repeats: 1
            };
            5
        ];
        assert!(fit_pinhole(&s).is_err());
        assert!(matches!(
            fit_linear(&s[..2]),
            Err(CalibrationError::TooFewSamples { .. })
        ));
    }

    #[test]
    fn pinhole_recovers_exact_reciprocal() {
        // z = 1000 / (h - 2) + 50
        let samples: Vec<StepSample> = (0..15)
            .map(|i| {
                let h = 10.0 + i as f64 * 4.0;
                StepSample {
                    z_true: 1000.0 / (h - 2.0) + 50.0,
                    h_mean: h,
                    repeats: 1,
                }
            })
            .collect();
        let r = fit_pinhole(&samples).unwrap();
        let FitParams::Pinhole(p) = r.params else {
            panic!()
        };
        assert!(((p.a - 1000.0) / 1000.0).abs() < 1e-6, "{p:?}");
        assert!(((p.b - 2.0) / 2.0).abs() < 1e-6, "{p:?}");
        assert!(((p.c - 50.0) / 50.0).abs() < 1e-6, "{p:?}");
        assert!(r.converged);
        let cmp = compare_models(&samples).unwrap();
        assert_eq!(cmp.winner, ModelKind::Pinhole);
    }

    #[test]
    fn pinhole_mimics_a_narrow_line() {
        let hs: Vec<f64> = (0..21).map(|i| 40.0 + i as f64 * 0.15).collect();
        let s = line_samples(0.3333, 2.0, &hs);
        let lin = fit_linear(&s).unwrap();
        let pin = fit_pinhole(&s).unwrap();
        assert!(pin.r_squared >= lin.r_squared - 0.05, "{}", pin.r_squared);
    }

    #[test]
    fn comparison_bookkeeping() {
        let hs: Vec<f64> = (0..8).map(|i| i as f64 * 2.0 + 1.0).collect();
        let s = line_samples(0.5, 0.0, &hs);
        let mut noisy = s.clone();
        noisy[3].z_true += 0.01;
        let cmp = compare_models(&noisy).unwrap();
        assert_eq!(cmp.linear.residuals.len(), noisy.len());
        assert_eq!(cmp.pinhole.residuals.len(), noisy.len());
        let (FitParams::Linear { h_rho, d_e }, FitParams::Pinhole(ph)) =
            (cmp.linear.params, cmp.pinhole.params)
        else {
            panic!("params do not match model kinds");
        };
        for (i, sample) in noisy.iter().enumerate() {
            let lin = sample.h_mean / h_rho + d_e;
            let pin = ph.a / (sample.h_mean - ph.b) + ph.c;
            assert!((cmp.linear.residuals[i] - (sample.z_true - lin)).abs() < 1e-12);
            assert!((cmp.pinhole.residuals[i] - (sample.z_true - pin)).abs() < 1e-12);
        }
        let rmse = |r: &[f64]| (r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64).sqrt();
        assert!((cmp.linear.rmse - rmse(&cmp.linear.residuals)).abs() < 1e-15);
        assert!((cmp.pinhole.rmse - rmse(&cmp.pinhole.residuals)).abs() < 1e-15);
        let expect = if cmp.pinhole.rmse < cmp.linear.rmse {
            ModelKind::Pinhole
        } else {
            ModelKind::Linear
        };
        assert_eq!(cmp.winner, expect);
    }

    #[test]
    fn reciprocal_curve_wins_for_pinhole_majority() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = Normal::new(0.0, 0.05).unwrap();
        let mut pinhole_wins = 0;
        for _ in 0..100 {
            let s: Vec<StepSample> = (0..21)
                .map(|i| {
                    let h = 5.0 + i as f64 * 3.0;
                    StepSample {
                        z_true: 400.0 / (h - 1.0) + 3.0 + noise.sample(&mut rng),
                        h_mean: h,
                        repeats: 1,
                    }
                })
                .collect();
            if compare_models(&s).unwrap().winner == ModelKind::Pinhole {
                pinhole_wins += 1;
            }
        }
        assert!(pinhole_wins > 50, "{pinhole_wins}");
    }

    #[test]
    fn step_protocol_shape_fits_tightly() {
        // 21 steps of 0.50 mm, 10 repeats, sigma equivalent to 0.05 mm depth.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h_rho = 10.0;
        let noise = Normal::new(0.0, 0.05 * h_rho).unwrap();
        let mut pass = 0;
        for _ in 0..100 {
            let readings: Vec<StepReading> = (0..21)
                .flat_map(|i| {
                    let z = i as f64 * 0.5;
                    (0..10)
                        .map(|_| StepReading {
                            z_true_mm: z,
                            h_px: z * h_rho + noise.sample(&mut rng),
                        })
                        .collect::<Vec<_>>()
                })
                .collect();
            let r = fit_linear(&average_readings(&readings)).unwrap();
            if r.r_squared >= 0.999 {
                pass += 1;
            }
        }
        assert!(pass >= 99, "{pass}");
    }

    #[test]
    fn step_log_csv_round_trip_and_averaging() {
        let readings = vec![
            StepReading {
                z_true_mm: 0.0,
                h_px: 1.0,
            },
            StepReading {
                z_true_mm: 0.0,
                h_px: 3.0,
            },
            StepReading {
                z_true_mm: 0.5,
                h_px: 6.0,
            },
        ];
        let mut buf = Vec::new();
        write_step_log(&mut buf, &readings).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("z_true_mm,h_px\n"));
        let back = read_step_log(buf.as_slice()).unwrap();
        assert_eq!(back, readings);
        let avg = average_readings(&back);
        assert_eq!(avg.len(), 2);
        assert_eq!(avg[0].h_mean, 2.0);
        assert_eq!(avg[0].repeats, 2);
        assert_eq!(avg[1].repeats, 1);
    }

    fn grid(rows: usize, cols: usize, sx: f64, sy: f64) -> CornerObservation {
        let corners = (0..rows)
            .flat_map(|r| (0..cols).map(move |c| [100.0 + c as f64 * sx, 50.0 + r as f64 * sy]))
            .collect();
        CornerObservation {
            grid: (rows, cols),
            square_size: 0.5,
            corners,
        }
    }

    #[test]
    fn pixel_size_from_corners() {
        let (px, py) = calibrate_pixel_size(&grid(6, 9, 6.5, 6.5)).unwrap();
        assert!((px - 0.5 / 6.5).abs() < 1e-12);
        assert!((py - 0.0769).abs() < 1e-4);
        let (px2, py2) = calibrate_pixel_size(&grid(6, 9, 13.0, 6.5)).unwrap();
        assert!((px2 - px / 2.0).abs() < 1e-12);
        assert!((py2 - py).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let jitter = Normal::new(0.0, 0.1).unwrap();
        let mut obs = grid(9, 12, 6.5, 6.5);
        for c in &mut obs.corners {
            c[0] += jitter.sample(&mut rng);
            c[1] += jitter.sample(&mut rng);
        }
        let (jx, jy) = calibrate_pixel_size(&obs).unwrap();
        assert!((jx / px - 1.0).abs() < 0.01);
        assert!((jy / py - 1.0).abs() < 0.01);
    }

    #[test]
    fn corner_errors() {
        assert!(matches!(
            calibrate_pixel_size(&grid(1, 5, 6.5, 6.5)),
            Err(CalibrationError::DegenerateGrid { .. })
        ));
        let mut g = grid(3, 3, 6.5, 6.5);
        g.corners[4][0] = f64::NAN;
        assert!(matches!(
            calibrate_pixel_size(&g),
            Err(CalibrationError::NonFiniteCorner)
        ));
        let mut g = grid(3, 3, 6.5, 6.5);
        g.corners.pop();
        assert!(calibrate_pixel_size(&g).is_err());
        let json = r#"{"grid":[2,2],"square_size_mm":0.5,"corners":[[0,0],[5,0],[0,5],[5,5]]}"#;
        let obs: CornerObservation = serde_json::from_str(json).unwrap();
        assert_eq!(calibrate_pixel_size(&obs).unwrap(), (0.1, 0.1));
    }

    proptest! {
        #[test]
        fn linear_fit_invariants(
            slope in 0.05f64..2.0,
            icpt in -10.0f64..10.0,
            shift in -100.0f64..100.0,
            scale in 0.2f64..5.0,
            noise in proptest::collection::vec(-0.1f64..0.1, 12),
        ) {
            let s: Vec<StepSample> = noise.iter().enumerate().map(|(i, e)| StepSample {
                z_true: slope * i as f64 + icpt + e,
                h_mean: i as f64,
                repeats: 1,
            }).collect();
            let base = fit_linear(&s).unwrap();
            prop_assert!(base.residuals.iter().sum::<f64>().abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&base.r_squared));
            prop_assert!(base.rmse >= 0.0 && base.mae >= 0.0);

            let shifted: Vec<StepSample> = s.iter().map(|x| StepSample { z_true: x.z_true + shift, ..*x }).collect();
            let r2 = fit_linear(&shifted).unwrap().r_squared;
            prop_assert!((r2 - base.r_squared).abs() < 1e-9);

            let scaled: Vec<StepSample> = s.iter().map(|x| StepSample { h_mean: x.h_mean * scale, ..*x }).collect();
            let (FitParams::Linear { h_rho: a, .. }, FitParams::Linear { h_rho: b, .. }) =
                (base.params, fit_linear(&scaled).unwrap().params) else { unreachable!() };
            prop_assert!((b - a * scale).abs() < 1e-9 * b.abs().max(1.0));
        }
    }
}
