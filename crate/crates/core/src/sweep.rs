//! Monte-Carlo noise sweep over seeded trials.

use rayon::prelude::*;

use crate::curve::undistort_points;
use crate::error::{Error, Result};
use crate::geometry::{mean_std, remove_distortion, CorrespondenceSet, Point2};
use crate::pipeline::{
    step1_estimate_cod, step2_init, step3a_model_based, step3b_model_free, CalibrationResult, DistortionPayload,
    Mode, ModelFreeConfig, PipelineConfig,
};
use crate::synth::{add_noise, generate_dense, GridDomain, GroundTruthScene, NoiseSpec};

pub const SWEEP_HEADER: [&str; 7] = ["sigma", "mode", "parameter", "mean_error", "std_error", "n_ok", "n_fail"];
/// Reported error quantities, in px.
pub const SWEEP_PARAMETERS: [&str; 6] = ["fx", "fy", "u0", "v0", "cod", "disparity"];
/// Grid spacing of the sweep scenes, px.
pub const SWEEP_SPACING_PX: f64 = 16.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub sigmas: Vec<f64>,
    pub trials: usize,
    pub modes: Vec<Mode>,
    pub spacing_px: f64,
    /// Trial `i` uses seed `base_seed + i` at every noise level.
    pub base_seed: u64,
    pub pipeline: PipelineConfig,
}

impl SweepConfig {
    /// Ten levels evenly covering `[0, 1]` px.
    pub fn reference_sigmas() -> Vec<f64> {
        (0..10).map(|i| i as f64 / 9.0).collect()
    }

    pub fn new(sigmas: Vec<f64>, trials: usize, modes: Vec<Mode>) -> SweepConfig {
        SweepConfig {
            sigmas,
            trials,
            modes,
            spacing_px: SWEEP_SPACING_PX,
            base_seed: 1,
            pipeline: PipelineConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigmas.is_empty() || self.trials == 0 || self.modes.is_empty() {
            return Err(Error::InvalidParameter("sweep needs sigmas, trials and modes".into()));
        }
        for &s in &self.sigmas {
            NoiseSpec::new(s, 0)?;
        }
        if !(self.spacing_px >= 1.0) {
            return Err(Error::InvalidParameter(format!("spacing must be >= 1 px, got {}", self.spacing_px)));
        }
        Ok(())
    }
}

/// Absolute errors of one calibrated trial against ground truth, px.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellErrors {
    pub fx: f64,
    pub fy: f64,
    pub u0: f64,
    pub v0: f64,
    pub cod: f64,
    /// Mean distance between ground-truth ideal points and the undistorted detections.
    pub disparity: f64,
}

impl CellErrors {
    pub fn get(&self, parameter: &str) -> Option<f64> {
        Some(match parameter {
            "fx" => self.fx,
            "fy" => self.fy,
            "u0" => self.u0,
            "v0" => self.v0,
            "cod" => self.cod,
            "disparity" => self.disparity,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub sigma: f64,
    pub seed: u64,
    pub mode: Mode,
    pub outcome: std::result::Result<CellErrors, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub sigma: f64,
    pub mode: Mode,
    pub parameter: &'static str,
    pub mean_error: f64,
    pub std_error: f64,
    pub n_ok: usize,
    pub n_fail: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub cells: Vec<SweepCell>,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn row(&self, sigma: f64, mode: Mode, parameter: &str) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.sigma == sigma && r.mode == mode && r.parameter == parameter)
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        wtr.write_record(SWEEP_HEADER)?;
        for r in &self.rows {
            wtr.write_record([
                r.sigma.to_string(),
                r.mode.as_str().to_string(),
                r.parameter.to_string(),
                r.mean_error.to_string(),
                r.std_error.to_string(),
                r.n_ok.to_string(),
                r.n_fail.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn undistortion_error(set: &CorrespondenceSet, r: &CalibrationResult) -> Result<f64> {
    let ideal = set
        .ideal
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("sweep scenes need ideal points".into()))?;
    let estimated: Vec<Point2> = match &r.distortion {
        DistortionPayload::Polynomial(k) => set
            .image
            .iter()
            .map(|p| remove_distortion(p, &r.intrinsics, k).unwrap_or(Point2::new(f64::NAN, f64::NAN)))
            .collect(),
        DistortionPayload::Curve(c) => undistort_points(&set.image, c)?.into_iter().map(|u| u.point).collect(),
        DistortionPayload::None => set.image.clone(),
    };
    let d: Vec<f64> = estimated.iter().zip(ideal).map(|(a, b)| a.dist(b)).collect();
    let (m, _) = mean_std(&d);
    if !m.is_finite() {
        return Err(Error::OptimizationDiverged("undistortion did not converge".into()));
    }
    Ok(m)
}

/// Calibrates one noisy set in every requested mode; Steps 1 and 2 are shared.
fn run_trial(
    scene: &GroundTruthScene,
    set: &CorrespondenceSet,
    sigma: f64,
    config: &SweepConfig,
) -> Vec<std::result::Result<CellErrors, String>> {
    let fail = |e: Error| vec![Err(e.to_string()); config.modes.len()];
    let step1 = match step1_estimate_cod(set, &scene.sensor, &config.pipeline.step1) {
        Ok(s) => s,
        Err(e) => return fail(e.at(crate::Stage::Step1)),
    };
    let cod = step1.params.cod();
    let step2 = match step2_init(set, cod, &scene.sensor) {
        Ok(s) => s,
        Err(e) => return fail(e.at(crate::Stage::Step2)),
    };
    let truth = &scene.intrinsics;
    let cod_err = cod.dist(&truth.principal_point());
    config
        .modes
        .iter()
        .map(|&mode| {
            let result = match mode {
                Mode::ModelBased => step3a_model_based(set, &step2.result, &config.pipeline.model_based)
                    .map_err(|e| e.at(crate::Stage::Step3A)),
                Mode::ModelFree => {
                    let mf = ModelFreeConfig {
                        tol: config.pipeline.model_free.tol,
                        ..ModelFreeConfig::for_known_noise(sigma)
                    };
                    step3b_model_free(set, &step2.result, &mf)
                        .map(|o| o.result)
                        .map_err(|e| e.at(crate::Stage::Step3B))
                }
            }
            .map_err(|e| e.to_string())?;
            let a = &result.intrinsics;
            Ok(CellErrors {
                fx: (a.fx - truth.fx).abs(),
                fy: (a.fy - truth.fy).abs(),
                u0: (a.u0 - truth.u0).abs(),
                v0: (a.v0 - truth.v0).abs(),
                cod: cod_err,
                disparity: undistortion_error(set, &result).map_err(|e| e.to_string())?,
            })
        })
        .collect()
}

/// Calibrates `trials` noisy copies of `scene` per noise level and mode and
/// aggregates absolute errors. Failed cells are counted, not fatal.
pub fn run_noise_sweep(scene: &GroundTruthScene, config: &SweepConfig) -> Result<SweepTable> {
    config.validate()?;
    let clean = generate_dense(
        scene,
        GridDomain::IdealImage {
            spacing_px: config.spacing_px,
        },
    )?;
    let jobs: Vec<(f64, u64)> = config
        .sigmas
        .iter()
        .flat_map(|&s| (0..config.trials as u64).map(move |i| (s, i)))
        .collect();
    let per_job: Vec<Vec<SweepCell>> = jobs
        .par_iter()
        .map(|&(sigma, i)| {
            let seed = config.base_seed + i;
            let noisy = add_noise(&clean, &NoiseSpec { sigma, seed });
            run_trial(scene, &noisy, sigma, config)
                .into_iter()
                .zip(&config.modes)
                .map(|(outcome, &mode)| SweepCell {
                    sigma,
                    seed,
                    mode,
                    outcome,
                })
                .collect()
        })
        .collect();
    let cells: Vec<SweepCell> = per_job.into_iter().flatten().collect();

    let mut rows = Vec::new();
    for &sigma in &config.sigmas {
        for &mode in &config.modes {
            let group: Vec<&SweepCell> = cells.iter().filter(|c| c.sigma == sigma && c.mode == mode).collect();
            let ok: Vec<&CellErrors> = group.iter().filter_map(|c| c.outcome.as_ref().ok()).collect();
            for parameter in SWEEP_PARAMETERS {
                let v: Vec<f64> = ok.iter().filter_map(|e| e.get(parameter)).collect();
                let (mean_error, std_error) = if v.is_empty() { (f64::NAN, f64::NAN) } else { mean_std(&v) };
                rows.push(SweepRow {
                    sigma,
                    mode,
                    parameter,
                    mean_error,
                    std_error,
                    n_ok: ok.len(),
                    n_fail: group.len() - ok.len(),
                });
            }
        }
    }
    Ok(SweepTable { cells, rows })
}
