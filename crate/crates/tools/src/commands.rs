//! Subcommands. Each stage reads its inputs from disk (or the configuration)
//! and writes its outputs, plus the fully resolved configuration, into its
//! own directory under the run directory:
//!
//! ```text
//! <out>/channels/     simulate     tx_NNN.sosc, manifest.toml, truth_sos.*
//! <out>/calibration/  calibrate    model.toml, sweep.csv, report.csv, ...
//! <out>/estimate/     estimate     estimate.toml, pattern.csv, delay_map.csv
//! <out>/reconstruct/  reconstruct  sos_map.*, trace.csv, metrics.csv, ...
//! <out>/experiment/   experiment   table3.csv, summary.csv, per-case maps
//! <out>/report/       report       table1..3.csv, curves, PNG maps
//! ```
//!
//! Wall-clock timestamps go only to `<out>/run.log`.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sos_core::calibrate::{score, CalibrationDataset, CalibrationModel, CalibrationScore};
use sos_core::delaytrack::DelayMap;
use sos_core::metrics::{cnr_db, cnr_linear, rmse_map, RegionLabels};
use sos_core::regress::{fit, DelayPattern, FitMethod, RegressionResult};
use sos_core::synthsim::ChannelFrame;
use sos_core::tomo::StopReason;
use sos_core::ImagingGrid;

use crate::config::PipelineConfig;
use crate::error::{ToolError, ToolResult};
use crate::io::{self, FrameEntry, Manifest, MapSidecar};
use crate::phantoms::DESK_SET;
use crate::pipeline::{self, Estimate, ReconOutput, Scene};

pub const CHANNELS_DIR: &str = "channels";
pub const CALIBRATION_DIR: &str = "calibration";
pub const ESTIMATE_DIR: &str = "estimate";
pub const RECONSTRUCT_DIR: &str = "reconstruct";
pub const EXPERIMENT_DIR: &str = "experiment";
pub const REPORT_DIR: &str = "report";
pub const RESOLVED_CONFIG: &str = "config.resolved.toml";
pub const TRUTH_MAP: &str = "truth_sos";
pub const MODEL_FILE: &str = "model.toml";
pub const LOG_FILE: &str = "run.log";

/// Relative BF-SoS offsets of the correction experiment.
pub const OFFSET_SCENARIOS: [(&str, f64); 2] = [("over", 0.015), ("under", -0.015)];

/// Appends a timestamped line to `<out>/run.log`; logging failures are
/// ignored.
pub fn log(out: &Path, msg: &str) {
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
    if io::create_dir(out).is_ok() {
        if let Ok(mut f) = OpenOptions::new().create(true).append(true).open(out.join(LOG_FILE)) {
            let _ = writeln!(f, "[{secs:.3}] {msg}");
        }
    }
}

fn stage_dir(out: &Path, name: &str, cfg: &PipelineConfig) -> ToolResult<PathBuf> {
    let dir = out.join(name);
    io::create_dir(&dir)?;
    io::write_text(&dir.join(RESOLVED_CONFIG), &cfg.to_toml())?;
    Ok(dir)
}

// -------------------------------------------------------------- simulate

/// Simulates every transmit of the estimation and reconstruction pairs for
/// the configured phantom.
pub fn cmd_simulate(cfg: &PipelineConfig, out: &Path) -> ToolResult<Manifest> {
    cfg.validate()?;
    let t = Instant::now();
    let dir = stage_dir(out, CHANNELS_DIR, cfg)?;
    let scene = Scene::from_config(cfg)?;
    let txs = cfg.transmit_elements();
    let frames = pipeline::simulate(&scene, &txs, cfg.medium.snr_db, cfg.seed)?;

    let grid = cfg.recon.slowness_grid(&cfg.array()?)?;
    let truth = pipeline::truth_on_slowness_grid(cfg, &scene.medium)?;
    io::write_map(&dir, TRUTH_MAP, &MapSidecar::new("sos", "m/s", &grid), &truth)?;

    let manifest = Manifest {
        format_version: io::FRAME_VERSION,
        seed: cfg.seed,
        num_scatterers: scene.field.len(),
        snr_db: cfg.medium.snr_db,
        truth_map: TRUTH_MAP.into(),
        frames: frames
            .iter()
            .map(|f| FrameEntry {
                tx_element: f.tx_element,
                file: io::frame_file_name(f.tx_element),
                num_rx: f.num_rx,
                num_samples: f.num_samples,
            })
            .collect(),
        array: cfg.array,
        pulse: cfg.pulse,
        scatterers: cfg.scatterers,
        medium: cfg.medium.clone(),
    };
    io::write_channel_set(&dir, &manifest, &frames)?;
    log(out, &format!("simulate: {} frames, {} scatterers in {:.2?}", frames.len(), scene.field.len(), t.elapsed()));
    Ok(manifest)
}

/// Reads a channel directory and checks it was acquired with the configured
/// array and pulse.
pub fn load_channels(cfg: &PipelineConfig, dir: &Path) -> ToolResult<(Manifest, Vec<ChannelFrame>)> {
    let (manifest, frames) = io::read_channel_set(dir)?;
    if manifest.array != cfg.array || manifest.pulse != cfg.pulse {
        return Err(ToolError::Config(format!(
            "channel data in {} was acquired with a different array or pulse than configured",
            dir.display()
        )));
    }
    Ok((manifest, frames))
}

// ------------------------------------------------------------- calibrate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub delta_c: f64,
    pub slope: f64,
    pub fit_r_squared: f64,
    pub fitted_slope: f64,
    pub split: String,
}

/// One column of the polynomial-degree comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegreeRow {
    pub degree: usize,
    pub train_points: usize,
    pub test_points: usize,
    pub r_squared: f64,
    pub rmse_m_s: f64,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetEstimateRow {
    pub degree: usize,
    pub delta_c_true: f64,
    pub delta_c_estimated: f64,
}

/// Line fit of one sweep pattern with one regression method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub delta_c: f64,
    pub method: String,
    pub slope: f64,
    pub r_squared: f64,
    pub rmse_ns: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternRow {
    pub theta_rad: f64,
    pub median_delay_s: f64,
    pub weight: f64,
    pub node_count: usize,
    pub fitted_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayRow {
    pub x_m: f64,
    pub z_m: f64,
    pub delay_s: f64,
    pub ncc: f64,
    pub valid: bool,
}

#[derive(Debug, Clone)]
pub struct CalibrationRun {
    pub dataset: CalibrationDataset,
    pub model: CalibrationModel,
    pub model_file: io::ModelFile,
    pub scores: Vec<CalibrationScore>,
}

pub fn method_name(m: FitMethod) -> &'static str {
    match m {
        FitMethod::Ols => "ols",
        FitMethod::Robust => "robust",
        FitMethod::Weighted => "weighted",
    }
}

fn pattern_rows(pattern: &DelayPattern, fit: &RegressionResult) -> Vec<PatternRow> {
    (0..pattern.len())
        .map(|i| PatternRow {
            theta_rad: pattern.thetas[i],
            median_delay_s: pattern.median_delays[i],
            weight: pattern.weights[i],
            node_count: pattern.bin_counts[i],
            fitted_s: fit.predict(pattern.thetas[i]),
        })
        .collect()
}

fn delay_rows(map: &DelayMap) -> Vec<DelayRow> {
    let g = map.grid;
    (0..g.len())
        .map(|k| DelayRow {
            x_m: g.x(k % g.nx),
            z_m: g.z(k / g.nx),
            delay_s: map.delays[k],
            ncc: map.ncc[k],
            valid: map.valid[k],
        })
        .collect()
}

/// Simulates the homogeneous calibration phantom, sweeps the BF-SoS offset,
/// fits the slope model and scores degrees 1, 3 and 5 on the held-out
/// points.
pub fn cmd_calibrate(cfg: &PipelineConfig, out: &Path) -> ToolResult<CalibrationRun> {
    cfg.validate()?;
    let t = Instant::now();
    let dir = stage_dir(out, CALIBRATION_DIR, cfg)?;
    let scene = Scene::calibration(cfg)?;
    let frames = pipeline::simulate(&scene, &cfg.estimation_pair, cfg.medium.snr_db, cfg.seed)?;
    let (dataset, runs) = pipeline::calibration_sweep(cfg, &frames)?;
    let model = pipeline::fit_model(cfg, &dataset, cfg.calibration.degree)?;

    let mut scores = Vec::new();
    let mut degree_rows = Vec::new();
    let mut estimate_rows = Vec::new();
    for degree in [1, 3, 5] {
        let m = if degree == model.degree {
            model.clone()
        } else {
            match pipeline::fit_model(cfg, &dataset, degree) {
                Ok(m) => m,
                // Too few training points for this degree (coarse sweeps).
                Err(ToolError::Core(sos_core::Error::InsufficientData(_))) => continue,
                Err(e) => return Err(e),
            }
        };
        let s = score(&m, &dataset);
        degree_rows.push(DegreeRow {
            degree,
            train_points: m.training_indices.len(),
            test_points: m.test_indices.len(),
            r_squared: s.r_squared,
            rmse_m_s: s.rmse,
            selected: degree == model.degree,
        });
        estimate_rows.extend(s.estimates.iter().map(|&(truth, est)| OffsetEstimateRow {
            degree,
            delta_c_true: truth,
            delta_c_estimated: est,
        }));
        scores.push(s);
    }

    let sweep_rows: Vec<SweepRow> = dataset
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| SweepRow {
            delta_c: e.delta_c,
            slope: e.slope,
            fit_r_squared: e.r_squared,
            fitted_slope: model.eval(e.delta_c),
            split: if model.training_indices.contains(&i) { "train" } else { "test" }.into(),
        })
        .collect();

    let mut method_rows = Vec::new();
    for (e, run) in dataset.entries.iter().zip(&runs) {
        for m in [FitMethod::Ols, FitMethod::Robust, FitMethod::Weighted] {
            let f = fit(&run.pattern, m)?;
            method_rows.push(MethodRow {
                delta_c: e.delta_c,
                method: method_name(m).into(),
                slope: f.slope,
                r_squared: f.r_squared,
                rmse_ns: f.rmse * 1e9,
            });
        }
        if e.delta_c.rem_euclid(20.0) == 0.0 {
            let name = format!("pattern_dc{:+}.csv", e.delta_c);
            io::write_csv(&dir.join(name), &pattern_rows(&run.pattern, &run.fit))?;
        }
    }

    let model_file = io::ModelFile::new(&model, &dataset);
    io::write_toml(&dir.join(MODEL_FILE), &model_file)?;
    io::write_csv(&dir.join("sweep.csv"), &sweep_rows)?;
    io::write_csv(&dir.join("report.csv"), &degree_rows)?;
    io::write_csv(&dir.join("offset_estimates.csv"), &estimate_rows)?;
    io::write_csv(&dir.join("regression_methods.csv"), &method_rows)?;
    log(out, &format!("calibrate: {} sweep points in {:.2?}", dataset.entries.len(), t.elapsed()));
    Ok(CalibrationRun { dataset, model, model_file, scores })
}

// -------------------------------------------------------------- estimate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateFile {
    pub tx_pair: [usize; 2],
    pub method: String,
    pub c_bf: f64,
    pub slope: f64,
    pub fit_r_squared: f64,
    pub roi_coverage: f64,
    pub delta_c: f64,
    pub corrected_sos: f64,
    pub model_sweep_hash: String,
}

/// Average-SoS estimate for the channel data in `channels`, assuming `c_bf`.
pub fn cmd_estimate(
    cfg: &PipelineConfig,
    channels: &Path,
    model_path: &Path,
    c_bf: f64,
    out: &Path,
) -> ToolResult<Estimate> {
    cfg.validate()?;
    let (model_file, model) = io::read_model(model_path)?;
    let (_, frames) = load_channels(cfg, channels)?;
    let dir = stage_dir(out, ESTIMATE_DIR, cfg)?;
    let (est, m) = pipeline::estimate(cfg, &frames, &model, c_bf)?;
    let file = EstimateFile {
        tx_pair: cfg.estimation_pair,
        method: method_name(cfg.regression.method.into()).into(),
        c_bf,
        slope: est.slope,
        fit_r_squared: est.fit_r_squared,
        roi_coverage: est.roi_coverage,
        delta_c: est.delta_c,
        corrected_sos: est.corrected_sos,
        model_sweep_hash: model_file.sweep_hash,
    };
    io::write_toml(&dir.join("estimate.toml"), &file)?;
    io::write_csv(&dir.join("pattern.csv"), &pattern_rows(&m.pattern, &m.fit))?;
    io::write_csv(&dir.join("delay_map.csv"), &delay_rows(&m.map))?;
    log(out, &format!("estimate: c_bf {c_bf} -> delta_c {:.3}, corrected {:.3}", est.delta_c, est.corrected_sos));
    Ok(est)
}

// ----------------------------------------------------------- reconstruct

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub objective: f64,
    pub grad_norm: f64,
}

/// Scores of one reconstructed map against the ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapScores {
    pub rmse: f64,
    /// `None` when the phantom has no inclusion.
    pub cnr_db: Option<f64>,
    pub cnr_linear: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconMetricsRow {
    pub case: String,
    pub c_bf: f64,
    pub rmse: Option<f64>,
    pub cnr_db: Option<f64>,
    pub cnr_linear: Option<f64>,
    pub iterations: usize,
    pub stop_reason: String,
    pub converged: bool,
    pub clamped_pixels: usize,
}

pub fn stop_reason_name(r: StopReason) -> &'static str {
    match r {
        StopReason::GradientTolerance => "gradient_tolerance",
        StopReason::NoProgress => "no_progress",
        StopReason::MaxIterations => "max_iterations",
    }
}

/// Inclusion = pixels whose true SoS differs from the background.
pub fn region_labels(truth: &[f64], background_sos: f64) -> ToolResult<Option<RegionLabels>> {
    let inclusion: Vec<bool> = truth.iter().map(|v| (v - background_sos).abs() > 1e-9).collect();
    let n = inclusion.iter().filter(|v| **v).count();
    if n < 2 || truth.len() - n < 2 {
        return Ok(None);
    }
    Ok(Some(RegionLabels::complement(inclusion)?))
}

pub fn score_map(sos: &[f64], truth: &[f64], labels: Option<&RegionLabels>) -> ToolResult<MapScores> {
    let rmse = rmse_map(sos, truth)?;
    let (cnr_db, cnr_linear) = match labels {
        Some(l) => (Some(cnr_db(sos, l)?), Some(cnr_linear(sos, l)?)),
        None => (None, None),
    };
    Ok(MapScores { rmse, cnr_db, cnr_linear })
}

fn write_recon(dir: &Path, stem: &str, recon: &ReconOutput) -> ToolResult<()> {
    let grid = recon.recon.map.grid;
    let mut sidecar = MapSidecar::new("sos", "m/s", &grid);
    sidecar.c_bf = Some(recon.c_bf);
    io::write_map(dir, stem, &sidecar, &recon.sos)?;
    io::write_png(&dir.join(format!("{stem}.png")), grid.nx, grid.nz, &recon.sos, PNG_SOS_RANGE.0, PNG_SOS_RANGE.1)?;
    let trace: Vec<TraceRow> = recon
        .recon
        .trace
        .iter()
        .map(|t| TraceRow { iteration: t.iteration, objective: t.objective, grad_norm: t.grad_norm })
        .collect();
    io::write_csv(&dir.join(format!("{stem}_trace.csv")), &trace)
}

/// Gray-scale window of exported SoS images, m/s.
pub const PNG_SOS_RANGE: (f64, f64) = (1440.0, 1560.0);

fn truth_for(cfg: &PipelineConfig, channels: &Path, manifest: &Manifest, grid: &ImagingGrid) -> ToolResult<Vec<f64>> {
    let (sidecar, truth) = io::read_map(channels, &manifest.truth_map)?;
    if !sidecar.grid()?.approx_eq(grid) {
        return Err(ToolError::Config(format!(
            "ground truth in {} is on a different slowness grid than configured ({}×{} vs {}×{})",
            channels.display(),
            sidecar.nx,
            sidecar.nz,
            cfg.recon.slowness_nx,
            cfg.recon.slowness_nz
        )));
    }
    Ok(truth)
}

/// Local SoS map from the reconstruction pairs beamformed at `c_bf`, scored
/// against the ground truth stored with the channel data.
pub fn cmd_reconstruct(
    cfg: &PipelineConfig,
    channels: &Path,
    c_bf: f64,
    out: &Path,
) -> ToolResult<(ReconOutput, ReconMetricsRow)> {
    cfg.validate()?;
    let t = Instant::now();
    let (manifest, frames) = load_channels(cfg, channels)?;
    let dir = stage_dir(out, RECONSTRUCT_DIR, cfg)?;
    let recon = pipeline::reconstruct(cfg, &frames, c_bf)?;
    write_recon(&dir, "sos_map", &recon)?;
    for m in &recon.delay_maps {
        let (a, b) = m.frame_pair;
        io::write_csv(&dir.join(format!("delay_map_{a:03}_{b:03}.csv")), &delay_rows(m))?;
    }
    let truth = truth_for(cfg, channels, &manifest, &recon.recon.map.grid)?;
    let labels = region_labels(&truth, manifest.medium.background_sos)?;
    let s = score_map(&recon.sos, &truth, labels.as_ref())?;
    let row = ReconMetricsRow {
        case: "reconstruct".into(),
        c_bf,
        rmse: Some(s.rmse),
        cnr_db: s.cnr_db,
        cnr_linear: s.cnr_linear,
        iterations: recon.recon.iterations,
        stop_reason: stop_reason_name(recon.recon.reason).into(),
        converged: recon.recon.converged(),
        clamped_pixels: recon.clamped,
    };
    io::write_csv(&dir.join("metrics.csv"), std::slice::from_ref(&row))?;
    log(out, &format!("reconstruct: c_bf {c_bf}, {} iterations in {:.2?}", recon.recon.iterations, t.elapsed()));
    Ok((recon, row))
}

// ------------------------------------------------------------ experiment

/// One phantom under one BF-SoS offset, before and after correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRow {
    pub case: String,
    pub scenario: String,
    pub rmse_before: f64,
    pub rmse_after: f64,
    pub cnr_before_db: f64,
    pub cnr_after_db: f64,
    pub cnr_before_linear: f64,
    pub cnr_after_linear: f64,
    pub mean_true_sos: f64,
    pub c_bf_initial: f64,
    pub delta_c_estimated: f64,
    pub c_bf_corrected: f64,
    pub converged_before: bool,
    pub converged_after: bool,
}

/// Per-scenario averages (Table III rows).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRow {
    pub scenario: String,
    pub cases: usize,
    pub rmse_before: f64,
    pub rmse_after: f64,
    /// `1 − mean(after) / mean(before)`.
    pub rmse_reduction: f64,
    pub cnr_before_db: f64,
    pub cnr_after_db: f64,
    pub improved_cases: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    pub cases: Vec<CaseRow>,
    pub scenarios: Vec<ScenarioRow>,
    pub model: CalibrationModel,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

pub fn scenario_rows(cases: &[CaseRow]) -> Vec<ScenarioRow> {
    let mut names: Vec<&str> = Vec::new();
    for c in cases {
        if !names.contains(&c.scenario.as_str()) {
            names.push(&c.scenario);
        }
    }
    names
        .into_iter()
        .map(|name| {
            let rows: Vec<&CaseRow> = cases.iter().filter(|c| c.scenario == name).collect();
            let before = mean(rows.iter().map(|c| c.rmse_before));
            let after = mean(rows.iter().map(|c| c.rmse_after));
            ScenarioRow {
                scenario: name.into(),
                cases: rows.len(),
                rmse_before: before,
                rmse_after: after,
                rmse_reduction: 1.0 - after / before,
                cnr_before_db: mean(rows.iter().map(|c| c.cnr_before_db)),
                cnr_after_db: mean(rows.iter().map(|c| c.cnr_after_db)),
                improved_cases: rows.iter().filter(|c| c.rmse_after < c.rmse_before).count(),
            }
        })
        .collect()
}

fn load_or_calibrate(cfg: &PipelineConfig, out: &Path) -> ToolResult<CalibrationModel> {
    match &cfg.calibration.model {
        Some(path) => Ok(io::read_model(path)?.1),
        None => Ok(cmd_calibrate(cfg, out)?.model),
    }
}

/// Correction experiment over the desk phantom set: for each phantom and
/// each ±1.5 % BF-SoS offset from its mean true SoS, reconstructs before and
/// after the calibrated correction.
pub fn cmd_experiment(cfg: &PipelineConfig, out: &Path) -> ToolResult<ExperimentSummary> {
    cfg.validate()?;
    let t = Instant::now();
    let model = load_or_calibrate(cfg, out)?;
    let dir = stage_dir(out, EXPERIMENT_DIR, cfg)?;
    let per_phantom: Vec<Vec<CaseRow>> = DESK_SET
        .par_iter()
        .enumerate()
        .map(|(i, phantom)| -> ToolResult<Vec<CaseRow>> {
            let pcfg = phantom.config(cfg, i);
            let case_dir = dir.join(phantom.id);
            io::create_dir(&case_dir)?;
            let scene = Scene::from_config(&pcfg)?;
            let frames = pipeline::simulate(&scene, &pcfg.transmit_elements(), pcfg.medium.snr_db, pcfg.seed)?;
            let grid = pcfg.recon.slowness_grid(&pcfg.array()?)?;
            let truth = pipeline::truth_on_slowness_grid(&pcfg, &scene.medium)?;
            io::write_map(&case_dir, TRUTH_MAP, &MapSidecar::new("sos", "m/s", &grid), &truth)?;
            let labels = region_labels(&truth, pcfg.medium.background_sos)?
                .ok_or_else(|| ToolError::Config(format!("phantom {} has no inclusion on the slowness grid", phantom.id)))?;
            let mean_true = mean(truth.iter().copied());

            let mut rows = Vec::new();
            for (scenario, rel) in OFFSET_SCENARIOS {
                let c0 = mean_true * (1.0 + rel);
                let (est, _) = pipeline::estimate(&pcfg, &frames, &model, c0)?;
                let before = pipeline::reconstruct(&pcfg, &frames, c0)?;
                let after = pipeline::reconstruct(&pcfg, &frames, est.corrected_sos)?;
                let sb = score_map(&before.sos, &truth, Some(&labels))?;
                let sa = score_map(&after.sos, &truth, Some(&labels))?;
                let sdir = case_dir.join(scenario);
                io::create_dir(&sdir)?;
                write_recon(&sdir, "sos_before", &before)?;
                write_recon(&sdir, "sos_after", &after)?;
                rows.push(CaseRow {
                    case: phantom.id.into(),
                    scenario: scenario.into(),
                    rmse_before: sb.rmse,
                    rmse_after: sa.rmse,
                    cnr_before_db: sb.cnr_db.unwrap_or(f64::NAN),
                    cnr_after_db: sa.cnr_db.unwrap_or(f64::NAN),
                    cnr_before_linear: sb.cnr_linear.unwrap_or(f64::NAN),
                    cnr_after_linear: sa.cnr_linear.unwrap_or(f64::NAN),
                    mean_true_sos: mean_true,
                    c_bf_initial: c0,
                    delta_c_estimated: est.delta_c,
                    c_bf_corrected: est.corrected_sos,
                    converged_before: before.recon.converged(),
                    converged_after: after.recon.converged(),
                });
            }
            Ok(rows)
        })
        .collect::<ToolResult<_>>()?;

    let cases: Vec<CaseRow> = per_phantom.into_iter().flatten().collect();
    let scenarios = scenario_rows(&cases);
    io::write_csv(&dir.join("table3.csv"), &cases)?;
    io::write_csv(&dir.join("summary.csv"), &scenarios)?;
    log(out, &format!("experiment: {} cases in {:.2?}", cases.len(), t.elapsed()));
    Ok(ExperimentSummary { cases, scenarios, model })
}

// ---------------------------------------------------------------- report

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummaryRow {
    pub method: String,
    pub points: usize,
    pub mean_r_squared: f64,
    pub mean_rmse_ns: f64,
}

/// Table III layout: per-case rows followed by one mean row per scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table3Row {
    pub case: String,
    pub scenario: String,
    pub rmse_before: Option<f64>,
    pub rmse_after: Option<f64>,
    pub cnr_before_db: Option<f64>,
    pub cnr_after_db: Option<f64>,
}

/// `estimate.toml` flattened for CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub tx_a: usize,
    pub tx_b: usize,
    pub method: String,
    pub c_bf: f64,
    pub slope: f64,
    pub fit_r_squared: f64,
    pub roi_coverage: f64,
    pub delta_c: f64,
    pub corrected_sos: f64,
    pub model_sweep_hash: String,
}

impl From<EstimateFile> for EstimateRow {
    fn from(e: EstimateFile) -> Self {
        Self {
            tx_a: e.tx_pair[0],
            tx_b: e.tx_pair[1],
            method: e.method,
            c_bf: e.c_bf,
            slope: e.slope,
            fit_r_squared: e.fit_r_squared,
            roi_coverage: e.roi_coverage,
            delta_c: e.delta_c,
            corrected_sos: e.corrected_sos,
            model_sweep_hash: e.model_sweep_hash,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ReportSummary {
    pub written: Vec<PathBuf>,
    pub missing: Vec<String>,
}

/// Artifacts `report` looks for, relative to the run directory.
pub const REPORT_INPUTS: [&str; 6] = [
    "calibration/regression_methods.csv",
    "calibration/report.csv",
    "calibration/sweep.csv",
    "estimate/estimate.toml",
    "experiment/table3.csv",
    "reconstruct/metrics.csv",
];

/// Consolidates the artifacts under `run` into `<run>/report`: Table I–III
/// shaped CSVs, the calibration curve and PNG renderings of every SoS map.
/// Missing artifacts are listed; at least one must exist.
pub fn cmd_report(run: &Path) -> ToolResult<ReportSummary> {
    let present: Vec<&str> = REPORT_INPUTS.iter().copied().filter(|p| run.join(p).is_file()).collect();
    if present.is_empty() {
        return Err(ToolError::MissingInput(format!(
            "no pipeline artifacts in {}; expected any of: {}",
            run.display(),
            REPORT_INPUTS.join(", ")
        )));
    }
    let dir = run.join(REPORT_DIR);
    io::create_dir(&dir)?;
    let mut summary = ReportSummary::default();
    summary.missing = REPORT_INPUTS.iter().filter(|p| !present.contains(p)).map(|p| p.to_string()).collect();
    let mut emit = |name: &str| {
        let p = dir.join(name);
        summary.written.push(p.clone());
        p
    };

    if present.contains(&"calibration/regression_methods.csv") {
        let rows: Vec<MethodRow> = io::read_csv(&run.join("calibration/regression_methods.csv"))?;
        let table: Vec<MethodSummaryRow> = ["ols", "robust", "weighted"]
            .iter()
            .map(|m| {
                let r: Vec<&MethodRow> = rows.iter().filter(|r| r.method == *m).collect();
                MethodSummaryRow {
                    method: m.to_string(),
                    points: r.len(),
                    mean_r_squared: mean(r.iter().map(|x| x.r_squared)),
                    mean_rmse_ns: mean(r.iter().map(|x| x.rmse_ns)),
                }
            })
            .collect();
        io::write_csv(&emit("table1_regression.csv"), &table)?;
    }
    if present.contains(&"calibration/report.csv") {
        let rows: Vec<DegreeRow> = io::read_csv(&run.join("calibration/report.csv"))?;
        io::write_csv(&emit("table2_calibration.csv"), &rows)?;
    }
    if present.contains(&"calibration/sweep.csv") {
        let rows: Vec<SweepRow> = io::read_csv(&run.join("calibration/sweep.csv"))?;
        io::write_csv(&emit("calibration_curve.csv"), &rows)?;
    }
    if present.contains(&"estimate/estimate.toml") {
        let est: EstimateFile = io::read_toml(&run.join("estimate/estimate.toml"))?;
        io::write_csv(&emit("estimate.csv"), &[EstimateRow::from(est)])?;
    }

    let mut table3 = Vec::new();
    if present.contains(&"experiment/table3.csv") {
        let cases: Vec<CaseRow> = io::read_csv(&run.join("experiment/table3.csv"))?;
        table3.extend(cases.iter().map(|c| Table3Row {
            case: c.case.clone(),
            scenario: c.scenario.clone(),
            rmse_before: Some(c.rmse_before),
            rmse_after: Some(c.rmse_after),
            cnr_before_db: Some(c.cnr_before_db),
            cnr_after_db: Some(c.cnr_after_db),
        }));
        table3.extend(scenario_rows(&cases).into_iter().map(|s| Table3Row {
            case: "mean".into(),
            scenario: s.scenario,
            rmse_before: Some(s.rmse_before),
            rmse_after: Some(s.rmse_after),
            cnr_before_db: Some(s.cnr_before_db),
            cnr_after_db: Some(s.cnr_after_db),
        }));
    }
    if present.contains(&"reconstruct/metrics.csv") {
        let rows: Vec<ReconMetricsRow> = io::read_csv(&run.join("reconstruct/metrics.csv"))?;
        table3.extend(rows.into_iter().map(|r| Table3Row {
            case: r.case,
            scenario: format!("c_bf={}", r.c_bf),
            rmse_before: None,
            rmse_after: r.rmse,
            cnr_before_db: None,
            cnr_after_db: r.cnr_db,
        }));
    }
    if !table3.is_empty() {
        io::write_csv(&emit("table3_correction.csv"), &table3)?;
    }

    let maps_dir = dir.join("maps");
    for sidecar_path in sos_sidecars(run, &dir) {
        let parent = sidecar_path.parent().unwrap_or(run);
        let stem = sidecar_path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let (sidecar, values) = io::read_map(parent, &stem)?;
        let rel = sidecar_path.strip_prefix(run).unwrap_or(&sidecar_path).with_extension("png");
        let name = rel.to_string_lossy().replace(['/', '\\'], "__");
        io::create_dir(&maps_dir)?;
        let path = maps_dir.join(name);
        io::write_png(&path, sidecar.nx, sidecar.nz, &values, PNG_SOS_RANGE.0, PNG_SOS_RANGE.1)?;
        summary.written.push(path);
    }

    let missing = if summary.missing.is_empty() { String::new() } else { summary.missing.join("\n") + "\n" };
    io::write_text(&dir.join("missing.txt"), &missing)?;
    Ok(summary)
}

/// SoS map sidecars under `run`, skipping the report directory itself.
fn sos_sidecars(run: &Path, skip: &Path) -> Vec<PathBuf> {
    let mut found = Vec::new();
    let mut stack = vec![run.to_path_buf()];
    while let Some(d) = stack.pop() {
        for p in io::list_dir(&d) {
            if p.is_dir() {
                if p != skip {
                    stack.push(p);
                }
            } else if p.extension().is_some_and(|e| e == "toml") && p.with_extension("f32").is_file() {
                if let Ok(s) = io::read_toml::<MapSidecar>(&p) {
                    if s.quantity == "sos" {
                        found.push(p);
                    }
                }
            }
        }
    }
    found.sort();
    found
}
