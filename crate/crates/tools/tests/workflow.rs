//! Single-phantom runs through the command layer, each stage reading the
//! previous stage's files.

use std::path::Path;

use sos_tools::commands::{self, CALIBRATION_DIR, CHANNELS_DIR, MODEL_FILE, RECONSTRUCT_DIR, REPORT_DIR};
use sos_tools::config::PipelineConfig;
use sos_tools::io;

fn homogeneous_run(out: &Path) -> PipelineConfig {
    let cfg = PipelineConfig::default();
    commands::cmd_calibrate(&cfg, out).unwrap();
    let phantom = PipelineConfig { seed: 7, ..cfg.clone() };
    let manifest = commands::cmd_simulate(&phantom, out).unwrap();
    assert!(manifest.homogeneous());
    assert_eq!(manifest.frames.len(), cfg.transmit_elements().len());
    cfg
}

#[test]
fn homogeneous_phantom_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let cfg = homogeneous_run(out);
    let channels = out.join(CHANNELS_DIR);
    let model = out.join(CALIBRATION_DIR).join(MODEL_FILE);

    let est = commands::cmd_estimate(&cfg, &channels, &model, 1500.0, out).unwrap();
    assert!(est.delta_c.abs() <= 2.0, "zero-offset estimate {:+.3} m/s", est.delta_c);
    for c_bf in [1522.5, 1477.5] {
        let est = commands::cmd_estimate(&cfg, &channels, &model, c_bf, out).unwrap();
        assert!((est.corrected_sos - 1500.0).abs() <= 5.0, "c_bf {c_bf}: corrected {:.3}", est.corrected_sos);
    }

    let (recon, row) = commands::cmd_reconstruct(&cfg, &channels, 1500.0, out).unwrap();
    let worst = recon.sos.iter().map(|c| (c - 1500.0).abs()).fold(0.0, f64::max);
    assert!(worst <= 3.0, "homogeneous map deviates by up to {worst:.2} m/s");
    assert!(row.rmse.unwrap() < 1.0);
    assert!(row.cnr_db.is_none(), "no inclusion, no CNR");
    let (side, values) = io::read_map(&out.join(RECONSTRUCT_DIR), "sos_map").unwrap();
    assert_eq!(side.c_bf, Some(1500.0));
    assert_eq!(values.len(), recon.sos.len());

    let report = commands::cmd_report(out).unwrap();
    let table = out.join(REPORT_DIR).join("table2_calibration.csv");
    assert!(report.written.contains(&table));
    for png in ["reconstruct__sos_map.png", "channels__truth_sos.png"] {
        assert!(report.written.contains(&out.join(REPORT_DIR).join("maps").join(png)), "{png} not rendered");
    }
    assert!(report.missing.iter().any(|m| m.starts_with("experiment/")));
    let rows = std::fs::read_to_string(out.join(REPORT_DIR).join("estimate.csv")).unwrap();
    assert_eq!(rows.lines().count(), 2, "header plus the latest estimate");
}

#[test]
fn far_off_assumed_sos_is_a_numerical_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let cfg = homogeneous_run(out);
    let channels = out.join(CHANNELS_DIR);
    let model = out.join(CALIBRATION_DIR).join(MODEL_FILE);
    // +60 m/s: the slope lies beyond the calibrated range.
    let err = commands::cmd_estimate(&cfg, &channels, &model, 1560.0, out).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("closer to"), "{err}");
    // +100 m/s: most ROI delays fall outside the tracker's search range.
    let err = commands::cmd_estimate(&cfg, &channels, &model, 1600.0, out).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("of the ROI tracked"), "{err}");
}

#[test]
fn huge_lambda_flattens_the_map() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let mut cfg = PipelineConfig::default().quick();
    cfg.medium.inclusions = vec![sos_tools::phantoms::DESK_SET[0].inclusion(1500.0)];
    commands::cmd_simulate(&cfg, out).unwrap();
    cfg.recon.lambda = 1e6;
    let (recon, _) = commands::cmd_reconstruct(&cfg, &out.join(CHANNELS_DIR), 1500.0, out).unwrap();
    let (lo, hi) = recon.sos.iter().fold((f64::MAX, f64::MIN), |(l, h), c| (l.min(*c), h.max(*c)));
    assert!(hi - lo < 1.0, "spread {:.3} m/s", hi - lo);
}
