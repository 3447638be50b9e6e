use sos_core::synthsim::ChannelFrame;
use sos_core::ImagingGrid;
use sos_tools::config::PipelineConfig;
use sos_tools::io::{self, MapSidecar};
use sos_tools::ToolError;

fn sample_frame() -> ChannelFrame {
    let mut f = ChannelFrame::zeros(42, 3, 5, 1.25e-7, 1.6e8);
    for (i, s) in f.samples.iter_mut().enumerate() {
        *s = (i as f32 - 7.0) * 0.37;
    }
    f
}

#[test]
fn frame_round_trip_is_exact() {
    let f = sample_frame();
    let bytes = io::encode_frame(&f).unwrap();
    assert_eq!(&bytes[..4], b"SOSC");
    let g = io::decode_frame(&bytes, "test").unwrap();
    assert_eq!(f, g);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join(io::frame_file_name(42));
    io::write_frame(&path, &f).unwrap();
    assert_eq!(io::read_frame(&path).unwrap(), f);
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
}

#[test]
fn corrupt_frames_are_format_errors() {
    let bytes = io::encode_frame(&sample_frame()).unwrap();
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    let mut bad_version = bytes.clone();
    bad_version[4] = 99;
    let truncated = &bytes[..bytes.len() - 3];
    for b in [&bad_magic[..], &bad_version[..], truncated, &bytes[..10]] {
        let err = io::decode_frame(b, "test").unwrap_err();
        assert!(matches!(err, ToolError::Format { .. }), "{err}");
        assert_eq!(err.exit_code(), 4);
    }
}

#[test]
fn missing_files_are_missing_input() {
    let dir = tempfile::tempdir().unwrap();
    let err = io::read_frame(&dir.path().join("nope.sosc")).unwrap_err();
    assert!(matches!(err, ToolError::MissingInput(_)));
    assert!(io::read_channel_set(dir.path()).is_err());
}

#[test]
fn map_round_trip() {
    let grid = ImagingGrid::from_extent(-0.01, 0.01, 0.0, 0.02, 4, 3).unwrap();
    let values: Vec<f64> = (0..grid.len()).map(|i| 1500.0 + i as f64 * 0.5).collect();
    let dir = tempfile::tempdir().unwrap();
    let mut side = MapSidecar::new("sos", "m/s", &grid);
    side.c_bf = Some(1522.5);
    io::write_map(dir.path(), "m", &side, &values).unwrap();
    for ext in ["csv", "f32", "toml"] {
        assert!(dir.path().join(format!("m.{ext}")).exists());
    }
    let (s2, v2) = io::read_map(dir.path(), "m").unwrap();
    assert_eq!(s2, side);
    assert!(s2.grid().unwrap().approx_eq(&grid));
    for (a, b) in values.iter().zip(&v2) {
        assert!((a - b).abs() < 1e-3);
    }
}

#[test]
fn config_round_trips_and_rejects_unknown_keys() {
    let cfg = PipelineConfig::default();
    let back = PipelineConfig::from_toml(&cfg.to_toml()).unwrap();
    assert_eq!(back, cfg);
    let partial = PipelineConfig::from_toml("seed = 9\n[recon]\nlambda = 0.5\n").unwrap();
    assert_eq!((partial.seed, partial.recon.lambda), (9, 0.5));
    assert_eq!(partial.c_bf, cfg.c_bf);
    let err = PipelineConfig::from_toml("sede = 9\n").unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn bad_configs_fail_validation() {
    let mut cfg = PipelineConfig::default();
    cfg.calibration.degree = 2;
    assert!(cfg.validate().is_err());
    let mut cfg = PipelineConfig::default();
    cfg.recon_pairs.push([3, 200]);
    assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
}
