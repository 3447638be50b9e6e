use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sos_core::beamform::BeamformedFrame;
use sos_core::delaytrack::{ncc_delay_1d, track_delays, TrackConfig};
use sos_core::ImagingGrid;

const PERIOD: f64 = 8.0;

/// Band-limited RF speckle: random scatterers convolved with a Gabor pulse of
/// period `PERIOD` samples, evaluated at `k − shift` so shifts are exact.
struct Speckle {
    scatterers: Vec<(f64, f64)>,
}

impl Speckle {
    fn new(len: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scatterers = (0..len / 2).map(|_| (rng.random_range(-20.0..len as f64 + 20.0), rng.random_range(-1.0..1.0))).collect();
        Self { scatterers }
    }

    fn at(&self, t: f64) -> f64 {
        let sigma = 1.5 * PERIOD;
        self.scatterers
            .iter()
            .map(|&(pos, amp)| {
                let u = t - pos;
                amp * (-u * u / (2.0 * sigma * sigma)).exp() * (2.0 * std::f64::consts::PI * u / PERIOD).cos()
            })
            .sum()
    }
}

fn frame(columns: &[Speckle], shift: f64, grid: ImagingGrid) -> BeamformedFrame {
    let mut rf = vec![0.0; grid.len()];
    for iz in 0..grid.nz {
        for (ix, s) in columns.iter().enumerate() {
            rf[grid.index(ix, iz)] = s.at(iz as f64 - shift);
        }
    }
    BeamformedFrame { tx_element: 0, rf, grid, c_bf_used: 1540.0 }
}

fn tracked_lags(shift: f64) -> Vec<f64> {
    let grid = ImagingGrid::new(0.0, 0.005, 1.5e-4, 18.75e-6, 5, 400).unwrap();
    let columns: Vec<_> = (0..grid.nx).map(|i| Speckle::new(grid.nz, 100 + i as u64)).collect();
    let a = frame(&columns, shift, grid);
    let b = frame(&columns, 0.0, grid);
    let map = track_delays(&a, &b, &TrackConfig::default()).unwrap();
    let per_pixel = grid.dz / 1540.0;
    // Only the center column has the full kernel on both sides.
    (0..map.grid.nz)
        .map(|iz| map.grid.index(map.grid.nx / 2, iz))
        .filter(|&i| map.valid[i])
        .map(|i| map.delays[i] / per_pixel)
        .collect()
}

#[test]
fn integer_and_half_sample_shifts_are_recovered() {
    for shift in [-3.0, -1.0, 1.0, 2.0, 3.0, -2.5, -0.5, 0.5, 1.5, 2.5] {
        let lags = tracked_lags(shift);
        assert!(lags.len() >= 20, "only {} valid nodes at shift {shift}", lags.len());
        for lag in lags {
            assert!((lag - shift).abs() < 0.05, "shift {shift}: tracked {lag}");
        }
    }
}

#[test]
fn identical_frames_give_zero_delay() {
    for lag in tracked_lags(0.0) {
        assert!(lag.abs() < 1e-9);
    }
}

#[test]
fn tracking_is_antisymmetric() {
    let grid = ImagingGrid::new(0.0, 0.005, 1.5e-4, 18.75e-6, 7, 300).unwrap();
    let columns: Vec<_> = (0..grid.nx).map(|i| Speckle::new(grid.nz, 300 + i as u64)).collect();
    let a = frame(&columns, 1.3, grid);
    let b = frame(&columns, 0.0, grid);
    let cfg = TrackConfig::default();
    let ab = track_delays(&a, &b, &cfg).unwrap();
    let ba = track_delays(&b, &a, &cfg).unwrap();
    let tol = 0.1 * grid.dz / 1540.0;
    let mut checked = 0;
    for i in 0..ab.delays.len() {
        if ab.valid[i] && ba.valid[i] && ab.ncc[i] >= 0.5 && ba.ncc[i] >= 0.5 {
            assert!((ab.delays[i] + ba.delays[i]).abs() < tol);
            checked += 1;
        }
    }
    assert!(checked > 50);
}

#[test]
fn one_dimensional_shift_oracles() {
    let s = Speckle::new(200, 7);
    let window: Vec<f64> = (0..48).map(|k| s.at(k as f64 + 60.0)).collect();
    let padded: Vec<f64> = (0..60).map(|k| s.at(k as f64 + 54.0)).collect();
    let peak = ncc_delay_1d(&window, &padded).unwrap();
    assert!(peak.lag.abs() < 1e-9 && (peak.peak_ncc - 1.0).abs() < 1e-12);

    let shifted: Vec<f64> = (0..60).map(|k| s.at(k as f64 + 54.0 - 3.0)).collect();
    let peak = ncc_delay_1d(&window, &shifted).unwrap();
    assert!((peak.lag - 3.0).abs() < 0.01 && peak.peak_ncc >= 0.999, "{peak:?}");

    let sine = |k: f64| (2.0 * std::f64::consts::PI * 0.1 * k).sin();
    let window: Vec<f64> = (0..40).map(|k| sine(k as f64)).collect();
    let region: Vec<f64> = (0..50).map(|k| sine(k as f64 - 5.0 - 2.5)).collect();
    let peak = ncc_delay_1d(&window, &region).unwrap();
    assert!((peak.lag - 2.5).abs() < 0.05, "{peak:?}");
}

#[test]
fn correlation_coefficients_are_bounded() {
    let grid = ImagingGrid::new(0.0, 0.005, 1.5e-4, 18.75e-6, 5, 300).unwrap();
    let ca: Vec<_> = (0..grid.nx).map(|i| Speckle::new(grid.nz, 500 + i as u64)).collect();
    let cb: Vec<_> = (0..grid.nx).map(|i| Speckle::new(grid.nz, 600 + i as u64)).collect();
    let map = track_delays(&frame(&ca, 0.0, grid), &frame(&cb, 0.0, grid), &TrackConfig::default()).unwrap();
    assert!(map.ncc.iter().all(|c| (-1.0..=1.0).contains(c)));
}
