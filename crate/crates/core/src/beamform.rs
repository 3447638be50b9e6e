//! Delay-and-sum beamforming of single-element transmits with dynamic
//! receive focusing.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::geometry::{ImagingGrid, TransducerArray};
use crate::math;
use crate::synthsim::{ChannelFrame, SOS_MAX, SOS_MIN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Apodization {
    #[default]
    None,
    /// Hann window across the active receive aperture.
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfConfig {
    /// Assumed (beamforming) SoS, m/s.
    pub c_bf: f64,
    pub grid: ImagingGrid,
    pub apodization: Apodization,
    /// Receive f-number; `0` uses the full aperture for every pixel.
    pub f_number: f64,
}

impl BfConfig {
    pub fn new(c_bf: f64, grid: ImagingGrid) -> Self {
        Self { c_bf, grid, apodization: Apodization::None, f_number: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(SOS_MIN..=SOS_MAX).contains(&self.c_bf) {
            bail!(InvalidArgument, "c_bf = {} m/s outside [{SOS_MIN}, {SOS_MAX}] m/s", self.c_bf);
        }
        if !(self.f_number >= 0.0) {
            bail!(InvalidArgument, "f-number must be non-negative");
        }
        self.grid.validate()
    }
}

/// RF image of one transmit on a beamforming grid (row-major, depth-major).
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformedFrame {
    pub tx_element: usize,
    pub rf: Vec<f64>,
    pub grid: ImagingGrid,
    pub c_bf_used: f64,
}

impl BeamformedFrame {
    #[inline]
    pub fn at(&self, ix: usize, iz: usize) -> f64 {
        self.rf[self.grid.index(ix, iz)]
    }

    /// Axial line `ix`, top to bottom.
    pub fn column(&self, ix: usize) -> Vec<f64> {
        (0..self.grid.nz).map(|iz| self.at(ix, iz)).collect()
    }
}

/// Delay-and-sum image of `frame` at SoS `cfg.c_bf`.
///
/// The focusing delay of pixel `p` on receive element `rx` is
/// `(|p − tx| + |p − rx|) / c_bf`; channel samples are linearly
/// interpolated and delays outside the recorded window contribute zero.
pub fn das_beamform(frame: &ChannelFrame, array: &TransducerArray, cfg: &BfConfig) -> Result<BeamformedFrame> {
    cfg.validate()?;
    if frame.num_rx != array.num_elements() {
        bail!(
            InvalidArgument,
            "frame has {} receive channels but the array has {} elements",
            frame.num_rx,
            array.num_elements()
        );
    }
    if !(frame.fs > 0.0) || frame.samples.len() != frame.num_rx * frame.num_samples {
        bail!(InvalidArgument, "malformed channel frame for Tx {}", frame.tx_element);
    }
    let tx = array.element_position(frame.tx_element)?;
    let grid = cfg.grid;
    let inv_c = 1.0 / cfg.c_bf;
    let n = frame.num_samples;
    let rx_pos = array.positions();
    let full_hann: Vec<f64> = (0..frame.num_rx)
        .map(|i| match cfg.apodization {
            Apodization::None => 1.0,
            Apodization::Hann => {
                let phase = 2.0 * core::f64::consts::PI * (i + 1) as f64 / (frame.num_rx + 1) as f64;
                0.5 * (1.0 - math::cos(phase))
            }
        })
        .collect();

    let mut rf = vec![0.0; grid.len()];
    let mut column = vec![0.0; grid.nz];
    let mut tx_time = vec![0.0; grid.nz];
    let z2: Vec<f64> = (0..grid.nz).map(|iz| grid.z(iz) * grid.z(iz)).collect();

    for ix in 0..grid.nx {
        let x = grid.x(ix);
        column.iter_mut().for_each(|v| *v = 0.0);
        for (iz, t) in tx_time.iter_mut().enumerate() {
            *t = math::hypot(x - tx.x, grid.z(iz)) * inv_c;
        }
        for (rx, pos) in rx_pos.iter().enumerate() {
            let row = frame.row(rx);
            let lateral = x - pos.x;
            let lateral2 = lateral * lateral;
            for iz in 0..grid.nz {
                let weight = if cfg.f_number > 0.0 {
                    let half = grid.z(iz) / (2.0 * cfg.f_number);
                    if lateral.abs() > half {
                        continue;
                    }
                    match cfg.apodization {
                        Apodization::None => 1.0,
                        Apodization::Hann => 0.5 * (1.0 + math::cos(core::f64::consts::PI * lateral / half)),
                    }
                } else {
                    full_hann[rx]
                };
                let t = tx_time[iz] + math::sqrt(lateral2 + z2[iz]) * inv_c;
                let u = (t - frame.t0) * frame.fs;
                if !(u >= 0.0) || u > (n - 1) as f64 {
                    continue;
                }
                let i0 = u as usize;
                let value = if i0 + 1 < n {
                    let frac = u - i0 as f64;
                    let a = row[i0] as f64;
                    a + frac * (row[i0 + 1] as f64 - a)
                } else {
                    row[i0] as f64
                };
                column[iz] += weight * value;
            }
        }
        for (iz, v) in column.iter().enumerate() {
            rf[grid.index(ix, iz)] = *v;
        }
    }

    Ok(BeamformedFrame { tx_element: frame.tx_element, rf, grid, c_bf_used: cfg.c_bf })
}

/// Echo shift accumulated along a path of length `d` when the beamformer
/// assumes `c_bf` in a medium of SoS `c`: `(1/c − 1/c_bf)·d` seconds.
///
/// Positive when `c_bf > c`, i.e. echoes arrive later than the beamformer
/// expects. The difference of two such shifts along the transmit paths of two
/// elements is the delay the tracker measures between their images.
pub fn echo_shift_model(c: f64, c_bf: f64, d: f64) -> f64 {
    (1.0 / c - 1.0 / c_bf) * d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point;
    use crate::synthsim::{gen_scatterers, simulate_frame, MediumSpec, PulseSpec, ScattererField};

    #[test]
    fn echo_shift_hand_values() {
        assert_eq!(echo_shift_model(1500.0, 1500.0, 0.03), 0.0);
        let v = echo_shift_model(1500.0, 1540.0, 0.03);
        assert!((v - 0.03 * 40.0 / (1500.0 * 1540.0)).abs() < 1e-20);
        assert!((v - 5.1948e-7).abs() < 1e-11);
        assert!(echo_shift_model(1500.0, 1480.0, 0.01) < 0.0);
    }

    fn medium() -> MediumSpec {
        MediumSpec::homogeneous(1500.0, ImagingGrid::from_extent(-0.02, 0.02, 0.0, 0.04, 80, 80).unwrap()).unwrap()
    }

    #[test]
    fn zero_frame_gives_zero_image() {
        let array = TransducerArray::default();
        let frame = ChannelFrame::zeros(20, 128, 3000, 0.0, 1.6e8);
        let grid = ImagingGrid::new(-0.002, 0.01, 1.5e-4, 7.5e-5, 20, 20).unwrap();
        let img = das_beamform(&frame, &array, &BfConfig::new(1500.0, grid)).unwrap();
        assert!(img.rf.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn channel_count_mismatch() {
        let array = TransducerArray::default();
        let frame = ChannelFrame::zeros(20, 64, 3000, 0.0, 1.6e8);
        let grid = ImagingGrid::new(-0.002, 0.01, 1.5e-4, 7.5e-5, 4, 4).unwrap();
        assert!(matches!(
            das_beamform(&frame, &array, &BfConfig::new(1500.0, grid)),
            Err(crate::Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn matched_sos_focuses_point_scatterers() {
        let array = TransducerArray::default();
        let pulse = PulseSpec::default();
        for depth in [0.01, 0.02, 0.035] {
            for tx in [55, 63] {
                let target = Point::new(0.0, depth);
                let field = ScattererField::single(target, 1.0);
                let frame = simulate_frame(tx, &field, &medium(), &pulse, &array, 9000).unwrap();
                let grid = ImagingGrid::from_spacing(-0.003, 0.003, depth - 0.002, depth + 0.002, 1.5e-4, 7.5e-5).unwrap();
                let img = das_beamform(&frame, &array, &BfConfig::new(1500.0, grid)).unwrap();
                let k = (0..img.rf.len()).max_by(|&a, &b| img.rf[a].abs().total_cmp(&img.rf[b].abs())).unwrap();
                let (ix, iz) = (k % grid.nx, k / grid.nx);
                let p = grid.pixel(ix, iz);
                assert!((p.x - target.x).abs() <= grid.dx + 1e-12, "depth {depth} tx {tx}: x {}", p.x);
                assert!((p.z - target.z).abs() <= grid.dz + 1e-12, "depth {depth} tx {tx}: z {}", p.z);
            }
        }
    }

    #[test]
    fn linear_in_channel_data() {
        let array = TransducerArray::default();
        let pulse = PulseSpec::default();
        let g = ImagingGrid::from_extent(-0.004, 0.004, 0.008, 0.014, 8, 6).unwrap();
        let a = simulate_frame(50, &gen_scatterers(&g, 1.0, 3).unwrap(), &medium(), &pulse, &array, 6000).unwrap();
        let b = simulate_frame(50, &gen_scatterers(&g, 1.0, 4).unwrap(), &medium(), &pulse, &array, 6000).unwrap();
        let mut mix = a.clone();
        for ((m, x), y) in mix.samples.iter_mut().zip(&a.samples).zip(&b.samples) {
            *m = 2.0 * x - 0.5 * y;
        }
        let grid = ImagingGrid::from_spacing(-0.003, 0.003, 0.009, 0.013, 1.5e-4, 7.5e-5).unwrap();
        let cfg = BfConfig::new(1510.0, grid);
        let ia = das_beamform(&a, &array, &cfg).unwrap();
        let ib = das_beamform(&b, &array, &cfg).unwrap();
        let im = das_beamform(&mix, &array, &cfg).unwrap();
        let peak = im.rf.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for ((m, x), y) in im.rf.iter().zip(&ia.rf).zip(&ib.rf) {
            assert!((m - (2.0 * x - 0.5 * y)).abs() <= 1e-5 * peak);
        }
    }

    #[test]
    fn mirrored_scene_gives_mirrored_image() {
        let array = TransducerArray::default();
        let pulse = PulseSpec::default();
        let g = ImagingGrid::from_extent(-0.004, 0.004, 0.008, 0.014, 8, 6).unwrap();
        let field = gen_scatterers(&g, 1.0, 11).unwrap();
        let left = simulate_frame(40, &field, &medium(), &pulse, &array, 6000).unwrap();
        let right = simulate_frame(87, &field.mirrored(), &medium(), &pulse, &array, 6000).unwrap();
        // symmetric grid about x = 0
        let grid = ImagingGrid::new(-0.003, 0.009, 1.5e-4, 7.5e-5, 41, 50).unwrap();
        let cfg = BfConfig::new(1500.0, grid);
        let a = das_beamform(&left, &array, &cfg).unwrap();
        let b = das_beamform(&right, &array, &cfg).unwrap();
        let peak = a.rf.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for iz in 0..grid.nz {
            for ix in 0..grid.nx {
                assert!((a.at(ix, iz) - b.at(grid.nx - 1 - ix, iz)).abs() <= 1e-4 * peak);
            }
        }
    }

    #[test]
    fn f_number_restricts_the_aperture() {
        let array = TransducerArray::default();
        let pulse = PulseSpec::default();
        let field = ScattererField::single(Point::new(0.0, 0.02), 1.0);
        let frame = simulate_frame(63, &field, &medium(), &pulse, &array, 6000).unwrap();
        let grid = ImagingGrid::new(0.0, 0.02, 1.5e-4, 7.5e-5, 1, 1).unwrap();
        let full = das_beamform(&frame, &array, &BfConfig::new(1500.0, grid)).unwrap();
        let cfg = BfConfig { f_number: 2.0, apodization: Apodization::Hann, ..BfConfig::new(1500.0, grid) };
        let narrow = das_beamform(&frame, &array, &cfg).unwrap();
        assert!(narrow.rf[0].abs() < full.rf[0].abs());
        assert!(narrow.rf[0] != 0.0);
    }
}
