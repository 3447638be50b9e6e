//! Straight-ray point-scatterer simulator for single-element (diverging
//! wave) transmits.
//!
//! Every echo is a Gaussian-windowed cosine centered on the two-way travel
//! time `T(tx → s) + T(s → rx)`, where travel times are line integrals of the
//! slowness along straight segments. There is no refraction, diffraction,
//! attenuation or element directivity.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{bail, Result};
use crate::geometry::{ImagingGrid, Point, TransducerArray};
use crate::math;

/// Sanity band for every SoS value handled by the crate, in m/s.
pub const SOS_MIN: f64 = 1300.0;
pub const SOS_MAX: f64 = 1700.0;

/// Floor on `r_tx · r_rx` in the spreading term, as a radius in meters.
pub const SPREADING_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Ellipse { center: Point, half_axes: (f64, f64) },
    Rectangle { center: Point, half_sizes: (f64, f64) },
}

impl Shape {
    pub fn center(&self) -> Point {
        match *self {
            Shape::Ellipse { center, .. } | Shape::Rectangle { center, .. } => center,
        }
    }

    fn half_extent(&self) -> (f64, f64) {
        match *self {
            Shape::Ellipse { half_axes, .. } => half_axes,
            Shape::Rectangle { half_sizes, .. } => half_sizes,
        }
    }

    pub fn contains(&self, p: Point) -> bool {
        let c = self.center();
        let (hx, hz) = self.half_extent();
        let (u, v) = (p.x - c.x, p.z - c.z);
        match self {
            Shape::Ellipse { .. } => (u / hx) * (u / hx) + (v / hz) * (v / hz) <= 1.0,
            Shape::Rectangle { .. } => u.abs() <= hx && v.abs() <= hz,
        }
    }

    /// Parameter interval `[t0, t1]` of the line `a + t·(b − a)` inside the
    /// shape, or `None` when the line misses it.
    fn crossing(&self, a: Point, b: Point) -> Option<(f64, f64)> {
        let c = self.center();
        let (hx, hz) = self.half_extent();
        let (u, v) = (a.x - c.x, a.z - c.z);
        let (du, dv) = (b.x - a.x, b.z - a.z);
        match self {
            Shape::Ellipse { .. } => {
                let (pu, pv, qu, qv) = (u / hx, v / hz, du / hx, dv / hz);
                let qa = qu * qu + qv * qv;
                let qb = 2.0 * (pu * qu + pv * qv);
                let qc = pu * pu + pv * pv - 1.0;
                let disc = qb * qb - 4.0 * qa * qc;
                if qa == 0.0 || disc <= 0.0 {
                    return None;
                }
                let r = math::sqrt(disc);
                Some(((-qb - r) / (2.0 * qa), (-qb + r) / (2.0 * qa)))
            }
            Shape::Rectangle { .. } => {
                let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
                for (p, d, h) in [(u, du, hx), (v, dv, hz)] {
                    if d == 0.0 {
                        if p.abs() > h {
                            return None;
                        }
                    } else {
                        let (t0, t1) = ((-h - p) / d, (h - p) / d);
                        lo = lo.max(t0.min(t1));
                        hi = hi.min(t0.max(t1));
                    }
                }
                (lo < hi).then_some((lo, hi))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inclusion {
    pub shape: Shape,
    pub sos: f64,
}

/// Piecewise-constant SoS medium: a background plus inclusions, the last
/// inclusion containing a point wins.
#[derive(Debug, Clone, PartialEq)]
pub struct MediumSpec {
    pub background_sos: f64,
    pub inclusions: Vec<Inclusion>,
    /// Raster grid for SoS-map export; its spacing also sets the travel-time
    /// quadrature step.
    pub grid: ImagingGrid,
}

impl MediumSpec {
    pub fn homogeneous(sos: f64, grid: ImagingGrid) -> Result<Self> {
        let m = Self { background_sos: sos, inclusions: Vec::new(), grid };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let check = |c: f64, what: &str| -> Result<()> {
            if !(SOS_MIN..=SOS_MAX).contains(&c) {
                bail!(
                    InvalidArgument,
                    "{what} SoS {c} m/s outside the [{SOS_MIN}, {SOS_MAX}] m/s band"
                );
            }
            Ok(())
        };
        check(self.background_sos, "background")?;
        for (i, inc) in self.inclusions.iter().enumerate() {
            check(inc.sos, "inclusion")?;
            let (hx, hz) = inc.shape.half_extent();
            if !(hx > 0.0 && hz > 0.0) {
                bail!(InvalidArgument, "inclusion {i} has non-positive half size");
            }
        }
        Ok(())
    }

    pub fn is_homogeneous(&self) -> bool {
        self.inclusions.iter().all(|inc| inc.sos == self.background_sos)
    }

    pub fn sos_at(&self, p: Point) -> f64 {
        self.inclusions
            .iter()
            .rev()
            .find(|inc| inc.shape.contains(p))
            .map_or(self.background_sos, |inc| inc.sos)
    }

    /// Mean SoS over the raster grid.
    pub fn mean_sos(&self) -> f64 {
        let map = self.rasterize(&self.grid);
        map.iter().sum::<f64>() / map.len() as f64
    }

    /// SoS sampled at the pixel centers of `grid`, row-major.
    pub fn rasterize(&self, grid: &ImagingGrid) -> Vec<f64> {
        let mut out = Vec::with_capacity(grid.len());
        for iz in 0..grid.nz {
            for ix in 0..grid.nx {
                out.push(self.sos_at(grid.pixel(ix, iz)));
            }
        }
        out
    }

}

/// Travel time along the straight segment `from → to`: the exact integral
/// of `1/c`, split at every shape boundary the segment crosses.
pub fn travel_time(from: Point, to: Point, medium: &MediumSpec) -> f64 {
    let length = from.distance(to);
    if length == 0.0 {
        return 0.0;
    }
    if medium.is_homogeneous() {
        return length / medium.background_sos;
    }
    // Fixed endpoint order makes the result symmetric to the bit.
    let (a, b) = if (from.x, from.z) <= (to.x, to.z) { (from, to) } else { (to, from) };
    let mut cuts: Vec<f64> = Vec::with_capacity(2 * medium.inclusions.len() + 2);
    cuts.push(0.0);
    cuts.push(1.0);
    for inc in &medium.inclusions {
        if let Some((t0, t1)) = inc.shape.crossing(a, b) {
            cuts.extend([t0, t1].into_iter().filter(|t| *t > 0.0 && *t < 1.0));
        }
    }
    cuts.sort_by(f64::total_cmp);
    let mut slowness_len = 0.0;
    for w in cuts.windows(2) {
        let dt = w[1] - w[0];
        if dt <= 0.0 {
            continue;
        }
        let t = 0.5 * (w[0] + w[1]);
        let mid = Point::new(a.x + t * (b.x - a.x), a.z + t * (b.z - a.z));
        slowness_len += dt / medium.sos_at(mid);
    }
    slowness_len * length
}

/// Point scatterers with reproducible positions and amplitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct ScattererField {
    pub positions: Vec<Point>,
    pub amplitudes: Vec<f64>,
    pub rng_seed: u64,
}

impl ScattererField {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn empty() -> Self {
        Self { positions: Vec::new(), amplitudes: Vec::new(), rng_seed: 0 }
    }

    pub fn single(p: Point, amplitude: f64) -> Self {
        Self { positions: vec![p], amplitudes: vec![amplitude], rng_seed: 0 }
    }

    /// Concatenation of two fields.
    pub fn union(&self, other: &Self) -> Self {
        let mut positions = self.positions.clone();
        positions.extend_from_slice(&other.positions);
        let mut amplitudes = self.amplitudes.clone();
        amplitudes.extend_from_slice(&other.amplitudes);
        Self { positions, amplitudes, rng_seed: self.rng_seed }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            positions: self.positions.clone(),
            amplitudes: self.amplitudes.iter().map(|a| a * factor).collect(),
            rng_seed: self.rng_seed,
        }
    }

    /// Mirror image about `x = 0`.
    pub fn mirrored(&self) -> Self {
        Self {
            positions: self.positions.iter().map(|p| Point::new(-p.x, p.z)).collect(),
            amplitudes: self.amplitudes.clone(),
            rng_seed: self.rng_seed,
        }
    }
}

/// Uniform scatterers over the cell extent of `grid` with standard-normal
/// amplitudes; `density` is per mm².
pub fn gen_scatterers(grid: &ImagingGrid, density: f64, seed: u64) -> Result<ScattererField> {
    if !(density > 0.0 && density.is_finite()) {
        bail!(InvalidArgument, "scatterer density must be positive, got {density}");
    }
    let (x_min, x_max, z_min, z_max) = grid.cell_bounds();
    let area_mm2 = (x_max - x_min) * 1e3 * (z_max - z_min) * 1e3;
    let count = math::round(density * area_mm2) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions = Vec::with_capacity(count);
    let mut amplitudes = Vec::with_capacity(count);
    for _ in 0..count {
        let x = x_min + (x_max - x_min) * rng.random::<f64>();
        let z = z_min + (z_max - z_min) * rng.random::<f64>();
        positions.push(Point::new(x, z));
        amplitudes.push(rng.sample::<f64, _>(StandardNormal));
    }
    Ok(ScattererField { positions, amplitudes, rng_seed: seed })
}

/// Transmit pulse: a cosine at `center_frequency` under a Gaussian envelope
/// whose standard deviation is a quarter of the pulse duration. `t = 0` is
/// the pulse center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseSpec {
    pub center_frequency: f64,
    pub half_cycles: u32,
    pub sampling_frequency: f64,
}

impl Default for PulseSpec {
    fn default() -> Self {
        Self { center_frequency: 5e6, half_cycles: 4, sampling_frequency: 1.6e8 }
    }
}

/// Envelope support in standard deviations on each side of the center.
const PULSE_SUPPORT_SIGMAS: f64 = 4.5;

impl PulseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.center_frequency > 0.0) || self.half_cycles == 0 {
            bail!(InvalidArgument, "pulse needs a positive center frequency and half-cycle count");
        }
        if !(self.sampling_frequency >= 10.0 * self.center_frequency) {
            bail!(
                InvalidArgument,
                "sampling frequency {} Hz is below 10× the center frequency {} Hz",
                self.sampling_frequency,
                self.center_frequency
            );
        }
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        self.half_cycles as f64 / (2.0 * self.center_frequency)
    }

    pub fn envelope_sigma(&self) -> f64 {
        self.duration() / 4.0
    }

    /// Half-width of the truncated pulse, in seconds.
    pub fn half_support(&self) -> f64 {
        PULSE_SUPPORT_SIGMAS * self.envelope_sigma()
    }

    pub fn value(&self, t: f64) -> f64 {
        if t.abs() > self.half_support() {
            return 0.0;
        }
        let s = self.envelope_sigma();
        math::exp(-t * t / (2.0 * s * s)) * math::cos(2.0 * core::f64::consts::PI * self.center_frequency * t)
    }

    pub fn envelope(&self, t: f64) -> f64 {
        let s = self.envelope_sigma();
        math::exp(-t * t / (2.0 * s * s))
    }
}

/// Raw channel data of one transmit, received on the full aperture.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelFrame {
    pub tx_element: usize,
    pub num_rx: usize,
    pub num_samples: usize,
    /// Row-major `[num_rx × num_samples]`.
    pub samples: Vec<f32>,
    /// Time of the first sample relative to the transmit, seconds.
    pub t0: f64,
    pub fs: f64,
}

impl ChannelFrame {
    pub fn zeros(tx_element: usize, num_rx: usize, num_samples: usize, t0: f64, fs: f64) -> Self {
        Self { tx_element, num_rx, num_samples, samples: vec![0.0; num_rx * num_samples], t0, fs }
    }

    pub fn row(&self, rx: usize) -> &[f32] {
        &self.samples[rx * self.num_samples..(rx + 1) * self.num_samples]
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.len() != self.num_rx * self.num_samples {
            bail!(InvalidArgument, "channel frame payload length does not match its header");
        }
        if !(self.fs > 0.0) {
            bail!(InvalidArgument, "channel frame sampling frequency must be positive");
        }
        if self.samples.iter().any(|v| !v.is_finite()) {
            bail!(Numerical, "channel frame for Tx {} holds non-finite samples", self.tx_element);
        }
        Ok(())
    }

    /// Adds white Gaussian noise at `snr_db` relative to the frame's RMS.
    pub fn add_white_noise(&mut self, snr_db: f64, seed: u64) {
        let power = self.samples.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>()
            / self.samples.len().max(1) as f64;
        if power == 0.0 {
            return;
        }
        let sigma = math::sqrt(power / libm::pow(10.0, snr_db / 10.0));
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (self.tx_element as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        for v in &mut self.samples {
            *v += (sigma * rng.sample::<f64, _>(StandardNormal)) as f32;
        }
    }
}

/// One-way travel times between every array element and every scatterer.
///
/// The receive paths are shared by all transmits, so a table is built once
/// per (medium, field) and reused for each simulated frame.
#[derive(Debug, Clone)]
pub struct TravelTimeTable {
    num_elements: usize,
    num_scatterers: usize,
    /// `times[e · num_scatterers + s]`
    times: Vec<f64>,
    /// Element-to-scatterer distances, same layout.
    distances: Vec<f64>,
}

impl TravelTimeTable {
    pub fn new(array: &TransducerArray, field: &ScattererField, medium: &MediumSpec) -> Self {
        let ne = array.num_elements();
        let ns = field.len();
        let mut times = Vec::with_capacity(ne * ns);
        let mut distances = Vec::with_capacity(ne * ns);
        for e in 0..ne {
            let pe = array.element_x_unchecked(e);
            for &ps in &field.positions {
                times.push(travel_time(pe, ps, medium));
                distances.push(pe.distance(ps));
            }
        }
        Self { num_elements: ne, num_scatterers: ns, times, distances }
    }

    fn row(&self, e: usize) -> &[f64] {
        &self.times[e * self.num_scatterers..(e + 1) * self.num_scatterers]
    }

    fn dist_row(&self, e: usize) -> &[f64] {
        &self.distances[e * self.num_scatterers..(e + 1) * self.num_scatterers]
    }

    /// Latest two-way arrival over all receive elements for transmit `tx`.
    pub fn max_two_way(&self, tx: usize) -> f64 {
        let tx_row = self.row(tx);
        (0..self.num_elements)
            .flat_map(|rx| self.row(rx).iter().zip(tx_row).map(|(a, b)| a + b))
            .fold(0.0, f64::max)
    }
}

/// Smallest `num_samples` that holds every echo of transmit `tx` in full.
pub fn required_samples(table: &TravelTimeTable, tx: usize, pulse: &PulseSpec) -> usize {
    let t_end = table.max_two_way(tx) + pulse.half_support();
    math::ceil(t_end * pulse.sampling_frequency) as usize + 1
}

/// Simulates the channel data of a single-element transmit from `tx`.
pub fn simulate_frame(
    tx: usize,
    field: &ScattererField,
    medium: &MediumSpec,
    pulse: &PulseSpec,
    array: &TransducerArray,
    num_samples: usize,
) -> Result<ChannelFrame> {
    let table = TravelTimeTable::new(array, field, medium);
    simulate_frame_with_table(tx, field, &table, pulse, array, num_samples)
}

/// Sub-sample phases of the tabulated pulse.
const PULSE_PHASES: usize = 256;

/// The pulse sampled at `fs` for `PULSE_PHASES + 1` sub-sample start
/// offsets, interpolated linearly between neighbouring phases. Rows are not
/// truncated; callers bound the sample range.
struct PulseTable {
    row_len: usize,
    rows: Vec<f64>,
    half: f64,
    fs: f64,
}

impl PulseTable {
    fn new(pulse: &PulseSpec) -> Self {
        let fs = pulse.sampling_frequency;
        let dt = 1.0 / fs;
        let half = pulse.half_support();
        let sigma = pulse.envelope_sigma();
        let omega = 2.0 * core::f64::consts::PI * pulse.center_frequency;
        let row_len = math::floor(2.0 * half * fs) as usize + 2;
        let mut rows = Vec::with_capacity((PULSE_PHASES + 1) * row_len);
        for p in 0..=PULSE_PHASES {
            let t0 = -half + p as f64 / PULSE_PHASES as f64 * dt;
            for j in 0..row_len {
                let t = t0 + j as f64 * dt;
                rows.push(math::exp(-t * t / (2.0 * sigma * sigma)) * math::cos(omega * t));
            }
        }
        Self { row_len, rows, half, fs }
    }

    /// Adds `weight · pulse(t0 + j·dt)` to `out[j]`, `t0 ≥ −half`.
    fn stamp(&self, out: &mut [f64], t0: f64, weight: f64) {
        let u = ((t0 + self.half) * self.fs * PULSE_PHASES as f64).clamp(0.0, PULSE_PHASES as f64);
        let p = (u as usize).min(PULSE_PHASES - 1);
        let f = u - p as f64;
        let (a, b) = (weight * (1.0 - f), weight * f);
        let n = out.len().min(self.row_len);
        let r0 = &self.rows[p * self.row_len..p * self.row_len + n];
        let r1 = &self.rows[(p + 1) * self.row_len..(p + 1) * self.row_len + n];
        for ((v, x), y) in out[..n].iter_mut().zip(r0).zip(r1) {
            *v += a * x + b * y;
        }
    }
}

/// [`simulate_frame`] over a precomputed travel-time table.
pub fn simulate_frame_with_table(
    tx: usize,
    field: &ScattererField,
    table: &TravelTimeTable,
    pulse: &PulseSpec,
    array: &TransducerArray,
    num_samples: usize,
) -> Result<ChannelFrame> {
    array.element_position(tx)?;
    pulse.validate()?;
    if table.num_elements != array.num_elements() || table.num_scatterers != field.len() {
        bail!(InvalidArgument, "travel-time table does not match the array or scatterer field");
    }
    let needed = required_samples(table, tx, pulse);
    if !field.is_empty() && num_samples < needed {
        bail!(
            Config,
            "num_samples = {num_samples} is too small for Tx {tx}; at least {needed} samples are required"
        );
    }

    let fs = pulse.sampling_frequency;
    let half = pulse.half_support();
    let table_pulse = PulseTable::new(pulse);
    let floor2 = SPREADING_FLOOR * SPREADING_FLOOR;

    let num_rx = array.num_elements();
    let tx_times = table.row(tx);
    let tx_dist = table.dist_row(tx);
    let mut samples = Vec::with_capacity(num_rx * num_samples);
    let mut acc = vec![0.0f64; num_samples];

    for rx in 0..num_rx {
        acc.iter_mut().for_each(|v| *v = 0.0);
        let rx_times = table.row(rx);
        let rx_dist = table.dist_row(rx);
        for s in 0..field.len() {
            let tau = tx_times[s] + rx_times[s];
            let weight = field.amplitudes[s] / (tx_dist[s] * rx_dist[s]).max(floor2);
            let k_lo = math::ceil((tau - half) * fs).max(0.0) as usize;
            let k_hi = (math::floor((tau + half) * fs) as isize).min(num_samples as isize - 1);
            if k_hi < k_lo as isize {
                continue;
            }
            let out = &mut acc[k_lo..=k_hi as usize];
            table_pulse.stamp(out, k_lo as f64 / fs - tau, weight);
        }
        samples.extend(acc.iter().map(|&v| v as f32));
    }

    Ok(ChannelFrame { tx_element: tx, num_rx, num_samples, samples, t0: 0.0, fs })
}
