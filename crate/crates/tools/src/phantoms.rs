//! The desk-scale phantom set used by `experiment`: four elliptical and four
//! rectangular inclusions, ±20 and ±40 m/s against the background.

use crate::config::{InclusionConfig, PipelineConfig, ShapeKind};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Phantom {
    pub id: &'static str,
    pub shape: ShapeKind,
    /// Inclusion center `[x, z]`, m.
    pub center: [f64; 2],
    pub half_size: [f64; 2],
    /// SoS difference to the background, m/s.
    pub delta_sos: f64,
}

pub const DESK_SET: [Phantom; 8] = [
    Phantom { id: "ell_p40", shape: ShapeKind::Ellipse, center: [1.5e-3, 18e-3], half_size: [5e-3, 4e-3], delta_sos: 40.0 },
    Phantom { id: "ell_m40", shape: ShapeKind::Ellipse, center: [-2e-3, 22e-3], half_size: [4e-3, 4e-3], delta_sos: -40.0 },
    Phantom { id: "ell_p20", shape: ShapeKind::Ellipse, center: [4e-3, 15e-3], half_size: [6e-3, 3e-3], delta_sos: 20.0 },
    Phantom { id: "ell_m20", shape: ShapeKind::Ellipse, center: [0.0, 24e-3], half_size: [5e-3, 5e-3], delta_sos: -20.0 },
    Phantom { id: "rect_p40", shape: ShapeKind::Rectangle, center: [2e-3, 18e-3], half_size: [5e-3, 4e-3], delta_sos: 40.0 },
    Phantom { id: "rect_m40", shape: ShapeKind::Rectangle, center: [-1e-3, 21e-3], half_size: [4e-3, 5e-3], delta_sos: -40.0 },
    Phantom { id: "rect_p20", shape: ShapeKind::Rectangle, center: [5e-3, 16e-3], half_size: [4e-3, 3e-3], delta_sos: 20.0 },
    Phantom { id: "rect_m20", shape: ShapeKind::Rectangle, center: [0.0, 25e-3], half_size: [6e-3, 4e-3], delta_sos: -20.0 },
];

impl Phantom {
    pub fn inclusion(&self, background_sos: f64) -> InclusionConfig {
        InclusionConfig {
            shape: self.shape,
            center: self.center,
            half_size: self.half_size,
            sos: background_sos + self.delta_sos,
        }
    }

    /// `base` with this phantom as its only inclusion and its own
    /// scatterer seed.
    pub fn config(&self, base: &PipelineConfig, case_index: usize) -> PipelineConfig {
        let mut cfg = base.clone();
        cfg.medium.inclusions = vec![self.inclusion(base.medium.background_sos)];
        cfg.seed = base.seed.wrapping_add(case_index as u64);
        cfg
    }
}
