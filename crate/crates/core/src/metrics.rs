//! Map-level scores: RMSE between SoS maps and contrast-to-noise ratio.

use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::math;

/// `√(mean((a − b)²))` over all pixels.
pub fn rmse_map(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        bail!(InvalidArgument, "maps have {} and {} pixels", a.len(), b.len());
    }
    if a.is_empty() {
        bail!(InvalidArgument, "empty maps");
    }
    let ss: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(math::sqrt(ss / a.len() as f64))
}

/// Disjoint inclusion / background masks over a map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionLabels {
    pub inclusion: Vec<bool>,
    pub background: Vec<bool>,
}

impl RegionLabels {
    pub fn new(inclusion: Vec<bool>, background: Vec<bool>) -> Result<Self> {
        let labels = Self { inclusion, background };
        labels.validate()?;
        Ok(labels)
    }

    /// Background is the complement of the inclusion.
    pub fn complement(inclusion: Vec<bool>) -> Result<Self> {
        let background = inclusion.iter().map(|v| !v).collect();
        Self::new(inclusion, background)
    }

    pub fn validate(&self) -> Result<()> {
        if self.inclusion.len() != self.background.len() {
            bail!(InvalidArgument, "region masks differ in length");
        }
        if self.inclusion.iter().zip(&self.background).any(|(a, b)| *a && *b) {
            bail!(InvalidArgument, "inclusion and background masks overlap");
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inclusion.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inclusion.is_empty()
    }

    pub fn inclusion_count(&self) -> usize {
        self.inclusion.iter().filter(|v| **v).count()
    }

    pub fn background_count(&self) -> usize {
        self.background.iter().filter(|v| **v).count()
    }
}

fn region_stats(map: &[f64], mask: &[bool], name: &str) -> Result<(f64, f64)> {
    let vals: Vec<f64> = map.iter().zip(mask).filter(|(_, m)| **m).map(|(v, _)| *v).collect();
    if vals.len() < 2 {
        bail!(InvalidArgument, "{name} region needs at least 2 pixels, has {}", vals.len());
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok((mean, var))
}

/// `2(μ_inc − μ_bkg)² / (σ_inc² + σ_bkg²)` with population variances.
/// Zero variance with nonzero contrast gives `+∞`.
pub fn cnr_linear(map: &[f64], labels: &RegionLabels) -> Result<f64> {
    labels.validate()?;
    if map.len() != labels.len() {
        bail!(InvalidArgument, "map has {} pixels, labels {}", map.len(), labels.len());
    }
    let (mi, vi) = region_stats(map, &labels.inclusion, "inclusion")?;
    let (mb, vb) = region_stats(map, &labels.background, "background")?;
    let contrast = 2.0 * (mi - mb) * (mi - mb);
    if contrast == 0.0 {
        return Ok(0.0);
    }
    let denom = vi + vb;
    Ok(if denom == 0.0 { f64::INFINITY } else { contrast / denom })
}

/// CNR in dB (`10·log₁₀`). Zero contrast gives `−∞` ("undefined").
pub fn cnr_db(map: &[f64], labels: &RegionLabels) -> Result<f64> {
    let lin = cnr_linear(map, labels)?;
    Ok(if lin == 0.0 {
        f64::NEG_INFINITY
    } else if lin.is_infinite() {
        f64::INFINITY
    } else {
        10.0 * math::log10(lin)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn two_region_map(mu_inc: f64, mu_bkg: f64, sd: f64) -> (Vec<f64>, RegionLabels) {
        // ±sd alternation has population std exactly sd.
        let mut map = Vec::new();
        let mut inc = Vec::new();
        for i in 0..40 {
            let s = if i % 2 == 0 { sd } else { -sd };
            map.push(if i < 20 { mu_inc + s } else { mu_bkg + s });
            inc.push(i < 20);
        }
        (map, RegionLabels::complement(inc).unwrap())
    }

    #[test]
    fn rmse_hand_values() {
        assert_eq!(rmse_map(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse_map(&[1505.0; 7], &[1500.0; 7]).unwrap() - 5.0).abs() < 1e-12);
        assert!((rmse_map(&[1500.0, 1500.0], &[1503.0, 1497.0]).unwrap() - 3.0).abs() < 1e-12);
        assert!(rmse_map(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn cnr_hand_value() {
        let (map, labels) = two_region_map(1550.0, 1500.0, 10.0);
        assert!((cnr_linear(&map, &labels).unwrap() - 25.0).abs() < 1e-9);
        assert!((cnr_db(&map, &labels).unwrap() - 13.979400086720377).abs() < 1e-3);
    }

    #[test]
    fn cnr_sentinels() {
        let (map, labels) = two_region_map(1500.0, 1500.0, 10.0);
        assert_eq!(cnr_db(&map, &labels).unwrap(), f64::NEG_INFINITY);
        let (map, labels) = two_region_map(1520.0, 1500.0, 0.0);
        assert_eq!(cnr_db(&map, &labels).unwrap(), f64::INFINITY);
    }

    #[test]
    fn cnr_region_errors() {
        let labels = RegionLabels::complement(vec![true, false, false]).unwrap();
        assert!(cnr_db(&[1.0, 2.0, 3.0], &labels).is_err());
        assert!(RegionLabels::new(vec![true, false], vec![true, true]).is_err());
        assert!(RegionLabels::new(vec![true], vec![false, true]).is_err());
    }

    #[test]
    fn cnr_invariant_to_constant_shift() {
        let (map, labels) = two_region_map(1530.0, 1500.0, 4.0);
        let shifted: Vec<f64> = map.iter().map(|v| v + 64.0).collect();
        assert_eq!(cnr_db(&map, &labels).unwrap(), cnr_db(&shifted, &labels).unwrap());
    }

    #[test]
    fn cnr_grows_with_contrast() {
        let mut last = f64::NEG_INFINITY;
        for d in [5.0, 10.0, 20.0, 40.0] {
            let (map, labels) = two_region_map(1500.0 + d, 1500.0, 8.0);
            let v = cnr_db(&map, &labels).unwrap();
            assert!(v > last);
            last = v;
        }
    }

    proptest! {
        #[test]
        fn rmse_is_a_metric(
            a in proptest::collection::vec(1300.0f64..1700.0, 16),
            b in proptest::collection::vec(1300.0f64..1700.0, 16),
            c in proptest::collection::vec(1300.0f64..1700.0, 16),
        ) {
            let ab = rmse_map(&a, &b).unwrap();
            prop_assert_eq!(ab, rmse_map(&b, &a).unwrap());
            let ac = rmse_map(&a, &c).unwrap();
            let cb = rmse_map(&c, &b).unwrap();
            prop_assert!(ab <= ac + cb + 1e-9);
        }
    }
}
