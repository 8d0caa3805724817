//! Cumulative dose-volume histograms.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dose::DoseGrid;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DvhError {
    #[error("structure mask is empty")]
    EmptyMask,
    #[error("mask has {mask} voxels, dose grid has {dose}")]
    Mismatch { mask: usize, dose: usize },
    #[error("need bins >= 1 and a positive finite maximum dose")]
    BadBinning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DvhCurve {
    pub structure_name: String,
    pub dose_edges_gy: Vec<f64>,
    /// Fraction of the structure receiving at least the matching edge dose.
    pub volume_fraction: Vec<f64>,
}

impl DvhCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("edge_gy,volume_fraction\n");
        for (e, v) in self.dose_edges_gy.iter().zip(&self.volume_fraction) {
            out += &format!("{e},{v}\n");
        }
        out
    }
}

/// Edges `i · max / bins` for `i = 0..=bins`.
pub fn dvh_edges(bins: usize, max_dose_gy: f64) -> Vec<f64> {
    (0..=bins).map(|i| i as f64 * max_dose_gy / bins as f64).collect()
}

pub fn dvh(
    name: &str,
    dose: &DoseGrid,
    mask: &[bool],
    bins: usize,
    max_dose_gy: f64,
) -> Result<DvhCurve, DvhError> {
    if bins == 0 || !(max_dose_gy > 0.0 && max_dose_gy.is_finite()) {
        return Err(DvhError::BadBinning);
    }
    if mask.len() != dose.dose_gy.len() {
        return Err(DvhError::Mismatch {
            mask: mask.len(),
            dose: dose.dose_gy.len(),
        });
    }
    let mut doses: Vec<f64> = mask
        .iter()
        .zip(&dose.dose_gy)
        .filter(|(&m, _)| m)
        .map(|(_, &d)| d)
        .collect();
    if doses.is_empty() {
        return Err(DvhError::EmptyMask);
    }
    doses.sort_by(f64::total_cmp);
    let n = doses.len() as f64;
    let edges = dvh_edges(bins, max_dose_gy);
    let volume_fraction = edges
        .iter()
        .map(|&e| (doses.len() - doses.partition_point(|&d| d < e)) as f64 / n)
        .collect();
    Ok(DvhCurve {
        structure_name: name.to_string(),
        dose_edges_gy: edges,
        volume_fraction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::GridGeometry;

    fn grid(values: Vec<f64>) -> DoseGrid {
        let g = GridGeometry::centered([values.len(), 1, 1], [1.0; 3]).unwrap();
        DoseGrid { geometry: g, dose_gy: values }
    }

    #[test]
    fn uniform_dose_is_a_step() {
        let d = grid(vec![100.0; 8]);
        let c = dvh("ptv", &d, &[true; 8], 12, 120.0).unwrap();
        for (e, v) in c.dose_edges_gy.iter().zip(&c.volume_fraction) {
            assert_eq!(*v, if *e <= 100.0 { 1.0 } else { 0.0 }, "edge {e}");
        }
    }

    #[test]
    fn zero_dose() {
        let d = grid(vec![0.0; 5]);
        let c = dvh("x", &d, &[true; 5], 10, 50.0).unwrap();
        assert_eq!(c.volume_fraction[0], 1.0);
        assert!(c.volume_fraction[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn errors() {
        let d = grid(vec![1.0; 3]);
        assert_eq!(dvh("x", &d, &[false; 3], 10, 5.0), Err(DvhError::EmptyMask));
        assert!(matches!(dvh("x", &d, &[true; 2], 10, 5.0), Err(DvhError::Mismatch { .. })));
        assert_eq!(dvh("x", &d, &[true; 3], 0, 5.0), Err(DvhError::BadBinning));
    }
}
