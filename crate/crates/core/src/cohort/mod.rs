//! Cohort data model: patient records, label binarization, slice
//! preprocessing, central-slice selection, manifest I/O and the synthetic
//! cohort generator.

mod manifest;
mod sliceio;
mod synth;

pub use manifest::{
    load_manifest, parse_manifest, validate_manifest, write_manifest, Violation, ViolationCode,
};
pub use sliceio::{read_slice_file, write_slice_file};
pub use synth::{generate_synthetic_cohort, CohortStats, SynthParams};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use thiserror::Error;

/// Hounsfield-unit clipping window applied before normalization.
pub const HU_CLIP_LOW: f32 = -100.0;
pub const HU_CLIP_HIGH: f32 = 400.0;

#[derive(Debug, Error)]
pub enum CohortError {
    #[error("non-finite intensity {value} at ({row}, {col}) in slice {slice_index} of patient {patient}")]
    NonFiniteIntensity {
        patient: String,
        slice_index: usize,
        row: usize,
        col: usize,
        value: f32,
    },
    #[error("no liver present: every mask in the volume has zero area")]
    NoLiverPresent,
    #[error("central-slice fraction must be in (0, 1], got {0}")]
    BadFraction(f64),
    #[error("manifest validation failed with {} violation(s): {}", .0.len(), summarize(.0))]
    ValidationFailed(Vec<Violation>),
    #[error("manifest parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("slice file {path}: {message}")]
    SliceFile { path: PathBuf, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn summarize(violations: &[Violation]) -> String {
    violations
        .iter()
        .take(4)
        .map(|v| format!("[{}] {}: {}", v.patient_id, v.code, v.message))
        .collect::<Vec<_>>()
        .join("; ")
}

/// METAVIR fibrosis stage from histological analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FibrosisStage {
    F0,
    F1,
    F2,
    F3,
    F4,
}

impl FibrosisStage {
    pub const ALL: [FibrosisStage; 5] = [
        FibrosisStage::F0,
        FibrosisStage::F1,
        FibrosisStage::F2,
        FibrosisStage::F3,
        FibrosisStage::F4,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FibrosisStage::F0 => "F0",
            FibrosisStage::F1 => "F1",
            FibrosisStage::F2 => "F2",
            FibrosisStage::F3 => "F3",
            FibrosisStage::F4 => "F4",
        }
    }

    pub fn from_str_opt(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|v| v.as_str() == s)
    }
}

/// Radiologist-assigned cirrhosis grade (the weak label).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RadioGrade {
    None,
    Mild,
    Moderate,
    Severe,
}

impl RadioGrade {
    pub const ALL: [RadioGrade; 4] = [
        RadioGrade::None,
        RadioGrade::Mild,
        RadioGrade::Moderate,
        RadioGrade::Severe,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RadioGrade::None => "none",
            RadioGrade::Mild => "mild",
            RadioGrade::Moderate => "moderate",
            RadioGrade::Severe => "severe",
        }
    }

    pub fn from_str_opt(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|v| v.as_str() == s)
    }
}

/// Binarize the histological stage: advanced fibrosis is F3/F4.
pub fn binarize_histo(stage: FibrosisStage) -> u8 {
    match stage {
        FibrosisStage::F0 | FibrosisStage::F1 | FibrosisStage::F2 => 0,
        FibrosisStage::F3 | FibrosisStage::F4 => 1,
    }
}

/// Binarize the radiological grade: any reported cirrhosis is positive.
pub fn binarize_radio(grade: RadioGrade) -> u8 {
    match grade {
        RadioGrade::None => 0,
        RadioGrade::Mild | RadioGrade::Moderate | RadioGrade::Severe => 1,
    }
}

/// One patient: slice file references plus whichever labels exist.
///
/// The derived binaries are filled in at construction and therefore always
/// agree with the categorical fields.
#[derive(Debug, Clone)]
pub struct PatientRecord {
    pub patient_id: String,
    pub slice_refs: Vec<PathBuf>,
    pub mask_refs: Option<Vec<PathBuf>>,
    pub histo_stage: Option<FibrosisStage>,
    pub radio_grade: Option<RadioGrade>,
    pub y_histo: Option<u8>,
    pub y_radio: Option<u8>,
}

impl PatientRecord {
    pub fn new(
        patient_id: String,
        slice_refs: Vec<PathBuf>,
        mask_refs: Option<Vec<PathBuf>>,
        histo_stage: Option<FibrosisStage>,
        radio_grade: Option<RadioGrade>,
    ) -> Self {
        let y_histo = histo_stage.map(binarize_histo);
        let y_radio = radio_grade.map(binarize_radio);
        PatientRecord {
            patient_id,
            slice_refs,
            mask_refs,
            histo_stage,
            radio_grade,
            y_histo,
            y_radio,
        }
    }
}

/// A cohort: uniformly shaped slices across a set of patients.
#[derive(Debug, Clone)]
pub struct CohortManifest {
    pub cohort_name: String,
    pub patients: Vec<PatientRecord>,
    pub image_height: usize,
    pub image_width: usize,
    /// Directory slice/mask paths are relative to (the manifest's directory).
    pub root: PathBuf,
}

impl CohortManifest {
    pub fn n_patients(&self) -> usize {
        self.patients.len()
    }

    /// Count of patients with y_histo == 1 / y_radio == 1.
    pub fn label_counts(&self) -> CohortLabelCounts {
        let mut c = CohortLabelCounts::default();
        for p in &self.patients {
            match p.y_histo {
                Some(1) => c.histo_positive += 1,
                Some(_) => c.histo_negative += 1,
                None => {}
            }
            match p.y_radio {
                Some(1) => c.radio_positive += 1,
                Some(_) => c.radio_negative += 1,
                None => {}
            }
        }
        c
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortLabelCounts {
    pub histo_positive: usize,
    pub histo_negative: usize,
    pub radio_positive: usize,
    pub radio_negative: usize,
}

/// A preprocessed 2D slice with values in [0, 1].
#[derive(Debug, Clone)]
pub struct SliceImage {
    pub pixels: Array2<f32>,
    pub source_patient: String,
    pub slice_index: usize,
}

/// Clip raw Hounsfield intensities to [-100, 400] and rescale to [0, 1].
///
/// Rejects non-finite input; the affine map is exact for the clip bounds
/// (HU -100 -> 0.0, HU 400 -> 1.0).
pub fn preprocess_slice(
    raw: &Array2<f32>,
    source_patient: &str,
    slice_index: usize,
) -> Result<SliceImage, CohortError> {
    if let Some(((row, col), &value)) = raw.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(CohortError::NonFiniteIntensity {
            patient: source_patient.to_string(),
            slice_index,
            row,
            col,
            value,
        });
    }
    let span = HU_CLIP_HIGH - HU_CLIP_LOW;
    let pixels = raw.mapv(|v| (v.clamp(HU_CLIP_LOW, HU_CLIP_HIGH) - HU_CLIP_LOW) / span);
    Ok(SliceImage {
        pixels,
        source_patient: source_patient.to_string(),
        slice_index,
    })
}

/// Per-slice liver area (count of mask pixels > 0.5).
pub fn mask_area(mask: &Array2<f32>) -> usize {
    mask.iter().filter(|&&v| v > 0.5).count()
}

/// Select the most central liver-bearing slices.
///
/// Centrality is measured against the area-weighted mean index of all
/// slices with nonzero liver area; exactly ceil(fraction * |S|) indices are
/// kept, ties broken toward the smaller index, output sorted ascending.
pub fn select_central_slices(
    mask_areas: &[usize],
    fraction: f64,
) -> Result<Vec<usize>, CohortError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CohortError::BadFraction(fraction));
    }
    let liver: Vec<(usize, usize)> = mask_areas
        .iter()
        .copied()
        .enumerate()
        .filter(|&(_, area)| area > 0)
        .collect();
    if liver.is_empty() {
        return Err(CohortError::NoLiverPresent);
    }
    let total_area: f64 = liver.iter().map(|&(_, a)| a as f64).sum();
    let center: f64 = liver
        .iter()
        .map(|&(i, a)| i as f64 * a as f64)
        .sum::<f64>()
        / total_area;

    let keep = (fraction * liver.len() as f64).ceil() as usize;
    let mut by_distance: Vec<usize> = liver.iter().map(|&(i, _)| i).collect();
    by_distance.sort_by(|&a, &b| {
        let da = (a as f64 - center).abs();
        let db = (b as f64 - center).abs();
        da.partial_cmp(&db).unwrap().then(a.cmp(&b))
    });
    let mut selected: Vec<usize> = by_distance.into_iter().take(keep).collect();
    selected.sort_unstable();
    Ok(selected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn binarize_histo_partitions_stages() {
        assert_eq!(binarize_histo(FibrosisStage::F0), 0);
        assert_eq!(binarize_histo(FibrosisStage::F1), 0);
        assert_eq!(binarize_histo(FibrosisStage::F2), 0);
        assert_eq!(binarize_histo(FibrosisStage::F3), 1);
        assert_eq!(binarize_histo(FibrosisStage::F4), 1);
    }

    #[test]
    fn binarize_radio_partitions_grades() {
        assert_eq!(binarize_radio(RadioGrade::None), 0);
        assert_eq!(binarize_radio(RadioGrade::Mild), 1);
        assert_eq!(binarize_radio(RadioGrade::Moderate), 1);
        assert_eq!(binarize_radio(RadioGrade::Severe), 1);
    }

    #[test]
    fn preprocess_clips_and_rescales() {
        let raw = arr2(&[[-200.0f32, 400.0], [150.0, -100.0]]);
        let img = preprocess_slice(&raw, "p0", 0).unwrap();
        assert_eq!(img.pixels[[0, 0]], 0.0);
        assert_eq!(img.pixels[[0, 1]], 1.0);
        assert_eq!(img.pixels[[1, 0]], 0.5);
        assert_eq!(img.pixels[[1, 1]], 0.0);
    }

    #[test]
    fn preprocess_rejects_non_finite() {
        let raw = arr2(&[[0.0f32, f32::NAN]]);
        let err = preprocess_slice(&raw, "p1", 3).unwrap_err();
        match err {
            CohortError::NonFiniteIntensity {
                patient,
                slice_index,
                row,
                col,
                ..
            } => {
                assert_eq!(patient, "p1");
                assert_eq!(slice_index, 3);
                assert_eq!((row, col), (0, 1));
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn preprocess_is_idempotent_through_hu_roundtrip() {
        let raw = arr2(&[[-50.0f32, 0.0], [123.0, 399.5]]);
        let once = preprocess_slice(&raw, "p", 0).unwrap();
        // Rescale back to HU and preprocess again.
        let back = once.pixels.mapv(|v| v * 500.0 - 100.0);
        let twice = preprocess_slice(&back, "p", 0).unwrap();
        for (a, b) in once.pixels.iter().zip(twice.pixels.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn central_slices_uniform_area() {
        // Liver on indices 10..=29 with uniform area, fraction 0.7:
        // c = 19.5, keep 14 -> indices 13..=26.
        let mut areas = vec![0usize; 35];
        for a in areas.iter_mut().take(30).skip(10) {
            *a = 100;
        }
        let got = select_central_slices(&areas, 0.7).unwrap();
        assert_eq!(got, (13..=26).collect::<Vec<_>>());
    }

    #[test]
    fn central_slices_single_slice() {
        let mut areas = vec![0usize; 10];
        areas[5] = 42;
        assert_eq!(select_central_slices(&areas, 0.7).unwrap(), vec![5]);
    }

    #[test]
    fn central_slices_area_weighting_pulls_center() {
        // Liver on 0..=9 but all area concentrated at index 0.
        let mut areas = vec![1usize; 10];
        areas[0] = 1_000_000;
        let got = select_central_slices(&areas, 0.3).unwrap();
        assert_eq!(got, vec![0, 1, 2]);
    }

    #[test]
    fn central_slices_all_empty_errors() {
        let areas = vec![0usize; 4];
        assert!(matches!(
            select_central_slices(&areas, 0.7),
            Err(CohortError::NoLiverPresent)
        ));
    }

    #[test]
    fn central_slices_count_and_shift_invariance() {
        let mut areas = vec![0usize; 40];
        for (i, a) in areas.iter_mut().enumerate().take(23).skip(7) {
            *a = 10 + i;
        }
        for &frac in &[0.1, 0.35, 0.7, 1.0] {
            let picked = select_central_slices(&areas, frac).unwrap();
            let live = areas.iter().filter(|&&a| a > 0).count();
            assert_eq!(picked.len(), (frac * live as f64).ceil() as usize);
            assert!(picked.iter().all(|&i| areas[i] > 0));

            // Uniform index shift: prepend 5 empty slices.
            let mut shifted = vec![0usize; 5];
            shifted.extend_from_slice(&areas);
            let picked_shift = select_central_slices(&shifted, frac).unwrap();
            let expect: Vec<usize> = picked.iter().map(|&i| i + 5).collect();
            assert_eq!(picked_shift, expect);
        }
    }
}
