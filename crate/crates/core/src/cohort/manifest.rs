//! JSON-lines cohort manifest: one patient record per line.
//!
//! Fields per line: `patient_id`, `slices` (relative paths), optional
//! `masks`, optional `histo_stage` ("F0".."F4"), optional `radio_grade`
//! ("none"|"mild"|"moderate"|"severe"). Paths are resolved against the
//! manifest's directory.

use super::sliceio::declared_shape;
use super::{CohortError, CohortManifest, FibrosisStage, PatientRecord, RadioGrade};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, Serialize, Deserialize)]
struct ManifestLine {
    patient_id: String,
    slices: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    masks: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    histo_stage: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    radio_grade: Option<String>,
}

/// Machine-readable validation finding.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Violation {
    pub patient_id: String,
    pub code: ViolationCode,
    pub message: String,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ViolationCode {
    DuplicateId,
    EmptySlices,
    MissingLabel,
    MaskCountMismatch,
    MissingFile,
    ShapeMismatch,
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ViolationCode::DuplicateId => "duplicate_id",
            ViolationCode::EmptySlices => "empty_slices",
            ViolationCode::MissingLabel => "missing_label",
            ViolationCode::MaskCountMismatch => "mask_count_mismatch",
            ViolationCode::MissingFile => "missing_file",
            ViolationCode::ShapeMismatch => "shape_mismatch",
        };
        f.write_str(s)
    }
}

/// Parse a JSONL manifest without touching slice payloads.
///
/// The cohort shape is taken from the first readable sidecar; validation
/// reports every file that disagrees with it.
pub fn parse_manifest(path: &Path) -> Result<CohortManifest, CohortError> {
    let file = fs::File::open(path)?;
    let reader = BufReader::new(file);
    let root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let cohort_name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "cohort".to_string());

    let mut patients = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ManifestLine =
            serde_json::from_str(&line).map_err(|e| CohortError::Parse {
                line: idx + 1,
                message: e.to_string(),
            })?;
        let histo_stage = match &parsed.histo_stage {
            Some(s) => Some(FibrosisStage::from_str_opt(s).ok_or(CohortError::Parse {
                line: idx + 1,
                message: format!("unknown histo_stage {s:?} (expected F0..F4)"),
            })?),
            None => None,
        };
        let radio_grade = match &parsed.radio_grade {
            Some(s) => Some(RadioGrade::from_str_opt(s).ok_or(CohortError::Parse {
                line: idx + 1,
                message: format!(
                    "unknown radio_grade {s:?} (expected none|mild|moderate|severe)"
                ),
            })?),
            None => None,
        };
        patients.push(PatientRecord::new(
            parsed.patient_id,
            parsed.slices.iter().map(PathBuf::from).collect(),
            parsed
                .masks
                .map(|m| m.iter().map(PathBuf::from).collect()),
            histo_stage,
            radio_grade,
        ));
    }

    // Cohort shape from the first resolvable sidecar.
    let mut image_height = 0;
    let mut image_width = 0;
    'outer: for p in &patients {
        for s in &p.slice_refs {
            if let Ok((h, w)) = declared_shape(&root.join(s)) {
                image_height = h;
                image_width = w;
                break 'outer;
            }
        }
    }

    Ok(CohortManifest {
        cohort_name,
        patients,
        image_height,
        image_width,
        root,
    })
}

/// Check every manifest invariant, returning one entry per violation.
pub fn validate_manifest(manifest: &CohortManifest) -> Vec<Violation> {
    let mut report = Vec::new();
    let mut seen: HashSet<&str> = HashSet::new();

    for p in &manifest.patients {
        if !seen.insert(p.patient_id.as_str()) {
            report.push(Violation {
                patient_id: p.patient_id.clone(),
                code: ViolationCode::DuplicateId,
                message: "patient_id appears more than once".to_string(),
            });
        }
        if p.slice_refs.is_empty() {
            report.push(Violation {
                patient_id: p.patient_id.clone(),
                code: ViolationCode::EmptySlices,
                message: "record has no slices".to_string(),
            });
        }
        if p.histo_stage.is_none() && p.radio_grade.is_none() {
            report.push(Violation {
                patient_id: p.patient_id.clone(),
                code: ViolationCode::MissingLabel,
                message: "record carries neither histo_stage nor radio_grade".to_string(),
            });
        }
        if let Some(masks) = &p.mask_refs {
            if masks.len() != p.slice_refs.len() {
                report.push(Violation {
                    patient_id: p.patient_id.clone(),
                    code: ViolationCode::MaskCountMismatch,
                    message: format!("{} masks for {} slices", masks.len(), p.slice_refs.len()),
                });
            }
        }
        let all_refs = p
            .slice_refs
            .iter()
            .chain(p.mask_refs.iter().flatten());
        for r in all_refs {
            let path = manifest.root.join(r);
            if !path.is_file() {
                report.push(Violation {
                    patient_id: p.patient_id.clone(),
                    code: ViolationCode::MissingFile,
                    message: format!("{} does not exist", path.display()),
                });
                continue;
            }
            match declared_shape(&path) {
                Ok((h, w)) => {
                    if (h, w) != (manifest.image_height, manifest.image_width) {
                        report.push(Violation {
                            patient_id: p.patient_id.clone(),
                            code: ViolationCode::ShapeMismatch,
                            message: format!(
                                "{} declares {}x{}, cohort is {}x{}",
                                path.display(),
                                h,
                                w,
                                manifest.image_height,
                                manifest.image_width
                            ),
                        });
                    }
                }
                Err(e) => report.push(Violation {
                    patient_id: p.patient_id.clone(),
                    code: ViolationCode::MissingFile,
                    message: e.to_string(),
                }),
            }
        }
    }
    report
}

/// Parse and validate; any violation fails the load with the full report.
pub fn load_manifest(path: &Path) -> Result<CohortManifest, CohortError> {
    let manifest = parse_manifest(path)?;
    let report = validate_manifest(&manifest);
    if report.is_empty() {
        Ok(manifest)
    } else {
        Err(CohortError::ValidationFailed(report))
    }
}

/// Write records as JSONL. Paths are emitted as given (expected relative).
pub fn write_manifest(path: &Path, patients: &[PatientRecord]) -> Result<(), CohortError> {
    let mut f = fs::File::create(path)?;
    for p in patients {
        let line = ManifestLine {
            patient_id: p.patient_id.clone(),
            slices: p
                .slice_refs
                .iter()
                .map(|s| s.to_string_lossy().into_owned())
                .collect(),
            masks: p.mask_refs.as_ref().map(|m| {
                m.iter()
                    .map(|s| s.to_string_lossy().into_owned())
                    .collect()
            }),
            histo_stage: p.histo_stage.map(|s| s.as_str().to_string()),
            radio_grade: p.radio_grade.map(|g| g.as_str().to_string()),
        };
        let json = serde_json::to_string(&line).map_err(|e| CohortError::Parse {
            line: 0,
            message: e.to_string(),
        })?;
        writeln!(f, "{json}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::write_slice_file;
    use ndarray::Array2;

    fn write_cohort(dir: &Path, ids: &[&str]) -> PathBuf {
        let mut patients = Vec::new();
        for (i, id) in ids.iter().enumerate() {
            let rel = format!("{id}_s0.f32");
            let data = Array2::from_elem((4, 4), i as f32);
            write_slice_file(&dir.join(&rel), &data).unwrap();
            patients.push(PatientRecord::new(
                id.to_string(),
                vec![PathBuf::from(rel)],
                None,
                Some(FibrosisStage::F3),
                None,
            ));
        }
        let path = dir.join("cohort.jsonl");
        write_manifest(&path, &patients).unwrap();
        path
    }

    #[test]
    fn well_formed_manifest_loads_clean() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_cohort(dir.path(), &["a", "b"]);
        let manifest = load_manifest(&path).unwrap();
        assert_eq!(manifest.n_patients(), 2);
        assert_eq!((manifest.image_height, manifest.image_width), (4, 4));
        assert!(validate_manifest(&manifest).is_empty());
        assert_eq!(manifest.patients[0].y_histo, Some(1));
    }

    #[test]
    fn duplicate_id_is_reported_once() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_cohort(dir.path(), &["a", "a"]);
        let manifest = parse_manifest(&path).unwrap();
        let report = validate_manifest(&manifest);
        let dups: Vec<_> = report
            .iter()
            .filter(|v| v.code == ViolationCode::DuplicateId)
            .collect();
        assert_eq!(dups.len(), 1);
        assert_eq!(dups[0].patient_id, "a");
        assert!(load_manifest(&path).is_err());
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_cohort(dir.path(), &["a", "b"]);
        // Overwrite b's slice with a different shape.
        write_slice_file(&dir.path().join("b_s0.f32"), &Array2::zeros((8, 8))).unwrap();
        let manifest = parse_manifest(&path).unwrap();
        let report = validate_manifest(&manifest);
        let mismatches: Vec<_> = report
            .iter()
            .filter(|v| v.code == ViolationCode::ShapeMismatch)
            .collect();
        assert_eq!(mismatches.len(), 1);
        assert_eq!(mismatches[0].patient_id, "b");
    }

    #[test]
    fn missing_file_is_reported_not_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_cohort(dir.path(), &["a"]);
        std::fs::remove_file(dir.path().join("a_s0.f32")).unwrap();
        let manifest = parse_manifest(&path).unwrap();
        let report = validate_manifest(&manifest);
        assert!(report
            .iter()
            .any(|v| v.code == ViolationCode::MissingFile && v.patient_id == "a"));
    }

    #[test]
    fn unknown_stage_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        fs::write(
            &path,
            "{\"patient_id\":\"x\",\"slices\":[\"s.f32\"],\"histo_stage\":\"F9\"}\n",
        )
        .unwrap();
        assert!(matches!(
            parse_manifest(&path),
            Err(CohortError::Parse { line: 1, .. })
        ));
    }
}
