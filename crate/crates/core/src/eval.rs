//! Evaluation: patient-level aggregation of slice probabilities, ROC AUC
//! (Mann-Whitney form), balanced accuracy at the 0.5 threshold, per-fold
//! metrics and the cross-fold report.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty input")]
    EmptyInput,
    #[error("probability {prob} for patient {patient} outside [0,1]")]
    ProbOutOfRange { patient: String, prob: f64 },
    #[error("patient {0} appears with conflicting labels")]
    InconsistentLabel(String),
    #[error("only class {0} present; metric undefined")]
    SingleClass(u8),
    #[error("score / label length mismatch: {scores} vs {labels}")]
    LengthMismatch { scores: usize, labels: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("probe: {0}")]
    Probe(#[from] crate::probe::ProbeError),
}

/// One evaluated slice.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SliceScore {
    pub patient_id: String,
    pub slice_index: usize,
    pub prob_positive: f64,
    pub label: u8,
}

/// Mean positive probability over a patient's evaluated slices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatientScore {
    pub patient_id: String,
    pub prob_positive: f64,
    pub true_label: u8,
}

/// Average slice probabilities per patient. Probabilities are sorted
/// before summation so the result is exactly order-invariant.
pub fn aggregate_patient(slices: &[SliceScore]) -> Result<Vec<PatientScore>, EvalError> {
    if slices.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut groups: BTreeMap<&str, (Vec<f64>, u8)> = BTreeMap::new();
    for s in slices {
        if !(0.0..=1.0).contains(&s.prob_positive) {
            return Err(EvalError::ProbOutOfRange {
                patient: s.patient_id.clone(),
                prob: s.prob_positive,
            });
        }
        let entry = groups
            .entry(s.patient_id.as_str())
            .or_insert_with(|| (Vec::new(), s.label));
        if entry.1 != s.label {
            return Err(EvalError::InconsistentLabel(s.patient_id.clone()));
        }
        entry.0.push(s.prob_positive);
    }
    Ok(groups
        .into_iter()
        .map(|(patient_id, (mut probs, label))| {
            probs.sort_by(|a, b| a.partial_cmp(b).expect("finite probs"));
            let mean = probs.iter().sum::<f64>() / probs.len() as f64;
            PatientScore {
                patient_id: patient_id.to_string(),
                prob_positive: mean,
                true_label: label,
            }
        })
        .collect())
}

/// Mann-Whitney AUC: the fraction of (positive, negative) pairs ranked
/// correctly, ties counted half. Computed through average ranks.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 {
        return Err(EvalError::SingleClass(0));
    }
    if n_neg == 0 {
        return Err(EvalError::SingleClass(1));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));

    // Average ranks over tie groups (1-based ranks).
    let mut rank = vec![0.0f64; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            rank[idx] = avg;
        }
        i = j + 1;
    }

    let rank_sum_pos: f64 = labels
        .iter()
        .zip(rank.iter())
        .filter(|(&y, _)| y == 1)
        .map(|(_, &r)| r)
        .sum();
    let auc =
        (rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0) / (n_pos as f64 * n_neg as f64);
    Ok(auc)
}

/// (TPR + TNR) / 2 with prediction = [prob >= 0.5].
pub fn balanced_accuracy(probs: &[f64], labels: &[u8]) -> Result<f64, EvalError> {
    if probs.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            scores: probs.len(),
            labels: labels.len(),
        });
    }
    if probs.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let (mut tp, mut fn_, mut tn, mut fp) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &y) in probs.iter().zip(labels.iter()) {
        let pred = p >= 0.5;
        match (y, pred) {
            (1, true) => tp += 1,
            (1, false) => fn_ += 1,
            (0, false) => tn += 1,
            (0, true) => fp += 1,
            _ => {}
        }
    }
    if tp + fn_ == 0 {
        return Err(EvalError::SingleClass(0));
    }
    if tn + fp == 0 {
        return Err(EvalError::SingleClass(1));
    }
    let tpr = tp as f64 / (tp + fn_) as f64;
    let tnr = tn as f64 / (tn + fp) as f64;
    Ok((tpr + tnr) / 2.0)
}

/// Metrics of one validation fold. `None` marks a metric undefined on
/// that fold (single-class validation set), reported rather than faked.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold_index: usize,
    pub auc: Option<f64>,
    pub balanced_accuracy: Option<f64>,
    pub n_val_patients: usize,
}

/// Patient-level metrics for one fold from slice scores.
pub fn fold_metrics_from_slices(
    fold_index: usize,
    slices: &[SliceScore],
) -> Result<FoldMetrics, EvalError> {
    let patients = aggregate_patient(slices)?;
    let scores: Vec<f64> = patients.iter().map(|p| p.prob_positive).collect();
    let labels: Vec<u8> = patients.iter().map(|p| p.true_label).collect();
    let auc = match roc_auc(&scores, &labels) {
        Ok(v) => Some(v),
        Err(EvalError::SingleClass(c)) => {
            eprintln!(
                "warning: fold {fold_index} validation set is single-class ({c}); AUC undefined"
            );
            None
        }
        Err(e) => return Err(e),
    };
    let bal = match balanced_accuracy(&scores, &labels) {
        Ok(v) => Some(v),
        Err(EvalError::SingleClass(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(FoldMetrics {
        fold_index,
        auc,
        balanced_accuracy: bal,
        n_val_patients: patients.len(),
    })
}

/// Cross-fold mean and population standard deviation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProcedureStats {
    pub folds: Vec<FoldMetrics>,
    pub n_folds_expected: usize,
    pub mean_auc: Option<f64>,
    pub std_auc: Option<f64>,
    pub mean_bal_acc: Option<f64>,
    pub std_bal_acc: Option<f64>,
    /// False when folds are missing or any fold metric was undefined.
    pub complete: bool,
}

fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
    Some((mean, var.sqrt()))
}

pub fn aggregate_folds(folds: &[FoldMetrics], expected: usize) -> ProcedureStats {
    let aucs: Vec<f64> = folds.iter().filter_map(|f| f.auc).collect();
    let bals: Vec<f64> = folds.iter().filter_map(|f| f.balanced_accuracy).collect();
    let auc_stats = mean_std(&aucs);
    let bal_stats = mean_std(&bals);
    let complete =
        folds.len() == expected && aucs.len() == folds.len() && bals.len() == folds.len();
    if !complete {
        eprintln!(
            "warning: report incomplete ({} of {expected} folds, {} AUCs, {} balanced accuracies)",
            folds.len(),
            aucs.len(),
            bals.len()
        );
    }
    ProcedureStats {
        folds: folds.to_vec(),
        n_folds_expected: expected,
        mean_auc: auc_stats.map(|s| s.0),
        std_auc: auc_stats.map(|s| s.1),
        mean_bal_acc: bal_stats.map(|s| s.0),
        std_bal_acc: bal_stats.map(|s| s.1),
        complete,
    }
}

/// The two evaluation procedures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Procedure {
    CvLinear,
    Finetune,
}

impl Procedure {
    pub fn as_str(self) -> &'static str {
        match self {
            Procedure::CvLinear => "cv_linear",
            Procedure::Finetune => "finetune",
        }
    }
}

/// One (method, procedure) row of the comparison grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    pub procedure: Procedure,
    #[serde(flatten)]
    pub stats: ProcedureStatsJson,
}

/// Serialized stats in the documented metrics.json shape.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProcedureStatsJson {
    pub folds: Vec<FoldJson>,
    pub mean_auc: Option<f64>,
    pub std_auc: Option<f64>,
    pub mean_bal_acc: Option<f64>,
    pub std_bal_acc: Option<f64>,
    pub complete: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldJson {
    pub fold: usize,
    pub auc: Option<f64>,
    pub bal_acc: Option<f64>,
    pub n_val_patients: usize,
}

impl From<&ProcedureStats> for ProcedureStatsJson {
    fn from(s: &ProcedureStats) -> Self {
        ProcedureStatsJson {
            folds: s
                .folds
                .iter()
                .map(|f| FoldJson {
                    fold: f.fold_index,
                    auc: f.auc,
                    bal_acc: f.balanced_accuracy,
                    n_val_patients: f.n_val_patients,
                })
                .collect(),
            mean_auc: s.mean_auc,
            std_auc: s.std_auc,
            mean_bal_acc: s.mean_bal_acc,
            std_bal_acc: s.std_bal_acc,
            complete: s.complete,
        }
    }
}

pub fn write_metrics_json(
    path: &Path,
    method: &str,
    procedure: Procedure,
    stats: &ProcedureStats,
) -> Result<(), EvalError> {
    let report = MethodReport {
        method: method.to_string(),
        procedure,
        stats: stats.into(),
    };
    std::fs::write(
        path,
        serde_json::to_string_pretty(&report).expect("serialize report"),
    )?;
    Ok(())
}

/// One row of the comparison table (a method, a beta value, a fraction).
#[derive(Debug, Clone)]
pub struct ReportRow {
    pub label: String,
    pub cv_linear: Option<ProcedureStats>,
    pub finetune: Option<ProcedureStats>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

/// Comparison grid: rows are methods / sweep settings, columns AUC and
/// balanced accuracy for both procedures (mean and std).
pub fn write_report_csv(path: &Path, rows: &[ReportRow]) -> Result<(), EvalError> {
    let mut f = std::fs::File::create(path)?;
    writeln!(
        f,
        "setting,auc_cv_linear_mean,auc_cv_linear_std,auc_finetune_mean,auc_finetune_std,\
         bal_acc_cv_linear_mean,bal_acc_cv_linear_std,bal_acc_finetune_mean,bal_acc_finetune_std"
    )?;
    for row in rows {
        let p = row.cv_linear.as_ref();
        let t = row.finetune.as_ref();
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{}",
            row.label,
            fmt_opt(p.and_then(|s| s.mean_auc)),
            fmt_opt(p.and_then(|s| s.std_auc)),
            fmt_opt(t.and_then(|s| s.mean_auc)),
            fmt_opt(t.and_then(|s| s.std_auc)),
            fmt_opt(p.and_then(|s| s.mean_bal_acc)),
            fmt_opt(p.and_then(|s| s.std_bal_acc)),
            fmt_opt(t.and_then(|s| s.mean_bal_acc)),
            fmt_opt(t.and_then(|s| s.std_bal_acc)),
        )?;
    }
    Ok(())
}

/// Ablation curve data: one (x, mean, std) triple per setting.
pub fn write_curve_csv(
    path: &Path,
    x_name: &str,
    points: &[(f64, Option<f64>, Option<f64>)],
) -> Result<(), EvalError> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "{x_name},mean_auc,std_auc")?;
    for (x, mean, std) in points {
        writeln!(f, "{x},{},{}", fmt_opt(*mean), fmt_opt(*std))?;
    }
    Ok(())
}
