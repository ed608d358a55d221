//! Training objectives: NT-Xent, SupCon, binary cross-entropy on weak
//! labels, and their weighted combination, each with analytic gradients.
//!
//! Stabilized implementations subtract the per-row maximum similarity
//! before exponentiation. `oracle_ntxent` / `oracle_supcon` evaluate the
//! displayed formulas directly in f64 with no such tricks and exist purely
//! as independent references for tests.
//!
//! Conventions: projections come as a 2N x d matrix with rows (2k, 2k+1)
//! holding the two views of source k; similarity is the dot product of
//! unit-normalized rows, divided by the temperature.

use crate::num::Scalar;
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Row norms may drift this far from 1 before the batch is rejected.
pub const NORM_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("contrastive batch must have an even, positive row count, got {0}")]
    OddRowCount(usize),
    #[error("projection row {row} has norm {norm}, expected 1 within {NORM_TOLERANCE}")]
    NotNormalized { row: usize, norm: f64 },
    #[error("labels required for this objective but absent")]
    MissingLabels,
    #[error("label count {labels} does not match row count {rows}")]
    LabelLengthMismatch { labels: usize, rows: usize },
    #[error("labels must be constant across the two views of each source (source {source_index})")]
    InconsistentPairLabels { source_index: usize },
    #[error("logit batch of {logits} rows does not pair with {rows} projection rows")]
    SourceMisalignment { logits: usize, rows: usize },
    #[error("{what} length {got}, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("non-finite loss encountered")]
    NonFinite,
}

/// Which objective a training run optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMethod {
    Weak,
    Simclr,
    Supcon,
    WeakSimclr,
}

impl LossMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            LossMethod::Weak => "weak",
            LossMethod::Simclr => "simclr",
            LossMethod::Supcon => "supcon",
            LossMethod::WeakSimclr => "weak_simclr",
        }
    }

    pub fn from_str_opt(s: &str) -> Option<Self> {
        match s {
            "weak" => Some(LossMethod::Weak),
            "simclr" => Some(LossMethod::Simclr),
            "supcon" => Some(LossMethod::Supcon),
            "weak_simclr" => Some(LossMethod::WeakSimclr),
            _ => None,
        }
    }

    /// Views drawn per source during pretraining.
    pub fn n_views(self) -> usize {
        match self {
            LossMethod::Weak => 1,
            LossMethod::Simclr | LossMethod::Supcon => 2,
            LossMethod::WeakSimclr => 3,
        }
    }
}

/// Temperature / mixing configuration shared by all objectives.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossConfig {
    pub method: LossMethod,
    pub tau: f64,
    pub beta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            method: LossMethod::WeakSimclr,
            tau: 0.1,
            beta: 0.5,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !self.tau.is_finite() || self.tau <= 0.0 {
            return Err(format!("loss.tau must be positive, got {}", self.tau));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(format!("loss.beta must be in [0,1], got {}", self.beta));
        }
        Ok(())
    }
}

/// Scalar loss plus the component breakdown for the combined objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue<F> {
    pub total: F,
    pub weak_part: Option<F>,
    pub simclr_part: Option<F>,
}

impl<F: Scalar> LossValue<F> {
    fn simple(total: F) -> Self {
        LossValue {
            total,
            weak_part: None,
            simclr_part: None,
        }
    }
}

/// 2N projection rows in view-pair order, with optional per-row labels.
#[derive(Debug, Clone)]
pub struct ContrastiveBatch<F> {
    pub projections: Array2<F>,
    pub labels: Option<Vec<u8>>,
}

impl<F: Scalar> ContrastiveBatch<F> {
    pub fn new(projections: Array2<F>, labels: Option<Vec<u8>>) -> Result<Self, LossError> {
        let rows = projections.nrows();
        if rows == 0 || !rows.is_multiple_of(2) {
            return Err(LossError::OddRowCount(rows));
        }
        if let Some(labels) = &labels {
            if labels.len() != rows {
                return Err(LossError::LabelLengthMismatch {
                    labels: labels.len(),
                    rows,
                });
            }
            for source in 0..rows / 2 {
                if labels[2 * source] != labels[2 * source + 1] {
                    return Err(LossError::InconsistentPairLabels { source_index: source });
                }
            }
        }
        Ok(ContrastiveBatch {
            projections,
            labels,
        })
    }
}

fn check_normalized<F: Scalar>(proj: &ArrayView2<F>) -> Result<(), LossError> {
    for (row, r) in proj.rows().into_iter().enumerate() {
        let norm = r.iter().map(|&v| v * v).sum::<F>().sqrt().to_f64_lossy();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(LossError::NotNormalized { row, norm });
        }
    }
    Ok(())
}

/// Paired-view index: views (2k, 2k+1) are positives of each other.
fn positive_of(i: usize) -> usize {
    i ^ 1
}

struct RowSoftmax<F> {
    /// exp((s_ik - m_i)/tau) for k != i, zero at k == i.
    exps: Array2<F>,
    /// Row sums of `exps`.
    denom: Vec<F>,
    /// Per-row max over k != i (the stabilizer).
    max: Vec<F>,
    sim: Array2<F>,
}

/// Shared stabilized softmax pieces over the similarity matrix.
fn row_softmax<F: Scalar>(proj: &ArrayView2<F>, tau: F) -> RowSoftmax<F> {
    let n = proj.nrows();
    let sim = proj.dot(&proj.t());
    let mut exps = Array2::<F>::zeros((n, n));
    let mut denom = vec![F::zero(); n];
    let mut max = vec![F::zero(); n];
    for i in 0..n {
        let mut m = F::neg_infinity();
        for k in 0..n {
            if k != i && sim[[i, k]] > m {
                m = sim[[i, k]];
            }
        }
        max[i] = m;
        let mut d = F::zero();
        for k in 0..n {
            if k != i {
                let e = ((sim[[i, k]] - m) / tau).exp();
                exps[[i, k]] = e;
                d += e;
            }
        }
        denom[i] = d;
    }
    RowSoftmax {
        exps,
        denom,
        max,
        sim,
    }
}

/// Loss-only NT-Xent over a paired batch of unit rows.
pub fn ntxent<F: Scalar>(batch: &ContrastiveBatch<F>, tau: F) -> Result<LossValue<F>, LossError> {
    ntxent_impl(&batch.projections.view(), tau, false).map(|(v, _)| v)
}

/// NT-Xent with the gradient w.r.t. the projection rows.
pub fn ntxent_with_grad<F: Scalar>(
    batch: &ContrastiveBatch<F>,
    tau: F,
) -> Result<(LossValue<F>, Array2<F>), LossError> {
    let (v, g) = ntxent_impl(&batch.projections.view(), tau, true)?;
    Ok((v, g.expect("gradient requested")))
}

fn ntxent_impl<F: Scalar>(
    proj: &ArrayView2<F>,
    tau: F,
    want_grad: bool,
) -> Result<(LossValue<F>, Option<Array2<F>>), LossError> {
    let n = proj.nrows();
    if n == 0 || !n.is_multiple_of(2) {
        return Err(LossError::OddRowCount(n));
    }
    check_normalized(proj)?;
    let sm = row_softmax(proj, tau);
    let inv_n = F::one() / F::from_f64(n as f64);

    let mut total = F::zero();
    for i in 0..n {
        let j = positive_of(i);
        // -log( exp(s_ij/tau) / D_i ) with the stabilizer cancelling.
        let li = sm.denom[i].ln() - (sm.sim[[i, j]] - sm.max[i]) / tau;
        total += li;
    }
    total *= inv_n;
    if !total.is_finite() {
        return Err(LossError::NonFinite);
    }

    let grad = if want_grad {
        // dL/dS, treating S entries (i != k) as independent, then
        // dL/dZ = (G + G^T) Z since S = Z Z^T.
        let mut g = Array2::<F>::zeros((n, n));
        for i in 0..n {
            let j = positive_of(i);
            for k in 0..n {
                if k == i {
                    continue;
                }
                let p = sm.exps[[i, k]] / sm.denom[i];
                let hit = if k == j { F::one() } else { F::zero() };
                g[[i, k]] = inv_n / tau * (p - hit);
            }
        }
        let gsym = &g + &g.t();
        Some(gsym.dot(proj))
    } else {
        None
    };
    Ok((LossValue::simple(total), grad))
}

/// Loss-only SupCon; labels must be present on the batch.
pub fn supcon<F: Scalar>(batch: &ContrastiveBatch<F>, tau: F) -> Result<LossValue<F>, LossError> {
    supcon_impl(batch, tau, false).map(|(v, _)| v)
}

/// SupCon with the gradient w.r.t. the projection rows.
pub fn supcon_with_grad<F: Scalar>(
    batch: &ContrastiveBatch<F>,
    tau: F,
) -> Result<(LossValue<F>, Array2<F>), LossError> {
    let (v, g) = supcon_impl(batch, tau, true)?;
    Ok((v, g.expect("gradient requested")))
}

fn supcon_impl<F: Scalar>(
    batch: &ContrastiveBatch<F>,
    tau: F,
    want_grad: bool,
) -> Result<(LossValue<F>, Option<Array2<F>>), LossError> {
    let proj = batch.projections.view();
    let labels = batch.labels.as_ref().ok_or(LossError::MissingLabels)?;
    let n = proj.nrows();
    if n == 0 || !n.is_multiple_of(2) {
        return Err(LossError::OddRowCount(n));
    }
    check_normalized(&proj)?;
    let sm = row_softmax(&proj, tau);

    // P(i): same-label rows excluding i. Rows with empty P(i) contribute 0,
    // which weighted sampling can produce mid-epoch on single-class batches.
    // Averaged over the 2N rows (same normalization as NT-Xent) so the two
    // objectives coincide when every source is its own class.
    let inv_n = F::one() / F::from_f64(n as f64);
    let mut total = F::zero();
    let mut positives: Vec<Vec<usize>> = Vec::with_capacity(n);
    for i in 0..n {
        let p: Vec<usize> = (0..n)
            .filter(|&k| k != i && labels[k] == labels[i])
            .collect();
        if !p.is_empty() {
            let inv_p = F::one() / F::from_f64(p.len() as f64);
            let mut acc = F::zero();
            for &j in &p {
                acc = acc + (sm.sim[[i, j]] - sm.max[i]) / tau - sm.denom[i].ln();
            }
            total -= acc * inv_p;
        }
        positives.push(p);
    }
    total *= inv_n;
    if !total.is_finite() {
        return Err(LossError::NonFinite);
    }

    let grad = if want_grad {
        let mut g = Array2::<F>::zeros((n, n));
        for i in 0..n {
            if positives[i].is_empty() {
                continue;
            }
            let inv_p = F::one() / F::from_f64(positives[i].len() as f64);
            for k in 0..n {
                if k == i {
                    continue;
                }
                let p = sm.exps[[i, k]] / sm.denom[i];
                let member = if labels[k] == labels[i] {
                    inv_p
                } else {
                    F::zero()
                };
                g[[i, k]] = inv_n * (p - member) / tau;
            }
        }
        let gsym = &g + &g.t();
        Some(gsym.dot(&proj))
    } else {
        None
    };
    Ok((LossValue::simple(total), grad))
}

/// Mean softmax cross-entropy of 2-way logits against binary labels.
pub fn weak_bce<F: Scalar>(logits: &Array2<F>, labels: &[u8]) -> Result<LossValue<F>, LossError> {
    weak_bce_impl(logits, labels, false).map(|(v, _)| v)
}

/// Cross-entropy with the gradient w.r.t. the logits.
pub fn weak_bce_with_grad<F: Scalar>(
    logits: &Array2<F>,
    labels: &[u8],
) -> Result<(LossValue<F>, Array2<F>), LossError> {
    let (v, g) = weak_bce_impl(logits, labels, true)?;
    Ok((v, g.expect("gradient requested")))
}

fn weak_bce_impl<F: Scalar>(
    logits: &Array2<F>,
    labels: &[u8],
    want_grad: bool,
) -> Result<(LossValue<F>, Option<Array2<F>>), LossError> {
    let b = logits.nrows();
    if labels.len() != b {
        return Err(LossError::LengthMismatch {
            what: "labels",
            got: labels.len(),
            expected: b,
        });
    }
    let probs = softmax_rows(logits);
    let inv_b = F::one() / F::from_f64(b as f64);
    let mut total = F::zero();
    for (i, &y) in labels.iter().enumerate() {
        let m = logits.row(i).iter().copied().fold(F::neg_infinity(), F::max);
        let lse = logits
            .row(i)
            .iter()
            .map(|&v| (v - m).exp())
            .sum::<F>()
            .ln();
        // -log softmax[y], computed in log space.
        total = total + lse - (logits[[i, y as usize]] - m);
    }
    total *= inv_b;
    if !total.is_finite() {
        return Err(LossError::NonFinite);
    }
    let grad = want_grad.then(|| {
        let mut g = probs;
        for (i, &y) in labels.iter().enumerate() {
            g[[i, y as usize]] -= F::one();
        }
        g.mapv_inplace(|v| v * inv_b);
        g
    });
    Ok((LossValue::simple(total), grad))
}

/// Row-wise stabilized softmax.
pub fn softmax_rows<F: Scalar>(logits: &Array2<F>) -> Array2<F> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let m = row.iter().copied().fold(F::neg_infinity(), F::max);
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

/// Combined objective: `beta * weak_bce + (1 - beta) * ntxent`.
///
/// Projections come from views 1-2 (2N rows), logits from view 3 (N rows)
/// of the same sources, in the same source order.
pub fn weak_simclr<F: Scalar>(
    batch: &ContrastiveBatch<F>,
    logits: &Array2<F>,
    labels: &[u8],
    tau: F,
    beta: F,
) -> Result<LossValue<F>, LossError> {
    weak_simclr_impl(batch, logits, labels, tau, beta, false).map(|(v, _)| v)
}

/// Combined objective with gradients (w.r.t. projections, w.r.t. logits).
#[allow(clippy::type_complexity)]
pub fn weak_simclr_with_grad<F: Scalar>(
    batch: &ContrastiveBatch<F>,
    logits: &Array2<F>,
    labels: &[u8],
    tau: F,
    beta: F,
) -> Result<(LossValue<F>, Array2<F>, Array2<F>), LossError> {
    let (v, g) = weak_simclr_impl(batch, logits, labels, tau, beta, true)?;
    let (gp, gl) = g.expect("gradient requested");
    Ok((v, gp, gl))
}

#[allow(clippy::type_complexity)]
fn weak_simclr_impl<F: Scalar>(
    batch: &ContrastiveBatch<F>,
    logits: &Array2<F>,
    labels: &[u8],
    tau: F,
    beta: F,
    want_grad: bool,
) -> Result<(LossValue<F>, Option<(Array2<F>, Array2<F>)>), LossError> {
    if batch.projections.nrows() != 2 * logits.nrows() {
        return Err(LossError::SourceMisalignment {
            logits: logits.nrows(),
            rows: batch.projections.nrows(),
        });
    }
    let one = F::one();
    let (weak_v, weak_g) = weak_bce_impl(logits, labels, want_grad)?;
    let (simclr_v, simclr_g) = ntxent_impl(&batch.projections.view(), tau, want_grad)?;
    let total = beta * weak_v.total + (one - beta) * simclr_v.total;
    let value = LossValue {
        total,
        weak_part: Some(weak_v.total),
        simclr_part: Some(simclr_v.total),
    };
    let grads = want_grad.then(|| {
        let gp = simclr_g.expect("simclr grad").mapv(|v| v * (one - beta));
        let gl = weak_g.expect("weak grad").mapv(|v| v * beta);
        (gp, gl)
    });
    Ok((value, grads))
}

// ---------------------------------------------------------------------------
// Reference oracles: naive double loops, f64, no stabilization.
// ---------------------------------------------------------------------------

/// NT-Xent exactly as displayed, by direct summation.
pub fn oracle_ntxent(proj: &Array2<f64>, tau: f64) -> f64 {
    let n = proj.nrows();
    let mut total = 0.0;
    for i in 0..n {
        let j = positive_of(i);
        let num = (dot(proj, i, j) / tau).exp();
        let mut den = 0.0;
        for k in 0..n {
            if k != i {
                den += (dot(proj, i, k) / tau).exp();
            }
        }
        total += -(num / den).ln();
    }
    total / n as f64
}

/// SupCon by direct summation (normalizer outside the log, averaged over
/// the 2N rows to share NT-Xent's scale).
pub fn oracle_supcon(proj: &Array2<f64>, labels: &[u8], tau: f64) -> f64 {
    let n = proj.nrows();
    let mut total = 0.0;
    for i in 0..n {
        let positives: Vec<usize> = (0..n)
            .filter(|&k| k != i && labels[k] == labels[i])
            .collect();
        if positives.is_empty() {
            continue;
        }
        let mut den = 0.0;
        for k in 0..n {
            if k != i {
                den += (dot(proj, i, k) / tau).exp();
            }
        }
        let mut acc = 0.0;
        for &j in &positives {
            acc += ((dot(proj, i, j) / tau).exp() / den).ln();
        }
        total += -acc / positives.len() as f64;
    }
    total / n as f64
}

fn dot(m: &Array2<f64>, i: usize, j: usize) -> f64 {
    m.row(i).iter().zip(m.row(j).iter()).map(|(a, b)| a * b).sum()
}

/// Central-difference gradient estimate of a scalar function.
pub fn finite_difference_grad<Func>(mut f: Func, params: &[f64], eps: f64) -> Vec<f64>
where
    Func: FnMut(&[f64]) -> f64,
{
    let mut work = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = work[i];
        work[i] = orig + eps;
        let plus = f(&work);
        work[i] = orig - eps;
        let minus = f(&work);
        work[i] = orig;
        grad.push((plus - minus) / (2.0 * eps));
    }
    grad
}
