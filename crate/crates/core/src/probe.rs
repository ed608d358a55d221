//! L2-regularized logistic regression on frozen representations, fit by
//! damped Newton iterations to a hard gradient-norm tolerance.
//!
//! Objective: `(l2/2) ||w||^2 + C * sum_i logloss_i` with `C = 1`; the
//! intercept is not penalized.

use ndarray::{Array1, Array2};
use thiserror::Error;

pub const GRAD_TOLERANCE: f64 = 1e-6;
pub const MAX_ITERATIONS: usize = 100;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("empty design matrix")]
    EmptyInput,
    #[error("label count {labels} does not match {rows} rows")]
    LengthMismatch { labels: usize, rows: usize },
    #[error("newton solve failed: hessian not positive definite")]
    NotPositiveDefinite,
    #[error("no convergence after {iterations} iterations, gradient norm {grad_norm:.3e}")]
    NonConvergence { iterations: usize, grad_norm: f64 },
}

#[derive(Debug, Clone)]
pub struct LogisticProbe {
    pub weights: Array1<f64>,
    pub bias: f64,
}

impl LogisticProbe {
    pub fn predict_proba(&self, x: &Array2<f64>) -> Vec<f64> {
        x.rows()
            .into_iter()
            .map(|r| {
                let z = r
                    .iter()
                    .zip(self.weights.iter())
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    + self.bias;
                sigmoid(z)
            })
            .collect()
    }
}

#[derive(Debug)]
pub struct ProbeFit {
    pub model: LogisticProbe,
    pub iterations: usize,
    pub grad_norm: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// In-place Cholesky solve of `a x = b` for symmetric positive-definite a.
fn cholesky_solve(mut a: Array2<f64>, mut b: Array1<f64>) -> Option<Array1<f64>> {
    let n = a.nrows();
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= a[[j, k]] * a[[j, k]];
        }
        if d <= 0.0 {
            return None;
        }
        let d = d.sqrt();
        a[[j, j]] = d;
        for i in j + 1..n {
            let mut v = a[[i, j]];
            for k in 0..j {
                v -= a[[i, k]] * a[[j, k]];
            }
            a[[i, j]] = v / d;
        }
    }
    // Forward then back substitution.
    for i in 0..n {
        let mut v = b[i];
        for k in 0..i {
            v -= a[[i, k]] * b[k];
        }
        b[i] = v / a[[i, i]];
    }
    for i in (0..n).rev() {
        let mut v = b[i];
        for k in i + 1..n {
            v -= a[[k, i]] * b[k];
        }
        b[i] = v / a[[i, i]];
    }
    Some(b)
}

/// Fit the probe with Newton iterations until the full-objective gradient
/// norm drops below `GRAD_TOLERANCE`.
#[allow(clippy::needless_range_loop)]
pub fn fit_logistic(x: &Array2<f64>, y: &[u8], l2: f64) -> Result<ProbeFit, ProbeError> {
    let (n, d) = x.dim();
    if n == 0 || d == 0 {
        return Err(ProbeError::EmptyInput);
    }
    if y.len() != n {
        return Err(ProbeError::LengthMismatch {
            labels: y.len(),
            rows: n,
        });
    }

    let mut w = Array1::<f64>::zeros(d);
    let mut b = 0.0f64;

    let gradient = |w: &Array1<f64>, b: f64| -> (Array1<f64>, f64, Vec<f64>) {
        let mut probs = Vec::with_capacity(n);
        let mut gw = w.mapv(|v| v * l2);
        let mut gb = 0.0;
        for i in 0..n {
            let z = x
                .row(i)
                .iter()
                .zip(w.iter())
                .map(|(a, c)| a * c)
                .sum::<f64>()
                + b;
            let p = sigmoid(z);
            probs.push(p);
            let r = p - f64::from(y[i]);
            gb += r;
            gw.scaled_add(r, &x.row(i));
        }
        (gw, gb, probs)
    };

    let norm = |gw: &Array1<f64>, gb: f64| -> f64 {
        (gw.iter().map(|v| v * v).sum::<f64>() + gb * gb).sqrt()
    };

    let (mut gw, mut gb, mut probs) = gradient(&w, b);
    let mut gnorm = norm(&gw, gb);
    for iteration in 0..MAX_ITERATIONS {
        if gnorm < GRAD_TOLERANCE {
            return Ok(ProbeFit {
                model: LogisticProbe { weights: w, bias: b },
                iterations: iteration,
                grad_norm: gnorm,
            });
        }

        // Hessian over (w, b) with a small floor on p(1-p).
        let m = d + 1;
        let mut h = Array2::<f64>::zeros((m, m));
        for i in 0..n {
            let s = (probs[i] * (1.0 - probs[i])).max(1e-12);
            let xi = x.row(i);
            for a in 0..d {
                let sa = s * xi[a];
                for c in a..d {
                    h[[a, c]] += sa * xi[c];
                }
                h[[a, d]] += sa;
            }
            h[[d, d]] += s;
        }
        for a in 0..d {
            h[[a, a]] += l2;
            for c in a + 1..d {
                h[[c, a]] = h[[a, c]];
            }
            h[[d, a]] = h[[a, d]];
        }

        let mut rhs = Array1::<f64>::zeros(m);
        rhs.slice_mut(ndarray::s![0..d]).assign(&gw);
        rhs[d] = gb;
        let delta = cholesky_solve(h, rhs).ok_or(ProbeError::NotPositiveDefinite)?;

        // Step halving: accept the first step that reduces the gradient norm.
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let wt = &w - &(delta.slice(ndarray::s![0..d]).to_owned() * step);
            let bt = b - step * delta[d];
            let (gw_t, gb_t, probs_t) = gradient(&wt, bt);
            let gn_t = norm(&gw_t, gb_t);
            if gn_t < gnorm {
                w = wt;
                b = bt;
                gw = gw_t;
                gb = gb_t;
                probs = probs_t;
                gnorm = gn_t;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return Err(ProbeError::NonConvergence {
                iterations: iteration + 1,
                grad_norm: gnorm,
            });
        }
    }
    if gnorm < GRAD_TOLERANCE {
        return Ok(ProbeFit {
            model: LogisticProbe { weights: w, bias: b },
            iterations: MAX_ITERATIONS,
            grad_norm: gnorm,
        });
    }
    Err(ProbeError::NonConvergence {
        iterations: MAX_ITERATIONS,
        grad_norm: gnorm,
    })
}
