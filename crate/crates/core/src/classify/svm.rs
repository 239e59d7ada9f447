//! Soft-margin SVM trained by SMO with second-order working set selection.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{PadError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Kernel {
    Linear,
    Rbf { gamma: f64 },
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Linear => dot(a, b),
            Kernel::Rbf { gamma } => (-gamma * sq_dist(a, b)).exp(),
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Linear,
    Rbf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ClassWeight {
    #[default]
    None,
    /// Each class weighted by n / (2 n_class).
    Balanced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub kernel: KernelKind,
    /// `None` selects 1 / (dim * variance of all training values).
    #[serde(default)]
    pub gamma: Option<f64>,
    pub c: f64,
    /// Stop when the maximal KKT violation falls to this value.
    pub tol: f64,
    pub max_iter: usize,
    #[serde(default)]
    pub class_weight: ClassWeight,
    /// Kernel row cache budget.
    pub cache_mb: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams {
            kernel: KernelKind::Rbf,
            gamma: None,
            c: 1.0,
            tol: 1e-3,
            max_iter: 1_000_000,
            class_weight: ClassWeight::None,
            cache_mb: 256,
        }
    }
}

impl SvmParams {
    pub fn linear(c: f64) -> Self {
        SvmParams {
            kernel: KernelKind::Linear,
            c,
            ..Default::default()
        }
    }

    pub fn rbf(gamma: Option<f64>, c: f64) -> Self {
        SvmParams {
            kernel: KernelKind::Rbf,
            gamma,
            c,
            ..Default::default()
        }
    }
}

/// 1 / (dim * variance over every component of every row); 1 when the data
/// are constant.
pub fn scale_gamma(x: &[Vec<f64>]) -> f64 {
    let dim = x.first().map_or(0, Vec::len);
    let n = (x.len() * dim) as f64;
    if n == 0.0 {
        return 1.0;
    }
    let mean = x.iter().flatten().sum::<f64>() / n;
    let var = x.iter().flatten().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if var > 0.0 {
        1.0 / (dim as f64 * var)
    } else {
        1.0
    }
}

/// Trained dual solution: f(x) = sum_i coef_i K(sv_i, x) + bias, positive
/// for the +1 (attack) class.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmSolution {
    pub kernel: Kernel,
    pub support_vectors: Vec<Vec<f64>>,
    /// alpha_i * y_i
    pub dual_coefs: Vec<f64>,
    pub bias: f64,
    /// Per-class weights (bonafide, attack) applied to C.
    pub class_weights: [f64; 2],
    pub iterations: usize,
    /// Maximal KKT violation at exit.
    pub kkt_gap: f64,
    pub converged: bool,
}

impl SvmSolution {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.support_vectors
            .iter()
            .zip(&self.dual_coefs)
            .map(|(sv, c)| c * self.kernel.eval(sv, x))
            .sum::<f64>()
            + self.bias
    }
}

struct KernelRows<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    kernel: Kernel,
    diag: Vec<f64>,
    rows: HashMap<usize, Vec<f64>>,
    order: VecDeque<usize>,
    capacity: usize,
}

impl<'a> KernelRows<'a> {
    fn new(x: &'a [Vec<f64>], y: &'a [f64], kernel: Kernel, cache_mb: usize) -> Self {
        let n = x.len();
        let capacity = ((cache_mb << 20) / (8 * n.max(1))).max(2);
        KernelRows {
            x,
            y,
            kernel,
            diag: x.iter().map(|v| kernel.eval(v, v)).collect(),
            rows: HashMap::new(),
            order: VecDeque::new(),
            capacity,
        }
    }

    /// Row i of Q (Q_ij = y_i y_j K_ij).
    fn row(&mut self, i: usize) -> &[f64] {
        if self.rows.contains_key(&i) {
            if let Some(p) = self.order.iter().position(|&r| r == i) {
                self.order.remove(p);
            }
        } else {
            if self.rows.len() >= self.capacity {
                if let Some(old) = self.order.pop_front() {
                    self.rows.remove(&old);
                }
            }
            let xi = &self.x[i];
            let yi = self.y[i];
            let row = self
                .x
                .iter()
                .zip(self.y)
                .map(|(xj, &yj)| yi * yj * self.kernel.eval(xi, xj))
                .collect();
            self.rows.insert(i, row);
        }
        self.order.push_back(i);
        &self.rows[&i]
    }
}

const TAU: f64 = 1e-12;

/// Trains on rows `x` with labels `y` in {-1, +1}.
pub fn svm_train(x: &[Vec<f64>], y: &[f64], params: &SvmParams) -> Result<SvmSolution> {
    let n = x.len();
    if n != y.len() {
        return Err(PadError::Dimension {
            what: "labels".into(),
            expected: n.to_string(),
            found: y.len().to_string(),
        });
    }
    let dim = x.first().map_or(0, Vec::len);
    if let Some(bad) = x.iter().find(|r| r.len() != dim) {
        return Err(PadError::Dimension {
            what: "training vector".into(),
            expected: dim.to_string(),
            found: bad.len().to_string(),
        });
    }
    if y.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(PadError::InvalidInput("labels must be -1 or +1".into()));
    }
    let n_pos = y.iter().filter(|&&v| v > 0.0).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        let only = if n_pos == 0 { "bonafide only" } else { "attack only" };
        return Err(PadError::SingleClass(only.into()));
    }
    if !(params.c > 0.0) {
        return Err(PadError::Config(format!("C must be positive, got {}", params.c)));
    }
    let kernel = match params.kernel {
        KernelKind::Linear => Kernel::Linear,
        KernelKind::Rbf => Kernel::Rbf {
            gamma: params.gamma.unwrap_or_else(|| scale_gamma(x)),
        },
    };
    let class_weights = match params.class_weight {
        ClassWeight::None => [1.0, 1.0],
        ClassWeight::Balanced => [n as f64 / (2.0 * n_neg as f64), n as f64 / (2.0 * n_pos as f64)],
    };
    let cap: Vec<f64> = y
        .iter()
        .map(|&v| params.c * class_weights[(v > 0.0) as usize])
        .collect();

    let mut q = KernelRows::new(x, y, kernel, params.cache_mb);
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let upper = |a: f64, c: f64| a >= c;
    let lower = |a: f64| a <= 0.0;

    let mut iterations = 0;
    let mut gap;
    let converged = loop {
        // working set selection (Fan, Chen and Lin 2005)
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = usize::MAX;
        for t in 0..n {
            let in_up = if y[t] > 0.0 { !upper(alpha[t], cap[t]) } else { !lower(alpha[t]) };
            if in_up && (-y[t] * grad[t] > gmax || (i_sel == usize::MAX && -y[t] * grad[t] >= gmax)) {
                gmax = -y[t] * grad[t];
                i_sel = t;
            }
        }
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j_sel = usize::MAX;
        let mut obj_min = f64::INFINITY;
        if i_sel != usize::MAX {
            let qi: Vec<f64> = q.row(i_sel).to_vec();
            let qii = q.diag[i_sel];
            for t in 0..n {
                let in_low = if y[t] > 0.0 { !lower(alpha[t]) } else { !upper(alpha[t], cap[t]) };
                if !in_low {
                    continue;
                }
                let yg = y[t] * grad[t];
                if yg > gmax2 {
                    gmax2 = yg;
                }
                let b = gmax + yg;
                if b > 0.0 {
                    let a = qii + q.diag[t] - 2.0 * y[i_sel] * qi[t];
                    let a = if a > 0.0 { a } else { TAU };
                    let obj = -(b * b) / a;
                    if obj < obj_min {
                        obj_min = obj;
                        j_sel = t;
                    }
                }
            }
        }
        gap = gmax + gmax2;
        if i_sel == usize::MAX || j_sel == usize::MAX || gap <= params.tol {
            if !gap.is_finite() {
                gap = 0.0;
            }
            break true;
        }
        if iterations >= params.max_iter {
            log::warn!(
                "SMO stopped at the iteration cap ({}) with KKT violation {gap:.3e}",
                params.max_iter
            );
            break false;
        }
        iterations += 1;

        let (i, j) = (i_sel, j_sel);
        let qi: Vec<f64> = q.row(i).to_vec();
        let qj: Vec<f64> = q.row(j).to_vec();
        let (ci, cj) = (cap[i], cap[j]);
        let (old_ai, old_aj) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let mut quad = q.diag[i] + q.diag[j] + 2.0 * qi[j];
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > ci - cj {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = ci - diff;
                }
            } else if alpha[j] > cj {
                alpha[j] = cj;
                alpha[i] = cj + diff;
            }
        } else {
            let mut quad = q.diag[i] + q.diag[j] - 2.0 * qi[j];
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > ci {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = sum - ci;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > cj {
                if alpha[j] > cj {
                    alpha[j] = cj;
                    alpha[i] = sum - cj;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (dai, daj) = (alpha[i] - old_ai, alpha[j] - old_aj);
        for t in 0..n {
            grad[t] += qi[t] * dai + qj[t] * daj;
        }
    };

    let bias = -rho(&alpha, &grad, y, &cap);
    let mut support_vectors = Vec::new();
    let mut dual_coefs = Vec::new();
    for t in 0..n {
        if alpha[t] > 0.0 {
            support_vectors.push(x[t].clone());
            dual_coefs.push(alpha[t] * y[t]);
        }
    }
    Ok(SvmSolution {
        kernel,
        support_vectors,
        dual_coefs,
        bias,
        class_weights,
        iterations,
        kkt_gap: gap,
        converged,
    })
}

/// Offset from the free support vectors, or the middle of the feasible
/// interval when every multiplier sits at a bound.
pub fn rho(alpha: &[f64], grad: &[f64], y: &[f64], cap: &[f64]) -> f64 {
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut sum = 0.0;
    let mut n_free = 0usize;
    for t in 0..alpha.len() {
        let yg = y[t] * grad[t];
        if alpha[t] >= cap[t] {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum += yg;
        }
    }
    if n_free > 0 {
        sum / n_free as f64
    } else {
        (ub + lb) / 2.0
    }
}
