//! Sigmoid calibration of decision values, p(s) = 1 / (1 + exp(A s + B)),
//! fitted by Newton's method with backtracking on Platt's regularized
//! targets.

use serde::{Deserialize, Serialize};

use crate::error::{PadError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Platt {
    pub a: f64,
    pub b: f64,
}

impl Default for Platt {
    /// Uncalibrated logistic of the decision value.
    fn default() -> Self {
        Platt { a: -1.0, b: 0.0 }
    }
}

impl Platt {
    /// Attack probability of a decision value.
    pub fn prob(&self, s: f64) -> f64 {
        let f = self.a * s + self.b;
        // evaluated on the side that cannot overflow
        if f >= 0.0 {
            let e = (-f).exp();
            e / (1.0 + e)
        } else {
            1.0 / (1.0 + f.exp())
        }
    }
}

pub const MAX_ITER: usize = 100;
pub const GRAD_TOL: f64 = 1e-10;
const MIN_STEP: f64 = 1e-10;
const SIGMA: f64 = 1e-12;

/// Fits (A, B) on `(decision value, is_attack)` pairs.
pub fn platt_fit(scores: &[(f64, bool)]) -> Result<Platt> {
    let n_pos = scores.iter().filter(|s| s.1).count();
    let n_neg = scores.len() - n_pos;
    if n_pos == 0 {
        return Err(PadError::SingleClass("calibration set has no attack samples".into()));
    }
    if n_neg == 0 {
        return Err(PadError::SingleClass("calibration set has no bonafide samples".into()));
    }
    let hi = (n_pos as f64 + 1.0) / (n_pos as f64 + 2.0);
    let lo = 1.0 / (n_neg as f64 + 2.0);
    let t: Vec<f64> = scores.iter().map(|s| if s.1 { hi } else { lo }).collect();

    let objective = |a: f64, b: f64| -> f64 {
        scores
            .iter()
            .zip(&t)
            .map(|(&(s, _), &ti)| {
                let f = s * a + b;
                if f >= 0.0 {
                    ti * f + (1.0 + (-f).exp()).ln()
                } else {
                    (ti - 1.0) * f + (1.0 + f.exp()).ln()
                }
            })
            .sum()
    };

    let mut a = 0.0;
    let mut b = ((n_neg as f64 + 1.0) / (n_pos as f64 + 1.0)).ln();
    let mut fval = objective(a, b);
    for _ in 0..MAX_ITER {
        let (mut h11, mut h22, mut h21, mut g1, mut g2) = (SIGMA, SIGMA, 0.0, 0.0, 0.0);
        for (&(s, _), &ti) in scores.iter().zip(&t) {
            let f = s * a + b;
            let (p, q) = if f >= 0.0 {
                let e = (-f).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = f.exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let d2 = p * q;
            h11 += s * s * d2;
            h22 += d2;
            h21 += s * d2;
            let d1 = ti - p;
            g1 += s * d1;
            g2 += d1;
        }
        if g1.abs() < GRAD_TOL && g2.abs() < GRAD_TOL {
            return Ok(Platt { a, b });
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        // the predicted decrease is below the rounding error of an n-term
        // sum, so the line search can no longer tell steps apart
        if -gd <= scores.len() as f64 * f64::EPSILON * fval.abs().max(1.0) {
            return Ok(Platt { a, b });
        }
        let mut step = 1.0;
        loop {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = objective(na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                break;
            }
            step /= 2.0;
            if step < MIN_STEP {
                return Err(PadError::CalibrationDiverged { iterations: MAX_ITER });
            }
        }
    }
    Err(PadError::CalibrationDiverged { iterations: MAX_ITER })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_scores_centre_at_half() {
        let scores: Vec<(f64, bool)> = [-2.0, -1.5, -1.0, -0.3, 0.4]
            .iter()
            .flat_map(|&s| [(s, false), (-s, true)])
            .collect();
        let p = platt_fit(&scores).unwrap();
        assert!((p.prob(0.0) - 0.5).abs() <= 0.02);
        assert!(p.a < 0.0);
    }

    #[test]
    fn probabilities_increase_with_decision_value() {
        let scores = vec![(-1.2, false), (-0.4, false), (0.1, false), (-0.2, true), (0.7, true), (1.5, true)];
        let p = platt_fit(&scores).unwrap();
        let mut last = 0.0;
        for k in -50..=50 {
            let v = p.prob(k as f64 * 0.1);
            assert!(v >= last);
            last = v;
        }
    }

    #[test]
    fn two_point_scores_recover_labels() {
        // decision values of the two-point linear problem: -1 and +1
        let p = platt_fit(&[(-1.0, false), (1.0, true)]).unwrap();
        assert!(p.prob(-1.0) < 0.5);
        assert!(p.prob(1.0) > 0.5);
    }

    #[test]
    fn stationary_point_of_regularized_loss() {
        let scores = vec![(-0.9, false), (-0.1, true), (0.3, false), (0.8, true), (1.1, true), (-1.4, false)];
        let p = platt_fit(&scores).unwrap();
        // finite-difference gradient of the loss vanishes at the fit
        let n_pos = 3.0;
        let (hi, lo) = ((n_pos + 1.0) / (n_pos + 2.0), 1.0 / (3.0 + 2.0));
        let loss = |a: f64, b: f64| -> f64 {
            scores
                .iter()
                .map(|&(s, y)| {
                    let t = if y { hi } else { lo };
                    let q = Platt { a, b }.prob(s);
                    -(t * q.ln() + (1.0 - t) * (1.0 - q).ln())
                })
                .sum()
        };
        let h = 1e-6;
        let ga = (loss(p.a + h, p.b) - loss(p.a - h, p.b)) / (2.0 * h);
        let gb = (loss(p.a, p.b + h) - loss(p.a, p.b - h)) / (2.0 * h);
        assert!(ga.abs() < 1e-6 && gb.abs() < 1e-6, "{ga} {gb}");
    }

    #[test]
    fn single_class_rejected() {
        assert!(platt_fit(&[(0.3, true), (0.5, true)]).is_err());
    }

    #[test]
    fn extreme_values_do_not_overflow() {
        let p = Platt { a: -50.0, b: 0.0 };
        assert_eq!(p.prob(100.0), 1.0);
        assert_eq!(p.prob(-100.0), 0.0);
    }
}
