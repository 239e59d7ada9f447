//! Error rates and decision thresholds.

use serde::{Deserialize, Serialize};

use crate::error::{PadError, Result};
use crate::model::Label;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub attacks_total: u64,
    /// Attacks classified as bona fide.
    pub attacks_accepted: u64,
    pub bonafide_total: u64,
    /// Bona fide samples classified as attacks.
    pub bonafide_rejected: u64,
}

impl ConfusionCounts {
    pub fn add(&mut self, truth: Label, predicted: Label) {
        match truth {
            Label::Attack => {
                self.attacks_total += 1;
                if predicted == Label::Bonafide {
                    self.attacks_accepted += 1;
                }
            }
            Label::Bonafide => {
                self.bonafide_total += 1;
                if predicted == Label::Attack {
                    self.bonafide_rejected += 1;
                }
            }
        }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (Label, Label)>) -> Self {
        let mut c = ConfusionCounts::default();
        for (t, p) in pairs {
            c.add(t, p);
        }
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub apcer: f64,
    pub bpcer: f64,
    pub hter: f64,
}

pub fn compute_rates(c: &ConfusionCounts) -> Result<Rates> {
    if c.attacks_total == 0 {
        return Err(PadError::EmptyClass("attack"));
    }
    if c.bonafide_total == 0 {
        return Err(PadError::EmptyClass("bonafide"));
    }
    if c.attacks_accepted > c.attacks_total || c.bonafide_rejected > c.bonafide_total {
        return Err(PadError::InvalidInput(format!("inconsistent confusion counts {c:?}")));
    }
    let apcer = c.attacks_accepted as f64 / c.attacks_total as f64;
    let bpcer = c.bonafide_rejected as f64 / c.bonafide_total as f64;
    Ok(Rates {
        apcer,
        bpcer,
        hter: (apcer + bpcer) / 2.0,
    })
}

/// Attack iff the score exceeds the threshold.
pub fn decide(score: f64, threshold: f64) -> Label {
    if score > threshold {
        Label::Attack
    } else {
        Label::Bonafide
    }
}

/// Midpoints between consecutive distinct sorted scores. Each midpoint lies
/// strictly below the upper score so that `score > threshold` splits the
/// pair.
pub fn threshold_candidates(scores: &[f64]) -> Vec<f64> {
    let mut s: Vec<f64> = scores.to_vec();
    s.sort_by(f64::total_cmp);
    s.dedup();
    s.windows(2)
        .map(|w| {
            let m = w[0] + (w[1] - w[0]) / 2.0;
            if m >= w[1] {
                w[0]
            } else {
                m
            }
        })
        .collect()
}

/// Counts at one threshold, kept as integers so that comparisons between
/// candidates are exact.
#[derive(Debug, Clone, Copy)]
struct Sweep {
    threshold: f64,
    accepted: u64,
    rejected: u64,
}

fn sweep(scores: &[(f64, Label)]) -> (Vec<Sweep>, u64, u64) {
    let mut sorted: Vec<(f64, Label)> = scores.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n_att = sorted.iter().filter(|s| s.1 == Label::Attack).count() as u64;
    let n_bf = sorted.len() as u64 - n_att;
    let mut out = Vec::new();
    let (mut att_below, mut bf_below) = (0u64, 0u64);
    let mut i = 0;
    while i < sorted.len() {
        let v = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == v {
            match sorted[i].1 {
                Label::Attack => att_below += 1,
                Label::Bonafide => bf_below += 1,
            }
            i += 1;
        }
        if i < sorted.len() {
            let next = sorted[i].0;
            let m = v + (next - v) / 2.0;
            out.push(Sweep {
                threshold: if m >= next { v } else { m },
                accepted: att_below,
                rejected: n_bf - bf_below,
            });
        }
    }
    (out, n_att, n_bf)
}

/// Threshold minimizing |APCER - BPCER| over the midpoint candidates; ties
/// go to the smaller threshold. With a single distinct score that score is
/// returned.
pub fn select_threshold_eer(scores: &[(f64, Label)]) -> Result<f64> {
    if scores.iter().any(|s| !s.0.is_finite()) {
        return Err(PadError::InvalidInput("non-finite score".into()));
    }
    let (cands, n_att, n_bf) = sweep(scores);
    if n_att == 0 {
        return Err(PadError::EmptyClass("attack"));
    }
    if n_bf == 0 {
        return Err(PadError::EmptyClass("bonafide"));
    }
    // |acc/n_att - rej/n_bf| scaled by n_att * n_bf
    let imbalance = |c: &Sweep| (c.accepted as i128 * n_bf as i128 - c.rejected as i128 * n_att as i128).abs();
    let best = cands.iter().fold(None::<&Sweep>, |best, c| match best {
        Some(b) if imbalance(b) <= imbalance(c) => Some(b),
        _ => Some(c),
    });
    Ok(best.map_or(scores[0].0, |b| b.threshold))
}

pub fn counts_at(scores: &[(f64, Label)], threshold: f64) -> ConfusionCounts {
    ConfusionCounts::from_pairs(scores.iter().map(|&(s, l)| (l, decide(s, threshold))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Label::{Attack as A, Bonafide as B};

    #[test]
    fn rates_examples() {
        let perfect = ConfusionCounts {
            attacks_total: 5,
            attacks_accepted: 0,
            bonafide_total: 3,
            bonafide_rejected: 0,
        };
        let r = compute_rates(&perfect).unwrap();
        assert_eq!((r.apcer, r.bpcer, r.hter), (0.0, 0.0, 0.0));
        let r = compute_rates(&ConfusionCounts {
            attacks_total: 10,
            attacks_accepted: 2,
            bonafide_total: 10,
            bonafide_rejected: 4,
        })
        .unwrap();
        assert_eq!((r.apcer, r.bpcer), (0.2, 0.4));
        assert!((r.hter - 0.3).abs() < 1e-15);
    }

    #[test]
    fn empty_class_is_named() {
        let e = compute_rates(&ConfusionCounts {
            attacks_total: 0,
            attacks_accepted: 0,
            bonafide_total: 3,
            bonafide_rejected: 1,
        })
        .unwrap_err();
        assert!(e.to_string().contains("attack"));
        let e = compute_rates(&ConfusionCounts {
            attacks_total: 2,
            ..Default::default()
        })
        .unwrap_err();
        assert!(e.to_string().contains("bonafide"));
    }

    #[test]
    fn separable_scores_give_middle_threshold() {
        let s = [(0.1, B), (0.2, B), (0.8, A), (0.9, A)];
        assert_eq!(select_threshold_eer(&s).unwrap(), 0.5);
    }

    #[test]
    fn interleaved_symmetric_scores_balance_exactly() {
        let s = [(0.1, B), (0.2, A), (0.3, B), (0.4, A), (0.5, B), (0.6, A), (0.7, B), (0.8, A)];
        let t = select_threshold_eer(&s).unwrap();
        let r = compute_rates(&counts_at(&s, t)).unwrap();
        assert_eq!(r.apcer, r.bpcer);
        // brute force over every candidate agrees on the balance
        let best = threshold_candidates(&s.map(|x| x.0))
            .into_iter()
            .map(|c| {
                let r = compute_rates(&counts_at(&s, c)).unwrap();
                (r.apcer - r.bpcer).abs()
            })
            .fold(f64::INFINITY, f64::min);
        assert_eq!(best, 0.0);
    }

    #[test]
    fn shared_score_tie_is_stable() {
        let s = [(0.2, B), (0.5, B), (0.5, A), (0.9, A)];
        let t = select_threshold_eer(&s).unwrap();
        for _ in 0..5 {
            assert_eq!(select_threshold_eer(&s).unwrap().to_bits(), t.to_bits());
        }
        // candidates 0.35 and 0.7 both leave one error on one side
        assert_eq!(t, 0.35);
    }

    #[test]
    fn single_class_dev_rejected() {
        assert!(select_threshold_eer(&[(0.3, A), (0.4, A)]).is_err());
    }

    #[test]
    fn adjacent_floats_still_split() {
        let a = 0.5f64;
        let b = f64::from_bits(a.to_bits() + 1);
        let t = threshold_candidates(&[a, b])[0];
        assert_eq!(decide(a, t), B);
        assert_eq!(decide(b, t), A);
    }

    #[test]
    fn eer_threshold_can_have_higher_hter_than_neighbours() {
        // the balanced threshold is not always the HTER minimum
        let s = [(0.1, B), (0.2, A), (0.3, B), (0.4, A)];
        let t = select_threshold_eer(&s).unwrap();
        assert_eq!(t, 0.25);
        let h = |t: f64| compute_rates(&counts_at(&s, t)).unwrap().hter;
        assert_eq!(h(t), 0.5);
        assert_eq!(h(0.15), 0.25);
        assert_eq!(h(0.35), 0.25);
    }

    fn scored() -> impl Strategy<Value = Vec<(f64, Label)>> {
        prop::collection::vec(((0u32..40).prop_map(|v| v as f64 / 40.0), any::<bool>()), 2..60).prop_filter_map(
            "both classes",
            |v| {
                let s: Vec<(f64, Label)> = v.into_iter().map(|(x, a)| (x, if a { A } else { B })).collect();
                (s.iter().any(|x| x.1 == A) && s.iter().any(|x| x.1 == B)).then_some(s)
            },
        )
    }

    proptest! {
        #[test]
        fn eer_threshold_minimizes_imbalance(s in scored()) {
            let t = select_threshold_eer(&s).unwrap();
            let gap = |t: f64| {
                let r = compute_rates(&counts_at(&s, t)).unwrap();
                (r.apcer - r.bpcer).abs()
            };
            let g = gap(t);
            for c in threshold_candidates(&s.iter().map(|x| x.0).collect::<Vec<_>>()) {
                prop_assert!(g <= gap(c) + 1e-15);
                if gap(c) + 1e-15 < g || (gap(c) - g).abs() <= 1e-15 && c < t {
                    prop_assert!(false, "candidate {} beats {}", c, t);
                }
            }
        }

        #[test]
        fn hter_is_mean_of_rates(at in 1u64..500, bt in 1u64..500, a in 0u64..500, b in 0u64..500) {
            let c = ConfusionCounts {
                attacks_total: at,
                attacks_accepted: a % (at + 1),
                bonafide_total: bt,
                bonafide_rejected: b % (bt + 1),
            };
            let r = compute_rates(&c).unwrap();
            prop_assert!((r.hter - (r.apcer + r.bpcer) / 2.0).abs() <= 1e-12);
            prop_assert!((0.0..=1.0).contains(&r.hter));
        }
    }
}
