//! Confusion matrices, per-class and macro-averaged scores, and
//! constant-label baselines.

use std::fmt::Write as _;

use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::ingest::ClassLabel;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("{preds} predictions for {golds} gold labels")]
    LengthMismatch { preds: usize, golds: usize },
    #[error("cannot score an empty set")]
    Empty,
}

/// Counts indexed `[gold][predicted]` in [`ClassLabel::ALL`] order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix<L> {
    pub counts: [[usize; 2]; 2],
    labels: [L; 2],
}

impl<L: ClassLabel> ConfusionMatrix<L> {
    pub fn new(counts: [[usize; 2]; 2]) -> Self {
        Self {
            counts,
            labels: L::ALL,
        }
    }

    pub fn get(&self, gold: L, predicted: L) -> usize {
        self.counts[gold.index()][predicted.index()]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> usize {
        self.counts[0][0] + self.counts[1][1]
    }

    pub fn labels(&self) -> [L; 2] {
        self.labels
    }
}

pub fn confusion<L: ClassLabel>(preds: &[L], golds: &[L]) -> Result<ConfusionMatrix<L>, EvalError> {
    if preds.len() != golds.len() {
        return Err(EvalError::LengthMismatch {
            preds: preds.len(),
            golds: golds.len(),
        });
    }
    let mut counts = [[0; 2]; 2];
    for (&p, &g) in preds.iter().zip(golds) {
        counts[g.index()][p.index()] += 1;
    }
    Ok(ConfusionMatrix::new(counts))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassScores {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport<L> {
    pub accuracy: f64,
    pub per_class: Vec<ClassScores>,
    pub macro_f1: f64,
    pub matrix: ConfusionMatrix<L>,
}

/// `num / den`, or 0 when `den` is 0.
fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

pub fn report<L: ClassLabel>(matrix: &ConfusionMatrix<L>) -> Result<EvalReport<L>, EvalError> {
    let total = matrix.total();
    if total == 0 {
        return Err(EvalError::Empty);
    }
    let c = &matrix.counts;
    let per_class: Vec<ClassScores> = L::ALL
        .iter()
        .map(|&l| {
            let k = l.index();
            let tp = c[k][k] as f64;
            let predicted = (c[0][k] + c[1][k]) as f64;
            let support = c[k][0] + c[k][1];
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support as f64);
            ClassScores {
                label: l.to_string(),
                precision,
                recall,
                f1: ratio(2.0 * precision * recall, precision + recall),
                support,
            }
        })
        .collect();
    let macro_f1 = per_class.iter().map(|s| s.f1).sum::<f64>() / per_class.len() as f64;
    Ok(EvalReport {
        accuracy: matrix.correct() as f64 / total as f64,
        per_class,
        macro_f1,
        matrix: *matrix,
    })
}

/// Scores the classifier that always answers `constant`.
pub fn baseline_report<L: ClassLabel>(golds: &[L], constant: L) -> Result<EvalReport<L>, EvalError> {
    let preds = vec![constant; golds.len()];
    report(&confusion(&preds, golds)?)
}

impl<L: ClassLabel> EvalReport<L> {
    pub fn to_json(&self) -> Value {
        let [a, b] = self.matrix.labels();
        let row = |g: L| json!({ a.to_string(): self.matrix.get(g, a), b.to_string(): self.matrix.get(g, b) });
        json!({
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "per_class": self.per_class,
            "confusion": { a.to_string(): row(a), b.to_string(): row(b) },
        })
    }

    /// Aligned plain-text table with 4 decimal places.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<10}{:>10}{:>10}{:>10}{:>10}", "", "precision", "recall", "f1", "support");
        for s in &self.per_class {
            let _ = writeln!(
                out,
                "{:<10}{:>10.4}{:>10.4}{:>10.4}{:>10}",
                s.label, s.precision, s.recall, s.f1, s.support
            );
        }
        let _ = writeln!(
            out,
            "{:<10}{:>10}{:>10}{:>10.4}{:>10}",
            "accuracy",
            "",
            "",
            self.accuracy,
            self.matrix.total()
        );
        let _ = writeln!(out, "{:<10}{:>10}{:>10}{:>10.4}", "macro f1", "", "", self.macro_f1);
        let [a, b] = self.matrix.labels();
        let _ = writeln!(out, "\nconfusion (rows gold, columns predicted)");
        let _ = writeln!(out, "{:<10}{:>10}{:>10}", "", a.to_string(), b.to_string());
        for g in [a, b] {
            let _ = writeln!(
                out,
                "{:<10}{:>10}{:>10}",
                g.to_string(),
                self.matrix.get(g, a),
                self.matrix.get(g, b)
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{OffenseLabel, TargetLabel};
    use proptest::prelude::*;

    fn golds(n_first: usize, n_second: usize) -> Vec<OffenseLabel> {
        let mut v = vec![OffenseLabel::Not; n_first];
        v.extend(vec![OffenseLabel::Off; n_second]);
        v
    }

    /// Independent oracle for a constant predictor over two classes: the
    /// predicted class has precision p = n_c / n, recall 1, F1 = 2p/(1+p);
    /// the other class scores 0.
    fn constant_oracle(n_c: usize, n: usize) -> (f64, f64) {
        let p = n_c as f64 / n as f64;
        (2.0 * p / (1.0 + p) / 2.0, p)
    }

    #[test]
    fn perfect_predictions() {
        let g = vec![OffenseLabel::Not, OffenseLabel::Not, OffenseLabel::Off];
        let m = confusion(&g, &g).unwrap();
        assert_eq!(m.counts, [[2, 0], [0, 1]]);
        let r = report(&m).unwrap();
        assert_eq!((r.macro_f1, r.accuracy), (1.0, 1.0));
    }

    #[test]
    fn constant_off_cells() {
        let g = golds(620, 240);
        let m = confusion(&vec![OffenseLabel::Off; 860], &g).unwrap();
        assert_eq!(m.get(OffenseLabel::Not, OffenseLabel::Off), 620);
        assert_eq!(m.get(OffenseLabel::Off, OffenseLabel::Off), 240);
    }

    #[test]
    fn empty_input() {
        let m = confusion::<OffenseLabel>(&[], &[]).unwrap();
        assert_eq!(m.counts, [[0, 0], [0, 0]]);
        assert_eq!(report(&m).unwrap_err(), EvalError::Empty);
        assert!(confusion(&[OffenseLabel::Off], &[]).is_err());
    }

    #[test]
    fn all_not_baseline_matches_oracle() {
        let r = baseline_report(&golds(620, 240), OffenseLabel::Not).unwrap();
        let (f1, acc) = constant_oracle(620, 860);
        assert!((r.macro_f1 - f1).abs() < 1e-12);
        assert!((r.accuracy - acc).abs() < 1e-12);
    }

    #[test]
    fn all_unt_baseline_matches_oracle() {
        let mut g = vec![TargetLabel::Tin; 213];
        g.extend(vec![TargetLabel::Unt; 27]);
        let r = baseline_report(&g, TargetLabel::Unt).unwrap();
        let (f1, acc) = constant_oracle(27, 240);
        assert!((r.macro_f1 - f1).abs() < 1e-12);
        assert!((r.accuracy - acc).abs() < 1e-12);
    }

    #[test]
    fn single_record_constant() {
        let r = baseline_report(&[OffenseLabel::Off], OffenseLabel::Off).unwrap();
        assert_eq!((r.macro_f1, r.accuracy), (0.5, 1.0));
    }

    #[test]
    fn json_and_text_layout() {
        let r = baseline_report(&golds(3, 1), OffenseLabel::Not).unwrap();
        let j = r.to_json();
        assert_eq!(j["confusion"]["OFF"]["NOT"], 1);
        assert_eq!(j["per_class"][0]["label"], "NOT");
        assert!(j["accuracy"].is_number() && j["macro_f1"].is_number());
        let t = r.to_text();
        assert!(t.contains("0.7500"), "{t}");
        assert!(t.contains("macro f1"));
    }

    fn label() -> impl Strategy<Value = OffenseLabel> {
        prop_oneof![Just(OffenseLabel::Not), Just(OffenseLabel::Off)]
    }

    proptest! {
        #[test]
        fn scores_are_permutation_invariant(
            pairs in proptest::collection::vec((label(), label()), 1..60),
            rot in 0usize..60,
        ) {
            let (p, g): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
            let a = report(&confusion(&p, &g).unwrap()).unwrap();
            let mut shifted = pairs.clone();
            shifted.rotate_left(rot % pairs.len());
            shifted.reverse();
            let (p2, g2): (Vec<_>, Vec<_>) = shifted.into_iter().unzip();
            let b = report(&confusion(&p2, &g2).unwrap()).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(a.matrix.correct(), p.iter().zip(&g).filter(|(x, y)| x == y).count());
            prop_assert!((a.accuracy * a.matrix.total() as f64 - a.matrix.correct() as f64).abs() < 1e-9);
            for v in [a.accuracy, a.macro_f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
