use std::fmt;

use serde::{Deserialize, Serialize};

use super::cell::{bce_loss, forward};
use super::params::{LstmModel, Real};
use super::train::Example;
use super::ModelError;
use crate::ingest::Sentiment;

/// Confusion counts with "positive" as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub fp: u64,
}

impl Confusion {
    pub fn record(&mut self, truth: Sentiment, predicted: Sentiment) {
        match (truth, predicted) {
            (Sentiment::Positive, Sentiment::Positive) => self.tp += 1,
            (Sentiment::Positive, Sentiment::Negative) => self.fn_ += 1,
            (Sentiment::Negative, Sentiment::Negative) => self.tn += 1,
            (Sentiment::Negative, Sentiment::Positive) => self.fp += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fn_ + self.tn + self.fp
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// TP / (TP + FN); 0 when there are no positive examples.
    pub accuracy_positive: f64,
    /// TN / (TN + FP); 0 when there are no negative examples.
    pub accuracy_negative: f64,
    pub accuracy_total: f64,
    pub mean_loss: f64,
    pub confusion: Confusion,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl EvalReport {
    pub fn from_confusion(confusion: Confusion, mean_loss: f64) -> Self {
        let c = confusion;
        Self {
            accuracy_positive: ratio(c.tp, c.tp + c.fn_),
            accuracy_negative: ratio(c.tn, c.tn + c.fp),
            accuracy_total: ratio(c.tp + c.tn, c.total()),
            mean_loss,
            confusion,
        }
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.confusion;
        writeln!(f, "{:<10} {:>10}", "class", "accuracy")?;
        writeln!(
            f,
            "{:<10} {:>9.2}%",
            "positive",
            self.accuracy_positive * 100.0
        )?;
        writeln!(
            f,
            "{:<10} {:>9.2}%",
            "negative",
            self.accuracy_negative * 100.0
        )?;
        writeln!(f, "{:<10} {:>9.2}%", "total", self.accuracy_total * 100.0)?;
        write!(
            f,
            "tp={} fn={} tn={} fp={} loss={:.4}",
            c.tp, c.fn_, c.tn, c.fp, self.mean_loss
        )
    }
}

/// Scores every example, thresholding the probability at 0.5.
pub fn evaluate<T: Real>(
    model: &LstmModel<T>,
    examples: &[Example],
) -> Result<EvalReport, ModelError> {
    let mut confusion = Confusion::default();
    let mut loss = 0.0;
    for ex in examples {
        let (p, _) = forward(model, &ex.seq)?;
        loss += bce_loss(p, ex.label.target()).to_f64().unwrap();
        confusion.record(ex.label, Sentiment::from_probability(p.to_f64().unwrap()));
    }
    let mean_loss = if examples.is_empty() {
        0.0
    } else {
        loss / examples.len() as f64
    };
    Ok(EvalReport::from_confusion(confusion, mean_loss))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracies_from_confusion() {
        let c = Confusion {
            tp: 8,
            fn_: 2,
            tn: 7,
            fp: 3,
        };
        let r = EvalReport::from_confusion(c, 0.0);
        assert!((r.accuracy_positive - 0.80).abs() < 1e-12);
        assert!((r.accuracy_negative - 0.70).abs() < 1e-12);
        assert!((r.accuracy_total - 0.75).abs() < 1e-12);
        let text = r.to_string();
        assert!(text.contains("80.00%"));
        assert!(text.contains("75.00%"));
    }

    #[test]
    fn empty_classes_report_zero() {
        let r = EvalReport::from_confusion(Confusion::default(), 0.0);
        assert_eq!(r.accuracy_total, 0.0);
        let mut c = Confusion::default();
        c.record(Sentiment::Negative, Sentiment::Negative);
        let r = EvalReport::from_confusion(c, 0.0);
        assert_eq!(r.accuracy_positive, 0.0);
        assert_eq!(r.accuracy_negative, 1.0);
    }

    #[test]
    fn confusion_serializes_with_fn_key() {
        let json = serde_json::to_string(&Confusion::default()).unwrap();
        assert_eq!(json, r#"{"tp":0,"fn":0,"tn":0,"fp":0}"#);
    }
}
