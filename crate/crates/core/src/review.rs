//! Confident-learning review loop: queues of suspicious predictions and
//! the application of human keep/flip/discard decisions.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::record::{Label, Manifest};

/// Default max-softmax threshold for the low-confidence queue.
pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.75;

/// One model output on a held-out sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePrediction {
    pub sample_id: String,
    pub fold_index: usize,
    /// The label the model was evaluated against.
    pub label: Label,
    pub predicted: Label,
    /// Softmax row, `[p(OK), p(nOK)]`.
    pub probabilities: [f64; 2],
    /// Max softmax probability.
    pub confidence: f64,
}

impl SamplePrediction {
    pub fn from_probabilities(
        sample_id: String,
        fold_index: usize,
        label: Label,
        probabilities: [f64; 2],
    ) -> Self {
        let predicted = if probabilities[1] > probabilities[0] {
            Label::Nok
        } else {
            Label::Ok
        };
        SamplePrediction {
            sample_id,
            fold_index,
            label,
            predicted,
            probabilities,
            confidence: probabilities[0].max(probabilities[1]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueueMode {
    Misclassified,
    LowConfidence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    Misclassified,
    LowConfidence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub sample_id: String,
    pub image_path: String,
    pub current_label: Label,
    pub model_prediction: Label,
    pub confidence: f64,
    pub reason: Reason,
    pub fold_index: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReviewError {
    #[error("unknown sample_id `{0}`")]
    UnknownSample(String),
    #[error("confidence threshold must lie in (0.5, 1], got {0}")]
    Threshold(f64),
    #[error("run {run} has no prediction for `{sample_id}`")]
    EnsembleMismatch { run: usize, sample_id: String },
    #[error("no prediction runs to average")]
    NoRuns,
}

/// Collects the samples a human should look at, hardest (lowest
/// confidence) first. `threshold` only applies to the low-confidence mode,
/// where a confidence equal to the threshold is not flagged.
pub fn build_review_queue(
    predictions: &[SamplePrediction],
    manifest: &Manifest,
    mode: QueueMode,
    threshold: f64,
) -> Result<Vec<ReviewItem>, ReviewError> {
    if mode == QueueMode::LowConfidence && !(threshold > 0.5 && threshold <= 1.0) {
        return Err(ReviewError::Threshold(threshold));
    }
    let index = manifest.index();
    let mut queue = Vec::new();
    for p in predictions {
        let record = index
            .get(p.sample_id.as_str())
            .ok_or_else(|| ReviewError::UnknownSample(p.sample_id.clone()))?;
        let flagged = match mode {
            QueueMode::Misclassified => p.predicted != record.label,
            QueueMode::LowConfidence => p.confidence < threshold,
        };
        if flagged {
            queue.push(ReviewItem {
                sample_id: p.sample_id.clone(),
                image_path: record.image_path.clone(),
                current_label: record.label,
                model_prediction: p.predicted,
                confidence: p.confidence,
                reason: match mode {
                    QueueMode::Misclassified => Reason::Misclassified,
                    QueueMode::LowConfidence => Reason::LowConfidence,
                },
                fold_index: p.fold_index,
            });
        }
    }
    queue.sort_by(|a, b| {
        a.confidence
            .total_cmp(&b.confidence)
            .then_with(|| a.sample_id.cmp(&b.sample_id))
    });
    Ok(queue)
}

/// Averages the softmax rows of several prediction runs over the same
/// samples. The output follows the order of the first run.
pub fn average_predictions(runs: &[Vec<SamplePrediction>]) -> Result<Vec<SamplePrediction>, ReviewError> {
    let first = runs.first().ok_or(ReviewError::NoRuns)?;
    let lookups: Vec<BTreeMap<&str, &SamplePrediction>> = runs
        .iter()
        .map(|r| r.iter().map(|p| (p.sample_id.as_str(), p)).collect())
        .collect();
    first
        .iter()
        .map(|p| {
            let mut sum = [0.0; 2];
            for (run, lookup) in lookups.iter().enumerate() {
                let q = lookup.get(p.sample_id.as_str()).ok_or_else(|| {
                    ReviewError::EnsembleMismatch {
                        run,
                        sample_id: p.sample_id.clone(),
                    }
                })?;
                sum[0] += q.probabilities[0];
                sum[1] += q.probabilities[1];
            }
            let n = runs.len() as f64;
            Ok(SamplePrediction::from_probabilities(
                p.sample_id.clone(),
                p.fold_index,
                p.label,
                [sum[0] / n, sum[1] / n],
            ))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Keep,
    Flip,
    Discard,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewDecision {
    pub sample_id: String,
    pub action: Action,
    pub reviewer_id: String,
    /// Unix epoch milliseconds.
    pub timestamp: i64,
}

/// The effective decision per sample: latest timestamp wins, and among
/// equal timestamps the one listed last.
pub fn effective_decisions(decisions: &[ReviewDecision]) -> BTreeMap<&str, &ReviewDecision> {
    let mut out: BTreeMap<&str, &ReviewDecision> = BTreeMap::new();
    for d in decisions {
        match out.get(d.sample_id.as_str()) {
            Some(prev) if prev.timestamp > d.timestamp => {}
            _ => {
                out.insert(&d.sample_id, d);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelChange {
    pub sample_id: String,
    pub old: Label,
    pub new: Label,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionWarning {
    pub sample_id: String,
    pub action: Action,
    /// True when the decision was not applied.
    pub rejected: bool,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApplyOutcome {
    pub manifest: Manifest,
    pub changes: Vec<LabelChange>,
    pub warnings: Vec<DecisionWarning>,
}

fn flipped(label: Label) -> Label {
    match label {
        Label::Ok => Label::Nok,
        Label::Nok => Label::Ok,
        Label::Discard => Label::Discard,
    }
}

/// Produces a revised copy of `manifest`. Records are never removed;
/// `discard` only changes the label. Flipping a discarded record is
/// rejected; keeping one is allowed with a warning.
pub fn apply_decisions(
    manifest: &Manifest,
    decisions: &[ReviewDecision],
) -> Result<ApplyOutcome, ReviewError> {
    let effective = effective_decisions(decisions);
    let index = manifest.index();
    if let Some(id) = effective.keys().find(|id| !index.contains_key(*id)) {
        return Err(ReviewError::UnknownSample(String::from(*id)));
    }
    let mut revised = manifest.clone();
    let mut changes = Vec::new();
    let mut warnings = Vec::new();
    for record in &mut revised.records {
        let Some(decision) = effective.get(record.sample_id.as_str()) else {
            continue;
        };
        let old = record.label;
        let new = match (decision.action, old) {
            (Action::Keep, Label::Discard) => {
                warnings.push(DecisionWarning {
                    sample_id: record.sample_id.clone(),
                    action: Action::Keep,
                    rejected: false,
                    message: String::from("kept a discarded sample; it stays discarded"),
                });
                old
            }
            (Action::Flip, Label::Discard) => {
                warnings.push(DecisionWarning {
                    sample_id: record.sample_id.clone(),
                    action: Action::Flip,
                    rejected: true,
                    message: String::from("cannot flip a discarded sample"),
                });
                old
            }
            (Action::Keep, l) => l,
            (Action::Flip, l) => flipped(l),
            (Action::Discard, _) => Label::Discard,
        };
        if new != old {
            record.label = new;
            changes.push(LabelChange {
                sample_id: record.sample_id.clone(),
                old,
                new,
                action: decision.action,
            });
        }
    }
    Ok(ApplyOutcome {
        manifest: revised,
        changes,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::tests::record;
    use crate::record::Category;
    use alloc::string::ToString;
    use alloc::vec;

    fn toy() -> Manifest {
        Manifest::new(vec![
            record("a", Label::Ok, "p", Category::GearWheel),
            record("b", Label::Nok, "p", Category::GearWheel),
            record("c", Label::Ok, "p", Category::GearWheel),
        ])
        .unwrap()
    }

    fn pred(id: &str, label: Label, p_nok: f64) -> SamplePrediction {
        SamplePrediction::from_probabilities(id.to_string(), 0, label, [1.0 - p_nok, p_nok])
    }

    fn decision(id: &str, action: Action, timestamp: i64) -> ReviewDecision {
        ReviewDecision {
            sample_id: id.to_string(),
            action,
            reviewer_id: "r".to_string(),
            timestamp,
        }
    }

    #[test]
    fn low_confidence_filter_and_order() {
        let preds = [pred("a", Label::Ok, 0.1), pred("b", Label::Nok, 0.6), pred("c", Label::Ok, 0.26)];
        let q = build_review_queue(&preds, &toy(), QueueMode::LowConfidence, 0.75).unwrap();
        let ids: Vec<_> = q.iter().map(|i| i.sample_id.as_str()).collect();
        assert_eq!(ids, ["b", "c"]);
        assert!((q[0].confidence - 0.6).abs() < 1e-12);
        assert!((q[1].confidence - 0.74).abs() < 1e-12);
    }

    #[test]
    fn confidence_at_threshold_is_excluded() {
        let preds = [pred("a", Label::Ok, 0.25)];
        assert_eq!(preds[0].confidence, 0.75);
        let q = build_review_queue(&preds, &toy(), QueueMode::LowConfidence, 0.75).unwrap();
        assert!(q.is_empty());
    }

    #[test]
    fn all_correct_gives_empty_misclassified_queue() {
        let preds = [pred("a", Label::Ok, 0.2), pred("b", Label::Nok, 0.9)];
        assert!(build_review_queue(&preds, &toy(), QueueMode::Misclassified, 0.75)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn unknown_sample_and_bad_threshold() {
        let preds = [pred("zz", Label::Ok, 0.2)];
        assert_eq!(
            build_review_queue(&preds, &toy(), QueueMode::Misclassified, 0.75),
            Err(ReviewError::UnknownSample("zz".into()))
        );
        assert_eq!(
            build_review_queue(&[], &toy(), QueueMode::LowConfidence, 0.5),
            Err(ReviewError::Threshold(0.5))
        );
    }

    #[test]
    fn ensemble_averages_softmax_rows() {
        let a = vec![pred("a", Label::Ok, 0.2), pred("b", Label::Nok, 0.9)];
        let b = vec![pred("b", Label::Nok, 0.3), pred("a", Label::Ok, 0.6)];
        let avg = average_predictions(&[a, b]).unwrap();
        assert!((avg[0].probabilities[1] - 0.4).abs() < 1e-12);
        assert_eq!(avg[1].predicted, Label::Nok);
        assert!((avg[1].confidence - 0.6).abs() < 1e-12);
    }

    #[test]
    fn flip_keep_discard() {
        let m = toy();
        let out = apply_decisions(
            &m,
            &[decision("a", Action::Flip, 1), decision("b", Action::Keep, 1), decision("c", Action::Discard, 1)],
        )
        .unwrap();
        assert_eq!(out.manifest.records[0].label, Label::Nok);
        assert_eq!(out.manifest.records[1], m.records[1]);
        assert_eq!(out.manifest.records[2].label, Label::Discard);
        let changed: Vec<_> = out.changes.iter().map(|c| c.sample_id.as_str()).collect();
        assert_eq!(changed, ["a", "c"]);
        assert_eq!(m, toy(), "input untouched");
    }

    #[test]
    fn latest_decision_wins() {
        let out = apply_decisions(
            &toy(),
            &[decision("a", Action::Flip, 5), decision("a", Action::Discard, 2)],
        )
        .unwrap();
        assert_eq!(out.manifest.records[0].label, Label::Nok);
        let out = apply_decisions(
            &toy(),
            &[decision("a", Action::Discard, 2), decision("a", Action::Flip, 2)],
        )
        .unwrap();
        assert_eq!(out.manifest.records[0].label, Label::Nok);
    }

    #[test]
    fn flip_on_discarded_is_rejected() {
        let mut m = toy();
        m.records[0].label = Label::Discard;
        let out = apply_decisions(&m, &[decision("a", Action::Flip, 1), decision("b", Action::Flip, 1)]).unwrap();
        assert_eq!(out.manifest.records[0].label, Label::Discard);
        assert_eq!(out.manifest.records[1].label, Label::Ok);
        assert!(out.warnings[0].rejected);
        let out = apply_decisions(&m, &[decision("a", Action::Keep, 1)]).unwrap();
        assert!(!out.warnings[0].rejected);
        assert!(out.changes.is_empty());
    }

    #[test]
    fn unknown_decision_target() {
        assert_eq!(
            apply_decisions(&toy(), &[decision("nope", Action::Keep, 0)]),
            Err(ReviewError::UnknownSample("nope".into()))
        );
    }
}
