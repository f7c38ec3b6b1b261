use proptest::prelude::*;
use shiftforge_core::metrics::{mean_and_std, Confusion};
use shiftforge_core::record::{Category, Label, Manifest, SampleRecord, Side, Transmission};
use shiftforge_core::review::{
    apply_decisions, build_review_queue, Action, QueueMode, ReviewDecision, SamplePrediction,
};

fn record(i: usize, label: Label) -> SampleRecord {
    SampleRecord {
        sample_id: format!("s{i:03}"),
        image_path: format!("s{i:03}.png"),
        label,
        part_id: format!("p{i}"),
        functional_part_id: format!("fp{}", i % 7),
        category: Category::Spline,
        transmission: Transmission::Manual,
        side: Side::A,
        patch_origin: None,
    }
}

fn label(nok: bool) -> Label {
    if nok {
        Label::Nok
    } else {
        Label::Ok
    }
}

prop_compose! {
    fn scenario()(rows in prop::collection::vec((any::<bool>(), 0.0f64..=1.0, 0u8..4), 1..60))
        -> (Manifest, Vec<SamplePrediction>)
    {
        let mut records = Vec::new();
        let mut preds = Vec::new();
        for (i, &(nok, p, snap)) in rows.iter().enumerate() {
            records.push(record(i, label(nok)));
            // Some probabilities land exactly on the default threshold.
            let p_nok = match snap { 0 => 0.75, 1 => 0.25, _ => p };
            preds.push(SamplePrediction::from_probabilities(format!("s{i:03}"), i % 5, label(nok), [1.0 - p_nok, p_nok]));
        }
        (Manifest::new(records).unwrap(), preds)
    }
}

proptest! {
    #[test]
    fn queues_match_recounts((m, preds) in scenario(), t in 0.51f64..=1.0) {
        let mis = build_review_queue(&preds, &m, QueueMode::Misclassified, t).unwrap();
        let expected = preds.iter().filter(|p| {
            let truth = m.get(&p.sample_id).unwrap().label;
            (p.probabilities[1] > p.probabilities[0]) != (truth == Label::Nok)
        }).count();
        prop_assert_eq!(mis.len(), expected);

        for threshold in [t, 0.75] {
            let low = build_review_queue(&preds, &m, QueueMode::LowConfidence, threshold).unwrap();
            let expected: Vec<&str> = preds
                .iter()
                .filter(|p| p.probabilities[0].max(p.probabilities[1]) < threshold)
                .map(|p| p.sample_id.as_str())
                .collect();
            prop_assert_eq!(low.len(), expected.len());
            prop_assert!(low.iter().all(|i| expected.contains(&i.sample_id.as_str())));
            prop_assert!(low.windows(2).all(|w| w[0].confidence <= w[1].confidence));
            prop_assert!(low.iter().all(|i| i.confidence != 0.75 || threshold != 0.75));
        }
    }

    #[test]
    fn double_flip_restores_labels((m, _) in scenario(), picks in prop::collection::vec(any::<prop::sample::Index>(), 1..20)) {
        let ids: Vec<String> = picks.iter().map(|ix| m.records[ix.index(m.records.len())].sample_id.clone()).collect();
        let flips = |t: i64| -> Vec<ReviewDecision> {
            ids.iter().map(|id| ReviewDecision { sample_id: id.clone(), action: Action::Flip, reviewer_id: "r".into(), timestamp: t }).collect()
        };
        let once = apply_decisions(&m, &flips(1)).unwrap().manifest;
        prop_assert_eq!(once.records.len(), m.records.len());
        let twice = apply_decisions(&once, &flips(2)).unwrap().manifest;
        prop_assert_eq!(twice, m);
    }

    #[test]
    fn confusion_tallies(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 0..200)) {
        let c = Confusion::from_pairs(pairs.iter().copied());
        let count = |p: bool, t: bool| pairs.iter().filter(|&&x| x == (p, t)).count() as u64;
        prop_assert_eq!((c.tp, c.fp, c.tn, c.fn_), (count(true, true), count(true, false), count(false, false), count(false, true)));
        let m = c.metrics();
        if c.tp > 0 {
            let p = c.tp as f64 / (c.tp + c.fp) as f64;
            let r = c.tp as f64 / (c.tp + c.fn_) as f64;
            prop_assert_eq!(m.precision, p);
            prop_assert_eq!(m.recall, r);
            prop_assert!((m.f1 - 2.0 * p * r / (p + r)).abs() < 1e-15);
        } else {
            prop_assert_eq!(m.f1, 0.0);
        }
    }

    #[test]
    fn mean_and_std_agree_with_two_pass(values in prop::collection::vec(-1.0f64..1.0, 2..12)) {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let (m, s) = mean_and_std(&values);
        prop_assert!((m - mean).abs() < 1e-12);
        prop_assert!((s - var.sqrt()).abs() < 1e-12);
    }
}
