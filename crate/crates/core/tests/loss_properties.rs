use proptest::prelude::*;
use shiftforge_core::loss::{
    combined_loss, cross_entropy, grad_check, snn_loss, CombinedObjective, EmbeddingBatch, PredictionBatch,
    RegularizationConfig, SnnObjective,
};

/// Direct evaluation: every cosine distance from raw dot products, no
/// max-subtraction, no normalized copy of the rows.
fn naive_snn(v: &[f64], dim: usize, labels: &[usize], t: f64) -> f64 {
    let n = labels.len();
    let dist = |i: usize, j: usize| {
        let (a, b) = (&v[i * dim..(i + 1) * dim], &v[j * dim..(j + 1) * dim]);
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        if na < 1e-12 || nb < 1e-12 {
            1.0
        } else {
            (1.0 - dot / (na * nb)).clamp(0.0, 2.0)
        }
    };
    let mut sum = 0.0;
    let mut anchors = 0usize;
    for i in 0..n {
        if !(0..n).any(|j| j != i && labels[j] == labels[i]) {
            continue;
        }
        let num: f64 = (0..n)
            .filter(|&j| j != i && labels[j] == labels[i])
            .map(|j| (-dist(i, j) / t).exp())
            .sum();
        let den: f64 = (0..n).filter(|&j| j != i).map(|j| (-dist(i, j) / t).exp()).sum();
        sum -= (num / den).ln();
        anchors += 1;
    }
    if anchors == 0 {
        0.0
    } else {
        sum / anchors as f64
    }
}

prop_compose! {
    fn batch(max_n: usize, max_dim: usize, max_classes: usize)
        (n in 2..=max_n, dim in 1..=max_dim, classes in 2..=max_classes)
        (vectors in prop::collection::vec(-3.0f64..3.0, n * dim),
         labels in prop::collection::vec(0..classes, n),
         dim in Just(dim))
        -> EmbeddingBatch
    {
        EmbeddingBatch::new(vectors, dim, labels).unwrap()
    }
}

fn temperature() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.5), Just(2.0), Just(10.0), 0.1f64..20.0]
}

fn well_conditioned(b: &EmbeddingBatch) -> bool {
    (0..b.len()).all(|i| b.row(i).iter().map(|x| x * x).sum::<f64>().sqrt() > 0.05)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn matches_double_loop(b in batch(16, 8, 3), t in temperature()) {
        let fast = snn_loss(&b, t).unwrap();
        let slow = naive_snn(b.vectors(), b.dim(), b.labels(), t);
        prop_assert!((fast - slow).abs() < 1e-9, "{fast} vs {slow}");
    }

    #[test]
    fn nonnegative_and_finite(b in batch(32, 16, 4), t in temperature()) {
        let v = snn_loss(&b, t).unwrap();
        prop_assert!(v.is_finite() && v >= 0.0);
    }

    #[test]
    fn permutation_invariant(b in batch(16, 8, 3), t in temperature(), rot in 0usize..16) {
        let n = b.len();
        let order: Vec<usize> = (0..n).map(|i| (i * 7 + rot) % n).collect();
        if order.iter().collect::<std::collections::BTreeSet<_>>().len() != n {
            return Ok(());
        }
        let vectors: Vec<f64> = order.iter().flat_map(|&i| b.row(i).to_vec()).collect();
        let labels: Vec<usize> = order.iter().map(|&i| b.labels()[i]).collect();
        let p = EmbeddingBatch::new(vectors, b.dim(), labels).unwrap();
        prop_assert!((snn_loss(&b, t).unwrap() - snn_loss(&p, t).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn positive_scale_invariant(b in batch(16, 8, 3), t in temperature(), s in 1e-3f64..1e3) {
        let scaled = EmbeddingBatch::new(b.vectors().iter().map(|x| x * s).collect(), b.dim(), b.labels().to_vec()).unwrap();
        prop_assert!((snn_loss(&b, t).unwrap() - snn_loss(&scaled, t).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn analytic_gradient_matches_differences(
        b in batch(12, 6, 3),
        t in 0.5f64..5.0,
        w in prop::collection::vec(-1.0f64..1.0, 3 * 6),
        bias in prop::collection::vec(-1.0f64..1.0, 3),
    ) {
        prop_assume!(well_conditioned(&b));
        let snn = grad_check(&SnnObjective { temperature: t }, &b, 1e-5);
        prop_assert!(snn < 1e-4, "{}", snn);
        let classes = b.labels().iter().max().unwrap() + 1;
        let combined = CombinedObjective {
            weights: w[..classes * b.dim()].to_vec(),
            bias: bias[..classes].to_vec(),
            config: RegularizationConfig { alpha: 0.2, temperature: 2.0, ..Default::default() },
        };
        let err = grad_check(&combined, &b, 1e-5);
        prop_assert!(err < 1e-4, "{}", err);
    }

    #[test]
    fn alpha_zero_is_cross_entropy(
        b in batch(16, 4, 3),
        logits in prop::collection::vec(-5.0f64..5.0, 16 * 3),
    ) {
        let pred = PredictionBatch::logits(logits[..b.len() * 3].to_vec(), 3, b.labels().to_vec()).unwrap();
        let cfg = RegularizationConfig { alpha: 0.0, ..Default::default() };
        prop_assert!((combined_loss(&pred, &b, &cfg).unwrap() - cross_entropy(&pred)).abs() < 1e-12);
    }
}

#[test]
fn closed_forms() {
    let pair = EmbeddingBatch::new(vec![0.3, -1.0, 2.0, 0.5], 2, vec![1, 1]).unwrap();
    assert!(snn_loss(&pair, 2.0).unwrap().abs() < 1e-12);
    let same = EmbeddingBatch::new([0.6, 0.8].repeat(4), 2, vec![0, 0, 1, 1]).unwrap();
    for t in [0.5, 2.0, 10.0] {
        assert!((snn_loss(&same, t).unwrap() - 3f64.ln()).abs() < 1e-9);
    }
}
