use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use shiftforge_core::record::{Category, Label, Manifest, SampleRecord, Side, Transmission};
use shiftforge_core::split::{build_split, verify_split, SplitKind, SplitPlan, SplitStrategy};

/// `(category, records per functional part, labels)` blueprint turned into
/// a manifest. Every functional part belongs to one category and its first
/// record is active.
fn manifest_from(parts: &[(usize, Vec<(u8, bool)>)]) -> Manifest {
    let mut records = Vec::new();
    for (p, (cat, rows)) in parts.iter().enumerate() {
        for (r, &(label, side_b)) in rows.iter().enumerate() {
            let label = match (r, label % 10) {
                (0, l) if l < 5 => Label::Ok,
                (0, _) => Label::Nok,
                (_, 0) => Label::Discard,
                (_, l) if l < 5 => Label::Ok,
                _ => Label::Nok,
            };
            records.push(SampleRecord {
                sample_id: format!("p{p}-r{r}"),
                image_path: format!("img/p{p}-r{r}.png"),
                label,
                part_id: format!("part{}", p * 10 + r % 3),
                functional_part_id: format!("fp{p}"),
                category: Category::ALL[*cat],
                transmission: if p % 2 == 0 { Transmission::Manual } else { Transmission::Automatic },
                side: if side_b { Side::B } else { Side::A },
                patch_origin: None,
            });
        }
    }
    Manifest::new(records).unwrap()
}

fn blueprint() -> impl Strategy<Value = Vec<(usize, Vec<(u8, bool)>)>> {
    let rows = || prop::collection::vec((any::<u8>(), any::<bool>()), 1..6);
    // Two to three functional parts per held-out category, up to two gear parts.
    (
        prop::collection::vec((1usize..=4, rows()), 0..5),
        prop::collection::vec(rows(), 8..9),
        prop::collection::vec(rows(), 0..3),
    )
        .prop_map(|(extra, base, gear)| {
            let mut parts: Vec<(usize, Vec<(u8, bool)>)> =
                base.into_iter().enumerate().map(|(i, r)| (1 + i % 4, r)).collect();
            parts.extend(extra);
            parts.extend(gear.into_iter().map(|r| (0, r)));
            parts
        })
}

fn group_of(kind: SplitKind, r: &SampleRecord) -> String {
    match kind {
        SplitKind::RandomS1 => r.sample_id.clone(),
        SplitKind::AcquisitionS2 => format!("{}|{:?}", r.functional_part_id, r.side),
        SplitKind::FunctionalPartS3 => r.functional_part_id.clone(),
        SplitKind::CategoryS4 => format!("{:?}", r.category),
    }
}

fn check_independently(m: &Manifest, plan: &SplitPlan) -> Result<(), TestCaseError> {
    let kind = plan.strategy.kind;
    let active: BTreeSet<&str> = m.active().map(|r| r.sample_id.as_str()).collect();
    let index = m.index();
    let mut tested: BTreeMap<&str, usize> = BTreeMap::new();
    for fold in &plan.folds {
        let train: BTreeSet<&str> = fold.train.iter().map(String::as_str).collect();
        let test: BTreeSet<&str> = fold.test.iter().map(String::as_str).collect();
        prop_assert!(train.is_disjoint(&test));
        prop_assert_eq!(train.union(&test).copied().collect::<BTreeSet<_>>(), active.clone());
        for id in &test {
            *tested.entry(id).or_default() += 1;
        }
        let train_groups: BTreeSet<String> = train.iter().map(|id| group_of(kind, index[id])).collect();
        prop_assert!(test.iter().all(|id| !train_groups.contains(&group_of(kind, index[id]))));
    }
    let testable = |id: &&&str| kind != SplitKind::CategoryS4 || index[**id].category != Category::GearWheel;
    prop_assert!(active.iter().filter(testable).all(|id| tested.get(id) == Some(&1)));
    if kind == SplitKind::CategoryS4 {
        prop_assert_eq!(plan.folds.len(), 4);
        let mut held: Vec<Category> = Vec::new();
        for fold in &plan.folds {
            let cats: BTreeSet<Category> = fold.test.iter().map(|id| index[id.as_str()].category).collect();
            prop_assert_eq!(cats.len(), 1);
            held.extend(cats);
            let gear_train = fold.train.iter().filter(|id| index[id.as_str()].category == Category::GearWheel).count();
            prop_assert_eq!(gear_train, m.active().filter(|r| r.category == Category::GearWheel).count());
        }
        held.sort();
        prop_assert_eq!(held, Category::HELD_OUT.to_vec());
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn every_strategy_builds_valid_plans(parts in blueprint(), seed in any::<u64>()) {
        let m = manifest_from(&parts);
        for kind in [SplitKind::RandomS1, SplitKind::AcquisitionS2, SplitKind::FunctionalPartS3, SplitKind::CategoryS4] {
            let plan = build_split(&m, SplitStrategy::with_default_folds(kind, seed)).unwrap();
            prop_assert!(verify_split(&m, &plan).is_empty(), "{:?}", verify_split(&m, &plan));
            check_independently(&m, &plan)?;
        }
    }

    #[test]
    fn plans_depend_only_on_content_and_seed(parts in blueprint(), seed in any::<u64>()) {
        let m = manifest_from(&parts);
        let mut reversed = m.records.clone();
        reversed.reverse();
        let r = Manifest::new(reversed).unwrap();
        for kind in [SplitKind::RandomS1, SplitKind::FunctionalPartS3] {
            let s = SplitStrategy::with_default_folds(kind, seed);
            let sorted = |p: SplitPlan| -> Vec<(BTreeSet<String>, BTreeSet<String>)> {
                p.folds.into_iter().map(|f| (f.train.into_iter().collect(), f.test.into_iter().collect())).collect()
            };
            prop_assert_eq!(sorted(build_split(&m, s).unwrap()), sorted(build_split(&r, s).unwrap()));
        }
    }
}

#[test]
fn s4_fold_count_is_fixed() {
    for folds in [0, 1, 2, 3, 5, 10] {
        assert!(SplitStrategy::new(SplitKind::CategoryS4, folds, 0).is_err());
    }
    assert!(SplitStrategy::new(SplitKind::CategoryS4, 4, 0).is_ok());
}
