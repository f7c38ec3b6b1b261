//! Cross-validation plans for the four distribution-shift regimes.
//!
//! | kind | grouping unit              | folds |
//! |------|----------------------------|-------|
//! | S1   | individual sample          | K     |
//! | S2   | (functional part, side)    | K     |
//! | S3   | functional part            | K     |
//! | S4   | component category         | 4     |
//!
//! For S1–S3 the grouping units are sorted, shuffled by a seeded generator
//! and dealt to the fold whose test set is currently smallest (ties go to
//! the lowest fold index). With equally sized groups this is a plain
//! round-robin deal. S4 is leave-one-category-out over the four non-gear
//! categories; gear wheels are always training data.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::record::{Category, Manifest, SampleRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    RandomS1,
    AcquisitionS2,
    FunctionalPartS3,
    CategoryS4,
}

impl SplitKind {
    pub fn short_name(self) -> &'static str {
        match self {
            SplitKind::RandomS1 => "s1",
            SplitKind::AcquisitionS2 => "s2",
            SplitKind::FunctionalPartS3 => "s3",
            SplitKind::CategoryS4 => "s4",
        }
    }

    pub fn parse(s: &str) -> Option<SplitKind> {
        match s.to_ascii_lowercase().as_str() {
            "s1" | "random_s1" => Some(SplitKind::RandomS1),
            "s2" | "acquisition_s2" => Some(SplitKind::AcquisitionS2),
            "s3" | "functional_part_s3" => Some(SplitKind::FunctionalPartS3),
            "s4" | "category_s4" => Some(SplitKind::CategoryS4),
            _ => None,
        }
    }

    pub fn default_folds(self) -> usize {
        match self {
            SplitKind::CategoryS4 => 4,
            _ => 5,
        }
    }

    /// The group key of a record under this regime.
    pub fn group_key(self, record: &SampleRecord) -> String {
        match self {
            SplitKind::RandomS1 => record.sample_id.clone(),
            SplitKind::AcquisitionS2 => format!("{}/{}", record.functional_part_id, record.side),
            SplitKind::FunctionalPartS3 => record.functional_part_id.clone(),
            SplitKind::CategoryS4 => record.category.as_str().to_string(),
        }
    }
}

impl fmt::Display for SplitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitStrategy {
    pub kind: SplitKind,
    pub folds: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SplitError {
    #[error("strategy {kind} needs at least 2 folds, got {folds}")]
    TooFewFolds { kind: SplitKind, folds: usize },
    #[error("strategy s4 requires exactly 4 folds, got {0}")]
    CategoryFoldCount(usize),
    #[error("strategy {kind} needs {needed} groups but the manifest has {available}")]
    TooFewGroups {
        kind: SplitKind,
        needed: usize,
        available: usize,
    },
    #[error("sample `{sample_id}` has no {field}, required by strategy {kind}")]
    MissingMetadata {
        kind: SplitKind,
        sample_id: String,
        field: &'static str,
    },
}

impl SplitStrategy {
    pub fn new(kind: SplitKind, folds: usize, seed: u64) -> Result<Self, SplitError> {
        let s = SplitStrategy { kind, folds, seed };
        s.validate()?;
        Ok(s)
    }

    pub fn with_default_folds(kind: SplitKind, seed: u64) -> Self {
        SplitStrategy {
            kind,
            folds: kind.default_folds(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SplitError> {
        if self.kind == SplitKind::CategoryS4 && self.folds != 4 {
            return Err(SplitError::CategoryFoldCount(self.folds));
        }
        if self.folds < 2 {
            return Err(SplitError::TooFewFolds {
                kind: self.kind,
                folds: self.folds,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub index: usize,
    pub train: Vec<String>,
    pub test: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub held_out_group: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub strategy: SplitStrategy,
    pub folds: Vec<FoldAssignment>,
}

impl SplitPlan {
    pub fn fold(&self, index: usize) -> Option<&FoldAssignment> {
        self.folds.get(index)
    }
}

pub fn build_split(manifest: &Manifest, strategy: SplitStrategy) -> Result<SplitPlan, SplitError> {
    strategy.validate()?;
    let active: Vec<&SampleRecord> = manifest.active().collect();
    check_metadata(&active, strategy.kind)?;
    let folds = match strategy.kind {
        SplitKind::CategoryS4 => category_folds(&active)?,
        kind => grouped_folds(&active, kind, strategy.folds, strategy.seed)?,
    };
    Ok(SplitPlan { strategy, folds })
}

fn check_metadata(active: &[&SampleRecord], kind: SplitKind) -> Result<(), SplitError> {
    let field = match kind {
        SplitKind::RandomS1 | SplitKind::CategoryS4 => return Ok(()),
        SplitKind::AcquisitionS2 | SplitKind::FunctionalPartS3 => "functional_part_id",
    };
    match active.iter().find(|r| r.functional_part_id.is_empty()) {
        Some(r) => Err(SplitError::MissingMetadata {
            kind,
            sample_id: r.sample_id.clone(),
            field,
        }),
        None => Ok(()),
    }
}

fn grouped_folds(
    active: &[&SampleRecord],
    kind: SplitKind,
    folds: usize,
    seed: u64,
) -> Result<Vec<FoldAssignment>, SplitError> {
    let mut groups: BTreeMap<String, Vec<&str>> = BTreeMap::new();
    for r in active {
        groups.entry(kind.group_key(r)).or_default().push(&r.sample_id);
    }
    if groups.len() < folds {
        return Err(SplitError::TooFewGroups {
            kind,
            needed: folds,
            available: groups.len(),
        });
    }
    let mut order: Vec<(String, Vec<&str>)> = groups.into_iter().collect();
    let mut rng = crate::rng::stream(seed, kind as u64);
    order.shuffle(&mut rng);

    let mut test_sets: Vec<BTreeSet<&str>> = (0..folds).map(|_| BTreeSet::new()).collect();
    for (_, members) in &order {
        let target = (0..folds)
            .min_by_key(|&f| (test_sets[f].len(), f))
            .expect("folds >= 2");
        test_sets[target].extend(members.iter().copied());
    }

    Ok(test_sets
        .iter()
        .enumerate()
        .map(|(index, test)| FoldAssignment {
            index,
            train: active
                .iter()
                .map(|r| r.sample_id.as_str())
                .filter(|id| !test.contains(id))
                .map(String::from)
                .collect(),
            test: active
                .iter()
                .map(|r| r.sample_id.as_str())
                .filter(|id| test.contains(id))
                .map(String::from)
                .collect(),
            held_out_group: None,
        })
        .collect())
}

fn category_folds(active: &[&SampleRecord]) -> Result<Vec<FoldAssignment>, SplitError> {
    let present: BTreeSet<Category> = active.iter().map(|r| r.category).collect();
    let available = Category::HELD_OUT.iter().filter(|c| present.contains(c)).count();
    if available < Category::HELD_OUT.len() {
        return Err(SplitError::TooFewGroups {
            kind: SplitKind::CategoryS4,
            needed: Category::HELD_OUT.len(),
            available,
        });
    }
    Ok(Category::HELD_OUT
        .iter()
        .enumerate()
        .map(|(index, &held_out)| {
            let (test, train): (Vec<&SampleRecord>, Vec<&SampleRecord>) =
                active.iter().copied().partition(|r| r.category == held_out);
            FoldAssignment {
                index,
                train: train.iter().map(|r| r.sample_id.clone()).collect(),
                test: test.iter().map(|r| r.sample_id.clone()).collect(),
                held_out_group: Some(held_out.as_str().to_string()),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    /// The plan's fold count does not match its strategy.
    FoldCount,
    /// A sample id is not in the manifest, or is discarded.
    UnknownSample,
    /// An id appears in both train and test of one fold.
    Disjointness,
    /// An active sample is in neither train nor test of a fold.
    Partition,
    /// An active sample is not tested exactly once across folds.
    Coverage,
    /// A group has members on both sides of a fold.
    GroupPurity,
    /// S4 folds must hold out each non-gear category once.
    HeldOutGroup,
    /// S4 gear wheels must be in every train set and no test set.
    GearWheel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub fold: Option<usize>,
    pub rule: Rule,
    pub ids: Vec<String>,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.fold {
            Some(k) => write!(f, "fold {k}: {:?}: {}", self.rule, self.ids.join(", ")),
            None => write!(f, "plan: {:?}: {}", self.rule, self.ids.join(", ")),
        }
    }
}

/// Lists every invariant the plan breaks against `manifest`. Empty means
/// the plan is valid.
pub fn verify_split(manifest: &Manifest, plan: &SplitPlan) -> Vec<Violation> {
    let mut out = Vec::new();
    let kind = plan.strategy.kind;
    let index = manifest.index();
    let active: BTreeSet<&str> = manifest.active().map(|r| r.sample_id.as_str()).collect();

    let expected_folds = match kind {
        SplitKind::CategoryS4 => 4,
        _ => plan.strategy.folds,
    };
    if plan.folds.len() != expected_folds || plan.strategy.validate().is_err() {
        out.push(Violation {
            fold: None,
            rule: Rule::FoldCount,
            ids: alloc::vec![format!(
                "expected {expected_folds} folds, plan has {} (strategy folds = {})",
                plan.folds.len(),
                plan.strategy.folds
            )],
        });
    }

    let mut test_count: BTreeMap<&str, usize> = BTreeMap::new();
    for fold in &plan.folds {
        let k = Some(fold.index);
        let train: BTreeSet<&str> = fold.train.iter().map(String::as_str).collect();
        let test: BTreeSet<&str> = fold.test.iter().map(String::as_str).collect();

        let unknown: Vec<String> = train
            .union(&test)
            .filter(|id| !active.contains(*id))
            .map(|id| id.to_string())
            .collect();
        push(&mut out, k, Rule::UnknownSample, unknown);

        push(
            &mut out,
            k,
            Rule::Disjointness,
            train.intersection(&test).map(|id| id.to_string()).collect(),
        );

        push(
            &mut out,
            k,
            Rule::Partition,
            active
                .iter()
                .filter(|id| !train.contains(*id) && !test.contains(*id))
                .map(|id| id.to_string())
                .collect(),
        );

        for id in &test {
            *test_count.entry(id).or_default() += 1;
        }

        match kind {
            SplitKind::RandomS1 => {}
            SplitKind::AcquisitionS2 | SplitKind::FunctionalPartS3 => {
                let group_of = |id: &&str| index.get(id).map(|r| kind.group_key(r));
                let test_groups: BTreeSet<String> = test.iter().filter_map(group_of).collect();
                let straddling: Vec<String> = train
                    .iter()
                    .filter(|id| !test.contains(*id))
                    .filter(|id| group_of(id).is_some_and(|g| test_groups.contains(&g)))
                    .map(|id| id.to_string())
                    .collect();
                push(&mut out, k, Rule::GroupPurity, straddling);
            }
            SplitKind::CategoryS4 => {
                let held_out = fold.held_out_group.as_deref().and_then(Category::parse);
                match held_out {
                    Some(c) if c != Category::GearWheel => {
                        let mut wrong: Vec<String> = Vec::new();
                        for id in &test {
                            if let Some(r) = index.get(id) {
                                if r.category != c && r.category != Category::GearWheel {
                                    wrong.push(id.to_string());
                                }
                            }
                        }
                        for id in &train {
                            if let Some(r) = index.get(id) {
                                if r.category == c && !test.contains(id) {
                                    wrong.push(id.to_string());
                                }
                            }
                        }
                        push(&mut out, k, Rule::GroupPurity, wrong);
                    }
                    _ => out.push(Violation {
                        fold: k,
                        rule: Rule::HeldOutGroup,
                        ids: alloc::vec![format!("{:?}", fold.held_out_group)],
                    }),
                }
                let gear: Vec<String> = active
                    .iter()
                    .filter(|id| index[*id].category == Category::GearWheel)
                    .filter(|id| test.contains(*id) || !train.contains(*id))
                    .map(|id| id.to_string())
                    .collect();
                push(&mut out, k, Rule::GearWheel, gear);
            }
        }
    }

    if kind == SplitKind::CategoryS4 {
        let held: Vec<Option<Category>> = plan
            .folds
            .iter()
            .map(|f| f.held_out_group.as_deref().and_then(Category::parse))
            .collect();
        let mut missing = Vec::new();
        for c in Category::HELD_OUT {
            if held.iter().filter(|h| **h == Some(c)).count() != 1 {
                missing.push(c.as_str().to_string());
            }
        }
        push(&mut out, None, Rule::HeldOutGroup, missing);
    }

    let coverage: Vec<String> = active
        .iter()
        .filter(|id| !(kind == SplitKind::CategoryS4 && index[*id].category == Category::GearWheel))
        .filter(|id| test_count.get(*id).copied().unwrap_or(0) != 1)
        .map(|id| id.to_string())
        .collect();
    push(&mut out, None, Rule::Coverage, coverage);
    out
}

fn push(out: &mut Vec<Violation>, fold: Option<usize>, rule: Rule, ids: Vec<String>) {
    if !ids.is_empty() {
        out.push(Violation { fold, rule, ids });
    }
}
