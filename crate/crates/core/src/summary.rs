//! Label counts per grouping key.

use alloc::collections::BTreeMap;
use alloc::string::String;

use serde::{Deserialize, Serialize};

use crate::record::{Category, Label, Manifest};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub ok: usize,
    pub nok: usize,
    pub discard: usize,
}

impl LabelCounts {
    fn add(&mut self, label: Label) {
        match label {
            Label::Ok => self.ok += 1,
            Label::Nok => self.nok += 1,
            Label::Discard => self.discard += 1,
        }
    }

    /// OK + nOK; discarded patches are not annotated samples.
    pub fn annotated(&self) -> usize {
        self.ok + self.nok
    }

    /// Share of OK among annotated samples, 0 for an empty group.
    pub fn ok_ratio(&self) -> f64 {
        match self.annotated() {
            0 => 0.0,
            n => self.ok as f64 / n as f64,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub labels: LabelCounts,
    pub total_annotated: usize,
    pub by_functional_part: BTreeMap<String, LabelCounts>,
    pub by_category: BTreeMap<Category, LabelCounts>,
    /// OK share per functional part id.
    pub ok_ratio_by_functional_part: BTreeMap<String, f64>,
    pub ok_ratio_by_category: BTreeMap<Category, f64>,
}

pub fn summarize(manifest: &Manifest) -> DatasetSummary {
    let mut summary = DatasetSummary::default();
    for record in &manifest.records {
        summary.labels.add(record.label);
        summary
            .by_functional_part
            .entry(record.functional_part_id.clone())
            .or_default()
            .add(record.label);
        summary
            .by_category
            .entry(record.category)
            .or_default()
            .add(record.label);
    }
    summary.total_annotated = summary.labels.annotated();
    summary.ok_ratio_by_functional_part = summary
        .by_functional_part
        .iter()
        .map(|(k, c)| (k.clone(), c.ok_ratio()))
        .collect();
    summary.ok_ratio_by_category = summary
        .by_category
        .iter()
        .map(|(k, c)| (*k, c.ok_ratio()))
        .collect();
    summary
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::tests::record;

    #[test]
    fn empty_manifest_is_all_zero() {
        let s = summarize(&Manifest::default());
        assert_eq!(s.labels, LabelCounts::default());
        assert_eq!(s.total_annotated, 0);
        assert!(s.by_category.is_empty());
    }

    #[test]
    fn toy_ratio() {
        let m = Manifest::new(alloc::vec![
            record("a", Label::Ok, "p1", Category::GearWheel),
            record("b", Label::Ok, "p1", Category::GearWheel),
            record("c", Label::Nok, "p2", Category::Spline),
        ])
        .unwrap();
        let s = summarize(&m);
        assert_eq!(s.labels.ok, 2);
        assert_eq!(s.labels.nok, 1);
        assert_eq!(s.labels.ok_ratio(), 2.0 / 3.0);
        assert_eq!(s.ok_ratio_by_category[&Category::Spline], 0.0);
        let group_total: usize = s.by_functional_part.values().map(|c| c.annotated()).sum();
        assert_eq!(group_total, s.total_annotated);
    }
}
