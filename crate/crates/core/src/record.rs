//! Annotated sample records and manifest integrity rules.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

/// Current manifest schema version.
pub const SCHEMA_VERSION: u32 = 1;

/// Quality label of an image patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Ok,
    Nok,
    /// Excluded from training and evaluation; the file stays on disk.
    Discard,
}

impl Label {
    /// Class index used by the classifiers: OK = 0, nOK = 1.
    pub fn class_index(self) -> Option<usize> {
        match self {
            Label::Ok => Some(0),
            Label::Nok => Some(1),
            Label::Discard => None,
        }
    }

    pub fn from_class_index(index: usize) -> Option<Label> {
        match index {
            0 => Some(Label::Ok),
            1 => Some(Label::Nok),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Ok => "ok",
            Label::Nok => "nok",
            Label::Discard => "discard",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Component category of a functional part.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    GearWheel,
    SynchronizerRingCone,
    SynchronizerBody,
    SynchronizerCollar,
    Spline,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::GearWheel,
        Category::SynchronizerRingCone,
        Category::SynchronizerBody,
        Category::SynchronizerCollar,
        Category::Spline,
    ];

    /// The categories that take turns as the held-out test group.
    pub const HELD_OUT: [Category; 4] = [
        Category::SynchronizerRingCone,
        Category::SynchronizerBody,
        Category::SynchronizerCollar,
        Category::Spline,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::GearWheel => "gear_wheel",
            Category::SynchronizerRingCone => "synchronizer_ring_cone",
            Category::SynchronizerBody => "synchronizer_body",
            Category::SynchronizerCollar => "synchronizer_collar",
            Category::Spline => "spline",
        }
    }

    pub fn parse(s: &str) -> Option<Category> {
        Category::ALL.into_iter().find(|c| c.as_str() == s)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transmission {
    Automatic,
    Manual,
}

/// Which flank of the tooth was imaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    A,
    B,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::A => "a",
            Side::B => "b",
        })
    }
}

/// One annotated image patch with its grouping metadata.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub sample_id: String,
    pub image_path: String,
    pub label: Label,
    pub part_id: String,
    pub functional_part_id: String,
    pub category: Category,
    pub transmission: Transmission,
    pub side: Side,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patch_origin: Option<(u32, u32)>,
}

impl SampleRecord {
    pub fn is_active(&self) -> bool {
        self.label != Label::Discard
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ManifestError {
    #[error("record {index}: duplicate sample_id `{sample_id}`")]
    DuplicateId { index: usize, sample_id: String },
    #[error("record {index}: functional_part_id `{functional_part_id}` is mapped to both {first} and {second}")]
    InconsistentCategory {
        index: usize,
        functional_part_id: String,
        first: Category,
        second: Category,
    },
    #[error("record {index} (`{sample_id}`): empty field `{field}`")]
    EmptyField {
        index: usize,
        sample_id: String,
        field: &'static str,
    },
    #[error("unsupported schema_version {0}")]
    UnsupportedSchema(u32),
}

impl ManifestError {
    /// Zero-based index of the offending record, if the error points at one.
    pub fn record_index(&self) -> Option<usize> {
        match self {
            ManifestError::DuplicateId { index, .. }
            | ManifestError::InconsistentCategory { index, .. }
            | ManifestError::EmptyField { index, .. } => Some(*index),
            ManifestError::UnsupportedSchema(_) => None,
        }
    }
}

/// An ordered, validated collection of sample records.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub records: Vec<SampleRecord>,
}

impl Default for Manifest {
    fn default() -> Self {
        Manifest {
            schema_version: SCHEMA_VERSION,
            records: Vec::new(),
        }
    }
}

impl Manifest {
    /// Builds a manifest and checks every invariant.
    pub fn new(records: Vec<SampleRecord>) -> Result<Self, ManifestError> {
        let manifest = Manifest {
            schema_version: SCHEMA_VERSION,
            records,
        };
        manifest.validate()?;
        Ok(manifest)
    }

    /// Checks, in record order, that ids are unique, grouping keys are
    /// populated and each functional part id maps to a single category.
    /// The first violation wins.
    pub fn validate(&self) -> Result<(), ManifestError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ManifestError::UnsupportedSchema(self.schema_version));
        }
        let mut seen = BTreeSet::new();
        let mut categories: BTreeMap<&str, Category> = BTreeMap::new();
        for (index, record) in self.records.iter().enumerate() {
            if record.sample_id.is_empty() {
                return Err(ManifestError::EmptyField {
                    index,
                    sample_id: String::new(),
                    field: "sample_id",
                });
            }
            if !seen.insert(record.sample_id.as_str()) {
                return Err(ManifestError::DuplicateId {
                    index,
                    sample_id: record.sample_id.clone(),
                });
            }
            if record.is_active() {
                for (field, value) in [
                    ("image_path", &record.image_path),
                    ("part_id", &record.part_id),
                    ("functional_part_id", &record.functional_part_id),
                ] {
                    if value.is_empty() {
                        return Err(ManifestError::EmptyField {
                            index,
                            sample_id: record.sample_id.clone(),
                            field,
                        });
                    }
                }
            }
            match categories.get(record.functional_part_id.as_str()) {
                Some(&first) if first != record.category => {
                    return Err(ManifestError::InconsistentCategory {
                        index,
                        functional_part_id: record.functional_part_id.clone(),
                        first,
                        second: record.category,
                    });
                }
                Some(_) => {}
                None => {
                    categories.insert(&record.functional_part_id, record.category);
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, sample_id: &str) -> Option<&SampleRecord> {
        self.records.iter().find(|r| r.sample_id == sample_id)
    }

    /// Index from sample id to record.
    pub fn index(&self) -> BTreeMap<&str, &SampleRecord> {
        self.records
            .iter()
            .map(|r| (r.sample_id.as_str(), r))
            .collect()
    }

    /// Records that take part in training and evaluation.
    pub fn active(&self) -> impl Iterator<Item = &SampleRecord> {
        self.records.iter().filter(|r| r.is_active())
    }
}
