//! Review artifacts on disk: predictions gathered from run outputs and the
//! append-only decisions file.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use shiftforge_core::review::{average_predictions, ReviewDecision, SamplePrediction};
use shiftforge_core::train::CvReport;

use crate::fsio::{read_json, write_atomic};
use crate::run::RunDir;
use crate::Invalid;

/// Every held-out prediction of a report, fold by fold.
pub fn report_predictions(report: &CvReport) -> Vec<SamplePrediction> {
    report.folds.iter().flat_map(|f| f.predictions.iter().cloned()).collect()
}

/// Reads a report from a run directory or a report file.
pub fn read_report(path: &Path) -> anyhow::Result<CvReport> {
    if path.is_dir() {
        read_json(&RunDir::new(path).report())
    } else {
        read_json(path)
    }
}

/// Predictions of one run, or the probability average of several.
pub fn gather_predictions(runs: &[PathBuf]) -> anyhow::Result<Vec<SamplePrediction>> {
    let sets = runs
        .iter()
        .map(|p| read_report(p).map(|r| report_predictions(&r)))
        .collect::<anyhow::Result<Vec<_>>>()?;
    match sets.len() {
        0 => bail!(Invalid(String::from("at least one run is required"))),
        1 => Ok(sets.into_iter().next().expect("one run")),
        _ => average_predictions(&sets).map_err(|e| Invalid(e.to_string()).into()),
    }
}

/// Parses decisions JSON-lines. A final line without a newline that fails
/// to parse is treated as an interrupted append and dropped; the returned
/// flag reports it.
pub fn parse_decisions(text: &str, path: &Path) -> anyhow::Result<(Vec<ReviewDecision>, bool)> {
    let mut out = Vec::new();
    let lines: Vec<&str> = text.split('\n').collect();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(d) => out.push(d),
            Err(_) if i + 1 == lines.len() => return Ok((out, true)),
            Err(e) => bail!(Invalid(format!("{}:{}: {e}", path.display(), i + 1))),
        }
    }
    Ok((out, false))
}

pub fn read_decisions(path: &Path) -> anyhow::Result<Vec<ReviewDecision>> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(parse_decisions(&text, path)?.0)
}

/// Append-only writer for the decisions file.
#[derive(Debug)]
pub struct DecisionLog {
    path: PathBuf,
    file: File,
}

impl DecisionLog {
    /// Opens (creating if needed) the file and replays what it holds.
    pub fn open(path: &Path) -> anyhow::Result<(DecisionLog, Vec<ReviewDecision>)> {
        let text = match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(e).with_context(|| format!("cannot read {}", path.display())),
        };
        let (decisions, truncated) = parse_decisions(&text, path)?;
        if truncated {
            log::warn!("{}: dropping an incomplete final line", path.display());
            let keep = text.rfind('\n').map_or(0, |i| i + 1);
            write_atomic(path, &text.as_bytes()[..keep])?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .with_context(|| format!("cannot open {}", path.display()))?;
        Ok((
            DecisionLog {
                path: path.to_path_buf(),
                file,
            },
            decisions,
        ))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes one line and syncs it to disk.
    pub fn append(&mut self, decision: &ReviewDecision) -> std::io::Result<()> {
        let mut line = serde_json::to_vec(decision).expect("serializable decision");
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use shiftforge_core::review::Action;

    fn decision(id: &str, action: Action, t: i64) -> ReviewDecision {
        ReviewDecision {
            sample_id: id.into(),
            action,
            reviewer_id: "r".into(),
            timestamp: t,
        }
    }

    #[test]
    fn log_appends_and_replays() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("decisions.jsonl");
        let (mut log, replayed) = DecisionLog::open(&path).unwrap();
        assert!(replayed.is_empty());
        log.append(&decision("a", Action::Flip, 1)).unwrap();
        log.append(&decision("b", Action::Keep, 2)).unwrap();
        drop(log);
        let (mut log, replayed) = DecisionLog::open(&path).unwrap();
        assert_eq!(replayed, [decision("a", Action::Flip, 1), decision("b", Action::Keep, 2)]);
        log.append(&decision("a", Action::Discard, 3)).unwrap();
        assert_eq!(read_decisions(&path).unwrap().len(), 3);
    }

    #[test]
    fn interrupted_tail_is_dropped_but_corruption_is_not() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let good = serde_json::to_string(&decision("a", Action::Keep, 1)).unwrap();
        fs::write(&path, format!("{good}\n{{\"sample_id\":\"b\",\"act")).unwrap();
        let (mut log, replayed) = DecisionLog::open(&path).unwrap();
        assert_eq!(replayed.len(), 1);
        log.append(&decision("c", Action::Flip, 2)).unwrap();
        assert_eq!(read_decisions(&path).unwrap().len(), 2);

        fs::write(&path, format!("{good}\nnot json\n{good}\n")).unwrap();
        let err = DecisionLog::open(&path).unwrap_err();
        assert!(err.to_string().contains("d.jsonl:2"), "{err}");
    }
}
