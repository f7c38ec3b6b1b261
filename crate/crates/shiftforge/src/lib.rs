//! File formats, training runs, the review service and the command line
//! around `shiftforge-core`.

pub mod cli;
pub mod config;
pub mod export;
pub mod fsio;
pub mod images;
pub mod ingest;
pub mod losscheck;
pub mod manifest_io;
pub mod review_io;
pub mod run;
pub mod server;
pub mod weights;

use manifest_io::ManifestIoError;

/// Marks an error as caused by bad input rather than a failing
/// environment.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct Invalid(pub String);

/// 1 for validation errors, 2 for everything else.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    let invalid = err.chain().any(|e| {
        e.is::<Invalid>()
            || e.is::<clap::Error>()
            || e
                .downcast_ref::<ManifestIoError>()
                .is_some_and(|m| !matches!(m, ManifestIoError::Io { .. }))
    });
    if invalid {
        1
    } else {
        2
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::Context;

    #[test]
    fn exit_codes_follow_the_chain() {
        let e: anyhow::Error = Invalid("bad".into()).into();
        assert_eq!(exit_code(&e.context("while splitting")), 1);
        let io = std::fs::read("/nonexistent/x").context("reading");
        assert_eq!(exit_code(&io.unwrap_err()), 2);
        let m = manifest_io::parse_manifest("{", std::path::Path::new("m.jsonl")).unwrap_err();
        assert_eq!(exit_code(&anyhow::Error::new(m)), 1);
    }
}
