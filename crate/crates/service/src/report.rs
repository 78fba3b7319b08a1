//! Batch analysis over stored sessions and atomic report output.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};

use classroom_core::fias::{
    build_matrix, compute_metrics, label_utterances, report, sum_matrices, EncodedSession, FiasError, FiasMatrix,
    FiasReport, RuleLabeler,
};
use classroom_core::SessionRecord;

/// Labels each record with the rule labeler and reports on the summed matrix.
pub fn fias_report(records: &[SessionRecord]) -> Result<FiasReport, FiasError> {
    let mut encoded = Vec::with_capacity(records.len());
    for r in records {
        encoded.push(label_utterances(r, &RuleLabeler::for_record(r))?);
    }
    encoded_report(&encoded)
}

pub fn encoded_report(sessions: &[EncodedSession]) -> Result<FiasReport, FiasError> {
    let matrices = sessions.iter().map(build_matrix).collect::<Result<Vec<FiasMatrix>, _>>()?;
    let total = sum_matrices(&matrices);
    Ok(report(&total, &compute_metrics(&total)?))
}

/// Expands `pattern` to session files. Files without a header line (such as
/// the store index) are skipped with a warning.
pub fn load_records(pattern: &str) -> anyhow::Result<Vec<SessionRecord>> {
    let mut out = Vec::new();
    for path in expand(pattern)? {
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        match SessionRecord::from_jsonl(&text) {
            Ok(r) => out.push(r),
            Err(classroom_core::store::StoreError::MissingHeader) => {
                log::warn!("skipping {}: not a session file", path.display())
            }
            Err(classroom_core::store::StoreError::Corrupt { line: 1, .. }) => {
                log::warn!("skipping {}: not a session file", path.display())
            }
            Err(e) => return Err(e).with_context(|| format!("loading {}", path.display())),
        }
    }
    if out.is_empty() {
        bail!("no session files match `{pattern}`");
    }
    Ok(out)
}

pub fn expand(pattern: &str) -> anyhow::Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for entry in glob::glob(pattern).with_context(|| format!("bad glob `{pattern}`"))? {
        let path = entry?;
        if path.is_file() {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

/// Writes `contents` to `path` via a temporary file in the same directory, so
/// readers see either the old file or the complete new one.
pub fn write_atomic(path: &Path, contents: &[u8]) -> anyhow::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Writes to `out` atomically, or to stdout when `out` is `None`.
pub fn emit(out: Option<&Path>, contents: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => write_atomic(path, contents.as_bytes()),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(contents.as_bytes())?;
            if !contents.ends_with('\n') {
                stdout.write_all(b"\n")?;
            }
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_whole_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out/report.json");
        write_atomic(&path, b"first").unwrap();
        write_atomic(&path, b"second").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "second");
        assert_eq!(fs::read_dir(path.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn encoded_report_sums_sessions() {
        let a = EncodedSession::from_codes("a", &[5, 5, 9]).unwrap();
        let b = EncodedSession::from_codes("b", &[5, 8]).unwrap();
        let r = encoded_report(&[a, b]).unwrap();
        assert_eq!(r.matrix.total(), 7);
        assert_eq!(r.matrix.at(10, 5), 2);
    }

    #[test]
    fn glob_without_session_files_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("index.jsonl"), "{\"session_id\":\"x\"}\n").unwrap();
        let pattern = format!("{}/*.jsonl", dir.path().display());
        assert!(load_records(&pattern).is_err());
    }
}
