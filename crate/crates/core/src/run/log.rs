//! JSON-lines run log: one header line, then one [`EvalRecord`] per line.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RunError;
use crate::eval::EvalRecord;

pub const RUN_LOG_FORMAT: &str = "vqa-harness-run-log/1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunLogHeader {
    pub format: String,
    pub plan_hash: String,
    pub normalization: String,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub header: RunLogHeader,
    pub records: Vec<EvalRecord>,
    /// A final line that did not parse, typically from an interrupted write.
    pub torn_tail: bool,
}

/// Reads a run log. Returns `None` when the file does not exist. A malformed
/// final line is tolerated and reported through `torn_tail`; a malformed line
/// anywhere else is an error.
pub fn read_run_log(path: &Path) -> Result<Option<RunLog>, RunError> {
    let file = match std::fs::File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(RunError::io(path)(e)),
    };
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(RunError::io(path))?;
    let bad = |line: usize, message: String| RunError::RunLog {
        path: path.to_path_buf(),
        message: format!("line {line}: {message}"),
    };
    let Some(first) = lines.first() else {
        return Err(bad(1, "empty run log".into()));
    };
    let header: RunLogHeader =
        serde_json::from_str(first).map_err(|e| bad(1, format!("bad header: {e}")))?;
    if header.format != RUN_LOG_FORMAT {
        return Err(bad(1, format!("unsupported format `{}`", header.format)));
    }
    let mut records = Vec::with_capacity(lines.len() - 1);
    let mut torn_tail = false;
    let last = lines.len() - 1;
    for (i, line) in lines.iter().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<EvalRecord>(line) {
            Ok(r) => records.push(r),
            Err(_) if i == last => torn_tail = true,
            Err(e) => return Err(bad(i + 1, e.to_string())),
        }
    }
    Ok(Some(RunLog {
        header,
        records,
        torn_tail,
    }))
}

pub(crate) fn header_line(header: &RunLogHeader) -> String {
    serde_json::to_string(header).expect("headers serialize")
}

pub(crate) fn record_line(record: &EvalRecord) -> String {
    serde_json::to_string(record).expect("records serialize")
}

/// Atomically replaces the log with `header` followed by `records`, in the given order.
pub fn write_run_log(
    path: &Path,
    header: &RunLogHeader,
    records: &[EvalRecord],
) -> Result<(), RunError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(RunError::io(dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(RunError::io(dir))?;
    {
        let mut w = std::io::BufWriter::new(tmp.as_file_mut());
        writeln!(w, "{}", header_line(header)).map_err(RunError::io(path))?;
        for r in records {
            writeln!(w, "{}", record_line(r)).map_err(RunError::io(path))?;
        }
        w.flush().map_err(RunError::io(path))?;
    }
    tmp.as_file().sync_all().map_err(RunError::io(path))?;
    tmp.persist(path).map_err(|e| RunError::io(path)(e.error))?;
    Ok(())
}
