//! Line-delimited JSON manifest for human ranking of re-created images.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{EvalError, Result};
use crate::scoring::Rank;

/// One can-pair to grade. Raters fill in `rank`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub query_id: String,
    pub v_path: String,
    pub question: String,
    pub pred_m_path: String,
    pub gold_m_path: String,
    pub pred_answer: String,
    pub gold_answer: String,
    pub rank: Option<Rank>,
}

pub fn export_hr_manifest(rows: &[ManifestRow], path: &Path) -> Result<()> {
    let io = |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, r).expect("manifest rows serialize");
        out.push(b'\n');
    }
    fs::File::create(path).and_then(|mut f| f.write_all(&out)).map_err(io)
}

/// Read graded rows; every id in `expected` must be ranked exactly once and
/// no other ids may appear. Blank lines are skipped.
pub fn import_hr_ranks(path: &Path, expected: &BTreeSet<String>) -> Result<BTreeMap<String, Rank>> {
    let text = fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let err = |line: usize, msg: String| EvalError::Manifest {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut ranks = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value = serde_json::from_str(raw).map_err(|e| err(line, e.to_string()))?;
        let id = v
            .get("query_id")
            .and_then(|x| x.as_str())
            .ok_or_else(|| err(line, "missing string field `query_id`".into()))?;
        if !expected.contains(id) {
            return Err(err(line, format!("unknown query id `{id}`")));
        }
        let rank: Rank = match v.get("rank") {
            Some(serde_json::Value::String(s)) => s.parse().map_err(|m| err(line, m))?,
            Some(serde_json::Value::Null) | None => return Err(err(line, format!("`{id}` is not ranked"))),
            Some(other) => return Err(err(line, format!("rank must be a string, got {other}"))),
        };
        if ranks.insert(id.to_string(), rank).is_some() {
            return Err(err(line, format!("`{id}` ranked twice")));
        }
    }
    let missing: Vec<String> = expected.iter().filter(|id| !ranks.contains_key(*id)).cloned().collect();
    if !missing.is_empty() {
        return Err(EvalError::Coverage {
            path: path.to_path_buf(),
            missing,
        });
    }
    Ok(ranks)
}
