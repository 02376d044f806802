//! Recorded request/response pairs. Each file holds
//! `{"request": {method, path, body?}, "response": {status, body}}`; files
//! replay in name order against one service, and numeric time fields are
//! replaced by `"<ts>"` before comparison.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::Service;

pub const TIME_KEYS: &[&str] = &[
    "timestamp",
    "created_at",
    "submitted_at",
    "started_at",
    "finished_at",
    "last_ts",
    "sim_time",
];

pub fn normalize(v: &mut Value) {
    match v {
        Value::Object(map) => {
            for (k, val) in map.iter_mut() {
                if TIME_KEYS.contains(&k.as_str()) && val.is_number() {
                    *val = json!("<ts>");
                } else {
                    normalize(val);
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(normalize),
        _ => {}
    }
}

pub fn files(dir: &Path) -> io::Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for e in fs::read_dir(dir)? {
        let p = e?.path();
        if p.extension().is_some_and(|x| x == "json") {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Replayed {
    pub name: String,
    pub method: String,
    pub path: String,
    pub status: u16,
    pub matched: bool,
}

/// Replays every file in `dir` against `service`. With `update`, the
/// observed responses are written back.
pub fn replay(service: &Service, dir: &Path, update: bool) -> io::Result<Vec<Replayed>> {
    let mut out = Vec::new();
    for path in files(dir)? {
        let text = fs::read_to_string(&path)?;
        let mut doc: Value = serde_json::from_str(&text).map_err(io::Error::other)?;
        let method = doc["request"]["method"].as_str().unwrap_or_default().to_string();
        let target = doc["request"]["path"].as_str().unwrap_or_default().to_string();
        let body = match doc["request"].get("body") {
            Some(b) => serde_json::to_vec(b).map_err(io::Error::other)?,
            None => Vec::new(),
        };
        let resp = service.handle(&method, &target, &body);
        let mut got = json!({ "status": resp.status, "body": resp.body });
        normalize(&mut got);
        doc["response"] = got;
        let rendered = serde_json::to_string_pretty(&doc).map_err(io::Error::other)? + "\n";
        if update {
            fs::write(&path, &rendered)?;
        }
        out.push(Replayed {
            name: path.file_stem().unwrap_or_default().to_string_lossy().into_owned(),
            method,
            path: target,
            status: resp.status,
            matched: rendered == text,
        });
    }
    Ok(out)
}
