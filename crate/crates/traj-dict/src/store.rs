//! Versioned dictionary persistence.
//!
//! Header line with format version, build inputs, entry count, and a
//! SHA-256 checksum over the entry lines; then one JSON line per entry with
//! every float at 18 significant digits. `load(persist(d))` is bit-exact.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde_json::Value;
use sha2::{Digest, Sha256};
use traj_core::corpus::{emit_json, format_float};
use traj_core::{MotionFeatures, State, TrajKind, Trajectory};

use crate::bin::BinIndex;
use crate::build::{BuildManifest, DictionaryEntry, TrajectoryDictionary};
use crate::error::{DictError, Result};

const FORMAT_VERSION: u64 = 1;

fn entry_line(e: &DictionaryEntry) -> String {
    let mut out = String::with_capacity(4096);
    out.push_str("{\"source_dataset\":");
    out.push_str(&serde_json::to_string(&e.source_dataset).expect("string encodes"));
    out.push_str(",\"bin\":[");
    for (i, b) in e.bin.0.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&b.to_string());
    }
    out.push_str("],\"features\":[");
    for (i, f) in e.features.to_array().iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&format_float(*f));
    }
    out.push_str("],\"dt\":");
    out.push_str(&format_float(e.history.dt));
    out.push_str(",\"history\":[");
    for (i, p) in e.history.points.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&format!(
            "[{},{},{},{},{}]",
            format_float(p.x),
            format_float(p.y),
            format_float(p.psi),
            format_float(p.v.unwrap_or(0.0)),
            format_float(p.omega.unwrap_or(0.0)),
        ));
    }
    out.push_str("],\"future\":[");
    for (i, p) in e.future.points.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&format!(
            "[{},{},{}]",
            format_float(p.x),
            format_float(p.y),
            format_float(p.psi),
        ));
    }
    out.push_str("]}");
    out
}

pub fn persist_dictionary(dict: &TrajectoryDictionary, path: &Path) -> Result<()> {
    let entry_lines: Vec<String> = dict.entries.iter().map(entry_line).collect();
    let mut hasher = Sha256::new();
    for line in &entry_lines {
        hasher.update(line.as_bytes());
        hasher.update(b"\n");
    }
    let checksum = hex_string(&hasher.finalize());

    let mut header = String::from("{\"format_version\":");
    header.push_str(&FORMAT_VERSION.to_string());
    header.push_str(",\"r\":[");
    for (i, r) in dict.resolution.iter().enumerate() {
        if i > 0 {
            header.push(',');
        }
        header.push_str(&format_float(*r));
    }
    header.push_str("],\"n_clusters\":");
    header.push_str(&dict.n_clusters.to_string());
    header.push_str(",\"seed\":");
    header.push_str(&dict.seed.to_string());
    header.push_str(",\"sources\":");
    let sources = serde_json::to_value(&dict.manifest.sources).expect("sources encode");
    emit_json(&sources, &mut header);
    header.push_str(",\"record_count\":");
    header.push_str(&dict.manifest.record_count.to_string());
    header.push_str(",\"entry_count\":");
    header.push_str(&dict.entries.len().to_string());
    header.push_str(",\"checksum\":\"");
    header.push_str(&checksum);
    header.push_str("\"}");

    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{}", header)?;
    for line in &entry_lines {
        writeln!(w, "{}", line)?;
    }
    w.flush()?;
    Ok(())
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{:02x}", b)).collect()
}

fn malformed(line: usize, msg: impl Into<String>) -> DictError {
    DictError::Malformed {
        line,
        msg: msg.into(),
    }
}

fn f64_array<const N: usize>(v: &Value, line: usize, key: &str) -> Result<[f64; N]> {
    let arr = v[key]
        .as_array()
        .ok_or_else(|| malformed(line, format!("missing {key}")))?;
    if arr.len() != N {
        return Err(malformed(line, format!("{key} must have {N} elements")));
    }
    let mut out = [0.0; N];
    for (i, x) in arr.iter().enumerate() {
        out[i] = x
            .as_f64()
            .ok_or_else(|| malformed(line, format!("bad number in {key}")))?;
    }
    Ok(out)
}

pub fn load_dictionary(path: &Path) -> Result<TrajectoryDictionary> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines();

    let header_line = lines.next().ok_or_else(|| malformed(1, "empty file"))??;
    let header: Value =
        serde_json::from_str(&header_line).map_err(|e| malformed(1, e.to_string()))?;
    let version = header["format_version"]
        .as_u64()
        .ok_or_else(|| malformed(1, "missing format_version"))?;
    if version != FORMAT_VERSION {
        return Err(DictError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let resolution: [f64; 5] = f64_array(&header, 1, "r")?;
    let n_clusters = header["n_clusters"]
        .as_u64()
        .ok_or_else(|| malformed(1, "missing n_clusters"))? as usize;
    let seed = header["seed"]
        .as_u64()
        .ok_or_else(|| malformed(1, "missing seed"))?;
    let sources: Vec<String> = header["sources"]
        .as_array()
        .ok_or_else(|| malformed(1, "missing sources"))?
        .iter()
        .map(|s| s.as_str().map(String::from))
        .collect::<Option<_>>()
        .ok_or_else(|| malformed(1, "bad sources"))?;
    let record_count = header["record_count"]
        .as_u64()
        .ok_or_else(|| malformed(1, "missing record_count"))? as usize;
    let entry_count = header["entry_count"]
        .as_u64()
        .ok_or_else(|| malformed(1, "missing entry_count"))? as usize;
    let checksum = header["checksum"]
        .as_str()
        .ok_or_else(|| malformed(1, "missing checksum"))?
        .to_string();

    let mut hasher = Sha256::new();
    let mut entries = Vec::with_capacity(entry_count);
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 2;
        hasher.update(line.as_bytes());
        hasher.update(b"\n");
        let v: Value = serde_json::from_str(&line).map_err(|e| malformed(lineno, e.to_string()))?;
        let source_dataset = v["source_dataset"]
            .as_str()
            .ok_or_else(|| malformed(lineno, "missing source_dataset"))?
            .to_string();
        let bin_arr = v["bin"]
            .as_array()
            .ok_or_else(|| malformed(lineno, "missing bin"))?;
        if bin_arr.len() != 5 {
            return Err(malformed(lineno, "bin must have 5 elements"));
        }
        let mut bin = [0i64; 5];
        for (k, x) in bin_arr.iter().enumerate() {
            bin[k] = x
                .as_i64()
                .ok_or_else(|| malformed(lineno, "bad bin index"))?;
        }
        let features: [f64; 5] = f64_array(&v, lineno, "features")?;
        let dt = v["dt"]
            .as_f64()
            .ok_or_else(|| malformed(lineno, "missing dt"))?;
        let hist_rows = v["history"]
            .as_array()
            .ok_or_else(|| malformed(lineno, "missing history"))?;
        let mut history_points = Vec::with_capacity(hist_rows.len());
        for row in hist_rows {
            let row = row
                .as_array()
                .ok_or_else(|| malformed(lineno, "bad history row"))?;
            if row.len() != 5 {
                return Err(malformed(lineno, "history row must have 5 numbers"));
            }
            let vals: Vec<f64> = row
                .iter()
                .map(|x| x.as_f64())
                .collect::<Option<_>>()
                .ok_or_else(|| malformed(lineno, "bad number in history"))?;
            history_points.push(State::full(vals[0], vals[1], vals[2], vals[3], vals[4]));
        }
        let fut_rows = v["future"]
            .as_array()
            .ok_or_else(|| malformed(lineno, "missing future"))?;
        let mut future_points = Vec::with_capacity(fut_rows.len());
        for row in fut_rows {
            let row = row
                .as_array()
                .ok_or_else(|| malformed(lineno, "bad future row"))?;
            if row.len() != 3 {
                return Err(malformed(lineno, "future row must have 3 numbers"));
            }
            let vals: Vec<f64> = row
                .iter()
                .map(|x| x.as_f64())
                .collect::<Option<_>>()
                .ok_or_else(|| malformed(lineno, "bad number in future"))?;
            future_points.push(State::pose(vals[0], vals[1], vals[2]));
        }
        entries.push(DictionaryEntry {
            history: Trajectory {
                points: history_points,
                dt,
                kind: TrajKind::History,
            },
            future: Trajectory {
                points: future_points,
                dt,
                kind: TrajKind::Future,
            },
            features: MotionFeatures::from_array(features),
            bin: BinIndex(bin),
            source_dataset,
        });
    }

    if entries.len() != entry_count {
        return Err(malformed(
            entries.len() + 2,
            format!("expected {} entries, found {}", entry_count, entries.len()),
        ));
    }
    if hex_string(&hasher.finalize()) != checksum {
        return Err(DictError::ChecksumMismatch);
    }

    Ok(TrajectoryDictionary {
        resolution,
        n_clusters,
        seed,
        entries,
        manifest: BuildManifest {
            sources,
            record_count,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::build::{build_dictionary, DictConfig};
    use traj_core::synth::{gen_scenario, ScenarioConfig};

    fn sample_dict() -> TrajectoryDictionary {
        let cfg = ScenarioConfig::new("src", 13);
        let records: Vec<_> = (0..60).map(|i| gen_scenario(&cfg, i).unwrap()).collect();
        build_dictionary(&records, &DictConfig::default(), vec!["src.jsonl".into()]).unwrap()
    }

    #[test]
    fn round_trip_compares_equal() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dict.jsonl");
        let dict = sample_dict();
        persist_dictionary(&dict, &path).unwrap();
        let back = load_dictionary(&path).unwrap();
        assert_eq!(dict, back);
        // Persisting the loaded copy reproduces the file byte for byte.
        let path2 = dir.path().join("dict2.jsonl");
        persist_dictionary(&back, &path2).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn unknown_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dict.jsonl");
        let dict = sample_dict();
        persist_dictionary(&dict, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let patched = text.replacen("\"format_version\":1", "\"format_version\":9", 1);
        std::fs::write(&path, patched).unwrap();
        assert!(matches!(
            load_dictionary(&path),
            Err(DictError::VersionMismatch { found: 9, .. })
        ));
    }

    #[test]
    fn truncated_file_is_rejected_without_partial_data() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dict.jsonl");
        let dict = sample_dict();
        assert!(dict.len() >= 2);
        persist_dictionary(&dict, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let kept: Vec<&str> = text.lines().take(dict.len()).collect(); // drops the last entry
        std::fs::write(&path, kept.join("\n") + "\n").unwrap();
        assert!(matches!(
            load_dictionary(&path),
            Err(DictError::Malformed { .. })
        ));
    }

    #[test]
    fn reordered_entries_fail_the_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dict.jsonl");
        let dict = sample_dict();
        persist_dictionary(&dict, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        assert!(lines.len() >= 3, "need at least two entries");
        let n = lines.len();
        assert_ne!(lines[n - 1], lines[n - 2], "entries must differ");
        lines.swap(n - 1, n - 2);
        std::fs::write(&path, lines.join("\n") + "\n").unwrap();
        assert!(matches!(
            load_dictionary(&path),
            Err(DictError::ChecksumMismatch)
        ));
    }
}
