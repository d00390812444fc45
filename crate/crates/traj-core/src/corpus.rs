//! Line-delimited corpus format.
//!
//! A corpus file holds one JSON object per line. The first line is a manifest
//! (`{"manifest": ...}`) recording the generator config and seed; every other
//! line is one record with exactly the fields `dataset_id`, `scenario_id`,
//! `dt`, `history` (Hx5), `future` (Fx3), and optionally `neighbors`
//! (Nx(Hx5)). All floats are written with 18 significant digits so values
//! round-trip bit-exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Result, TrajError};
use crate::trajectory::{State, TrajKind, Trajectory};

/// One history-future pair plus optional neighbor histories, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusRecord {
    pub dataset_id: String,
    pub scenario_id: String,
    pub dt: f64,
    /// History states, each `[x, y, psi, v, omega]`.
    pub history: Vec<[f64; 5]>,
    /// Future states, each `[x, y, psi]`.
    pub future: Vec<[f64; 3]>,
    /// Neighbor histories in the same (ego) frame; empty when absent.
    pub neighbors: Vec<Vec<[f64; 5]>>,
}

impl CorpusRecord {
    pub fn history_trajectory(&self) -> Trajectory {
        states_from_rows5(&self.history, self.dt, TrajKind::History)
    }

    pub fn future_trajectory(&self) -> Trajectory {
        let points = self
            .future
            .iter()
            .map(|r| State::pose(r[0], r[1], r[2]))
            .collect();
        Trajectory {
            points,
            dt: self.dt,
            kind: TrajKind::Future,
        }
    }

    pub fn neighbor_trajectory(&self, i: usize) -> Trajectory {
        states_from_rows5(&self.neighbors[i], self.dt, TrajKind::History)
    }
}

fn states_from_rows5(rows: &[[f64; 5]], dt: f64, kind: TrajKind) -> Trajectory {
    let points = rows
        .iter()
        .map(|r| State::full(r[0], r[1], r[2], r[3], r[4]))
        .collect();
    Trajectory { points, dt, kind }
}

/// Format a float with 18 significant digits; parses back to the same bits.
pub fn format_float(x: f64) -> String {
    if x == 0.0 {
        // Preserve the sign of zero.
        return if x.is_sign_negative() { "-0" } else { "0" }.to_string();
    }
    format!("{:.17e}", x)
}

/// Emit a JSON value with [`format_float`] applied to every non-integer number.
pub fn emit_json(value: &serde_json::Value, out: &mut String) {
    match value {
        serde_json::Value::Null => out.push_str("null"),
        serde_json::Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        serde_json::Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                out.push_str(&i.to_string());
            } else if let Some(u) = n.as_u64() {
                out.push_str(&u.to_string());
            } else {
                out.push_str(&format_float(n.as_f64().unwrap()));
            }
        }
        serde_json::Value::String(s) => {
            out.push_str(&serde_json::to_string(s).expect("string encodes"))
        }
        serde_json::Value::Array(items) => {
            out.push('[');
            for (i, v) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                emit_json(v, out);
            }
            out.push(']');
        }
        serde_json::Value::Object(map) => {
            out.push('{');
            for (i, (k, v)) in map.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(k).expect("key encodes"));
                out.push(':');
                emit_json(v, out);
            }
            out.push('}');
        }
    }
}

fn push_rows<const W: usize>(out: &mut String, rows: &[[f64; W]]) {
    out.push('[');
    for (i, row) in rows.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push('[');
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&format_float(*v));
        }
        out.push(']');
    }
    out.push(']');
}

/// Serialize one record to its single-line form.
pub fn record_to_line(rec: &CorpusRecord) -> String {
    let mut out = String::with_capacity(4096);
    out.push_str("{\"dataset_id\":");
    out.push_str(&serde_json::to_string(&rec.dataset_id).expect("string encodes"));
    out.push_str(",\"scenario_id\":");
    out.push_str(&serde_json::to_string(&rec.scenario_id).expect("string encodes"));
    out.push_str(",\"dt\":");
    out.push_str(&format_float(rec.dt));
    out.push_str(",\"history\":");
    push_rows(&mut out, &rec.history);
    out.push_str(",\"future\":");
    push_rows(&mut out, &rec.future);
    if !rec.neighbors.is_empty() {
        out.push_str(",\"neighbors\":[");
        for (i, n) in rec.neighbors.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            push_rows(&mut out, n);
        }
        out.push(']');
    }
    out.push('}');
    out
}

#[derive(Deserialize)]
struct RecordDe {
    dataset_id: String,
    scenario_id: String,
    dt: f64,
    history: Vec<[f64; 5]>,
    future: Vec<[f64; 3]>,
    #[serde(default)]
    neighbors: Vec<Vec<[f64; 5]>>,
}

#[derive(Deserialize)]
struct ManifestDe {
    manifest: serde_json::Value,
}

/// Write a corpus file: the manifest line followed by one line per record.
pub fn write_corpus(
    path: &Path,
    manifest: &serde_json::Value,
    records: &[CorpusRecord],
) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    let mut line = String::from("{\"manifest\":");
    emit_json(manifest, &mut line);
    line.push('}');
    writeln!(w, "{}", line)?;
    for rec in records {
        writeln!(w, "{}", record_to_line(rec))?;
    }
    w.flush()?;
    Ok(())
}

/// Read a corpus file back into (manifest, records).
pub fn read_corpus(path: &Path) -> Result<(serde_json::Value, Vec<CorpusRecord>)> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut manifest = None;
    let mut records = Vec::new();
    let path_str = path.display().to_string();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if idx == 0 {
            let m: ManifestDe =
                serde_json::from_str(&line).map_err(|e| TrajError::MalformedCorpus {
                    path: path_str.clone(),
                    line: idx + 1,
                    msg: format!("expected manifest line: {}", e),
                })?;
            manifest = Some(m.manifest);
            continue;
        }
        let rec: RecordDe =
            serde_json::from_str(&line).map_err(|e| TrajError::MalformedCorpus {
                path: path_str.clone(),
                line: idx + 1,
                msg: e.to_string(),
            })?;
        records.push(CorpusRecord {
            dataset_id: rec.dataset_id,
            scenario_id: rec.scenario_id,
            dt: rec.dt,
            history: rec.history,
            future: rec.future,
            neighbors: rec.neighbors,
        });
    }
    let manifest = manifest.ok_or_else(|| TrajError::MalformedCorpus {
        path: path_str,
        line: 1,
        msg: "missing manifest line".to_string(),
    })?;
    Ok((manifest, records))
}

/// Read several corpus files in order, concatenating their records.
pub fn read_corpora(paths: &[impl AsRef<Path>]) -> Result<Vec<CorpusRecord>> {
    let mut all = Vec::new();
    for p in paths {
        let (_, mut recs) = read_corpus(p.as_ref())?;
        all.append(&mut recs);
    }
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_record(neighbors: usize) -> CorpusRecord {
        CorpusRecord {
            dataset_id: "ds-a".into(),
            scenario_id: "s000001".into(),
            dt: 0.1,
            history: (0..20)
                .map(|k| {
                    let t = k as f64;
                    [0.1 * t, -0.2 * t, 0.3, 5.0, 0.01]
                })
                .collect(),
            future: (0..80).map(|k| [0.5 * k as f64, 0.25, -0.1]).collect(),
            neighbors: (0..neighbors)
                .map(|n| (0..20).map(|k| [k as f64, n as f64, 0.0, 1.0, 0.0]).collect())
                .collect(),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let records = vec![sample_record(0), sample_record(3)];
        let manifest = serde_json::json!({"seed": 7, "note": "test"});
        write_corpus(&path, &manifest, &records).unwrap();
        let (m, back) = read_corpus(&path).unwrap();
        assert_eq!(m["seed"], 7);
        assert_eq!(back, records);
    }

    #[test]
    fn awkward_floats_survive_the_text_form() {
        for &x in &[
            0.1,
            -0.0,
            -0.30000000000000004,
            1.0 / 3.0,
            f64::MIN_POSITIVE,
            1.7976931348623157e308,
            -2.2250738585072014e-308,
            123456.789,
        ] {
            let s = format_float(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{} -> {}", x, s);
        }
    }

    #[test]
    fn missing_manifest_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        std::fs::write(&path, record_to_line(&sample_record(0)) + "\n").unwrap();
        assert!(matches!(
            read_corpus(&path),
            Err(TrajError::MalformedCorpus { .. })
        ));
    }

    #[test]
    fn neighbors_field_is_optional_on_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        write_corpus(&path, &serde_json::json!({}), &[sample_record(0)]).unwrap();
        let (_, recs) = read_corpus(&path).unwrap();
        assert!(recs[0].neighbors.is_empty());
        // And the line itself must not carry the key at all.
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(!text.contains("neighbors"));
    }
}
