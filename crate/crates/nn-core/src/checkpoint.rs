//! Bit-exact named-tensor checkpoints.
//!
//! Line-oriented text container: a header line with the format version and
//! tensor count, then one line per tensor carrying name, shape, trainable
//! flag, and the raw f64 bits hex-encoded. Loading a checkpoint written by
//! `save_params` reproduces every value bit for bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{NnError, Result};
use crate::params::ParamSet;
use crate::tensor::Tensor;

const FORMAT_VERSION: u64 = 1;

pub fn save_params(params: &ParamSet, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(
        w,
        "{{\"format_version\":{},\"tensor_count\":{}}}",
        FORMAT_VERSION,
        params.len()
    )?;
    for (name, p) in params.iter() {
        let shape: Vec<String> = p.value.shape().iter().map(|d| d.to_string()).collect();
        let mut bits = String::with_capacity(p.value.len() * 16);
        for v in p.value.data() {
            bits.push_str(&format!("{:016x}", v.to_bits()));
        }
        writeln!(
            w,
            "{{\"name\":{},\"shape\":[{}],\"trainable\":{},\"bits\":\"{}\"}}",
            serde_json::to_string(name).expect("name encodes"),
            shape.join(","),
            p.trainable,
            bits
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<ParamSet> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines();

    let header_line = lines
        .next()
        .ok_or_else(|| malformed(1, "empty file"))??;
    let header: serde_json::Value =
        serde_json::from_str(&header_line).map_err(|e| malformed(1, &e.to_string()))?;
    let version = header["format_version"]
        .as_u64()
        .ok_or_else(|| malformed(1, "missing format_version"))?;
    if version != FORMAT_VERSION {
        return Err(NnError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let count = header["tensor_count"]
        .as_u64()
        .ok_or_else(|| malformed(1, "missing tensor_count"))? as usize;

    let mut params = ParamSet::new();
    let mut seen = 0usize;
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 2;
        let v: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| malformed(lineno, &e.to_string()))?;
        let name = v["name"]
            .as_str()
            .ok_or_else(|| malformed(lineno, "missing name"))?
            .to_string();
        let shape: Vec<usize> = v["shape"]
            .as_array()
            .ok_or_else(|| malformed(lineno, "missing shape"))?
            .iter()
            .map(|d| d.as_u64().map(|u| u as usize))
            .collect::<Option<_>>()
            .ok_or_else(|| malformed(lineno, "bad shape"))?;
        let trainable = v["trainable"]
            .as_bool()
            .ok_or_else(|| malformed(lineno, "missing trainable"))?;
        let bits = v["bits"]
            .as_str()
            .ok_or_else(|| malformed(lineno, "missing bits"))?;
        let n: usize = shape.iter().product();
        if bits.len() != n * 16 {
            return Err(malformed(lineno, "bits length does not match shape"));
        }
        let mut data = Vec::with_capacity(n);
        for k in 0..n {
            let hex = &bits[k * 16..(k + 1) * 16];
            let raw = u64::from_str_radix(hex, 16)
                .map_err(|_| malformed(lineno, "bad hex in bits"))?;
            data.push(f64::from_bits(raw));
        }
        params.insert(name, Tensor::new(shape, data), trainable);
        seen += 1;
    }
    if seen != count {
        return Err(malformed(
            seen + 2,
            &format!("expected {} tensors, found {}", count, seen),
        ));
    }
    Ok(params)
}

fn malformed(line: usize, msg: &str) -> NnError {
    NnError::MalformedCheckpoint {
        line,
        msg: msg.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("enc.w", Tensor::matrix(2, 3, vec![0.1, -0.2, 1.0 / 3.0, f64::MIN_POSITIVE, -0.0, 5e300]), true);
        p.insert("enc.b", Tensor::vector(vec![0.0, -1.5]), false);
        p.insert("head.w", Tensor::scalar(42.0), true);
        p
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.txt");
        let p = sample();
        save_params(&p, &path).unwrap();
        let q = load_params(&path).unwrap();
        assert_eq!(p.digest(""), q.digest(""));
        assert_eq!(p, q);
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.txt");
        std::fs::write(&path, "{\"format_version\":99,\"tensor_count\":0}\n").unwrap();
        assert!(matches!(
            load_params(&path),
            Err(NnError::VersionMismatch { found: 99, .. })
        ));
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.txt");
        save_params(&sample(), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let truncated: Vec<&str> = text.lines().take(2).collect();
        std::fs::write(&path, truncated.join("\n")).unwrap();
        assert!(matches!(
            load_params(&path),
            Err(NnError::MalformedCheckpoint { .. })
        ));
    }
}
