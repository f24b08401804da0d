//! Native trace file format and CSV interchange. The native layout mirrors
//! the checkpoint container:
//!
//! ```text
//! rydtrace v1
//! dtype f64
//! axis time 0 0.000001 s
//! n_sets 4000
//! n_points 1000
//! payload 32000000
//! <raw little-endian floats, one trace after another>
//! checksum sha256 <hex>
//! ```
//!
//! Header text is ASCII with exact-round-trip float formatting, so a file is
//! inspectable with `head` while the payload stays bit-exact.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::{Axis, AxisKind, TraceSet};
use crate::error::{Result, RydError};
use crate::numerics::{DType, Scalar};

const MAGIC: &str = "rydtrace v1";

fn malformed(detail: impl std::fmt::Display) -> RydError {
    RydError::Data(format!("malformed trace file: {detail}"))
}

fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut hex = String::with_capacity(64);
    for b in digest {
        hex.push_str(&format!("{b:02x}"));
    }
    hex
}

pub fn save_traceset<T: Scalar>(set: &TraceSet<T>, path: &Path) -> Result<()> {
    let axis = set.axis();
    let mut header = format!(
        "{MAGIC}\ndtype {}\naxis {} {} {} {}\nn_sets {}\nn_points {}\n",
        T::DTYPE.name(),
        axis.kind.name(),
        axis.start,
        axis.step,
        axis.unit,
        set.n_sets(),
        set.n_points()
    );
    let mut payload = Vec::with_capacity(set.data().len() * T::DTYPE.size_bytes());
    T::write_le(set.data(), &mut payload);
    header.push_str(&format!("payload {}\n", payload.len()));

    let mut bytes = header.into_bytes();
    bytes.extend_from_slice(&payload);
    let hex = hex_digest(&bytes);
    bytes.extend_from_slice(format!("checksum sha256 {hex}\n").as_bytes());
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load_traceset<T: Scalar>(path: &Path) -> Result<TraceSet<T>> {
    let bytes = std::fs::read(path)?;
    decode_traceset(&bytes)
}

fn decode_traceset<T: Scalar>(bytes: &[u8]) -> Result<TraceSet<T>> {
    let mut pos = 0usize;
    let next_line = |pos: &mut usize| -> Result<String> {
        let rest = &bytes[*pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| malformed("header ended without a newline"))?;
        let line = std::str::from_utf8(&rest[..end])
            .map_err(|_| malformed("header is not valid utf-8"))?
            .to_string();
        *pos += end + 1;
        Ok(line)
    };

    if next_line(&mut pos)? != MAGIC {
        return Err(malformed(format!("expected header line `{MAGIC}`")));
    }
    let line = next_line(&mut pos)?;
    let dtype = line
        .strip_prefix("dtype ")
        .and_then(DType::parse)
        .ok_or_else(|| malformed(format!("bad dtype line `{line}`")))?;
    if dtype != T::DTYPE {
        return Err(RydError::Data(format!(
            "trace file dtype is {}, expected {}",
            dtype.name(),
            T::DTYPE.name()
        )));
    }

    let line = next_line(&mut pos)?;
    let axis = {
        let mut it = line
            .strip_prefix("axis ")
            .ok_or_else(|| malformed(format!("expected axis line, got `{line}`")))?
            .split(' ');
        let kind = it
            .next()
            .and_then(AxisKind::parse)
            .ok_or_else(|| malformed(format!("bad axis kind in `{line}`")))?;
        let start: f64 = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| malformed(format!("bad axis start in `{line}`")))?;
        let step: f64 = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| malformed(format!("bad axis step in `{line}`")))?;
        let unit = it
            .next()
            .ok_or_else(|| malformed(format!("missing axis unit in `{line}`")))?
            .to_string();
        if it.next().is_some() {
            return Err(malformed(format!("trailing fields in axis line `{line}`")));
        }
        Axis { kind, start, step, unit }
    };

    let mut parse_count = |key: &str| -> Result<usize> {
        let line = next_line(&mut pos)?;
        line.strip_prefix(key)
            .and_then(|s| s.strip_prefix(' '))
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| malformed(format!("bad {key} line `{line}`")))
    };
    let n_sets = parse_count("n_sets")?;
    let n_points = parse_count("n_points")?;

    let line = next_line(&mut pos)?;
    let payload_len: usize = line
        .strip_prefix("payload ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| malformed(format!("bad payload line `{line}`")))?;
    let expected = n_sets
        .checked_mul(n_points)
        .and_then(|n| n.checked_mul(T::DTYPE.size_bytes()))
        .ok_or_else(|| malformed("trace count overflows"))?;
    if payload_len != expected {
        return Err(malformed(format!(
            "payload length {payload_len} does not match {n_sets} x {n_points} {} values",
            T::DTYPE.name()
        )));
    }
    if bytes.len() < pos + payload_len {
        return Err(RydError::Data(format!(
            "truncated trace file: payload needs {payload_len} bytes, file has {}",
            bytes.len() - pos
        )));
    }
    let payload = &bytes[pos..pos + payload_len];
    let digest_end = pos + payload_len;
    pos = digest_end;

    let line = next_line(&mut pos)?;
    let stated = line
        .strip_prefix("checksum sha256 ")
        .ok_or_else(|| malformed(format!("bad checksum line `{line}`")))?;
    let actual = hex_digest(&bytes[..digest_end]);
    if stated != actual {
        return Err(RydError::Data(format!(
            "trace file checksum mismatch: header states {stated}, contents hash to {actual}"
        )));
    }

    TraceSet::new(axis, n_points, T::read_le(payload))
}

/// One trace per CSV row, no header. Numbers are written with
/// exact-round-trip formatting.
pub fn save_traceset_csv<T: Scalar>(set: &TraceSet<T>, path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(csv_io)?;
    for trace in set.iter_traces() {
        w.write_record(trace.iter().map(|v| v.to_f64().to_string()))
            .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

/// CSV carries no axis metadata, so the caller supplies it.
pub fn load_traceset_csv(path: &Path, axis: Axis) -> Result<TraceSet<f64>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(csv_io)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in r.records() {
        let record = record.map_err(|e| RydError::Data(format!("bad csv row: {e}")))?;
        let row: Vec<f64> = record
            .iter()
            .map(|f| {
                f.trim()
                    .parse()
                    .map_err(|_| RydError::Data(format!("bad csv value `{f}`")))
            })
            .collect::<Result<_>>()?;
        rows.push(row);
    }
    TraceSet::from_rows(axis, &rows)
}

fn csv_io(e: csv::Error) -> RydError {
    RydError::Data(format!("csv error: {e}"))
}
