//! Tensor snapshot file: a text manifest (name, shape, byte offset into
//! the payload) followed by a raw little-endian IEEE-754 f64 payload,
//! all in one file. Used for checkpoints.

use std::io::{BufRead, BufReader, Read, Write};

use super::Tensor;
use crate::error::{Error, Result};

const MAGIC: &str = "REGIONLAB-TENSORS v1";

#[derive(Debug, Clone)]
pub struct SnapshotEntry {
    pub name: String,
    pub tensor: Tensor,
}

pub fn write_snapshot<W: Write>(out: &mut W, entries: &[SnapshotEntry]) -> Result<()> {
    writeln!(out, "{MAGIC}")?;
    writeln!(out, "count {}", entries.len())?;
    let mut offset = 0usize;
    for e in entries {
        if e.name.contains(char::is_whitespace) || e.name.is_empty() {
            return Err(Error::invalid(format!("snapshot name '{}' has whitespace", e.name)));
        }
        let dims: Vec<String> = e.tensor.shape().iter().map(|d| d.to_string()).collect();
        writeln!(out, "{} {} {} {}", e.name, e.tensor.shape().len(), dims.join(" "), offset)?;
        offset += e.tensor.numel() * 8;
    }
    writeln!(out, "data {offset}")?;
    for e in entries {
        for v in e.tensor.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_snapshot<R: Read>(input: &mut R) -> Result<Vec<SnapshotEntry>> {
    let mut reader = BufReader::new(input);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    if line.trim_end() != MAGIC {
        return Err(Error::parse(format!("bad snapshot magic: '{}'", line.trim_end())));
    }
    line.clear();
    reader.read_line(&mut line)?;
    let count: usize = line
        .trim_end()
        .strip_prefix("count ")
        .ok_or_else(|| Error::parse("snapshot: missing count line".to_string()))?
        .parse()
        .map_err(|_| Error::parse("snapshot: bad count".to_string()))?;

    let mut headers: Vec<(String, Vec<usize>, usize)> = Vec::with_capacity(count);
    for _ in 0..count {
        line.clear();
        reader.read_line(&mut line)?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 3 {
            return Err(Error::parse(format!("snapshot: short manifest line '{}'", line.trim())));
        }
        let name = fields[0].to_string();
        let rank: usize = fields[1]
            .parse()
            .map_err(|_| Error::parse("snapshot: bad rank".to_string()))?;
        if fields.len() != 3 + rank {
            return Err(Error::parse(format!(
                "snapshot: manifest line for '{name}' has {} fields, expected {}",
                fields.len(),
                3 + rank
            )));
        }
        let mut shape = Vec::with_capacity(rank);
        for d in &fields[2..2 + rank] {
            shape.push(d.parse().map_err(|_| Error::parse("snapshot: bad dim".to_string()))?);
        }
        let offset: usize = fields[2 + rank]
            .parse()
            .map_err(|_| Error::parse("snapshot: bad offset".to_string()))?;
        headers.push((name, shape, offset));
    }

    line.clear();
    reader.read_line(&mut line)?;
    let payload_len: usize = line
        .trim_end()
        .strip_prefix("data ")
        .ok_or_else(|| Error::parse("snapshot: missing data line".to_string()))?
        .parse()
        .map_err(|_| Error::parse("snapshot: bad payload length".to_string()))?;

    let mut payload = vec![0u8; payload_len];
    reader.read_exact(&mut payload).map_err(|e| {
        Error::parse(format!("snapshot: truncated payload ({payload_len} bytes expected): {e}"))
    })?;

    let mut entries = Vec::with_capacity(count);
    for (name, shape, offset) in headers {
        let n: usize = shape.iter().product();
        let end = offset + n * 8;
        if end > payload.len() {
            return Err(Error::parse(format!(
                "snapshot: tensor '{name}' extends past payload ({end} > {})",
                payload.len()
            )));
        }
        let mut data = Vec::with_capacity(n);
        for chunk in payload[offset..end].chunks_exact(8) {
            data.push(f64::from_le_bytes(chunk.try_into().expect("chunk of 8")));
        }
        entries.push(SnapshotEntry { name, tensor: Tensor::from_vec(shape, data)? });
    }
    Ok(entries)
}
