//! Checkpoints: a text header (format version, iteration, rng state,
//! config echo) followed by a tensor snapshot holding every parameter
//! value and momentum buffer.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{read_snapshot, write_snapshot, SnapshotEntry};

use super::model::Model;

const FORMAT: &str = "REGIONLAB-CHECKPOINT v1";

pub struct CheckpointState {
    pub iteration: usize,
    pub rng_state: u64,
    pub config_hash: String,
    pub config_text: String,
    entries: Vec<SnapshotEntry>,
}

impl CheckpointState {
    /// Install values and momentum buffers into a freshly built model;
    /// every tensor must match by name and shape.
    pub fn apply_to(&self, model: &mut Model) -> Result<()> {
        let mut mismatches = Vec::new();
        let expected = model.params.len() * 2;
        if self.entries.len() != expected {
            mismatches.push(format!(
                "checkpoint has {} tensors, model needs {expected}",
                self.entries.len()
            ));
        }
        for id in model.params.ids().collect::<Vec<_>>() {
            let name = model.params.name(id).to_string();
            for (prefix, slot) in [("v", 0), ("m", 1)] {
                let full = format!("{prefix}.{name}");
                match self.entries.iter().find(|e| e.name == full) {
                    None => mismatches.push(format!("missing tensor '{full}'")),
                    Some(entry) => {
                        let shape = model.params.value(id).shape();
                        if entry.tensor.shape() != shape {
                            mismatches.push(format!(
                                "'{full}': checkpoint {:?} vs model {:?}",
                                entry.tensor.shape(),
                                shape
                            ));
                        } else if slot == 0 {
                            *model.params.value_mut(id) = entry.tensor.clone();
                        }
                    }
                }
            }
        }
        if !mismatches.is_empty() {
            return Err(Error::Checkpoint(mismatches.join("; ")));
        }
        // second pass for momentum now that shapes are validated
        let names: Vec<(crate::tensor::ParamId, String)> = model
            .params
            .ids()
            .map(|id| (id, model.params.name(id).to_string()))
            .collect();
        for (id, name) in names {
            let full = format!("m.{name}");
            let entry = self.entries.iter().find(|e| e.name == full).expect("validated");
            model.params.set_momentum(id, entry.tensor.clone())?;
        }
        Ok(())
    }
}

pub fn save_checkpoint(path: &Path, model: &Model, iteration: usize, rng_state: u64) -> Result<()> {
    let config_text = model.config.to_text();
    let mut entries = Vec::with_capacity(model.params.len() * 2);
    for p in model.params.iter() {
        entries.push(SnapshotEntry { name: format!("v.{}", p.name), tensor: p.value.clone() });
    }
    for p in model.params.iter() {
        entries.push(SnapshotEntry { name: format!("m.{}", p.name), tensor: p.momentum.clone() });
    }
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "{FORMAT}")?;
    writeln!(out, "iteration {iteration}")?;
    writeln!(out, "rng_state {rng_state}")?;
    writeln!(out, "config_hash {}", model.config.hash_hex())?;
    writeln!(out, "config_bytes {}", config_text.len())?;
    out.write_all(config_text.as_bytes())?;
    write_snapshot(&mut out, &entries)?;
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<CheckpointState> {
    let file = fs::File::open(path)?;
    let mut reader = BufReader::new(file);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    if line.trim_end() != FORMAT {
        return Err(Error::Checkpoint(format!("bad magic '{}'", line.trim_end())));
    }
    let mut header = |prefix: &str| -> Result<String> {
        let mut l = String::new();
        reader.read_line(&mut l)?;
        l.trim_end()
            .strip_prefix(prefix)
            .map(|s| s.trim().to_string())
            .ok_or_else(|| Error::Checkpoint(format!("missing '{prefix}' line")))
    };
    let iteration: usize = header("iteration")?
        .parse()
        .map_err(|_| Error::Checkpoint("bad iteration".to_string()))?;
    let rng_state: u64 =
        header("rng_state")?.parse().map_err(|_| Error::Checkpoint("bad rng state".to_string()))?;
    let config_hash = header("config_hash")?;
    let config_bytes: usize = header("config_bytes")?
        .parse()
        .map_err(|_| Error::Checkpoint("bad config length".to_string()))?;
    let mut config_buf = vec![0u8; config_bytes];
    reader.read_exact(&mut config_buf)?;
    let config_text = String::from_utf8(config_buf)
        .map_err(|_| Error::Checkpoint("config echo is not utf-8".to_string()))?;
    let entries = read_snapshot(&mut reader)?;
    Ok(CheckpointState { iteration, rng_state, config_hash, config_text, entries })
}
