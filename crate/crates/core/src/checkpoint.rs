//! Checkpoint format: one JSON header line followed by little-endian f64
//! payloads for the model parameters and the bank rows.
//!
//! The header carries the layout descriptor, the bank shape, the round the
//! state belongs to, and a format version; the binary payload is exactly
//! `layout.total_len() + bank_tasks * bank_dim` doubles.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bank::TaskBank;
use crate::error::{Error, Result};
use crate::model::{Layout, ParamVector};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    /// Number of completed rounds the state reflects.
    pub round: u64,
    pub layout: Layout,
    pub bank_tasks: usize,
    pub bank_dim: usize,
    pub bank_round: u64,
}

/// Serialized training state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ParamVector,
    pub bank: TaskBank,
}

pub fn write_checkpoint(
    path: &Path,
    round: u64,
    params: &ParamVector,
    bank: &TaskBank,
) -> Result<()> {
    let display = path.display().to_string();
    let header = CheckpointHeader {
        format_version: CHECKPOINT_FORMAT_VERSION,
        round,
        layout: params.layout,
        bank_tasks: bank.num_tasks(),
        bank_dim: bank.latent_dim(),
        bank_round: bank.round,
    };
    let file = File::create(path).map_err(|e| Error::io(display.clone(), e))?;
    let mut writer = BufWriter::new(file);
    let header_json = serde_json::to_string(&header)?;
    writeln!(writer, "{header_json}").map_err(|e| Error::io(display.clone(), e))?;
    for v in &params.values {
        writer
            .write_all(&v.to_le_bytes())
            .map_err(|e| Error::io(display.clone(), e))?;
    }
    for row in bank.rows() {
        for v in row {
            writer
                .write_all(&v.to_le_bytes())
                .map_err(|e| Error::io(display.clone(), e))?;
        }
    }
    writer.flush().map_err(|e| Error::io(display, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(display.clone(), e))?;
    let mut reader = BufReader::new(file);

    let mut header_line = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        reader
            .read_exact(&mut byte)
            .map_err(|e| Error::io(display.clone(), e))?;
        if byte[0] == b'\n' {
            break;
        }
        header_line.push(byte[0]);
    }
    let header: CheckpointHeader = serde_json::from_slice(&header_line)?;
    if header.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::DataIntegrity(format!(
            "checkpoint format version {} unsupported (expected {CHECKPOINT_FORMAT_VERSION})",
            header.format_version
        )));
    }

    let mut read_f64s = |count: usize| -> Result<Vec<f64>> {
        let mut buf = vec![0u8; count * 8];
        reader
            .read_exact(&mut buf)
            .map_err(|e| Error::io(display.clone(), e))?;
        Ok(buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    };
    let values = read_f64s(header.layout.total_len())?;
    let mut rows = Vec::with_capacity(header.bank_tasks);
    for _ in 0..header.bank_tasks {
        rows.push(read_f64s(header.bank_dim)?);
    }
    let params = ParamVector {
        values,
        layout: header.layout,
    };
    let bank = TaskBank::from_rows(rows, header.bank_round)?;
    Ok(Checkpoint {
        header,
        params,
        bank,
    })
}

/// Human-readable checkpoint description for the CLI.
pub fn describe_checkpoint(path: &Path) -> Result<String> {
    let ckpt = read_checkpoint(path)?;
    let norm: f64 = ckpt.params.values.iter().map(|v| v * v).sum::<f64>().sqrt();
    let header_json = serde_json::to_string_pretty(&ckpt.header)?;
    let mut out = String::new();
    out.push_str(&header_json);
    out.push('\n');
    out.push_str(&format!("param_count: {}\n", ckpt.params.len()));
    out.push_str(&format!("param_norm: {norm:.6}\n"));
    for (i, row) in ckpt.bank.rows().iter().enumerate() {
        let rn: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        out.push_str(&format!("bank_row_{i}_norm: {rn:.9}\n"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::init_bank;
    use crate::model::init_params;

    #[test]
    fn round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.ckpt");
        let params = init_params(4, 3, 6, 5, 2, 11).unwrap();
        let bank = init_bank(3, 5, 12).unwrap();
        write_checkpoint(&path, 7, &params, &bank).unwrap();
        let ckpt = read_checkpoint(&path).unwrap();
        assert_eq!(ckpt.header.round, 7);
        assert_eq!(ckpt.params, params);
        assert_eq!(ckpt.bank, bank);
    }

    #[test]
    fn describe_mentions_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.ckpt");
        let params = init_params(4, 3, 6, 5, 2, 11).unwrap();
        let bank = init_bank(3, 5, 12).unwrap();
        write_checkpoint(&path, 2, &params, &bank).unwrap();
        let text = describe_checkpoint(&path).unwrap();
        assert!(text.contains("param_count"));
        assert!(text.contains("bank_row_2_norm"));
    }

    #[test]
    fn rejects_unknown_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        let header = r#"{"format_version":99,"round":0,"layout":{"in_dim":1,"num_tasks":1,"hidden_dim":1,"latent_dim":1,"act_dim":1},"bank_tasks":1,"bank_dim":1,"bank_round":0}"#;
        let mut bytes = header.as_bytes().to_vec();
        bytes.push(b'\n');
        bytes.extend(std::iter::repeat(0u8).take(8 * 8));
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            read_checkpoint(&path),
            Err(Error::DataIntegrity(_))
        ));
    }
}
