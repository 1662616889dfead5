//! Reading and writing scenario-bank files.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use geoprobe_core::bank::{Bank, BankError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BankLoadError {
    #[error("bank parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("bank invariant violated: {0}")]
    Invariant(#[from] BankError),
    #[error("cannot read bank: {0}")]
    Io(#[from] std::io::Error),
}

/// Parse and validate a bank.
pub fn load_bank(source: impl Read) -> Result<Bank, BankLoadError> {
    let bank: Bank = serde_json::from_reader(BufReader::new(source)).map_err(|e| BankLoadError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    bank.validate()?;
    Ok(bank)
}

pub fn load_bank_file(path: &Path) -> Result<Bank, BankLoadError> {
    load_bank(File::open(path)?)
}

pub fn save_bank(bank: &Bank, mut sink: impl Write) -> std::io::Result<()> {
    serde_json::to_writer_pretty(&mut sink, bank)?;
    sink.write_all(b"\n")
}

/// The sample bank shipped with the crate.
pub fn sample_bank() -> Bank {
    load_bank(SAMPLE_BANK.as_bytes()).expect("shipped sample bank is valid")
}

pub const SAMPLE_BANK: &str = include_str!("../data/sample_bank.json");
