use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use distill_core::critic::CriticModel;
use distill_core::lm::NGramModel;
use serde::de::DeserializeOwned;

use crate::error::{CliError, Result};

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// A file, or stdin when no path is given.
pub fn input(path: Option<&Path>) -> Result<Box<dyn BufRead>> {
    match path {
        Some(p) => Ok(Box::new(BufReader::new(File::open(p).map_err(|e| CliError::io(p, e))?))),
        None => Ok(Box::new(BufReader::new(io::stdin()))),
    }
}

/// A file, or stdout when no path is given.
pub fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    match path {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
            }
            Ok(Box::new(BufWriter::new(File::create(p).map_err(|e| CliError::io(p, e))?)))
        }
        None => Ok(Box::new(BufWriter::new(io::stdout()))),
    }
}

pub fn write_err(path: Option<&Path>) -> impl Fn(io::Error) -> CliError + '_ {
    move |e| match path {
        Some(p) => CliError::io(p, e),
        None => CliError::new(crate::error::ErrorKind::Io, format!("stdout: {e}")),
    }
}

/// Parses one JSON value per non-blank line, lazily.
pub fn json_lines<T: DeserializeOwned>(
    reader: Box<dyn BufRead>,
    name: String,
) -> impl Iterator<Item = Result<T>> {
    reader.lines().enumerate().filter_map(move |(i, line)| match line {
        Err(e) => Some(Err(CliError::new(crate::error::ErrorKind::Io, format!("{name}: {e}")))),
        Ok(l) if l.trim().is_empty() => None,
        Ok(l) => Some(serde_json::from_str(&l).map_err(|e| CliError::input(format!("{name} line {}: {e}", i + 1)))),
    })
}

pub fn display_name(path: Option<&Path>) -> String {
    path.map_or_else(|| "<stdin>".to_string(), |p| p.display().to_string())
}

pub fn load_lm(path: &Path) -> Result<NGramModel> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    NGramModel::read_from(BufReader::new(f)).map_err(|e| CliError::from(e).in_file(path))
}

pub fn load_critic(path: &Path) -> Result<CriticModel> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    CriticModel::read_from(BufReader::new(f)).map_err(|e| CliError::from(e).in_file(path))
}
