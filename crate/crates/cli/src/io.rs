//! File formats. CSV outputs start with a `#` line holding the provenance
//! record as JSON; JSON outputs carry it under a `provenance` key.

use std::fs;
use std::io::Write;
use std::path::Path;

use lrvb::layout::LayoutSummary;
use lrvb::{Dataset, ParamLayout};
use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub command: String,
    pub version: String,
    /// SHA-256 of the command's arguments and the contents of its inputs.
    pub config_sha256: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub layout: Option<LayoutSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub warnings: Vec<String>,
}

impl Provenance {
    pub fn new<A: Serialize>(command: &str, args: &A, inputs: &[&Path]) -> CliResult<Self> {
        let mut hasher = Sha256::new();
        hasher.update(command.as_bytes());
        hasher.update(serde_json::to_vec(args)?);
        for path in inputs {
            hasher.update(sha256_file(path)?.as_bytes());
        }
        Ok(Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: hex::encode(hasher.finalize()),
            layout: None,
            warnings: Vec::new(),
        })
    }

    pub fn with_layout(mut self, layout: &ParamLayout) -> Self {
        self.layout = Some(layout.summary());
        self
    }

    pub fn warn(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        eprintln!("warning: {msg}");
        self.warnings.push(msg);
    }
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct WithProvenance<'a, T: Serialize> {
    provenance: &'a Provenance,
    #[serde(flatten)]
    body: &'a T,
}

pub fn write_json<T: Serialize>(path: &Path, provenance: &Provenance, body: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(&WithProvenance { provenance, body })?;
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

/// CSV writer positioned after the provenance line.
pub fn csv_writer(path: &Path, provenance: &Provenance) -> CliResult<csv::Writer<fs::File>> {
    let mut file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    writeln!(file, "# {}", serde_json::to_string(provenance)?).map_err(|e| CliError::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_reader(path: &Path) -> CliResult<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file))
}

/// Reads observations: a header row, then one numeric row per point.
pub fn read_dataset(path: &Path) -> CliResult<Dataset> {
    let mut reader = csv_reader(path)?;
    let p = reader.headers()?.len();
    let mut values = Vec::new();
    let mut n = 0;
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        if rec.len() != p {
            return Err(CliError::Validation(format!(
                "{}: row {} has {} fields, header has {p}",
                path.display(),
                i + 1,
                rec.len()
            )));
        }
        for field in rec.iter() {
            let v: f64 = field.trim().parse().map_err(|_| {
                CliError::Validation(format!("{}: row {}: `{field}` is not a number", path.display(), i + 1))
            })?;
            values.push(v);
        }
        n += 1;
    }
    if n == 0 {
        return Err(CliError::Validation(format!("{}: no data rows", path.display())));
    }
    Ok(Dataset::new(DMatrix::from_row_slice(n, p, &values))?)
}

pub fn write_dataset(path: &Path, provenance: &Provenance, data: &Dataset) -> CliResult<()> {
    let mut w = csv_writer(path, provenance)?;
    w.write_record((1..=data.p()).map(|j| format!("x{j}")))?;
    for row in data.x.row_iter() {
        w.write_record(row.iter().map(|v| format!("{v:e}")))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// The provenance line of a CSV written by this tool, if present.
#[cfg(test)]
pub fn read_csv_provenance(path: &Path) -> CliResult<Option<Provenance>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    match text.lines().next().and_then(|l| l.strip_prefix("# ")) {
        Some(json) => Ok(Some(serde_json::from_str(json)?)),
        None => Ok(None),
    }
}
