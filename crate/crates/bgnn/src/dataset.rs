//! Dataset CSV: header `label,f0,...,f{d-1}`, one item per row.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use cml_bgnn_core::Dataset;

use crate::error::{io_err, Error, Result};

fn parse_err(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Reads a dataset. Line numbers in errors count the header as line 1.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header = reader
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(parse_err(path, 1, "empty file"));
    }
    if &header[0] != "label" {
        return Err(parse_err(path, 1, format!("first column must be `label`, found `{}`", &header[0])));
    }
    let dim = header.len() - 1;
    if dim == 0 {
        return Err(parse_err(path, 1, "no feature columns"));
    }
    for (i, name) in header.iter().skip(1).enumerate() {
        if name != format!("f{i}") {
            return Err(parse_err(path, 1, format!("expected column `f{i}`, found `{name}`")));
        }
    }

    let mut features = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != dim + 1 {
            return Err(parse_err(path, line, format!("expected {} fields, found {}", dim + 1, record.len())));
        }
        let label: usize = record[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(path, line, format!("bad label `{}`", &record[0])))?;
        labels.push(label);
        for field in record.iter().skip(1) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(path, line, format!("bad number `{field}`")))?;
            if !v.is_finite() {
                return Err(parse_err(path, line, format!("non-finite value `{field}`")));
            }
            features.push(v);
        }
    }
    if labels.is_empty() {
        return Err(parse_err(path, 2, "no data rows"));
    }
    let name = path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    Ok(Dataset::new(name, dim, features, labels)?)
}

/// Writes a dataset; floats use the shortest representation that reads
/// back to the same bits.
pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::with_capacity(ds.len() * (ds.dim() + 1) * 12);
    out.push_str("label");
    for i in 0..ds.dim() {
        out.push_str(&format!(",f{i}"));
    }
    out.push('\n');
    for item in 0..ds.len() {
        out.push_str(&ds.label(item).to_string());
        for v in ds.features(item) {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    let mut file = File::create(path).map_err(io_err(path))?;
    file.write_all(out.as_bytes()).map_err(io_err(path))
}
