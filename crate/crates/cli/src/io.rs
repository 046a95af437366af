//! File formats and small argument grammars shared by the subcommands.

use std::path::Path;

use anyhow::{bail, Context, Result};
use dcsbm_spectral::simulate::RhoLaw;
use ndarray::Array2;
use serde::Serialize;

/// Read a numeric matrix from CSV. A first line that does not parse as
/// numbers is treated as a header, so both the files this tool writes
/// (always with a header) and plain numeric dumps load.
pub fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record?;
        let parsed: std::result::Result<Vec<f64>, _> =
            record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if idx == 0 => continue, // header line
            Err(e) => bail!("line {}: {e}", idx + 1),
        }
    }
    matrix_from_rows(rows).with_context(|| format!("{} is not a matrix", path.display()))
}

/// Assemble parsed rows, insisting they form a rectangle.
fn matrix_from_rows(rows: Vec<Vec<f64>>) -> Result<Array2<f64>> {
    let n = rows.len();
    if n == 0 {
        bail!("no data rows");
    }
    let m = rows[0].len();
    if let Some(bad) = rows.iter().position(|r| r.len() != m) {
        bail!(
            "row {} has {} entries, expected {m}",
            bad + 1,
            rows[bad].len()
        );
    }
    Ok(Array2::from_shape_vec(
        (n, m),
        rows.into_iter().flatten().collect(),
    )?)
}

/// Write per-node labels as `node,label` with `unassigned` for nodes the
/// pipeline could not place (isolated nodes). Node keys default to the
/// row position.
pub fn write_labels(path: &Path, labels: &[Option<usize>], keys: Option<&[String]>) -> Result<()> {
    if let Some(keys) = keys {
        if keys.len() != labels.len() {
            bail!(
                "{} node keys for {} labels",
                keys.len(),
                labels.len()
            );
        }
    }
    let mut w = csv::Writer::from_path(path)
        .with_context(|| format!("cannot create {}", path.display()))?;
    w.write_record(["node", "label"])?;
    for (i, label) in labels.iter().enumerate() {
        let key = match keys {
            Some(keys) => keys[i].clone(),
            None => i.to_string(),
        };
        let text = match label {
            Some(l) => l.to_string(),
            None => "unassigned".to_string(),
        };
        w.write_record([key, text])?;
    }
    w.flush()?;
    Ok(())
}

/// Read a labels CSV back: `(node key, label)` per row, `unassigned` or
/// an empty field meaning no label.
pub fn read_labels(path: &Path) -> Result<Vec<(String, Option<usize>)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))?;
    let mut out = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != 2 {
            bail!("line {}: expected node,label", idx + 1);
        }
        if idx == 0 && record[1].parse::<usize>().is_err() && &record[1] != "unassigned" {
            continue; // header line
        }
        let label = match &record[1] {
            "" | "unassigned" => None,
            text => Some(text.parse::<usize>().with_context(|| {
                format!("line {}: label {text:?} is not an integer", idx + 1)
            })?),
        };
        out.push((record[0].to_string(), label));
    }
    if out.is_empty() {
        bail!("{} holds no labels", path.display());
    }
    Ok(out)
}

/// Pretty-printed JSON artifact.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = std::fs::File::create(path)
        .with_context(|| format!("cannot create {}", path.display()))?;
    serde_json::to_writer_pretty(file, value)?;
    Ok(())
}

/// Parse a block matrix: inline rows "a,b;c,d" or `@path` to a CSV file.
pub fn parse_block_matrix(spec: &str) -> Result<Array2<f64>> {
    if let Some(path) = spec.strip_prefix('@') {
        return read_matrix(Path::new(path));
    }
    let rows: Vec<Vec<f64>> = spec
        .split(';')
        .map(|row| {
            row.split(',')
                .map(|v| v.trim().parse::<f64>().map_err(anyhow::Error::from))
                .collect()
        })
        .collect::<Result<_>>()
        .with_context(|| format!("invalid block matrix {spec:?}"))?;
    matrix_from_rows(rows).with_context(|| format!("invalid block matrix {spec:?}"))
}

/// Parse a comma-separated list of numbers.
fn parse_list<T: std::str::FromStr>(spec: &str) -> Result<Vec<T>>
where
    T::Err: std::error::Error + Send + Sync + 'static,
{
    spec.split(',')
        .map(|v| v.trim().parse::<T>().map_err(anyhow::Error::from))
        .collect()
}

/// Parse community weights ("0.5,0.5").
pub fn parse_proportions(spec: &str) -> Result<Vec<f64>> {
    parse_list(spec).with_context(|| format!("invalid proportions {spec:?}"))
}

/// Parse exact community sizes ("300,200").
pub fn parse_sizes(spec: &str) -> Result<Vec<usize>> {
    parse_list(spec).with_context(|| format!("invalid sizes {spec:?}"))
}

/// Parse a degree-correction law: "constant:c", "uniform:a,b" or
/// "beta:a,b".
pub fn parse_rho_law(spec: &str) -> Result<RhoLaw> {
    let (name, params) = spec
        .split_once(':')
        .with_context(|| format!("invalid degree-correction law {spec:?}"))?;
    let values: Vec<f64> =
        parse_list(params).with_context(|| format!("invalid degree-correction law {spec:?}"))?;
    match (name, values.as_slice()) {
        ("constant", [c]) => Ok(RhoLaw::Constant(*c)),
        ("uniform", [a, b]) => Ok(RhoLaw::Uniform(*a, *b)),
        ("beta", [a, b]) => Ok(RhoLaw::Beta(*a, *b)),
        _ => bail!(
            "invalid degree-correction law {spec:?} (expected constant:c, uniform:a,b or beta:a,b)"
        ),
    }
}
