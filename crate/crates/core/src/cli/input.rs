//! Table and matrix CSV readers and the model-spec JSON file.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{build_square_model, validate_spec, LmlcSpec, ModelKind, SamplingScheme};
use crate::table::ContingencyTable;

fn parse_error(path: &Path, row: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        row,
        column,
        message: message.into(),
    }
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Non-empty records with their 1-based line numbers.
fn records(path: &Path) -> Result<Vec<(usize, Vec<String>)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => io_error(path, io),
            other => parse_error(path, 1, 1, format!("{other:?}")),
        })?;
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let row = e.position().map_or(0, |p| p.line() as usize);
            parse_error(path, row, 1, e.to_string())
        })?;
        let row = rec.position().map_or(out.len() + 1, |p| p.line() as usize);
        if rec.iter().all(str::is_empty) {
            continue;
        }
        out.push((row, rec.iter().map(str::to_owned).collect()));
    }
    Ok(out)
}

fn check_width(path: &Path, rows: &[(usize, Vec<String>)]) -> Result<usize> {
    let width = rows.first().map_or(0, |r| r.1.len());
    for (row, fields) in rows {
        if fields.len() != width {
            return Err(parse_error(
                path,
                *row,
                fields.len().min(width) + 1,
                format!("expected {width} fields, found {}", fields.len()),
            ));
        }
    }
    Ok(width)
}

fn parse_count(path: &Path, row: usize, column: usize, field: &str) -> Result<u64> {
    if let Ok(v) = field.parse::<u64>() {
        return Ok(v);
    }
    let message = match field.parse::<f64>() {
        Ok(v) if v < 0.0 => format!("negative count `{field}`"),
        Ok(_) => format!("non-integer count `{field}`"),
        Err(_) => format!("not a number: `{field}`"),
    };
    Err(parse_error(path, row, column, message))
}

/// Read a two-way table of non-negative integer counts. A first row with any
/// non-numeric field is taken as a header.
pub fn parse_table_csv(path: impl AsRef<Path>) -> Result<ContingencyTable> {
    let path = path.as_ref();
    let mut rows = records(path)?;
    if rows
        .first()
        .is_some_and(|(_, f)| f.iter().any(|s| s.parse::<f64>().is_err()))
    {
        rows.remove(0);
    }
    if rows.is_empty() {
        return Err(parse_error(path, 1, 1, "table has no data rows"));
    }
    let width = check_width(path, &rows)?;
    let mut counts = Vec::with_capacity(rows.len() * width);
    for (row, fields) in &rows {
        for (j, field) in fields.iter().enumerate() {
            counts.push(parse_count(path, *row, j + 1, field)?);
        }
    }
    ContingencyTable::new(counts, vec![rows.len(), width])
}

/// Read a headerless matrix of reals.
pub fn parse_matrix_csv(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let rows = records(path)?;
    if rows.is_empty() {
        return Err(parse_error(path, 1, 1, "matrix has no rows"));
    }
    let width = check_width(path, &rows)?;
    let mut values = Vec::with_capacity(rows.len() * width);
    for (row, fields) in &rows {
        for (j, field) in fields.iter().enumerate() {
            let v: f64 = field
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| parse_error(path, *row, j + 1, format!("not a real: `{field}`")))?;
            values.push(v);
        }
    }
    Ok(DMatrix::from_row_slice(rows.len(), width, &values))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    Poisson,
    #[default]
    Multinomial,
    ProductMultinomial,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingSpec {
    pub scheme: SchemeName,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub subtable_sizes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomSpec {
    pub design_csv: PathBuf,
    #[serde(default)]
    pub constraints_csv: Option<PathBuf>,
    #[serde(default)]
    pub d_star: Vec<f64>,
}

/// JSON description of a model. Custom matrix paths are relative to the spec
/// file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpecFile {
    pub kind: String,
    #[serde(rename = "I", default)]
    pub side: Option<usize>,
    #[serde(default)]
    pub sampling: SamplingSpec,
    #[serde(default)]
    pub custom: Option<CustomSpec>,
}

impl ModelSpecFile {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn sampling(&self, k: usize) -> Result<SamplingScheme> {
        match self.sampling.scheme {
            SchemeName::Poisson => Ok(SamplingScheme::poisson()),
            SchemeName::Multinomial => Ok(SamplingScheme::multinomial(k)),
            SchemeName::ProductMultinomial => {
                SamplingScheme::product_multinomial(self.sampling.subtable_sizes.clone())
            }
        }
    }

    /// Build and validate the model; `base` anchors relative matrix paths.
    pub fn resolve(&self, base: &Path) -> Result<LmlcSpec> {
        let kind: ModelKind = self.kind.parse()?;
        let spec = if kind == ModelKind::Custom {
            let custom = self
                .custom
                .as_ref()
                .ok_or_else(|| Error::domain("custom model needs a `custom` section"))?;
            let design = parse_matrix_csv(base.join(&custom.design_csv))?;
            let k = design.nrows();
            let constraints = match &custom.constraints_csv {
                Some(p) => parse_matrix_csv(base.join(p))?,
                None => DMatrix::zeros(k, 0),
            };
            let d_star = DVector::from_vec(custom.d_star.clone());
            LmlcSpec::new(design, self.sampling(k)?, constraints, d_star)?
        } else {
            let side = self
                .side
                .ok_or_else(|| Error::domain(format!("model `{}` needs `I`", self.kind)))?;
            build_square_model(kind, side, self.sampling(side * side)?)?
        };
        let violations = validate_spec(&spec, None);
        if !violations.is_empty() {
            let list: Vec<String> = violations.iter().map(ToString::to_string).collect();
            return Err(Error::domain(format!("invalid model: {}", list.join("; "))));
        }
        Ok(spec)
    }
}

/// Read and resolve a model spec file.
pub fn load_model(path: impl AsRef<Path>) -> Result<LmlcSpec> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    ModelSpecFile::read(path)?.resolve(base)
}
