use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::{Cohort, CohortError, Label};

/// Column naming rules for cohort files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub id_column: String,
    pub label_column: String,
    pub covariate_prefix: String,
    pub feature_prefix: String,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            id_column: "id".into(),
            label_column: "label".into(),
            covariate_prefix: "cov_".into(),
            feature_prefix: "f_".into(),
        }
    }
}

pub fn load_cohort(path: impl AsRef<Path>, schema: &Schema) -> Result<Cohort, CohortError> {
    read_cohort(File::open(path)?, schema)
}

/// Parses a comma-separated cohort table. Columns that match none of the
/// schema rules are ignored.
pub fn read_cohort<R: Read>(reader: R, schema: &Schema) -> Result<Cohort, CohortError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(csv_error)?.clone();

    let find = |name: &str| header.iter().position(|h| h == name);
    let id_col = find(&schema.id_column).ok_or_else(|| CohortError::MissingColumn(schema.id_column.clone()))?;
    let label_col =
        find(&schema.label_column).ok_or_else(|| CohortError::MissingColumn(schema.label_column.clone()))?;
    let cov_cols: Vec<usize> =
        (0..header.len()).filter(|&j| header[j].starts_with(&schema.covariate_prefix)).collect();
    let feat_cols: Vec<usize> =
        (0..header.len()).filter(|&j| header[j].starts_with(&schema.feature_prefix)).collect();

    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut feats = Vec::new();
    let mut covs = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        let id = record.get(id_col).unwrap_or("");
        if id.is_empty() {
            return Err(CohortError::MissingValue { line, column: schema.id_column.clone() });
        }
        let raw_label = record.get(label_col).unwrap_or("");
        let label = raw_label
            .parse::<i64>()
            .ok()
            .and_then(Label::from_code)
            .ok_or_else(|| CohortError::InvalidLabel { line, value: raw_label.to_string() })?;
        for &j in &cov_cols {
            covs.push(parse_cell(&record, j, &header[j], line)?);
        }
        for &j in &feat_cols {
            feats.push(parse_cell(&record, j, &header[j], line)?);
        }
        ids.push(id.to_string());
        labels.push(label);
    }

    let n = ids.len();
    let features = Array2::from_shape_vec((n, feat_cols.len()), feats).expect("row-major fill");
    let covariates = Array2::from_shape_vec((n, cov_cols.len()), covs).expect("row-major fill");
    let feature_names = feat_cols.iter().map(|&j| header[j].to_string()).collect();
    let covariate_names = cov_cols.iter().map(|&j| header[j].to_string()).collect();
    Cohort::new(ids, feature_names, covariate_names, features, labels, covariates)
}

fn parse_cell(record: &csv::StringRecord, col: usize, name: &str, line: u64) -> Result<f64, CohortError> {
    let raw = record.get(col).unwrap_or("");
    if raw.is_empty() || raw.eq_ignore_ascii_case("na") || raw.eq_ignore_ascii_case("nan") {
        return Err(CohortError::MissingValue { line, column: name.to_string() });
    }
    let v: f64 = raw.parse().map_err(|_| CohortError::NonNumeric {
        line,
        column: name.to_string(),
        value: raw.to_string(),
    })?;
    if !v.is_finite() {
        return Err(CohortError::NonFinite { line, column: name.to_string() });
    }
    Ok(v)
}

fn csv_error(e: csv::Error) -> CohortError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CohortError::Io(io),
        other => CohortError::Csv { line, message: format!("{other:?}") },
    }
}

pub fn save_cohort(path: impl AsRef<Path>, cohort: &Cohort) -> Result<(), CohortError> {
    let mut out = BufWriter::new(File::create(path)?);
    write_cohort(&mut out, cohort)?;
    out.flush()?;
    Ok(())
}

/// Writes `id,label,<covariates>,<features>`. Floats use the shortest
/// representation that parses back to the same bits.
pub fn write_cohort<W: Write>(mut out: W, cohort: &Cohort) -> Result<(), CohortError> {
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend(cohort.covariate_names.iter().cloned());
    header.extend(cohort.feature_names.iter().cloned());
    writeln!(out, "{}", header.join(","))?;
    for i in 0..cohort.n_samples() {
        let mut line = format!("{},{}", cohort.sample_ids[i], cohort.labels[i].code());
        for v in cohort.covariates.row(i) {
            line.push(',');
            line.push_str(&v.to_string());
        }
        for v in cohort.features.row(i) {
            line.push(',');
            line.push_str(&v.to_string());
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}
