//! Tabular data with an explicit column schema.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ColumnKind {
    Numeric,
    /// One-hot encoded over the listed values.
    Categorical { values: Vec<String> },
    /// Class index is the position in `values`.
    Label { values: Vec<String> },
    /// Rows sharing a value form one task.
    Task,
    Ignore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub columns: Vec<ColumnSpec>,
}

impl CsvSchema {
    fn validate(&self) -> Result<&[String]> {
        let mut label = None;
        let mut tasks = 0;
        for c in &self.columns {
            match &c.kind {
                ColumnKind::Label { values } => {
                    if label.replace(values).is_some() {
                        return Err(Error::Config("csv schema declares more than one label column".into()));
                    }
                }
                ColumnKind::Task => tasks += 1,
                ColumnKind::Categorical { values } if values.is_empty() => {
                    return Err(Error::Config(format!("categorical column {} lists no values", c.name)));
                }
                _ => {}
            }
        }
        if tasks > 1 {
            return Err(Error::Config("csv schema declares more than one task column".into()));
        }
        match label {
            Some(v) if v.len() >= 2 => Ok(v),
            Some(_) => Err(Error::Config("label column needs at least two values".into())),
            None => Err(Error::Config("csv schema declares no label column".into())),
        }
    }

    /// Width of the encoded feature vector.
    pub fn feature_dim(&self) -> usize {
        self.columns
            .iter()
            .map(|c| match &c.kind {
                ColumnKind::Numeric => 1,
                ColumnKind::Categorical { values } => values.len(),
                _ => 0,
            })
            .sum()
    }
}

/// Encoded rows plus the task value of each row (empty without a task column).
#[derive(Debug, Clone)]
pub struct CsvRows<T> {
    pub data: Dataset<T>,
    pub task_ids: Vec<String>,
}

pub fn load_csv<T: Scalar>(path: &Path, schema: &CsvSchema) -> Result<CsvRows<T>> {
    let file = std::fs::File::open(path)?;
    parse_csv(file, schema).map_err(|e| match e {
        Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn parse_csv<T: Scalar, R: std::io::Read>(reader: R, schema: &CsvSchema) -> Result<CsvRows<T>> {
    let label_values = schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Parse(format!("header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut order = Vec::with_capacity(header.len());
    for name in &header {
        let spec = schema
            .columns
            .iter()
            .find(|c| &c.name == name)
            .ok_or_else(|| Error::Parse(format!("unknown schema column {name:?} in header")))?;
        order.push(spec);
    }
    if let Some(missing) = schema.columns.iter().find(|c| !header.contains(&c.name)) {
        return Err(Error::Parse(format!("schema column {:?} missing from header", missing.name)));
    }
    let dim = schema.feature_dim();
    let mut x = Vec::new();
    let mut labels = Vec::new();
    let mut task_ids = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != header.len() {
            return Err(Error::Parse(format!(
                "line {line}: expected {} fields, found {}",
                header.len(),
                rec.len()
            )));
        }
        for (field, spec) in rec.iter().zip(&order) {
            let field = field.trim();
            if field.is_empty() && spec.kind != ColumnKind::Ignore {
                return Err(Error::Parse(format!("line {line}: missing value in column {:?}", spec.name)));
            }
            let unknown = || Error::Parse(format!("line {line}: unknown value {field:?} in column {:?}", spec.name));
            match &spec.kind {
                ColumnKind::Numeric => {
                    let v: f64 = field
                        .parse()
                        .map_err(|_| Error::Parse(format!("line {line}: non-numeric {field:?} in column {:?}", spec.name)))?;
                    if !v.is_finite() {
                        return Err(Error::Parse(format!("line {line}: non-finite value in column {:?}", spec.name)));
                    }
                    x.push(T::of(v));
                }
                ColumnKind::Categorical { values } => {
                    let hot = values.iter().position(|v| v == field).ok_or_else(unknown)?;
                    x.extend((0..values.len()).map(|i| if i == hot { T::one() } else { T::zero() }));
                }
                ColumnKind::Label { values } => labels.push(values.iter().position(|v| v == field).ok_or_else(unknown)?),
                ColumnKind::Task => task_ids.push(field.to_string()),
                ColumnKind::Ignore => {}
            }
        }
    }
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(CsvRows {
        data: Dataset::new(x, dim.max(1), labels, label_values.len())?,
        task_ids,
    })
}

/// One dataset per distinct task value, in sorted value order.
pub fn load_csv_tasks<T: Scalar>(path: &Path, schema: &CsvSchema) -> Result<Vec<Dataset<T>>> {
    let rows = load_csv::<T>(path, schema)?;
    if rows.task_ids.is_empty() {
        return Ok(vec![rows.data]);
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, t) in rows.task_ids.iter().enumerate() {
        groups.entry(t).or_default().push(i);
    }
    Ok(groups.values().map(|idx| rows.data.subset(idx)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> CsvSchema {
        serde_json::from_str(
            r#"{"columns": [
                {"name": "age", "type": "numeric"},
                {"name": "sex", "type": "categorical", "values": ["f", "m"]},
                {"name": "state", "type": "task"},
                {"name": "note", "type": "ignore"},
                {"name": "y", "type": "label", "values": ["no", "yes"]}
            ]}"#,
        )
        .unwrap()
    }

    #[test]
    fn parses_and_encodes() {
        let text = "age,sex,state,note,y\n30,m,CA,,yes\n41,f,NY,x,no\n22,f,CA,,no\n";
        let r: CsvRows<f64> = parse_csv(text.as_bytes(), &schema()).unwrap();
        assert_eq!(r.data.dim(), 3);
        assert_eq!(r.data.row(0), &[30.0, 0.0, 1.0]);
        assert_eq!(r.data.labels(), &[1, 0, 0]);
        assert_eq!(r.task_ids, vec!["CA", "NY", "CA"]);
    }

    #[test]
    fn errors_name_the_line() {
        let s = schema();
        let e = parse_csv::<f64, _>("age,sex,state,note,y\n30,m,CA,,yes\n,f,NY,,no\n".as_bytes(), &s).unwrap_err();
        assert!(e.to_string().contains("line 3") && e.to_string().contains("missing"), "{e}");
        let e = parse_csv::<f64, _>("age,sex,state,note,y\n30,m,CA,yes\n".as_bytes(), &s).unwrap_err();
        assert!(e.to_string().contains("line 2") && e.to_string().contains("fields"), "{e}");
        let e = parse_csv::<f64, _>("age,sex,state,note,y,extra\n".as_bytes(), &s).unwrap_err();
        assert!(e.to_string().contains("unknown schema column"), "{e}");
        let e = parse_csv::<f64, _>("age,sex,state,note,y\n30,x,CA,,yes\n".as_bytes(), &s).unwrap_err();
        assert!(e.to_string().contains("unknown value"), "{e}");
    }

    #[test]
    fn groups_by_task() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "age,sex,state,note,y\n30,m,NY,,yes\n41,f,CA,x,no\n22,f,NY,,no\n").unwrap();
        let tasks: Vec<Dataset<f32>> = load_csv_tasks(&p, &schema()).unwrap();
        assert_eq!(tasks.iter().map(Dataset::len).collect::<Vec<_>>(), vec![1, 2]);
    }
}
