//! Mixed-type tables: schema metadata, CSV ingestion, and reversible preprocessing.

mod preprocess;

pub use preprocess::{ColumnState, EncodedMatrix, PreprocessState};

use std::collections::{HashMap, HashSet};
use std::io::Read;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous,
    Binary,
    Categorical,
    Integer,
}

impl ColumnKind {
    /// Continuous and integer columns share the standardized Gaussian pipeline.
    pub fn is_numeric(self) -> bool {
        matches!(self, ColumnKind::Continuous | ColumnKind::Integer)
    }

    pub fn is_discrete(self) -> bool {
        !self.is_numeric()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<Vec<String>>,
}

impl ColumnMeta {
    pub fn continuous(name: &str) -> Self {
        Self::new(name, ColumnKind::Continuous)
    }

    pub fn integer(name: &str) -> Self {
        Self::new(name, ColumnKind::Integer)
    }

    pub fn binary(name: &str) -> Self {
        Self::new(name, ColumnKind::Binary)
    }

    pub fn categorical(name: &str, categories: &[&str]) -> Self {
        ColumnMeta {
            num_classes: Some(categories.len()),
            categories: Some(categories.iter().map(|s| s.to_string()).collect()),
            ..Self::new(name, ColumnKind::Categorical)
        }
    }

    fn new(name: &str, kind: ColumnKind) -> Self {
        ColumnMeta {
            name: name.to_string(),
            kind,
            num_classes: None,
            bounds: None,
            categories: None,
        }
    }

    pub fn with_bounds(mut self, low: f64, high: f64) -> Self {
        self.bounds = Some((low, high));
        self
    }

    /// Number of distinct values for discrete columns (2 for binary).
    pub fn cardinality(&self) -> Option<usize> {
        match self.kind {
            ColumnKind::Binary => Some(2),
            ColumnKind::Categorical => self.num_classes,
            _ => None,
        }
    }

    /// Raw labels for a categorical column, defaulting to "0".."K-1".
    pub fn labels(&self) -> Vec<String> {
        match (&self.categories, self.num_classes) {
            (Some(c), _) => c.clone(),
            (None, Some(k)) => (0..k).map(|i| i.to_string()).collect(),
            (None, None) => Vec::new(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.kind == ColumnKind::Categorical {
            let k = self
                .num_classes
                .ok_or_else(|| Error::Schema(format!("categorical `{}` needs num_classes", self.name)))?;
            if k < 2 {
                return Err(Error::Schema(format!(
                    "categorical `{}` needs num_classes >= 2",
                    self.name
                )));
            }
            if let Some(c) = &self.categories {
                if c.len() != k {
                    return Err(Error::Schema(format!(
                        "categorical `{}` lists {} categories but num_classes = {k}",
                        self.name,
                        c.len()
                    )));
                }
                let unique: HashSet<_> = c.iter().collect();
                if unique.len() != c.len() {
                    return Err(Error::Schema(format!(
                        "categorical `{}` has duplicate labels",
                        self.name
                    )));
                }
            }
        }
        if let Some((lo, hi)) = self.bounds {
            if !(lo < hi) {
                return Err(Error::Schema(format!(
                    "bounds of `{}` must satisfy low < high",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub columns: Vec<ColumnMeta>,
    pub treatment: String,
    pub outcome: String,
    pub covariates: Vec<String>,
}

impl DatasetSchema {
    pub fn new(columns: Vec<ColumnMeta>, treatment: &str, outcome: &str, covariates: &[&str]) -> Result<Self> {
        let schema = DatasetSchema {
            columns,
            treatment: treatment.to_string(),
            outcome: outcome.to_string(),
            covariates: covariates.iter().map(|s| s.to_string()).collect(),
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let schema: DatasetSchema = serde_json::from_str(text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for c in &self.columns {
            c.validate()?;
            if !seen.insert(c.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column `{}`", c.name)));
            }
        }
        let t = self.meta(&self.treatment)?;
        if t.kind != ColumnKind::Binary {
            return Err(Error::Schema(format!("treatment `{}` must be binary", t.name)));
        }
        self.meta(&self.outcome)?;
        if self.treatment == self.outcome {
            return Err(Error::Schema("treatment and outcome must differ".into()));
        }
        let mut cov_seen = HashSet::new();
        for c in &self.covariates {
            self.meta(c)?;
            if c == &self.treatment || c == &self.outcome {
                return Err(Error::Schema(format!("covariate `{c}` duplicates treatment/outcome")));
            }
            if !cov_seen.insert(c.as_str()) {
                return Err(Error::Schema(format!("covariate `{c}` listed twice")));
            }
        }
        Ok(())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn meta(&self, name: &str) -> Result<&ColumnMeta> {
        self.index_of(name)
            .map(|i| &self.columns[i])
            .ok_or_else(|| Error::Schema(format!("unknown column `{name}`")))
    }

    /// Column indices of treatment, outcome and covariates (covariates first, schema order kept).
    pub fn modeled_columns(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = self.covariates.iter().filter_map(|c| self.index_of(c)).collect();
        idx.extend(self.index_of(&self.treatment));
        idx.extend(self.index_of(&self.outcome));
        idx
    }

    /// Hex SHA-256 of the canonical JSON form; ties bundle components to one schema.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("schema serializes");
        hex_digest(json.as_bytes())
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Observational table in column-major form. Discrete values are stored as
/// class indices (binary in {0,1}); numeric columns hold raw floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    schema: Arc<DatasetSchema>,
    columns: Vec<Vec<f64>>,
    n_rows: usize,
}

impl Table {
    pub fn new(schema: Arc<DatasetSchema>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if columns.len() != schema.columns.len() {
            return Err(Error::SchemaMismatch(format!(
                "{} value columns for {} schema columns",
                columns.len(),
                schema.columns.len()
            )));
        }
        let n_rows = columns.first().map_or(0, Vec::len);
        for (meta, col) in schema.columns.iter().zip(&columns) {
            if col.len() != n_rows {
                return Err(Error::Invalid(format!(
                    "column `{}` has length {} != {n_rows}",
                    meta.name,
                    col.len()
                )));
            }
            for (row, &v) in col.iter().enumerate() {
                check_value(meta, v).map_err(|message| Error::Cell {
                    row,
                    column: meta.name.clone(),
                    message,
                })?;
            }
        }
        Ok(Table {
            schema,
            columns,
            n_rows,
        })
    }

    pub fn schema(&self) -> &Arc<DatasetSchema> {
        &self.schema
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        let i = self
            .schema
            .index_of(name)
            .ok_or_else(|| Error::Schema(format!("unknown column `{name}`")))?;
        Ok(&self.columns[i])
    }

    pub fn treatment(&self) -> &[f64] {
        self.column(&self.schema.treatment).expect("validated schema")
    }

    pub fn outcome(&self) -> &[f64] {
        self.column(&self.schema.outcome).expect("validated schema")
    }

    /// Raw covariate values of one row, keyed by column name.
    pub fn covariate_row(&self, row: usize) -> HashMap<&str, f64> {
        self.schema
            .covariates
            .iter()
            .map(|c| (c.as_str(), self.column(c).expect("validated schema")[row]))
            .collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Table {
        let columns = self
            .columns
            .iter()
            .map(|col| rows.iter().map(|&r| col[r]).collect())
            .collect();
        Table {
            schema: self.schema.clone(),
            columns,
            n_rows: rows.len(),
        }
    }

    pub fn load_csv(path: impl AsRef<Path>, schema: Arc<DatasetSchema>) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::read_csv(file, schema)
    }

    /// Parses a headered CSV whose header matches the schema in any order.
    /// Extra columns are ignored.
    pub fn read_csv<R: Read>(reader: R, schema: Arc<DatasetSchema>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let mut positions = Vec::with_capacity(schema.columns.len());
        for meta in &schema.columns {
            let pos = headers
                .iter()
                .position(|h| h.trim() == meta.name)
                .ok_or_else(|| Error::SchemaMismatch(format!("CSV is missing column `{}`", meta.name)))?;
            positions.push(pos);
        }
        let lookups: Vec<Option<HashMap<String, usize>>> = schema
            .columns
            .iter()
            .map(|m| {
                (m.kind == ColumnKind::Categorical)
                    .then(|| m.labels().into_iter().enumerate().map(|(i, l)| (l, i)).collect())
            })
            .collect();

        let mut columns: Vec<Vec<f64>> = vec![Vec::new(); schema.columns.len()];
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            for (j, meta) in schema.columns.iter().enumerate() {
                let cell = record.get(positions[j]).unwrap_or("").trim();
                let cell_err = |message: String| Error::Cell {
                    row,
                    column: meta.name.clone(),
                    message,
                };
                if cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell.eq_ignore_ascii_case("nan") {
                    return Err(cell_err("missing value".into()));
                }
                let v = match &lookups[j] {
                    Some(map) => *map
                        .get(cell)
                        .ok_or_else(|| cell_err(format!("unknown category `{cell}`")))?
                        as f64,
                    None => cell
                        .parse::<f64>()
                        .map_err(|_| cell_err(format!("cannot parse `{cell}` as a number")))?,
                };
                check_value(meta, v).map_err(cell_err)?;
                columns[j].push(v);
            }
        }
        Table::new(schema, columns)
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(self.schema.columns.iter().map(|c| c.name.as_str()))?;
        let labels: Vec<Vec<String>> = self.schema.columns.iter().map(ColumnMeta::labels).collect();
        for r in 0..self.n_rows {
            let record: Vec<String> = self
                .schema
                .columns
                .iter()
                .enumerate()
                .map(|(j, m)| format_value(m, &labels[j], self.columns[j][r]))
                .collect();
            wtr.write_record(&record)?;
        }
        wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

pub(crate) fn format_value(meta: &ColumnMeta, labels: &[String], v: f64) -> String {
    match meta.kind {
        ColumnKind::Categorical => labels[v as usize].clone(),
        ColumnKind::Binary => format!("{}", v as u8),
        ColumnKind::Integer if v.fract() == 0.0 => format!("{}", v as i64),
        _ => format!("{v}"),
    }
}

fn check_value(meta: &ColumnMeta, v: f64) -> std::result::Result<(), String> {
    if !v.is_finite() {
        return Err("non-finite value".into());
    }
    match meta.kind {
        ColumnKind::Binary if v != 0.0 && v != 1.0 => Err(format!("binary value {v} outside {{0,1}}")),
        ColumnKind::Categorical => {
            let k = meta.num_classes.unwrap_or(0);
            if v.fract() != 0.0 || v < 0.0 || v as usize >= k {
                Err(format!("class index {v} outside [0, {k})"))
            } else {
                Ok(())
            }
        }
        _ => Ok(()),
    }
}

/// Seeded row partition. Returns (train, validation) index sets; the training
/// part has round(n * (1 - val_fraction)) rows.
pub fn split_indices(n_rows: usize, val_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Invalid(format!(
            "validation fraction {val_fraction} must lie in (0, 1)"
        )));
    }
    if n_rows < 5 {
        return Err(Error::Invalid(format!("need at least 5 rows to split, got {n_rows}")));
    }
    let mut idx: Vec<usize> = (0..n_rows).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let n_train = (n_rows as f64 * (1.0 - val_fraction)).round() as usize;
    let val = idx.split_off(n_train);
    Ok((idx, val))
}

pub fn split_train_val(table: &Table, val_fraction: f64, seed: u64) -> Result<(Table, Table)> {
    let (train, val) = split_indices(table.n_rows(), val_fraction, seed)?;
    Ok((table.select_rows(&train), table.select_rows(&val)))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn small_schema() -> Arc<DatasetSchema> {
        Arc::new(
            DatasetSchema::new(
                vec![
                    ColumnMeta::continuous("age"),
                    ColumnMeta::binary("cvd"),
                    ColumnMeta::binary("t"),
                    ColumnMeta::continuous("y"),
                ],
                "t",
                "y",
                &["age", "cvd"],
            )
            .unwrap(),
        )
    }

    #[test]
    fn loads_three_rows() {
        let csv = "age,cvd,t,y\n61.5,1,0,0.3\n70,0,1,1.2\n55,0,0,-0.4\n";
        let t = Table::read_csv(csv.as_bytes(), small_schema()).unwrap();
        assert_eq!(t.n_rows(), 3);
        assert_eq!(t.column("age").unwrap(), &[61.5, 70.0, 55.0]);
    }

    #[test]
    fn header_order_is_irrelevant() {
        let csv = "y,t,cvd,age,extra\n0.3,0,1,61.5,zzz\n";
        let t = Table::read_csv(csv.as_bytes(), small_schema()).unwrap();
        assert_eq!(t.column("cvd").unwrap(), &[1.0]);
    }

    #[test]
    fn unparsable_cell_names_row_and_column() {
        let csv = "age,cvd,t,y\n61.5,1,0,0.3\nyes,0,1,1.2\n";
        match Table::read_csv(csv.as_bytes(), small_schema()) {
            Err(Error::Cell { row, column, .. }) => {
                assert_eq!(row, 1);
                assert_eq!(column, "age");
            }
            other => panic!("expected cell error, got {other:?}"),
        }
    }

    #[test]
    fn missing_column_is_schema_mismatch() {
        let csv = "age,cvd,t\n61.5,1,0\n";
        assert!(matches!(
            Table::read_csv(csv.as_bytes(), small_schema()),
            Err(Error::SchemaMismatch(_))
        ));
    }

    #[test]
    fn missing_value_and_bad_binary_rejected() {
        let csv = "age,cvd,t,y\n,1,0,0.3\n";
        assert!(matches!(
            Table::read_csv(csv.as_bytes(), small_schema()),
            Err(Error::Cell { .. })
        ));
        let csv = "age,cvd,t,y\n50,2,0,0.3\n";
        assert!(matches!(
            Table::read_csv(csv.as_bytes(), small_schema()),
            Err(Error::Cell { .. })
        ));
    }

    #[test]
    fn unknown_category_rejected() {
        let schema = Arc::new(
            DatasetSchema::new(
                vec![
                    ColumnMeta::categorical("race", &["a", "b", "c"]),
                    ColumnMeta::binary("t"),
                    ColumnMeta::binary("y"),
                ],
                "t",
                "y",
                &["race"],
            )
            .unwrap(),
        );
        let ok = Table::read_csv("race,t,y\nb,1,0\n".as_bytes(), schema.clone()).unwrap();
        assert_eq!(ok.column("race").unwrap(), &[1.0]);
        assert!(Table::read_csv("race,t,y\nd,1,0\n".as_bytes(), schema).is_err());
    }

    #[test]
    fn schema_invariants() {
        let cols = vec![
            ColumnMeta::continuous("x"),
            ColumnMeta::continuous("t"),
            ColumnMeta::binary("y"),
        ];
        assert!(
            DatasetSchema::new(cols, "t", "y", &["x"]).is_err(),
            "non-binary treatment"
        );
        let cols = vec![ColumnMeta::binary("t"), ColumnMeta::binary("y")];
        assert!(DatasetSchema::new(cols.clone(), "t", "y", &["t"]).is_err());
        assert!(DatasetSchema::new(cols, "t", "y", &["zz"]).is_err());
        let bad = ColumnMeta::continuous("x").with_bounds(1.0, 1.0);
        assert!(DatasetSchema::new(
            vec![bad, ColumnMeta::binary("t"), ColumnMeta::binary("y")],
            "t",
            "y",
            &["x"]
        )
        .is_err());
        let mut cat = ColumnMeta::categorical("c", &["a"]);
        cat.num_classes = Some(1);
        assert!(DatasetSchema::new(
            vec![cat, ColumnMeta::binary("t"), ColumnMeta::binary("y")],
            "t",
            "y",
            &["c"]
        )
        .is_err());
    }

    #[test]
    fn schema_json_round_trip() {
        let s = small_schema();
        let json = serde_json::to_string(&*s).unwrap();
        assert_eq!(DatasetSchema::from_json(&json).unwrap(), *s);
        let with_bounds = r#"{"columns":[{"name":"x","kind":"continuous","bounds":[0,100]},
            {"name":"t","kind":"binary"},{"name":"y","kind":"categorical","num_classes":2,"categories":["no","yes"]}],
            "treatment":"t","outcome":"y","covariates":["x"]}"#;
        let s = DatasetSchema::from_json(with_bounds).unwrap();
        assert_eq!(s.columns[0].bounds, Some((0.0, 100.0)));
    }

    fn table_of(n: usize) -> Table {
        let age: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let zeros = vec![0.0; n];
        Table::new(small_schema(), vec![age.clone(), zeros.clone(), zeros, age]).unwrap()
    }

    #[test]
    fn split_sizes_and_determinism() {
        let t = table_of(10);
        let (a, b) = split_train_val(&t, 0.2, 7).unwrap();
        assert_eq!((a.n_rows(), b.n_rows()), (8, 2));
        let (a2, b2) = split_train_val(&t, 0.2, 7).unwrap();
        assert_eq!(a, a2);
        assert_eq!(b, b2);
        let (a, b) = split_train_val(&table_of(100), 0.2, 1).unwrap();
        assert_eq!((a.n_rows(), b.n_rows()), (80, 20));
    }

    #[test]
    fn split_rejects_bad_fraction() {
        assert!(split_indices(10, 0.0, 1).is_err());
        assert!(split_indices(10, 1.0, 1).is_err());
        assert!(split_indices(4, 0.5, 1).is_err());
    }

    proptest::proptest! {
        #[test]
        fn split_is_a_partition(n in 5usize..300, f in 0.05f64..0.95, seed in 0u64..1000) {
            let (tr, va) = split_indices(n, f, seed).unwrap();
            let mut all: Vec<usize> = tr.iter().chain(&va).copied().collect();
            all.sort_unstable();
            proptest::prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            proptest::prop_assert_eq!(tr.len(), (n as f64 * (1.0 - f)).round() as usize);
        }
    }
}
