//! Tabular observations: schema validation, CSV ingestion, quantile
//! discretization and time-based splitting.
//!
//! Both detectors consume an [`ObservationTable`]. The subset scanner needs
//! every scanned attribute to be categorical, so numeric columns are first cut
//! at training-set quantiles with [`fit_quartile_bins`] and [`apply_bins`].

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Token used for missing cells, both in CSV files and as a scan category.
pub const MISSING_TOKEN: &str = "NA";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeRole {
    Feature,
    Outcome,
    Timestamp,
    Identifier,
    /// Carried through tables and CSV files but never analysed.
    Auxiliary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub kind: AttributeKind,
    pub role: AttributeRole,
}

impl Attribute {
    pub fn new(name: impl Into<String>, kind: AttributeKind, role: AttributeRole) -> Self {
        Self {
            name: name.into(),
            kind,
            role,
        }
    }

    pub fn numeric_feature(name: impl Into<String>) -> Self {
        Self::new(name, AttributeKind::Numeric, AttributeRole::Feature)
    }

    pub fn categorical_feature(name: impl Into<String>) -> Self {
        Self::new(name, AttributeKind::Categorical, AttributeRole::Feature)
    }

    pub fn outcome(name: impl Into<String>) -> Self {
        Self::new(name, AttributeKind::Numeric, AttributeRole::Outcome)
    }
}

/// Ordered list of attributes. Serializes as a JSON array of
/// `{name, kind, role}` objects.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Attribute>", into = "Vec<Attribute>")]
pub struct Schema {
    attributes: Vec<Attribute>,
}

impl TryFrom<Vec<Attribute>> for Schema {
    type Error = Error;

    fn try_from(attributes: Vec<Attribute>) -> Result<Self> {
        Schema::new(attributes)
    }
}

impl From<Schema> for Vec<Attribute> {
    fn from(schema: Schema) -> Self {
        schema.attributes
    }
}

impl Schema {
    pub fn new(attributes: Vec<Attribute>) -> Result<Self> {
        let mut seen = HashSet::new();
        for attr in &attributes {
            if !seen.insert(attr.name.as_str()) {
                return Err(Error::Schema(format!("duplicate attribute {:?}", attr.name)));
            }
        }
        let outcomes: Vec<_> = attributes
            .iter()
            .filter(|a| a.role == AttributeRole::Outcome)
            .collect();
        if outcomes.len() > 1 {
            return Err(Error::Schema(format!(
                "at most one outcome attribute allowed, found {}",
                outcomes.len()
            )));
        }
        if let Some(outcome) = outcomes.first() {
            if outcome.kind != AttributeKind::Numeric {
                return Err(Error::Schema(format!(
                    "outcome {:?} must be numeric (binary 0/1)",
                    outcome.name
                )));
            }
        }
        for attr in &attributes {
            if attr.role == AttributeRole::Timestamp && attr.kind != AttributeKind::Categorical {
                return Err(Error::Schema(format!(
                    "timestamp {:?} must be declared categorical (ISO-8601 date text)",
                    attr.name
                )));
            }
        }
        Ok(Self { attributes })
    }

    pub fn from_json_reader<R: Read>(reader: R) -> Result<Self> {
        Ok(serde_json::from_reader(reader)?)
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Attribute> {
        self.attributes.iter().find(|a| a.name == name)
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.attributes
            .iter()
            .filter(|a| a.role == AttributeRole::Feature)
            .map(|a| a.name.clone())
            .collect()
    }

    pub fn outcome(&self) -> Option<&Attribute> {
        self.attributes.iter().find(|a| a.role == AttributeRole::Outcome)
    }

    pub fn timestamp(&self) -> Option<&Attribute> {
        self.attributes.iter().find(|a| a.role == AttributeRole::Timestamp)
    }

    pub fn identifier(&self) -> Option<&Attribute> {
        self.attributes.iter().find(|a| a.role == AttributeRole::Identifier)
    }

    fn require(&self, name: &str) -> Result<usize> {
        self.index_of(name)
            .ok_or_else(|| Error::Schema(format!("unknown attribute {name:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Number(f64),
    Category(String),
    Missing,
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Number(x) => Some(*x),
            _ => None,
        }
    }

    pub fn is_missing(&self) -> bool {
        matches!(self, Value::Missing)
    }

    /// Category token for scanning; missing cells map to [`MISSING_TOKEN`].
    pub fn token(&self) -> String {
        match self {
            Value::Number(x) => x.to_string(),
            Value::Category(s) => s.clone(),
            Value::Missing => MISSING_TOKEN.to_string(),
        }
    }
}

/// Immutable table of records; row `i` holds one value per schema attribute,
/// in schema order.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationTable {
    schema: Schema,
    rows: Vec<Vec<Value>>,
}

impl ObservationTable {
    pub fn new(schema: Schema, rows: Vec<Vec<Value>>) -> Result<Self> {
        for (i, row) in rows.iter().enumerate() {
            if row.len() != schema.len() {
                return Err(Error::Schema(format!(
                    "row {} has {} values, schema has {} attributes",
                    i + 1,
                    row.len(),
                    schema.len()
                )));
            }
            for (attr, value) in schema.attributes.iter().zip(row) {
                check_value(attr, value, i + 1)?;
            }
        }
        Ok(Self { schema, rows })
    }

    pub fn empty(schema: Schema) -> Self {
        Self {
            schema,
            rows: Vec::new(),
        }
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn rows(&self) -> &[Vec<Value>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn value(&self, row: usize, attr: &str) -> Option<&Value> {
        let col = self.schema.index_of(attr)?;
        self.rows.get(row).map(|r| &r[col])
    }

    pub fn column(&self, attr: &str) -> Result<Vec<&Value>> {
        let col = self.schema.require(attr)?;
        Ok(self.rows.iter().map(|r| &r[col]).collect())
    }

    /// Record identifiers: the identifier attribute when the schema has one,
    /// otherwise the 0-based row index.
    pub fn record_ids(&self) -> Vec<String> {
        match self.schema.identifier().and_then(|a| self.schema.index_of(&a.name)) {
            Some(col) => self.rows.iter().map(|r| r[col].token()).collect(),
            None => (0..self.rows.len()).map(|i| i.to_string()).collect(),
        }
    }

    pub fn select_rows(&self, indices: &[usize]) -> Self {
        Self {
            schema: self.schema.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    /// Rows in `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            schema: self.schema.clone(),
            rows: self.rows[start..end.min(self.rows.len())].to_vec(),
        }
    }

    /// Appends the rows of `other`, which must have an identical schema.
    pub fn concat(&self, other: &ObservationTable) -> Result<Self> {
        if self.schema != other.schema {
            return Err(Error::Schema("cannot concatenate tables with different schemas".into()));
        }
        let mut rows = self.rows.clone();
        rows.extend(other.rows.iter().cloned());
        Ok(Self {
            schema: self.schema.clone(),
            rows,
        })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(self.schema.attributes.iter().map(|a| a.name.as_str()))?;
        for row in &self.rows {
            out.write_record(row.iter().map(Value::token))?;
        }
        out.flush()?;
        Ok(())
    }
}

fn check_value(attr: &Attribute, value: &Value, row: usize) -> Result<()> {
    let bad = |message: String| Error::Parse {
        row,
        column: attr.name.clone(),
        message,
    };
    match (attr.kind, value) {
        (_, Value::Missing) => Ok(()),
        (AttributeKind::Numeric, Value::Number(x)) => {
            if !x.is_finite() {
                return Err(bad(format!("non-finite value {x}")));
            }
            if attr.role == AttributeRole::Outcome && *x != 0.0 && *x != 1.0 {
                return Err(bad(format!("outcome must be 0 or 1, got {x}")));
            }
            Ok(())
        }
        (AttributeKind::Categorical, Value::Category(s)) => {
            if attr.role == AttributeRole::Timestamp {
                parse_date(s).map_err(bad)?;
            }
            Ok(())
        }
        (AttributeKind::Numeric, Value::Category(s)) => {
            Err(bad(format!("expected a number, got {s:?}")))
        }
        (AttributeKind::Categorical, Value::Number(x)) => {
            Err(bad(format!("expected a category token, got number {x}")))
        }
    }
}

pub fn parse_date(text: &str) -> std::result::Result<NaiveDate, String> {
    NaiveDate::parse_from_str(text.trim(), "%Y-%m-%d")
        .map_err(|e| format!("invalid ISO-8601 date {text:?}: {e}"))
}

/// Reads a CSV document with a header row. Columns not named by the schema are
/// ignored; every schema attribute must be present.
pub fn load_table<R: Read>(source: R, schema: &Schema) -> Result<ObservationTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let mut columns = Vec::with_capacity(schema.len());
    let mut missing = Vec::new();
    for attr in schema.attributes() {
        match headers.iter().position(|h| h == attr.name) {
            Some(i) => columns.push(i),
            None => missing.push(attr.name.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Schema(format!("missing column(s): {}", missing.join(", "))));
    }

    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row_no = i + 1;
        let mut row = Vec::with_capacity(schema.len());
        for (attr, &col) in schema.attributes().iter().zip(&columns) {
            let cell = record.get(col).unwrap_or("");
            row.push(parse_cell(attr, cell, row_no)?);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyTable);
    }
    ObservationTable::new(schema.clone(), rows)
}

fn parse_cell(attr: &Attribute, cell: &str, row: usize) -> Result<Value> {
    if cell == MISSING_TOKEN {
        return Ok(Value::Missing);
    }
    match attr.kind {
        AttributeKind::Numeric => cell
            .parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .map(Value::Number)
            .ok_or_else(|| Error::Parse {
                row,
                column: attr.name.clone(),
                message: format!("cannot parse {cell:?} as a finite number"),
            }),
        AttributeKind::Categorical => Ok(Value::Category(cell.to_string())),
    }
}

/// Per numeric attribute, the ordered bin edges fitted on training data.
/// Serializes as `{attribute: [edges]}`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DiscretizationSpec {
    pub edges: BTreeMap<String, Vec<f64>>,
}

impl DiscretizationSpec {
    pub fn bin(&self, attr: &str, x: f64) -> Option<usize> {
        self.edges.get(attr).map(|e| bin_index(e, x))
    }

    pub fn contains(&self, attr: &str) -> bool {
        self.edges.contains_key(attr)
    }
}

/// Bin `i` is `(edges[i-1], edges[i]]`; values above the top edge land in the
/// last bin.
pub fn bin_index(edges: &[f64], x: f64) -> usize {
    edges.partition_point(|&e| e < x)
}

pub fn bin_token(bin: usize) -> String {
    format!("b{bin}")
}

/// Linear-interpolation quantile of an ascending slice (`h = (n-1)p`).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn fit_quartile_bins(
    train: &ObservationTable,
    quantiles: usize,
    attrs: &[String],
) -> Result<DiscretizationSpec> {
    if quantiles < 2 {
        return Err(Error::Argument(format!("quantiles must be >= 2, got {quantiles}")));
    }
    if train.is_empty() {
        return Err(Error::EmptyTable);
    }
    let mut spec = DiscretizationSpec::default();
    for name in attrs {
        let attr = train
            .schema()
            .get(name)
            .ok_or_else(|| Error::Schema(format!("unknown attribute {name:?}")))?;
        if attr.kind != AttributeKind::Numeric {
            return Err(Error::Schema(format!("cannot bin categorical attribute {name:?}")));
        }
        let mut values: Vec<f64> = train
            .column(name)?
            .into_iter()
            .filter_map(Value::as_f64)
            .collect();
        if values.is_empty() {
            return Err(Error::Fit(format!("attribute {name:?} has no non-missing values")));
        }
        values.sort_by(f64::total_cmp);
        let mut edges: Vec<f64> = (1..quantiles)
            .map(|k| quantile_sorted(&values, k as f64 / quantiles as f64))
            .collect();
        edges.dedup();
        spec.edges.insert(name.clone(), prune_empty_bins(edges, &values));
    }
    Ok(spec)
}

/// Drops edges whose upper bin holds no training value, merging that bin
/// into its lower neighbour. A constant column ends with no edges at all.
fn prune_empty_bins(mut edges: Vec<f64>, sorted: &[f64]) -> Vec<f64> {
    let mut i = edges.len();
    while i > 0 {
        i -= 1;
        let lo = edges[i];
        let hi = edges.get(i + 1).copied().unwrap_or(f64::INFINITY);
        let start = sorted.partition_point(|&v| v <= lo);
        let occupied = start < sorted.len() && sorted[start] <= hi;
        if !occupied {
            edges.remove(i);
        }
    }
    edges
}

/// Replaces every attribute covered by `spec` with its bin token `b0..b{k}`;
/// missing cells stay missing.
pub fn apply_bins(table: &ObservationTable, spec: &DiscretizationSpec) -> ObservationTable {
    let binned: Vec<Option<&Vec<f64>>> = table
        .schema
        .attributes
        .iter()
        .map(|a| match a.kind {
            AttributeKind::Numeric => spec.edges.get(&a.name),
            AttributeKind::Categorical => None,
        })
        .collect();
    let attributes = table
        .schema
        .attributes
        .iter()
        .zip(&binned)
        .map(|(a, b)| match b {
            Some(_) => Attribute::new(a.name.clone(), AttributeKind::Categorical, a.role),
            None => a.clone(),
        })
        .collect();
    let rows = table
        .rows
        .iter()
        .map(|row| {
            row.iter()
                .zip(&binned)
                .map(|(v, b)| match (v, b) {
                    (Value::Number(x), Some(edges)) => Value::Category(bin_token(bin_index(edges, *x))),
                    _ => v.clone(),
                })
                .collect()
        })
        .collect();
    ObservationTable {
        schema: Schema { attributes },
        rows,
    }
}

/// Partitions rows into those strictly before `boundary` and those at or
/// after it. Rows with a missing timestamp go to the second table.
pub fn split_by_timestamp(
    table: &ObservationTable,
    boundary: NaiveDate,
) -> Result<(ObservationTable, ObservationTable)> {
    let ts = table
        .schema
        .timestamp()
        .ok_or_else(|| Error::Schema("no timestamp attribute".into()))?;
    let col = table.schema.require(&ts.name)?;
    let mut before = Vec::new();
    let mut after = Vec::new();
    for row in &table.rows {
        let is_before = match &row[col] {
            Value::Category(s) => parse_date(s).map(|d| d < boundary).unwrap_or(false),
            _ => false,
        };
        if is_before {
            before.push(row.clone());
        } else {
            after.push(row.clone());
        }
    }
    Ok((
        ObservationTable {
            schema: table.schema.clone(),
            rows: before,
        },
        ObservationTable {
            schema: table.schema.clone(),
            rows: after,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn airline_schema() -> Schema {
        Schema::new(vec![
            Attribute::numeric_feature("AdvancedPurchase"),
            Attribute::numeric_feature("LengthOfStay"),
            Attribute::numeric_feature("GroupSize"),
            Attribute::numeric_feature("TotalDuration"),
            Attribute::categorical_feature("TripType"),
        ])
        .unwrap()
    }

    fn numeric_table(name: &str, values: &[f64]) -> ObservationTable {
        let schema = Schema::new(vec![Attribute::numeric_feature(name)]).unwrap();
        let rows = values.iter().map(|&v| vec![Value::Number(v)]).collect();
        ObservationTable::new(schema, rows).unwrap()
    }

    #[test]
    fn loads_three_rows() {
        let schema = Schema::new(vec![
            Attribute::numeric_feature("AdvancedPurchase"),
            Attribute::outcome("y"),
        ])
        .unwrap();
        let csv = "AdvancedPurchase,y\n10,1\n20,0\n30,1\n";
        let table = load_table(csv.as_bytes(), &schema).unwrap();
        assert_eq!(table.len(), 3);
        assert_eq!(table.value(1, "AdvancedPurchase"), Some(&Value::Number(20.0)));
    }

    #[test]
    fn missing_column_is_named() {
        let csv = "AdvancedPurchase,LengthOfStay,TotalDuration,TripType\n1,2,3,OneWay\n";
        let err = load_table(csv.as_bytes(), &airline_schema()).unwrap_err();
        match err {
            Error::Schema(msg) => assert!(msg.contains("GroupSize"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_numeric_cites_row() {
        let schema = Schema::new(vec![Attribute::numeric_feature("AdvancedPurchase")]).unwrap();
        let csv = "AdvancedPurchase\n12\nabc\n";
        match load_table(csv.as_bytes(), &schema).unwrap_err() {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "AdvancedPurchase");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_body_is_an_error() {
        let schema = Schema::new(vec![Attribute::numeric_feature("x")]).unwrap();
        assert!(matches!(load_table("x\n".as_bytes(), &schema), Err(Error::EmptyTable)));
    }

    #[test]
    fn missing_marker_and_non_binary_outcome() {
        let schema = Schema::new(vec![
            Attribute::numeric_feature("x"),
            Attribute::categorical_feature("c"),
            Attribute::outcome("y"),
        ])
        .unwrap();
        let t = load_table("x,c,y\nNA,NA,1\n".as_bytes(), &schema).unwrap();
        assert!(t.rows()[0].iter().take(2).all(Value::is_missing));
        assert!(matches!(
            load_table("x,c,y\n1,a,2\n".as_bytes(), &schema),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn schema_rejects_duplicates_and_two_outcomes() {
        assert!(Schema::new(vec![
            Attribute::numeric_feature("a"),
            Attribute::numeric_feature("a")
        ])
        .is_err());
        assert!(Schema::new(vec![Attribute::outcome("y"), Attribute::outcome("z")]).is_err());
        let json = r#"[{"name":"y","kind":"numeric","role":"outcome"},
                       {"name":"t","kind":"categorical","role":"timestamp"}]"#;
        let schema = Schema::from_json_reader(json.as_bytes()).unwrap();
        assert_eq!(schema.outcome().unwrap().name, "y");
    }

    #[test]
    fn quartiles_of_one_to_eight() {
        let t = numeric_table("x", &[1., 2., 3., 4., 5., 6., 7., 8.]);
        let spec = fit_quartile_bins(&t, 4, &["x".into()]).unwrap();
        assert_eq!(spec.edges["x"], vec![2.75, 4.5, 6.25]);
        assert_eq!(spec.bin("x", 5.0), Some(2));
        assert_eq!(spec.bin("x", 1.0), Some(0));
        assert_eq!(spec.bin("x", 10.0), Some(3));
        // upper edge is inclusive
        assert_eq!(spec.bin("x", 4.5), Some(1));
    }

    #[test]
    fn constant_column_collapses_to_one_bin() {
        let t = numeric_table("x", &[7., 7., 7.]);
        let spec = fit_quartile_bins(&t, 4, &["x".into()]).unwrap();
        assert!(spec.edges["x"].is_empty());
        assert_eq!(spec.bin("x", 7.0), Some(0));
        assert_eq!(spec.bin("x", 100.0), Some(0));
    }

    #[test]
    fn median_of_two_points() {
        let t = numeric_table("x", &[0., 100.]);
        let spec = fit_quartile_bins(&t, 2, &["x".into()]).unwrap();
        assert_eq!(spec.edges["x"], vec![50.0]);
        assert_eq!(spec.bin("x", 49.0), Some(0));
        assert_eq!(spec.bin("x", 51.0), Some(1));
    }

    #[test]
    fn fit_errors() {
        let t = numeric_table("x", &[1.0]);
        assert!(matches!(fit_quartile_bins(&t, 1, &["x".into()]), Err(Error::Argument(_))));
        let schema = Schema::new(vec![Attribute::numeric_feature("x")]).unwrap();
        let all_missing = ObservationTable::new(schema.clone(), vec![vec![Value::Missing]]).unwrap();
        assert!(matches!(
            fit_quartile_bins(&all_missing, 4, &["x".into()]),
            Err(Error::Fit(_))
        ));
        assert!(matches!(
            fit_quartile_bins(&ObservationTable::empty(schema), 4, &["x".into()]),
            Err(Error::EmptyTable)
        ));
    }

    #[test]
    fn apply_bins_tokens_and_empty() {
        let mut spec = DiscretizationSpec::default();
        spec.edges.insert("x".into(), vec![2.75, 4.5, 6.25]);
        let t = numeric_table("x", &[1.0, 10.0]);
        let b = apply_bins(&t, &spec);
        assert_eq!(b.schema().get("x").unwrap().kind, AttributeKind::Categorical);
        assert_eq!(b.rows()[0][0], Value::Category("b0".into()));
        assert_eq!(b.rows()[1][0], Value::Category("b3".into()));

        let empty = ObservationTable::empty(t.schema().clone());
        assert!(apply_bins(&empty, &spec).is_empty());
    }

    fn dated_table(dates: &[&str]) -> ObservationTable {
        let schema = Schema::new(vec![
            Attribute::new("date", AttributeKind::Categorical, AttributeRole::Timestamp),
            Attribute::numeric_feature("x"),
        ])
        .unwrap();
        let rows = dates
            .iter()
            .enumerate()
            .map(|(i, d)| vec![Value::Category(d.to_string()), Value::Number(i as f64)])
            .collect();
        ObservationTable::new(schema, rows).unwrap()
    }

    #[test]
    fn split_on_boundary() {
        let t = dated_table(&["2020-01-15", "2020-03-01", "2020-09-10"]);
        let (pre, post) = split_by_timestamp(&t, parse_date("2020-03-01").unwrap()).unwrap();
        assert_eq!(pre.len(), 1);
        assert_eq!(post.len(), 2);
        assert_eq!(post.value(0, "x"), Some(&Value::Number(1.0)));

        let (pre, post) = split_by_timestamp(&t, parse_date("2021-01-01").unwrap()).unwrap();
        assert_eq!((pre.len(), post.len()), (3, 0));
        let (pre, post) = split_by_timestamp(&t, parse_date("2020-01-15").unwrap()).unwrap();
        assert_eq!((pre.len(), post.len()), (0, 3));
    }

    #[test]
    fn split_requires_timestamp() {
        let t = numeric_table("x", &[1.0]);
        assert!(matches!(
            split_by_timestamp(&t, parse_date("2020-01-01").unwrap()),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn bad_date_rejected_at_load() {
        let schema = dated_table(&[]).schema().clone();
        assert!(matches!(
            load_table("date,x\n2020-13-01,1\n".as_bytes(), &schema),
            Err(Error::Parse { row: 1, .. })
        ));
    }

    proptest! {
        #[test]
        fn csv_round_trip(
            xs in prop::collection::vec(prop::option::of(-1e9f64..1e9), 1..40),
            cats in prop::collection::vec("[a-zA-Z ,\"]{0,6}", 40),
        ) {
            let schema = Schema::new(vec![
                Attribute::numeric_feature("x"),
                Attribute::categorical_feature("c"),
            ]).unwrap();
            let rows: Vec<Vec<Value>> = xs.iter().zip(&cats).map(|(x, c)| {
                let c = c.trim().to_string();
                let cat = if c == MISSING_TOKEN || c.is_empty() { Value::Category("z".into()) } else { Value::Category(c) };
                vec![x.map(Value::Number).unwrap_or(Value::Missing), cat]
            }).collect();
            let table = ObservationTable::new(schema.clone(), rows).unwrap();
            let mut buf = Vec::new();
            table.write_csv(&mut buf).unwrap();
            let back = load_table(buf.as_slice(), &schema).unwrap();
            prop_assert_eq!(back, table);
        }

        #[test]
        fn binning_is_monotone(values in prop::collection::vec(-1e3f64..1e3, 1..60), a in -2e3f64..2e3, b in -2e3f64..2e3) {
            let t = numeric_table("x", &values);
            let spec = fit_quartile_bins(&t, 4, &["x".into()]).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(spec.bin("x", lo).unwrap() <= spec.bin("x", hi).unwrap());
            prop_assert!(spec.edges["x"].windows(2).all(|w| w[0] < w[1]));
            prop_assert!(spec.edges["x"].len() < 4);
        }

        #[test]
        fn quartile_bins_are_balanced(n in 4usize..200, seed in any::<u64>()) {
            // distinct values in shuffled order
            let mut values: Vec<f64> = (0..n).map(|i| i as f64 * 1.5 + (seed % 7) as f64).collect();
            values.rotate_left((seed as usize) % n);
            let t = numeric_table("x", &values);
            let spec = fit_quartile_bins(&t, 4, &["x".into()]).unwrap();
            let mut counts = [0usize; 4];
            for v in &values {
                counts[spec.bin("x", *v).unwrap()] += 1;
            }
            let quarter = n as f64 / 4.0;
            for c in counts {
                prop_assert!((c as f64 - quarter).abs() <= 1.0, "{:?} n={}", counts, n);
            }
        }

        #[test]
        fn split_partitions(days in prop::collection::vec(1u32..28, 0..30), boundary in 1u32..28) {
            let dates: Vec<String> = days.iter().map(|d| format!("2020-02-{d:02}")).collect();
            let refs: Vec<&str> = dates.iter().map(String::as_str).collect();
            let t = dated_table(&refs);
            let b = NaiveDate::from_ymd_opt(2020, 2, boundary).unwrap();
            let (pre, post) = split_by_timestamp(&t, b).unwrap();
            prop_assert_eq!(pre.len() + post.len(), t.len());
            let mut xs: Vec<f64> = pre.rows().iter().chain(post.rows()).map(|r| r[1].as_f64().unwrap()).collect();
            xs.sort_by(f64::total_cmp);
            let expected: Vec<f64> = (0..t.len()).map(|i| i as f64).collect();
            prop_assert_eq!(xs, expected);
        }
    }
}
