//! Per-attribute empirical baselines and empirical p-value ranges.
//!
//! A test value is passed through the training eCDF over a fixed
//! anomalousness order of categories. Because the data are discrete, each
//! value maps to a *range* of p-values rather than a point:
//!
//! ```text
//!   p_min = G / (T + 1)          G = training count of categories ranked
//!   p_max = (G + E + 1) / (T + 1)    strictly more anomalous than the value
//!                                E = training count of the value itself
//! ```
//!
//! A p-value drawn uniformly inside its range is Uniform(0, 1) when the test
//! record is exchangeable with the training records.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{AttributeKind, ObservationTable, MISSING_TOKEN};
use crate::error::{Error, Result};

/// How categories are ranked from most to least anomalous.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CategoryOrder {
    /// Ascending training frequency; rare and unseen categories are most
    /// anomalous. Ties are broken by token.
    #[default]
    Rarity,
    /// For quantile-binned attributes (`b0`, `b1`, ...): the highest bin is
    /// most anomalous, i.e. the upper-tail eCDF. Other attributes fall back
    /// to rarity.
    Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PRange {
    pub p_min: f64,
    pub p_max: f64,
}

impl PRange {
    pub fn new(p_min: f64, p_max: f64) -> Self {
        debug_assert!((0.0..=1.0).contains(&p_min) && p_min < p_max && p_max <= 1.0);
        Self { p_min, p_max }
    }

    pub fn width(&self) -> f64 {
        self.p_max - self.p_min
    }
}

/// Probability that a p-value drawn uniformly from `range` is below `alpha`.
pub fn significance_weight(range: PRange, alpha: f64) -> f64 {
    ((alpha - range.p_min) / (range.p_max - range.p_min)).clamp(0.0, 1.0)
}

/// Deterministic counting: the cell is significant iff its whole range is.
pub fn counting_weight(range: PRange, alpha: f64) -> f64 {
    if range.p_max <= alpha {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeBaseline {
    pub counts: BTreeMap<String, u64>,
    /// Most anomalous first.
    pub order: Vec<String>,
    /// Ordered by bin value rather than rarity.
    #[serde(default)]
    pub by_value: bool,
}

impl AttributeBaseline {
    fn from_counts(counts: BTreeMap<String, u64>, by_value: bool) -> Self {
        let mut order: Vec<String> = counts.keys().cloned().collect();
        if by_value {
            order.sort_by(|a, b| value_rank(b).cmp(&value_rank(a)).then_with(|| a.cmp(b)));
        } else {
            order.sort_by(|a, b| counts[a].cmp(&counts[b]).then_with(|| a.cmp(b)));
        }
        Self { counts, order, by_value }
    }
}

/// Ranking key for `order=value`: bins by index, anything else (the missing
/// marker) below every bin.
fn value_rank(token: &str) -> Option<u64> {
    token.strip_prefix('b').and_then(|s| s.parse().ok())
}

fn is_bin_token(token: &str) -> bool {
    token == MISSING_TOKEN || value_rank(token).is_some()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "SerializedBaseline", into = "SerializedBaseline")]
pub struct BaselineModel {
    total: u64,
    names: Vec<String>,
    attributes: Vec<AttributeBaseline>,
    /// token -> (G, E) per attribute
    lookup: Vec<HashMap<String, (u64, u64)>>,
    /// cumulative counts along `order`, for sampling
    cumulative: Vec<Vec<u64>>,
}

#[derive(Serialize, Deserialize)]
struct SerializedBaseline {
    total: u64,
    attribute_order: Vec<String>,
    attributes: BTreeMap<String, AttributeBaseline>,
}

impl From<SerializedBaseline> for BaselineModel {
    fn from(raw: SerializedBaseline) -> Self {
        let mut attrs = raw.attributes;
        let attributes = raw
            .attribute_order
            .iter()
            .map(|n| attrs.remove(n).unwrap_or(AttributeBaseline { counts: BTreeMap::new(), order: Vec::new(), by_value: false }))
            .collect();
        BaselineModel::assemble(raw.total, raw.attribute_order, attributes)
    }
}

impl From<BaselineModel> for SerializedBaseline {
    fn from(model: BaselineModel) -> Self {
        SerializedBaseline {
            total: model.total,
            attributes: model.names.iter().cloned().zip(model.attributes).collect(),
            attribute_order: model.names,
        }
    }
}

impl PartialEq for BaselineModel {
    fn eq(&self, other: &Self) -> bool {
        self.total == other.total && self.names == other.names && self.attributes == other.attributes
    }
}

impl BaselineModel {
    fn assemble(total: u64, names: Vec<String>, attributes: Vec<AttributeBaseline>) -> Self {
        let mut lookup = Vec::with_capacity(attributes.len());
        let mut cumulative = Vec::with_capacity(attributes.len());
        for attr in &attributes {
            let mut map = HashMap::with_capacity(attr.order.len());
            let mut cum = Vec::with_capacity(attr.order.len());
            let mut before = 0u64;
            for token in &attr.order {
                let e = attr.counts.get(token).copied().unwrap_or(0);
                map.insert(token.clone(), (before, e));
                before += e;
                cum.push(before);
            }
            lookup.push(map);
            cumulative.push(cum);
        }
        Self {
            total,
            names,
            attributes,
            lookup,
            cumulative,
        }
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn attribute_names(&self) -> &[String] {
        &self.names
    }

    pub fn attribute(&self, name: &str) -> Option<&AttributeBaseline> {
        self.index_of(name).map(|i| &self.attributes[i])
    }

    fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    fn range_at(&self, attr: usize, token: &str) -> PRange {
        // unseen categories rank ahead of every seen one: G = 0, E = 0
        let (g, e) = self.lookup[attr].get(token).copied().unwrap_or((0, 0));
        let denom = (self.total + 1) as f64;
        PRange::new(g as f64 / denom, (g + e + 1) as f64 / denom)
    }

    /// Draws one category for attribute `attr` from the training marginal.
    fn sample_range<R: Rng + ?Sized>(&self, attr: usize, rng: &mut R) -> PRange {
        self.range_at(attr, self.sample_token(attr, rng))
    }

    pub fn to_json_writer<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, self)?;
        Ok(())
    }

    /// The baseline that refitting on `total` records drawn from this one's
    /// marginals would produce (categories never drawn become unseen).
    pub fn resample<R: Rng + ?Sized>(&self, rng: &mut R) -> BaselineModel {
        let attributes = (0..self.names.len())
            .map(|j| {
                let mut counts = BTreeMap::new();
                for _ in 0..self.total {
                    *counts.entry(self.sample_token(j, rng).to_string()).or_insert(0u64) += 1;
                }
                AttributeBaseline::from_counts(counts, self.attributes[j].by_value)
            })
            .collect();
        BaselineModel::assemble(self.total, self.names.clone(), attributes)
    }

    /// Synthetic test matrix of `n` records drawn from this model's marginals
    /// and scored against `reference`.
    pub fn sample_matrix_against<R: Rng + ?Sized>(&self, reference: &BaselineModel, n: usize, rng: &mut R) -> PRangeMatrix {
        let m = self.names.len();
        let mut cells = Vec::with_capacity(n * m);
        for _ in 0..n {
            for j in 0..m {
                cells.push(reference.range_at(j, self.sample_token(j, rng)));
            }
        }
        PRangeMatrix {
            record_ids: (0..n).map(|i| i.to_string()).collect(),
            attributes: self.names.clone(),
            cells,
        }
    }

    fn sample_token<R: Rng + ?Sized>(&self, attr: usize, rng: &mut R) -> &str {
        let u = rng.random_range(0..self.total);
        let k = self.cumulative[attr].partition_point(|&c| c <= u);
        &self.attributes[attr].order[k]
    }

    /// Synthetic test matrix of `n` records drawn i.i.d. from the training
    /// marginals, attributes independent.
    pub fn sample_matrix<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> PRangeMatrix {
        let m = self.names.len();
        let mut cells = Vec::with_capacity(n * m);
        for _ in 0..n {
            for j in 0..m {
                cells.push(self.sample_range(j, rng));
            }
        }
        PRangeMatrix {
            record_ids: (0..n).map(|i| i.to_string()).collect(),
            attributes: self.names.clone(),
            cells,
        }
    }
}

pub fn fit_baseline(train: &ObservationTable, attrs: &[String]) -> Result<BaselineModel> {
    fit_baseline_with(train, attrs, CategoryOrder::Rarity)
}

pub fn fit_baseline_with(
    train: &ObservationTable,
    attrs: &[String],
    order: CategoryOrder,
) -> Result<BaselineModel> {
    if train.is_empty() {
        return Err(Error::Fit("empty training table".into()));
    }
    let mut attributes = Vec::with_capacity(attrs.len());
    for name in attrs {
        let attr = train
            .schema()
            .get(name)
            .ok_or_else(|| Error::Schema(format!("unknown attribute {name:?}")))?;
        if attr.kind != AttributeKind::Categorical {
            return Err(Error::Fit(format!(
                "attribute {name:?} is numeric; bin it before fitting a baseline"
            )));
        }
        let mut counts = BTreeMap::new();
        for v in train.column(name)? {
            *counts.entry(v.token()).or_insert(0u64) += 1;
        }
        let by_value = order == CategoryOrder::Value && counts.keys().all(|t| is_bin_token(t));
        attributes.push(AttributeBaseline::from_counts(counts, by_value));
    }
    Ok(BaselineModel::assemble(train.len() as u64, attrs.to_vec(), attributes))
}

pub fn p_range(model: &BaselineModel, attr: &str, value: &str) -> Result<PRange> {
    let j = model
        .index_of(attr)
        .ok_or_else(|| Error::Lookup(format!("attribute {attr:?} not in baseline")))?;
    Ok(model.range_at(j, value))
}

/// Records × attributes grid of p-value ranges, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PRangeMatrix {
    record_ids: Vec<String>,
    attributes: Vec<String>,
    cells: Vec<PRange>,
}

impl PRangeMatrix {
    pub fn from_cells(
        record_ids: Vec<String>,
        attributes: Vec<String>,
        cells: Vec<PRange>,
    ) -> Result<Self> {
        if cells.len() != record_ids.len() * attributes.len() {
            return Err(Error::Argument(format!(
                "{} cells for a {}x{} matrix",
                cells.len(),
                record_ids.len(),
                attributes.len()
            )));
        }
        Ok(Self {
            record_ids,
            attributes,
            cells,
        })
    }

    /// Convenience constructor from nested rows; ids are row indices.
    pub fn from_rows(attributes: Vec<String>, rows: Vec<Vec<PRange>>) -> Result<Self> {
        let ids = (0..rows.len()).map(|i| i.to_string()).collect();
        if rows.iter().any(|r| r.len() != attributes.len()) {
            return Err(Error::Argument("ragged p-range rows".into()));
        }
        Self::from_cells(ids, attributes, rows.into_iter().flatten().collect())
    }

    pub fn n_records(&self) -> usize {
        self.record_ids.len()
    }

    pub fn n_attributes(&self) -> usize {
        self.attributes.len()
    }

    pub fn record_ids(&self) -> &[String] {
        &self.record_ids
    }

    pub fn attributes(&self) -> &[String] {
        &self.attributes
    }

    #[inline]
    pub fn get(&self, record: usize, attr: usize) -> PRange {
        self.cells[record * self.attributes.len() + attr]
    }

    pub fn cells(&self) -> &[PRange] {
        &self.cells
    }

    pub fn select_records(&self, records: &[usize]) -> Self {
        let m = self.attributes.len();
        let mut cells = Vec::with_capacity(records.len() * m);
        for &i in records {
            cells.extend_from_slice(&self.cells[i * m..(i + 1) * m]);
        }
        Self {
            record_ids: records.iter().map(|&i| self.record_ids[i].clone()).collect(),
            attributes: self.attributes.clone(),
            cells,
        }
    }

    /// Debug dump: `record_id,attr,p_min,p_max`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["record_id", "attr", "p_min", "p_max"])?;
        for (i, id) in self.record_ids.iter().enumerate() {
            for (j, attr) in self.attributes.iter().enumerate() {
                let r = self.get(i, j);
                out.write_record([id.clone(), attr.clone(), r.p_min.to_string(), r.p_max.to_string()])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

pub fn build_prange_matrix(model: &BaselineModel, test: &ObservationTable) -> Result<PRangeMatrix> {
    let schema = test.schema();
    let missing: Vec<&str> = model
        .names
        .iter()
        .filter(|n| schema.index_of(n).is_none())
        .map(String::as_str)
        .collect();
    if !missing.is_empty() {
        return Err(Error::Schema(format!(
            "test table lacks baseline attribute(s): {}",
            missing.join(", ")
        )));
    }
    let mut cols = Vec::with_capacity(model.names.len());
    for name in &model.names {
        let attr = schema.get(name).expect("checked above");
        if attr.kind != AttributeKind::Categorical {
            return Err(Error::Schema(format!("test attribute {name:?} is numeric; bin it first")));
        }
        cols.push(schema.index_of(name).expect("checked above"));
    }
    let cells: Vec<PRange> = test
        .rows()
        .par_iter()
        .flat_map_iter(|row| {
            cols.iter()
                .enumerate()
                .map(|(j, &c)| model.range_at(j, &row[c].token()))
                .collect::<Vec<_>>()
        })
        .collect();
    PRangeMatrix::from_cells(test.record_ids(), model.names.clone(), cells)
}
