//! Honest causal forests for per-record treatment effects.
//!
//! Each tree is grown on one half of its subsample (the structure half) and
//! its leaves are populated from the other half (the estimation half). A
//! leaf's estimate is `mean(Y | treated) - mean(Y | control)` over the
//! estimation records that reach it. Trees are organised in little bags that
//! share a half-sample, which yields a bootstrap-of-little-bags variance for
//! every prediction.
//!
//! Outcomes are normalised to `(y - min) / (max - min)` before fitting and
//! estimates are scaled back afterwards. Adding a constant to every outcome,
//! or multiplying all of them by a positive constant, therefore reproduces the
//! same trees and normalised estimates bit for bit whenever the transformed
//! outcomes are exact (binary outcomes always are).

use std::collections::BTreeSet;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use crate::data::{AttributeKind, ObservationTable, Value};
use crate::error::{Error, Result};
use crate::report::{emit_histograms_for, FeatureHistogram};
use crate::rng::{derive_seed, stream_rng};

const GROUP_STREAM: u64 = 0x6772_6f75;
const TREE_STREAM: u64 = 0x7472_6565;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub trees: usize,
    pub sample_fraction: f64,
    /// Trees per little bag.
    pub group_size: usize,
    /// Minimum treated and control records per child / leaf.
    pub min_arm_size: usize,
    /// Covariates tried per split; `None` means `ceil(sqrt(m))`.
    pub mtry: Option<usize>,
    pub max_depth: usize,
    pub seed: u64,
    #[serde(default)]
    pub variance: VarianceCorrection,
}

/// How the little-bag variance is corrected for within-bag noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceCorrection {
    /// `max(0, between - within / ℓ)`.
    Floor,
    /// Posterior mean of the true between-bag variance under a flat prior on
    /// `[0, ∞)` and a normal likelihood for the uncorrected difference; always
    /// positive, and close to the difference when it is well above its
    /// standard error.
    #[default]
    Bayes,
}

impl VarianceCorrection {
    /// `between` is the variance of bag means, `noise` the within-bag
    /// variance divided by `ℓ`, `bags` the number of bags.
    pub fn apply(self, between: f64, noise: f64, bags: usize) -> f64 {
        let raw = between - noise;
        match self {
            VarianceCorrection::Floor => raw.max(0.0),
            VarianceCorrection::Bayes => {
                let se = between.max(noise) * (2.0 / bags as f64).sqrt();
                if se.is_nan() || se <= 0.0 {
                    return raw.max(0.0);
                }
                let ratio = raw / se;
                let density = (-0.5 * ratio * ratio).exp() / (2.0 * std::f64::consts::PI).sqrt();
                let mass = 0.5 * erfc(-ratio / std::f64::consts::SQRT_2);
                if mass <= 0.0 {
                    return 0.0;
                }
                (raw + se * density / mass).max(0.0)
            }
        }
    }
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            trees: 200,
            sample_fraction: 0.5,
            group_size: 4,
            min_arm_size: 5,
            mtry: None,
            max_depth: 10,
            seed: 0,
            variance: VarianceCorrection::Bayes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum EncodedColumn {
    Numeric { attr: String },
    Indicator { attr: String, category: String },
}

/// Maps table rows to numeric covariate vectors; categorical attributes
/// become one indicator per category seen when the dataset was assembled.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureEncoder {
    columns: Vec<EncodedColumn>,
}

impl FeatureEncoder {
    pub fn identity(names: &[String]) -> Self {
        Self {
            columns: names.iter().map(|a| EncodedColumn::Numeric { attr: a.clone() }).collect(),
        }
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns
            .iter()
            .map(|c| match c {
                EncodedColumn::Numeric { attr } => attr.clone(),
                EncodedColumn::Indicator { attr, category } => format!("{attr}={category}"),
            })
            .collect()
    }

    /// Table attributes the columns are derived from, first-use order.
    pub fn source_attributes(&self) -> Vec<String> {
        let mut seen: Vec<String> = Vec::new();
        for c in &self.columns {
            let attr = match c {
                EncodedColumn::Numeric { attr } | EncodedColumn::Indicator { attr, .. } => attr,
            };
            if !seen.contains(attr) {
                seen.push(attr.clone());
            }
        }
        seen
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn encode(&self, table: &ObservationTable) -> Result<Vec<Vec<f64>>> {
        let schema = table.schema();
        let cols: Vec<usize> = self
            .columns
            .iter()
            .map(|c| {
                let attr = match c {
                    EncodedColumn::Numeric { attr } | EncodedColumn::Indicator { attr, .. } => attr,
                };
                schema
                    .index_of(attr)
                    .ok_or_else(|| Error::Schema(format!("table lacks covariate {attr:?}")))
            })
            .collect::<Result<_>>()?;
        table
            .rows()
            .iter()
            .enumerate()
            .map(|(r, row)| {
                self.columns
                    .iter()
                    .zip(&cols)
                    .map(|(c, &k)| match (c, &row[k]) {
                        (EncodedColumn::Numeric { .. }, Value::Number(x)) => Ok(*x),
                        (EncodedColumn::Numeric { attr }, v) => Err(Error::Parse {
                            row: r + 1,
                            column: attr.clone(),
                            message: format!("numeric covariate required, got {v:?}"),
                        }),
                        (EncodedColumn::Indicator { category, .. }, v) => {
                            Ok(if v.token() == *category { 1.0 } else { 0.0 })
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

/// Covariates, outcomes and a binary treatment indicator.
#[derive(Debug, Clone, PartialEq)]
pub struct TreatmentDataset {
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    d: Vec<bool>,
    encoder: FeatureEncoder,
}

impl TreatmentDataset {
    pub fn new(x: Vec<Vec<f64>>, y: Vec<f64>, d: Vec<bool>, feature_names: Vec<String>) -> Result<Self> {
        Self::with_encoder(x, y, d, FeatureEncoder::identity(&feature_names))
    }

    fn with_encoder(x: Vec<Vec<f64>>, y: Vec<f64>, d: Vec<bool>, encoder: FeatureEncoder) -> Result<Self> {
        if x.len() != y.len() || y.len() != d.len() {
            return Err(Error::Argument("x, y and d lengths differ".into()));
        }
        let m = encoder.len();
        for (i, row) in x.iter().enumerate() {
            if row.len() != m {
                return Err(Error::Argument(format!("row {i} has {} covariates, expected {m}", row.len())));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Argument(format!("row {i} has a non-finite covariate")));
            }
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("non-finite outcome".into()));
        }
        Ok(Self { x, y, d, encoder })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.encoder.len()
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.encoder.column_names()
    }

    pub fn treated_count(&self) -> usize {
        self.d.iter().filter(|&&d| d).count()
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.y
    }

    pub fn treatment(&self) -> &[bool] {
        &self.d
    }

    pub fn covariates(&self) -> &[Vec<f64>] {
        &self.x
    }

    pub fn map_outcomes(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            y: self.y.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }
}

/// Stacks pre-period rows (control, `D = 0`) and post-period rows
/// (treatment, `D = 1`). Rows with a missing outcome are dropped.
pub fn assemble_treatment_data(
    pre: &ObservationTable,
    post: &ObservationTable,
    outcome: &str,
    features: &[String],
) -> Result<TreatmentDataset> {
    if pre.is_empty() {
        return Err(Error::ArmMissing("control (pre-period) table is empty".into()));
    }
    if post.is_empty() {
        return Err(Error::ArmMissing("treatment (post-period) table is empty".into()));
    }
    let mut columns = Vec::new();
    for name in features {
        let a = pre
            .schema()
            .get(name)
            .ok_or_else(|| Error::Schema(format!("control table lacks {name:?}")))?;
        let b = post
            .schema()
            .get(name)
            .ok_or_else(|| Error::Schema(format!("treatment table lacks {name:?}")))?;
        if a.kind != b.kind {
            return Err(Error::Schema(format!("{name:?} has different kinds in the two tables")));
        }
        match a.kind {
            AttributeKind::Numeric => columns.push(EncodedColumn::Numeric { attr: name.clone() }),
            AttributeKind::Categorical => {
                let mut cats = BTreeSet::new();
                for t in [pre, post] {
                    for v in t.column(name)? {
                        cats.insert(v.token());
                    }
                }
                columns.extend(cats.into_iter().map(|category| EncodedColumn::Indicator {
                    attr: name.clone(),
                    category,
                }));
            }
        }
    }
    let encoder = FeatureEncoder { columns };

    let mut x = Vec::with_capacity(pre.len() + post.len());
    let mut y = Vec::with_capacity(pre.len() + post.len());
    let mut d = Vec::with_capacity(pre.len() + post.len());
    for (table, treated) in [(pre, false), (post, true)] {
        let covariates = encoder.encode(table)?;
        for (row, (cov, v)) in covariates.into_iter().zip(table.column(outcome)?).enumerate() {
            match v {
                Value::Missing => continue,
                Value::Number(o) if *o == 0.0 || *o == 1.0 => {
                    x.push(cov);
                    y.push(*o);
                    d.push(treated);
                }
                other => {
                    return Err(Error::Parse {
                        row: row + 1,
                        column: outcome.to_string(),
                        message: format!("outcome must be binary 0/1, got {other:?}"),
                    })
                }
            }
        }
    }
    if !d.iter().any(|&t| !t) {
        return Err(Error::ArmMissing("no control rows with an observed outcome".into()));
    }
    if !d.iter().any(|&t| t) {
        return Err(Error::ArmMissing("no treatment rows with an observed outcome".into()));
    }
    TreatmentDataset::with_encoder(x, y, d, encoder)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
}

#[derive(Debug, Clone)]
struct Node {
    split: Option<Split>,
    children: Option<(usize, usize)>,
    estimate: f64,
}

#[derive(Debug, Clone)]
pub struct HonestTree {
    nodes: Vec<Node>,
    structure: Vec<usize>,
    estimation: Vec<usize>,
    subsample: Vec<usize>,
}

impl HonestTree {
    pub fn structure_indices(&self) -> &[usize] {
        &self.structure
    }

    pub fn estimation_indices(&self) -> &[usize] {
        &self.estimation
    }

    pub fn subsample(&self) -> &[usize] {
        &self.subsample
    }

    /// Pre-order list of split rules (`None` for leaves).
    pub fn splits(&self) -> Vec<Option<Split>> {
        self.nodes.iter().map(|n| n.split).collect()
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match nodes[i].children {
                Some((l, r)) => 1 + go(nodes, l).max(go(nodes, r)),
                None => 0,
            }
        }
        go(&self.nodes, 0)
    }

    /// Normalised-unit estimate at `x`.
    fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        while let (Some(split), Some((l, r))) = (self.nodes[i].split, self.nodes[i].children) {
            i = if x[split.feature] <= split.threshold { l } else { r };
        }
        self.nodes[i].estimate
    }
}

#[derive(Debug, Clone)]
pub struct ForestModel {
    trees: Vec<HonestTree>,
    params: ForestParams,
    encoder: FeatureEncoder,
    scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EffectLabel {
    Positive,
    Negative,
    None,
}

impl EffectLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            EffectLabel::Positive => "positive",
            EffectLabel::Negative => "negative",
            EffectLabel::None => "none",
        }
    }

    pub fn from_interval(ci_low: f64, ci_high: f64) -> Self {
        if ci_low > 0.0 {
            EffectLabel::Positive
        } else if ci_high < 0.0 {
            EffectLabel::Negative
        } else {
            EffectLabel::None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CateEstimate {
    pub tau_hat: f64,
    pub variance: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub label: EffectLabel,
}

impl CateEstimate {
    /// Normal interval `tau ± z_{1-α/2}·sd` and its label.
    pub fn from_moments(tau_hat: f64, sd: f64, alpha: f64) -> Result<Self> {
        let z = normal_quantile(alpha)?;
        let ci_low = tau_hat - z * sd;
        let ci_high = tau_hat + z * sd;
        Ok(Self {
            tau_hat,
            variance: sd * sd,
            ci_low,
            ci_high,
            label: EffectLabel::from_interval(ci_low, ci_high),
        })
    }
}

fn normal_quantile(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Argument(format!("alpha must be in (0,1), got {alpha}")));
    }
    let normal = Normal::standard();
    Ok(normal.inverse_cdf(1.0 - alpha / 2.0))
}

impl ForestModel {
    pub fn trees(&self) -> &[HonestTree] {
        &self.trees
    }

    pub fn params(&self) -> &ForestParams {
        &self.params
    }

    pub fn encoder(&self) -> &FeatureEncoder {
        &self.encoder
    }

    pub fn n_features(&self) -> usize {
        self.encoder.len()
    }

    /// Per-tree estimates in outcome units.
    pub fn tree_predictions(&self, x: &[f64]) -> Vec<f64> {
        self.trees.iter().map(|t| self.scale * t.predict(x)).collect()
    }

    /// Forest mean and bootstrap-of-little-bags standard deviation, both in
    /// normalised units.
    fn moments(&self, x: &[f64]) -> (f64, f64) {
        let preds: Vec<f64> = self.trees.iter().map(|t| t.predict(x)).collect();
        let mean = preds.iter().sum::<f64>() / preds.len() as f64;
        let ell = self.params.group_size.max(1);
        let groups: Vec<&[f64]> = preds.chunks(ell).collect();
        if groups.len() < 2 {
            return (mean, 0.0);
        }
        let g = groups.len() as f64;
        let group_means: Vec<f64> = groups.iter().map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
        let between = group_means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / g;
        let within = if ell > 1 {
            groups
                .iter()
                .zip(&group_means)
                .filter(|(c, _)| c.len() > 1)
                .map(|(c, m)| c.iter().map(|p| (p - m).powi(2)).sum::<f64>() / (c.len() - 1) as f64)
                .sum::<f64>()
                / g
        } else {
            0.0
        };
        let var = self.params.variance.apply(between, within / ell as f64, groups.len());
        (mean, var.sqrt())
    }
}

pub fn fit_forest(data: &TreatmentDataset, params: &ForestParams) -> Result<ForestModel> {
    if params.trees < 2 {
        return Err(Error::Argument("a forest needs at least 2 trees".into()));
    }
    if !(params.sample_fraction > 0.0 && params.sample_fraction <= 1.0) {
        return Err(Error::Argument(format!(
            "sample_fraction must be in (0,1], got {}",
            params.sample_fraction
        )));
    }
    if params.group_size == 0 {
        return Err(Error::Argument("group_size must be >= 1".into()));
    }
    let treated = data.treated_count();
    if treated == 0 {
        return Err(Error::ArmMissing("no treated records".into()));
    }
    if treated == data.len() {
        return Err(Error::ArmMissing("no control records".into()));
    }
    let m = data.n_features();
    let mtry = params.mtry.unwrap_or_else(|| (m as f64).sqrt().ceil() as usize).clamp(1, m.max(1));

    let lo = data.y.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = data.y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scale = if hi > lo { hi - lo } else { 1.0 };
    let y: Vec<f64> = data.y.iter().map(|&v| (v - lo) / scale).collect();

    let n = data.len();
    let ell = params.group_size;
    let n_groups = params.trees.div_ceil(ell);
    let half = if ell > 1 { n / 2 } else { n };
    let pool_size = half.max((params.sample_fraction * n as f64).ceil() as usize).min(n);
    let sub_size = ((params.sample_fraction * n as f64).ceil() as usize).clamp(1, pool_size);
    let group_seed = derive_seed(params.seed, GROUP_STREAM);
    let pools: Vec<Vec<usize>> = (0..n_groups)
        .map(|g| {
            let mut rng = stream_rng(group_seed, g as u64);
            index::sample(&mut rng, n, pool_size).into_vec()
        })
        .collect();

    let tree_seed = derive_seed(params.seed, TREE_STREAM);
    let grower = Grower {
        x: &data.x,
        y: &y,
        d: &data.d,
        k: params.min_arm_size.max(1),
        mtry,
        max_depth: params.max_depth,
    };
    let trees = (0..params.trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(tree_seed, t as u64);
            let pool = &pools[t / ell];
            let mut subsample: Vec<usize> = index::sample(&mut rng, pool.len(), sub_size)
                .into_iter()
                .map(|i| pool[i])
                .collect();
            subsample.shuffle(&mut rng);
            grower.grow(subsample, &mut rng)
        })
        .collect();

    Ok(ForestModel {
        trees,
        params: params.clone(),
        encoder: data.encoder.clone(),
        scale,
    })
}

#[derive(Debug, Default, Clone, Copy)]
struct ArmStats {
    n_t: usize,
    n_c: usize,
    sum_t: f64,
    sum_c: f64,
}

impl ArmStats {
    #[inline]
    fn add(&mut self, y: f64, treated: bool) {
        if treated {
            self.n_t += 1;
            self.sum_t += y;
        } else {
            self.n_c += 1;
            self.sum_c += y;
        }
    }

    fn effect(&self) -> f64 {
        self.sum_t / self.n_t as f64 - self.sum_c / self.n_c as f64
    }

    fn total(&self) -> usize {
        self.n_t + self.n_c
    }
}

struct Grower<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    d: &'a [bool],
    k: usize,
    mtry: usize,
    max_depth: usize,
}

impl Grower<'_> {
    fn grow<R: Rng + ?Sized>(&self, subsample: Vec<usize>, rng: &mut R) -> HonestTree {
        // Root-only trees learn no structure, so every record estimates.
        let (structure, estimation) = if self.max_depth == 0 {
            (Vec::new(), subsample.clone())
        } else {
            let cut = subsample.len() / 2;
            (subsample[..cut].to_vec(), subsample[cut..].to_vec())
        };

        let mut nodes = vec![Node {
            split: None,
            children: None,
            estimate: 0.0,
        }];
        let mut stack = vec![(0usize, structure.clone(), 0usize)];
        while let Some((id, members, depth)) = stack.pop() {
            if depth >= self.max_depth {
                continue;
            }
            let Some(split) = self.best_split(&members, rng) else {
                continue;
            };
            let (left, right): (Vec<usize>, Vec<usize>) =
                members.iter().partition(|&&i| self.x[i][split.feature] <= split.threshold);
            let l = nodes.len();
            nodes.push(Node { split: None, children: None, estimate: 0.0 });
            nodes.push(Node { split: None, children: None, estimate: 0.0 });
            nodes[id].split = Some(split);
            nodes[id].children = Some((l, l + 1));
            stack.push((l + 1, right, depth + 1));
            stack.push((l, left, depth + 1));
        }

        let mut stats = vec![ArmStats::default(); nodes.len()];
        for &i in &estimation {
            let mut node = 0;
            loop {
                stats[node].add(self.y[i], self.d[i]);
                match (nodes[node].split, nodes[node].children) {
                    (Some(s), Some((l, r))) => node = if self.x[i][s.feature] <= s.threshold { l } else { r },
                    _ => break,
                }
            }
        }
        // Children always have larger indices than their parent.
        let root = stats[0];
        nodes[0].estimate = if root.n_t > 0 && root.n_c > 0 { root.effect() } else { 0.0 };
        for id in 0..nodes.len() {
            if let Some((l, r)) = nodes[id].children {
                let inherited = nodes[id].estimate;
                for c in [l, r] {
                    let s = stats[c];
                    nodes[c].estimate = if s.n_t >= self.k && s.n_c >= self.k { s.effect() } else { inherited };
                }
            }
        }
        if root.n_t >= self.k && root.n_c >= self.k {
            nodes[0].estimate = root.effect();
        }

        let mut subsample = subsample;
        subsample.sort_unstable();
        let mut structure = structure;
        structure.sort_unstable();
        let mut estimation = estimation;
        estimation.sort_unstable();
        HonestTree {
            nodes,
            structure,
            estimation,
            subsample,
        }
    }

    /// Split maximising `n_L n_R / (n_L + n_R) · (τ_L − τ_R)²` on the
    /// structure records, over `mtry` random covariates and midpoints between
    /// distinct values.
    fn best_split<R: Rng + ?Sized>(&self, members: &[usize], rng: &mut R) -> Option<Split> {
        let m = self.x.first().map_or(0, Vec::len);
        if m == 0 {
            return None;
        }
        let mut node = ArmStats::default();
        for &i in members {
            node.add(self.y[i], self.d[i]);
        }
        if node.n_t < 2 * self.k || node.n_c < 2 * self.k {
            return None;
        }
        let features = index::sample(rng, m, self.mtry.min(m));
        let mut best: Option<(f64, Split)> = None;
        let mut order = members.to_vec();
        for f in features {
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            let mut left = ArmStats::default();
            for w in 0..order.len() - 1 {
                let i = order[w];
                left.add(self.y[i], self.d[i]);
                let (here, next) = (self.x[i][f], self.x[order[w + 1]][f]);
                if here == next {
                    continue;
                }
                let right = ArmStats {
                    n_t: node.n_t - left.n_t,
                    n_c: node.n_c - left.n_c,
                    sum_t: node.sum_t - left.sum_t,
                    sum_c: node.sum_c - left.sum_c,
                };
                if left.n_t < self.k || left.n_c < self.k || right.n_t < self.k || right.n_c < self.k {
                    continue;
                }
                let (nl, nr) = (left.total() as f64, right.total() as f64);
                let gain = nl * nr / (nl + nr) * (left.effect() - right.effect()).powi(2);
                if gain > 0.0 && best.is_none_or(|(g, _)| gain > g) {
                    best = Some((
                        gain,
                        Split {
                            feature: f,
                            threshold: here + (next - here) / 2.0,
                        },
                    ));
                }
            }
        }
        best.map(|(_, s)| s)
    }
}

pub fn predict_cate(model: &ForestModel, x: &[f64], alpha: f64) -> Result<CateEstimate> {
    if x.len() != model.n_features() {
        return Err(Error::Argument(format!(
            "covariate vector has {} entries, model expects {}",
            x.len(),
            model.n_features()
        )));
    }
    let (mean, sd) = model.moments(x);
    let tau_hat = model.scale * mean;
    let mut est = CateEstimate::from_moments(tau_hat, model.scale * sd, alpha)?;
    est.variance = model.scale * model.scale * sd * sd;
    Ok(est)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LabelSummary {
    pub positive: usize,
    pub negative: usize,
    pub none: usize,
    pub positive_frac: f64,
    pub negative_frac: f64,
    pub none_frac: f64,
}

impl LabelSummary {
    pub fn from_labels(labels: &[EffectLabel]) -> Self {
        let count = |l| labels.iter().filter(|&&x| x == l).count();
        let (p, n, z) = (count(EffectLabel::Positive), count(EffectLabel::Negative), count(EffectLabel::None));
        let frac = |c: usize| if labels.is_empty() { 0.0 } else { c as f64 / labels.len() as f64 };
        Self {
            positive: p,
            negative: n,
            none: z,
            positive_frac: frac(p),
            negative_frac: frac(n),
            none_frac: frac(z),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub record_ids: Vec<String>,
    pub estimates: Vec<CateEstimate>,
    pub summary: LabelSummary,
    pub histograms: Vec<FeatureHistogram>,
}

impl Classification {
    pub fn labels(&self) -> Vec<EffectLabel> {
        self.estimates.iter().map(|e| e.label).collect()
    }
}

pub const DEFAULT_HISTOGRAM_BINS: usize = 20;

pub fn classify_dataset(model: &ForestModel, table: &ObservationTable, alpha: f64) -> Result<Classification> {
    classify_dataset_with_bins(model, table, alpha, DEFAULT_HISTOGRAM_BINS)
}

pub fn classify_dataset_with_bins(
    model: &ForestModel,
    table: &ObservationTable,
    alpha: f64,
    bins: usize,
) -> Result<Classification> {
    normal_quantile(alpha)?;
    let covariates = model.encoder.encode(table)?;
    let estimates: Vec<CateEstimate> = covariates
        .par_iter()
        .map(|x| predict_cate(model, x, alpha))
        .collect::<Result<_>>()?;
    let labels: Vec<String> = estimates.iter().map(|e| e.label.as_str().to_string()).collect();
    let summary = LabelSummary::from_labels(&estimates.iter().map(|e| e.label).collect::<Vec<_>>());
    let features = model.encoder.source_attributes();
    let groups = [EffectLabel::Negative, EffectLabel::None, EffectLabel::Positive].map(|l| l.as_str().to_string());
    let histograms = emit_histograms_for(table, &features, &labels, &groups, bins)?;
    Ok(Classification {
        record_ids: table.record_ids(),
        estimates,
        summary,
        histograms,
    })
}
