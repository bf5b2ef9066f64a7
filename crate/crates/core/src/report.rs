//! Plot-ready summaries and the envelope every CLI report is written in.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::data::{AttributeKind, ObservationTable, Value};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum HistogramBins {
    /// `bins + 1` equal-width edges spanning the observed range.
    Numeric { edges: Vec<f64> },
    Categorical { categories: Vec<String> },
}

impl HistogramBins {
    pub fn len(&self) -> usize {
        match self {
            HistogramBins::Numeric { edges } => edges.len().saturating_sub(1),
            HistogramBins::Categorical { categories } => categories.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-group normalised frequencies of one feature over shared bins. A group
/// with no observed values has an empty frequency list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureHistogram {
    pub feature: String,
    pub bins: HistogramBins,
    pub groups: BTreeMap<String, GroupFrequencies>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupFrequencies {
    pub count: usize,
    pub frequencies: Vec<f64>,
}

/// Histograms for every group label present in `labels`.
pub fn emit_histograms(
    table: &ObservationTable,
    features: &[String],
    labels: &[String],
    bins: usize,
) -> Result<Vec<FeatureHistogram>> {
    let groups: BTreeSet<String> = labels.iter().cloned().collect();
    let groups: Vec<String> = groups.into_iter().collect();
    emit_histograms_for(table, features, labels, &groups, bins)
}

/// As [`emit_histograms`], but with an explicit group list so that groups
/// without records still appear.
pub fn emit_histograms_for(
    table: &ObservationTable,
    features: &[String],
    labels: &[String],
    groups: &[String],
    bins: usize,
) -> Result<Vec<FeatureHistogram>> {
    if labels.len() != table.len() {
        return Err(Error::Argument(format!(
            "{} labels for {} records",
            labels.len(),
            table.len()
        )));
    }
    if bins == 0 {
        return Err(Error::Argument("histogram needs at least one bin".into()));
    }
    features
        .iter()
        .map(|feature| {
            let attr = table
                .schema()
                .get(feature)
                .ok_or_else(|| Error::Schema(format!("unknown feature {feature:?}")))?;
            let column = table.column(feature)?;
            match attr.kind {
                AttributeKind::Numeric => numeric_histogram(feature, &column, labels, groups, bins),
                AttributeKind::Categorical => Ok(categorical_histogram(feature, &column, labels, groups)),
            }
        })
        .collect()
}

fn normalise(counts: Vec<usize>) -> GroupFrequencies {
    let total: usize = counts.iter().sum();
    GroupFrequencies {
        count: total,
        frequencies: if total == 0 {
            Vec::new()
        } else {
            counts.into_iter().map(|c| c as f64 / total as f64).collect()
        },
    }
}

fn numeric_histogram(
    feature: &str,
    column: &[&Value],
    labels: &[String],
    groups: &[String],
    bins: usize,
) -> Result<FeatureHistogram> {
    let observed: Vec<f64> = column.iter().filter_map(|v| v.as_f64()).collect();
    let edges = if observed.is_empty() {
        Vec::new()
    } else {
        let lo = observed.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = observed.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if lo == hi {
            vec![lo, hi]
        } else {
            let width = (hi - lo) / bins as f64;
            (0..=bins)
                .map(|k| if k == bins { hi } else { lo + width * k as f64 })
                .collect()
        }
    };
    let n_bins = edges.len().saturating_sub(1);
    let locate = |x: f64| -> usize {
        let (lo, hi) = (edges[0], edges[n_bins]);
        if hi == lo {
            return 0;
        }
        (((x - lo) / (hi - lo) * n_bins as f64) as usize).min(n_bins - 1)
    };
    let groups = groups
        .iter()
        .map(|g| {
            let mut counts = vec![0usize; n_bins];
            for (v, l) in column.iter().zip(labels) {
                if let (Some(x), true) = (v.as_f64(), l == g) {
                    counts[locate(x)] += 1;
                }
            }
            (g.clone(), normalise(counts))
        })
        .collect();
    Ok(FeatureHistogram {
        feature: feature.to_string(),
        bins: HistogramBins::Numeric { edges },
        groups,
    })
}

fn categorical_histogram(feature: &str, column: &[&Value], labels: &[String], groups: &[String]) -> FeatureHistogram {
    let categories: Vec<String> = column
        .iter()
        .map(|v| v.token())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let position: BTreeMap<&str, usize> = categories.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let groups = groups
        .iter()
        .map(|g| {
            let mut counts = vec![0usize; categories.len()];
            for (v, l) in column.iter().zip(labels) {
                if l == g {
                    counts[position[v.token().as_str()]] += 1;
                }
            }
            (g.clone(), normalise(counts))
        })
        .collect();
    FeatureHistogram {
        feature: feature.to_string(),
        bins: HistogramBins::Categorical { categories },
        groups,
    }
}

pub const TOOL_NAME: &str = "shiftwatch";

/// Envelope shared by every report: the tool version, the canonical
/// invocation (which reproduces the payload exactly), the payload and any
/// histograms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub invocation: Vec<String>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub assumptions: Vec<String>,
    pub result: serde_json::Value,
    #[serde(default)]
    pub histograms: Vec<FeatureHistogram>,
}

impl ReportBundle {
    pub fn new(command: &str, invocation: Vec<String>, seed: u64, result: serde_json::Value) -> Self {
        Self {
            tool: TOOL_NAME.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            invocation,
            seed,
            assumptions: Vec::new(),
            result,
            histograms: Vec::new(),
        }
    }

    pub fn to_json_string(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }
}
