use anyhow::Result;
use serde::Serialize;
use serde_json::json;
use shiftwatch_core::data::{apply_bins, fit_quartile_bins, AttributeKind, DiscretizationSpec};
use shiftwatch_core::report::emit_histograms_for;
use shiftwatch_core::{
    fit_baseline_with, flag_shifted_records, ObservationTable, ReportBundle, ScanConfig, ShiftLabel,
};

use crate::common::{emit_bundle, feature_list, read_schema, read_table, resolve_seed, Echo};
use crate::{ScanArgs, ScanOptions};

impl ScanOptions {
    pub fn config(&self, seed: u64) -> ScanConfig {
        ScanConfig {
            alpha_max: self.alpha_max,
            restarts: self.restarts,
            max_iterations: self.max_iterations,
            seed,
            peel_rounds: self.peel_rounds,
            significance_level: self.significance,
            null_replicas: self.null_replicas,
            single_scan: self.single_scan,
            null_model: self.null.into(),
            ..ScanConfig::default()
        }
    }

    pub fn echo(&self, e: Echo) -> Echo {
        e.opt("--alpha-max", self.alpha_max)
            .opt("--restarts", self.restarts)
            .opt("--max-iterations", self.max_iterations)
            .opt("--peel-rounds", self.peel_rounds)
            .opt("--null-replicas", self.null_replicas)
            .opt("--significance", self.significance)
            .switch("--single-scan", self.single_scan)
            .opt("--null", self.null.as_str())
            .opt("--bins", self.bins)
            .opt("--order", self.order.as_str())
    }
}

/// Quantile bins for the numeric members of `features`.
pub fn numeric_bins(train: &ObservationTable, features: &[String], bins: usize) -> Result<DiscretizationSpec> {
    let numeric: Vec<String> = features
        .iter()
        .filter(|f| train.schema().get(f).is_some_and(|a| a.kind == AttributeKind::Numeric))
        .cloned()
        .collect();
    Ok(if numeric.is_empty() {
        DiscretizationSpec::default()
    } else {
        fit_quartile_bins(train, bins, &numeric)?
    })
}

#[derive(Serialize)]
struct SubsetReport {
    records: Vec<String>,
    attributes: Vec<String>,
    score: f64,
    alpha: f64,
    n_alpha: f64,
    n_total: f64,
    p_value: Option<f64>,
}

#[derive(Serialize)]
struct RecordLabel<'a> {
    id: &'a str,
    label: &'static str,
}

pub fn run(args: &ScanArgs) -> Result<()> {
    let seed = resolve_seed(args.seed);
    let schema = read_schema(&args.schema)?;
    let features = feature_list(&args.features, &schema)?;
    let train = read_table(&args.train, &schema)?;
    let test = read_table(&args.test, &schema)?;

    let bins = numeric_bins(&train, &features, args.scan.bins)?;
    let model = fit_baseline_with(&apply_bins(&train, &bins), &features, args.scan.order.into())?;
    let config = args.scan.config(seed);
    let outcome = flag_shifted_records(&model, &apply_bins(&test, &bins), &config)?;

    let ids = test.record_ids();
    let subsets: Vec<SubsetReport> = outcome
        .scans
        .iter()
        .map(|s| SubsetReport {
            records: s.subset.records.iter().map(|&i| outcome.record_ids[i].clone()).collect(),
            attributes: s.subset.attributes.iter().map(|&j| features[j].clone()).collect(),
            score: s.score,
            alpha: s.alpha_star,
            n_alpha: s.n_alpha,
            n_total: s.n_total as f64,
            p_value: s.empirical_p,
        })
        .collect();
    let labels: Vec<RecordLabel> = ids
        .iter()
        .zip(&outcome.labels)
        .map(|(id, l)| RecordLabel { id, label: l.as_str() })
        .collect();
    let label_text: Vec<String> = outcome.labels.iter().map(|l| l.as_str().to_string()).collect();
    let groups = [ShiftLabel::NotShifted.as_str().to_string(), ShiftLabel::Shifted.as_str().to_string()];
    let histograms = emit_histograms_for(&test, &features, &label_text, &groups, args.histogram_bins)?;

    let result = json!({
        "features": features,
        "bins": bins,
        "n_train": train.len(),
        "n_test": test.len(),
        "shifted_count": outcome.shifted_count(),
        "shifted_fraction": outcome.shifted_fraction(),
        "subsets": subsets,
        "labels": labels,
    });
    let echo = Echo::new("scan")
        .path("--train", &args.train)
        .path("--test", &args.test)
        .path("--schema", &args.schema)
        .list("--features", &features);
    let echo = args
        .scan
        .echo(echo)
        .opt("--histogram-bins", args.histogram_bins)
        .opt("--seed", seed)
        .maybe_path("--out", args.out.as_ref());
    let mut bundle = ReportBundle::new("scan", echo.finish(), seed, result);
    bundle.histograms = histograms;
    emit_bundle(args.out.as_deref(), &bundle)
}
