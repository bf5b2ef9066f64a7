use anyhow::Result;
use serde::Serialize;
use serde_json::json;
use shiftwatch_core::forest::classify_dataset_with_bins;
use shiftwatch_core::{assemble_treatment_data, fit_forest, ForestParams, ReportBundle};

use crate::common::{emit_bundle, feature_list, outcome_name, read_schema, read_table, resolve_seed, Echo};
use crate::{CateArgs, ForestOptions};

pub const UNCONFOUNDED: &str =
    "treatment is taken as unconfounded given the covariates (control = earlier period, treatment = later period); no propensity modelling";

impl ForestOptions {
    pub fn params(&self, seed: u64) -> ForestParams {
        ForestParams {
            trees: self.trees,
            sample_fraction: self.sample_fraction,
            group_size: self.group_size,
            min_arm_size: self.min_arm,
            mtry: self.mtry,
            max_depth: self.max_depth,
            seed,
            variance: self.variance.into(),
        }
    }

    pub fn echo(&self, e: Echo) -> Echo {
        let e = e
            .opt("--trees", self.trees)
            .opt("--sample-fraction", self.sample_fraction)
            .opt("--group-size", self.group_size)
            .opt("--min-arm", self.min_arm);
        let e = match self.mtry {
            Some(m) => e.opt("--mtry", m),
            None => e,
        };
        e.opt("--max-depth", self.max_depth).opt("--variance", self.variance.as_str())
    }
}

#[derive(Serialize)]
struct RecordEffect<'a> {
    id: &'a str,
    tau_hat: f64,
    variance: f64,
    ci: [f64; 2],
    label: &'static str,
}

pub fn run(args: &CateArgs) -> Result<()> {
    let seed = resolve_seed(args.seed);
    let schema = read_schema(&args.schema)?;
    let features = feature_list(&args.features, &schema)?;
    let outcome = outcome_name(args.outcome.as_deref(), &schema)?;
    let control = read_table(&args.control, &schema)?;
    let treatment = read_table(&args.treatment, &schema)?;
    let target = match &args.classify {
        Some(path) => read_table(path, &schema)?,
        None => treatment.clone(),
    };

    let data = assemble_treatment_data(&control, &treatment, &outcome, &features)?;
    let params = args.forest.params(seed);
    let model = fit_forest(&data, &params)?;
    let classification = classify_dataset_with_bins(&model, &target, args.alpha, args.histogram_bins)?;

    let records: Vec<RecordEffect> = classification
        .record_ids
        .iter()
        .zip(&classification.estimates)
        .map(|(id, e)| RecordEffect {
            id,
            tau_hat: e.tau_hat,
            variance: e.variance,
            ci: [e.ci_low, e.ci_high],
            label: e.label.as_str(),
        })
        .collect();
    let result = json!({
        "outcome": outcome,
        "features": features,
        "covariates": data.feature_names(),
        "alpha": args.alpha,
        "n_control": data.len() - data.treated_count(),
        "n_treatment": data.treated_count(),
        "n_classified": target.len(),
        "forest": params,
        "summary": classification.summary,
        "records": records,
    });
    let echo = Echo::new("cate")
        .path("--control", &args.control)
        .path("--treatment", &args.treatment)
        .path("--schema", &args.schema)
        .maybe_path("--classify", args.classify.as_ref())
        .opt("--outcome", &outcome)
        .list("--features", &features)
        .opt("--alpha", args.alpha);
    let echo = args
        .forest
        .echo(echo)
        .opt("--histogram-bins", args.histogram_bins)
        .opt("--seed", seed)
        .maybe_path("--out", args.out.as_ref());
    let mut bundle = ReportBundle::new("cate", echo.finish(), seed, result);
    bundle.assumptions.push(UNCONFOUNDED.into());
    bundle.histograms = classification.histograms;
    emit_bundle(args.out.as_deref(), &bundle)
}
