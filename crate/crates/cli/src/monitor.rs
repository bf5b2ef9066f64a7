use anyhow::Result;
use serde_json::json;
use shiftwatch_core::{run_pipeline, MonitorConfig, ReportBundle};

use crate::cate::UNCONFOUNDED;
use crate::common::{emit_bundle, feature_list, outcome_name, read_schema, read_table, resolve_seed, Echo};
use crate::MonitorArgs;

const THRESHOLD_STATISTIC: &str =
    "a window breaches when the fraction of its records flagged as shifted exceeds the threshold";

pub fn run(args: &MonitorArgs) -> Result<()> {
    let seed = resolve_seed(args.seed);
    let schema = read_schema(&args.schema)?;
    let features = feature_list(&args.features, &schema)?;
    let forest_features = feature_list(&args.forest_features, &schema)?;
    let outcome = outcome_name(args.outcome.as_deref(), &schema)?;
    let baseline = read_table(&args.baseline, &schema)?;
    let stream = read_table(&args.stream, &schema)?;

    let config = MonitorConfig {
        window_size: args.window,
        threshold: args.threshold,
        persistence: args.persist,
        min_treatment_size: args.min_treatment,
        scan_features: features.clone(),
        forest_features: forest_features.clone(),
        outcome: outcome.clone(),
        bins: args.scan.bins,
        order: args.scan.order.into(),
        scan: args.scan.config(seed),
        forest: args.forest.params(seed),
        alpha: args.alpha,
    };
    let report = run_pipeline(&baseline, &stream, &config)?;

    let result = json!({
        "features": features,
        "forest_features": forest_features,
        "outcome": outcome,
        "window_size": args.window,
        "threshold": args.threshold,
        "persistence": args.persist,
        "min_treatment_size": args.min_treatment,
        "n_baseline": baseline.len(),
        "n_stream": stream.len(),
        "pipeline": report,
    });
    let echo = Echo::new("monitor")
        .path("--baseline", &args.baseline)
        .path("--stream", &args.stream)
        .path("--schema", &args.schema)
        .opt("--window", args.window)
        .opt("--threshold", args.threshold)
        .opt("--persist", args.persist)
        .opt("--min-treatment", args.min_treatment)
        .list("--features", &features)
        .list("--forest-features", &forest_features)
        .opt("--outcome", &outcome);
    let echo = args.scan.echo(echo);
    let echo = args
        .forest
        .echo(echo)
        .opt("--alpha", args.alpha)
        .opt("--seed", seed)
        .maybe_path("--out", args.out.as_ref());
    let mut bundle = ReportBundle::new("monitor", echo.finish(), seed, result);
    bundle.assumptions = vec![THRESHOLD_STATISTIC.into(), UNCONFOUNDED.into()];
    emit_bundle(args.out.as_deref(), &bundle)
}
