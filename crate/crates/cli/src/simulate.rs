use std::fs::File;
use std::io::BufReader;

use anyhow::{Context, Result};
use serde_json::json;
use shiftwatch_core::simulate::{sim_schema, PURCHASE};
use shiftwatch_core::{leak_split, ObservationTable, ReportBundle, Scenario};

use crate::common::{emit, emit_bundle, resolve_seed, write_table, Echo};
use crate::SimulateArgs;

fn purchase_rate(table: &ObservationTable) -> Result<f64> {
    if table.is_empty() {
        return Ok(0.0);
    }
    let bought = table.column(PURCHASE)?.iter().filter_map(|v| v.as_f64()).sum::<f64>();
    Ok(bought / table.len() as f64)
}

pub fn run(args: &SimulateArgs) -> Result<()> {
    let seed = resolve_seed(args.seed);
    let scenario = match &args.scenario {
        Some(path) => {
            let file = File::open(path).with_context(|| format!("opening scenario {}", path.display()))?;
            Scenario::from_json_reader(BufReader::new(file))
                .with_context(|| format!("reading scenario {}", path.display()))?
        }
        None => Scenario::booking_surge(),
    };
    let train = scenario.generate_train(seed)?;
    let test = scenario.generate_test(seed)?;
    let split = leak_split(&train, &test, scenario.leak_fraction, seed)?;

    write_table(&args.out_train, &train)?;
    write_table(&args.out_test, &test)?;
    if let Some(path) = &args.out_leaked {
        write_table(path, &split.leaked_rows())?;
    }
    if let Some(path) = &args.out_schema {
        emit(Some(path), &format!("{}\n", serde_json::to_string_pretty(&sim_schema())?))?;
    }

    let leaked_ids: Vec<String> = split.leaked_rows().record_ids();
    let result = json!({
        "scenario": scenario,
        "train_rows": train.len(),
        "test_rows": test.len(),
        "leaked_rows": leaked_ids.len(),
        "train_purchase_rate": purchase_rate(&train)?,
        "test_purchase_rate": purchase_rate(&test)?,
        "leaked_ids": leaked_ids,
    });
    let echo = Echo::new("simulate")
        .maybe_path("--scenario", args.scenario.as_ref())
        .opt("--seed", seed)
        .path("--out-train", &args.out_train)
        .path("--out-test", &args.out_test)
        .maybe_path("--out-leaked", args.out_leaked.as_ref())
        .maybe_path("--out-schema", args.out_schema.as_ref())
        .maybe_path("--out", args.out.as_ref());
    let bundle = ReportBundle::new("simulate", echo.finish(), seed, result);
    emit_bundle(args.out.as_deref(), &bundle)
}
