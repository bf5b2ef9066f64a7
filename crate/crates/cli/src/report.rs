use std::fs::File;
use std::io::BufReader;

use anyhow::{anyhow, bail, Context, Result};
use serde_json::Value;
use shiftwatch_core::ReportBundle;

use crate::common::{emit, emit_bundle};
use crate::{Format, ReportArgs};

/// One CSV table per command: the per-record or per-window rows of the result.
pub fn flatten(bundle: &ReportBundle) -> Result<String> {
    let r = &bundle.result;
    let (header, rows): (Vec<&str>, Vec<Vec<String>>) = match bundle.command.as_str() {
        "scan" => (
            vec!["id", "label"],
            array(r, "labels")?.iter().map(|x| vec![text(&x["id"]), text(&x["label"])]).collect(),
        ),
        "cate" => (
            vec!["id", "tau_hat", "variance", "ci_low", "ci_high", "label"],
            array(r, "records")?
                .iter()
                .map(|x| {
                    vec![
                        text(&x["id"]),
                        text(&x["tau_hat"]),
                        text(&x["variance"]),
                        text(&x["ci"][0]),
                        text(&x["ci"][1]),
                        text(&x["label"]),
                    ]
                })
                .collect(),
        ),
        "monitor" => (
            vec![
                "window",
                "size",
                "short",
                "shifted",
                "anomalous_fraction",
                "breach",
                "phase",
                "positive_frac",
                "negative_frac",
                "none_frac",
            ],
            array(&r["pipeline"], "windows")?
                .iter()
                .map(|w| {
                    vec![
                        text(&w["index"]),
                        text(&w["size"]),
                        text(&w["short"]),
                        text(&w["shifted"]),
                        text(&w["anomalous_fraction"]),
                        text(&w["breach"]),
                        text(&w["phase"]),
                        text(&w["labels"]["positive_frac"]),
                        text(&w["labels"]["negative_frac"]),
                        text(&w["labels"]["none_frac"]),
                    ]
                })
                .collect(),
        ),
        "simulate" => (
            vec!["metric", "value"],
            ["train_rows", "test_rows", "leaked_rows", "train_purchase_rate", "test_purchase_rate"]
                .iter()
                .map(|k| vec![k.to_string(), text(&r[*k])])
                .collect(),
        ),
        other => bail!("no CSV layout for {other:?} reports"),
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

fn array<'a>(v: &'a Value, key: &str) -> Result<&'a Vec<Value>> {
    v[key].as_array().ok_or_else(|| anyhow!("report has no {key:?} array"))
}

/// Missing and null fields become "NA", the table missing-value token.
fn text(v: &Value) -> String {
    match v {
        Value::Null => "NA".into(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

pub fn run(args: &ReportArgs) -> Result<()> {
    let file = File::open(&args.input).with_context(|| format!("opening {}", args.input.display()))?;
    let bundle: ReportBundle = serde_json::from_reader(BufReader::new(file))
        .with_context(|| format!("{} is not a report", args.input.display()))?;
    match args.format {
        Format::Json => emit_bundle(args.out.as_deref(), &bundle),
        Format::Csv => emit(args.out.as_deref(), &flatten(&bundle)?),
    }
}
