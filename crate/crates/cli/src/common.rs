use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::ValueEnum;
use shiftwatch_core::baseline::CategoryOrder;
use shiftwatch_core::scan::NullModel;
use shiftwatch_core::VarianceCorrection;
use shiftwatch_core::{load_table, ObservationTable, ReportBundle, Schema};

/// Caller misuse detected after parsing (exit status 1).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(message: impl Into<String>) -> anyhow::Error {
    UsageError(message.into()).into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OrderArg {
    Rarity,
    Value,
}

impl OrderArg {
    pub fn as_str(self) -> &'static str {
        match self {
            OrderArg::Rarity => "rarity",
            OrderArg::Value => "value",
        }
    }
}

impl From<OrderArg> for CategoryOrder {
    fn from(o: OrderArg) -> Self {
        match o {
            OrderArg::Rarity => CategoryOrder::Rarity,
            OrderArg::Value => CategoryOrder::Value,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NullArg {
    Refit,
    Fixed,
}

impl NullArg {
    pub fn as_str(self) -> &'static str {
        match self {
            NullArg::Refit => "refit",
            NullArg::Fixed => "fixed",
        }
    }
}

impl From<NullArg> for NullModel {
    fn from(n: NullArg) -> Self {
        match n {
            NullArg::Refit => NullModel::Refit,
            NullArg::Fixed => NullModel::Fixed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VarianceArg {
    Bayes,
    Floor,
}

impl VarianceArg {
    pub fn as_str(self) -> &'static str {
        match self {
            VarianceArg::Bayes => "bayes",
            VarianceArg::Floor => "floor",
        }
    }
}

impl From<VarianceArg> for VarianceCorrection {
    fn from(v: VarianceArg) -> Self {
        match v {
            VarianceArg::Bayes => VarianceCorrection::Bayes,
            VarianceArg::Floor => VarianceCorrection::Floor,
        }
    }
}

pub fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(rand::random)
}

pub fn read_schema(path: &Path) -> Result<Schema> {
    let file = File::open(path).with_context(|| format!("opening schema {}", path.display()))?;
    Schema::from_json_reader(BufReader::new(file)).with_context(|| format!("reading schema {}", path.display()))
}

pub fn read_table(path: &Path, schema: &Schema) -> Result<ObservationTable> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    load_table(BufReader::new(file), schema).with_context(|| format!("reading {}", path.display()))
}

pub fn write_table(path: &Path, table: &ObservationTable) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    table
        .write_csv(BufWriter::new(file))
        .with_context(|| format!("writing {}", path.display()))
}

/// Writes `text` to `path`, or to standard output when no path is given.
pub fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => {
            let mut file = File::create(p).with_context(|| format!("creating {}", p.display()))?;
            file.write_all(text.as_bytes())
                .with_context(|| format!("writing {}", p.display()))
        }
        None => {
            let mut out = io::stdout().lock();
            match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
                // A closed reader (e.g. `| head`) is not a failure of the run.
                Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
                other => Ok(other?),
            }
        }
    }
}

pub fn emit_bundle(path: Option<&Path>, bundle: &ReportBundle) -> Result<()> {
    emit(path, &bundle.to_json_string()?)
}

/// Requested attribute list, or the schema's features when none was given.
pub fn feature_list(requested: &[String], schema: &Schema) -> Result<Vec<String>> {
    let features = if requested.is_empty() {
        schema.feature_names()
    } else {
        requested.to_vec()
    };
    if features.is_empty() {
        return Err(usage("no features: pass --features or mark attributes as features in the schema"));
    }
    for f in &features {
        if schema.get(f).is_none() {
            return Err(usage(format!("unknown feature {f:?}")));
        }
    }
    Ok(features)
}

pub fn outcome_name(requested: Option<&str>, schema: &Schema) -> Result<String> {
    match requested {
        Some(name) => Ok(name.to_string()),
        None => schema
            .outcome()
            .map(|a| a.name.clone())
            .ok_or_else(|| usage("schema has no outcome attribute; pass --outcome")),
    }
}

/// Canonical argument vector: every option spelled out with its resolved
/// value, so that running it again reproduces the run.
pub struct Echo(Vec<String>);

impl Echo {
    pub fn new(command: &str) -> Self {
        Self(vec!["shiftwatch".into(), command.into()])
    }

    pub fn opt(mut self, flag: &str, value: impl ToString) -> Self {
        self.0.push(flag.into());
        self.0.push(value.to_string());
        self
    }

    pub fn path(self, flag: &str, value: &Path) -> Self {
        self.opt(flag, value.display())
    }

    pub fn maybe_path(self, flag: &str, value: Option<&PathBuf>) -> Self {
        match value {
            Some(p) => self.path(flag, p),
            None => self,
        }
    }

    pub fn list(self, flag: &str, values: &[String]) -> Self {
        self.opt(flag, values.join(","))
    }

    pub fn switch(mut self, flag: &str, on: bool) -> Self {
        if on {
            self.0.push(flag.into());
        }
        self
    }

    pub fn finish(self) -> Vec<String> {
        self.0
    }
}
