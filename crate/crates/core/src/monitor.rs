//! Batch shift monitoring.
//!
//! The stream is cut into consecutive count-based windows. Each window is
//! scanned against a baseline frozen at start-up; a window *breaches* when the
//! fraction of records flagged as shifted exceeds the threshold. `K`
//! consecutive breaches confirm the shift, after which window rows accumulate
//! as treatment data (retroactively from the first window of the confirming
//! run). Once enough treatment rows exist a causal forest is trained and every
//! later window also receives per-record effect labels.

use serde::{Deserialize, Serialize};

use crate::baseline::{fit_baseline_with, BaselineModel, CategoryOrder};
use crate::data::{apply_bins, fit_quartile_bins, AttributeKind, DiscretizationSpec, ObservationTable};
use crate::error::{Error, Result};
use crate::forest::{
    assemble_treatment_data, classify_dataset, fit_forest, ForestModel, ForestParams, LabelSummary,
};
use crate::rng::derive_seed;
use crate::scan::{flag_shifted_records, ScanConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorConfig {
    pub window_size: usize,
    /// Breach when the shifted fraction is strictly above this.
    pub threshold: f64,
    /// Consecutive breaching windows needed to confirm.
    pub persistence: usize,
    pub min_treatment_size: usize,
    /// Attributes scanned for covariate shift; numeric ones are binned at
    /// `bins`-quantiles of the baseline.
    pub scan_features: Vec<String>,
    pub forest_features: Vec<String>,
    pub outcome: String,
    pub bins: usize,
    pub order: CategoryOrder,
    pub scan: ScanConfig,
    pub forest: ForestParams,
    pub alpha: f64,
}

impl MonitorConfig {
    pub fn new(scan_features: Vec<String>, forest_features: Vec<String>, outcome: impl Into<String>) -> Self {
        Self {
            window_size: 1000,
            threshold: 0.2,
            persistence: 3,
            min_treatment_size: 500,
            scan_features,
            forest_features,
            outcome: outcome.into(),
            bins: 4,
            order: CategoryOrder::Rarity,
            scan: ScanConfig::default(),
            forest: ForestParams::default(),
            alpha: 0.05,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_size == 0 {
            return Err(Error::Argument("window_size must be >= 1".into()));
        }
        if self.persistence == 0 {
            return Err(Error::Argument("persistence must be >= 1".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Argument(format!("threshold must be in (0,1), got {}", self.threshold)));
        }
        if self.scan_features.is_empty() {
            return Err(Error::Argument("no scan features".into()));
        }
        self.scan.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Phase {
    Normal,
    Suspected,
    Confirmed,
    Classifying,
}

impl Phase {
    /// Next phase and breach run length after one non-empty window.
    pub fn step(self, run: usize, breach: bool, persistence: usize) -> (Phase, usize) {
        match self {
            Phase::Normal | Phase::Suspected if breach => {
                let run = run + 1;
                (if run >= persistence { Phase::Confirmed } else { Phase::Suspected }, run)
            }
            Phase::Normal | Phase::Suspected => (Phase::Normal, 0),
            Phase::Confirmed | Phase::Classifying => (self, if breach { run + 1 } else { run }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    pub index: usize,
    pub size: usize,
    /// Fewer rows than `window_size`.
    pub short: bool,
    pub shifted: usize,
    pub anomalous_fraction: f64,
    pub breach: bool,
    /// Phase after the window was processed.
    pub phase: Phase,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels: Option<LabelSummary>,
}

/// Baseline frozen at pipeline start.
#[derive(Debug, Clone)]
pub struct FrozenBaseline {
    pub table: ObservationTable,
    pub bins: DiscretizationSpec,
    pub model: BaselineModel,
}

impl FrozenBaseline {
    pub fn fit(table: &ObservationTable, config: &MonitorConfig) -> Result<Self> {
        let numeric: Vec<String> = config
            .scan_features
            .iter()
            .filter(|f| table.schema().get(f).is_some_and(|a| a.kind == AttributeKind::Numeric))
            .cloned()
            .collect();
        let bins = if numeric.is_empty() {
            DiscretizationSpec::default()
        } else {
            fit_quartile_bins(table, config.bins, &numeric)?
        };
        let model = fit_baseline_with(&apply_bins(table, &bins), &config.scan_features, config.order)?;
        Ok(Self {
            table: table.clone(),
            bins,
            model,
        })
    }
}

#[derive(Debug, Clone)]
pub struct MonitorState {
    pub phase: Phase,
    pub consecutive_breaches: usize,
    pub confirmed_at: Option<usize>,
    /// Rows of the current breach run before confirmation.
    pending: Option<ObservationTable>,
    treatment: Option<ObservationTable>,
    pub log: Vec<WindowReport>,
}

impl Default for MonitorState {
    fn default() -> Self {
        Self {
            phase: Phase::Normal,
            consecutive_breaches: 0,
            confirmed_at: None,
            pending: None,
            treatment: None,
            log: Vec::new(),
        }
    }
}

impl MonitorState {
    pub fn treatment_rows(&self) -> usize {
        self.treatment.as_ref().map_or(0, ObservationTable::len)
    }

    pub fn treatment(&self) -> Option<&ObservationTable> {
        self.treatment.as_ref()
    }
}

fn append(slot: &mut Option<ObservationTable>, rows: &ObservationTable) -> Result<()> {
    *slot = Some(match slot.take() {
        Some(t) => t.concat(rows)?,
        None => rows.clone(),
    });
    Ok(())
}

/// Applies the state machine to one already-scored window.
fn transition(state: &mut MonitorState, window: &ObservationTable, breach: bool, config: &MonitorConfig) -> Result<()> {
    let index = state.log.len();
    let before = state.phase;
    let (phase, run) = before.step(state.consecutive_breaches, breach, config.persistence);
    match (before, phase) {
        (Phase::Normal | Phase::Suspected, Phase::Confirmed) => {
            append(&mut state.pending, window)?;
            state.treatment = state.pending.take();
            state.confirmed_at = Some(index);
        }
        (Phase::Normal | Phase::Suspected, Phase::Suspected) => append(&mut state.pending, window)?,
        (_, Phase::Normal) => state.pending = None,
        _ => append(&mut state.treatment, window)?,
    }
    state.phase = phase;
    state.consecutive_breaches = run;
    Ok(())
}

pub fn process_window(
    state: &mut MonitorState,
    window: &ObservationTable,
    baseline: &FrozenBaseline,
    config: &MonitorConfig,
) -> Result<WindowReport> {
    let index = state.log.len();
    let (shifted, fraction) = if window.is_empty() {
        (0, 0.0)
    } else {
        let scan = ScanConfig {
            seed: derive_seed(config.scan.seed, index as u64),
            ..config.scan.clone()
        };
        let out = flag_shifted_records(&baseline.model, &apply_bins(window, &baseline.bins), &scan)?;
        (out.shifted_count(), out.shifted_fraction())
    };
    let breach = fraction > config.threshold;
    if !window.is_empty() {
        transition(state, window, breach, config)?;
    }
    let report = WindowReport {
        index,
        size: window.len(),
        short: window.len() < config.window_size,
        shifted,
        anomalous_fraction: fraction,
        breach,
        phase: state.phase,
        labels: None,
    };
    state.log.push(report.clone());
    Ok(report)
}

/// Trains the forest once the shift is confirmed and enough treatment rows
/// have accumulated; otherwise does nothing.
pub fn maybe_train_forest(
    state: &mut MonitorState,
    baseline: &ObservationTable,
    config: &MonitorConfig,
) -> Result<Option<ForestModel>> {
    if state.phase != Phase::Confirmed || state.treatment_rows() < config.min_treatment_size {
        return Ok(None);
    }
    let Some(treatment) = state.treatment.as_ref() else {
        return Ok(None);
    };
    let data = assemble_treatment_data(baseline, treatment, &config.outcome, &config.forest_features)?;
    let model = fit_forest(&data, &config.forest)?;
    state.phase = Phase::Classifying;
    Ok(Some(model))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseChange {
    pub window: usize,
    pub from: Phase,
    pub to: Phase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestSummary {
    pub trained_after_window: usize,
    pub control_rows: usize,
    pub treatment_rows: usize,
    pub trees: usize,
    pub features: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub windows: Vec<WindowReport>,
    pub timeline: Vec<PhaseChange>,
    pub confirmed_at: Option<usize>,
    pub final_phase: Phase,
    pub forest: Option<ForestSummary>,
}

pub fn run_pipeline(
    baseline: &ObservationTable,
    stream: &ObservationTable,
    config: &MonitorConfig,
) -> Result<PipelineReport> {
    config.validate()?;
    let frozen = FrozenBaseline::fit(baseline, config)?;
    let mut state = MonitorState::default();
    let mut forest: Option<ForestModel> = None;
    let mut summary = None;
    let mut timeline = Vec::new();
    let mut start = 0;
    while start < stream.len() {
        let window = stream.slice(start, start + config.window_size);
        start += config.window_size;
        let labels = match &forest {
            Some(model) => Some(classify_dataset(model, &window, config.alpha)?.summary),
            None => None,
        };
        let before = state.phase;
        let mut report = process_window(&mut state, &window, &frozen, config)?;
        let mut record = |from: Phase, to: Phase| {
            if from != to {
                timeline.push(PhaseChange { window: report.index, from, to });
            }
        };
        record(before, state.phase);
        let scanned = state.phase;
        if let Some(model) = maybe_train_forest(&mut state, baseline, config)? {
            summary = Some(ForestSummary {
                trained_after_window: report.index,
                control_rows: baseline.len(),
                treatment_rows: state.treatment_rows(),
                trees: model.trees().len(),
                features: model.encoder().column_names(),
            });
            forest = Some(model);
        }
        record(scanned, state.phase);
        report.phase = state.phase;
        report.labels = labels;
        if let Some(last) = state.log.last_mut() {
            *last = report;
        }
    }
    Ok(PipelineReport {
        windows: state.log,
        timeline,
        confirmed_at: state.confirmed_at,
        final_phase: state.phase,
        forest: summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Attribute, Schema, Value};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn trace(fractions: &[f64], threshold: f64, k: usize) -> Vec<Phase> {
        let (mut phase, mut run) = (Phase::Normal, 0);
        fractions
            .iter()
            .map(|&f| {
                (phase, run) = phase.step(run, f > threshold, k);
                phase
            })
            .collect()
    }

    #[test]
    fn state_machine_examples() {
        use Phase::*;
        assert_eq!(trace(&[0.05, 0.3, 0.3, 0.3], 0.2, 3), vec![Normal, Suspected, Suspected, Confirmed]);
        assert_eq!(trace(&[0.3, 0.1, 0.3], 0.2, 2), vec![Suspected, Normal, Suspected]);
        assert!(trace(&[0.0; 40], 0.2, 3).iter().all(|&p| p == Normal));
        assert_eq!(trace(&[0.5], 0.2, 1), vec![Confirmed]);
        // confirmed is sticky
        assert_eq!(trace(&[0.3, 0.3, 0.0, 0.0], 0.2, 2)[3], Confirmed);
    }

    proptest! {
        #[test]
        fn confirmed_iff_k_consecutive_breaches(bits in prop::collection::vec(any::<bool>(), 0..30), k in 1usize..5) {
            let fractions: Vec<f64> = bits.iter().map(|&b| if b { 0.9 } else { 0.1 }).collect();
            let phases = trace(&fractions, 0.2, k);
            let brute = bits.windows(k).any(|w| w.iter().all(|&b| b));
            prop_assert_eq!(phases.contains(&Phase::Confirmed), brute);
            if let Some(first) = phases.iter().position(|&p| p == Phase::Confirmed) {
                prop_assert!(bits[first + 1 - k..=first].iter().all(|&b| b));
                prop_assert!(phases[first..].iter().all(|&p| p == Phase::Confirmed));
            }
        }
    }

    fn schema() -> Schema {
        Schema::new(vec![
            Attribute::categorical_feature("c"),
            Attribute::numeric_feature("x"),
            Attribute::outcome("y"),
        ])
        .unwrap()
    }

    /// `n` rows; a `shifted` share take the novel category `z`.
    fn rows(n: usize, shifted: f64, rng: &mut ChaCha8Rng) -> ObservationTable {
        let rows = (0..n)
            .map(|_| {
                let c = if rng.random_bool(shifted) {
                    "z".to_string()
                } else {
                    format!("c{}", rng.random_range(0..4))
                };
                let x: f64 = rng.random_range(0.0..1.0);
                let y = if rng.random_bool(if c == "z" { 0.8 } else { 0.3 }) { 1.0 } else { 0.0 };
                vec![Value::Category(c), Value::Number(x), Value::Number(y)]
            })
            .collect();
        ObservationTable::new(schema(), rows).unwrap()
    }

    fn config() -> MonitorConfig {
        let mut cfg = MonitorConfig::new(vec!["c".into()], vec!["c".into(), "x".into()], "y");
        cfg.window_size = 200;
        cfg.min_treatment_size = 500;
        cfg.scan.null_replicas = 39;
        cfg.scan.restarts = 5;
        cfg.forest.trees = 20;
        cfg
    }

    #[test]
    fn shift_confirms_then_classifies() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let baseline = rows(1000, 0.0, &mut rng);
        let stream = rows(600, 0.0, &mut rng).concat(&rows(1200, 0.4, &mut rng)).unwrap();
        let report = run_pipeline(&baseline, &stream, &config()).unwrap();
        assert_eq!(report.windows.len(), 9);
        assert_eq!(report.confirmed_at, Some(5));
        let forest = report.forest.as_ref().unwrap();
        // treatment covers windows 3..=5
        assert_eq!(forest.trained_after_window, 5);
        assert_eq!(forest.treatment_rows, 600);
        assert_eq!(report.final_phase, Phase::Classifying);
        for w in &report.windows {
            assert_eq!(w.labels.is_some(), w.index > 5, "{w:?}");
            assert!((0.0..=1.0).contains(&w.anomalous_fraction));
        }
        let changes: Vec<(usize, Phase)> = report.timeline.iter().map(|c| (c.window, c.to)).collect();
        assert_eq!(
            changes,
            vec![(3, Phase::Suspected), (5, Phase::Confirmed), (5, Phase::Classifying)],
        );
        assert_eq!(run_pipeline(&baseline, &stream, &config()).unwrap(), report);
    }

    #[test]
    fn null_stream_stays_normal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let baseline = rows(1000, 0.0, &mut rng);
        let stream = rows(1000, 0.0, &mut rng);
        let report = run_pipeline(&baseline, &stream, &config()).unwrap();
        assert!(report.confirmed_at.is_none());
        assert!(report.forest.is_none());
    }

    #[test]
    fn short_stream_gives_one_short_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let baseline = rows(500, 0.0, &mut rng);
        let report = run_pipeline(&baseline, &rows(50, 0.0, &mut rng), &config()).unwrap();
        assert_eq!(report.windows.len(), 1);
        assert!(report.windows[0].short);
        assert_eq!(report.final_phase, Phase::Normal);
    }

    #[test]
    fn empty_window_changes_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let baseline = rows(500, 0.0, &mut rng);
        let cfg = config();
        let frozen = FrozenBaseline::fit(&baseline, &cfg).unwrap();
        let mut state = MonitorState {
            phase: Phase::Suspected,
            consecutive_breaches: 1,
            ..MonitorState::default()
        };
        let report = process_window(&mut state, &ObservationTable::empty(schema()), &frozen, &cfg).unwrap();
        assert_eq!(report.anomalous_fraction, 0.0);
        assert_eq!((state.phase, state.consecutive_breaches), (Phase::Suspected, 1));
    }

    #[test]
    fn training_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let baseline = rows(500, 0.0, &mut rng);
        let cfg = config();
        let mut state = MonitorState {
            phase: Phase::Confirmed,
            treatment: Some(rows(499, 0.4, &mut rng)),
            ..MonitorState::default()
        };
        assert!(maybe_train_forest(&mut state, &baseline, &cfg).unwrap().is_none());
        assert_eq!(state.phase, Phase::Confirmed);
        append(&mut state.treatment, &rows(1, 0.4, &mut rng)).unwrap();
        assert!(maybe_train_forest(&mut state, &baseline, &cfg).unwrap().is_some());
        assert_eq!(state.phase, Phase::Classifying);

        let mut normal = MonitorState {
            treatment: Some(rows(800, 0.4, &mut rng)),
            ..MonitorState::default()
        };
        assert!(maybe_train_forest(&mut normal, &baseline, &cfg).unwrap().is_none());
    }

    #[test]
    fn fit_errors_leave_state_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let baseline = rows(500, 0.0, &mut rng);
        let mut cfg = config();
        cfg.forest.trees = 1;
        let mut state = MonitorState {
            phase: Phase::Confirmed,
            treatment: Some(rows(600, 0.4, &mut rng)),
            ..MonitorState::default()
        };
        assert!(maybe_train_forest(&mut state, &baseline, &cfg).is_err());
        assert_eq!(state.phase, Phase::Confirmed);
    }
}
