//! Fast generalized subset scan over a [`PRangeMatrix`].
//!
//! The score of a subset `S = R × A` is `F(S) = max_α BJ(α, N_α(S), N(S))`
//! where `N_α` is the expected number of cells significant at level `α` and
//! `BJ` is the one-sided Berk-Jones statistic `n · KL(N_α/n ‖ α)`. Because
//! `BJ` increases with `N_α` and the cell weights are additive, the best
//! record set for fixed attributes and `α` is a prefix of records sorted by
//! summed weight (and symmetrically for attributes). [`scan`] alternates those
//! two exact steps from random attribute subsets.

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{
    build_prange_matrix, counting_weight, significance_weight, BaselineModel, PRange, PRangeMatrix,
};
use crate::data::ObservationTable;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream_rng};

const IMPROVEMENT_TOL: f64 = 1e-12;
const NULL_STREAM: u64 = 0x6e75_6c6c;
const PEEL_STREAM: u64 = 0x7065_656c;

/// How a cell contributes to `N_α`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMode {
    /// Probability that a uniform draw from the range falls below `α`.
    #[default]
    Expected,
    /// 1 iff `p_max <= α`.
    Counting,
}

impl WeightMode {
    #[inline]
    fn weight(self, range: PRange, alpha: f64) -> f64 {
        match self {
            WeightMode::Expected => significance_weight(range, alpha),
            WeightMode::Counting => counting_weight(range, alpha),
        }
    }
}

/// What a randomization-test replica holds fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NullModel {
    /// Synthetic test sets are scored against the fitted baseline itself.
    Fixed,
    /// Each replica also redraws a training set of the original size and
    /// refits the baseline, so the null includes baseline estimation noise.
    #[default]
    Refit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    pub alpha_max: f64,
    pub restarts: usize,
    pub max_iterations: usize,
    pub seed: u64,
    pub peel_rounds: usize,
    pub significance_level: f64,
    pub null_replicas: usize,
    #[serde(default)]
    pub weight_mode: WeightMode,
    /// Flag only the first significant subset instead of peeling.
    #[serde(default)]
    pub single_scan: bool,
    #[serde(default)]
    pub null_model: NullModel,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            alpha_max: 0.5,
            restarts: 50,
            max_iterations: 100,
            seed: 0,
            peel_rounds: 10,
            significance_level: 0.05,
            null_replicas: 99,
            weight_mode: WeightMode::Expected,
            single_scan: false,
            null_model: NullModel::Refit,
        }
    }
}

impl ScanConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_max > 0.0 && self.alpha_max < 1.0) {
            return Err(Error::Argument(format!("alpha_max must be in (0,1), got {}", self.alpha_max)));
        }
        if self.restarts == 0 {
            return Err(Error::Argument("restarts must be >= 1".into()));
        }
        if !(self.significance_level > 0.0 && self.significance_level < 1.0) {
            return Err(Error::Argument("significance_level must be in (0,1)".into()));
        }
        Ok(())
    }

    fn reseeded(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

/// Record and attribute indices, each ascending.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Subset {
    pub records: Vec<usize>,
    pub attributes: Vec<usize>,
}

impl Subset {
    pub fn new(mut records: Vec<usize>, mut attributes: Vec<usize>) -> Self {
        records.sort_unstable();
        records.dedup();
        attributes.sort_unstable();
        attributes.dedup();
        Self { records, attributes }
    }

    pub fn size(&self) -> usize {
        self.records.len() * self.attributes.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub subset: Subset,
    pub score: f64,
    pub alpha_star: f64,
    pub n_alpha: f64,
    pub n_total: usize,
    pub empirical_p: Option<f64>,
}

/// One-sided Berk-Jones statistic.
pub fn berk_jones(alpha: f64, n_alpha: f64, n: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Argument(format!("alpha must be in (0,1), got {alpha}")));
    }
    if n.is_nan() || n <= 0.0 {
        return Err(Error::Argument(format!("n must be positive, got {n}")));
    }
    if !(n_alpha >= 0.0 && n_alpha <= n * (1.0 + 1e-12)) {
        return Err(Error::Argument(format!("n_alpha must be in [0, n], got {n_alpha} with n = {n}")));
    }
    Ok(bj(alpha, n_alpha.min(n), n))
}

#[inline]
fn bj(alpha: f64, n_alpha: f64, n: f64) -> f64 {
    let r = n_alpha / n;
    if r <= alpha {
        return 0.0;
    }
    let upper = r * (r / alpha).ln();
    let lower = if r >= 1.0 {
        0.0
    } else {
        (1.0 - r) * ((1.0 - r) / (1.0 - alpha)).ln()
    };
    n * (upper + lower)
}

pub fn score_subset(matrix: &PRangeMatrix, subset: &Subset, alpha: f64) -> Result<(f64, f64)> {
    score_subset_with(matrix, subset, alpha, WeightMode::Expected)
}

pub fn score_subset_with(
    matrix: &PRangeMatrix,
    subset: &Subset,
    alpha: f64,
    mode: WeightMode,
) -> Result<(f64, f64)> {
    if subset.records.is_empty() || subset.attributes.is_empty() {
        return Err(Error::Argument("cannot score an empty subset".into()));
    }
    if subset.records.iter().any(|&i| i >= matrix.n_records())
        || subset.attributes.iter().any(|&j| j >= matrix.n_attributes())
    {
        return Err(Error::Argument("subset index out of range".into()));
    }
    let mut n_alpha = 0.0;
    for &i in &subset.records {
        for &j in &subset.attributes {
            n_alpha += mode.weight(matrix.get(i, j), alpha);
        }
    }
    let n = subset.size() as f64;
    Ok((berk_jones(alpha, n_alpha.min(n), n)?, n_alpha))
}

/// Candidate significance levels: distinct range endpoints of the selected
/// attributes inside `(0, alpha_max]`, plus `alpha_max` itself.
pub fn alpha_grid(matrix: &PRangeMatrix, attrs: &[usize], alpha_max: f64) -> Vec<f64> {
    let mut grid = vec![alpha_max];
    for i in 0..matrix.n_records() {
        for &j in attrs {
            let r = matrix.get(i, j);
            for p in [r.p_min, r.p_max] {
                if p > 0.0 && p <= alpha_max {
                    grid.push(p);
                }
            }
        }
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

/// Best prefix of `items` sorted by descending `priority` (ties: lower index
/// first). `width` is the number of cells each item contributes.
fn best_prefix(priority: &[f64], width: usize, alpha: f64) -> (Vec<usize>, f64, f64) {
    let mut idx: Vec<usize> = (0..priority.len()).collect();
    idx.sort_by(|&a, &b| priority[b].total_cmp(&priority[a]).then(a.cmp(&b)));
    let mut best_k = 1;
    let mut best_score = f64::NEG_INFINITY;
    let mut best_n_alpha = 0.0;
    let mut cum = 0.0;
    for (k, &i) in idx.iter().enumerate() {
        cum += priority[i];
        let n = ((k + 1) * width) as f64;
        let s = bj(alpha, cum.min(n), n);
        if s > best_score {
            best_score = s;
            best_k = k + 1;
            best_n_alpha = cum;
        }
    }
    let mut chosen = idx[..best_k].to_vec();
    chosen.sort_unstable();
    (chosen, best_score, best_n_alpha)
}

pub fn best_records_given(matrix: &PRangeMatrix, attrs: &[usize], alpha: f64) -> (Vec<usize>, f64, f64) {
    best_records_with(matrix, attrs, alpha, WeightMode::Expected)
}

fn best_records_with(
    matrix: &PRangeMatrix,
    attrs: &[usize],
    alpha: f64,
    mode: WeightMode,
) -> (Vec<usize>, f64, f64) {
    let priority: Vec<f64> = (0..matrix.n_records())
        .map(|i| attrs.iter().map(|&j| mode.weight(matrix.get(i, j), alpha)).sum())
        .collect();
    best_prefix(&priority, attrs.len(), alpha)
}

pub fn best_attributes_given(
    matrix: &PRangeMatrix,
    records: &[usize],
    alpha: f64,
) -> (Vec<usize>, f64, f64) {
    best_attributes_with(matrix, records, alpha, WeightMode::Expected)
}

fn best_attributes_with(
    matrix: &PRangeMatrix,
    records: &[usize],
    alpha: f64,
    mode: WeightMode,
) -> (Vec<usize>, f64, f64) {
    let priority: Vec<f64> = (0..matrix.n_attributes())
        .map(|j| records.iter().map(|&i| mode.weight(matrix.get(i, j), alpha)).sum())
        .collect();
    best_prefix(&priority, records.len(), alpha)
}

#[derive(Debug, Clone)]
struct Candidate {
    records: Vec<usize>,
    attributes: Vec<usize>,
    alpha: f64,
    score: f64,
}

fn random_attribute_subset<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Vec<usize> {
    loop {
        let chosen: Vec<usize> = (0..m).filter(|_| rng.random_bool(0.5)).collect();
        if !chosen.is_empty() {
            return chosen;
        }
    }
}

fn ascend(matrix: &PRangeMatrix, init: &[usize], grid: &[f64], config: &ScanConfig) -> Candidate {
    let mode = config.weight_mode;
    let records_step = |attrs: &[usize]| -> Candidate {
        let mut best: Option<Candidate> = None;
        for &alpha in grid {
            let (records, score, _) = best_records_with(matrix, attrs, alpha, mode);
            if best.as_ref().is_none_or(|b| score > b.score) {
                best = Some(Candidate { records, attributes: attrs.to_vec(), alpha, score });
            }
        }
        best.expect("alpha grid is never empty")
    };
    let attributes_step = |records: &[usize]| -> Candidate {
        let mut best: Option<Candidate> = None;
        for &alpha in grid {
            let (attributes, score, _) = best_attributes_with(matrix, records, alpha, mode);
            if best.as_ref().is_none_or(|b| score > b.score) {
                best = Some(Candidate { records: records.to_vec(), attributes, alpha, score });
            }
        }
        best.expect("alpha grid is never empty")
    };

    let mut current = records_step(init);
    let mut stalled = 0;
    let mut attributes_next = true;
    for _ in 0..config.max_iterations {
        let next = if attributes_next {
            attributes_step(&current.records)
        } else {
            records_step(&current.attributes)
        };
        attributes_next = !attributes_next;
        if next.score > current.score + IMPROVEMENT_TOL {
            current = next;
            stalled = 0;
        } else {
            stalled += 1;
            if stalled >= 2 {
                break;
            }
        }
    }
    current
}

/// Coordinate-ascent maximization of `F(S)` with seeded random restarts.
///
/// Restarts that draw the same initial attribute subset follow the same
/// deterministic path, so each distinct start is climbed once.
pub fn scan(matrix: &PRangeMatrix, config: &ScanConfig) -> Result<ScanResult> {
    config.validate()?;
    if matrix.n_records() == 0 || matrix.n_attributes() == 0 {
        return Err(Error::Argument("cannot scan an empty matrix".into()));
    }
    let m = matrix.n_attributes();
    let all_attrs: Vec<usize> = (0..m).collect();
    let grid = alpha_grid(matrix, &all_attrs, config.alpha_max);

    let inits: Vec<Vec<usize>> = (0..config.restarts)
        .map(|r| random_attribute_subset(m, &mut stream_rng(config.seed, r as u64)))
        .collect();
    let mut distinct: Vec<Vec<usize>> = inits.clone();
    distinct.sort();
    distinct.dedup();
    let climbed: HashMap<Vec<usize>, Candidate> = distinct
        .into_par_iter()
        .map(|init| {
            let c = ascend(matrix, &init, &grid, config);
            (init, c)
        })
        .collect();

    // lowest restart index wins ties
    let mut best: Option<&Candidate> = None;
    for init in &inits {
        let c = &climbed[init];
        if best.is_none_or(|b| c.score > b.score) {
            best = Some(c);
        }
    }
    let best = best.expect("restarts >= 1");
    let subset = Subset::new(best.records.clone(), best.attributes.clone());
    let (score, n_alpha) = score_subset_with(matrix, &subset, best.alpha, config.weight_mode)?;
    Ok(ScanResult {
        n_total: subset.size(),
        subset,
        score,
        alpha_star: best.alpha,
        n_alpha,
        empirical_p: None,
    })
}

/// `(1 + #{null score >= observed}) / (replicas + 1)`.
pub fn empirical_p_value(null_scores: &[f64], observed: f64) -> f64 {
    let exceed = null_scores.iter().filter(|&&s| s >= observed).count();
    (1 + exceed) as f64 / (null_scores.len() + 1) as f64
}

/// Scan scores of `config.null_replicas` synthetic test sets drawn from the
/// baseline's training marginals, attributes independent.
pub fn null_scores(model: &BaselineModel, test_size: usize, config: &ScanConfig) -> Result<Vec<f64>> {
    config.validate()?;
    if test_size == 0 || model.attribute_names().is_empty() {
        return Ok(vec![0.0; config.null_replicas]);
    }
    let null_seed = derive_seed(config.seed, NULL_STREAM);
    (0..config.null_replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(null_seed, r as u64);
            let matrix = match config.null_model {
                NullModel::Fixed => model.sample_matrix(test_size, &mut rng),
                NullModel::Refit => {
                    let refit = model.resample(&mut rng);
                    model.sample_matrix_against(&refit, test_size, &mut rng)
                }
            };
            let cfg = config.reseeded(derive_seed(null_seed, r as u64 ^ (1 << 63)));
            scan(&matrix, &cfg).map(|res| res.score)
        })
        .collect()
}

pub fn randomization_test(
    model: &BaselineModel,
    test_size: usize,
    observed_score: f64,
    config: &ScanConfig,
) -> Result<f64> {
    let nulls = null_scores(model, test_size, config)?;
    Ok(empirical_p_value(&nulls, observed_score))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftLabel {
    Shifted,
    NotShifted,
}

impl ShiftLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            ShiftLabel::Shifted => "shifted",
            ShiftLabel::NotShifted => "not_shifted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlagOutcome {
    pub record_ids: Vec<String>,
    pub labels: Vec<ShiftLabel>,
    /// Every scan performed, in peel order, with record indices relative to
    /// the full test table. The last one may be insignificant.
    pub scans: Vec<ScanResult>,
}

impl FlagOutcome {
    pub fn shifted_count(&self) -> usize {
        self.labels.iter().filter(|l| **l == ShiftLabel::Shifted).count()
    }

    pub fn shifted_fraction(&self) -> f64 {
        if self.labels.is_empty() {
            0.0
        } else {
            self.shifted_count() as f64 / self.labels.len() as f64
        }
    }
}

pub fn flag_shifted_records(
    model: &BaselineModel,
    test: &ObservationTable,
    config: &ScanConfig,
) -> Result<FlagOutcome> {
    let matrix = build_prange_matrix(model, test)?;
    flag_shifted_matrix(model, &matrix, config)
}

/// Peel scanning: scan, test, remove a significant subset's records, repeat.
pub fn flag_shifted_matrix(
    model: &BaselineModel,
    matrix: &PRangeMatrix,
    config: &ScanConfig,
) -> Result<FlagOutcome> {
    config.validate()?;
    let n = matrix.n_records();
    let mut labels = vec![ShiftLabel::NotShifted; n];
    let mut scans = Vec::new();
    let mut remaining: Vec<usize> = (0..n).collect();
    let peel_seed = derive_seed(config.seed, PEEL_STREAM);
    for round in 0..config.peel_rounds {
        if remaining.is_empty() || matrix.n_attributes() == 0 {
            break;
        }
        let sub = matrix.select_records(&remaining);
        let cfg = config.reseeded(derive_seed(peel_seed, round as u64));
        let mut result = scan(&sub, &cfg)?;
        let p = randomization_test(model, remaining.len(), result.score, &cfg)?;
        result.empirical_p = Some(p);
        result.subset.records = result.subset.records.iter().map(|&k| remaining[k]).collect();
        let significant = p <= config.significance_level;
        if significant {
            for &i in &result.subset.records {
                labels[i] = ShiftLabel::Shifted;
            }
            let removed = &result.subset.records;
            remaining.retain(|i| removed.binary_search(i).is_err());
        }
        scans.push(result);
        if !significant || config.single_scan {
            break;
        }
    }
    Ok(FlagOutcome {
        record_ids: matrix.record_ids().to_vec(),
        labels,
        scans,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baseline::fit_baseline;
    use crate::data::{Attribute, ObservationTable, Schema, Value};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand::Rng;

    /// Bernoulli KL written out independently of `bj`.
    fn kl_oracle(alpha: f64, n_alpha: f64, n: f64) -> f64 {
        let r = n_alpha / n;
        if r <= alpha {
            return 0.0;
        }
        let mut s = r * r.ln() - r * alpha.ln();
        if r < 1.0 {
            s += (1.0 - r) * (1.0 - r).ln() - (1.0 - r) * (1.0 - alpha).ln();
        }
        n * s
    }

    fn pr(a: f64, b: f64) -> PRange {
        PRange::new(a, b)
    }

    fn names(m: usize) -> Vec<String> {
        (0..m).map(|j| format!("a{j}")).collect()
    }

    /// Max of F over every nonempty R × A and every α on the full grid.
    pub(crate) fn brute_force(matrix: &PRangeMatrix, alpha_max: f64) -> f64 {
        let n = matrix.n_records();
        let m = matrix.n_attributes();
        let grid = alpha_grid(matrix, &(0..m).collect::<Vec<_>>(), alpha_max);
        let mut best = 0.0f64;
        for rmask in 1u32..(1 << n) {
            let records: Vec<usize> = (0..n).filter(|i| rmask >> i & 1 == 1).collect();
            for amask in 1u32..(1 << m) {
                let attrs: Vec<usize> = (0..m).filter(|j| amask >> j & 1 == 1).collect();
                let s = Subset::new(records.clone(), attrs);
                for &alpha in &grid {
                    best = best.max(score_subset(matrix, &s, alpha).unwrap().0);
                }
            }
        }
        best
    }

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize, m: usize) -> PRangeMatrix {
        let rows = (0..n)
            .map(|_| {
                (0..m)
                    .map(|_| {
                        let a: f64 = rng.random::<f64>() * 0.9;
                        let w: f64 = 0.02 + rng.random::<f64>() * 0.3;
                        pr(a, (a + w).min(1.0))
                    })
                    .collect()
            })
            .collect();
        PRangeMatrix::from_rows(names(m), rows).unwrap()
    }

    #[test]
    fn berk_jones_examples() {
        assert!((berk_jones(0.05, 50.0, 100.0).unwrap() - 83.0366).abs() < 1e-4);
        assert_eq!(berk_jones(0.05, 5.0, 100.0).unwrap(), 0.0);
        assert!((berk_jones(0.1, 10.0, 10.0).unwrap() - 10.0 * 10f64.ln()).abs() < 1e-12);
        assert!(berk_jones(0.0, 1.0, 2.0).is_err());
        assert!(berk_jones(0.1, 3.0, 2.0).is_err());
        assert!(berk_jones(0.1, 0.0, 0.0).is_err());
    }

    #[test]
    fn score_subset_examples() {
        let m = PRangeMatrix::from_rows(names(2), vec![vec![pr(0.0, 0.1), pr(0.0, 0.1)]]).unwrap();
        let s = Subset::new(vec![0], vec![0, 1]);
        let (score, n_alpha) = score_subset(&m, &s, 0.1).unwrap();
        assert_eq!(n_alpha, 2.0);
        assert!((score - 2.0 * 10f64.ln()).abs() < 1e-12);

        let quiet = PRangeMatrix::from_rows(names(2), vec![vec![pr(0.5, 1.0); 2]; 3]).unwrap();
        let all = Subset::new(vec![0, 1, 2], vec![0, 1]);
        assert_eq!(score_subset(&quiet, &all, 0.05).unwrap().0, 0.0);

        let cell = PRangeMatrix::from_rows(names(1), vec![vec![pr(0.0, 0.2)]]).unwrap();
        let (score, n_alpha) = score_subset(&cell, &Subset::new(vec![0], vec![0]), 0.05).unwrap();
        assert!((n_alpha - 0.25).abs() < 1e-15);
        assert!((score - kl_oracle(0.05, 0.25, 1.0)).abs() < 1e-12);
        assert!((score - 0.22507).abs() < 1e-4);

        assert!(score_subset(&cell, &Subset::new(vec![], vec![0]), 0.05).is_err());
    }

    #[test]
    fn alpha_grid_examples() {
        let m = PRangeMatrix::from_rows(names(2), vec![vec![pr(0.0, 0.2), pr(0.5, 1.0)]]).unwrap();
        assert_eq!(alpha_grid(&m, &[0, 1], 0.5), vec![0.2, 0.5]);
        let flat = PRangeMatrix::from_rows(names(1), vec![vec![pr(0.0, 1.0)]; 3]).unwrap();
        assert_eq!(alpha_grid(&flat, &[0], 0.5), vec![0.5]);
        assert_eq!(alpha_grid(&m, &[], 0.5), vec![0.5]);
    }

    fn exhaustive_records(matrix: &PRangeMatrix, attrs: &[usize], alpha: f64) -> f64 {
        let n = matrix.n_records();
        (1u32..(1 << n))
            .map(|mask| {
                let r: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
                score_subset(matrix, &Subset::new(r, attrs.to_vec()), alpha).unwrap().0
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn best_records_examples() {
        // priorities {2, 0, 0}
        let m = PRangeMatrix::from_rows(
            names(2),
            vec![
                vec![pr(0.0, 0.1), pr(0.0, 0.1)],
                vec![pr(0.5, 0.6), pr(0.5, 0.6)],
                vec![pr(0.5, 0.6), pr(0.5, 0.6)],
            ],
        )
        .unwrap();
        let (r, score, _) = best_records_given(&m, &[0, 1], 0.1);
        assert_eq!(r, vec![0]);
        assert!((score - 2.0 * 10f64.ln()).abs() < 1e-12);
        assert!((score - exhaustive_records(&m, &[0, 1], 0.1)).abs() < 1e-12);

        let equal = PRangeMatrix::from_rows(names(2), vec![vec![pr(0.0, 0.1); 2]; 3]).unwrap();
        let (r, score, _) = best_records_given(&equal, &[0, 1], 0.1);
        assert!((score - exhaustive_records(&equal, &[0, 1], 0.1)).abs() < 1e-12);
        assert_eq!(r, vec![0, 1, 2]);

        let zero = PRangeMatrix::from_rows(names(2), vec![vec![pr(0.5, 1.0); 2]; 3]).unwrap();
        let (r, score, _) = best_records_given(&zero, &[0, 1], 0.1);
        assert_eq!((r, score), (vec![0], 0.0));
    }

    #[test]
    fn best_attributes_examples() {
        // transpose of the records example: one hot attribute
        let m = PRangeMatrix::from_rows(
            names(3),
            vec![
                vec![pr(0.0, 0.1), pr(0.5, 0.6), pr(0.5, 0.6)],
                vec![pr(0.0, 0.1), pr(0.5, 0.6), pr(0.5, 0.6)],
            ],
        )
        .unwrap();
        let (a, score, _) = best_attributes_given(&m, &[0, 1], 0.1);
        assert_eq!(a, vec![0]);
        assert!((score - 2.0 * 10f64.ln()).abs() < 1e-12);

        let single = PRangeMatrix::from_rows(names(1), vec![vec![pr(0.3, 0.4)]]).unwrap();
        assert_eq!(best_attributes_given(&single, &[0], 0.1).0, vec![0]);

        let twins = PRangeMatrix::from_rows(names(2), vec![vec![pr(0.0, 0.1), pr(0.0, 0.1)], vec![pr(0.2, 0.9), pr(0.2, 0.9)]]).unwrap();
        assert_eq!(best_attributes_given(&twins, &[0, 1], 0.1).0, vec![0, 1]);
    }

    #[test]
    fn scan_finds_hot_record() {
        let m = PRangeMatrix::from_rows(
            names(2),
            vec![
                vec![pr(0.0, 0.1), pr(0.0, 0.1)],
                vec![pr(0.5, 0.6), pr(0.5, 0.6)],
                vec![pr(0.5, 0.6), pr(0.5, 0.6)],
            ],
        )
        .unwrap();
        let res = scan(&m, &ScanConfig::default()).unwrap();
        assert_eq!(res.subset, Subset::new(vec![0], vec![0, 1]));
        assert!((res.score - 4.6052).abs() < 1e-4);
        assert_eq!(res.alpha_star, 0.1);
        assert!((res.score - brute_force(&m, 0.5)).abs() < 1e-12);
        assert_eq!(res.n_total, 2);
    }

    #[test]
    fn scan_of_quiet_matrix_scores_zero() {
        let m = PRangeMatrix::from_rows(names(3), vec![vec![pr(0.5, 1.0); 3]; 4]).unwrap();
        assert_eq!(scan(&m, &ScanConfig::default()).unwrap().score, 0.0);
        let empty = PRangeMatrix::from_rows(names(3), vec![]).unwrap();
        assert!(scan(&empty, &ScanConfig::default()).is_err());
    }

    #[test]
    fn scan_matches_brute_force_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut hits = 0;
        for _ in 0..100 {
            let m = random_matrix(&mut rng, 8, 4);
            let cfg = ScanConfig { seed: rng.random(), ..ScanConfig::default() };
            let res = scan(&m, &cfg).unwrap();
            let oracle = brute_force(&m, cfg.alpha_max);
            assert!(res.score <= oracle + 1e-9);
            let (again, _) = score_subset(&m, &res.subset, res.alpha_star).unwrap();
            assert_eq!(again, res.score);
            if res.score >= oracle - 1e-9 {
                hits += 1;
            }
        }
        assert!(hits >= 95, "hits = {hits}");
    }

    #[test]
    fn scan_result_is_a_local_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let m = random_matrix(&mut rng, 10, 5);
            let res = scan(&m, &ScanConfig { seed: 3, ..ScanConfig::default() }).unwrap();
            let grid = alpha_grid(&m, &(0..5).collect::<Vec<_>>(), 0.5);
            for &alpha in &grid {
                let (_, s, _) = best_records_given(&m, &res.subset.attributes, alpha);
                assert!(s <= res.score + 1e-9);
                let (_, s, _) = best_attributes_given(&m, &res.subset.records, alpha);
                assert!(s <= res.score + 1e-9);
            }
        }
    }

    #[test]
    fn scan_is_deterministic_across_pools() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = random_matrix(&mut rng, 30, 6);
        let cfg = ScanConfig { seed: 77, ..ScanConfig::default() };
        let a = scan(&m, &cfg).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| scan(&m, &cfg).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn p_value_rank_arithmetic() {
        let nulls: Vec<f64> = (0..99).map(|i| i as f64).collect();
        assert_eq!(empirical_p_value(&nulls, 1000.0), 0.01);
        assert_eq!(empirical_p_value(&nulls, -1.0), 1.0);
    }

    fn cat_table(name: &str, tokens: &[String]) -> ObservationTable {
        let schema = Schema::new(vec![Attribute::categorical_feature(name)]).unwrap();
        ObservationTable::new(schema, tokens.iter().map(|t| vec![Value::Category(t.clone())]).collect()).unwrap()
    }

    fn draw(rng: &mut ChaCha8Rng, n: usize, probs: &[f64], prefix: &str) -> Vec<String> {
        (0..n)
            .map(|_| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (k, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return format!("{prefix}{k}");
                    }
                }
                format!("{prefix}{}", probs.len() - 1)
            })
            .collect()
    }

    #[test]
    fn disjoint_category_rows_get_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let probs = [0.4, 0.3, 0.2, 0.1];
        let train = draw(&mut rng, 1000, &probs, "c");
        let mut test = draw(&mut rng, 140, &probs, "c");
        test.extend(std::iter::repeat_n("novel".to_string(), 60));
        let model = fit_baseline(&cat_table("x", &train), &["x".into()]).unwrap();
        let cfg = ScanConfig { seed: 4, null_replicas: 49, ..ScanConfig::default() };
        let out = flag_shifted_records(&model, &cat_table("x", &test), &cfg).unwrap();
        let frac = out.shifted_fraction();
        assert!((0.15..=0.45).contains(&frac), "{frac}");
        assert!(out.labels[140..].iter().all(|l| *l == ShiftLabel::Shifted));
        assert_eq!(out.labels.len(), test.len());
    }

    #[test]
    fn insignificant_first_scan_flags_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let probs = [0.5, 0.5];
        let train = draw(&mut rng, 500, &probs, "c");
        // test rows are the most common training values only
        let test: Vec<String> = (0..40).map(|i| format!("c{}", i % 2)).collect();
        let model = fit_baseline(&cat_table("x", &train), &["x".into()]).unwrap();
        let cfg = ScanConfig { null_replicas: 19, ..ScanConfig::default() };
        let out = flag_shifted_records(&model, &cat_table("x", &test), &cfg).unwrap();
        assert_eq!(out.shifted_count(), 0);
        assert_eq!(out.scans.len(), 1);
        assert!(out.scans[0].empirical_p.unwrap() > 0.05);
    }

    proptest! {
        #[test]
        fn berk_jones_matches_oracle_and_is_monotone(
            alpha in 0.001f64..0.999,
            frac in 0.0f64..=1.0,
            n in 1.0f64..1e4,
            bump in 0.0f64..1.0,
        ) {
            let n_alpha = frac * n;
            let s = berk_jones(alpha, n_alpha, n).unwrap();
            let o = kl_oracle(alpha, n_alpha, n);
            prop_assert!((s - o).abs() <= 1e-9 * o.abs().max(1e-300) || (s == 0.0 && o == 0.0));
            if n_alpha > alpha * n {
                let more = (n_alpha + bump * (n - n_alpha)).min(n);
                if more > n_alpha {
                    prop_assert!(berk_jones(alpha, more, n).unwrap() > s);
                }
                prop_assert!(berk_jones(alpha, n_alpha, n + bump * 10.0).unwrap() <= s + 1e-9 * s);
                let a2 = alpha + bump * (1.0 - alpha) * 0.999;
                prop_assert!(berk_jones(a2, n_alpha, n).unwrap() <= s + 1e-9 * s);
            } else {
                prop_assert_eq!(s, 0.0);
            }
        }

        #[test]
        fn best_records_is_exhaustively_optimal(seed in any::<u64>(), n in 1usize..9, m in 1usize..4, ai in 0usize..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mat = random_matrix(&mut rng, n, m);
            let attrs: Vec<usize> = (0..m).collect();
            let grid = alpha_grid(&mat, &attrs, 0.5);
            let alpha = grid[ai % grid.len()];
            let (_, s, _) = best_records_given(&mat, &attrs, alpha);
            let oracle = exhaustive_records(&mat, &attrs, alpha);
            prop_assert!((s - oracle).abs() <= 1e-9 * oracle.max(1.0));
        }

        #[test]
        fn peel_labels_partition(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let train = draw(&mut rng, 200, &[0.6, 0.3, 0.1], "c");
            let test = draw(&mut rng, 40, &[0.2, 0.3, 0.5], "c");
            let model = fit_baseline(&cat_table("x", &train), &["x".into()]).unwrap();
            let cfg = ScanConfig { seed, restarts: 5, null_replicas: 9, peel_rounds: 3, ..ScanConfig::default() };
            let out = flag_shifted_records(&model, &cat_table("x", &test), &cfg).unwrap();
            prop_assert_eq!(out.labels.len(), 40);
            // scanned subsets of significant rounds are disjoint
            let mut seen = std::collections::HashSet::new();
            for s in out.scans.iter().filter(|s| s.empirical_p.unwrap() <= 0.05) {
                for r in &s.subset.records {
                    prop_assert!(seen.insert(*r));
                }
            }
            prop_assert_eq!(seen.len(), out.shifted_count());
        }
    }
}
