//! Synthetic ancillary-purchase data with controllable shift.
//!
//! Requests arrive per flight as a non-homogeneous Poisson process over the
//! booking horizon `[0, horizon]` (simulated by thinning). Each request sees
//! the seats sold so far, is offered a uniformly drawn price and buys with
//! binary-logit probability. A flight never sells more than its capacity.

use std::collections::BTreeSet;
use std::io::Read;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Attribute, AttributeKind, AttributeRole, ObservationTable, Schema, Value};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream_rng};

const TRAIN_STREAM: u64 = 0x0074_7261_696e;
const TEST_STREAM: u64 = 0x7465_7374;
const LEAK_STREAM: u64 = 0x6c65_616b;

pub const RECORD_ID: &str = "record_id";
pub const FLIGHT_ID: &str = "flight_id";
pub const ADVANCED_PURCHASE: &str = "AdvancedPurchase";
pub const SOLD: &str = "Sold";
pub const PRICE: &str = "Price";
pub const PURCHASE: &str = "y";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlightConfig {
    pub flight_id: u32,
    pub capacity: u32,
    pub price_min: f64,
    pub price_max: f64,
    pub horizon: f64,
}

impl FlightConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.price_min > 0.0 && self.price_min <= self.price_max && self.price_max.is_finite()) {
            return Err(Error::Argument(format!(
                "flight {}: need 0 < price_min <= price_max, got [{}, {}]",
                self.flight_id, self.price_min, self.price_max
            )));
        }
        if self.capacity == 0 {
            return Err(Error::Argument(format!("flight {}: capacity must be >= 1", self.flight_id)));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Argument(format!("flight {}: horizon must be positive", self.flight_id)));
        }
        Ok(())
    }
}

/// Piecewise-constant rate: `rates[i]` applies on `[breakpoints[i],
/// breakpoints[i + 1])`, the last rate to the end of the horizon, and the
/// rate is 0 before `breakpoints[0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawIntensity", into = "RawIntensity")]
pub struct IntensityFunction {
    breakpoints: Vec<f64>,
    rates: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawIntensity {
    breakpoints: Vec<f64>,
    rates: Vec<f64>,
}

impl TryFrom<RawIntensity> for IntensityFunction {
    type Error = Error;

    fn try_from(raw: RawIntensity) -> Result<Self> {
        IntensityFunction::new(raw.breakpoints, raw.rates)
    }
}

impl From<IntensityFunction> for RawIntensity {
    fn from(f: IntensityFunction) -> Self {
        RawIntensity {
            breakpoints: f.breakpoints,
            rates: f.rates,
        }
    }
}

impl IntensityFunction {
    pub fn new(breakpoints: Vec<f64>, rates: Vec<f64>) -> Result<Self> {
        if breakpoints.is_empty() || breakpoints.len() != rates.len() {
            return Err(Error::Argument("intensity needs one rate per breakpoint".into()));
        }
        if breakpoints.iter().any(|b| !b.is_finite()) || breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Argument("intensity breakpoints must be finite and increasing".into()));
        }
        if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::Argument("intensity rates must be finite and >= 0".into()));
        }
        Ok(Self { breakpoints, rates })
    }

    pub fn constant(rate: f64) -> Result<Self> {
        Self::new(vec![0.0], vec![rate])
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn rate(&self, t: f64) -> f64 {
        match self.breakpoints.partition_point(|&b| b <= t) {
            0 => 0.0,
            k => self.rates[k - 1],
        }
    }

    pub fn max_rate(&self) -> f64 {
        self.rates.iter().copied().fold(0.0, f64::max)
    }

    /// `∫_a^b λ(t) dt`.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        (0..self.breakpoints.len())
            .map(|i| {
                let lo = self.breakpoints[i].max(a);
                let hi = self.breakpoints.get(i + 1).copied().unwrap_or(f64::INFINITY).min(b);
                if hi > lo {
                    self.rates[i] * (hi - lo)
                } else {
                    0.0
                }
            })
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChoiceParams {
    pub beta_0: f64,
    pub beta_price: f64,
    pub beta_time: f64,
}

impl Default for ChoiceParams {
    fn default() -> Self {
        Self {
            beta_0: 1.0,
            beta_price: -0.02,
            beta_time: -0.0002,
        }
    }
}

impl ChoiceParams {
    pub fn validate(&self) -> Result<()> {
        if [self.beta_0, self.beta_price, self.beta_time].iter().all(|b| b.is_finite()) {
            Ok(())
        } else {
            Err(Error::Argument("choice coefficients must be finite".into()))
        }
    }

    pub fn utility(&self, price: f64, time_to_departure: f64) -> f64 {
        self.beta_0 + self.beta_price * price + self.beta_time * time_to_departure
    }

    pub fn purchase_probability(&self, price: f64, time_to_departure: f64) -> f64 {
        1.0 / (1.0 + (-self.utility(price, time_to_departure)).exp())
    }
}

/// Arrival times in `[0, horizon]`, ascending.
pub fn simulate_arrivals(intensity: &IntensityFunction, horizon: f64, seed: u64) -> Vec<f64> {
    simulate_arrivals_with(intensity, horizon, &mut stream_rng(seed, 0))
}

pub fn simulate_arrivals_with<R: Rng + ?Sized>(intensity: &IntensityFunction, horizon: f64, rng: &mut R) -> Vec<f64> {
    let lambda_max = intensity.max_rate();
    if lambda_max <= 0.0 || horizon <= 0.0 {
        return Vec::new();
    }
    let gap = Exp::new(lambda_max).expect("positive rate");
    let mut out = Vec::new();
    let mut t = 0.0;
    loop {
        t += gap.sample(rng);
        if t > horizon {
            return out;
        }
        if rng.random::<f64>() * lambda_max < intensity.rate(t) {
            out.push(t);
        }
    }
}

pub fn sample_price<R: Rng + ?Sized>(flight: &FlightConfig, rng: &mut R) -> f64 {
    if flight.price_min == flight.price_max {
        flight.price_min
    } else {
        rng.random_range(flight.price_min..=flight.price_max)
    }
}

pub fn simulate_choice<R: Rng + ?Sized>(params: &ChoiceParams, price: f64, time_to_departure: f64, rng: &mut R) -> u8 {
    u8::from(rng.random::<f64>() < params.purchase_probability(price, time_to_departure))
}

/// Columns of generated tables. `record_id` identifies rows; `flight_id`
/// and `Price` are carried but not analysed.
pub fn sim_schema() -> Schema {
    Schema::new(vec![
        Attribute::new(RECORD_ID, AttributeKind::Categorical, AttributeRole::Identifier),
        Attribute::new(FLIGHT_ID, AttributeKind::Categorical, AttributeRole::Auxiliary),
        Attribute::numeric_feature(ADVANCED_PURCHASE),
        Attribute::numeric_feature(SOLD),
        Attribute::new(PRICE, AttributeKind::Numeric, AttributeRole::Auxiliary),
        Attribute::outcome(PURCHASE),
    ])
    .expect("static schema")
}

fn simulate_flight(
    flight: &FlightConfig,
    intensity: &IntensityFunction,
    choice: &ChoiceParams,
    seed: u64,
    prefix: &str,
) -> Vec<Vec<Value>> {
    let mut rng = stream_rng(seed, u64::from(flight.flight_id));
    let arrivals = simulate_arrivals_with(intensity, flight.horizon, &mut rng);
    let mut sold = 0u32;
    arrivals
        .into_iter()
        .enumerate()
        .map(|(k, t)| {
            let advanced = flight.horizon - t;
            let price = sample_price(flight, &mut rng);
            let bought = simulate_choice(choice, price, advanced, &mut rng);
            let y = if sold < flight.capacity { bought } else { 0 };
            let row = vec![
                Value::Category(format!("{prefix}f{:02}-{k:05}", flight.flight_id)),
                Value::Category(flight.flight_id.to_string()),
                Value::Number(advanced),
                Value::Number(f64::from(sold)),
                Value::Number(price),
                Value::Number(f64::from(y)),
            ];
            sold += u32::from(y);
            row
        })
        .collect()
}

pub fn generate_dataset(
    flights: &[FlightConfig],
    intensity: &IntensityFunction,
    choice: &ChoiceParams,
    seed: u64,
) -> Result<ObservationTable> {
    generate_prefixed(flights, intensity, choice, seed, "")
}

fn generate_prefixed(
    flights: &[FlightConfig],
    intensity: &IntensityFunction,
    choice: &ChoiceParams,
    seed: u64,
    prefix: &str,
) -> Result<ObservationTable> {
    choice.validate()?;
    let mut ids = BTreeSet::new();
    for f in flights {
        f.validate()?;
        if !ids.insert(f.flight_id) {
            return Err(Error::Argument(format!("duplicate flight_id {}", f.flight_id)));
        }
    }
    let mut ordered: Vec<&FlightConfig> = flights.iter().collect();
    ordered.sort_by_key(|f| f.flight_id);
    let rows = ordered
        .par_iter()
        .map(|f| simulate_flight(f, intensity, choice, seed, prefix))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    ObservationTable::new(sim_schema(), rows)
}

/// Training table extended with a random fraction of test rows, which become
/// the treatment arm. The full test table is kept for evaluation.
#[derive(Debug, Clone)]
pub struct LeakSplit {
    pub augmented: ObservationTable,
    /// `true` for rows of `augmented` that came from the test table.
    pub treatment: Vec<bool>,
    /// Sorted indices into `test` of the leaked rows.
    pub leaked: Vec<usize>,
    pub test: ObservationTable,
}

impl LeakSplit {
    pub fn control(&self) -> ObservationTable {
        let idx: Vec<usize> = (0..self.augmented.len()).filter(|&i| !self.treatment[i]).collect();
        self.augmented.select_rows(&idx)
    }

    pub fn leaked_rows(&self) -> ObservationTable {
        self.test.select_rows(&self.leaked)
    }
}

pub fn leak_split(train: &ObservationTable, test: &ObservationTable, fraction: f64, seed: u64) -> Result<LeakSplit> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Argument(format!("leak fraction must be in [0,1], got {fraction}")));
    }
    let k = (fraction * test.len() as f64).floor() as usize;
    let mut rng = stream_rng(seed, LEAK_STREAM);
    let mut leaked = index::sample(&mut rng, test.len(), k).into_vec();
    leaked.sort_unstable();
    let augmented = train.concat(&test.select_rows(&leaked))?;
    let treatment = (0..augmented.len()).map(|i| i >= train.len()).collect();
    Ok(LeakSplit {
        augmented,
        treatment,
        leaked,
        test: test.clone(),
    })
}

/// Train/test generation settings. `test_choice`, when present, replaces the
/// choice model for the test period (a change in purchase behaviour on top of
/// the change in arrivals).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub flights: Vec<FlightConfig>,
    pub train_intensity: IntensityFunction,
    pub test_intensity: IntensityFunction,
    pub choice: ChoiceParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_choice: Option<ChoiceParams>,
    pub leak_fraction: f64,
}

impl Scenario {
    /// Ten flights, capacity 50, horizon 6000, prices in `[20, 200]`. Test
    /// requests arrive earlier in the booking window (larger
    /// AdvancedPurchase) and early bookers become more willing to buy.
    pub fn booking_surge() -> Self {
        let flights = (0..10)
            .map(|i| FlightConfig {
                flight_id: i,
                capacity: 50,
                price_min: 20.0,
                price_max: 200.0,
                horizon: 6000.0,
            })
            .collect();
        let breakpoints = vec![0.0, 1000.0, 2000.0, 4000.0, 5000.0];
        let train_intensity =
            IntensityFunction::new(breakpoints.clone(), vec![0.004, 0.012, 0.03, 0.03, 0.01]).expect("static intensity");
        // five times the train rate in the first sixth of the horizon
        let test_intensity =
            IntensityFunction::new(breakpoints, vec![0.02, 0.012, 0.03, 0.03, 0.01]).expect("static intensity");
        Self {
            name: "booking-surge".into(),
            flights,
            train_intensity,
            test_intensity,
            choice: ChoiceParams::default(),
            test_choice: Some(ChoiceParams {
                beta_time: -0.00005,
                ..ChoiceParams::default()
            }),
            leak_fraction: 0.4,
        }
    }

    /// The same scenario with no change between periods.
    pub fn matched_null(&self) -> Self {
        Self {
            name: format!("{}-null", self.name),
            test_intensity: self.train_intensity.clone(),
            test_choice: None,
            ..self.clone()
        }
    }

    pub fn from_json_reader<R: Read>(reader: R) -> Result<Self> {
        let s: Self = serde_json::from_reader(reader)?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.flights.is_empty() {
            return Err(Error::Argument("scenario has no flights".into()));
        }
        for f in &self.flights {
            f.validate()?;
        }
        self.choice.validate()?;
        if let Some(c) = &self.test_choice {
            c.validate()?;
        }
        if !(0.0..=1.0).contains(&self.leak_fraction) {
            return Err(Error::Argument("leak_fraction must be in [0,1]".into()));
        }
        Ok(())
    }

    pub fn generate_train(&self, seed: u64) -> Result<ObservationTable> {
        generate_prefixed(
            &self.flights,
            &self.train_intensity,
            &self.choice,
            derive_seed(seed, TRAIN_STREAM),
            "train-",
        )
    }

    pub fn generate_test(&self, seed: u64) -> Result<ObservationTable> {
        generate_prefixed(
            &self.flights,
            &self.test_intensity,
            self.test_choice.as_ref().unwrap_or(&self.choice),
            derive_seed(seed, TEST_STREAM),
            "test-",
        )
    }
}

/// Two-sample Kolmogorov-Smirnov distance `sup |F_a - F_b|`.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}
