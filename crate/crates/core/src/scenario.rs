//! Scenario files, run summaries, and trace export.
//!
//! A [`Scenario`] bundles everything a run needs — mode catalog, capacity,
//! horizon, price parameters, and the user stream — and round-trips through
//! JSON (`docs/scenario.schema.json` documents the shape). [`RunSummary`]
//! condenses a [`RunTrace`] into the per-slot series used for reporting:
//! welfare, acceptance ratio, posted unit price, and availability. Traces
//! export as a line-delimited JSON event log, one iteration per line.

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::demand::{generate, DemandConfig};
use crate::error::{Error, Result};
use crate::market::{ModeCatalog, UserRequest};
use crate::online::Mechanism;
use crate::pricing::PriceParams;
use crate::rolling::{run_rha, HorizonConfig, RunTrace};

/// A fully specified instance: market, prices, and demand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub mechanism: Mechanism,
    pub catalog: ModeCatalog,
    pub capacity: f64,
    pub horizon: usize,
    pub price: PriceParams,
    /// Seed the demand was generated from, when known.
    pub seed: Option<u64>,
    pub users: Vec<UserRequest>,
}

impl Scenario {
    /// Builds a scenario by sampling demand from `config`.
    pub fn from_demand(config: &DemandConfig, price: PriceParams) -> Result<Self> {
        let users = generate(config)?;
        Ok(Self {
            mechanism: config.mechanism,
            catalog: ModeCatalog::standard(),
            capacity: config.capacity,
            horizon: config.horizon,
            price,
            seed: Some(config.seed),
            users,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Domain("scenario horizon must be at least 1".into()));
        }
        if !(self.capacity > 0.0) {
            return Err(Error::Domain("scenario capacity must be positive".into()));
        }
        if self.catalog.len() == 0 {
            return Err(Error::Domain("scenario catalog is empty".into()));
        }
        for u in &self.users {
            if u.bids.is_empty() {
                return Err(Error::Domain(format!("user {} has no bids", u.user_id)));
            }
        }
        let mut ids: Vec<usize> = self.users.iter().map(|u| u.user_id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.users.len() {
            return Err(Error::Domain("duplicate user ids in scenario".into()));
        }
        Ok(())
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let scenario: Self = serde_json::from_str(&text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    /// Runs the rolling-horizon driver on this scenario, returning the trace
    /// and the wall-clock runtime in seconds. The trace itself carries no
    /// timing, so identical runs stay bit-identical.
    pub fn run(&self, config: &HorizonConfig) -> Result<(RunTrace, f64)> {
        if config.mechanism != self.mechanism {
            return Err(Error::Domain(format!(
                "scenario mechanism {:?} does not match run config {:?}",
                self.mechanism, config.mechanism
            )));
        }
        let started = Instant::now();
        let trace = run_rha(
            &self.users,
            self.capacity,
            self.horizon,
            &self.price,
            &self.catalog,
            config,
        )?;
        Ok((trace, started.elapsed().as_secs_f64()))
    }
}

/// Reporting view of one run: scalar totals plus per-slot series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mechanism: Mechanism,
    pub config: HorizonConfig,
    pub price: PriceParams,
    pub capacity: f64,
    pub horizon: usize,
    pub seed: Option<u64>,
    pub total_welfare: f64,
    pub users_seen: usize,
    pub users_accepted: usize,
    pub acceptance_ratio: f64,
    /// Welfare booked at each service slot.
    pub welfare_series: Vec<f64>,
    /// Accepted-over-participating users per departure slot; slots without
    /// participants report 1.
    pub acceptance_series: Vec<f64>,
    /// Posted unit price per slot (`null` where no price was posted).
    pub price_series: Vec<Option<f64>>,
    /// Availability of each slot when its block opened.
    pub availability_series: Vec<f64>,
    pub runtime_seconds: f64,
}

impl RunSummary {
    pub fn from_trace(
        scenario: &Scenario,
        config: &HorizonConfig,
        trace: &RunTrace,
        runtime_seconds: f64,
    ) -> Self {
        let horizon = trace.horizon;
        let mut participating = vec![0usize; horizon];
        let mut accepted = vec![0usize; horizon];

        // A user participates at their departure slot once some iteration
        // considered them; they count as accepted there when a committed
        // allocation or slot-auction win exists.
        let mut considered_ids: Vec<usize> = trace
            .iterations
            .iter()
            .flat_map(|it| it.considered.iter().copied())
            .collect();
        considered_ids.sort_unstable();
        considered_ids.dedup();
        let mut accepted_ids: Vec<usize> = trace
            .iterations
            .iter()
            .flat_map(|it| {
                it.committed
                    .iter()
                    .map(|a| a.user_id)
                    .chain(
                        it.slot_outcomes
                            .iter()
                            .flat_map(|o| o.allocations.iter().map(|a| a.user_id)),
                    )
            })
            .collect();
        accepted_ids.sort_unstable();
        accepted_ids.dedup();
        for u in &scenario.users {
            if u.departure_slot >= horizon {
                continue;
            }
            if considered_ids.binary_search(&u.user_id).is_ok() {
                participating[u.departure_slot] += 1;
                if accepted_ids.binary_search(&u.user_id).is_ok() {
                    accepted[u.departure_slot] += 1;
                }
            }
        }
        let acceptance_series = participating
            .iter()
            .zip(&accepted)
            .map(|(&p, &a)| if p == 0 { 1.0 } else { a as f64 / p as f64 })
            .collect();

        Self {
            mechanism: trace.mechanism,
            config: *config,
            price: scenario.price,
            capacity: scenario.capacity,
            horizon,
            seed: scenario.seed,
            total_welfare: trace.total_welfare,
            users_seen: trace.users_seen,
            users_accepted: trace.users_accepted,
            acceptance_ratio: trace.acceptance_ratio,
            welfare_series: trace.slot_welfare.clone(),
            acceptance_series,
            price_series: trace.price_series.clone(),
            availability_series: trace.availability_series.clone(),
            runtime_seconds,
        }
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n")?;
        Ok(())
    }
}

/// Serializes a trace as a line-delimited JSON event log: one iteration per
/// line.
pub fn event_log_string(trace: &RunTrace) -> Result<String> {
    let mut out = String::new();
    for it in &trace.iterations {
        out.push_str(&serde_json::to_string(it)?);
        out.push('\n');
    }
    Ok(out)
}

/// Writes the event log to a file.
pub fn write_event_log(trace: &RunTrace, path: &Path) -> Result<()> {
    fs::write(path, event_log_string(trace)?)?;
    Ok(())
}
