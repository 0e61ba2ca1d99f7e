//! Seeded stochastic demand generation.
//!
//! Users arrive per slot following band-wise truncated normal counts; each
//! user draws a trip distance, a menu of (requested time, bid price) pairs,
//! and tolerance parameters, in a fixed order so that a seed pins the whole
//! stream. Trip mechanics: the requested time of every bid lies between the
//! fastest and the slowest single-mode travel time for the drawn distance,
//! bid prices lie inside the unit-price band scaled by the bid's resource
//! demand, and the delay budget and inconvenience tolerance shrink as the
//! first bid's price grows (wealthier bids are less patient).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Triangular};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{BidItem, ModeCatalog, UserRequest};
use crate::online::Mechanism;

/// Arrival band: slots `[start, end)` draw per-slot user counts from
/// `Normal(mean, stddev²)`, truncated at zero and rounded half-up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub start: usize,
    pub end: usize,
    pub mean: f64,
    pub stddev: f64,
}

/// How package lengths are assigned (packages only).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PackageLengthMode {
    /// Uniform over `[lo, hi]` inclusive.
    Uniform { lo: usize, hi: usize },
    /// Four-week cycle by placement slot (one slot = one day): week 1 gets
    /// length 1, week 2 gets 7, then 5, then 6, repeating.
    WeekSchedule,
}

/// Lengths of the four-week schedule, by week index.
pub const WEEK_SCHEDULE_LENGTHS: [usize; 4] = [1, 7, 5, 6];

/// Days per schedule week; the last two days of each week are the weekend.
pub const DAYS_PER_WEEK: usize = 7;

/// How requested departures relate to order placement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BookingMode {
    /// Depart at the placement slot.
    Immediate,
    /// Depart at a symmetric-triangular offset in `[0, width]` after
    /// placement (booking flexibility), capped at the last slot.
    Flexible { width: usize },
}

/// Full generation configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandConfig {
    pub mechanism: Mechanism,
    pub horizon: usize,
    pub capacity: f64,
    /// Arrival bands; slots not covered by any band get no arrivals.
    pub bands: Vec<Band>,
    /// Trip (or package) distance range in km, inclusive.
    pub distance_range: (f64, f64),
    /// Menu size range, inclusive.
    pub bids_per_user: (usize, usize),
    /// Unit-price band the bid prices are drawn from.
    pub b_min: f64,
    pub b_max: f64,
    pub package_length: PackageLengthMode,
    pub booking: BookingMode,
    pub seed: u64,
}

impl DemandConfig {
    /// The five-band weekday arrival shape (off-peak/peak/off-peak/peak/
    /// off-peak in 1:1:4:1:3 proportion), scaled to an arbitrary horizon.
    /// Peak bands draw `Normal(8, 2²)` users per slot, off-peak bands
    /// `Normal(2, 1²)`.
    pub fn payg_bands(horizon: usize) -> Vec<Band> {
        let tenth = horizon / 10;
        let cuts = [0, tenth, 2 * tenth, 6 * tenth, 7 * tenth, horizon];
        let peak = [false, true, false, true, false];
        cuts.windows(2)
            .zip(peak)
            .filter(|(w, _)| w[0] < w[1])
            .map(|(w, is_peak)| Band {
                start: w[0],
                end: w[1],
                mean: if is_peak { 8.0 } else { 2.0 },
                stddev: if is_peak { 2.0 } else { 1.0 },
            })
            .collect()
    }

    /// Per-trip demand with the five-band arrival shape: distances in
    /// [1, 18] km, menus of 1-3 bids, unit-price band [2, 12], immediate
    /// departures, capacity 500.
    pub fn payg_default(horizon: usize, seed: u64) -> Self {
        Self {
            mechanism: Mechanism::Payg,
            horizon,
            capacity: 500.0,
            bands: Self::payg_bands(horizon),
            distance_range: (1.0, 18.0),
            bids_per_user: (1, 3),
            b_min: 2.0,
            b_max: 12.0,
            package_length: PackageLengthMode::Uniform { lo: 1, hi: 1 },
            booking: BookingMode::Immediate,
            seed,
        }
    }

    /// Package demand: one slot per day, `Normal(50, 10²)` arrivals,
    /// distances in [1, 300] km, package lengths uniform in [5, 14],
    /// capacity 10000.
    pub fn paap_default(horizon: usize, seed: u64) -> Self {
        Self {
            mechanism: Mechanism::Paap,
            horizon,
            capacity: 10_000.0,
            bands: vec![Band {
                start: 0,
                end: horizon,
                mean: 50.0,
                stddev: 10.0,
            }],
            distance_range: (1.0, 300.0),
            bids_per_user: (1, 3),
            b_min: 2.0,
            b_max: 12.0,
            package_length: PackageLengthMode::Uniform { lo: 5, hi: 14 },
            booking: BookingMode::Immediate,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Domain("horizon must be at least 1".into()));
        }
        if !(self.capacity > 0.0) {
            return Err(Error::Domain("capacity must be positive".into()));
        }
        for b in &self.bands {
            if b.start >= b.end || b.end > self.horizon {
                return Err(Error::Domain(format!(
                    "band [{}, {}) is empty or leaves the horizon {}",
                    b.start, b.end, self.horizon
                )));
            }
            if !(b.stddev >= 0.0) || !b.mean.is_finite() {
                return Err(Error::Domain(
                    "band mean must be finite and stddev nonnegative".into(),
                ));
            }
        }
        let (d_lo, d_hi) = self.distance_range;
        if !(0.0 < d_lo && d_lo <= d_hi) {
            return Err(Error::Domain(format!(
                "distance range [{d_lo}, {d_hi}] must be positive and ordered"
            )));
        }
        let (j_lo, j_hi) = self.bids_per_user;
        if j_lo == 0 || j_lo > j_hi {
            return Err(Error::Domain(format!(
                "menu size range [{j_lo}, {j_hi}] must start at 1 or more and be ordered"
            )));
        }
        if !(0.0 <= self.b_min && self.b_min <= self.b_max && self.b_max > 0.0) {
            return Err(Error::Domain(format!(
                "price band [{}, {}] must be nonnegative, ordered, and not all zero",
                self.b_min, self.b_max
            )));
        }
        if let PackageLengthMode::Uniform { lo, hi } = self.package_length {
            if lo == 0 || lo > hi {
                return Err(Error::Domain(format!(
                    "package length range [{lo}, {hi}] must start at 1 or more and be ordered"
                )));
            }
        }
        Ok(())
    }

    fn band_at(&self, slot: usize) -> Option<&Band> {
        self.bands.iter().find(|b| b.start <= slot && slot < b.end)
    }
}

/// Normal draw truncated at zero, rounded half-up to a count.
fn arrival_count(rng: &mut ChaCha8Rng, mean: f64, stddev: f64) -> Result<usize> {
    let draw = if stddev == 0.0 {
        mean
    } else {
        Normal::new(mean, stddev)
            .map_err(|e| Error::Domain(format!("bad arrival distribution: {e}")))?
            .sample(rng)
    };
    Ok((draw.max(0.0) + 0.5).floor() as usize)
}

fn draw_departure(
    rng: &mut ChaCha8Rng,
    placement: usize,
    booking: BookingMode,
    horizon: usize,
) -> Result<usize> {
    match booking {
        BookingMode::Immediate => Ok(placement),
        BookingMode::Flexible { width } => {
            if width == 0 {
                return Ok(placement);
            }
            let tri = Triangular::new(0.0, width as f64, width as f64 / 2.0)
                .map_err(|e| Error::Domain(format!("bad booking distribution: {e}")))?;
            let offset = tri.sample(rng).round().max(0.0) as usize;
            Ok((placement + offset.min(width)).min(horizon - 1))
        }
    }
}

/// Draws one user. Order of draws is fixed: distance, menu size, then per
/// bid (time, price), then delay budget and inconvenience tolerance from
/// the *first* bid's price, then the departure offset.
fn draw_user(
    rng: &mut ChaCha8Rng,
    config: &DemandConfig,
    catalog: &ModeCatalog,
    user_id: usize,
    placement: usize,
    package_length: usize,
) -> Result<UserRequest> {
    let (d_lo, d_hi) = config.distance_range;
    let distance = if d_lo == d_hi {
        d_lo
    } else {
        rng.gen_range(d_lo..d_hi)
    };
    let (j_lo, j_hi) = config.bids_per_user;
    let menu = rng.gen_range(j_lo..=j_hi);
    let fastest = distance / catalog.fastest().speed;
    let slowest = distance / catalog.slowest().speed;
    let mut bids = Vec::with_capacity(menu);
    for bid_id in 0..menu {
        let requested_time = rng.gen_range(fastest..slowest);
        let resources = distance * distance / requested_time;
        let price = rng.gen_range(config.b_min * resources..config.b_max * resources);
        bids.push(BidItem {
            bid_id,
            requested_time,
            price,
        });
    }
    let first_price = bids[0].price;
    let delay_budget = rng.gen_range(0.0..100.0 / first_price);
    let inconvenience_tolerance = rng.gen_range(0.0..100.0 * distance / first_price);
    let departure_slot = draw_departure(rng, placement, config.booking, config.horizon)?;
    Ok(UserRequest {
        user_id,
        distance,
        departure_slot,
        placement_slot: Some(placement),
        delay_budget,
        inconvenience_tolerance,
        package_length,
        bids,
    })
}

fn generate_stream(config: &DemandConfig, seed: u64) -> Result<Vec<UserRequest>> {
    config.validate()?;
    let catalog = ModeCatalog::standard();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut users = Vec::new();
    let mut user_id = 0usize;
    for slot in 0..config.horizon {
        let Some(band) = config.band_at(slot) else {
            continue;
        };
        let mut mean = band.mean;
        let paap_weekend = config.mechanism == Mechanism::Paap
            && config.package_length == PackageLengthMode::WeekSchedule
            && slot % DAYS_PER_WEEK >= DAYS_PER_WEEK - 2;
        if paap_weekend {
            // Weekend demand is a random fraction of the weekday level.
            mean *= rng.gen_range(0.4..0.8);
        }
        let count = arrival_count(&mut rng, mean, band.stddev)?;
        for _ in 0..count {
            let length = match (config.mechanism, config.package_length) {
                (Mechanism::Payg, _) => 1,
                (Mechanism::Paap, PackageLengthMode::Uniform { lo, hi }) => {
                    rng.gen_range(lo..=hi)
                }
                (Mechanism::Paap, PackageLengthMode::WeekSchedule) => {
                    WEEK_SCHEDULE_LENGTHS
                        [(slot / DAYS_PER_WEEK) % WEEK_SCHEDULE_LENGTHS.len()]
                }
            };
            users.push(draw_user(
                &mut rng, config, &catalog, user_id, slot, length,
            )?);
            user_id += 1;
        }
    }
    Ok(users)
}

/// Generates a per-trip demand stream.
pub fn gen_payg_demand(config: &DemandConfig, seed: u64) -> Result<Vec<UserRequest>> {
    if config.mechanism != Mechanism::Payg {
        return Err(Error::Domain(
            "gen_payg_demand requires a payg config".into(),
        ));
    }
    generate_stream(config, seed)
}

/// Generates a package demand stream.
pub fn gen_paap_demand(config: &DemandConfig, seed: u64) -> Result<Vec<UserRequest>> {
    if config.mechanism != Mechanism::Paap {
        return Err(Error::Domain(
            "gen_paap_demand requires a paap config".into(),
        ));
    }
    generate_stream(config, seed)
}

/// Generates a stream for either mechanism using the config's own seed.
pub fn generate(config: &DemandConfig) -> Result<Vec<UserRequest>> {
    generate_stream(config, config.seed)
}
