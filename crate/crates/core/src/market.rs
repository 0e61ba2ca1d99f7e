//! Core market types: travel modes, user requests with bids, travel bundles,
//! allocations, and the per-slot capacity ledger.
//!
//! The mobility resource consumed by a trip is speed-weighted travel distance:
//! a trip of distance `D` finished in time `T` moves at average speed `D/T` and
//! consumes `Q = D * (D/T) = D^2/T` resource units. Faster service for the same
//! distance consumes more of the shared resource.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::EPS;

/// One travel mode the regulator can assemble trips from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TravelMode {
    /// Stable index of the mode; bundle entries align with it.
    pub id: usize,
    /// Display name.
    pub label: String,
    /// Average speed in km per minute.
    pub speed: f64,
    /// Inconvenience accrued per minute spent on this mode (dollars/minute).
    pub inconvenience_rate: f64,
}

/// Ordered collection of travel modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeCatalog {
    modes: Vec<TravelMode>,
}

impl ModeCatalog {
    /// Builds a catalog, validating that every mode has positive, finite speed;
    /// a non-negative, finite inconvenience rate; and that `id`s equal their
    /// positions.
    pub fn new(modes: Vec<TravelMode>) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::Domain("mode catalog must not be empty".into()));
        }
        for (i, m) in modes.iter().enumerate() {
            if m.id != i {
                return Err(Error::Domain(format!(
                    "mode id {} at position {i}; ids must equal positions",
                    m.id
                )));
            }
            if !(m.speed.is_finite() && m.speed > 0.0) {
                return Err(Error::Domain(format!(
                    "mode {}: speed must be positive and finite, got {}",
                    m.label, m.speed
                )));
            }
            if !(m.inconvenience_rate.is_finite() && m.inconvenience_rate >= 0.0) {
                return Err(Error::Domain(format!(
                    "mode {}: inconvenience rate must be non-negative, got {}",
                    m.label, m.inconvenience_rate
                )));
            }
        }
        Ok(Self { modes })
    }

    /// The five-mode catalog used throughout the bundled experiments: taxi,
    /// two ride-share occupancies, public transit, and bike share. Speeds in
    /// km/min, inconvenience in dollars/min.
    pub fn standard() -> Self {
        let data: [(&str, f64, f64); 5] = [
            ("taxi", 0.5, 0.0),
            ("rideshare-2", 0.3, 0.5),
            ("rideshare-3", 0.25, 1.0),
            ("public-transit", 0.18, 2.0),
            ("bike-share", 0.1, 6.0),
        ];
        let modes = data
            .iter()
            .enumerate()
            .map(|(id, (label, speed, rate))| TravelMode {
                id,
                label: (*label).into(),
                speed: *speed,
                inconvenience_rate: *rate,
            })
            .collect();
        Self::new(modes).expect("standard catalog is valid")
    }

    pub fn modes(&self) -> &[TravelMode] {
        &self.modes
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Mode with the highest speed (lowest id wins ties).
    pub fn fastest(&self) -> &TravelMode {
        self.modes
            .iter()
            .reduce(|best, m| if m.speed > best.speed { m } else { best })
            .expect("catalog is non-empty")
    }

    /// Mode with the lowest speed (lowest id wins ties).
    pub fn slowest(&self) -> &TravelMode {
        self.modes
            .iter()
            .reduce(|best, m| if m.speed < best.speed { m } else { best })
            .expect("catalog is non-empty")
    }
}

/// Speed-weighted travel distance `Q = D^2 / T` consumed by serving a trip of
/// `distance` km within `time` minutes.
pub fn mobility_resources(distance: f64, time: f64) -> Result<f64> {
    if !(distance.is_finite() && distance > 0.0) {
        return Err(Error::Domain(format!(
            "distance must be positive and finite, got {distance}"
        )));
    }
    if !(time.is_finite() && time > 0.0) {
        return Err(Error::Domain(format!(
            "travel time must be positive and finite, got {time}"
        )));
    }
    Ok(distance * distance / time)
}

/// One (travel time, price) bid inside a user request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidItem {
    /// Index of the bid within its request.
    pub bid_id: usize,
    /// Requested total travel time in minutes.
    pub requested_time: f64,
    /// Offered price in dollars for the whole trip (per traversal for
    /// packages).
    pub price: f64,
}

/// A user's service request: a trip distance, a requested departure slot, trip
/// tolerances, a package length, and a menu of bids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRequest {
    pub user_id: usize,
    /// Trip distance in km.
    pub distance: f64,
    /// Requested departure slot (0-indexed).
    pub departure_slot: usize,
    /// Slot at which the order was placed. Defaults to `departure_slot` when
    /// absent (orders placed at departure).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub placement_slot: Option<usize>,
    /// Extra minutes the user accepts beyond a bid's requested time.
    pub delay_budget: f64,
    /// Upper bound on accumulated inconvenience (dollars).
    pub inconvenience_tolerance: f64,
    /// Number of consecutive slots the service repeats over (1 = single trip).
    pub package_length: usize,
    pub bids: Vec<BidItem>,
}

impl UserRequest {
    /// Slot at which the order became visible to the operator.
    pub fn placement(&self) -> usize {
        self.placement_slot.unwrap_or(self.departure_slot)
    }

    /// Resource consumption of one bid of this request.
    pub fn resources(&self, bid: &BidItem) -> Result<f64> {
        mobility_resources(self.distance, bid.requested_time)
    }

    /// Largest per-bid resource consumption across the menu.
    pub fn max_resources(&self) -> Result<f64> {
        self.fold_resources(f64::max)
    }

    /// Smallest per-bid resource consumption across the menu.
    pub fn min_resources(&self) -> Result<f64> {
        self.fold_resources(f64::min)
    }

    fn fold_resources(&self, pick: fn(f64, f64) -> f64) -> Result<f64> {
        if self.bids.is_empty() {
            return Err(Error::Domain(format!(
                "user {} has no bids",
                self.user_id
            )));
        }
        let mut acc: Option<f64> = None;
        for b in &self.bids {
            let q = self.resources(b)?;
            acc = Some(match acc {
                None => q,
                Some(a) => pick(a, q),
            });
        }
        Ok(acc.unwrap())
    }

    /// Index and value of the bid with the highest unit price `b/Q`
    /// (ties broken toward the lower bid index).
    pub fn best_unit_bid(&self) -> Result<(usize, f64)> {
        if self.bids.is_empty() {
            return Err(Error::Domain(format!(
                "user {} has no bids",
                self.user_id
            )));
        }
        let mut best: Option<(usize, f64)> = None;
        for (j, b) in self.bids.iter().enumerate() {
            let unit = b.price / self.resources(b)?;
            match best {
                Some((_, u)) if u >= unit => {}
                _ => best = Some((j, unit)),
            }
        }
        Ok(best.unwrap())
    }
}

/// Minutes assigned to each travel mode for one trip; entries align with the
/// catalog's mode order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bundle {
    pub times: Vec<f64>,
}

impl Bundle {
    /// Total travel time in minutes.
    pub fn total_time(&self) -> f64 {
        self.times.iter().sum()
    }

    /// Distance covered by the bundle under the given catalog (km).
    pub fn distance_covered(&self, catalog: &ModeCatalog) -> f64 {
        self.times
            .iter()
            .zip(catalog.modes())
            .map(|(l, m)| l * m.speed)
            .sum()
    }

    /// Accumulated inconvenience of the bundle (dollars).
    pub fn inconvenience(&self, catalog: &ModeCatalog) -> f64 {
        self.times
            .iter()
            .zip(catalog.modes())
            .map(|(l, m)| l * m.inconvenience_rate)
            .sum()
    }
}

/// Number of consecutive slots a bundle occupies: the total travel time
/// rounded up to whole slots. Totals within `EPS` of an integer are snapped
/// to it first so that solver noise cannot inflate the count.
pub fn slots_needed(bundle: &Bundle) -> usize {
    let total = bundle.total_time();
    let snapped = if (total - total.round()).abs() <= EPS {
        total.round()
    } else {
        total
    };
    snapped.ceil().max(0.0) as usize
}

/// Outcome of serving one bid (fully or fractionally).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub user_id: usize,
    pub bid_id: usize,
    /// Service fraction in [0, 1]; 1 for all-or-nothing service.
    pub fraction: f64,
    /// Resource consumption `Q` of the winning bid.
    pub resources: f64,
    /// Amount charged for the allocation (dollars).
    pub payment: f64,
    /// Travel bundle realizing the bid, when one was solved for.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bundle: Option<Bundle>,
    /// Inclusive slot range the reservation spans.
    pub window: (usize, usize),
}

/// Per-slot availability of the shared resource with exact-undo reservations.
///
/// Every slot holds a stack of reserved amounts; availability is recomputed as
/// `capacity - (left-to-right sum of the stack)`. Releasing pops the most
/// recent bit-identical entry, so a reserve followed by its release restores
/// the ledger bit-exactly — floating-point subtraction would not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityLedger {
    capacity: f64,
    reservations: Vec<Vec<f64>>,
    available: Vec<f64>,
}

impl CapacityLedger {
    /// A ledger with `horizon` slots all starting at full `capacity`.
    pub fn new(capacity: f64, horizon: usize) -> Result<Self> {
        if !(capacity.is_finite() && capacity > 0.0) {
            return Err(Error::Domain(format!(
                "capacity must be positive and finite, got {capacity}"
            )));
        }
        if horizon == 0 {
            return Err(Error::Domain("ledger horizon must be at least 1".into()));
        }
        Ok(Self {
            capacity,
            reservations: vec![Vec::new(); horizon],
            available: vec![capacity; horizon],
        })
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    pub fn horizon(&self) -> usize {
        self.available.len()
    }

    /// Availability `A_t` of one slot.
    pub fn available(&self, slot: usize) -> f64 {
        self.available[slot]
    }

    /// Full availability series.
    pub fn availability(&self) -> &[f64] {
        &self.available
    }

    /// Resources already allocated at a slot: `C - A_t`.
    pub fn allocated(&self, slot: usize) -> f64 {
        self.capacity - self.available[slot]
    }

    fn recompute(&mut self, slot: usize) {
        let sum: f64 = self.reservations[slot].iter().sum();
        self.available[slot] = self.capacity - sum;
    }

    fn check_window(&self, window: (usize, usize)) -> Result<()> {
        let (lo, hi) = window;
        if lo > hi || hi >= self.horizon() {
            return Err(Error::Domain(format!(
                "window [{lo}, {hi}] invalid for horizon {}",
                self.horizon()
            )));
        }
        Ok(())
    }

    /// Reserves `amount` at every slot of the inclusive `window`, atomically:
    /// if any slot lacks availability, nothing is mutated and the first
    /// offending slot is reported. A zero amount is a no-op.
    pub fn reserve(&mut self, window: (usize, usize), amount: f64) -> Result<()> {
        self.check_window(window)?;
        if !(amount.is_finite() && amount >= 0.0) {
            return Err(Error::Domain(format!(
                "reservation amount must be non-negative and finite, got {amount}"
            )));
        }
        if amount == 0.0 {
            return Ok(());
        }
        let (lo, hi) = window;
        for t in lo..=hi {
            if amount > self.available[t] {
                return Err(Error::Reservation {
                    slot: t,
                    needed: amount,
                    available: self.available[t],
                });
            }
        }
        for t in lo..=hi {
            self.reservations[t].push(amount);
            self.recompute(t);
            if self.available[t] < 0.0 {
                // One-ulp rounding pathology: undo everything pushed so far.
                for u in lo..=t {
                    self.reservations[u].pop();
                    self.recompute(u);
                }
                return Err(Error::Reservation {
                    slot: t,
                    needed: amount,
                    available: self.available[t],
                });
            }
        }
        Ok(())
    }

    /// Releases a previously reserved `amount` over `window`, popping the most
    /// recent bit-identical entry per slot. Atomic: if any slot has no such
    /// entry, nothing is mutated.
    pub fn release(&mut self, window: (usize, usize), amount: f64) -> Result<()> {
        self.check_window(window)?;
        if !(amount.is_finite() && amount >= 0.0) {
            return Err(Error::Domain(format!(
                "release amount must be non-negative and finite, got {amount}"
            )));
        }
        if amount == 0.0 {
            return Ok(());
        }
        let (lo, hi) = window;
        let bits = amount.to_bits();
        let mut picks = Vec::with_capacity(hi - lo + 1);
        for t in lo..=hi {
            match self.reservations[t]
                .iter()
                .rposition(|r| r.to_bits() == bits)
            {
                Some(idx) => picks.push(idx),
                None => return Err(Error::ReleaseMismatch { slot: t, amount }),
            }
        }
        for (t, idx) in (lo..=hi).zip(picks) {
            self.reservations[t].remove(idx);
            self.recompute(t);
        }
        Ok(())
    }
}
