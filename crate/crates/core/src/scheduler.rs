//! Per-VM CPU-share allocation.
//!
//! Each VM runs one scheduler over the elements consolidated onto it, and
//! works backwards from buffers instead of taking manual weights: over the
//! period that just ended an element holding share r processed at
//! v = φ⁻¹(r) (or a measured rate, when the caller recorded one), so its
//! arrivals must have been v_a = (B − B′)/T + v. Next
//! period's shares are chosen so that every buffer moves by the same
//! multiple C of what its element can serve in one period; with
//! v_i* = v_ai/(C+1) that matching condition reads Σ_i φ_i(v_i*) = 1 and
//! the shares are r_i* = φ_i(v_i*). For affine profiles C has a closed
//! form. Shares that land outside [floor, 1] are pinned and the remainder
//! re-solved over the rest.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::ElementId;
use crate::profile::{ElementProfile, ProfileError};

#[derive(Debug, Error, PartialEq)]
pub enum SchedulerError {
    #[error("element {0} is not managed by this scheduler")]
    UnknownElement(ElementId),
    #[error("scheduler has no elements")]
    Empty,
    #[error("profile intercepts sum to {intercepts} but only {budget} core share is available")]
    InfeasibleShares { budget: f64, intercepts: f64 },
    #[error(transparent)]
    Profile(#[from] ProfileError),
}

/// Book-keeping for one element on the scheduled VM. Buffers are in MB,
/// rates in MB/s, the share is a fraction of the core.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SchedEntry {
    pub element: ElementId,
    pub profile: ElementProfile,
    pub share: f64,
    /// Closing buffer of the last completed period (B).
    pub buffer: f64,
    /// Closing buffer of the period before that (B′).
    pub buffer_prev: f64,
    pub capacity: f64,
    /// Bytes shed to overflow during the last period.
    pub dropped: f64,
    /// Measured service rate over the last period, when the caller has one.
    /// The share only bounds what the element *could* process; one that ran
    /// out of work served less than φ⁻¹(r).
    #[serde(default)]
    pub served_rate: Option<f64>,
}

/// Result of one share solve: shares in entry order, the matching constant
/// C (common relative buffer change), and whether any share had to be
/// pinned at a bound.
#[derive(Clone, Debug, PartialEq)]
pub struct ShareAllocation {
    pub shares: Vec<(ElementId, f64)>,
    pub c: f64,
    pub clamped: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SchedulerState {
    /// Scheduling period T in seconds.
    period: f64,
    /// Smallest share any managed element may hold.
    floor: f64,
    /// Weight on the previous share when applying a new allocation
    /// (0 = jump straight to the solve, the default).
    smoothing: f64,
    entries: Vec<SchedEntry>,
    last_c: f64,
}

impl SchedulerState {
    pub fn new(period: f64, floor: f64, smoothing: f64) -> Self {
        assert!(period > 0.0 && period.is_finite(), "period must be positive");
        assert!((0.0..1.0).contains(&floor), "share floor must be in [0, 1)");
        assert!((0.0..1.0).contains(&smoothing), "smoothing must be in [0, 1)");
        SchedulerState { period, floor, smoothing, entries: Vec::new(), last_c: 0.0 }
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn entries(&self) -> &[SchedEntry] {
        &self.entries
    }

    pub fn num_elements(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// C from the most recent [`SchedulerState::rebalance`].
    pub fn last_c(&self) -> f64 {
        self.last_c
    }

    fn idx(&self, element: ElementId) -> Result<usize, SchedulerError> {
        self.entries
            .iter()
            .position(|e| e.element == element)
            .ok_or(SchedulerError::UnknownElement(element))
    }

    /// Starts managing `element` with the given initial share. Callers are
    /// responsible for keeping the VM's shares summing to 1 across
    /// add/remove churn (the simulator re-splits after every migration).
    pub fn add_element(
        &mut self,
        element: ElementId,
        profile: ElementProfile,
        capacity: f64,
        share: f64,
    ) {
        assert!(capacity > 0.0, "buffer capacity must be positive");
        debug_assert!(self.idx(element).is_err(), "element added twice");
        self.entries.push(SchedEntry {
            element,
            profile,
            share,
            buffer: 0.0,
            buffer_prev: 0.0,
            capacity,
            dropped: 0.0,
            served_rate: None,
        });
    }

    /// Stops managing `element`; its share is handed to the remaining
    /// elements proportionally so the partition stays whole.
    pub fn remove_element(&mut self, element: ElementId) -> Result<SchedEntry, SchedulerError> {
        let i = self.idx(element)?;
        let gone = self.entries.remove(i);
        let rest: f64 = self.entries.iter().map(|e| e.share).sum();
        if rest > 0.0 {
            for e in &mut self.entries {
                e.share /= rest;
            }
        }
        Ok(gone)
    }

    pub fn set_share(&mut self, element: ElementId, share: f64) -> Result<(), SchedulerError> {
        let i = self.idx(element)?;
        self.entries[i].share = share;
        Ok(())
    }

    pub fn share_of(&self, element: ElementId) -> Result<f64, SchedulerError> {
        Ok(self.entries[self.idx(element)?].share)
    }

    /// Rolls the buffer book-keeping forward one period: the previous
    /// closing buffer becomes B′ and `closing_buffer` becomes B.
    pub fn record_period(
        &mut self,
        element: ElementId,
        closing_buffer: f64,
        dropped: f64,
    ) -> Result<(), SchedulerError> {
        self.record(element, closing_buffer, dropped, None)
    }

    /// [`record_period`] plus the element's measured service rate (MB/s).
    /// With it the arrival reconstruction is exact even for an element that
    /// drained its queue mid-period and idled; from the share alone such a
    /// period reads as fewer arrivals than there were, which makes the next
    /// allocation undershoot and the one after overshoot, a limit cycle.
    pub fn record_period_served(
        &mut self,
        element: ElementId,
        closing_buffer: f64,
        dropped: f64,
        served_rate: f64,
    ) -> Result<(), SchedulerError> {
        self.record(element, closing_buffer, dropped, Some(served_rate))
    }

    fn record(
        &mut self,
        element: ElementId,
        closing_buffer: f64,
        dropped: f64,
        served_rate: Option<f64>,
    ) -> Result<(), SchedulerError> {
        let i = self.idx(element)?;
        let e = &mut self.entries[i];
        e.buffer_prev = e.buffer;
        e.buffer = closing_buffer.clamp(0.0, e.capacity);
        e.dropped = dropped;
        e.served_rate = served_rate;
        Ok(())
    }

    /// Arrival rate over the last period, reconstructed from the buffer
    /// movement and the service the element's share bought it.
    pub fn infer_arrival_rate(&self, element: ElementId) -> Result<f64, SchedulerError> {
        let e = &self.entries[self.idx(element)?];
        let v = e.profile.throughput_for_cpu(e.share)?;
        // Buffers cannot drain faster than they are served, so a negative
        // reconstruction is float noise; keep the rate physical.
        Ok(((e.buffer - e.buffer_prev) / self.period + v).max(0.0))
    }

    /// Solves for next period's shares. Steady state short-circuits: when
    /// no buffer moved and the current shares already partition the core,
    /// the solve would reproduce them up to rounding, so they are returned
    /// unchanged (the C = 0 fixed point).
    pub fn compute_next_shares(&self) -> Result<ShareAllocation, SchedulerError> {
        if self.entries.is_empty() {
            return Err(SchedulerError::Empty);
        }
        let share_sum: f64 = self.entries.iter().map(|e| e.share).sum();
        let steady = self.entries.iter().all(|e| e.buffer - e.buffer_prev == 0.0);
        if steady && (share_sum - 1.0).abs() <= 1e-9 {
            let shares = self.entries.iter().map(|e| (e.element, e.share)).collect();
            return Ok(ShareAllocation { shares, c: 0.0, clamped: false });
        }
        let mut arrivals = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            // Same reconstruction as `infer_arrival_rate`, but preferring a
            // measured rate when one was recorded, and falling back to the
            // saturating service so a share parked at or under the intercept
            // reads as "serving nothing" instead of an error.
            let v = e.served_rate.unwrap_or_else(|| e.profile.service_rate(e.share));
            arrivals.push(((e.buffer - e.buffer_prev) / self.period + v).max(0.0));
        }
        self.solve(&arrivals)
    }

    /// Computes, smooths and applies the next allocation; returns C.
    pub fn rebalance(&mut self) -> Result<f64, SchedulerError> {
        let alloc = self.compute_next_shares()?;
        for (e, &(_, target)) in self.entries.iter_mut().zip(&alloc.shares) {
            e.share = self.smoothing * e.share + (1.0 - self.smoothing) * target;
        }
        self.last_c = alloc.c;
        Ok(alloc.c)
    }

    /// Elements that shed bytes last period, worst overflow first.
    pub fn detect_overload(&self) -> Vec<ElementId> {
        let mut hot: Vec<&SchedEntry> = self.entries.iter().filter(|e| e.dropped > 0.0).collect();
        hot.sort_by(|a, b| b.dropped.total_cmp(&a.dropped).then(a.element.cmp(&b.element)));
        hot.into_iter().map(|e| e.element).collect()
    }

    /// Share solve for the given per-entry arrival rates. Pinned shares are
    /// taken out of the budget and the matching condition is re-solved over
    /// whoever is left, so the returned C describes the unpinned elements.
    fn solve(&self, arrivals: &[f64]) -> Result<ShareAllocation, SchedulerError> {
        let m = self.entries.len();
        let mut fixed: Vec<Option<f64>> = vec![None; m];
        let mut shares = vec![0.0; m];
        let mut c = 0.0;
        let mut clamped = false;
        loop {
            let active: Vec<usize> = (0..m).filter(|&i| fixed[i].is_none()).collect();
            let budget = 1.0 - fixed.iter().flatten().sum::<f64>();
            if active.is_empty() {
                // Everyone ended up pinned; only reachable when the pins
                // themselves already exhaust the core.
                break;
            }
            let sum_a: f64 = active.iter().map(|&i| self.entries[i].profile.intercept).sum();
            let sum_bv: f64 =
                active.iter().map(|&i| self.entries[i].profile.slope * arrivals[i]).sum();
            if sum_bv <= 0.0 {
                // Nothing is arriving for these elements; split the leftover
                // evenly rather than divide by zero.
                let each = budget / active.len() as f64;
                for &i in &active {
                    fixed[i] = Some(each);
                }
                break;
            }
            let denom = budget - sum_a;
            if denom <= 0.0 {
                return Err(SchedulerError::InfeasibleShares { budget, intercepts: sum_a });
            }
            // Σ_active (a_i + b_i·v_ai/(C+1)) = budget  ⇒  C+1 = Σb_iv_ai / (budget − Σa_i)
            let c_plus_1 = sum_bv / denom;
            if active.len() == 1 {
                // A lone element inherits the whole remaining budget; write
                // it directly so no rounding sneaks in.
                shares[active[0]] = budget.min(1.0);
                c = c_plus_1 - 1.0;
                break;
            }
            for &i in &active {
                let p = &self.entries[i].profile;
                shares[i] = p.intercept + p.slope * arrivals[i] / c_plus_1;
            }
            let lows: Vec<usize> =
                active.iter().copied().filter(|&i| shares[i] < self.floor).collect();
            if !lows.is_empty() {
                for i in lows {
                    fixed[i] = Some(self.floor);
                }
                clamped = true;
                continue;
            }
            // Leave floor room for every other active element when capping.
            let cap = (budget - self.floor * (active.len() - 1) as f64).min(1.0);
            let highs: Vec<usize> = active.iter().copied().filter(|&i| shares[i] > cap).collect();
            if !highs.is_empty() {
                for i in highs {
                    fixed[i] = Some(cap);
                }
                clamped = true;
                continue;
            }
            c = c_plus_1 - 1.0;
            break;
        }
        for (i, f) in fixed.iter().enumerate() {
            if let Some(v) = f {
                shares[i] = *v;
            }
        }
        let shares = self.entries.iter().zip(shares).map(|(e, r)| (e.element, r)).collect();
        Ok(ShareAllocation { shares, c, clamped })
    }
}
