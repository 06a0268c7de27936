//! Macrocell bandwidth ledger and the priority admission policy.
//!
//! Three pools drive admission: occupied bandwidth, a timed reserved pool
//! fed by outbound mobility (each entry expires after the reservation
//! threshold T), and the releasable pool — the margin that can be clawed
//! back from QoS-adaptive calls, at most `xi * beta_r` per call.
//!
//! New calls may use only unreserved free bandwidth. Handover calls may use
//! free bandwidth, the reserved pool, and degradation, in that order — this
//! is the handover priority. The baseline (non-priority) scheme is the same
//! ledger with T = 0 and every `xi` treated as zero, under which handover
//! and new calls face the same rule.

use std::collections::BTreeMap;
use std::collections::VecDeque;

use thiserror::Error;

use crate::time::{SimDuration, SimTime};

/// Comparison slack for bandwidth arithmetic.
pub const BW_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum CacError {
    #[error("unknown traffic class {0}")]
    UnknownClass(usize),
    #[error("unknown allocation {0}")]
    UnknownAllocation(u64),
    #[error("invalid traffic class {name}: {reason}")]
    InvalidClass { name: String, reason: String },
}

/// Index into the scenario's class table.
pub type ClassId = usize;

/// One traffic class: requested bandwidth and QoS adaptivity.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficClass {
    pub name: String,
    pub qos_adaptive: bool,
    /// Requested bandwidth beta_r, Mbps.
    pub bandwidth_mbps: f64,
    /// Maximum degradable fraction xi in [0, 1]; zero for non-adaptive.
    pub degradable_fraction: f64,
}

impl TrafficClass {
    pub fn validate(&self) -> Result<(), CacError> {
        let fail = |reason: &str| {
            Err(CacError::InvalidClass {
                name: self.name.clone(),
                reason: reason.to_string(),
            })
        };
        if self.bandwidth_mbps <= 0.0 || !self.bandwidth_mbps.is_finite() {
            return fail("requested bandwidth must be positive");
        }
        if !(0.0..=1.0).contains(&self.degradable_fraction) {
            return fail("degradable fraction must lie in [0, 1]");
        }
        if !self.qos_adaptive && self.degradable_fraction != 0.0 {
            return fail("non-adaptive classes cannot declare a degradable fraction");
        }
        Ok(())
    }

    /// Minimum grant this class tolerates: `(1 - xi) * beta_r`.
    pub fn floor_mbps(&self) -> f64 {
        (1.0 - self.degradable_fraction) * self.bandwidth_mbps
    }
}

/// The registered classes of one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassTable {
    classes: Vec<TrafficClass>,
}

impl ClassTable {
    pub fn new(classes: Vec<TrafficClass>) -> Result<Self, CacError> {
        for c in &classes {
            c.validate()?;
        }
        Ok(ClassTable { classes })
    }

    /// Same classes with every degradable fraction forced to zero.
    pub fn without_degradation(&self) -> ClassTable {
        ClassTable {
            classes: self
                .classes
                .iter()
                .map(|c| TrafficClass {
                    degradable_fraction: 0.0,
                    ..c.clone()
                })
                .collect(),
        }
    }

    pub fn get(&self, id: ClassId) -> Result<&TrafficClass, CacError> {
        self.classes.get(id).ok_or(CacError::UnknownClass(id))
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ClassId, &TrafficClass)> {
        self.classes.iter().enumerate()
    }
}

/// Why an allocation is being released; mobility causes feed the reserved pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReleaseCause {
    NormalEnd,
    OutboundM2fHandover,
    FemtocellLeftCell,
    OutboundM2mHandover,
}

impl ReleaseCause {
    pub fn reserves(self) -> bool {
        !matches!(self, ReleaseCause::NormalEnd)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Allocation {
    class: ClassId,
    granted: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct Reservation {
    id: u64,
    amount: f64,
    expires_at: SimTime,
}

/// Handle to a pending reservation entry; lets the caller schedule its expiry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReservationHandle {
    pub id: u64,
    pub expires_at: SimTime,
}

/// Identifier of one bandwidth allocation inside a ledger.
pub type AllocId = u64;

#[derive(Debug, Clone, PartialEq)]
pub enum NewCallOutcome {
    Admitted { alloc: AllocId, granted: f64 },
    Blocked,
}

#[derive(Debug, Clone, PartialEq)]
pub enum HandoverOutcome {
    Admitted {
        alloc: AllocId,
        granted: f64,
        /// Bandwidth taken from adaptive calls to cover the shortfall.
        degraded_total: f64,
        /// Bandwidth consumed from the reserved pool, oldest entries first.
        reserved_used: f64,
    },
    Dropped,
}

/// Outcome of a release: the freed amount and, for mobility causes with
/// T > 0, the reservation entry created from it.
#[derive(Debug, Clone, PartialEq)]
pub struct ReleaseOutcome {
    pub freed: f64,
    pub reservation: Option<ReservationHandle>,
}

/// Read-only state summary, exportable for metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct LedgerSnapshot {
    pub at: SimTime,
    pub occupied: f64,
    pub vacant: f64,
    pub releasable: f64,
    pub class_counts: Vec<usize>,
}

/// Per-macrocell bandwidth accounting.
#[derive(Debug, Clone)]
pub struct CellLedger {
    capacity: f64,
    allocations: BTreeMap<AllocId, Allocation>,
    /// Creation order; consumption is oldest-first.
    reservations: VecDeque<Reservation>,
    class_counts: Vec<usize>,
    next_alloc: AllocId,
    next_reservation: u64,
}

impl CellLedger {
    pub fn new(capacity_mbps: f64, class_count: usize) -> Self {
        CellLedger {
            capacity: capacity_mbps,
            allocations: BTreeMap::new(),
            reservations: VecDeque::new(),
            class_counts: vec![0; class_count],
            next_alloc: 0,
            next_reservation: 0,
        }
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    /// Total granted bandwidth.
    pub fn occupied(&self) -> f64 {
        // + 0.0 normalizes the -0.0 an empty sum produces.
        self.allocations.values().map(|a| a.granted).sum::<f64>() + 0.0
    }

    /// Reserved pool: unexpired reservation entries at `now`.
    pub fn vacant(&self, now: SimTime) -> f64 {
        self.reservations
            .iter()
            .filter(|r| r.expires_at > now)
            .map(|r| r.amount)
            .sum::<f64>()
            + 0.0
    }

    /// Remaining degradable margin over the admitted adaptive calls.
    pub fn releasable(&self, table: &ClassTable) -> f64 {
        self.allocations
            .values()
            .filter_map(|a| {
                let class = table.get(a.class).ok()?;
                class
                    .qos_adaptive
                    .then(|| (a.granted - class.floor_mbps()).max(0.0))
            })
            .sum::<f64>()
            + 0.0
    }

    /// The aggregate `sum_i N_i xi_i beta_r_i` computed from the class
    /// counters alone; coincides with `releasable` whenever nothing is
    /// currently degraded.
    pub fn releasable_from_counters(&self, table: &ClassTable) -> f64 {
        table
            .iter()
            .map(|(id, c)| self.class_counts[id] as f64 * c.degradable_fraction * c.bandwidth_mbps)
            .sum::<f64>()
            + 0.0
    }

    pub fn class_count(&self, class: ClassId) -> usize {
        self.class_counts.get(class).copied().unwrap_or(0)
    }

    pub fn allocation_count(&self) -> usize {
        self.allocations.len()
    }

    pub fn allocation_granted(&self, alloc: AllocId) -> Option<f64> {
        self.allocations.get(&alloc).map(|a| a.granted)
    }

    pub fn allocation_class(&self, alloc: AllocId) -> Option<ClassId> {
        self.allocations.get(&alloc).map(|a| a.class)
    }

    fn free_for_new(&self, now: SimTime) -> f64 {
        self.capacity - self.occupied() - self.vacant(now)
    }

    /// Would a new call of `class` be admitted right now?
    pub fn can_admit_new(
        &self,
        table: &ClassTable,
        class: ClassId,
        now: SimTime,
    ) -> Result<bool, CacError> {
        let c = table.get(class)?;
        Ok(c.bandwidth_mbps <= self.free_for_new(now) + BW_EPS)
    }

    /// Would a handover call of `class` be admitted? Unlike the new-call
    /// rule this is clock-free: free, reserved, and releasable bandwidth are
    /// all within a handover call's reach.
    pub fn can_admit_handover(&self, table: &ClassTable, class: ClassId) -> Result<bool, CacError> {
        let c = table.get(class)?;
        Ok(c.bandwidth_mbps <= self.capacity - self.occupied() + self.releasable(table) + BW_EPS)
    }

    /// Admit a new call: it may use only unreserved free bandwidth — never
    /// the reserved pool, never degradation.
    pub fn admit_new(
        &mut self,
        table: &ClassTable,
        class: ClassId,
        now: SimTime,
    ) -> Result<NewCallOutcome, CacError> {
        if !self.can_admit_new(table, class, now)? {
            return Ok(NewCallOutcome::Blocked);
        }
        let granted = table.get(class)?.bandwidth_mbps;
        let alloc = self.insert_allocation(class, granted);
        Ok(NewCallOutcome::Admitted { alloc, granted })
    }

    /// Admit a handover call: free bandwidth first, then the reserved pool
    /// (oldest entries first), then degradation of adaptive calls spread
    /// proportionally to each call's remaining margin. Rejection leaves the
    /// ledger untouched.
    pub fn admit_handover(
        &mut self,
        table: &ClassTable,
        class: ClassId,
        now: SimTime,
    ) -> Result<HandoverOutcome, CacError> {
        if !self.can_admit_handover(table, class)? {
            return Ok(HandoverOutcome::Dropped);
        }
        let beta = table.get(class)?.bandwidth_mbps;
        let free = self.free_for_new(now).max(0.0);
        let after_free = (beta - free).max(0.0);
        let reserved_used = if after_free > BW_EPS {
            self.consume_reserved(after_free, now)
        } else {
            0.0
        };
        let shortfall = (after_free - reserved_used).max(0.0);
        let degraded_total = if shortfall > BW_EPS {
            self.degrade(table, shortfall)
        } else {
            0.0
        };
        let alloc = self.insert_allocation(class, beta);
        Ok(HandoverOutcome::Admitted {
            alloc,
            granted: beta,
            degraded_total,
            reserved_used,
        })
    }

    /// Release an allocation. Mobility causes turn the freed bandwidth into
    /// a reservation expiring at `now + reservation_t`; a normal end returns
    /// it to the free pool immediately.
    pub fn release(
        &mut self,
        alloc: AllocId,
        cause: ReleaseCause,
        now: SimTime,
        reservation_t: SimDuration,
    ) -> Result<ReleaseOutcome, CacError> {
        let entry = self
            .allocations
            .remove(&alloc)
            .ok_or(CacError::UnknownAllocation(alloc))?;
        self.class_counts[entry.class] -= 1;
        let reservation = if cause.reserves() && reservation_t > SimDuration::ZERO {
            let handle = ReservationHandle {
                id: self.next_reservation,
                expires_at: now + reservation_t,
            };
            self.next_reservation += 1;
            self.reservations.push_back(Reservation {
                id: handle.id,
                amount: entry.granted,
                expires_at: handle.expires_at,
            });
            Some(handle)
        } else {
            None
        };
        Ok(ReleaseOutcome {
            freed: entry.granted,
            reservation,
        })
    }

    /// Drop a reservation entry, returning the amount moved back to the free
    /// pool. Entries already consumed (or expired and removed) are a no-op.
    pub fn expire_reservation(&mut self, id: u64) -> f64 {
        if let Some(pos) = self.reservations.iter().position(|r| r.id == id) {
            self.reservations
                .remove(pos)
                .map(|r| r.amount)
                .unwrap_or(0.0)
        } else {
            0.0
        }
    }

    /// After a capacity-freeing event, hand unreserved free bandwidth back to
    /// degraded adaptive calls, proportionally to their deficits, never above
    /// the requested bandwidth. Returns the total restored.
    pub fn restore_degraded(&mut self, table: &ClassTable, now: SimTime) -> f64 {
        let free = self.free_for_new(now).max(0.0);
        if free <= BW_EPS {
            return 0.0;
        }
        let deficits: Vec<(AllocId, f64)> = self
            .allocations
            .iter()
            .filter_map(|(id, a)| {
                let class = table.get(a.class).ok()?;
                let deficit = class.bandwidth_mbps - a.granted;
                (class.qos_adaptive && deficit > BW_EPS).then_some((*id, deficit))
            })
            .collect();
        let total_deficit: f64 = deficits.iter().map(|(_, d)| d).sum();
        if total_deficit <= BW_EPS {
            return 0.0;
        }
        let give_total = free.min(total_deficit);
        let mut given = 0.0;
        for (i, (id, deficit)) in deficits.iter().enumerate() {
            let share = if i + 1 == deficits.len() {
                (give_total - given).min(*deficit)
            } else {
                give_total * deficit / total_deficit
            };
            self.allocations.get_mut(id).expect("listed above").granted += share;
            given += share;
        }
        given
    }

    pub fn snapshot(&self, table: &ClassTable, now: SimTime) -> LedgerSnapshot {
        LedgerSnapshot {
            at: now,
            occupied: self.occupied(),
            vacant: self.vacant(now),
            releasable: self.releasable(table),
            class_counts: self.class_counts.clone(),
        }
    }

    /// Check every ledger invariant; returns a description of the first
    /// violation found.
    pub fn audit(&self, table: &ClassTable, now: SimTime) -> Result<(), String> {
        let occupied = self.occupied();
        let vacant = self.vacant(now);
        if occupied > self.capacity + BW_EPS {
            return Err(format!(
                "occupied {occupied} exceeds capacity {}",
                self.capacity
            ));
        }
        if occupied + vacant > self.capacity + BW_EPS {
            return Err(format!(
                "occupied {occupied} + vacant {vacant} exceeds capacity {}",
                self.capacity
            ));
        }
        let mut counts = vec![0usize; self.class_counts.len()];
        let mut undegraded = true;
        for (id, a) in &self.allocations {
            let class = table.get(a.class).map_err(|e| e.to_string())?;
            counts[a.class] += 1;
            if a.granted > class.bandwidth_mbps + BW_EPS {
                return Err(format!("allocation {id} granted above request"));
            }
            if a.granted < class.floor_mbps() - BW_EPS {
                return Err(format!("allocation {id} granted below degradation floor"));
            }
            if class.bandwidth_mbps - a.granted > BW_EPS {
                undegraded = false;
            }
        }
        if counts != self.class_counts {
            return Err("class counters inconsistent with allocations".to_string());
        }
        if self.reservations.iter().any(|r| r.amount < -BW_EPS) {
            return Err("negative reservation amount".to_string());
        }
        if undegraded {
            let direct = self.releasable(table);
            let from_counters = self.releasable_from_counters(table);
            if (direct - from_counters).abs() > 1e-9 {
                return Err(format!(
                    "releasable {direct} disagrees with counter aggregate {from_counters}"
                ));
            }
        }
        Ok(())
    }

    fn insert_allocation(&mut self, class: ClassId, granted: f64) -> AllocId {
        let id = self.next_alloc;
        self.next_alloc += 1;
        self.allocations.insert(id, Allocation { class, granted });
        self.class_counts[class] += 1;
        id
    }

    /// Consume up to `need` from the reserved pool, oldest entries first;
    /// a partially consumed entry keeps its expiry. Returns the amount taken.
    fn consume_reserved(&mut self, need: f64, now: SimTime) -> f64 {
        let mut taken = 0.0;
        let mut idx = 0;
        while idx < self.reservations.len() && need - taken > BW_EPS {
            if self.reservations[idx].expires_at <= now {
                idx += 1;
                continue;
            }
            let take = (need - taken).min(self.reservations[idx].amount);
            self.reservations[idx].amount -= take;
            taken += take;
            if self.reservations[idx].amount <= BW_EPS {
                self.reservations.remove(idx);
            } else {
                idx += 1;
            }
        }
        taken
    }

    /// Take `shortfall` from adaptive calls, proportionally to each call's
    /// remaining margin. The caller has verified the total margin suffices.
    fn degrade(&mut self, table: &ClassTable, shortfall: f64) -> f64 {
        let margins: Vec<(AllocId, f64)> = self
            .allocations
            .iter()
            .filter_map(|(id, a)| {
                let class = table.get(a.class).ok()?;
                let margin = a.granted - class.floor_mbps();
                (class.qos_adaptive && margin > BW_EPS).then_some((*id, margin))
            })
            .collect();
        let total_margin: f64 = margins.iter().map(|(_, m)| m).sum();
        let take_total = shortfall.min(total_margin);
        let mut taken = 0.0;
        for (i, (id, margin)) in margins.iter().enumerate() {
            let take = if i + 1 == margins.len() {
                (take_total - taken).min(*margin)
            } else {
                take_total * margin / total_margin
            };
            self.allocations.get_mut(id).expect("listed above").granted -= take;
            taken += take;
        }
        taken
    }
}

/// Admission scheme selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Bandwidth reservation plus QoS degradation: handover calls have priority.
    Proposed,
    /// No reservation (T = 0), no degradation (xi = 0): handover and new
    /// calls face the same rule.
    Baseline,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Proposed => "proposed",
            Scheme::Baseline => "baseline",
        }
    }
}

/// A cell's ledger bound to a scheme: the baseline is realized exactly as
/// the parameter degeneracy T = 0, xi = 0.
#[derive(Debug, Clone)]
pub struct AdmissionController {
    ledger: CellLedger,
    table: ClassTable,
    reservation_t: SimDuration,
}

impl AdmissionController {
    pub fn new(
        capacity_mbps: f64,
        table: &ClassTable,
        scheme: Scheme,
        reservation_t: SimDuration,
    ) -> Self {
        let (table, reservation_t) = match scheme {
            Scheme::Proposed => (table.clone(), reservation_t),
            Scheme::Baseline => (table.without_degradation(), SimDuration::ZERO),
        };
        AdmissionController {
            ledger: CellLedger::new(capacity_mbps, table.len()),
            table,
            reservation_t,
        }
    }

    pub fn ledger(&self) -> &CellLedger {
        &self.ledger
    }

    pub fn table(&self) -> &ClassTable {
        &self.table
    }

    pub fn admit_new(&mut self, class: ClassId, now: SimTime) -> Result<NewCallOutcome, CacError> {
        let out = self.ledger.admit_new(&self.table, class, now)?;
        self.debug_audit(now);
        Ok(out)
    }

    pub fn admit_handover(
        &mut self,
        class: ClassId,
        now: SimTime,
    ) -> Result<HandoverOutcome, CacError> {
        let out = self.ledger.admit_handover(&self.table, class, now)?;
        self.debug_audit(now);
        Ok(out)
    }

    pub fn release(
        &mut self,
        alloc: AllocId,
        cause: ReleaseCause,
        now: SimTime,
    ) -> Result<ReleaseOutcome, CacError> {
        let out = self.ledger.release(alloc, cause, now, self.reservation_t)?;
        self.debug_audit(now);
        Ok(out)
    }

    pub fn expire_reservation(&mut self, id: u64, now: SimTime) -> f64 {
        let freed = self.ledger.expire_reservation(id);
        self.debug_audit(now);
        freed
    }

    pub fn restore_degraded(&mut self, now: SimTime) -> f64 {
        let restored = self.ledger.restore_degraded(&self.table, now);
        self.debug_audit(now);
        restored
    }

    pub fn snapshot(&self, now: SimTime) -> LedgerSnapshot {
        self.ledger.snapshot(&self.table, now)
    }

    #[inline]
    fn debug_audit(&self, now: SimTime) {
        #[cfg(debug_assertions)]
        if let Err(violation) = self.ledger.audit(&self.table, now) {
            panic!("ledger invariant violated: {violation}");
        }
        #[cfg(not(debug_assertions))]
        let _ = now;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(secs: f64) -> SimTime {
        SimTime::from_secs_f64(secs).unwrap()
    }

    fn dur(secs: f64) -> SimDuration {
        SimDuration::from_secs_f64(secs).unwrap()
    }

    fn adaptive(name: &str, bw: f64, xi: f64) -> TrafficClass {
        TrafficClass {
            name: name.to_string(),
            qos_adaptive: true,
            bandwidth_mbps: bw,
            degradable_fraction: xi,
        }
    }

    fn rigid(name: &str, bw: f64) -> TrafficClass {
        TrafficClass {
            name: name.to_string(),
            qos_adaptive: false,
            bandwidth_mbps: bw,
            degradable_fraction: 0.0,
        }
    }

    fn admit_new_ok(ledger: &mut CellLedger, table: &ClassTable, class: ClassId) -> AllocId {
        match ledger.admit_new(table, class, SimTime::ZERO).unwrap() {
            NewCallOutcome::Admitted { alloc, .. } => alloc,
            NewCallOutcome::Blocked => panic!("expected admission"),
        }
    }

    #[test]
    fn class_validation() {
        assert!(adaptive("a", 2.0, 0.5).validate().is_ok());
        assert!(adaptive("a", 0.0, 0.5).validate().is_err());
        assert!(adaptive("a", 2.0, 1.5).validate().is_err());
        assert!(TrafficClass {
            name: "bad".into(),
            qos_adaptive: false,
            bandwidth_mbps: 1.0,
            degradable_fraction: 0.2,
        }
        .validate()
        .is_err());
    }

    #[test]
    fn releasable_matches_eq6_when_undegraded() {
        let table =
            ClassTable::new(vec![adaptive("a2", 2.0, 0.5), adaptive("a1", 1.0, 0.5)]).unwrap();
        let mut ledger = CellLedger::new(6.0, table.len());
        admit_new_ok(&mut ledger, &table, 0);
        admit_new_ok(&mut ledger, &table, 1);
        assert!((ledger.releasable(&table) - 1.5).abs() < 1e-12);
        assert!((ledger.releasable_from_counters(&table) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn releasable_empty_ledger_is_zero() {
        let table = ClassTable::new(vec![rigid("r", 1.0)]).unwrap();
        let mut ledger = CellLedger::new(6.0, table.len());
        assert_eq!(ledger.releasable(&table), 0.0);
        // Empty sums report positive zero, not the fold identity -0.0.
        assert!(ledger.occupied().is_sign_positive());
        assert!(ledger.vacant(SimTime::ZERO).is_sign_positive());
        assert!(ledger.releasable(&table).is_sign_positive());
        admit_new_ok(&mut ledger, &table, 0);
        assert_eq!(
            ledger.releasable(&table),
            0.0,
            "no adaptive calls, nothing releasable"
        );
    }

    #[test]
    fn releasable_shrinks_with_degradation() {
        // One adaptive call (xi 0.5, beta 2) degraded to 1.2 leaves 0.2.
        let table = ClassTable::new(vec![
            adaptive("a", 2.0, 0.5),
            rigid("fill", 3.2),
            rigid("ho", 0.8),
        ])
        .unwrap();
        let mut ledger = CellLedger::new(5.2, table.len());
        admit_new_ok(&mut ledger, &table, 0); // occupied 2.0
        admit_new_ok(&mut ledger, &table, 1); // occupied 5.2, free 0
        match ledger.admit_handover(&table, 2, SimTime::ZERO).unwrap() {
            HandoverOutcome::Admitted { degraded_total, .. } => {
                assert!((degraded_total - 0.8).abs() < 1e-12);
            }
            HandoverOutcome::Dropped => panic!("expected admission via degradation"),
        }
        assert!((ledger.releasable(&table) - 0.2).abs() < 1e-12);
        ledger.audit(&table, SimTime::ZERO).unwrap();
    }

    #[test]
    fn new_calls_cannot_touch_reserved_pool() {
        let table = ClassTable::new(vec![rigid("unit", 1.0)]).unwrap();
        let mut ledger = CellLedger::new(6.0, table.len());
        let allocs: Vec<AllocId> = (0..5)
            .map(|_| admit_new_ok(&mut ledger, &table, 0))
            .collect();
        // Free one unit into the reserved pool: occupied 4, vacant 1.
        let out = ledger
            .release(
                allocs[0],
                ReleaseCause::OutboundM2fHandover,
                t(0.0),
                dur(10.0),
            )
            .unwrap();
        assert!(out.reservation.is_some());
        assert!((ledger.vacant(t(1.0)) - 1.0).abs() < 1e-12);

        // occupied 4, vacant 1: exactly one unit of unreserved free bandwidth.
        match ledger.admit_new(&table, 0, t(1.0)).unwrap() {
            NewCallOutcome::Admitted { .. } => {}
            NewCallOutcome::Blocked => panic!("one free unit remains"),
        }
        // occupied 5, vacant 1: free-for-new is zero.
        assert_eq!(
            ledger.admit_new(&table, 0, t(1.0)).unwrap(),
            NewCallOutcome::Blocked
        );
        ledger.audit(&table, t(1.0)).unwrap();
    }

    #[test]
    fn oversized_request_blocked() {
        let table = ClassTable::new(vec![rigid("unit", 1.0), rigid("big", 6.0)]).unwrap();
        let mut ledger = CellLedger::new(6.0, table.len());
        for _ in 0..3 {
            admit_new_ok(&mut ledger, &table, 0);
        }
        assert_eq!(
            ledger.admit_new(&table, 1, SimTime::ZERO).unwrap(),
            NewCallOutcome::Blocked
        );
    }

    #[test]
    fn handover_uses_reserved_pool_without_degradation() {
        let table = ClassTable::new(vec![rigid("unit", 1.0)]).unwrap();
        let mut ledger = CellLedger::new(6.0, table.len());
        let allocs: Vec<AllocId> = (0..6)
            .map(|_| admit_new_ok(&mut ledger, &table, 0))
            .collect();
        ledger
            .release(
                allocs[0],
                ReleaseCause::OutboundM2mHandover,
                t(0.0),
                dur(10.0),
            )
            .unwrap();
        // occupied 5, vacant 1: a new call is blocked, a handover call rides
        // the reserved pool.
        assert_eq!(
            ledger.admit_new(&table, 0, t(1.0)).unwrap(),
            NewCallOutcome::Blocked
        );
        match ledger.admit_handover(&table, 0, t(1.0)).unwrap() {
            HandoverOutcome::Admitted {
                degraded_total,
                reserved_used,
                ..
            } => {
                assert_eq!(degraded_total, 0.0);
                assert!((reserved_used - 1.0).abs() < 1e-12);
            }
            HandoverOutcome::Dropped => panic!("reserved pool should admit the handover"),
        }
        assert_eq!(ledger.vacant(t(1.0)), 0.0);
        ledger.audit(&table, t(1.0)).unwrap();
    }

    #[test]
    fn handover_shortfall_covered_by_proportional_degradation() {
        // occupied 5.5 of 6, no reservations, adaptive margin 1.5, request 2:
        // free 0.5 plus degradation 1.5.
        let table = ClassTable::new(vec![
            adaptive("a3", 3.0, 0.5),
            rigid("fill", 2.5),
            rigid("ho", 2.0),
        ])
        .unwrap();
        let mut ledger = CellLedger::new(6.0, table.len());
        admit_new_ok(&mut ledger, &table, 0);
        admit_new_ok(&mut ledger, &table, 1);
        assert!((ledger.occupied() - 5.5).abs() < 1e-12);
        match ledger.admit_handover(&table, 2, SimTime::ZERO).unwrap() {
            HandoverOutcome::Admitted {
                degraded_total,
                reserved_used,
                granted,
                ..
            } => {
                assert!((degraded_total - 1.5).abs() < 1e-12);
                assert_eq!(reserved_used, 0.0);
                assert_eq!(granted, 2.0);
            }
            HandoverOutcome::Dropped => panic!("free + margin covers the request"),
        }
        assert!((ledger.occupied() - 6.0).abs() < 1e-12);
        ledger.audit(&table, SimTime::ZERO).unwrap();
    }

    #[test]
    fn handover_dropped_when_nothing_left() {
        let table = ClassTable::new(vec![rigid("unit", 1.0)]).unwrap();
        let mut ledger = CellLedger::new(6.0, table.len());
        for _ in 0..6 {
            admit_new_ok(&mut ledger, &table, 0);
        }
        assert_eq!(
            ledger.admit_handover(&table, 0, SimTime::ZERO).unwrap(),
            HandoverOutcome::Dropped
        );
        // A rejected admission never mutates the ledger.
        assert_eq!(ledger.occupied(), 6.0);
        assert_eq!(ledger.vacant(SimTime::ZERO), 0.0);
        ledger.audit(&table, SimTime::ZERO).unwrap();
    }

    #[test]
    fn normal_end_release_does_not_reserve() {
        let table = ClassTable::new(vec![rigid("unit", 1.0)]).unwrap();
        let mut ledger = CellLedger::new(6.0, table.len());
        let a = admit_new_ok(&mut ledger, &table, 0);
        let out = ledger
            .release(a, ReleaseCause::NormalEnd, t(5.0), dur(10.0))
            .unwrap();
        assert!(out.reservation.is_none());
        assert_eq!(ledger.vacant(t(5.0)), 0.0);
    }

    #[test]
    fn staggered_reservations_expire_independently() {
        let table = ClassTable::new(vec![rigid("unit", 1.0)]).unwrap();
        let mut ledger = CellLedger::new(6.0, table.len());
        let a = admit_new_ok(&mut ledger, &table, 0);
        let b = admit_new_ok(&mut ledger, &table, 0);
        let ra = ledger
            .release(a, ReleaseCause::OutboundM2fHandover, t(0.0), dur(10.0))
            .unwrap();
        let rb = ledger
            .release(b, ReleaseCause::FemtocellLeftCell, t(4.0), dur(10.0))
            .unwrap();
        assert_eq!(ra.reservation.unwrap().expires_at, t(10.0));
        assert_eq!(rb.reservation.unwrap().expires_at, t(14.0));
        assert!((ledger.vacant(t(5.0)) - 2.0).abs() < 1e-12);
        // Reservation clocks run independently of each other.
        assert!((ledger.vacant(t(12.0)) - 1.0).abs() < 1e-12);
        assert_eq!(ledger.vacant(t(14.0)), 0.0, "expiry boundary is exclusive");
    }

    #[test]
    fn expiry_moves_reserved_to_free() {
        let table = ClassTable::new(vec![rigid("unit", 1.0)]).unwrap();
        let mut ledger = CellLedger::new(1.0, table.len());
        let a = admit_new_ok(&mut ledger, &table, 0);
        let out = ledger
            .release(a, ReleaseCause::OutboundM2fHandover, t(0.0), dur(10.0))
            .unwrap();
        let handle = out.reservation.unwrap();
        // While reserved, a new call cannot take the unit.
        assert_eq!(
            ledger.admit_new(&table, 0, t(5.0)).unwrap(),
            NewCallOutcome::Blocked
        );
        let freed = ledger.expire_reservation(handle.id);
        assert!((freed - 1.0).abs() < 1e-12);
        // Second expiry of the same entry is a no-op.
        assert_eq!(ledger.expire_reservation(handle.id), 0.0);
        match ledger.admit_new(&table, 0, t(10.0)).unwrap() {
            NewCallOutcome::Admitted { .. } => {}
            NewCallOutcome::Blocked => panic!("expired bandwidth is ordinary free bandwidth"),
        }
    }

    #[test]
    fn restore_refills_single_deficit() {
        let table = ClassTable::new(vec![
            adaptive("a", 2.0, 0.5),
            rigid("fill", 4.0),
            rigid("ho", 0.5),
        ])
        .unwrap();
        let mut ledger = CellLedger::new(6.0, table.len());
        let a = admit_new_ok(&mut ledger, &table, 0);
        let fill = admit_new_ok(&mut ledger, &table, 1);
        // Force a 0.5 degradation.
        let ho = match ledger.admit_handover(&table, 2, SimTime::ZERO).unwrap() {
            HandoverOutcome::Admitted {
                alloc,
                degraded_total,
                ..
            } => {
                assert!((degraded_total - 0.5).abs() < 1e-12);
                alloc
            }
            _ => panic!(),
        };
        assert!((ledger.allocation_granted(a).unwrap() - 1.5).abs() < 1e-12);
        // Nothing free yet: restore is a no-op.
        assert_eq!(ledger.restore_degraded(&table, SimTime::ZERO), 0.0);
        // A departure frees 4.0; the call returns to its requested rate.
        ledger
            .release(fill, ReleaseCause::NormalEnd, t(1.0), dur(10.0))
            .unwrap();
        let restored = ledger.restore_degraded(&table, t(1.0));
        assert!((restored - 0.5).abs() < 1e-12);
        assert!((ledger.allocation_granted(a).unwrap() - 2.0).abs() < 1e-12);
        let _ = ho;
        ledger.audit(&table, t(1.0)).unwrap();
    }

    #[test]
    fn restore_splits_proportionally_to_deficits() {
        // Margins 0.8 and 0.4 produce deficits 0.4 and 0.2 from a 0.6
        // shortfall; restoring 0.3 then gives back 0.2 and 0.1.
        let table = ClassTable::new(vec![
            adaptive("a", 2.0, 0.4),
            adaptive("b", 1.0, 0.4),
            rigid("fill", 2.7),
            rigid("ho", 0.6),
            rigid("mini", 0.3),
        ])
        .unwrap();
        let mut ledger = CellLedger::new(5.7, table.len());
        let a = admit_new_ok(&mut ledger, &table, 0);
        let b = admit_new_ok(&mut ledger, &table, 1);
        let fill = admit_new_ok(&mut ledger, &table, 2);
        let ho = match ledger.admit_handover(&table, 3, SimTime::ZERO).unwrap() {
            HandoverOutcome::Admitted {
                alloc,
                degraded_total,
                ..
            } => {
                assert!((degraded_total - 0.6).abs() < 1e-12);
                alloc
            }
            _ => panic!(),
        };
        assert!((ledger.allocation_granted(a).unwrap() - 1.6).abs() < 1e-12);
        assert!((ledger.allocation_granted(b).unwrap() - 0.8).abs() < 1e-12);

        // Free exactly 0.3: release the 0.6 handover, occupy 0.3 of it.
        ledger
            .release(ho, ReleaseCause::NormalEnd, t(1.0), dur(10.0))
            .unwrap();
        admit_new_ok(&mut ledger, &table, 4);
        let restored = ledger.restore_degraded(&table, t(1.0));
        assert!((restored - 0.3).abs() < 1e-12);
        assert!((ledger.allocation_granted(a).unwrap() - 1.8).abs() < 1e-12);
        assert!((ledger.allocation_granted(b).unwrap() - 0.9).abs() < 1e-12);
        let _ = fill;
        ledger.audit(&table, t(1.0)).unwrap();
    }

    #[test]
    fn unknown_class_and_allocation_are_errors() {
        let table = ClassTable::new(vec![rigid("unit", 1.0)]).unwrap();
        let mut ledger = CellLedger::new(6.0, table.len());
        assert_eq!(
            ledger.admit_new(&table, 7, SimTime::ZERO).unwrap_err(),
            CacError::UnknownClass(7)
        );
        assert_eq!(
            ledger
                .release(99, ReleaseCause::NormalEnd, SimTime::ZERO, dur(10.0))
                .unwrap_err(),
            CacError::UnknownAllocation(99)
        );
    }

    #[test]
    fn baseline_controller_is_the_degenerate_ledger() {
        let table = ClassTable::new(vec![adaptive("a", 2.0, 0.5), rigid("r", 1.0)]).unwrap();
        let mut ctl = AdmissionController::new(6.0, &table, Scheme::Baseline, dur(10.0));
        // Releases never reserve.
        let a = match ctl.admit_new(0, SimTime::ZERO).unwrap() {
            NewCallOutcome::Admitted { alloc, .. } => alloc,
            _ => panic!(),
        };
        let out = ctl
            .release(a, ReleaseCause::OutboundM2fHandover, t(1.0))
            .unwrap();
        assert!(out.reservation.is_none());
        assert_eq!(ctl.ledger().vacant(t(1.0)), 0.0);
        // Degradation is disabled: a full cell drops handover calls.
        for _ in 0..3 {
            ctl.admit_new(0, t(2.0)).unwrap();
        }
        assert!(matches!(
            ctl.admit_handover(1, t(2.0)).unwrap(),
            HandoverOutcome::Dropped
        ));
    }

    #[test]
    fn proposed_controller_reserves_and_degrades() {
        let table = ClassTable::new(vec![adaptive("a", 2.0, 0.5), rigid("r", 1.0)]).unwrap();
        let mut ctl = AdmissionController::new(6.0, &table, Scheme::Proposed, dur(10.0));
        let a = match ctl.admit_new(0, SimTime::ZERO).unwrap() {
            NewCallOutcome::Admitted { alloc, .. } => alloc,
            _ => panic!(),
        };
        let out = ctl
            .release(a, ReleaseCause::OutboundM2fHandover, t(1.0))
            .unwrap();
        assert_eq!(out.reservation.unwrap().expires_at, t(11.0));
        assert!((ctl.ledger().vacant(t(2.0)) - 2.0).abs() < 1e-12);
    }
}
