//! Memory safety monitors over traces.
//!
//! A monitor replays a trace's allocations and frees, so at every access it
//! knows each byte's owner, its liveness, and which colors owned it in the
//! past. An access byte then falls into one of four classes relative to the
//! accessing color:
//!
//! * currently owned by that color: fine under every policy
//! * freed by that color and not yet handed out again: dangling
//! * owned by that color at some earlier point, reallocated since
//! * never owned by that color at all
//!
//! Policies differ in which classes (and which event kinds) they reject.
//! [`Policy::Full`] rejects all three bad classes on reads and writes plus
//! double frees. [`Policy::RelaxedTemporal`] tolerates dangling accesses
//! until the memory is reallocated. [`Policy::Spatial`] only rejects
//! accesses to bytes the color never owned. [`Policy::DataIntegrity`]
//! applies the full check to writes alone, and [`Policy::PointerIntegrity`]
//! ignores byte states entirely but rejects accesses through forged
//! pointers.

mod enumerate;
mod lattice;
mod pair;

pub use enumerate::{enumerate_traces, EnumParams, EnumError};
pub use lattice::{check_lattice, LatticeReport};
pub use pair::{check_pair, PairObservation, PairVerdict};

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use crate::trace::{audit, Access, Event, EventKind, Provenance, TraceError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Policy {
    Full,
    Spatial,
    RelaxedTemporal,
    PointerIntegrity,
    DataIntegrity,
}

impl Policy {
    pub const ALL: [Policy; 5] = [
        Policy::Full,
        Policy::Spatial,
        Policy::RelaxedTemporal,
        Policy::PointerIntegrity,
        Policy::DataIntegrity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Full => "full",
            Policy::Spatial => "spatial",
            Policy::RelaxedTemporal => "relaxed-temporal",
            Policy::PointerIntegrity => "pointer-integrity",
            Policy::DataIntegrity => "data-integrity",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown policy `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    /// Access to a byte the color never owned.
    SpatialOOB,
    /// Access to a byte the color freed, before any reallocation.
    UseAfterFree,
    /// Access to a byte the color once owned that has been reallocated.
    UseAfterRealloc,
    /// Free of an already freed color.
    DoubleFree,
    /// Access through a forged pointer.
    ForgedAccess,
    /// Write rejected by the data-integrity policy.
    IntegrityWrite,
}

impl ViolationKind {
    pub fn name(self) -> &'static str {
        match self {
            ViolationKind::SpatialOOB => "spatial-oob",
            ViolationKind::UseAfterFree => "use-after-free",
            ViolationKind::UseAfterRealloc => "use-after-realloc",
            ViolationKind::DoubleFree => "double-free",
            ViolationKind::ForgedAccess => "forged-access",
            ViolationKind::IntegrityWrite => "integrity-write",
        }
    }
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Color the violating event acted with.
    pub color: u32,
    /// Index of the violating event in the trace.
    pub event_idx: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Safe,
    Violation(Violation),
}

impl Verdict {
    pub fn violation(&self) -> Option<&Violation> {
        match self {
            Verdict::Safe => None,
            Verdict::Violation(v) => Some(v),
        }
    }
}

/// How one byte stands relative to one accessing color.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ByteClass {
    Owned,
    Dangling,
    Reallocated,
    NeverOwned,
}

/// Incremental monitor. Feed events in order with [`MonitorState::step`];
/// the first violation latches, but the store keeps replaying so a later
/// consistency problem still invalidates the whole trace.
#[derive(Debug, Clone)]
pub struct MonitorState {
    policy: Policy,
    /// color -> still live
    colors: HashMap<u32, bool>,
    /// byte -> (current owner, live)
    cur: BTreeMap<i64, (u32, bool)>,
    /// byte -> owners preceding the current one
    past: BTreeMap<i64, Vec<u32>>,
    next_idx: usize,
    violation: Option<Violation>,
    invalid: Option<TraceError>,
}

impl MonitorState {
    pub fn new(policy: Policy) -> Self {
        MonitorState {
            policy,
            colors: HashMap::new(),
            cur: BTreeMap::new(),
            past: BTreeMap::new(),
            next_idx: 0,
            violation: None,
            invalid: None,
        }
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    /// Verdict over everything stepped so far. Inconsistency anywhere in
    /// the prefix trumps any violation found.
    pub fn verdict(&self) -> Result<Verdict, TraceError> {
        if let Some(e) = &self.invalid {
            return Err(e.clone());
        }
        Ok(match self.violation {
            Some(v) => Verdict::Violation(v),
            None => Verdict::Safe,
        })
    }

    pub fn step(&mut self, ev: &Event) {
        let idx = self.next_idx;
        self.next_idx += 1;
        match ev {
            Event::Alloc {
                color, addr, size, ..
            } => self.step_alloc(idx, *color, *addr, *size),
            Event::Free { color, .. } => self.step_free(idx, *color),
            Event::Read(a) => self.step_access(idx, EventKind::Read, a),
            Event::Write(a) => self.step_access(idx, EventKind::Write, a),
        }
    }

    fn mark_invalid(&mut self, idx: usize, msg: String) {
        if self.invalid.is_none() {
            self.invalid = Some(TraceError {
                at: Some(idx),
                msg,
            });
        }
    }

    fn flag(&mut self, idx: usize, kind: ViolationKind, color: u32) {
        if self.violation.is_none() {
            self.violation = Some(Violation {
                kind,
                color,
                event_idx: idx,
            });
        }
    }

    fn step_alloc(&mut self, idx: usize, color: u32, addr: i64, size: u32) {
        if self.colors.contains_key(&color) {
            self.mark_invalid(idx, format!("color {color} allocated twice"));
            return;
        }
        let Some(end) = addr.checked_add(size as i64) else {
            self.mark_invalid(idx, "address range overflows".into());
            return;
        };
        for a in addr..end {
            match self.cur.get(&a) {
                Some((c, true)) => {
                    let c = *c;
                    self.mark_invalid(idx, format!("allocation overlaps live byte {a} of color {c}"));
                    return;
                }
                Some((c, false)) => {
                    self.past.entry(a).or_default().push(*c);
                }
                None => {}
            }
            self.cur.insert(a, (color, true));
        }
        self.colors.insert(color, true);
    }

    fn step_free(&mut self, idx: usize, color: u32) {
        match self.colors.get(&color) {
            None => self.mark_invalid(idx, format!("free of color {color} never allocated")),
            Some(true) => {
                self.colors.insert(color, false);
                for cell in self.cur.values_mut() {
                    if cell.0 == color {
                        cell.1 = false;
                    }
                }
            }
            Some(false) => {
                if matches!(self.policy, Policy::Full | Policy::RelaxedTemporal) {
                    self.flag(idx, ViolationKind::DoubleFree, color);
                }
            }
        }
    }

    fn classify(&self, addr: i64, color: u32) -> ByteClass {
        match self.cur.get(&addr) {
            Some((c, true)) if *c == color => ByteClass::Owned,
            Some((c, false)) if *c == color => ByteClass::Dangling,
            _ => {
                if self
                    .past
                    .get(&addr)
                    .is_some_and(|owners| owners.contains(&color))
                {
                    ByteClass::Reallocated
                } else {
                    ByteClass::NeverOwned
                }
            }
        }
    }

    fn step_access(&mut self, idx: usize, kind: EventKind, a: &Access) {
        let Some(end) = a.addr.checked_add(a.size as i64) else {
            self.mark_invalid(idx, "address range overflows".into());
            return;
        };
        if a.loc.len() != a.size as usize {
            self.mark_invalid(idx, "loc length disagrees with size".into());
            return;
        }
        for (k, addr) in (a.addr..end).enumerate() {
            let expected = match self.cur.get(&addr) {
                Some((c, true)) if *c == a.color => crate::trace::LocState::Same,
                Some((c, true)) => crate::trace::LocState::Other(*c),
                Some((c, false)) => crate::trace::LocState::Freed(*c),
                None => crate::trace::LocState::Unallocated,
            };
            if a.loc[k] != expected {
                self.mark_invalid(
                    idx,
                    format!(
                        "loc for byte {addr} says `{}` but history implies `{}`",
                        a.loc[k].token(),
                        expected.token()
                    ),
                );
                return;
            }
        }

        if self.policy == Policy::PointerIntegrity {
            if a.prov == Provenance::Forged {
                self.flag(idx, ViolationKind::ForgedAccess, a.color);
            }
            return;
        }
        if self.policy == Policy::DataIntegrity && kind != EventKind::Write {
            return;
        }

        for addr in a.addr..end {
            let class = self.classify(addr, a.color);
            let bad = match (self.policy, class) {
                (_, ByteClass::Owned) => None,
                (Policy::Full, ByteClass::Dangling) => Some(ViolationKind::UseAfterFree),
                (Policy::Full, ByteClass::Reallocated) => Some(ViolationKind::UseAfterRealloc),
                (Policy::Full, ByteClass::NeverOwned) => Some(ViolationKind::SpatialOOB),
                (Policy::RelaxedTemporal, ByteClass::Dangling) => None,
                (Policy::RelaxedTemporal, ByteClass::Reallocated) => {
                    Some(ViolationKind::UseAfterRealloc)
                }
                (Policy::RelaxedTemporal, ByteClass::NeverOwned) => Some(ViolationKind::SpatialOOB),
                (Policy::Spatial, ByteClass::NeverOwned) => Some(ViolationKind::SpatialOOB),
                (Policy::Spatial, _) => None,
                (Policy::DataIntegrity, _) => Some(ViolationKind::IntegrityWrite),
                (Policy::PointerIntegrity, _) => unreachable!("handled above"),
            };
            if let Some(kind) = bad {
                self.flag(idx, kind, a.color);
                return;
            }
        }
    }
}

/// Check a whole trace: audit it for internal consistency, then fold the
/// monitor over it. The distinct audit pass means a trace that lies about
/// byte states is rejected as invalid rather than judged.
pub fn check(policy: Policy, events: &[Event]) -> Result<Verdict, TraceError> {
    audit(events)?;
    Ok(check_incremental(policy, events)
        .expect("audited trace cannot be inconsistent"))
}

/// Fold the monitor over events without the upfront audit. Still returns
/// an error if the replay itself exposes an inconsistency.
pub fn check_incremental(policy: Policy, events: &[Event]) -> Result<Verdict, TraceError> {
    let mut st = MonitorState::new(policy);
    for ev in events {
        st.step(ev);
    }
    st.verdict()
}
