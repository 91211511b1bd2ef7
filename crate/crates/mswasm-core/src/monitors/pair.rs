//! Two-run comparison: does a program's publicly visible behavior depend
//! on a secret input?
//!
//! A single trace being safe says nothing about information flow, so this
//! check works on a pair of runs that differ only in secrets. What counts
//! as publicly visible is the run's printed output plus the shape of every
//! write that touches the public region, where the public region is the
//! footprint of a designated allocation (by default the first one a run
//! performs). If the two projections diverge, the pair itself is the
//! counterexample.

use crate::trace::Event;

/// Publicly visible projection of one run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairObservation {
    pub prints: Vec<i32>,
    /// `(addr, size)` of each write touching the public region, in order.
    pub public_writes: Vec<(i64, u32)>,
}

impl PairObservation {
    /// Project a run down to what an observer of the public region sees.
    /// `public_alloc` picks which allocation (in trace order, counting from
    /// zero) is the public one; a run with no such allocation has an empty
    /// write projection.
    pub fn project(trace: &[Event], prints: &[i32], public_alloc: usize) -> PairObservation {
        let region = trace
            .iter()
            .filter_map(|ev| match ev {
                Event::Alloc { addr, size, .. } => Some((*addr, *size)),
                _ => None,
            })
            .nth(public_alloc);
        let public_writes = match region {
            None => Vec::new(),
            Some((base, len)) => trace
                .iter()
                .filter_map(|ev| match ev {
                    Event::Write(a) => Some(a),
                    _ => None,
                })
                .filter(|a| {
                    let a_end = a.addr.saturating_add(a.size as i64);
                    let r_end = base.saturating_add(len as i64);
                    a.addr < r_end && base < a_end
                })
                .map(|a| (a.addr, a.size))
                .collect(),
        };
        PairObservation {
            prints: prints.to_vec(),
            public_writes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PairVerdict {
    Equivalent,
    Differ { detail: String },
}

impl PairVerdict {
    pub fn is_equivalent(&self) -> bool {
        matches!(self, PairVerdict::Equivalent)
    }
}

/// Compare two projections, reporting the first point of divergence.
pub fn check_pair(a: &PairObservation, b: &PairObservation) -> PairVerdict {
    for (i, (x, y)) in a.prints.iter().zip(&b.prints).enumerate() {
        if x != y {
            return PairVerdict::Differ {
                detail: format!("print {i} is {x} in one run, {y} in the other"),
            };
        }
    }
    if a.prints.len() != b.prints.len() {
        return PairVerdict::Differ {
            detail: format!(
                "one run prints {} value(s), the other {}",
                a.prints.len(),
                b.prints.len()
            ),
        };
    }
    for (i, (x, y)) in a.public_writes.iter().zip(&b.public_writes).enumerate() {
        if x != y {
            return PairVerdict::Differ {
                detail: format!(
                    "public write {i} is ({}, {}) in one run, ({}, {}) in the other",
                    x.0, x.1, y.0, y.1
                ),
            };
        }
    }
    if a.public_writes.len() != b.public_writes.len() {
        return PairVerdict::Differ {
            detail: format!(
                "one run performs {} public write(s), the other {}",
                a.public_writes.len(),
                b.public_writes.len()
            ),
        };
    }
    PairVerdict::Equivalent
}
