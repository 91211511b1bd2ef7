//! Brute-force comparison of the policies against each other.
//!
//! Over every consistent trace in a small universe, three containments
//! should hold: anything relaxed-temporal rejects, full rejects; anything
//! spatial rejects, relaxed-temporal rejects; anything data-integrity
//! rejects, full rejects. Each containment should also be strict, shown by
//! a witness trace the stronger policy rejects and the weaker accepts.
//! [`check_lattice`] verifies all of it by enumeration and returns what it
//! found, leaving pass/fail judgments to the caller.

use super::enumerate::{enumerate_traces, EnumError, EnumParams};
use super::{MonitorState, Policy, Violation};
use crate::trace::Event;

#[derive(Debug, Clone)]
pub struct LatticeReport {
    pub params: EnumParams,
    pub traces_checked: u64,
    /// Traces where a weaker policy rejected but the stronger did not,
    /// rendered for display. Empty is the expected outcome.
    pub counterexamples: Vec<String>,
    /// Per-policy rejection totals, in the order full, relaxed-temporal,
    /// spatial, data-integrity.
    pub violation_counts: [u64; 4],
    /// Shortest trace full rejects but relaxed-temporal accepts.
    pub strict_full_over_relaxed: Option<Vec<Event>>,
    /// Shortest trace relaxed-temporal rejects but spatial accepts.
    pub strict_relaxed_over_spatial: Option<Vec<Event>>,
    /// Shortest trace full rejects but data-integrity accepts.
    pub strict_full_over_integrity: Option<Vec<Event>>,
}

impl LatticeReport {
    pub fn holds(&self) -> bool {
        self.counterexamples.is_empty()
            && self.strict_full_over_relaxed.is_some()
            && self.strict_relaxed_over_spatial.is_some()
            && self.strict_full_over_integrity.is_some()
    }
}

const POLICIES: [Policy; 4] = [
    Policy::Full,
    Policy::RelaxedTemporal,
    Policy::Spatial,
    Policy::DataIntegrity,
];

const MAX_COUNTEREXAMPLES: usize = 5;

pub fn check_lattice(params: &EnumParams) -> Result<LatticeReport, EnumError> {
    let mut report = LatticeReport {
        params: *params,
        traces_checked: 0,
        counterexamples: Vec::new(),
        violation_counts: [0; 4],
        strict_full_over_relaxed: None,
        strict_relaxed_over_spatial: None,
        strict_full_over_integrity: None,
    };
    // stack[i] holds the four monitor states after event i of the current
    // prefix; depth-first order means only the tail changes between calls.
    let mut stack: Vec<[MonitorState; 4]> = Vec::new();

    report.traces_checked = enumerate_traces(params, &mut |prefix| {
        stack.truncate(prefix.len() - 1);
        let mut states = match stack.last() {
            Some(top) => top.clone(),
            None => POLICIES.map(MonitorState::new),
        };
        let ev = prefix.last().unwrap();
        for st in states.iter_mut() {
            st.step(ev);
        }
        let verdict = |i: usize| -> Option<Violation> {
            states[i]
                .verdict()
                .expect("enumerated traces are consistent")
                .violation()
                .copied()
        };
        let (full, relaxed, spatial, integrity) =
            (verdict(0), verdict(1), verdict(2), verdict(3));

        for (i, v) in [full, relaxed, spatial, integrity].iter().enumerate() {
            if v.is_some() {
                report.violation_counts[i] += 1;
            }
        }
        let mut containment = |weaker: &Option<Violation>,
                               stronger: &Option<Violation>,
                               pair: &str| {
            if weaker.is_some()
                && stronger.is_none()
                && report.counterexamples.len() < MAX_COUNTEREXAMPLES
            {
                report.counterexamples.push(format!(
                    "{pair}: {} rejected, stronger side accepted: {}",
                    weaker.unwrap().kind,
                    crate::trace::to_json_lines(prefix).trim_end().replace('\n', " | ")
                ));
            }
        };
        containment(&relaxed, &full, "relaxed-temporal vs full");
        containment(&spatial, &relaxed, "spatial vs relaxed-temporal");
        containment(&integrity, &full, "data-integrity vs full");

        if full.is_some() && relaxed.is_none() && report.strict_full_over_relaxed.is_none() {
            report.strict_full_over_relaxed = Some(prefix.to_vec());
        }
        if relaxed.is_some() && spatial.is_none() && report.strict_relaxed_over_spatial.is_none() {
            report.strict_relaxed_over_spatial = Some(prefix.to_vec());
        }
        if full.is_some() && integrity.is_none() && report.strict_full_over_integrity.is_none() {
            report.strict_full_over_integrity = Some(prefix.to_vec());
        }
        stack.push(states);
    })?;
    Ok(report)
}
