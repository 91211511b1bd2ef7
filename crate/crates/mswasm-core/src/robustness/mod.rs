//! Robust memory safety of a component against arbitrary linked contexts.
//!
//! A component is robustly safe when no well-typed context can drive it
//! into a memory-safety violation chargeable to the component. The check
//! here is a fuzzing harness: generate typed attacker modules against the
//! component's exported interface, link, run each context's `main`, and
//! evaluate the charging predicate on the resulting trace.
//!
//! A full-policy violation is charged to the component when either
//!
//! * the violated color was allocated by the component (its memory got
//!   clobbered), or
//! * the violating event was executed by the component (a context talked
//!   it into the bad access).
//!
//! Contexts are free to hurt themselves; a trap whose color and access
//! both belong to the context is benign and does not count.
//!
//! Separately, every boundary crossing that carries a component-owned
//! handle out of the component is recorded as a capability leak. Leaks
//! are not violations, but a component that never leaks a handle gives
//! contexts nothing to corrupt, which is what makes the violation count
//! provable by fuzzing rather than luck.

mod ctxgen;
mod witness;

pub use ctxgen::{gen_context, gen_contexts, interface_of, ExportSig};
pub use witness::{check_catalog, load_catalog, WitnessCatalog, WitnessEntry, WitnessReport, WitnessResult};

use std::fmt;
use std::path::Path;

use crate::interp::{link, run, AddrMode, Mode, RunConfig, RunOutcome};
use crate::ir::{validate, TypedModule};
use crate::minic::{build_module, Backend};
use crate::monitors::{self, Policy, Verdict, Violation};
use crate::trace::Event;

#[derive(Debug)]
pub struct RspError(pub String);

impl fmt::Display for RspError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for RspError {}

/// A component under test: its module id doubles as the owner tag that
/// trace events and the charging predicate work with.
pub struct Component {
    pub id: String,
    pub module: TypedModule,
}

impl Component {
    pub fn from_source(id: &str, src: &str) -> Result<Component, RspError> {
        let module = build_module(src, id, Backend::Safe)
            .map_err(|e| RspError(format!("component {id}: {e}")))?;
        Ok(Component {
            id: id.to_string(),
            module,
        })
    }

    /// Load a `.minic` file; the file stem becomes the module id.
    pub fn from_file(path: &Path) -> Result<Component, RspError> {
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| RspError(format!("bad component path {}", path.display())))?
            .to_string();
        let src = std::fs::read_to_string(path)
            .map_err(|e| RspError(format!("read {}: {e}", path.display())))?;
        Component::from_source(&id, &src)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RspConfig {
    pub contexts: u32,
    pub seed: u64,
    pub fuel: u64,
}

impl Default for RspConfig {
    fn default() -> Self {
        RspConfig {
            contexts: 200,
            seed: 1,
            fuel: crate::interp::DEFAULT_FUEL,
        }
    }
}

/// A component handle observed crossing out of the component.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Leak {
    pub func: String,
    pub color: u32,
}

/// What one generated context did when linked against the component.
#[derive(Debug, Clone)]
pub struct ContextReport {
    pub id: u32,
    /// Same token grammar the corpus uses: `ok`, `ok:<v>`, `trap:<kind>`,
    /// or `link-error:<detail>`.
    pub outcome: String,
    /// The charged violation, when the trace has one that the predicate
    /// pins on the component.
    pub charged: Option<Violation>,
    pub leaks: Vec<Leak>,
    pub features: Vec<&'static str>,
}

#[derive(Debug)]
pub struct RspReport {
    pub component: String,
    pub seed: u64,
    pub contexts: Vec<ContextReport>,
}

impl RspReport {
    pub fn violations(&self) -> Vec<&ContextReport> {
        self.contexts.iter().filter(|c| c.charged.is_some()).collect()
    }

    pub fn leaks(&self) -> Vec<(u32, &Leak)> {
        self.contexts
            .iter()
            .flat_map(|c| c.leaks.iter().map(move |l| (c.id, l)))
            .collect()
    }

    pub fn holds(&self) -> bool {
        self.contexts.iter().all(|c| c.charged.is_none())
    }
}

/// Owner of each allocated color, taken from the trace's alloc events.
fn color_owners(trace: &[Event]) -> std::collections::BTreeMap<u32, String> {
    let mut owners = std::collections::BTreeMap::new();
    for ev in trace {
        if let Event::Alloc { color, owner, .. } = ev {
            owners.entry(*color).or_insert_with(|| owner.clone());
        }
    }
    owners
}

/// The charging predicate: does this trace prefix already convict the
/// component? Returns the full-policy violation when it does.
///
/// Once a prefix is charged, every extension stays charged; the monitor
/// latches its first violation and allocation ownership never changes
/// retroactively.
pub fn charge(component: &str, trace: &[Event]) -> Option<Violation> {
    let verdict = monitors::check(Policy::Full, trace).ok()?;
    let Verdict::Violation(v) = verdict else {
        return None;
    };
    let owners = color_owners(trace);
    let color_owned = owners.get(&v.color).is_some_and(|o| o == component);
    let event_owned = trace
        .get(v.event_idx)
        .is_some_and(|ev| ev.owner() == component);
    (color_owned || event_owned).then_some(v)
}

/// Capability leaks: crossings that move a component-allocated handle
/// from the component to anyone else.
pub fn leak_audit(component: &str, outcome: &RunOutcome) -> Vec<Leak> {
    let owners = color_owners(&outcome.trace);
    outcome
        .crossings
        .iter()
        .filter(|c| c.from == component && c.to != component)
        .filter_map(|c| {
            let color = c.handle.color;
            let owned = owners.get(&color).is_some_and(|o| o == component);
            owned.then(|| Leak {
                func: c.func.clone(),
                color,
            })
        })
        .collect()
}

fn outcome_token(outcome: &RunOutcome) -> String {
    match &outcome.result {
        Ok(Some(v)) => format!("ok:{v}"),
        Ok(None) => "ok".to_string(),
        Err(trap) => format!("trap:{}", trap.kind.name()),
    }
}

/// Run the full harness: `cfg.contexts` generated attackers, each linked
/// against the component and executed in enforcement mode. Deterministic
/// in (component, seed, contexts, fuel).
pub fn rsp_run(component: &Component, cfg: &RspConfig) -> RspReport {
    let interface = interface_of(&component.module.module);
    let mut reports = Vec::with_capacity(cfg.contexts as usize);
    for idx in 0..cfg.contexts {
        let (ctx_module, features) = gen_context(&component.id, &interface, cfg.seed, idx);
        let ctx_typed = match validate(&ctx_module) {
            Ok(t) => t,
            Err(errs) => {
                reports.push(ContextReport {
                    id: idx,
                    outcome: format!("link-error:context failed validation: {}", errs[0]),
                    charged: None,
                    leaks: vec![],
                    features,
                });
                continue;
            }
        };
        let ctx_id = ctx_typed.module.id.clone();
        let program = match link(&[component.module.clone(), ctx_typed]) {
            Ok(p) => p,
            Err(e) => {
                reports.push(ContextReport {
                    id: idx,
                    outcome: format!("link-error:{e}"),
                    charged: None,
                    leaks: vec![],
                    features,
                });
                continue;
            }
        };
        let config = RunConfig {
            mode: Mode::Enforce,
            addr_mode: AddrMode::Fresh,
            fuel: cfg.fuel,
            shadow_module: None,
        };
        let outcome = match run(&program, &ctx_id, "main", &[], &config) {
            Ok(o) => o,
            Err(e) => {
                reports.push(ContextReport {
                    id: idx,
                    outcome: format!("link-error:{e}"),
                    charged: None,
                    leaks: vec![],
                    features,
                });
                continue;
            }
        };
        reports.push(ContextReport {
            id: idx,
            outcome: outcome_token(&outcome),
            charged: charge(&component.id, &outcome.trace),
            leaks: leak_audit(&component.id, &outcome),
            features,
        });
    }
    RspReport {
        component: component.id.clone(),
        seed: cfg.seed,
        contexts: reports,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TIGHT: &str = "
        export int sum_to(int n) {
            int total = 0;
            ptr p = malloc(4);
            int i = 0;
            if (n > 4) { n = 4; }
            while (i < n) {
                p[i] = i + 1;
                i = i + 1;
            }
            i = 0;
            while (i < n) {
                total = total + p[i];
                i = i + 1;
            }
            free(p);
            return total;
        }

        export int scale(int x, int k) {
            return x * k;
        }
    ";

    const EXPOSING: &str = "
        export ptr make_buf(int n) {
            if (n < 1) { n = 1; }
            if (n > 8) { n = 8; }
            ptr p = malloc(n);
            int i = 0;
            while (i < n) {
                p[i] = i;
                i = i + 1;
            }
            return p;
        }

        export int read_at(ptr p, int i) {
            return p[i];
        }

        export int drop_buf(ptr p) {
            free(p);
            return 0;
        }
    ";

    #[test]
    fn a_handle_free_component_survives_every_context() {
        let comp = Component::from_source("tight", TIGHT).unwrap();
        let report = rsp_run(&comp, &RspConfig {
            contexts: 120,
            seed: 9,
            fuel: crate::interp::DEFAULT_FUEL,
        });
        assert!(report.holds(), "charged: {:?}", report.violations());
        assert!(report.leaks().is_empty());
        assert!(report
            .contexts
            .iter()
            .all(|c| !c.outcome.starts_with("link-error")));
    }

    #[test]
    fn context_self_harm_traps_without_charging_the_component() {
        let comp = Component::from_source("tight", TIGHT).unwrap();
        let report = rsp_run(&comp, &RspConfig {
            contexts: 200,
            seed: 9,
            fuel: crate::interp::DEFAULT_FUEL,
        });
        let harmed: Vec<_> = report
            .contexts
            .iter()
            .filter(|c| {
                c.features
                    .iter()
                    .any(|f| *f == "self-double-free" || *f == "self-dangling-access")
            })
            .collect();
        assert!(!harmed.is_empty());
        for ctx in harmed {
            assert!(ctx.outcome.starts_with("trap:"), "{}", ctx.outcome);
            assert!(ctx.charged.is_none());
        }
    }

    #[test]
    fn a_handle_exposing_component_gets_charged_and_leaks() {
        let comp = Component::from_source("expose", EXPOSING).unwrap();
        let report = rsp_run(&comp, &RspConfig {
            contexts: 200,
            seed: 9,
            fuel: crate::interp::DEFAULT_FUEL,
        });
        assert!(!report.holds());
        assert!(!report.leaks().is_empty());
    }

    #[test]
    fn charging_is_prefix_monotone() {
        let comp = Component::from_source("expose", EXPOSING).unwrap();
        let report = rsp_run(&comp, &RspConfig {
            contexts: 200,
            seed: 9,
            fuel: crate::interp::DEFAULT_FUEL,
        });
        let victim = report
            .contexts
            .iter()
            .find(|c| c.charged.is_some())
            .expect("no charged context to replay");

        let interface = interface_of(&comp.module.module);
        let (ctx_module, _) = gen_context("expose", &interface, 9, victim.id);
        let ctx_typed = validate(&ctx_module).unwrap();
        let program = link(&[comp.module.clone(), ctx_typed]).unwrap();
        let outcome = run(
            &program,
            &format!("ctx{}", victim.id),
            "main",
            &[],
            &RunConfig::default(),
        )
        .unwrap();

        let mut seen_charged = false;
        for cut in 0..=outcome.trace.len() {
            let now = charge("expose", &outcome.trace[..cut]).is_some();
            assert!(!seen_charged || now, "charge retracted at prefix {cut}");
            seen_charged = now;
        }
        assert!(seen_charged);
    }

    #[test]
    fn reports_are_deterministic_for_a_seed() {
        let comp = Component::from_source("tight", TIGHT).unwrap();
        let cfg = RspConfig {
            contexts: 40,
            seed: 77,
            fuel: crate::interp::DEFAULT_FUEL,
        };
        let a = rsp_run(&comp, &cfg);
        let b = rsp_run(&comp, &cfg);
        let outcomes_a: Vec<_> = a.contexts.iter().map(|c| c.outcome.clone()).collect();
        let outcomes_b: Vec<_> = b.contexts.iter().map(|c| c.outcome.clone()).collect();
        assert_eq!(outcomes_a, outcomes_b);
    }
}
