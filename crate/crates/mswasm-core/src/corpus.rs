//! Bug corpus: small source programs paired with pinned outcome matrices.
//!
//! Each entry is a directory holding `prog.minic` and `expected.toml`. The
//! toml file names the entry point and arguments, then lists runs, each a
//! (backend, mode) combination with the expected run outcome and, per
//! policy, the expected monitor verdict over the run's trace:
//!
//! ```toml
//! entry = "main"
//! args = []
//!
//! [[run]]
//! backend = "safe"            # safe | unsafe | unsafe-reuse
//! mode = "enforce"            # enforce | observe
//! alloc = "fresh"             # fresh | reuse, optional
//! outcome = "trap:use-after-free"
//! prints = []                 # optional, exact print sequence
//!
//! [run.monitor]
//! full = "violation:use-after-free"
//! relaxed-temporal = "safe"
//! ```
//!
//! Outcome tokens are `ok` (completed, no result), `ok:<value>`, or
//! `trap:<kind>`. Monitor tokens are `safe`, `violation:<kind>`, or
//! `invalid-trace`. Unsafe-backend runs shadow the module so the monitors
//! see the logical allocation story.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::interp::{link, run, AddrMode, Mode, RunConfig, RunOutcome, Value, DEFAULT_FUEL};
use crate::minic::{build_module, Backend};
use crate::monitors::{check as check_policy, Policy, Verdict};

#[derive(Debug, Clone)]
pub struct CorpusError {
    /// Entry the problem is in, if past discovery.
    pub entry: Option<String>,
    pub msg: String,
}

impl fmt::Display for CorpusError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.entry {
            Some(name) => write!(f, "{name}: {}", self.msg),
            None => f.write_str(&self.msg),
        }
    }
}

impl std::error::Error for CorpusError {}

/// One (backend, mode) row of an entry's expectation matrix.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub backend: Backend,
    pub mode: Mode,
    pub alloc: AddrMode,
    pub outcome: String,
    pub prints: Option<Vec<i32>>,
    pub monitor: Vec<(Policy, String)>,
}

impl RunSpec {
    pub fn label(&self) -> String {
        format!("{}/{}", self.backend, self.mode)
    }
}

#[derive(Debug, Clone)]
pub struct CorpusEntry {
    pub name: String,
    pub source: String,
    pub entry: String,
    pub args: Vec<i32>,
    pub runs: Vec<RunSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExpectedFile {
    entry: Option<String>,
    #[serde(default)]
    args: Vec<i32>,
    #[serde(rename = "run")]
    runs: Vec<RawRun>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    backend: String,
    mode: String,
    alloc: Option<String>,
    outcome: String,
    prints: Option<Vec<i32>>,
    #[serde(default)]
    monitor: BTreeMap<String, String>,
}

fn parse_spec(raw: RawRun, entry: &str) -> Result<RunSpec, CorpusError> {
    let err = |msg: String| CorpusError {
        entry: Some(entry.to_string()),
        msg,
    };
    let backend: Backend = raw.backend.parse().map_err(err)?;
    let mode: Mode = raw.mode.parse().map_err(err)?;
    let alloc: AddrMode = raw
        .alloc
        .as_deref()
        .unwrap_or("fresh")
        .parse()
        .map_err(err)?;
    let mut monitor = Vec::new();
    for (policy, token) in raw.monitor {
        let policy: Policy = policy.parse().map_err(err)?;
        if token != "safe"
            && token != "invalid-trace"
            && !token.starts_with("violation:")
        {
            return Err(err(format!("unknown monitor token `{token}`")));
        }
        monitor.push((policy, token));
    }
    Ok(RunSpec {
        backend,
        mode,
        alloc,
        outcome: raw.outcome,
        prints: raw.prints,
        monitor,
    })
}

/// Load every entry under `dir`, sorted by name.
pub fn load_dir(dir: &Path) -> Result<Vec<CorpusEntry>, CorpusError> {
    let fail = |msg: String| CorpusError { entry: None, msg };
    let mut names = Vec::new();
    for item in fs::read_dir(dir).map_err(|e| fail(format!("{}: {e}", dir.display())))? {
        let item = item.map_err(|e| fail(e.to_string()))?;
        if item.path().is_dir() {
            names.push(item.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    if names.is_empty() {
        return Err(fail(format!("no corpus entries under {}", dir.display())));
    }
    names.iter().map(|name| load_entry(dir, name)).collect()
}

fn load_entry(dir: &Path, name: &str) -> Result<CorpusEntry, CorpusError> {
    let fail = |msg: String| CorpusError {
        entry: Some(name.to_string()),
        msg,
    };
    let base = dir.join(name);
    let source =
        fs::read_to_string(base.join("prog.minic")).map_err(|e| fail(format!("prog.minic: {e}")))?;
    let toml_text = fs::read_to_string(base.join("expected.toml"))
        .map_err(|e| fail(format!("expected.toml: {e}")))?;
    let raw: ExpectedFile =
        toml::from_str(&toml_text).map_err(|e| fail(format!("expected.toml: {e}")))?;
    let runs = raw
        .runs
        .into_iter()
        .map(|r| parse_spec(r, name))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CorpusEntry {
        name: name.to_string(),
        source,
        entry: raw.entry.unwrap_or_else(|| "main".to_string()),
        args: raw.args,
        runs,
    })
}

/// Compile the entry for one row and run it.
pub fn execute(entry: &CorpusEntry, spec: &RunSpec) -> Result<RunOutcome, CorpusError> {
    let fail = |msg: String| CorpusError {
        entry: Some(entry.name.clone()),
        msg,
    };
    let module =
        build_module(&entry.source, &entry.name, spec.backend).map_err(|e| fail(e.to_string()))?;
    let program = link(&[module]).map_err(|e| fail(e.to_string()))?;
    let config = RunConfig {
        mode: spec.mode,
        addr_mode: spec.alloc,
        fuel: DEFAULT_FUEL,
        shadow_module: spec.backend.is_unsafe().then(|| entry.name.clone()),
    };
    run(&program, &entry.name, &entry.entry, &entry.args, &config).map_err(|e| fail(e.to_string()))
}

pub fn outcome_token(outcome: &RunOutcome) -> String {
    match &outcome.result {
        Ok(None) => "ok".to_string(),
        Ok(Some(Value::I32(v))) => format!("ok:{v}"),
        Ok(Some(v)) => format!("ok:{v}"),
        Err(trap) => format!("trap:{}", trap.kind.name()),
    }
}

pub fn verdict_token(policy: Policy, outcome: &RunOutcome) -> String {
    match check_policy(policy, &outcome.trace) {
        Err(_) => "invalid-trace".to_string(),
        Ok(Verdict::Safe) => "safe".to_string(),
        Ok(Verdict::Violation(v)) => format!("violation:{}", v.kind.name()),
    }
}

/// One expected-vs-actual comparison within an entry.
#[derive(Debug, Clone)]
pub struct Check {
    pub label: String,
    pub expected: String,
    pub actual: String,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.expected == self.actual
    }
}

#[derive(Debug, Clone)]
pub struct EntryReport {
    pub name: String,
    pub checks: Vec<Check>,
}

impl EntryReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed())
    }
}

/// Run every row of an entry's matrix and compare against expectations.
pub fn run_entry(entry: &CorpusEntry) -> Result<EntryReport, CorpusError> {
    let mut checks = Vec::new();
    for spec in &entry.runs {
        let outcome = execute(entry, spec)?;
        checks.push(Check {
            label: format!("{} outcome", spec.label()),
            expected: spec.outcome.clone(),
            actual: outcome_token(&outcome),
        });
        if let Some(expected) = &spec.prints {
            checks.push(Check {
                label: format!("{} prints", spec.label()),
                expected: format!("{expected:?}"),
                actual: format!("{:?}", outcome.prints),
            });
        }
        for (policy, expected) in &spec.monitor {
            checks.push(Check {
                label: format!("{} monitor {policy}", spec.label()),
                expected: expected.clone(),
                actual: verdict_token(*policy, &outcome),
            });
        }
    }
    Ok(EntryReport {
        name: entry.name.clone(),
        checks,
    })
}
