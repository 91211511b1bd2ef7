//! Known-exploit witnesses for the robustness harness.
//!
//! Fuzzing that finds nothing is only evidence if the harness can find
//! something. A witness catalog pairs a deliberately exposing component
//! with a hand-written attacking context and the violation the pair must
//! produce. Checking the catalog proves the detection path end to end:
//! the linked run traps, the full-policy monitor names the right
//! violation, and the charging predicate pins it on the component.
//!
//! Catalog format (`catalog.toml` next to the `.minic` files):
//!
//! ```toml
//! [[witness]]
//! name = "dangling-read-through-exposed-api"
//! component = "expose.minic"
//! context = "ctx_uaf.minic"
//! kind = "use-after-free"
//! # alloc = "reuse"   (optional, defaults to fresh)
//! ```

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;

use crate::interp::{link, run, AddrMode, Mode, RunConfig};
use crate::minic::{build_module, Backend};

use super::{charge, RspError};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCatalog {
    #[serde(rename = "witness")]
    witnesses: Vec<RawWitness>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWitness {
    name: String,
    component: String,
    context: String,
    kind: String,
    alloc: Option<String>,
}

#[derive(Debug, Clone)]
pub struct WitnessEntry {
    pub name: String,
    /// Component source file, relative to the catalog directory.
    pub component: String,
    /// Context source file, relative to the catalog directory.
    pub context: String,
    /// Violation kind token the full-policy monitor must report.
    pub kind: String,
    pub alloc: AddrMode,
}

#[derive(Debug)]
pub struct WitnessCatalog {
    pub dir: PathBuf,
    pub entries: Vec<WitnessEntry>,
}

pub fn load_catalog(dir: &Path) -> Result<WitnessCatalog, RspError> {
    let path = dir.join("catalog.toml");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| RspError(format!("read {}: {e}", path.display())))?;
    let raw: RawCatalog =
        toml::from_str(&text).map_err(|e| RspError(format!("{}: {e}", path.display())))?;
    if raw.witnesses.is_empty() {
        return Err(RspError(format!("{}: no witnesses", path.display())));
    }
    let mut entries = Vec::with_capacity(raw.witnesses.len());
    for w in raw.witnesses {
        let alloc = match w.alloc.as_deref() {
            None => AddrMode::Fresh,
            Some(tok) => AddrMode::from_str(tok)
                .map_err(|e| RspError(format!("witness {}: {e}", w.name)))?,
        };
        entries.push(WitnessEntry {
            name: w.name,
            component: w.component,
            context: w.context,
            kind: w.kind,
            alloc,
        });
    }
    Ok(WitnessCatalog {
        dir: dir.to_path_buf(),
        entries,
    })
}

#[derive(Debug)]
pub struct WitnessResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug)]
pub struct WitnessReport {
    pub results: Vec<WitnessResult>,
}

impl WitnessReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn failures(&self) -> Vec<&WitnessResult> {
        self.results.iter().filter(|r| !r.passed).collect()
    }
}

fn module_id(file: &str) -> Result<String, RspError> {
    Path::new(file)
        .file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_string)
        .ok_or_else(|| RspError(format!("bad source file name {file}")))
}

fn check_entry(dir: &Path, entry: &WitnessEntry) -> Result<String, String> {
    let comp_id = module_id(&entry.component).map_err(|e| e.to_string())?;
    let ctx_id = module_id(&entry.context).map_err(|e| e.to_string())?;
    let read = |file: &str| {
        std::fs::read_to_string(dir.join(file)).map_err(|e| format!("read {file}: {e}"))
    };
    let comp = build_module(&read(&entry.component)?, &comp_id, Backend::Safe)
        .map_err(|e| format!("component: {e}"))?;
    let ctx = build_module(&read(&entry.context)?, &ctx_id, Backend::Safe)
        .map_err(|e| format!("context: {e}"))?;
    let program = link(&[comp, ctx]).map_err(|e| format!("link: {e}"))?;
    let config = RunConfig {
        mode: Mode::Enforce,
        addr_mode: entry.alloc,
        ..RunConfig::default()
    };
    let outcome =
        run(&program, &ctx_id, "main", &[], &config).map_err(|e| format!("run: {e}"))?;
    let trap = match &outcome.result {
        Err(t) => t,
        Ok(v) => return Err(format!("run finished with {v:?} instead of trapping")),
    };
    match charge(&comp_id, &outcome.trace) {
        None => Err(format!(
            "trap {} but no violation charged to {comp_id}",
            trap.kind.name()
        )),
        Some(v) if v.kind.name() == entry.kind => Ok(format!(
            "trap {}, charged {} at event {}",
            trap.kind.name(),
            v.kind.name(),
            v.event_idx
        )),
        Some(v) => Err(format!(
            "expected {} but the monitor charged {}",
            entry.kind,
            v.kind.name()
        )),
    }
}

pub fn check_catalog(catalog: &WitnessCatalog) -> WitnessReport {
    let results = catalog
        .entries
        .iter()
        .map(|entry| match check_entry(&catalog.dir, entry) {
            Ok(detail) => WitnessResult {
                name: entry.name.clone(),
                passed: true,
                detail,
            },
            Err(detail) => WitnessResult {
                name: entry.name.clone(),
                passed: false,
                detail,
            },
        })
        .collect();
    WitnessReport { results }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn witness_dir() -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../../witnesses")
    }

    #[test]
    fn the_shipped_catalog_detects_every_witness() {
        let catalog = load_catalog(&witness_dir()).unwrap();
        assert!(catalog.entries.len() >= 4);
        let report = check_catalog(&catalog);
        for r in &report.results {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
    }

    #[test]
    fn the_catalog_covers_distinct_violation_kinds() {
        let catalog = load_catalog(&witness_dir()).unwrap();
        let mut kinds: Vec<&str> = catalog.entries.iter().map(|e| e.kind.as_str()).collect();
        kinds.sort_unstable();
        kinds.dedup();
        assert!(kinds.len() >= 4, "kinds: {kinds:?}");
    }

    #[test]
    fn a_wrong_expected_kind_fails_with_both_kinds_named() {
        let catalog = load_catalog(&witness_dir()).unwrap();
        let mut entry = catalog.entries[0].clone();
        entry.kind = "spatial-oob".to_string();
        if catalog.entries[0].kind == "spatial-oob" {
            entry.kind = "double-free".to_string();
        }
        let doctored = WitnessCatalog {
            dir: catalog.dir.clone(),
            entries: vec![entry.clone()],
        };
        let report = check_catalog(&doctored);
        assert!(!report.passed());
        let detail = &report.results[0].detail;
        assert!(detail.contains(&entry.kind), "{detail}");
    }

    #[test]
    fn a_missing_catalog_is_a_load_error() {
        let err = load_catalog(Path::new("/nonexistent-dir")).unwrap_err();
        assert!(err.to_string().contains("catalog.toml"));
    }
}
