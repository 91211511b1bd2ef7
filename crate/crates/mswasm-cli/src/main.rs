//! Command line front end: compile MiniC, run linked modules, replay
//! traces through the monitors, and drive the batch checks.
//!
//! Exit codes are part of the interface. `run` exits 0 on success, 1 on
//! a trap, 2 on usage or link problems. `monitor` exits 0 for SAFE, 3
//! for VIOLATION, 2 for an inconsistent trace. The batch subcommands
//! (`lattice`, `robust`, `corpus`) exit 0 exactly when everything they
//! checked held. Every run prints its effective configuration, seeds
//! included, so output can be reproduced from the output alone.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mswasm_core::corpus;
use mswasm_core::interp::{link, run, AddrMode, Mode, RunConfig, DEFAULT_FUEL};
use mswasm_core::ir::{parse_module, serialize_module, validate, TypedModule};
use mswasm_core::minic::{build_module, Backend};
use mswasm_core::monitors::{check, check_lattice, EnumParams, Policy, Verdict};
use mswasm_core::robustness::{check_catalog, load_catalog, rsp_run, Component, RspConfig};
use mswasm_core::trace::{parse_json_lines, to_json_lines};

#[derive(Parser)]
#[command(name = "mswasm", version, about = "Segment-memory WebAssembly toolchain")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compile a MiniC source file to a module text file.
    Compile {
        /// MiniC source path; the file stem becomes the module id.
        src: PathBuf,
        /// Code generator: safe, unsafe, or unsafe-reuse.
        #[arg(long, default_value = "safe")]
        backend: String,
        /// Output path; stdout when omitted.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Link modules and execute an exported function.
    Run {
        /// Module files: .mswat module text or .minic source.
        #[arg(required = true)]
        modules: Vec<PathBuf>,
        /// Exported function to call, optionally qualified as module:name.
        #[arg(long, default_value = "main")]
        entry: String,
        /// Integer arguments for the entry function.
        #[arg(long, num_args = 0.., allow_negative_numbers = true)]
        args: Vec<i32>,
        /// enforce traps on the first bad access; observe records and continues.
        #[arg(long, default_value = "enforce")]
        mode: String,
        /// fresh never reuses addresses; reuse recycles exact-size frees.
        #[arg(long, default_value = "fresh")]
        alloc: String,
        /// Backend for .minic inputs.
        #[arg(long, default_value = "safe")]
        backend: String,
        /// Module whose flat heap gets shadow allocation tracking.
        #[arg(long)]
        shadow: Option<String>,
        /// Write the event trace to this file as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Instruction budget.
        #[arg(long, default_value_t = DEFAULT_FUEL)]
        fuel: u64,
    },
    /// Replay a trace file through a safety monitor.
    Monitor {
        /// Trace file in JSON lines form.
        trace: PathBuf,
        /// full, relaxed-temporal, spatial, pointer-integrity, or data-integrity.
        #[arg(long, default_value = "full")]
        policy: String,
    },
    /// Enumerate every store-consistent trace and check the policy orderings.
    Lattice {
        #[arg(long, default_value_t = 5)]
        max_len: usize,
        #[arg(long, default_value_t = 2)]
        colors: u32,
        #[arg(long, default_value_t = 4)]
        addrs: i64,
        #[arg(long, default_value_t = 2)]
        sizes: u32,
    },
    /// Fuzz typed attacker contexts against a component.
    Robust {
        /// Component source (.minic), compiled with the safe backend.
        #[arg(long)]
        component: PathBuf,
        #[arg(long, default_value_t = 200)]
        contexts: u32,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_FUEL)]
        fuel: u64,
        /// Also check a witness catalog directory.
        #[arg(long)]
        witnesses: Option<PathBuf>,
    },
    /// Run every corpus entry against its expected.toml matrix.
    Corpus {
        #[arg(long, default_value = "corpus")]
        dir: PathBuf,
    },
}

fn main() -> ExitCode {
    match Cli::parse().cmd {
        Cmd::Compile { src, backend, out } => cmd_compile(&src, &backend, out.as_deref()),
        Cmd::Run {
            modules,
            entry,
            args,
            mode,
            alloc,
            backend,
            shadow,
            trace,
            fuel,
        } => cmd_run(&modules, &entry, &args, &mode, &alloc, &backend, shadow, trace.as_deref(), fuel),
        Cmd::Monitor { trace, policy } => cmd_monitor(&trace, &policy),
        Cmd::Lattice {
            max_len,
            colors,
            addrs,
            sizes,
        } => cmd_lattice(max_len, colors, addrs, sizes),
        Cmd::Robust {
            component,
            contexts,
            seed,
            fuel,
            witnesses,
        } => cmd_robust(&component, contexts, seed, fuel, witnesses.as_deref()),
        Cmd::Corpus { dir } => cmd_corpus(&dir),
    }
}

const USAGE: u8 = 2;

fn fail(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(USAGE)
}

fn parse_flag<T>(what: &str, token: &str) -> Result<T, String>
where
    T: std::str::FromStr<Err = String>,
{
    token.parse().map_err(|e| format!("{what}: {e}"))
}

fn module_id_of(path: &Path) -> Result<String, String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_string)
        .ok_or_else(|| format!("cannot derive a module id from {}", path.display()))
}

/// Read one module: `.minic` is compiled, everything else is parsed as
/// module text and revalidated.
fn load_module(path: &Path, backend: Backend) -> Result<TypedModule, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    if path.extension().and_then(|e| e.to_str()) == Some("minic") {
        let id = module_id_of(path)?;
        build_module(&text, &id, backend).map_err(|e| format!("{}: {e}", path.display()))
    } else {
        let parsed = parse_module(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        validate(&parsed.module).map_err(|errs| format!("{}: {}", path.display(), errs[0]))
    }
}

fn cmd_compile(src: &Path, backend: &str, out: Option<&Path>) -> ExitCode {
    let backend: Backend = match parse_flag("--backend", backend) {
        Ok(b) => b,
        Err(e) => return fail(e),
    };
    let typed = match load_module(src, backend) {
        Ok(t) => t,
        Err(e) => return fail(e),
    };
    let text = serialize_module(&typed.module);
    match out {
        None => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Some(path) => match std::fs::write(path, text) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => fail(format!("{}: {e}", path.display())),
        },
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_run(
    modules: &[PathBuf],
    entry: &str,
    args: &[i32],
    mode: &str,
    alloc: &str,
    backend: &str,
    shadow: Option<String>,
    trace_out: Option<&Path>,
    fuel: u64,
) -> ExitCode {
    let mode: Mode = match parse_flag("--mode", mode) {
        Ok(m) => m,
        Err(e) => return fail(e),
    };
    let alloc: AddrMode = match parse_flag("--alloc", alloc) {
        Ok(a) => a,
        Err(e) => return fail(e),
    };
    let backend: Backend = match parse_flag("--backend", backend) {
        Ok(b) => b,
        Err(e) => return fail(e),
    };
    let mut typed = Vec::new();
    for path in modules {
        match load_module(path, backend) {
            Ok(t) => typed.push(t),
            Err(e) => return fail(e),
        }
    }
    let program = match link(&typed) {
        Ok(p) => p,
        Err(e) => return fail(e),
    };
    let (entry_module, entry_func) = match entry.split_once(':') {
        Some((m, f)) => (m.to_string(), f.to_string()),
        None => {
            let mut owners: Vec<&str> = program
                .exports
                .keys()
                .filter(|(_, name)| name == entry)
                .map(|(module, _)| module.as_str())
                .collect();
            owners.sort_unstable();
            match owners.as_slice() {
                [] => return fail(format!("no module exports `{entry}`")),
                [one] => (one.to_string(), entry.to_string()),
                many => {
                    return fail(format!(
                        "`{entry}` is exported by {}; qualify as module:{entry}",
                        many.join(", ")
                    ))
                }
            }
        }
    };
    let config = RunConfig {
        mode,
        addr_mode: alloc,
        fuel,
        shadow_module: shadow,
    };
    let args_str = args
        .iter()
        .map(|a| a.to_string())
        .collect::<Vec<_>>()
        .join(",");
    println!(
        "# entry={entry_module}:{entry_func} mode={mode} alloc={alloc} fuel={fuel} args=[{args_str}]"
    );
    let outcome = match run(&program, &entry_module, &entry_func, args, &config) {
        Ok(o) => o,
        Err(e) => return fail(e),
    };
    if let Some(path) = trace_out {
        if let Err(e) = std::fs::write(path, to_json_lines(&outcome.trace)) {
            return fail(format!("{}: {e}", path.display()));
        }
    }
    for v in &outcome.prints {
        println!("{v}");
    }
    println!("{}", corpus::outcome_token(&outcome));
    if outcome.result.is_err() {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}

fn invalid_trace_line(e: &mswasm_core::trace::TraceError) -> String {
    match e.at {
        Some(i) => format!("INVALID TRACE at event {i}: {}", e.msg),
        None => format!("INVALID TRACE: {}", e.msg),
    }
}

fn cmd_monitor(trace_path: &Path, policy: &str) -> ExitCode {
    let policy: Policy = match parse_flag("--policy", policy) {
        Ok(p) => p,
        Err(e) => return fail(e),
    };
    let text = match std::fs::read_to_string(trace_path) {
        Ok(t) => t,
        Err(e) => return fail(format!("{}: {e}", trace_path.display())),
    };
    let events = match parse_json_lines(&text) {
        Ok(ev) => ev,
        Err(e) => {
            println!("{}", invalid_trace_line(&e));
            return ExitCode::from(USAGE);
        }
    };
    match check(policy, &events) {
        Ok(Verdict::Safe) => {
            println!("SAFE");
            ExitCode::SUCCESS
        }
        Ok(Verdict::Violation(v)) => {
            println!("VIOLATION {:?} at {} color {}", v.kind, v.event_idx, v.color);
            ExitCode::from(3)
        }
        Err(e) => {
            println!("{}", invalid_trace_line(&e));
            ExitCode::from(USAGE)
        }
    }
}

fn cmd_lattice(max_len: usize, colors: u32, addrs: i64, sizes: u32) -> ExitCode {
    println!("# max-len={max_len} colors={colors} addrs={addrs} sizes={sizes}");
    let params = EnumParams {
        max_len,
        colors,
        addrs,
        max_size: sizes,
    };
    let report = match check_lattice(&params) {
        Ok(r) => r,
        Err(e) => return fail(e),
    };
    println!("traces {}", report.traces_checked);
    let [full, relaxed, spatial, integrity] = report.violation_counts;
    println!(
        "rejected full={full} relaxed-temporal={relaxed} spatial={spatial} data-integrity={integrity}"
    );
    let witness = |w: &Option<Vec<_>>| if w.is_some() { "found" } else { "missing" };
    println!(
        "strictness full>relaxed-temporal={} relaxed-temporal>spatial={} full>data-integrity={}",
        witness(&report.strict_full_over_relaxed),
        witness(&report.strict_relaxed_over_spatial),
        witness(&report.strict_full_over_integrity),
    );
    for c in &report.counterexamples {
        println!("counterexample {c}");
    }
    println!("{} counterexamples", report.counterexamples.len());
    if report.holds() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn cmd_robust(
    component: &Path,
    contexts: u32,
    seed: u64,
    fuel: u64,
    witnesses: Option<&Path>,
) -> ExitCode {
    let comp = match Component::from_file(component) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    println!(
        "# component={} contexts={contexts} seed={seed} fuel={fuel}",
        comp.id
    );
    let report = rsp_run(&comp, &RspConfig {
        contexts,
        seed,
        fuel,
    });
    let mut ok = 0u32;
    let mut traps = 0u32;
    let mut link_errors = 0u32;
    for ctx in &report.contexts {
        let charged = match &ctx.charged {
            None => "-".to_string(),
            Some(v) => format!("{}@{}", v.kind.name(), v.event_idx),
        };
        println!(
            "ctx {} outcome={} charged={charged} leaks={}",
            ctx.id,
            ctx.outcome,
            ctx.leaks.len()
        );
        if ctx.outcome.starts_with("ok") {
            ok += 1;
        } else if ctx.outcome.starts_with("trap") {
            traps += 1;
        } else {
            link_errors += 1;
        }
    }
    let violations = report.violations().len();
    let leaks = report.leaks().len();
    println!(
        "summary contexts={contexts} ok={ok} traps={traps} link-errors={link_errors} violations={violations} leaks={leaks}"
    );
    let mut witnesses_ok = true;
    if let Some(dir) = witnesses {
        let catalog = match load_catalog(dir) {
            Ok(c) => c,
            Err(e) => return fail(e),
        };
        let witness_report = check_catalog(&catalog);
        for r in &witness_report.results {
            println!(
                "witness {} {} ({})",
                r.name,
                if r.passed { "PASS" } else { "FAIL" },
                r.detail
            );
        }
        println!(
            "witnesses {}/{} pass",
            witness_report.results.iter().filter(|r| r.passed).count(),
            witness_report.results.len()
        );
        witnesses_ok = witness_report.passed();
    }
    if violations == 0 && witnesses_ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn cmd_corpus(dir: &Path) -> ExitCode {
    let entries = match corpus::load_dir(dir) {
        Ok(e) => e,
        Err(e) => return fail(e),
    };
    println!("# dir={} entries={}", dir.display(), entries.len());
    let mut all_passed = true;
    for entry in &entries {
        let report = match corpus::run_entry(entry) {
            Ok(r) => r,
            Err(e) => return fail(e),
        };
        if report.passed() {
            println!("{} PASS", report.name);
        } else {
            all_passed = false;
            println!("{} FAIL", report.name);
            for check in report.failures() {
                println!(
                    "  {}: expected {}, got {}",
                    check.label, check.expected, check.actual
                );
            }
        }
    }
    if all_passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
