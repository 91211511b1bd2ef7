//! Property tests over the pipeline's structural invariants, driven by
//! the program fuzzer and the context generator so the inputs are real
//! modules and real traces rather than synthetic corner cases.

use proptest::prelude::*;

use mswasm_core::interp::{link, run, Mode, RunConfig, RunOutcome};
use mswasm_core::ir::{parse_module, serialize_module, validate, ValType};
use mswasm_core::minic::{build_module, fuzz, Backend};
use mswasm_core::monitors::{check, check_incremental, MonitorState, Policy};
use mswasm_core::robustness::{gen_context, ExportSig};
use mswasm_core::trace::{parse_json_lines, to_json_lines};

fn backend_from(which: u8) -> Backend {
    match which % 3 {
        0 => Backend::Safe,
        1 => Backend::Unsafe,
        _ => Backend::UnsafeReuse,
    }
}

fn run_fuzzed(seed: u64, backend: Backend, buggy: bool) -> RunOutcome {
    let src = if buggy {
        fuzz::generate_buggy(seed)
    } else {
        fuzz::generate(seed)
    };
    let module = build_module(&src, "fuzzed", backend).expect("fuzzed programs compile");
    let program = link(&[module]).expect("single module links");
    let config = RunConfig {
        mode: Mode::Observe,
        shadow_module: backend.is_unsafe().then(|| "fuzzed".to_string()),
        ..RunConfig::default()
    };
    run(&program, "fuzzed", "main", &[1], &config).expect("entry exists")
}

fn handle_interface() -> Vec<ExportSig> {
    vec![
        ExportSig {
            name: "get_buf".into(),
            params: vec![ValType::I32],
            result: Some(ValType::Handle),
        },
        ExportSig {
            name: "read_it".into(),
            params: vec![ValType::Handle, ValType::I32],
            result: Some(ValType::I32),
        },
        ExportSig {
            name: "nudge".into(),
            params: vec![ValType::I64],
            result: None,
        },
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn compiled_modules_reparse_identically(seed in any::<u64>(), which in 0u8..3) {
        let backend = backend_from(which);
        let typed = build_module(&fuzz::generate(seed), "fuzzed", backend)
            .expect("fuzzed programs compile");
        let reparsed = parse_module(&serialize_module(&typed.module))
            .expect("serialized modules reparse");
        prop_assert_eq!(reparsed.module, typed.module);
    }

    #[test]
    fn generated_contexts_reparse_identically(seed in any::<u64>(), idx in 0u32..64) {
        let (module, _) = gen_context("comp", &handle_interface(), seed, idx);
        prop_assert!(validate(&module).is_ok());
        let reparsed = parse_module(&serialize_module(&module))
            .expect("serialized contexts reparse");
        prop_assert_eq!(reparsed.module, module);
    }

    #[test]
    fn traces_survive_json_round_trip(seed in any::<u64>(), which in 0u8..3, buggy in any::<bool>()) {
        let outcome = run_fuzzed(seed, backend_from(which), buggy);
        let rendered = to_json_lines(&outcome.trace);
        let parsed = parse_json_lines(&rendered).expect("rendered traces reparse");
        prop_assert_eq!(parsed, outcome.trace);
    }

    #[test]
    fn batch_and_incremental_verdicts_agree(seed in any::<u64>(), buggy in any::<bool>()) {
        let outcome = run_fuzzed(seed, Backend::Safe, buggy);
        for policy in Policy::ALL {
            let batch = check(policy, &outcome.trace).expect("machine traces are consistent");
            let folded = check_incremental(policy, &outcome.trace).expect("consistent");
            prop_assert_eq!(batch, folded, "{} disagreed", policy);
        }
    }

    #[test]
    fn prefix_folding_matches_fresh_replay(seed in any::<u64>()) {
        let outcome = run_fuzzed(seed, Backend::Safe, true);
        for policy in Policy::ALL {
            let mut state = MonitorState::new(policy);
            for cut in 1..=outcome.trace.len() {
                state.step(&outcome.trace[cut - 1]);
                let folded = state.verdict().expect("consistent");
                let fresh = check_incremental(policy, &outcome.trace[..cut]).expect("consistent");
                prop_assert_eq!(folded, fresh, "{} diverged at prefix {}", policy, cut);
            }
        }
    }

    #[test]
    fn identical_runs_are_byte_identical(seed in any::<u64>(), which in 0u8..3) {
        let a = run_fuzzed(seed, backend_from(which), true);
        let b = run_fuzzed(seed, backend_from(which), true);
        prop_assert_eq!(to_json_lines(&a.trace), to_json_lines(&b.trace));
        prop_assert_eq!(a.prints, b.prints);
        prop_assert_eq!(
            format!("{:?}", a.result),
            format!("{:?}", b.result)
        );
    }
}
