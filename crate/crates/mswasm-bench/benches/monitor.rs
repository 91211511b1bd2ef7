//! Monitor replay cost per policy over a long machine-generated trace,
//! plus the consistency audit on its own.

use criterion::{criterion_group, criterion_main, Criterion, Throughput};

use mswasm_core::interp::{link, run, Mode, RunConfig};
use mswasm_core::minic::{build_module, Backend};
use mswasm_core::monitors::{check, Policy};
use mswasm_core::trace::{audit, Event};

const CHURN: &str = "
    export int main(int n) {
        int last = 0;
        int i = 0;
        while (i < n) {
            ptr p = malloc(6);
            int j = 0;
            while (j < 6) {
                p[j] = i + j;
                j = j + 1;
            }
            last = p[0] + p[5];
            free(p);
            i = i + 1;
        }
        return last;
    }
";

fn churn_trace(rounds: i32) -> Vec<Event> {
    let module = build_module(CHURN, "prog", Backend::Safe).expect("bench program compiles");
    let program = link(&[module]).expect("single module links");
    let config = RunConfig {
        mode: Mode::Observe,
        ..RunConfig::default()
    };
    let outcome = run(&program, "prog", "main", &[rounds], &config).expect("entry exists");
    assert!(outcome.result.is_ok());
    outcome.trace
}

fn monitor_benches(c: &mut Criterion) {
    let trace = churn_trace(500);

    let mut group = c.benchmark_group("replay_churn_trace");
    group.throughput(Throughput::Elements(trace.len() as u64));
    for policy in Policy::ALL {
        group.bench_function(policy.name(), |b| {
            b.iter(|| check(policy, &trace).expect("trace is consistent"))
        });
    }
    group.finish();

    let mut group = c.benchmark_group("audit_churn_trace");
    group.throughput(Throughput::Elements(trace.len() as u64));
    group.bench_function("audit", |b| {
        b.iter(|| audit(&trace).expect("trace is consistent"))
    });
    group.finish();
}

criterion_group!(benches, monitor_benches);
criterion_main!(benches);
