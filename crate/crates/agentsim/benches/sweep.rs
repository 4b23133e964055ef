//! Seed-sweep throughput: the sequential evaluation loop against the
//! data-parallel one (the `parallel` feature, on by default). Runs are
//! independent given their seeds, so the sweep is the natural parallel
//! axis; the two paths must produce identical reports, which the library
//! tests already pin down — here we only measure.

use criterion::{criterion_group, criterion_main, Criterion};

use agentsim::scenario::ValidatedScenario;

/// Three 3-agent cliques, each spread over all three hosts, on a lossy
/// network: every feature that costs time (window bookkeeping,
/// localization rounds, migrations, dice per inter-host leg) is live.
fn sweep_scenario() -> ValidatedScenario {
    let mut text = String::from(
        "horizon = 800\n\n\
         [hosts]\ncount = 3\ncapacity = 6\n\n\
         [network]\ninter_host_latency = 4\nloss_probability = 0.1\n\n\
         [algorithms]\nwindow = 20\nrepetitions = 2\ngrouping_repetitions = 2\n",
    );
    for clique in 0..3 {
        for member in 0..3 {
            let host = (clique + member) % 3;
            text.push_str(&format!(
                "\n[[agents]]\nname = \"c{clique}m{member}\"\nhost = {host}\nscript = \"c{clique}m{member}_plan\"\n"
            ));
        }
    }
    for clique in 0..3 {
        for member in 0..3 {
            text.push_str(&format!("\n[scripts.c{clique}m{member}_plan]\nsteps = [\n"));
            for (i, mate) in (0..3).filter(|&m| m != member).enumerate() {
                text.push_str(&format!("    {{ offset = {i}, to = \"c{clique}m{mate}\" }},\n"));
            }
            text.push_str("]\n");
        }
    }
    agentsim::parse_scenario(&text).expect("bench scenario parses")
}

fn bench_seed_sweep(c: &mut Criterion) {
    let scenario = sweep_scenario();
    let seeds: Vec<u64> = (0..16).collect();

    let mut group = c.benchmark_group("seed_sweep_16_runs");
    group.sample_size(20);
    group.bench_function("sequential", |b| {
        b.iter(|| agentsim::run_reports_seq(&scenario, &seeds))
    });
    #[cfg(feature = "parallel")]
    group.bench_function("parallel", |b| {
        b.iter(|| agentsim::run_reports(&scenario, &seeds))
    });
    group.finish();
}

fn bench_single_run(c: &mut Criterion) {
    let scenario = sweep_scenario();
    c.bench_function("single_run", |b| {
        b.iter(|| agentsim::run(&scenario, 7).expect("bench scenario runs"))
    });
}

criterion_group!(benches, bench_seed_sweep, bench_single_run);
criterion_main!(benches);
