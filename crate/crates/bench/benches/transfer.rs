use criterion::{criterion_group, criterion_main, Criterion};

use cbdc_core::harness::{fuzz_config, run_scenario, FuzzOptions, ScenarioConfig};

fn scenarios(c: &mut Criterion) {
    let mut g = c.benchmark_group("scenario");
    g.sample_size(20);
    for name in ["happy_path", "censor_p4", "collusion"] {
        let cfg = ScenarioConfig::bundled(name).unwrap();
        g.bench_function(name, |b| {
            b.iter(|| assert!(run_scenario(cfg.clone()).unwrap().passed))
        });
    }
    let opts = FuzzOptions::default();
    let cfg = fuzz_config(&opts, 0);
    g.bench_function("fuzz_round", |b| {
        b.iter(|| run_scenario(cfg.clone()).unwrap())
    });
    g.finish();
}

criterion_group!(benches, scenarios);
criterion_main!(benches);
