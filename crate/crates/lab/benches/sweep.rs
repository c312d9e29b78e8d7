use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use dam_core::exec::{par_map, seq_map};
use dam_lab::dr::{run_synthetic, DrSettings, PsiKind, SyntheticSpec};

const JOBS: usize = 8;

fn job(psi: PsiKind, seed: u64) -> usize {
    let mut spec = SyntheticSpec::new(psi, 3, seed);
    spec.n_samples = 200;
    let mut s = DrSettings::defaults(psi);
    s.epochs = 20;
    let run = run_synthetic(&spec, &s).expect("training run");
    run.trace.rows.len()
}

fn independent_runs(c: &mut Criterion) {
    let mut g = c.benchmark_group("independent_runs");
    g.sample_size(10);
    for psi in [PsiKind::Linear, PsiKind::Quadratic] {
        let label = format!("{psi:?}");
        g.bench_with_input(BenchmarkId::new("par_map", &label), &psi, |b, &psi| {
            b.iter(|| par_map(JOBS, |i| job(psi, i as u64)))
        });
        g.bench_with_input(BenchmarkId::new("seq_map", &label), &psi, |b, &psi| {
            b.iter(|| seq_map(JOBS, |i| job(psi, i as u64)))
        });
    }
    g.finish();
}

criterion_group!(benches, independent_runs);
criterion_main!(benches);
