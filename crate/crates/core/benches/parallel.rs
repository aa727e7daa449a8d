use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nslab::par;
use nslab::problems::{registry, Problem};
use nslab::tape::SelectionPolicy;
use nslab::types::RngSpec;

fn teacher_student() -> Problem {
    registry().into_iter().find(|(n, _)| *n == "teacher_student").unwrap().1.build_unchecked().unwrap()
}

/// Per-sample selections of the teacher-student loss: the inner loop of the
/// Aumann and risk estimators.
fn selections(c: &mut Criterion) {
    let p = teacher_student();
    let w = vec![0.2; p.w_dim()];
    let policy = SelectionPolicy::default();
    let rng = RngSpec::new(1, 0);
    let work = |i: usize| p.value_and_selection(&w, &p.sample_at(rng, i as u64), &policy).unwrap().1;
    let mut group = c.benchmark_group("selections");
    for n in [1_000usize, 20_000] {
        group
            .bench_with_input(BenchmarkId::new("sequential", n), &n, |b, &n| b.iter(|| par::seq::map_indexed(n, work)));
        #[cfg(feature = "parallel")]
        group
            .bench_with_input(BenchmarkId::new("rayon", n), &n, |b, &n| b.iter(|| par::parallel::map_indexed(n, work)));
    }
    group.finish();
}

/// Monte Carlo risk through the crate's default execution path.
fn risk(c: &mut Criterion) {
    let p = teacher_student();
    let w = vec![0.2; p.w_dim()];
    let mut group = c.benchmark_group("risk_mc");
    group.sample_size(20);
    group.bench_function("20000", |b| b.iter(|| p.risk_mc(&w, RngSpec::new(2, 0), 20_000).unwrap()));
    group.finish();
}

criterion_group!(benches, selections, risk);
criterion_main!(benches);
