use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use strongapprox::coupling::star_pair;
use strongapprox::family::Family;
use strongapprox::observable::Observable;
use strongapprox::par::{map_indexed, map_indexed_seq};
use strongapprox::process::Process;
use strongapprox::rng::SeedDomain;

fn coupled_gap(process: &Process, dom: SeedDomain, i: usize) -> f64 {
    let (x, y) = star_pair(process, 64, &mut dom.stream(i as u64)).expect("pair");
    (x[63] - y[63]).abs()
}

fn bench(c: &mut Criterion) {
    let process = Process::centered(Family::doubling(), Observable::cosine(), 0).expect("process");
    let dom = SeedDomain::new(1);
    let mut group = c.benchmark_group("star_pairs");
    for n in [1_000usize, 10_000] {
        group.bench_with_input(BenchmarkId::new("parallel", n), &n, |b, &n| {
            b.iter(|| map_indexed(n, |i| coupled_gap(&process, dom, i)))
        });
        group.bench_with_input(BenchmarkId::new("sequential", n), &n, |b, &n| {
            b.iter(|| map_indexed_seq(n, |i| coupled_gap(&process, dom, i)))
        });
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
