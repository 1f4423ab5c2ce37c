use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use labquest::agents::{corpus, oracle_replay, plan_search};
use labquest::par::{self, Exec};
use labquest::Lexicon;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn generate_and_replay(c: &mut Criterion) {
    let lex = Lexicon::builtin();
    let mut group = c.benchmark_group("gen_oracle");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| {
                let mut total = 0.0;
                for level in 1..=5 {
                    let games = corpus(level, 0, 100, &lex, exec).unwrap();
                    total += par::map(exec, &games, |g| oracle_replay(g).unwrap()).iter().sum::<f64>();
                }
                total
            })
        });
    }
    group.finish();
}

fn search_sweep(c: &mut Criterion) {
    let lex = Lexicon::builtin();
    let games: Vec<_> = (1..=3)
        .flat_map(|level| corpus(level, 0, 50, &lex, Exec::Sequential).unwrap())
        .collect();
    let mut group = c.benchmark_group("plan_search");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| par::map(exec, &games, |g| plan_search(g, 200_000).map(|k| k.len()).unwrap_or(0)))
        });
    }
    group.finish();
}

criterion_group!(benches, generate_and_replay, search_sweep);
criterion_main!(benches);
