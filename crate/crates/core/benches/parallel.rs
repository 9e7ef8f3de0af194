//! Rayon against the sequential fallback on the two corpus-wide workloads:
//! demonstration generation and repairing programs with a network policy.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tokenfix::corpus::ToyGenerator;
use tokenfix::demos::generate_demonstration;
use tokenfix::env::{Env, EnvConfig};
use tokenfix::eval::{fix_program, NetPolicy};
use tokenfix::net::{ModelParams, NetShape};
use tokenfix::oracle::Oracle;
use tokenfix::par::{par_map, seq_map};
use tokenfix::token::{lex, TokenSeq};
use tokenfix::vocab::Vocabulary;

fn corpus(n: usize) -> Vec<(String, TokenSeq, TokenSeq)> {
    ToyGenerator::new(1)
        .seeded_corpus(0..n.div_ceil(10), 10, 1..=2)
        .unwrap()
        .into_iter()
        .take(n)
        .map(|r| (r.id, lex(&r.source), lex(&r.fixed_source.unwrap())))
        .collect()
}

fn demos(c: &mut Criterion) {
    let programs = corpus(200);
    let oracle = Oracle::surrogate();
    let env = Env::new(&oracle, EnvConfig::default());
    let work = |(id, p, f): &(String, TokenSeq, TokenSeq)| generate_demonstration(&env, id, p, f).unwrap();
    let mut g = c.benchmark_group("demos");
    g.bench_function(BenchmarkId::new("sequential", programs.len()), |b| b.iter(|| seq_map(&programs, work)));
    g.bench_function(BenchmarkId::new("rayon", programs.len()), |b| b.iter(|| par_map(&programs, work)));
    g.finish();
}

fn repair(c: &mut Criterion) {
    let programs = corpus(16);
    let oracle = Oracle::surrogate();
    let env = Env::new(&oracle, EnvConfig::default());
    let vocab = Vocabulary::builtin();
    let params = ModelParams::<f32>::init(NetShape::paper(vocab.len()), &mut ChaCha8Rng::seed_from_u64(0));
    let policy = NetPolicy { params: &params, vocab: &vocab };
    let work = |(id, p, _): &(String, TokenSeq, TokenSeq)| fix_program(&policy, &env, id, p).unwrap();
    let mut g = c.benchmark_group("repair");
    g.sample_size(10);
    g.bench_function(BenchmarkId::new("sequential", programs.len()), |b| b.iter(|| seq_map(&programs, work)));
    g.bench_function(BenchmarkId::new("rayon", programs.len()), |b| b.iter(|| par_map(&programs, work)));
    g.finish();
}

criterion_group!(benches, demos, repair);
criterion_main!(benches);
