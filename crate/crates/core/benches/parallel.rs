//! Sequential reference (`with_workers(1)`) against the rayon path for the
//! three data-parallel hot spots: dataset generation, tabular fitting and
//! the budget-matched Monte Carlo comparison.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use iro_core::analysis::budget_matched_comparison;
use iro_core::exec::{map_indexed, with_workers};
use iro_core::search::{guided_generate, sample_rollout, SearchConfig};
use iro_core::value_fn::{fit, FitDataset};
use iro_core::{BasePolicy, ExactModel, GuidanceStack, MdpSpec, Reward, RewardSpec, RngStream, ScoredTrajectory};

fn paths() -> [(&'static str, usize); 2] {
    [("sequential", 1), ("parallel", 0)]
}

fn dataset(spec: &MdpSpec, reward: &Reward, base: &BasePolicy, m: usize) -> FitDataset {
    let master = RngStream::new(7);
    let items = map_indexed(m, |i| {
        let t = sample_rollout(spec, base, 0, &master.derive("item", i as u64)).unwrap();
        let r = reward.evaluate(spec, &t).unwrap();
        ScoredTrajectory { trajectory: t, reward: r }
    });
    FitDataset::new(items, 0)
}

fn bench_fit(c: &mut Criterion) {
    let spec = MdpSpec::new(4, 6).unwrap();
    let reward = Reward::new(&RewardSpec::HashLeaf { seed: 1, scale: 1.0 }, &spec).unwrap();
    let base = BasePolicy::SeededLogits { seed: 3, temperature: 1.0 };
    let data = dataset(&spec, &reward, &base, 20_000);
    let mut g = c.benchmark_group("tabular_fit_20k");
    for (name, w) in paths() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| with_workers(w, || fit(&spec, &data, &Default::default()).unwrap()))
        });
    }
    g.finish();
}

fn bench_generation(c: &mut Criterion) {
    let spec = MdpSpec::new(4, 6).unwrap();
    let reward = Reward::new(&RewardSpec::HashLeaf { seed: 1, scale: 1.0 }, &spec).unwrap();
    let base = BasePolicy::Uniform;
    let model = ExactModel::new(&spec, &reward).unwrap();
    let gold = iro_core::analysis::gold_stack(&model, 1).unwrap();
    let stacks = [("empty", GuidanceStack::new()), ("gold", gold)];
    let cfg = SearchConfig::new(2, 2, 1);
    let master = RngStream::new(11);
    let mut g = c.benchmark_group("guided_search_512");
    for (label, stack) in &stacks {
        for (name, w) in paths() {
            g.bench_function(BenchmarkId::new(*label, name), |b| {
                b.iter(|| {
                    with_workers(w, || {
                        map_indexed(512, |i| {
                            guided_generate(&spec, &reward, &base, stack, &cfg, 0, &master.derive("g", i as u64))
                                .unwrap()
                                .ledger
                        })
                    })
                })
            });
        }
    }
    g.finish();
}

fn bench_budget_matched(c: &mut Criterion) {
    let mut g = c.benchmark_group("budget_matched_2000");
    g.sample_size(10);
    for (name, w) in paths() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| with_workers(w, || budget_matched_comparison(5, 6, 2, 2, 2, 1, 2000, 0).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(
    name = parallel;
    config = Criterion::default().sample_size(20).configure_from_args();
    targets = bench_fit, bench_generation, bench_budget_matched
);
criterion_main!(parallel);
