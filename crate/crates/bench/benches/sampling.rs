//! Posterior sampling and update costs: the recursive sampler against the
//! dense joint-Gaussian sampler on balanced binary trees.

use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hierts_core::agents::hierts_sample;
use hierts_core::hierarchy::{Hierarchy, LinearPrior, ScalarPrior};
use hierts_core::oracle::{self, Observation};
use hierts_core::posterior::SamplingCost;
use hierts_core::rng::{stream, StreamTag};
use hierts_core::{LinearPosterior, MabPosterior};

const HEIGHTS: [usize; 3] = [3, 6, 9];

fn problem(h: usize) -> (Arc<Hierarchy>, Arc<ScalarPrior>) {
    let tree = Arc::new(Hierarchy::balanced(2, h).unwrap());
    let prior = Arc::new(ScalarPrior::doubling(&tree, 0.0, 1.0).unwrap());
    (tree, prior)
}

/// A posterior with one observation per action.
fn observed(tree: &Arc<Hierarchy>, prior: &Arc<ScalarPrior>) -> (MabPosterior, Vec<Observation>) {
    let mut post = MabPosterior::new(Arc::clone(tree), Arc::clone(prior)).unwrap();
    let mut obs = Vec::new();
    for (i, &a) in tree.actions().iter().enumerate() {
        let y = (i as f64 * 0.37).sin();
        post.update(a, y).unwrap();
        obs.push(Observation::scalar(a, y));
    }
    (post, obs)
}

fn sample(c: &mut Criterion) {
    let mut group = c.benchmark_group("sample");
    for h in HEIGHTS {
        let (tree, prior) = problem(h);
        let k = tree.num_actions();
        let (post, obs) = observed(&tree, &prior);
        let joint =
            oracle::condition(&oracle::joint_prior_scalar(&tree, &prior), &obs, prior.noise_variance()).unwrap();
        let mut rng = stream(0, 0, StreamTag::Auxiliary(0));
        group.bench_with_input(BenchmarkId::new("hierts", k), &k, |b, _| {
            b.iter(|| black_box(hierts_sample(&post, &mut rng)))
        });
        if h >= 9 {
            group.sample_size(10);
        }
        group.bench_with_input(BenchmarkId::new("dense", k), &k, |b, _| {
            b.iter(|| {
                let mut cost = SamplingCost::default();
                black_box(oracle::sample_actions(&tree, &joint, &mut rng, &mut cost).unwrap())
            })
        });
    }
    group.finish();
}

fn update(c: &mut Criterion) {
    let mut group = c.benchmark_group("update");
    for h in HEIGHTS {
        let (tree, prior) = problem(h);
        let k = tree.num_actions();
        let (post, _) = observed(&tree, &prior);
        let leaf = tree.actions()[k / 2];
        group.bench_with_input(BenchmarkId::new("path", k), &k, |b, _| {
            let mut p = post.clone();
            b.iter(|| p.update(leaf, black_box(0.25)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("rebuild", k), &k, |b, _| {
            b.iter(|| black_box(post.rebuild()))
        });
    }
    group.finish();
}

fn linear_update(c: &mut Criterion) {
    let mut group = c.benchmark_group("linear_update");
    for d in [2, 5, 10] {
        let tree = Arc::new(Hierarchy::balanced(5, 2).unwrap());
        let scalar = ScalarPrior::doubling(&tree, 0.0, 0.5).unwrap();
        let prior = Arc::new(LinearPrior::isotropic(&tree, &scalar, d).unwrap());
        let mut post = LinearPosterior::new(Arc::clone(&tree), prior).unwrap();
        let leaf = tree.actions()[7];
        let x: Vec<f64> = (0..d).map(|i| 1.0 / (i + 1) as f64).collect();
        group.bench_with_input(BenchmarkId::from_parameter(d), &d, |b, _| {
            b.iter(|| post.update(leaf, &x, black_box(0.5)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, sample, update, linear_update);
criterion_main!(benches);
