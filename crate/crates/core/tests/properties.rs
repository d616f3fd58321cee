//! Property tests over random trees, priors and histories.

use std::sync::Arc;

use hierts_core::harness::verify::{random_linear_prior, random_scalar_prior, random_tree, relative};
use hierts_core::hierarchy::{NodeId, PriorSpec, TreeFile};
use hierts_core::oracle::{self, Observation};
use hierts_core::posterior::mab::LeafStats;
use hierts_core::rng::{stream, Rng, StreamTag};
use hierts_core::{Hierarchy, LinearPosterior, MabPosterior};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng as _;

fn setup(seed: u64) -> (Rng, Arc<Hierarchy>) {
    let mut rng = stream(seed, 0, StreamTag::Auxiliary(99));
    let tree = Arc::new(random_tree(&mut rng, 4, 32));
    (rng, tree)
}

fn history(tree: &Hierarchy, rng: &mut Rng, len: usize) -> Vec<(NodeId, f64)> {
    (0..len)
        .map(|_| {
            let a = tree.actions()[rng.random_range(0..tree.num_actions())];
            (a, rng.random_range(-3.0..3.0))
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn incremental_updates_equal_rebuild(seed in any::<u64>(), len in 0usize..60) {
        let (mut rng, tree) = setup(seed);
        let prior = Arc::new(random_scalar_prior(&tree, &mut rng, false));
        let mut post = MabPosterior::new(Arc::clone(&tree), Arc::clone(&prior)).unwrap();
        for (a, y) in history(&tree, &mut rng, len) {
            post.update(a, y).unwrap();
        }
        let stats: Vec<LeafStats> = tree.actions().iter().map(|&a| post.leaf_stats(a)).collect();
        let rebuilt = MabPosterior::from_stats(Arc::clone(&tree), prior, &stats).unwrap();
        prop_assert_eq!(rebuilt, post.rebuild());
        prop_assert_eq!(post.rebuild(), post);
    }

    #[test]
    fn posterior_variance_shrinks_and_decomposes(seed in any::<u64>(), len in 0usize..60) {
        let (mut rng, tree) = setup(seed);
        let prior = random_scalar_prior(&tree, &mut rng, false);
        let mut post = MabPosterior::new(Arc::clone(&tree), Arc::new(prior.clone())).unwrap();
        let mut precision: Vec<f64> = tree.nodes().map(|id| post.node_precision(id)).collect();
        for (a, y) in history(&tree, &mut rng, len) {
            post.update(a, y).unwrap();
            for id in tree.nodes() {
                let p = post.node_precision(id);
                prop_assert!(p >= precision[id.index()]);
                precision[id.index()] = p;
            }
        }
        for &a in tree.actions() {
            let (_, v) = post.marginal_action_moments(a).unwrap();
            prop_assert!(v > 0.0);
            prop_assert!(v <= prior.marginal_variance(&tree, a).unwrap() * (1.0 + 1e-12));
            let dec = post.path_variance_decomposition(a).unwrap();
            prop_assert!(relative(dec, v) < 1e-12);
        }
    }

    #[test]
    fn observation_order_does_not_matter(seed in any::<u64>(), len in 1usize..40) {
        let (mut rng, tree) = setup(seed);
        let prior = Arc::new(random_scalar_prior(&tree, &mut rng, false));
        let mut obs = history(&tree, &mut rng, len);
        let mut a = MabPosterior::new(Arc::clone(&tree), Arc::clone(&prior)).unwrap();
        for &(n, y) in &obs {
            a.update(n, y).unwrap();
        }
        obs.shuffle(&mut rng);
        let mut b = MabPosterior::new(Arc::clone(&tree), prior).unwrap();
        for &(n, y) in &obs {
            b.update(n, y).unwrap();
        }
        for id in tree.nodes() {
            let (ma, va) = a.marginal_moments(id).unwrap();
            let (mb, vb) = b.marginal_moments(id).unwrap();
            prop_assert!(relative(ma, mb) < 1e-10 || (ma - mb).abs() < 1e-12);
            prop_assert!(relative(va, vb) < 1e-10);
        }
    }

    #[test]
    fn linear_posterior_matches_oracle(seed in any::<u64>(), len in 0usize..30, d in 1usize..4) {
        let (mut rng, tree) = setup(seed);
        let prior = random_linear_prior(&tree, d, &mut rng);
        let mut post = LinearPosterior::new(Arc::clone(&tree), Arc::new(prior.clone())).unwrap();
        let mut obs = Vec::new();
        for (a, y) in history(&tree, &mut rng, len) {
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            post.update(a, &x, y).unwrap();
            obs.push(Observation { action: a, context: x, reward: y });
        }
        let joint = oracle::condition(&oracle::joint_prior_linear(&tree, &prior), &obs, prior.noise_variance()).unwrap();
        for &a in tree.actions() {
            let (m, c) = post.marginal_action_moments(a).unwrap();
            let om = joint.node_mean(a);
            let oc = joint.node_covariance(a);
            prop_assert!((&m - &om).amax() <= 1e-8 * m.amax().max(om.amax()).max(1e-300));
            prop_assert!((&c - &oc).amax() <= 1e-8 * c.amax().max(oc.amax()));
        }
    }

    #[test]
    fn oracle_marginals_survive_permutation(seed in any::<u64>()) {
        let (mut rng, tree) = setup(seed);
        let prior = random_scalar_prior(&tree, &mut rng, false);
        let obs: Vec<Observation> = history(&tree, &mut rng, 10)
            .into_iter()
            .map(|(a, y)| Observation::scalar(a, y))
            .collect();
        let joint = oracle::condition(&oracle::joint_prior_scalar(&tree, &prior), &obs, prior.noise_variance()).unwrap();
        let mut order: Vec<NodeId> = tree.nodes().collect();
        order.shuffle(&mut rng);
        let permuted = joint.permuted(&order);
        for &a in tree.actions() {
            prop_assert_eq!(permuted.node_mean(a), joint.node_mean(a));
            prop_assert_eq!(permuted.node_covariance(a), joint.node_covariance(a));
        }
    }

    #[test]
    fn tree_files_round_trip(seed in any::<u64>()) {
        let (mut rng, tree) = setup(seed);
        let prior = PriorSpec::Scalar(random_scalar_prior(&tree, &mut rng, false));
        let file = TreeFile::from_parts(&tree, Some(&prior));
        let back = TreeFile::from_json(&file.to_json()).unwrap();
        prop_assert_eq!(&back, &file);
        let t2 = back.hierarchy().unwrap();
        prop_assert_eq!(&t2, tree.as_ref());
        prop_assert_eq!(back.prior(&t2).unwrap(), Some(prior));
    }
}
