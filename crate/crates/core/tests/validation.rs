//! Acceptance suite. Prints one line per criterion and exits non-zero if any
//! criterion fails.
//!
//! Run with `cargo test -p hierts-core --test validation`.

use std::sync::Arc;
use std::time::{Duration, Instant};

use hierts_core::agents::AgentKind;
use hierts_core::envs::{fit_priors_from_data, generate_cluster_dataset, ClusterSpec, FeatureDataset, FitOptions};
use hierts_core::harness::bound::{complexity_term, default_c, regret_bound};
use hierts_core::harness::verify::{instrumented_suite, linear_suite, scalar_suite, VerifyConfig};
use hierts_core::harness::{ratio_with_se, run_bayes_regret, Experiment, RegretCurve, RunConfig};
use hierts_core::hierarchy::{Hierarchy, PriorSpec, ScalarPrior};
use hierts_core::oracle;
use hierts_core::posterior::SamplingCost;
use hierts_core::rng::{stream, StreamTag};
use hierts_core::MabPosterior;

const SEED: u64 = 20_240_601;

struct Outcome {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
}

fn report(o: &Outcome) {
    println!(
        "criterion {} [{}] {}: {} ({:.1}s)",
        o.id,
        if o.pass { "PASS" } else { "FAIL" },
        o.name,
        o.detail,
        o.elapsed.as_secs_f64()
    );
}

fn timed(id: u32, name: &'static str, f: impl FnOnce() -> (bool, String)) -> Outcome {
    let start = Instant::now();
    let (pass, detail) = f();
    let o = Outcome {
        id,
        name,
        pass,
        detail,
        elapsed: start.elapsed(),
    };
    report(&o);
    o
}

fn separation(a: (f64, f64), b: (f64, f64)) -> f64 {
    (b.0 - a.0) / (a.1 * a.1 + b.1 * b.1).sqrt()
}

fn final_of(curve: &RegretCurve, kind: AgentKind) -> (f64, f64) {
    curve.final_regret(kind).expect("agent present")
}

fn criterion_1() -> Outcome {
    timed(1, "exact-posterior equivalence", || {
        let cfg = VerifyConfig {
            seed: SEED,
            ..VerifyConfig::default()
        };
        let start = Instant::now();
        let mut checks = scalar_suite(&cfg).expect("scalar suite");
        checks.extend(linear_suite(&cfg).expect("linear suite"));
        let secs = start.elapsed().as_secs_f64();
        let moments: Vec<_> = checks.iter().filter(|c| c.name.contains("marginal")).collect();
        let pass = moments.iter().all(|c| c.passed()) && moments.iter().all(|c| c.cases > 0) && secs < 30.0;
        let detail = moments
            .iter()
            .map(|c| format!("{} cases={} max_rel={:.2e}", c.name, c.cases, c.max_rel))
            .collect::<Vec<_>>()
            .join("; ");
        (pass, format!("{detail}; tol 1e-8; {secs:.2}s < 30s"))
    })
}

fn criteria_2_3() -> (Outcome, Outcome) {
    let cfg = VerifyConfig {
        seed: SEED,
        ..VerifyConfig::default()
    };
    let start = Instant::now();
    let checks = instrumented_suite(&cfg).expect("instrumented suite");
    let elapsed = start.elapsed();
    let get = |name: &str| checks.iter().find(|c| c.name == name).expect("check present");

    let id = get("path-variance identity");
    let two = Outcome {
        id: 2,
        name: "path-variance identity",
        pass: id.passed() && id.cases == 20 && elapsed.as_secs_f64() < 10.0,
        detail: format!(
            "{} runs x {} rounds, {} comparisons, max_rel={:.2e}, max_abs={:.2e}, tol 1e-9",
            id.cases, cfg.rounds, id.comparisons, id.max_rel, id.max_abs
        ),
        elapsed,
    };
    report(&two);

    let parts = [
        "precision increase bound",
        "precision growth (c)",
        "precision growth (c=2)",
    ];
    let pass = parts.iter().all(|n| get(n).passed() && get(n).comparisons > 0);
    let detail = parts
        .iter()
        .map(|n| format!("{}: {} checks, {} violations", n, get(n).comparisons, get(n).violations))
        .collect::<Vec<_>>()
        .join("; ");
    let three = Outcome {
        id: 3,
        name: "per-update precision inequalities",
        pass,
        detail,
        elapsed,
    };
    report(&three);
    (two, three)
}

fn criteria_4_5() -> (Outcome, Outcome) {
    let start = Instant::now();
    let mut bound_ok = true;
    let mut bound_detail = Vec::new();
    let mut order_ok = true;
    let mut order_detail = Vec::new();
    for (problem, make) in [
        (
            1,
            RunConfig::problem1 as fn(usize, usize, usize, usize, u64) -> RunConfig,
        ),
        (2, RunConfig::problem2),
    ] {
        for b in [2, 3, 5] {
            let cfg = make(b, 2, 500, 100, SEED + b as u64);
            let curve = run_bayes_regret(&cfg, None).expect("experiment runs");
            let problem_def = cfg.resolve().expect("config resolves");
            let PriorSpec::Scalar(prior) = &problem_def.prior else {
                unreachable!()
            };
            let report = complexity_term(&problem_def.tree, prior, 500, default_c(prior)).expect("bound");
            let bound = regret_bound(&report, 500, 1.0 / 500.0, problem_def.tree.num_actions()).expect("bound");
            let hier = final_of(&curve, AgentKind::HierTs);
            bound_ok &= hier.0 <= bound;
            bound_detail.push(format!("P{problem} b={b}: {:.1} <= {:.1}", hier.0, bound));
            if problem == 2 {
                let flat = final_of(&curve, AgentKind::FlatTs);
                let ts = final_of(&curve, AgentKind::Ts);
                let sep = separation(hier, ts);
                order_ok &= hier.0 < flat.0 && flat.0 < ts.0 && sep >= 2.0;
                order_detail.push(format!(
                    "b={b}: HierTS {:.1}±{:.1} < FlatTS {:.1}±{:.1} < TS {:.1}±{:.1}, HierTS-TS gap {sep:.1} SE",
                    hier.0, hier.1, flat.0, flat.1, ts.0, ts.1
                ));
            }
        }
    }
    let elapsed = start.elapsed();
    let four = Outcome {
        id: 4,
        name: "regret bound soundness",
        pass: bound_ok && elapsed.as_secs_f64() < 300.0,
        detail: bound_detail.join("; "),
        elapsed,
    };
    report(&four);
    let five = Outcome {
        id: 5,
        name: "Problem 2 regret ordering",
        pass: order_ok,
        detail: order_detail.join("; "),
        elapsed,
    };
    report(&five);
    (four, five)
}

fn criterion_6() -> Outcome {
    timed(6, "regret ratio trends", || {
        let ratio = |cfg: RunConfig| {
            let curve = run_bayes_regret(&cfg, None).expect("experiment runs");
            ratio_with_se(final_of(&curve, AgentKind::Ts), final_of(&curve, AgentKind::HierTs))
        };
        let p1: Vec<(f64, f64)> = (1..=3)
            .map(|h| ratio(RunConfig::problem1(2, h, 500, 100, SEED + 10 + h as u64)))
            .collect();
        let p2 = ratio(RunConfig::problem2(2, 3, 500, 100, SEED + 20));
        let monotone = p1.windows(2).all(|w| w[1].0 >= w[0].0);
        let sep = (p2.0 - p1[2].0) / (p2.1 * p2.1 + p1[2].1 * p1[2].1).sqrt();
        let pass = monotone && p2.0 > p1[2].0 && sep >= 1.0;
        let detail = format!(
            "P1 TS/HierTS by h=1,2,3: {}; P2 h=3: {:.2}±{:.2} vs P1 h=3 ({sep:.1} SE)",
            p1.iter()
                .map(|r| format!("{:.2}±{:.2}", r.0, r.1))
                .collect::<Vec<_>>()
                .join(", "),
            p2.0,
            p2.1
        );
        (pass, detail)
    })
}

fn r_squared(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    if syy == 0.0 {
        return 1.0;
    }
    sxy * sxy / (sxx * syy)
}

fn criterion_7() -> Outcome {
    timed(7, "sampling cost scaling", || {
        let mut nodes = Vec::new();
        let mut hier_ops = Vec::new();
        let mut dense_ops = Vec::new();
        for h in [3, 6, 9] {
            let tree = Arc::new(Hierarchy::balanced(2, h).expect("tree"));
            let prior = ScalarPrior::constant(&tree, 1.0, 0.0, 1.0).expect("prior");
            let post = MabPosterior::new(Arc::clone(&tree), Arc::new(prior.clone())).expect("posterior");
            let mut rng = stream(SEED, h as u64, StreamTag::Auxiliary(7));
            let mut cost = SamplingCost::default();
            post.sample_counted(&mut rng, &mut cost);
            let joint = oracle::joint_prior_scalar(&tree, &prior);
            let mut dense = SamplingCost::default();
            oracle::sample_actions(&tree, &joint, &mut rng, &mut dense).expect("dense sample");
            nodes.push(tree.len() as f64);
            hier_ops.push(cost.total() as f64);
            dense_ops.push(dense.total() as f64);
        }
        let r2 = r_squared(&nodes, &hier_ops);
        // Work per node must grow for the dense sampler.
        let per_node: Vec<f64> = dense_ops.iter().zip(&nodes).map(|(d, n)| d / n).collect();
        let superlinear = per_node.windows(2).all(|w| w[1] > 2.0 * w[0]);
        let pass = r2 > 0.99 && superlinear;
        let detail = format!(
            "K=8,64,512 |V|={:?}; HierTS ops {:?} (R²={r2:.6}); dense ops {:?}",
            nodes, hier_ops, dense_ops
        );
        (pass, detail)
    })
}

/// Cluster dataset used for the classification bandit.
fn cluster_spec() -> ClusterSpec {
    ClusterSpec::default()
}

fn criterion_8() -> Outcome {
    timed(8, "synthetic classification bandit", || {
        let mut rng = stream(SEED, 0, StreamTag::Auxiliary(8));
        let (file, records) = generate_cluster_dataset(&cluster_spec(), &mut rng).expect("dataset");
        let tree = Arc::new(file.hierarchy().expect("tree"));
        let ds =
            FeatureDataset::from_records(records, &tree, file.label_map.as_ref().expect("labels")).expect("dataset");
        let fit = fit_priors_from_data(&ds, &tree, FitOptions::default()).expect("fit");
        let exp = Experiment::from_fit(&fit, 2000, 10, AgentKind::ALL.to_vec(), SEED);
        let start = Instant::now();
        let curve = exp.run(None).expect("experiment runs");
        let secs = start.elapsed().as_secs_f64();
        let hier = final_of(&curve, AgentKind::HierTs);
        let flat = final_of(&curve, AgentKind::FlatTs);
        let ts = final_of(&curve, AgentKind::Ts);
        let sep = separation(hier, ts);
        let pass = hier.0 < flat.0 && hier.0 < ts.0 && sep >= 2.0 && secs < 180.0;
        let detail = format!(
            "HierTS {:.1}±{:.1}, FlatTS {:.1}±{:.1}, TS {:.1}±{:.1}; HierTS-TS gap {sep:.1} SE",
            hier.0, hier.1, flat.0, flat.1, ts.0, ts.1
        );
        (pass, detail)
    })
}

fn criterion_9() -> Outcome {
    timed(9, "byte-identical reruns", || {
        let csv = |cfg: &RunConfig, jobs| {
            let mut buf = Vec::new();
            run_bayes_regret(cfg, jobs)
                .expect("runs")
                .write_csv(&mut buf)
                .expect("csv");
            buf
        };
        let scalar = RunConfig::problem2(3, 2, 200, 20, SEED);
        let mut linear = RunConfig::problem1(2, 2, 100, 8, SEED);
        linear.model = hierts_core::harness::Model::Linear { d: 3 };
        let mut same = true;
        let mut bytes = 0;
        for cfg in [&scalar, &linear] {
            let a = csv(cfg, Some(1));
            let b = csv(cfg, Some(4));
            let c = csv(cfg, None);
            same &= a == b && b == c;
            bytes += a.len();
        }
        (
            same,
            format!("2 configs x 3 reruns (1, 4, all threads), {bytes} bytes compared"),
        )
    })
}

fn main() {
    println!("acceptance suite (seed {SEED})");
    let mut outcomes = vec![criterion_1()];
    let (two, three) = criteria_2_3();
    outcomes.push(two);
    outcomes.push(three);
    let (four, five) = criteria_4_5();
    outcomes.push(four);
    outcomes.push(five);
    outcomes.push(criterion_6());
    outcomes.push(criterion_7());
    outcomes.push(criterion_8());
    outcomes.push(criterion_9());
    let failed: Vec<u32> = outcomes.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    println!(
        "acceptance: {}/{} criteria passed",
        outcomes.len() - failed.len(),
        outcomes.len()
    );
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
