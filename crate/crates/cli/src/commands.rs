//! Subcommand implementations.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use hierts_core::envs::{
    fit_priors_from_data, generate_cluster_dataset, load_feature_dataset, write_feature_csv, ClusterSpec, FitOptions,
};
use hierts_core::harness::bound::{complexity_term, default_c, regret_bound, write_bound_csv};
use hierts_core::harness::{
    ratio_experiment, run_bayes_regret, verify, write_ratio_csv, Experiment, ExperimentSummary, RegretCurve, RunConfig,
    TreeSpec, VerifyConfig,
};
use hierts_core::hierarchy::TreeFile;
use hierts_core::rng::{stream, StreamTag};
use hierts_core::{AgentKind, Error, PriorSpec};
use serde::Serialize;

use crate::svg::{Chart, Series};

/// A failed command and the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        self.code
    }

    fn io(path: &Path, e: std::io::Error) -> Self {
        CliError {
            code: 3,
            message: format!("{}: {e}", path.display()),
        }
    }

    fn invalid(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let io = match &e {
            Error::Io(_) => true,
            Error::Csv(c) => matches!(c.kind(), csv::ErrorKind::Io(_)),
            Error::Json(j) => j.is_io(),
            _ => false,
        };
        CliError {
            code: if io { 3 } else { 2 },
            message: e.to_string(),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn write_csv_with(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> hierts_core::Result<()>) -> CliResult<()> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    write(path, buf)
}

fn to_json(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    s
}

/// Loads and validates a run configuration, applying a seed override.
fn load_config(path: &Path, seed: Option<u64>) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::from_path(path).map_err(|e| match e {
        Error::Io(io) => CliError::io(path, io),
        other => CliError::invalid(format!("{}: {other}", path.display())),
    })?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()
        .map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?;
    Ok(cfg)
}

/// The configuration as written to the replay sidecar, with file paths
/// resolved.
fn replay_config(cfg: &RunConfig) -> RunConfig {
    let mut out = cfg.clone();
    if let (TreeSpec::File(p), Some(dir)) = (&cfg.tree, &cfg.base_dir) {
        if p.is_relative() {
            out.tree = TreeSpec::File(dir.join(p));
        }
    }
    out
}

#[derive(Serialize)]
struct Sidecar<'a, C: Serialize> {
    command: &'a str,
    seed: u64,
    config: C,
}

fn write_sidecar(out: &Path, command: &str, seed: u64, config: impl Serialize) -> CliResult<()> {
    write(&out.join("run.json"), to_json(&Sidecar { command, seed, config }))
}

fn regret_chart(title: &str, curve: &RegretCurve) -> Chart {
    let series = curve
        .agents
        .iter()
        .enumerate()
        .map(|(k, a)| Series {
            label: a.name().to_string(),
            points: (0..curve.horizon)
                .map(|t| ((t + 1) as f64, curve.mean[k][t], curve.se[k][t]))
                .collect(),
        })
        .collect();
    Chart {
        title: title.to_string(),
        x_label: "round".into(),
        y_label: "cumulative regret".into(),
        series,
    }
}

fn write_curve(out: &Path, title: &str, curve: &RegretCurve) -> CliResult<()> {
    write_csv_with(&out.join("regret.csv"), |w| curve.write_csv(w))?;
    write(&out.join("regret.svg"), regret_chart(title, curve).render())
}

fn print_finals(curve: &RegretCurve) {
    for s in curve.summary() {
        println!(
            "{:<7} final regret {:.3} ± {:.3}",
            s.agent.name(),
            s.final_mean_regret,
            s.final_se
        );
    }
}

pub fn simulate(config: &Path, out: &Path, seed: Option<u64>, jobs: Option<usize>) -> CliResult<ExitCode> {
    let cfg = load_config(config, seed)?;
    let problem = cfg.resolve()?;
    create_dir(out)?;
    log::info!(
        "simulating {} actions, horizon {}, {} instances",
        problem.tree.num_actions(),
        cfg.horizon,
        cfg.instances
    );
    let curve = run_bayes_regret(&cfg, jobs)?;
    let summary = ExperimentSummary::new(&cfg, &curve)?;
    write_curve(out, "Bayes regret", &curve)?;
    write(&out.join("summary.json"), summary.to_json() + "\n")?;
    write_sidecar(out, "simulate", cfg.seed, replay_config(&cfg))?;
    print_finals(&curve);
    if let Some(b) = &summary.bound {
        println!("regret bound {:.3} (G = {:.3}, c = {:.3})", b.bound, b.g, b.c);
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct RatioSidecar<'a> {
    base: RunConfig,
    heights: &'a [usize],
}

pub fn ratio(
    config: &Path,
    heights: &[usize],
    out: &Path,
    seed: Option<u64>,
    jobs: Option<usize>,
) -> CliResult<ExitCode> {
    let cfg = load_config(config, seed)?;
    if heights.is_empty() || heights.contains(&0) {
        return Err(CliError::invalid(
            "heights must be a non-empty list of positive integers",
        ));
    }
    let TreeSpec::Balanced { b, .. } = cfg.tree else {
        return Err(CliError::invalid("ratio experiments need a balanced tree"));
    };
    for &h in heights {
        RunConfig {
            tree: TreeSpec::Balanced { b, h },
            ..cfg.clone()
        }
        .validate()?;
    }
    create_dir(out)?;
    let rows = ratio_experiment(&cfg, heights, jobs)?;
    write_csv_with(&out.join("ratio.csv"), |w| write_ratio_csv(w, &rows))?;
    let series = [AgentKind::HierTs, AgentKind::FlatTs]
        .iter()
        .map(|&a| Series {
            label: format!("TS / {}", a.name()),
            points: rows
                .iter()
                .filter(|r| r.agent == a)
                .map(|r| (r.h as f64, r.ratio, r.se))
                .collect(),
        })
        .collect();
    let chart = Chart {
        title: "Regret ratio by tree height".into(),
        x_label: "tree height h".into(),
        y_label: "TS regret ratio".into(),
        series,
    };
    write(&out.join("ratio.svg"), chart.render())?;
    write_sidecar(
        out,
        "ratio",
        cfg.seed,
        RatioSidecar {
            base: replay_config(&cfg),
            heights,
        },
    )?;
    for r in &rows {
        println!("h={} TS/{:<7} {:.3} ± {:.3}", r.h, r.agent.name(), r.ratio, r.se);
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct BoundJson {
    n: usize,
    k: usize,
    c: f64,
    noise_dominates: bool,
    g: f64,
    sigma_max: f64,
    delta: f64,
    bound: f64,
}

pub fn bound(config: &Path, out: &Path, c: Option<f64>) -> CliResult<ExitCode> {
    let cfg = load_config(config, None)?;
    let problem = cfg.resolve()?;
    let PriorSpec::Scalar(prior) = &problem.prior else {
        return Err(CliError::invalid("the regret bound applies to K-armed problems only"));
    };
    if cfg.horizon == 0 {
        return Err(CliError::invalid("the regret bound needs a horizon of at least 1"));
    }
    let c = c.unwrap_or_else(|| default_c(prior));
    let report = complexity_term(&problem.tree, prior, cfg.horizon, c)?;
    let delta = cfg.delta_or_default();
    let k = problem.tree.num_actions();
    let value = regret_bound(&report, cfg.horizon, delta, k)?;
    create_dir(out)?;
    write_csv_with(&out.join("bound.csv"), |w| write_bound_csv(w, &report))?;
    let json = BoundJson {
        n: cfg.horizon,
        k,
        c: report.c,
        noise_dominates: report.noise_dominates,
        g: report.g,
        sigma_max: report.sigma_max,
        delta,
        bound: value,
    };
    write(&out.join("bound.json"), to_json(&json))?;
    write_sidecar(out, "bound", cfg.seed, replay_config(&cfg))?;
    println!("G(n) = {:.4}, c = {:.4}, bound = {:.4}", report.g, report.c, value);
    Ok(ExitCode::SUCCESS)
}

pub fn verify_oracle(
    config: Option<&Path>,
    seed: Option<u64>,
    out: Option<&Path>,
    sentinel: Option<f64>,
) -> CliResult<ExitCode> {
    let mut cfg = match config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            serde_json::from_str::<VerifyConfig>(&text).map_err(|e| {
                CliError::invalid(format!(
                    "{}: line {}, column {}: {e}",
                    path.display(),
                    e.line(),
                    e.column()
                ))
            })?
        }
        None => VerifyConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if sentinel.is_some() {
        cfg.sentinel = sentinel;
    }
    let report = verify(&cfg)?;
    print!("{report}");
    if let Some(path) = out {
        write(path, to_json(&report))?;
    }
    if report.passed() {
        println!("all checks passed");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("verification FAILED");
        Ok(ExitCode::from(1))
    }
}

pub struct ClassifyArgs {
    pub dataset: PathBuf,
    pub tree: PathBuf,
    pub out: PathBuf,
    pub horizon: usize,
    pub instances: usize,
    pub diagonal: bool,
    pub noise_std: f64,
    pub agents: Vec<AgentKind>,
    pub seed: u64,
    pub jobs: Option<usize>,
}

#[derive(Serialize)]
struct ClassifySidecar<'a> {
    dataset: PathBuf,
    tree: PathBuf,
    horizon: usize,
    instances: usize,
    diagonal: bool,
    noise_std: f64,
    agents: &'a [AgentKind],
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

pub fn classify_bandit(args: &ClassifyArgs) -> CliResult<ExitCode> {
    if args.instances == 0 {
        return Err(CliError::invalid("`instances` must be at least 1"));
    }
    if args.agents.is_empty() {
        return Err(CliError::invalid("at least one agent is needed"));
    }
    if !(args.noise_std.is_finite() && args.noise_std > 0.0) {
        return Err(CliError::invalid("`noise-std` must be positive"));
    }
    let tree_file = TreeFile::from_path(&args.tree)?;
    let (tree, ds) = load_feature_dataset(&args.dataset, &tree_file)?;
    let opts = FitOptions {
        diagonal: args.diagonal,
        noise_std: args.noise_std,
        ..FitOptions::default()
    };
    let fit = fit_priors_from_data(&ds, &Arc::new(tree), opts)?;
    create_dir(&args.out)?;
    let exp = Experiment::from_fit(&fit, args.horizon, args.instances, args.agents.clone(), args.seed);
    let curve = exp.run(args.jobs)?;
    write_curve(&args.out, "Classification bandit regret", &curve)?;
    write(&args.out.join("fit_report.json"), to_json(&fit.report))?;
    write(&args.out.join("summary.json"), to_json(&curve.summary()))?;
    write_sidecar(
        &args.out,
        "classify-bandit",
        args.seed,
        ClassifySidecar {
            dataset: absolute(&args.dataset),
            tree: absolute(&args.tree),
            horizon: args.horizon,
            instances: args.instances,
            diagonal: args.diagonal,
            noise_std: args.noise_std,
            agents: &args.agents,
        },
    )?;
    if !fit.report.jitter.is_empty() {
        log::warn!(
            "{} fitted covariances were lifted to the eigenvalue floor",
            fit.report.jitter.len()
        );
    }
    print_finals(&curve);
    Ok(ExitCode::SUCCESS)
}

pub fn make_dataset(
    out: &Path,
    seed: u64,
    superclasses: usize,
    classes: usize,
    dim: usize,
    train: usize,
    test: usize,
) -> CliResult<ExitCode> {
    let spec = ClusterSpec {
        superclasses,
        classes_per_superclass: classes,
        dim,
        train_per_class: train,
        test_per_class: test,
        ..ClusterSpec::default()
    };
    let (tree_file, records) = generate_cluster_dataset(&spec, &mut stream(seed, 0, StreamTag::Auxiliary(0)))?;
    create_dir(out)?;
    write(&out.join("tree.json"), tree_file.to_json() + "\n")?;
    write_csv_with(&out.join("features.csv"), |w| write_feature_csv(w, &records))?;
    println!(
        "wrote {} records over {} classes",
        records.len(),
        superclasses * classes
    );
    Ok(ExitCode::SUCCESS)
}
