//! Classification bandit built from a labelled feature dataset.
//!
//! Classes are the leaves of a hierarchy; super-classes are internal nodes.
//! Priors are fitted to the training split: the hyper-prior to all training
//! features, each internal node to the training features of its subtree and
//! each leaf to the training features of its class. The true action
//! parameters are the class means over the test split, and contexts are test
//! feature vectors.
//!
//! CSV layout: header `id,label,split,f1,...,fd`, `split` is `train` or
//! `test`. Labels map to leaves through the `label_map` of the tree file.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::envs::Instance;
use crate::error::{Error, Result};
use crate::hierarchy::{Hierarchy, LinearPrior, NodeId, TreeFile};
use crate::linalg;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn parse(s: &str) -> Option<Split> {
        match s.trim() {
            "train" => Some(Split::Train),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub id: String,
    pub label: String,
    pub split: Split,
    pub features: Vec<f64>,
}

/// Validated dataset: every record's label resolves to a distinct leaf.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    dim: usize,
    records: Vec<FeatureRecord>,
    leaves: Vec<NodeId>,
    label_map: BTreeMap<String, NodeId>,
}

impl FeatureDataset {
    /// Validate records against a hierarchy. `label_map` must be a bijection
    /// between labels and leaves.
    pub fn from_records(
        records: Vec<FeatureRecord>,
        tree: &Hierarchy,
        label_map: &BTreeMap<String, usize>,
    ) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let mut map = BTreeMap::new();
        for (label, &id) in label_map {
            let node = NodeId(id);
            if !tree.contains(node) {
                return Err(Error::Dataset(format!("label `{label}` maps to unknown node {id}")));
            }
            if !tree.is_action(node) {
                return Err(Error::Dataset(format!("label `{label}` maps to internal node {id}")));
            }
            if !seen.insert(node) {
                return Err(Error::Dataset(format!("leaf {id} has more than one label")));
            }
            map.insert(label.clone(), node);
        }
        if let Some(a) = tree.actions().iter().find(|a| !seen.contains(a)) {
            return Err(Error::Dataset(format!("leaf {a} has no label")));
        }
        let dim = records.first().map_or(0, |r| r.features.len());
        if dim == 0 {
            return Err(Error::Dataset("dataset has no features".into()));
        }
        let mut leaves = Vec::with_capacity(records.len());
        for r in &records {
            if r.features.len() != dim {
                return Err(Error::Dataset(format!(
                    "record `{}` has {} features, expected {dim}",
                    r.id,
                    r.features.len()
                )));
            }
            if r.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::Dataset(format!("record `{}` has a non-finite feature", r.id)));
            }
            let leaf = map
                .get(&r.label)
                .ok_or_else(|| Error::Dataset(format!("record `{}` has unknown label `{}`", r.id, r.label)))?;
            leaves.push(*leaf);
        }
        Ok(FeatureDataset {
            dim,
            records,
            leaves,
            label_map: map,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[FeatureRecord] {
        &self.records
    }

    /// Leaf of the `i`-th record.
    pub fn leaf(&self, i: usize) -> NodeId {
        self.leaves[i]
    }

    pub fn label_map(&self) -> &BTreeMap<String, NodeId> {
        &self.label_map
    }

    fn features_where(&self, pred: impl Fn(usize) -> bool) -> Vec<&[f64]> {
        (0..self.len())
            .filter(|&i| pred(i))
            .map(|i| self.records[i].features.as_slice())
            .collect()
    }
}

/// Parse a CSV feature file from a reader.
pub fn read_feature_records(reader: impl Read) -> Result<Vec<FeatureRecord>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    let cols: Vec<&str> = header.iter().map(str::trim).collect();
    if cols.len() < 4 || cols[..3] != ["id", "label", "split"] {
        return Err(Error::Dataset("header must be `id,label,split,f1,...,fd`".into()));
    }
    for (j, c) in cols[3..].iter().enumerate() {
        if *c != format!("f{}", j + 1) {
            return Err(Error::Dataset(format!(
                "header column {} should be `f{}`, found `{c}`",
                j + 4,
                j + 1
            )));
        }
    }
    let d = cols.len() - 3;
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != d + 3 {
            return Err(Error::Dataset(format!(
                "line {line}: expected {d} features, found {}",
                row.len().saturating_sub(3)
            )));
        }
        let split = Split::parse(&row[2]).ok_or_else(|| {
            Error::Dataset(format!(
                "line {line}: split must be `train` or `test`, found `{}`",
                &row[2]
            ))
        })?;
        let features = (3..row.len())
            .map(|j| {
                row[j]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Dataset(format!("line {line}, column {}: {e}", j + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(FeatureRecord {
            id: row[0].trim().to_string(),
            label: row[1].trim().to_string(),
            split,
            features,
        });
    }
    Ok(out)
}

/// Load and validate a CSV feature file against a tree file with a
/// `label_map`.
pub fn load_feature_dataset(path: impl AsRef<Path>, tree_file: &TreeFile) -> Result<(Hierarchy, FeatureDataset)> {
    let tree = tree_file.hierarchy()?;
    let labels = tree_file
        .label_map
        .as_ref()
        .ok_or_else(|| Error::Dataset("tree file has no `label_map`".into()))?;
    let records = read_feature_records(std::fs::File::open(path)?)?;
    let ds = FeatureDataset::from_records(records, &tree, labels)?;
    Ok((tree, ds))
}

pub fn write_feature_csv(writer: impl Write, records: &[FeatureRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let d = records.first().map_or(0, |r| r.features.len());
    let mut header = vec!["id".to_string(), "label".into(), "split".into()];
    header.extend((1..=d).map(|j| format!("f{j}")));
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![r.id.clone(), r.label.clone(), r.split.to_string()];
        row.extend(r.features.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Keep only the diagonal of fitted covariances.
    pub diagonal: bool,
    /// Minimum eigenvalue of fitted covariances.
    pub floor: f64,
    /// Reward noise of the bandit.
    pub noise_std: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            diagonal: false,
            floor: 1e-6,
            noise_std: 0.5,
        }
    }
}

/// Diagnostics of a prior fit.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize)]
pub struct FitReport {
    /// Nodes whose covariance was lifted to the floor, with the added jitter.
    pub jitter: Vec<(NodeId, f64)>,
    pub train_records: usize,
    pub test_records: usize,
}

#[derive(Debug, Clone)]
pub struct FittedProblem {
    pub tree: Arc<Hierarchy>,
    pub prior: LinearPrior,
    pub truth: Instance,
    /// Test feature vectors, the context pool.
    pub contexts: Vec<Vec<f64>>,
    pub report: FitReport,
}

/// Sample mean and covariance (`n − 1` normalization).
pub fn mean_and_covariance(rows: &[&[f64]]) -> (DVector<f64>, DMatrix<f64>) {
    let d = rows[0].len();
    let n = rows.len() as f64;
    let mut mean = DVector::zeros(d);
    for r in rows {
        mean += DVector::from_column_slice(r);
    }
    mean /= n;
    let mut cov = DMatrix::zeros(d, d);
    for r in rows {
        let x = DVector::from_column_slice(r) - &mean;
        cov.ger(1.0, &x, &x, 1.0);
    }
    if rows.len() > 1 {
        cov /= n - 1.0;
    }
    linalg::symmetrize(&mut cov);
    (mean, cov)
}

/// Lift the spectrum of `cov` so its smallest eigenvalue is at least `floor`.
/// Returns the jitter added to the diagonal.
fn apply_floor(cov: &mut DMatrix<f64>, floor: f64) -> f64 {
    let lo = linalg::min_eigenvalue(cov);
    if lo >= floor {
        return 0.0;
    }
    let jitter = floor - lo;
    for i in 0..cov.nrows() {
        cov[(i, i)] += jitter;
    }
    jitter
}

pub fn fit_priors_from_data(ds: &FeatureDataset, tree: &Arc<Hierarchy>, opts: FitOptions) -> Result<FittedProblem> {
    let is_train = |i: usize| ds.records[i].split == Split::Train;
    let mut report = FitReport {
        train_records: (0..ds.len()).filter(|&i| is_train(i)).count(),
        ..FitReport::default()
    };
    report.test_records = ds.len() - report.train_records;

    // Leaves below each node.
    let mut below: Vec<BTreeSet<NodeId>> = vec![BTreeSet::new(); tree.len()];
    for &a in tree.actions() {
        for n in tree.path_to_root(a)? {
            below[n.index()].insert(a);
        }
    }

    for (label, &a) in ds.label_map() {
        let n = (0..ds.len()).filter(|&i| is_train(i) && ds.leaf(i) == a).count();
        if n < 2 {
            return Err(Error::Dataset(format!(
                "class `{label}` has {n} training records, at least 2 are needed"
            )));
        }
    }

    let mut hyper_mean = DVector::zeros(ds.dim());
    let mut covs = Vec::with_capacity(tree.len());
    for id in tree.nodes() {
        let rows = ds.features_where(|i| is_train(i) && below[id.index()].contains(&ds.leaf(i)));
        let (mean, mut cov) = mean_and_covariance(&rows);
        if id.is_root() {
            hyper_mean = mean;
        }
        if opts.diagonal {
            cov = DMatrix::from_diagonal(&cov.diagonal());
        }
        let jitter = apply_floor(&mut cov, opts.floor);
        if jitter > 0.0 {
            log::info!("covariance of node {id} floored: added {jitter:e} to the diagonal");
            report.jitter.push((id, jitter));
        }
        covs.push(cov);
    }
    let prior = LinearPrior::new(tree, hyper_mean, covs, opts.noise_std)?;

    let mut truth = Vec::with_capacity(tree.num_actions() * ds.dim());
    for &a in tree.actions() {
        let rows = ds.features_where(|i| !is_train(i) && ds.leaf(i) == a);
        if rows.is_empty() {
            let label = ds.label_map().iter().find(|(_, &v)| v == a).map(|(k, _)| k.as_str());
            return Err(Error::Dataset(format!(
                "class `{}` has no test records",
                label.unwrap_or("?")
            )));
        }
        truth.extend(mean_and_covariance(&rows).0.iter());
    }
    let truth = Instance::from_actions(Arc::clone(tree), ds.dim(), truth, opts.noise_std)?;
    let contexts = ds
        .features_where(|i| !is_train(i))
        .into_iter()
        .map(<[f64]>::to_vec)
        .collect();
    Ok(FittedProblem {
        tree: Arc::clone(tree),
        prior,
        truth,
        contexts,
        report,
    })
}

/// Synthetic Gaussian-cluster dataset: super-class centres around
/// `offset`, class centres around their super-class, samples around their
/// class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSpec {
    pub superclasses: usize,
    pub classes_per_superclass: usize,
    pub dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub offset: f64,
    pub superclass_std: f64,
    pub class_std: f64,
    pub sample_std: f64,
}

impl Default for ClusterSpec {
    fn default() -> Self {
        ClusterSpec {
            superclasses: 5,
            classes_per_superclass: 5,
            dim: 10,
            train_per_class: 40,
            test_per_class: 20,
            offset: 0.0,
            superclass_std: 1.0,
            class_std: 0.5,
            sample_std: 0.5,
        }
    }
}

/// Generate a cluster dataset and its two-level tree file with `label_map`.
pub fn generate_cluster_dataset(spec: &ClusterSpec, rng: &mut Rng) -> Result<(TreeFile, Vec<FeatureRecord>)> {
    if spec.superclasses < 2 || spec.classes_per_superclass < 2 || spec.dim == 0 {
        return Err(Error::InvalidArgument(
            "cluster dataset needs at least 2 super-classes, 2 classes each and d ≥ 1".into(),
        ));
    }
    let tree = Hierarchy::layered(&[spec.superclasses, spec.classes_per_superclass])?;
    let mut gauss = |center: &[f64], std: f64| -> Vec<f64> {
        center
            .iter()
            .map(|c| c + std * rng.sample::<f64, _>(StandardNormal))
            .collect()
    };
    let origin = vec![spec.offset; spec.dim];
    let mut label_map = BTreeMap::new();
    let mut records = Vec::new();
    let mut counter = 0usize;
    for &s in tree.children(NodeId::ROOT) {
        let sc = gauss(&origin, spec.superclass_std);
        for &a in tree.children(s) {
            let cc = gauss(&sc, spec.class_std);
            let label = format!("class{:02}", tree.action_index(a).unwrap_or(0));
            label_map.insert(label.clone(), a.0);
            for (split, count) in [(Split::Train, spec.train_per_class), (Split::Test, spec.test_per_class)] {
                for _ in 0..count {
                    records.push(FeatureRecord {
                        id: format!("r{counter:05}"),
                        label: label.clone(),
                        split,
                        features: gauss(&cc, spec.sample_std),
                    });
                    counter += 1;
                }
            }
        }
    }
    let mut file = TreeFile::from_parts(&tree, None);
    file.label_map = Some(label_map);
    Ok((file, records))
}
