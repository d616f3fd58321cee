//! Bayes regret bound of `HierTS` on K-armed Gaussian hierarchies.
//!
//! `BR(n) ≤ √(2 n G(n) log(1/δ)) + √(2/π) σ_max K n δ` with the complexity
//! term `G(n) = Σᵢ c^{hᵢ} wᵢ`, where for a leaf
//! `wᵢ = σ₀ᵢ² / log(1 + σ₀ᵢ²/σ²) · log(1 + σ₀ᵢ² n / σ²)` and for an internal
//! node the last factor is `log(1 + σ₀ᵢ² Σ_{j∈ch(i)} σ₀ⱼ⁻²)`.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hierarchy::{Hierarchy, NodeId, ScalarPrior};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeTerm {
    pub node: NodeId,
    pub height: usize,
    pub sigma0_sq: f64,
    pub w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    /// Posterior scaling constant.
    pub c: f64,
    /// `σ ≥ σ₀,max`, in which case `c ≤ 2`.
    pub noise_dominates: bool,
    pub n: usize,
    pub nodes: Vec<NodeTerm>,
    /// `G(n)`.
    pub g: f64,
    /// Largest marginal prior standard deviation of an action.
    pub sigma_max: f64,
}

/// `c = 1 + σ₀,max² / σ²`.
pub fn default_c(prior: &ScalarPrior) -> f64 {
    1.0 + prior.max_variance() / prior.noise_variance()
}

/// Per-node `wᵢ` and `G(n)` for scaling constant `c`.
pub fn complexity_term(tree: &Hierarchy, prior: &ScalarPrior, n: usize, c: f64) -> Result<BoundReport> {
    if !(c >= 1.0 && c.is_finite()) {
        return Err(Error::InvalidArgument(format!("c must be at least 1, got {c}")));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let s2 = prior.noise_variance();
    let mut nodes = Vec::with_capacity(tree.len());
    let mut g = 0.0;
    for id in tree.nodes() {
        let v = prior.variance(id);
        let scale = v / (v / s2).ln_1p();
        let w = if tree.is_action(id) {
            scale * (v * n as f64 / s2).ln_1p()
        } else {
            let inv: f64 = tree.children(id).iter().map(|&j| 1.0 / prior.variance(j)).sum();
            scale * (v * inv).ln_1p()
        };
        let height = tree.node_height(id);
        g += c.powi(height as i32) * w;
        nodes.push(NodeTerm {
            node: id,
            height,
            sigma0_sq: v,
            w,
        });
    }
    let sigma_max = tree
        .actions()
        .iter()
        .map(|&a| prior.marginal_variance(tree, a).map(f64::sqrt))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(BoundReport {
        c,
        noise_dominates: prior.noise_std * prior.noise_std >= prior.max_variance(),
        n,
        nodes,
        g,
        sigma_max,
    })
}

/// `√(2 n G log(1/δ)) + √(2/π) σ_max K n δ`.
pub fn regret_bound(report: &BoundReport, n: usize, delta: f64, k: usize) -> Result<f64> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidArgument(format!("delta must lie in (0, 1], got {delta}")));
    }
    let n = n as f64;
    let first = (2.0 * n * report.g * (1.0 / delta).ln()).sqrt();
    let second = (2.0 / std::f64::consts::PI).sqrt() * report.sigma_max * k as f64 * n * delta;
    Ok(first + second)
}

/// `G(n)` without logarithmic factors: `Σᵢ c^{hᵢ} σ₀ᵢ²`.
pub fn simplified_complexity(tree: &Hierarchy, prior: &ScalarPrior, c: f64) -> f64 {
    tree.nodes()
        .map(|id| c.powi(tree.node_height(id) as i32) * prior.variance(id))
        .sum()
}

/// Complexity term of `TS` without logarithmic factors: `Σₐ σ̄²_{0,a}`.
pub fn simplified_ts_complexity(tree: &Hierarchy, prior: &ScalarPrior) -> Result<f64> {
    tree.actions().iter().map(|&a| prior.marginal_variance(tree, a)).sum()
}

/// CSV with header `node,height,sigma0_sq,w_i`.
pub fn write_bound_csv(writer: impl Write, report: &BoundReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["node", "height", "sigma0_sq", "w_i"])?;
    for t in &report.nodes {
        w.write_record([
            t.node.0.to_string(),
            t.height.to_string(),
            t.sigma0_sq.to_string(),
            t.w.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn leaf_with_unit_variances_and_one_round() {
        let tree = Hierarchy::flat(2).unwrap();
        let prior = ScalarPrior::constant(&tree, 1.0, 0.0, 1.0).unwrap();
        let r = complexity_term(&tree, &prior, 1, 2.0).unwrap();
        assert_abs_diff_eq!(r.nodes[1].w, 1.0, epsilon = 1e-15);
        // Root with two unit children.
        assert_abs_diff_eq!(r.nodes[0].w, 3f64.ln() / 2f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(r.nodes[0].w, 1.584962500721156, epsilon = 1e-12);
        assert_abs_diff_eq!(r.g, 2.0 * r.nodes[0].w + 2.0, epsilon = 1e-14);
        assert_eq!(r.sigma_max, 2f64.sqrt());
    }

    #[test]
    fn bound_terms() {
        let tree = Hierarchy::balanced(2, 2).unwrap();
        let prior = ScalarPrior::constant(&tree, 1.0, 0.0, 1.0).unwrap();
        let n = 500;
        let mut r = complexity_term(&tree, &prior, n, default_c(&prior)).unwrap();
        assert_eq!(r.c, 2.0);
        assert!(r.noise_dominates);
        let second = (2.0 / std::f64::consts::PI).sqrt() * r.sigma_max * 4.0;
        let b = regret_bound(&r, n, 1.0 / n as f64, 4).unwrap();
        let first = (2.0 * n as f64 * r.g * (n as f64).ln()).sqrt();
        assert_abs_diff_eq!(b, first + second, epsilon = 1e-9);
        r.g = 0.0;
        assert_abs_diff_eq!(regret_bound(&r, n, 1.0 / n as f64, 4).unwrap(), second, epsilon = 1e-12);
        assert!(regret_bound(&r, n, 0.0, 4).is_err());
        assert!(regret_bound(&r, n, 1.5, 4).is_err());
        // δ = 1 (the default at n = 1) leaves only the second term.
        assert_abs_diff_eq!(regret_bound(&r, 1, 1.0, 4).unwrap(), second, epsilon = 1e-12);
        assert!(complexity_term(&tree, &prior, n, 0.5).is_err());
    }

    #[test]
    fn simplified_ratio_problem1() {
        // Without logs, G_TS / G = (h+1) b^h / Σ_l b^{h-l} 2^l.
        for (b, h) in [(3, 2), (5, 3), (8, 2)] {
            let tree = Hierarchy::balanced(b, h).unwrap();
            let prior = ScalarPrior::constant(&tree, 1.0, 0.0, 1.0).unwrap();
            let g = simplified_complexity(&tree, &prior, 2.0);
            let expected: f64 = (0..=h)
                .map(|l| (b as f64).powi((h - l) as i32) * 2f64.powi(l as i32))
                .sum();
            assert_abs_diff_eq!(g, expected, epsilon = 1e-9);
            let gts = simplified_ts_complexity(&tree, &prior).unwrap();
            assert_abs_diff_eq!(gts, (h as f64 + 1.0) * (b as f64).powi(h as i32), epsilon = 1e-9);
            // Bounded by 1/(1 - 2/b) b^h, so the ratio is at least (h+1)(1 - 2/b).
            assert!(gts / g >= (h as f64 + 1.0) * (1.0 - 2.0 / b as f64) - 1e-12);
        }
    }

    #[test]
    fn csv_layout() {
        let tree = Hierarchy::flat(2).unwrap();
        let prior = ScalarPrior::constant(&tree, 1.0, 0.0, 1.0).unwrap();
        let r = complexity_term(&tree, &prior, 1, 2.0).unwrap();
        let mut buf = Vec::new();
        write_bound_csv(&mut buf, &r).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "node,height,sigma0_sq,w_i");
        assert_eq!(text.lines().nth(2).unwrap(), "2,0,1,1");
    }
}
