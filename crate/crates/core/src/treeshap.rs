//! Exact SHAP values for [`TreeEnsemble`] via path-dependent TreeSHAP, and a
//! subset-enumeration oracle computing the same quantity.
//!
//! Both use the cover-weighted conditional expectation: a feature outside the
//! coalition is marginalized by descending both children of each split on
//! it, weighted by the children's training covers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::surrogate::{Tree, TreeEnsemble};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    Normalized,
    Original,
}

/// Local attribution of one prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub base_value: f64,
    pub attributions: Vec<f64>,
    pub prediction: f64,
    pub units: Units,
}

impl Explanation {
    pub fn attribution_sum(&self) -> f64 {
        self.attributions.iter().sum()
    }

    /// `|phi_0 + sum(phi) - prediction|`.
    pub fn additivity_gap(&self) -> f64 {
        (self.base_value + self.attribution_sum() - self.prediction).abs()
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct PathElement {
    feature: Option<usize>,
    zero_fraction: f64,
    one_fraction: f64,
    pweight: f64,
}

fn extend_path(path: &mut [PathElement], depth: usize, zero: f64, one: f64, feature: Option<usize>) {
    path[depth] = PathElement {
        feature,
        zero_fraction: zero,
        one_fraction: one,
        pweight: if depth == 0 { 1.0 } else { 0.0 },
    };
    let d1 = (depth + 1) as f64;
    for i in (0..depth).rev() {
        path[i + 1].pweight += one * path[i].pweight * (i + 1) as f64 / d1;
        path[i].pweight = zero * path[i].pweight * (depth - i) as f64 / d1;
    }
}

fn unwind_path(path: &mut [PathElement], depth: usize, index: usize) {
    let one = path[index].one_fraction;
    let zero = path[index].zero_fraction;
    let d1 = (depth + 1) as f64;
    let mut next_one_portion = path[depth].pweight;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = path[i].pweight;
            path[i].pweight = next_one_portion * d1 / ((i + 1) as f64 * one);
            next_one_portion = tmp - path[i].pweight * zero * (depth - i) as f64 / d1;
        } else {
            path[i].pweight = path[i].pweight * d1 / (zero * (depth - i) as f64);
        }
    }
    for i in index..depth {
        path[i].feature = path[i + 1].feature;
        path[i].zero_fraction = path[i + 1].zero_fraction;
        path[i].one_fraction = path[i + 1].one_fraction;
    }
}

fn unwound_path_sum(path: &[PathElement], depth: usize, index: usize) -> f64 {
    let one = path[index].one_fraction;
    let zero = path[index].zero_fraction;
    let d1 = (depth + 1) as f64;
    let mut next_one_portion = path[depth].pweight;
    let mut total = 0.0;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = next_one_portion * d1 / ((i + 1) as f64 * one);
            total += tmp;
            next_one_portion = path[i].pweight - tmp * zero * (depth - i) as f64 / d1;
        } else {
            total += path[i].pweight / zero / ((depth - i) as f64 / d1);
        }
    }
    total
}

struct TreeWalk<'a> {
    tree: &'a Tree,
    row: &'a [f64],
    phi: &'a mut [f64],
}

impl TreeWalk<'_> {
    fn recurse(
        &mut self,
        node: usize,
        parent_path: &[PathElement],
        mut depth: usize,
        zero: f64,
        one: f64,
        feature: Option<usize>,
    ) {
        let mut path = Vec::with_capacity(depth + 2);
        path.extend_from_slice(&parent_path[..depth]);
        path.push(PathElement::default());
        extend_path(&mut path, depth, zero, one, feature);

        let n = &self.tree.nodes[node];
        let Some(f) = n.feature else {
            for i in 1..=depth {
                let w = unwound_path_sum(&path, depth, i);
                let el = path[i];
                self.phi[el.feature.expect("non-root path element")] += w * (el.one_fraction - el.zero_fraction) * n.value;
            }
            return;
        };

        let hot = n.next(self.row[f]);
        let cold = if hot == n.left { n.right } else { n.left };
        let hot_zero = self.tree.nodes[hot].cover / n.cover;
        let cold_zero = self.tree.nodes[cold].cover / n.cover;
        let mut incoming_zero = 1.0;
        let mut incoming_one = 1.0;
        if let Some(k) = (1..=depth).find(|&k| path[k].feature == Some(f)) {
            incoming_zero = path[k].zero_fraction;
            incoming_one = path[k].one_fraction;
            unwind_path(&mut path, depth, k);
            depth -= 1;
        }
        self.recurse(hot, &path, depth + 1, hot_zero * incoming_zero, incoming_one, Some(f));
        self.recurse(cold, &path, depth + 1, cold_zero * incoming_zero, 0.0, Some(f));
    }
}

/// Cover-weighted mean leaf value of a tree.
pub fn tree_expectation(tree: &Tree) -> f64 {
    fn walk(t: &Tree, i: usize) -> f64 {
        let n = &t.nodes[i];
        if n.is_leaf() {
            n.value
        } else {
            (t.nodes[n.left].cover * walk(t, n.left) + t.nodes[n.right].cover * walk(t, n.right)) / n.cover
        }
    }
    walk(tree, 0)
}

/// Adds one tree's (unscaled) SHAP values for `row` into `phi`.
pub fn tree_shap_single(tree: &Tree, row: &[f64], phi: &mut [f64]) {
    let mut walk = TreeWalk { tree, row, phi };
    walk.recurse(0, &[], 0, 1.0, 1.0, None);
}

/// Validated model plus its precomputed base value.
pub struct TreeExplainer<'a> {
    model: &'a TreeEnsemble,
    base_value: f64,
}

impl<'a> TreeExplainer<'a> {
    pub fn new(model: &'a TreeEnsemble) -> Result<Self> {
        model.validate()?;
        let base_value = model.base_score + model.learning_rate * model.trees.iter().map(tree_expectation).sum::<f64>();
        Ok(Self { model, base_value })
    }

    pub fn base_value(&self) -> f64 {
        self.base_value
    }

    pub fn explain(&self, row: &[f64]) -> Result<Explanation> {
        let prediction = self.model.predict(row)?;
        let mut phi = vec![0.0; self.model.n_features()];
        let mut tree_phi = vec![0.0; self.model.n_features()];
        for tree in &self.model.trees {
            tree_phi.iter_mut().for_each(|v| *v = 0.0);
            tree_shap_single(tree, row, &mut tree_phi);
            for (p, t) in phi.iter_mut().zip(&tree_phi) {
                *p += self.model.learning_rate * t;
            }
        }
        Ok(Explanation {
            base_value: self.base_value,
            attributions: phi,
            prediction,
            units: Units::Normalized,
        })
    }
}

/// Path-dependent TreeSHAP for a single row.
pub fn tree_shap(model: &TreeEnsemble, row: &[f64]) -> Result<Explanation> {
    TreeExplainer::new(model)?.explain(row)
}

/// Largest feature count the enumeration oracle accepts.
pub const ORACLE_MAX_FEATURES: usize = 15;

fn conditional_expectation(tree: &Tree, row: &[f64], node: usize, in_coalition: &[bool]) -> f64 {
    let n = &tree.nodes[node];
    match n.feature {
        None => n.value,
        Some(f) if in_coalition[f] => conditional_expectation(tree, row, n.next(row[f]), in_coalition),
        Some(_) => {
            let l = &tree.nodes[n.left];
            let r = &tree.nodes[n.right];
            (l.cover * conditional_expectation(tree, row, n.left, in_coalition)
                + r.cover * conditional_expectation(tree, row, n.right, in_coalition))
                / n.cover
        }
    }
}

/// Exact Shapley values by enumerating every coalition of the features the
/// model splits on. Features never used receive exactly zero.
pub fn brute_force_shap(model: &TreeEnsemble, row: &[f64]) -> Result<Vec<f64>> {
    model.validate()?;
    model.check_row(row)?;
    let mut used: Vec<usize> = model
        .trees
        .iter()
        .flat_map(|t| t.nodes.iter().filter_map(|n| n.feature))
        .collect();
    used.sort_unstable();
    used.dedup();
    let m = used.len();
    if m > ORACLE_MAX_FEATURES {
        return Err(Error::OracleIntractable(m));
    }
    let mut phi = vec![0.0; model.n_features()];
    if m == 0 {
        return Ok(phi);
    }

    let mut in_coalition = vec![false; model.n_features()];
    let values: Vec<f64> = (0..1usize << m)
        .map(|mask| {
            for (bit, &f) in used.iter().enumerate() {
                in_coalition[f] = mask & (1 << bit) != 0;
            }
            model.base_score
                + model.learning_rate
                    * model
                        .trees
                        .iter()
                        .map(|t| conditional_expectation(t, row, 0, &in_coalition))
                        .sum::<f64>()
        })
        .collect();

    // w(s) = s! (m - s - 1)! / m!
    let mut fact = vec![1.0f64; m + 1];
    for i in 1..=m {
        fact[i] = fact[i - 1] * i as f64;
    }
    let weight: Vec<f64> = (0..m).map(|s| fact[s] * fact[m - s - 1] / fact[m]).collect();
    for (bit, &f) in used.iter().enumerate() {
        let mut acc = 0.0;
        for mask in 0..1usize << m {
            if mask & (1 << bit) != 0 {
                continue;
            }
            let s = mask.count_ones() as usize;
            acc += weight[s] * (values[mask | (1 << bit)] - values[mask]);
        }
        phi[f] = acc;
    }
    Ok(phi)
}
