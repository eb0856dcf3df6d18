//! The maximal operator on a measure tree: at each point, the largest
//! average of the function over the tree elements containing it. On a finite
//! tree the supremum over the ancestor chain (leaf included) is attained, so
//! the result is again a leaf-constant function.

use crate::bellman::{bellman_value, z_max};
use crate::error::Result;
use crate::stepfn::{csum, StepFunction};
use crate::tree::NodeId;
use std::sync::Arc;

/// Mφ together with, per leaf, the highest ancestor attaining the maximum.
#[derive(Debug, Clone)]
pub struct MaximalResult {
    pub mphi: StepFunction,
    /// For each leaf (in `tree.leaves()` order) the largest-measure ancestor
    /// whose average equals Mφ there. Ties go to the higher node.
    pub argmax: Vec<NodeId>,
}

impl MaximalResult {
    pub fn argmax_at(&self, leaf: NodeId) -> NodeId {
        let pos = self
            .mphi
            .tree()
            .leaf_position(leaf)
            .expect("argmax_at called on a non-leaf");
        self.argmax[pos]
    }

    /// ∫ (Mφ)^p over the whole space.
    pub fn p_integral(&self, p: f64) -> f64 {
        self.mphi.p_integral(p)
    }
}

/// Evaluates Mφ by a single root-to-leaf pass carrying the running maximum.
/// Strict improvement moves the argmax down; ties keep the higher node.
pub fn maximal_function(phi: &StepFunction) -> MaximalResult {
    let tree = phi.tree();
    let n_leaves = tree.leaf_count();
    let mut values = vec![0.0; n_leaves];
    let mut argmax = vec![tree.root(); n_leaves];
    let mut stack = vec![(tree.root(), phi.average(tree.root()), tree.root())];
    while let Some((id, best, best_node)) = stack.pop() {
        let avg = phi.average(id);
        let (best, best_node) = if avg > best { (avg, id) } else { (best, best_node) };
        if let Some(pos) = tree.leaf_position(id) {
            values[pos] = best;
            argmax[pos] = best_node;
        } else {
            for &c in tree.children(id) {
                stack.push((c, best, best_node));
            }
        }
    }
    let mphi = StepFunction::new(Arc::clone(tree), values).expect("Mφ values are finite and nonnegative");
    MaximalResult { mphi, argmax }
}

/// Slack of the weak-type bound at level λ:
/// ∫_{Mφ>λ} φ dμ - λ μ({Mφ > λ}) >= 0.
pub fn weak_type_slack(phi: &StepFunction, max: &MaximalResult, lambda: f64) -> f64 {
    let tree = phi.tree();
    let mut weighted = Vec::new();
    let mut mass = Vec::new();
    for (i, &leaf) in tree.leaves().iter().enumerate() {
        if max.mphi.values()[i] > lambda {
            let m = tree.measure(leaf);
            weighted.push(phi.values()[i] * m);
            mass.push(m);
        }
    }
    csum(weighted) - lambda * csum(mass)
}

/// Slack of the norm bound (p/(p-1))^p F - ∫ (Mφ)^p >= 0.
pub fn lp_bound_slack(phi: &StepFunction, max: &MaximalResult, p: f64) -> f64 {
    z_max(p).powf(p) * phi.p_integral(p) - max.p_integral(p)
}

/// Slack of the sharp bound F omega_p(f^p/F)^p - ∫ (Mφ)^p >= 0.
pub fn bellman_bound_slack(phi: &StepFunction, max: &MaximalResult, p: f64) -> Result<f64> {
    let m = phi.moments(p)?;
    Ok(bellman_value(p, m.f, m.big_f)? - max.p_integral(p))
}

/// Distinct values of Mφ, ascending.
pub fn distinct_levels(max: &MaximalResult) -> Vec<f64> {
    let mut levels: Vec<f64> = max.mphi.values().to_vec();
    levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
    levels.dedup();
    levels
}
