//! Sharp integral inequalities as nonnegative slack functionals.
//!
//! Each check takes a function, its linearization, a pairwise disjoint
//! family of attaining nodes, and a parameter β > 0, and returns
//! left-hand-side minus right-hand-side of the corresponding bound. All
//! slacks are nonnegative up to floating-point tolerance, for every β; at
//! β* = omega_p(f^p/F) - 1 the whole-space slack measures how far the
//! function is from extremality.

use crate::bellman::BellmanParams;
use crate::error::{Error, Result};
use crate::linearize::Linearization;
use crate::stepfn::{csum, StepFunction};
use crate::tree::NodeId;
use rand::seq::SliceRandom;
use rand::Rng;

/// A pairwise disjoint family of attaining nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilyKind {
    /// Every attaining node meets the family (ancestor or descendant).
    Maximal,
    Plain,
}

/// Validated family: indices into the linearization's member list.
#[derive(Debug, Clone)]
pub struct FamilySelection {
    pub members: Vec<NodeId>,
    pub kind: FamilyKind,
    indices: Vec<usize>,
}

impl FamilySelection {
    pub fn new(lin: &Linearization, members: Vec<NodeId>) -> Result<Self> {
        let indices = check_family(lin, &members)?;
        let kind = if is_maximal_family(lin, &members)? {
            FamilyKind::Maximal
        } else {
            FamilyKind::Plain
        };
        Ok(FamilySelection { members, kind, indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }
}

/// Checks membership and pairwise disjointness, returning member indices.
fn check_family(lin: &Linearization, members: &[NodeId]) -> Result<Vec<usize>> {
    let tree = lin.tree();
    let mut indices = Vec::with_capacity(members.len());
    for &m in members {
        let idx = lin
            .member_index(m)
            .ok_or_else(|| Error::Usage(format!("node {m} is not an attaining node")))?;
        indices.push(idx);
    }
    for (i, &a) in members.iter().enumerate() {
        for &b in &members[i + 1..] {
            if tree.is_ancestor_or_self(a, b) || tree.is_ancestor_or_self(b, a) {
                return Err(Error::Usage(format!("family members {a} and {b} are nested")));
            }
        }
    }
    Ok(indices)
}

/// True when every attaining node intersects the union of the family,
/// i.e. is an ancestor of some member or enclosed by one.
pub fn is_maximal_family(lin: &Linearization, members: &[NodeId]) -> Result<bool> {
    check_family(lin, members)?;
    let tree = lin.tree();
    Ok(lin.members().iter().all(|&node| {
        members
            .iter()
            .any(|&m| tree.is_ancestor_or_self(node, m) || tree.is_ancestor_or_self(m, node))
    }))
}

/// Marks the leaves lying under some family member.
fn union_mask(lin: &Linearization, indices: &[usize]) -> Vec<bool> {
    let tree = lin.tree();
    let mut mask = vec![false; tree.leaf_count()];
    for &i in indices {
        for leaf in tree.leaves_under(lin.members()[i]) {
            mask[tree.leaf_position(leaf).unwrap()] = true;
        }
    }
    mask
}

struct SplitIntegrals {
    phi_p_in: f64,
    phi_p_out: f64,
    max_p_in: f64,
    max_p_out: f64,
}

/// ∫ φ^p and ∫ (Mφ)^p over the family union and its complement. Mφ is read
/// off the linearization (level of the owning cell), so no second maximal
/// pass is needed.
fn split_integrals(phi: &StepFunction, lin: &Linearization, indices: &[usize]) -> SplitIntegrals {
    let tree = lin.tree();
    let p = lin.p();
    let mask = union_mask(lin, indices);
    let mut phi_in = Vec::new();
    let mut phi_out = Vec::new();
    let mut max_in = Vec::new();
    let mut max_out = Vec::new();
    for (pos, &leaf) in tree.leaves().iter().enumerate() {
        let m = tree.measure(leaf);
        let fp = phi.values()[pos].powf(p) * m;
        let mp = lin.level(lin.member_of_leaf_pos(pos)).powf(p) * m;
        if mask[pos] {
            phi_in.push(fp);
            max_in.push(mp);
        } else {
            phi_out.push(fp);
            max_out.push(mp);
        }
    }
    SplitIntegrals {
        phi_p_in: csum(phi_in),
        phi_p_out: csum(phi_out),
        max_p_in: csum(max_in),
        max_p_out: csum(max_out),
    }
}

fn member_energy(lin: &Linearization, indices: &[usize]) -> f64 {
    let tree = lin.tree();
    csum(indices.iter().map(|&i| {
        let m = lin.members()[i];
        tree.measure(m) * lin.level(i).powf(lin.p())
    }))
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0) && beta != 0.0 {
        return Err(Error::Domain(format!("beta = {beta} must be nonnegative")));
    }
    Ok(())
}

/// Slack of the bound over the union of a disjoint family:
/// ∫_{∪ I_j} φ^p  >=  Σ μ(I_j) y_j^p / (β+1)^(p-1)
///                    + (p-1)β/(β+1)^p · ∫_{∪ I_j} (Mφ)^p.
pub fn inside_slack(
    phi: &StepFunction,
    lin: &Linearization,
    members: &[NodeId],
    beta: f64,
) -> Result<f64> {
    check_beta(beta)?;
    let indices = check_family(lin, members)?;
    let p = lin.p();
    let ints = split_integrals(phi, lin, &indices);
    let h = member_energy(lin, &indices);
    let b1 = beta + 1.0;
    Ok(ints.phi_p_in - h * b1.powf(1.0 - p) - (p - 1.0) * beta * b1.powf(-p) * ints.max_p_in)
}

/// Slack of the bound over the complement of a disjoint family:
/// ∫_{X ∖ ∪ I_j} φ^p  >=  (f^p - Σ μ(I_j) y_j^p) / (β+1)^(p-1)
///                        + (p-1)β/(β+1)^p · ∫_{X ∖ ∪ I_j} (Mφ)^p.
/// No maximality is required of the family.
pub fn outside_slack(
    phi: &StepFunction,
    lin: &Linearization,
    members: &[NodeId],
    beta: f64,
) -> Result<f64> {
    check_beta(beta)?;
    let indices = check_family(lin, members)?;
    let p = lin.p();
    let ints = split_integrals(phi, lin, &indices);
    let h = member_energy(lin, &indices);
    let fp = phi.integral().powf(p);
    let b1 = beta + 1.0;
    Ok(ints.phi_p_out
        - (fp - h) * b1.powf(1.0 - p)
        - (p - 1.0) * beta * b1.powf(-p) * ints.max_p_out)
}

/// [`outside_slack`] restricted to maximal families; rejects others.
pub fn outside_slack_maximal(
    phi: &StepFunction,
    lin: &Linearization,
    members: &[NodeId],
    beta: f64,
) -> Result<f64> {
    if !is_maximal_family(lin, members)? {
        return Err(Error::Usage("family is not maximal among attaining nodes".into()));
    }
    outside_slack(phi, lin, members, beta)
}

/// Whole-space slack: F - f^p/(β+1)^(p-1) - (p-1)β/(β+1)^p ∫ (Mφ)^p >= 0.
pub fn global_slack(phi: &StepFunction, p: f64, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    let m = phi.moments(p)?;
    let max_p = crate::maximal::maximal_function(phi).p_integral(p);
    let b1 = beta + 1.0;
    Ok(m.big_f - m.f.powf(p) * b1.powf(1.0 - p) - (p - 1.0) * beta * b1.powf(-p) * max_p)
}

/// Whole-space slack at β* = omega_p(f^p/F) - 1; its vanishing along a
/// sequence characterizes extremality. Zero for constant functions.
pub fn gap_at_beta_star(phi: &StepFunction, p: f64) -> Result<f64> {
    let m = phi.moments(p)?;
    let params = BellmanParams::from_moments(&m)?;
    global_slack(phi, p, params.beta_star)
}

/// Per-node diagnostic weights of the slack proofs.
#[derive(Debug, Clone)]
pub struct IneqTerms {
    /// (node, y_I, μ(I)) for each family member.
    pub member_levels: Vec<(NodeId, f64, f64)>,
    /// (node, a_I / μ(I)) over all attaining nodes; always in [0, 1].
    pub rho: Vec<(NodeId, f64)>,
    /// (node, (β+1) - β ρ_I); always in [1, β+1].
    pub tau: Vec<(NodeId, f64)>,
}

pub fn ineq_terms(lin: &Linearization, members: &[NodeId], beta: f64) -> Result<IneqTerms> {
    let indices = check_family(lin, members)?;
    let tree = lin.tree();
    let member_levels = indices
        .iter()
        .map(|&i| {
            let m = lin.members()[i];
            (m, lin.level(i), tree.measure(m))
        })
        .collect();
    let rho: Vec<(NodeId, f64)> = (0..lin.len())
        .map(|i| {
            let m = lin.members()[i];
            (m, lin.cell_measure(i) / tree.measure(m))
        })
        .collect();
    let tau = rho
        .iter()
        .map(|&(m, r)| (m, (beta + 1.0) - beta * r))
        .collect();
    Ok(IneqTerms { member_levels, rho, tau })
}

/// 25-point logarithmic β grid on [1e-3, 1e3]; callers append β* themselves.
pub fn beta_grid() -> Vec<f64> {
    (0..25)
        .map(|i| 10f64.powf(-3.0 + 6.0 * i as f64 / 24.0))
        .collect()
}

/// Random antichain of attaining nodes (possibly empty).
pub fn random_antichain<R: Rng>(lin: &Linearization, rng: &mut R) -> Vec<NodeId> {
    let tree = lin.tree();
    let mut order: Vec<usize> = (0..lin.len()).collect();
    order.shuffle(rng);
    let keep = rng.gen_range(0.2..0.95);
    let mut chosen: Vec<NodeId> = Vec::new();
    for i in order {
        if !rng.gen_bool(keep) {
            continue;
        }
        let node = lin.members()[i];
        let clear = chosen
            .iter()
            .all(|&c| !tree.is_ancestor_or_self(c, node) && !tree.is_ancestor_or_self(node, c));
        if clear {
            chosen.push(node);
        }
    }
    chosen.sort_unstable();
    chosen
}

/// Extends a disjoint family until it is maximal by adding every uncovered
/// minimal attaining node.
pub fn complete_to_maximal(lin: &Linearization, members: &[NodeId]) -> Result<Vec<NodeId>> {
    check_family(lin, members)?;
    let tree = lin.tree();
    let mut has_inner = vec![false; lin.len()];
    for i in 0..lin.len() {
        if let Some(o) = lin.outer(i) {
            has_inner[o] = true;
        }
    }
    let mut out = members.to_vec();
    for i in 0..lin.len() {
        if has_inner[i] {
            continue;
        }
        let node = lin.members()[i];
        let covered = out
            .iter()
            .any(|&m| tree.is_ancestor_or_self(m, node) || tree.is_ancestor_or_self(node, m));
        if !covered {
            out.push(node);
        }
    }
    out.sort_unstable();
    debug_assert!(is_maximal_family(lin, &out).unwrap());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::TAU_NUM;
    use crate::linearize::linearize;
    use crate::tree::MeasureTree;
    use std::sync::Arc;

    fn spike() -> (StepFunction, Linearization) {
        let tree = Arc::new(MeasureTree::build_uniform(2, 2).unwrap());
        let phi = StepFunction::new(tree, vec![4.0, 0.0, 0.0, 0.0]).unwrap();
        let lin = linearize(&phi, 2.0).unwrap();
        (phi, lin)
    }

    fn left_node(phi: &StepFunction) -> NodeId {
        let tree = phi.tree();
        tree.children(tree.root())[0]
    }

    #[test]
    fn maximal_family_examples() {
        let (phi, lin) = spike();
        let tree = phi.tree();
        let left = left_node(&phi);
        assert!(is_maximal_family(&lin, &[left]).unwrap());
        assert!(is_maximal_family(&lin, &[tree.root()]).unwrap());
        // the spike's attaining nodes all touch leaf 0's chain
        assert!(is_maximal_family(&lin, &[tree.leaves()[0]]).unwrap());

        // two-sided spike: a single leaf family misses the other side
        let tree = Arc::new(MeasureTree::build_uniform(2, 2).unwrap());
        let two = StepFunction::new(Arc::clone(&tree), vec![4.0, 0.0, 4.0, 0.0]).unwrap();
        let lin2 = linearize(&two, 2.0).unwrap();
        assert!(!is_maximal_family(&lin2, &[tree.leaves()[0]]).unwrap());
        assert!(is_maximal_family(&lin2, &[tree.leaves()[0], tree.leaves()[2]]).unwrap());
    }

    #[test]
    fn family_validation() {
        let (phi, lin) = spike();
        let tree = phi.tree();
        // leaf 1 is not an attaining node
        assert!(is_maximal_family(&lin, &[tree.leaves()[1]]).is_err());
        // nested pair rejected
        assert!(is_maximal_family(&lin, &[tree.root(), tree.leaves()[0]]).is_err());
    }

    #[test]
    fn outside_slack_worked_example() {
        let (phi, lin) = spike();
        let left = left_node(&phi);
        let slack = outside_slack_maximal(&phi, &lin, &[left], 1.0).unwrap();
        assert!((slack - 0.375).abs() <= 1e-12, "{slack}");
    }

    #[test]
    fn outside_slack_root_family_vanishes() {
        let (phi, lin) = spike();
        let root = phi.tree().root();
        let slack = outside_slack_maximal(&phi, &lin, &[root], 1.0).unwrap();
        assert!(slack.abs() <= 1e-12);
    }

    #[test]
    fn outside_slack_requires_maximality_only_in_strict_form() {
        let tree = Arc::new(MeasureTree::build_uniform(2, 2).unwrap());
        let two = StepFunction::new(Arc::clone(&tree), vec![4.0, 0.0, 4.0, 0.0]).unwrap();
        let lin = linearize(&two, 2.0).unwrap();
        let leaf0 = tree.leaves()[0];
        assert!(outside_slack_maximal(&two, &lin, &[leaf0], 1.0).is_err());
        assert!(outside_slack(&two, &lin, &[leaf0], 1.0).is_ok());
    }

    #[test]
    fn inside_slack_worked_example() {
        let (phi, lin) = spike();
        let left = left_node(&phi);
        let slack = inside_slack(&phi, &lin, &[left], 1.0).unwrap();
        assert!((slack - 1.75).abs() <= 1e-12, "{slack}");

        assert_eq!(inside_slack(&phi, &lin, &[], 1.0).unwrap(), 0.0);
    }

    #[test]
    fn nonmaximal_outside_slack_worked_example() {
        let (phi, lin) = spike();
        let leaf0 = phi.tree().leaves()[0];
        let slack = outside_slack(&phi, &lin, &[leaf0], 1.0).unwrap();
        assert!((slack - 1.125).abs() <= 1e-12, "{slack}");
    }

    #[test]
    fn global_slack_worked_example() {
        let (phi, _) = spike();
        let slack = global_slack(&phi, 2.0, 1.0).unwrap();
        assert!((slack - 2.125).abs() <= 1e-12, "{slack}");
    }

    #[test]
    fn global_slack_constant_reduces_to_tangent_bound() {
        let tree = Arc::new(MeasureTree::build_uniform(2, 3).unwrap());
        let c = StepFunction::constant(tree, 1.4).unwrap();
        for &beta in &[0.2, 1.0, 5.0] {
            let slack = global_slack(&c, 2.0, beta).unwrap();
            let fp = 1.4f64.powi(2);
            let expected = fp * crate::bellman::tangent_slack(2.0, beta, 1.0);
            assert!((slack - expected).abs() <= 1e-12, "beta = {beta}");
            assert!(slack >= 0.0);
        }
    }

    #[test]
    fn inside_slack_with_root_matches_global() {
        let (phi, lin) = spike();
        let root = phi.tree().root();
        let params = BellmanParams::new(2.0, 1.0, 4.0).unwrap();
        let a = inside_slack(&phi, &lin, &[root], params.beta_star).unwrap();
        let b = global_slack(&phi, 2.0, params.beta_star).unwrap();
        assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn gap_at_beta_star_examples() {
        let tree = Arc::new(MeasureTree::build_uniform(2, 2).unwrap());
        let c = StepFunction::constant(Arc::clone(&tree), 2.0).unwrap();
        assert!(gap_at_beta_star(&c, 2.0).unwrap().abs() <= 1e-9);

        let (phi, _) = spike();
        // independent route: c solves -z^2 + 2z = 1/4, so c = 1 + sqrt(3)/2
        let c_exact = 1.0 + 0.75f64.sqrt();
        let beta = c_exact - 1.0;
        let expected = 4.0 - 1.0 / c_exact - (beta / c_exact.powi(2)) * 5.5;
        let gap = gap_at_beta_star(&phi, 2.0).unwrap();
        assert!((gap - expected).abs() <= 1e-9, "{gap} vs {expected}");
    }

    #[test]
    fn inside_plus_outside_equals_global() {
        let (phi, lin) = spike();
        let left = left_node(&phi);
        for &beta in &[0.3, 1.0, 4.2] {
            let total = inside_slack(&phi, &lin, &[left], beta).unwrap()
                + outside_slack(&phi, &lin, &[left], beta).unwrap();
            let global = global_slack(&phi, 2.0, beta).unwrap();
            assert!((total - global).abs() <= 1e-12, "beta = {beta}");
        }
    }

    #[test]
    fn ineq_terms_ranges() {
        let (phi, lin) = spike();
        let left = left_node(&phi);
        let beta = 2.5;
        let terms = ineq_terms(&lin, &[left], beta).unwrap();
        for &(_, r) in &terms.rho {
            assert!((0.0..=1.0 + TAU_NUM).contains(&r));
        }
        for &(_, t) in &terms.tau {
            assert!(t >= 1.0 - TAU_NUM && t <= beta + 1.0 + TAU_NUM);
        }
        assert_eq!(terms.member_levels.len(), 1);
        assert_eq!(terms.member_levels[0].1, 2.0);
    }

    #[test]
    fn antichain_sampling_and_completion() {
        use rand::SeedableRng;
        let tree = Arc::new(MeasureTree::build_uniform(2, 5).unwrap());
        let vals: Vec<f64> = (0..32).map(|i| ((i * 17 + 3) % 11) as f64).collect();
        let phi = StepFunction::new(Arc::clone(&tree), vals).unwrap();
        let lin = linearize(&phi, 2.0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            let fam = random_antichain(&lin, &mut rng);
            // validated antichain
            FamilySelection::new(&lin, fam.clone()).unwrap();
            let maximal = complete_to_maximal(&lin, &fam).unwrap();
            assert!(is_maximal_family(&lin, &maximal).unwrap());
        }
    }

    #[test]
    fn beta_grid_shape() {
        let grid = beta_grid();
        assert_eq!(grid.len(), 25);
        assert!((grid[0] - 1e-3).abs() < 1e-12);
        assert!((grid[24] - 1e3).abs() < 1e-9);
        assert!(grid.windows(2).all(|w| w[0] < w[1]));
    }
}
