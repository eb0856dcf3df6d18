//! Piecewise-constant decomposition of the maximal function.
//!
//! Grouping points by the highest ancestor attaining Mφ partitions the
//! leaves into cells A(φ, I) indexed by a subtree of "attaining" nodes
//! (the root always counts). On each cell Mφ equals the node average y_I,
//! so Mφ = Σ y_I · χ_{A(φ,I)}. The attaining nodes, their cells, cell
//! measures a_I, levels y_I, the normalized cell masses x_I, and the
//! nearest-enclosing-member map are all collected here.

use crate::error::{Error, Result};
use crate::maximal::{maximal_function, MaximalResult};
use crate::stepfn::{csum, StepFunction};
use crate::tree::{MeasureTree, NodeId};
use std::sync::Arc;

/// The linearization of Mφ for one function φ and exponent p.
#[derive(Debug, Clone)]
pub struct Linearization {
    tree: Arc<MeasureTree>,
    p: f64,
    /// Attaining nodes in ascending id order; always contains the root.
    members: Vec<NodeId>,
    /// members-index per node id, `u32::MAX` when the node is not a member.
    member_pos: Vec<u32>,
    /// Cell A(φ, I) per member: the leaves whose argmax is I.
    cells: Vec<Vec<NodeId>>,
    /// a_I = μ(A(φ, I)).
    cell_measure: Vec<f64>,
    /// y_I = Av_I(φ).
    level: Vec<f64>,
    /// x_I = a_I^(-1 + 1/p) ∫_{A(φ,I)} φ dμ (zero for an empty cell).
    holder_mass: Vec<f64>,
    /// ∫_{A(φ,I)} φ dμ.
    cell_integral: Vec<f64>,
    /// Nearest member strictly containing each member; `None` for the root.
    outer: Vec<Option<usize>>,
    /// Member index per leaf position.
    leaf_member: Vec<u32>,
}

/// Groups leaves by their argmax node and assembles the decomposition.
pub fn linearize(phi: &StepFunction, p: f64) -> Result<Linearization> {
    let max = maximal_function(phi);
    linearize_with(phi, &max, p)
}

/// Same as [`linearize`] but reuses a precomputed maximal pass.
pub fn linearize_with(phi: &StepFunction, max: &MaximalResult, p: f64) -> Result<Linearization> {
    if phi.integral() == 0.0 {
        return Err(Error::Domain("cannot linearize the zero function".into()));
    }
    let tree = Arc::clone(phi.tree());
    let n = tree.node_count();
    let mut is_member = vec![false; n];
    is_member[tree.root().index()] = true;
    for &g in &max.argmax {
        is_member[g.index()] = true;
    }
    let members: Vec<NodeId> = (0..n as u32).map(NodeId).filter(|id| is_member[id.index()]).collect();
    let mut member_pos = vec![u32::MAX; n];
    for (i, m) in members.iter().enumerate() {
        member_pos[m.index()] = i as u32;
    }

    let mut cells: Vec<Vec<NodeId>> = vec![Vec::new(); members.len()];
    let mut leaf_member = vec![u32::MAX; tree.leaf_count()];
    for (pos, &leaf) in tree.leaves().iter().enumerate() {
        let mi = member_pos[max.argmax[pos].index()];
        cells[mi as usize].push(leaf);
        leaf_member[pos] = mi;
    }

    let mut cell_measure = Vec::with_capacity(members.len());
    let mut cell_integral = Vec::with_capacity(members.len());
    let mut level = Vec::with_capacity(members.len());
    let mut holder_mass = Vec::with_capacity(members.len());
    for (i, m) in members.iter().enumerate() {
        let a = csum(cells[i].iter().map(|&l| tree.measure(l)));
        let mass = csum(cells[i].iter().map(|&l| phi.value_at(l) * tree.measure(l)));
        cell_measure.push(a);
        cell_integral.push(mass);
        level.push(phi.average(*m));
        holder_mass.push(if a > 0.0 { a.powf(-1.0 + 1.0 / p) * mass } else { 0.0 });
    }

    let outer = members
        .iter()
        .map(|&m| {
            let mut cur = tree.parent(m);
            while let Some(id) = cur {
                if member_pos[id.index()] != u32::MAX {
                    return Some(member_pos[id.index()] as usize);
                }
                cur = tree.parent(id);
            }
            None
        })
        .collect();

    Ok(Linearization {
        tree,
        p,
        members,
        member_pos,
        cells,
        cell_measure,
        level,
        holder_mass,
        cell_integral,
        outer,
        leaf_member,
    })
}

impl Linearization {
    pub fn tree(&self) -> &Arc<MeasureTree> {
        &self.tree
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn members(&self) -> &[NodeId] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        false // the root is always a member
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.member_index(node).is_some()
    }

    pub fn member_index(&self, node: NodeId) -> Option<usize> {
        let p = *self.member_pos.get(node.index())?;
        (p != u32::MAX).then_some(p as usize)
    }

    pub fn cell(&self, i: usize) -> &[NodeId] {
        &self.cells[i]
    }

    pub fn cell_measure(&self, i: usize) -> f64 {
        self.cell_measure[i]
    }

    pub fn level(&self, i: usize) -> f64 {
        self.level[i]
    }

    pub fn holder_mass(&self, i: usize) -> f64 {
        self.holder_mass[i]
    }

    pub fn cell_integral(&self, i: usize) -> f64 {
        self.cell_integral[i]
    }

    /// Index of the nearest member strictly containing member `i`.
    pub fn outer(&self, i: usize) -> Option<usize> {
        self.outer[i]
    }

    /// Member index owning a leaf (by leaf position in the tree).
    pub fn member_of_leaf_pos(&self, pos: usize) -> usize {
        self.leaf_member[pos] as usize
    }

    /// Σ a_I y_I^p = ∫ (Mφ)^p.
    pub fn energy(&self) -> f64 {
        csum((0..self.len()).map(|i| self.cell_measure[i] * self.level[i].powf(self.p)))
    }

    /// Rebuilds Mφ as Σ y_I χ_{A(φ,I)}; equals the direct evaluation exactly.
    pub fn reconstruct_maximal(&self) -> StepFunction {
        let values = self
            .leaf_member
            .iter()
            .map(|&mi| self.level[mi as usize])
            .collect();
        StepFunction::new(Arc::clone(&self.tree), values)
            .expect("levels are finite and nonnegative")
    }

    /// True when membership is exactly characterized by strict average
    /// dominance: a non-root node is a member iff its average strictly
    /// exceeds every proper ancestor's.
    pub fn check_membership_rule(&self, phi: &StepFunction) -> bool {
        let tree = &self.tree;
        let n = tree.node_count();
        // strict maximum of averages over proper ancestors, top-down
        let mut anc_max = vec![f64::NEG_INFINITY; n];
        for id in tree.node_ids() {
            let here = anc_max[id.index()].max(phi.average(id));
            for &c in tree.children(id) {
                anc_max[c.index()] = here;
            }
        }
        for id in tree.node_ids() {
            if id == tree.root() {
                continue;
            }
            let dominant = phi.average(id) > anc_max[id.index()];
            if dominant != self.contains(id) {
                return false;
            }
        }
        true
    }

    /// Structural checks of the cell partition.
    pub fn check_partition_structure(&self, tau: f64) -> PartitionChecks {
        let tree = &self.tree;
        // (nesting) no member strictly between a leaf and its cell owner
        let mut nesting = true;
        'leaves: for (pos, &leaf) in tree.leaves().iter().enumerate() {
            let owner = self.members[self.leaf_member[pos] as usize];
            let mut cur = leaf;
            while cur != owner {
                if self.contains(cur) {
                    nesting = false;
                    break 'leaves;
                }
                cur = match tree.parent(cur) {
                    Some(p) => p,
                    None => break,
                };
            }
        }

        // (child outside) every internal member has a child off the subtree
        let child_outside = self
            .members
            .iter()
            .filter(|&&m| !tree.is_leaf(m))
            .all(|&m| tree.children(m).iter().any(|&c| !self.contains(c)));

        // (covering) leaves under a member are exactly the cells of enclosed
        // members, checked as set inclusion plus a mass identity
        let mut covering = true;
        for &m in &self.members {
            for leaf in tree.leaves_under(m) {
                let owner =
                    self.members[self.leaf_member[tree.leaf_position(leaf).unwrap()] as usize];
                if tree.depth(owner) < tree.depth(m) {
                    covering = false;
                }
            }
        }
        if covering {
            // Σ_{members J ⊆ I} a_J accumulated along nearest-enclosing links
            let mut subtree_mass = self.cell_measure.clone();
            for i in (0..self.len()).rev() {
                if let Some(o) = self.outer[i] {
                    subtree_mass[o] += subtree_mass[i];
                }
            }
            for (i, &m) in self.members.iter().enumerate() {
                if (subtree_mass[i] - tree.measure(m)).abs() > tau * tree.measure(m).max(1.0) {
                    covering = false;
                }
            }
        }

        // (measure identity) a_I = μ(I) - Σ_{outer(J) = I} μ(J)
        let mut inner_sum = vec![0.0; self.len()];
        for i in 0..self.len() {
            if let Some(o) = self.outer[i] {
                inner_sum[o] += tree.measure(self.members[i]);
            }
        }
        let measure_identity = (0..self.len()).all(|i| {
            let expected = self.tree.measure(self.members[i]) - inner_sum[i];
            (self.cell_measure[i] - expected).abs() <= tau
        });

        PartitionChecks { nesting, child_outside, covering, measure_identity }
    }
}

/// Results of the four structural checks on the cell partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PartitionChecks {
    /// A cell meets another member's node only if the member encloses it.
    pub nesting: bool,
    /// Every internal member has at least one child that is not a member.
    pub child_outside: bool,
    /// Every member is covered by the cells of the members it encloses.
    pub covering: bool,
    /// a_I = μ(I) - Σ μ(J) over members J whose nearest enclosure is I.
    pub measure_identity: bool,
}

impl PartitionChecks {
    pub fn all(&self) -> bool {
        self.nesting && self.child_outside && self.covering && self.measure_identity
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::TAU_NUM;
    use crate::tree::MeasureTree;

    fn spike() -> StepFunction {
        let tree = Arc::new(MeasureTree::build_uniform(2, 2).unwrap());
        StepFunction::new(tree, vec![4.0, 0.0, 0.0, 0.0]).unwrap()
    }

    #[test]
    fn constant_collapses_to_root() {
        let tree = Arc::new(MeasureTree::build_uniform(2, 2).unwrap());
        let phi = StepFunction::constant(Arc::clone(&tree), 1.5).unwrap();
        let lin = linearize(&phi, 2.0).unwrap();
        assert_eq!(lin.members(), &[tree.root()]);
        assert_eq!(lin.cell(0).len(), 4);
        assert_eq!(lin.level(0), 1.5);
        assert_eq!(lin.cell_measure(0), 1.0);
    }

    #[test]
    fn spike_worked_example() {
        let phi = spike();
        let tree = phi.tree();
        let leaves = tree.leaves();
        let left = tree.children(tree.root())[0];
        let lin = linearize(&phi, 2.0).unwrap();

        assert_eq!(lin.members(), &[tree.root(), left, leaves[0]]);

        let root_i = lin.member_index(tree.root()).unwrap();
        let left_i = lin.member_index(left).unwrap();
        let leaf_i = lin.member_index(leaves[0]).unwrap();

        assert_eq!(lin.cell(root_i), &[leaves[2], leaves[3]]);
        assert_eq!(lin.cell_measure(root_i), 0.5);
        assert_eq!(lin.level(root_i), 1.0);

        assert_eq!(lin.cell(left_i), &[leaves[1]]);
        assert_eq!(lin.cell_measure(left_i), 0.25);
        assert_eq!(lin.level(left_i), 2.0);

        assert_eq!(lin.cell(leaf_i), &[leaves[0]]);
        assert_eq!(lin.cell_measure(leaf_i), 0.25);
        assert_eq!(lin.level(leaf_i), 4.0);
        // x = a^(-1/2) ∫ = 2 · 1
        assert!((lin.holder_mass(leaf_i) - 2.0).abs() <= 1e-15);

        assert_eq!(lin.outer(leaf_i), Some(left_i));
        assert_eq!(lin.outer(left_i), Some(root_i));
        assert_eq!(lin.outer(root_i), None);
    }

    #[test]
    fn membership_rule_examples() {
        let phi = spike();
        let lin = linearize(&phi, 2.0).unwrap();
        assert!(lin.check_membership_rule(&phi));

        let tree = Arc::new(MeasureTree::build_uniform(2, 3).unwrap());
        let c = StepFunction::constant(Arc::clone(&tree), 0.7).unwrap();
        let lc = linearize(&c, 2.0).unwrap();
        assert_eq!(lc.members().len(), 1);
        assert!(lc.check_membership_rule(&c));
    }

    #[test]
    fn partition_structure_examples() {
        let phi = spike();
        let lin = linearize(&phi, 2.0).unwrap();
        let checks = lin.check_partition_structure(TAU_NUM);
        assert!(checks.all(), "{checks:?}");

        // measure identity at the left node: 0.25 = 0.5 - 0.25
        let tree = phi.tree();
        let left = tree.children(tree.root())[0];
        let li = lin.member_index(left).unwrap();
        assert_eq!(lin.cell_measure(li), tree.measure(left) - 0.25);

        let c = StepFunction::constant(Arc::clone(tree), 2.0).unwrap();
        let lc = linearize(&c, 2.0).unwrap();
        assert!(lc.check_partition_structure(TAU_NUM).all());
    }

    #[test]
    fn reconstruction_is_exact() {
        let phi = spike();
        let lin = linearize(&phi, 2.0).unwrap();
        let rebuilt = lin.reconstruct_maximal();
        assert_eq!(rebuilt.values(), &[4.0, 2.0, 1.0, 1.0]);

        let direct = maximal_function(&phi);
        assert_eq!(rebuilt.values(), direct.mphi.values());
    }

    #[test]
    fn outer_chain_reaches_root_with_strictly_increasing_levels() {
        let tree = Arc::new(MeasureTree::build_uniform(2, 4).unwrap());
        let vals: Vec<f64> = (0..16).map(|i| ((i * 13 + 5) % 7) as f64 * 0.8).collect();
        let phi = StepFunction::new(Arc::clone(&tree), vals).unwrap();
        let lin = linearize(&phi, 2.0).unwrap();
        for i in 0..lin.len() {
            let mut cur = i;
            let mut hops = 0;
            while let Some(o) = lin.outer(cur) {
                assert!(lin.level(o) < lin.level(cur), "levels grow strictly inward");
                cur = o;
                hops += 1;
                assert!(hops <= lin.len());
            }
            assert_eq!(lin.members()[cur], tree.root());
        }
    }

    #[test]
    fn energy_matches_maximal_integral() {
        let tree = Arc::new(MeasureTree::build_uniform(3, 3).unwrap());
        let vals: Vec<f64> = (0..27).map(|i| ((i * 11 + 2) % 9) as f64 * 0.4).collect();
        let phi = StepFunction::new(Arc::clone(&tree), vals).unwrap();
        for &p in &[1.5, 2.0, 3.0] {
            let lin = linearize(&phi, p).unwrap();
            let direct = maximal_function(&phi).p_integral(p);
            assert!(
                (lin.energy() - direct).abs() <= TAU_NUM * direct.max(1.0),
                "p = {p}"
            );
        }
    }

    #[test]
    fn rejects_zero_function() {
        let tree = Arc::new(MeasureTree::build_uniform(2, 2).unwrap());
        let zero = StepFunction::constant(tree, 0.0).unwrap();
        assert!(linearize(&zero, 2.0).is_err());
    }
}
