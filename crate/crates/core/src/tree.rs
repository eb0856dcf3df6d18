//! Finite measure trees: hierarchies of sets where the children of every
//! internal node partition it.
//!
//! The root always has measure 1 (the whole probability space). Nodes are
//! stored append-only, so a `NodeId` stays valid across leaf refinement and
//! every child id is strictly larger than its parent's.

use crate::config::TAU_MEAS;
use crate::error::{Error, Result};
use std::fmt;

/// Hard cap on the number of nodes a builder may create.
pub const MAX_NODES: usize = 1 << 23;

/// Dense index into a tree's node table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone)]
struct Node {
    parent: Option<NodeId>,
    children: Vec<NodeId>,
    measure: f64,
    depth: u32,
}

/// A finite measure tree. Construction goes through the builders or the
/// loader; both enforce the structural invariants.
#[derive(Debug, Clone)]
pub struct MeasureTree {
    nodes: Vec<Node>,
    /// Leaves in ascending id order.
    leaves: Vec<NodeId>,
    /// Position of each node in `leaves`, or `u32::MAX` for internal nodes.
    leaf_pos: Vec<u32>,
}

impl MeasureTree {
    fn new_root() -> Self {
        MeasureTree {
            nodes: vec![Node { parent: None, children: Vec::new(), measure: 1.0, depth: 0 }],
            leaves: vec![NodeId(0)],
            leaf_pos: vec![0],
        }
    }

    /// Complete `arity`-regular tree of the given depth; every node at depth
    /// k has measure `arity^-k`.
    pub fn build_uniform(arity: usize, depth: u32) -> Result<Self> {
        if arity < 2 {
            return Err(Error::Domain(format!("arity must be >= 2, got {arity}")));
        }
        if depth < 1 {
            return Err(Error::Domain("depth must be >= 1".into()));
        }
        let mut count: usize = 1;
        let mut level: usize = 1;
        for _ in 0..depth {
            level = level
                .checked_mul(arity)
                .ok_or_else(|| Error::Capacity("uniform tree size overflows".into()))?;
            count = count
                .checked_add(level)
                .ok_or_else(|| Error::Capacity("uniform tree size overflows".into()))?;
            if count > MAX_NODES {
                return Err(Error::Capacity(format!(
                    "uniform({arity}, {depth}) needs {count} nodes, cap is {MAX_NODES}"
                )));
            }
        }
        let mut tree = Self::new_root();
        tree.nodes.reserve(count);
        let mut frontier = vec![NodeId(0)];
        for _ in 0..depth {
            let mut next = Vec::with_capacity(frontier.len() * arity);
            for id in frontier {
                next.extend(tree.split_unchecked(id, &equal_fractions(arity)));
            }
            frontier = next;
        }
        tree.rebuild_leaf_cache();
        Ok(tree)
    }

    /// Chain I_0 ⊃ I_1 ⊃ … ⊃ I_K with measure(I_{k+1}) = ratios[k] * measure(I_k).
    /// The complement ring at step k is uniformly subdivided K-k times with
    /// the given arity, so the largest leaf shrinks as the chain deepens.
    /// The terminal core I_K stays a leaf.
    pub fn build_nested_chain(ratios: &[f64], ring_subdivision: usize) -> Result<Self> {
        if ratios.is_empty() {
            return Err(Error::Domain("ratio list must be nonempty".into()));
        }
        if ring_subdivision < 2 {
            return Err(Error::Domain("ring subdivision must be >= 2".into()));
        }
        for (k, &a) in ratios.iter().enumerate() {
            if !(a > 0.0 && a < 1.0) {
                return Err(Error::Domain(format!("ratio[{k}] = {a} is outside (0,1)")));
            }
        }
        let chain_len = ratios.len();
        let mut est: usize = 2 * chain_len + 2;
        for k in 0..chain_len {
            let levels = (chain_len - k) as u32;
            let subtree = (ring_subdivision
                .checked_pow(levels + 1)
                .ok_or_else(|| Error::Capacity("chain tree size overflows".into()))?
                - 1)
                / (ring_subdivision - 1);
            est = est
                .checked_add(subtree)
                .ok_or_else(|| Error::Capacity("chain tree size overflows".into()))?;
        }
        if est > MAX_NODES {
            return Err(Error::Capacity(format!(
                "nested chain needs about {est} nodes, cap is {MAX_NODES}"
            )));
        }
        let mut tree = Self::new_root();
        let mut core = NodeId(0);
        for (k, &a) in ratios.iter().enumerate() {
            let ids = tree.split_unchecked(core, &[1.0 - a, a]);
            let ring = ids[0];
            core = ids[1];
            let mut frontier = vec![ring];
            for _ in 0..(chain_len - k) {
                let mut next = Vec::new();
                for id in frontier {
                    next.extend(tree.split_unchecked(id, &equal_fractions(ring_subdivision)));
                }
                frontier = next;
            }
        }
        tree.rebuild_leaf_cache();
        Ok(tree)
    }

    /// Appends children with measures `fractions[i] * measure(node)`. The last
    /// child absorbs the rounding defect so the children sum to the parent
    /// almost exactly. Does not touch the leaf cache.
    fn split_unchecked(&mut self, id: NodeId, fractions: &[f64]) -> Vec<NodeId> {
        let measure = self.nodes[id.index()].measure;
        let depth = self.nodes[id.index()].depth + 1;
        let n = fractions.len();
        let mut ids = Vec::with_capacity(n);
        let mut assigned = 0.0;
        for (i, &frac) in fractions.iter().enumerate() {
            let m = if i + 1 == n { measure - assigned } else { frac * measure };
            assigned += m;
            let child = NodeId(self.nodes.len() as u32);
            self.nodes.push(Node { parent: Some(id), children: Vec::new(), measure: m, depth });
            ids.push(child);
        }
        self.nodes[id.index()].children = ids.clone();
        ids
    }

    fn rebuild_leaf_cache(&mut self) {
        self.leaves.clear();
        self.leaf_pos = vec![u32::MAX; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            if node.children.is_empty() {
                self.leaf_pos[i] = self.leaves.len() as u32;
                self.leaves.push(NodeId(i as u32));
            }
        }
    }

    /// Splits one leaf into children with the given measure fractions.
    /// Existing ids and measures are untouched; new ids are appended.
    pub fn refine_leaf(&mut self, leaf: NodeId, fractions: &[f64]) -> Result<Vec<NodeId>> {
        self.refine_leaves(&[(leaf, fractions.to_vec())])
            .map(|mut v| v.pop().unwrap())
    }

    /// Batch version of [`refine_leaf`]: splits several distinct leaves and
    /// rebuilds the leaf cache once.
    pub fn refine_leaves(&mut self, splits: &[(NodeId, Vec<f64>)]) -> Result<Vec<Vec<NodeId>>> {
        for (leaf, fractions) in splits {
            self.check_node(*leaf)?;
            if !self.is_leaf(*leaf) {
                return Err(Error::Usage(format!("node {leaf} is not a leaf")));
            }
            if fractions.len() < 2 {
                return Err(Error::Usage("need at least two fractions".into()));
            }
            if fractions.iter().any(|&f| !(f > 0.0)) {
                return Err(Error::Usage("fractions must be positive".into()));
            }
            let sum: f64 = fractions.iter().sum();
            if (sum - 1.0).abs() > TAU_MEAS {
                return Err(Error::Usage(format!("fractions sum to {sum}, expected 1")));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for (leaf, _) in splits {
            if !seen.insert(*leaf) {
                return Err(Error::Usage(format!("leaf {leaf} split twice in one batch")));
            }
        }
        if self.nodes.len() + splits.iter().map(|(_, f)| f.len()).sum::<usize>() > MAX_NODES {
            return Err(Error::Capacity("refinement exceeds node cap".into()));
        }
        let out = splits
            .iter()
            .map(|(leaf, fractions)| self.split_unchecked(*leaf, fractions))
            .collect();
        self.rebuild_leaf_cache();
        Ok(out)
    }

    /// Picks pairwise disjoint strict descendants of `node` whose measures sum
    /// to `(1 - a) * measure(node)`, splitting at most one leaf to hit the
    /// target exactly.
    pub fn select_subfamily(&mut self, node: NodeId, a: f64) -> Result<Vec<NodeId>> {
        self.check_node(node)?;
        if !(a > 0.0 && a < 1.0) {
            return Err(Error::Domain(format!("a = {a} is outside (0,1)")));
        }
        let target = (1.0 - a) * self.measure(node);
        let cutoff = TAU_MEAS * self.measure(node);
        let mut remaining = target;
        let mut picked = Vec::new();
        for leaf in self.leaves_under(node) {
            if remaining <= cutoff {
                break;
            }
            let m = self.measure(leaf);
            if m <= remaining + cutoff {
                picked.push(leaf);
                remaining -= m;
            } else {
                let r = remaining / m;
                let ids = self.refine_leaf(leaf, &[r, 1.0 - r])?;
                picked.push(ids[0]);
                remaining = 0.0;
            }
        }
        Ok(picked)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    pub fn root(&self) -> NodeId {
        NodeId(0)
    }

    pub fn leaves(&self) -> &[NodeId] {
        &self.leaves
    }

    /// Position of `leaf` in [`leaves`](Self::leaves), if it is a leaf.
    pub fn leaf_position(&self, leaf: NodeId) -> Option<usize> {
        let p = *self.leaf_pos.get(leaf.index())?;
        (p != u32::MAX).then_some(p as usize)
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        self.nodes[id.index()].children.is_empty()
    }

    pub fn measure(&self, id: NodeId) -> f64 {
        self.nodes[id.index()].measure
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.nodes[id.index()].parent
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.index()].children
    }

    pub fn depth(&self, id: NodeId) -> u32 {
        self.nodes[id.index()].depth
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.nodes.len() as u32).map(NodeId)
    }

    fn check_node(&self, id: NodeId) -> Result<()> {
        if id.index() >= self.nodes.len() {
            return Err(Error::Usage(format!("node {id} does not exist")));
        }
        Ok(())
    }

    /// True when `anc` lies on the root path of `node` (inclusive).
    pub fn is_ancestor_or_self(&self, anc: NodeId, node: NodeId) -> bool {
        let target = self.nodes[anc.index()].depth;
        let mut cur = node;
        while self.nodes[cur.index()].depth > target {
            cur = match self.nodes[cur.index()].parent {
                Some(p) => p,
                None => return false,
            };
        }
        cur == anc
    }

    /// Root path of `node`, root first, `node` last.
    pub fn ancestor_chain(&self, node: NodeId) -> Vec<NodeId> {
        let mut chain = Vec::with_capacity(self.depth(node) as usize + 1);
        let mut cur = Some(node);
        while let Some(id) = cur {
            chain.push(id);
            cur = self.parent(id);
        }
        chain.reverse();
        chain
    }

    /// Leaves below `node` (or `node` itself), ascending id order.
    pub fn leaves_under(&self, node: NodeId) -> Vec<NodeId> {
        if self.is_leaf(node) {
            return vec![node];
        }
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(id) = stack.pop() {
            if self.is_leaf(id) {
                out.push(id);
            } else {
                stack.extend(self.children(id).iter().rev());
            }
        }
        out.sort_unstable();
        out
    }

    pub fn max_leaf_measure(&self) -> f64 {
        self.leaves.iter().map(|&l| self.measure(l)).fold(0.0, f64::max)
    }

    /// True when `self` extends `base` by leaf refinement only: the shared
    /// id prefix has identical parents and measures, and every node internal
    /// in `base` keeps its children.
    pub fn is_refinement_of(&self, base: &MeasureTree) -> bool {
        if self.nodes.len() < base.nodes.len() {
            return false;
        }
        for i in 0..base.nodes.len() {
            let (a, b) = (&self.nodes[i], &base.nodes[i]);
            if a.parent != b.parent || a.measure != b.measure {
                return false;
            }
            if !b.children.is_empty() && a.children != b.children {
                return false;
            }
        }
        true
    }

    /// Checks every structural invariant, naming the first offending node.
    pub fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::InvalidTree { node: None, reason: "empty node table".into() });
        }
        if self.nodes[0].parent.is_some() {
            return Err(Error::InvalidTree { node: Some(NodeId(0)), reason: "root has a parent".into() });
        }
        if (self.nodes[0].measure - 1.0).abs() > TAU_MEAS {
            return Err(Error::InvalidTree {
                node: Some(NodeId(0)),
                reason: format!("root measure is {}, expected 1", self.nodes[0].measure),
            });
        }
        for (i, node) in self.nodes.iter().enumerate() {
            let id = NodeId(i as u32);
            if !(node.measure > 0.0) || !node.measure.is_finite() {
                return Err(Error::InvalidTree {
                    node: Some(id),
                    reason: format!("measure {} is not strictly positive", node.measure),
                });
            }
            if i > 0 {
                match node.parent {
                    None => {
                        return Err(Error::InvalidTree { node: Some(id), reason: "second root".into() })
                    }
                    Some(p) if p.index() >= i => {
                        return Err(Error::InvalidTree {
                            node: Some(id),
                            reason: format!("parent {p} does not precede child"),
                        })
                    }
                    Some(p) => {
                        if !self.nodes[p.index()].children.contains(&id) {
                            return Err(Error::InvalidTree {
                                node: Some(id),
                                reason: format!("parent {p} does not list this child"),
                            });
                        }
                        if node.depth != self.nodes[p.index()].depth + 1 {
                            return Err(Error::InvalidTree { node: Some(id), reason: "depth mismatch".into() });
                        }
                    }
                }
            }
            if node.children.len() == 1 {
                return Err(Error::InvalidTree {
                    node: Some(id),
                    reason: "internal node with a single child".into(),
                });
            }
            if !node.children.is_empty() {
                let sum: f64 = node.children.iter().map(|c| self.nodes[c.index()].measure).sum();
                if (sum - node.measure).abs() > TAU_MEAS * node.measure {
                    return Err(Error::InvalidTree {
                        node: Some(id),
                        reason: format!("children sum to {sum}, node measure is {}", node.measure),
                    });
                }
                for &c in &node.children {
                    if self.nodes[c.index()].parent != Some(id) {
                        return Err(Error::InvalidTree {
                            node: Some(c),
                            reason: format!("child of {id} points to a different parent"),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Assembles a tree from raw (parent, measure) rows, id order. Used by the
    /// loader and the corpus sampler; validates before returning.
    pub fn from_rows(rows: &[(Option<NodeId>, f64)]) -> Result<Self> {
        if rows.len() > MAX_NODES {
            return Err(Error::Capacity("node table exceeds cap".into()));
        }
        let mut nodes: Vec<Node> = Vec::with_capacity(rows.len());
        for (i, &(parent, measure)) in rows.iter().enumerate() {
            let depth = match parent {
                Some(p) if p.index() < i => nodes[p.index()].depth + 1,
                Some(p) => {
                    return Err(Error::InvalidTree {
                        node: Some(NodeId(i as u32)),
                        reason: format!("parent {p} does not precede child"),
                    })
                }
                None => 0,
            };
            nodes.push(Node { parent, children: Vec::new(), measure, depth });
        }
        for i in 0..rows.len() {
            if let Some(p) = nodes[i].parent {
                let child = NodeId(i as u32);
                nodes[p.index()].children.push(child);
            }
        }
        let mut tree = MeasureTree { nodes, leaves: Vec::new(), leaf_pos: Vec::new() };
        tree.rebuild_leaf_cache();
        tree.validate()?;
        Ok(tree)
    }

    /// Raw (parent, measure) rows in id order, the inverse of [`from_rows`].
    pub fn to_rows(&self) -> Vec<(Option<NodeId>, f64)> {
        self.nodes.iter().map(|n| (n.parent, n.measure)).collect()
    }
}

fn equal_fractions(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_counts_and_measures() {
        let t = MeasureTree::build_uniform(2, 1).unwrap();
        assert_eq!(t.node_count(), 3);
        assert_eq!(t.leaf_count(), 2);
        assert_eq!(t.measure(t.leaves()[0]), 0.5);
        assert_eq!(t.measure(t.leaves()[1]), 0.5);

        let t = MeasureTree::build_uniform(2, 3).unwrap();
        assert_eq!(t.node_count(), 15);
        assert_eq!(t.leaf_count(), 8);
        for &l in t.leaves() {
            assert_eq!(t.measure(l), 0.125);
        }

        let t = MeasureTree::build_uniform(3, 2).unwrap();
        assert_eq!(t.node_count(), 13);
        assert_eq!(t.leaf_count(), 9);
        for &l in t.leaves() {
            assert!((t.measure(l) - 1.0 / 9.0).abs() < 1e-15);
        }
        t.validate().unwrap();
    }

    #[test]
    fn uniform_node_count_formula() {
        for m in 2..=4usize {
            for d in 1..=5u32 {
                let t = MeasureTree::build_uniform(m, d).unwrap();
                let expected = (m.pow(d + 1) - 1) / (m - 1);
                assert_eq!(t.node_count(), expected, "m={m} d={d}");
            }
        }
    }

    #[test]
    fn uniform_rejects_bad_args() {
        assert!(MeasureTree::build_uniform(1, 3).is_err());
        assert!(MeasureTree::build_uniform(2, 0).is_err());
        assert!(matches!(
            MeasureTree::build_uniform(2, 40),
            Err(Error::Capacity(_))
        ));
    }

    #[test]
    fn nested_chain_single_ratio() {
        let t = MeasureTree::build_nested_chain(&[0.5], 2).unwrap();
        // root, ring, core, two ring leaves
        assert_eq!(t.node_count(), 5);
        let root_children = t.children(t.root());
        let (ring, core) = (root_children[0], root_children[1]);
        assert_eq!(t.measure(ring), 0.5);
        assert_eq!(t.measure(core), 0.5);
        assert!(t.is_leaf(core));
        let ring_kids = t.children(ring);
        assert_eq!(ring_kids.len(), 2);
        assert_eq!(t.measure(ring_kids[0]), 0.25);
        assert_eq!(t.measure(ring_kids[1]), 0.25);
        t.validate().unwrap();
    }

    #[test]
    fn nested_chain_measures() {
        let t = MeasureTree::build_nested_chain(&[0.5, 0.5], 2).unwrap();
        let (ring0, i1) = {
            let c = t.children(t.root());
            (c[0], c[1])
        };
        let (ring1, core) = {
            let c = t.children(i1);
            (c[0], c[1])
        };
        assert_eq!(t.measure(ring0), 0.5);
        assert_eq!(t.measure(ring1), 0.25);
        assert_eq!(t.measure(core), 0.25);

        let t = MeasureTree::build_nested_chain(&[0.3, 0.3], 2).unwrap();
        let (ring0, i1) = {
            let c = t.children(t.root());
            (c[0], c[1])
        };
        let (ring1, core) = {
            let c = t.children(i1);
            (c[0], c[1])
        };
        assert!((t.measure(ring0) - 0.7).abs() < 1e-15);
        assert!((t.measure(ring1) - 0.21).abs() < 1e-15);
        assert!((t.measure(core) - 0.09).abs() < 1e-15);
        t.validate().unwrap();
    }

    #[test]
    fn nested_chain_rejects_bad_ratio() {
        assert!(MeasureTree::build_nested_chain(&[1.0], 2).is_err());
        assert!(MeasureTree::build_nested_chain(&[0.5, -0.1], 2).is_err());
        assert!(MeasureTree::build_nested_chain(&[], 2).is_err());
    }

    #[test]
    fn max_leaf_measure_shrinks_with_depth_parameter() {
        let mut prev = f64::INFINITY;
        for d in 1..=6 {
            let t = MeasureTree::build_uniform(2, d).unwrap();
            let m = t.max_leaf_measure();
            assert!(m < prev, "uniform depth {d}: {m} !< {prev}");
            prev = m;
        }
        let mut prev = f64::INFINITY;
        for k in 1..=8 {
            let t = MeasureTree::build_nested_chain(&vec![0.5; k], 2).unwrap();
            let m = t.max_leaf_measure();
            assert!(m < prev, "chain length {k}: {m} !< {prev}");
            prev = m;
        }
        let mut prev = f64::INFINITY;
        for k in 1..=8 {
            let t = MeasureTree::build_nested_chain(&vec![0.3; k], 3).unwrap();
            let m = t.max_leaf_measure();
            assert!(m < prev, "0.3-chain length {k}: {m} !< {prev}");
            prev = m;
        }
    }

    #[test]
    fn refine_leaf_basics() {
        let mut t = MeasureTree::build_uniform(2, 1).unwrap();
        let leaf = t.leaves()[0];
        let kids = t.refine_leaf(leaf, &[0.5, 0.5]).unwrap();
        assert_eq!(t.measure(kids[0]), 0.25);
        assert_eq!(t.measure(kids[1]), 0.25);

        let mut t = MeasureTree::build_uniform(2, 3).unwrap();
        let leaf = t.leaves()[0];
        assert_eq!(t.measure(leaf), 0.125);
        let kids = t.refine_leaf(leaf, &[0.6, 0.4]).unwrap();
        assert!((t.measure(kids[0]) - 0.075).abs() < 1e-16);
        assert!((t.measure(kids[1]) - 0.05).abs() < 1e-16);

        let mut t = MeasureTree::build_uniform(2, 1).unwrap();
        let leaf = t.leaves()[1];
        let kids = t.refine_leaf(leaf, &[0.3, 0.3, 0.4]).unwrap();
        assert_eq!(kids.len(), 3);
        t.validate().unwrap();
    }

    #[test]
    fn refine_preserves_existing_nodes() {
        let mut t = MeasureTree::build_uniform(2, 2).unwrap();
        let before = t.to_rows();
        let leaf = t.leaves()[2];
        t.refine_leaf(leaf, &[0.25, 0.75]).unwrap();
        let after = t.to_rows();
        assert_eq!(&after[..before.len()], &before[..]);
        t.validate().unwrap();
    }

    #[test]
    fn refine_rejects_internal_node() {
        let mut t = MeasureTree::build_uniform(2, 2).unwrap();
        let err = t.refine_leaf(t.root(), &[0.5, 0.5]).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn select_subfamily_exact_leaf_combination() {
        let mut t = MeasureTree::build_uniform(2, 3).unwrap();
        let picked = t.select_subfamily(t.root(), 0.25).unwrap();
        assert_eq!(picked.len(), 6);
        let total: f64 = picked.iter().map(|&n| t.measure(n)).sum();
        assert!((total - 0.75).abs() <= TAU_MEAS);
        assert_eq!(t.node_count(), 15, "no refinement needed");
    }

    #[test]
    fn select_subfamily_with_split() {
        let mut t = MeasureTree::build_uniform(2, 3).unwrap();
        let picked = t.select_subfamily(t.root(), 0.3).unwrap();
        assert_eq!(picked.len(), 6);
        let total: f64 = picked.iter().map(|&n| t.measure(n)).sum();
        assert!((total - 0.7).abs() <= TAU_MEAS);
        let split_piece = picked[5];
        assert!((t.measure(split_piece) - 0.075).abs() <= 1e-15);
        t.validate().unwrap();
    }

    #[test]
    fn select_subfamily_tiny_target() {
        let mut t = MeasureTree::build_uniform(2, 2).unwrap();
        let a = 0.999;
        let picked = t.select_subfamily(t.root(), a).unwrap();
        assert_eq!(picked.len(), 1);
        assert!((t.measure(picked[0]) - (1.0 - a)).abs() <= TAU_MEAS);
    }

    #[test]
    fn select_subfamily_is_antichain() {
        let mut t = MeasureTree::build_nested_chain(&[0.4, 0.6, 0.5], 3).unwrap();
        let picked = t.select_subfamily(t.root(), 0.37).unwrap();
        for (i, &a) in picked.iter().enumerate() {
            for &b in &picked[i + 1..] {
                assert!(!t.is_ancestor_or_self(a, b) && !t.is_ancestor_or_self(b, a));
            }
        }
    }

    #[test]
    fn from_rows_rejects_violations() {
        // children sum to 0.9 of parent
        let rows = vec![
            (None, 1.0),
            (Some(NodeId(0)), 0.5),
            (Some(NodeId(0)), 0.4),
        ];
        let err = MeasureTree::from_rows(&rows).unwrap_err();
        match err {
            Error::InvalidTree { node: Some(n), .. } => assert_eq!(n, NodeId(0)),
            other => panic!("unexpected error {other:?}"),
        }
        // single-child internal node
        let rows = vec![(None, 1.0), (Some(NodeId(0)), 1.0)];
        assert!(MeasureTree::from_rows(&rows).is_err());
        // nonpositive measure
        let rows = vec![
            (None, 1.0),
            (Some(NodeId(0)), 1.0),
            (Some(NodeId(0)), 0.0),
        ];
        assert!(MeasureTree::from_rows(&rows).is_err());
    }

    #[test]
    fn ancestor_utilities() {
        let t = MeasureTree::build_uniform(2, 2).unwrap();
        let leaf = t.leaves()[0];
        let chain = t.ancestor_chain(leaf);
        assert_eq!(chain[0], t.root());
        assert_eq!(*chain.last().unwrap(), leaf);
        assert!(t.is_ancestor_or_self(t.root(), leaf));
        assert!(t.is_ancestor_or_self(leaf, leaf));
        assert!(!t.is_ancestor_or_self(leaf, t.root()));
    }

    #[test]
    fn refinement_relation() {
        let base = MeasureTree::build_uniform(2, 2).unwrap();
        let mut refined = base.clone();
        refined.refine_leaf(refined.leaves()[1], &[0.5, 0.5]).unwrap();
        assert!(refined.is_refinement_of(&base));
        assert!(!base.is_refinement_of(&refined));
        let other = MeasureTree::build_uniform(3, 1).unwrap();
        assert!(!other.is_refinement_of(&base));
    }
}
