//! Two-valued redistribution of a function over the cells of its
//! linearization.
//!
//! Inside each cell A(φ, I) the function is replaced by a companion g that
//! takes a single positive value on an "occupied" subset and zero elsewhere,
//! chosen so that the cell keeps its ∫φ^p and every block of the cell keeps
//! its ∫φ. Blocks are the maximal tree elements contained in the cell; since
//! any tree element that contains an attaining node meets cells only in
//! whole blocks, block-level mass preservation makes ∫_I g = ∫_I φ for every
//! such element. Occupied sets are packed greedily from the largest leaves,
//! splitting at most one leaf per block to land exactly.
//!
//! The merge to one common value per cell requires every block average to
//! stay below the cell's power mean; where that fails the per-block stage is
//! kept and the cell is flagged instead of silently breaking block masses.

use crate::error::Result;
use crate::linearize::Linearization;
use crate::maximal::maximal_function;
use crate::stepfn::{csum, StepFunction};
use crate::tree::{MeasureTree, NodeId};
use std::sync::Arc;

/// Per-cell outcome of the redistribution.
#[derive(Debug, Clone)]
pub struct CellRecord {
    pub node: NodeId,
    /// Common positive value c_I of the cell: ( ∫_{A_I} φ^p / ∫_{A_I} φ )^(1/(p-1)),
    /// or 0 for a massless cell. When `stage2_feasible` is false the occupied
    /// leaves carry per-block values instead and this is only the target.
    pub level: f64,
    /// γ_I: total measure of the occupied subset of the cell.
    pub occupied_measure: f64,
    /// a_I = μ(A(φ, I)).
    pub cell_measure: f64,
    /// Whether the single-value merge kept every block's mass within its
    /// capacity (block average <= cell level for every block).
    pub stage2_feasible: bool,
    /// Number of maximal tree elements composing the cell.
    pub blocks: usize,
    /// Leaves of the refined tree forming the cell.
    pub refined_cell_leaves: Vec<NodeId>,
    /// Occupied refined leaves (where g is positive).
    pub occupied: Vec<NodeId>,
}

/// The redistributed companion of one function.
#[derive(Debug, Clone)]
pub struct Redistribution {
    p: f64,
    refined_tree: Arc<MeasureTree>,
    /// g on the refined tree: level on occupied leaves, zero elsewhere.
    g: StepFunction,
    /// The original function carried onto the refined tree.
    phi_refined: StepFunction,
    /// One record per linearization member, same order.
    records: Vec<CellRecord>,
}

/// Builds the redistribution of `phi` over the cells of `lin`.
pub fn build(phi: &StepFunction, p: f64, lin: &Linearization) -> Result<Redistribution> {
    let base = Arc::clone(phi.tree());
    let n = base.node_count();

    // Label each node with the cell index if all its leaves share one.
    let mut pure = vec![u32::MAX; n];
    for (pos, _) in base.leaves().iter().enumerate() {
        let leaf = base.leaves()[pos];
        pure[leaf.index()] = lin.member_of_leaf_pos(pos) as u32;
    }
    for idx in (0..n).rev() {
        let id = NodeId(idx as u32);
        let children = base.children(id);
        if children.is_empty() {
            continue;
        }
        let first = pure[children[0].index()];
        let same = first != u32::MAX && children.iter().all(|c| pure[c.index()] == first);
        pure[idx] = if same { first } else { u32::MAX };
    }
    // Blocks: pure nodes whose parent is not pure with the same label.
    let mut blocks_per_cell: Vec<Vec<NodeId>> = vec![Vec::new(); lin.len()];
    for idx in 0..n {
        let label = pure[idx];
        if label == u32::MAX {
            continue;
        }
        let id = NodeId(idx as u32);
        let is_block = match base.parent(id) {
            Some(par) => pure[par.index()] != label,
            None => true,
        };
        if is_block {
            blocks_per_cell[label as usize].push(id);
        }
    }

    struct BlockPlan {
        cell: usize,
        value: f64,
        /// Whole leaves to occupy.
        full: Vec<NodeId>,
        /// Leaf to split and the occupied fraction.
        split: Option<(NodeId, f64)>,
    }

    let mut plans: Vec<BlockPlan> = Vec::new();
    let mut records: Vec<CellRecord> = Vec::with_capacity(lin.len());

    for ci in 0..lin.len() {
        let blocks = &blocks_per_cell[ci];
        let mut masses = Vec::with_capacity(blocks.len());
        let mut p_masses = Vec::with_capacity(blocks.len());
        for &b in blocks {
            let leaves = base.leaves_under(b);
            masses.push(csum(leaves.iter().map(|&l| phi.value_at(l) * base.measure(l))));
            p_masses.push(phi.p_integral_over(p, leaves.iter().copied()));
        }
        let cell_mass = csum(masses.iter().copied());
        let cell_p_mass = csum(p_masses.iter().copied());
        let cell_measure = lin.cell_measure(ci);

        if cell_mass == 0.0 {
            records.push(CellRecord {
                node: lin.members()[ci],
                level: 0.0,
                occupied_measure: 0.0,
                cell_measure,
                stage2_feasible: true,
                blocks: blocks.len(),
                refined_cell_leaves: Vec::new(),
                occupied: Vec::new(),
            });
            continue;
        }

        let level = (cell_p_mass / cell_mass).powf(1.0 / (p - 1.0));
        let feasible = blocks.iter().enumerate().all(|(j, &b)| {
            masses[j] <= level * base.measure(b) * (1.0 + 1e-12)
        });

        let mut gamma = 0.0;
        for (j, &b) in blocks.iter().enumerate() {
            if masses[j] == 0.0 {
                continue;
            }
            let value = if feasible {
                level
            } else {
                (p_masses[j] / masses[j]).powf(1.0 / (p - 1.0))
            };
            let target = (masses[j] / value).min(base.measure(b));
            gamma += target;
            // greedy packing, largest leaves first
            let mut leaves = base.leaves_under(b);
            leaves.sort_by(|&a, &c| {
                base.measure(c)
                    .partial_cmp(&base.measure(a))
                    .unwrap()
                    .then(a.cmp(&c))
            });
            let cutoff = 1e-12 * base.measure(b);
            let mut remaining = target;
            let mut full = Vec::new();
            let mut split = None;
            for &leaf in &leaves {
                if remaining <= cutoff {
                    break;
                }
                let m = base.measure(leaf);
                if m <= remaining * (1.0 + 1e-12) {
                    full.push(leaf);
                    remaining -= m;
                } else if split.is_none() {
                    split = Some((leaf, remaining / m));
                    remaining = 0.0;
                }
            }
            plans.push(BlockPlan { cell: ci, value, full, split });
        }

        records.push(CellRecord {
            node: lin.members()[ci],
            level,
            occupied_measure: gamma,
            cell_measure,
            stage2_feasible: feasible,
            blocks: blocks.len(),
            refined_cell_leaves: Vec::new(),
            occupied: Vec::new(),
        });
    }

    // Apply all splits in one batch, then lay out g on the refined tree.
    let splits: Vec<(NodeId, Vec<f64>)> = plans
        .iter()
        .filter_map(|pl| pl.split.map(|(leaf, r)| (leaf, vec![r, 1.0 - r])))
        .collect();
    let mut refined = (*base).clone();
    let split_children = refined.refine_leaves(&splits)?;
    let refined = Arc::new(refined);

    let mut g_values = vec![0.0; refined.leaf_count()];
    let mut split_iter = split_children.iter();
    for plan in &plans {
        for &leaf in &plan.full {
            g_values[refined.leaf_position(leaf).unwrap()] = plan.value;
            records[plan.cell].occupied.push(leaf);
        }
        if plan.split.is_some() {
            let children = split_iter.next().expect("one split per planned split");
            g_values[refined.leaf_position(children[0]).unwrap()] = plan.value;
            records[plan.cell].occupied.push(children[0]);
        }
    }

    // Refined cell leaf lists: expand each base cell through the refinement.
    let base_len = base.node_count() as u32;
    for (pos, &leaf) in refined.leaves().iter().enumerate() {
        let mut cur = leaf;
        while cur.0 >= base_len {
            cur = refined.parent(cur).expect("refined node has a parent");
        }
        let ci = lin.member_of_leaf_pos(base.leaf_position(cur).unwrap());
        records[ci].refined_cell_leaves.push(leaf);
        let _ = pos;
    }

    let g = StepFunction::new(Arc::clone(&refined), g_values)?;
    let phi_refined = phi.transfer_to(&refined)?;
    Ok(Redistribution { p, refined_tree: refined, g, phi_refined, records })
}

impl Redistribution {
    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn tree(&self) -> &Arc<MeasureTree> {
        &self.refined_tree
    }

    pub fn g(&self) -> &StepFunction {
        &self.g
    }

    pub fn phi_refined(&self) -> &StepFunction {
        &self.phi_refined
    }

    pub fn records(&self) -> &[CellRecord] {
        &self.records
    }

    pub fn all_feasible(&self) -> bool {
        self.records.iter().all(|r| r.stage2_feasible)
    }

    /// μ({g = 0}) measured directly off the leaf values.
    pub fn zero_mass(&self) -> f64 {
        csum(
            self.refined_tree
                .leaves()
                .iter()
                .zip(self.g.values())
                .filter(|(_, &v)| v == 0.0)
                .map(|(&l, _)| self.refined_tree.measure(l)),
        )
    }

    /// Σ (a_I - γ_I): the zero mass predicted by the records.
    pub fn zero_mass_from_records(&self) -> f64 {
        csum(self.records.iter().map(|r| r.cell_measure - r.occupied_measure))
    }

    /// The companion that keeps the cell level everywhere: value c_I on the
    /// whole cell, ignoring the zero part. Distorts mass by (a_I - γ_I) c_I.
    pub fn level_function(&self) -> StepFunction {
        let mut values = vec![0.0; self.refined_tree.leaf_count()];
        for rec in &self.records {
            for &leaf in &rec.refined_cell_leaves {
                values[self.refined_tree.leaf_position(leaf).unwrap()] = rec.level;
            }
        }
        StepFunction::new(Arc::clone(&self.refined_tree), values)
            .expect("levels are finite and nonnegative")
    }
}

/// Deviations found when verifying a redistribution against its source.
#[derive(Debug, Clone)]
pub struct RedistributionReport {
    /// Max |∫_I g - ∫_I φ| over tree elements containing an attaining node.
    pub containing_mass_dev: f64,
    /// Max |∫_{A_I} g^p - ∫_{A_I} φ^p| over cells.
    pub cell_p_mass_dev: f64,
    /// Max violation of μ({φ=0} ∩ A_I) <= μ({g=0} ∩ A_I) over cells.
    pub zero_growth_violation: f64,
    /// |∫g - f| and |∫g^p - F|.
    pub moment_dev: (f64, f64),
}

impl RedistributionReport {
    pub fn passes(&self, tau: f64) -> bool {
        self.containing_mass_dev <= tau
            && self.cell_p_mass_dev <= tau
            && self.zero_growth_violation <= tau
            && self.moment_dev.0 <= tau
            && self.moment_dev.1 <= tau
    }
}

/// Verifies mass preservation on containing elements, per-cell p-mass,
/// zero-set growth, and the global moments.
pub fn verify(phi: &StepFunction, lin: &Linearization, red: &Redistribution) -> RedistributionReport {
    let p = red.p;
    let tree = red.tree();
    let g = red.g();
    let phi_r = red.phi_refined();

    // nodes of the refined tree containing an attaining node
    let mut contains_member = vec![false; tree.node_count()];
    for &m in lin.members() {
        let mut cur = Some(m);
        while let Some(id) = cur {
            if contains_member[id.index()] {
                break;
            }
            contains_member[id.index()] = true;
            cur = tree.parent(id);
        }
    }
    let mut containing_mass_dev = 0.0f64;
    for id in tree.node_ids() {
        if contains_member[id.index()] {
            let dev = (g.integral_over(id) - phi_r.integral_over(id)).abs();
            containing_mass_dev = containing_mass_dev.max(dev);
        }
    }

    let mut cell_p_mass_dev = 0.0f64;
    let mut zero_growth_violation = 0.0f64;
    for rec in red.records() {
        let gp = g.p_integral_over(p, rec.refined_cell_leaves.iter().copied());
        let fp = phi_r.p_integral_over(p, rec.refined_cell_leaves.iter().copied());
        cell_p_mass_dev = cell_p_mass_dev.max((gp - fp).abs());

        let phi_zero = csum(
            rec.refined_cell_leaves
                .iter()
                .filter(|&&l| phi_r.value_at(l) == 0.0)
                .map(|&l| tree.measure(l)),
        );
        let g_zero = csum(
            rec.refined_cell_leaves
                .iter()
                .filter(|&&l| g.value_at(l) == 0.0)
                .map(|&l| tree.measure(l)),
        );
        zero_growth_violation = zero_growth_violation.max(phi_zero - g_zero);
    }

    let f = phi.integral();
    let big_f = phi.p_integral(p);
    let moment_dev = ((g.integral() - f).abs(), (g.p_integral(p) - big_f).abs());

    RedistributionReport { containing_mass_dev, cell_p_mass_dev, zero_growth_violation, moment_dev }
}

/// Splits the eigen-defect of g at eigenvalue `c` across the set where
/// Mg > c·g and its complement. The two parts sum to ∫ |Mg - c g|^p.
pub fn residual_split(red: &Redistribution, c: f64) -> (f64, f64) {
    let p = red.p;
    let tree = red.tree();
    let g = red.g();
    let max = maximal_function(g);
    let mut on = Vec::new();
    let mut off = Vec::new();
    for (pos, &leaf) in tree.leaves().iter().enumerate() {
        let gv = g.values()[pos];
        let mv = max.mphi.values()[pos];
        let term = (mv - c * gv).abs().powf(p) * tree.measure(leaf);
        if mv > c * gv {
            on.push(term);
        } else {
            off.push(term);
        }
    }
    (csum(on), csum(off))
}

/// Scalar diagnostics of the Young-inequality step on {g' <= φ}.
#[derive(Debug, Clone, Copy)]
pub struct YoungDiagnostics {
    /// (∫_{g'<=φ} φ^p)^(1/p).
    pub t_phi: f64,
    /// (∫_{g'<=φ} (g')^p)^(1/p).
    pub s_phi: f64,
    /// (1/p) t^p + (1/q) s^p - ∫_{g'<=φ} φ (g')^(p-1) >= 0.
    pub gap_young: f64,
    /// t s^(p-1) - ∫_{g'<=φ} φ (g')^(p-1) >= 0.
    pub gap_holder: f64,
}

pub fn young_diagnostics(red: &Redistribution) -> YoungDiagnostics {
    let p = red.p;
    let q = p / (p - 1.0);
    let tree = red.tree();
    let phi = red.phi_refined();
    let gprime = red.level_function();
    let mut tp = Vec::new();
    let mut sp = Vec::new();
    let mut cross = Vec::new();
    for (pos, &leaf) in tree.leaves().iter().enumerate() {
        let (pv, gv) = (phi.values()[pos], gprime.values()[pos]);
        if gv <= pv {
            let m = tree.measure(leaf);
            tp.push(pv.powf(p) * m);
            sp.push(gv.powf(p) * m);
            cross.push(pv * gv.powf(p - 1.0) * m);
        }
    }
    let (tp, sp, cross) = (csum(tp), csum(sp), csum(cross));
    let (t_phi, s_phi) = (tp.powf(1.0 / p), sp.powf(1.0 / p));
    YoungDiagnostics {
        t_phi,
        s_phi,
        gap_young: tp / p + sp / q - cross,
        gap_holder: t_phi * s_phi.powf(p - 1.0) - cross,
    }
}
