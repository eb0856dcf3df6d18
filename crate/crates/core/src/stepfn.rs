//! Nonnegative leaf-constant functions on a measure tree, with cached node
//! averages and compensated integrals.

use crate::config::TAU_NUM;
use crate::error::{Error, Result};
use crate::tree::{MeasureTree, NodeId};
use std::sync::Arc;

/// Neumaier compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Sums an iterator with compensation.
pub fn csum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = CompensatedSum::new();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

/// The moment pair of a function: f = ∫φ and F = ∫φ^p for an exponent p > 1.
/// Always satisfies f > 0 and f^p <= F (up to tolerance), since the pair is
/// only constructed from actual functions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub p: f64,
    pub f: f64,
    pub big_f: f64,
}

impl Moments {
    pub fn new(p: f64, f: f64, big_f: f64) -> Result<Self> {
        if !(p > 1.0) {
            return Err(Error::Domain(format!("p = {p} must exceed 1")));
        }
        if !(f > 0.0) {
            return Err(Error::Domain(format!("f = {f} must be positive")));
        }
        if f.powf(p) > big_f * (1.0 + TAU_NUM) {
            return Err(Error::Domain(format!(
                "moment pair violates f^p <= F: f^p = {}, F = {big_f}",
                f.powf(p)
            )));
        }
        Ok(Moments { p, f, big_f })
    }

    /// f^p / F, clamped into [0, 1] against rounding.
    pub fn ratio(&self) -> f64 {
        (self.f.powf(self.p) / self.big_f).clamp(0.0, 1.0)
    }
}

/// A nonnegative function that is constant on each leaf of a tree.
/// Node averages are computed once at construction, bottom-up.
#[derive(Debug, Clone)]
pub struct StepFunction {
    tree: Arc<MeasureTree>,
    /// One value per leaf, in `tree.leaves()` order.
    values: Vec<f64>,
    /// Average over each node, indexed by node id.
    avg: Vec<f64>,
}

impl StepFunction {
    pub fn new(tree: Arc<MeasureTree>, values: Vec<f64>) -> Result<Self> {
        if values.len() != tree.leaf_count() {
            return Err(Error::Usage(format!(
                "{} values for {} leaves",
                values.len(),
                tree.leaf_count()
            )));
        }
        for (i, &v) in values.iter().enumerate() {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Domain(format!(
                    "value {v} at leaf {} must be finite and >= 0",
                    tree.leaves()[i]
                )));
            }
        }
        let avg = compute_averages(&tree, &values);
        Ok(StepFunction { tree, values, avg })
    }

    pub fn constant(tree: Arc<MeasureTree>, c: f64) -> Result<Self> {
        let n = tree.leaf_count();
        Self::new(tree, vec![c; n])
    }

    pub fn tree(&self) -> &Arc<MeasureTree> {
        &self.tree
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value_at(&self, leaf: NodeId) -> f64 {
        let pos = self
            .tree
            .leaf_position(leaf)
            .unwrap_or_else(|| panic!("node {leaf} is not a leaf of this tree"));
        self.values[pos]
    }

    /// Average of the function over `node`: (1/μ(node)) ∫_node φ.
    pub fn average(&self, node: NodeId) -> f64 {
        self.avg[node.index()]
    }

    /// ∫_node φ dμ from the cached average.
    pub fn integral_over(&self, node: NodeId) -> f64 {
        self.avg[node.index()] * self.tree.measure(node)
    }

    /// ∫_X φ dμ, compensated over all leaves.
    pub fn integral(&self) -> f64 {
        csum(
            self.tree
                .leaves()
                .iter()
                .zip(&self.values)
                .map(|(&l, &v)| v * self.tree.measure(l)),
        )
    }

    /// ∫ φ^p over the whole space.
    pub fn p_integral(&self, p: f64) -> f64 {
        csum(
            self.tree
                .leaves()
                .iter()
                .zip(&self.values)
                .map(|(&l, &v)| v.powf(p) * self.tree.measure(l)),
        )
    }

    /// ∫ φ^p over a set of leaves.
    pub fn p_integral_over(&self, p: f64, leaves: impl IntoIterator<Item = NodeId>) -> f64 {
        csum(
            leaves
                .into_iter()
                .map(|l| self.value_at(l).powf(p) * self.tree.measure(l)),
        )
    }

    /// Moment pair (f, F). Fails on the zero function.
    pub fn moments(&self, p: f64) -> Result<Moments> {
        let f = self.integral();
        if f == 0.0 {
            return Err(Error::Domain("zero function has no moment pair".into()));
        }
        Moments::new(p, f, self.p_integral(p))
    }

    /// ∫ |φ - ψ|^p over a common leaf partition. The functions must live on
    /// the same tree or on trees related by refinement.
    pub fn lp_distance(&self, other: &StepFunction, p: f64) -> Result<f64> {
        let (a, b) = align(self, other)?;
        Ok(csum(a.tree.leaves().iter().enumerate().map(|(i, &l)| {
            (a.values[i] - b.values[i]).abs().powf(p) * a.tree.measure(l)
        })))
    }

    /// Re-expresses the function on a refinement of its tree. New leaves
    /// inherit the value of the split leaf, so the function is unchanged.
    pub fn transfer_to(&self, refined: &Arc<MeasureTree>) -> Result<StepFunction> {
        if Arc::ptr_eq(&self.tree, refined) {
            return Ok(self.clone());
        }
        if !refined.is_refinement_of(&self.tree) {
            return Err(Error::Usage(
                "target tree is not a refinement of the function's tree".into(),
            ));
        }
        let base_len = self.tree.node_count() as u32;
        let values = refined
            .leaves()
            .iter()
            .map(|&leaf| {
                let mut cur = leaf;
                while cur.0 >= base_len {
                    cur = refined.parent(cur).expect("refined node has a parent");
                }
                self.value_at(cur)
            })
            .collect();
        StepFunction::new(Arc::clone(refined), values)
    }

    /// Pointwise scaling t·φ for t >= 0.
    pub fn scale(&self, t: f64) -> Result<StepFunction> {
        StepFunction::new(
            Arc::clone(&self.tree),
            self.values.iter().map(|&v| v * t).collect(),
        )
    }
}

fn compute_averages(tree: &MeasureTree, values: &[f64]) -> Vec<f64> {
    let n = tree.node_count();
    let mut avg = vec![0.0; n];
    for (i, &leaf) in tree.leaves().iter().enumerate() {
        avg[leaf.index()] = values[i];
    }
    for idx in (0..n).rev() {
        let id = NodeId(idx as u32);
        let children = tree.children(id);
        if children.is_empty() {
            continue;
        }
        let mut acc = CompensatedSum::new();
        for &c in children {
            acc.add(avg[c.index()] * tree.measure(c));
        }
        avg[idx] = acc.value() / tree.measure(id);
    }
    avg
}

/// Brings two functions onto a common tree (the finer of the two).
fn align<'a>(
    a: &'a StepFunction,
    b: &'a StepFunction,
) -> Result<(std::borrow::Cow<'a, StepFunction>, std::borrow::Cow<'a, StepFunction>)> {
    use std::borrow::Cow;
    if Arc::ptr_eq(&a.tree, &b.tree) {
        return Ok((Cow::Borrowed(a), Cow::Borrowed(b)));
    }
    if b.tree.is_refinement_of(&a.tree) {
        let a2 = a.transfer_to(&b.tree)?;
        Ok((Cow::Owned(a2), Cow::Borrowed(b)))
    } else if a.tree.is_refinement_of(&b.tree) {
        let b2 = b.transfer_to(&a.tree)?;
        Ok((Cow::Borrowed(a), Cow::Owned(b2)))
    } else {
        Err(Error::Usage(
            "functions live on unrelated trees; no common refinement".into(),
        ))
    }
}
