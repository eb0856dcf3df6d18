//! Search for near-extremal functions: candidates with fixed moments (f, F)
//! whose maximal-operator energy ∫ (Mφ)^p approaches the sharp bound
//! F · omega_p(f^p/F)^p.
//!
//! Two candidate spaces are supported. Ring mode optimizes a profile that is
//! constant on each ring of a nested-chain tree (dimension K+1, evaluated in
//! closed form along the chain); full-leaf mode optimizes every leaf value
//! on a small uniform tree. Both use projected gradient ascent: a
//! fixed-pattern gradient of ∫ (Mφ)^p, a two-parameter power-law retraction
//! back onto the moment manifold after every step, and seeded multi-start.

use crate::bellman::{bellman_value, omega_p};
use crate::config::ZETA;
use crate::error::{Error, Result};
use crate::gphi::Redistribution;
use crate::linearize::{linearize_with, Linearization};
use crate::maximal::maximal_function;
use crate::stepfn::{csum, CompensatedSum, StepFunction};
use crate::tree::{MeasureTree, NodeId};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::sync::Arc;

// ---------------------------------------------------------------------------
// eigen-defect diagnostics
// ---------------------------------------------------------------------------

/// ∫ |Mφ - cφ|^p with the candidate eigenvalue c = omega_p(f^p/F) derived
/// from φ's own moments. Vanishes along extremal sequences and only there.
pub fn eigen_residual(phi: &StepFunction, p: f64) -> Result<f64> {
    let m = phi.moments(p)?;
    let c = omega_p(p, m.ratio())?;
    Ok(eigen_residual_at(phi, p, c))
}

/// ∫ |Mφ - cφ|^p for an explicit eigenvalue c.
pub fn eigen_residual_at(phi: &StepFunction, p: f64, c: f64) -> f64 {
    let tree = phi.tree();
    let max = maximal_function(phi);
    csum(tree.leaves().iter().enumerate().map(|(pos, &leaf)| {
        let d = (max.mphi.values()[pos] - c * phi.values()[pos]).abs();
        d.powf(p) * tree.measure(leaf)
    }))
}

/// Measure-weighted defect of the eigenvalue ratio: ∫_{φ>0} |Mφ/φ - c|^p dμ.
/// Scale-free, so it isolates how far the ratio field sits from c without
/// weighting by the size of φ itself.
pub fn eigen_ratio_defect(phi: &StepFunction, p: f64, c: f64) -> f64 {
    let tree = phi.tree();
    let max = maximal_function(phi);
    csum(tree.leaves().iter().enumerate().filter_map(|(pos, &leaf)| {
        let v = phi.values()[pos];
        (v > 0.0).then(|| {
            let d = (max.mphi.values()[pos] / v - c).abs();
            d.powf(p) * tree.measure(leaf)
        })
    }))
}

/// μ({φ = 0}), counting leaves with value <= ZETA · f.
pub fn zero_set_measure(phi: &StepFunction) -> f64 {
    let f = phi.integral();
    let tree = phi.tree();
    csum(
        tree.leaves()
            .iter()
            .zip(phi.values())
            .filter(|(_, &v)| v <= ZETA * f)
            .map(|(&l, _)| tree.measure(l)),
    )
}

// ---------------------------------------------------------------------------
// geometric (exact-eigenfunction) family on nested chains
// ---------------------------------------------------------------------------

/// Eigenvalue of the untruncated geometric profile: Mφ = c'·φ off the core,
/// with c' = (1-a)/(1-aγ).
pub fn geometric_eigenvalue(a: f64, gamma: f64) -> f64 {
    (1.0 - a) / (1.0 - a * gamma)
}

/// Step function t·γ^k on ring k of a constant-ratio nested chain, with the
/// core set to the tail average t γ^K (1-a)/(1-aγ) so every chain-node
/// average matches the untruncated family exactly.
pub fn geometric_family(
    p: f64,
    a: f64,
    gamma: f64,
    t: f64,
    depth: usize,
    subdivision: usize,
) -> Result<StepFunction> {
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::Domain(format!("a = {a} is outside (0,1)")));
    }
    if !(gamma > 1.0) {
        return Err(Error::Domain(format!("gamma = {gamma} must exceed 1")));
    }
    if !(t > 0.0) {
        return Err(Error::Domain(format!("t = {t} must be positive")));
    }
    if a * gamma.powf(p) >= 1.0 {
        return Err(Error::Domain(format!(
            "a γ^p = {} >= 1: the untruncated p-moment diverges",
            a * gamma.powf(p)
        )));
    }
    if depth < 2 {
        return Err(Error::Domain("depth must be >= 2".into()));
    }
    let tree = Arc::new(MeasureTree::build_nested_chain(&vec![a; depth], subdivision)?);
    let mut profile: Vec<f64> = (0..depth).map(|k| t * gamma.powi(k as i32)).collect();
    profile.push(t * gamma.powi(depth as i32) * geometric_eigenvalue(a, gamma));
    chain_step_function(&tree, &profile)
}

/// Result of matching the untruncated geometric family to a moment pair.
#[derive(Debug, Clone, Copy)]
pub struct GeometricFit {
    pub gamma: f64,
    pub t: f64,
    pub c_prime: f64,
    pub feasible: bool,
}

/// Solves t(1-a)/(1-aγ) = f and t^p(1-a)/(1-aγ^p) = F for (γ, t) with
/// γ in (1, a^(-1/p)). The ratio equation is strictly increasing in γ, so
/// bisection suffices; `feasible` is false when no interior γ matches.
pub fn fit_geometric(p: f64, f: f64, big_f: f64, a: f64) -> Result<GeometricFit> {
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::Domain(format!("a = {a} is outside (0,1)")));
    }
    if !(f > 0.0) || !(big_f > 0.0) {
        return Err(Error::Domain("moments must be positive".into()));
    }
    let target = big_f / f.powf(p);
    let ratio = |gamma: f64| {
        (1.0 - a * gamma).powf(p) / ((1.0 - a).powf(p - 1.0) * (1.0 - a * gamma.powf(p)))
    };
    let gmax = a.powf(-1.0 / p);
    if target <= 1.0 {
        return Ok(GeometricFit { gamma: 1.0, t: f, c_prime: 1.0, feasible: false });
    }
    let (mut lo, mut hi) = (1.0, gmax - 1e-12 * gmax);
    if ratio(hi) < target {
        return Ok(GeometricFit { gamma: hi, t: f, c_prime: geometric_eigenvalue(a, hi), feasible: false });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ratio(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    let gamma = 0.5 * (lo + hi);
    let t = f * (1.0 - a * gamma) / (1.0 - a);
    Ok(GeometricFit { gamma, t, c_prime: geometric_eigenvalue(a, gamma), feasible: true })
}

// ---------------------------------------------------------------------------
// constant-ratio chain: closed-form evaluation of ∫ (Mφ)^p
// ---------------------------------------------------------------------------

/// Closed-form model of a nested chain. Entry k < K is ring k; entry K is
/// the core. Weights replicate the tree builder's floating point exactly
/// (core = remainder after the ring).
#[derive(Debug, Clone)]
pub struct ChainShape {
    pub ratios: Vec<f64>,
    /// Measures of ring 0..K-1 and the core.
    pub weights: Vec<f64>,
    /// Measures of the chain nodes I_0..I_K.
    chain_measure: Vec<f64>,
}

impl ChainShape {
    pub fn from_ratios(ratios: &[f64]) -> Result<Self> {
        if ratios.is_empty() {
            return Err(Error::Domain("need at least one chain ratio".into()));
        }
        for &a in ratios {
            if !(a > 0.0 && a < 1.0) {
                return Err(Error::Domain(format!("ratio = {a} is outside (0,1)")));
            }
        }
        let mut chain_measure = Vec::with_capacity(ratios.len() + 1);
        let mut weights = Vec::with_capacity(ratios.len() + 1);
        let mut mu = 1.0f64;
        chain_measure.push(mu);
        for &a in ratios {
            let ring = (1.0 - a) * mu;
            let core = mu - ring;
            weights.push(ring);
            chain_measure.push(core);
            mu = core;
        }
        weights.push(mu);
        Ok(ChainShape { ratios: ratios.to_vec(), weights, chain_measure })
    }

    pub fn new(ratio: f64, depth: usize) -> Result<Self> {
        if depth < 1 {
            return Err(Error::Domain("depth must be >= 1".into()));
        }
        Self::from_ratios(&vec![ratio; depth])
    }

    /// Mesh tuned to the moment pair: chain cuts at equal increments of the
    /// limiting energy density. The limiting near-extremal profile behaves
    /// like t^(1/c - 1) for c = omega_p(f^p/F), whose p-th power carries
    /// mass like t^sigma with sigma = 1 - p(1 - 1/c); cutting at equal
    /// sigma-mass spends the K rings where the energy lives and drives the
    /// core measure to zero polynomially in K.
    pub fn adaptive(p: f64, f: f64, big_f: f64, depth: usize) -> Result<Self> {
        if depth < 1 {
            return Err(Error::Domain("depth must be >= 1".into()));
        }
        let c = omega_p(p, (f.powf(p) / big_f).clamp(0.0, 1.0))?;
        let sigma = (1.0 - p * (1.0 - 1.0 / c)).max(0.05);
        let n = (depth + 1) as f64;
        let ratios: Vec<f64> = (0..depth)
            .map(|k| (((depth - k) as f64) / (n - k as f64)).powf(1.0 / sigma))
            .collect();
        Self::from_ratios(&ratios)
    }

    pub fn depth(&self) -> usize {
        self.ratios.len()
    }

    pub fn dim(&self) -> usize {
        self.ratios.len() + 1
    }

    /// Measure of the chain node I_k (t_k in mesh coordinates).
    pub fn chain_measure(&self, k: usize) -> f64 {
        self.chain_measure[k]
    }

    /// ∫ (Mφ)^p for the ring profile, by the chain recursion. Matches the
    /// tree evaluation of the same profile within accumulation tolerance.
    pub fn energy(&self, profile: &[f64], p: f64) -> f64 {
        let k = self.depth();
        debug_assert_eq!(profile.len(), k + 1);
        // suffix mass, then chain averages, then prefix maxima
        let mut suffix = vec![0.0; k + 1];
        let mut acc = CompensatedSum::new();
        acc.add(profile[k] * self.weights[k]);
        suffix[k] = acc.value();
        for j in (0..k).rev() {
            acc.add(profile[j] * self.weights[j]);
            suffix[j] = acc.value();
        }
        let mut total = CompensatedSum::new();
        let mut prefix_max = f64::NEG_INFINITY;
        for j in 0..k {
            let avg = suffix[j] / self.chain_measure[j];
            prefix_max = prefix_max.max(avg);
            total.add(self.weights[j] * prefix_max.max(profile[j]).powf(p));
        }
        let core_avg = profile[k];
        total.add(self.weights[k] * prefix_max.max(core_avg).powf(p));
        total.value()
    }

    /// Energy and its fixed-pattern gradient with respect to the profile.
    pub fn energy_with_grad(&self, profile: &[f64], p: f64) -> (f64, Vec<f64>) {
        let k = self.depth();
        let mut suffix = vec![0.0; k + 1];
        let mut acc = CompensatedSum::new();
        acc.add(profile[k] * self.weights[k]);
        suffix[k] = acc.value();
        for j in (0..k).rev() {
            acc.add(profile[j] * self.weights[j]);
            suffix[j] = acc.value();
        }
        let avg: Vec<f64> = (0..=k)
            .map(|j| {
                if j < k {
                    suffix[j] / self.chain_measure[j]
                } else {
                    profile[k]
                }
            })
            .collect();

        let mut total = CompensatedSum::new();
        // chain_weight[j]: total p·μ·M^(p-1) attributed to chain average j
        let mut chain_weight = vec![0.0; k + 1];
        let mut grad = vec![0.0; k + 1];
        let mut best = 0usize;
        for j in 0..=k {
            if j < k && avg[j] > avg[best] {
                best = j;
            }
            let (seg_max, seg_w) = if j < k {
                (avg[best].max(profile[j]), self.weights[j])
            } else {
                // core: its own value is the J = k average
                if avg[k] > avg[best] {
                    (avg[k], self.weights[k])
                } else {
                    (avg[best], self.weights[k])
                }
            };
            total.add(seg_w * seg_max.powf(p));
            let dcoef = p * seg_w * seg_max.powf(p - 1.0);
            if j < k && profile[j] >= avg[best] {
                grad[j] += dcoef;
            } else if j == k && avg[k] > avg[best] {
                grad[k] += dcoef;
            } else {
                chain_weight[best] += dcoef;
            }
        }
        // d avg[j] / d profile[l] = weights[l] / chain_measure[j] for l >= j
        let mut carry = 0.0;
        for j in 0..=k {
            carry += chain_weight[j] / self.chain_measure[j.min(k)];
            grad[j] += carry * self.weights[j];
        }
        (total.value(), grad)
    }

    pub fn build_tree(&self, subdivision: usize) -> Result<Arc<MeasureTree>> {
        Ok(Arc::new(MeasureTree::build_nested_chain(&self.ratios, subdivision)?))
    }

    /// Ring averages of the scale-invariant profile t^(theta - 1) with unit
    /// mass, restricted to the subchain below I_m: the natural seed for
    /// near-extremal candidates. Entries above m stay at `bulk`.
    pub fn eigen_seed(&self, theta: f64, m: usize, bulk: f64) -> Vec<f64> {
        let k = self.depth();
        let m = m.min(k.saturating_sub(1));
        let t_m = self.chain_measure[m];
        let mut v = vec![bulk; k + 1];
        for j in m..k {
            let (hi, lo) = (self.chain_measure[j] / t_m, self.chain_measure[j + 1] / t_m);
            v[j] = bulk * (hi.powf(theta) - lo.powf(theta)) / (hi - lo);
        }
        v[k] = bulk * (self.chain_measure[k] / t_m).powf(theta - 1.0);
        v
    }

    /// Transfers a ring profile from another chain onto this one, preserving
    /// the underlying function's mass on every new ring (exact resampling of
    /// the cumulative mass).
    pub fn resample_from(&self, other: &ChainShape, profile: &[f64]) -> Vec<f64> {
        // cumulative mass of the other profile above scale t:
        // piecewise linear in t with breakpoints at the other chain cuts
        let cuts = &other.chain_measure;
        let mass_above = |t: f64| -> f64 {
            let mut acc = 0.0;
            for j in 0..other.dim() {
                let hi = cuts[j];
                let lo = if j < other.depth() { cuts[j + 1] } else { 0.0 };
                if t >= hi {
                    break;
                }
                let covered = hi - t.max(lo);
                if covered > 0.0 {
                    acc += profile[j] * covered;
                }
            }
            acc
        };
        (0..self.dim())
            .map(|j| {
                let hi = self.chain_measure[j];
                let lo = if j < self.depth() { self.chain_measure[j + 1] } else { 0.0 };
                (mass_above(lo) - mass_above(hi)) / (hi - lo)
            })
            .collect()
    }
}

/// Chain nodes I_0..I_K of a nested-chain tree (root first).
pub fn chain_nodes(tree: &MeasureTree) -> Vec<NodeId> {
    let mut nodes = vec![tree.root()];
    let mut cur = tree.root();
    while !tree.is_leaf(cur) {
        let kids = tree.children(cur);
        if kids.len() != 2 {
            break;
        }
        cur = kids[1];
        nodes.push(cur);
    }
    nodes
}

/// Lays a ring profile out on a nested-chain tree (value k on ring k's
/// leaves, last value on the core).
pub fn chain_step_function(tree: &Arc<MeasureTree>, profile: &[f64]) -> Result<StepFunction> {
    let chain = chain_nodes(tree);
    if chain.len() != profile.len() {
        return Err(Error::Usage(format!(
            "profile has {} entries for a chain of depth {}",
            profile.len(),
            chain.len() - 1
        )));
    }
    let mut values = vec![0.0; tree.leaf_count()];
    for (k, &node) in chain.iter().enumerate() {
        if k + 1 == chain.len() {
            values[tree.leaf_position(node).expect("core is a leaf")] = profile[k];
        } else {
            let ring = tree.children(node)[0];
            for leaf in tree.leaves_under(ring) {
                values[tree.leaf_position(leaf).unwrap()] = profile[k];
            }
        }
    }
    StepFunction::new(Arc::clone(tree), values)
}

/// Reads a ring profile back off a nested-chain function.
pub fn profile_of(phi: &StepFunction) -> Vec<f64> {
    let tree = phi.tree();
    let chain = chain_nodes(tree);
    chain
        .iter()
        .enumerate()
        .map(|(k, &node)| {
            if k + 1 == chain.len() {
                phi.value_at(node)
            } else {
                let ring = tree.children(node)[0];
                phi.value_at(tree.leaves_under(ring)[0])
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// moment projection
// ---------------------------------------------------------------------------

/// Retracts weighted coordinates onto the moment manifold Σ w v = f,
/// Σ w v^p = F using the two-parameter family v -> s v^r. The moment ratio
/// of the family is monotone in r, so r comes from a bracketed root-find
/// and s from the mass constraint. Falls back to blending toward the
/// constant f when the ratio cannot be bracketed.
pub fn project_to_moments(
    values: &mut [f64],
    weights: &[f64],
    p: f64,
    f: f64,
    big_f: f64,
) -> Result<()> {
    let target = (big_f / f.powf(p)).ln();
    for attempt in 0..9 {
        if try_power_projection(values, weights, p, f, target)? {
            return Ok(());
        }
        // flatten toward the constant and retry
        let theta = 0.35;
        for v in values.iter_mut() {
            *v = (1.0 - theta) * *v + theta * f;
        }
        if attempt == 8 {
            break;
        }
    }
    Err(Error::Domain(
        "cannot reach the requested moment pair from this candidate".into(),
    ))
}

fn try_power_projection(
    values: &mut [f64],
    weights: &[f64],
    p: f64,
    f: f64,
    target: f64,
) -> Result<bool> {
    let vmax = values.iter().cloned().fold(0.0, f64::max);
    if vmax <= 0.0 {
        return Err(Error::Domain("cannot project the zero candidate".into()));
    }
    let scaled: Vec<f64> = values.iter().map(|&v| v / vmax).collect();
    // g(r) = ln Σ w v^(rp) - p ln Σ w v^r - target, increasing in r
    let g = |r: f64| -> f64 {
        let m1 = csum(scaled.iter().zip(weights).map(|(&v, &w)| w * v.powf(r)));
        let mp = csum(scaled.iter().zip(weights).map(|(&v, &w)| w * v.powf(r * p)));
        mp.ln() - p * m1.ln() - target
    };
    let (mut lo, mut hi) = (1e-9, 1.0);
    let mut glo = g(lo);
    let mut ghi = g(hi);
    let mut expand = 0;
    while ghi < 0.0 && expand < 14 {
        lo = hi;
        glo = ghi;
        hi *= 2.0;
        ghi = g(hi);
        expand += 1;
    }
    if glo > 0.0 || ghi < 0.0 || !glo.is_finite() || !ghi.is_finite() {
        return Ok(false);
    }
    let mut r = 0.5 * (lo + hi);
    for _ in 0..120 {
        let gr = g(r);
        if !gr.is_finite() {
            return Ok(false);
        }
        if gr.abs() <= 1e-13 {
            break;
        }
        if gr < 0.0 {
            lo = r;
        } else {
            hi = r;
        }
        r = 0.5 * (lo + hi);
        if hi - lo <= 1e-16 * hi {
            break;
        }
    }
    let m1 = csum(scaled.iter().zip(weights).map(|(&v, &w)| w * v.powf(r)));
    let s = f / m1;
    for (v, &sv) in values.iter_mut().zip(&scaled) {
        *v = s * sv.powf(r);
    }
    // exact mass normalization; the p-moment error stays within root-find tol
    let mass = csum(values.iter().zip(weights).map(|(&v, &w)| w * v));
    let fix = f / mass;
    for v in values.iter_mut() {
        *v *= fix;
    }
    Ok(true)
}

// ---------------------------------------------------------------------------
// projected gradient ascent
// ---------------------------------------------------------------------------

/// Mesh rule for ring-mode chains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RingMesh {
    /// Constant ratio a: chain node k has measure a^k.
    Geometric { ratio: f64 },
    /// Equal-energy cuts tuned to (p, f, F); see [`ChainShape::adaptive`].
    Adaptive,
}

/// Candidate space for the optimizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    /// Ring profiles on a nested chain.
    Ring { mesh: RingMesh, subdivision: usize },
    /// Every leaf value on a uniform tree.
    FullLeaf { arity: usize },
}

impl Mode {
    pub fn ring() -> Self {
        Mode::Ring { mesh: RingMesh::Adaptive, subdivision: 2 }
    }

    pub fn ring_with_ratio(ratio: f64) -> Self {
        Mode::Ring { mesh: RingMesh::Geometric { ratio }, subdivision: 2 }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizeConfig {
    pub depth: usize,
    pub restarts: usize,
    pub max_steps: usize,
    pub step_init: f64,
    pub seed: u64,
    pub mode: Mode,
    pub tolerance: f64,
    /// Profile (ring mode) or leaf values (full mode) to seed one extra start.
    pub warm_start: Option<Vec<f64>>,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        OptimizeConfig {
            depth: 6,
            restarts: 8,
            max_steps: 2500,
            step_init: 0.25,
            seed: 7,
            mode: Mode::ring(),
            tolerance: 1e-12,
            warm_start: None,
        }
    }
}

/// Best candidate found by one `optimize` call.
#[derive(Debug, Clone)]
pub struct OptimizeOutcome {
    pub phi: StepFunction,
    /// ∫ (Mφ)^p evaluated on the tree.
    pub attained: f64,
    /// Ring profile when ring mode was used.
    pub profile: Option<Vec<f64>>,
    /// Worst relative excess of any evaluated candidate over its own sharp
    /// bound; stays at 0 unless the bound is ever violated.
    pub max_bound_violation: f64,
    pub evaluations: u64,
}

struct EvalContext {
    weights: Vec<f64>,
    chain: Option<ChainShape>,
    tree: Arc<MeasureTree>,
    p: f64,
}

impl EvalContext {
    fn energy_with_grad(&self, values: &[f64]) -> (f64, Vec<f64>) {
        match &self.chain {
            Some(shape) => shape.energy_with_grad(values, self.p),
            None => full_leaf_energy_with_grad(&self.tree, values, self.p),
        }
    }

    /// Relative excess of the energy over the candidate's own sharp bound.
    fn bound_violation(&self, values: &[f64], energy: f64) -> f64 {
        let f = csum(values.iter().zip(&self.weights).map(|(&v, &w)| v * w));
        let big_f = csum(
            values
                .iter()
                .zip(&self.weights)
                .map(|(&v, &w)| v.powf(self.p) * w),
        );
        if !(f > 0.0) {
            return 0.0;
        }
        match bellman_value(self.p, f, big_f.max(f.powf(self.p))) {
            Ok(bound) => ((energy - bound * (1.0 + 1e-9)) / bound).max(0.0),
            Err(_) => 0.0,
        }
    }
}

fn full_leaf_energy_with_grad(
    tree: &Arc<MeasureTree>,
    values: &[f64],
    p: f64,
) -> (f64, Vec<f64>) {
    let phi = StepFunction::new(Arc::clone(tree), values.to_vec())
        .expect("optimizer keeps values nonnegative");
    let max = maximal_function(&phi);
    let energy = max.p_integral(p);
    if phi.integral() == 0.0 {
        return (energy, vec![0.0; values.len()]);
    }
    let lin = linearize_with(&phi, &max, p).expect("nonzero function");
    // d energy / d v_L = p μ_L Σ_{members I ⊇ L} a_I y_I^(p-1) / μ(I)
    let mut node_weight = vec![0.0; tree.node_count()];
    for i in 0..lin.len() {
        let m = lin.members()[i];
        node_weight[m.index()] =
            lin.cell_measure(i) * lin.level(i).powf(p - 1.0) / tree.measure(m);
    }
    let mut cum = vec![0.0; tree.node_count()];
    for id in tree.node_ids() {
        let here = cum[id.index()] + node_weight[id.index()];
        cum[id.index()] = here;
        for &c in tree.children(id) {
            cum[c.index()] = here;
        }
    }
    let grad = tree
        .leaves()
        .iter()
        .map(|&l| p * tree.measure(l) * cum[l.index()])
        .collect();
    (energy, grad)
}

struct RestartResult {
    energy: f64,
    values: Vec<f64>,
    evaluations: u64,
    max_violation: f64,
}

fn run_restart(
    ctx: &EvalContext,
    p: f64,
    f: f64,
    big_f: f64,
    init: Vec<f64>,
    max_steps: usize,
    step_init: f64,
    tolerance: f64,
) -> Option<RestartResult> {
    let weights = &ctx.weights;
    let mut values = init;
    project_to_moments(&mut values, weights, p, f, big_f).ok()?;
    let (mut energy, mut grad) = ctx.energy_with_grad(&values);
    let mut evals = 1u64;
    let mut violation = ctx.bound_violation(&values, energy);
    let mut step = step_init;
    let mut stall = 0usize;
    for _ in 0..max_steps {
        let gmax = grad.iter().cloned().fold(0.0f64, |a, g| a.max(g.abs()));
        if gmax == 0.0 {
            break;
        }
        let scale = values.iter().cloned().fold(f64::EPSILON, f64::max);
        let mut trial: Vec<f64> = values
            .iter()
            .zip(&grad)
            .map(|(&v, &g)| (v + step * scale * g / gmax).max(0.0))
            .collect();
        let improved = project_to_moments(&mut trial, weights, p, f, big_f)
            .ok()
            .map(|_| {
                let (e, g) = ctx.energy_with_grad(&trial);
                evals += 1;
                violation = violation.max(ctx.bound_violation(&trial, e));
                (e, g)
            });
        match improved {
            Some((e, g)) if e > energy + tolerance => {
                values = trial;
                energy = e;
                grad = g;
                step = (step * 1.3).min(4.0);
                stall = 0;
            }
            _ => {
                step *= 0.5;
                stall += 1;
                if step < 1e-12 || stall > 60 {
                    break;
                }
            }
        }
    }
    Some(RestartResult { energy, values, evaluations: evals, max_violation: violation })
}

/// Maximizes ∫ (Mφ)^p over nonnegative candidates with moments (f, F).
pub fn optimize(p: f64, f: f64, big_f: f64, config: &OptimizeConfig) -> Result<OptimizeOutcome> {
    if !(f > 0.0) || f.powf(p) > big_f * (1.0 + 1e-9) {
        return Err(Error::Domain(format!(
            "infeasible moments: f = {f}, F = {big_f}, p = {p}"
        )));
    }
    if config.restarts < 1 {
        return Err(Error::Domain("need at least one restart".into()));
    }
    let (ctx, subdivision) = match config.mode {
        Mode::Ring { mesh, subdivision } => {
            let shape = match mesh {
                RingMesh::Geometric { ratio } => ChainShape::new(ratio, config.depth)?,
                RingMesh::Adaptive => ChainShape::adaptive(p, f, big_f, config.depth)?,
            };
            let tree = shape.build_tree(subdivision)?;
            (
                EvalContext { weights: shape.weights.clone(), chain: Some(shape), tree, p },
                subdivision,
            )
        }
        Mode::FullLeaf { arity } => {
            let tree = Arc::new(MeasureTree::build_uniform(arity, config.depth as u32)?);
            let weights = tree.leaves().iter().map(|&l| tree.measure(l)).collect();
            (EvalContext { weights, chain: None, tree, p }, 0)
        }
    };
    let dim = ctx.weights.len();

    // constant target: the only feasible point up to null modifications
    if (big_f - f.powf(p)).abs() <= 1e-12 * big_f {
        let values = vec![f; dim];
        let phi = materialize(&ctx, &values, subdivision)?;
        return Ok(OptimizeOutcome {
            attained: maximal_function(&phi).p_integral(p),
            profile: ctx.chain.as_ref().map(|_| values.clone()),
            phi,
            max_bound_violation: 0.0,
            evaluations: 1,
        });
    }

    let mut inits: Vec<Vec<f64>> = Vec::new();
    if let Some(warm) = &config.warm_start {
        if warm.len() == dim {
            inits.push(warm.clone());
        }
    }
    // structured starts: near-constant; in ring mode also scale-invariant
    // profiles t^(1/c - 1) started at several depths and aimed at eigenvalue
    // candidates up to the sharp one (the projection rebalances moments)
    inits.push(vec![f; dim].iter().enumerate().map(|(i, &v)| v * (1.0 + 1e-3 * (i as f64 + 1.0))).collect());
    if let Some(shape) = &ctx.chain {
        let k = shape.depth();
        let omega = omega_p(p, (f.powf(p) / big_f).clamp(0.0, 1.0)).unwrap_or(1.0);
        for &c_target in &[omega, 0.5 * (1.0 + omega), 1.0 + 0.25 * (omega - 1.0)] {
            if c_target <= 1.0 {
                continue;
            }
            for &num in &[0usize, 1, 2, 3] {
                inits.push(shape.eigen_seed(1.0 / c_target, num * k / 4, f));
            }
        }
    }
    let mut seed_stream = ChaCha8Rng::seed_from_u64(config.seed);
    while inits.len() < config.restarts.max(2) + 1 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_stream.gen());
        let draw: Vec<f64> = (0..dim)
            .map(|_| {
                let u: f64 = rng.gen_range(-2.5..1.2f64);
                f * 10f64.powf(u)
            })
            .collect();
        inits.push(draw);
    }

    let results: Vec<Option<RestartResult>> = inits
        .par_iter()
        .map(|init| {
            run_restart(
                &ctx,
                p,
                f,
                big_f,
                init.clone(),
                config.max_steps,
                config.step_init,
                config.tolerance,
            )
        })
        .collect();

    let mut best: Option<&RestartResult> = None;
    let mut evaluations = 0u64;
    let mut max_violation = 0.0f64;
    for r in results.iter().flatten() {
        evaluations += r.evaluations;
        max_violation = max_violation.max(r.max_violation);
        if best.map_or(true, |b| r.energy > b.energy) {
            best = Some(r);
        }
    }
    let best = best.ok_or_else(|| {
        Error::Domain("no restart produced a feasible candidate".into())
    })?;
    let phi = materialize(&ctx, &best.values, subdivision)?;
    Ok(OptimizeOutcome {
        attained: maximal_function(&phi).p_integral(p),
        profile: ctx.chain.as_ref().map(|_| best.values.clone()),
        phi,
        max_bound_violation: max_violation,
        evaluations,
    })
}

fn materialize(ctx: &EvalContext, values: &[f64], subdivision: usize) -> Result<StepFunction> {
    match &ctx.chain {
        Some(shape) => {
            let tree = shape.build_tree(subdivision)?;
            chain_step_function(&tree, values)
        }
        None => StepFunction::new(Arc::clone(&ctx.tree), values.to_vec()),
    }
}

// ---------------------------------------------------------------------------
// exhaustive oracle for tiny instances
// ---------------------------------------------------------------------------

/// Exhaustively maximizes ∫ (Mφ)^p over leaf-value tuples drawn from the
/// grid {0, step, 2·step, …, max} on a binary tree of the given depth,
/// keeping tuples whose moments land within `tol` of (f, F). Independent of
/// the gradient path: plain enumeration with interval pruning.
pub fn brute_force_oracle(
    p: f64,
    f: f64,
    big_f: f64,
    depth: u32,
    grid_max: f64,
    grid_step: f64,
    tol: f64,
) -> Result<f64> {
    if depth > 2 {
        return Err(Error::Capacity("oracle is limited to depth <= 2".into()));
    }
    let tree = MeasureTree::build_uniform(2, depth)?;
    let leaves = tree.leaf_count();
    let mu = 1.0 / leaves as f64;
    let steps = (grid_max / grid_step).round() as usize;
    let grid: Vec<f64> = (0..=steps).map(|k| k as f64 * grid_step).collect();
    let grid_p: Vec<f64> = grid.iter().map(|&v| v.powf(p)).collect();

    // ancestor sets per leaf for the tiny evaluator
    let chains: Vec<Vec<usize>> = tree
        .leaves()
        .iter()
        .map(|&l| tree.ancestor_chain(l).iter().map(|n| n.index()).collect())
        .collect();
    let node_measures: Vec<f64> = tree.node_ids().map(|n| tree.measure(n)).collect();
    let leaf_ids: Vec<usize> = tree.leaves().iter().map(|l| l.index()).collect();
    let n_nodes = tree.node_count();

    let vmax_f = grid_max * mu;
    let vmax_fp = grid_max.powf(p) * mu;

    let mut best = f64::NEG_INFINITY;
    let mut assignment = vec![0usize; leaves];
    let mut integrals = vec![0.0f64; n_nodes];

    fn recurse(
        pos: usize,
        sum_f: f64,
        sum_fp: f64,
        leaves: usize,
        mu: f64,
        grid: &[f64],
        grid_p: &[f64],
        f: f64,
        big_f: f64,
        tol: f64,
        vmax_f: f64,
        vmax_fp: f64,
        p: f64,
        chains: &[Vec<usize>],
        node_measures: &[f64],
        leaf_ids: &[usize],
        integrals: &mut Vec<f64>,
        assignment: &mut Vec<usize>,
        best: &mut f64,
    ) {
        let remaining = (leaves - pos) as f64;
        if sum_f > f + tol || sum_f + remaining * vmax_f < f - tol {
            return;
        }
        if sum_fp > big_f + tol || sum_fp + remaining * vmax_fp < big_f - tol {
            return;
        }
        if pos == leaves {
            // evaluate ∫ (Mφ)^p
            for v in integrals.iter_mut() {
                *v = 0.0;
            }
            for (i, &gi) in assignment.iter().enumerate() {
                let contrib = grid[gi] * mu;
                for &node in &chains[i] {
                    integrals[node] += contrib;
                }
            }
            let mut energy = 0.0;
            for chain in chains.iter() {
                let mut m = 0.0f64;
                for &node in chain {
                    m = m.max(integrals[node] / node_measures[node]);
                }
                energy += m.powf(p) * mu;
            }
            let _ = leaf_ids;
            if energy > *best {
                *best = energy;
            }
            return;
        }
        for gi in 0..grid.len() {
            assignment[pos] = gi;
            recurse(
                pos + 1,
                sum_f + grid[gi] * mu,
                sum_fp + grid_p[gi] * mu,
                leaves,
                mu,
                grid,
                grid_p,
                f,
                big_f,
                tol,
                vmax_f,
                vmax_fp,
                p,
                chains,
                node_measures,
                leaf_ids,
                integrals,
                assignment,
                best,
            );
        }
    }

    recurse(
        0,
        0.0,
        0.0,
        leaves,
        mu,
        &grid,
        &grid_p,
        f,
        big_f,
        tol,
        vmax_f,
        vmax_fp,
        p,
        &chains,
        &node_measures,
        &leaf_ids,
        &mut integrals,
        &mut assignment,
        &mut best,
    );

    if best.is_finite() {
        Ok(best)
    } else {
        Err(Error::Domain(format!(
            "no grid tuple lands within {tol} of the moments ({f}, {big_f})"
        )))
    }
}

// ---------------------------------------------------------------------------
// depth sweep
// ---------------------------------------------------------------------------

/// One row of a depth sweep: the attained energy against the bound plus the
/// extremality diagnostics at that depth.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub depth: usize,
    pub attained: f64,
    pub bound: f64,
    pub gap: f64,
    pub residual: f64,
    pub mu_zero: f64,
    pub gap_beta_star: f64,
    pub loc_dev_f: f64,
    pub loc_dev_big_f: f64,
}

/// Runs the optimizer at each depth (warm-starting from the previous best)
/// and records the extremality trend. Localized deviations are tracked on
/// the first three chain nodes, which exist at every swept depth.
pub fn depth_sweep(
    p: f64,
    f: f64,
    big_f: f64,
    depths: &[usize],
    config: &OptimizeConfig,
) -> Result<Vec<SweepRow>> {
    let bound = bellman_value(p, f, big_f)?;
    let mut rows = Vec::with_capacity(depths.len());
    let mut warm: Option<(ChainShape, Vec<f64>)> = None;
    for &depth in depths {
        let mut cfg = config.clone();
        cfg.depth = depth;
        if let Mode::Ring { mesh, .. } = config.mode {
            let shape = match mesh {
                RingMesh::Geometric { ratio } => ChainShape::new(ratio, depth)?,
                RingMesh::Adaptive => ChainShape::adaptive(p, f, big_f, depth)?,
            };
            cfg.warm_start = warm
                .take()
                .map(|(old_shape, prof)| shape.resample_from(&old_shape, &prof));
            let outcome = run_at_depth(p, f, big_f, &cfg, shape, &mut warm, bound, &mut rows)?;
            let _ = outcome;
            continue;
        }
        let outcome = optimize(p, f, big_f, &cfg)?;
        let phi = &outcome.phi;
        let residual = eigen_residual(phi, p)?;
        let mu_zero = zero_set_measure(phi);
        let gap_beta_star = crate::inequalities::gap_at_beta_star(phi, p)?;
        let tracked: Vec<NodeId> = chain_nodes(phi.tree()).into_iter().take(3).collect();
        let mut loc_dev_f = 0.0f64;
        let mut loc_dev_big_f = 0.0f64;
        for &node in &tracked {
            let tree = phi.tree();
            loc_dev_f = loc_dev_f.max((phi.average(node) - f).abs());
            let p_avg = phi.p_integral_over(p, tree.leaves_under(node)) / tree.measure(node);
            loc_dev_big_f = loc_dev_big_f.max((p_avg - big_f).abs());
        }
        warm = outcome.profile.clone();
        rows.push(SweepRow {
            depth,
            attained: outcome.attained,
            bound,
            gap: bound - outcome.attained,
            residual,
            mu_zero,
            gap_beta_star,
            loc_dev_f,
            loc_dev_big_f,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// family ratio probe and zero-mass diagnostics
// ---------------------------------------------------------------------------

/// Energies of a disjoint family and the two ratios that detect
/// extremality: ∫_∪ (Mφ)^p / ∫_∪ φ^p against omega_p(f^p/F)^p, and
/// Σ μ(I) y_I^p / ∫_∪ φ^p against f^p/F.
#[derive(Debug, Clone)]
pub struct RatioProbe {
    pub h: f64,
    pub int_max_p: f64,
    pub int_phi_p: f64,
    pub ratio_lhs: Option<f64>,
    pub ratio_rhs: f64,
    pub mass_ratio: Option<f64>,
    pub moment_ratio: f64,
}

pub fn family_ratio_probe(
    phi: &StepFunction,
    lin: &Linearization,
    members: &[NodeId],
) -> Result<RatioProbe> {
    let p = lin.p();
    let tree = lin.tree();
    let mut indices = Vec::new();
    for &m in members {
        indices.push(
            lin.member_index(m)
                .ok_or_else(|| Error::Usage(format!("node {m} is not an attaining node")))?,
        );
    }
    let h = csum(indices.iter().map(|&i| {
        let node = lin.members()[i];
        tree.measure(node) * lin.level(i).powf(p)
    }));
    let mut union_leaves: Vec<NodeId> = Vec::new();
    for &i in &indices {
        union_leaves.extend(tree.leaves_under(lin.members()[i]));
    }
    let int_phi_p = phi.p_integral_over(p, union_leaves.iter().copied());
    let int_max_p = csum(union_leaves.iter().map(|&l| {
        let pos = tree.leaf_position(l).unwrap();
        lin.level(lin.member_of_leaf_pos(pos)).powf(p) * tree.measure(l)
    }));
    let m = phi.moments(p)?;
    let c = omega_p(p, m.ratio())?;
    Ok(RatioProbe {
        h,
        int_max_p,
        int_phi_p,
        ratio_lhs: (int_phi_p > 0.0).then(|| int_max_p / int_phi_p),
        ratio_rhs: c.powf(p),
        mass_ratio: (int_phi_p > 0.0).then(|| h / int_phi_p),
        moment_ratio: m.ratio(),
    })
}

/// Zero-set measure, the p-mass densities P_I = ∫_{A_I} φ^p / a_I per cell,
/// and the total cell measure where P_I < R.
#[derive(Debug, Clone)]
pub struct ZeroMassDiagnostics {
    pub mu_zero: f64,
    pub p_map: Vec<(NodeId, f64)>,
    pub below_r_mass: f64,
}

pub fn zero_mass_diagnostics(
    phi: &StepFunction,
    lin: &Linearization,
    r_threshold: f64,
) -> ZeroMassDiagnostics {
    let p = lin.p();
    let mut p_map = Vec::with_capacity(lin.len());
    let mut below = CompensatedSum::new();
    for i in 0..lin.len() {
        let a = lin.cell_measure(i);
        let density = if a > 0.0 {
            phi.p_integral_over(p, lin.cell(i).iter().copied()) / a
        } else {
            0.0
        };
        p_map.push((lin.members()[i], density));
        if density < r_threshold {
            below.add(a);
        }
    }
    ZeroMassDiagnostics {
        mu_zero: zero_set_measure(phi),
        p_map,
        below_r_mass: below.value(),
    }
}

/// Mixed diagnostic Σ γ_I P_I combining the redistribution's occupied
/// measures with the cell p-mass densities.
pub fn occupied_density_sum(lin: &Linearization, phi: &StepFunction, red: &Redistribution) -> f64 {
    let p = lin.p();
    csum((0..lin.len()).map(|i| {
        let a = lin.cell_measure(i);
        if a > 0.0 {
            let density = phi.p_integral_over(p, lin.cell(i).iter().copied()) / a;
            red.records()[i].occupied_measure * density
        } else {
            0.0
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::TAU_NUM;

    #[test]
    fn eigen_residual_examples() {
        let tree = Arc::new(MeasureTree::build_uniform(2, 2).unwrap());
        let c = StepFunction::constant(Arc::clone(&tree), 1.0).unwrap();
        assert!(eigen_residual(&c, 2.0).unwrap().abs() <= 1e-12);

        let phi = StepFunction::new(tree, vec![4.0, 0.0, 0.0, 0.0]).unwrap();
        let r = eigen_residual(&phi, 2.0).unwrap();
        assert!((r - 4.5).abs() <= 1e-9, "{r}");
    }

    #[test]
    fn geometric_family_is_an_exact_eigenfunction_off_the_core() {
        let (p, a, gamma, t, k) = (2.0, 0.5, 1.2, 1.0, 10);
        let phi = geometric_family(p, a, gamma, t, k, 2).unwrap();
        let cprime = geometric_eigenvalue(a, gamma);
        assert!((cprime - 1.25).abs() <= 1e-15);
        let tree = phi.tree();
        let max = maximal_function(&phi);
        let chain = chain_nodes(tree);
        for (ring_idx, &node) in chain.iter().enumerate().take(k - 1) {
            let ring = tree.children(node)[0];
            for leaf in tree.leaves_under(ring) {
                let ratio = max.mphi.value_at(leaf) / phi.value_at(leaf);
                assert!(
                    (ratio - cprime).abs() <= TAU_NUM,
                    "ring {ring_idx}: ratio {ratio}"
                );
            }
        }
        // residual against c' comes from the core alone and is tiny
        let res_own = eigen_ratio_defect(&phi, p, cprime);
        let core = *chain.last().unwrap();
        let expected = (1.0 - cprime).abs().powi(2) * tree.measure(core);
        assert!((res_own - expected).abs() <= 1e-12);
    }

    #[test]
    fn geometric_family_moments_converge() {
        let (p, a, gamma, t) = (2.0, 0.5, 1.2, 1.0);
        let f_inf = t * (1.0 - a) / (1.0 - a * gamma);
        let f_p_inf = t * t * (1.0 - a) / (1.0 - a * gamma * gamma);
        let mut prev_err = f64::INFINITY;
        for k in [4, 6, 8, 10] {
            let phi = geometric_family(p, a, gamma, t, k, 2).unwrap();
            let m = phi.moments(p).unwrap();
            assert!((m.f - f_inf).abs() <= 1e-12, "mass is exact at every depth");
            let err = (m.big_f - f_p_inf).abs();
            assert!(err < prev_err, "k = {k}: {err} !< {prev_err}");
            prev_err = err;
        }
    }

    #[test]
    fn geometric_family_domain_checks() {
        assert!(geometric_family(2.0, 0.5, 1.5, 1.0, 8, 2).is_err(), "aγ^p >= 1");
        assert!(geometric_family(2.0, 0.5, 0.9, 1.0, 8, 2).is_err());
        assert!(geometric_family(2.0, 1.1, 1.2, 1.0, 8, 2).is_err());
    }

    #[test]
    fn fit_geometric_reference_point() {
        let fit = fit_geometric(2.0, 1.0, 4.0 / 3.0, 0.5).unwrap();
        assert!(fit.feasible);
        // exact root of 7γ² - 12γ + 4 in (1, √2)
        let gamma_exact = (12.0 + 32f64.sqrt()) / 14.0;
        assert!((fit.gamma - gamma_exact).abs() <= 1e-12, "{}", fit.gamma);
        let c_exact = (4.0 + 2f64.sqrt()) / 4.0;
        assert!((fit.c_prime - c_exact).abs() <= 1e-12);
        assert!((fit.c_prime * fit.t - 1.0).abs() <= 1e-12, "c' t = f");

        // the eigenvalue always undershoots omega
        let omega = omega_p(2.0, 0.75).unwrap();
        assert!(fit.c_prime < omega - 0.01);
    }

    #[test]
    fn fit_geometric_round_trip() {
        let (p, a) = (2.0, 0.5);
        let (f, big_f) = (1.0, 4.0 / 3.0);
        let fit = fit_geometric(p, f, big_f, a).unwrap();
        // moments depend only on ring measures, so deep truncations can be
        // checked on the closed-form chain weights
        let k = 64;
        let shape = ChainShape::new(a, k).unwrap();
        let mut profile: Vec<f64> = (0..k).map(|j| fit.t * fit.gamma.powi(j as i32)).collect();
        profile.push(fit.t * fit.gamma.powi(k as i32) * fit.c_prime);
        let f_k = csum(profile.iter().zip(&shape.weights).map(|(&v, &w)| v * w));
        let fp_k = csum(profile.iter().zip(&shape.weights).map(|(&v, &w)| v * v * w));
        assert!((f_k - f).abs() <= 1e-6, "{f_k}");
        assert!((fp_k - big_f).abs() <= 1e-6, "{fp_k}");

        // the tree agrees with the closed form where it is buildable
        let phi = geometric_family(p, a, fit.gamma, fit.t, 10, 2).unwrap();
        let m = phi.moments(p).unwrap();
        let shape10 = ChainShape::new(a, 10).unwrap();
        let prof10 = profile_of(&phi);
        let f10 = csum(prof10.iter().zip(&shape10.weights).map(|(&v, &w)| v * w));
        let fp10 = csum(prof10.iter().zip(&shape10.weights).map(|(&v, &w)| v * v * w));
        assert!((m.f - f10).abs() <= 1e-12);
        assert!((m.big_f - fp10).abs() <= 1e-12);
    }

    #[test]
    fn fit_geometric_near_constant() {
        let fit = fit_geometric(2.0, 1.0, 1.0 + 1e-6, 0.5).unwrap();
        assert!(fit.feasible);
        assert!(fit.gamma < 1.002);
        assert!(fit.c_prime < 1.003);
    }

    #[test]
    fn chain_energy_matches_tree_evaluation() {
        let shape = ChainShape::new(0.5, 6).unwrap();
        let profiles = [
            vec![1.0; 7],
            vec![0.2, 0.4, 0.9, 1.7, 3.1, 5.0, 9.0],
            vec![2.0, 0.1, 0.1, 4.0, 0.0, 1.0, 2.5],
        ];
        let tree = shape.build_tree(2).unwrap();
        for profile in &profiles {
            for &p in &[1.5, 2.0, 3.0] {
                let closed = shape.energy(profile, p);
                let phi = chain_step_function(&tree, profile).unwrap();
                let direct = maximal_function(&phi).p_integral(p);
                assert!(
                    (closed - direct).abs() <= TAU_NUM * direct.max(1.0),
                    "p = {p}: {closed} vs {direct}"
                );
            }
        }
    }

    #[test]
    fn chain_gradient_matches_finite_differences() {
        let shape = ChainShape::new(0.5, 5).unwrap();
        let profile = vec![0.3, 0.7, 1.4, 2.2, 3.5, 6.0];
        for &p in &[1.5, 2.0, 3.0] {
            let (_, grad) = shape.energy_with_grad(&profile, p);
            for i in 0..profile.len() {
                let h = 1e-7 * profile[i].max(1.0);
                let mut up = profile.clone();
                up[i] += h;
                let mut dn = profile.clone();
                dn[i] -= h;
                let fd = (shape.energy(&up, p) - shape.energy(&dn, p)) / (2.0 * h);
                assert!(
                    (grad[i] - fd).abs() <= 1e-5 * fd.abs().max(1.0),
                    "p = {p}, i = {i}: {} vs {fd}",
                    grad[i]
                );
            }
        }
    }

    #[test]
    fn projection_reaches_requested_moments() {
        let weights = vec![0.25; 4];
        let mut values = vec![3.0, 1.0, 0.5, 0.1];
        project_to_moments(&mut values, &weights, 2.0, 1.0, 4.0 / 3.0).unwrap();
        let f = csum(values.iter().zip(&weights).map(|(&v, &w)| v * w));
        let big_f = csum(values.iter().zip(&weights).map(|(&v, &w)| v * v * w));
        assert!((f - 1.0).abs() <= 1e-12);
        assert!((big_f - 4.0 / 3.0).abs() <= 1e-10);
        assert!(values.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn projection_preserves_zeros_and_handles_spikes() {
        let weights = vec![0.25; 4];
        let mut values = vec![9.0, 0.0, 0.0, 1e-3];
        project_to_moments(&mut values, &weights, 2.0, 1.0, 3.0).unwrap();
        assert_eq!(values[1], 0.0);
        assert_eq!(values[2], 0.0);
        let f = csum(values.iter().zip(&weights).map(|(&v, &w)| v * w));
        assert!((f - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn optimizer_constant_target() {
        let cfg = OptimizeConfig { depth: 4, restarts: 2, ..Default::default() };
        let out = optimize(2.0, 1.0, 1.0, &cfg).unwrap();
        assert!((out.attained - 1.0).abs() <= 1e-12);
        assert!(out.profile.unwrap().iter().all(|&v| (v - 1.0).abs() <= 1e-12));
    }

    #[test]
    fn optimizer_stays_under_the_bound() {
        let cfg = OptimizeConfig {
            depth: 6,
            restarts: 4,
            max_steps: 600,
            seed: 11,
            ..Default::default()
        };
        let out = optimize(2.0, 1.0, 4.0 / 3.0, &cfg).unwrap();
        let bound = bellman_value(2.0, 1.0, 4.0 / 3.0).unwrap();
        assert!(out.attained <= bound + 1e-9);
        assert!(out.attained > 1.0, "better than the constant");
        assert_eq!(out.max_bound_violation, 0.0);
        let m = out.phi.moments(2.0).unwrap();
        assert!((m.f - 1.0).abs() <= 1e-9);
        assert!((m.big_f - 4.0 / 3.0).abs() <= 1e-8);
    }

    #[test]
    fn optimizer_is_deterministic() {
        let cfg = OptimizeConfig {
            depth: 5,
            restarts: 4,
            max_steps: 300,
            seed: 23,
            ..Default::default()
        };
        let a = optimize(2.0, 1.0, 4.0 / 3.0, &cfg).unwrap();
        let b = optimize(2.0, 1.0, 4.0 / 3.0, &cfg).unwrap();
        assert_eq!(a.attained, b.attained);
        assert_eq!(a.profile.unwrap(), b.profile.unwrap());
    }

    #[test]
    fn full_leaf_gradient_matches_finite_differences() {
        let tree = Arc::new(MeasureTree::build_uniform(2, 2).unwrap());
        let values = vec![2.0, 0.5, 1.2, 0.3];
        let (_, grad) = full_leaf_energy_with_grad(&tree, &values, 2.0);
        for i in 0..values.len() {
            let h = 1e-7;
            let mut up = values.clone();
            up[i] += h;
            let mut dn = values.clone();
            dn[i] -= h;
            let (eu, _) = full_leaf_energy_with_grad(&tree, &up, 2.0);
            let (ed, _) = full_leaf_energy_with_grad(&tree, &dn, 2.0);
            let fd = (eu - ed) / (2.0 * h);
            assert!((grad[i] - fd).abs() <= 1e-5 * fd.abs().max(1.0), "i = {i}");
        }
    }

    #[test]
    fn oracle_tiny_cases() {
        // constant moments force the constant tuple
        let v = brute_force_oracle(2.0, 1.0, 1.0, 1, 4.0, 0.05, 5e-4).unwrap();
        assert!((v - 1.0).abs() <= 1e-2);
        assert!(brute_force_oracle(2.0, 1.0, 4.0 / 3.0, 3, 4.0, 0.05, 5e-4).is_err());
    }

    #[test]
    fn sweep_rows_are_consistent() {
        let cfg = OptimizeConfig {
            restarts: 3,
            max_steps: 400,
            seed: 5,
            ..Default::default()
        };
        let rows = depth_sweep(2.0, 1.0, 4.0 / 3.0, &[3, 4, 5], &cfg).unwrap();
        assert_eq!(rows.len(), 3);
        for w in rows.windows(2) {
            assert!(w[1].attained >= w[0].attained - 1e-9, "warm start never loses");
        }
        for row in &rows {
            assert!(row.attained <= row.bound + 1e-9);
            assert!((row.gap - (row.bound - row.attained)).abs() <= 1e-12);
            assert!(row.residual >= 0.0);
            assert!(row.mu_zero >= 0.0);
        }
    }

    #[test]
    fn ratio_probe_examples() {
        let tree = Arc::new(MeasureTree::build_uniform(2, 2).unwrap());
        let c = StepFunction::constant(Arc::clone(&tree), 1.0).unwrap();
        let lin = crate::linearize::linearize(&c, 2.0).unwrap();
        let probe = family_ratio_probe(&c, &lin, &[tree.root()]).unwrap();
        assert!((probe.h - 1.0).abs() <= 1e-12);
        assert!((probe.ratio_lhs.unwrap() - 1.0).abs() <= 1e-12);
        assert!((probe.ratio_rhs - 1.0).abs() <= 1e-9);

        let phi = StepFunction::new(Arc::clone(&tree), vec![4.0, 0.0, 0.0, 0.0]).unwrap();
        let lin = crate::linearize::linearize(&phi, 2.0).unwrap();
        let left = tree.children(tree.root())[0];
        let probe = family_ratio_probe(&phi, &lin, &[left]).unwrap();
        assert!((probe.h - 2.0).abs() <= 1e-12);
        assert!((probe.int_max_p - 5.0).abs() <= 1e-12);
        assert!((probe.int_phi_p - 4.0).abs() <= 1e-12);
        assert!((probe.ratio_lhs.unwrap() - 1.25).abs() <= 1e-12);
        let omega = omega_p(2.0, 0.25).unwrap();
        assert!((probe.ratio_rhs - omega * omega).abs() <= 1e-9);
    }

    #[test]
    fn zero_mass_examples() {
        let tree = Arc::new(MeasureTree::build_uniform(2, 2).unwrap());
        let c = StepFunction::constant(Arc::clone(&tree), 1.5).unwrap();
        let lin = crate::linearize::linearize(&c, 2.0).unwrap();
        let d = zero_mass_diagnostics(&c, &lin, 3.0);
        assert_eq!(d.mu_zero, 0.0);
        assert!((d.p_map[0].1 - 2.25).abs() <= 1e-12);
        assert!((d.below_r_mass - 1.0).abs() <= 1e-12, "R above c^p");
        let d2 = zero_mass_diagnostics(&c, &lin, 2.0);
        assert_eq!(d2.below_r_mass, 0.0, "R below c^p");

        let phi = StepFunction::new(tree, vec![4.0, 0.0, 0.0, 0.0]).unwrap();
        let lin = crate::linearize::linearize(&phi, 2.0).unwrap();
        let d = zero_mass_diagnostics(&phi, &lin, 1.0);
        assert!((d.mu_zero - 0.75).abs() <= 1e-12);
        let mut densities: Vec<f64> = d.p_map.iter().map(|&(_, v)| v).collect();
        densities.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(densities, vec![0.0, 0.0, 16.0]);
    }
}
