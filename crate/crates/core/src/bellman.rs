//! Special functions behind the sharp bound: the strictly decreasing map
//! h_p(z) = -(p-1) z^p + p z^(p-1) on [1, p/(p-1)], its inverse omega_p on
//! [0, 1], the resulting bound F · omega_p(f^p/F)^p, and the scalar
//! inequalities the slack checks reduce to.

use crate::config::{P_MAX, TAU_NUM, TAU_ROOT};
use crate::error::{Error, Result};
use crate::stepfn::Moments;

fn check_p(p: f64) -> Result<()> {
    if !(p > 1.0 && p <= P_MAX) {
        return Err(Error::Domain(format!("p = {p} must lie in (1, {P_MAX}]")));
    }
    Ok(())
}

/// Upper end of h_p's domain, the conjugate-exponent value p/(p-1).
pub fn z_max(p: f64) -> f64 {
    p / (p - 1.0)
}

/// h_p(z) = -(p-1) z^p + p z^(p-1), strictly decreasing from 1 to 0 on
/// [1, p/(p-1)].
pub fn h_p(p: f64, z: f64) -> Result<f64> {
    check_p(p)?;
    if !(1.0..=z_max(p)).contains(&z) {
        return Err(Error::Domain(format!(
            "z = {z} is outside [1, {}]",
            z_max(p)
        )));
    }
    Ok(h_p_unchecked(p, z))
}

#[inline]
fn h_p_unchecked(p: f64, z: f64) -> f64 {
    // z^(p-1) * (p - (p-1) z): one power, and exact zero at z = p/(p-1).
    z.powf(p - 1.0) * (p - (p - 1.0) * z)
}

#[inline]
fn h_p_derivative(p: f64, z: f64) -> f64 {
    p * (p - 1.0) * z.powf(p - 2.0) * (1.0 - z)
}

/// The inverse of h_p: the unique z in [1, p/(p-1)] with h_p(z) = x.
/// Bisection down to a 1e-6 bracket, then bracket-guarded Newton until
/// |h_p(z) - x| <= TAU_ROOT.
pub fn omega_p(p: f64, x: f64) -> Result<f64> {
    check_p(p)?;
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!("x = {x} is outside [0, 1]")));
    }
    // Exact endpoints. h_p is quadratically flat at z = 1, so the residual
    // stop below cannot localize the root there; x = 1 must short-circuit.
    if x == 1.0 {
        return Ok(1.0);
    }
    if x == 0.0 {
        return Ok(z_max(p));
    }
    let (mut lo, mut hi) = (1.0, z_max(p));
    // h is decreasing: h(lo) = 1 >= x >= 0 = h(hi)
    let mut best = lo;
    let mut best_err = (h_p_unchecked(p, lo) - x).abs();
    let consider = |z: f64, err: f64, best: &mut f64, best_err: &mut f64| {
        if err < *best_err {
            *best = z;
            *best_err = err;
        }
    };
    consider(hi, (h_p_unchecked(p, hi) - x).abs(), &mut best, &mut best_err);
    while hi - lo > 1e-6 {
        let mid = 0.5 * (lo + hi);
        let hm = h_p_unchecked(p, mid);
        consider(mid, (hm - x).abs(), &mut best, &mut best_err);
        if hm >= x {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut z = 0.5 * (lo + hi);
    for _ in 0..200 {
        let hz = h_p_unchecked(p, z);
        let err = (hz - x).abs();
        consider(z, err, &mut best, &mut best_err);
        if err <= TAU_ROOT {
            return Ok(z);
        }
        if hz >= x {
            lo = lo.max(z);
        } else {
            hi = hi.min(z);
        }
        let dz = h_p_derivative(p, z);
        let mut next = if dz != 0.0 { z - (hz - x) / dz } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        z = next;
    }
    Ok(best)
}

/// The sharp bound F · omega_p(f^p/F)^p on ∫ (Mφ)^p for moments (f, F).
pub fn bellman_value(p: f64, f: f64, big_f: f64) -> Result<f64> {
    check_p(p)?;
    if !(f > 0.0) {
        return Err(Error::Domain(format!("f = {f} must be positive")));
    }
    let fp = f.powf(p);
    if fp > big_f * (1.0 + TAU_NUM) {
        return Err(Error::Domain(format!(
            "moment pair violates f^p <= F: f^p = {fp}, F = {big_f}"
        )));
    }
    let x = (fp / big_f).clamp(0.0, 1.0);
    Ok(big_f * omega_p(p, x)?.powf(p))
}

/// Derived quantities of a moment pair: the eigenvalue candidate
/// c = omega_p(f^p/F) and beta* = c - 1.
#[derive(Debug, Clone, Copy)]
pub struct BellmanParams {
    pub p: f64,
    pub f: f64,
    pub big_f: f64,
    /// omega_p(f^p / F), in [1, p/(p-1)].
    pub c: f64,
    /// c - 1 >= 0; zero exactly when F = f^p.
    pub beta_star: f64,
    /// Conjugate exponent q with 1/p + 1/q = 1.
    pub q: f64,
}

impl BellmanParams {
    pub fn new(p: f64, f: f64, big_f: f64) -> Result<Self> {
        check_p(p)?;
        let m = Moments::new(p, f, big_f)?;
        let c = omega_p(p, m.ratio())?;
        Ok(BellmanParams {
            p,
            f,
            big_f,
            c,
            beta_star: (c - 1.0).max(0.0),
            q: z_max(p),
        })
    }

    pub fn from_moments(m: &Moments) -> Result<Self> {
        Self::new(m.p, m.f, m.big_f)
    }

    pub fn bound(&self) -> f64 {
        self.big_f * self.c.powf(self.p)
    }
}

/// Slack of the tangent-line bound
/// 1/(β+1-βx)^(p-1) >= 1/(β+1)^(p-1) + (p-1)βx/(β+1)^p for x in [0, 1].
pub fn tangent_slack(p: f64, beta: f64, x: f64) -> f64 {
    let b1 = beta + 1.0;
    (b1 - beta * x).powf(1.0 - p) - b1.powf(1.0 - p) - (p - 1.0) * beta * x * b1.powf(-p)
}

/// Gap in the scalar Young inequality t <= t^p/p + 1/q; zero only at t = 1.
pub fn young_gap(p: f64, t: f64) -> f64 {
    let q = z_max(p);
    t.powf(p) / p + 1.0 / q - t
}

/// Slack of the splitting inequality
/// Σ λ_i^p / σ_i^(p-1) >= (Σ λ_i)^p / (Σ σ_i)^(p-1).
pub fn holder_split_slack(p: f64, lambdas: &[f64], sigmas: &[f64]) -> Result<f64> {
    if lambdas.len() != sigmas.len() || lambdas.is_empty() {
        return Err(Error::Usage(format!(
            "need equal nonzero lengths, got {} and {}",
            lambdas.len(),
            sigmas.len()
        )));
    }
    let lhs: f64 = lambdas
        .iter()
        .zip(sigmas)
        .map(|(&l, &s)| l.powf(p) / s.powf(p - 1.0))
        .sum();
    let lsum: f64 = lambdas.iter().sum();
    let ssum: f64 = sigmas.iter().sum();
    Ok(lhs - lsum.powf(p) / ssum.powf(p - 1.0))
}
