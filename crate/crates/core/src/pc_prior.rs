//! Penalized-complexity prior for the confounding correlation ρ, with base
//! model ρ = 0, and the Fisher-z reparameterization used by the sampler.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distance to the base point below which the density is not evaluated.
pub const BASE_MODEL_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcRhoPrior {
    w: u32,
    lambda: f64,
    u: f64,
    a: f64,
}

/// `-log R(ρ)` with `R(ρ) = (1 + (w−1)ρ)(1 − ρ)^{w−1}`.
fn neg_log_r(w: u32, rho: f64) -> f64 {
    let a = (w - 1) as f64;
    if rho.abs() < 1e-3 {
        // Taylor series; the two log terms cancel to leading order.
        let r2 = rho * rho;
        a * (a + 1.0) * r2 / 2.0 - a * (a * a - 1.0) * r2 * rho / 3.0 + a * (a.powi(3) + 1.0) * r2 * r2 / 4.0
            - a * (a.powi(4) - 1.0) * r2 * r2 * rho / 5.0
    } else {
        -((a * rho).ln_1p() + a * (-rho).ln_1p())
    }
}

fn tail_mass_for(w: u32, lambda: f64, u: f64) -> f64 {
    let lower = -1.0 / (w - 1) as f64;
    let pos = (-lambda * neg_log_r(w, u).sqrt()).exp();
    let neg = if -u > lower { (-lambda * neg_log_r(w, -u).sqrt()).exp() } else { 0.0 };
    0.5 * (pos + neg)
}

fn check_w(w: u32) -> Result<()> {
    if w < 2 {
        return Err(Error::Config(format!("PC prior dimension w must be at least 2, got {w}")));
    }
    Ok(())
}

/// Rate λ for which `Prob(|ρ| > U) = a`.
pub fn calibrate_lambda(w: u32, u: f64, a: f64) -> Result<f64> {
    check_w(w)?;
    if !(u > 0.0 && u < 1.0) || !(a > 0.0 && a < 1.0) {
        return Err(Error::NoSolution(format!("need 0 < U < 1 and 0 < a < 1, got U = {u}, a = {a}")));
    }
    // The tail mass decreases from its λ → 0 limit to 0 as λ grows.
    let limit = tail_mass_for(w, 0.0, u);
    if a >= limit {
        return Err(Error::NoSolution(format!("tail mass beyond {u} never exceeds {limit}; a = {a} is unreachable")));
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while tail_mass_for(w, hi, u) > a {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::NoSolution(format!("no finite rate for U = {u}, a = {a}")));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if tail_mass_for(w, mid, u) > a {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

impl PcRhoPrior {
    /// Prior calibrated so that `Prob(|ρ| > u) = a`.
    pub fn new(w: u32, u: f64, a: f64) -> Result<Self> {
        let lambda = calibrate_lambda(w, u, a)?;
        Ok(Self { w, lambda, u, a })
    }

    /// Prior with an explicit rate; `U` and `a` are recorded as NaN.
    pub fn with_lambda(w: u32, lambda: f64) -> Result<Self> {
        check_w(w)?;
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::NonPositiveInput(format!("PC rate {lambda}")));
        }
        Ok(Self { w, lambda, u: f64::NAN, a: f64::NAN })
    }

    pub fn w(&self) -> u32 {
        self.w
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn u(&self) -> f64 {
        self.u
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    /// Open support `(−1/(w−1), 1)`.
    pub fn support(&self) -> (f64, f64) {
        (-1.0 / (self.w - 1) as f64, 1.0)
    }

    pub fn in_support(&self, rho: f64) -> bool {
        let (lo, hi) = self.support();
        rho > lo && rho < hi
    }

    /// Distance `√(−log R(ρ))` from the base model.
    pub fn distance(&self, rho: f64) -> Result<f64> {
        if !self.in_support(rho) {
            return Err(Error::OutOfSupport(rho));
        }
        Ok(neg_log_r(self.w, rho).max(0.0).sqrt())
    }

    /// `Prob(|ρ| > u)` under this prior.
    pub fn tail_mass(&self, u: f64) -> f64 {
        tail_mass_for(self.w, self.lambda, u)
    }

    /// Log density. Each side of the base point carries half the mass; the
    /// distance on each side is exponential with rate λ.
    pub fn log_density(&self, rho: f64) -> Result<f64> {
        if !self.in_support(rho) {
            return Err(Error::OutOfSupport(rho));
        }
        if rho.abs() < BASE_MODEL_EPS {
            return Err(Error::AtBaseModel);
        }
        let a = (self.w - 1) as f64;
        let d = neg_log_r(self.w, rho).sqrt();
        // |dd/dρ| = (w−1) w |ρ| / (2 d (1−ρ)(1+(w−1)ρ))
        let log_dd = (a * (a + 1.0) * rho.abs()).ln() - (2.0 * d).ln() - (-rho).ln_1p() - (a * rho).ln_1p();
        Ok((0.5 * self.lambda).ln() + log_dd - self.lambda * d)
    }

    /// Limit of the log density as ρ → 0.
    pub fn log_density_at_base(&self) -> f64 {
        let a = (self.w - 1) as f64;
        (0.5 * self.lambda * (a * (a + 1.0) / 2.0).sqrt()).ln()
    }

    /// Log density of `ρ* = fisher_z(ρ)`, including the Jacobian.
    pub fn log_density_star(&self, rho_star: f64) -> Result<f64> {
        let rho = fisher_z_inv(rho_star);
        let base = if rho.abs() < BASE_MODEL_EPS { self.log_density_at_base() } else { self.log_density(rho)? };
        Ok(base + log_jacobian(rho_star))
    }

    /// Exact draw: pick a side, draw the distance, invert it.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let (lower, _) = self.support();
        let d = Exp::new(self.lambda).expect("positive rate").sample(rng);
        let positive: bool = rng.random();
        let target = d * d;
        if self.w == 2 {
            let mag = (-(-target).exp_m1()).sqrt();
            return if positive { mag } else { -mag };
        }
        let (mut lo, mut hi) = if positive { (0.0, 1.0) } else { (lower, 0.0) };
        // −log R is monotone on each side, increasing away from 0.
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let below = neg_log_r(self.w, mid) < target;
            if positive == below {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// `ρ* = log((1+ρ)/(1−ρ))`.
pub fn fisher_z(rho: f64) -> Result<f64> {
    if !(rho.abs() < 1.0) {
        return Err(Error::OutOfSupport(rho));
    }
    Ok(2.0 * rho.atanh())
}

pub fn fisher_z_inv(rho_star: f64) -> f64 {
    (0.5 * rho_star).tanh()
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `log |dρ/dρ*|`.
pub fn log_jacobian(rho_star: f64) -> f64 {
    std::f64::consts::LN_2 + rho_star - 2.0 * softplus(rho_star)
}
