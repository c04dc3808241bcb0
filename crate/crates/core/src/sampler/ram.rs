//! Robust adaptive Metropolis (Vihola 2012) with multivariate Student-t
//! proposals.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

#[derive(Debug, Clone)]
pub struct Ram {
    s: DMatrix<f64>,
    df: f64,
    target: f64,
    adapt: bool,
    steps: u64,
    accepted: u64,
}

impl Ram {
    /// Proposal scale `S = initial_scale · I`.
    pub fn new(dim: usize, initial_scale: f64, df: f64, target: f64) -> Self {
        Self { s: DMatrix::identity(dim, dim) * initial_scale, df, target, adapt: true, steps: 0, accepted: 0 }
    }

    pub fn dim(&self) -> usize {
        self.s.nrows()
    }

    pub fn set_adapt(&mut self, adapt: bool) {
        self.adapt = adapt;
    }

    /// Lower-triangular proposal scale.
    pub fn scale(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.accepted as f64 / self.steps as f64
        }
    }

    fn draw_t<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let d = self.dim();
        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let chi = ChiSquared::new(self.df).expect("positive df").sample(rng);
        z * (self.df / chi).sqrt()
    }

    /// One MH step from `x` with current log target `log_current`. The
    /// closure returns `None` for proposals with zero target density.
    /// Returns whether the proposal was accepted; on acceptance `x` and
    /// `log_current` are overwritten.
    pub fn step<R, F>(&mut self, x: &mut [f64], log_current: &mut f64, rng: &mut R, mut log_target: F) -> bool
    where
        R: Rng + ?Sized,
        F: FnMut(&[f64]) -> Option<f64>,
    {
        let u = self.draw_t(rng);
        let shift = &self.s * &u;
        let proposal: Vec<f64> = x.iter().zip(shift.iter()).map(|(a, b)| a + b).collect();
        let log_prop = log_target(&proposal).filter(|v| !v.is_nan());
        let alpha = match log_prop {
            Some(lp) if lp == f64::INFINITY => 1.0,
            Some(lp) => (lp - *log_current).min(0.0).exp(),
            None => 0.0,
        };
        let uniform: f64 = rng.random();
        let accept = uniform < alpha;
        if accept {
            x.copy_from_slice(&proposal);
            *log_current = log_prop.expect("accepted proposals have a density");
            self.accepted += 1;
        }
        self.steps += 1;
        if self.adapt {
            self.update(&u, alpha);
        }
        accept
    }

    fn update(&mut self, u: &DVector<f64>, alpha: f64) {
        let d = self.dim() as f64;
        let eta = (d * (self.steps as f64).powf(-2.0 / 3.0)).min(1.0);
        let norm2 = u.norm_squared();
        if norm2 == 0.0 || !norm2.is_finite() {
            return;
        }
        let v = &self.s * u;
        let coef = eta * (alpha - self.target) / norm2;
        let m = &self.s * self.s.transpose() + &v * v.transpose() * coef;
        // coef > −1/‖u‖² keeps m positive definite; guard against round-off.
        if let Some(ch) = m.cholesky() {
            self.s = ch.l();
        }
    }
}
