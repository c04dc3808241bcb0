use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
    pub ess: f64,
}

impl ParamSummary {
    pub fn covers(&self, truth: f64) -> bool {
        self.q025 <= truth && truth <= self.q975
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub params: Vec<ParamSummary>,
    /// Acceptance rate per Metropolis block.
    pub acceptance: Vec<(String, f64)>,
    pub retained: usize,
}

impl PosteriorSummary {
    pub fn get(&self, name: &str) -> Option<&ParamSummary> {
        self.params.iter().find(|p| p.name == name)
    }
}

/// Linear-interpolation quantile of sorted data (type 7).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, 0.5)
}

/// Effective sample size with Geyer's initial monotone sequence estimator.
pub fn effective_sample_size(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return n as f64;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let autocov = |k: usize| c[..n - k].iter().zip(&c[k..]).map(|(a, b)| a * b).sum::<f64>() / n as f64;
    let c0 = autocov(0);
    if c0 <= 0.0 {
        return n as f64;
    }
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while k + 1 < n {
        let mut pair = autocov(k) + autocov(k + 1);
        if pair <= 0.0 {
            break;
        }
        pair = pair.min(prev);
        sum += pair;
        prev = pair;
        k += 2;
    }
    // sum = Σ Γ_m with Γ_0 containing c0; tau = (2 Σ Γ_m − c0) / c0.
    let tau = (2.0 * sum - c0) / c0;
    (n as f64 / tau.max(1e-12)).min(n as f64)
}

pub fn summarize(name: &str, draws: &[f64]) -> ParamSummary {
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    ParamSummary {
        name: name.to_string(),
        mean,
        sd: var.sqrt(),
        q025: quantile_sorted(&sorted, 0.025),
        q975: quantile_sorted(&sorted, 0.975),
        ess: effective_sample_size(draws),
    }
}

/// One CSV row per retained iteration.
pub fn write_trace_csv<W: Write>(names: &[String], iterations: &[usize], draws: &[Vec<f64>], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["iteration".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for (it, row) in iterations.iter().zip(draws) {
        let mut rec = vec![it.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&v, 0.5), 3.0);
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 0.125), 1.5);
        assert_eq!(median(&[3.0, 1.0, 2.0, 10.0]), 2.5);
    }

    #[test]
    fn ess_of_iid_and_ar1() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let iid: Vec<f64> = (0..20_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let ess = effective_sample_size(&iid);
        assert!(ess > 16_000.0 && ess <= 20_000.0, "{ess}");
        // AR(1) with φ = 0.9: ESS ≈ n (1 − φ) / (1 + φ).
        let mut ar = vec![0.0; 50_000];
        for t in 1..ar.len() {
            let e: f64 = StandardNormal.sample(&mut rng);
            ar[t] = 0.9 * ar[t - 1] + e;
        }
        let ess = effective_sample_size(&ar);
        let expected = 50_000.0 * 0.1 / 1.9;
        assert!((ess / expected - 1.0).abs() < 0.25, "{ess} vs {expected}");
    }

    #[test]
    fn summary_fields() {
        let draws: Vec<f64> = (0..1001).map(|i| i as f64 / 1000.0).collect();
        let s = summarize("x", &draws);
        assert!((s.mean - 0.5).abs() < 1e-12);
        assert!((s.q025 - 0.025).abs() < 1e-12 && (s.q975 - 0.975).abs() < 1e-12);
        assert!(s.covers(0.5) && !s.covers(0.99));
    }
}
