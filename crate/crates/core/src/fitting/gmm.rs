use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::body::SwingTwistPose;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Diagonal covariance.
    pub variance: Vec<f64>,
}

impl GmmComponent {
    fn log_weighted_density(&self, x: &[f64]) -> f64 {
        let mut s = self.weight.ln();
        for ((xi, m), v) in x.iter().zip(&self.mean).zip(&self.variance) {
            let d = xi - m;
            s -= 0.5 * ((2.0 * PI * v).ln() + d * d / v);
        }
        s
    }
}

/// Gaussian mixture over the non-root pose scalars (swing 1, swing 2,
/// twist per joint).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosePriorGMM {
    pub components: Vec<GmmComponent>,
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl PosePriorGMM {
    pub fn dim(&self) -> usize {
        self.components.first().map_or(0, |c| c.mean.len())
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::InvalidParameter("pose prior has no components".into()));
        }
        let d = self.dim();
        let mut total = 0.0;
        for (k, c) in self.components.iter().enumerate() {
            if c.mean.len() != d || c.variance.len() != d {
                return Err(Error::DimensionMismatch {
                    what: "pose prior component",
                    expected: d,
                    found: c.mean.len().min(c.variance.len()),
                });
            }
            if !(c.weight > 0.0) || c.variance.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::InvalidParameter(format!(
                    "pose prior component {k} needs a positive weight and positive variances"
                )));
            }
            if c.mean.iter().any(|m| !m.is_finite()) {
                return Err(Error::InvalidParameter(format!("pose prior component {k} has a non-finite mean")));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("pose prior weights sum to {total}")));
        }
        Ok(())
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        if n != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "pose prior dimension",
                expected: self.dim(),
                found: n,
            });
        }
        Ok(())
    }

    /// `log sum_k w_k N(x; mu_k, diag(var_k))`.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x.len())?;
        let terms: Vec<f64> = self.components.iter().map(|c| c.log_weighted_density(x)).collect();
        Ok(log_sum_exp(&terms))
    }

    /// `-log p(x)`, its gradient, and a positive diagonal curvature
    /// `sum_k r_k / var_k` (responsibility-weighted precision).
    pub(crate) fn neg_log_terms(&self, x: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let terms: Vec<f64> = self.components.iter().map(|c| c.log_weighted_density(x)).collect();
        let lse = log_sum_exp(&terms);
        let mut grad = vec![0.0; x.len()];
        let mut curv = vec![0.0; x.len()];
        for (c, t) in self.components.iter().zip(&terms) {
            let r = (t - lse).exp();
            for i in 0..x.len() {
                grad[i] += r * (x[i] - c.mean[i]) / c.variance[i];
                curv[i] += r / c.variance[i];
            }
        }
        (-lse, grad, curv)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let g: PosePriorGMM = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        g.validate()?;
        Ok(g)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::report::write_report(self, path)
    }
}

pub fn gmm_logprob(prior: &PosePriorGMM, pose: &SwingTwistPose) -> Result<f64> {
    prior.log_density(&pose.scalars())
}

/// Expectation-maximization for a diagonal mixture, seeded by k-means++
/// style sampling. Variances are floored at `1e-6`.
pub fn fit_gmm(samples: &[Vec<f64>], k: usize, max_iters: usize, seed: u64) -> Result<PosePriorGMM> {
    if k == 0 || samples.len() < k {
        return Err(Error::InvalidParameter(format!(
            "need at least {k} samples for {k} components, got {}",
            samples.len()
        )));
    }
    let d = samples[0].len();
    if let Some(s) = samples.iter().find(|s| s.len() != d) {
        return Err(Error::DimensionMismatch {
            what: "pose sample",
            expected: d,
            found: s.len(),
        });
    }
    const FLOOR: f64 = 1e-6;
    let n = samples.len();
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means = vec![samples[rng.gen_range(0..n)].clone()];
    while means.len() < k {
        let d2: Vec<f64> = samples
            .iter()
            .map(|s| means.iter().map(|m| dist2(s, m)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut idx = n - 1;
            for (i, w) in d2.iter().enumerate() {
                if u < *w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            rng.gen_range(0..n)
        };
        means.push(samples[pick].clone());
    }
    let mut global_var = vec![0.0; d];
    let gmean: Vec<f64> = (0..d).map(|i| samples.iter().map(|s| s[i]).sum::<f64>() / n as f64).collect();
    for s in samples {
        for i in 0..d {
            global_var[i] += (s[i] - gmean[i]).powi(2) / n as f64;
        }
    }
    let mut gmm = PosePriorGMM {
        components: means
            .into_iter()
            .map(|mean| GmmComponent {
                weight: 1.0 / k as f64,
                mean,
                variance: global_var.iter().map(|v| v.max(FLOOR)).collect(),
            })
            .collect(),
    };
    let mut prev = f64::NEG_INFINITY;
    for _ in 0..max_iters {
        // E step.
        let mut ll = 0.0;
        let resp: Vec<Vec<f64>> = samples
            .iter()
            .map(|s| {
                let t: Vec<f64> = gmm.components.iter().map(|c| c.log_weighted_density(s)).collect();
                let l = log_sum_exp(&t);
                ll += l;
                t.iter().map(|x| (x - l).exp()).collect()
            })
            .collect();
        // M step.
        for (j, c) in gmm.components.iter_mut().enumerate() {
            let nk: f64 = resp.iter().map(|r| r[j]).sum();
            if nk < 1e-12 {
                continue;
            }
            c.weight = nk / n as f64;
            for i in 0..d {
                c.mean[i] = samples.iter().zip(&resp).map(|(s, r)| r[j] * s[i]).sum::<f64>() / nk;
            }
            for i in 0..d {
                let v = samples
                    .iter()
                    .zip(&resp)
                    .map(|(s, r)| r[j] * (s[i] - c.mean[i]).powi(2))
                    .sum::<f64>()
                    / nk;
                c.variance[i] = v.max(FLOOR);
            }
        }
        let wsum: f64 = gmm.components.iter().map(|c| c.weight).sum();
        for c in &mut gmm.components {
            c.weight /= wsum;
        }
        if (ll - prev).abs() <= 1e-10 * ll.abs().max(1.0) {
            break;
        }
        prev = ll;
    }
    gmm.validate()?;
    Ok(gmm)
}
