use candle_core::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

const COSINE_OFFSET: f64 = 0.008;
const MAX_BETA: f64 = 0.999;

/// Per-step schedule arrays indexed `0..=T`; index 0 holds the
/// `alpha_bar = 1`, `beta = 0` convention.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    pub steps: usize,
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
    pub beta_tilde: Vec<f64>,
}

/// Cosine schedule; `alpha_bar` is rebuilt as the running product of the
/// clipped `alpha` so the identities hold exactly.
pub fn cosine_schedule(steps: usize) -> Result<DiffusionSchedule> {
    if steps == 0 {
        return Err(Error::InvalidArgument("schedule needs at least one step".into()));
    }
    let f = |t: usize| {
        let x = (t as f64 / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET);
        (x * std::f64::consts::FRAC_PI_2).cos().powi(2)
    };
    let f0 = f(0);
    let mut beta = vec![0.0; steps + 1];
    for (t, b) in beta.iter_mut().enumerate().skip(1) {
        *b = (1.0 - (f(t) / f0) / (f(t - 1) / f0)).min(MAX_BETA);
    }
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = vec![1.0; steps + 1];
    for t in 1..=steps {
        alpha_bar[t] = alpha_bar[t - 1] * alpha[t];
    }
    let mut beta_tilde = vec![0.0; steps + 1];
    for t in 1..=steps {
        beta_tilde[t] = (1.0 - alpha_bar[t - 1]) / (1.0 - alpha_bar[t]) * beta[t];
    }
    Ok(DiffusionSchedule {
        steps,
        beta,
        alpha,
        alpha_bar,
        beta_tilde,
    })
}

impl DiffusionSchedule {
    fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps {
            return Err(Error::InvalidArgument(format!("timestep {t} outside 1..={}", self.steps)));
        }
        Ok(())
    }

    /// Coefficients of the posterior mean on `x̂0` and `x_t`, and its variance.
    pub fn posterior(&self, t: usize) -> Result<(f64, f64, f64)> {
        self.check(t)?;
        let ab = self.alpha_bar[t];
        let ab_prev = self.alpha_bar[t - 1];
        let c0 = ab_prev.sqrt() * self.beta[t] / (1.0 - ab);
        let ct = self.alpha[t].sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        Ok((c0, ct, self.beta_tilde[t]))
    }

    /// Hex SHA-256 over the step count and every `beta`, little-endian.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.steps as u64).to_le_bytes());
        for b in &self.beta {
            h.update(b.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Per-batch-row coefficient column shaped to broadcast against `like`.
fn per_row(values: Vec<f64>, like: &Tensor) -> Result<Tensor> {
    let mut shape = vec![values.len()];
    shape.extend(std::iter::repeat(1).take(like.rank() - 1));
    Ok(Tensor::from_vec(values, shape, like.device())?.to_dtype(like.dtype())?)
}

/// `x_t = sqrt(ᾱ_t) x0 + sqrt(1 − ᾱ_t) ε`, with one `t` per leading batch row.
pub fn q_sample(x0: &Tensor, t: &[usize], noise: &Tensor, schedule: &DiffusionSchedule) -> Result<Tensor> {
    if x0.dims() != noise.dims() || x0.dim(0)? != t.len() {
        return Err(Error::Shape(format!(
            "q_sample: x0 {:?}, noise {:?}, {} timesteps",
            x0.dims(),
            noise.dims(),
            t.len()
        )));
    }
    for &s in t {
        schedule.check(s)?;
    }
    let a = per_row(t.iter().map(|&s| schedule.alpha_bar[s].sqrt()).collect(), x0)?;
    let b = per_row(t.iter().map(|&s| (1.0 - schedule.alpha_bar[s]).sqrt()).collect(), x0)?;
    Ok((x0.broadcast_mul(&a)? + noise.broadcast_mul(&b)?)?)
}

/// One ancestral step `x_t → x_{t−1}`; without `noise` the posterior mean is returned.
pub fn reverse_step(
    x_t: &Tensor,
    x0_hat: &Tensor,
    t: usize,
    schedule: &DiffusionSchedule,
    noise: Option<&Tensor>,
) -> Result<Tensor> {
    let (c0, ct, var) = schedule.posterior(t)?;
    let mean = ((x0_hat * c0)? + (x_t * ct)?)?;
    Ok(match noise {
        Some(z) if var > 0.0 => (mean + (z * var.sqrt())?)?,
        _ => mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};
    use rand::SeedableRng;

    fn scalar(v: f64) -> Tensor {
        Tensor::from_vec(vec![v], 1, &Device::Cpu).unwrap()
    }

    #[test]
    fn identities_hold_exactly() {
        let s = cosine_schedule(1000).unwrap();
        assert_eq!(s.alpha_bar[0], 1.0);
        assert!(s.alpha_bar[1000] < 1e-3);
        for t in 1..=1000 {
            assert_eq!(s.alpha[t], 1.0 - s.beta[t]);
            assert_eq!(s.alpha_bar[t], s.alpha_bar[t - 1] * s.alpha[t]);
            assert!(s.alpha_bar[t] < s.alpha_bar[t - 1]);
            assert!(s.beta[t] <= 0.999);
        }
        assert!(cosine_schedule(0).is_err());
    }

    #[test]
    fn alpha_bar_tracks_closed_form_before_clipping() {
        let s = cosine_schedule(1000).unwrap();
        let f = |t: f64| (((t / 1000.0 + 0.008) / 1.008) * std::f64::consts::FRAC_PI_2).cos().powi(2);
        for t in [1usize, 10, 250, 500, 900] {
            let closed = f(t as f64) / f(0.0);
            assert!((s.alpha_bar[t] - closed).abs() < 1e-12, "t={t}");
        }
    }

    #[test]
    fn q_sample_hand_value() {
        let mut s = cosine_schedule(4).unwrap();
        s.alpha_bar[2] = 0.64;
        let x = q_sample(&scalar(1.0), &[2], &scalar(0.5), &s).unwrap();
        assert!((x.to_vec1::<f64>().unwrap()[0] - 1.1).abs() < 1e-12);
        assert!(q_sample(&scalar(1.0), &[0], &scalar(0.5), &s).is_err());
        assert!(q_sample(&scalar(1.0), &[5], &scalar(0.5), &s).is_err());
    }

    #[test]
    fn q_sample_monte_carlo_moments() {
        let s = cosine_schedule(1000).unwrap();
        let t = 400;
        let n = 100_000;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let noise = crate::rng::normal_vec(&mut rng, n);
        let x0 = Tensor::full(0.7f64, n, &Device::Cpu).unwrap();
        let noise = Tensor::from_vec(noise, n, &Device::Cpu).unwrap();
        let x = q_sample(&x0.unsqueeze(0).unwrap(), &[t], &noise.unsqueeze(0).unwrap(), &s)
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1::<f64>()
            .unwrap();
        let mean = x.iter().sum::<f64>() / n as f64;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let want_var = 1.0 - s.alpha_bar[t];
        let se_mean = (want_var / n as f64).sqrt();
        let se_var = want_var * (2.0 / (n - 1) as f64).sqrt();
        assert!((mean - s.alpha_bar[t].sqrt() * 0.7).abs() < 3.0 * se_mean);
        assert!((var - want_var).abs() < 3.0 * se_var);
    }

    #[test]
    fn first_step_returns_prediction() {
        let s = cosine_schedule(50).unwrap();
        let (c0, ct, var) = s.posterior(1).unwrap();
        assert_eq!((c0, ct, var), (1.0, 0.0, 0.0));
        let out = reverse_step(&scalar(3.0), &scalar(-0.25), 1, &s, Some(&scalar(10.0))).unwrap();
        assert_eq!(out.to_vec1::<f64>().unwrap(), vec![-0.25]);
    }

    #[test]
    fn posterior_matches_independent_derivation() {
        let s = cosine_schedule(200).unwrap();
        for t in [2usize, 37, 150, 200] {
            // Rebuild everything from beta alone.
            let ab: f64 = (1..=t).map(|k| 1.0 - s.beta[k]).product();
            let ab_prev: f64 = (1..t).map(|k| 1.0 - s.beta[k]).product();
            let c0 = ab_prev.sqrt() * s.beta[t] / (1.0 - ab);
            let ct = (1.0 - s.beta[t]).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
            let var = (1.0 - ab_prev) / (1.0 - ab) * s.beta[t];
            let (a0, at, v) = s.posterior(t).unwrap();
            assert!((a0 - c0).abs() < 1e-12 && (at - ct).abs() < 1e-12 && (v - var).abs() < 1e-12);
            let out = reverse_step(&scalar(0.3), &scalar(-1.2), t, &s, Some(&scalar(0.4)))
                .unwrap()
                .to_vec1::<f64>()
                .unwrap()[0];
            assert!((out - (c0 * -1.2 + ct * 0.3 + var.sqrt() * 0.4)).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_schedule_keeps_state() {
        let mut s = cosine_schedule(3).unwrap();
        for t in 1..=3 {
            s.beta[t] = 1e-300;
            s.alpha[t] = 1.0 - 1e-300;
        }
        s.alpha_bar = vec![1.0, 0.9, 0.9, 0.9];
        let out = reverse_step(&scalar(2.0), &scalar(2.0), 2, &s, None).unwrap();
        assert!((out.to_vec1::<f64>().unwrap()[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn noiseless_chain_with_oracle_prediction_lands_on_x0() {
        let s = cosine_schedule(100).unwrap();
        let x0 = Tensor::from_vec(vec![0.4f64, -1.3], 2, &Device::Cpu).unwrap();
        let mut x = Tensor::from_vec(vec![2.0f64, 0.5], 2, &Device::Cpu).unwrap();
        for t in (1..=100).rev() {
            x = reverse_step(&x, &x0, t, &s, None).unwrap();
        }
        assert_eq!(x.to_vec1::<f64>().unwrap(), x0.to_vec1::<f64>().unwrap());
        assert_eq!(x.dtype(), DType::F64);
    }

    #[test]
    fn hash_is_stable_and_distinguishes() {
        let a = cosine_schedule(100).unwrap();
        assert_eq!(a.hash(), cosine_schedule(100).unwrap().hash());
        assert_ne!(a.hash(), cosine_schedule(101).unwrap().hash());
        assert_eq!(a.hash().len(), 64);
    }
}
