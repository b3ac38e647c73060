use super::PpoConfig;
use crate::error::{Error, Result};
use crate::gradtape::{Scalar, Tape, Tensor, Var};
use crate::policy::{ObsBatch, Policy};

/// Samples of whole `(environment, timestep)` slices; vectors are indexed by agent row.
#[derive(Clone, Debug)]
pub struct Minibatch<T> {
    pub obs: ObsBatch<T>,
    pub actions: Vec<usize>,
    pub old_log_probs: Vec<T>,
    pub advantages: Vec<T>,
    pub returns: Vec<T>,
}

impl<T: Scalar> Minibatch<T> {
    fn check(&self) -> Result<()> {
        let n = self.obs.rows();
        if [self.actions.len(), self.old_log_probs.len(), self.advantages.len(), self.returns.len()]
            .iter()
            .any(|&l| l != n)
        {
            return Err(Error::shape("ppo_loss", format!("minibatch vectors must have {n} entries")));
        }
        let fields = [
            ("old log-probability", &self.old_log_probs),
            ("advantage", &self.advantages),
            ("return", &self.returns),
        ];
        for (what, v) in fields {
            if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("{what} of minibatch sample {i}"),
                });
            }
        }
        Ok(())
    }
}

/// Scalar loss node and its components for logging.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub loss: Var,
    /// `−mean(min(r·Â, clip(r)·Â))`
    pub policy_loss: f64,
    /// `mean((V − R)²)`
    pub value_loss: f64,
    pub entropy: f64,
    /// Share of samples with `|r − 1| > ε`.
    pub clip_fraction: f64,
    /// `mean(log π_old − log π)`.
    pub approx_kl: f64,
}

/// Shifts and scales to zero mean and unit (population) standard deviation.
pub fn normalize(x: &mut [f64]) {
    if x.is_empty() {
        return;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt() + 1e-8;
    for v in x {
        *v = (*v - mean) / std;
    }
}

/// Records `−L^CLIP + c1·L^VF − c2·S`, averaged over every agent sample.
pub fn ppo_loss<T: Scalar>(tape: &mut Tape<T>, policy: &Policy<T>, mb: &Minibatch<T>, cfg: &PpoConfig) -> Result<LossParts> {
    mb.check()?;
    let n = mb.obs.rows();
    let ev = policy.evaluate_actions(tape, &mb.obs, &mb.actions)?;
    if let Some(i) = tape.value(ev.log_probs).data().iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            context: format!("log-probability of minibatch sample {i}"),
        });
    }
    let col = |v: &[T]| Tensor::from_vec(&[n, 1], v.to_vec());
    let old = tape.constant(col(&mb.old_log_probs)?);
    let adv = tape.constant(col(&mb.advantages)?);
    let ret = tape.constant(col(&mb.returns)?);

    let diff = tape.sub(ev.log_probs, old)?;
    let ratio = tape.exp(diff)?;
    let eps = T::of(cfg.clip_eps);
    let surr1 = tape.mul(ratio, adv)?;
    let clipped = tape.clamp(ratio, T::one() - eps, T::one() + eps)?;
    let surr2 = tape.mul(clipped, adv)?;
    let surr = tape.minimum(surr1, surr2)?;
    let surr_mean = tape.mean(surr)?;
    let policy_loss = tape.scale(surr_mean, -T::one())?;

    let err = tape.sub(ev.values, ret)?;
    let sq = tape.square(err)?;
    let value_loss = tape.mean(sq)?;
    let entropy = tape.mean(ev.entropy)?;

    let v_term = tape.scale(value_loss, T::of(cfg.value_coef))?;
    let e_term = tape.scale(entropy, T::of(cfg.entropy_coef))?;
    let partial = tape.add(policy_loss, v_term)?;
    let loss = tape.sub(partial, e_term)?;

    let eps64 = cfg.clip_eps;
    let ratios = tape.value(ratio).data();
    let clip_fraction = ratios.iter().filter(|r| (r.as_f64() - 1.0).abs() > eps64).count() as f64 / n as f64;
    let approx_kl = tape
        .value(diff)
        .data()
        .iter()
        .map(|d| -d.as_f64())
        .sum::<f64>()
        / n as f64;
    let scalar = |v: Var| tape.value(v).data()[0].as_f64();
    Ok(LossParts {
        loss,
        policy_loss: scalar(policy_loss),
        value_loss: scalar(value_loss),
        entropy: scalar(entropy),
        clip_fraction,
        approx_kl,
    })
}
