use serde::{Deserialize, Serialize};

use super::munchausen::{munchausen_target, MunchausenParams};
use super::network::{Grads, QNetwork};
use super::replay::Transition;
use super::AgentError;
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub munchausen: MunchausenParams,
    /// Weight of the mode cross-entropy.
    pub mode_weight: f64,
    pub huber_delta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            munchausen: MunchausenParams::default(),
            mode_weight: 0.1,
            huber_delta: 1.0,
        }
    }
}

/// Munchausen targets for a batch, evaluated with the target network.
pub fn munchausen_targets<T: Scalar>(
    batch: &[&Transition<T>],
    target_net: &QNetwork<T>,
    params: &MunchausenParams,
) -> Result<Vec<T>, AgentError> {
    batch
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let qs = target_net.q_values(&t.obs)?;
            let pos = qs
                .iter()
                .position(|(a, _)| *a == t.action)
                .ok_or(AgentError::MaskedAction(t.action))?;
            let q_s: Vec<T> = qs.into_iter().map(|(_, q)| q).collect();
            let q_next: Vec<T> = match (&t.next, t.done) {
                (Some(next), false) => target_net.q_values(next)?.into_iter().map(|(_, q)| q).collect(),
                _ => Vec::new(),
            };
            munchausen_target(&q_s, pos, t.reward, &q_next, t.done, params)
                .ok_or(AgentError::NonFinite { sample: i, what: "target" })
        })
        .collect()
}

fn huber<T: Scalar>(e: T, delta: T) -> (T, T) {
    let half = T::of(0.5);
    if e.abs() <= delta {
        (half * e * e, e)
    } else {
        (delta * (e.abs() - half * delta), delta * e.signum())
    }
}

/// Mean Huber value loss plus weighted mode cross-entropy, with gradients
/// when `grads` is given.
pub fn loss_with_targets<T: Scalar>(
    net: &QNetwork<T>,
    batch: &[&Transition<T>],
    targets: &[T],
    config: &LossConfig,
    mut grads: Option<&mut Grads<T>>,
) -> Result<T, AgentError> {
    let n = T::of_usize(batch.len().max(1));
    let lambda = T::of(config.mode_weight);
    let delta = T::of(config.huber_delta);
    let mut total = T::zero();
    for (i, (t, &y)) in batch.iter().zip(targets).enumerate() {
        let sf = net.state_forward(&t.obs);
        let af = net.action_forward(&t.obs, &sf, t.action);
        let (value_loss, dvalue) = huber(af.q - y, delta);

        let l = sf.logits;
        let max = l[0].max(l[1]);
        let lse = max + ((l[0] - max).exp() + (l[1] - max).exp()).ln();
        let label = t.mode.index();
        let ce = lse - l[label];
        let sample_loss = value_loss + lambda * ce;
        if !sample_loss.is_finite() {
            return Err(AgentError::NonFinite { sample: i, what: "loss" });
        }
        total = total + sample_loss;

        if let Some(g) = grads.as_deref_mut() {
            let mut dl = [(l[0] - lse).exp(), (l[1] - lse).exp()];
            dl[label] = dl[label] - T::one();
            let scale = lambda / n;
            net.backward(&t.obs, &sf, &af, dvalue / n, [dl[0] * scale, dl[1] * scale], g);
        }
    }
    Ok(total / n)
}

/// Training loss of `net` on `batch` with targets from `target_net`.
pub fn loss<T: Scalar>(
    net: &QNetwork<T>,
    target_net: &QNetwork<T>,
    batch: &[&Transition<T>],
    config: &LossConfig,
) -> Result<T, AgentError> {
    let targets = munchausen_targets(batch, target_net, &config.munchausen)?;
    loss_with_targets(net, batch, &targets, config, None)
}
