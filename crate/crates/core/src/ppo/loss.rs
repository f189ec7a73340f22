//! Composite PPO loss and its exact reverse-mode gradient.

use super::net::{log_softmax, LayerSlot, PolicyNetwork};

/// One training sample of a minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub obs: Vec<f64>,
    pub action: usize,
    pub old_log_prob: f64,
    pub advantage: f64,
    pub target_return: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossCoefficients {
    pub clip_epsilon: f64,
    pub value_loss_coeff: f64,
    pub entropy_coeff: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    /// Clipped surrogate, negated.
    pub policy: f64,
    /// Mean squared value error.
    pub value: f64,
    /// Mean policy entropy.
    pub entropy: f64,
    pub total: f64,
}

struct SampleTerms {
    log_probs: Vec<f64>,
    ratio: f64,
    surrogate: f64,
    /// Whether the unclipped branch carries gradient.
    gradient_flows: bool,
    entropy: f64,
}

fn sample_terms(logits: &[f64], s: &Sample, eps: f64) -> SampleTerms {
    let log_probs = log_softmax(logits);
    let ratio = (log_probs[s.action] - s.old_log_prob).exp();
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
    let unclipped_obj = ratio * s.advantage;
    let clipped_obj = clipped * s.advantage;
    let inside = ratio > 1.0 - eps && ratio < 1.0 + eps;
    let entropy = -log_probs.iter().map(|lp| lp.exp() * lp).sum::<f64>();
    SampleTerms {
        ratio,
        surrogate: unclipped_obj.min(clipped_obj),
        gradient_flows: inside || unclipped_obj < clipped_obj,
        entropy,
        log_probs,
    }
}

/// Loss of `net` on `batch` using only forward passes.
pub fn ppo_loss(net: &PolicyNetwork, batch: &[Sample], c: &LossCoefficients) -> LossBreakdown {
    let n = batch.len() as f64;
    let mut out = LossBreakdown::default();
    for s in batch {
        let (logits, value) = net.forward(&s.obs);
        let t = sample_terms(&logits, s, c.clip_epsilon);
        out.policy -= t.surrogate / n;
        out.value += (value - s.target_return).powi(2) / n;
        out.entropy += t.entropy / n;
    }
    out.total = out.policy + c.value_loss_coeff * out.value - c.entropy_coeff * out.entropy;
    out
}

/// Loss, gradient with respect to every parameter, and the number of
/// multiply-accumulates spent.
pub fn ppo_loss_and_gradient(
    net: &PolicyNetwork,
    batch: &[Sample],
    c: &LossCoefficients,
) -> (LossBreakdown, Vec<f64>, u64) {
    let n = batch.len() as f64;
    let mut grad = vec![0.0; net.params.len()];
    let mut out = LossBreakdown::default();
    let mut macs = 0u64;
    let layout = net.layout().clone();
    let params = &net.params;

    for s in batch {
        let cache = net.forward_cached(&s.obs);
        macs += net.shape().forward_macs();
        let t = sample_terms(&cache.logits, s, c.clip_epsilon);
        out.policy -= t.surrogate / n;
        out.value += (cache.value - s.target_return).powi(2) / n;
        out.entropy += t.entropy / n;

        // dL/dlogits
        let probs: Vec<f64> = t.log_probs.iter().map(|lp| lp.exp()).collect();
        let mut g_logits = vec![0.0; probs.len()];
        if t.gradient_flows && s.advantage != 0.0 {
            let scale = -s.advantage * t.ratio / n;
            for (k, g) in g_logits.iter_mut().enumerate() {
                let onehot = if k == s.action { 1.0 } else { 0.0 };
                *g += scale * (onehot - probs[k]);
            }
        }
        if c.entropy_coeff != 0.0 {
            for (k, g) in g_logits.iter_mut().enumerate() {
                // dH/dz_k = -p_k (log p_k + H)
                let dh = -probs[k] * (t.log_probs[k] + t.entropy);
                *g -= c.entropy_coeff * dh / n;
            }
        }
        let g_value = [c.value_loss_coeff * 2.0 * (cache.value - s.target_return) / n];

        let top = cache.activations.last().expect("trunk output");
        let mut g_top = vec![0.0; top.len()];
        macs += backprop_dense(params, &mut grad, &layout.policy, top, &g_logits, Some(&mut g_top));
        macs += backprop_dense(params, &mut grad, &layout.value, top, &g_value, Some(&mut g_top));

        let mut g_out = g_top;
        for (k, slot) in layout.trunk.iter().enumerate().rev() {
            let output = &cache.activations[k + 1];
            let g_pre: Vec<f64> = g_out
                .iter()
                .zip(output)
                .map(|(g, h)| g * (1.0 - h * h))
                .collect();
            let input = &cache.activations[k];
            if k == 0 {
                macs += backprop_dense(params, &mut grad, slot, input, &g_pre, None);
                break;
            }
            let mut g_in = vec![0.0; input.len()];
            macs += backprop_dense(params, &mut grad, slot, input, &g_pre, Some(&mut g_in));
            g_out = g_in;
        }
    }
    out.total = out.policy + c.value_loss_coeff * out.value - c.entropy_coeff * out.entropy;
    (out, grad, macs)
}

/// Accumulates weight/bias gradients of one dense layer and, optionally,
/// the gradient with respect to its input. Returns MACs performed.
fn backprop_dense(
    params: &[f64],
    grad: &mut [f64],
    slot: &LayerSlot,
    input: &[f64],
    g_out: &[f64],
    g_in: Option<&mut Vec<f64>>,
) -> u64 {
    let w_range = slot.weights();
    let b_range = slot.biases();
    {
        let gw = &mut grad[w_range.clone()];
        for (o, &g) in g_out.iter().enumerate() {
            let row = &mut gw[o * slot.inputs..(o + 1) * slot.inputs];
            for (gwi, xi) in row.iter_mut().zip(input) {
                *gwi += g * xi;
            }
        }
    }
    for (gb, &g) in grad[b_range].iter_mut().zip(g_out) {
        *gb += g;
    }
    let mut macs = (slot.inputs * slot.outputs) as u64;
    if let Some(g_in) = g_in {
        let w = &params[w_range];
        for (o, &g) in g_out.iter().enumerate() {
            let row = &w[o * slot.inputs..(o + 1) * slot.inputs];
            for (gi, wi) in g_in.iter_mut().zip(row) {
                *gi += g * wi;
            }
        }
        macs += (slot.inputs * slot.outputs) as u64;
    }
    macs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ppo::net::MlpShape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn coeffs(eps: f64) -> LossCoefficients {
        LossCoefficients {
            clip_epsilon: eps,
            value_loss_coeff: 0.5,
            entropy_coeff: 0.01,
        }
    }

    fn small_net(seed: u64) -> PolicyNetwork {
        PolicyNetwork::init(
            MlpShape {
                width: 8,
                ..Default::default()
            },
            seed,
        )
    }

    fn batch_at_current_policy(net: &PolicyNetwork, rng: &mut ChaCha8Rng, n: usize) -> Vec<Sample> {
        (0..n)
            .map(|_| {
                let obs: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let action = rng.gen_range(0..6);
                let (logits, value) = net.forward(&obs);
                Sample {
                    old_log_prob: log_softmax(&logits)[action],
                    obs,
                    action,
                    advantage: rng.gen_range(-2.0..2.0),
                    target_return: value,
                }
            })
            .collect()
    }

    #[test]
    fn unit_ratio_makes_clip_inactive() {
        let net = small_net(1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let batch = batch_at_current_policy(&net, &mut rng, 16);
        let loss = ppo_loss(&net, &batch, &coeffs(0.2));
        let plain: f64 = -batch.iter().map(|s| s.advantage).sum::<f64>() / 16.0;
        assert!((loss.policy - plain).abs() < 1e-12);
        let (with_grad, _, _) = ppo_loss_and_gradient(&net, &batch, &coeffs(0.2));
        assert!((with_grad.total - loss.total).abs() < 1e-12);
    }

    #[test]
    fn value_at_target_gives_zero_value_head_gradient() {
        let net = small_net(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let batch = batch_at_current_policy(&net, &mut rng, 8);
        let (_, grad, _) = ppo_loss_and_gradient(&net, &batch, &coeffs(0.2));
        let slot = net.layout().value;
        assert!(grad[slot.offset..slot.biases().end].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn zero_advantages_leave_only_entropy_gradient() {
        let net = small_net(5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut batch = batch_at_current_policy(&net, &mut rng, 8);
        batch.iter_mut().for_each(|s| s.advantage = 0.0);
        let c = LossCoefficients {
            entropy_coeff: 0.0,
            ..coeffs(0.2)
        };
        let (loss, grad, _) = ppo_loss_and_gradient(&net, &batch, &c);
        assert_eq!(loss.policy, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn zero_epsilon_kills_policy_gradient() {
        let net = small_net(7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let batch = batch_at_current_policy(&net, &mut rng, 8);
        let c = LossCoefficients {
            clip_epsilon: 0.0,
            value_loss_coeff: 0.0,
            entropy_coeff: 0.0,
        };
        let (loss, grad, _) = ppo_loss_and_gradient(&net, &batch, &c);
        let plain: f64 = -batch.iter().map(|s| s.advantage).sum::<f64>() / 8.0;
        assert!((loss.policy - plain).abs() < 1e-12);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn gradient_is_deterministic() {
        let net = small_net(9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let batch = batch_at_current_policy(&net, &mut rng, 8);
        let a = ppo_loss_and_gradient(&net, &batch, &coeffs(0.2));
        let b = ppo_loss_and_gradient(&net, &batch, &coeffs(0.2));
        assert_eq!(a.1, b.1);
        assert_eq!(a.2, b.2);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = small_net(12);
        let mut batch = batch_at_current_policy(&net, &mut rng, 6);
        // Move old log-probs away from the clip boundaries so the ratio sits
        // strictly inside or outside the trust region.
        for (i, s) in batch.iter_mut().enumerate() {
            s.old_log_prob += [0.0, 0.5, -0.5, 0.1, -0.1, 0.7][i];
            s.target_return += 0.3;
        }
        let c = coeffs(0.2);
        let (_, grad, _) = ppo_loss_and_gradient(&net, &batch, &c);
        let h = 1e-5;
        for i in 0..net.params.len() {
            let mut plus = net.clone();
            plus.params[i] += h;
            let mut minus = net.clone();
            minus.params[i] -= h;
            let numeric = (ppo_loss(&plus, &batch, &c).total - ppo_loss(&minus, &batch, &c).total) / (2.0 * h);
            let denom = grad[i].abs().max(numeric.abs()).max(1e-6);
            assert!((grad[i] - numeric).abs() / denom < 1e-4, "param {i}: {} vs {numeric}", grad[i]);
        }
    }
}
