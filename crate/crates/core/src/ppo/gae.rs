use serde::{Deserialize, Serialize};

/// One environment step as stored by the agent. Extends the plain
/// (s, a, r, s') tuple with what PPO needs: behaviour log-prob, value
/// estimate and the episode-end flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: [f64; 3],
    pub action: usize,
    pub reward: f64,
    pub next_obs: [f64; 3],
    pub log_prob: f64,
    pub value: f64,
    pub done: bool,
}

impl Transition {
    /// Scalars per stored transition.
    pub const DIM: usize = 3 + 1 + 1 + 3 + 1 + 1 + 1;
}

/// Generalized advantage estimates and value targets.
///
/// `V(s_{t+1})` is taken from the next transition's value estimate. After
/// the last transition it is `bootstrap_value`, ignored when that
/// transition is terminal.
pub fn compute_gae(trajectory: &[Transition], gamma: f64, lambda: f64, bootstrap_value: f64) -> (Vec<f64>, Vec<f64>) {
    let n = trajectory.len();
    let mut advantages = vec![0.0; n];
    let mut next_advantage = 0.0;
    for t in (0..n).rev() {
        let tr = &trajectory[t];
        let live = if tr.done { 0.0 } else { 1.0 };
        let next_value = trajectory.get(t + 1).map_or(bootstrap_value, |next| next.value);
        let delta = tr.reward + gamma * next_value * live - tr.value;
        next_advantage = delta + gamma * lambda * live * next_advantage;
        advantages[t] = next_advantage;
    }
    let returns = advantages
        .iter()
        .zip(trajectory)
        .map(|(a, tr)| a + tr.value)
        .collect();
    (advantages, returns)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(rewards: &[f64], values: &[f64]) -> Vec<Transition> {
        rewards
            .iter()
            .zip(values)
            .enumerate()
            .map(|(i, (&r, &v))| Transition {
                obs: [0.0; 3],
                action: 0,
                reward: r,
                next_obs: [0.0; 3],
                log_prob: -1.0,
                value: v,
                done: i + 1 == rewards.len(),
            })
            .collect()
    }

    #[test]
    fn lambda_zero_is_td_error() {
        let t = traj(&[1.0, -2.0, 3.0, 0.5], &[0.3, 0.1, -0.4, 2.0]);
        let (adv, _) = compute_gae(&t, 0.9, 0.0, 0.0);
        for i in 0..4 {
            let next = if i < 3 { t[i + 1].value } else { 0.0 };
            assert_eq!(adv[i], t[i].reward + 0.9 * next - t[i].value);
        }
    }

    #[test]
    fn gamma_zero_is_reward_minus_value() {
        let t = traj(&[1.0, -2.0, 3.0], &[0.3, 0.1, -0.4]);
        let (adv, _) = compute_gae(&t, 0.0, 0.95, 0.0);
        for i in 0..3 {
            assert_eq!(adv[i], t[i].reward - t[i].value);
        }
    }

    #[test]
    fn single_step_zero_value() {
        let t = traj(&[4.5], &[0.0]);
        let (adv, ret) = compute_gae(&t, 0.99, 0.95, 0.0);
        assert_eq!(adv, vec![4.5]);
        assert_eq!(ret, vec![4.5]);
    }

    #[test]
    fn lambda_one_telescopes_to_monte_carlo() {
        let rewards = [1.0, 0.5, -3.0, 2.0, 7.0, -1.0];
        let values = [0.2, -0.7, 1.1, 0.0, 3.3, -2.0];
        let gamma = 0.97;
        let t = traj(&rewards, &values);
        let (_, ret) = compute_gae(&t, gamma, 1.0, 0.0);
        for i in 0..rewards.len() {
            let mc: f64 = rewards[i..]
                .iter()
                .enumerate()
                .map(|(k, r)| gamma.powi(k as i32) * r)
                .sum();
            assert!((ret[i] - mc).abs() < 1e-12);
        }
    }

    #[test]
    fn episode_boundaries_stop_propagation() {
        let mut t = traj(&[1.0, 1.0, 1.0, 1.0], &[0.0; 4]);
        t[1].done = true;
        let (adv, _) = compute_gae(&t, 1.0, 1.0, 0.0);
        assert_eq!(adv, vec![2.0, 1.0, 2.0, 1.0]);
    }
}
