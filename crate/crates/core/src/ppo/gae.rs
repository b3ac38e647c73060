use super::RolloutBuffer;

/// Advantages and value targets, indexed like the buffer's samples.
#[derive(Clone, Debug, PartialEq)]
pub struct GaeOutput {
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

/// GAE along one stream: `Â_t = δ_t + γλ(1 − done_t)Â_{t+1}` with
/// `δ_t = r_t + γ(1 − done_t)V(s_{t+1}) − V(s_t)`; `bootstrap` is `V(s_T)`.
pub fn gae_stream(rewards: &[f64], values: &[f64], dones: &[bool], bootstrap: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    assert!(values.len() == n && dones.len() == n, "stream lengths differ");
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = bootstrap;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * live * next_value - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    adv
}

/// Runs [`gae_stream`] for every `(environment, agent)` of the buffer.
pub fn compute_gae(buf: &RolloutBuffer, gamma: f64, lambda: f64) -> GaeOutput {
    let (t_len, n, m) = (buf.rollout_len, buf.n_envs, buf.agents);
    let mut advantages = vec![0.0; t_len * n * m];
    let mut rewards = vec![0.0; t_len];
    let mut values = vec![0.0; t_len];
    let mut dones = vec![false; t_len];
    for env in 0..n {
        for agent in 0..m {
            for t in 0..t_len {
                let g = t * n + env;
                rewards[t] = buf.rewards[g];
                dones[t] = buf.dones[g];
                values[t] = buf.values[g * m + agent];
            }
            let adv = gae_stream(&rewards, &values, &dones, buf.bootstrap[env * m + agent], gamma, lambda);
            for t in 0..t_len {
                advantages[(t * n + env) * m + agent] = adv[t];
            }
        }
    }
    let returns = advantages.iter().zip(&buf.values).map(|(a, v)| a + v).collect();
    GaeOutput { advantages, returns }
}
