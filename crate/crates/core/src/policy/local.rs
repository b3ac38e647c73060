//! Per-agent execution.
//!
//! Each [`AgentNode`] holds only its own observation and hidden state. During
//! a hop it publishes a [`Message`] (its key and value) and then updates from
//! the messages of the agents its mask row lets it hear. Nothing else crosses
//! agent boundaries, which makes the policy executable on separate robots.
//! The arithmetic goes through the same row kernels as the batched tape, so
//! both paths agree bit for bit.

use super::forward::{comm_scale, entity_scale};
use super::{CommVariant, ForwardOutput, Policy, ENTITY_DIM, OWN_DIM};
use crate::comm::AdjacencyMask;
use crate::env::Observation;
use crate::error::{Error, Result};
use crate::gradtape::kernels;
use crate::gradtape::{Scalar, Tensor};

/// What one agent broadcasts in a hop.
#[derive(Clone, Debug, PartialEq)]
pub struct Message<T> {
    /// Width `D` (multi-head), 1 (exponential kernel) or empty (uniform).
    pub key: Vec<T>,
    pub value: Vec<T>,
}

pub struct AgentNode<'a, T: Scalar> {
    policy: &'a Policy<T>,
    hidden: Vec<T>,
    query: Vec<T>,
    key: Vec<T>,
}

fn weight<'p, T: Scalar>(policy: &'p Policy<T>, name: &str) -> Result<&'p Tensor<T>> {
    policy
        .params
        .by_name(name)
        .map(|p| &p.value)
        .ok_or_else(|| Error::precondition("local policy", format!("missing parameter {name}")))
}

/// `rows` input rows times `W (in×out)`.
fn project<T: Scalar>(x: &[T], rows: usize, w: &Tensor<T>) -> Vec<T> {
    let (i, o) = (w.shape()[0], w.shape()[1]);
    let mut out = vec![T::zero(); rows * o];
    kernels::matmul(x, w.data(), &mut out, rows, i, o);
    out
}

fn dense<T: Scalar>(policy: &Policy<T>, x: &[T], rows: usize, name: &str, relu: bool) -> Result<Vec<T>> {
    let mut out = project(x, rows, weight(policy, &format!("{name}.weight"))?);
    kernels::add_bias(&mut out, weight(policy, &format!("{name}.bias"))?.data());
    if relu {
        kernels::relu_inplace(&mut out);
    }
    Ok(out)
}

impl<'a, T: Scalar> AgentNode<'a, T> {
    /// Encodes the agent's own observation into its initial hidden state.
    pub fn new(policy: &'a Policy<T>, obs: &Observation) -> Result<Self> {
        let own: Vec<T> = obs.own.iter().map(|&v| T::of(v)).collect();
        debug_assert_eq!(own.len(), OWN_DIM);
        let u = dense(policy, &own, 1, "agent_encoder", true)?;
        let d = policy.config.attn_dim;
        let l = obs.relative.len();
        let mut env = vec![T::zero(); d];
        if l > 0 {
            let rel: Vec<T> = obs.relative.iter().flatten().map(|&v| T::of(v)).collect();
            debug_assert_eq!(rel.len(), l * ENTITY_DIM);
            let e = dense(policy, &rel, l, "entity_encoder", true)?;
            let q = project(&u, 1, weight(policy, "entity_attn.w_q")?);
            let k = project(&e, l, weight(policy, "entity_attn.w_k")?);
            let v = project(&e, l, weight(policy, "entity_attn.w_v")?);
            let scale: T = entity_scale(d);
            let logits: Vec<T> = (0..l).map(|j| kernels::dot(&q, &k[j * d..(j + 1) * d]) * scale).collect();
            let mut w = vec![T::zero(); l];
            kernels::masked_softmax_row(&logits, &vec![true; l], &mut w);
            kernels::mix_into(&w, v.chunks(d), &mut env);
        }
        let joint: Vec<T> = u.into_iter().chain(env).collect();
        let hidden = dense(policy, &joint, 1, "joint_encoder", true)?;
        Ok(Self {
            policy,
            hidden,
            query: Vec::new(),
            key: Vec::new(),
        })
    }

    pub fn hidden(&self) -> &[T] {
        &self.hidden
    }

    /// Computes this hop's query privately and returns the key/value broadcast.
    pub fn publish(&mut self, hop: usize) -> Result<Message<T>> {
        let prefix = self.policy.config.hop_prefix(hop);
        let (query, key) = match self.policy.config.comm_variant() {
            CommVariant::Mha { .. } => (
                project(&self.hidden, 1, weight(self.policy, &format!("{prefix}.w_q"))?),
                project(&self.hidden, 1, weight(self.policy, &format!("{prefix}.w_k"))?),
            ),
            CommVariant::Exp => (
                Vec::new(),
                project(&self.hidden, 1, weight(self.policy, &format!("{prefix}.w_k"))?),
            ),
            CommVariant::Uniform => (Vec::new(), Vec::new()),
        };
        let value = project(&self.hidden, 1, weight(self.policy, &format!("{prefix}.w_v"))?);
        self.query = query;
        self.key = key.clone();
        Ok(Message { key, value })
    }

    /// Aggregates the messages it can hear (`None` where the mask is false;
    /// its own message included) and updates the hidden state. Returns the
    /// attention weights, one row per head.
    pub fn receive(&mut self, hop: usize, inbox: &[Option<&Message<T>>]) -> Result<Vec<Vec<T>>> {
        let cfg = &self.policy.config;
        let m = inbox.len();
        let d = cfg.attn_dim;
        let heads = cfg.comm_heads();
        let hd = d / heads;
        let mask: Vec<bool> = inbox.iter().map(Option::is_some).collect();
        let zeros = vec![T::zero(); d];
        let mut mixed = vec![T::zero(); d];
        let mut all_weights = Vec::with_capacity(heads);
        for h in 0..heads {
            let logits: Vec<T> = inbox
                .iter()
                .map(|msg| match (msg, cfg.comm_variant()) {
                    (None, _) => T::zero(),
                    (Some(msg), CommVariant::Mha { heads }) => {
                        kernels::dot(&self.query[h * hd..(h + 1) * hd], &msg.key[h * hd..(h + 1) * hd])
                            * comm_scale::<T>(d, heads)
                    }
                    (Some(msg), CommVariant::Exp) => kernels::neg_sq_dist(&self.key, &msg.key),
                    (Some(_), CommVariant::Uniform) => T::one(),
                })
                .collect();
            let mut w = vec![T::zero(); m];
            if !kernels::masked_softmax_row(&logits, &mask, &mut w) {
                return Err(Error::precondition("local policy", "agent hears no messages"));
            }
            let values = inbox
                .iter()
                .map(|msg| msg.map_or(&zeros[h * hd..(h + 1) * hd], |msg| &msg.value[h * hd..(h + 1) * hd]));
            kernels::mix_into(&w, values, &mut mixed[h * hd..(h + 1) * hd]);
            all_weights.push(w);
        }
        let prefix = cfg.hop_prefix(hop);
        let msg = project(&mixed, 1, weight(self.policy, &format!("{prefix}.w_out"))?);
        let x: Vec<T> = self.hidden.iter().copied().chain(msg).collect();
        self.hidden = dense(self.policy, &x, 1, &format!("{prefix}.update"), true)?;
        Ok(all_weights)
    }

    /// Action logits and value from the current hidden state.
    pub fn heads(&self) -> Result<(Vec<T>, T)> {
        let vh = dense(self.policy, &self.hidden, 1, "value_head.hidden", true)?;
        let value = dense(self.policy, &vh, 1, "value_head.out", false)?[0];
        let ph = dense(self.policy, &self.hidden, 1, "policy_head.hidden", true)?;
        let logits = dense(self.policy, &ph, 1, "policy_head.out", false)?;
        Ok((logits, value))
    }
}

/// Runs one team through per-agent nodes exchanging messages along `mask`.
pub fn decentralized_forward<T: Scalar>(
    policy: &Policy<T>,
    observations: &[Observation],
    mask: &AdjacencyMask,
) -> Result<ForwardOutput<T>> {
    let m = observations.len();
    if mask.num_agents() != m {
        return Err(Error::shape("decentralized_forward", "mask size differs from team size"));
    }
    let mut nodes = observations
        .iter()
        .map(|o| AgentNode::new(policy, o))
        .collect::<Result<Vec<_>>>()?;
    let heads = policy.config.comm_heads();
    let mut attention = Vec::with_capacity(policy.config.hops);
    for hop in 0..policy.config.hops {
        let messages = nodes.iter_mut().map(|n| n.publish(hop)).collect::<Result<Vec<_>>>()?;
        let mut w = Vec::with_capacity(m * heads * m);
        for (i, node) in nodes.iter_mut().enumerate() {
            let inbox: Vec<Option<&Message<T>>> = (0..m)
                .map(|j| mask.get(i, j).then_some(&messages[j]))
                .collect();
            for row in node.receive(hop, &inbox)? {
                w.extend(row);
            }
        }
        attention.push(Tensor::from_vec(&[m * heads, m], w)?);
    }
    let mut logits = Vec::with_capacity(m * 5);
    let mut values = Vec::with_capacity(m);
    for node in &nodes {
        let (l, v) = node.heads()?;
        logits.extend(l);
        values.push(v);
    }
    let cols = logits.len() / m.max(1);
    Ok(ForwardOutput {
        logits: Tensor::from_vec(&[m, cols], logits)?,
        values,
        attention,
    })
}
