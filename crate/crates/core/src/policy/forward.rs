use super::{CommVariant, ObsBatch, Policy};
use crate::error::{Error, Result};
use crate::gradtape::{Scalar, Segments, Tape, Tensor, Var};

/// Forward values pulled off the tape.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput<T> {
    /// `rows×5` action logits.
    pub logits: Tensor<T>,
    /// One value estimate per agent row.
    pub values: Vec<T>,
    /// Inter-agent attention per hop, `(rows·heads)×agents` (row `r·heads + h`).
    pub attention: Vec<Tensor<T>>,
}

/// Tape handles of one forward pass.
#[derive(Clone, Debug)]
pub struct Recorded {
    pub logits: Var,
    /// `rows×1`
    pub values: Var,
    pub attention: Vec<Var>,
    /// Environment embedding `E` per agent, `rows×D`.
    pub entity_embedding: Var,
    /// Hidden state after every stage: joint encoding first, then each hop.
    pub hidden: Vec<Var>,
}

/// Tape handles needed by the PPO loss, each `rows×1`.
#[derive(Clone, Copy, Debug)]
pub struct Evaluated {
    pub log_probs: Var,
    pub entropy: Var,
    pub values: Var,
}

pub(super) fn entity_scale<T: Scalar>(attn_dim: usize) -> T {
    T::of(1.0 / (attn_dim as f64).sqrt())
}

pub(super) fn comm_scale<T: Scalar>(attn_dim: usize, heads: usize) -> T {
    T::of(1.0 / ((attn_dim / heads) as f64).sqrt())
}

impl<T: Scalar> Policy<T> {
    fn p(&self, tape: &mut Tape<T>, name: &str) -> Result<Var> {
        let id = self
            .params
            .id(name)
            .ok_or_else(|| Error::precondition("policy", format!("missing parameter {name}")))?;
        Ok(tape.param(&self.params, id))
    }

    fn dense(&self, tape: &mut Tape<T>, x: Var, name: &str, relu: bool) -> Result<Var> {
        let w = self.p(tape, &format!("{name}.weight"))?;
        let b = self.p(tape, &format!("{name}.bias"))?;
        let y = tape.affine(x, w, Some(b))?;
        if relu {
            tape.relu(y)
        } else {
            Ok(y)
        }
    }

    /// `U = ReLU(f_a(own))`, one row per agent.
    pub fn encode_agents(&self, tape: &mut Tape<T>, own: Var) -> Result<Var> {
        self.dense(tape, own, "agent_encoder", true)
    }

    /// Attention of each agent's `U_i` over its own landmark embeddings.
    ///
    /// `relative` holds `entities` rows per agent. With no landmarks the
    /// embedding is the zero vector.
    pub fn entity_embedding(&self, tape: &mut Tape<T>, u: Var, relative: Var, entities: usize) -> Result<Var> {
        if entities == 0 {
            let rows = tape.value(u).rows();
            return Ok(tape.constant(Tensor::zeros(&[rows, self.config.attn_dim])));
        }
        Ok(self.entity_attention(tape, u, relative, entities)?.0)
    }

    /// Embedding and attention weights (`rows×entities`) for `entities ≥ 1`.
    fn entity_attention(&self, tape: &mut Tape<T>, u: Var, relative: Var, entities: usize) -> Result<(Var, Var)> {
        let rows = tape.value(u).rows();
        let d = self.config.attn_dim;
        let e = self.dense(tape, relative, "entity_encoder", true)?;
        let wq = self.p(tape, "entity_attn.w_q")?;
        let wk = self.p(tape, "entity_attn.w_k")?;
        let wv = self.p(tape, "entity_attn.w_v")?;
        let q = tape.matmul(u, wq)?;
        let k = tape.matmul(e, wk)?;
        let v = tape.matmul(e, wv)?;
        let seg = Segments::new(1, entities);
        let logits = tape.seg_dot(q, k, seg, 1, entity_scale(d))?;
        let w = tape.masked_softmax(logits, vec![true; rows * entities])?;
        Ok((tape.seg_mix(w, v, seg, 1)?, w))
    }

    /// `h⁰ = ReLU(affine([U, E]))`.
    pub fn joint_encoding(&self, tape: &mut Tape<T>, u: Var, e: Var) -> Result<Var> {
        let x = tape.concat(&[u, e])?;
        self.dense(tape, x, "joint_encoder", true)
    }

    /// Masked, row-normalized inter-agent weights for hop `hop`.
    pub fn attention_weights(&self, tape: &mut Tape<T>, h: Var, batch: &ObsBatch<T>, hop: usize) -> Result<Var> {
        let m = batch.agents;
        let seg = Segments::new(m, m);
        let prefix = self.config.hop_prefix(hop);
        let heads = self.config.comm_heads();
        let logits = match self.config.comm_variant() {
            CommVariant::Mha { heads } => {
                let wq = self.p(tape, &format!("{prefix}.w_q"))?;
                let wk = self.p(tape, &format!("{prefix}.w_k"))?;
                let q = tape.matmul(h, wq)?;
                let k = tape.matmul(h, wk)?;
                tape.seg_dot(q, k, seg, heads, comm_scale(self.config.attn_dim, heads))?
            }
            CommVariant::Exp => {
                let wk = self.p(tape, &format!("{prefix}.w_k"))?;
                let k = tape.matmul(h, wk)?;
                tape.seg_neg_sq_dist(k, k, seg)?
            }
            CommVariant::Uniform => tape.constant(Tensor::filled(&[batch.rows(), m], T::one())),
        };
        let mut mask = Vec::with_capacity(batch.rows() * heads * m);
        for r in 0..batch.rows() {
            let (g, i) = (r / m, r % m);
            let row = &batch.mask(g)[i * m..(i + 1) * m];
            for _ in 0..heads {
                mask.extend_from_slice(row);
            }
        }
        tape.masked_softmax(logits, mask)
    }

    /// One round of message passing. Returns the new hidden state and the weights used.
    pub fn comm_hop(&self, tape: &mut Tape<T>, h: Var, batch: &ObsBatch<T>, hop: usize) -> Result<(Var, Var)> {
        let m = batch.agents;
        let prefix = self.config.hop_prefix(hop);
        let w = self.attention_weights(tape, h, batch, hop)?;
        let wv = self.p(tape, &format!("{prefix}.w_v"))?;
        let v = tape.matmul(h, wv)?;
        let mixed = tape.seg_mix(w, v, Segments::new(m, m), self.config.comm_heads())?;
        let wout = self.p(tape, &format!("{prefix}.w_out"))?;
        let msg = tape.matmul(mixed, wout)?;
        let x = tape.concat(&[h, msg])?;
        let next = self.dense(tape, x, &format!("{prefix}.update"), true)?;
        Ok((next, w))
    }

    /// Records the full network for every agent row of `batch`.
    pub fn record(&self, tape: &mut Tape<T>, batch: &ObsBatch<T>) -> Result<Recorded> {
        if batch.rows() == 0 {
            return Err(Error::shape("policy.forward", "empty batch"));
        }
        let own = tape.constant(batch.own.clone());
        let rel = tape.constant(batch.relative.clone());
        let u = self.encode_agents(tape, own)?;
        let e = self.entity_embedding(tape, u, rel, batch.entities)?;
        let mut h = self.joint_encoding(tape, u, e)?;
        let mut hidden = vec![h];
        let mut attention = Vec::with_capacity(self.config.hops);
        for c in 0..self.config.hops {
            let (next, w) = self.comm_hop(tape, h, batch, c)?;
            h = next;
            hidden.push(h);
            attention.push(w);
        }
        let vh = self.dense(tape, h, "value_head.hidden", true)?;
        let values = self.dense(tape, vh, "value_head.out", false)?;
        let ph = self.dense(tape, h, "policy_head.hidden", true)?;
        let logits = self.dense(tape, ph, "policy_head.out", false)?;
        Ok(Recorded {
            logits,
            values,
            attention,
            entity_embedding: e,
            hidden,
        })
    }

    pub fn forward(&self, batch: &ObsBatch<T>) -> Result<ForwardOutput<T>> {
        let mut tape = Tape::new();
        let rec = self.record(&mut tape, batch)?;
        Ok(ForwardOutput {
            logits: tape.value(rec.logits).clone(),
            values: tape.value(rec.values).data().to_vec(),
            attention: rec.attention.iter().map(|&a| tape.value(a).clone()).collect(),
        })
    }

    /// Log-probabilities of `actions`, policy entropy and values, all differentiable.
    pub fn evaluate_actions(&self, tape: &mut Tape<T>, batch: &ObsBatch<T>, actions: &[usize]) -> Result<Evaluated> {
        let rec = self.record(tape, batch)?;
        let logp = tape.log_softmax(rec.logits)?;
        let log_probs = tape.gather_cols(logp, actions)?;
        let probs = tape.exp(logp)?;
        let plogp = tape.mul(probs, logp)?;
        let neg = tape.row_sum(plogp)?;
        let entropy = tape.scale(neg, -T::one())?;
        Ok(Evaluated {
            log_probs,
            entropy,
            values: rec.values,
        })
    }
}
