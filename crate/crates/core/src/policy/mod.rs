//! The shared agent network.
//!
//! Every agent runs the same parameters: an own-state encoder, attention over
//! its relative landmark observations (a fixed-size environment embedding for
//! any number of landmarks), a joint encoder, `C` hops of masked inter-agent
//! attention with a state update, and policy/value heads. No parameter shape
//! depends on the number of agents or landmarks.

mod actions;
mod batch;
mod forward;
pub mod local;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use actions::{greedy_actions, sample_actions};
pub use batch::ObsBatch;
pub use forward::{Evaluated, ForwardOutput, Recorded};

use crate::env::Action;
use crate::error::{Error, Result};
use crate::gradtape::{orthogonal_init, ParamSet, Scalar, Tensor};

/// Width of the own-state observation `[x, y, vx, vy]`.
pub const OWN_DIM: usize = 4;
/// Width of one relative landmark observation.
pub const ENTITY_DIM: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantKind {
    Mha,
    Exp,
    Uniform,
}

/// How agents weight the messages of their neighbours.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CommVariant {
    /// Scaled dot-product attention split over `heads`.
    Mha { heads: usize },
    /// Logits `−(k_m − k_n)²` with one scalar key per agent.
    Exp,
    /// Equal weight on every connected neighbour.
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    /// Embedding width `H`.
    pub hidden: usize,
    /// Query/key/value width `D`.
    pub attn_dim: usize,
    /// Number of communication hops `C`.
    pub hops: usize,
    pub variant: VariantKind,
    /// Head count for the multi-head variant; must divide `attn_dim`.
    pub heads: usize,
    /// Share one parameter set across all hops.
    pub tie_hops: bool,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            attn_dim: 128,
            hops: 3,
            variant: VariantKind::Mha,
            heads: 4,
            tie_hops: false,
        }
    }
}

impl PolicyConfig {
    pub fn comm_variant(&self) -> CommVariant {
        match self.variant {
            VariantKind::Mha => CommVariant::Mha { heads: self.heads },
            VariantKind::Exp => CommVariant::Exp,
            VariantKind::Uniform => CommVariant::Uniform,
        }
    }

    /// Heads used by the inter-agent attention (1 unless multi-head).
    pub fn comm_heads(&self) -> usize {
        match self.comm_variant() {
            CommVariant::Mha { heads } => heads,
            _ => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.attn_dim == 0 {
            return Err(Error::Config("hidden and attn_dim must be positive".into()));
        }
        if self.variant == VariantKind::Mha && (self.heads == 0 || self.attn_dim % self.heads != 0) {
            return Err(Error::Config(format!(
                "heads ({}) must divide attn_dim ({})",
                self.heads, self.attn_dim
            )));
        }
        Ok(())
    }

    fn hop_prefix(&self, hop: usize) -> String {
        let c = if self.tie_hops { 0 } else { hop };
        format!("comm.hop{c}")
    }

    /// Every parameter name and shape, in a fixed order. Weights are stored
    /// `in×out`; biases are vectors.
    pub fn param_layout(&self) -> Vec<(String, Vec<usize>)> {
        let (h, d) = (self.hidden, self.attn_dim);
        let mut out: Vec<(String, Vec<usize>)> = Vec::new();
        let dense = |out: &mut Vec<(String, Vec<usize>)>, name: &str, i: usize, o: usize| {
            out.push((format!("{name}.weight"), vec![i, o]));
            out.push((format!("{name}.bias"), vec![o]));
        };
        dense(&mut out, "agent_encoder", OWN_DIM, h);
        dense(&mut out, "entity_encoder", ENTITY_DIM, h);
        for m in ["w_q", "w_k", "w_v"] {
            out.push((format!("entity_attn.{m}"), vec![h, d]));
        }
        dense(&mut out, "joint_encoder", h + d, h);
        let distinct = if self.tie_hops { self.hops.min(1) } else { self.hops };
        for c in 0..distinct {
            let p = self.hop_prefix(c);
            match self.comm_variant() {
                CommVariant::Mha { .. } => {
                    out.push((format!("{p}.w_q"), vec![h, d]));
                    out.push((format!("{p}.w_k"), vec![h, d]));
                }
                CommVariant::Exp => out.push((format!("{p}.w_k"), vec![h, 1])),
                CommVariant::Uniform => {}
            }
            out.push((format!("{p}.w_v"), vec![h, d]));
            out.push((format!("{p}.w_out"), vec![d, h]));
            dense(&mut out, &format!("{p}.update"), 2 * h, h);
        }
        dense(&mut out, "value_head.hidden", h, h);
        dense(&mut out, "value_head.out", h, 1);
        dense(&mut out, "policy_head.hidden", h, h);
        dense(&mut out, "policy_head.out", h, Action::COUNT);
        out
    }
}

/// Human-readable differences between a parameter set and a layout; empty if they agree.
pub fn layout_diff<T: Scalar>(layout: &[(String, Vec<usize>)], params: &ParamSet<T>) -> Vec<String> {
    let mut diff = Vec::new();
    for (name, shape) in layout {
        match params.by_name(name) {
            None => diff.push(format!("missing tensor {name} {shape:?}")),
            Some(p) if p.value.shape() != shape.as_slice() => diff.push(format!(
                "tensor {name}: expected {shape:?}, found {:?}",
                p.value.shape()
            )),
            Some(_) => {}
        }
    }
    for p in params.iter() {
        if !layout.iter().any(|(n, _)| *n == p.name) {
            diff.push(format!("unexpected tensor {} {:?}", p.name, p.value.shape()));
        }
    }
    diff
}

/// Configuration plus one shared parameter set.
#[derive(Clone, Debug)]
pub struct Policy<T: Scalar = f32> {
    pub config: PolicyConfig,
    pub params: ParamSet<T>,
}

impl<T: Scalar> Policy<T> {
    /// Orthogonal weights (unit gain) and zero biases.
    pub fn new<R: Rng + ?Sized>(config: PolicyConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        for (name, shape) in config.param_layout() {
            let value = if shape.len() == 2 {
                orthogonal_init(shape[0], shape[1], rng)
            } else {
                Tensor::zeros(&shape)
            };
            params.insert(name, value)?;
        }
        Ok(Self { config, params })
    }

    /// Wraps existing parameters, rejecting any layout mismatch.
    pub fn from_params(config: PolicyConfig, params: ParamSet<T>) -> Result<Self> {
        config.validate()?;
        let diff = layout_diff(&config.param_layout(), &params);
        if !diff.is_empty() {
            return Err(Error::precondition("policy", diff.join("; ")));
        }
        Ok(Self { config, params })
    }

    pub fn cast<U: Scalar>(&self) -> Policy<U> {
        Policy {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn layout_is_count_free_and_complete() {
        let cfg = PolicyConfig::default();
        let p: Policy = Policy::new(cfg.clone(), &mut rng::stream(0, "init", 0)).unwrap();
        assert_eq!(p.params.len(), cfg.param_layout().len());
        assert_eq!(p.params.by_name("joint_encoder.weight").unwrap().value.shape(), &[256, 128]);
        assert_eq!(p.params.by_name("comm.hop2.update.weight").unwrap().value.shape(), &[256, 128]);
        assert_eq!(p.params.by_name("policy_head.out.weight").unwrap().value.shape(), &[128, 5]);
        assert!(p.params.by_name("value_head.out.bias").unwrap().value.data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn variants_differ_in_comm_tensors() {
        let exp = PolicyConfig {
            variant: VariantKind::Exp,
            ..PolicyConfig::default()
        };
        let names: Vec<String> = exp.param_layout().into_iter().map(|(n, _)| n).collect();
        assert!(names.contains(&"comm.hop0.w_k".to_string()));
        assert!(!names.contains(&"comm.hop0.w_q".to_string()));
        let uni = PolicyConfig {
            variant: VariantKind::Uniform,
            ..PolicyConfig::default()
        };
        assert!(!uni.param_layout().iter().any(|(n, _)| n.ends_with("w_k") && n.starts_with("comm")));

        let mha = PolicyConfig::default().param_layout();
        let exp_params: ParamSet<f32> = Policy::new(exp.clone(), &mut rng::stream(0, "init", 0)).unwrap().params;
        let diff = layout_diff(&mha, &exp_params);
        assert!(diff.iter().any(|d| d.contains("comm.hop0.w_q")));
        assert!(diff.iter().any(|d| d.contains("comm.hop0.w_k")));
    }

    #[test]
    fn tied_hops_share_one_set() {
        let cfg = PolicyConfig {
            tie_hops: true,
            ..PolicyConfig::default()
        };
        let layout = cfg.param_layout();
        assert!(layout.iter().any(|(n, _)| n == "comm.hop0.w_v"));
        assert!(!layout.iter().any(|(n, _)| n.starts_with("comm.hop1")));
    }

    #[test]
    fn heads_must_divide_width() {
        let cfg = PolicyConfig {
            heads: 3,
            ..PolicyConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
