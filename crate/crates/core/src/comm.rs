//! Agent-agent communication graph: radius-restricted or full connectivity,
//! plus the periodically resampled edge-dropout schedule.
//!
//! Entity→agent edges always exist and are not represented here; the mask
//! only governs inter-agent attention.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::env::{distance, Point};
use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// Symmetric boolean connectivity with a true diagonal.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AdjacencyMask {
    agents: usize,
    connected: Vec<bool>,
}

impl AdjacencyMask {
    pub fn full(agents: usize) -> Self {
        Self {
            agents,
            connected: vec![true; agents * agents],
        }
    }

    /// Diagonal-only mask: every agent hears only itself.
    pub fn isolated(agents: usize) -> Self {
        let mut m = Self {
            agents,
            connected: vec![false; agents * agents],
        };
        for i in 0..agents {
            m.connected[i * agents + i] = true;
        }
        m
    }

    /// Builds a mask from undirected edges on top of the self-edges.
    pub fn from_edges(agents: usize, edges: &[(usize, usize)]) -> Self {
        let mut m = Self::isolated(agents);
        for &(i, j) in edges {
            m.set(i, j, true);
        }
        m
    }

    pub fn num_agents(&self) -> usize {
        self.agents
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.connected[i * self.agents + j]
    }

    /// Sets the undirected pair; the diagonal cannot be cleared.
    pub fn set(&mut self, i: usize, j: usize, on: bool) {
        if i == j {
            return;
        }
        self.connected[i * self.agents + j] = on;
        self.connected[j * self.agents + i] = on;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.connected
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.connected[i * self.agents..(i + 1) * self.agents]
    }

    /// Connected undirected off-diagonal pairs `(i, j)` with `i < j`, in row order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.agents {
            for j in i + 1..self.agents {
                if self.get(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.agents).all(|i| (0..self.agents).all(|j| self.get(i, j) == self.get(j, i)))
    }

    pub fn has_self_edges(&self) -> bool {
        (0..self.agents).all(|i| self.get(i, i))
    }

    /// Same mask with agents relabelled: new agent `k` is old agent `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.agents;
        let mut out = Self::isolated(n);
        for a in 0..n {
            for b in 0..n {
                out.connected[a * n + b] = self.get(perm[a], perm[b]);
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum CommMode {
    Unrestricted,
    /// Agents within `radius` (inclusive) can talk.
    Restricted { radius: f64 },
}

/// Communication settings of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommConfig {
    /// Restrict agent-agent edges to this distance; absent means fully connected.
    pub radius: Option<f64>,
    pub dropout: bool,
    pub dropout_fraction: f64,
    pub dropout_period: usize,
    /// Also drop edges while evaluating (robustness runs).
    pub dropout_at_eval: bool,
}

impl Default for CommConfig {
    fn default() -> Self {
        Self {
            radius: None,
            dropout: false,
            dropout_fraction: 0.5,
            dropout_period: 10,
            dropout_at_eval: false,
        }
    }
}

impl CommConfig {
    pub fn mode(&self) -> CommMode {
        match self.radius {
            Some(radius) => CommMode::Restricted { radius },
            None => CommMode::Unrestricted,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(r) = self.radius {
            if !(r > 0.0) {
                return Err(Error::Config(format!("comm.radius must be positive, got {r}")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_fraction) {
            return Err(Error::Config("comm.dropout_fraction must lie in [0, 1)".into()));
        }
        if self.dropout_period == 0 {
            return Err(Error::Config("comm.dropout_period must be positive".into()));
        }
        Ok(())
    }

    /// Dropout schedule for one environment when dropout applies, else `None`.
    pub fn schedule(&self, training: bool, rng: StreamRng) -> Option<DropoutSchedule> {
        let on = self.dropout && (training || self.dropout_at_eval);
        on.then(|| DropoutSchedule::new(self.dropout_fraction, self.dropout_period, rng))
    }
}

/// Mask of one team at episode step `step`, with optional dropout.
pub fn team_mask(
    positions: &[Point],
    mode: CommMode,
    dropout: Option<&mut DropoutSchedule>,
    step: usize,
) -> AdjacencyMask {
    let mask = build_adjacency(positions, mode);
    match dropout {
        Some(s) => s.apply(&mask, step),
        None => mask,
    }
}

pub fn build_adjacency(positions: &[Point], mode: CommMode) -> AdjacencyMask {
    let n = positions.len();
    match mode {
        CommMode::Unrestricted => AdjacencyMask::full(n),
        CommMode::Restricted { radius } => {
            let mut m = AdjacencyMask::isolated(n);
            for i in 0..n {
                for j in i + 1..n {
                    if distance(positions[i], positions[j]) <= radius {
                        m.set(i, j, true);
                    }
                }
            }
            m
        }
    }
}

/// Drops a fixed fraction of agent-agent edges, resampled every `period` steps.
#[derive(Clone, Debug)]
pub struct DropoutSchedule {
    pub fraction: f64,
    pub period: usize,
    dropped: Vec<(usize, usize)>,
    last_step: Option<usize>,
    rng: StreamRng,
}

impl DropoutSchedule {
    pub fn new(fraction: f64, period: usize, rng: StreamRng) -> Self {
        assert!((0.0..1.0).contains(&fraction), "dropout fraction must lie in [0, 1)");
        assert!(period >= 1, "dropout period must be positive");
        Self {
            fraction,
            period,
            dropped: Vec::new(),
            last_step: None,
            rng,
        }
    }

    pub fn dropped(&self) -> &[(usize, usize)] {
        &self.dropped
    }

    pub fn rng(&self) -> &StreamRng {
        &self.rng
    }

    pub fn set_rng(&mut self, rng: StreamRng) {
        self.rng = rng;
    }

    /// Applies the schedule at episode step `step`.
    ///
    /// On steps divisible by the period, `⌊p·E⌋` of the `E` currently connected
    /// edges are drawn uniformly without replacement; in between, the same
    /// pairs stay removed. Repeated calls at the same step reuse the sample.
    pub fn apply(&mut self, mask: &AdjacencyMask, step: usize) -> AdjacencyMask {
        if step % self.period == 0 && self.last_step != Some(step) {
            let edges = mask.edges();
            let count = (self.fraction * edges.len() as f64).floor() as usize;
            self.dropped = if count == 0 {
                Vec::new()
            } else {
                let mut picked: Vec<usize> = sample(&mut self.rng, edges.len(), count).into_vec();
                picked.sort_unstable();
                picked.into_iter().map(|k| edges[k]).collect()
            };
        }
        self.last_step = Some(step);
        let mut out = mask.clone();
        for &(i, j) in &self.dropped {
            out.set(i, j, false);
        }
        out
    }
}

/// Partition of agents into connected components (union-find), each sorted,
/// ordered by smallest member.
pub fn connected_components(mask: &AdjacencyMask) -> Vec<Vec<usize>> {
    let n = mask.num_agents();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (i, j) in mask.edges() {
        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for i in 0..n {
        let root = find(&mut parent, i);
        if slot[root] == usize::MAX {
            slot[root] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[root]].push(i);
    }
    groups
}

/// Breadth-first hop counts from `source`; `None` for unreachable agents.
pub fn hop_distances(mask: &AdjacencyMask, source: usize) -> Vec<Option<usize>> {
    let n = mask.num_agents();
    let mut dist = vec![None; n];
    dist[source] = Some(0);
    let mut frontier = vec![source];
    let mut d = 0;
    while !frontier.is_empty() {
        d += 1;
        let mut next = Vec::new();
        for &i in &frontier {
            for j in 0..n {
                if mask.get(i, j) && dist[j].is_none() {
                    dist[j] = Some(d);
                    next.push(j);
                }
            }
        }
        frontier = next;
    }
    dist
}
