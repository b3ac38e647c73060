use super::{ENTITY_DIM, OWN_DIM};
use crate::comm::AdjacencyMask;
use crate::env::Observation;
use crate::error::{Error, Result};
use crate::gradtape::{Scalar, Tensor};

/// Observations of `groups` independent teams of equal size, flattened so
/// that agent `i` of group `g` is row `g·agents + i`.
#[derive(Clone, Debug, PartialEq)]
pub struct ObsBatch<T> {
    pub groups: usize,
    pub agents: usize,
    pub entities: usize,
    /// `(groups·agents)×4`
    pub own: Tensor<T>,
    /// `(groups·agents·entities)×2`; rows of one agent are contiguous.
    pub relative: Tensor<T>,
    /// `groups` row-major `agents×agents` masks back to back.
    pub masks: Vec<bool>,
}

impl<T: Scalar> ObsBatch<T> {
    pub fn new(observations: &[Vec<Observation>], masks: &[AdjacencyMask]) -> Result<Self> {
        if observations.len() != masks.len() {
            return Err(Error::shape(
                "obs_batch",
                format!("{} groups but {} masks", observations.len(), masks.len()),
            ));
        }
        let agents = observations.first().map_or(0, Vec::len);
        let entities = observations
            .first()
            .and_then(|g| g.first())
            .map_or(0, |o| o.relative.len());
        let mut own = Vec::new();
        let mut relative = Vec::new();
        let mut flat = Vec::new();
        for (group, mask) in observations.iter().zip(masks) {
            if group.len() != agents || mask.num_agents() != agents {
                return Err(Error::shape("obs_batch", "groups must share one team size"));
            }
            if !mask.has_self_edges() {
                return Err(Error::precondition("obs_batch", "mask diagonal must be true"));
            }
            for o in group {
                if o.relative.len() != entities {
                    return Err(Error::shape("obs_batch", "agents must see the same number of landmarks"));
                }
                own.extend(o.own.iter().map(|&v| T::of(v)));
                for r in &o.relative {
                    relative.extend(r.iter().map(|&v| T::of(v)));
                }
            }
            flat.extend_from_slice(mask.as_slice());
        }
        let rows = observations.len() * agents;
        Ok(Self {
            groups: observations.len(),
            agents,
            entities,
            own: Tensor::from_vec(&[rows, OWN_DIM], own)?,
            relative: Tensor::from_vec(&[rows * entities, ENTITY_DIM], relative)?,
            masks: flat,
        })
    }

    pub fn single(observations: &[Observation], mask: &AdjacencyMask) -> Result<Self> {
        Self::new(&[observations.to_vec()], std::slice::from_ref(mask))
    }

    /// Total agent rows.
    pub fn rows(&self) -> usize {
        self.groups * self.agents
    }

    pub fn mask(&self, group: usize) -> &[bool] {
        let mm = self.agents * self.agents;
        &self.masks[group * mm..(group + 1) * mm]
    }

    /// Sub-batch made of the listed groups, in the listed order.
    pub fn select(&self, groups: &[usize]) -> Self {
        let (m, l, mm) = (self.agents, self.entities, self.agents * self.agents);
        let mut own = Vec::with_capacity(groups.len() * m * OWN_DIM);
        let mut relative = Vec::with_capacity(groups.len() * m * l * ENTITY_DIM);
        let mut masks = Vec::with_capacity(groups.len() * mm);
        for &g in groups {
            own.extend_from_slice(&self.own.data()[g * m * OWN_DIM..(g + 1) * m * OWN_DIM]);
            let span = m * l * ENTITY_DIM;
            relative.extend_from_slice(&self.relative.data()[g * span..(g + 1) * span]);
            masks.extend_from_slice(self.mask(g));
        }
        let rows = groups.len() * m;
        Self {
            groups: groups.len(),
            agents: m,
            entities: l,
            own: Tensor::from_vec(&[rows, OWN_DIM], own).expect("sizes follow from the source"),
            relative: Tensor::from_vec(&[rows * l, ENTITY_DIM], relative).expect("sizes follow from the source"),
            masks,
        }
    }

    /// Appends the groups of `other`, which must share team and landmark counts.
    pub fn extend(&mut self, other: &ObsBatch<T>) -> Result<()> {
        if self.groups == 0 {
            *self = other.clone();
            return Ok(());
        }
        if other.agents != self.agents || other.entities != self.entities {
            return Err(Error::shape("obs_batch", "cannot mix team or landmark counts"));
        }
        let mut own = std::mem::replace(&mut self.own, Tensor::zeros(&[0])).into_data();
        own.extend_from_slice(other.own.data());
        let mut rel = std::mem::replace(&mut self.relative, Tensor::zeros(&[0])).into_data();
        rel.extend_from_slice(other.relative.data());
        self.groups += other.groups;
        let rows = self.rows();
        self.own = Tensor::from_vec(&[rows, OWN_DIM], own)?;
        self.relative = Tensor::from_vec(&[rows * self.entities, ENTITY_DIM], rel)?;
        self.masks.extend_from_slice(&other.masks);
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ObsBatch<U> {
        ObsBatch {
            groups: self.groups,
            agents: self.agents,
            entities: self.entities,
            own: self.own.cast(),
            relative: self.relative.cast(),
            masks: self.masks.clone(),
        }
    }
}
