//! Trajectory export as comma-separated values.
//!
//! Columns: `episode,step,kind,index,x,y,vx,vy,action,reward`.
//! `kind` is `agent` or `landmark`. Landmarks are written once per episode at
//! step 0. Agent rows at step 0 carry no action or reward; later rows carry
//! the action that led to the state and the shared reward received.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::world::{Action, EnvState};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    Agent,
    Landmark,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub episode: usize,
    pub step: usize,
    pub kind: EntityKind,
    pub index: usize,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub action: Option<usize>,
    pub reward: Option<f64>,
}

/// Records for a state; pass `actions`/`reward` for post-step states.
pub fn state_records(
    episode: usize,
    state: &EnvState,
    actions: Option<&[Action]>,
    reward: Option<f64>,
) -> Vec<TrajectoryRecord> {
    let mut out = Vec::new();
    if state.step == 0 {
        for (i, l) in state.landmarks.iter().enumerate() {
            out.push(TrajectoryRecord {
                episode,
                step: 0,
                kind: EntityKind::Landmark,
                index: i,
                x: l[0],
                y: l[1],
                vx: 0.0,
                vy: 0.0,
                action: None,
                reward: None,
            });
        }
    }
    for (i, (p, v)) in state.positions.iter().zip(&state.velocities).enumerate() {
        out.push(TrajectoryRecord {
            episode,
            step: state.step,
            kind: EntityKind::Agent,
            index: i,
            x: p[0],
            y: p[1],
            vx: v[0],
            vy: v[1],
            action: actions.map(|a| a[i].index()),
            reward,
        });
    }
    out
}

pub fn write_trajectory<W: Write>(w: W, records: &[TrajectoryRecord]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in records {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_trajectory<R: Read>(r: R) -> Result<Vec<TrajectoryRecord>> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for (line, rec) in rd.deserialize().enumerate() {
        let rec: TrajectoryRecord =
            rec.map_err(|e| Error::Trajectory(format!("row {}: {e}", line + 2)))?;
        if !(rec.x.is_finite() && rec.y.is_finite()) {
            return Err(Error::Trajectory(format!("row {}: non-finite position", line + 2)));
        }
        out.push(rec);
    }
    Ok(out)
}
