//! Minimum-cost perfect matching between agents and landmarks.

use crate::error::{Error, Result};

/// Optimal agent-landmark pairing.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    /// `perm[l]` is the agent matched to landmark `l`.
    pub perm: Vec<usize>,
    /// `Σ_l cost[perm[l]][l]`, summed in landmark order.
    pub total_cost: f64,
}

/// Cost of matching `perm` (landmark → agent), summed in landmark order.
pub fn matching_cost(cost: &[Vec<f64>], perm: &[usize]) -> f64 {
    perm.iter().enumerate().map(|(l, &a)| cost[a][l]).sum()
}

/// Hungarian method (shortest augmenting paths with potentials), `O(n³)`.
///
/// `cost[a][l]` is the cost of agent `a` covering landmark `l`.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Assignment> {
    let n = cost.len();
    if let Some((r, row)) = cost.iter().enumerate().find(|(_, row)| row.len() != n) {
        return Err(Error::CostMatrix(format!(
            "expected {n}×{n}, row {r} has {} entries",
            row.len()
        )));
    }
    if cost.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::CostMatrix("non-finite entry".into()));
    }
    if n == 0 {
        return Ok(Assignment {
            perm: Vec::new(),
            total_cost: 0.0,
        });
    }

    // 1-based arrays; index 0 is the virtual root of each augmenting tree.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut col_owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for row in 1..=n {
        col_owner[0] = row;
        let mut col0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let r0 = col_owner[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for col in 1..=n {
                if used[col] {
                    continue;
                }
                let cur = cost[r0 - 1][col - 1] - u[r0] - v[col];
                if cur < minv[col] {
                    minv[col] = cur;
                    way[col] = col0;
                }
                if minv[col] < delta {
                    delta = minv[col];
                    col1 = col;
                }
            }
            for col in 0..=n {
                if used[col] {
                    u[col_owner[col]] += delta;
                    v[col] -= delta;
                } else {
                    minv[col] -= delta;
                }
            }
            col0 = col1;
            if col_owner[col0] == 0 {
                break;
            }
        }
        loop {
            let col1 = way[col0];
            col_owner[col0] = col_owner[col1];
            col0 = col1;
            if col0 == 0 {
                break;
            }
        }
    }

    let perm: Vec<usize> = (1..=n).map(|col| col_owner[col] - 1).collect();
    let total_cost = matching_cost(cost, &perm);
    Ok(Assignment { perm, total_cost })
}
