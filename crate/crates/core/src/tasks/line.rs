//! Line control: agents spread evenly on the segment between two landmarks.
//!
//! The reward mirrors coverage: agents are matched to `M` equally spaced
//! target points (endpoints included) and penalized by the clipped matched
//! distance.

use super::coverage;
use crate::env::Point;

/// `M` equally spaced points from `a` to `b` inclusive; a single agent targets the midpoint.
pub fn line_targets(a: Point, b: Point, m: usize) -> Vec<Point> {
    match m {
        0 => Vec::new(),
        1 => vec![[(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0]],
        _ => (0..m)
            .map(|k| {
                if k == m - 1 {
                    return b;
                }
                let t = k as f64 / (m - 1) as f64;
                [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
            })
            .collect(),
    }
}

pub fn line_reward(agents: &[Point], endpoints: [Point; 2], clip: f64) -> f64 {
    let targets = line_targets(endpoints[0], endpoints[1], agents.len());
    coverage::coverage_reward(agents, &targets, clip)
}

pub fn line_success(agents: &[Point], endpoints: [Point; 2], threshold: f64) -> bool {
    let targets = line_targets(endpoints[0], endpoints[1], agents.len());
    coverage::coverage_success(agents, &targets, threshold)
}
