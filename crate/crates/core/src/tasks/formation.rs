use std::f64::consts::PI;

use crate::env::{distance, Point};

/// Consecutive angular gaps of the agents around `center`, sorted by polar
/// angle, including the wrap-around gap. The gaps always sum to `2π`.
pub fn circular_gaps(agents: &[Point], center: Point) -> Vec<f64> {
    let mut angles: Vec<f64> = agents
        .iter()
        .map(|p| (p[1] - center[1]).atan2(p[0] - center[0]))
        .collect();
    angles.sort_by(f64::total_cmp);
    let n = angles.len();
    if n == 0 {
        return Vec::new();
    }
    let mut gaps: Vec<f64> = angles.windows(2).map(|w| w[1] - w[0]).collect();
    gaps.push(2.0 * PI - (angles[n - 1] - angles[0]));
    gaps
}

/// Radial plus angular formation penalty.
///
/// `−mean_i min(|r_i − radius|, clip) − (1/π)·mean_k |gap_k − 2π/M|`
pub fn formation_reward(agents: &[Point], center: Point, radius: f64, clip: f64) -> f64 {
    let m = agents.len();
    if m == 0 {
        return 0.0;
    }
    let radial = agents
        .iter()
        .map(|p| (distance(*p, center) - radius).abs().min(clip))
        .sum::<f64>()
        / m as f64;
    let target = 2.0 * PI / m as f64;
    let gaps = circular_gaps(agents, center);
    let angular = gaps.iter().map(|g| (g - target).abs()).sum::<f64>() / gaps.len() as f64;
    -radial - angular / PI
}

pub fn formation_success(
    agents: &[Point],
    center: Point,
    radius: f64,
    radial_tolerance: f64,
    angular_tolerance: f64,
) -> bool {
    if agents.is_empty() {
        return false;
    }
    let radial_ok = agents
        .iter()
        .all(|p| (distance(*p, center) - radius).abs() <= radial_tolerance);
    let target = 2.0 * PI / agents.len() as f64;
    radial_ok
        && circular_gaps(agents, center)
            .iter()
            .all(|g| (g - target).abs() <= angular_tolerance)
}
