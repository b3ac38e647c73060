use super::assignment::hungarian;
use crate::env::{distance, Point};

/// Agent × landmark Euclidean distances.
pub fn distance_matrix(agents: &[Point], landmarks: &[Point]) -> Vec<Vec<f64>> {
    agents
        .iter()
        .map(|a| landmarks.iter().map(|l| distance(*a, *l)).collect())
        .collect()
}

/// Matched distance for every landmark under the minimum-weight matching.
///
/// With fewer agents than landmarks the unmatched landmarks get `None`.
pub fn matched_distances(agents: &[Point], landmarks: &[Point]) -> Vec<Option<f64>> {
    let dist = distance_matrix(agents, landmarks);
    let n = agents.len().max(landmarks.len());
    // Pad to square with zero-cost dummy agents/landmarks.
    let square: Vec<Vec<f64>> = (0..n)
        .map(|a| {
            (0..n)
                .map(|l| {
                    if a < agents.len() && l < landmarks.len() {
                        dist[a][l]
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let assignment = hungarian(&square).expect("distances are finite");
    (0..landmarks.len())
        .map(|l| {
            let a = assignment.perm[l];
            (a < agents.len()).then(|| dist[a][l])
        })
        .collect()
}

/// Negative mean clipped matched distance; zero iff every landmark is occupied.
pub fn coverage_reward(agents: &[Point], landmarks: &[Point], clip: f64) -> f64 {
    if landmarks.is_empty() {
        return 0.0;
    }
    let total: f64 = matched_distances(agents, landmarks)
        .into_iter()
        .map(|d| d.map_or(clip, |d| d.min(clip)))
        .sum();
    -total / landmarks.len() as f64
}

/// Distance from each landmark to its nearest agent (no matching).
pub fn nearest_agent_distances(agents: &[Point], landmarks: &[Point]) -> Vec<f64> {
    landmarks
        .iter()
        .map(|l| {
            agents
                .iter()
                .map(|a| distance(*a, *l))
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// Every landmark has some agent within `threshold`.
pub fn coverage_success(agents: &[Point], landmarks: &[Point], threshold: f64) -> bool {
    nearest_agent_distances(agents, landmarks)
        .into_iter()
        .all(|d| d <= threshold)
}

/// Mean over landmarks of the distance to the closest agent, unclipped.
pub fn avg_min_distance(agents: &[Point], landmarks: &[Point]) -> f64 {
    let d = nearest_agent_distances(agents, landmarks);
    if d.is_empty() {
        return 0.0;
    }
    d.iter().sum::<f64>() / d.len() as f64
}
