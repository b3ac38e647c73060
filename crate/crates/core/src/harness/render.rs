//! SVG rendering of exported trajectories.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::env::trajectory::{EntityKind, TrajectoryRecord};
use crate::error::{Error, Result};

pub const VIEWPORT: f64 = 480.0;
const MARGIN: f64 = 10.0;

/// Linear map from the arena `[-w, w]²` to the viewport, y pointing up.
#[derive(Clone, Copy, Debug)]
pub struct ArenaMap {
    pub half_width: f64,
}

impl ArenaMap {
    pub fn to_viewport(&self, x: f64, y: f64) -> (f64, f64) {
        let s = (VIEWPORT - 2.0 * MARGIN) / (2.0 * self.half_width);
        (MARGIN + (x + self.half_width) * s, MARGIN + (self.half_width - y) * s)
    }

    fn radius(&self, r: f64) -> f64 {
        r * (VIEWPORT - 2.0 * MARGIN) / (2.0 * self.half_width)
    }
}

fn header(map: &ArenaMap) -> String {
    let (x0, y0) = map.to_viewport(-map.half_width, map.half_width);
    let side = VIEWPORT - 2.0 * MARGIN;
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{VIEWPORT}\" height=\"{VIEWPORT}\" viewBox=\"0 0 {VIEWPORT} {VIEWPORT}\">\n\
         <rect x=\"{x0:.2}\" y=\"{y0:.2}\" width=\"{side:.2}\" height=\"{side:.2}\" fill=\"white\" stroke=\"black\" stroke-width=\"1.5\"/>\n"
    )
}

/// One episode as an SVG document.
pub fn render_episode(records: &[TrajectoryRecord], map: &ArenaMap) -> String {
    let mut svg = header(map);
    let mut trails: BTreeMap<usize, Vec<(usize, f64, f64)>> = BTreeMap::new();
    let mut landmarks = Vec::new();
    for r in records {
        match r.kind {
            EntityKind::Landmark => landmarks.push((r.x, r.y)),
            EntityKind::Agent => trails.entry(r.index).or_default().push((r.step, r.x, r.y)),
        }
    }
    for (x, y) in landmarks {
        let (cx, cy) = map.to_viewport(x, y);
        let _ = writeln!(
            svg,
            "<circle class=\"landmark\" cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"{:.2}\" fill=\"#9e9e9e\"/>",
            map.radius(0.05)
        );
    }
    for pts in trails.values_mut() {
        pts.sort_by_key(|p| p.0);
        let n = pts.len();
        // Older segments fade out.
        for (k, w) in pts.windows(2).enumerate() {
            let (x1, y1) = map.to_viewport(w[0].1, w[0].2);
            let (x2, y2) = map.to_viewport(w[1].1, w[1].2);
            let opacity = 0.1 + 0.8 * (k + 1) as f64 / n as f64;
            let _ = writeln!(
                svg,
                "<polyline class=\"trail\" points=\"{x1:.2},{y1:.2} {x2:.2},{y2:.2}\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" stroke-opacity=\"{opacity:.3}\"/>"
            );
        }
        if let Some(&(_, x, y)) = pts.last() {
            let (cx, cy) = map.to_viewport(x, y);
            let _ = writeln!(
                svg,
                "<circle class=\"agent\" cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"{:.2}\" fill=\"#1f77b4\"/>",
                map.radius(0.04)
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// One `(episode, svg)` pair per episode; an empty trajectory yields the bare arena.
pub fn render_trajectory(records: &[TrajectoryRecord], half_width: f64) -> Result<Vec<(usize, String)>> {
    if !(half_width.is_finite() && half_width > 0.0) {
        return Err(Error::Trajectory(format!("arena half width must be positive, got {half_width}")));
    }
    if let Some(r) = records.iter().find(|r| !(r.x.is_finite() && r.y.is_finite())) {
        return Err(Error::Trajectory(format!(
            "non-finite position in episode {} step {}",
            r.episode, r.step
        )));
    }
    let map = ArenaMap { half_width };
    let mut episodes: BTreeMap<usize, Vec<TrajectoryRecord>> = BTreeMap::new();
    for r in records {
        episodes.entry(r.episode).or_default().push(r.clone());
    }
    if episodes.is_empty() {
        return Ok(vec![(0, render_episode(&[], &map))]);
    }
    Ok(episodes.iter().map(|(&k, rs)| (k, render_episode(rs, &map))).collect())
}
