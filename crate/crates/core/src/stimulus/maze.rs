use super::{Raster, RenderConfig, Stimulus, StimulusError, TaskKind};
use crate::seed;
use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MazeConfig {
    pub grid_size: i32,
    /// Relative half-width of the acceptance band around the target distance.
    pub tolerance: f64,
    pub max_attempts: usize,
}

impl Default for MazeConfig {
    fn default() -> Self {
        MazeConfig { grid_size: 24, tolerance: 0.05, max_attempts: 10_000 }
    }
}

pub fn path_distance(path: &[(i32, i32)]) -> f64 {
    match (path.first(), path.last()) {
        (Some(a), Some(b)) => {
            let dr = (b.0 - a.0) as f64;
            let dc = (b.1 - a.1) as f64;
            (dr * dr + dc * dc).sqrt()
        }
        _ => 0.0,
    }
}

const MOVES: [((i32, i32), &str); 4] = [((-1, 0), "up"), ((1, 0), "down"), ((0, -1), "left"), ((0, 1), "right")];

fn move_name(a: (i32, i32), b: (i32, i32)) -> &'static str {
    let d = (b.0 - a.0, b.1 - a.1);
    MOVES.iter().find(|(m, _)| *m == d).map(|(_, n)| *n).unwrap_or("?")
}

pub fn describe_path(path: &[(i32, i32)]) -> String {
    let mut parts = vec![format!("start at ({},{})", path[0].0, path[0].1)];
    parts.extend(path.windows(2).map(|w| move_name(w[0], w[1]).to_string()));
    parts.join("; ")
}

/// One random-walk attempt. Walks up to `max_len` self-avoiding steps and
/// returns a prefix (of at least `min_len` steps) whose end lands in the band.
fn attempt<R: Rng>(
    rng: &mut R,
    grid: i32,
    band: (f64, f64),
    min_len: usize,
    max_len: usize,
) -> Option<Vec<(i32, i32)>> {
    let start = (rng.random_range(0..grid), rng.random_range(0..grid));
    let mut path = vec![start];
    let mut seen: HashSet<(i32, i32)> = HashSet::from([start]);
    let mut hits = Vec::new();
    while path.len() <= max_len {
        let cur = *path.last().unwrap();
        let options: Vec<(i32, i32)> = MOVES
            .iter()
            .map(|((dr, dc), _)| (cur.0 + dr, cur.1 + dc))
            .filter(|p| p.0 >= 0 && p.1 >= 0 && p.0 < grid && p.1 < grid && !seen.contains(p))
            .collect();
        let Some(&next) = options.choose(rng) else { break };
        path.push(next);
        seen.insert(next);
        let steps = path.len() - 1;
        let d = path_distance(&path);
        if steps >= min_len && d >= band.0 && d <= band.1 {
            hits.push(path.len());
        }
    }
    let &len = hits.choose(rng)?;
    path.truncate(len);
    Some(path)
}

/// Relative band around `target`, widened to the nearest start-end distance
/// the grid can realize when the band holds none (e.g. around 3.35 no
/// `sqrt(a² + b²)` lies within 5%).
fn reachable_band(target: f64, tolerance: f64, grid: i32) -> (f64, f64) {
    let (lo, hi) = (target * (1.0 - tolerance), target * (1.0 + tolerance));
    let mut nearest = f64::INFINITY;
    for a in 0..grid {
        for b in 0..grid {
            let d = ((a * a + b * b) as f64).sqrt();
            if d >= lo && d <= hi {
                return (lo, hi);
            }
            if d > 0.0 && (d - target).abs() < (nearest - target).abs() {
                nearest = d;
            }
        }
    }
    (lo.min(nearest), hi.max(nearest))
}

/// Samples a self-avoiding 4-connected path whose start-to-end Euclidean
/// distance lies within `cfg.tolerance` (relative) of `target_distance`, or
/// at the nearest realizable distance when no lattice distance is that close.
pub fn gen_maze(
    target_distance: f64,
    cfg: &MazeConfig,
    render: &RenderConfig,
    rng_seed: u64,
) -> Result<Stimulus, StimulusError> {
    let diag = ((cfg.grid_size - 1) as f64) * std::f64::consts::SQRT_2;
    if !(target_distance > 0.0 && target_distance <= diag) {
        return Err(StimulusError::Domain(format!("maze target {target_distance} not in (0, {diag:.3}]")));
    }
    let band = reachable_band(target_distance, cfg.tolerance, cfg.grid_size);
    let min_len = band.0.ceil().max(1.0) as usize;
    let max_len = 3 * target_distance.ceil() as usize + 4;
    let mut rng = seed::rng(rng_seed);
    for _ in 0..cfg.max_attempts {
        if let Some(path) = attempt(&mut rng, cfg.grid_size, band, min_len, max_len) {
            let image = render_maze(&path, cfg.grid_size, render);
            return Ok(Stimulus {
                task: TaskKind::MazeDistance,
                true_value: path_distance(&path),
                ascii: Some(describe_path(&path)),
                image: Some(image),
                maze_path: Some(path),
                transcript: None,
            });
        }
    }
    Err(StimulusError::Generation(format!(
        "no maze path within [{:.3}, {:.3}] after {} attempts",
        band.0, band.1, cfg.max_attempts
    )))
}

const START_COLOR: [u8; 3] = [20, 160, 40];

fn render_maze(path: &[(i32, i32)], grid: i32, cfg: &RenderConfig) -> Raster {
    let size = cfg.maze_image_size;
    let cell = (size / grid as u32).max(1) as i64;
    let mut img = Raster::new_rgb(size, size, cfg.background);
    let center = |p: (i32, i32)| (p.1 as i64 * cell + cell / 2, p.0 as i64 * cell + cell / 2);
    let half = (cfg.line_thickness / 2) as i64;
    for w in path.windows(2) {
        let (x0, y0) = center(w[0]);
        let (x1, y1) = center(w[1]);
        img.fill_rect(x0 - half, y0 - half, x1 + half, y1 + half, cfg.line_color);
    }
    let r = (cell / 3).max(2);
    let (sx, sy) = center(path[0]);
    img.fill_rect(sx - r, sy - r, sx + r, sy + r, START_COLOR);
    let (ex, ey) = center(*path.last().unwrap());
    img.fill_rect(ex - r, ey - r, ex + r, ey + r, cfg.marker_color);
    img
}
