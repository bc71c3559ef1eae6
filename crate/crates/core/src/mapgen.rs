//! Seeded map generation and start/goal placement.
//!
//! Room maps use recursive division: a region is split by a one-cell wall
//! that runs between existing walls (or the border), a door whose width is
//! drawn from `corridor_widths` is carved into it, and both halves are
//! divided again until they are narrower than `2 * room_min + 1`. A wall is
//! never placed where its end would touch an existing door, so free space
//! stays one 4-connected component.
//!
//! Random maps mark each cell as an obstacle with probability
//! `obstacle_density` and then fill every free component except the largest.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridworld::{GridMap, Pos};
use crate::rng::SeededRng;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MapGenError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("generated map has no free cells")]
    NoFreeCells,
    #[error("cannot place {needed} agents: {reason}")]
    NotEnoughCells { needed: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapStyle {
    Room,
    Random,
}

impl std::str::FromStr for MapStyle {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "room" => Ok(MapStyle::Room),
            "random" => Ok(MapStyle::Random),
            other => Err(format!("unknown map style {other:?} (expected room or random)")),
        }
    }
}

impl std::fmt::Display for MapStyle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MapStyle::Room => "room",
            MapStyle::Random => "random",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MapGenConfig {
    pub size: usize,
    pub style: MapStyle,
    pub obstacle_density: f64,
    pub room_min: usize,
    pub corridor_widths: Vec<usize>,
    pub seed: u64,
}

impl Default for MapGenConfig {
    fn default() -> Self {
        Self {
            size: 20,
            style: MapStyle::Room,
            obstacle_density: 0.1,
            room_min: 3,
            corridor_widths: vec![1, 2],
            seed: 0,
        }
    }
}

impl MapGenConfig {
    pub fn validate(&self) -> Result<(), MapGenError> {
        let bad = |m: String| Err(MapGenError::InvalidConfig(m));
        if self.size < 10 {
            return bad(format!("size {} is below the minimum of 10", self.size));
        }
        if !(0.0..=0.5).contains(&self.obstacle_density) {
            return bad(format!("obstacle density {} outside [0, 0.5]", self.obstacle_density));
        }
        if self.corridor_widths.is_empty() || self.corridor_widths.contains(&0) {
            return bad("corridor widths must be a non-empty set of integers >= 1".into());
        }
        if self.room_min == 0 || self.room_min > self.size {
            return bad(format!("room_min {} infeasible for size {}", self.room_min, self.size));
        }
        Ok(())
    }

    /// The `gen:` comment recorded at the top of written map files.
    pub fn header(&self) -> String {
        let widths: Vec<String> = self.corridor_widths.iter().map(|w| w.to_string()).collect();
        format!(
            "gen: style={} size={} density={} room_min={} corridor_widths={} seed={}",
            self.style,
            self.size,
            self.obstacle_density,
            self.room_min,
            widths.join(","),
            self.seed
        )
    }

    pub fn generate(&self) -> Result<GridMap, MapGenError> {
        match self.style {
            MapStyle::Room => generate_room_map(self),
            MapStyle::Random => generate_random_map(self),
        }
    }
}

pub fn generate_room_map(config: &MapGenConfig) -> Result<GridMap, MapGenError> {
    config.validate()?;
    let mut map = GridMap::empty(config.size, config.size);
    let mut rng = SeededRng::new(config.seed);
    divide(
        &mut map,
        &mut rng,
        config,
        Region {
            top: 0,
            left: 0,
            height: config.size,
            width: config.size,
        },
    );
    Ok(map)
}

#[derive(Debug, Clone, Copy)]
struct Region {
    top: usize,
    left: usize,
    height: usize,
    width: usize,
}

/// Outside the map counts as wall.
fn wall_or_border(map: &GridMap, row: isize, col: isize) -> bool {
    if row < 0 || col < 0 {
        return true;
    }
    map.is_blocked(Pos::new(row as usize, col as usize))
}

fn divide(map: &mut GridMap, rng: &mut SeededRng, cfg: &MapGenConfig, r: Region) {
    let span = 2 * cfg.room_min + 1;
    let can_rows = r.height >= span;
    let can_cols = r.width >= span;
    let horizontal = match (can_rows, can_cols) {
        (false, false) => return,
        (true, false) => true,
        (false, true) => false,
        (true, true) => match r.height.cmp(&r.width) {
            std::cmp::Ordering::Greater => true,
            std::cmp::Ordering::Less => false,
            std::cmp::Ordering::Equal => rng.below(2) == 0,
        },
    };
    let (len, along) = if horizontal {
        (r.height, r.width)
    } else {
        (r.width, r.height)
    };
    // Wall lines whose two ends abut walls (never a door).
    let candidates: Vec<usize> = (cfg.room_min..len - cfg.room_min)
        .filter(|&k| {
            if horizontal {
                let row = (r.top + k) as isize;
                wall_or_border(map, row, r.left as isize - 1)
                    && wall_or_border(map, row, (r.left + r.width) as isize)
            } else {
                let col = (r.left + k) as isize;
                wall_or_border(map, r.top as isize - 1, col)
                    && wall_or_border(map, (r.top + r.height) as isize, col)
            }
        })
        .collect();
    let Some(&k) = rng.choose(&candidates) else {
        return;
    };
    let door = (*rng.choose(&cfg.corridor_widths).expect("validated")).min(along);
    let door_start = rng.below(along - door + 1);
    for t in 0..along {
        if (door_start..door_start + door).contains(&t) {
            continue;
        }
        let p = if horizontal {
            Pos::new(r.top + k, r.left + t)
        } else {
            Pos::new(r.top + t, r.left + k)
        };
        map.set_blocked(p, true);
    }
    let (a, b) = if horizontal {
        (
            Region { height: k, ..r },
            Region {
                top: r.top + k + 1,
                height: r.height - k - 1,
                ..r
            },
        )
    } else {
        (
            Region { width: k, ..r },
            Region {
                left: r.left + k + 1,
                width: r.width - k - 1,
                ..r
            },
        )
    };
    divide(map, rng, cfg, a);
    divide(map, rng, cfg, b);
}

pub fn generate_random_map(config: &MapGenConfig) -> Result<GridMap, MapGenError> {
    config.validate()?;
    let mut rng = SeededRng::new(config.seed);
    let n = config.size * config.size;
    let blocked: Vec<bool> = (0..n).map(|_| rng.bernoulli(config.obstacle_density)).collect();
    let mut map = GridMap::from_occupancy(config.size, config.size, blocked);
    keep_largest_component(&mut map)?;
    Ok(map)
}

/// Fill every free component except the largest (lowest label on ties).
pub fn keep_largest_component(map: &mut GridMap) -> Result<(), MapGenError> {
    let (labels, count) = map.components();
    if count == 0 {
        return Err(MapGenError::NoFreeCells);
    }
    let mut sizes = vec![0usize; count];
    for &l in labels.iter().filter(|&&l| l != usize::MAX) {
        sizes[l] += 1;
    }
    let keep = (0..count).fold(0, |best, l| if sizes[l] > sizes[best] { l } else { best });
    for (i, &l) in labels.iter().enumerate() {
        if l != usize::MAX && l != keep {
            let p = map.pos_of(i);
            map.set_blocked(p, true);
        }
    }
    Ok(())
}

/// Draw `n` distinct starts and `n` distinct goals. Each goal differs from
/// its own start and lies in the start's connected component. A goal may
/// coincide with another agent's start.
pub fn place_agents(map: &GridMap, n: usize, seed: u64) -> Result<(Vec<Pos>, Vec<Pos>), MapGenError> {
    let mut free = map.free_cells();
    if free.len() < n {
        return Err(MapGenError::NotEnoughCells {
            needed: n,
            reason: format!("only {} free cells", free.len()),
        });
    }
    let mut rng = SeededRng::new(seed);
    // Partial Fisher-Yates: the first n cells become the starts.
    for i in 0..n {
        let j = i + rng.below(free.len() - i);
        free.swap(i, j);
    }
    let starts = free[..n].to_vec();
    let (labels, _) = map.components();
    let mut taken = vec![false; map.cell_count()];
    let mut goals = Vec::with_capacity(n);
    let cells = map.free_cells();
    for (i, &s) in starts.iter().enumerate() {
        let comp = labels[map.index(s)];
        let options: Vec<Pos> = cells
            .iter()
            .copied()
            .filter(|&c| c != s && labels[map.index(c)] == comp && !taken[map.index(c)])
            .collect();
        let Some(&g) = rng.choose(&options) else {
            return Err(MapGenError::NotEnoughCells {
                needed: n,
                reason: format!("no reachable goal left for agent {i}"),
            });
        };
        taken[map.index(g)] = true;
        goals.push(g);
    }
    Ok((starts, goals))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn room(size: usize, seed: u64) -> MapGenConfig {
        MapGenConfig {
            size,
            style: MapStyle::Room,
            seed,
            ..MapGenConfig::default()
        }
    }

    #[test]
    fn room_maps_are_deterministic() {
        assert_eq!(room(20, 7).generate().unwrap(), room(20, 7).generate().unwrap());
        assert_ne!(room(20, 7).generate().unwrap(), room(20, 8).generate().unwrap());
    }

    #[test]
    fn room_maps_have_walls() {
        let m = room(20, 1).generate().unwrap();
        assert!(m.free_count() < 400);
        assert!(m.is_connected());
    }

    #[test]
    fn config_validation() {
        let mut c = room(20, 0);
        c.room_min = 21;
        assert!(c.generate().is_err());
        c = room(9, 0);
        assert!(c.generate().is_err());
        c = room(20, 0);
        c.obstacle_density = 0.6;
        assert!(c.validate().is_err());
        c = room(20, 0);
        c.corridor_widths = vec![0];
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_density_random_is_empty() {
        let c = MapGenConfig {
            style: MapStyle::Random,
            obstacle_density: 0.0,
            size: 12,
            ..MapGenConfig::default()
        };
        assert_eq!(c.generate().unwrap(), GridMap::empty(12, 12));
    }

    #[test]
    fn random_maps_connected_and_deterministic() {
        for seed in 0..20 {
            let c = MapGenConfig {
                style: MapStyle::Random,
                obstacle_density: 0.3,
                size: 10,
                seed,
                ..MapGenConfig::default()
            };
            let m = c.generate().unwrap();
            assert!(m.is_connected());
            assert_eq!(m, c.generate().unwrap());
        }
    }

    #[test]
    fn keep_largest_fails_on_full_map() {
        let mut m = GridMap::from_rows(&["@@", "@@"]);
        assert_eq!(keep_largest_component(&mut m), Err(MapGenError::NoFreeCells));
    }

    #[test]
    fn placement_on_tiny_map() {
        let m = GridMap::empty(3, 3);
        let (s, g) = place_agents(&m, 1, 4).unwrap();
        assert_eq!(s.len(), 1);
        assert_ne!(s[0], g[0]);
        assert!(place_agents(&m, 10, 4).is_err());
    }

    #[test]
    fn header_records_config() {
        let h = room(20, 7).header();
        assert_eq!(h, "gen: style=room size=20 density=0.1 room_min=3 corridor_widths=1,2 seed=7");
    }
}
