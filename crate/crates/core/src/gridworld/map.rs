use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::GridError;

/// Grid cell, `(row, col)` with row 0 at the top. Serialized as `[row, col]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "(usize, usize)", into = "(usize, usize)")]
pub struct Pos {
    pub row: usize,
    pub col: usize,
}

impl Pos {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    /// Chebyshev (king-move) distance.
    pub fn chebyshev(self, other: Pos) -> usize {
        self.row.abs_diff(other.row).max(self.col.abs_diff(other.col))
    }

    pub fn manhattan(self, other: Pos) -> usize {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col)
    }

    /// Cell displaced by `(dr, dc)`, or `None` if a coordinate would go negative.
    pub fn offset(self, dr: isize, dc: isize) -> Option<Pos> {
        Some(Pos {
            row: self.row.checked_add_signed(dr)?,
            col: self.col.checked_add_signed(dc)?,
        })
    }
}

impl From<(usize, usize)> for Pos {
    fn from((row, col): (usize, usize)) -> Self {
        Pos { row, col }
    }
}

impl From<Pos> for (usize, usize) {
    fn from(p: Pos) -> Self {
        (p.row, p.col)
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

/// Static occupancy grid; `true` marks an obstacle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridMap {
    width: usize,
    height: usize,
    blocked: Vec<bool>,
}

const FOUR_NEIGHBORS: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

impl GridMap {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            width,
            height,
            blocked: vec![false; width * height],
        }
    }

    /// Build from row-major occupancy. Panics if the length is not `height * width`.
    pub fn from_occupancy(height: usize, width: usize, blocked: Vec<bool>) -> Self {
        assert_eq!(blocked.len(), width * height, "occupancy size");
        Self {
            width,
            height,
            blocked,
        }
    }

    /// Parse rows of `.` (free) and `@` (obstacle); convenient for tests.
    pub fn from_rows(rows: &[&str]) -> Self {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        let mut blocked = Vec::with_capacity(width * height);
        for r in rows {
            assert_eq!(r.len(), width, "ragged rows");
            blocked.extend(r.chars().map(|c| c == '@'));
        }
        Self::from_occupancy(height, width, blocked)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cell_count(&self) -> usize {
        self.blocked.len()
    }

    pub fn in_bounds(&self, p: Pos) -> bool {
        p.row < self.height && p.col < self.width
    }

    pub fn index(&self, p: Pos) -> usize {
        p.row * self.width + p.col
    }

    pub fn pos_of(&self, index: usize) -> Pos {
        Pos::new(index / self.width, index % self.width)
    }

    /// In bounds and not an obstacle.
    pub fn is_free(&self, p: Pos) -> bool {
        self.in_bounds(p) && !self.blocked[self.index(p)]
    }

    pub fn is_blocked(&self, p: Pos) -> bool {
        !self.is_free(p)
    }

    pub fn set_blocked(&mut self, p: Pos, blocked: bool) {
        let i = self.index(p);
        self.blocked[i] = blocked;
    }

    pub fn occupancy(&self) -> &[bool] {
        &self.blocked
    }

    pub fn free_cells(&self) -> Vec<Pos> {
        (0..self.cell_count())
            .filter(|&i| !self.blocked[i])
            .map(|i| self.pos_of(i))
            .collect()
    }

    pub fn free_count(&self) -> usize {
        self.blocked.iter().filter(|b| !**b).count()
    }

    /// In-bounds 4-neighbors of `p` that are free.
    pub fn free_neighbors(&self, p: Pos) -> impl Iterator<Item = Pos> + '_ {
        FOUR_NEIGHBORS
            .iter()
            .filter_map(move |&(dr, dc)| p.offset(dr, dc))
            .filter(move |&q| self.is_free(q))
    }

    /// Label free cells by 4-connected component; obstacles get `usize::MAX`.
    /// Labels are assigned in row-major order of each component's first cell.
    pub fn components(&self) -> (Vec<usize>, usize) {
        let mut label = vec![usize::MAX; self.cell_count()];
        let mut count = 0;
        let mut queue = VecDeque::new();
        for start in 0..self.cell_count() {
            if self.blocked[start] || label[start] != usize::MAX {
                continue;
            }
            label[start] = count;
            queue.push_back(self.pos_of(start));
            while let Some(p) = queue.pop_front() {
                for q in self.free_neighbors(p) {
                    let qi = self.index(q);
                    if label[qi] == usize::MAX {
                        label[qi] = count;
                        queue.push_back(q);
                    }
                }
            }
            count += 1;
        }
        (label, count)
    }

    pub fn is_connected(&self) -> bool {
        self.components().1 <= 1
    }

    /// Parse the text map format: an optional run of `#` comment lines, then
    /// `height width`, then `height` rows of `width` characters (`.` free,
    /// `@` obstacle). Comment lines may appear anywhere.
    pub fn parse(text: &str) -> Result<Self, GridError> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim_start().starts_with('#'))
            .map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
        let (hline, header) = lines.next().ok_or(GridError::Parse {
            line: 1,
            msg: "missing header".into(),
        })?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|e| GridError::Parse {
                line: hline,
                msg: format!("bad dimensions: {e}"),
            })?;
        let [height, width] = dims[..] else {
            return Err(GridError::Parse {
                line: hline,
                msg: "expected `height width`".into(),
            });
        };
        let mut blocked = Vec::with_capacity(height * width);
        for r in 0..height {
            let (ln, row) = lines.next().ok_or(GridError::Parse {
                line: hline + r + 1,
                msg: format!("expected {height} rows, found {r}"),
            })?;
            if row.chars().count() != width {
                return Err(GridError::Parse {
                    line: ln,
                    msg: format!("row has {} cells, expected {width}", row.chars().count()),
                });
            }
            for ch in row.chars() {
                blocked.push(match ch {
                    '.' => false,
                    '@' => true,
                    other => {
                        return Err(GridError::Parse {
                            line: ln,
                            msg: format!("unexpected character {other:?}"),
                        })
                    }
                });
            }
        }
        if let Some((ln, extra)) = lines.find(|(_, l)| !l.trim().is_empty()) {
            return Err(GridError::Parse {
                line: ln,
                msg: format!("trailing content {extra:?}"),
            });
        }
        Ok(Self::from_occupancy(height, width, blocked))
    }

    /// Serialize in the text map format, optionally preceded by comment lines.
    pub fn to_text(&self, comments: &[String]) -> String {
        let mut out = String::with_capacity((self.width + 1) * (self.height + 1) + 32);
        for c in comments {
            out.push_str("# ");
            out.push_str(c);
            out.push('\n');
        }
        out.push_str(&format!("{} {}\n", self.height, self.width));
        for r in 0..self.height {
            for c in 0..self.width {
                out.push(if self.blocked[r * self.width + c] { '@' } else { '.' });
            }
            out.push('\n');
        }
        out
    }
}

/// BFS distances to one goal through free cells. Unreachable cells and
/// obstacles hold [`DistanceField::INF`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistanceField {
    width: usize,
    height: usize,
    dist: Vec<u32>,
}

impl DistanceField {
    pub const INF: u32 = u32::MAX;

    pub fn get(&self, p: Pos) -> Option<u32> {
        if p.row >= self.height || p.col >= self.width {
            return None;
        }
        match self.dist[p.row * self.width + p.col] {
            Self::INF => None,
            d => Some(d),
        }
    }

    /// Raw value including the sentinel; `INF` when out of bounds.
    pub fn raw(&self, p: Pos) -> u32 {
        if p.row >= self.height || p.col >= self.width {
            Self::INF
        } else {
            self.dist[p.row * self.width + p.col]
        }
    }

    pub fn values(&self) -> &[u32] {
        &self.dist
    }
}

pub fn compute_distance_field(map: &GridMap, goal: Pos) -> Result<DistanceField, GridError> {
    if !map.is_free(goal) {
        return Err(GridError::NotFree(goal));
    }
    let mut dist = vec![DistanceField::INF; map.cell_count()];
    let mut queue = VecDeque::new();
    dist[map.index(goal)] = 0;
    queue.push_back(goal);
    while let Some(p) = queue.pop_front() {
        let d = dist[map.index(p)];
        for q in map.free_neighbors(p) {
            let qi = map.index(q);
            if dist[qi] == DistanceField::INF {
                dist[qi] = d + 1;
                queue.push_back(q);
            }
        }
    }
    Ok(DistanceField {
        width: map.width(),
        height: map.height(),
        dist,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distance_on_empty_3x3() {
        let map = GridMap::empty(3, 3);
        let f = compute_distance_field(&map, Pos::new(0, 0)).unwrap();
        assert_eq!(f.get(Pos::new(2, 2)), Some(4));
        assert_eq!(f.get(Pos::new(0, 0)), Some(0));
    }

    #[test]
    fn enclosed_cell_is_unreachable() {
        let map = GridMap::from_rows(&[".@.", "@.@", ".@."]);
        let f = compute_distance_field(&map, Pos::new(0, 0)).unwrap();
        assert_eq!(f.get(Pos::new(1, 1)), None);
        assert_eq!(f.raw(Pos::new(1, 1)), DistanceField::INF);
        assert_eq!(f.get(Pos::new(0, 1)), None);
    }

    #[test]
    fn goal_on_obstacle_is_error() {
        let map = GridMap::from_rows(&["@."]);
        assert!(matches!(
            compute_distance_field(&map, Pos::new(0, 0)),
            Err(GridError::NotFree(_))
        ));
    }

    #[test]
    fn text_round_trip_with_comments() {
        let map = GridMap::from_rows(&["..@", "@..", "..."]);
        let text = map.to_text(&["gen: style=test".into()]);
        assert!(text.starts_with("# gen: style=test\n3 3\n"));
        assert_eq!(GridMap::parse(&text).unwrap(), map);
    }

    #[test]
    fn parse_rejects_bad_rows() {
        assert!(matches!(
            GridMap::parse("2 2\n..\n."),
            Err(GridError::Parse { line: 3, .. })
        ));
        assert!(GridMap::parse("1 2\n.x\n").is_err());
        assert!(GridMap::parse("2 2\n..\n").is_err());
        assert!(GridMap::parse("").is_err());
    }

    #[test]
    fn components_count() {
        let map = GridMap::from_rows(&[".@.", ".@.", ".@."]);
        let (_, n) = map.components();
        assert_eq!(n, 2);
        assert!(!map.is_connected());
    }

    #[test]
    fn pos_serializes_as_pair() {
        let s = serde_json::to_string(&Pos::new(3, 4)).unwrap();
        assert_eq!(s, "[3,4]");
        let p: Pos = serde_json::from_str("[1,2]").unwrap();
        assert_eq!(p, Pos::new(1, 2));
    }
}
