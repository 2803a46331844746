//! Shared state space for every agent and the manager.
//!
//! Cells are addressed as `(col, row)` with row 0 at the top; `Up` decrements
//! the row. The map is surrounded by an implicit wall, so stepping off the
//! grid behaves exactly like stepping into a wall. The goal cell is a trap:
//! episodes end there and nothing is ever stepped out of it.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Built-in map assets.
pub mod assets {
    pub const OPEN_10: &str = include_str!("../maps/open10.txt");
    pub const ROOMS_10: &str = include_str!("../maps/rooms10.txt");
    pub const CORRIDOR_10: &str = include_str!("../maps/corridor10.txt");
    pub const OPEN_3: &str = include_str!("../maps/open3.txt");
    pub const OPEN_5: &str = include_str!("../maps/open5.txt");
    pub const ROOMS_5: &str = include_str!("../maps/rooms5.txt");
    pub const CORRIDOR_3: &str = include_str!("../maps/corridor3.txt");

    /// Looks up an asset by its file stem, e.g. `"corridor10"`.
    pub fn by_name(name: &str) -> Option<&'static str> {
        Some(match name {
            "open10" => OPEN_10,
            "rooms10" => ROOMS_10,
            "corridor10" => CORRIDOR_10,
            "open3" => OPEN_3,
            "open5" => OPEN_5,
            "rooms5" => ROOMS_5,
            "corridor3" => CORRIDOR_3,
            _ => return None,
        })
    }

    /// The maps small enough for exact enumeration.
    pub const SMALL: [(&str, &str); 4] = [
        ("open3", OPEN_3),
        ("corridor3", CORRIDOR_3),
        ("open5", OPEN_5),
        ("rooms5", ROOMS_5),
    ];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub col: i32,
    pub row: i32,
}

impl Cell {
    pub const fn new(col: i32, row: i32) -> Self {
        Self { col, row }
    }

    pub fn offset(self, direction: Direction) -> Self {
        let (dc, dr) = direction.delta();
        Self::new(self.col + dc, self.row + dr)
    }

    pub fn manhattan(self, other: Cell) -> u32 {
        self.col.abs_diff(other.col) + self.row.abs_diff(other.row)
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.col, self.row)
    }
}

/// A position in the shared state space. `terminal` is set iff the cell is
/// the goal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct State {
    pub cell: Cell,
    pub terminal: bool,
}

/// Atomic moves, listed clockwise from `Up`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    Up,
    Right,
    Down,
    Left,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::Up,
        Direction::Right,
        Direction::Down,
        Direction::Left,
    ];

    pub const fn delta(self) -> (i32, i32) {
        match self {
            Direction::Up => (0, -1),
            Direction::Right => (1, 0),
            Direction::Down => (0, 1),
            Direction::Left => (-1, 0),
        }
    }

    pub const fn glyph(self) -> char {
        match self {
            Direction::Up => '↑',
            Direction::Right => '→',
            Direction::Down => '↓',
            Direction::Left => '←',
        }
    }

    pub fn from_glyph(c: char) -> Option<Self> {
        match c {
            '↑' | 'U' | 'u' => Some(Direction::Up),
            '→' | 'R' | 'r' => Some(Direction::Right),
            '↓' | 'D' | 'd' => Some(Direction::Down),
            '←' | 'L' | 'l' => Some(Direction::Left),
            _ => None,
        }
    }

    pub fn is_vertical(self) -> bool {
        matches!(self, Direction::Up | Direction::Down)
    }
}

/// A validated, immutable gridworld.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridMap {
    width: usize,
    height: usize,
    walls: BTreeSet<Cell>,
    start: Cell,
    goal: Cell,
    /// Free cells in row-major order.
    free: Vec<Cell>,
    /// `row * width + col` -> position in `free`.
    lookup: Vec<Option<usize>>,
}

impl GridMap {
    /// Builds and validates a map from its parts.
    pub fn new(
        width: usize,
        height: usize,
        walls: BTreeSet<Cell>,
        start: Cell,
        goal: Cell,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidMap(
                "map must have at least one row and one column".into(),
            ));
        }
        let in_bounds = |c: Cell| {
            c.col >= 0 && c.row >= 0 && (c.col as usize) < width && (c.row as usize) < height
        };
        if let Some(w) = walls.iter().find(|c| !in_bounds(**c)) {
            return Err(Error::InvalidMap(format!("wall {w} lies outside the map")));
        }
        for (name, cell) in [("start", start), ("goal", goal)] {
            if !in_bounds(cell) {
                return Err(Error::InvalidMap(format!(
                    "{name} {cell} lies outside the map"
                )));
            }
            if walls.contains(&cell) {
                return Err(Error::InvalidMap(format!("{name} {cell} is a wall")));
            }
        }
        if start == goal {
            return Err(Error::InvalidMap("start and goal coincide".into()));
        }

        let mut free = Vec::with_capacity(width * height - walls.len());
        let mut lookup = vec![None; width * height];
        for row in 0..height as i32 {
            for col in 0..width as i32 {
                let cell = Cell::new(col, row);
                if !walls.contains(&cell) {
                    lookup[row as usize * width + col as usize] = Some(free.len());
                    free.push(cell);
                }
            }
        }
        let map = Self {
            width,
            height,
            walls,
            start,
            goal,
            free,
            lookup,
        };
        map.check_connected()?;
        Ok(map)
    }

    fn check_connected(&self) -> Result<()> {
        let mut seen = vec![false; self.free.len()];
        let mut queue = VecDeque::from([self.start]);
        seen[self.index_of(self.start).expect("start is free")] = true;
        while let Some(cell) = queue.pop_front() {
            for dir in Direction::ALL {
                let next = cell.offset(dir);
                if let Some(i) = self.index_of(next) {
                    if !seen[i] {
                        seen[i] = true;
                        queue.push_back(next);
                    }
                }
            }
        }
        match seen.iter().position(|s| !s) {
            None => Ok(()),
            Some(i) => Err(Error::InvalidMap(format!(
                "cell {} is not reachable from the start",
                self.free[i]
            ))),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn walls(&self) -> &BTreeSet<Cell> {
        &self.walls
    }

    pub fn start(&self) -> Cell {
        self.start
    }

    pub fn goal(&self) -> Cell {
        self.goal
    }

    /// Non-wall cells in row-major order; this is the state space.
    pub fn free_cells(&self) -> &[Cell] {
        &self.free
    }

    pub fn num_states(&self) -> usize {
        self.free.len()
    }

    /// Dense index of a free cell, `None` for walls and out-of-bounds cells.
    pub fn index_of(&self, cell: Cell) -> Option<usize> {
        if cell.col < 0 || cell.row < 0 {
            return None;
        }
        let (col, row) = (cell.col as usize, cell.row as usize);
        if col >= self.width || row >= self.height {
            return None;
        }
        self.lookup[row * self.width + col]
    }

    pub fn is_free(&self, cell: Cell) -> bool {
        self.index_of(cell).is_some()
    }

    pub fn goal_index(&self) -> usize {
        self.index_of(self.goal).expect("goal is free")
    }

    pub fn state(&self, cell: Cell) -> State {
        debug_assert!(self.is_free(cell), "{cell} is not a free cell");
        State {
            cell,
            terminal: cell == self.goal,
        }
    }

    pub fn start_state(&self) -> State {
        self.state(self.start)
    }

    /// One atomic move. Blocked moves leave the state unchanged and report a
    /// collision.
    pub fn atomic_step(&self, s: State, a: Direction) -> (State, bool) {
        debug_assert!(!s.terminal, "atomic_step called from the goal");
        let target = s.cell.offset(a);
        if self.is_free(target) {
            (self.state(target), false)
        } else {
            (s, true)
        }
    }

    /// Renders the map back to its text form.
    pub fn render(&self) -> String {
        let mut out = String::with_capacity((self.width + 1) * self.height);
        for row in 0..self.height as i32 {
            for col in 0..self.width as i32 {
                let cell = Cell::new(col, row);
                out.push(if cell == self.start {
                    'S'
                } else if cell == self.goal {
                    'G'
                } else if self.walls.contains(&cell) {
                    '#'
                } else {
                    '.'
                });
            }
            out.push('\n');
        }
        out
    }

    /// Hex SHA-256 of the rendered map; stamped into persisted tables.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.render().as_bytes()))
    }
}

/// Parses a map document: `#` wall, `.` free, `S` start, `G` goal.
pub fn load_map(text: &str) -> Result<GridMap> {
    let mut lines: Vec<&str> = text.lines().map(|l| l.trim_end_matches('\r')).collect();
    while lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    if lines.is_empty() {
        return Err(Error::MapParse {
            line: 1,
            message: "empty map".into(),
        });
    }

    let width = lines[0].chars().count();
    let mut walls = BTreeSet::new();
    let mut start = None;
    let mut goal = None;
    for (row, line) in lines.iter().enumerate() {
        let len = line.chars().count();
        if len != width {
            return Err(Error::MapParse {
                line: row + 1,
                message: format!("row has {len} cells, expected {width}"),
            });
        }
        for (col, ch) in line.chars().enumerate() {
            let cell = Cell::new(col as i32, row as i32);
            let slot = match ch {
                '#' => {
                    walls.insert(cell);
                    continue;
                }
                '.' => continue,
                'S' => &mut start,
                'G' => &mut goal,
                other => {
                    return Err(Error::MapParse {
                        line: row + 1,
                        message: format!("unexpected character {other:?} at column {}", col + 1),
                    })
                }
            };
            if slot.replace(cell).is_some() {
                return Err(Error::InvalidMap(format!("more than one '{ch}' in map")));
            }
        }
    }
    let start = start.ok_or_else(|| Error::InvalidMap("no start cell 'S'".into()))?;
    let goal = goal.ok_or_else(|| Error::InvalidMap("no goal cell 'G'".into()))?;
    GridMap::new(width, lines.len(), walls, start, goal)
}

impl FromStr for GridMap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        load_map(s)
    }
}

/// Loads a map from a filesystem path, or a built-in asset when the path is
/// of the form `builtin:<name>`.
pub fn load_map_source(source: &str) -> Result<GridMap> {
    if let Some(name) = source.strip_prefix("builtin:") {
        let text = assets::by_name(name)
            .ok_or_else(|| Error::Config(format!("unknown built-in map {name:?}")))?;
        return load_map(text);
    }
    load_map(&std::fs::read_to_string(source)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open3() -> GridMap {
        load_map(assets::OPEN_3).unwrap()
    }

    #[test]
    fn smallest_open_room() {
        let map = open3();
        assert_eq!((map.width(), map.height()), (3, 3));
        assert!(map.walls().is_empty());
        assert_eq!(map.start(), Cell::new(0, 0));
        assert_eq!(map.goal(), Cell::new(2, 2));
        assert_eq!(map.num_states(), 9);
    }

    #[test]
    fn enclosed_goal_is_rejected() {
        let err = load_map("S.#..\n..#..\n###..\n...#G\n...##\n").unwrap_err();
        assert!(matches!(err, Error::InvalidMap(_)), "{err}");
        let err = load_map("S..\n.##\n.#G\n").unwrap_err();
        assert!(matches!(err, Error::InvalidMap(_)), "{err}");
    }

    #[test]
    fn corridor_asset_wall_count() {
        let map = load_map(assets::CORRIDOR_10).unwrap();
        assert_eq!((map.width(), map.height()), (10, 10));
        assert_eq!(map.walls().len(), 34);
    }

    #[test]
    fn all_assets_load() {
        for name in [
            "open10",
            "rooms10",
            "corridor10",
            "open3",
            "open5",
            "rooms5",
            "corridor3",
        ] {
            load_map(assets::by_name(name).unwrap()).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(
            load_map("S.x\n..G\n"),
            Err(Error::MapParse { line: 1, .. })
        ));
        assert!(matches!(
            load_map("S..\n.G\n"),
            Err(Error::MapParse { line: 2, .. })
        ));
        assert!(matches!(load_map("...\n..G\n"), Err(Error::InvalidMap(_))));
        assert!(matches!(load_map("S..\n...\n"), Err(Error::InvalidMap(_))));
        assert!(matches!(load_map("SS.\n..G\n"), Err(Error::InvalidMap(_))));
        assert!(matches!(load_map(""), Err(Error::MapParse { .. })));
    }

    #[test]
    fn crlf_and_trailing_blank_lines() {
        let map = load_map("S..\r\n..G\r\n\r\n").unwrap();
        assert_eq!((map.width(), map.height()), (3, 2));
    }

    #[test]
    fn atomic_step_moves_and_collides() {
        let map = open3();
        let centre = map.state(Cell::new(1, 1));
        assert_eq!(
            map.atomic_step(centre, Direction::Up),
            (map.state(Cell::new(1, 0)), false)
        );
        let corner = map.state(Cell::new(0, 0));
        assert_eq!(map.atomic_step(corner, Direction::Left), (corner, true));
        assert_eq!(map.atomic_step(corner, Direction::Up), (corner, true));
    }

    #[test]
    fn interior_wall_blocks() {
        let map = load_map(assets::CORRIDOR_10).unwrap();
        // (0,1) has the wall (1,1) to its right.
        let s = map.state(Cell::new(0, 1));
        assert!(map.walls().contains(&Cell::new(1, 1)));
        assert_eq!(map.atomic_step(s, Direction::Right), (s, true));
        assert_eq!(
            map.atomic_step(s, Direction::Down),
            (map.state(Cell::new(0, 2)), false)
        );
    }

    #[test]
    fn step_never_lands_on_wall() {
        for (_, text) in assets::SMALL
            .iter()
            .chain([("c", assets::CORRIDOR_10), ("r", assets::ROOMS_10)].iter())
        {
            let map = load_map(text).unwrap();
            for &cell in map.free_cells() {
                let s = map.state(cell);
                if s.terminal {
                    continue;
                }
                for dir in Direction::ALL {
                    let (next, collided) = map.atomic_step(s, dir);
                    assert!(map.is_free(next.cell));
                    assert_eq!(collided, next == s);
                    assert_eq!(collided, !map.is_free(cell.offset(dir)));
                }
            }
        }
    }

    #[test]
    fn render_round_trips() {
        let map = load_map(assets::ROOMS_10).unwrap();
        assert_eq!(map.render(), assets::ROOMS_10);
        assert_eq!(load_map(&map.render()).unwrap(), map);
        assert_eq!(map.content_hash().len(), 64);
    }
}
