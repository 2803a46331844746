//! Composite k-step actions ("arrows") and the angular ring that orders them.
//!
//! An agent with step size `k` acts by choosing an arrow: a fixed sequence of
//! `k` atomic moves executed without interruption. Arrows are arranged on a
//! ring sorted clockwise by the angle of their net displacement, starting from
//! straight up; actuation errors are expressed as shifts along this ring.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::{Direction, GridMap, State};

/// How the arrows of a ring are generated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RingStyle {
    /// One arrow per reachable endpoint (`4k` arrows). Paths with an upward
    /// component climb first; paths with a downward component descend last.
    #[default]
    OneTurn,
    /// Every monotone path with at most one turn (`8k - 4` arrows for
    /// `k >= 2`), so distinct arrows can share an endpoint.
    AllOneTurn,
}

impl fmt::Display for RingStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RingStyle::OneTurn => "one_turn",
            RingStyle::AllOneTurn => "all_one_turn",
        })
    }
}

impl FromStr for RingStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one_turn" => Ok(RingStyle::OneTurn),
            "all_one_turn" => Ok(RingStyle::AllOneTurn),
            other => Err(Error::Config(format!("unknown ring_style {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rotation {
    Clockwise,
    Anticlockwise,
}

/// A k-step composite action.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Arrow {
    sequence: Vec<Direction>,
    ring_index: usize,
    displacement: (i32, i32),
}

impl Arrow {
    pub fn sequence(&self) -> &[Direction] {
        &self.sequence
    }

    pub fn ring_index(&self) -> usize {
        self.ring_index
    }

    /// Net `(dcol, drow)` of an unobstructed execution.
    pub fn displacement(&self) -> (i32, i32) {
        self.displacement
    }

    /// Position of the first turn, or `len` for straight arrows.
    fn turn_position(&self) -> usize {
        self.sequence
            .windows(2)
            .position(|w| w[0] != w[1])
            .map_or(self.sequence.len(), |p| p + 1)
    }
}

impl fmt::Display for Arrow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.sequence
            .iter()
            .try_for_each(|d| write!(f, "{}", d.glyph()))
    }
}

fn net_displacement(sequence: &[Direction]) -> (i32, i32) {
    sequence.iter().fold((0, 0), |(c, r), d| {
        let (dc, dr) = d.delta();
        (c + dc, r + dr)
    })
}

/// Clockwise angle from straight up, in `[0, 2π)`.
fn clockwise_angle((dc, dr): (i32, i32)) -> f64 {
    let a = (dc as f64).atan2(-dr as f64);
    if a < 0.0 {
        a + 2.0 * PI
    } else {
        a
    }
}

fn repeat(dir: Direction, n: usize) -> impl Iterator<Item = Direction> {
    std::iter::repeat_n(dir, n)
}

/// The ordered arrow set of one agent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActionRing {
    k: usize,
    style: RingStyle,
    arrows: Vec<Arrow>,
}

impl ActionRing {
    /// Builds the default ring for step size `k`.
    pub fn build(k: usize) -> Result<Self> {
        Self::with_style(k, RingStyle::OneTurn)
    }

    pub fn with_style(k: usize, style: RingStyle) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidStepSize(k));
        }
        let sequences = match style {
            RingStyle::OneTurn => one_turn_sequences(k),
            RingStyle::AllOneTurn => all_one_turn_sequences(k),
        };
        let mut arrows: Vec<Arrow> = sequences
            .into_iter()
            .map(|sequence| Arrow {
                displacement: net_displacement(&sequence),
                sequence,
                ring_index: 0,
            })
            .collect();
        arrows.sort_by(|a, b| {
            clockwise_angle(a.displacement)
                .total_cmp(&clockwise_angle(b.displacement))
                .then(a.turn_position().cmp(&b.turn_position()))
                .then(a.sequence[0].cmp(&b.sequence[0]))
        });
        for (i, arrow) in arrows.iter_mut().enumerate() {
            arrow.ring_index = i;
        }
        Ok(Self { k, style, arrows })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn style(&self) -> RingStyle {
        self.style
    }

    pub fn len(&self) -> usize {
        self.arrows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrows.is_empty()
    }

    pub fn arrows(&self) -> &[Arrow] {
        &self.arrows
    }

    pub fn get(&self, index: usize) -> &Arrow {
        &self.arrows[index]
    }

    /// Finds an arrow by its move sequence, e.g. `"↑↑→"` or `"UUR"`.
    pub fn find(&self, sequence: &str) -> Option<&Arrow> {
        let dirs: Option<Vec<Direction>> = sequence.chars().map(Direction::from_glyph).collect();
        let dirs = dirs?;
        self.arrows.iter().find(|a| a.sequence == dirs)
    }

    /// Index `steps` positions away from `index`, wrapping around the ring.
    pub fn shift_index(&self, index: usize, steps: usize, rotation: Rotation) -> usize {
        let n = self.arrows.len();
        let steps = steps % n;
        match rotation {
            Rotation::Clockwise => (index + steps) % n,
            Rotation::Anticlockwise => (index + n - steps) % n,
        }
    }

    pub fn shift(&self, arrow: &Arrow, steps: usize, rotation: Rotation) -> &Arrow {
        debug_assert_eq!(
            self.arrows.get(arrow.ring_index),
            Some(arrow),
            "arrow not in ring"
        );
        &self.arrows[self.shift_index(arrow.ring_index, steps, rotation)]
    }
}

/// One arrow per endpoint at Manhattan distance `k`.
fn one_turn_sequences(k: usize) -> Vec<Vec<Direction>> {
    let k = k as i32;
    let mut out = Vec::with_capacity(4 * k as usize);
    for dc in -k..=k {
        let rest = k - dc.abs();
        let mut rows = vec![-rest, rest];
        rows.dedup();
        for dr in rows {
            let horizontal = if dc >= 0 {
                Direction::Right
            } else {
                Direction::Left
            };
            let (h, v) = (dc.unsigned_abs() as usize, dr.unsigned_abs() as usize);
            let seq: Vec<Direction> = if dr < 0 {
                repeat(Direction::Up, v)
                    .chain(repeat(horizontal, h))
                    .collect()
            } else {
                repeat(horizontal, h)
                    .chain(repeat(Direction::Down, v))
                    .collect()
            };
            out.push(seq);
        }
    }
    out
}

/// Straight arrows plus every `first^i second^(k-i)` with perpendicular legs.
fn all_one_turn_sequences(k: usize) -> Vec<Vec<Direction>> {
    let mut out: Vec<Vec<Direction>> = Direction::ALL
        .iter()
        .map(|&d| repeat(d, k).collect())
        .collect();
    for first in Direction::ALL {
        for second in Direction::ALL {
            if first.is_vertical() == second.is_vertical() {
                continue;
            }
            for i in 1..k {
                out.push(repeat(first, i).chain(repeat(second, k - i)).collect());
            }
        }
    }
    out
}

/// Result of executing one arrow.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ArrowOutcome {
    pub end: State,
    pub collided: bool,
    pub atomic_steps: usize,
    pub reached_goal: bool,
}

/// Executes an arrow's moves in order. Execution stops at the first blocked
/// move (staying in the last reached cell) or on entering the goal.
/// `atomic_steps` counts the moves that changed the cell.
pub fn execute_arrow(map: &GridMap, s: State, arrow: &Arrow) -> ArrowOutcome {
    debug_assert!(!s.terminal, "execute_arrow called from the goal");
    let mut state = s;
    let mut atomic_steps = 0;
    for &dir in &arrow.sequence {
        let (next, collided) = map.atomic_step(state, dir);
        if collided {
            return ArrowOutcome {
                end: state,
                collided: true,
                atomic_steps,
                reached_goal: false,
            };
        }
        state = next;
        atomic_steps += 1;
        if state.terminal {
            return ArrowOutcome {
                end: state,
                collided: false,
                atomic_steps,
                reached_goal: true,
            };
        }
    }
    ArrowOutcome {
        end: state,
        collided: false,
        atomic_steps,
        reached_goal: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{assets, load_map, Cell};
    use std::collections::{BTreeSet, HashMap};

    fn seqs(ring: &ActionRing) -> Vec<String> {
        ring.arrows().iter().map(|a| a.to_string()).collect()
    }

    #[test]
    fn one_step_ring() {
        let ring = ActionRing::build(1).unwrap();
        assert_eq!(seqs(&ring), ["↑", "→", "↓", "←"]);
    }

    #[test]
    fn ring_sizes() {
        for k in 1..=5 {
            assert_eq!(ActionRing::build(k).unwrap().len(), 4 * k);
            let dense = ActionRing::with_style(k, RingStyle::AllOneTurn).unwrap();
            assert_eq!(dense.len(), if k == 1 { 4 } else { 8 * k - 4 });
        }
        assert!(matches!(
            ActionRing::build(0),
            Err(Error::InvalidStepSize(0))
        ));
    }

    /// Independent enumeration: every endpoint at distance 3 sorted by the
    /// clockwise angle computed from exact integer quadrant arithmetic.
    #[test]
    fn three_step_ring_matches_enumeration() {
        let ring = ActionRing::build(3).unwrap();
        assert_eq!(
            seqs(&ring),
            [
                "↑↑↑",
                "↑↑→",
                "↑→→",
                "→→→",
                "→→↓",
                "→↓↓",
                "↓↓↓",
                "←↓↓",
                "←←↓",
                "←←←",
                "↑←←",
                "↑↑←"
            ]
        );
        let displacements: Vec<(i32, i32)> =
            ring.arrows().iter().map(|a| a.displacement()).collect();
        // Walk the diamond |dc|+|dr|=3 clockwise from (0,-3).
        let mut expected = vec![];
        for i in 0..3 {
            expected.push((i, -3 + i));
        }
        for i in 0..3 {
            expected.push((3 - i, i));
        }
        for i in 0..3 {
            expected.push((-i, 3 - i));
        }
        for i in 0..3 {
            expected.push((-3 + i, -i));
        }
        assert_eq!(displacements, expected);
    }

    #[test]
    fn clockwise_neighbour_of_straight_up() {
        let ring = ActionRing::build(3).unwrap();
        let up = ring.find("↑↑↑").unwrap();
        assert_eq!(up.ring_index(), 0);
        assert_eq!(ring.shift(up, 1, Rotation::Clockwise).to_string(), "↑↑→");
    }

    #[test]
    fn shifts() {
        let ring4 = ActionRing::build(1).unwrap();
        let up = ring4.find("↑").unwrap();
        assert_eq!(ring4.shift(up, 0, Rotation::Clockwise), up);
        assert_eq!(ring4.shift(up, 2, Rotation::Clockwise).to_string(), "↓");
        assert_eq!(ring4.shift(up, 4, Rotation::Anticlockwise), up);
        assert_eq!(ring4.shift(up, 1, Rotation::Anticlockwise).to_string(), "←");

        let ring12 = ActionRing::build(3).unwrap();
        let up3 = ring12.find("↑↑↑").unwrap();
        assert_eq!(
            ring12.shift(up3, 4, Rotation::Anticlockwise).to_string(),
            "←←↓"
        );
        assert_eq!(ring12.shift(up3, 12, Rotation::Clockwise), up3);
    }

    #[test]
    fn dense_ring_shares_endpoints() {
        for k in 2..=3 {
            let ring = ActionRing::with_style(k, RingStyle::AllOneTurn).unwrap();
            let mut by_end: HashMap<(i32, i32), Vec<&Arrow>> = HashMap::new();
            for a in ring.arrows() {
                by_end.entry(a.displacement()).or_default().push(a);
            }
            let pair = by_end
                .values()
                .find(|v| v.len() > 1)
                .expect("shared endpoint");
            assert_ne!(pair[0].sequence(), pair[1].sequence());
            // ties are broken by earlier turn first
            assert!(pair[0].turn_position() <= pair[1].turn_position());
        }
        let dense = ActionRing::with_style(2, RingStyle::AllOneTurn).unwrap();
        assert_eq!(
            seqs(&dense),
            [
                "↑↑", "↑→", "→↑", "→→", "→↓", "↓→", "↓↓", "↓←", "←↓", "←←", "↑←", "←↑"
            ]
        );
    }

    #[test]
    fn default_ring_has_unique_endpoints_and_one_turn() {
        for k in 1..=4 {
            let ring = ActionRing::build(k).unwrap();
            let ends: BTreeSet<_> = ring.arrows().iter().map(|a| a.displacement()).collect();
            assert_eq!(ends.len(), ring.len());
            for a in ring.arrows() {
                assert_eq!(a.sequence().len(), k);
                let turns = a.sequence().windows(2).filter(|w| w[0] != w[1]).count();
                assert!(turns <= 1);
            }
        }
    }

    #[test]
    fn execute_unobstructed() {
        let map = load_map(assets::OPEN_3).unwrap();
        let ring = ActionRing::build(2).unwrap();
        let out = execute_arrow(&map, map.state(Cell::new(0, 2)), ring.find("↑↑").unwrap());
        assert_eq!(
            out,
            ArrowOutcome {
                end: map.state(Cell::new(0, 0)),
                collided: false,
                atomic_steps: 2,
                reached_goal: false
            }
        );
    }

    #[test]
    fn execute_truncates_at_wall() {
        let map = load_map(assets::OPEN_3).unwrap();
        let ring = ActionRing::build(2).unwrap();
        let out = execute_arrow(&map, map.state(Cell::new(0, 1)), ring.find("↑↑").unwrap());
        assert_eq!(
            out,
            ArrowOutcome {
                end: map.state(Cell::new(0, 0)),
                collided: true,
                atomic_steps: 1,
                reached_goal: false
            }
        );
    }

    #[test]
    fn execute_stops_at_goal() {
        // 1x4 vertical corridor, goal at the top.
        let map = load_map("G\n.\n.\nS\n").unwrap();
        let ring = ActionRing::build(3).unwrap();
        let out = execute_arrow(&map, map.state(Cell::new(0, 2)), ring.find("↑↑↑").unwrap());
        assert_eq!(
            out,
            ArrowOutcome {
                end: map.state(Cell::new(0, 0)),
                collided: false,
                atomic_steps: 2,
                reached_goal: true
            }
        );
    }

    #[test]
    fn execution_never_ends_on_wall() {
        let map = load_map(assets::CORRIDOR_10).unwrap();
        for k in 1..=3 {
            for style in [RingStyle::OneTurn, RingStyle::AllOneTurn] {
                let ring = ActionRing::with_style(k, style).unwrap();
                for &cell in map.free_cells() {
                    let s = map.state(cell);
                    if s.terminal {
                        continue;
                    }
                    for arrow in ring.arrows() {
                        let out = execute_arrow(&map, s, arrow);
                        assert!(map.is_free(out.end.cell));
                        assert!(out.atomic_steps <= k);
                        assert_eq!(out.reached_goal, out.end.terminal);
                        if !out.collided && !out.reached_goal {
                            assert_eq!(out.atomic_steps, k);
                        }
                        // The end cell is exactly the prefix walk of `atomic_steps` moves.
                        let prefix = net_displacement(&arrow.sequence()[..out.atomic_steps]);
                        assert_eq!(
                            out.end.cell,
                            Cell::new(cell.col + prefix.0, cell.row + prefix.1)
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn same_endpoint_different_outcome() {
        // ↑→ and →↑ share an endpoint but only one passes the wall.
        let map = load_map("..G\nS#.\n").unwrap();
        let ring = ActionRing::with_style(2, RingStyle::AllOneTurn).unwrap();
        let s = map.state(Cell::new(0, 1));
        let a = execute_arrow(&map, s, ring.find("↑→").unwrap());
        let b = execute_arrow(&map, s, ring.find("→↑").unwrap());
        assert_eq!(a.end.cell, Cell::new(1, 0));
        assert!(!a.collided);
        assert!(b.collided);
        assert_eq!(b.end, s);
    }
}
