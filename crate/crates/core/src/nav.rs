//! Wavefront navigation: a distance field grown from the source, then
//! min-neighbor backtracking from the sink.
//!
//! The default field is geodesic (unit cost per 4-connected move), so every
//! reachable cell other than the source has a strictly closer neighbor and
//! backtracking always terminates at the source. A straight-line field is
//! available through [`DistanceMetric::Euclidean`] for comparison; it ignores
//! obstacles and backtracking over it can get stuck.

use std::collections::VecDeque;

use thiserror::Error;

use crate::geometry::{Cell, Heading};
use crate::gridworld::LowLevelAction;

#[derive(Debug, Error, PartialEq)]
pub enum NavError {
    #[error("source {0} is not navigable")]
    BlockedSource(Cell),
    #[error("no path to {0}")]
    NoPath(Cell),
    #[error("backtracking stalled at {0}")]
    Stalled(Cell),
    #[error("path cells {0} and {1} are not adjacent")]
    NotAdjacent(Cell, Cell),
    #[error("grid size mismatch")]
    Size,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NavGrid {
    width: usize,
    height: usize,
    open: Vec<bool>,
}

impl NavGrid {
    pub fn new(width: usize, height: usize, open: Vec<bool>) -> Result<Self, NavError> {
        if open.len() != width * height {
            return Err(NavError::Size);
        }
        Ok(Self {
            width,
            height,
            open,
        })
    }

    /// Parses rows of `.` (open) and `#` (blocked).
    pub fn from_rows(rows: &[&str]) -> Result<Self, NavError> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        let open = rows
            .iter()
            .flat_map(|r| r.chars().map(|c| c != '#'))
            .collect();
        Self::new(width, height, open)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_open(&self, cell: Cell) -> bool {
        cell.x < self.width && cell.y < self.height && self.open[self.index(cell)]
    }

    fn index(&self, cell: Cell) -> usize {
        cell.y * self.width + cell.x
    }

    fn neighbors(&self, cell: Cell) -> impl Iterator<Item = Cell> + '_ {
        Heading::ALL
            .into_iter()
            .filter_map(move |h| cell.step(h, self.width, self.height))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DistanceMetric {
    #[default]
    Geodesic,
    Euclidean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    width: usize,
    height: usize,
    source: Cell,
    distances: Vec<f64>,
}

impl DistanceField {
    pub fn source(&self) -> Cell {
        self.source
    }

    /// Distance of `cell`; infinite for blocked, unreachable or out-of-range cells.
    pub fn get(&self, cell: Cell) -> f64 {
        if cell.x < self.width && cell.y < self.height {
            self.distances[cell.y * self.width + cell.x]
        } else {
            f64::INFINITY
        }
    }

    fn neighbors(&self, cell: Cell) -> impl Iterator<Item = Cell> + '_ {
        Heading::ALL
            .into_iter()
            .filter_map(move |h| cell.step(h, self.width, self.height))
    }
}

/// Geodesic wavefront distances from `source` over open 4-connected cells.
pub fn distance_field(grid: &NavGrid, source: Cell) -> Result<DistanceField, NavError> {
    distance_field_with(grid, source, DistanceMetric::Geodesic)
}

pub fn distance_field_with(
    grid: &NavGrid,
    source: Cell,
    metric: DistanceMetric,
) -> Result<DistanceField, NavError> {
    if !grid.is_open(source) {
        return Err(NavError::BlockedSource(source));
    }
    let mut distances = vec![f64::INFINITY; grid.width * grid.height];
    match metric {
        DistanceMetric::Geodesic => {
            distances[grid.index(source)] = 0.0;
            let mut queue = VecDeque::from([source]);
            while let Some(cell) = queue.pop_front() {
                let next = distances[grid.index(cell)] + 1.0;
                for n in grid.neighbors(cell) {
                    let i = grid.index(n);
                    if grid.open[i] && distances[i].is_infinite() {
                        distances[i] = next;
                        queue.push_back(n);
                    }
                }
            }
        }
        DistanceMetric::Euclidean => {
            for y in 0..grid.height {
                for x in 0..grid.width {
                    let cell = Cell::new(x, y);
                    if grid.is_open(cell) {
                        let dx = x as f64 - source.x as f64;
                        let dy = y as f64 - source.y as f64;
                        distances[grid.index(cell)] = dx.hypot(dy);
                    }
                }
            }
        }
    }
    Ok(DistanceField {
        width: grid.width,
        height: grid.height,
        source,
        distances,
    })
}

/// Walks from `sink` to the lowest-valued neighbor (ties in N, E, S, W order)
/// until the source, and returns the path source-first.
pub fn backtrack_path(field: &DistanceField, sink: Cell) -> Result<Vec<Cell>, NavError> {
    if !field.get(sink).is_finite() {
        return Err(NavError::NoPath(sink));
    }
    let mut path = vec![sink];
    let mut current = sink;
    while current != field.source {
        let here = field.get(current);
        let best = field
            .neighbors(current)
            .fold(None, |best: Option<(Cell, f64)>, n| {
                let d = field.get(n);
                match best {
                    Some((_, bd)) if bd <= d => best,
                    _ => Some((n, d)),
                }
            });
        match best {
            Some((next, d)) if d < here => {
                path.push(next);
                current = next;
            }
            _ => return Err(NavError::Stalled(current)),
        }
    }
    path.reverse();
    Ok(path)
}

/// Turn sequence taking `from` to `to` with the fewest turns.
pub fn turns_between(from: Heading, to: Heading) -> Vec<LowLevelAction> {
    match (to.index() + 4 - from.index()) % 4 {
        0 => vec![],
        1 => vec![LowLevelAction::TurnRight],
        2 => vec![LowLevelAction::TurnRight, LowLevelAction::TurnRight],
        _ => vec![LowLevelAction::TurnLeft],
    }
}

/// Converts a cell path to primitives: turns toward each move, then
/// `forward`. The final heading faces the last move.
pub fn path_to_actions(path: &[Cell], start_heading: Heading) -> Result<Vec<LowLevelAction>, NavError> {
    let mut heading = start_heading;
    let mut actions = Vec::new();
    for pair in path.windows(2) {
        let want = pair[0]
            .heading_to(pair[1])
            .ok_or(NavError::NotAdjacent(pair[0], pair[1]))?;
        actions.extend(turns_between(heading, want));
        actions.push(LowLevelAction::Forward);
        heading = want;
    }
    Ok(actions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use LowLevelAction::*;

    fn bfs_len(grid: &NavGrid, from: Cell, to: Cell) -> Option<usize> {
        let mut seen = vec![false; grid.width * grid.height];
        let mut q = VecDeque::from([(from, 0)]);
        seen[grid.index(from)] = true;
        while let Some((c, d)) = q.pop_front() {
            if c == to {
                return Some(d);
            }
            for n in grid.neighbors(c) {
                if grid.is_open(n) && !seen[grid.index(n)] {
                    seen[grid.index(n)] = true;
                    q.push_back((n, d + 1));
                }
            }
        }
        None
    }

    #[test]
    fn single_cell() {
        let g = NavGrid::from_rows(&["."]).unwrap();
        let f = distance_field(&g, Cell::new(0, 0)).unwrap();
        assert_eq!(f.get(Cell::new(0, 0)), 0.0);
        assert_eq!(backtrack_path(&f, Cell::new(0, 0)).unwrap(), [Cell::new(0, 0)]);
    }

    #[test]
    fn open_square_corner_to_corner() {
        let g = NavGrid::from_rows(&["....."; 5]).unwrap();
        let f = distance_field(&g, Cell::new(0, 0)).unwrap();
        assert_eq!(f.get(Cell::new(4, 4)), 8.0);
        assert_eq!(bfs_len(&g, Cell::new(0, 0), Cell::new(4, 4)), Some(8));
        let path = backtrack_path(&f, Cell::new(4, 4)).unwrap();
        assert_eq!(path.len(), 9);
        assert_eq!(path[0], Cell::new(0, 0));
        assert_eq!(path[8], Cell::new(4, 4));
    }

    #[test]
    fn corridor() {
        let g = NavGrid::from_rows(&["#####", "....."]).unwrap();
        let f = distance_field(&g, Cell::new(0, 1)).unwrap();
        let path = backtrack_path(&f, Cell::new(4, 1)).unwrap();
        assert_eq!(path, (0..5).map(|x| Cell::new(x, 1)).collect::<Vec<_>>());
    }

    #[test]
    fn wall_split_grid() {
        let g = NavGrid::from_rows(&["..#..", "..#..", "..#.."]).unwrap();
        let f = distance_field(&g, Cell::new(0, 0)).unwrap();
        for y in 0..3 {
            for x in 3..5 {
                assert!(f.get(Cell::new(x, y)).is_infinite());
            }
        }
        assert_eq!(backtrack_path(&f, Cell::new(4, 2)), Err(NavError::NoPath(Cell::new(4, 2))));
        assert_eq!(
            distance_field(&g, Cell::new(2, 0)).unwrap_err(),
            NavError::BlockedSource(Cell::new(2, 0))
        );
    }

    #[test]
    fn euclidean_field_can_stall_behind_a_wall() {
        let g = NavGrid::from_rows(&[".....", ".###.", "..#..", "....."]).unwrap();
        let f = distance_field_with(&g, Cell::new(1, 2), DistanceMetric::Euclidean).unwrap();
        assert_eq!(f.get(Cell::new(1, 2)), 0.0);
        assert!(matches!(backtrack_path(&f, Cell::new(3, 2)), Err(NavError::Stalled(_))));
        let geo = distance_field(&g, Cell::new(1, 2)).unwrap();
        let path = backtrack_path(&geo, Cell::new(3, 2)).unwrap();
        assert_eq!(path.len() - 1, bfs_len(&g, Cell::new(1, 2), Cell::new(3, 2)).unwrap());
    }

    #[test]
    fn actions_for_simple_paths() {
        assert!(path_to_actions(&[Cell::new(1, 1)], Heading::North).unwrap().is_empty());
        assert_eq!(
            path_to_actions(&[Cell::new(1, 1), Cell::new(2, 1)], Heading::North).unwrap(),
            [TurnRight, Forward]
        );
        assert_eq!(
            path_to_actions(&[Cell::new(1, 1), Cell::new(1, 2)], Heading::North).unwrap(),
            [TurnRight, TurnRight, Forward]
        );
        assert_eq!(
            path_to_actions(&[Cell::new(1, 1), Cell::new(1, 3)], Heading::North),
            Err(NavError::NotAdjacent(Cell::new(1, 1), Cell::new(1, 3)))
        );
    }

    #[test]
    fn turns_are_minimal() {
        for from in Heading::ALL {
            for to in Heading::ALL {
                let turns = turns_between(from, to);
                assert!(turns.len() <= 2);
                let end = turns.iter().fold(from, |h, t| match t {
                    TurnLeft => h.left(),
                    _ => h.right(),
                });
                assert_eq!(end, to);
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn backtracking_matches_bfs(
                open in prop::collection::vec(prop::bool::weighted(0.75), 64),
                s in 0usize..64,
                t in 0usize..64,
            ) {
                let g = NavGrid::new(8, 8, open).unwrap();
                let (src, snk) = (Cell::new(s % 8, s / 8), Cell::new(t % 8, t / 8));
                prop_assume!(g.is_open(src) && g.is_open(snk));
                let f = distance_field(&g, src).unwrap();
                match bfs_len(&g, src, snk) {
                    Some(len) => {
                        let path = backtrack_path(&f, snk).unwrap();
                        prop_assert_eq!(path.len() - 1, len);
                        for w in path.windows(2) {
                            prop_assert!(f.get(w[1]) > f.get(w[0]));
                            prop_assert!(g.is_open(w[1]));
                        }
                    }
                    None => prop_assert_eq!(backtrack_path(&f, snk), Err(NavError::NoPath(snk))),
                }
            }
        }
    }
}
