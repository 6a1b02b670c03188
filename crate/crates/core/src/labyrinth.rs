//! Labyrinth layouts: cellular-automaton generation with rejection
//! sampling, and exact shortest-path distances.
//!
//! Coordinates are `(row, col)` with row 0 at the bottom of the grid, so the
//! default start `(0, 0)` is the bottom-left corner and the default goal
//! `(7, 7)` the top-right one. The text format prints the top row first.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LabyrinthError {
    #[error("position ({row}, {col}) is outside the {width}x{height} grid")]
    OutOfBounds {
        row: usize,
        col: usize,
        width: usize,
        height: usize,
    },
    #[error("{what} at ({row}, {col}) is an obstacle")]
    BlockedCell {
        what: &'static str,
        row: usize,
        col: usize,
    },
    #[error("cell buffer has {got} entries, expected {expected}")]
    CellCount { got: usize, expected: usize },
    #[error("invalid automaton rules: {0}")]
    InvalidRules(String),
    #[error("no layout accepted after {0} attempts")]
    RetryCapExceeded(u32),
    #[error("malformed labyrinth text: {0}")]
    Parse(String),
}

/// Grid cell, serialized as a `[row, col]` pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "(usize, usize)", into = "(usize, usize)")]
pub struct Position {
    pub row: usize,
    pub col: usize,
}

impl Position {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    pub fn manhattan(self, other: Position) -> usize {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col)
    }
}

impl From<(usize, usize)> for Position {
    fn from((row, col): (usize, usize)) -> Self {
        Self { row, col }
    }
}

impl From<Position> for (usize, usize) {
    fn from(p: Position) -> Self {
        (p.row, p.col)
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

/// Rectangular occupancy grid, `true` = obstacle. Row-major, row 0 bottom.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Grid {
    width: usize,
    height: usize,
    cells: Vec<bool>,
}

impl Grid {
    pub fn filled(width: usize, height: usize, obstacle: bool) -> Self {
        Self {
            width,
            height,
            cells: vec![obstacle; width * height],
        }
    }

    pub fn from_cells(width: usize, height: usize, cells: Vec<bool>) -> Result<Self, LabyrinthError> {
        if cells.len() != width * height {
            return Err(LabyrinthError::CellCount {
                got: cells.len(),
                expected: width * height,
            });
        }
        Ok(Self { width, height, cells })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn contains(&self, row: isize, col: isize) -> bool {
        row >= 0 && col >= 0 && (row as usize) < self.height && (col as usize) < self.width
    }

    pub fn index(&self, p: Position) -> usize {
        p.row * self.width + p.col
    }

    pub fn position(&self, index: usize) -> Position {
        Position::new(index / self.width, index % self.width)
    }

    pub fn get(&self, p: Position) -> bool {
        self.cells[self.index(p)]
    }

    pub fn set(&mut self, p: Position, obstacle: bool) {
        let i = self.index(p);
        self.cells[i] = obstacle;
    }

    pub fn obstacle_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// Obstacles among the 8 Moore neighbours; out-of-bounds cells count as
    /// obstacles.
    pub fn moore_obstacles(&self, p: Position) -> u8 {
        let mut n = 0;
        for dr in -1isize..=1 {
            for dc in -1isize..=1 {
                if dr == 0 && dc == 0 {
                    continue;
                }
                let r = p.row as isize + dr;
                let c = p.col as isize + dc;
                if !self.contains(r, c) || self.cells[r as usize * self.width + c as usize] {
                    n += 1;
                }
            }
        }
        n
    }
}

/// Thresholds and probabilities of the stochastic maze automaton.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaRules {
    pub theta_under: u8,
    pub theta_over: u8,
    pub theta_re: u8,
    pub p_init_obstacle: f64,
    pub p_flip_to_obstacle: f64,
    pub p_flip_to_path: f64,
    pub steps: u32,
}

impl Default for CaRules {
    fn default() -> Self {
        Self {
            theta_under: 2,
            theta_over: 3,
            theta_re: 3,
            p_init_obstacle: 0.45,
            p_flip_to_obstacle: 0.05,
            p_flip_to_path: 0.05,
            steps: 3,
        }
    }
}

impl CaRules {
    pub fn validate(&self) -> Result<(), LabyrinthError> {
        if self.theta_under > self.theta_over || self.theta_over > 8 {
            return Err(LabyrinthError::InvalidRules(format!(
                "need 0 <= theta_under ({}) <= theta_over ({}) <= 8",
                self.theta_under, self.theta_over
            )));
        }
        if self.theta_re > 8 {
            return Err(LabyrinthError::InvalidRules(format!(
                "theta_re ({}) exceeds 8",
                self.theta_re
            )));
        }
        for (name, p) in [
            ("p_init_obstacle", self.p_init_obstacle),
            ("p_flip_to_obstacle", self.p_flip_to_obstacle),
            ("p_flip_to_path", self.p_flip_to_path),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(LabyrinthError::InvalidRules(format!("{name} = {p} not in [0, 1]")));
            }
        }
        Ok(())
    }
}

/// One automaton generation.
///
/// The deterministic survival/reproduction outcome of each cell is computed
/// from the previous grid, then one uniform draw per cell (row-major order)
/// decides whether that outcome is flipped.
pub fn ca_step<R: Rng + ?Sized>(grid: &Grid, rules: &CaRules, rng: &mut R) -> Grid {
    let mut next = grid.clone();
    for i in 0..grid.len() {
        let p = grid.position(i);
        let n = grid.moore_obstacles(p);
        let outcome = if grid.cells[i] {
            rules.theta_under <= n && n <= rules.theta_over
        } else {
            n == rules.theta_re
        };
        let u: f64 = rng.random();
        next.cells[i] = if outcome {
            u >= rules.p_flip_to_path
        } else {
            u < rules.p_flip_to_obstacle
        };
    }
    next
}

/// Rules plus the acceptance predicates applied to each candidate layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateConfig {
    pub rules: CaRules,
    pub width: usize,
    pub height: usize,
    pub start: Position,
    pub goal: Position,
    pub min_obstacles: usize,
    pub max_obstacles: usize,
    /// Required start-to-goal distance; `None` accepts any reachable goal.
    pub path_length: Option<u32>,
    pub retry_cap: u32,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            rules: CaRules::default(),
            width: 8,
            height: 8,
            start: Position::new(0, 0),
            goal: Position::new(7, 7),
            min_obstacles: 8,
            max_obstacles: 16,
            path_length: Some(14),
            retry_cap: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Labyrinth {
    grid: Grid,
    start: Position,
    goal: Position,
}

impl Labyrinth {
    pub fn new(grid: Grid, start: Position, goal: Position) -> Result<Self, LabyrinthError> {
        for (what, p) in [("start", start), ("goal", goal)] {
            if !grid.contains(p.row as isize, p.col as isize) {
                return Err(LabyrinthError::OutOfBounds {
                    row: p.row,
                    col: p.col,
                    width: grid.width,
                    height: grid.height,
                });
            }
            if grid.get(p) {
                return Err(LabyrinthError::BlockedCell { what, row: p.row, col: p.col });
            }
        }
        Ok(Self { grid, start, goal })
    }

    /// Obstacle-free `width` x `height` layout with corner start and goal.
    pub fn open(width: usize, height: usize) -> Self {
        Self {
            grid: Grid::filled(width, height, false),
            start: Position::new(0, 0),
            goal: Position::new(height - 1, width - 1),
        }
    }

    pub fn width(&self) -> usize {
        self.grid.width
    }

    pub fn height(&self) -> usize {
        self.grid.height
    }

    pub fn cell_count(&self) -> usize {
        self.grid.len()
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn start(&self) -> Position {
        self.start
    }

    pub fn goal(&self) -> Position {
        self.goal
    }

    pub fn obstacle_count(&self) -> usize {
        self.grid.obstacle_count()
    }

    pub fn in_bounds(&self, p: Position) -> bool {
        p.row < self.height() && p.col < self.width()
    }

    pub fn is_obstacle(&self, p: Position) -> bool {
        self.grid.get(p)
    }

    pub fn is_pathway(&self, p: Position) -> bool {
        self.in_bounds(p) && !self.grid.get(p)
    }

    pub fn index(&self, p: Position) -> usize {
        self.grid.index(p)
    }

    pub fn position(&self, index: usize) -> Position {
        self.grid.position(index)
    }

    pub fn pathways(&self) -> impl Iterator<Item = Position> + '_ {
        (0..self.cell_count())
            .map(|i| self.position(i))
            .filter(|&p| !self.is_obstacle(p))
    }

    /// In-bounds pathway neighbours in the four compass directions.
    pub fn neighbours(&self, p: Position) -> impl Iterator<Item = Position> + '_ {
        const OFFSETS: [(isize, isize); 4] = [(1, 0), (-1, 0), (0, -1), (0, 1)];
        OFFSETS.iter().filter_map(move |&(dr, dc)| {
            let r = p.row as isize + dr;
            let c = p.col as isize + dc;
            if self.grid.contains(r, c) && !self.grid.get(Position::new(r as usize, c as usize)) {
                Some(Position::new(r as usize, c as usize))
            } else {
                None
            }
        })
    }

    /// Short stable identifier derived from the layout.
    pub fn id(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.width() as u64).to_le_bytes());
        h.update((self.height() as u64).to_le_bytes());
        h.update(self.to_text().as_bytes());
        hex::encode(&h.finalize()[..8])
    }

    /// One line per row, top row first: `#` obstacle, `.` pathway, `S`
    /// start, `G` goal.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity((self.width() + 1) * self.height());
        for row in (0..self.height()).rev() {
            for col in 0..self.width() {
                let p = Position::new(row, col);
                out.push(if p == self.start {
                    'S'
                } else if p == self.goal {
                    'G'
                } else if self.grid.get(p) {
                    '#'
                } else {
                    '.'
                });
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, LabyrinthError> {
        let lines: Vec<&str> = text.lines().map(str::trim_end).filter(|l| !l.is_empty()).collect();
        let height = lines.len();
        if height == 0 {
            return Err(LabyrinthError::Parse("no rows".into()));
        }
        let width = lines[0].chars().count();
        let mut cells = vec![false; width * height];
        let (mut start, mut goal) = (None, None);
        for (line_no, line) in lines.iter().enumerate() {
            if line.chars().count() != width {
                return Err(LabyrinthError::Parse(format!(
                    "row {} has {} cells, expected {width}",
                    line_no + 1,
                    line.chars().count()
                )));
            }
            let row = height - 1 - line_no;
            for (col, ch) in line.chars().enumerate() {
                let p = Position::new(row, col);
                match ch {
                    '#' => cells[row * width + col] = true,
                    '.' => {}
                    'S' if start.is_none() => start = Some(p),
                    'G' if goal.is_none() => goal = Some(p),
                    'S' | 'G' => return Err(LabyrinthError::Parse(format!("duplicate '{ch}'"))),
                    other => return Err(LabyrinthError::Parse(format!("unexpected character {other:?}"))),
                }
            }
        }
        let start = start.ok_or_else(|| LabyrinthError::Parse("missing 'S'".into()))?;
        let goal = goal.ok_or_else(|| LabyrinthError::Parse("missing 'G'".into()))?;
        Labyrinth::new(Grid { width, height, cells }, start, goal)
    }
}

/// Shortest 4-neighbour distances from a source cell; `None` = unreachable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistanceMap {
    width: usize,
    dist: Vec<Option<u32>>,
}

impl DistanceMap {
    pub fn get(&self, p: Position) -> Option<u32> {
        self.dist[p.row * self.width + p.col]
    }

    pub fn as_slice(&self) -> &[Option<u32>] {
        &self.dist
    }
}

/// Dijkstra with unit edge weights. Queue ties are broken by row-major cell
/// index.
pub fn dijkstra(lab: &Labyrinth, source: Position) -> Result<DistanceMap, LabyrinthError> {
    if !lab.in_bounds(source) {
        return Err(LabyrinthError::OutOfBounds {
            row: source.row,
            col: source.col,
            width: lab.width(),
            height: lab.height(),
        });
    }
    if lab.is_obstacle(source) {
        return Err(LabyrinthError::BlockedCell {
            what: "source",
            row: source.row,
            col: source.col,
        });
    }
    let mut dist: Vec<Option<u32>> = vec![None; lab.cell_count()];
    let mut done = vec![false; lab.cell_count()];
    let mut queue = BinaryHeap::new();
    dist[lab.index(source)] = Some(0);
    queue.push(Reverse((0u32, lab.index(source))));
    while let Some(Reverse((d, u))) = queue.pop() {
        if done[u] {
            continue;
        }
        done[u] = true;
        for v in lab.neighbours(lab.position(u)) {
            let vi = lab.index(v);
            let candidate = d + 1;
            if dist[vi].is_none_or(|dv| candidate < dv) {
                dist[vi] = Some(candidate);
                queue.push(Reverse((candidate, vi)));
            }
        }
    }
    Ok(DistanceMap { width: lab.width(), dist })
}

/// Generated layout plus the number of candidates drawn to find it.
#[derive(Debug, Clone)]
pub struct Generated {
    pub labyrinth: Labyrinth,
    pub attempts: u32,
}

/// Rejection-samples automaton layouts until one satisfies the obstacle
/// range and the start-to-goal distance requirement.
pub fn generate<R: Rng + ?Sized>(config: &GenerateConfig, rng: &mut R) -> Result<Generated, LabyrinthError> {
    config.rules.validate()?;
    for attempt in 1..=config.retry_cap {
        let mut grid = Grid::filled(config.width, config.height, false);
        for cell in grid.cells.iter_mut() {
            *cell = rng.random::<f64>() < config.rules.p_init_obstacle;
        }
        for _ in 0..config.rules.steps {
            grid = ca_step(&grid, &config.rules, rng);
        }
        grid.set(config.start, false);
        grid.set(config.goal, false);
        let count = grid.obstacle_count();
        if count < config.min_obstacles || count > config.max_obstacles {
            continue;
        }
        let lab = Labyrinth::new(grid, config.start, config.goal)?;
        let d = dijkstra(&lab, lab.start)?.get(lab.goal);
        let accepted = match (config.path_length, d) {
            (_, None) => false,
            (None, Some(_)) => true,
            (Some(want), Some(got)) => want == got,
        };
        if accepted {
            return Ok(Generated { labyrinth: lab, attempts: attempt });
        }
    }
    Err(LabyrinthError::RetryCapExceeded(config.retry_cap))
}

/// Structured maze record: layout plus the provenance needed to regenerate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MazeRecord {
    pub version: u32,
    pub id: String,
    pub width: usize,
    pub height: usize,
    /// Text rows, top row first, as in [`Labyrinth::to_text`].
    pub rows: Vec<String>,
    pub start: Position,
    pub goal: Position,
    pub obstacle_count: usize,
    pub seed: Option<u64>,
    pub rules: Option<CaRules>,
}

impl MazeRecord {
    pub const VERSION: u32 = 1;

    pub fn new(lab: &Labyrinth, seed: Option<u64>, rules: Option<CaRules>) -> Self {
        Self {
            version: Self::VERSION,
            id: lab.id(),
            width: lab.width(),
            height: lab.height(),
            rows: lab.to_text().lines().map(str::to_owned).collect(),
            start: lab.start(),
            goal: lab.goal(),
            obstacle_count: lab.obstacle_count(),
            seed,
            rules,
        }
    }

    pub fn labyrinth(&self) -> Result<Labyrinth, LabyrinthError> {
        let lab = Labyrinth::from_text(&self.rows.join("\n"))?;
        if lab.width() != self.width || lab.height() != self.height {
            return Err(LabyrinthError::Parse("dimensions disagree with rows".into()));
        }
        if lab.start() != self.start || lab.goal() != self.goal {
            return Err(LabyrinthError::Parse("start/goal disagree with rows".into()));
        }
        Ok(lab)
    }
}
