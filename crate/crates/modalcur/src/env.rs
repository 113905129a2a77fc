//! Sensor-placement decision environment.
//!
//! Levels are contiguous mode subsets with initial sensor positions; dynamics
//! move one sensor per step on the candidate grid with deterministic no-op
//! handling of blocked moves, and the reward is the FIM-determinant delta.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::modal::ModalModel;
use crate::reward::{FimContext, ModeRange, SensorConfig};
use crate::{Error, Result};

/// Fixed episode horizon.
pub const DEFAULT_HORIZON: usize = 200;

/// Grid move directions (4-neighbourhood; blocked moves act as "stay").
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::Up,
        Direction::Down,
        Direction::Left,
        Direction::Right,
    ];

    pub fn index(self) -> usize {
        match self {
            Direction::Up => 0,
            Direction::Down => 1,
            Direction::Left => 2,
            Direction::Right => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<Direction> {
        Self::ALL.get(i).copied()
    }
}

/// One agent action: which sensor to steer and where.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    pub sensor: usize,
    pub direction: Direction,
}

/// Lattice view of the candidate node set, used for neighbour lookups.
#[derive(Debug, Clone)]
pub struct Grid {
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// `lattice[ix * ys.len() + iy]` is the node at that lattice point.
    lattice: Vec<Option<usize>>,
    node_cell: Vec<(usize, usize)>,
}

impl Grid {
    pub fn new(model: &ModalModel) -> Result<Grid> {
        let tol = 1e-9;
        let mut xs: Vec<f64> = model.node_coords.iter().map(|c| c.0).collect();
        let mut ys: Vec<f64> = model.node_coords.iter().map(|c| c.1).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ys.sort_by(|a, b| a.partial_cmp(b).unwrap());
        xs.dedup_by(|a, b| (*a - *b).abs() <= tol);
        ys.dedup_by(|a, b| (*a - *b).abs() <= tol);
        let find = |v: &[f64], x: f64| -> Result<usize> {
            v.iter()
                .position(|&u| (u - x).abs() <= tol)
                .ok_or_else(|| Error::InvalidArgument("node off the coordinate lattice".into()))
        };
        let mut lattice = vec![None; xs.len() * ys.len()];
        let mut node_cell = Vec::with_capacity(model.n_nodes());
        for (node, &(x, y)) in model.node_coords.iter().enumerate() {
            let ix = find(&xs, x)?;
            let iy = find(&ys, y)?;
            lattice[ix * ys.len() + iy] = Some(node);
            node_cell.push((ix, iy));
        }
        Ok(Grid {
            xs,
            ys,
            lattice,
            node_cell,
        })
    }

    pub fn n_cols(&self) -> usize {
        self.xs.len()
    }

    pub fn n_rows(&self) -> usize {
        self.ys.len()
    }

    pub fn node_at(&self, ix: usize, iy: usize) -> Option<usize> {
        if ix < self.xs.len() && iy < self.ys.len() {
            self.lattice[ix * self.ys.len() + iy]
        } else {
            None
        }
    }

    pub fn cell_of(&self, node: usize) -> (usize, usize) {
        self.node_cell[node]
    }

    /// Neighbouring node in the given direction, if inside the lattice.
    pub fn neighbour(&self, node: usize, dir: Direction) -> Option<usize> {
        let (ix, iy) = self.node_cell[node];
        let (nx, ny) = match dir {
            Direction::Up => (ix, iy.checked_add(1)?),
            Direction::Down => (ix, iy.checked_sub(1)?),
            Direction::Left => (ix.checked_sub(1)?, iy),
            Direction::Right => (ix.checked_add(1)?, iy),
        };
        self.node_at(nx, ny)
    }
}

/// One environment level: a mode subset plus initial sensor positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvLevel {
    pub theta: ModeRange,
    pub init_config: SensorConfig,
    /// Position in the full enumerated level set; mutants keep their
    /// parent's index (and hence its one-hot identity).
    pub level_index: usize,
    /// Size of the full level set (one-hot width).
    pub n_levels: usize,
    /// Level index of the parent, for mutated variants.
    pub parent_index: Option<usize>,
    /// Seed of the mutation that produced this variant (0 for base levels).
    pub seed: u64,
}

impl EnvLevel {
    pub fn onehot(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.n_levels];
        v[self.level_index] = 1.0;
        v
    }
}

/// All contiguous mode subsets of `1..=n_modes`, ordered by
/// (subsequence length, start mode).
pub fn enumerate_levels(n_modes: usize) -> Vec<ModeRange> {
    let mut out = Vec::with_capacity(n_modes * (n_modes + 1) / 2);
    for len in 1..=n_modes {
        for start in 1..=(n_modes - len + 1) {
            out.push(ModeRange::new(start, start + len - 1).unwrap());
        }
    }
    out
}

/// Default initial placement: sensors evenly spaced along the grid mid-row,
/// starting at the column adjacent to the clamp.
pub fn default_init_config(
    model: &ModalModel,
    grid: &Grid,
    n_sensors: usize,
) -> Result<SensorConfig> {
    let iy = grid.n_rows() / 2;
    let mut free_cols: Vec<usize> = Vec::new();
    for ix in 0..grid.n_cols() {
        if let Some(node) = grid.node_at(ix, iy) {
            if model.placement_mask[node] {
                free_cols.push(ix);
            }
        }
    }
    if free_cols.len() < n_sensors {
        return Err(Error::InvalidArgument(format!(
            "mid-row has {} free cells for {} sensors",
            free_cols.len(),
            n_sensors
        )));
    }
    let mut cells = Vec::with_capacity(n_sensors);
    for k in 0..n_sensors {
        let pos = if n_sensors == 1 {
            0
        } else {
            (k * (free_cols.len() - 1)) / (n_sensors - 1)
        };
        cells.push(grid.node_at(free_cols[pos], iy).unwrap());
    }
    SensorConfig::new(cells, model, n_sensors)
}

/// Build the full level set over the enumerated mode subsets with a shared
/// default initial configuration.
pub fn build_levels(model: &ModalModel, n_modes: usize, n_sensors: usize) -> Result<Vec<EnvLevel>> {
    let grid = Grid::new(model)?;
    let init = default_init_config(model, &grid, n_sensors)?;
    let thetas = enumerate_levels(n_modes);
    let n_levels = thetas.len();
    Ok(thetas
        .into_iter()
        .enumerate()
        .map(|(i, theta)| EnvLevel {
            theta,
            init_config: init.clone(),
            level_index: i,
            n_levels,
            parent_index: None,
            seed: 0,
        })
        .collect())
}

/// Sample `ceil(fraction * n)` levels without replacement as the training
/// set; both halves keep the enumeration order.
pub fn split_train_eval(
    levels: &[EnvLevel],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<EnvLevel>, Vec<EnvLevel>)> {
    if levels.is_empty() {
        return Err(Error::InvalidArgument("empty level set".into()));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split fraction must be in (0, 1], got {fraction}"
        )));
    }
    let n_train = ((fraction * levels.len() as f64).round() as usize)
        .clamp(1, levels.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..levels.len()).collect();
    idx.shuffle(&mut rng);
    let mut chosen: Vec<usize> = idx.into_iter().take(n_train).collect();
    chosen.sort_unstable();
    let train: Vec<EnvLevel> = chosen.iter().map(|&i| levels[i].clone()).collect();
    let holdout: Vec<EnvLevel> = (0..levels.len())
        .filter(|i| !chosen.contains(i))
        .map(|i| levels[i].clone())
        .collect();
    Ok((train, holdout))
}

/// Relocate `n_edits` randomly chosen sensors to random free cells. The
/// child keeps the parent's level identity.
pub fn mutate_level(
    level: &EnvLevel,
    n_edits: usize,
    seed: u64,
    model: &ModalModel,
) -> Result<EnvLevel> {
    let n_sensors = level.init_config.len();
    if n_edits == 0 || n_edits > n_sensors {
        return Err(Error::InvalidArgument(format!(
            "n_edits = {n_edits} must be in 1..={n_sensors}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sensors: Vec<usize> = (0..n_sensors).collect();
    sensors.shuffle(&mut rng);
    sensors.truncate(n_edits);

    let mut cells: Vec<usize> = level.init_config.cells().to_vec();
    for &s in &sensors {
        let occupied: std::collections::HashSet<usize> = cells
            .iter()
            .enumerate()
            .filter_map(|(i, &c)| (i != s).then_some(c))
            .collect();
        let free: Vec<usize> = model
            .candidate_indices()
            .into_iter()
            .filter(|c| !occupied.contains(c))
            .collect();
        if free.is_empty() {
            return Err(Error::NoFreeCells);
        }
        cells[s] = free[rng.random_range(0..free.len())];
    }
    Ok(EnvLevel {
        theta: level.theta,
        init_config: SensorConfig::new(cells, model, n_sensors)?,
        level_index: level.level_index,
        n_levels: level.n_levels,
        parent_index: Some(level.level_index),
        seed,
    })
}

/// Observation: grid occupancy concatenated with the level's one-hot ID.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub occupancy: Vec<f64>,
    pub level_id: Vec<f64>,
}

impl Observation {
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.occupancy.len() + self.level_id.len());
        v.extend_from_slice(&self.occupancy);
        v.extend_from_slice(&self.level_id);
        v
    }

    pub fn len(&self) -> usize {
        self.occupancy.len() + self.level_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One environment instance. Shares its immutable `FimContext` with other
/// instances of the same level family.
pub struct SensingEnv {
    ctx: Arc<FimContext>,
    grid: Arc<Grid>,
    level: EnvLevel,
    horizon: usize,
    config: SensorConfig,
    prev_det: f64,
    step_count: usize,
    started: bool,
}

impl SensingEnv {
    pub fn new(ctx: Arc<FimContext>, grid: Arc<Grid>, level: EnvLevel, horizon: usize) -> Self {
        let config = level.init_config.clone();
        Self {
            ctx,
            grid,
            level,
            horizon,
            config,
            prev_det: 0.0,
            started: false,
            step_count: 0,
        }
    }

    pub fn level(&self) -> &EnvLevel {
        &self.level
    }

    pub fn config(&self) -> &SensorConfig {
        &self.config
    }

    pub fn current_det(&self) -> f64 {
        self.prev_det
    }

    pub fn n_sensors(&self) -> usize {
        self.config.len()
    }

    pub fn observation_len(&self) -> usize {
        self.ctx.model.n_nodes() + self.level.n_levels
    }

    fn observation(&self) -> Observation {
        let mut occupancy = vec![0.0; self.ctx.model.n_nodes()];
        for &c in self.config.cells() {
            occupancy[c] = 1.0;
        }
        Observation {
            occupancy,
            level_id: self.level.onehot(),
        }
    }

    /// Place sensors at the level's initial configuration and zero counters.
    pub fn reset(&mut self) -> Result<Observation> {
        if self.level.theta.last > self.ctx.model.n_modes()
            || self.level.theta != self.ctx.theta
        {
            return Err(Error::InvalidLevel(format!(
                "level theta {} does not match context theta {}",
                self.level.theta, self.ctx.theta
            )));
        }
        self.config = self.level.init_config.clone();
        self.prev_det = self.ctx.det_fim(&self.config)?;
        self.step_count = 0;
        self.started = true;
        Ok(self.observation())
    }

    /// Switch to a new level and reset.
    pub fn set_level(&mut self, level: EnvLevel) -> Result<Observation> {
        self.level = level;
        self.reset()
    }

    /// Current observation; the environment must have been reset.
    pub fn observe(&self) -> Result<Observation> {
        if !self.started {
            return Err(Error::InvalidArgument("observe before reset".into()));
        }
        Ok(self.observation())
    }

    /// Serialisable mid-episode state, sufficient to rebuild the instance.
    pub fn snapshot(&self) -> EnvSnapshot {
        EnvSnapshot {
            level: self.level.clone(),
            cells: self.config.cells().to_vec(),
            step_count: self.step_count,
            started: self.started,
            horizon: self.horizon,
        }
    }

    /// Rebuild an environment from a snapshot; the determinant of the
    /// restored configuration is recomputed.
    pub fn restore(
        ctx: Arc<FimContext>,
        grid: Arc<Grid>,
        snap: &EnvSnapshot,
    ) -> Result<SensingEnv> {
        let config = SensorConfig::new(
            snap.cells.clone(),
            &ctx.model,
            snap.cells.len(),
        )?;
        let prev_det = if snap.started {
            ctx.det_fim(&config)?
        } else {
            0.0
        };
        Ok(SensingEnv {
            ctx,
            grid,
            level: snap.level.clone(),
            horizon: snap.horizon,
            config,
            prev_det,
            step_count: snap.step_count,
            started: snap.started,
        })
    }

    /// Move one sensor one cell. Blocked moves (off-grid, clamped, occupied)
    /// leave the configuration unchanged with reward exactly zero.
    pub fn step(&mut self, action: Action) -> Result<(Observation, f64, bool)> {
        if !self.started {
            return Err(Error::InvalidArgument("step before reset".into()));
        }
        if self.step_count >= self.horizon {
            return Err(Error::EpisodeFinished);
        }
        if action.sensor >= self.config.len() {
            return Err(Error::InvalidArgument(format!(
                "sensor index {} out of range",
                action.sensor
            )));
        }
        let from = self.config.cells()[action.sensor];
        let target = self.grid.neighbour(from, action.direction);
        let reward = match target {
            Some(cell)
                if self.ctx.model.placement_mask[cell]
                    && !self.config.cells().contains(&cell) =>
            {
                let candidate = self.config.with_cell(action.sensor, cell);
                // A near-singular gathered covariance makes the move
                // undefined; treat it like a blocked move.
                match self.ctx.det_fim(&candidate) {
                    Ok(det) => {
                        let r = det - self.prev_det;
                        self.config = candidate;
                        self.prev_det = det;
                        r
                    }
                    Err(Error::DegenerateCovariance(_)) => 0.0,
                    Err(e) => return Err(e),
                }
            }
            _ => 0.0,
        };
        self.step_count += 1;
        let done = self.step_count >= self.horizon;
        Ok((self.observation(), reward, done))
    }
}

/// Persistable environment state (see [`SensingEnv::snapshot`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSnapshot {
    pub level: EnvLevel,
    pub cells: Vec<usize>,
    pub step_count: usize,
    pub started: bool,
    pub horizon: usize,
}

/// Write a reconstructable level manifest.
pub fn write_level_manifest(levels: &[EnvLevel], path: &Path) -> Result<()> {
    let mut out = String::new();
    let n_levels = levels.first().map_or(0, |l| l.n_levels);
    writeln!(out, "levels-v1 {} {}", levels.len(), n_levels).unwrap();
    for l in levels {
        let cells = l
            .init_config
            .cells()
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let parent = l
            .parent_index
            .map_or("-".to_string(), |p| p.to_string());
        writeln!(
            out,
            "{} {}-{} {} {} {}",
            l.level_index, l.theta.first, l.theta.last, cells, parent, l.seed
        )
        .unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Read a manifest written by [`write_level_manifest`].
pub fn read_level_manifest(path: &Path, model: &ModalModel) -> Result<Vec<EnvLevel>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::InvalidLevel("empty manifest".into()))?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() != 3 || toks[0] != "levels-v1" {
        return Err(Error::InvalidLevel(format!("bad manifest header {header:?}")));
    }
    let n_levels: usize = toks[2]
        .parse()
        .map_err(|_| Error::InvalidLevel("bad level count".into()))?;
    let mut out = Vec::new();
    for line in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 5 {
            return Err(Error::InvalidLevel(format!("bad manifest line {line:?}")));
        }
        let level_index: usize = toks[0]
            .parse()
            .map_err(|_| Error::InvalidLevel("bad level index".into()))?;
        let (first, last) = toks[1]
            .split_once('-')
            .ok_or_else(|| Error::InvalidLevel("bad theta".into()))?;
        let theta = ModeRange::new(
            first.parse().map_err(|_| Error::InvalidLevel("bad theta".into()))?,
            last.parse().map_err(|_| Error::InvalidLevel("bad theta".into()))?,
        )?;
        let cells: Vec<usize> = toks[2]
            .split(',')
            .map(|c| c.parse().map_err(|_| Error::InvalidLevel("bad cell".into())))
            .collect::<Result<_>>()?;
        let n_sensors = cells.len();
        let parent_index = if toks[3] == "-" {
            None
        } else {
            Some(
                toks[3]
                    .parse()
                    .map_err(|_| Error::InvalidLevel("bad parent".into()))?,
            )
        };
        let seed: u64 = toks[4]
            .parse()
            .map_err(|_| Error::InvalidLevel("bad seed".into()))?;
        out.push(EnvLevel {
            theta,
            init_config: SensorConfig::new(cells, model, n_sensors)?,
            level_index,
            n_levels,
            parent_index,
            seed,
        });
    }
    Ok(out)
}
