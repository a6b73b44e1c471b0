//! CleanUp-lite: a two-player grid with an orchard column whose apple
//! regrowth is suppressed by dirt accumulating in the river column.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const RIGHT: usize = 0;
pub const LEFT: usize = 1;
pub const UP: usize = 2;
pub const DOWN: usize = 3;
pub const ZAP: usize = 4;
pub const NOOP: usize = 5;
pub const N_ACTIONS: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleanupConfig {
    pub rows: usize,
    pub cols: usize,
    pub p_pollution: f64,
    /// Apple spawn probability is `1 - min(1, dirt / p_apple_threshold)`.
    pub p_apple_threshold: f64,
    pub p_zap: f64,
    pub t_zap: u32,
    pub zap_range: usize,
    pub initial_dirt: usize,
}

impl Default for CleanupConfig {
    fn default() -> Self {
        Self {
            rows: 5,
            cols: 4,
            p_pollution: 0.35,
            p_apple_threshold: 3.0,
            p_zap: 0.9,
            t_zap: 5,
            zap_range: 2,
            initial_dirt: 3,
        }
    }
}

impl CleanupConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols < 2 {
            return Err(Error::config(
                "cleanup.cols",
                "grid needs at least 1 row and 2 columns",
            ));
        }
        for (key, p) in [
            ("cleanup.p_pollution", self.p_pollution),
            ("cleanup.p_zap", self.p_zap),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(key, "probability must lie in [0, 1]"));
            }
        }
        if self.p_apple_threshold <= 0.0 {
            return Err(Error::config(
                "cleanup.p_apple_threshold",
                "must be positive",
            ));
        }
        if self.initial_dirt > self.rows {
            return Err(Error::config(
                "cleanup.initial_dirt",
                "exceeds river length",
            ));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn obs_dim(&self) -> usize {
        5 * self.cells() + 2
    }

    pub fn river(&self) -> usize {
        self.cols - 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cell {
    Empty,
    Apple,
    Dirt,
}

/// What happened during one step, for metrics and tests.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CleanupEvents {
    pub rewards: [f64; 2],
    pub harvested: [bool; 2],
    pub cleaned: [bool; 2],
    pub zap_attempted: [bool; 2],
    pub zap_hit: [bool; 2],
    /// Whether a river cell was free when the dirt draw happened.
    pub dirt_possible: bool,
    pub dirt_spawned: bool,
    /// Apple spawn probability used this step, if an orchard cell was free.
    pub apple_prob: Option<f64>,
    pub apple_spawned: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CleanupState {
    pub config: CleanupConfig,
    /// Row-major `rows x cols`.
    pub grid: Vec<Cell>,
    /// `(row, col)` per agent.
    pub pos: [(usize, usize); 2],
    /// Remaining frozen steps per agent.
    pub timers: [u32; 2],
    pub t: usize,
}

impl CleanupState {
    pub fn reset<R: Rng>(config: CleanupConfig, rng: &mut R) -> Self {
        let mut grid = vec![Cell::Empty; config.cells()];
        let river = config.river();
        for r in sample(rng, config.rows, config.initial_dirt).into_iter() {
            grid[r * config.cols + river] = Cell::Dirt;
        }
        let mut place = || (rng.gen_range(0..config.rows), rng.gen_range(0..config.cols));
        let pos = [place(), place()];
        Self {
            config,
            grid,
            pos,
            timers: [0; 2],
            t: 0,
        }
    }

    fn cell(&self, (r, c): (usize, usize)) -> Cell {
        self.grid[r * self.config.cols + c]
    }

    fn set(&mut self, (r, c): (usize, usize), v: Cell) {
        self.grid[r * self.config.cols + c] = v;
    }

    pub fn count(&self, kind: Cell) -> usize {
        self.grid.iter().filter(|&&c| c == kind).count()
    }

    pub fn frozen(&self, agent: usize) -> bool {
        self.timers[agent] > 0
    }

    /// Spawns one `kind` on a uniformly chosen free cell of column `col`.
    fn spawn<R: Rng>(&mut self, col: usize, kind: Cell, rng: &mut R) {
        let free: Vec<usize> = (0..self.config.rows)
            .filter(|&r| self.cell((r, col)) == Cell::Empty)
            .collect();
        let r = free[rng.gen_range(0..free.len())];
        self.set((r, col), kind);
    }

    fn has_free(&self, col: usize) -> bool {
        (0..self.config.rows).any(|r| self.cell((r, col)) == Cell::Empty)
    }

    /// Advances one step. Order: dirt spawn, apple spawn, harvest, clean,
    /// zap (agent 0 resolves first), movement, timer countdown.
    pub fn step<R: Rng>(
        &mut self,
        actions: [usize; 2],
        horizon: usize,
        rng: &mut R,
    ) -> (CleanupEvents, bool) {
        assert!(
            actions.iter().all(|&a| a < N_ACTIONS),
            "CleanUp action out of range"
        );
        let cfg = self.config;
        let mut ev = CleanupEvents::default();
        let frozen_at_start = [self.frozen(0), self.frozen(1)];

        let river = cfg.river();
        ev.dirt_possible = self.has_free(river);
        if ev.dirt_possible && rng.gen_bool(cfg.p_pollution) {
            self.spawn(river, Cell::Dirt, rng);
            ev.dirt_spawned = true;
        }

        if self.has_free(0) {
            let dirt = self.count(Cell::Dirt) as f64;
            let p = 1.0 - (dirt / cfg.p_apple_threshold).min(1.0);
            ev.apple_prob = Some(p);
            if p > 0.0 && rng.gen_bool(p) {
                self.spawn(0, Cell::Apple, rng);
                ev.apple_spawned = true;
            }
        }

        for i in 0..2 {
            if !self.frozen(i) && self.cell(self.pos[i]) == Cell::Apple {
                self.set(self.pos[i], Cell::Empty);
                ev.harvested[i] = true;
                ev.rewards[i] = 1.0;
            }
        }
        for i in 0..2 {
            if !self.frozen(i) && self.cell(self.pos[i]) == Cell::Dirt {
                self.set(self.pos[i], Cell::Empty);
                ev.cleaned[i] = true;
            }
        }

        for i in 0..2 {
            if actions[i] != ZAP || self.frozen(i) {
                continue;
            }
            ev.zap_attempted[i] = true;
            let j = 1 - i;
            let (a, b) = (self.pos[i], self.pos[j]);
            let dist = a.0.abs_diff(b.0).max(a.1.abs_diff(b.1));
            if dist <= cfg.zap_range && !self.frozen(j) && rng.gen_bool(cfg.p_zap) {
                self.timers[j] = cfg.t_zap;
                ev.zap_hit[i] = true;
            }
        }

        for i in 0..2 {
            if self.frozen(i) {
                continue;
            }
            let (r, c) = self.pos[i];
            self.pos[i] = match actions[i] {
                RIGHT if c + 1 < cfg.cols => (r, c + 1),
                LEFT if c > 0 => (r, c - 1),
                UP if r > 0 => (r - 1, c),
                DOWN if r + 1 < cfg.rows => (r + 1, c),
                _ => (r, c),
            };
        }

        // A freeze applied this step lasts for the following t_zap steps.
        for i in 0..2 {
            if frozen_at_start[i] {
                self.timers[i] -= 1;
            }
        }
        self.t += 1;
        (ev, self.t >= horizon)
    }

    /// Per-agent observation: own position, other's position, cell contents
    /// (empty/apple/dirt one-hot per cell), then own and other's frozen flag.
    pub fn observation(&self, agent: usize) -> Vec<f32> {
        let n = self.config.cells();
        let mut o = vec![0.0f32; self.config.obs_dim()];
        let idx = |(r, c): (usize, usize)| r * self.config.cols + c;
        o[idx(self.pos[agent])] = 1.0;
        o[n + idx(self.pos[1 - agent])] = 1.0;
        for (k, cell) in self.grid.iter().enumerate() {
            let class = match cell {
                Cell::Empty => 0,
                Cell::Apple => 1,
                Cell::Dirt => 2,
            };
            o[2 * n + 3 * k + class] = 1.0;
        }
        o[5 * n] = self.frozen(agent) as u8 as f32;
        o[5 * n + 1] = self.frozen(1 - agent) as u8 as f32;
        o
    }
}
