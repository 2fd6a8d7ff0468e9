use std::collections::VecDeque;

use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::SNAKE_CHANNELS;
use crate::rng::{tag, Rng, Stream};

pub const MAX_EPISODE_STEPS: usize = 5000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Up, Direction::Down, Direction::Left, Direction::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Direction {
        Self::ALL[i]
    }

    pub fn opposite(self) -> Direction {
        match self {
            Direction::Up => Direction::Down,
            Direction::Down => Direction::Up,
            Direction::Left => Direction::Right,
            Direction::Right => Direction::Left,
        }
    }

    fn delta(self) -> (isize, isize) {
        match self {
            Direction::Up => (-1, 0),
            Direction::Down => (1, 0),
            Direction::Left => (0, -1),
            Direction::Right => (0, 1),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SnakeConfig {
    pub side: usize,
    pub max_steps: usize,
}

impl Default for SnakeConfig {
    fn default() -> Self {
        SnakeConfig { side: 12, max_steps: MAX_EPISODE_STEPS }
    }
}

/// Result of one environment tick.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
}

pub type Cell = (usize, usize);

#[derive(Clone, Debug, PartialEq)]
pub struct SnakeState {
    side: usize,
    max_steps: usize,
    /// Head first.
    body: VecDeque<Cell>,
    occupied: Vec<bool>,
    fruit: Option<Cell>,
    heading: Direction,
    step_count: usize,
    done: bool,
    fruits: usize,
}

impl SnakeState {
    /// Length-1 snake on a uniformly random cell, fruit on a uniformly random
    /// other cell, random heading.
    pub fn reset(cfg: SnakeConfig, rng: &mut Rng) -> SnakeState {
        let side = cfg.side;
        let cells = side * side;
        let head_idx = rng.random_range(0..cells);
        let mut fruit_idx = rng.random_range(0..cells - 1);
        if fruit_idx >= head_idx {
            fruit_idx += 1;
        }
        let heading = Direction::from_index(rng.random_range(0..4));
        let mut occupied = vec![false; cells];
        occupied[head_idx] = true;
        SnakeState {
            side,
            max_steps: cfg.max_steps,
            body: VecDeque::from([(head_idx / side, head_idx % side)]),
            occupied,
            fruit: Some((fruit_idx / side, fruit_idx % side)),
            heading,
            step_count: 0,
            done: false,
            fruits: 0,
        }
    }

    /// Builds a state from explicit cells (head first). Used for scripted scenarios.
    pub fn from_parts(cfg: SnakeConfig, body: Vec<Cell>, fruit: Cell, heading: Direction) -> Result<SnakeState> {
        let side = cfg.side;
        let mut occupied = vec![false; side * side];
        for &(r, c) in &body {
            if r >= side || c >= side || occupied[r * side + c] {
                return Err(Error::config("snake body cells must be distinct and on the board"));
            }
            occupied[r * side + c] = true;
        }
        if body.is_empty() || fruit.0 >= side || fruit.1 >= side || occupied[fruit.0 * side + fruit.1] {
            return Err(Error::config("fruit must be on a free cell of a non-empty board"));
        }
        Ok(SnakeState {
            side,
            max_steps: cfg.max_steps,
            body: body.into(),
            occupied,
            fruit: Some(fruit),
            heading,
            step_count: 0,
            done: false,
            fruits: 0,
        })
    }

    pub fn body(&self) -> &VecDeque<Cell> {
        &self.body
    }

    pub fn head(&self) -> Cell {
        self.body[0]
    }

    pub fn fruit(&self) -> Option<Cell> {
        self.fruit
    }

    pub fn heading(&self) -> Direction {
        self.heading
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn fruits_eaten(&self) -> usize {
        self.fruits
    }

    pub fn side(&self) -> usize {
        self.side
    }

    /// Advance one tick. Reversing onto the neck continues straight; the cell
    /// the tail vacates this tick may be entered unless the snake grows.
    pub fn step(&mut self, action: Direction, rng: &mut Rng) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::Usage("cannot step a finished snake episode".into()));
        }
        let dir = if self.body.len() > 1 && action == self.heading.opposite() { self.heading } else { action };
        self.heading = dir;
        self.step_count += 1;
        let (dr, dc) = dir.delta();
        let (hr, hc) = self.head();
        let nr = hr as isize + dr;
        let nc = hc as isize + dc;
        if nr < 0 || nc < 0 || nr >= self.side as isize || nc >= self.side as isize {
            self.done = true;
            return Ok(StepOutcome { reward: 0.0, done: true });
        }
        let next = (nr as usize, nc as usize);
        let idx = next.0 * self.side + next.1;
        let eats = self.fruit == Some(next);
        let tail = *self.body.back().expect("non-empty body");
        let hits_body = self.occupied[idx] && (eats || next != tail);
        if hits_body {
            self.done = true;
            return Ok(StepOutcome { reward: 0.0, done: true });
        }
        if !eats {
            let t = self.body.pop_back().expect("non-empty body");
            self.occupied[t.0 * self.side + t.1] = false;
        }
        self.body.push_front(next);
        self.occupied[idx] = true;

        let mut reward = 0.0;
        if eats {
            reward = 1.0;
            self.fruits += 1;
            self.fruit = None;
            let free: Vec<usize> = (0..self.occupied.len()).filter(|&i| !self.occupied[i]).collect();
            if free.is_empty() {
                self.done = true;
            } else {
                let k = free[rng.random_range(0..free.len())];
                self.fruit = Some((k / self.side, k % self.side));
            }
        }
        if self.step_count >= self.max_steps {
            self.done = true;
        }
        Ok(StepOutcome { reward, done: self.done })
    }

    pub fn obs_len(&self) -> usize {
        self.side * self.side * SNAKE_CHANNELS
    }

    /// Channels (last axis): body, head, tail, fruit, row-major cell index / (side² − 1).
    pub fn write_observation(&self, out: &mut [f64]) {
        let s = self.side;
        let denom = (s * s - 1) as f64;
        for (i, px) in out.chunks_exact_mut(SNAKE_CHANNELS).enumerate() {
            px[0] = if self.occupied[i] { 1.0 } else { 0.0 };
            px[1] = 0.0;
            px[2] = 0.0;
            px[3] = 0.0;
            px[4] = i as f64 / denom;
        }
        let cell = |c: Cell| (c.0 * s + c.1) * SNAKE_CHANNELS;
        out[cell(self.head()) + 1] = 1.0;
        out[cell(*self.body.back().expect("non-empty body")) + 2] = 1.0;
        if let Some(f) = self.fruit {
            out[cell(f) + 3] = 1.0;
        }
    }

    pub fn observation(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.obs_len()];
        self.write_observation(&mut v);
        v
    }

    /// Checks the live-state invariants; returns a description of the first violation.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        if self.step_count > self.max_steps {
            return Err(format!("step count {} exceeds {}", self.step_count, self.max_steps));
        }
        if self.done {
            return Ok(());
        }
        let mut seen = vec![false; self.side * self.side];
        for &(r, c) in &self.body {
            if r >= self.side || c >= self.side {
                return Err(format!("body cell ({r},{c}) off board"));
            }
            if seen[r * self.side + c] {
                return Err(format!("body cell ({r},{c}) repeated"));
            }
            seen[r * self.side + c] = true;
        }
        if seen != self.occupied {
            return Err("occupancy grid out of sync with body".into());
        }
        match self.fruit {
            Some((r, c)) if seen[r * self.side + c] => Err("fruit on the body".into()),
            None => Err("no fruit on a live board".into()),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug)]
struct Slot {
    state: SnakeState,
    rng: Rng,
    instance: u64,
    episode: u64,
    episode_return: f64,
}

/// A batch of independent Snake games that reset automatically.
///
/// Each instance draws fruit and resets from its own stream,
/// `master → (instance, episode)`, so rollouts are identical for any number
/// of worker threads.
#[derive(Clone, Debug)]
pub struct SnakeVecEnv {
    cfg: SnakeConfig,
    master: Stream,
    slots: Vec<Slot>,
    completed: Vec<f64>,
}

impl SnakeVecEnv {
    pub fn new(cfg: SnakeConfig, n: usize, master: Stream) -> SnakeVecEnv {
        let slots = (0..n as u64)
            .map(|instance| {
                let mut rng = master.path(&[tag::ENV, instance, tag::EPISODE, 0]).rng();
                let state = SnakeState::reset(cfg, &mut rng);
                Slot { state, rng, instance, episode: 0, episode_return: 0.0 }
            })
            .collect();
        SnakeVecEnv { cfg, master, slots, completed: Vec::new() }
    }

    /// Copy of the current boards whose future randomness comes from `stream`
    /// instead of this environment's own streams.
    pub fn fork(&self, stream: Stream) -> SnakeVecEnv {
        let mut out = self.clone();
        out.completed.clear();
        out.reseed(stream);
        out
    }

    /// Redirects all future randomness of these boards to `stream`.
    pub fn reseed(&mut self, stream: Stream) {
        self.master = stream;
        for s in &mut self.slots {
            s.rng = stream.path(&[tag::ENV, s.instance, tag::EPISODE, s.episode]).rng();
        }
    }

    pub fn config(&self) -> SnakeConfig {
        self.cfg
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn states(&self) -> impl Iterator<Item = &SnakeState> {
        self.slots.iter().map(|s| &s.state)
    }

    pub fn obs_len(&self) -> usize {
        self.cfg.side * self.cfg.side * SNAKE_CHANNELS
    }

    /// Current observations of every instance, concatenated.
    pub fn observations(&self) -> Vec<f64> {
        let ol = self.obs_len();
        let mut out = vec![0.0; ol * self.slots.len()];
        out.par_chunks_mut(ol).zip(&self.slots).for_each(|(o, s)| s.state.write_observation(o));
        out
    }

    /// Steps every instance; finished games are reset in place.
    pub fn step(&mut self, actions: &[Direction]) -> Result<Vec<StepOutcome>> {
        if actions.len() != self.slots.len() {
            return Err(Error::config("one action per environment instance is required"));
        }
        let cfg = self.cfg;
        let master = self.master;
        let outcomes: Vec<(StepOutcome, Option<f64>)> = self
            .slots
            .par_iter_mut()
            .zip(actions)
            .map(|(slot, &a)| {
                let out = slot.state.step(a, &mut slot.rng)?;
                slot.episode_return += out.reward;
                let mut finished = None;
                if out.done {
                    finished = Some(slot.episode_return);
                    slot.episode += 1;
                    slot.episode_return = 0.0;
                    slot.rng = master.path(&[tag::ENV, slot.instance, tag::EPISODE, slot.episode]).rng();
                    slot.state = SnakeState::reset(cfg, &mut slot.rng);
                }
                Ok((out, finished))
            })
            .collect::<Result<_>>()?;
        let mut result = Vec::with_capacity(outcomes.len());
        for (o, f) in outcomes {
            if let Some(r) = f {
                self.completed.push(r);
            }
            result.push(o);
        }
        Ok(result)
    }

    /// Returns of episodes finished since the last call, in instance order per tick.
    pub fn take_completed_returns(&mut self) -> Vec<f64> {
        std::mem::take(&mut self.completed)
    }
}
