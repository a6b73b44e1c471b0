//! Finite iterated prisoner's dilemma with one-step memory observations.

use serde::{Deserialize, Serialize};

pub const C: usize = 0;
pub const D: usize = 1;
pub const OBS_DIM: usize = 5;
pub const N_ACTIONS: usize = 2;

/// State labels in agent-1 order; index 0 is the start state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IpdLabel {
    S0,
    CC,
    CD,
    DC,
    DD,
}

impl IpdLabel {
    pub fn index(self) -> usize {
        self as usize
    }

    fn from_actions(own: usize, other: usize) -> Self {
        match (own, other) {
            (C, C) => IpdLabel::CC,
            (C, D) => IpdLabel::CD,
            (D, C) => IpdLabel::DC,
            _ => IpdLabel::DD,
        }
    }
}

/// Per-round payoffs `(own, other)` indexed by `[own action][other action]`.
pub const PAYOFF: [[(f64, f64); 2]; 2] = [[(1.0, 1.0), (-1.0, 2.0)], [(2.0, -1.0), (0.0, 0.0)]];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IpdState {
    pub label: IpdLabel,
    pub t: usize,
}

impl IpdState {
    pub fn reset() -> Self {
        Self {
            label: IpdLabel::S0,
            t: 0,
        }
    }

    /// Observation labels as seen by agents 1 and 2 (pair ordered own-first).
    pub fn views(&self) -> [IpdLabel; 2] {
        let mirrored = match self.label {
            IpdLabel::CD => IpdLabel::DC,
            IpdLabel::DC => IpdLabel::CD,
            l => l,
        };
        [self.label, mirrored]
    }

    pub fn observations(&self) -> [[f32; OBS_DIM]; 2] {
        self.views().map(|l| {
            let mut o = [0.0; OBS_DIM];
            o[l.index()] = 1.0;
            o
        })
    }

    /// Advances one round; returns rewards and whether the episode ended.
    pub fn step(&mut self, a1: usize, a2: usize, horizon: usize) -> ([f64; 2], bool) {
        assert!(a1 < N_ACTIONS && a2 < N_ACTIONS, "IPD action out of range");
        let (r1, r2) = PAYOFF[a1][a2];
        self.label = IpdLabel::from_actions(a1, a2);
        self.t += 1;
        ([r1, r2], self.t >= horizon)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_rewards_and_views() {
        let mut s = IpdState::reset();
        let (r, _) = s.step(C, D, 10);
        assert_eq!(r, [-1.0, 2.0]);
        assert_eq!(s.views(), [IpdLabel::CD, IpdLabel::DC]);
        let o = s.observations();
        assert_eq!(o[0][IpdLabel::CD.index()], 1.0);
        assert_eq!(o[1][IpdLabel::DC.index()], 1.0);

        let (r, _) = s.step(D, D, 10);
        assert_eq!(r, [0.0, 0.0]);
        let (r, _) = s.step(C, C, 10);
        assert_eq!(r, [1.0, 1.0]);
        assert_eq!(s.views(), [IpdLabel::CC, IpdLabel::CC]);
    }

    #[test]
    fn done_at_horizon_and_never_back_to_start() {
        let mut s = IpdState::reset();
        for t in 0..3 {
            let (_, done) = s.step(t % 2, 1 - t % 2, 3);
            assert_ne!(s.label, IpdLabel::S0);
            assert_eq!(done, t == 2);
        }
    }
}
