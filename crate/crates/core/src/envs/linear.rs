use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_control, check_finite, EnvState, Environment, StepResult};
use crate::error::Result;
use crate::ndmath::Mat;

/// Exactly linear plant `x' = A x + B u` with quadratic stage cost. Controls
/// are not clipped. Reward is `exp(−cost)` so it stays in (0, 1].
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub a: Mat,
    pub b: Mat,
    pub q_diag: Vec<f64>,
    pub r_diag: Vec<f64>,
    pub init_range: f64,
}

impl Default for LinearSystem {
    /// Discretised double integrator, dt = 0.1.
    fn default() -> Self {
        Self::new(
            Mat::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]),
            Mat::from_row_slice(2, 1, &[0.005, 0.1]),
        )
    }
}

impl LinearSystem {
    pub fn new(a: Mat, b: Mat) -> Self {
        let (n, m) = (a.nrows(), b.ncols());
        Self {
            a,
            b,
            q_diag: vec![1.0; n],
            r_diag: vec![1.0; m],
            init_range: 1.0,
        }
    }

    pub fn stage_cost(&self, x: &[f64], u: &[f64]) -> f64 {
        let qx: f64 = x.iter().zip(&self.q_diag).map(|(x, q)| q * x * x).sum();
        let ru: f64 = u.iter().zip(&self.r_diag).map(|(u, r)| r * u * u).sum();
        qx + ru
    }
}

impl Environment for LinearSystem {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn obs_dim(&self) -> usize {
        self.a.nrows()
    }

    fn control_dim(&self) -> usize {
        self.b.ncols()
    }

    fn reset(&self, seed: u64) -> EnvState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = self.init_range;
        EnvState {
            x: (0..self.state_dim()).map(|_| rng.gen_range(-r..=r)).collect(),
            t: 0,
        }
    }

    fn step(&self, s: &EnvState, u: &[f64]) -> Result<StepResult> {
        check_control(self, u)?;
        check_finite(s, u)?;
        let x = Mat::from_column_slice(s.x.len(), 1, &s.x);
        let uv = Mat::from_column_slice(u.len(), 1, u);
        let next = &self.a * x + &self.b * uv;
        let cost = self.stage_cost(&s.x, u);
        let next = EnvState {
            x: next.iter().cloned().collect(),
            t: s.t + 1,
        };
        check_finite(&next, &[])?;
        Ok(StepResult {
            reward: (-cost).exp(),
            done: next.t >= self.max_steps(),
            terminal: false,
            next_state: next,
        })
    }

    fn observe(&self, s: &EnvState) -> Vec<f64> {
        s.x.clone()
    }

    fn goal_observation(&self) -> Vec<f64> {
        vec![0.0; self.state_dim()]
    }
}
