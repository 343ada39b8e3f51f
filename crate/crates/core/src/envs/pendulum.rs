use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_control, check_finite, wrap_angle, EnvState, Environment, StepResult, DT};
use crate::error::Result;

/// Torque-limited pendulum, θ = 0 upright.
#[derive(Debug, Clone)]
pub struct Pendulum {
    pub mass: f64,
    pub length: f64,
    pub gravity: f64,
    pub torque_gain: f64,
    pub damping: f64,
}

impl Default for Pendulum {
    fn default() -> Self {
        Self {
            mass: 1.0,
            length: 1.0,
            gravity: 9.81,
            torque_gain: 2.0,
            damping: 0.05,
        }
    }
}

impl Pendulum {
    pub fn angular_acceleration(&self, theta: f64, theta_dot: f64, u: f64) -> f64 {
        let ml2 = self.mass * self.length * self.length;
        (self.gravity / self.length) * theta.sin()
            + (self.torque_gain * u - self.damping * theta_dot) / ml2
    }

    /// Kinetic plus potential energy (zero potential at the pivot height).
    pub fn energy(&self, s: &EnvState) -> f64 {
        let (theta, theta_dot) = (s.x[0], s.x[1]);
        0.5 * self.mass * self.length * self.length * theta_dot * theta_dot
            + self.mass * self.gravity * self.length * theta.cos()
    }
}

impl Environment for Pendulum {
    fn name(&self) -> &'static str {
        "pendulum"
    }

    fn state_dim(&self) -> usize {
        2
    }

    fn obs_dim(&self) -> usize {
        3
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn reset(&self, seed: u64) -> EnvState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps: f64 = rng.gen_range(-0.05..0.05);
        let eps_dot: f64 = rng.gen_range(-0.05..0.05);
        EnvState {
            x: vec![wrap_angle(PI + eps), eps_dot],
            t: 0,
        }
    }

    fn step(&self, s: &EnvState, u: &[f64]) -> Result<StepResult> {
        check_control(self, u)?;
        check_finite(s, u)?;
        let u = u[0].clamp(-1.0, 1.0);
        let (theta, theta_dot) = (s.x[0], s.x[1]);
        let acc = self.angular_acceleration(theta, theta_dot, u);
        let theta_dot = theta_dot + DT * acc;
        let theta = wrap_angle(theta + DT * theta_dot);
        let next = EnvState {
            x: vec![theta, theta_dot],
            t: s.t + 1,
        };
        check_finite(&next, &[])?;
        Ok(StepResult {
            reward: (1.0 + theta.cos()) / 2.0,
            done: next.t >= self.max_steps(),
            terminal: false,
            next_state: next,
        })
    }

    fn observe(&self, s: &EnvState) -> Vec<f64> {
        vec![s.x[0].cos(), s.x[0].sin(), s.x[1]]
    }

    fn goal_observation(&self) -> Vec<f64> {
        vec![1.0, 0.0, 0.0]
    }
}
