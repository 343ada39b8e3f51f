//! Deterministic swing-up simulators and the episodic protocol the trainers
//! drive. Every environment is a stateless description; the evolving state
//! is an [`EnvState`] value owned by the caller.

mod cartpole;
mod linear;
mod pendulum;

pub use cartpole::CartPole;
pub use linear::LinearSystem;
pub use pendulum::Pendulum;

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::registry::Registry;

/// Integration step shared by the physical tasks.
pub const DT: f64 = 0.02;
/// Episode length in steps.
pub const EPISODE_STEPS: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    /// Physical state (pendulum: θ, θ̇; cart-pole: x, ẋ, θ, θ̇).
    pub x: Vec<f64>,
    /// Steps taken since reset.
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: EnvState,
    pub reward: f64,
    /// Episode over: time limit or physical termination.
    pub done: bool,
    /// Physical termination only (cart off the track). Time-limit ends are
    /// not terminal for bootstrapping.
    pub terminal: bool,
}

pub trait Environment: Send + Sync {
    fn name(&self) -> &'static str;

    fn state_dim(&self) -> usize;

    /// Length of the vector returned by [`Environment::observe`]; this is the
    /// encoder input width.
    fn obs_dim(&self) -> usize;

    fn control_dim(&self) -> usize;

    fn max_steps(&self) -> usize {
        EPISODE_STEPS
    }

    fn reset(&self, seed: u64) -> EnvState;

    fn step(&self, s: &EnvState, u: &[f64]) -> Result<StepResult>;

    /// Encoder input for a state. Angles are presented as (cos θ, sin θ) so
    /// the hanging configuration is not split across the ±π seam.
    fn observe(&self, s: &EnvState) -> Vec<f64>;

    /// Observation of the goal configuration, used for the latent reference.
    fn goal_observation(&self) -> Vec<f64>;
}

pub type EnvConstructor = fn() -> Box<dyn Environment>;

pub fn registry() -> Registry<EnvConstructor> {
    Registry::<EnvConstructor>::new("environment")
        .register("pendulum", || Box::new(Pendulum::default()))
        .register("cartpole", || Box::new(CartPole::default()))
        .register("linear", || Box::new(LinearSystem::default()))
}

pub fn make(name: &str) -> Result<Box<dyn Environment>> {
    Ok(registry().get(name)?())
}

/// Wraps an angle into (−π, π].
pub fn wrap_angle(theta: f64) -> f64 {
    let w = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

pub(crate) fn check_finite(s: &EnvState, u: &[f64]) -> Result<()> {
    if s.x.iter().chain(u).any(|v| !v.is_finite()) {
        return Err(Error::Simulation(format!(
            "non-finite state {:?} or control {:?}",
            s.x, u
        )));
    }
    Ok(())
}

pub(crate) fn check_control(env: &dyn Environment, u: &[f64]) -> Result<()> {
    if u.len() != env.control_dim() {
        return Err(Error::Dimension {
            op: "step",
            left: (env.control_dim(), 1),
            right: (u.len(), 1),
        });
    }
    Ok(())
}
