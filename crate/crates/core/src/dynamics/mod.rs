//! Forward models for twin experiments.

mod lorenz96;
mod shallow_water;

pub use self::lorenz96::{lorenz96_rhs, lorenz96_step, Integrator, Lorenz96Config};
pub use self::shallow_water::{
    make_initial_conditions, read_snapshot, shallow_water_step, write_snapshot, InitialCondition, ShallowWaterConfig,
    ShallowWaterState, SW_VARIABLES,
};

use crate::error::Result;

/// A deterministic discrete-time model acting on flat state vectors.
pub trait Model: Send + Sync {
    fn state_len(&self) -> usize;

    /// Model time advanced by one step.
    fn dt(&self) -> f64;

    fn step(&self, state: &mut [f64]) -> Result<()>;

    fn advance(&self, state: &mut [f64], steps: usize) -> Result<()> {
        for _ in 0..steps {
            self.step(state)?;
        }
        Ok(())
    }
}
