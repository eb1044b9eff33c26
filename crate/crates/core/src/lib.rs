//! Langevin-driven self-assembly of Lennard-Jones particles with an
//! optimizable annealing temperature schedule.
//!
//! The crate covers:
//! - pair potential, forces, Hamiltonian, and energy-derived distance floor
//!   ([`potential`]);
//! - semi-implicit integration of the damped/driven dynamics ([`integrate`]);
//! - reproducible Brownian increments and initial-state sampling ([`noise`],
//!   [`init`]);
//! - temperature schedules with box/monotonicity constraints and exact
//!   projection ([`schedule`]);
//! - sample-average estimation of the expected terminal energy, its exact
//!   reverse-mode gradient, and projected gradient descent ([`optimize`]);
//! - noise-free convergence checks and the stochastic energy-balance identity
//!   ([`verify`]);
//! - CSV/JSON/SVG output ([`report`]).
//!
//! With the `parallel` feature (default) the sample and particle loops run on
//! rayon; results are reduced in a fixed order, so outputs are byte-identical
//! to the sequential fallback at any thread count.

pub mod error;
pub mod init;
pub mod integrate;
pub mod noise;
pub mod optimize;
pub(crate) mod par;
pub mod potential;
pub mod report;
pub mod schedule;
pub mod verify;

pub use error::{Error, Result};
pub use init::{sample_initial_state, sample_initial_states, InitialDistribution, VelocityDist};
pub use integrate::{
    rollout, rollout_noise_free, step_langevin, step_noise_free, ForceModel, TimeGrid,
    TrajectoryRecord,
};
pub use noise::{NoisePath, NoiseRealization};
pub use optimize::{
    evaluate_holdout, heating_coefficient, holdout_rollouts, holdout_trajectories,
    optimize_schedule, saa_gradient, saa_objective, HoldoutEstimate, ObjectiveForm,
    OptimizationReport, SaaProblem, SolverOptions,
};
pub use potential::{
    hamiltonian, lj_potential, pair_force, pairwise_distance_floor, total_forces, SystemParams,
    SystemState, Vec3,
};
pub use schedule::{
    clip_to_bounds, default_cooling_rate, newton_cooling_schedule, project_feasible,
    TemperatureSchedule,
};
pub use verify::{
    check_dissipation, check_distance_floor, check_energy_balance_stochastic, check_equilibrium,
    dissipation_identity_residual, ConvergenceReport, EnergyBalance,
};
