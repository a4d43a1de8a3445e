//! Value functions for martingale optimal transport with optimal-stopping
//! payoffs, on terminal laws with finitely many atoms.
//!
//! The law of the terminal value is an atomic measure; its conditional law
//! evolves as a measure-valued martingale whose atom weights follow driftless
//! controlled SDEs on the probability simplex. The value of the transport
//! problem is the concave envelope of the modified cost on that simplex,
//! solved face by face with the boundary of each face pinned to the solution
//! on its sub-faces.
//!
//! The crate provides:
//!
//! * [`measures`]: atom grids, simplex faces, probability vectors and the
//!   barycentric lattice;
//! * [`payoff`]: piecewise-linear cost functions and their pullback to the
//!   simplex;
//! * [`envelope`]: the value function by two independent solvers (direct
//!   concave majorant and directional obstacle iteration);
//! * [`strategy`]: optimal control directions, stopping rule and the
//!   two-point exit-value formula;
//! * [`simulator`]: Monte Carlo verification through the controlled
//!   atom-weight SDEs;
//! * [`oracle`]: the closed-form call-spread value function on three atoms.
//!
//! The `book/` directory of the repository walks through the concepts; its
//! code samples compile as doc-tests of [`guide`].

#![allow(clippy::needless_range_loop)]

pub mod envelope;
pub mod error;
pub mod measures;
pub mod oracle;
pub mod payoff;
pub mod simulator;
pub mod strategy;

pub mod guide;

pub use envelope::{
    contact_set, envelope_hull, envelope_obstacle, solve_recursive, DirectionSet, EnvelopeField,
    EnvelopeMethod, EnvelopeSolution, Tolerances,
};
pub use error::{Error, Result};
pub use measures::{
    lift, make_grid, mean, AtomGrid, BarycentricGrid, Face, MeasureJson, ProbabilityVector,
};
pub use payoff::{CostFunction, ModifiedCost, PayoffSpec};
pub use oracle::{call_spread_value, SpreadCase, SpreadParams};
pub use simulator::{
    mc_value, run_path, verify_martingale, McEstimate, PathOutcome, PathState, StageAction,
    StagePolicy,
};
pub use strategy::{exit_value, optimal_direction, stopping_rule, ControlPlan, PlanOrStop};
