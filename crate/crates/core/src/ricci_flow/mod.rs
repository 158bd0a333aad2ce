//! Explicit time integration of the rescaled Ricci-DeTurck flow on a
//! truncated Poincaré ball with Dirichlet boundary data, and the diagnostics
//! used to judge convergence.

mod diagnostics;
mod evolve;
mod state;

pub use diagnostics::{
    check_evolution_inequality, epsilon_closeness, fit_decay_rate, fit_log_linear, linearized_flow,
    uniform_equivalence_monitor, EquivalenceReport, FlowDiagnostics, FlowSample, InequalityReport,
    BURN_IN_FRACTION, EQUIVALENCE_SLACK, MIN_FIT_SAMPLES,
};
pub use evolve::{
    auto_dt, bump, bump_perturbation, evolve, evolve_observed, max_inverse_eigenvalue, stability_bound,
    FlowConfig, AUTO_DT_FACTOR, EPSILON_GATE,
};
pub use state::{flow_rhs, hyperbolic_reference, step, FlowState, RescaleVariant};

#[cfg(test)]
mod tests;
