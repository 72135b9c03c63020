//! Collective iterative learning control (CILC).
//!
//! Agents that share one lifted plant each run their own learning law, but
//! after every trial they all update from the input/error pair of whichever
//! agent tracked best. This crate simulates that scheme, certifies its
//! convergence properties, designs norm-optimal laws, and provides a
//! two-wheeled inverted pendulum testbed and a max-consensus election layer.

pub mod collective;
pub mod consensus;
pub mod error;
pub mod fixtures;
pub mod harness;
pub mod lifted;
pub mod linalg;
pub mod noilc;
pub mod perf_eval;
pub mod plot;
pub mod twipr;

pub use collective::{
    certify_collective, collective_update, contraction_locus, gamma_bar, kappa_bar, run_cilc,
    select_best_performer, CilcHistory, CilcTrial, Collective, CollectiveReport, GammaBarBounds,
    Verdict,
};
pub use error::{CilcError, Result};
pub use lifted::{
    analyze_agent, contraction_matrix, filter_matrix, ilc_update, run_isolated_ilc, AgentLaw,
    ConvergenceReport, LiftedPlant, Threshold, TrialRecord, TrialSimulator,
};
pub use linalg::{Mat, Vector};
pub use noilc::{design_noilc, next_trial_cost, NoilcWeights};
pub use perf_eval::{
    certify_well_performing, predict_best_performers, well_performing_scores, WellPerforming,
};
