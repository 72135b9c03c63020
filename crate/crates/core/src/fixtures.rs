//! Golden two-agent example (N = 2) and the published NO-ILC weight pairs.

use crate::collective::Collective;
use crate::lifted::{AgentLaw, LiftedPlant};
use crate::linalg::{Mat, Vector};
use crate::noilc::NoilcWeights;

pub fn appendix_a_plant() -> LiftedPlant {
    LiftedPlant::undisturbed(Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.25, 1.0]))
        .expect("golden plant is invertible")
}

pub fn appendix_a_laws() -> (AgentLaw, AgentLaw) {
    let q1 = Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.1, 0.2]);
    let q2 = Mat::from_row_slice(2, 2, &[0.25, 0.0, -0.1, 1.15]);
    let l1 = Mat::from_row_slice(2, 2, &[-0.3, 0.0, 0.0, -0.3]);
    let l2 = Mat::from_row_slice(2, 2, &[-0.07, 0.0, 0.02, -0.07]);
    (
        AgentLaw::new(1, q1, l1).expect("2x2"),
        AgentLaw::new(2, q2, l2).expect("2x2"),
    )
}

/// Reference `r = (1, 0)` with zero disturbance, so `r - d = (1, 0)`.
pub fn appendix_a_reference() -> Vector {
    Vector::from_column_slice(&[1.0, 0.0])
}

pub fn appendix_a_collective() -> Collective {
    let (a, b) = appendix_a_laws();
    Collective::new(appendix_a_plant(), vec![a, b], appendix_a_reference())
        .expect("golden collective is consistent")
}

/// Two robust agents: slow/low residual vs fast/higher residual.
pub const EXPERIMENT_1: [NoilcWeights; 2] = [
    NoilcWeights { s: 5.0, r: 0.1 },
    NoilcWeights { s: 0.05, r: 1.0 },
];

/// Robust agent paired with a fast, fragile one.
pub const EXPERIMENT_2: [NoilcWeights; 2] = [
    NoilcWeights { s: 5.0, r: 0.1 },
    NoilcWeights { s: 0.005, r: 0.001 },
];

/// Second agent strictly dominates the first.
pub const EXPERIMENT_3: [NoilcWeights; 2] = [
    NoilcWeights { s: 5.0, r: 0.1 },
    NoilcWeights { s: 0.5, r: 0.01 },
];
