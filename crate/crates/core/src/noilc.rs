//! Norm-optimal learning-law synthesis.
//!
//! The next-trial cost
//!
//! ```text
//! J(u') = ||e - P (u' - u)||^2 + s ||u' - u||^2 + r ||u'||^2
//! ```
//!
//! is a strictly convex quadratic in `u'` whenever `P^T P + (s + r) I` is
//! positive definite. Setting its gradient to zero gives
//!
//! ```text
//! u' = (P^T P + (s + r) I)^-1 [(P^T P + s I) u + P^T e] = Q (u + L e)
//! Q  = (P^T P + (s + r) I)^-1 (P^T P + s I)
//! L  = (P^T P + s I)^-1 P^T
//! ```
//!
//! With `r = 0` the Q-filter is exactly the identity, so the agent has zero
//! residual error; raising `s` slows learning, raising `r` biases it.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{CilcError, Result};
use crate::lifted::{AgentLaw, LiftedPlant};
use crate::linalg::{identity, Mat, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoilcWeights {
    /// Input-change weight.
    pub s: f64,
    /// Input-magnitude weight.
    pub r: f64,
}

impl NoilcWeights {
    pub fn new(s: f64, r: f64) -> Result<Self> {
        let w = NoilcWeights { s, r };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s.is_finite() && self.r.is_finite() && self.s >= 0.0 && self.r >= 0.0) {
            return Err(CilcError::InvalidWeights {
                s: self.s,
                r: self.r,
            });
        }
        Ok(())
    }
}

/// Solves `A X = B` for symmetric `A`, trying Cholesky first.
fn spd_solve(a: Mat, b: &Mat, what: &str) -> Result<Mat> {
    if let Some(chol) = a.clone().cholesky() {
        return Ok(chol.solve(b));
    }
    warn!("{what} is not numerically positive definite; falling back to pivoted LU");
    a.full_piv_lu()
        .solve(b)
        .ok_or_else(|| CilcError::IllPosed(format!("{what} is singular")))
}

pub fn design_noilc(plant: &LiftedPlant, weights: NoilcWeights, id: usize) -> Result<AgentLaw> {
    weights.validate()?;
    let n = plant.horizon();
    let p = plant.p();
    let pt = p.transpose();
    let ptp = &pt * p;
    let eye = identity(n);
    let with_s = &ptp + &eye * weights.s;
    let with_sr = &ptp + &eye * (weights.s + weights.r);

    let q = if weights.r == 0.0 {
        eye.clone()
    } else {
        spd_solve(with_sr, &with_s, "P^T P + (s + r) I")?
    };
    let l = if weights.s == 0.0 {
        // (P^T P)^-1 P^T = P^-1 for square invertible P.
        plant.right_solve(&eye)?
    } else {
        spd_solve(with_s, &pt, "P^T P + s I")?
    };
    AgentLaw::new(id, q, l)
}

/// Model-predicted next-trial cost of moving from `u_prev` to `u_next`.
pub fn next_trial_cost(
    plant: &LiftedPlant,
    u_prev: &Vector,
    u_next: &Vector,
    e_prev: &Vector,
    weights: NoilcWeights,
) -> Result<f64> {
    plant.check_len("previous input", u_prev)?;
    plant.check_len("next input", u_next)?;
    plant.check_len("previous error", e_prev)?;
    let du = u_next - u_prev;
    let e_next = e_prev - plant.p() * &du;
    Ok(e_next.norm_squared() + weights.s * du.norm_squared() + weights.r * u_next.norm_squared())
}

/// Analytic gradient of [`next_trial_cost`] with respect to `u_next`.
pub fn next_trial_cost_gradient(
    plant: &LiftedPlant,
    u_prev: &Vector,
    u_next: &Vector,
    e_prev: &Vector,
    weights: NoilcWeights,
) -> Result<Vector> {
    plant.check_len("previous input", u_prev)?;
    plant.check_len("next input", u_next)?;
    plant.check_len("previous error", e_prev)?;
    let n = plant.horizon();
    let p = plant.p();
    let ptp = p.transpose() * p;
    let eye = identity(n);
    Ok((&ptp + &eye * (weights.s + weights.r)) * u_next * 2.0
        - (&ptp + &eye * weights.s) * u_prev * 2.0
        - p.transpose() * e_prev * 2.0)
}
