//! Lifted-form plant model, the single-agent learning law, and the per-agent
//! convergence certificates (spectral radius, induced-norm rate, threshold).
//!
//! A trial is one matrix equation `y = P u + d` over a horizon of `N`
//! samples. The update law is `u_next = Q (u + L e)` with `e = r - y`.
//! Error propagation from trial to trial is `e_next = Omega e + Psi (r - d)`
//! with `Omega = P Q (I - L P) P^-1` and `Psi = I - P Q P^-1`.

use nalgebra::{Dyn, LU};
use serde::{Deserialize, Serialize};

use crate::error::{CilcError, Result};
use crate::linalg::{identity, induced_norm, singular_values, spectral_radius, Mat, Vector};

/// Default relative invertibility tolerance on `sigma_min / sigma_max`.
pub const DEFAULT_SINGULAR_TOL: f64 = 1e-12;

/// Anything that can execute one trial: input trajectory in, output out.
///
/// The lifted plant is the canonical implementation; the TWIPR testbed
/// provides a nonlinear one so learning laws can be run against a plant
/// that differs from their design model.
pub trait TrialSimulator {
    fn horizon(&self) -> usize;
    fn run_trial(&self, u: &Vector) -> Result<Vector>;
}

#[derive(Debug, Clone)]
pub struct LiftedPlant {
    p: Mat,
    d: Vector,
    lu: LU<f64, Dyn, Dyn>,
    lu_t: LU<f64, Dyn, Dyn>,
}

impl LiftedPlant {
    pub fn new(p: Mat, d: Vector) -> Result<Self> {
        Self::with_tolerance(p, d, DEFAULT_SINGULAR_TOL)
    }

    pub fn with_tolerance(p: Mat, d: Vector, rel_tol: f64) -> Result<Self> {
        let n = p.nrows();
        if n == 0 {
            return Err(CilcError::InvalidArgument("horizon must be positive".into()));
        }
        if p.ncols() != n {
            return Err(CilcError::dims("plant matrix columns", n, p.ncols()));
        }
        if d.len() != n {
            return Err(CilcError::dims("disturbance length", n, d.len()));
        }
        let sv = singular_values(&p);
        let (sigma_min, sigma_max) = (sv.min(), sv.max());
        if !(sigma_max > 0.0) || !(sigma_min > rel_tol * sigma_max) {
            return Err(CilcError::SingularPlant {
                sigma_min,
                sigma_max,
            });
        }
        let lu = p.clone().lu();
        let lu_t = p.transpose().lu();
        Ok(LiftedPlant { p, d, lu, lu_t })
    }

    /// Plant with zero disturbance.
    pub fn undisturbed(p: Mat) -> Result<Self> {
        let n = p.nrows();
        Self::new(p, Vector::zeros(n))
    }

    pub fn horizon(&self) -> usize {
        self.p.nrows()
    }

    pub fn p(&self) -> &Mat {
        &self.p
    }

    pub fn d(&self) -> &Vector {
        &self.d
    }

    pub fn with_disturbance(&self, d: Vector) -> Result<Self> {
        if d.len() != self.horizon() {
            return Err(CilcError::dims("disturbance length", self.horizon(), d.len()));
        }
        Ok(LiftedPlant { d, ..self.clone() })
    }

    /// `y = P u + d`.
    pub fn simulate_trial(&self, u: &Vector) -> Result<Vector> {
        self.check_len("input trajectory", u)?;
        Ok(&self.p * u + &self.d)
    }

    /// `P^-1 b` via the cached LU factorisation.
    pub fn solve(&self, b: &Vector) -> Result<Vector> {
        self.check_len("right-hand side", b)?;
        self.lu.solve(b).ok_or_else(|| self.singular())
    }

    /// `M P^-1`, computed as the transpose of `P^-T M^T`.
    pub fn right_solve(&self, m: &Mat) -> Result<Mat> {
        if m.ncols() != self.horizon() {
            return Err(CilcError::dims("right_solve operand", self.horizon(), m.ncols()));
        }
        self.lu_t
            .solve(&m.transpose())
            .map(|x| x.transpose())
            .ok_or_else(|| self.singular())
    }

    fn singular(&self) -> CilcError {
        let sv = singular_values(&self.p);
        CilcError::SingularPlant {
            sigma_min: sv.min(),
            sigma_max: sv.max(),
        }
    }

    pub(crate) fn check_len(&self, context: &'static str, v: &Vector) -> Result<()> {
        if v.len() != self.horizon() {
            return Err(CilcError::dims(context, self.horizon(), v.len()));
        }
        Ok(())
    }

    fn check_square(&self, context: &'static str, m: &Mat) -> Result<()> {
        let n = self.horizon();
        if m.nrows() != n {
            return Err(CilcError::dims(context, n, m.nrows()));
        }
        if m.ncols() != n {
            return Err(CilcError::dims(context, n, m.ncols()));
        }
        Ok(())
    }
}

impl TrialSimulator for LiftedPlant {
    fn horizon(&self) -> usize {
        LiftedPlant::horizon(self)
    }

    fn run_trial(&self, u: &Vector) -> Result<Vector> {
        self.simulate_trial(u)
    }
}

/// One agent's learning law `u_next = Q (u + L e)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentLaw {
    pub id: usize,
    pub q: Mat,
    pub l: Mat,
}

impl AgentLaw {
    pub fn new(id: usize, q: Mat, l: Mat) -> Result<Self> {
        if id == 0 {
            return Err(CilcError::InvalidArgument("agent ids start at 1".into()));
        }
        let n = q.nrows();
        for (ctx, m) in [("Q-filter", &q), ("learning gain", &l)] {
            if m.nrows() != n {
                return Err(CilcError::dims(ctx, n, m.nrows()));
            }
            if m.ncols() != n {
                return Err(CilcError::dims(ctx, n, m.ncols()));
            }
        }
        Ok(AgentLaw { id, q, l })
    }

    /// `Q = I, L = P^-1`: the next trial's error is exactly zero.
    pub fn deadbeat(id: usize, plant: &LiftedPlant) -> Result<Self> {
        let n = plant.horizon();
        let l = plant.right_solve(&identity(n))?;
        AgentLaw::new(id, identity(n), l)
    }

    /// `Q = I, L = 0`: no learning at all.
    pub fn frozen(id: usize, n: usize) -> Result<Self> {
        AgentLaw::new(id, identity(n), Mat::zeros(n, n))
    }

    pub fn horizon(&self) -> usize {
        self.q.nrows()
    }

    pub fn with_id(mut self, id: usize) -> Self {
        self.id = id;
        self
    }

    fn check_plant(&self, plant: &LiftedPlant) -> Result<()> {
        plant.check_square("Q-filter", &self.q)?;
        plant.check_square("learning gain", &self.l)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub u: Vector,
    pub y: Vector,
    pub e: Vector,
    pub e_norm: f64,
}

impl TrialRecord {
    pub fn new(trial: usize, u: Vector, y: Vector, reference: &Vector) -> Self {
        let e = reference - &y;
        let e_norm = e.norm();
        TrialRecord {
            trial,
            u,
            y,
            e,
            e_norm,
        }
    }
}

/// Monotonicity threshold; infinite when the induced-norm rate is not below one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Threshold {
    Finite(f64),
    Infinite,
}

impl Threshold {
    pub fn from_rate(numerator: f64, rate: f64) -> Self {
        if rate < 1.0 {
            Threshold::Finite(numerator / (1.0 - rate))
        } else {
            Threshold::Infinite
        }
    }

    pub fn value(&self) -> f64 {
        match *self {
            Threshold::Finite(v) => v,
            Threshold::Infinite => f64::INFINITY,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, Threshold::Finite(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub agent_id: usize,
    /// `rho(Q (I - L P))`
    pub rho: f64,
    /// `||Omega||`
    pub gamma: f64,
    pub kappa: Threshold,
    pub asymptotically_stable: bool,
    pub monotone_above_threshold: bool,
    /// Fixed point of the error recursion; present only when `rho < 1`.
    pub residual_error: Option<Vector>,
}

/// `Q (u + L e)`.
pub fn ilc_update(law: &AgentLaw, u: &Vector, e: &Vector) -> Result<Vector> {
    let n = law.horizon();
    if u.len() != n {
        return Err(CilcError::dims("input trajectory", n, u.len()));
    }
    if e.len() != n {
        return Err(CilcError::dims("error trajectory", n, e.len()));
    }
    Ok(&law.q * (u + &law.l * e))
}

/// `Omega = P Q (I - L P) P^-1`.
pub fn contraction_matrix(plant: &LiftedPlant, law: &AgentLaw) -> Result<Mat> {
    law.check_plant(plant)?;
    let n = plant.horizon();
    let p = plant.p();
    let inner = identity(n) - &law.l * p;
    plant.right_solve(&(p * &law.q * inner))
}

/// `Psi = I - P Q P^-1`.
pub fn filter_matrix(plant: &LiftedPlant, law: &AgentLaw) -> Result<Mat> {
    law.check_plant(plant)?;
    let n = plant.horizon();
    Ok(identity(n) - plant.right_solve(&(plant.p() * &law.q))?)
}

/// `Q (I - L P)`: the input-domain trial map whose spectral radius decides
/// asymptotic stability.
pub fn input_map(plant: &LiftedPlant, law: &AgentLaw) -> Result<Mat> {
    law.check_plant(plant)?;
    let n = plant.horizon();
    Ok(&law.q * (identity(n) - &law.l * plant.p()))
}

pub fn analyze_agent(
    plant: &LiftedPlant,
    law: &AgentLaw,
    reference: &Vector,
) -> Result<ConvergenceReport> {
    plant.check_len("reference", reference)?;
    let omega = contraction_matrix(plant, law)?;
    let psi = filter_matrix(plant, law)?;
    let rho = spectral_radius(&input_map(plant, law)?);
    let gamma = induced_norm(&omega);
    let rd = reference - plant.d();
    let psi_rd = &psi * &rd;
    let kappa = Threshold::from_rate(psi_rd.norm(), gamma);
    let residual_error = if rho < 1.0 {
        let n = plant.horizon();
        (identity(n) - &omega).lu().solve(&psi_rd)
    } else {
        None
    };
    Ok(ConvergenceReport {
        agent_id: law.id,
        rho,
        gamma,
        kappa,
        asymptotically_stable: rho < 1.0,
        monotone_above_threshold: gamma < 1.0,
        residual_error,
    })
}

/// Runs `trials` trials (indices `0..trials`) of a single agent on its own.
pub fn run_isolated_ilc(
    plant: &LiftedPlant,
    law: &AgentLaw,
    reference: &Vector,
    u0: &Vector,
    trials: usize,
) -> Result<Vec<TrialRecord>> {
    law.check_plant(plant)?;
    run_isolated_on(plant, law, reference, u0, trials)
}

/// Isolated learning against any trial simulator.
pub fn run_isolated_on(
    sim: &dyn TrialSimulator,
    law: &AgentLaw,
    reference: &Vector,
    u0: &Vector,
    trials: usize,
) -> Result<Vec<TrialRecord>> {
    if trials == 0 {
        return Err(CilcError::InvalidArgument("trials must be at least 1".into()));
    }
    let n = sim.horizon();
    if law.horizon() != n {
        return Err(CilcError::dims("learning law horizon", n, law.horizon()));
    }
    if reference.len() != n {
        return Err(CilcError::dims("reference", n, reference.len()));
    }
    let mut records = Vec::with_capacity(trials);
    let mut u = u0.clone();
    for j in 0..trials {
        let y = sim.run_trial(&u).map_err(|e| e.at_trial(j))?;
        let next = ilc_update(law, &u, &(reference - &y))?;
        records.push(TrialRecord::new(j, std::mem::replace(&mut u, next), y, reference));
    }
    Ok(records)
}
