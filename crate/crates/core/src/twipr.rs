//! Two-wheeled inverted pendulum robot (TWIPR) moving along a line.
//!
//! Generalized coordinates: pitch `theta` (rad, positive leaning forward) and
//! wheel-axle position `s` (m). The motor torque `u` acts between body and
//! wheels.
//!
//! ```text
//! m_b   body mass              m_w  wheel mass
//! I_b   body inertia about the wheel axle
//! I_w   wheel inertia about its axle
//! l     axle to body centre of mass
//! R     wheel radius           g    gravity
//! c     viscous friction on the body/wheel relative rate (s_dot/R - theta_dot)
//! M_s   = m_b + m_w + I_w / R^2
//!
//! [ I_b             m_b l cos(th) ] [th_dd]   [ m_b g l sin(th) - u + c w          ]
//! [ m_b l cos(th)   M_s           ] [s_dd ] = [ m_b l sin(th) th_d^2 + (u - c w)/R ]
//!
//! with w = s_dot/R - th_dot.
//! ```
//!
//! The state is `z = (theta, theta_dot, s, s_dot)`. The pitch output is
//! reported in degrees, so `C = (180/pi, 0, 0, 0)`.

use nalgebra::{Complex, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{CilcError, Result};
use crate::lifted::{LiftedPlant, TrialSimulator};
use crate::linalg::{identity, Mat, Vector};
use crate::noilc::NoilcWeights;

pub const STATE_DIM: usize = 4;
pub const DEFAULT_PERIOD: f64 = 0.02;
pub const DEFAULT_HORIZON: usize = 100;
pub const DEFAULT_GUARD_DEG: f64 = 90.0;
pub const RK4_SUBSTEPS: usize = 10;
pub const RAD_TO_DEG: f64 = 180.0 / std::f64::consts::PI;
/// Inertia factor of the design model relative to the simulated robot.
pub const MODEL_INERTIA_SCALE: f64 = 1.4;

fn default_period() -> f64 {
    DEFAULT_PERIOD
}

fn default_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwiprParams {
    /// kg
    pub body_mass: f64,
    /// kg
    pub wheel_mass: f64,
    /// kg m^2, about the wheel axle
    pub body_inertia: f64,
    /// kg m^2
    pub wheel_inertia: f64,
    /// m
    pub com_distance: f64,
    /// m
    pub wheel_radius: f64,
    /// m/s^2
    pub gravity: f64,
    /// N m s
    pub friction: f64,
    /// s
    #[serde(default = "default_period")]
    pub period: f64,
    /// Multiplies both inertias.
    #[serde(default = "default_scale")]
    pub inertia_scale: f64,
}

impl Default for TwiprParams {
    /// A small hobby-scale robot; the published robot's constants are not
    /// available, so these are plausible stand-ins.
    fn default() -> Self {
        TwiprParams {
            body_mass: 2.5,
            wheel_mass: 0.4,
            body_inertia: 0.024,
            wheel_inertia: 5e-4,
            com_distance: 0.06,
            wheel_radius: 0.055,
            gravity: 9.81,
            friction: 0.01,
            period: DEFAULT_PERIOD,
            inertia_scale: 1.0,
        }
    }
}

impl TwiprParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("body_mass", self.body_mass),
            ("wheel_mass", self.wheel_mass),
            ("body_inertia", self.body_inertia),
            ("wheel_inertia", self.wheel_inertia),
            ("com_distance", self.com_distance),
            ("wheel_radius", self.wheel_radius),
            ("gravity", self.gravity),
            ("friction", self.friction),
            ("period", self.period),
            ("inertia_scale", self.inertia_scale),
        ];
        for (field, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(CilcError::InvalidParams {
                    field,
                    reason: format!("must be finite and strictly positive, got {value}"),
                });
            }
        }
        if self.mass_matrix_det() <= 0.0 {
            return Err(CilcError::InvalidParams {
                field: "body_inertia",
                reason: "mass matrix is not positive definite; body inertia about the axle \
                         must exceed body_mass * com_distance^2 for any plausible body"
                    .into(),
            });
        }
        Ok(())
    }

    pub fn with_inertia_scale(mut self, scale: f64) -> Self {
        self.inertia_scale = scale;
        self
    }

    fn ib(&self) -> f64 {
        self.body_inertia * self.inertia_scale
    }

    fn iw(&self) -> f64 {
        self.wheel_inertia * self.inertia_scale
    }

    fn ms(&self) -> f64 {
        self.body_mass + self.wheel_mass + self.iw() / (self.wheel_radius * self.wheel_radius)
    }

    fn mass_matrix_det(&self) -> f64 {
        let ml = self.body_mass * self.com_distance;
        self.ib() * self.ms() - ml * ml
    }
}

/// State derivative of the nonlinear model.
pub fn twipr_dynamics(z: &[f64; 4], u: f64, p: &TwiprParams) -> [f64; 4] {
    let [th, th_d, _s, s_d] = *z;
    let ml = p.body_mass * p.com_distance;
    let (sin, cos) = th.sin_cos();
    let w = s_d / p.wheel_radius - th_d;
    let mass = Matrix2::new(p.ib(), ml * cos, ml * cos, p.ms());
    let rhs = Vector2::new(
        ml * p.gravity * sin - u + p.friction * w,
        ml * sin * th_d * th_d + (u - p.friction * w) / p.wheel_radius,
    );
    // The mass matrix is SPD for valid parameters; its 2x2 inverse is closed form.
    let det = mass.determinant();
    let acc = Vector2::new(
        mass[(1, 1)] * rhs[0] - mass[(0, 1)] * rhs[1],
        -mass[(1, 0)] * rhs[0] + mass[(0, 0)] * rhs[1],
    ) / det;
    [th_d, acc[0], s_d, acc[1]]
}

/// Jacobians of [`twipr_dynamics`] at the upright equilibrium.
pub fn linearize_upright(p: &TwiprParams) -> (Mat, Mat) {
    let ml = p.body_mass * p.com_distance;
    let (ib, ms, r, c) = (p.ib(), p.ms(), p.wheel_radius, p.friction);
    let det = ib * ms - ml * ml;
    // Generalized-force rows as linear functions of (th, th_d, s, s_d, u).
    let f_th = [ml * p.gravity, -c, 0.0, c / r, -1.0];
    let f_s = [0.0, c / r, 0.0, -c / (r * r), 1.0 / r];
    let acc = |k: usize| -> (f64, f64) {
        (
            (ms * f_th[k] - ml * f_s[k]) / det,
            (-ml * f_th[k] + ib * f_s[k]) / det,
        )
    };
    let mut a = Mat::zeros(4, 4);
    let mut b = Mat::zeros(4, 1);
    a[(0, 1)] = 1.0;
    a[(2, 3)] = 1.0;
    for k in 0..4 {
        let (th_dd, s_dd) = acc(k);
        a[(1, k)] = th_dd;
        a[(3, k)] = s_dd;
    }
    let (th_dd, s_dd) = acc(4);
    b[(1, 0)] = th_dd;
    b[(3, 0)] = s_dd;
    (a, b)
}

/// Zero-order-hold discretization through the exponential of
/// `[[A_c, B_c], [0, 0]] * T`.
pub fn discretize_zoh(a_c: &Mat, b_c: &Mat, t: f64) -> Result<(Mat, Mat)> {
    let n = a_c.nrows();
    if a_c.ncols() != n {
        return Err(CilcError::dims("continuous state matrix", n, a_c.ncols()));
    }
    if b_c.nrows() != n {
        return Err(CilcError::dims("continuous input matrix", n, b_c.nrows()));
    }
    if !(t.is_finite() && t > 0.0) {
        return Err(CilcError::InvalidArgument(format!("sampling period must be positive, got {t}")));
    }
    let m = b_c.ncols();
    let mut aug = Mat::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(a_c);
    aug.view_mut((0, n), (n, m)).copy_from(b_c);
    let e = (aug * t).exp();
    Ok((
        e.view((0, 0), (n, n)).into_owned(),
        e.view((0, n), (n, m)).into_owned(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pole {
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

impl Pole {
    pub const fn real(re: f64) -> Self {
        Pole { re, im: 0.0 }
    }

    fn c(&self) -> Complex<f64> {
        Complex::new(self.re, self.im)
    }
}

/// Real cluster used unless a configuration overrides it. It keeps the robot
/// stable when the gain is designed on the heavier model.
pub const DEFAULT_POLES: [Pole; 4] = [
    Pole::real(0.80),
    Pole::real(0.82),
    Pole::real(0.84),
    Pole::real(0.86),
];

/// Real coefficients `[c_0, .., c_{n-1}]` of the monic polynomial with the
/// given roots: `s^n + c_{n-1} s^{n-1} + .. + c_0`.
fn char_poly(poles: &[Pole]) -> Result<Vec<f64>> {
    let mut unmatched: Vec<Complex<f64>> = Vec::new();
    for p in poles {
        if !(p.re.is_finite() && p.im.is_finite()) {
            return Err(CilcError::BadPoleSet(format!("non-finite pole {}+{}i", p.re, p.im)));
        }
        if p.im != 0.0 {
            let conj = p.c().conj();
            let tol = 1e-12 * p.c().norm().max(1.0);
            if let Some(k) = unmatched.iter().position(|q| (q - conj).norm() <= tol) {
                unmatched.swap_remove(k);
            } else {
                unmatched.push(p.c());
            }
        }
    }
    if let Some(q) = unmatched.first() {
        return Err(CilcError::BadPoleSet(format!(
            "pole {}{:+}i has no conjugate partner",
            q.re, q.im
        )));
    }
    // Coefficients from highest to lowest degree.
    let mut coeffs = vec![Complex::new(1.0, 0.0)];
    for p in poles {
        let mut next = vec![Complex::new(0.0, 0.0); coeffs.len() + 1];
        for (k, c) in coeffs.iter().enumerate() {
            next[k] += c;
            next[k + 1] -= c * p.c();
        }
        coeffs = next;
    }
    Ok(coeffs.iter().skip(1).rev().map(|c| c.re).collect())
}

pub fn controllability_matrix(a: &Mat, b: &Mat) -> Mat {
    let n = a.nrows();
    let mut ctrb = Mat::zeros(n, n);
    let mut col = b.column(0).into_owned();
    for k in 0..n {
        ctrb.set_column(k, &col);
        col = a * col;
    }
    ctrb
}

/// Single-input pole placement (Ackermann): `K = e_n^T C^-1 phi(A)`.
pub fn design_feedback(a: &Mat, b: &Mat, poles: &[Pole]) -> Result<Mat> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(CilcError::dims("state matrix", n, a.ncols()));
    }
    if b.nrows() != n || b.ncols() != 1 {
        return Err(CilcError::dims("input matrix rows", n, b.nrows()));
    }
    if poles.len() != n {
        return Err(CilcError::BadPoleSet(format!("need {n} poles, got {}", poles.len())));
    }
    let coeffs = char_poly(poles)?;

    let ctrb = controllability_matrix(a, b);
    let sv = crate::linalg::singular_values(&ctrb);
    let smax = sv.max();
    let tol = 1e-12 * smax.max(f64::MIN_POSITIVE);
    let rank = sv.iter().filter(|&&s| s > tol).count();
    if smax == 0.0 || rank < n {
        return Err(CilcError::Uncontrollable { rank, dim: n });
    }

    // phi(A) by Horner's scheme.
    let mut phi = identity(n);
    for c in coeffs.iter().rev() {
        phi = a * phi + identity(n) * *c;
    }
    // Row e_n^T C^-1 solves C^T x = e_n.
    let mut e_n = Vector::zeros(n);
    e_n[n - 1] = 1.0;
    let x = ctrb
        .transpose()
        .full_piv_lu()
        .solve(&e_n)
        .ok_or(CilcError::Uncontrollable { rank, dim: n })?;
    let row = x.transpose() * phi;
    Ok(Mat::from_row_slice(1, n, row.as_slice()))
}

pub fn eigenvalues(m: &Mat) -> Vec<Complex<f64>> {
    m.clone().complex_eigenvalues().iter().copied().collect()
}

/// Sampled stabilized loop `z(n+1) = (A - BK) z(n) + B u_ilc(n)`, `y = C z`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteClosedLoop {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub k: Mat,
    pub period: f64,
}

impl DiscreteClosedLoop {
    /// Discretizes the upright linearization of `params` and places `poles`.
    pub fn design(params: &TwiprParams, poles: &[Pole]) -> Result<Self> {
        params.validate()?;
        let (a_c, b_c) = linearize_upright(params);
        let (a, b) = discretize_zoh(&a_c, &b_c, params.period)?;
        let k = design_feedback(&a, &b, poles)?;
        let mut c = Mat::zeros(1, 4);
        c[(0, 0)] = RAD_TO_DEG;
        let cl = DiscreteClosedLoop {
            a,
            b,
            c,
            k,
            period: params.period,
        };
        let rho = crate::linalg::spectral_radius(&cl.a_cl());
        if rho >= 1.0 {
            return Err(CilcError::BadPoleSet(format!(
                "closed loop is not stable (spectral radius {rho})"
            )));
        }
        Ok(cl)
    }

    pub fn a_cl(&self) -> Mat {
        &self.a - &self.b * &self.k
    }

    /// `p_i = C (A - BK)^(i-1) B`, `i = 1..=n`.
    pub fn markov_parameters(&self, n: usize) -> Vec<f64> {
        let a_cl = self.a_cl();
        let mut x = self.b.clone();
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push((&self.c * &x)[(0, 0)]);
            x = &a_cl * x;
        }
        out
    }

    /// Response of the linear loop from `z0` (entry `n` is the output at
    /// sample `n + 1`).
    pub fn simulate(&self, u_ilc: &Vector, z0: &Vector) -> Vector {
        let a_cl = self.a_cl();
        let mut z = z0.clone();
        Vector::from_iterator(
            u_ilc.len(),
            u_ilc.iter().map(|&u| {
                z = &a_cl * &z + &self.b * u;
                (&self.c * &z)[(0, 0)]
            }),
        )
    }
}

/// Lower-triangular Toeplitz lifting of the loop over `n` samples, starting
/// from rest (so `d = 0`) plus an optional constant output disturbance.
pub fn markov_lifted_plant(lp: &DiscreteClosedLoop, n: usize, disturbance: f64) -> Result<LiftedPlant> {
    if n == 0 {
        return Err(CilcError::InvalidArgument("horizon must be at least 1".into()));
    }
    let markov = lp.markov_parameters(n);
    let p = Mat::from_fn(n, n, |i, k| if i >= k { markov[i - k] } else { 0.0 });
    LiftedPlant::with_tolerance(p, Vector::from_element(n, disturbance), 1e-14)
}

/// `r(n) = 30 sin(pi T n)` degrees, `n = 0..N-1`.
pub fn reference_maneuver(n: usize, period: f64) -> Vector {
    Vector::from_fn(n, |k, _| 30.0 * (std::f64::consts::PI * period * k as f64).sin())
}

fn rk4_step(z: &[f64; 4], u: f64, h: f64, p: &TwiprParams) -> [f64; 4] {
    let add = |z: &[f64; 4], k: &[f64; 4], s: f64| -> [f64; 4] {
        [z[0] + s * k[0], z[1] + s * k[1], z[2] + s * k[2], z[3] + s * k[3]]
    };
    let k1 = twipr_dynamics(z, u, p);
    let k2 = twipr_dynamics(&add(z, &k1, h / 2.0), u, p);
    let k3 = twipr_dynamics(&add(z, &k2, h / 2.0), u, p);
    let k4 = twipr_dynamics(&add(z, &k3, h), u, p);
    let mut out = *z;
    for i in 0..4 {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// One trial of the nonlinear robot under `u = -K z + u_ilc`, from rest.
/// Entry `n` of the result is the pitch in degrees at sample `n + 1`.
pub fn simulate_nonlinear_trial(
    p: &TwiprParams,
    k: &Mat,
    u_ilc: &Vector,
    guard_deg: f64,
) -> Result<Vector> {
    p.validate()?;
    if k.nrows() != 1 || k.ncols() != 4 {
        return Err(CilcError::dims("feedback gain", 4, k.ncols()));
    }
    let h = p.period / RK4_SUBSTEPS as f64;
    let mut z = [0.0; 4];
    let mut y = Vector::zeros(u_ilc.len());
    for (n, &uff) in u_ilc.iter().enumerate() {
        let u = uff - (0..4).map(|i| k[(0, i)] * z[i]).sum::<f64>();
        for _ in 0..RK4_SUBSTEPS {
            z = rk4_step(&z, u, h, p);
        }
        let pitch = z[0] * RAD_TO_DEG;
        if !pitch.is_finite() || pitch.abs() > guard_deg {
            return Err(CilcError::NumericalBlowup {
                trial: None,
                sample: n + 1,
                pitch_deg: pitch,
            });
        }
        y[n] = pitch;
    }
    Ok(y)
}

/// The simulated robot seen by a learning agent.
#[derive(Debug, Clone)]
pub struct NonlinearTwipr {
    pub params: TwiprParams,
    pub k: Mat,
    pub horizon: usize,
    pub guard_deg: f64,
}

impl TrialSimulator for NonlinearTwipr {
    fn horizon(&self) -> usize {
        self.horizon
    }

    fn run_trial(&self, u: &Vector) -> Result<Vector> {
        if u.len() != self.horizon {
            return Err(CilcError::dims("input trajectory", self.horizon, u.len()));
        }
        simulate_nonlinear_trial(&self.params, &self.k, u, self.guard_deg)
    }
}

/// Agent archetypes of the simulation study, as norm-optimal weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Archetype {
    /// Fast, ignores robustness; diverges under model mismatch.
    Greedy,
    /// Robust and exact but slow.
    Conservative,
    /// Robust with moderate speed and a small residual error.
    Balanced,
}

impl Archetype {
    pub const ALL: [Archetype; 3] = [Archetype::Conservative, Archetype::Balanced, Archetype::Greedy];

    pub fn default_weights(self) -> NoilcWeights {
        match self {
            Archetype::Greedy => GREEDY,
            Archetype::Conservative => CONSERVATIVE,
            Archetype::Balanced => BALANCED,
        }
    }

    pub fn letter(self) -> &'static str {
        match self {
            Archetype::Greedy => "G",
            Archetype::Conservative => "C",
            Archetype::Balanced => "B",
        }
    }
}

// Tuned on the default setup: the greedy agent reaches its smallest error
// within a few trials and then diverges without the robot falling; the
// conservative agent is monotone with zero residual; the balanced agent is
// monotone and settles near 2% of the initial error.
pub const GREEDY: NoilcWeights = NoilcWeights { s: 0.05, r: 0.0 };
pub const CONSERVATIVE: NoilcWeights = NoilcWeights { s: 3.0, r: 0.0 };
pub const BALANCED: NoilcWeights = NoilcWeights { s: 0.5, r: 0.01 };

/// Versioned description of a TWIPR study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwiprSetup {
    pub schema_version: u32,
    /// The simulated robot.
    pub params: TwiprParams,
    #[serde(default = "default_poles")]
    pub poles: Vec<Pole>,
    /// Inertia factor of the model the feedback and learning laws are designed on.
    #[serde(default = "default_model_scale")]
    pub model_inertia_scale: f64,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_guard")]
    pub guard_deg: f64,
}

pub const TWIPR_SCHEMA_VERSION: u32 = 1;

fn default_poles() -> Vec<Pole> {
    DEFAULT_POLES.to_vec()
}

fn default_model_scale() -> f64 {
    MODEL_INERTIA_SCALE
}

fn default_horizon() -> usize {
    DEFAULT_HORIZON
}

fn default_guard() -> f64 {
    DEFAULT_GUARD_DEG
}

impl Default for TwiprSetup {
    fn default() -> Self {
        TwiprSetup {
            schema_version: TWIPR_SCHEMA_VERSION,
            params: TwiprParams::default(),
            poles: default_poles(),
            model_inertia_scale: MODEL_INERTIA_SCALE,
            horizon: DEFAULT_HORIZON,
            guard_deg: DEFAULT_GUARD_DEG,
        }
    }
}

impl TwiprSetup {
    pub fn from_json(text: &str) -> Result<Self> {
        let setup: TwiprSetup = serde_json::from_str(text)
            .map_err(|e| CilcError::InvalidArgument(format!("TWIPR setup: {e}")))?;
        setup.validate()?;
        Ok(setup)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != TWIPR_SCHEMA_VERSION {
            return Err(CilcError::InvalidArgument(format!(
                "TWIPR setup schema_version {} is not supported (expected {TWIPR_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.params.validate()?;
        if !(self.model_inertia_scale.is_finite() && self.model_inertia_scale > 0.0) {
            return Err(CilcError::InvalidParams {
                field: "model_inertia_scale",
                reason: "must be finite and strictly positive".into(),
            });
        }
        if self.horizon == 0 {
            return Err(CilcError::InvalidParams {
                field: "horizon",
                reason: "must be at least 1".into(),
            });
        }
        if !(self.guard_deg > 0.0) {
            return Err(CilcError::InvalidParams {
                field: "guard_deg",
                reason: "must be positive".into(),
            });
        }
        Ok(())
    }

    pub fn model_params(&self) -> TwiprParams {
        self.params
            .with_inertia_scale(self.params.inertia_scale * self.model_inertia_scale)
    }

    pub fn build(&self) -> Result<TwiprStudy> {
        self.validate()?;
        let design = DiscreteClosedLoop::design(&self.model_params(), &self.poles)?;
        let plant = markov_lifted_plant(&design, self.horizon, 0.0)?;
        let truth = NonlinearTwipr {
            params: self.params,
            k: design.k.clone(),
            horizon: self.horizon,
            guard_deg: self.guard_deg,
        };
        Ok(TwiprStudy {
            reference: reference_maneuver(self.horizon, self.params.period),
            design,
            plant,
            truth,
        })
    }
}

/// Everything needed to run learning agents on the simulated robot.
#[derive(Debug, Clone)]
pub struct TwiprStudy {
    /// Sampled loop of the design model, with the feedback gain.
    pub design: DiscreteClosedLoop,
    /// Lifted design model the learning laws are synthesized on.
    pub plant: LiftedPlant,
    /// Nonlinear robot (lighter than the model) under the design feedback.
    pub truth: NonlinearTwipr,
    pub reference: Vector,
}

impl TwiprStudy {
    /// Sampled upright linearization of the robot under the design feedback.
    pub fn truth_linear_loop(&self) -> Result<DiscreteClosedLoop> {
        let (a_c, b_c) = linearize_upright(&self.truth.params);
        let (a, b) = discretize_zoh(&a_c, &b_c, self.truth.params.period)?;
        Ok(DiscreteClosedLoop {
            a,
            b,
            c: self.design.c.clone(),
            k: self.design.k.clone(),
            period: self.truth.params.period,
        })
    }

    pub fn truth_closed_loop_radius(&self) -> Result<f64> {
        Ok(crate::linalg::spectral_radius(&self.truth_linear_loop()?.a_cl()))
    }

    /// Lifted linearization of the robot, for judging laws designed on the model.
    pub fn truth_linear_plant(&self) -> Result<LiftedPlant> {
        markov_lifted_plant(&self.truth_linear_loop()?, self.truth.horizon, 0.0)
    }
}
