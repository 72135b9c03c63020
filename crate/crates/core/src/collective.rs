//! Collective learning: best-performer election, the shared update law, the
//! trial loop, and the collective convergence certificates.
//!
//! After every trial all agents compare error norms; the agent with the
//! smallest norm (lowest id on ties) is the best performer and every agent
//! computes its next input from the best performer's `(u, e)` pair.

use std::cmp::Ordering;
use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{CilcError, Result};
use crate::lifted::{
    analyze_agent, contraction_matrix, filter_matrix, ilc_update, AgentLaw, ConvergenceReport,
    LiftedPlant, Threshold, TrialRecord, TrialSimulator,
};
use crate::linalg::{induced_norm, right_singular_vectors, Mat, Vector};

/// Agents sharing one plant and one reference. Laws are stored in id order.
#[derive(Debug, Clone)]
pub struct Collective {
    plant: LiftedPlant,
    laws: Vec<AgentLaw>,
    reference: Vector,
}

impl Collective {
    pub fn new(plant: LiftedPlant, mut laws: Vec<AgentLaw>, reference: Vector) -> Result<Self> {
        if laws.is_empty() {
            return Err(CilcError::EmptyCollective);
        }
        let n = plant.horizon();
        plant.check_len("reference", &reference)?;
        for law in &laws {
            if law.horizon() != n {
                return Err(CilcError::dims("learning law horizon", n, law.horizon()));
            }
        }
        laws.sort_by_key(|l| l.id);
        let m = laws.len();
        for (k, law) in laws.iter().enumerate() {
            if law.id != k + 1 {
                return Err(CilcError::InvalidAgentIds {
                    expected_max: m,
                    found: law.id,
                });
            }
        }
        Ok(Collective {
            plant,
            laws,
            reference,
        })
    }

    pub fn plant(&self) -> &LiftedPlant {
        &self.plant
    }

    pub fn laws(&self) -> &[AgentLaw] {
        &self.laws
    }

    pub fn reference(&self) -> &Vector {
        &self.reference
    }

    pub fn size(&self) -> usize {
        self.laws.len()
    }

    pub fn horizon(&self) -> usize {
        self.plant.horizon()
    }

    /// `r - d`
    pub fn reference_offset(&self) -> Vector {
        &self.reference - self.plant.d()
    }

    pub fn omegas(&self) -> Result<Vec<Mat>> {
        self.laws
            .iter()
            .map(|l| contraction_matrix(&self.plant, l))
            .collect()
    }

    pub fn psis(&self) -> Result<Vec<Mat>> {
        self.laws
            .iter()
            .map(|l| filter_matrix(&self.plant, l))
            .collect()
    }
}

/// One trial of a collective run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CilcTrial {
    pub trial: usize,
    /// Per-agent records in id order.
    pub records: Vec<TrialRecord>,
    pub best_performer: usize,
    pub u_bar: Vector,
    pub e_bar: Vector,
    /// The update computed from this trial was withheld because no agent's
    /// candidate input would have lowered the error norm.
    pub held: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CilcHistory {
    pub trials: Vec<CilcTrial>,
}

impl CilcHistory {
    pub fn e_bar_norms(&self) -> Vec<f64> {
        self.trials.iter().map(|t| t.e_bar.norm()).collect()
    }

    pub fn best_sequence(&self) -> Vec<usize> {
        self.trials.iter().map(|t| t.best_performer).collect()
    }

    pub fn agent_norms(&self, agent_id: usize) -> Vec<f64> {
        self.trials
            .iter()
            .map(|t| t.records[agent_id - 1].e_norm)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }
}

/// Lexicographic order on `(norm, id)`: smaller norm first, lower id on ties.
pub fn candidate_order(a: (f64, usize), b: (f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Id (1-based) of the agent with the smallest norm; ties go to the lowest id.
pub fn best_of_norms(norms: &[f64]) -> Result<usize> {
    norms
        .iter()
        .enumerate()
        .map(|(k, &n)| (n, k + 1))
        .min_by(|a, b| candidate_order(*a, *b))
        .map(|(_, id)| id)
        .ok_or(CilcError::EmptyCollective)
}

/// Agent `k` (0-based position) has id `k + 1`.
pub fn select_best_performer(errors: &[Vector]) -> Result<usize> {
    if let Some(first) = errors.first() {
        if let Some(bad) = errors.iter().find(|e| e.len() != first.len()) {
            return Err(CilcError::dims("error trajectory", first.len(), bad.len()));
        }
    }
    let norms: Vec<f64> = errors.iter().map(|e| e.norm()).collect();
    best_of_norms(&norms)
}

/// Every agent applies its own law to the shared pair: `Q_m (u_bar + L_m e_bar)`.
pub fn collective_update(
    collective: &Collective,
    u_bar: &Vector,
    e_bar: &Vector,
) -> Result<Vec<Vector>> {
    collective
        .laws
        .iter()
        .map(|law| ilc_update(law, u_bar, e_bar))
        .collect()
}

/// The best-performer pair an agent holds after an election.
#[derive(Debug, Clone, PartialEq)]
pub struct ElectedPair {
    pub id: usize,
    pub u: Vector,
    pub e: Vector,
}

/// Strategy for resolving the best performer after each trial.
pub trait Elector {
    /// Returns, for every agent in id order, the pair it ends up holding.
    fn elect(&mut self, records: &[TrialRecord]) -> Result<Vec<ElectedPair>>;
}

/// Central argmin over all agents.
#[derive(Debug, Default, Clone, Copy)]
pub struct CentralElector;

impl Elector for CentralElector {
    fn elect(&mut self, records: &[TrialRecord]) -> Result<Vec<ElectedPair>> {
        let norms: Vec<f64> = records.iter().map(|r| r.e_norm).collect();
        let best = best_of_norms(&norms)?;
        let rec = &records[best - 1];
        let pair = ElectedPair {
            id: best,
            u: rec.u.clone(),
            e: rec.e.clone(),
        };
        Ok(vec![pair; records.len()])
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CilcOptions {
    pub hold_on_no_improvement: bool,
}

/// Collective run on the collective's own lifted plant.
pub fn run_cilc(
    collective: &Collective,
    u0: &Vector,
    trials: usize,
    hold_on_no_improvement: bool,
) -> Result<CilcHistory> {
    let sims: Vec<&dyn TrialSimulator> = vec![collective.plant()];
    run_cilc_with(
        &sims,
        collective.laws(),
        collective.reference(),
        u0,
        trials,
        CilcOptions {
            hold_on_no_improvement,
        },
        &mut CentralElector,
    )
}

/// General collective run.
///
/// `sims` holds either one simulator shared by all agents or one per agent
/// (in id order). Laws must carry ids `1..=M` in order.
pub fn run_cilc_with(
    sims: &[&dyn TrialSimulator],
    laws: &[AgentLaw],
    reference: &Vector,
    u0: &Vector,
    trials: usize,
    options: CilcOptions,
    elector: &mut dyn Elector,
) -> Result<CilcHistory> {
    let m = laws.len();
    if m == 0 {
        return Err(CilcError::EmptyCollective);
    }
    if trials == 0 {
        return Err(CilcError::InvalidArgument("trials must be at least 1".into()));
    }
    if sims.len() != 1 && sims.len() != m {
        return Err(CilcError::dims("number of simulators", m, sims.len()));
    }
    let sim_for = |k: usize| if sims.len() == 1 { sims[0] } else { sims[k] };
    let n = sims[0].horizon();
    for (k, law) in laws.iter().enumerate() {
        if law.id != k + 1 {
            return Err(CilcError::InvalidAgentIds {
                expected_max: m,
                found: law.id,
            });
        }
        if law.horizon() != n || sim_for(k).horizon() != n {
            return Err(CilcError::dims("agent horizon", n, law.horizon()));
        }
    }
    if reference.len() != n {
        return Err(CilcError::dims("reference", n, reference.len()));
    }
    if u0.len() != n {
        return Err(CilcError::dims("initial input", n, u0.len()));
    }

    let mut inputs: Vec<Vector> = vec![u0.clone(); m];
    let mut outputs: Vec<Vector> = Vec::with_capacity(m);
    for (k, u) in inputs.iter().enumerate() {
        outputs.push(sim_for(k).run_trial(u).map_err(|e| e.at_trial(0))?);
    }

    let mut history = Vec::with_capacity(trials);
    for j in 0..trials {
        let records: Vec<TrialRecord> = inputs
            .iter()
            .zip(&outputs)
            .map(|(u, y)| TrialRecord::new(j, u.clone(), y.clone(), reference))
            .collect();

        let views = elector.elect(&records)?;
        if views.len() != m {
            return Err(CilcError::dims("election result", m, views.len()));
        }
        let leader = views[0].clone();
        if views.iter().any(|v| v.id != leader.id) {
            return Err(CilcError::InvalidTopology(format!(
                "agents disagree on the best performer at trial {j}"
            )));
        }

        let mut held = false;
        if j + 1 < trials {
            let next_inputs: Vec<Vector> = laws
                .iter()
                .zip(&views)
                .map(|(law, view)| ilc_update(law, &view.u, &view.e))
                .collect::<Result<_>>()?;
            if options.hold_on_no_improvement {
                // One-step lookahead; a candidate that blows up counts as no improvement.
                let e_bar_norm = leader.e.norm();
                let lookahead: Vec<Option<Vector>> = next_inputs
                    .iter()
                    .enumerate()
                    .map(|(k, u)| sim_for(k).run_trial(u).ok())
                    .collect();
                let improves = lookahead.iter().any(|y| {
                    y.as_ref()
                        .is_some_and(|y| (reference - y).norm() < e_bar_norm)
                });
                if improves {
                    let mut next_outputs = Vec::with_capacity(m);
                    for (k, (u, y)) in next_inputs.iter().zip(lookahead).enumerate() {
                        next_outputs.push(match y {
                            Some(y) => y,
                            None => sim_for(k).run_trial(u).map_err(|e| e.at_trial(j + 1))?,
                        });
                    }
                    inputs = next_inputs;
                    outputs = next_outputs;
                } else {
                    held = true;
                }
            } else {
                let mut next_outputs = Vec::with_capacity(m);
                for (k, u) in next_inputs.iter().enumerate() {
                    next_outputs.push(sim_for(k).run_trial(u).map_err(|e| e.at_trial(j + 1))?);
                }
                inputs = next_inputs;
                outputs = next_outputs;
            }
        }

        history.push(CilcTrial {
            trial: j,
            records,
            best_performer: leader.id,
            u_bar: leader.u,
            e_bar: leader.e,
            held,
        });
    }
    Ok(CilcHistory { trials: history })
}

/// Bounds on the collective rate `max_v min_m ||Omega_m v|| / ||v||`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GammaBarBounds {
    /// Best sampled value; a valid lower bound.
    pub lower: f64,
    /// `min_m ||Omega_m||`; a valid upper bound.
    pub upper: f64,
    /// Grid-plus-Lipschitz upper bound, available for N = 2 only.
    pub certified: Option<f64>,
}

impl GammaBarBounds {
    /// Tightest rigorous upper bound available.
    pub fn rigorous_upper(&self) -> f64 {
        self.certified.map_or(self.upper, |c| c.min(self.upper))
    }
}

pub const DEFAULT_GRID_SPACING: f64 = 1e-4;
pub const DEFAULT_SAMPLING_BUDGET: usize = 4096;

fn min_gain(omegas: &[Mat], v: &Vector) -> f64 {
    omegas
        .iter()
        .map(|o| (o * v).norm())
        .fold(f64::INFINITY, f64::min)
}

pub fn gamma_bar(omegas: &[Mat], sampling_budget: usize, seed: u64) -> Result<GammaBarBounds> {
    gamma_bar_with_grid(omegas, sampling_budget, seed, DEFAULT_GRID_SPACING)
}

/// `grid_spacing` is the angular grid step in radians used for the N = 2
/// certificate; the Lipschitz padding is `max_m ||Omega_m|| * spacing * pi`.
pub fn gamma_bar_with_grid(
    omegas: &[Mat],
    sampling_budget: usize,
    seed: u64,
    grid_spacing: f64,
) -> Result<GammaBarBounds> {
    let first = omegas.first().ok_or(CilcError::EmptyCollective)?;
    let n = first.nrows();
    for o in omegas {
        if o.nrows() != n || o.ncols() != n {
            return Err(CilcError::dims("contraction matrix", n, o.ncols().max(o.nrows())));
        }
    }
    if sampling_budget == 0 {
        return Err(CilcError::InvalidArgument("sampling budget must be at least 1".into()));
    }
    if !(grid_spacing > 0.0) {
        return Err(CilcError::InvalidArgument("grid spacing must be positive".into()));
    }

    let norms: Vec<f64> = omegas.iter().map(induced_norm).collect();
    let upper = norms.iter().copied().fold(f64::INFINITY, f64::min);
    let max_norm = norms.iter().copied().fold(0.0, f64::max);

    let mut lower: f64 = 0.0;
    for o in omegas {
        let v = right_singular_vectors(o);
        for col in v.column_iter() {
            lower = lower.max(min_gain(omegas, &col.into_owned()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..sampling_budget {
        let v = Vector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        let len = v.norm();
        if len > 0.0 {
            lower = lower.max(min_gain(omegas, &(v / len)));
        }
    }

    let certified = if n == 2 {
        // The ratio is even in v, so half a turn covers the circle.
        let steps = (PI / grid_spacing).ceil() as usize;
        let h = PI / steps as f64;
        let mut grid_max: f64 = 0.0;
        for k in 0..steps {
            let t = k as f64 * h;
            let v = Vector::from_column_slice(&[t.cos(), t.sin()]);
            grid_max = grid_max.max(min_gain(omegas, &v));
        }
        lower = lower.max(grid_max);
        Some(grid_max + max_norm * grid_spacing * PI)
    } else {
        None
    };

    Ok(GammaBarBounds {
        lower,
        upper,
        certified,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RateFlavor {
    /// Rigorous upper bound on the collective rate.
    Certified,
    /// Sampled estimate; not a guarantee.
    Heuristic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateEstimate {
    pub value: f64,
    pub flavor: RateFlavor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KappaSource {
    /// Collective rate bound (certified).
    CollectiveRate,
    /// Collective rate estimate (heuristic).
    CollectiveRateHeuristic,
    /// Smallest threshold among individually monotone agents.
    BestMonotoneAgent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CollectiveThreshold {
    pub threshold: Threshold,
    pub source: KappaSource,
}

/// `max_m ||Psi_m (r - d)|| / (1 - gamma_bar)`, infinite when the rate is not below one.
pub fn kappa_bar(collective: &Collective, rate: RateEstimate) -> Result<CollectiveThreshold> {
    let rd = collective.reference_offset();
    let numerator = collective
        .psis()?
        .iter()
        .map(|psi| (psi * &rd).norm())
        .fold(0.0, f64::max);
    Ok(CollectiveThreshold {
        threshold: Threshold::from_rate(numerator, rate.value),
        source: match rate.flavor {
            RateFlavor::Certified => KappaSource::CollectiveRate,
            RateFlavor::Heuristic => KappaSource::CollectiveRateHeuristic,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Certified,
    Refuted,
    Inconclusive,
}

#[derive(Debug, Clone, Copy)]
pub struct CertifyOptions {
    pub sampling_budget: usize,
    pub seed: u64,
    pub grid_spacing: f64,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions {
            sampling_budget: DEFAULT_SAMPLING_BUDGET,
            seed: 0,
            grid_spacing: DEFAULT_GRID_SPACING,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollectiveReport {
    pub agents: Vec<ConvergenceReport>,
    pub gamma_bar_lower: f64,
    pub gamma_bar_upper: f64,
    pub gamma_bar_certified: Option<f64>,
    pub kappa_bar: CollectiveThreshold,
    /// Collective rate below one (monotone above `kappa_bar`).
    pub theorem4: Verdict,
    /// Some agent individually monotone; refuted when none is.
    pub theorem5: Verdict,
    /// Some agent monotone with zero residual error; refuted when none is.
    pub theorem6: Verdict,
}

pub fn certify_collective(
    collective: &Collective,
    options: CertifyOptions,
) -> Result<CollectiveReport> {
    let reference = collective.reference();
    let agents: Vec<ConvergenceReport> = collective
        .laws()
        .iter()
        .map(|l| analyze_agent(collective.plant(), l, reference))
        .collect::<Result<_>>()?;
    let omegas = collective.omegas()?;
    let bounds = gamma_bar_with_grid(
        &omegas,
        options.sampling_budget,
        options.seed,
        options.grid_spacing,
    )?;

    let rigorous = bounds.rigorous_upper();
    let theorem4 = if rigorous < 1.0 {
        Verdict::Certified
    } else if bounds.lower >= 1.0 {
        Verdict::Refuted
    } else {
        Verdict::Inconclusive
    };

    let monotone: Vec<&ConvergenceReport> =
        agents.iter().filter(|a| a.monotone_above_threshold).collect();
    let theorem5 = if monotone.is_empty() {
        Verdict::Refuted
    } else {
        Verdict::Certified
    };
    let zero_tol = 1e-10 * collective.reference_offset().norm();
    let theorem6 = if monotone.iter().any(|a| {
        a.residual_error
            .as_ref()
            .is_some_and(|e| e.norm() <= zero_tol)
    }) {
        Verdict::Certified
    } else {
        Verdict::Refuted
    };

    let kappa = if theorem5 == Verdict::Certified {
        let best = monotone
            .iter()
            .map(|a| a.kappa.value())
            .fold(f64::INFINITY, f64::min);
        CollectiveThreshold {
            threshold: Threshold::Finite(best),
            source: KappaSource::BestMonotoneAgent,
        }
    } else if theorem4 == Verdict::Certified {
        kappa_bar(
            collective,
            RateEstimate {
                value: rigorous,
                flavor: RateFlavor::Certified,
            },
        )?
    } else {
        kappa_bar(
            collective,
            RateEstimate {
                value: bounds.lower,
                flavor: RateFlavor::Heuristic,
            },
        )?
    };

    Ok(CollectiveReport {
        agents,
        gamma_bar_lower: bounds.lower,
        gamma_bar_upper: bounds.upper,
        gamma_bar_certified: bounds.certified,
        kappa_bar: kappa,
        theorem4,
        theorem5,
        theorem6,
    })
}

/// Points `||Omega_m v|| v` per agent and `min_m ||Omega_m v|| v` for the
/// collective, over evenly spaced unit directions in the plane.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionLocus {
    pub agents: Vec<Vec<[f64; 2]>>,
    pub collective: Vec<[f64; 2]>,
}

impl ContractionLocus {
    pub fn max_radius(points: &[[f64; 2]]) -> f64 {
        points
            .iter()
            .map(|p| p[0].hypot(p[1]))
            .fold(0.0, f64::max)
    }
}

pub fn contraction_locus(omegas: &[Mat], directions: usize) -> Result<ContractionLocus> {
    let first = omegas.first().ok_or(CilcError::EmptyCollective)?;
    for o in omegas {
        if o.nrows() != 2 || o.ncols() != 2 {
            return Err(CilcError::UnsupportedDimension {
                required: 2,
                actual: first.nrows(),
            });
        }
    }
    if directions == 0 {
        return Err(CilcError::InvalidArgument("need at least one direction".into()));
    }
    let mut agents = vec![Vec::with_capacity(directions); omegas.len()];
    let mut collective = Vec::with_capacity(directions);
    for k in 0..directions {
        let t = 2.0 * PI * k as f64 / directions as f64;
        let (c, s) = (t.cos(), t.sin());
        let v = Vector::from_column_slice(&[c, s]);
        let mut smallest = f64::INFINITY;
        for (pts, o) in agents.iter_mut().zip(omegas) {
            let g = (o * &v).norm();
            smallest = smallest.min(g);
            pts.push([g * c, g * s]);
        }
        collective.push([smallest * c, smallest * s]);
    }
    Ok(ContractionLocus { agents, collective })
}
