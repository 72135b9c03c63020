//! Scenario configuration and the batch commands behind the `cilc` binary.
//!
//! Every command writes machine-readable artifacts (CSV, JSON) and a
//! human-readable summary into an output directory. SVG charts are always
//! accompanied by a CSV holding the plotted data. Per-trial CSVs share one
//! schema: `trial,agent_id,e_norm,is_best,held`, where `agent_id = 0` marks
//! the collective error `e_bar`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::collective::{
    certify_collective, contraction_locus, run_cilc_with, CentralElector, CertifyOptions,
    CilcHistory, CilcOptions, Collective, CollectiveReport, ContractionLocus, Verdict,
    DEFAULT_GRID_SPACING, DEFAULT_SAMPLING_BUDGET,
};
use crate::consensus::{run_distributed_cilc, DistributedElector, ElectionTrace, Topology};
use crate::error::CilcError;
use crate::fixtures;
use crate::lifted::{analyze_agent, ilc_update, AgentLaw, LiftedPlant, Threshold, TrialRecord, TrialSimulator};
use crate::linalg::{from_rows, Mat, Vector};
use crate::noilc::{design_noilc, NoilcWeights};
use crate::perf_eval::{well_performing_scores, verdict_from_scores, WellPerforming};
use crate::plot::{LineChart, Series};
use crate::twipr::{Archetype, NonlinearTwipr, TwiprSetup, TwiprStudy};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_TRIALS: usize = 30;
const LOCUS_DIRECTIONS: usize = 720;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Cilc(#[from] CilcError),
}

impl HarnessError {
    fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        HarnessError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// 2 for configuration problems, 3 when a simulated robot fell over.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config { .. } => 2,
            HarnessError::Cilc(CilcError::NumericalBlowup { .. }) => 3,
            HarnessError::Cilc(
                CilcError::InvalidParams { .. }
                | CilcError::InvalidWeights { .. }
                | CilcError::InvalidTopology(_)
                | CilcError::NotStronglyConnected { .. }
                | CilcError::BadPoleSet(_)
                | CilcError::InvalidAgentIds { .. }
                | CilcError::DimensionMismatch { .. }
                | CilcError::SingularPlant { .. },
            ) => 2,
            _ => 1,
        }
    }
}

pub type HarnessResult<T> = std::result::Result<T, HarnessError>;

fn default_trials() -> usize {
    DEFAULT_TRIALS
}

fn default_budget() -> usize {
    DEFAULT_SAMPLING_BUDGET
}

fn default_grid() -> f64 {
    DEFAULT_GRID_SPACING
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub scenario: Option<String>,
    #[serde(default)]
    pub plant: PlantSource,
    /// Empty means the plant's default agents.
    #[serde(default)]
    pub agents: Vec<AgentSpec>,
    /// Explicit reference; defaults depend on the plant.
    #[serde(default)]
    pub reference: Option<Vec<f64>>,
    /// Input of trial 0; zero when absent.
    #[serde(default)]
    pub initial_input: Option<Vec<f64>>,
    /// Number of trials recorded, counting trial 0.
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub hold_on_no_improvement: bool,
    #[serde(default)]
    pub distributed_election: bool,
    #[serde(default)]
    pub topology_file: Option<PathBuf>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_budget")]
    pub sampling_budget: usize,
    #[serde(default = "default_grid")]
    pub grid_spacing: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            scenario: None,
            plant: PlantSource::default(),
            agents: Vec::new(),
            reference: None,
            initial_input: None,
            trials: DEFAULT_TRIALS,
            seed: 0,
            hold_on_no_improvement: false,
            distributed_election: false,
            topology_file: None,
            output_dir: None,
            sampling_budget: DEFAULT_SAMPLING_BUDGET,
            grid_spacing: DEFAULT_GRID_SPACING,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PlantSource {
    #[default]
    AppendixA,
    Twipr {
        #[serde(default)]
        setup: Option<TwiprSetup>,
        /// JSON file with a TWIPR setup, relative to the config file.
        #[serde(default)]
        setup_file: Option<PathBuf>,
    },
    Explicit {
        p: Vec<Vec<f64>>,
        #[serde(default)]
        d: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    #[serde(default)]
    pub name: Option<String>,
    pub law: LawSource,
    /// TWIPR only: this agent's robot has its inertias scaled by this factor.
    #[serde(default)]
    pub inertia_scale: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LawSource {
    Explicit { q: Vec<Vec<f64>>, l: Vec<Vec<f64>> },
    Noilc { s: f64, r: f64 },
    Archetype { archetype: Archetype },
    Deadbeat,
    /// One of the two laws of the golden two-dimensional example.
    AppendixA { index: usize },
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> HarnessResult<Self> {
        let cfg: ScenarioConfig = serde_json::from_str(text).map_err(|e| {
            HarnessError::config(
                "<document>",
                e.to_string(),
            )
        })?;
        if cfg.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(HarnessError::config(
                "schema_version",
                format!("unsupported version {} (expected {CONFIG_SCHEMA_VERSION})", cfg.schema_version),
            ));
        }
        Ok(cfg)
    }

    /// Loads a config; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> HarnessResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::config(
            "--config",
            format!("cannot read {}: {e}", path.display()),
        ))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = cfg.topology_file.as_mut() {
            rebase(p);
        }
        if let PlantSource::Twipr {
            setup_file: Some(p), ..
        } = &mut cfg.plant
        {
            rebase(p);
        }
        Ok(cfg)
    }
}

/// Command-line overrides; `None`/`false` leave the config value in place.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub trials: Option<usize>,
    pub hold: bool,
    pub distributed: bool,
    pub topology: Option<PathBuf>,
}

impl RunOptions {
    pub fn apply(&self, cfg: &mut ScenarioConfig) {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out_dir {
            cfg.output_dir = Some(o.clone());
        }
        if let Some(t) = self.trials {
            cfg.trials = t;
        }
        cfg.hold_on_no_improvement |= self.hold;
        cfg.distributed_election |= self.distributed;
        if let Some(t) = &self.topology {
            cfg.topology_file = Some(t.clone());
        }
    }
}

/// A config resolved into concrete plant, laws and simulators.
pub struct Scenario {
    pub name: String,
    pub agent_names: Vec<String>,
    /// Model the laws are designed on.
    pub collective: Collective,
    /// One simulator per agent (id order).
    pub sims: Vec<Box<dyn TrialSimulator>>,
    pub u0: Vector,
    pub twipr: Option<TwiprStudy>,
    pub config: ScenarioConfig,
}

fn matrix(field: &str, rows: &[Vec<f64>]) -> HarnessResult<Mat> {
    from_rows(rows).ok_or_else(|| HarnessError::config(field, "rows must be non-empty and of equal length"))
}

fn wrap(field: impl Into<String>) -> impl FnOnce(CilcError) -> HarnessError {
    let field = field.into();
    move |e| match e {
        CilcError::NumericalBlowup { .. } => HarnessError::Cilc(e),
        other => HarnessError::config(field, other.to_string()),
    }
}

impl Scenario {
    pub fn resolve(config: ScenarioConfig) -> HarnessResult<Self> {
        if config.trials == 0 {
            return Err(HarnessError::config("trials", "must be at least 1"));
        }
        if config.sampling_budget == 0 {
            return Err(HarnessError::config("sampling_budget", "must be at least 1"));
        }
        if !(config.grid_spacing > 0.0 && config.grid_spacing.is_finite()) {
            return Err(HarnessError::config("grid_spacing", "must be positive"));
        }

        let (plant, twipr, default_ref) = match &config.plant {
            PlantSource::AppendixA => (fixtures::appendix_a_plant(), None, Some(fixtures::appendix_a_reference())),
            PlantSource::Twipr { setup, setup_file } => {
                let setup = match (setup, setup_file) {
                    (Some(_), Some(_)) => {
                        return Err(HarnessError::config("plant", "give either `setup` or `setup_file`, not both"))
                    }
                    (Some(s), None) => s.clone(),
                    (None, Some(path)) => {
                        let text = fs::read_to_string(path).map_err(|e| {
                            HarnessError::config("plant.setup_file", format!("cannot read {}: {e}", path.display()))
                        })?;
                        TwiprSetup::from_json(&text).map_err(wrap("plant.setup_file"))?
                    }
                    (None, None) => TwiprSetup::default(),
                };
                let study = setup.build().map_err(wrap("plant.setup"))?;
                let r = study.reference.clone();
                (study.plant.clone(), Some(study), Some(r))
            }
            PlantSource::Explicit { p, d } => {
                let p = matrix("plant.p", p)?;
                let n = p.nrows();
                let d = match d {
                    Some(d) => Vector::from_column_slice(d),
                    None => Vector::zeros(n),
                };
                (LiftedPlant::new(p, d).map_err(wrap("plant"))?, None, None)
            }
        };
        let n = plant.horizon();

        let specs: Vec<AgentSpec> = if !config.agents.is_empty() {
            config.agents.clone()
        } else {
            match &config.plant {
                PlantSource::AppendixA => (1..=2)
                    .map(|index| AgentSpec {
                        name: None,
                        law: LawSource::AppendixA { index },
                        inertia_scale: None,
                    })
                    .collect(),
                PlantSource::Twipr { .. } => Archetype::ALL
                    .iter()
                    .map(|&archetype| AgentSpec {
                        name: None,
                        law: LawSource::Archetype { archetype },
                        inertia_scale: None,
                    })
                    .collect(),
                PlantSource::Explicit { .. } => {
                    return Err(HarnessError::config("agents", "required for explicit plants"))
                }
            }
        };

        let mut laws = Vec::with_capacity(specs.len());
        let mut names = Vec::with_capacity(specs.len());
        for (k, spec) in specs.iter().enumerate() {
            let id = k + 1;
            let field = format!("agents[{k}].law");
            let (law, default_name) = match &spec.law {
                LawSource::Explicit { q, l } => (
                    AgentLaw::new(id, matrix(&format!("{field}.q"), q)?, matrix(&format!("{field}.l"), l)?)
                        .map_err(wrap(&field))?,
                    format!("agent {id}"),
                ),
                LawSource::Noilc { s, r } => {
                    let w = NoilcWeights::new(*s, *r).map_err(wrap(&field))?;
                    (design_noilc(&plant, w, id).map_err(wrap(&field))?, format!("s={s} r={r}"))
                }
                LawSource::Archetype { archetype } => (
                    design_noilc(&plant, archetype.default_weights(), id).map_err(wrap(&field))?,
                    archetype.letter().to_string(),
                ),
                LawSource::Deadbeat => (AgentLaw::deadbeat(id, &plant).map_err(wrap(&field))?, "deadbeat".into()),
                LawSource::AppendixA { index } => {
                    let (a, b) = fixtures::appendix_a_laws();
                    let law = match index {
                        1 => a,
                        2 => b,
                        _ => return Err(HarnessError::config(format!("{field}.index"), "must be 1 or 2")),
                    };
                    (law.with_id(id), format!("ILC {index}"))
                }
            };
            if law.horizon() != n {
                return Err(HarnessError::config(&field, format!("law size {} does not match plant size {n}", law.horizon())));
            }
            laws.push(law);
            names.push(spec.name.clone().unwrap_or(default_name));
        }

        let reference = match (&config.reference, default_ref) {
            (Some(r), _) => Vector::from_column_slice(r),
            (None, Some(r)) => r,
            (None, None) => return Err(HarnessError::config("reference", "required for explicit plants")),
        };
        if reference.len() != n {
            return Err(HarnessError::config("reference", format!("length {} does not match plant size {n}", reference.len())));
        }
        let u0 = match &config.initial_input {
            Some(u) if u.len() != n => {
                return Err(HarnessError::config("initial_input", format!("length {} does not match plant size {n}", u.len())))
            }
            Some(u) => Vector::from_column_slice(u),
            None => Vector::zeros(n),
        };

        let mut sims: Vec<Box<dyn TrialSimulator>> = Vec::with_capacity(laws.len());
        for (k, spec) in specs.iter().enumerate() {
            match (&twipr, spec.inertia_scale) {
                (Some(study), scale) => {
                    let mut robot: NonlinearTwipr = study.truth.clone();
                    if let Some(s) = scale {
                        if !(s.is_finite() && s > 0.0) {
                            return Err(HarnessError::config(format!("agents[{k}].inertia_scale"), "must be positive"));
                        }
                        robot.params = robot.params.with_inertia_scale(robot.params.inertia_scale * s);
                    }
                    sims.push(Box::new(robot));
                }
                (None, Some(_)) => {
                    return Err(HarnessError::config(
                        format!("agents[{k}].inertia_scale"),
                        "only meaningful for the twipr plant",
                    ))
                }
                (None, None) => sims.push(Box::new(plant.clone())),
            }
        }

        let collective = Collective::new(plant, laws, reference).map_err(wrap("agents"))?;
        Ok(Scenario {
            name: config.scenario.clone().unwrap_or_else(|| "scenario".into()),
            agent_names: names,
            collective,
            sims,
            u0,
            twipr,
            config,
        })
    }

    fn sim_refs(&self, ids: &[usize]) -> Vec<&dyn TrialSimulator> {
        ids.iter().map(|&id| self.sims[id - 1].as_ref()).collect()
    }

    fn topology(&self, m: usize) -> HarnessResult<Option<Topology>> {
        if !self.config.distributed_election {
            if self.config.topology_file.is_some() {
                log::warn!("topology file ignored without distributed election");
            }
            return Ok(None);
        }
        let topo = match &self.config.topology_file {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| {
                    HarnessError::config("topology_file", format!("cannot read {}: {e}", path.display()))
                })?;
                Topology::parse_edge_list(&text, Some(m)).map_err(wrap("topology_file"))?
            }
            None => Topology::ring(m).map_err(wrap("topology_file"))?,
        };
        Ok(Some(topo))
    }

    /// Collective run of the agents `ids` (1-based, as in the scenario).
    pub fn run_collective(&self, ids: &[usize]) -> HarnessResult<(CilcHistory, Option<Vec<ElectionTrace>>)> {
        let laws: Vec<AgentLaw> = ids
            .iter()
            .enumerate()
            .map(|(k, &id)| self.collective.laws()[id - 1].clone().with_id(k + 1))
            .collect();
        let sims = self.sim_refs(ids);
        let options = CilcOptions {
            hold_on_no_improvement: self.config.hold_on_no_improvement,
        };
        let reference = self.collective.reference();
        match self.topology(ids.len())? {
            Some(topo) => {
                let mut elector = DistributedElector::new(&topo);
                let h = run_cilc_with(&sims, &laws, reference, &self.u0, self.config.trials, options, &mut elector)?;
                Ok((h, Some(elector.traces)))
            }
            None => Ok((
                run_cilc_with(&sims, &laws, reference, &self.u0, self.config.trials, options, &mut CentralElector)?,
                None,
            )),
        }
    }

    /// Isolated run of agent `id`; stops early (without failing) if the robot falls.
    pub fn run_isolated(&self, id: usize) -> HarnessResult<IsolatedRun> {
        let law = &self.collective.laws()[id - 1];
        let sim = self.sims[id - 1].as_ref();
        let reference = self.collective.reference();
        let mut records = Vec::with_capacity(self.config.trials);
        let mut u = self.u0.clone();
        let mut aborted = None;
        for j in 0..self.config.trials {
            match sim.run_trial(&u) {
                Ok(y) => {
                    let rec = TrialRecord::new(j, u.clone(), y, reference);
                    u = ilc_update(law, &rec.u, &rec.e)?;
                    records.push(rec);
                }
                Err(e @ CilcError::NumericalBlowup { .. }) => {
                    aborted = Some(e.at_trial(j).to_string());
                    break;
                }
                Err(e) => return Err(e.into()),
            }
        }
        Ok(IsolatedRun {
            agent_id: id,
            records,
            aborted,
        })
    }
}

pub struct IsolatedRun {
    pub agent_id: usize,
    pub records: Vec<TrialRecord>,
    /// Set when a trial blew up; the records stop before it.
    pub aborted: Option<String>,
}

impl IsolatedRun {
    pub fn norms(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.e_norm).collect()
    }
}

pub fn isolated_csv(runs: &[&IsolatedRun]) -> String {
    let mut out = String::from("trial,agent_id,e_norm,is_best,held\n");
    for run in runs {
        for r in &run.records {
            let _ = writeln!(out, "{},{},{},0,0", r.trial, run.agent_id, r.e_norm);
        }
    }
    out
}

pub fn history_csv(history: &CilcHistory) -> String {
    let mut out = String::from("trial,agent_id,e_norm,is_best,held\n");
    for t in &history.trials {
        let held = u8::from(t.held);
        let _ = writeln!(out, "{},0,{},0,{held}", t.trial, t.e_bar.norm());
        for (k, r) in t.records.iter().enumerate() {
            let best = u8::from(k + 1 == t.best_performer);
            let _ = writeln!(out, "{},{},{},{best},{held}", t.trial, k + 1, r.e_norm);
        }
    }
    out
}

/// Files written by a command and its console summary.
#[derive(Debug, Default)]
pub struct Artifacts {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub summary: String,
}

impl Artifacts {
    fn new(dir: PathBuf) -> HarnessResult<Self> {
        fs::create_dir_all(&dir).map_err(|source| HarnessError::Io {
            path: dir.clone(),
            source,
        })?;
        Ok(Artifacts {
            dir,
            files: Vec::new(),
            summary: String::new(),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> HarnessResult<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|source| HarnessError::Io {
            path: path.clone(),
            source,
        })?;
        self.files.push(path);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> HarnessResult<()> {
        let text = serde_json::to_string_pretty(value).expect("report types serialize");
        self.write(name, &(text + "\n"))
    }

    /// `<stem>.svg` plus its data twin `<stem>.csv`.
    fn chart(&mut self, stem: &str, chart: &LineChart) -> HarnessResult<()> {
        self.write(&format!("{stem}.svg"), &chart.to_svg())?;
        self.write(&format!("{stem}.csv"), &chart.to_csv())
    }

    fn line(&mut self, text: impl AsRef<str>) {
        self.summary.push_str(text.as_ref());
        self.summary.push('\n');
    }
}

fn out_dir(cfg: &ScenarioConfig, command: &str) -> PathBuf {
    cfg.output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("out").join(command))
}

fn verdict_word(v: Verdict) -> &'static str {
    match v {
        Verdict::Certified => "certified",
        Verdict::Refuted => "refuted",
        Verdict::Inconclusive => "inconclusive",
    }
}

fn threshold_text(t: Threshold) -> String {
    match t {
        Threshold::Finite(v) => format!("{v:.6}"),
        Threshold::Infinite => "infinite".into(),
    }
}

fn yes(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

fn certificate_lines(report: &CollectiveReport, names: &[String], out: &mut Artifacts) {
    for a in &report.agents {
        let name = &names[a.agent_id - 1];
        out.line(format!(
            "[theorem-1] agent {} ({name}): rho = {:.6}, asymptotically stable: {}",
            a.agent_id,
            a.rho,
            yes(a.asymptotically_stable)
        ));
        out.line(format!(
            "[theorem-2] agent {} ({name}): gamma = {:.6}, monotone above threshold: {}",
            a.agent_id,
            a.gamma,
            yes(a.monotone_above_threshold)
        ));
        out.line(format!(
            "[theorem-3] agent {} ({name}): kappa = {}",
            a.agent_id,
            threshold_text(a.kappa)
        ));
    }
    let cert = report
        .gamma_bar_certified
        .map_or("n/a (planar only)".to_string(), |c| format!("{c:.6}"));
    out.line(format!(
        "[theorem-4] collective rate: sampled lower {:.6}, min-norm upper {:.6}, grid certificate {cert}: {}",
        report.gamma_bar_lower,
        report.gamma_bar_upper,
        verdict_word(report.theorem4)
    ));
    out.line(format!(
        "[theorem-5] some agent individually monotone: {}",
        verdict_word(report.theorem5)
    ));
    out.line(format!(
        "[theorem-6] some monotone agent with zero residual error: {}",
        verdict_word(report.theorem6)
    ));
    out.line(format!(
        "[corollary-1] collective threshold kappa_bar = {} ({:?})",
        threshold_text(report.kappa_bar.threshold),
        report.kappa_bar.source
    ));
}

fn certify_options(cfg: &ScenarioConfig) -> CertifyOptions {
    CertifyOptions {
        sampling_budget: cfg.sampling_budget,
        seed: cfg.seed,
        grid_spacing: cfg.grid_spacing,
    }
}

#[derive(Debug, Serialize)]
struct AppendixAReport<'a> {
    certificate: &'a CollectiveReport,
    locus_max_radius: Vec<f64>,
    collective_locus_max_radius: f64,
    isolated_growth: Vec<f64>,
    cilc_norms: Vec<f64>,
    cilc_best_sequence: Vec<usize>,
    cilc_non_increasing: bool,
    cilc_non_increasing_above_kappa_bar: bool,
}

/// Golden two-dimensional example: loci, norm progressions and certificate.
pub fn cmd_appendix_a(mut cfg: ScenarioConfig, opts: &RunOptions) -> HarnessResult<Artifacts> {
    opts.apply(&mut cfg);
    cfg.plant = PlantSource::AppendixA;
    cfg.agents.clear();
    cfg.reference = None;
    let mut out = Artifacts::new(out_dir(&cfg, "appendix-a"))?;
    let sc = Scenario::resolve(cfg)?;

    let omegas = sc.collective.omegas()?;
    let locus: ContractionLocus = contraction_locus(&omegas, LOCUS_DIRECTIONS)?;
    let circle: Vec<(f64, f64)> = (0..=LOCUS_DIRECTIONS)
        .map(|k| {
            let t = 2.0 * std::f64::consts::PI * k as f64 / LOCUS_DIRECTIONS as f64;
            (t.cos(), t.sin())
        })
        .collect();
    let close = |pts: &[[f64; 2]]| -> Vec<(f64, f64)> {
        pts.iter().chain(pts.first()).map(|p| (p[0], p[1])).collect()
    };
    let mut chart = LineChart::new("Contraction loci", "v1", "v2").equal_aspect();
    for (k, pts) in locus.agents.iter().enumerate() {
        chart = chart.with(Series::line(format!("W{}", k + 1), close(pts)));
    }
    chart = chart
        .with(Series::line("W collective", close(&locus.collective)))
        .with(Series::line("unit circle", circle));
    out.chart("loci", &chart)?;

    let report = certify_collective(&sc.collective, certify_options(&sc.config))?;
    let isolated: Vec<IsolatedRun> = (1..=sc.collective.size())
        .map(|id| sc.run_isolated(id))
        .collect::<HarnessResult<_>>()?;
    let ids: Vec<usize> = (1..=sc.collective.size()).collect();
    let (history, _) = sc.run_collective(&ids)?;
    let cilc = history.e_bar_norms();
    out.write("isolated.csv", &isolated_csv(&isolated.iter().collect::<Vec<_>>()))?;
    out.write("cilc.csv", &history_csv(&history))?;

    let mut norms = LineChart::new("Error norms", "trial", "||e||").log_y();
    for run in &isolated {
        norms = norms.with(Series::from_values(format!("isolated {}", sc.agent_names[run.agent_id - 1]), &run.norms()));
    }
    norms = norms.with(Series::from_values("CILC", &cilc));
    if let Threshold::Finite(k) = report.kappa_bar.threshold {
        norms = norms.with(Series::line("kappa_bar", vec![(0.0, k), ((cilc.len() - 1) as f64, k)]));
    }
    out.chart("norms", &norms)?;

    let kappa = report.kappa_bar.threshold.value();
    let non_increasing = cilc.windows(2).all(|w| w[1] <= w[0]);
    let above = cilc.windows(2).all(|w| w[0] < kappa || w[1] <= w[0]);
    let growth: Vec<f64> = isolated
        .iter()
        .map(|r| {
            let n = r.norms();
            n.last().copied().unwrap_or(f64::NAN) / n[0]
        })
        .collect();
    let rep = AppendixAReport {
        certificate: &report,
        locus_max_radius: locus.agents.iter().map(|p| ContractionLocus::max_radius(p)).collect(),
        collective_locus_max_radius: ContractionLocus::max_radius(&locus.collective),
        isolated_growth: growth.clone(),
        cilc_norms: cilc.clone(),
        cilc_best_sequence: history.best_sequence(),
        cilc_non_increasing: non_increasing,
        cilc_non_increasing_above_kappa_bar: above,
    };
    out.json("report.json", &rep)?;

    certificate_lines(&report, &sc.agent_names, &mut out);
    for (k, r) in rep.locus_max_radius.iter().enumerate() {
        out.line(format!("locus W{} max radius {r:.6}", k + 1));
    }
    out.line(format!("collective locus max radius {:.6}", rep.collective_locus_max_radius));
    for (k, g) in growth.iter().enumerate() {
        out.line(format!("isolated agent {} error growth over the run: {g:.3}x", k + 1));
    }
    out.line(format!(
        "CILC final norm {:.6}; non-increasing at every trial: {}; non-increasing above kappa_bar: {}",
        cilc.last().copied().unwrap_or(f64::NAN),
        yes(non_increasing),
        yes(above)
    ));
    out.write("report.txt", &out.summary.clone())?;
    Ok(out)
}

#[derive(Debug, Serialize)]
struct TwiprAgentReport {
    id: usize,
    name: String,
    weights: Option<NoilcWeights>,
    model_rho: f64,
    model_gamma: f64,
    robot_linear_gamma: f64,
    isolated_norms: Vec<f64>,
    isolated_min_trial: usize,
    isolated_increases_after_min: bool,
    isolated_monotone: bool,
    aborted: Option<String>,
}

#[derive(Debug, Serialize)]
struct TwiprCollectiveReport {
    label: String,
    members: Vec<usize>,
    norms: Vec<f64>,
    best_sequence: Vec<usize>,
    held_trials: Vec<usize>,
    /// `||e_bar_j|| <= ||e~_j^m||` for every member and every trial where the member's isolated run exists.
    below_every_isolated: bool,
    rounds_per_trial: Option<Vec<usize>>,
}

#[derive(Debug, Serialize)]
struct TwiprReport {
    robot_closed_loop_radius: f64,
    model_inertia_scale: f64,
    poles: Vec<crate::twipr::Pole>,
    agents: Vec<TwiprAgentReport>,
    collectives: Vec<TwiprCollectiveReport>,
}

fn subsets(m: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = (1u32..(1 << m))
        .map(|mask| (1..=m).filter(|k| mask & (1 << (k - 1)) != 0).collect::<Vec<_>>())
        .filter(|s| s.len() >= 2)
        .collect();
    out.sort_by(|a, b| a.len().cmp(&b.len()).then(a.cmp(b)));
    out
}

const MAX_TWIPR_AGENTS: usize = 6;

/// Simulated robot study: isolated agents and every collective of two or more.
pub fn cmd_twipr(mut cfg: ScenarioConfig, opts: &RunOptions) -> HarnessResult<Artifacts> {
    opts.apply(&mut cfg);
    if !matches!(cfg.plant, PlantSource::Twipr { .. }) {
        if cfg.plant != PlantSource::AppendixA || !cfg.agents.is_empty() {
            return Err(HarnessError::config("plant", "the twipr command needs a twipr plant"));
        }
        cfg.plant = PlantSource::Twipr {
            setup: None,
            setup_file: None,
        };
    }
    let mut out = Artifacts::new(out_dir(&cfg, "twipr"))?;
    let sc = Scenario::resolve(cfg)?;
    let m = sc.collective.size();
    if m > MAX_TWIPR_AGENTS {
        return Err(HarnessError::config("agents", format!("at most {MAX_TWIPR_AGENTS} agents")));
    }
    let study = sc.twipr.as_ref().expect("twipr plant resolved");
    let robot_plant = study.truth_linear_plant()?;

    let isolated: Vec<IsolatedRun> = (1..=m).map(|id| sc.run_isolated(id)).collect::<HarnessResult<_>>()?;
    let mut agents = Vec::with_capacity(m);
    let mut iso_chart = LineChart::new("Isolated agents", "trial", "||e|| [deg]").log_y();
    for run in &isolated {
        let id = run.agent_id;
        let law = &sc.collective.laws()[id - 1];
        let model = analyze_agent(sc.collective.plant(), law, sc.collective.reference())?;
        let robot = analyze_agent(&robot_plant, law, sc.collective.reference())?;
        let norms = run.norms();
        let min_trial = norms
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map_or(0, |(k, _)| k);
        let name = sc.agent_names[id - 1].clone();
        out.write(&format!("isolated_{}.csv", file_label(&name, id)), &isolated_csv(&[run]))?;
        iso_chart = iso_chart.with(Series::from_values(format!("ILC {name}"), &norms));
        agents.push(TwiprAgentReport {
            id,
            weights: match &sc.config.agents.get(id - 1).map(|a| &a.law) {
                Some(LawSource::Noilc { s, r }) => Some(NoilcWeights { s: *s, r: *r }),
                Some(LawSource::Archetype { archetype }) => Some(archetype.default_weights()),
                None if sc.config.agents.is_empty() => Some(Archetype::ALL[id - 1].default_weights()),
                _ => None,
            },
            name,
            model_rho: model.rho,
            model_gamma: model.gamma,
            robot_linear_gamma: robot.gamma,
            isolated_increases_after_min: norms[min_trial..].windows(2).any(|w| w[1] > w[0]),
            isolated_monotone: run.aborted.is_none() && norms.windows(2).all(|w| w[1] <= w[0]),
            isolated_min_trial: min_trial,
            isolated_norms: norms,
            aborted: run.aborted.clone(),
        });
    }
    out.chart("isolated_norms", &iso_chart)?;

    let mut collectives = Vec::new();
    let mut coll_chart = LineChart::new("Collectives", "trial", "||e_bar|| [deg]").log_y();
    for members in subsets(m) {
        let label: Vec<&str> = members.iter().map(|&id| sc.agent_names[id - 1].as_str()).collect();
        let label = label.join("+");
        let (history, traces) = sc.run_collective(&members)?;
        let norms = history.e_bar_norms();
        let below = members.iter().all(|&id| {
            let iso = agents[id - 1].isolated_norms.as_slice();
            norms.iter().zip(iso).all(|(c, i)| *c <= *i)
        });
        let stem: Vec<String> = members.iter().map(|&id| file_label(&sc.agent_names[id - 1], id)).collect();
        let stem = stem.join("_");
        out.write(&format!("cilc_{stem}.csv"), &history_csv(&history))?;
        let mut chart = LineChart::new(format!("CILC {label}"), "trial", "||e|| [deg]")
            .log_y()
            .with(Series::from_values(format!("CILC {label}"), &norms));
        for &id in &members {
            chart = chart.with(Series::from_values(
                format!("ILC {}", sc.agent_names[id - 1]),
                &agents[id - 1].isolated_norms,
            ));
        }
        out.chart(&format!("cilc_{stem}_norms"), &chart)?;
        coll_chart = coll_chart.with(Series::from_values(label.clone(), &norms));
        // Best performers as scenario agent ids.
        let best: Vec<usize> = history.best_sequence().iter().map(|&k| members[k - 1]).collect();
        collectives.push(TwiprCollectiveReport {
            label,
            members: members.clone(),
            norms,
            best_sequence: best,
            held_trials: history.trials.iter().filter(|t| t.held).map(|t| t.trial).collect(),
            below_every_isolated: below,
            rounds_per_trial: traces.map(|ts| ts.iter().map(|t| t.rounds_used).collect()),
        });
    }
    out.chart("collective_norms", &coll_chart)?;

    let setup_scale = match &sc.config.plant {
        PlantSource::Twipr { setup: Some(s), .. } => s.model_inertia_scale,
        _ => crate::twipr::MODEL_INERTIA_SCALE,
    };
    let report = TwiprReport {
        robot_closed_loop_radius: study.truth_closed_loop_radius()?,
        model_inertia_scale: setup_scale,
        poles: study_poles(&sc),
        agents,
        collectives,
    };
    out.json("report.json", &report)?;

    out.line(format!(
        "robot closed-loop spectral radius {:.4} (laws designed on a model with inertias x{})",
        report.robot_closed_loop_radius, report.model_inertia_scale
    ));
    for a in &report.agents {
        let tail = match &a.aborted {
            Some(msg) => format!("aborted: {msg}"),
            None => format!(
                "final {:.4}, min at trial {}, {}",
                a.isolated_norms.last().copied().unwrap_or(f64::NAN),
                a.isolated_min_trial,
                if a.isolated_monotone {
                    "monotone"
                } else if a.isolated_increases_after_min {
                    "increases after its minimum"
                } else {
                    "not monotone"
                }
            ),
        };
        out.line(format!(
            "ILC {}: model gamma {:.6}, robot-linearization gamma {:.6}; isolated from {:.3}: {tail}",
            a.name,
            a.model_gamma,
            a.robot_linear_gamma,
            a.isolated_norms.first().copied().unwrap_or(f64::NAN)
        ));
    }
    for c in &report.collectives {
        out.line(format!(
            "CILC {}: final {:.4}; at or below every member's isolated norm: {}; best performers {:?}",
            c.label,
            c.norms.last().copied().unwrap_or(f64::NAN),
            yes(c.below_every_isolated),
            c.best_sequence
        ));
    }
    out.write("report.txt", &out.summary.clone())?;
    Ok(out)
}

fn study_poles(sc: &Scenario) -> Vec<crate::twipr::Pole> {
    match &sc.config.plant {
        PlantSource::Twipr { setup: Some(s), .. } => s.poles.clone(),
        _ => crate::twipr::DEFAULT_POLES.to_vec(),
    }
}

fn file_label(name: &str, id: usize) -> String {
    let clean: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '-' })
        .collect();
    if clean.trim_matches('-').is_empty() {
        format!("agent{id}")
    } else {
        clean
    }
}

/// Convergence certificate for the configured collective.
pub fn cmd_certify(mut cfg: ScenarioConfig, opts: &RunOptions) -> HarnessResult<Artifacts> {
    opts.apply(&mut cfg);
    let mut out = Artifacts::new(out_dir(&cfg, "certify"))?;
    let sc = Scenario::resolve(cfg)?;
    let report = certify_collective(&sc.collective, certify_options(&sc.config))?;
    out.json("certificate.json", &report)?;
    certificate_lines(&report, &sc.agent_names, &mut out);
    out.write("certificate.txt", &out.summary.clone())?;
    Ok(out)
}

#[derive(Debug, Serialize)]
struct PerfEvalReport {
    horizon: usize,
    zero_input_form: bool,
    predicted_sequence: Vec<usize>,
    near_ties: Vec<usize>,
    verdict: WellPerforming,
}

/// Closed-form score table and the well-performing verdict up to `trials - 1`.
pub fn cmd_perf_eval(mut cfg: ScenarioConfig, opts: &RunOptions) -> HarnessResult<Artifacts> {
    opts.apply(&mut cfg);
    let mut out = Artifacts::new(out_dir(&cfg, "perf-eval"))?;
    let sc = Scenario::resolve(cfg)?;
    let horizon = sc.config.trials.saturating_sub(1).max(1);
    let rd = sc.collective.reference_offset();
    let e0 = sc.collective.reference() - sc.collective.plant().simulate_trial(&sc.u0)?;
    let table = well_performing_scores(&sc.collective, &e0, &rd, horizon)?;
    let verdict = verdict_from_scores(&table, &e0, &rd);

    let mut csv = String::from("trial,agent_id,score\n");
    for (j, row) in table.scores.iter().enumerate() {
        for (k, f) in row.iter().enumerate() {
            let _ = writeln!(csv, "{j},{},{f}", k + 1);
        }
    }
    out.write("scores.csv", &csv)?;
    let report = PerfEvalReport {
        horizon,
        zero_input_form: table.zero_input_form,
        predicted_sequence: table.sequence.clone(),
        near_ties: table.near_ties.clone(),
        verdict: verdict.clone(),
    };
    out.json("perf_eval.json", &report)?;

    let worst = table.scores.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    out.line(format!(
        "[theorem-7] largest score over trials 0..={horizon}: {worst:.6e} ({} path)",
        if table.zero_input_form { "zero-initial-input" } else { "general" }
    ));
    out.line(format!("[proposition-5] predicted best performers: {:?}", table.sequence));
    if !table.near_ties.is_empty() {
        out.line(format!("near ties at trials {:?}", table.near_ties));
    }
    out.line(match verdict {
        WellPerforming::CertifiedUpToHorizon { horizon } => {
            format!("[theorem-7] well-performing: certified for trials 0..={horizon} (nothing claimed beyond)")
        }
        WellPerforming::Refuted { trial, agent, score } => format!(
            "[theorem-7] well-performing: refuted at trial {trial}, agent {agent} (score {score:.6e})"
        ),
    });
    out.write("perf_eval.txt", &out.summary.clone())?;
    Ok(out)
}

/// Five agents on the golden plant: the two golden laws plus three
/// norm-optimal designs.
pub fn default_consensus_agents() -> Vec<AgentSpec> {
    let mut agents: Vec<AgentSpec> = (1..=2)
        .map(|index| AgentSpec {
            name: None,
            law: LawSource::AppendixA { index },
            inertia_scale: None,
        })
        .collect();
    for w in [fixtures::EXPERIMENT_1[0], fixtures::EXPERIMENT_1[1], fixtures::EXPERIMENT_3[1]] {
        agents.push(AgentSpec {
            name: None,
            law: LawSource::Noilc { s: w.s, r: w.r },
            inertia_scale: None,
        });
    }
    agents
}

#[derive(Debug, Serialize)]
struct ConsensusReport {
    agents: usize,
    edges: Vec<(usize, usize)>,
    diameter: usize,
    rounds_per_trial: Vec<usize>,
    unanimous_every_trial: bool,
    identical_to_centralized: bool,
}

/// Distributed election trace and its equivalence with the central election.
pub fn cmd_consensus(mut cfg: ScenarioConfig, opts: &RunOptions) -> HarnessResult<Artifacts> {
    opts.apply(&mut cfg);
    if cfg.plant == PlantSource::AppendixA && cfg.agents.is_empty() {
        cfg.agents = default_consensus_agents();
    }
    cfg.distributed_election = true;
    let mut out = Artifacts::new(out_dir(&cfg, "consensus"))?;
    let sc = Scenario::resolve(cfg)?;
    let m = sc.collective.size();
    let topo = sc.topology(m)?.expect("distributed election enabled");
    if sc.sims.iter().any(|_| sc.twipr.is_some()) {
        log::info!("consensus on the simulated robot; trials run the nonlinear model");
    }

    let ids: Vec<usize> = (1..=m).collect();
    let central = {
        let sims = sc.sim_refs(&ids);
        run_cilc_with(
            &sims,
            sc.collective.laws(),
            sc.collective.reference(),
            &sc.u0,
            sc.config.trials,
            CilcOptions {
                hold_on_no_improvement: sc.config.hold_on_no_improvement,
            },
            &mut CentralElector,
        )?
    };
    let (distributed, traces) = if sc.twipr.is_none() {
        run_distributed_cilc(&topo, &sc.collective, &sc.u0, sc.config.trials, sc.config.hold_on_no_improvement)?
    } else {
        let (h, t) = sc.run_collective(&ids)?;
        (h, t.expect("distributed"))
    };

    let mut csv = String::from("trial,round,agent_id,held_id,held_norm\n");
    for (j, trace) in traces.iter().enumerate() {
        for (round, keys) in trace.rounds.iter().enumerate() {
            for (k, (norm, id)) in keys.iter().enumerate() {
                let _ = writeln!(csv, "{j},{round},{},{id},{norm}", k + 1);
            }
        }
    }
    out.write("election_trace.csv", &csv)?;
    out.write("cilc.csv", &history_csv(&distributed))?;

    let unanimous = traces.iter().all(|t| {
        t.rounds
            .last()
            .is_some_and(|keys| keys.windows(2).all(|w| w[0].1 == w[1].1))
    });
    let report = ConsensusReport {
        agents: m,
        edges: topo.edges().collect(),
        diameter: topo.diameter(),
        rounds_per_trial: traces.iter().map(|t| t.rounds_used).collect(),
        unanimous_every_trial: unanimous,
        identical_to_centralized: central == distributed,
    };
    out.json("consensus.json", &report)?;
    out.line(format!(
        "topology: {m} agents, {} edges, diameter {}",
        report.edges.len(),
        report.diameter
    ));
    out.line(format!(
        "rounds used per election: {} (every trial); unanimous: {}",
        report.rounds_per_trial.first().copied().unwrap_or(0),
        yes(unanimous)
    ));
    out.line(format!(
        "distributed history identical to centralized: {}",
        if report.identical_to_centralized { "pass" } else { "FAIL" }
    ));
    out.write("consensus.txt", &out.summary.clone())?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_versioning() {
        let cfg = ScenarioConfig::from_json(r#"{"schema_version": 1}"#).unwrap();
        assert_eq!(cfg, ScenarioConfig::default());
        let err = ScenarioConfig::from_json(r#"{"schema_version": 2}"#).unwrap_err();
        assert!(matches!(err, HarnessError::Config { ref field, .. } if field == "schema_version"));
        let err = ScenarioConfig::from_json(r#"{"schema_version": 1, "trails": 3}"#).unwrap_err();
        assert!(err.to_string().contains("trails"));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn field_level_errors() {
        let cfg = ScenarioConfig::from_json(
            r#"{"schema_version": 1, "agents": [{"law": {"kind": "noilc", "s": -1, "r": 0}}]}"#,
        )
        .unwrap();
        let err = Scenario::resolve(cfg).err().unwrap();
        assert!(matches!(err, HarnessError::Config { ref field, .. } if field == "agents[0].law"));

        let cfg = ScenarioConfig::from_json(
            r#"{"schema_version": 1, "plant": {"kind": "explicit", "p": [[1, 0], [0.5, 1]]},
                "agents": [{"law": {"kind": "deadbeat"}}]}"#,
        )
        .unwrap();
        let err = Scenario::resolve(cfg).err().unwrap();
        assert!(matches!(err, HarnessError::Config { ref field, .. } if field == "reference"));
    }

    #[test]
    fn subsets_in_study_order() {
        assert_eq!(subsets(3), vec![vec![1, 2], vec![1, 3], vec![2, 3], vec![1, 2, 3]]);
    }

    #[test]
    fn csv_schema() {
        let sc = Scenario::resolve(ScenarioConfig {
            trials: 3,
            ..Default::default()
        })
        .unwrap();
        let (h, _) = sc.run_collective(&[1, 2]).unwrap();
        let csv = history_csv(&h);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("trial,agent_id,e_norm,is_best,held"));
        assert_eq!(lines.next(), Some("0,0,1,0,0"));
        assert_eq!(csv.lines().count(), 1 + 3 * 3);
    }

    #[test]
    fn blowup_exit_code() {
        let e = HarnessError::Cilc(CilcError::NumericalBlowup {
            trial: Some(2),
            sample: 4,
            pitch_deg: 91.0,
        });
        assert_eq!(e.exit_code(), 3);
    }
}
