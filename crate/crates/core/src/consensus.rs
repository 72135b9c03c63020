//! Distributed best-performer election over a directed communication graph.
//!
//! Each agent holds a candidate `(norm, id, payload)`. In every synchronous
//! round, agents send their current candidate to their out-neighbours and keep
//! the lexicographically smallest `(norm, id)` among their own and everything
//! received. On a strongly connected digraph every agent holds the global
//! minimum after exactly `diameter` rounds. Links are lossless and rounds are
//! instantaneous relative to a trial.

use std::collections::{BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::collective::{
    candidate_order, run_cilc_with, CilcHistory, CilcOptions, Collective, ElectedPair, Elector,
};
use crate::error::{CilcError, Result};
use crate::lifted::{TrialRecord, TrialSimulator};
use crate::linalg::Vector;

/// Strongly connected digraph on agents `1..=m`. Self-loops are implicit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    m: usize,
    edges: BTreeSet<(usize, usize)>,
    // in_nbrs[v - 1] = senders to v
    in_nbrs: Vec<Vec<usize>>,
    out_nbrs: Vec<Vec<usize>>,
    diameter: usize,
}

impl Topology {
    pub fn new(m: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if m == 0 {
            return Err(CilcError::InvalidTopology("agent count must be at least 1".into()));
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            for id in [a, b] {
                if id == 0 || id > m {
                    return Err(CilcError::InvalidTopology(format!(
                        "edge ({a}, {b}) references agent {id} outside 1..={m}"
                    )));
                }
            }
            if a != b {
                set.insert((a, b));
            }
        }
        let mut in_nbrs = vec![Vec::new(); m];
        let mut out_nbrs = vec![Vec::new(); m];
        for &(a, b) in &set {
            out_nbrs[a - 1].push(b);
            in_nbrs[b - 1].push(a);
        }
        let mut t = Topology {
            m,
            edges: set,
            in_nbrs,
            out_nbrs,
            diameter: 0,
        };
        t.check_strongly_connected()?;
        t.diameter = (1..=m).map(|s| t.eccentricity(s)).max().unwrap_or(0);
        Ok(t)
    }

    /// Directed ring `1 -> 2 -> ... -> m -> 1`.
    pub fn ring(m: usize) -> Result<Self> {
        Self::new(m, (1..=m).map(|a| (a, a % m + 1)))
    }

    pub fn complete(m: usize) -> Result<Self> {
        let edges: Vec<_> = (1..=m)
            .flat_map(|a| (1..=m).filter(move |&b| b != a).map(move |b| (a, b)))
            .collect();
        Self::new(m, edges)
    }

    /// Parses `from to` lines (1-based); `#` starts a comment. When `m` is
    /// `None` the agent count is the largest id mentioned.
    pub fn parse_edge_list(text: &str, m: Option<usize>) -> Result<Self> {
        let mut edges = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let parse = |s: &str| {
                s.parse::<usize>().map_err(|_| {
                    CilcError::InvalidTopology(format!(
                        "line {}: `{s}` is not a positive integer",
                        lineno + 1
                    ))
                })
            };
            match fields.as_slice() {
                [a, b] => edges.push((parse(a)?, parse(b)?)),
                _ => {
                    return Err(CilcError::InvalidTopology(format!(
                        "line {}: expected `from to`, got `{line}`",
                        lineno + 1
                    )))
                }
            }
        }
        let m = match m {
            Some(m) => m,
            None => edges.iter().map(|&(a, b)| a.max(b)).max().unwrap_or(1),
        };
        Self::new(m, edges)
    }

    pub fn size(&self) -> usize {
        self.m
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn diameter(&self) -> usize {
        self.diameter
    }

    pub fn in_neighbors(&self, id: usize) -> &[usize] {
        &self.in_nbrs[id - 1]
    }

    fn bfs(&self, source: usize, forward: bool) -> Vec<Option<usize>> {
        let adj = if forward { &self.out_nbrs } else { &self.in_nbrs };
        let mut dist = vec![None; self.m];
        dist[source - 1] = Some(0);
        let mut queue = VecDeque::from([source]);
        while let Some(v) = queue.pop_front() {
            let dv = dist[v - 1].expect("queued nodes are reached");
            for &w in &adj[v - 1] {
                if dist[w - 1].is_none() {
                    dist[w - 1] = Some(dv + 1);
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    fn check_strongly_connected(&self) -> Result<()> {
        // Strongly connected iff node 1 reaches everyone and everyone reaches node 1.
        if let Some(k) = self.bfs(1, true).iter().position(Option::is_none) {
            return Err(CilcError::NotStronglyConnected { from: 1, to: k + 1 });
        }
        if let Some(k) = self.bfs(1, false).iter().position(Option::is_none) {
            return Err(CilcError::NotStronglyConnected { from: k + 1, to: 1 });
        }
        Ok(())
    }

    fn eccentricity(&self, source: usize) -> usize {
        self.bfs(source, true)
            .into_iter()
            .map(|d| d.expect("strongly connected"))
            .max()
            .unwrap_or(0)
    }

    /// Random strongly connected digraph: a shuffled Hamiltonian cycle plus
    /// each remaining ordered pair with probability `density`.
    pub fn random_strongly_connected(m: usize, density: f64, rng: &mut impl Rng) -> Result<Self> {
        let mut order: Vec<usize> = (1..=m).collect();
        order.shuffle(rng);
        let mut edges: Vec<(usize, usize)> =
            (0..m).map(|k| (order[k], order[(k + 1) % m])).collect();
        for a in 1..=m {
            for b in 1..=m {
                if a != b && rng.random_bool(density.clamp(0.0, 1.0)) {
                    edges.push((a, b));
                }
            }
        }
        Self::new(m, edges)
    }

    pub fn random_strongly_connected_seeded(m: usize, density: f64, seed: u64) -> Result<Self> {
        Self::random_strongly_connected(m, density, &mut ChaCha8Rng::seed_from_u64(seed))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate<T> {
    pub norm: f64,
    pub id: usize,
    pub payload: T,
}

impl<T> Candidate<T> {
    fn key(&self) -> (f64, usize) {
        (self.norm, self.id)
    }
}

/// Per-agent candidates after some number of rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ElectionState<T> {
    pub round: usize,
    pub held: Vec<Candidate<T>>,
}

impl<T: Clone> ElectionState<T> {
    pub fn keys(&self) -> Vec<(f64, usize)> {
        self.held.iter().map(Candidate::key).collect()
    }

    pub fn unanimous(&self) -> bool {
        self.held.windows(2).all(|w| w[0].id == w[1].id)
    }

    /// One synchronous round: every agent folds its in-neighbours' previous
    /// candidates into its own.
    pub fn step(&self, topology: &Topology) -> Self {
        let held = (1..=topology.size())
            .map(|v| {
                let mut best = &self.held[v - 1];
                for &u in topology.in_neighbors(v) {
                    let c = &self.held[u - 1];
                    if candidate_order(c.key(), best.key()).is_lt() {
                        best = c;
                    }
                }
                best.clone()
            })
            .collect();
        ElectionState {
            round: self.round + 1,
            held,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ElectionTrace {
    pub rounds_used: usize,
    /// `(norm, id)` held by every agent, from round 0 (local values) on.
    pub rounds: Vec<Vec<(f64, usize)>>,
}

fn initial_state<T: Clone>(topology: &Topology, local: Vec<Candidate<T>>) -> Result<ElectionState<T>> {
    if local.len() != topology.size() {
        return Err(CilcError::dims("local candidates", topology.size(), local.len()));
    }
    for (k, c) in local.iter().enumerate() {
        if c.id != k + 1 {
            return Err(CilcError::InvalidAgentIds {
                expected_max: topology.size(),
                found: c.id,
            });
        }
    }
    Ok(ElectionState {
        round: 0,
        held: local,
    })
}

/// Runs exactly `rounds` synchronous rounds.
pub fn run_rounds<T: Clone>(
    topology: &Topology,
    local: Vec<Candidate<T>>,
    rounds: usize,
) -> Result<ElectionState<T>> {
    let mut state = initial_state(topology, local)?;
    for _ in 0..rounds {
        state = state.step(topology);
    }
    Ok(state)
}

/// Floods for `diameter` rounds and returns every agent's final candidate.
pub fn elect_best_performer<T: Clone>(
    topology: &Topology,
    local: Vec<Candidate<T>>,
) -> Result<(Vec<Candidate<T>>, ElectionTrace)> {
    let mut state = initial_state(topology, local)?;
    let mut rounds = vec![state.keys()];
    for _ in 0..topology.diameter() {
        let next = state.step(topology);
        let keys = next.keys();
        let prev = rounds.last().expect("seeded");
        if keys
            .iter()
            .zip(prev)
            .any(|(n, p)| candidate_order(*n, *p).is_gt())
        {
            return Err(CilcError::InvalidTopology(
                "held candidate increased during flooding".into(),
            ));
        }
        rounds.push(keys);
        state = next;
    }
    if !state.unanimous() {
        return Err(CilcError::InvalidTopology(format!(
            "no agreement after {} rounds",
            topology.diameter()
        )));
    }
    Ok((
        state.held,
        ElectionTrace {
            rounds_used: topology.diameter(),
            rounds,
        },
    ))
}

/// Election performed by flooding over a topology; keeps one trace per trial.
pub struct DistributedElector<'a> {
    topology: &'a Topology,
    pub traces: Vec<ElectionTrace>,
}

impl<'a> DistributedElector<'a> {
    pub fn new(topology: &'a Topology) -> Self {
        DistributedElector {
            topology,
            traces: Vec::new(),
        }
    }
}

impl Elector for DistributedElector<'_> {
    fn elect(&mut self, records: &[TrialRecord]) -> Result<Vec<ElectedPair>> {
        let local = records
            .iter()
            .enumerate()
            .map(|(k, r)| Candidate {
                norm: r.e_norm,
                id: k + 1,
                payload: (r.u.clone(), r.e.clone()),
            })
            .collect();
        let (held, trace) = elect_best_performer(self.topology, local)?;
        self.traces.push(trace);
        Ok(held
            .into_iter()
            .map(|c| ElectedPair {
                id: c.id,
                u: c.payload.0,
                e: c.payload.1,
            })
            .collect())
    }
}

/// Collective run where every election is carried out by flooding.
pub fn run_distributed_cilc(
    topology: &Topology,
    collective: &Collective,
    u0: &Vector,
    trials: usize,
    hold_on_no_improvement: bool,
) -> Result<(CilcHistory, Vec<ElectionTrace>)> {
    if topology.size() != collective.size() {
        return Err(CilcError::dims("topology size", collective.size(), topology.size()));
    }
    let sims: Vec<&dyn TrialSimulator> = vec![collective.plant()];
    let mut elector = DistributedElector::new(topology);
    let history = run_cilc_with(
        &sims,
        collective.laws(),
        collective.reference(),
        u0,
        trials,
        CilcOptions {
            hold_on_no_improvement,
        },
        &mut elector,
    )?;
    Ok((history, elector.traces))
}
