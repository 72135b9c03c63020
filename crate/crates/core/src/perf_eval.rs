//! Closed-form trial propagation for isolated agents, the collective, and
//! agents inside the collective; best-performer prediction; and the
//! well-performing check (`||e_bar_j|| <= ||e_tilde_j^m||` for every agent).
//!
//! Conventions: `e0` is the shared trial-0 error and `rd = r - d`.
//! Isolated agents satisfy `e~_j = A~_j e0 + B~_j rd` with
//! `A~_j = Omega^j` and `B~_j = sum_{p=1..j} Omega^(j-p) Psi`.
//! The collective satisfies `e_bar_j = A_j e0 + B_j rd` with
//! `A_0 = I`, `B_0 = 0`, `A_j = Omega_{f_j} A_{j-1}`,
//! `B_j = Omega_{f_j} B_{j-1} + Psi_{f_j}`, where `f_j` is the best performer
//! at trial `j`. `f_0` is always agent 1 because all agents start equal.

use serde::Serialize;

use crate::collective::{candidate_order, Collective};
use crate::error::{CilcError, Result};
use crate::linalg::{identity, Mat, Vector};

/// Relative gap below which two candidate squared norms count as tied.
pub const NEAR_TIE_TOL: f64 = 1e-12;

fn check_vec(context: &'static str, n: usize, v: &Vector) -> Result<()> {
    if v.len() != n {
        return Err(CilcError::dims(context, n, v.len()));
    }
    Ok(())
}

fn check_square(context: &'static str, n: usize, m: &Mat) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(CilcError::dims(context, n, m.ncols()));
    }
    Ok(())
}

fn check_pairs(omegas: &[Mat], psis: &[Mat]) -> Result<usize> {
    let first = omegas.first().ok_or(CilcError::EmptyCollective)?;
    let n = first.nrows();
    if psis.len() != omegas.len() {
        return Err(CilcError::dims("number of filter matrices", omegas.len(), psis.len()));
    }
    for (o, p) in omegas.iter().zip(psis) {
        check_square("contraction matrix", n, o)?;
        check_square("filter matrix", n, p)?;
    }
    Ok(n)
}

/// `(Omega^j, sum_{p=1..j} Omega^(j-p) Psi)` built by forward iteration.
pub fn isolated_propagators(omega: &Mat, psi: &Mat, j: usize) -> Result<(Mat, Mat)> {
    let n = omega.nrows();
    check_square("contraction matrix", n, omega)?;
    check_square("filter matrix", n, psi)?;
    let mut a = identity(n);
    let mut b = Mat::zeros(n, n);
    for _ in 0..j {
        a = omega * a;
        b = omega * b + psi;
    }
    Ok((a, b))
}

pub fn isolated_error_closed_form(
    omega: &Mat,
    psi: &Mat,
    e0: &Vector,
    rd: &Vector,
    j: usize,
) -> Result<Vector> {
    let n = omega.nrows();
    check_vec("initial error", n, e0)?;
    check_vec("reference offset", n, rd)?;
    let (a, b) = isolated_propagators(omega, psi, j)?;
    Ok(a * e0 + b * rd)
}

/// Collective propagators `A_0..=A_j`, `B_0..=B_j` for a best-performer sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct CollectivePropagators {
    pub a: Vec<Mat>,
    pub b: Vec<Mat>,
}

pub fn collective_propagators(
    omegas: &[Mat],
    psis: &[Mat],
    sequence: &[usize],
    j: usize,
) -> Result<CollectivePropagators> {
    let n = check_pairs(omegas, psis)?;
    if sequence.len() < j + 1 {
        return Err(CilcError::SequenceTooShort {
            needed: j + 1,
            available: sequence.len(),
        });
    }
    let mut a = vec![identity(n)];
    let mut b = vec![Mat::zeros(n, n)];
    for &f in &sequence[1..=j] {
        let k = agent_index(f, omegas.len())?;
        let next_a = &omegas[k] * a.last().expect("seeded");
        let next_b = &omegas[k] * b.last().expect("seeded") + &psis[k];
        a.push(next_a);
        b.push(next_b);
    }
    Ok(CollectivePropagators { a, b })
}

fn agent_index(id: usize, m: usize) -> Result<usize> {
    if id == 0 || id > m {
        return Err(CilcError::InvalidAgentIds {
            expected_max: m,
            found: id,
        });
    }
    Ok(id - 1)
}

pub fn cilc_error_closed_form(
    omegas: &[Mat],
    psis: &[Mat],
    sequence: &[usize],
    e0: &Vector,
    rd: &Vector,
    j: usize,
) -> Result<Vector> {
    let n = check_pairs(omegas, psis)?;
    check_vec("initial error", n, e0)?;
    check_vec("reference offset", n, rd)?;
    let props = collective_propagators(omegas, psis, sequence, j)?;
    Ok(&props.a[j] * e0 + &props.b[j] * rd)
}

/// Product form `Omega_{f_j} Omega_{f_(j-1)} ... Omega_{f_1}` (identity at j = 0).
pub fn literal_a_bar(omegas: &[Mat], sequence: &[usize], j: usize) -> Result<Mat> {
    let n = omegas.first().ok_or(CilcError::EmptyCollective)?.nrows();
    if sequence.len() < j + 1 {
        return Err(CilcError::SequenceTooShort {
            needed: j + 1,
            available: sequence.len(),
        });
    }
    let mut out = identity(n);
    for i in 0..j {
        out *= &omegas[agent_index(sequence[j - i], omegas.len())?];
    }
    Ok(out)
}

/// Sum form `sum_{p=1..j} (prod_{l=0..j-1-p} Omega_{f_(j-l)}) Psi_{f_p}`.
pub fn literal_b_bar(omegas: &[Mat], psis: &[Mat], sequence: &[usize], j: usize) -> Result<Mat> {
    let n = check_pairs(omegas, psis)?;
    if sequence.len() < j + 1 {
        return Err(CilcError::SequenceTooShort {
            needed: j + 1,
            available: sequence.len(),
        });
    }
    let m = omegas.len();
    let mut total = Mat::zeros(n, n);
    for p in 1..=j {
        let mut prod = identity(n);
        for l in 0..(j - p) {
            prod *= &omegas[agent_index(sequence[j - l], m)?];
        }
        total += prod * &psis[agent_index(sequence[p], m)?];
    }
    Ok(total)
}

/// Error of agent `m` inside the collective at trial `j >= 1`, from the
/// collective propagators of trial `j - 1`.
pub fn collaborative_error_closed_form(
    omega_m: &Mat,
    psi_m: &Mat,
    a_bar_prev: &Mat,
    b_bar_prev: &Mat,
    e0: &Vector,
    rd: &Vector,
) -> Result<Vector> {
    let n = omega_m.nrows();
    for (ctx, m) in [
        ("contraction matrix", omega_m),
        ("filter matrix", psi_m),
        ("collective state propagator", a_bar_prev),
        ("collective offset propagator", b_bar_prev),
    ] {
        check_square(ctx, n, m)?;
    }
    check_vec("initial error", n, e0)?;
    check_vec("reference offset", n, rd)?;
    Ok(omega_m * (a_bar_prev * e0) + (psi_m + omega_m * b_bar_prev) * rd)
}

/// Predicted squared norm of agent `m` at the next trial, evaluated as the
/// expanded quadratic form in `(e0, rd)`.
fn predicted_sq_norm(
    omega: &Mat,
    psi: &Mat,
    a_prev: &Mat,
    b_prev: &Mat,
    e0: &Vector,
    rd: &Vector,
) -> f64 {
    let x = omega * a_prev;
    let y = psi + omega * b_prev;
    let xe = &x * e0;
    let yr = &y * rd;
    xe.dot(&xe) + yr.dot(&yr) + 2.0 * xe.dot(&yr)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    /// `f_0 ..= f_horizon`.
    pub sequence: Vec<usize>,
    /// Trials where the two smallest predicted squared norms were within
    /// [`NEAR_TIE_TOL`] (relative) of each other.
    pub near_ties: Vec<usize>,
}

pub fn predict_best_performers(
    omegas: &[Mat],
    psis: &[Mat],
    e0: &Vector,
    rd: &Vector,
    horizon: usize,
) -> Result<Prediction> {
    let n = check_pairs(omegas, psis)?;
    check_vec("initial error", n, e0)?;
    check_vec("reference offset", n, rd)?;
    if horizon == 0 {
        return Err(CilcError::InvalidArgument("horizon must be at least 1".into()));
    }
    let mut sequence = vec![1];
    let mut near_ties = Vec::new();
    let mut a = identity(n);
    let mut b = Mat::zeros(n, n);
    for j in 1..=horizon {
        let mut scored: Vec<(f64, usize)> = omegas
            .iter()
            .zip(psis)
            .enumerate()
            .map(|(k, (o, p))| (predicted_sq_norm(o, p, &a, &b, e0, rd), k + 1))
            .collect();
        scored.sort_by(|x, y| candidate_order(*x, *y));
        if let [first, second, ..] = scored.as_slice() {
            let scale = first.0.abs().max(second.0.abs()).max(1.0);
            if (second.0 - first.0).abs() <= NEAR_TIE_TOL * scale {
                near_ties.push(j);
            }
        }
        let best = scored[0].1;
        sequence.push(best);
        a = &omegas[best - 1] * a;
        b = &omegas[best - 1] * b + &psis[best - 1];
    }
    Ok(Prediction {
        sequence,
        near_ties,
    })
}

/// `F = e0' (A'A - A~'A~) e0 + rd' (B'B - B~'B~) rd + 2 rd' (B'A - B~'A~) e0`.
pub fn score_general(
    a_bar: &Mat,
    b_bar: &Mat,
    a_iso: &Mat,
    b_iso: &Mat,
    e0: &Vector,
    rd: &Vector,
) -> f64 {
    let aa = a_bar.transpose() * a_bar - a_iso.transpose() * a_iso;
    let bb = b_bar.transpose() * b_bar - b_iso.transpose() * b_iso;
    let ba = b_bar.transpose() * a_bar - b_iso.transpose() * a_iso;
    e0.dot(&(aa * e0)) + rd.dot(&(bb * rd)) + 2.0 * rd.dot(&(ba * e0))
}

/// Zero-initial-input form (`e0 = rd`): one quadratic form in `rd`.
pub fn score_zero_input(a_bar: &Mat, b_bar: &Mat, a_iso: &Mat, b_iso: &Mat, rd: &Vector) -> f64 {
    let k = a_bar.transpose() * a_bar - a_iso.transpose() * a_iso + b_bar.transpose() * b_bar
        - b_iso.transpose() * b_iso
        + b_bar.transpose() * a_bar * 2.0
        - b_iso.transpose() * a_iso * 2.0;
    rd.dot(&(k * rd))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreTable {
    pub sequence: Vec<usize>,
    pub near_ties: Vec<usize>,
    /// `scores[j][m - 1] = ||e_bar_j||^2 - ||e~_j^m||^2`.
    pub scores: Vec<Vec<f64>>,
    /// True when the single-quadratic-form path (`e0 = rd`) was used.
    pub zero_input_form: bool,
}

pub fn well_performing_scores(
    collective: &Collective,
    e0: &Vector,
    rd: &Vector,
    horizon: usize,
) -> Result<ScoreTable> {
    let omegas = collective.omegas()?;
    let psis = collective.psis()?;
    scores_from_maps(&omegas, &psis, e0, rd, horizon, e0 == rd)
}

/// Score table from explicit maps; `zero_input_form` selects the `e0 = rd` path.
pub fn scores_from_maps(
    omegas: &[Mat],
    psis: &[Mat],
    e0: &Vector,
    rd: &Vector,
    horizon: usize,
    zero_input_form: bool,
) -> Result<ScoreTable> {
    let n = check_pairs(omegas, psis)?;
    check_vec("initial error", n, e0)?;
    check_vec("reference offset", n, rd)?;
    let prediction = if horizon == 0 {
        Prediction {
            sequence: vec![1],
            near_ties: vec![],
        }
    } else {
        predict_best_performers(omegas, psis, e0, rd, horizon)?
    };
    let coll = collective_propagators(omegas, psis, &prediction.sequence, horizon)?;

    let mut iso: Vec<(Mat, Mat)> = vec![(identity(n), Mat::zeros(n, n)); omegas.len()];
    let mut scores = Vec::with_capacity(horizon + 1);
    for j in 0..=horizon {
        if j > 0 {
            for ((a, b), (o, p)) in iso.iter_mut().zip(omegas.iter().zip(psis)) {
                *a = o * &*a;
                *b = o * &*b + p;
            }
        }
        let row = iso
            .iter()
            .map(|(a_iso, b_iso)| {
                if zero_input_form {
                    score_zero_input(&coll.a[j], &coll.b[j], a_iso, b_iso, rd)
                } else {
                    score_general(&coll.a[j], &coll.b[j], a_iso, b_iso, e0, rd)
                }
            })
            .collect();
        scores.push(row);
    }
    Ok(ScoreTable {
        sequence: prediction.sequence,
        near_ties: prediction.near_ties,
        scores,
        zero_input_form,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "verdict")]
pub enum WellPerforming {
    /// Every score is non-positive (within tolerance) up to and including
    /// `horizon`; nothing is claimed beyond it.
    CertifiedUpToHorizon { horizon: usize },
    Refuted {
        trial: usize,
        agent: usize,
        score: f64,
    },
}

pub fn certify_well_performing(
    collective: &Collective,
    e0: &Vector,
    rd: &Vector,
    horizon: usize,
) -> Result<WellPerforming> {
    if horizon == 0 {
        return Err(CilcError::InvalidArgument("horizon must be at least 1".into()));
    }
    let table = well_performing_scores(collective, e0, rd, horizon)?;
    Ok(verdict_from_scores(&table, e0, rd))
}

pub fn verdict_from_scores(table: &ScoreTable, e0: &Vector, rd: &Vector) -> WellPerforming {
    let scale = if e0.norm_squared() > 0.0 {
        e0.norm_squared()
    } else {
        rd.norm_squared()
    };
    let tol = 1e-12 * scale;
    for (j, row) in table.scores.iter().enumerate() {
        for (k, &f) in row.iter().enumerate() {
            if f > tol {
                return WellPerforming::Refuted {
                    trial: j,
                    agent: k + 1,
                    score: f,
                };
            }
        }
    }
    WellPerforming::CertifiedUpToHorizon {
        horizon: table.scores.len() - 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collective::run_cilc;
    use crate::fixtures::*;
    use crate::lifted::{AgentLaw, LiftedPlant};
    use crate::linalg::relative_diff;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    #[test]
    fn isolated_trivial_cases() {
        let o = Mat::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 0.3]);
        let p = Mat::from_row_slice(2, 2, &[0.1, 0.0, 0.2, 0.1]);
        let e0 = v(&[1.0, 2.0]);
        assert_eq!(isolated_error_closed_form(&o, &p, &e0, &v(&[1.0, 1.0]), 0).unwrap(), e0);
        let z = Mat::zeros(2, 2);
        assert_eq!(
            isolated_error_closed_form(&z, &z, &e0, &v(&[1.0, 1.0]), 3).unwrap(),
            v(&[0.0, 0.0])
        );
    }

    #[test]
    fn single_agent_collective_reduces_to_isolated() {
        let o = Mat::from_row_slice(2, 2, &[0.5, 0.1, -0.2, 0.3]);
        let p = Mat::from_row_slice(2, 2, &[0.1, 0.0, 0.2, 0.1]);
        let e0 = v(&[1.0, -2.0]);
        let rd = v(&[0.5, 0.5]);
        let seq = vec![1; 8];
        for j in 0..8 {
            let a = cilc_error_closed_form(&[o.clone()], &[p.clone()], &seq, &e0, &rd, j).unwrap();
            let b = isolated_error_closed_form(&o, &p, &e0, &rd, j).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn alternating_deadbeats_give_zero_error() {
        let z = Mat::zeros(2, 2);
        let seq = vec![1, 2, 1, 2, 1];
        let e = cilc_error_closed_form(&[z.clone(), z.clone()], &[z.clone(), z], &seq, &v(&[1.0, 1.0]), &v(&[2.0, 0.0]), 4)
            .unwrap();
        assert_eq!(e, v(&[0.0, 0.0]));
    }

    #[test]
    fn short_sequence_is_rejected() {
        let z = Mat::zeros(2, 2);
        let r = cilc_error_closed_form(&[z.clone()], &[z], &[1, 1], &v(&[1.0, 0.0]), &v(&[1.0, 0.0]), 2);
        assert!(matches!(r, Err(CilcError::SequenceTooShort { needed: 3, available: 2 })));
    }

    #[test]
    fn literal_forms_match_recursion() {
        let o1 = Mat::from_row_slice(2, 2, &[0.5, 0.1, -0.2, 0.3]);
        let o2 = Mat::from_row_slice(2, 2, &[1.1, 0.0, 0.4, -0.7]);
        let p1 = Mat::from_row_slice(2, 2, &[0.1, 0.0, 0.2, 0.1]);
        let p2 = Mat::from_row_slice(2, 2, &[-0.3, 0.5, 0.0, 0.2]);
        let omegas = [o1, o2];
        let psis = [p1, p2];
        let seq = vec![1, 2, 1, 2];
        let props = collective_propagators(&omegas, &psis, &seq, 3).unwrap();
        for j in 0..=3 {
            let la = literal_a_bar(&omegas, &seq, j).unwrap();
            let lb = literal_b_bar(&omegas, &psis, &seq, j).unwrap();
            assert!((la - &props.a[j]).norm() <= 1e-12);
            assert!((lb - &props.b[j]).norm() <= 1e-12);
        }
    }

    #[test]
    fn golden_closed_forms_match_simulation() {
        let c = appendix_a_collective();
        let omegas = c.omegas().unwrap();
        let psis = c.psis().unwrap();
        let rd = c.reference_offset();
        let e0 = rd.clone();
        let hist = run_cilc(&c, &Vector::zeros(2), 21, false).unwrap();
        let seq = hist.best_sequence();
        let pred = predict_best_performers(&omegas, &psis, &e0, &rd, 20).unwrap();
        assert_eq!(pred.sequence, seq);
        let props = collective_propagators(&omegas, &psis, &seq, 20).unwrap();
        for j in 0..=20 {
            let closed = cilc_error_closed_form(&omegas, &psis, &seq, &e0, &rd, j).unwrap();
            assert!(relative_diff(&closed, &hist.trials[j].e_bar) <= 1e-9);
            if j >= 1 {
                for m in 0..2 {
                    let e = collaborative_error_closed_form(
                        &omegas[m], &psis[m], &props.a[j - 1], &props.b[j - 1], &e0, &rd,
                    )
                    .unwrap();
                    assert!(relative_diff(&e, &hist.trials[j].records[m].e) <= 1e-9);
                }
            }
        }
    }

    #[test]
    fn deadbeat_member_always_predicted() {
        let plant = appendix_a_plant();
        let (a, _) = appendix_a_laws();
        let dead = AgentLaw::deadbeat(2, &plant).unwrap();
        let c = Collective::new(plant, vec![a, dead], appendix_a_reference()).unwrap();
        let rd = c.reference_offset();
        let pred =
            predict_best_performers(&c.omegas().unwrap(), &c.psis().unwrap(), &rd, &rd, 10).unwrap();
        assert!(pred.sequence[1..].iter().all(|&f| f == 2));
        let table = well_performing_scores(&c, &rd, &rd, 10).unwrap();
        for row in &table.scores[1..] {
            assert!(row[1].abs() < 1e-12);
        }
    }

    #[test]
    fn first_scores_are_zero_and_paths_agree() {
        let c = appendix_a_collective();
        let rd = c.reference_offset();
        let omegas = c.omegas().unwrap();
        let psis = c.psis().unwrap();
        let general = scores_from_maps(&omegas, &psis, &rd, &rd, 12, false).unwrap();
        let zero = scores_from_maps(&omegas, &psis, &rd, &rd, 12, true).unwrap();
        assert!(general.scores[0].iter().all(|&f| f == 0.0));
        for (g, z) in general.scores.iter().zip(&zero.scores) {
            for (a, b) in g.iter().zip(z) {
                assert!((a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0));
            }
        }
    }

    #[test]
    fn homogeneous_collective_is_well_performing() {
        let plant = LiftedPlant::undisturbed(Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 1.0])).unwrap();
        let (a, _) = appendix_a_laws();
        let c = Collective::new(plant, vec![a.clone(), a.with_id(2)], v(&[1.0, 1.0])).unwrap();
        let rd = c.reference_offset();
        let table = well_performing_scores(&c, &rd, &rd, 15).unwrap();
        assert!(table.scores.iter().flatten().all(|&f| f == 0.0));
        assert_eq!(
            certify_well_performing(&c, &rd, &rd, 15).unwrap(),
            WellPerforming::CertifiedUpToHorizon { horizon: 15 }
        );
    }

    #[test]
    fn golden_collective_is_well_performing_over_30_trials() {
        let c = appendix_a_collective();
        let rd = c.reference_offset();
        assert_eq!(
            certify_well_performing(&c, &rd, &rd, 30).unwrap(),
            WellPerforming::CertifiedUpToHorizon { horizon: 30 }
        );
    }
}
