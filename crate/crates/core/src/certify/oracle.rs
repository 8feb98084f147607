//! Lower bound on P_g from a finite strategy family: projective measurements
//! along a Bloch-sphere grid plus the two deterministic answers, mixed with
//! weights that reproduce the test statistics. The best mixture is found
//! exactly by linear programming.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::optics::{PolarizationState, Preparation};

const ROWS: usize = 3;
const PIVOT_TOL: f64 = 1e-12;
const FEASIBILITY_TOL: f64 = 1e-9;
const MAX_PIVOTS: usize = 10_000;

/// One pure strategy: its test statistics and the value Eve gets on |R⟩ by
/// guessing the more likely outcome.
#[derive(Debug, Clone, Copy)]
struct Atom {
    p0_given_h: f64,
    p1_given_v: f64,
    guess: f64,
}

fn projective_atom(theta: f64, phi: f64) -> Atom {
    let n = [
        Complex64::new((theta / 2.0).cos(), 0.0),
        Complex64::from_polar((theta / 2.0).sin(), phi),
    ];
    // |n⟩⟨n| is outcome 0
    let projector = [[n[0] * n[0].conj(), n[0] * n[1].conj()], [n[1] * n[0].conj(), n[1] * n[1].conj()]];
    let p0 = |s: PolarizationState| s.expectation(&projector).re.clamp(0.0, 1.0);
    let r = p0(Preparation::R.state());
    Atom {
        p0_given_h: p0(Preparation::H.state()),
        p1_given_v: 1.0 - p0(Preparation::V.state()),
        guess: r.max(1.0 - r),
    }
}

fn atoms(resolution: usize) -> Vec<Atom> {
    let mut all: Vec<Atom> = (0..resolution * resolution)
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k / resolution, k % resolution);
            let theta = std::f64::consts::PI * i as f64 / (resolution - 1) as f64;
            let phi = std::f64::consts::TAU * j as f64 / resolution as f64;
            projective_atom(theta, phi)
        })
        .collect();
    all.push(Atom {
        p0_given_h: 1.0,
        p1_given_v: 0.0,
        guess: 1.0,
    });
    all.push(Atom {
        p0_given_h: 0.0,
        p1_given_v: 1.0,
        guess: 1.0,
    });
    all
}

pub(super) fn solve(p_suc_h: f64, p_suc_v: f64, resolution: usize) -> Result<f64> {
    let atoms = atoms(resolution);
    let columns: Vec<[f64; ROWS]> = atoms.iter().map(|a| [a.p0_given_h, a.p1_given_v, 1.0]).collect();
    let costs: Vec<f64> = atoms.iter().map(|a| a.guess).collect();
    maximize(&columns, &costs, [p_suc_h, p_suc_v, 1.0])
}

/// Revised two-phase simplex for max c·w subject to A w = b, w ≥ 0, b ≥ 0,
/// with A given column by column.
fn maximize(columns: &[[f64; ROWS]], costs: &[f64], b: [f64; ROWS]) -> Result<f64> {
    let n = columns.len();
    // Artificial variables n..n+ROWS start as the basis.
    let mut basis: [usize; ROWS] = std::array::from_fn(|i| n + i);
    let mut inv = [[0.0; ROWS]; ROWS];
    for (i, row) in inv.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let mut x = b;

    let column = |j: usize| -> [f64; ROWS] {
        if j < n {
            columns[j]
        } else {
            std::array::from_fn(|i| f64::from(u8::from(i == j - n)))
        }
    };

    for phase in [1, 2] {
        let cost = |j: usize| -> f64 {
            match (phase, j < n) {
                (1, true) => 0.0,
                (1, false) => -1.0,
                (_, true) => costs[j],
                (_, false) => 0.0,
            }
        };
        let mut stalled = 0usize;
        let mut last_value = f64::NEG_INFINITY;
        for _ in 0..MAX_PIVOTS {
            let cb: [f64; ROWS] = std::array::from_fn(|i| cost(basis[i]));
            let y: [f64; ROWS] = std::array::from_fn(|k| (0..ROWS).map(|i| cb[i] * inv[i][k]).sum());
            let reduced = |j: usize| cost(j) - (0..ROWS).map(|k| y[k] * column(j)[k]).sum::<f64>();

            // Dantzig pricing; Bland's rule once progress stalls.
            let candidates = 0..if phase == 1 { n + ROWS } else { n };
            let entering = if stalled < 50 {
                candidates
                    .filter(|j| !basis.contains(j))
                    .map(|j| (j, reduced(j)))
                    .filter(|&(_, d)| d > PIVOT_TOL)
                    .max_by(|a, b| a.1.total_cmp(&b.1))
                    .map(|(j, _)| j)
            } else {
                candidates.filter(|j| !basis.contains(j)).find(|&j| reduced(j) > PIVOT_TOL)
            };
            let Some(entering) = entering else { break };

            let a = column(entering);
            let u: [f64; ROWS] = std::array::from_fn(|i| (0..ROWS).map(|k| inv[i][k] * a[k]).sum());
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..ROWS {
                // An artificial still basic in phase 2 sits at zero and must leave
                // before it could move.
                let ratio = if phase == 2 && basis[i] >= n && u[i].abs() > PIVOT_TOL {
                    0.0
                } else if u[i] > PIVOT_TOL {
                    x[i].max(0.0) / u[i]
                } else {
                    continue;
                };
                if leave.is_none_or(|(l, r)| ratio < r || (ratio == r && basis[i] < basis[l])) {
                    leave = Some((i, ratio));
                }
            }
            let Some((r, step)) = leave else {
                return Err(Error::Infeasible("unbounded strategy program".into()));
            };

            for i in 0..ROWS {
                if i != r {
                    x[i] -= step * u[i];
                }
            }
            x[r] = step;
            let pivot = u[r];
            let pivot_row: [f64; ROWS] = std::array::from_fn(|k| inv[r][k] / pivot);
            for i in 0..ROWS {
                if i != r {
                    for k in 0..ROWS {
                        inv[i][k] -= u[i] * pivot_row[k];
                    }
                }
            }
            inv[r] = pivot_row;
            basis[r] = entering;

            let value: f64 = (0..ROWS).map(|i| cost(basis[i]) * x[i]).sum();
            if value > last_value + PIVOT_TOL {
                stalled = 0;
                last_value = value;
            } else {
                stalled += 1;
            }
        }
        if phase == 1 {
            let residual: f64 = (0..ROWS).filter(|&i| basis[i] >= n).map(|i| x[i]).sum();
            if residual > FEASIBILITY_TOL {
                return Err(Error::Infeasible(format!(
                    "no mixture of grid strategies reproduces the test statistics (residual {residual:.3e})"
                )));
            }
        }
    }
    Ok((0..ROWS).filter(|&i| basis[i] < n).map(|i| costs[basis[i]] * x[i]).sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poles_and_equator() {
        let north = projective_atom(0.0, 0.0);
        assert!((north.p0_given_h - 1.0).abs() < 1e-15 && (north.p1_given_v - 1.0).abs() < 1e-15);
        assert!((north.guess - 0.5).abs() < 1e-15);
        // measuring along |R⟩ itself
        let r = projective_atom(std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2);
        assert!((r.guess - 1.0).abs() < 1e-15);
        assert!((r.p0_given_h - 0.5).abs() < 1e-15 && (r.p1_given_v - 0.5).abs() < 1e-15);
    }

    #[test]
    fn small_lp() {
        // rows force w0 = 0.5, w2 = 0, w1 = 0.5
        let cols = [[1.0, 1.0, 1.0], [0.0, 0.0, 1.0], [1.0, 0.0, 1.0]];
        let v = maximize(&cols, &[1.0, 2.0, 0.0], [0.5, 0.5, 1.0]).unwrap();
        assert!((v - 1.5).abs() < 1e-12, "{v}");
        assert!(maximize(&cols, &[1.0, 2.0, 0.0], [0.5, 0.9, 1.0]).is_err());
    }
}
