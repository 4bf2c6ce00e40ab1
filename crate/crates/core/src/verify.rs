//! Monte Carlo checks that the closed-form bounds are not violated.
//!
//! Each verifier draws independent seeded trials, counts how often the
//! event the bound talks about occurs, and compares that frequency with the
//! bound's success probability. A bound is dominated (as it should be) when
//! `empirical >= bound - 3 * se`, where `se = sqrt(b (1 - b) / trials)` is
//! the binomial standard error at the bound value `b`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{
    ball_bounds, cluster_rejection, cube_bounds, prop1_failure, quasiortho_miss, BoundResult,
};
use crate::error::{invalid_parameter, Result};
use crate::sampling::{sample_ball, sample_cube, Seed};

/// A bound together with the parameters of the experiment that checks it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "formula")]
pub enum VerifySpec {
    /// One uniform point against `card_y` uniform points of the ball.
    Prop1 { n: usize, alpha: f64, card_y: usize },
    /// The last of M uniform points is separated from the others.
    BallSingle { m: usize, n: usize, r: f64 },
    /// All M uniform points are mutually separated.
    BallPairs { m: usize, n: usize, r: f64 },
    /// All M directions are pairwise r-orthogonal.
    BallAngles { m: usize, n: usize, r: f64 },
    /// Centred uniform cube `[-1/2, 1/2]^n`, one point against the rest.
    CubeSingle { m: usize, n: usize, delta: f64 },
    /// Centred uniform cube, all pairs.
    CubePairs { m: usize, n: usize, delta: f64 },
    /// A uniform point of the radius-ρ ball stays on the near side of a hyperplane at distance h.
    ClusterRejection { n: usize, h: f64, rho: f64 },
    /// A cluster member has positive projection on the cluster's mean direction.
    QuasiorthoMiss { n: usize, k: usize },
    /// A neuron tuned to a fresh point rejects every background point.
    SelectiveNeuron { n: usize, m: usize, alpha: f64 },
}

impl VerifySpec {
    pub fn formula_id(&self) -> &'static str {
        match self {
            VerifySpec::Prop1 { .. } => "prop1",
            VerifySpec::BallSingle { .. } => "ball-single",
            VerifySpec::BallPairs { .. } => "ball-pairs",
            VerifySpec::BallAngles { .. } => "ball-angles",
            VerifySpec::CubeSingle { .. } => "cube-single",
            VerifySpec::CubePairs { .. } => "cube-pairs",
            VerifySpec::ClusterRejection { .. } => "cluster-rejection",
            VerifySpec::QuasiorthoMiss { .. } => "quasiortho-miss",
            VerifySpec::SelectiveNeuron { .. } => "selective-neuron",
        }
    }

    /// Lower bound on the probability that a single trial succeeds.
    pub fn success_bound(&self) -> Result<BoundResult> {
        let complement = |b: BoundResult| BoundResult {
            value: 1.0 - b.value,
            raw: 1.0 - b.raw,
            ..b
        };
        let to_u32 = |n: usize| {
            u32::try_from(n).map_err(|_| invalid_parameter(format!("dimension {n} is too large")))
        };
        match *self {
            VerifySpec::Prop1 { n, alpha, card_y } => {
                Ok(complement(prop1_failure(card_y as f64, alpha, to_u32(n)?)?))
            }
            VerifySpec::SelectiveNeuron { n, m, alpha } => {
                let mut b = complement(prop1_failure(m as f64, alpha, to_u32(n)?)?);
                b.formula_id = "selective-neuron".into();
                Ok(b)
            }
            VerifySpec::BallSingle { m, n, r } => Ok(ball_bounds(m as f64, to_u32(n)?, r)?.single),
            VerifySpec::BallPairs { m, n, r } => Ok(ball_bounds(m as f64, to_u32(n)?, r)?.pairs),
            VerifySpec::BallAngles { m, n, r } => Ok(ball_bounds(m as f64, to_u32(n)?, r)?.angles),
            VerifySpec::CubeSingle { m, n, delta } => {
                Ok(cube_bounds(&vec![CUBE_SIGMA; n], delta, m as f64)?.single)
            }
            VerifySpec::CubePairs { m, n, delta } => {
                Ok(cube_bounds(&vec![CUBE_SIGMA; n], delta, m as f64)?.pairs)
            }
            VerifySpec::ClusterRejection { n, h, rho } => {
                Ok(complement(cluster_rejection(h, rho, to_u32(n)?)?))
            }
            VerifySpec::QuasiorthoMiss { n, k } => {
                Ok(complement(quasiortho_miss(to_u32(n)?, to_u32(k)?)?))
            }
        }
    }
}

/// Standard deviation of a uniform coordinate on an interval of length 1.
const CUBE_SIGMA: f64 = 0.288_675_134_594_812_9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub formula_id: String,
    pub spec: VerifySpec,
    pub seed: u64,
    pub trials: usize,
    pub successes: usize,
    pub empirical: f64,
    /// Lower bound on the success probability (clamped).
    pub bound: f64,
    pub bound_vacuous: bool,
    pub std_error: f64,
    pub dominated: bool,
    /// Extra experiment-specific estimates, e.g. the per-member miss rate.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub auxiliary: BTreeMap<String, f64>,
}

/// Outcome of one trial; `misses` feeds per-member rates where they make sense.
struct Trial {
    success: bool,
    misses: usize,
    members: usize,
}

/// Runs `trials` independent trials; trial `t` draws from `seed.child(t)`.
pub fn verify(spec: &VerifySpec, trials: usize, seed: Seed) -> Result<VerifyReport> {
    if trials == 0 {
        return Err(invalid_parameter("need at least one trial"));
    }
    let bound = spec.success_bound()?;
    validate(spec)?;
    let outcomes: Vec<Trial> = (0..trials as u64)
        .into_par_iter()
        .map(|t| run_trial(spec, seed.child(t)))
        .collect::<Result<_>>()?;
    let successes = outcomes.iter().filter(|o| o.success).count();
    let empirical = successes as f64 / trials as f64;
    let std_error = (bound.value * (1.0 - bound.value) / trials as f64).sqrt();
    let mut auxiliary = BTreeMap::new();
    let members: usize = outcomes.iter().map(|o| o.members).sum();
    if members > 0 {
        let misses: usize = outcomes.iter().map(|o| o.misses).sum();
        auxiliary.insert("member_miss_rate".to_owned(), misses as f64 / members as f64);
    }
    Ok(VerifyReport {
        formula_id: spec.formula_id().to_owned(),
        spec: spec.clone(),
        seed: seed.0,
        trials,
        successes,
        empirical,
        bound: bound.value,
        bound_vacuous: bound.vacuous,
        std_error,
        dominated: empirical >= bound.value - 3.0 * std_error,
        auxiliary,
    })
}

fn validate(spec: &VerifySpec) -> Result<()> {
    let positive = |name: &str, v: usize| {
        if v == 0 {
            Err(invalid_parameter(format!("{name} must be at least 1")))
        } else {
            Ok(())
        }
    };
    match *spec {
        VerifySpec::Prop1 { n, card_y, .. } => {
            positive("n", n)?;
            positive("|Y|", card_y)
        }
        VerifySpec::SelectiveNeuron { n, m, .. } => {
            positive("n", n)?;
            positive("M", m)
        }
        VerifySpec::BallSingle { m, .. }
        | VerifySpec::BallPairs { m, .. }
        | VerifySpec::BallAngles { m, .. }
        | VerifySpec::CubeSingle { m, .. }
        | VerifySpec::CubePairs { m, .. } => {
            if m < 2 {
                return Err(invalid_parameter("M must be at least 2 for a sample check"));
            }
            Ok(())
        }
        VerifySpec::ClusterRejection { .. } => Ok(()),
        VerifySpec::QuasiorthoMiss { k, .. } => {
            if k < 2 {
                return Err(invalid_parameter("cluster size k must be at least 2"));
            }
            Ok(())
        }
    }
}

fn run_trial(spec: &VerifySpec, seed: Seed) -> Result<Trial> {
    let single = |success| Trial {
        success,
        misses: 0,
        members: 0,
    };
    match *spec {
        VerifySpec::Prop1 { n, alpha, card_y } => {
            let y = sample_ball::<f64>(n, card_y, seed.child(0))?;
            let x = sample_ball::<f64>(n, 1, seed.child(1))?.row_vector(0);
            let xx = x.dot(&x);
            let proj = y.points() * &x;
            Ok(single(proj.iter().all(|v| *v <= alpha * xx)))
        }
        VerifySpec::SelectiveNeuron { n, m, alpha } => {
            let background = sample_ball::<f64>(n, m, seed.child(0))?;
            let x_new = sample_ball::<f64>(n, 1, seed.child(1))?.row_vector(0);
            let neuron =
                crate::bounds::selective_neuron(&x_new, &DVector::zeros(n), alpha)?;
            let potentials = background.points() * &neuron.weights;
            Ok(single(potentials.iter().all(|v| *v <= neuron.threshold)))
        }
        VerifySpec::BallSingle { m, n, r } => {
            let x = sample_ball::<f64>(n, m, seed)?.into_points();
            let last = x.row(m - 1).transpose();
            let norm = last.norm();
            let proj = x.rows(0, m - 1) * &last;
            Ok(single(norm > r && proj.iter().all(|v| *v < r * norm)))
        }
        VerifySpec::BallPairs { m, n, r } | VerifySpec::BallAngles { m, n, r } => {
            let x = sample_ball::<f64>(n, m, seed)?.into_points();
            let norms: Vec<f64> = x.row_iter().map(|row| row.norm()).collect();
            if norms.iter().any(|v| *v <= r) {
                return Ok(single(false));
            }
            let angles = matches!(spec, VerifySpec::BallAngles { .. });
            // pairs: (x_i, x_j) < r |x_j|; angles: (x_i, x_j) < r |x_i| |x_j|
            let ok = all_pairs(&x, |i, j, g| {
                let limit = if angles { r * norms[i] * norms[j] } else { r * norms[j] };
                g < limit
            });
            Ok(single(ok))
        }
        VerifySpec::CubeSingle { m, n, delta } | VerifySpec::CubePairs { m, n, delta } => {
            let mut x = sample_cube::<f64>(n, m, 1.0, seed)?.into_points();
            x.add_scalar_mut(-0.5);
            let r0_sq = n as f64 * CUBE_SIGMA * CUBE_SIGMA;
            let r0 = r0_sq.sqrt();
            let norms: Vec<f64> = x.row_iter().map(|row| row.norm()).collect();
            let norm_ok = norms
                .iter()
                .all(|v| (v * v / r0_sq - 1.0).abs() <= delta);
            if !norm_ok {
                return Ok(single(false));
            }
            let cos_limit = (1.0 - delta).sqrt();
            let ok = if matches!(spec, VerifySpec::CubeSingle { .. }) {
                let last = x.row(m - 1).transpose();
                let proj = x.rows(0, m - 1) * &last;
                proj.iter().all(|g| *g / (r0 * norms[m - 1]) < cos_limit)
            } else {
                all_pairs(&x, |_, j, g| g / (r0 * norms[j]) < cos_limit)
            };
            Ok(single(ok))
        }
        VerifySpec::ClusterRejection { n, h, rho } => {
            let x = sample_ball::<f64>(n, 1, seed)?;
            Ok(single(rho * x[(0, 0)] <= h))
        }
        VerifySpec::QuasiorthoMiss { n, k } => {
            let x = sample_ball::<f64>(n, k, seed)?.into_points();
            let sum: DVector<f64> = x.row_sum().transpose();
            let proj = &x * &sum;
            let misses = proj.iter().filter(|v| **v <= 0.0).count();
            Ok(Trial {
                success: proj[0] > 0.0,
                misses,
                members: k,
            })
        }
    }
}

const BLOCK: usize = 256;

/// True when `ok(i, j, (x_i, x_j))` holds for every ordered pair `i != j`.
/// Only the upper triangle of the Gram matrix is formed.
fn all_pairs<F>(x: &DMatrix<f64>, ok: F) -> bool
where
    F: Fn(usize, usize, f64) -> bool + Sync,
{
    let m = x.nrows();
    (0..m).step_by(BLOCK).collect::<Vec<_>>().par_iter().all(|&start| {
        let rows = BLOCK.min(m - start);
        let gram = x.rows(start, rows) * x.rows(start, m - start).transpose();
        (0..rows).all(|bi| {
            let i = start + bi;
            (bi + 1..m - start).all(|jj| {
                let g = gram[(bi, jj)];
                ok(i, start + jj, g) && ok(start + jj, i, g)
            })
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prop1_is_dominated() {
        let spec = VerifySpec::Prop1 { n: 50, alpha: 0.8, card_y: 1000 };
        let r = verify(&spec, 100, Seed(1)).unwrap();
        assert!(r.dominated, "{r:?}");
        assert_eq!(r.successes, 100);
    }

    #[test]
    fn low_dimension_fails_often_but_stays_consistent() {
        // in dimension 3 the bound is vacuous and failures are common
        let spec = VerifySpec::Prop1 { n: 3, alpha: 0.6, card_y: 50 };
        let r = verify(&spec, 200, Seed(2)).unwrap();
        assert!(r.bound_vacuous);
        assert!(r.successes < 200);
        assert!(r.dominated);
    }

    #[test]
    fn ball_events_are_dominated() {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        for spec in [
            VerifySpec::BallSingle { m: 500, n: 60, r },
            VerifySpec::BallPairs { m: 500, n: 60, r },
            VerifySpec::BallAngles { m: 500, n: 60, r },
        ] {
            let rep = verify(&spec, 50, Seed(3)).unwrap();
            assert!(rep.dominated, "{rep:?}");
        }
    }

    #[test]
    fn ball_pairs_fail_in_low_dimension() {
        let spec = VerifySpec::BallPairs { m: 200, n: 5, r: 0.7 };
        let rep = verify(&spec, 20, Seed(4)).unwrap();
        assert_eq!(rep.successes, 0);
        assert!(rep.bound_vacuous);
    }

    #[test]
    fn cube_events_are_dominated() {
        for spec in [
            VerifySpec::CubeSingle { m: 10, n: 2000, delta: 0.5 },
            VerifySpec::CubePairs { m: 10, n: 2000, delta: 0.5 },
        ] {
            let rep = verify(&spec, 100, Seed(5)).unwrap();
            assert!(rep.dominated, "{rep:?}");
        }
    }

    #[test]
    fn cluster_and_quasiortho() {
        let rep = verify(&VerifySpec::ClusterRejection { n: 100, h: 0.3, rho: 1.0 }, 200, Seed(6))
            .unwrap();
        assert!(rep.dominated);
        let rep = verify(&VerifySpec::QuasiorthoMiss { n: 400, k: 100 }, 100, Seed(7)).unwrap();
        assert!(rep.dominated);
        let miss = rep.auxiliary["member_miss_rate"];
        assert!((miss - 0.0228).abs() < 0.01, "{miss}");
    }

    #[test]
    fn selective_neuron_rejects_background() {
        let spec = VerifySpec::SelectiveNeuron { n: 100, m: 1000, alpha: 0.8 };
        let rep = verify(&spec, 200, Seed(8)).unwrap();
        assert_eq!(rep.successes, 200);
        assert!(rep.bound > 1.0 - 1e-16);
    }

    #[test]
    fn reports_are_reproducible() {
        let spec = VerifySpec::BallPairs { m: 100, n: 10, r: 0.8 };
        let a = verify(&spec, 30, Seed(9)).unwrap();
        let b = verify(&spec, 30, Seed(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_specs() {
        assert!(verify(&VerifySpec::Prop1 { n: 10, alpha: 0.4, card_y: 5 }, 10, Seed(0)).is_err());
        assert!(verify(&VerifySpec::BallPairs { m: 1, n: 10, r: 0.5 }, 10, Seed(0)).is_err());
        assert!(verify(&VerifySpec::Prop1 { n: 10, alpha: 0.8, card_y: 5 }, 0, Seed(0)).is_err());
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = VerifySpec::CubePairs { m: 10, n: 2000, delta: 0.5 };
        let text = serde_json::to_string(&spec).unwrap();
        assert!(text.contains("\"formula\":\"cube-pairs\""));
        assert_eq!(serde_json::from_str::<VerifySpec>(&text).unwrap(), spec);
    }
}
