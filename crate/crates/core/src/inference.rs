//! Restricted wild cluster bootstrap for second-step coefficients.
//!
//! The first step is held fixed: the differenced design (including the
//! differenced Mills ratio) is reused in every draw, only the outcome is
//! resampled. Clusters are locations; each differenced row belongs to its
//! anchor's location. Each draw refits the second step and studentizes with
//! the same two-step variance as the original fit.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::ClusteredDataset;
use crate::differencing::DifferenceOperator;
use crate::error::{Error, Result};
use crate::estimator::{TwoStepFit, VarianceKind};
use crate::linalg::least_squares;

/// Largest cluster count for which all sign patterns are enumerated.
pub const MAX_ENUMERATED_CLUSTERS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightKind {
    Rademacher,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    pub coefficient: String,
    pub null_value: f64,
    pub t_observed: f64,
    pub p_value: f64,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub replications: usize,
    pub weights: WeightKind,
    pub seed: u64,
}

/// Draw-independent pieces of the bootstrap for one coefficient.
pub struct WildClusterBootstrap<'a> {
    fit: &'a TwoStepFit,
    coef: usize,
    /// Cluster position (in canonical order) of each differenced row.
    row_cluster: Vec<usize>,
    n_clusters: usize,
    /// `B X'` as a `k x M` matrix.
    hat: DMatrix<f64>,
    /// Rows of the design excluding the tested column.
    restricted: DMatrix<f64>,
    restricted_names: Vec<String>,
}

fn t_stat(num: f64, se: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else if se > 0.0 {
        num / se
    } else {
        num.signum() * f64::INFINITY
    }
}

impl<'a> WildClusterBootstrap<'a> {
    pub fn new(fit: &'a TwoStepFit, op: &DifferenceOperator, ds: &ClusteredDataset, coef: &str) -> Result<Self> {
        let j = fit
            .coef_index(coef)
            .ok_or_else(|| Error::UnknownCoefficient(coef.to_string()))?;
        let x = fit.differenced_design();
        if op.rows() != x.nrows() {
            return Err(Error::Dimension {
                expected: x.nrows(),
                got: op.rows(),
            });
        }
        let location: Vec<usize> = op
            .anchors()
            .iter()
            .map(|&a| ds.location_of(op.selected()[a]))
            .collect();

        // Canonical cluster order from label-free data so that renaming
        // locations or shuffling observations does not change the draws.
        let mut labels: Vec<usize> = location.clone();
        labels.sort_unstable();
        labels.dedup();
        let n_clusters = labels.len();
        if n_clusters < 2 {
            return Err(Error::TooFewClusters(n_clusters));
        }
        let k = x.ncols();
        let dy = fit.differenced_outcome();
        let mut keys: Vec<(usize, Vec<f64>, usize)> = labels.iter().map(|&l| (0, vec![0.0; k + 1], l)).collect();
        for (r, &l) in location.iter().enumerate() {
            let g = labels.binary_search(&l).unwrap();
            keys[g].0 += 1;
            for c in 0..k {
                keys[g].1[c] += x[(r, c)] * dy[r];
            }
            keys[g].1[k] += dy[r] * dy[r];
        }
        let mut order: Vec<usize> = (0..n_clusters).collect();
        order.sort_by(|&a, &b| {
            let (ka, kb) = (&keys[a], &keys[b]);
            ka.0.cmp(&kb.0)
                .then_with(|| {
                    ka.1.iter()
                        .zip(&kb.1)
                        .map(|(u, v)| u.total_cmp(v))
                        .find(|o| o.is_ne())
                        .unwrap_or(std::cmp::Ordering::Equal)
                })
                .then_with(|| ka.2.cmp(&kb.2))
        });
        let mut position = vec![0; n_clusters];
        for (pos, &g) in order.iter().enumerate() {
            position[g] = pos;
        }
        let row_cluster = location
            .iter()
            .map(|l| position[labels.binary_search(l).unwrap()])
            .collect();

        let hat = fit.bread() * x.transpose();
        let restricted = x.clone().remove_column(j);
        let mut restricted_names = fit.names.clone();
        restricted_names.remove(j);
        Ok(Self {
            fit,
            coef: j,
            row_cluster,
            n_clusters,
            hat,
            restricted,
            restricted_names,
        })
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    /// `(theta_j - null) / se_j` for outcome vector `y`.
    fn t_for(&self, y: &DVector<f64>, null: f64) -> f64 {
        let fit = self.fit;
        let theta = &self.hat * y;
        let rho = theta[fit.p];
        let sigma_v2 = match fit.variance {
            VarianceKind::Verbatim => 0.0,
            VarianceKind::ResidualAugmented => {
                let resid = y - fit.differenced_design() * &theta;
                fit.cache.sigma_v2(rho, resid.norm_squared())
            }
        };
        let c = &fit.cache;
        let j = self.coef;
        let var = rho * rho * (c.lambda_part[(j, j)] + c.probit_part[(j, j)]) + sigma_v2 * c.sigma_part[(j, j)];
        t_stat(theta[j] - null, var.max(0.0).sqrt())
    }

    /// Null-imposed fitted values and residuals.
    fn restricted_fit(&self, null: f64) -> Result<(DVector<f64>, DVector<f64>)> {
        let x = self.fit.differenced_design();
        let dy = DVector::from_column_slice(self.fit.differenced_outcome());
        let shifted = &dy - x.column(self.coef) * null;
        let mut resid = if self.restricted.ncols() == 0 {
            shifted.clone()
        } else {
            let ls = least_squares(&self.restricted, &shifted, &self.restricted_names)?;
            &shifted - &self.restricted * ls.coef
        };
        // rounding-level residuals: every draw reproduces the data
        if resid.norm() <= 1e-13 * dy.norm() {
            resid.fill(0.0);
        }
        Ok((&dy - &resid, resid))
    }

    fn observed_t(&self, null: f64) -> f64 {
        self.t_for(&DVector::from_column_slice(self.fit.differenced_outcome()), null)
    }

    /// `|t*|` for each sign pattern.
    fn bootstrap_ts(&self, null: f64, signs: &[Vec<bool>]) -> Result<Vec<f64>> {
        let (fitted, resid) = self.restricted_fit(null)?;
        Ok(signs
            .par_iter()
            .map(|w| {
                let y = DVector::from_iterator(
                    fitted.len(),
                    fitted
                        .iter()
                        .zip(resid.iter())
                        .zip(&self.row_cluster)
                        .map(|((f, e), &g)| if w[g] { f + e } else { f - e }),
                );
                self.t_for(&y, null).abs()
            })
            .collect())
    }

    fn p_value_with(&self, null: f64, signs: &[Vec<bool>], add_one: bool) -> Result<(f64, f64)> {
        let t_obs = self.observed_t(null);
        let ts = self.bootstrap_ts(null, signs)?;
        let extreme = ts.iter().filter(|&&t| t >= t_obs.abs()).count();
        let p = if add_one {
            (1 + extreme) as f64 / (1 + signs.len()) as f64
        } else {
            extreme as f64 / signs.len() as f64
        };
        Ok((t_obs, p))
    }

    /// Rademacher signs for `replications` draws; draw `b` is seeded with `seed ^ b`.
    pub fn draw_signs(&self, replications: usize, seed: u64) -> Vec<Vec<bool>> {
        (0..replications)
            .into_par_iter()
            .map(|b| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ b as u64);
                (0..self.n_clusters).map(|_| rng.random::<bool>()).collect()
            })
            .collect()
    }

    /// Monte Carlo p-value with the add-one rule.
    pub fn p_value(&self, null: f64, replications: usize, seed: u64) -> Result<(f64, f64)> {
        let signs = self.draw_signs(replications, seed);
        self.p_value_with(null, &signs, true)
    }

    /// p-value over all `2^G` sign patterns.
    pub fn exact_p_value(&self, null: f64) -> Result<f64> {
        if self.n_clusters > MAX_ENUMERATED_CLUSTERS {
            return Err(Error::InvalidArgument(format!(
                "{} clusters is too many to enumerate",
                self.n_clusters
            )));
        }
        let signs: Vec<Vec<bool>> = (0..1u64 << self.n_clusters)
            .map(|m| (0..self.n_clusters).map(|g| m >> g & 1 == 1).collect())
            .collect();
        Ok(self.p_value_with(null, &signs, false)?.1)
    }

    /// Test-inversion interval: the null values not rejected at `level`,
    /// found by bisection on each side of the point estimate with the draws
    /// held fixed.
    pub fn confidence_interval(&self, level: f64, replications: usize, seed: u64) -> Result<(f64, f64)> {
        let alpha = 1.0 - level;
        let signs = self.draw_signs(replications, seed);
        let accept = |c: f64| -> Result<bool> { Ok(self.p_value_with(c, &signs, true)?.1 > alpha) };
        let est = self.fit.theta[self.coef];
        let se = self.fit.standard_errors()[self.coef];
        let mut step = if se > 0.0 { 2.0 * se } else { est.abs().max(1.0) * 1e-3 };
        let mut bounds = [0.0; 2];
        for (side, dir) in [(0, -1.0), (1, 1.0)] {
            let mut inside = est;
            let mut outside = est + dir * step;
            let mut expansions = 0;
            while accept(outside)? {
                inside = outside;
                step *= 2.0;
                outside = est + dir * step;
                expansions += 1;
                if expansions > 60 {
                    return Err(Error::InvalidArgument("bootstrap interval is unbounded".into()));
                }
            }
            for _ in 0..50 {
                let mid = 0.5 * (inside + outside);
                if accept(mid)? {
                    inside = mid;
                } else {
                    outside = mid;
                }
            }
            bounds[side] = 0.5 * (inside + outside);
            step = if se > 0.0 { 2.0 * se } else { est.abs().max(1.0) * 1e-3 };
        }
        Ok((bounds[0], bounds[1]))
    }
}

/// Restricted wild cluster bootstrap test of `coef = null_value`.
pub fn wild_cluster_bootstrap(
    fit: &TwoStepFit,
    op: &DifferenceOperator,
    ds: &ClusteredDataset,
    coef: &str,
    null_value: f64,
    replications: usize,
    seed: u64,
) -> Result<BootstrapResult> {
    if replications < 99 {
        return Err(Error::InvalidArgument(format!(
            "at least 99 bootstrap replications required, got {replications}"
        )));
    }
    let boot = WildClusterBootstrap::new(fit, op, ds, coef)?;
    let (t_observed, p_value) = boot.p_value(null_value, replications, seed)?;
    Ok(BootstrapResult {
        coefficient: coef.to_string(),
        null_value,
        t_observed,
        p_value,
        ci_low: None,
        ci_high: None,
        replications,
        weights: WeightKind::Rademacher,
        seed,
    })
}

/// As [`wild_cluster_bootstrap`], adding the test-inversion interval at `level`.
#[allow(clippy::too_many_arguments)]
pub fn wild_cluster_bootstrap_with_interval(
    fit: &TwoStepFit,
    op: &DifferenceOperator,
    ds: &ClusteredDataset,
    coef: &str,
    null_value: f64,
    replications: usize,
    seed: u64,
    level: f64,
) -> Result<BootstrapResult> {
    let mut result = wild_cluster_bootstrap(fit, op, ds, coef, null_value, replications, seed)?;
    let boot = WildClusterBootstrap::new(fit, op, ds, coef)?;
    let (lo, hi) = boot.confidence_interval(level, replications, seed)?;
    result.ci_low = Some(lo);
    result.ci_high = Some(hi);
    Ok(result)
}
