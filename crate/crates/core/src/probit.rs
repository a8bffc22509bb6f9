//! First-step probit by Newton-Raphson on the full sample.

use nalgebra::{DMatrix, DVector};

use crate::dataset::ClusteredDataset;
use crate::error::{Error, Result};
use crate::linalg::{qr_r_checked, spd_inverse};
use crate::numerics::{ln_cdf, mills};

pub const SCORE_TOL: f64 = 1e-8;
pub const MAX_ITER: usize = 100;
const MAX_HALVINGS: usize = 60;
/// A log-likelihood this close to zero means every indicator is predicted
/// with probability above `1 - 1e-6`: the MLE is at infinity.
const PERFECT_FIT_LOGLIK: f64 = -1e-6;

/// Columns of the selection equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProbitSpec {
    pub include_location_dummies: bool,
    pub include_intercept: bool,
}

impl Default for ProbitSpec {
    fn default() -> Self {
        Self {
            include_location_dummies: false,
            include_intercept: true,
        }
    }
}

/// Layout of the selection design: z-block, then location dummies, then
/// the intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionDesign {
    q: usize,
    /// Location index carrying each dummy column.
    dummy_locations: Vec<usize>,
    intercept: bool,
    names: Vec<String>,
}

impl SelectionDesign {
    pub fn ncols(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    fn fill_row(&self, ds: &ClusteredDataset, i: usize, row: &mut [f64]) {
        row[..self.q].copy_from_slice(&ds.observations()[i].z);
        let loc = ds.location_of(i);
        for (k, &l) in self.dummy_locations.iter().enumerate() {
            row[self.q + k] = if l == loc { 1.0 } else { 0.0 };
        }
        if self.intercept {
            row[self.ncols() - 1] = 1.0;
        }
    }

    /// Design rows for the given observations.
    pub fn matrix(&self, ds: &ClusteredDataset, rows: &[usize]) -> DMatrix<f64> {
        let k = self.ncols();
        let mut m = DMatrix::zeros(rows.len(), k);
        let mut buf = vec![0.0; k];
        for (r, &i) in rows.iter().enumerate() {
            self.fill_row(ds, i, &mut buf);
            for (c, v) in buf.iter().enumerate() {
                m[(r, c)] = *v;
            }
        }
        m
    }
}

#[derive(Debug, Clone)]
pub struct ProbitFit {
    pub beta: Vec<f64>,
    /// Inverse observed information at `beta`.
    pub vbeta: DMatrix<f64>,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Final score infinity-norm.
    pub score_norm: f64,
    /// Ids of locations whose dummy was dropped because selection is constant there.
    pub dropped_dummies: Vec<String>,
    pub design: SelectionDesign,
}

impl ProbitFit {
    pub fn names(&self) -> &[String] {
        self.design.names()
    }

    pub fn standard_errors(&self) -> Vec<f64> {
        (0..self.beta.len()).map(|k| self.vbeta[(k, k)].max(0.0).sqrt()).collect()
    }

    /// Log-likelihood of `ds` at an arbitrary coefficient vector, using this
    /// fit's design.
    pub fn loglik_at(&self, ds: &ClusteredDataset, beta: &[f64]) -> f64 {
        let all: Vec<usize> = (0..ds.len()).collect();
        let z = self.design.matrix(ds, &all);
        let s: Vec<bool> = ds.observations().iter().map(|o| o.selected).collect();
        evaluate(&z, &s, &DVector::from_column_slice(beta)).loglik
    }
}

fn build_design(ds: &ClusteredDataset, spec: ProbitSpec) -> (SelectionDesign, Vec<String>) {
    let mut names: Vec<String> = ds.z_names().to_vec();
    let mut dummy_locations = Vec::new();
    let mut dropped = Vec::new();
    if spec.include_location_dummies {
        let mut retained = Vec::new();
        for (l, g) in ds.locations().iter().enumerate() {
            let first = ds.observations()[g.members[0]].selected;
            if g.members.iter().all(|&i| ds.observations()[i].selected == first) {
                dropped.push(g.id.clone());
            } else {
                retained.push(l);
            }
        }
        // with an intercept, the first retained location is the reference
        let skip = usize::from(spec.include_intercept && !retained.is_empty());
        for &l in &retained[skip..] {
            names.push(format!("loc_{}", ds.locations()[l].id));
            dummy_locations.push(l);
        }
    }
    if spec.include_intercept {
        names.push("const".into());
    }
    (
        SelectionDesign {
            q: ds.q(),
            dummy_locations,
            intercept: spec.include_intercept,
            names,
        },
        dropped,
    )
}

struct Eval {
    loglik: f64,
    score: DVector<f64>,
    info: DMatrix<f64>,
}

fn evaluate(z: &DMatrix<f64>, s: &[bool], beta: &DVector<f64>) -> Eval {
    let k = z.ncols();
    let index = z * beta;
    let mut loglik = 0.0;
    let mut score = DVector::zeros(k);
    let mut info = DMatrix::zeros(k, k);
    for (i, &sel) in s.iter().enumerate() {
        let sign = if sel { 1.0 } else { -1.0 };
        let c = sign * index[i];
        let m = mills(c);
        loglik += ln_cdf(c);
        let g = sign * m.lambda;
        let w = 1.0 - m.dee;
        for a in 0..k {
            let za = z[(i, a)];
            if za == 0.0 {
                continue;
            }
            score[a] += g * za;
            for b in 0..=a {
                info[(a, b)] += w * za * z[(i, b)];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            info[(b, a)] = info[(a, b)];
        }
    }
    Eval { loglik, score, info }
}

/// Maximum likelihood probit of the selection indicator on the selection design.
pub fn fit_probit(ds: &ClusteredDataset, spec: ProbitSpec) -> Result<ProbitFit> {
    let n_sel = ds.n_selected();
    if n_sel == 0 || n_sel == ds.len() {
        return Err(Error::Separation(format!(
            "{n_sel} of {} observations selected; the likelihood has no interior maximum",
            ds.len()
        )));
    }
    let (design, dropped_dummies) = build_design(ds, spec);
    if design.ncols() == 0 {
        return Err(Error::InvalidArgument("selection design has no columns".into()));
    }
    let all: Vec<usize> = (0..ds.len()).collect();
    let z = design.matrix(ds, &all);
    qr_r_checked(&z, design.names())?;
    let s: Vec<bool> = ds.observations().iter().map(|o| o.selected).collect();

    let mut beta = DVector::zeros(design.ncols());
    let mut cur = evaluate(&z, &s, &beta);
    let mut iterations = 0;
    while cur.score.amax() > SCORE_TOL && iterations < MAX_ITER {
        iterations += 1;
        let chol = cur.info.clone().cholesky().ok_or(Error::Singular)?;
        let step = chol.solve(&cur.score);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial = &beta + &step * t;
            let next = evaluate(&z, &s, &trial);
            if next.loglik.is_finite() && next.loglik >= cur.loglik - 1e-12 * cur.loglik.abs() {
                accepted = Some((trial, next));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((b, e)) => {
                beta = b;
                cur = e;
            }
            None => break,
        }
    }
    if cur.loglik > PERFECT_FIT_LOGLIK {
        return Err(Error::Separation(format!(
            "the selection design separates selected from unselected observations (log-likelihood {:e})",
            cur.loglik
        )));
    }
    let score_norm = cur.score.amax();
    let converged = score_norm <= SCORE_TOL;
    if !converged {
        log::warn!("probit stopped after {iterations} iterations with score norm {score_norm:e}");
    }
    let vbeta = spd_inverse(&cur.info)?;
    Ok(ProbitFit {
        beta: beta.iter().copied().collect(),
        vbeta,
        loglik: cur.loglik,
        iterations,
        converged,
        score_norm,
        dropped_dummies,
        design,
    })
}

/// `z'beta` for every selected observation, in dataset order.
pub fn predict_index(fit: &ProbitFit, ds: &ClusteredDataset) -> Result<Vec<f64>> {
    if !fit.converged {
        return Err(Error::NotConverged {
            iterations: fit.iterations,
            score_norm: fit.score_norm,
        });
    }
    let z = fit.design.matrix(ds, &ds.selected_indices());
    Ok((z * DVector::from_column_slice(&fit.beta)).iter().copied().collect())
}
