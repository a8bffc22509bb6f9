//! Second step: OLS on the differenced equation with the differenced inverse
//! Mills ratio as a generated regressor, and its two-step variance.
//!
//! With `W = [x, lambda_hat]`, `B = [(DW)'DW]^{-1}` and `G = D'(DW)`, the
//! variance is
//!
//! ```text
//! V = rho^2 B [G' R G + (Z' Dg G)' V_beta (Z' Dg G)] B
//! ```
//!
//! where `R = diag(d_i)` and `Dg = diag(1 - d_i)` are evaluated at the probit
//! estimate. Only `N x k` and `q x k` intermediates are ever formed.

use nalgebra::{DMatrix, DVector};

use crate::dataset::ClusteredDataset;
use crate::differencing::DifferenceOperator;
use crate::error::{Error, Result};
use crate::linalg::{least_squares, symmetrize};
use crate::numerics::mills;
use crate::probit::{fit_probit, predict_index, ProbitFit, ProbitSpec};

/// Which inner variance the sandwich uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VarianceKind {
    /// `Var(e) = rho^2 R`, exactly as in the two-step formula.
    #[default]
    Verbatim,
    /// `Var(e) = rho^2 R + sigma_v^2 I`, with `sigma_v^2` estimated from the
    /// second-step residual sum of squares.
    ResidualAugmented,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TwoStepOptions {
    pub probit: ProbitSpec,
    pub variance: VarianceKind,
    /// Appends a constant column to the differenced design.
    pub append_constant: bool,
}

/// Cached pieces that make the variance an affine function of
/// `(rho^2, sigma_v^2)`; the bootstrap re-evaluates it per draw.
#[derive(Debug, Clone)]
pub(crate) struct VarianceCache {
    /// `B G'RG B`
    pub(crate) lambda_part: DMatrix<f64>,
    /// `B (Z'DgG)' V_beta (Z'DgG) B`
    pub(crate) probit_part: DMatrix<f64>,
    /// `B G'G B`
    pub(crate) sigma_part: DMatrix<f64>,
    /// `sum_i c_i d_i` and `sum_i c_i`, `c_i` the squared column norms of the operator.
    pub(crate) weighted_dee: f64,
    pub(crate) weight_total: f64,
}

impl VarianceCache {
    pub(crate) fn sigma_v2(&self, rho: f64, rss: f64) -> f64 {
        ((rss - rho * rho * self.weighted_dee) / self.weight_total).max(0.0)
    }

    /// `(v1, v2)` at the given `rho` and `sigma_v^2`.
    pub(crate) fn parts(&self, rho: f64, sigma_v2: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        let r2 = rho * rho;
        let v1 = &self.lambda_part * r2 + &self.sigma_part * sigma_v2;
        let v2 = &self.probit_part * r2;
        (v1, v2)
    }
}

#[derive(Debug, Clone)]
pub struct TwoStepFit {
    pub names: Vec<String>,
    pub theta: Vec<f64>,
    pub v_twostep: DMatrix<f64>,
    pub v1: DMatrix<f64>,
    pub v2: DMatrix<f64>,
    pub residuals: Vec<f64>,
    pub m_rows: usize,
    pub n_selected: usize,
    pub p: usize,
    pub variance: VarianceKind,
    /// Estimated `sigma_v^2` (zero for the verbatim variance).
    pub sigma_v2: f64,
    pub probit: ProbitFit,
    /// Differenced design `DW`, `M x k`.
    pub(crate) design: DMatrix<f64>,
    /// Differenced outcome.
    pub(crate) dy: Vec<f64>,
    /// `[(DW)'DW]^{-1}`
    pub(crate) bread: DMatrix<f64>,
    pub(crate) cache: VarianceCache,
}

impl TwoStepFit {
    pub fn delta(&self) -> &[f64] {
        &self.theta[..self.p]
    }

    pub fn rho(&self) -> f64 {
        self.theta[self.p]
    }

    pub fn coef_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn standard_errors(&self) -> Vec<f64> {
        (0..self.theta.len())
            .map(|k| self.v_twostep[(k, k)].max(0.0).sqrt())
            .collect()
    }

    pub fn differenced_design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn differenced_outcome(&self) -> &[f64] {
        &self.dy
    }

    pub fn bread(&self) -> &DMatrix<f64> {
        &self.bread
    }
}

/// Per-selected-observation first-step quantities.
struct FirstStep {
    probit: ProbitFit,
    lambda: Vec<f64>,
    dee: Vec<f64>,
    /// Selection design over the selected rows.
    z: DMatrix<f64>,
}

fn first_step(ds: &ClusteredDataset, probit: ProbitFit) -> Result<FirstStep> {
    let index = predict_index(&probit, ds)?;
    let (lambda, dee) = index.iter().map(|&c| {
        let m = mills(c);
        (m.lambda, m.dee)
    }).unzip();
    let z = probit.design.matrix(ds, &ds.selected_indices());
    Ok(FirstStep { probit, lambda, dee, z })
}

fn check_operator(ds: &ClusteredDataset, op: &DifferenceOperator) -> Result<()> {
    if op.selected() != ds.selected_indices().as_slice() {
        return Err(Error::InvalidArgument(
            "operator was not built over this dataset's selected subsample".into(),
        ));
    }
    Ok(())
}

fn coefficient_names(ds: &ClusteredDataset, constant: bool) -> Vec<String> {
    let mut names = ds.x_names().to_vec();
    names.push("lambda".into());
    if constant {
        names.push("const".into());
    }
    names
}

/// `[x, lambda_hat]` over the selected rows.
fn level_design(ds: &ClusteredDataset, lambda: &[f64]) -> DMatrix<f64> {
    let sel = ds.selected_indices();
    let p = ds.p();
    let mut w = DMatrix::zeros(sel.len(), p + 1);
    for (r, &i) in sel.iter().enumerate() {
        for (c, v) in ds.observations()[i].x.iter().enumerate() {
            w[(r, c)] = *v;
        }
        w[(r, p)] = lambda[r];
    }
    w
}

fn differenced_design(
    ds: &ClusteredDataset,
    op: &DifferenceOperator,
    lambda: &[f64],
    constant: bool,
) -> Result<DMatrix<f64>> {
    let dw = op.apply_matrix(&level_design(ds, lambda))?;
    Ok(if constant {
        let k = dw.ncols();
        dw.insert_column(k, 1.0)
    } else {
        dw
    })
}

fn variance_cache(
    op: &DifferenceOperator,
    design: &DMatrix<f64>,
    bread: &DMatrix<f64>,
    first: &FirstStep,
) -> Result<VarianceCache> {
    let g = op.apply_transpose_matrix(design)?;
    let n = g.nrows();
    let k = g.ncols();

    let mut grg = DMatrix::zeros(k, k);
    let mut dg = g.clone();
    for i in 0..n {
        let d = first.dee[i];
        let row = g.row(i);
        grg += row.transpose() * row * d;
        dg.row_mut(i).scale_mut(1.0 - d);
    }
    let h = first.z.transpose() * dg;
    let probit_inner = h.transpose() * &first.probit.vbeta * &h;
    let gtg = g.transpose() * &g;

    let mut col_sq = vec![0.0; op.cols()];
    for r in 0..op.rows() {
        for (c, w) in op.row(r) {
            col_sq[c] += w * w;
        }
    }
    let weighted_dee = col_sq.iter().zip(&first.dee).map(|(c, d)| c * d).sum();
    let weight_total = col_sq.iter().sum();

    let sandwich = |inner: DMatrix<f64>| symmetrize(bread * inner * bread);
    Ok(VarianceCache {
        lambda_part: sandwich(grg),
        probit_part: sandwich(probit_inner),
        sigma_part: sandwich(gtg),
        weighted_dee,
        weight_total,
    })
}

fn second_step(
    ds: &ClusteredDataset,
    op: &DifferenceOperator,
    first: FirstStep,
    options: TwoStepOptions,
) -> Result<TwoStepFit> {
    let names = coefficient_names(ds, options.append_constant);
    let k = names.len();
    let design = differenced_design(ds, op, &first.lambda, options.append_constant)?;
    if design.nrows() < k + 1 {
        return Err(Error::TooFewRows {
            rows: design.nrows(),
            params: k,
        });
    }
    let y: Vec<f64> = ds
        .selected_indices()
        .iter()
        .map(|&i| ds.observations()[i].outcome.unwrap_or(f64::NAN))
        .collect();
    let dy = op.apply(&y)?;
    let ls = least_squares(&design, &DVector::from_column_slice(&dy), &names)?;
    let theta: Vec<f64> = ls.coef.iter().copied().collect();
    let fitted = &design * &ls.coef;
    let residuals: Vec<f64> = dy.iter().zip(fitted.iter()).map(|(a, b)| a - b).collect();

    let cache = variance_cache(op, &design, &ls.bread, &first)?;
    let rho = theta[ds.p()];
    let sigma_v2 = match options.variance {
        VarianceKind::Verbatim => 0.0,
        VarianceKind::ResidualAugmented => cache.sigma_v2(rho, residuals.iter().map(|e| e * e).sum()),
    };
    let (v1, v2) = cache.parts(rho, sigma_v2);
    let v_twostep = symmetrize(&v1 + &v2);

    Ok(TwoStepFit {
        names,
        theta,
        v_twostep,
        v1,
        v2,
        residuals,
        m_rows: op.rows(),
        n_selected: op.cols(),
        p: ds.p(),
        variance: options.variance,
        sigma_v2,
        probit: first.probit,
        design,
        dy,
        bread: ls.bread,
        cache,
    })
}

/// Probit first step, then OLS of `D y2` on `D [x, lambda_hat]`.
pub fn two_step_fit(ds: &ClusteredDataset, op: &DifferenceOperator, options: TwoStepOptions) -> Result<TwoStepFit> {
    let probit = fit_probit(ds, options.probit)?;
    two_step_fit_with_probit(ds, op, probit, options)
}

/// Second step on an existing first-step fit (whose spec overrides
/// `options.probit`).
pub fn two_step_fit_with_probit(
    ds: &ClusteredDataset,
    op: &DifferenceOperator,
    probit: ProbitFit,
    options: TwoStepOptions,
) -> Result<TwoStepFit> {
    check_operator(ds, op)?;
    let first = first_step(ds, probit)?;
    second_step(ds, op, first, options)
}

/// Recomputes the two-step variance of `fit` from its inputs.
pub fn variance_two_step(
    fit: &TwoStepFit,
    op: &DifferenceOperator,
    probit: &ProbitFit,
    ds: &ClusteredDataset,
) -> Result<DMatrix<f64>> {
    check_operator(ds, op)?;
    let first = first_step(ds, probit.clone())?;
    let constant = fit.names.last().is_some_and(|n| n == "const");
    let design = differenced_design(ds, op, &first.lambda, constant)?;
    if design.shape() != fit.design.shape() {
        return Err(Error::Dimension {
            expected: fit.design.ncols(),
            got: design.ncols(),
        });
    }
    let bread = crate::linalg::spd_inverse(&(design.transpose() * &design))?;
    let cache = variance_cache(op, &design, &bread, &first)?;
    let rho = fit.rho();
    let sigma_v2 = match fit.variance {
        VarianceKind::Verbatim => 0.0,
        VarianceKind::ResidualAugmented => cache.sigma_v2(rho, fit.residuals.iter().map(|e| e * e).sum()),
    };
    let (v1, v2) = cache.parts(rho, sigma_v2);
    Ok(symmetrize(v1 + v2))
}

/// Undifferenced two-step comparator: OLS of `y2` on `[x, lambda_hat, 1]`
/// over the selected sample, with the classical generated-regressor
/// covariance.
pub fn heckman_classic(ds: &ClusteredDataset, probit: ProbitSpec) -> Result<TwoStepFit> {
    heckman_classic_with_probit(ds, fit_probit(ds, probit)?)
}

pub fn heckman_classic_with_probit(ds: &ClusteredDataset, probit: ProbitFit) -> Result<TwoStepFit> {
    let op = DifferenceOperator::identity(&ds.selected_indices());
    let options = TwoStepOptions {
        probit: ProbitSpec::default(),
        variance: VarianceKind::ResidualAugmented,
        append_constant: true,
    };
    two_step_fit_with_probit(ds, &op, probit, options)
}

/// `z'beta_hat + x'delta_hat` over the selected sample: the plug-in index
/// for kernel weights.
pub fn plug_in_index(ds: &ClusteredDataset, pilot: &TwoStepFit) -> Result<Vec<f64>> {
    let zb = predict_index(&pilot.probit, ds)?;
    let delta = pilot.delta();
    Ok(ds
        .selected_indices()
        .iter()
        .zip(zb)
        .map(|(&i, v)| v + ds.observations()[i].x.iter().zip(delta).map(|(a, b)| a * b).sum::<f64>())
        .collect())
}
