//! Dense reference implementations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use spatial_heckit::dataset::{ClusteredDataset, Observation};
use spatial_heckit::probit::ProbitFit;

/// Random clustered dataset with `p` outcome and `q` selection covariates.
/// Group sizes are drawn in `1..=max_size`; effects are location and
/// sub-location shifts.
pub fn random_dataset(seed: u64, locations: usize, max_subs: usize, max_size: usize, p: usize, q: usize) -> ClusteredDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut obs = Vec::new();
    for j in 0..locations {
        let subs = rng.random_range(1..=max_subs);
        for a in 0..subs {
            let shift: f64 = rng.random_range(-3.0..3.0);
            for i in 0..rng.random_range(1..=max_size) {
                let x: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
                let z: Vec<f64> = (0..q).map(|_| rng.random_range(-1.0..1.0)).collect();
                let e1: f64 = rng.sample(StandardNormal);
                let selected = 0.3 + z.iter().sum::<f64>() * 0.8 + e1 > 0.0;
                let y = x.iter().sum::<f64>() + shift + 0.6 * e1 + 0.5 * rng.sample::<f64, _>(StandardNormal);
                obs.push(Observation {
                    obs_id: format!("{j}.{a}.{i}"),
                    location_id: format!("L{j}"),
                    sublocation_id: format!("S{a}"),
                    selected,
                    outcome: selected.then_some(y),
                    x,
                    z,
                    coords: None,
                });
            }
        }
    }
    ClusteredDataset::new(obs).unwrap()
}

/// Positions (in the selected subsample) grouped by sub-location or location.
pub fn selected_groups(ds: &ClusteredDataset, by_sublocation: bool) -> Vec<Vec<usize>> {
    let sel = ds.selected_indices();
    let key = |i: usize| {
        let o = &ds.observations()[i];
        if by_sublocation {
            format!("{}\u{1}{}", o.location_id, o.sublocation_id)
        } else {
            o.location_id.clone()
        }
    };
    let mut keys: Vec<String> = Vec::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (c, &i) in sel.iter().enumerate() {
        let k = key(i);
        match keys.iter().position(|x| *x == k) {
            Some(g) => groups[g].push(c),
            None => {
                keys.push(k);
                groups.push(vec![c]);
            }
        }
    }
    groups
}

/// Fixed-effect rows `e_i - mean_{k != i} e_k` within each group of two or more.
pub fn dense_fixed_effect(ds: &ClusteredDataset, by_sublocation: bool) -> DMatrix<f64> {
    let n = ds.n_selected();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for g in selected_groups(ds, by_sublocation) {
        if g.len() < 2 {
            continue;
        }
        for &i in &g {
            let mut r = vec![0.0; n];
            for &k in &g {
                r[k] = if k == i { 1.0 } else { -1.0 / (g.len() - 1) as f64 };
            }
            rows.push(r);
        }
    }
    from_rows(rows, n)
}

/// All within-group pairs `e_i - e_k`, `i < k`.
pub fn dense_pairwise(ds: &ClusteredDataset, by_sublocation: bool) -> DMatrix<f64> {
    let n = ds.n_selected();
    let mut rows = Vec::new();
    for g in selected_groups(ds, by_sublocation) {
        for (a, &i) in g.iter().enumerate() {
            for &k in &g[a + 1..] {
                let mut r = vec![0.0; n];
                r[i] = 1.0;
                r[k] = -1.0;
                rows.push(r);
            }
        }
    }
    from_rows(rows, n)
}

fn from_rows(rows: Vec<Vec<f64>>, n: usize) -> DMatrix<f64> {
    let m = rows.len();
    DMatrix::from_fn(m, n, |r, c| rows[r][c])
}

/// Sorts rows lexicographically so operators can be compared up to row order.
pub fn sorted_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect();
    rows.sort_by(|a, b| a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
    rows
}

pub fn phi(c: f64) -> f64 {
    (-0.5 * c * c).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn big_phi(c: f64) -> f64 {
    0.5 * libm::erfc(-c / std::f64::consts::SQRT_2)
}

pub struct DenseTwoStep {
    pub theta: DVector<f64>,
    pub v: DMatrix<f64>,
}

/// Explicit two-step computation: `z` is the selection design over the
/// selected rows (same columns as the probit fit), `delta` the dense operator.
pub fn dense_two_step(ds: &ClusteredDataset, delta: &DMatrix<f64>, z: &DMatrix<f64>, probit: &ProbitFit) -> DenseTwoStep {
    let sel = ds.selected_indices();
    let n = sel.len();
    let p = ds.p();
    let beta = DVector::from_column_slice(&probit.beta);
    let index = z * &beta;
    let lambda: Vec<f64> = index.iter().map(|&c| phi(c) / big_phi(c)).collect();
    let dee: Vec<f64> = index.iter().zip(&lambda).map(|(&c, &l)| 1.0 - l * (c + l)).collect();
    let w = DMatrix::from_fn(n, p + 1, |r, c| if c < p { ds.observations()[sel[r]].x[c] } else { lambda[r] });
    let y = DVector::from_iterator(n, sel.iter().map(|&i| ds.observations()[i].outcome.unwrap()));
    let dw = delta * &w;
    let dy = delta * &y;
    let xtx = dw.transpose() * &dw;
    let b = xtx.clone().try_inverse().unwrap();
    let theta = xtx.lu().solve(&(dw.transpose() * &dy)).unwrap();
    let rho = theta[p];
    let r = DMatrix::from_diagonal(&DVector::from_vec(dee.clone()));
    let d = DMatrix::from_diagonal(&DVector::from_iterator(n, dee.iter().map(|v| 1.0 - v)));
    let v1 = delta * &r * delta.transpose() * (rho * rho);
    let v2 = delta * &d * z * &probit.vbeta * z.transpose() * &d * delta.transpose() * (rho * rho);
    let v = &b * dw.transpose() * (v1 + v2) * &dw * &b;
    DenseTwoStep { theta, v }
}

/// Selection design `[z, 1]` over the selected rows.
pub fn selection_design_with_intercept(ds: &ClusteredDataset) -> DMatrix<f64> {
    let sel = ds.selected_indices();
    let q = ds.q();
    DMatrix::from_fn(sel.len(), q + 1, |r, c| if c < q { ds.observations()[sel[r]].z[c] } else { 1.0 })
}

pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(f64::MIN_POSITIVE)
}
