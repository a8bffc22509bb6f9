//! Monte Carlo harness: the clustered selection DGP, the three-estimator
//! comparison per cell, and table rendering.
//!
//! Latent equations for individual `i` in sub-location `a` of location `j`:
//!
//! ```text
//! y1* = beta z + 1e-5 j a + 1e-5 j + e1,    z ~ U(0, 1)
//! y2* = delta x + 5 j a + 10 j + e2,        x ~ N(0, 1), e2 = rho e1 + v
//! ```
//!
//! with `e1, v ~ N(0, 1)`, `j` and `a` the 1-based location and sub-location
//! indices. `y2` is observed when `y1* > 0`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::dataset::{build_neighborhoods, ClusteredDataset, NeighborhoodRule, Observation};
use crate::differencing::fixed_effect_operator;
use crate::error::{Error, Result};
use crate::estimator::{heckman_classic_with_probit, two_step_fit_with_probit, TwoStepOptions, VarianceKind};
use crate::inference::WildClusterBootstrap;
use crate::probit::{fit_probit, ProbitSpec};
use crate::report::format_sig;

/// Normal critical value for two-sided 95% intervals.
pub const Z_975: f64 = 1.96;

/// One Monte Carlo configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SimCell {
    /// Number of locations `J`.
    pub locations: usize,
    /// Sub-locations per location `s`.
    pub sublocations: usize,
    /// Individuals per sub-location `n`.
    pub size: usize,
    pub rho: f64,
    pub delta: f64,
    pub beta: f64,
    pub replications: usize,
    pub seed: u64,
    /// Location dummies in the selection equation.
    pub probit_dummies: bool,
    /// Location and sub-location effects; off gives the null model.
    pub heterogeneity: bool,
    /// Variance used by the two differenced estimators.
    pub variance: VarianceKind,
}

impl Default for SimCell {
    fn default() -> Self {
        Self {
            locations: 20,
            sublocations: 2,
            size: 3,
            rho: 0.7,
            delta: 1.0,
            beta: 0.2,
            replications: 1000,
            seed: 20_160_501,
            probit_dummies: false,
            heterogeneity: true,
            variance: VarianceKind::Verbatim,
        }
    }
}

impl SimCell {
    pub fn n_obs(&self) -> usize {
        self.locations * self.sublocations * self.size
    }

    pub fn validate(&self) -> Result<()> {
        if self.locations == 0 || self.sublocations == 0 || self.size == 0 || self.replications == 0 {
            return Err(Error::InvalidArgument(format!(
                "cell (J={}, s={}, n={}, reps={}) must have positive dimensions",
                self.locations, self.sublocations, self.size, self.replications
            )));
        }
        if self.locations < 2 {
            return Err(Error::InvalidArgument("a cell needs at least 2 locations".into()));
        }
        for (name, v) in [("rho", self.rho), ("delta", self.delta), ("beta", self.beta)] {
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} must be finite")));
            }
        }
        Ok(())
    }

    fn probit_spec(&self) -> ProbitSpec {
        ProbitSpec {
            include_location_dummies: self.probit_dummies,
            include_intercept: true,
        }
    }

    /// Seed of replication `rep`, a function of the master seed, the cell
    /// shape and `rep` only.
    pub fn replication_seed(&self, rep: usize) -> u64 {
        let mut h = splitmix(self.seed);
        for v in [self.locations, self.sublocations, self.size, rep] {
            h = splitmix(h ^ v as u64);
        }
        h
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// One draw of the DGP.
pub fn generate_sample(cell: &SimCell, rep_seed: u64) -> ClusteredDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(rep_seed);
    let mut obs = Vec::with_capacity(cell.n_obs());
    let h = if cell.heterogeneity { 1.0 } else { 0.0 };
    for j in 1..=cell.locations {
        for a in 1..=cell.sublocations {
            let (jf, af) = (j as f64, a as f64);
            let theta = h * (1e-5 * jf * af + 1e-5 * jf);
            let gamma = h * (5.0 * jf * af + 10.0 * jf);
            for i in 1..=cell.size {
                let z: f64 = rng.random();
                let x: f64 = rng.sample(StandardNormal);
                let e1: f64 = rng.sample(StandardNormal);
                let v: f64 = rng.sample(StandardNormal);
                let selected = cell.beta * z + theta + e1 > 0.0;
                let y2 = cell.delta * x + gamma + cell.rho * e1 + v;
                obs.push(Observation {
                    obs_id: format!("{j}-{a}-{i}"),
                    location_id: j.to_string(),
                    sublocation_id: a.to_string(),
                    selected,
                    outcome: selected.then_some(y2),
                    x: vec![x],
                    z: vec![z],
                    coords: None,
                });
            }
        }
    }
    ClusteredDataset::new(obs).expect("generated sample is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SimEstimator {
    NoDifferencing,
    LocationDifferencing,
    SublocationDifferencing,
}

impl SimEstimator {
    pub const ALL: [SimEstimator; 3] = [
        SimEstimator::NoDifferencing,
        SimEstimator::LocationDifferencing,
        SimEstimator::SublocationDifferencing,
    ];

    pub fn label(self) -> &'static str {
        match self {
            SimEstimator::NoDifferencing => "No-differencing",
            SimEstimator::LocationDifferencing => "Location Differencing",
            SimEstimator::SublocationDifferencing => "Sub-location Differencing",
        }
    }
}

/// Summary of one estimator over a cell's replications.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSummary {
    pub estimator: SimEstimator,
    pub mean_bias: f64,
    /// Percent of successful replications whose interval covers `delta`.
    pub coverage: f64,
    pub empirical_sd: f64,
    pub mean_se: f64,
    pub failures: usize,
    /// `delta_hat` of each successful replication, in replication order.
    pub estimates: Vec<f64>,
    pub std_errors: Vec<f64>,
}

impl EstimatorSummary {
    fn from_draws(estimator: SimEstimator, delta: f64, draws: &[Option<(f64, f64)>]) -> Self {
        let (estimates, std_errors): (Vec<f64>, Vec<f64>) = draws.iter().flatten().copied().unzip();
        let failures = draws.len() - estimates.len();
        let n = estimates.len() as f64;
        let mean = estimates.iter().sum::<f64>() / n;
        let var = estimates.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let covered = estimates
            .iter()
            .zip(&std_errors)
            .filter(|(d, se)| (*d - delta).abs() <= Z_975 * *se)
            .count();
        Self {
            estimator,
            mean_bias: mean - delta,
            coverage: 100.0 * covered as f64 / n,
            empirical_sd: var.sqrt(),
            mean_se: std_errors.iter().sum::<f64>() / n,
            failures,
            estimates,
            std_errors,
        }
    }

    pub fn se_ratio(&self) -> f64 {
        self.mean_se / self.empirical_sd
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub cell: SimCell,
    /// In [`SimEstimator::ALL`] order.
    pub estimators: Vec<EstimatorSummary>,
}

impl SimResult {
    pub fn get(&self, e: SimEstimator) -> &EstimatorSummary {
        self.estimators.iter().find(|s| s.estimator == e).expect("all estimators present")
    }
}

/// `(delta_hat, se)` for each estimator on one sample.
pub fn estimate_replication(cell: &SimCell, ds: &ClusteredDataset) -> [Option<(f64, f64)>; 3] {
    let probit = match fit_probit(ds, cell.probit_spec()) {
        Ok(p) if p.converged => p,
        Ok(_) | Err(_) => return [None; 3],
    };
    let first = |fit: Result<crate::estimator::TwoStepFit>| {
        let fit = fit.ok()?;
        let (d, se) = (fit.theta[0], fit.standard_errors()[0]);
        (d.is_finite() && se.is_finite()).then_some((d, se))
    };
    let selected = ds.selected_indices();
    let fe = |rule| {
        let g = build_neighborhoods(ds, rule)?;
        let op = fixed_effect_operator(&g, &selected, false);
        let options = TwoStepOptions {
            variance: cell.variance,
            ..Default::default()
        };
        two_step_fit_with_probit(ds, &op, probit.clone(), options)
    };
    [
        first(heckman_classic_with_probit(ds, probit.clone())),
        first(fe(NeighborhoodRule::LocationMembership)),
        first(fe(NeighborhoodRule::SublocationMembership)),
    ]
}

/// Runs every replication of `cell` (in parallel) and summarizes.
pub fn run_cell(cell: &SimCell) -> SimResult {
    let draws: Vec<[Option<(f64, f64)>; 3]> = (0..cell.replications)
        .into_par_iter()
        .map(|r| estimate_replication(cell, &generate_sample(cell, cell.replication_seed(r))))
        .collect();
    let estimators = SimEstimator::ALL
        .iter()
        .enumerate()
        .map(|(k, &e)| {
            let col: Vec<Option<(f64, f64)>> = draws.iter().map(|d| d[k]).collect();
            EstimatorSummary::from_draws(e, cell.delta, &col)
        })
        .collect();
    SimResult {
        cell: cell.clone(),
        estimators,
    }
}

/// Runs each cell in order, calling `progress` after each one.
pub fn run_tables_with_progress(grid: &[SimCell], mut progress: impl FnMut(usize, &SimResult)) -> Vec<SimResult> {
    grid.iter()
        .enumerate()
        .map(|(i, cell)| {
            let r = run_cell(cell);
            progress(i, &r);
            r
        })
        .collect()
}

pub fn run_tables(grid: &[SimCell]) -> Vec<SimResult> {
    run_tables_with_progress(grid, |_, _| {})
}

const CSV_HEADER: &str =
    "J,sublocations,sublocation_size,estimator,mean_bias,coverage,empirical_sd,mean_se,se_ratio,failures,replications";

/// Full-precision CSV, one row per cell and estimator.
pub fn render_csv(results: &[SimResult]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in results {
        let c = &r.cell;
        for e in &r.estimators {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                c.locations,
                c.sublocations,
                c.size,
                e.estimator.label(),
                e.mean_bias,
                e.coverage,
                e.empirical_sd,
                e.mean_se,
                e.se_ratio(),
                e.failures,
                c.replications
            );
        }
    }
    out
}

/// Aligned text tables grouped by location count.
pub fn render_text(results: &[SimResult]) -> String {
    let mut out = String::new();
    for j in distinct_locations(results) {
        let _ = writeln!(out, "Simulation results with {j} locations");
        let header = [
            "Numb. of sub-location",
            "sub-location-size",
            "Estimators",
            "Mean bias",
            "Coverage rate",
            "Empirical SD",
            "Mean SE",
            "Failures",
        ];
        let mut rows: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
        for r in results.iter().filter(|r| r.cell.locations == j) {
            for e in &r.estimators {
                rows.push(vec![
                    r.cell.sublocations.to_string(),
                    r.cell.size.to_string(),
                    e.estimator.label().to_string(),
                    format_sig(e.mean_bias, 6),
                    format_sig(e.coverage, 6),
                    format_sig(e.empirical_sd, 6),
                    format_sig(e.mean_se, 6),
                    e.failures.to_string(),
                ]);
            }
        }
        let widths: Vec<usize> = (0..header.len())
            .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        for row in &rows {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (s, &w))| if c == 2 { format!("{s:<w$}") } else { format!("{s:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
        }
        out.push('\n');
    }
    out
}

fn distinct_locations(results: &[SimResult]) -> Vec<usize> {
    let mut js: Vec<usize> = Vec::new();
    for r in results {
        if !js.contains(&r.cell.locations) {
            js.push(r.cell.locations);
        }
    }
    js
}

/// Writes `table_J{J}.csv` per location count and `report.txt`; returns the paths.
pub fn write_tables(results: &[SimResult], dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| Error::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let mut paths = Vec::new();
    for j in distinct_locations(results) {
        let subset: Vec<SimResult> = results.iter().filter(|r| r.cell.locations == j).cloned().collect();
        let path = dir.join(format!("table_J{j}.csv"));
        std::fs::write(&path, render_csv(&subset)).map_err(io(&path))?;
        paths.push(path);
    }
    let path = dir.join("report.txt");
    std::fs::write(&path, render_text(results)).map_err(io(&path))?;
    paths.push(path);
    Ok(paths)
}

/// Flat `key = value` grid specification.
#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub j_list: Vec<usize>,
    pub s_list: Vec<usize>,
    pub n_list: Vec<usize>,
    pub rho: f64,
    pub delta: f64,
    pub beta: f64,
    pub reps: usize,
    pub seed: u64,
    pub probit_dummies: bool,
    pub variance: VarianceKind,
}

impl Default for GridConfig {
    /// The full 3 x 3 x 4 grid.
    fn default() -> Self {
        let cell = SimCell::default();
        Self {
            j_list: vec![20, 30, 100],
            s_list: vec![2, 4, 8],
            n_list: vec![3, 5, 8, 10],
            rho: cell.rho,
            delta: cell.delta,
            beta: cell.beta,
            reps: cell.replications,
            seed: cell.seed,
            probit_dummies: cell.probit_dummies,
            variance: cell.variance,
        }
    }
}

/// Smallest replication count accepted for reported cells.
pub const MIN_REPORTED_REPS: usize = 100;

impl GridConfig {
    pub const KEYS: [&'static str; 10] = [
        "J_list",
        "s_list",
        "n_list",
        "rho",
        "delta",
        "beta",
        "reps",
        "seed",
        "probit_dummies",
        "variance",
    ];

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("`{key}`: cannot parse `{v}`"))
        }
        fn list(key: &str, v: &str) -> std::result::Result<Vec<usize>, String> {
            v.split(',').map(|s| num(key, s.trim())).collect()
        }
        match key {
            "J_list" => self.j_list = list(key, value)?,
            "s_list" => self.s_list = list(key, value)?,
            "n_list" => self.n_list = list(key, value)?,
            "rho" => self.rho = num(key, value)?,
            "delta" => self.delta = num(key, value)?,
            "beta" => self.beta = num(key, value)?,
            "reps" => self.reps = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "probit_dummies" => {
                self.probit_dummies = match value {
                    "true" | "1" => true,
                    "false" | "0" => false,
                    _ => return Err(format!("`{key}`: expected true or false, got `{value}`")),
                }
            }
            "variance" => self.variance = parse_variance(value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for (name, list) in [("J_list", &self.j_list), ("s_list", &self.s_list), ("n_list", &self.n_list)] {
            if list.is_empty() || list.contains(&0) {
                return Err(Error::Config(format!("`{name}` must list positive integers")));
            }
        }
        if self.j_list.contains(&1) {
            return Err(Error::Config("`J_list` entries must be at least 2".into()));
        }
        if self.reps < MIN_REPORTED_REPS {
            return Err(Error::Config(format!(
                "`reps` must be at least {MIN_REPORTED_REPS}, got {}",
                self.reps
            )));
        }
        for (name, v) in [("rho", self.rho), ("delta", self.delta), ("beta", self.beta)] {
            if !v.is_finite() {
                return Err(Error::Config(format!("`{name}` must be finite")));
            }
        }
        Ok(())
    }

    /// Cells in table order: J outermost, then s, then n.
    pub fn cells(&self) -> Vec<SimCell> {
        let mut cells = Vec::new();
        for &j in &self.j_list {
            for &s in &self.s_list {
                for &n in &self.n_list {
                    cells.push(SimCell {
                        locations: j,
                        sublocations: s,
                        size: n,
                        rho: self.rho,
                        delta: self.delta,
                        beta: self.beta,
                        replications: self.reps,
                        seed: self.seed,
                        probit_dummies: self.probit_dummies,
                        heterogeneity: true,
                        variance: self.variance,
                    });
                }
            }
        }
        cells
    }
}

/// `verbatim` or `residual-augmented`.
pub fn parse_variance(value: &str) -> std::result::Result<VarianceKind, String> {
    match value {
        "verbatim" => Ok(VarianceKind::Verbatim),
        "residual-augmented" => Ok(VarianceKind::ResidualAugmented),
        _ => Err(format!("`variance`: expected verbatim or residual-augmented, got `{value}`")),
    }
}

/// One-sample Kolmogorov-Smirnov test against the standard normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsTest {
    pub statistic: f64,
    pub p_value: f64,
}

pub fn ks_standard_normal(sample: &[f64]) -> KsTest {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = crate::numerics::cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let en = n.sqrt();
    let lambda = (en + 0.12 + 0.11 / en) * d;
    KsTest {
        statistic: d,
        p_value: kolmogorov_q(lambda),
    }
}

/// Survival function of the Kolmogorov distribution.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Outcome of a bootstrap size experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct SizeResult {
    pub rejections: usize,
    pub completed: usize,
    pub failures: usize,
    /// Bootstrap p-value of each completed replication.
    pub p_values: Vec<f64>,
}

impl SizeResult {
    pub fn rejection_rate(&self) -> f64 {
        self.rejections as f64 / self.completed as f64
    }
}

/// Tests `x1 = delta` (true) by the wild cluster bootstrap on
/// sub-location differenced fits, `cell.replications` times.
pub fn bootstrap_size(cell: &SimCell, boot_replications: usize, alpha: f64) -> SizeResult {
    let outcomes: Vec<Option<f64>> = (0..cell.replications)
        .into_par_iter()
        .map(|r| {
            let seed = cell.replication_seed(r);
            let ds = generate_sample(cell, seed);
            let g = build_neighborhoods(&ds, NeighborhoodRule::SublocationMembership).ok()?;
            let op = fixed_effect_operator(&g, &ds.selected_indices(), false);
            let options = TwoStepOptions {
                probit: cell.probit_spec(),
                ..Default::default()
            };
            let fit = crate::estimator::two_step_fit(&ds, &op, options).ok()?;
            let boot = WildClusterBootstrap::new(&fit, &op, &ds, "x1").ok()?;
            boot.p_value(cell.delta, boot_replications, splitmix(seed)).ok().map(|(_, p)| p)
        })
        .collect();
    let p_values: Vec<f64> = outcomes.iter().flatten().copied().collect();
    SizeResult {
        rejections: p_values.iter().filter(|&&p| p <= alpha).count(),
        completed: p_values.len(),
        failures: outcomes.len() - p_values.len(),
        p_values,
    }
}
