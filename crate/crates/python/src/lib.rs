use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

use heckit::dataset::{build_neighborhoods, load_csv, ClusteredDataset, CsvSchema, NeighborhoodRule, Observation};
use heckit::differencing::{fixed_effect_operator, kernel_operator, pairwise_operator, DifferenceOperator, Kernel};
use heckit::estimator::{plug_in_index, two_step_fit, TwoStepFit, TwoStepOptions, VarianceKind};
use heckit::inference::{wild_cluster_bootstrap, wild_cluster_bootstrap_with_interval};
use heckit::montecarlo::{parse_variance, run_cell, SimCell};
use heckit::probit::ProbitSpec;

create_exception!(spatial_heckit, EstimationError, PyException);

fn to_py(e: heckit::Error) -> PyErr {
    if e.is_validation() {
        PyValueError::new_err(e.to_string())
    } else {
        EstimationError::new_err(e.to_string())
    }
}

/// `(lambda, dee)` at `c`.
#[pyfunction]
fn inverse_mills(c: f64) -> PyResult<(f64, f64)> {
    let m = heckit::numerics::inverse_mills(c).map_err(to_py)?;
    Ok((m.lambda, m.dee))
}

#[pyfunction]
fn normal_cdf(c: f64) -> PyResult<f64> {
    heckit::numerics::normal_cdf(c).map_err(to_py)
}

/// Clustered observations with selection indicators.
#[pyclass(name = "Dataset", frozen)]
struct PyDataset {
    inner: ClusteredDataset,
}

#[pymethods]
impl PyDataset {
    /// Columns as parallel lists; `y2` entries are ignored (use `None`) for
    /// unselected rows. `x` and `z` are lists of rows.
    #[new]
    #[pyo3(signature = (obs_id, location, sublocation, selected, y2, x, z, coords=None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        obs_id: Vec<String>,
        location: Vec<String>,
        sublocation: Vec<String>,
        selected: Vec<bool>,
        y2: Vec<Option<f64>>,
        x: Vec<Vec<f64>>,
        z: Vec<Vec<f64>>,
        coords: Option<Vec<(f64, f64)>>,
    ) -> PyResult<Self> {
        let n = obs_id.len();
        let lens = [location.len(), sublocation.len(), selected.len(), y2.len(), x.len(), z.len()];
        if lens.iter().any(|&l| l != n) || coords.as_ref().is_some_and(|c| c.len() != n) {
            return Err(PyValueError::new_err("all columns must have the same length"));
        }
        let mut coords = coords.map(|c| c.into_iter());
        let obs = (0..n)
            .map(|i| Observation {
                obs_id: obs_id[i].clone(),
                location_id: location[i].clone(),
                sublocation_id: sublocation[i].clone(),
                selected: selected[i],
                outcome: y2[i],
                x: x[i].clone(),
                z: z[i].clone(),
                coords: coords.as_mut().and_then(|c| c.next()),
            })
            .collect();
        Ok(Self {
            inner: ClusteredDataset::new(obs).map_err(to_py)?,
        })
    }

    /// Loads a CSV with the default column names.
    #[staticmethod]
    fn from_csv(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: load_csv(path, &CsvSchema::default()).map_err(to_py)?,
        })
    }

    #[getter]
    fn n_obs(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn n_selected(&self) -> usize {
        self.inner.n_selected()
    }

    #[getter]
    fn n_locations(&self) -> usize {
        self.inner.locations().len()
    }

    #[getter]
    fn x_names(&self) -> Vec<String> {
        self.inner.x_names().to_vec()
    }

    fn warnings(&self) -> Vec<String> {
        self.inner.warnings()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Wild cluster bootstrap outcome for one coefficient.
#[pyclass(name = "BootstrapResult", frozen, get_all)]
struct PyBootstrapResult {
    coefficient: String,
    null_value: f64,
    t_observed: f64,
    p_value: f64,
    ci_low: Option<f64>,
    ci_high: Option<f64>,
    replications: usize,
    seed: u64,
}

/// Second-step fit together with the data and operator it was computed on.
#[pyclass(name = "Fit", frozen)]
struct PyFit {
    fit: TwoStepFit,
    op: DifferenceOperator,
    ds: ClusteredDataset,
}

#[pymethods]
impl PyFit {
    #[getter]
    fn names(&self) -> Vec<String> {
        self.fit.names.clone()
    }

    #[getter]
    fn theta(&self) -> Vec<f64> {
        self.fit.theta.clone()
    }

    #[getter]
    fn std_errors(&self) -> Vec<f64> {
        self.fit.standard_errors()
    }

    #[getter]
    fn rho(&self) -> f64 {
        self.fit.rho()
    }

    /// Two-step covariance as a list of rows.
    #[getter]
    fn covariance(&self) -> Vec<Vec<f64>> {
        let v = &self.fit.v_twostep;
        (0..v.nrows()).map(|r| v.row(r).iter().copied().collect()).collect()
    }

    #[getter]
    fn probit_beta(&self) -> Vec<f64> {
        self.fit.probit.beta.clone()
    }

    #[getter]
    fn m_rows(&self) -> usize {
        self.fit.m_rows
    }

    #[getter]
    fn dropped_anchors(&self) -> usize {
        self.op.dropped_anchors()
    }

    fn coef(&self, name: &str) -> PyResult<f64> {
        self.fit
            .coef_index(name)
            .map(|k| self.fit.theta[k])
            .ok_or_else(|| PyValueError::new_err(format!("unknown coefficient `{name}`")))
    }

    /// Wild cluster bootstrap test of `coef = null`, optionally with a
    /// test-inversion interval at `level`.
    #[pyo3(signature = (coef, null=0.0, replications=999, seed=42, level=None))]
    fn bootstrap(
        &self,
        py: Python<'_>,
        coef: &str,
        null: f64,
        replications: usize,
        seed: u64,
        level: Option<f64>,
    ) -> PyResult<PyBootstrapResult> {
        let r = py
            .detach(|| match level {
                Some(l) => wild_cluster_bootstrap_with_interval(&self.fit, &self.op, &self.ds, coef, null, replications, seed, l),
                None => wild_cluster_bootstrap(&self.fit, &self.op, &self.ds, coef, null, replications, seed),
            })
            .map_err(to_py)?;
        Ok(PyBootstrapResult {
            coefficient: r.coefficient,
            null_value: r.null_value,
            t_observed: r.t_observed,
            p_value: r.p_value,
            ci_low: r.ci_low,
            ci_high: r.ci_high,
            replications: r.replications,
            seed: r.seed,
        })
    }

    fn report(&self) -> String {
        heckit::report::fit_report(&self.fit, &self.op, &self.ds, &[])
    }
}

fn parse_rule(rule: &str, d: Option<f64>, edges: Option<Vec<(String, String)>>) -> PyResult<NeighborhoodRule> {
    Ok(match rule {
        "sublocation" => NeighborhoodRule::SublocationMembership,
        "location" => NeighborhoodRule::LocationMembership,
        "distance" => NeighborhoodRule::DistanceThreshold(d.ok_or_else(|| PyValueError::new_err("rule `distance` needs d"))?),
        "edges" => NeighborhoodRule::EdgeList(edges.ok_or_else(|| PyValueError::new_err("rule `edges` needs edges"))?),
        _ => return Err(PyValueError::new_err(format!("unknown rule `{rule}`"))),
    })
}

/// Two-step fit of `ds` with the chosen difference operator.
#[pyfunction]
#[pyo3(signature = (
    ds, op="fixed-effect", rule="sublocation", d=None, edges=None, bandwidth=None,
    kernel="epanechnikov", include_self=false, probit_dummies=false, intercept=true, variance="verbatim"
))]
#[allow(clippy::too_many_arguments)]
fn fit(
    py: Python<'_>,
    ds: &PyDataset,
    op: &str,
    rule: &str,
    d: Option<f64>,
    edges: Option<Vec<(String, String)>>,
    bandwidth: Option<f64>,
    kernel: &str,
    include_self: bool,
    probit_dummies: bool,
    intercept: bool,
    variance: &str,
) -> PyResult<PyFit> {
    let rule = parse_rule(rule, d, edges)?;
    let variance: VarianceKind = parse_variance(variance).map_err(PyValueError::new_err)?;
    let kernel = match kernel {
        "epanechnikov" => Kernel::Epanechnikov,
        "gaussian" => Kernel::Gaussian,
        _ => return Err(PyValueError::new_err(format!("unknown kernel `{kernel}`"))),
    };
    let options = TwoStepOptions {
        probit: ProbitSpec {
            include_location_dummies: probit_dummies,
            include_intercept: intercept,
        },
        variance,
        append_constant: false,
    };
    let ds = ds.inner.clone();
    let op_name = op.to_string();
    py.detach(move || {
        let graph = build_neighborhoods(&ds, rule)?;
        let sel = ds.selected_indices();
        let op = match op_name.as_str() {
            "pairwise" => pairwise_operator(&graph, &sel),
            "fixed-effect" => fixed_effect_operator(&graph, &sel, include_self),
            "kernel" => {
                let h = bandwidth.ok_or_else(|| {
                    heckit::Error::InvalidArgument("the kernel operator needs a bandwidth".into())
                })?;
                let pilot = two_step_fit(&ds, &fixed_effect_operator(&graph, &sel, false), options)?;
                kernel_operator(&graph, &sel, &plug_in_index(&ds, &pilot)?, h, kernel)?
            }
            other => return Err(heckit::Error::InvalidArgument(format!("unknown operator `{other}`"))),
        };
        let fit = two_step_fit(&ds, &op, options)?;
        Ok(PyFit { fit, op, ds })
    })
    .map_err(to_py)
}

/// Per-estimator summary of one Monte Carlo cell, as dicts keyed by
/// `estimator`, `mean_bias`, `coverage`, `empirical_sd`, `mean_se`, `failures`.
#[pyfunction]
#[pyo3(signature = (locations, sublocations, size, replications=1000, seed=20_160_501, rho=0.7, variance="verbatim"))]
#[allow(clippy::too_many_arguments)]
fn simulate_cell(
    py: Python<'_>,
    locations: usize,
    sublocations: usize,
    size: usize,
    replications: usize,
    seed: u64,
    rho: f64,
    variance: &str,
) -> PyResult<Vec<Py<pyo3::types::PyDict>>> {
    let cell = SimCell {
        locations,
        sublocations,
        size,
        replications,
        seed,
        rho,
        variance: parse_variance(variance).map_err(PyValueError::new_err)?,
        ..SimCell::default()
    };
    cell.validate().map_err(to_py)?;
    let result = py.detach(|| run_cell(&cell));
    result
        .estimators
        .iter()
        .map(|e| {
            let d = pyo3::types::PyDict::new(py);
            d.set_item("estimator", e.estimator.label())?;
            d.set_item("mean_bias", e.mean_bias)?;
            d.set_item("coverage", e.coverage)?;
            d.set_item("empirical_sd", e.empirical_sd)?;
            d.set_item("mean_se", e.mean_se)?;
            d.set_item("failures", e.failures)?;
            Ok(d.unbind())
        })
        .collect()
}

#[pymodule]
fn spatial_heckit(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("EstimationError", m.py().get_type::<EstimationError>())?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyFit>()?;
    m.add_class::<PyBootstrapResult>()?;
    m.add_function(wrap_pyfunction!(inverse_mills, m)?)?;
    m.add_function(wrap_pyfunction!(normal_cdf, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_cell, m)?)?;
    Ok(())
}
