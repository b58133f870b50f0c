//! Python bindings: the skew-product map, exponent and direction
//! estimates, Pliss tools, cone batteries, and Birkhoff averages.
//!
//! The module mirrors the library API with plain lists, tuples, and
//! dicts; heavy batch orchestration stays in the command-line runner.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use skewtorus::config::RunConfig;
use skewtorus::ergodic::{birkhoff, hopf_agreement, Direction, Observable};
use skewtorus::error::Error;
use skewtorus::linalg::IntMat2;
use skewtorus::lyapunov::{
    alpha_field, center_exponents, full_exponents, oseledets_directions, DEFAULT_ALPHA_ITER,
    DEFAULT_BURN_IN,
};
use skewtorus::maps::{Point4, Shear, SkewProduct, System};
use skewtorus::pliss::{
    pliss_times, z_membership, PlissParams, SetProxyConfig, DEFAULT_PROXY_HORIZON,
};
use skewtorus::scales::{Scales, DEFAULT_DELTA, DEFAULT_DELTA_TILDE};

fn err(e: Error) -> PyErr {
    PyValueError::new_err(format!("{e}"))
}

fn parse_shears(raw: Vec<(String, [i64; 4], f64)>) -> PyResult<Vec<Shear>> {
    raw.into_iter()
        .map(|(target, freq, eps)| {
            let idx = match target.as_str() {
                "x" => 0,
                "y" => 1,
                "z" => 2,
                "w" => 3,
                other => {
                    return Err(PyValueError::new_err(format!(
                        "shear target must be x, y, z, or w; got `{other}`"
                    )))
                }
            };
            Shear::new(idx, freq, eps).map_err(err)
        })
        .collect()
}

/// The skew product on the 4-torus, optionally shear-perturbed.
#[pyclass]
struct Map {
    f: SkewProduct,
}

#[pymethods]
impl Map {
    #[new]
    #[pyo3(signature = (n, base=[2, 1, 1, 1], pre_shear=vec![], post_shear=vec![]))]
    fn new(
        n: u32,
        base: [i64; 4],
        pre_shear: Vec<(String, [i64; 4], f64)>,
        post_shear: Vec<(String, [i64; 4], f64)>,
    ) -> PyResult<Self> {
        let f = SkewProduct::new(
            n,
            IntMat2::new(base[0], base[1], base[2], base[3]),
            parse_shears(pre_shear)?,
            parse_shears(post_shear)?,
        )
        .map_err(err)?;
        Ok(Self { f })
    }

    #[getter]
    fn n(&self) -> u32 {
        self.f.n()
    }

    #[getter]
    fn is_perturbed(&self) -> bool {
        self.f.is_perturbed()
    }

    fn apply(&self, m: Point4) -> PyResult<Point4> {
        self.f.apply(m).map_err(err)
    }

    fn inverse(&self, m: Point4) -> PyResult<Point4> {
        self.f.inverse(m).map_err(err)
    }

    /// The forward orbit [m, f(m), ..., f^steps(m)].
    fn orbit(&self, m: Point4, steps: u64) -> PyResult<Vec<Point4>> {
        let mut out = Vec::with_capacity(steps as usize + 1);
        let mut p = m;
        out.push(p);
        for _ in 0..steps {
            p = self.f.apply(p).map_err(err)?;
            out.push(p);
        }
        Ok(out)
    }

    /// Center-plane Lyapunov pair (descending).
    #[pyo3(signature = (m, steps, burn_in=DEFAULT_BURN_IN))]
    fn center_exponents(&self, m: Point4, steps: u64, burn_in: u64) -> PyResult<(f64, f64)> {
        let rep = center_exponents(&System::Skew(self.f.clone()), m, steps, burn_in)
            .map_err(err)?;
        Ok((rep.exponents[0], rep.exponents[1]))
    }

    /// All four exponents (descending).
    #[pyo3(signature = (m, steps, burn_in=DEFAULT_BURN_IN))]
    fn full_exponents(&self, m: Point4, steps: u64, burn_in: u64) -> PyResult<Vec<f64>> {
        Ok(full_exponents(&self.f, m, steps, burn_in)
            .map_err(err)?
            .exponents)
    }

    /// The invariant unstable-projection field, for unperturbed maps.
    #[pyo3(signature = (m, iters=DEFAULT_ALPHA_ITER))]
    fn alpha(&self, m: Point4, iters: u32) -> PyResult<(f64, f64)> {
        let v = alpha_field(&self.f, m, iters).map_err(err)?;
        Ok((v[0], v[1]))
    }

    /// Estimated center Oseledets directions (e_plus, e_minus).
    #[pyo3(signature = (m, n_back=32, n_fwd=32))]
    fn oseledets(
        &self,
        m: Point4,
        n_back: u32,
        n_fwd: u32,
    ) -> PyResult<((f64, f64), (f64, f64))> {
        let fr = oseledets_directions(&self.f, m, n_back, n_fwd).map_err(err)?;
        Ok((
            (fr.e_plus[0], fr.e_plus[1]),
            (fr.e_minus[0], fr.e_minus[1]),
        ))
    }

    /// Contraction-set proxy flags at m.
    #[pyo3(signature = (m, delta=DEFAULT_DELTA, horizon=DEFAULT_PROXY_HORIZON))]
    fn z_membership<'py>(
        &self,
        py: Python<'py>,
        m: Point4,
        delta: f64,
        horizon: u32,
    ) -> PyResult<Bound<'py, PyDict>> {
        let proxy = SetProxyConfig::new(self.f.n(), delta, horizon).map_err(err)?;
        let flags = z_membership(&self.f, m, &proxy).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("z_minus", flags.z_minus)?;
        d.set_item("z_plus", flags.z_plus)?;
        d.set_item("z", flags.z)?;
        d.set_item("first_failure_n", flags.first_failure_n)?;
        Ok(d)
    }

    /// Time average of an observable like "cos(x)" over T steps.
    #[pyo3(signature = (m, observable, t, direction="forward"))]
    fn birkhoff(&self, m: Point4, observable: &str, t: u64, direction: &str) -> PyResult<f64> {
        let obs = Observable::parse(observable).map_err(err)?;
        let dir = match direction {
            "forward" => Direction::Forward,
            "backward" => Direction::Backward,
            other => {
                return Err(PyValueError::new_err(format!(
                    "direction must be forward or backward, got `{other}`"
                )))
            }
        };
        birkhoff(&System::Skew(self.f.clone()), m, &obs, t, dir).map_err(err)
    }

    /// Forward/backward agreement across seeds; the cluster summary.
    fn hopf<'py>(
        &self,
        py: Python<'py>,
        seeds: Vec<Point4>,
        observable: &str,
        t: u64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let obs = Observable::parse(observable).map_err(err)?;
        let rep = hopf_agreement(&System::Skew(self.f.clone()), &seeds, &obs, t).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("observable", rep.observable)?;
        d.set_item("cluster_count", rep.cluster_count)?;
        d.set_item("single_cluster", rep.single_cluster)?;
        d.set_item("max_pairwise_gap", rep.max_pairwise_gap)?;
        d.set_item("gap_tolerance", rep.gap_tolerance)?;
        d.set_item("verdict", rep.verdict)?;
        d.set_item(
            "phi_plus",
            rep.seeds.iter().map(|s| s.phi_plus).collect::<Vec<_>>(),
        )?;
        d.set_item(
            "phi_minus",
            rep.seeds.iter().map(|s| s.phi_minus).collect::<Vec<_>>(),
        )?;
        Ok(d)
    }

    /// Cone and transversality batteries; id -> pass fraction plus the
    /// gated verdict.
    #[pyo3(signature = (samples, rng_seed=0, delta=DEFAULT_DELTA, delta_tilde=DEFAULT_DELTA_TILDE))]
    fn cone_check<'py>(
        &self,
        py: Python<'py>,
        samples: u64,
        rng_seed: u64,
        delta: f64,
        delta_tilde: f64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let scales = Scales::derive(self.f.n(), delta, delta_tilde).map_err(err)?;
        let rep = skewtorus::cones::verify_cone_lemmas(&self.f, &scales, samples, rng_seed)
            .map_err(err)?;
        let d = PyDict::new(py);
        for c in &rep.checks {
            d.set_item(&c.id, (c.pass_fraction, c.gated))?;
        }
        d.set_item("all_gated_pass", rep.all_gated_pass())?;
        Ok(d)
    }
}

/// Pliss times of a real sequence under explicit slopes.
#[pyfunction]
#[pyo3(name = "pliss_times")]
fn pliss_times_py(seq: Vec<f64>, eps: f64, alpha1: f64, alpha2: f64) -> PyResult<Vec<usize>> {
    let params = PlissParams::new(eps, alpha1, alpha2).map_err(err)?;
    let horizon = seq.len();
    Ok(pliss_times(&seq, &params, horizon).map_err(err)?.times)
}

/// The derived scale pack as a dict.
#[pyfunction]
#[pyo3(name = "scales", signature = (n, delta=DEFAULT_DELTA, delta_tilde=DEFAULT_DELTA_TILDE))]
fn scales_py(py: Python<'_>, n: u32, delta: f64, delta_tilde: f64) -> PyResult<Bound<'_, PyDict>> {
    let s = Scales::derive(n, delta, delta_tilde).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("n", s.n)?;
    d.set_item("delta", s.delta)?;
    d.set_item("delta_tilde", s.delta_tilde)?;
    d.set_item("theta1", s.theta1)?;
    d.set_item("theta2", s.theta2)?;
    d.set_item("theta3", s.theta3)?;
    d.set_item("t_window", s.t_window)?;
    d.set_item("r0", s.r0)?;
    d.set_item("eta", s.eta)?;
    d.set_item("k_ratio", s.k_ratio)?;
    d.set_item("eps1", s.eps1)?;
    d.set_item("eps2", s.eps2)?;
    d.set_item("eps3", s.eps3)?;
    d.set_item("beta", s.beta)?;
    Ok(d)
}

/// Validates a TOML run configuration; returns the canonical form.
#[pyfunction]
fn check_config(text: &str) -> PyResult<String> {
    let cfg = RunConfig::from_toml_str(text).map_err(err)?;
    cfg.to_toml_string().map_err(err)
}

#[pymodule]
fn skewtorus_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Map>()?;
    m.add_function(wrap_pyfunction!(pliss_times_py, m)?)?;
    m.add_function(wrap_pyfunction!(scales_py, m)?)?;
    m.add_function(wrap_pyfunction!(check_config, m)?)?;
    Ok(())
}
