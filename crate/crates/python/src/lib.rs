//! Python module `lpr`: the decomposition solver, the unrolled network, the
//! weight file and the synthetic generator, on NumPy `float64` arrays.

use lpr_core::admm::{self, AdmmConfig};
use lpr_core::imgcore::{self, Image, Mask};
use lpr_core::lprnet::{self, NetConfig, NetWeights, ParamSet};
use lpr_core::operators::PatchConfig;
use lpr_core::synthgen::{self, GenParams, MaskKind};
use numpy::ndarray::Array2;
use numpy::{AllowTypeChange, IntoPyArray, PyArray2, PyArrayLike2};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyOSError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(
    lpr,
    LprError,
    PyException,
    "Raised for invalid inputs and failed solves."
);

type Array<'py> = PyArrayLike2<'py, f64, AllowTypeChange>;
type Pair<'py> = (Bound<'py, PyArray2<f64>>, Bound<'py, PyArray2<f64>>);

fn to_py(e: lpr_core::Error) -> PyErr {
    match e {
        lpr_core::Error::Io(io) => PyOSError::new_err(io.to_string()),
        other => LprError::new_err(other.to_string()),
    }
}

fn image(a: &Array<'_>) -> PyResult<Image> {
    let view = a.as_array();
    let (h, w) = view.dim();
    Image::from_vec(h, w, view.iter().copied().collect()).map_err(to_py)
}

fn mask_or_ones(mask: Option<&Array<'_>>, f: &Image) -> PyResult<Mask> {
    match mask {
        Some(m) => Mask::from_image(&image(m)?).map_err(to_py),
        None => Ok(Mask::ones(f.height(), f.width())),
    }
}

fn array<'py>(py: Python<'py>, img: Image) -> Bound<'py, PyArray2<f64>> {
    let (h, w) = img.dims();
    Array2::from_shape_vec((h, w), img.into_vec())
        .expect("image buffer matches its dimensions")
        .into_pyarray(py)
}

/// Decompose `f` into structure `u` and texture `v` with the classical solver.
///
/// `mask` marks observed pixels with 1 and missing ones with 0; omitted means
/// fully observed. Returns `(u, v)`.
#[pyfunction]
#[pyo3(signature = (
    f, mask=None, *, mu=0.05, a=0.0, rho_t=1.0, rho_s=1.0, tau=0.1,
    iters=100, pgd=20, patch=4, overlap=2, tol=0.0
))]
#[allow(clippy::too_many_arguments)]
fn solve<'py>(
    py: Python<'py>,
    f: Array<'py>,
    mask: Option<Array<'py>>,
    mu: f64,
    a: f64,
    rho_t: f64,
    rho_s: f64,
    tau: f64,
    iters: usize,
    pgd: usize,
    patch: usize,
    overlap: usize,
    tol: f64,
) -> PyResult<Pair<'py>> {
    let f = image(&f)?;
    let mask = mask_or_ones(mask.as_ref(), &f)?;
    let cfg = AdmmConfig {
        mu,
        a,
        rho_t,
        rho_s,
        tau,
        outer_iters: iters,
        pgd_iters: pgd,
        patch: PatchConfig {
            size: patch,
            overlap,
        },
        tol,
    };
    let d = py.detach(|| admm::solve(&f, &mask, &cfg)).map_err(to_py)?;
    Ok((array(py, d.u), array(py, d.v)))
}

/// Network weights. Values are held in double precision and stored as
/// single precision on disk.
#[pyclass(name = "Weights", module = "lpr")]
struct PyWeights {
    inner: NetWeights,
}

#[pymethods]
impl PyWeights {
    /// Untrained weights, equivalent to the classical solver with `mu = 0.05`.
    #[staticmethod]
    #[pyo3(signature = (blocks=10, pgd=20, config_id=4, patch=4, overlap=2))]
    fn initial(
        blocks: usize,
        pgd: usize,
        config_id: u8,
        patch: usize,
        overlap: usize,
    ) -> PyResult<Self> {
        let params = ParamSet::from_id(config_id)
            .ok_or_else(|| LprError::new_err(format!("config_id {config_id} is not 1 to 4")))?;
        let mut config = NetConfig::new(blocks, pgd, params);
        config.patch = PatchConfig {
            size: patch,
            overlap,
        };
        Ok(Self {
            inner: NetWeights::initial(config),
        })
    }

    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        let inner = lprnet::load_weights(path).map_err(to_py)?;
        Ok(Self { inner })
    }

    fn save(&self, path: std::path::PathBuf) -> PyResult<()> {
        lprnet::save_weights(path, &self.inner).map_err(to_py)
    }

    #[getter]
    fn blocks(&self) -> usize {
        self.inner.config.blocks
    }

    #[getter]
    fn pgd_iters(&self) -> usize {
        self.inner.config.pgd_iters
    }

    #[getter]
    fn config_id(&self) -> u8 {
        self.inner.config.params.id()
    }

    #[getter]
    fn tau(&self) -> f64 {
        self.inner.tau
    }

    /// Per-block fixed `mu` values; `None` for blocks that predict it.
    #[getter]
    fn mu(&self) -> Vec<Option<f64>> {
        self.inner
            .blocks
            .iter()
            .map(|b| match b.mu {
                lprnet::MuSource::Fixed(m) => Some(m),
                lprnet::MuSource::Cnn(_) => None,
            })
            .collect()
    }

    /// `(name, shape)` for every tensor in the file layout.
    fn tensor_layout(&self) -> Vec<(String, Vec<usize>)> {
        lprnet::tensor_layout(&self.inner.config)
    }

    /// Run the unrolled network. Returns `(u, v)`.
    #[pyo3(signature = (f, mask=None))]
    fn forward<'py>(
        &self,
        py: Python<'py>,
        f: Array<'py>,
        mask: Option<Array<'py>>,
    ) -> PyResult<Pair<'py>> {
        let f = image(&f)?;
        let mask = mask_or_ones(mask.as_ref(), &f)?;
        let out = py
            .detach(|| lprnet::forward(&f, &mask, &self.inner))
            .map_err(to_py)?;
        Ok((array(py, out.u), array(py, out.v)))
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!(
            "Weights(blocks={}, pgd_iters={}, config_id={})",
            self.blocks(),
            self.pgd_iters(),
            self.config_id()
        )
    }
}

#[pyfunction]
#[pyo3(signature = (a, b, peak=imgcore::DEFAULT_PEAK))]
fn psnr(a: Array<'_>, b: Array<'_>, peak: f64) -> PyResult<f64> {
    imgcore::psnr(&image(&a)?, &image(&b)?, peak).map_err(to_py)
}

/// Nonconvexity `a` of the penalty for a learned `b >= 1`.
#[pyfunction]
fn a_from_b(rho_t: f64, mu: f64, b: f64) -> PyResult<f64> {
    lprnet::a_from_b(rho_t, mu, b).map_err(to_py)
}

/// Largest `|f - (u + v)|` over observed pixels.
#[pyfunction]
#[pyo3(signature = (u, v, f, mask=None))]
fn constraint_residual(
    u: Array<'_>,
    v: Array<'_>,
    f: Array<'_>,
    mask: Option<Array<'_>>,
) -> PyResult<f64> {
    let f = image(&f)?;
    let (u, v) = (image(&u)?, image(&v)?);
    u.ensure_same_dims(&f).map_err(to_py)?;
    v.ensure_same_dims(&f).map_err(to_py)?;
    let mask = mask_or_ones(mask.as_ref(), &f)?;
    Ok(admm::constraint_residual(&u, &v, &f, &mask))
}

/// One synthetic sample as a dict with keys `f`, `u_gt`, `v_gt`, `mask`.
#[pyfunction]
#[pyo3(signature = (
    seed, *, height=64, width=64, n_shapes=3, n_freqs=2, amplitude=0.15,
    freq_min=4.0, freq_max=16.0, mask_ratio=None
))]
#[allow(clippy::too_many_arguments)]
fn gen_sample<'py>(
    py: Python<'py>,
    seed: u64,
    height: usize,
    width: usize,
    n_shapes: usize,
    n_freqs: usize,
    amplitude: f64,
    freq_min: f64,
    freq_max: f64,
    mask_ratio: Option<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let params = GenParams {
        height,
        width,
        n_shapes,
        n_freqs,
        texture_amplitude: amplitude,
        freq_range: [freq_min, freq_max],
        mask_kind: mask_ratio.map_or(MaskKind::None, MaskKind::RandomPixels),
    };
    let s = synthgen::gen_sample(seed, &params).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("f", array(py, s.f))?;
    out.set_item("u_gt", array(py, s.u_gt))?;
    out.set_item("v_gt", array(py, s.v_gt))?;
    out.set_item("mask", array(py, s.mask.to_image()))?;
    Ok(out)
}

#[pymodule]
fn lpr(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("LprError", m.py().get_type::<LprError>())?;
    m.add_class::<PyWeights>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(a_from_b, m)?)?;
    m.add_function(wrap_pyfunction!(constraint_residual, m)?)?;
    m.add_function(wrap_pyfunction!(gen_sample, m)?)?;
    Ok(())
}
