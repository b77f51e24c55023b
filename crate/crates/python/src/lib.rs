//! Python bindings: correspondence sets, synthetic scenes, calibration and undistortion.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use sic_core::curve::{undistort_points, RadialCurve};
use sic_core::io::{read_correspondences, save_correspondences};
use sic_core::pipeline::{
    run_full_pipeline, CalibrationResult, DistortionPayload, Mode, ModelFreeConfig, PipelineConfig, ScaleVariant,
};
use sic_core::synth::{add_noise, generate_dense, GridDomain, GroundTruthScene, NoiseSpec, POSE1_DENSE_SPACING_PX};
use sic_core::{estimate_homography, CorrespondenceSet, Error, Point2, SensorSpec};

fn to_py(e: Error) -> PyErr {
    match e.root() {
        Error::Io(_) | Error::Csv(_) | Error::Parse(_) => PyIOError::new_err(e.to_string()),
        Error::InvalidParameter(_) | Error::NonMonotoneCurve { .. } | Error::LengthMismatch { .. } => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn points(v: &[(f64, f64)]) -> Vec<Point2> {
    v.iter().map(|&(x, y)| Point2::new(x, y)).collect()
}

fn tuples(v: &[Point2]) -> Vec<(f64, f64)> {
    v.iter().map(|p| (p.x, p.y)).collect()
}

/// Target points (mm) paired with detected image points (px).
#[pyclass(name = "CorrespondenceSet", from_py_object)]
#[derive(Clone)]
struct PyCorrespondenceSet {
    inner: CorrespondenceSet,
}

#[pymethods]
impl PyCorrespondenceSet {
    #[new]
    fn new(target: Vec<(f64, f64)>, image: Vec<(f64, f64)>) -> PyResult<Self> {
        Ok(Self {
            inner: CorrespondenceSet::new(points(&target), points(&image)).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: read_correspondences(path.as_ref()).map_err(to_py)?,
        })
    }

    /// Dense noisy pose-#1 scene.
    #[staticmethod]
    #[pyo3(signature = (spacing=POSE1_DENSE_SPACING_PX, sigma=0.0, seed=0))]
    fn pose1(spacing: f64, sigma: f64, seed: u64) -> PyResult<Self> {
        if !(spacing >= 1.0) {
            return Err(PyValueError::new_err("spacing must be >= 1 px"));
        }
        let set = generate_dense(&GroundTruthScene::pose1(), GridDomain::IdealImage { spacing_px: spacing })
            .map_err(to_py)?;
        let noise = NoiseSpec::new(sigma, seed).map_err(to_py)?;
        Ok(Self {
            inner: add_noise(&set, &noise),
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_correspondences(path.as_ref(), &self.inner).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn target(&self) -> Vec<(f64, f64)> {
        tuples(&self.inner.target)
    }

    #[getter]
    fn image(&self) -> Vec<(f64, f64)> {
        tuples(&self.inner.image)
    }

    #[getter]
    fn ideal(&self) -> Option<Vec<(f64, f64)>> {
        self.inner.ideal.as_deref().map(tuples)
    }
}

/// Sampled map from distorted to undistorted radius about a center.
#[pyclass(name = "RadialCurve", from_py_object)]
#[derive(Clone)]
struct PyRadialCurve {
    inner: RadialCurve,
}

#[pymethods]
impl PyRadialCurve {
    #[new]
    fn new(cod: (f64, f64), samples: Vec<(f64, f64)>) -> Self {
        Self {
            inner: RadialCurve::from_samples(Point2::new(cod.0, cod.1), &samples),
        }
    }

    #[getter]
    fn cod(&self) -> (f64, f64) {
        (self.inner.cod.x, self.inner.cod.y)
    }

    #[getter]
    fn samples(&self) -> Vec<(f64, f64)> {
        self.inner.samples.clone()
    }

    fn is_monotone(&self) -> bool {
        self.inner.is_monotone()
    }

    /// Undistorted points and per-point extrapolation flags.
    fn undistort(&self, pts: Vec<(f64, f64)>) -> PyResult<(Vec<(f64, f64)>, Vec<bool>)> {
        let out = undistort_points(&points(&pts), &self.inner).map_err(to_py)?;
        Ok((
            out.iter().map(|u| (u.point.x, u.point.y)).collect(),
            out.iter().map(|u| u.extrapolated).collect(),
        ))
    }
}

/// Result of one calibration stage.
#[pyclass(name = "CalibrationResult", skip_from_py_object)]
struct PyCalibrationResult {
    inner: CalibrationResult,
}

#[pymethods]
impl PyCalibrationResult {
    #[getter]
    fn stage(&self) -> &'static str {
        self.inner.stage.as_str()
    }

    /// `(fx, fy, u0, v0)` in px.
    #[getter]
    fn intrinsics(&self) -> (f64, f64, f64, f64) {
        let a = &self.inner.intrinsics;
        (a.fx, a.fy, a.u0, a.v0)
    }

    /// Rotation vector in radians.
    #[getter]
    fn theta(&self) -> (f64, f64, f64) {
        let t = &self.inner.pose.theta;
        (t.x, t.y, t.z)
    }

    /// Translation in mm.
    #[getter]
    fn t(&self) -> (f64, f64, f64) {
        let t = &self.inner.pose.t;
        (t.x, t.y, t.z)
    }

    /// Polynomial coefficients, when the stage produced them.
    #[getter]
    fn k(&self) -> Option<(f64, f64, f64)> {
        match &self.inner.distortion {
            DistortionPayload::Polynomial(k) => Some((k.k1, k.k2, k.k3)),
            _ => None,
        }
    }

    /// Radial curve, when the stage produced one.
    #[getter]
    fn curve(&self) -> Option<PyRadialCurve> {
        match &self.inner.distortion {
            DistortionPayload::Curve(c) => Some(PyRadialCurve { inner: c.clone() }),
            _ => None,
        }
    }

    #[getter]
    fn rpe(&self) -> (f64, f64) {
        (self.inner.rpe_mean, self.inner.rpe_std)
    }

    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.inner.warnings.clone()
    }

    fn __repr__(&self) -> String {
        let a = &self.inner.intrinsics;
        format!(
            "CalibrationResult(stage={}, fx={:.3}, fy={:.3}, u0={:.3}, v0={:.3}, rpe={:.3e})",
            self.inner.stage, a.fx, a.fy, a.u0, a.v0, self.inner.rpe_mean
        )
    }
}

/// Runs the full pipeline; returns the result of every completed stage.
#[pyfunction]
#[pyo3(signature = (set, sensor=(3264.0, 2448.0), mode="mb", epsilon=None))]
fn calibrate(
    py: Python<'_>,
    set: &PyCorrespondenceSet,
    sensor: (f64, f64),
    mode: &str,
    epsilon: Option<f64>,
) -> PyResult<Vec<PyCalibrationResult>> {
    let mode = Mode::parse(mode).ok_or_else(|| PyValueError::new_err("mode must be 'mb' or 'mf'"))?;
    let sensor = SensorSpec::new(sensor.0, sensor.1).map_err(to_py)?;
    let mut config = PipelineConfig::default();
    if let Some(eps) = epsilon {
        config.model_free = ModelFreeConfig {
            epsilon: eps,
            variant: ScaleVariant::EpsilonConstraint,
            ..ModelFreeConfig::default()
        };
    }
    let inner = &set.inner;
    let run = py
        .detach(|| run_full_pipeline(inner, &sensor, mode, &config))
        .map_err(to_py)?;
    Ok(run
        .stages()
        .into_iter()
        .map(|r| PyCalibrationResult { inner: r.clone() })
        .collect())
}

/// Normalized-DLT homography mapping target points to image points, row-major.
#[pyfunction]
fn homography(target: Vec<(f64, f64)>, image: Vec<(f64, f64)>) -> PyResult<[[f64; 3]; 3]> {
    let h = estimate_homography(&points(&target), &points(&image)).map_err(to_py)?;
    let m = h.matrix();
    Ok([0, 1, 2].map(|r| [0, 1, 2].map(|c| m[(r, c)])))
}

#[pymodule]
fn sic_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCorrespondenceSet>()?;
    m.add_class::<PyRadialCurve>()?;
    m.add_class::<PyCalibrationResult>()?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(homography, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
