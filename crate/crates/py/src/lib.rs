//! Python bindings for `nuclei-core`.
//!
//! Inputs are borrowed NumPy arrays and must be C-contiguous; nothing is
//! copied to fix up a strided view. Outputs are fresh arrays. Errors map to
//! one exception type per kind:
//!
//! | core error kind        | Python exception                        |
//! |------------------------|-----------------------------------------|
//! | validation             | `ValidationError` (a `ValueError`)      |
//! | file I/O or format     | `NucleiIOError` (an `OSError`)          |
//! | non-contiguous input   | `NotContiguousError` (a `ValidationError`) |
//! | wrong dtype or rank    | `TypeError`                             |

use numpy::ndarray::Array2;
use numpy::{
    IntoPyArray, PyArray2, PyReadonlyArray1, PyReadonlyArray2, PyReadonlyArray3, PyUntypedArrayMethods,
};
use pyo3::create_exception;
use pyo3::exceptions::{PyOSError, PyTypeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyAny;

use nuclei_core::cost::{self, ClassCounts, ClassProbs, CostMatrix, CostRule};
use nuclei_core::hover::{compute_hover_maps, compute_np_target, HoverMaps};
use nuclei_core::instance::{canonicalize, ClassMap, InstanceMap};
use nuclei_core::metrics::{self, LabelledImage};
use nuclei_core::postprocess::{self as pp, NcProbabilities, PostprocessParams, ProbabilityMaps};
use nuclei_core::ErrorKind;

/// Interface version; bumped whenever a signature or numeric contract changes.
pub const ABI_VERSION: &str = "nuclei-py/1";

/// Inputs with this many elements or more are rejected.
pub const MAX_ELEMENTS: usize = 1 << 31;

create_exception!(nuclei_py, ValidationError, PyValueError);
create_exception!(nuclei_py, NotContiguousError, ValidationError);
create_exception!(nuclei_py, NucleiIOError, PyOSError);

fn to_py(e: nuclei_core::Error) -> PyErr {
    match e.kind() {
        ErrorKind::Validation => ValidationError::new_err(e.to_string()),
        ErrorKind::Io => NucleiIOError::new_err(e.to_string()),
    }
}

fn c_slice<'a, T: numpy::Element, D: numpy::ndarray::Dimension>(
    a: &'a numpy::PyReadonlyArray<'_, T, D>,
    name: &str,
) -> PyResult<&'a [T]> {
    if !a.is_c_contiguous() {
        return Err(NotContiguousError::new_err(format!(
            "{name} must be C-contiguous; pass numpy.ascontiguousarray({name})"
        )));
    }
    let data = a.as_slice().map_err(|e| NotContiguousError::new_err(format!("{name}: {e}")))?;
    if data.len() >= MAX_ELEMENTS {
        return Err(ValidationError::new_err(format!(
            "{name} has {} elements, limit is {MAX_ELEMENTS}",
            data.len()
        )));
    }
    Ok(data)
}

fn shape2<T: numpy::Element>(a: &PyReadonlyArray2<'_, T>) -> (usize, usize) {
    let s = a.shape();
    (s[0], s[1])
}

/// Label image from a 2-D uint16, int32 or uint32 array.
fn instance_map(obj: &Bound<'_, PyAny>, name: &str) -> PyResult<InstanceMap> {
    if let Ok(a) = obj.extract::<PyReadonlyArray2<'_, u16>>() {
        let (h, w) = shape2(&a);
        let labels = c_slice(&a, name)?.iter().map(|&x| u32::from(x)).collect();
        return InstanceMap::new(h, w, labels).map_err(to_py);
    }
    if let Ok(a) = obj.extract::<PyReadonlyArray2<'_, u32>>() {
        let (h, w) = shape2(&a);
        return InstanceMap::new(h, w, c_slice(&a, name)?.to_vec()).map_err(to_py);
    }
    if let Ok(a) = obj.extract::<PyReadonlyArray2<'_, i32>>() {
        let (h, w) = shape2(&a);
        let data = c_slice(&a, name)?;
        if let Some(pos) = data.iter().position(|&x| x < 0) {
            return Err(ValidationError::new_err(format!(
                "{name} has negative label {} at ({}, {})",
                data[pos],
                pos / w.max(1),
                pos % w.max(1)
            )));
        }
        let labels = data.iter().map(|&x| x as u32).collect();
        return InstanceMap::new(h, w, labels).map_err(to_py);
    }
    Err(PyTypeError::new_err(format!(
        "{name} must be a 2-D uint16, int32 or uint32 array"
    )))
}

fn class_map(a: PyReadonlyArray2<'_, u8>, name: &str) -> PyResult<ClassMap> {
    let (h, w) = shape2(&a);
    ClassMap::new(h, w, c_slice(&a, name)?.to_vec()).map_err(to_py)
}

fn grid<'py, T: numpy::Element>(py: Python<'py>, h: usize, w: usize, data: Vec<T>) -> Bound<'py, PyArray2<T>> {
    Array2::from_shape_vec((h, w), data)
        .expect("length matches shape")
        .into_pyarray(py)
}

/// Version string of the binding interface.
#[pyfunction]
fn abi_version() -> &'static str {
    ABI_VERSION
}

/// NP target and HoVer maps of a ground-truth label image.
///
/// Returns `(np, h, v)` as uint8, float32, float32 arrays. The labels are
/// canonicalized first, as the `targets` command does.
#[pyfunction]
fn targets<'py>(
    py: Python<'py>,
    gt_map: &Bound<'py, PyAny>,
) -> PyResult<(Bound<'py, PyArray2<u8>>, Bound<'py, PyArray2<f32>>, Bound<'py, PyArray2<f32>>)> {
    let map = instance_map(gt_map, "gt_map")?;
    let (h, w) = map.shape();
    let (np, hv) = py.detach(move || {
        let map = canonicalize(&map);
        (compute_np_target(&map), compute_hover_maps(&map))
    });
    Ok((
        grid(py, h, w, np.as_slice().to_vec()),
        grid(py, h, w, hv.h().to_vec()),
        grid(py, h, w, hv.v().to_vec()),
    ))
}

/// Instances and classes from network outputs.
///
/// `np_prob`, `h`, `v` are H×W float32; `nc_prob` is H×W×C float32 with
/// channel 0 the background. Returns `(instances uint32, classes uint8)`.
#[pyfunction]
#[pyo3(signature = (np_prob, h, v, nc_prob, np_threshold=0.5, marker_threshold=0.4, min_area=10))]
#[allow(clippy::too_many_arguments)]
fn postprocess<'py>(
    py: Python<'py>,
    np_prob: PyReadonlyArray2<'py, f32>,
    h: PyReadonlyArray2<'py, f32>,
    v: PyReadonlyArray2<'py, f32>,
    nc_prob: PyReadonlyArray3<'py, f32>,
    np_threshold: f32,
    marker_threshold: f32,
    min_area: usize,
) -> PyResult<(Bound<'py, PyArray2<u32>>, Bound<'py, PyArray2<u8>>)> {
    let (height, width) = shape2(&np_prob);
    let channels = nc_prob.shape()[2];
    let hover = HoverMaps::new(height, width, c_slice(&h, "h")?.to_vec(), c_slice(&v, "v")?.to_vec()).map_err(to_py)?;
    let (nh, nw) = (nc_prob.shape()[0], nc_prob.shape()[1]);
    if (nh, nw) != (height, width) {
        return Err(to_py(nuclei_core::Error::ShapeMismatch {
            expected: (height, width),
            actual: (nh, nw),
        }));
    }
    let nc = NcProbabilities::new(height, width, channels, c_slice(&nc_prob, "nc_prob")?.to_vec()).map_err(to_py)?;
    let maps = ProbabilityMaps::new(c_slice(&np_prob, "np_prob")?.to_vec(), hover, nc).map_err(to_py)?;
    let params = PostprocessParams {
        np_threshold,
        marker_threshold,
        min_instance_area: min_area,
    };
    let (inst, cls) = py.detach(move || pp::postprocess(&maps, &params)).map_err(to_py)?;
    Ok((
        grid(py, height, width, inst.into_vec()),
        grid(py, height, width, cls.into_vec()),
    ))
}

/// Cost matrix from per-class counts; `rule` is "max-ratio" or "uniform".
#[pyfunction]
#[pyo3(signature = (counts, rule="max-ratio"))]
fn cost_matrix<'py>(py: Python<'py>, counts: Vec<u64>, rule: &str) -> PyResult<Bound<'py, PyArray2<f64>>> {
    let rule: CostRule = rule.parse().map_err(to_py)?;
    let n = counts.len();
    let m = CostMatrix::from_counts(&ClassCounts::new(counts).map_err(to_py)?, rule).map_err(to_py)?;
    Ok(grid(py, n, n, m.as_slice().to_vec()))
}

fn matrix_from(m: &PyReadonlyArray2<'_, f64>) -> PyResult<CostMatrix> {
    let (r, c) = shape2(m);
    if r != c {
        return Err(ValidationError::new_err(format!("matrix must be square, got {r}x{c}")));
    }
    CostMatrix::new(r, c_slice(m, "matrix")?.to_vec()).map_err(to_py)
}

/// Expected-cost loss and its gradient.
///
/// `probs` is P×N float64, `truth` P int64 class ids, `matrix` N×N float64
/// with `matrix[j, k]` the cost of predicting `j` when the truth is `k`.
#[pyfunction]
fn loss<'py>(
    py: Python<'py>,
    probs: PyReadonlyArray2<'py, f64>,
    truth: PyReadonlyArray1<'py, i64>,
    matrix: PyReadonlyArray2<'py, f64>,
) -> PyResult<(f64, Bound<'py, PyArray2<f64>>)> {
    let (p, n) = shape2(&probs);
    let m = matrix_from(&matrix)?;
    let labels = c_slice(&truth, "truth")?
        .iter()
        .map(|&t| {
            usize::try_from(t).map_err(|_| ValidationError::new_err(format!("negative class id {t}")))
        })
        .collect::<PyResult<Vec<usize>>>()?;
    let probs = ClassProbs::new(n, c_slice(&probs, "probs")?.to_vec()).map_err(to_py)?;
    let (value, grad) = py
        .detach(move || -> nuclei_core::Result<(f64, Vec<f64>)> {
            Ok((
                cost::cost_sensitive_loss(&probs, &labels, &m)?,
                cost::loss_gradient(&probs, &labels, &m)?,
            ))
        })
        .map_err(to_py)?;
    Ok((value, grid(py, p, n, grad)))
}

/// `(dq, sq, pq)` of one prediction against one ground truth.
#[pyfunction]
fn panoptic_quality(pred: &Bound<'_, PyAny>, gt: &Bound<'_, PyAny>) -> PyResult<(f64, f64, f64)> {
    let pred = instance_map(pred, "pred")?;
    let gt = instance_map(gt, "gt")?;
    let s = metrics::pq(&metrics::match_instances(&pred, &gt).map_err(to_py)?);
    Ok((s.dq, s.sq, s.pq))
}

type ImagePair<'py> = (
    Bound<'py, PyAny>,
    PyReadonlyArray2<'py, u8>,
    Bound<'py, PyAny>,
    PyReadonlyArray2<'py, u8>,
);

/// Dataset report (mPQ+, per-class PQ, r²) as a dict.
///
/// `pairs` holds `(pred_instances, pred_classes, gt_instances, gt_classes)`
/// tuples. The dict has the same keys as the CLI's JSON report.
#[pyfunction]
fn evaluate<'py>(py: Python<'py>, pairs: Vec<ImagePair<'py>>) -> PyResult<Bound<'py, PyAny>> {
    let mut data = Vec::with_capacity(pairs.len());
    for (pi, pc, gi, gc) in pairs {
        let pred = LabelledImage::new(instance_map(&pi, "pred_instances")?, class_map(pc, "pred_classes")?).map_err(to_py)?;
        let gt = LabelledImage::new(instance_map(&gi, "gt_instances")?, class_map(gc, "gt_classes")?).map_err(to_py)?;
        data.push((pred, gt));
    }
    let report = py.detach(move || metrics::evaluate(&data)).map_err(to_py)?;
    let text = serde_json::to_string(&report).expect("report serializes");
    py.import("json")?.call_method1("loads", (text,))
}

#[pymodule]
fn nuclei_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("ABI_VERSION", ABI_VERSION)?;
    m.add("ValidationError", py.get_type::<ValidationError>())?;
    m.add("NotContiguousError", py.get_type::<NotContiguousError>())?;
    m.add("NucleiIOError", py.get_type::<NucleiIOError>())?;
    m.add_function(wrap_pyfunction!(abi_version, m)?)?;
    m.add_function(wrap_pyfunction!(targets, m)?)?;
    m.add_function(wrap_pyfunction!(postprocess, m)?)?;
    m.add_function(wrap_pyfunction!(cost_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(loss, m)?)?;
    m.add_function(wrap_pyfunction!(panoptic_quality, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
