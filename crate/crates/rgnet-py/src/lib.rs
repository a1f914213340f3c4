//! Python bindings: interval arithmetic, Hungarian matching, synthetic data
//! generation, and the train/evaluate/predict pipeline, all driven through
//! the same file formats as the CLI.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use pyo3::IntoPyObjectExt;

use rgnet::data::{Dataset, SyntheticConfig};
use rgnet::error::RgError;
use rgnet::losses::hungarian_match;
use rgnet::temporal::TimeInterval;
use rgnet::trainer::{Checkpoint, TrainConfig};

fn to_py_err(e: RgError) -> PyErr {
    match e {
        RgError::Config(_)
        | RgError::InvalidInterval(_)
        | RgError::DegenerateAnnotation(_)
        | RgError::EmptyInput(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn interval(start: f64, end: f64) -> PyResult<TimeInterval> {
    TimeInterval::new(start, end).map_err(to_py_err)
}

/// Intersection over union of `[a_start, a_end]` and `[b_start, b_end]`.
#[pyfunction]
fn interval_iou(a_start: f64, a_end: f64, b_start: f64, b_end: f64) -> PyResult<f64> {
    Ok(rgnet::temporal::interval_iou(
        &interval(a_start, a_end)?,
        &interval(b_start, b_end)?,
    ))
}

/// 1-D generalized IoU in `[-1, 1]`.
#[pyfunction]
fn interval_giou(a_start: f64, a_end: f64, b_start: f64, b_end: f64) -> PyResult<f64> {
    Ok(rgnet::temporal::interval_giou(
        &interval(a_start, a_end)?,
        &interval(b_start, b_end)?,
    ))
}

/// Fraction of the moment covered by the window.
#[pyfunction]
fn coverage_fraction(
    moment_start: f64,
    moment_end: f64,
    window_start: f64,
    window_end: f64,
) -> PyResult<f64> {
    rgnet::temporal::coverage_fraction(
        &interval(moment_start, moment_end)?,
        &interval(window_start, window_end)?,
    )
    .map_err(to_py_err)
}

/// Exact minimum-cost assignment. Returns `(pairs, unmatched_predictions)`
/// where `pairs` are `(prediction, target)` tuples.
#[pyfunction]
fn hungarian(cost: Vec<Vec<f64>>) -> PyResult<(Vec<(usize, usize)>, Vec<usize>)> {
    let rows = cost.len();
    let cols = cost.first().map(|r| r.len()).unwrap_or(0);
    if cost.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("ragged cost matrix"));
    }
    let mut arr = ndarray_from(rows, cols, &cost);
    if rows == 0 || cols == 0 {
        arr = rgnet::autodiff::Arr::zeros((rows, cols));
    }
    let a = hungarian_match(&arr).map_err(to_py_err)?;
    Ok((a.pairs, a.unmatched))
}

fn ndarray_from(rows: usize, cols: usize, data: &[Vec<f64>]) -> rgnet::autodiff::Arr {
    rgnet::autodiff::Arr::from_shape_fn((rows, cols), |(r, c)| data[r][c])
}

fn overlay<T: serde::Serialize + serde::de::DeserializeOwned>(
    base: &T,
    overrides: Option<&Bound<'_, PyDict>>,
) -> PyResult<T> {
    let mut value = serde_json::to_value(base).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    if let Some(dict) = overrides {
        let map = value
            .as_object_mut()
            .ok_or_else(|| PyRuntimeError::new_err("config is not an object"))?;
        for (k, v) in dict.iter() {
            let key: String = k.extract()?;
            if !map.contains_key(&key) {
                return Err(PyValueError::new_err(format!("unknown config key `{key}`")));
            }
            map.insert(key, py_to_json(&v)?);
        }
    }
    serde_json::from_value(value).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn py_to_json(v: &Bound<'_, PyAny>) -> PyResult<serde_json::Value> {
    if let Ok(b) = v.extract::<bool>() {
        return Ok(serde_json::Value::Bool(b));
    }
    if let Ok(i) = v.extract::<i64>() {
        return Ok(serde_json::Value::Number(i.into()));
    }
    if let Ok(f) = v.extract::<f64>() {
        return Ok(serde_json::json!(f));
    }
    if let Ok(s) = v.extract::<String>() {
        return Ok(serde_json::Value::String(s));
    }
    if let Ok(list) = v.cast::<PyList>() {
        let mut out = Vec::new();
        for item in list.iter() {
            out.push(py_to_json(&item)?);
        }
        return Ok(serde_json::Value::Array(out));
    }
    Err(PyValueError::new_err(format!(
        "unsupported config value type: {}",
        v.get_type().name()?
    )))
}

fn json_to_py(py: Python<'_>, v: &serde_json::Value) -> PyResult<Py<PyAny>> {
    Ok(match v {
        serde_json::Value::Null => py.None(),
        serde_json::Value::Bool(b) => b.into_py_any(py)?,
        serde_json::Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.into_py_any(py)?
            } else {
                n.as_f64().unwrap_or(f64::NAN).into_py_any(py)?
            }
        }
        serde_json::Value::String(s) => s.into_py_any(py)?,
        serde_json::Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.into_py_any(py)?
        }
        serde_json::Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, val) in map {
                dict.set_item(k, json_to_py(py, val)?)?;
            }
            dict.into_py_any(py)?
        }
    })
}

/// Generate a synthetic dataset under `out_dir`; returns the manifest path.
#[pyfunction]
#[pyo3(signature = (out_dir, overrides=None))]
fn generate_synthetic(out_dir: PathBuf, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<String> {
    let cfg: SyntheticConfig = overlay(&SyntheticConfig::default(), overrides)?;
    let (videos, queries, annotations) =
        rgnet::data::generate_synthetic_dataset(&cfg).map_err(to_py_err)?;
    std::fs::create_dir_all(out_dir.join("features"))
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let mut records = Vec::new();
    for video in &videos {
        let rel = format!("features/{}.rgft", video.video_id);
        rgnet::data::write_feature_file(video, &out_dir.join(&rel)).map_err(to_py_err)?;
        records.push(rgnet::data::ManifestRecord::Video {
            video_id: video.video_id.clone(),
            feature_path: rel,
            fps: video.fps,
            duration_s: video.duration_s(),
        });
    }
    for query in &queries {
        records.push(rgnet::data::ManifestRecord::QueryInline {
            query_id: query.query_id.clone(),
            tokens: query.tokens.rows().into_iter().map(|r| r.to_vec()).collect(),
        });
    }
    for ann in &annotations {
        let iv = ann.moment.interval();
        records.push(rgnet::data::ManifestRecord::Annotation {
            query_id: ann.query_id.clone(),
            video_id: ann.video_id.clone(),
            start_s: iv.start_s,
            end_s: iv.end_s,
        });
    }
    let manifest = out_dir.join("manifest.jsonl");
    rgnet::data::save_manifest(&records, &manifest).map_err(to_py_err)?;
    Ok(manifest.display().to_string())
}

/// Train on a manifest; writes `checkpoint.rgck` and `train_log.jsonl` under
/// `out_dir` and returns a summary dict.
#[pyfunction]
#[pyo3(signature = (manifest, out_dir, overrides=None))]
fn train(
    py: Python<'_>,
    manifest: PathBuf,
    out_dir: PathBuf,
    overrides: Option<&Bound<'_, PyDict>>,
) -> PyResult<Py<PyAny>> {
    let cfg: TrainConfig = overlay(&TrainConfig::default(), overrides)?;
    let dataset = Dataset::load(&manifest).map_err(to_py_err)?;
    let (ckpt, logs) = rgnet::trainer::train(&cfg, &dataset).map_err(to_py_err)?;
    std::fs::create_dir_all(&out_dir).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let ckpt_path = out_dir.join("checkpoint.rgck");
    ckpt.save(&ckpt_path).map_err(to_py_err)?;
    std::fs::write(
        out_dir.join("train_log.jsonl"),
        rgnet::trainer::logs_to_jsonl(&logs),
    )
    .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;

    let summary = PyDict::new(py);
    summary.set_item("steps", ckpt.step)?;
    summary.set_item("epochs", ckpt.epoch)?;
    summary.set_item("checkpoint", ckpt_path.display().to_string())?;
    summary.set_item(
        "final_loss",
        logs.last().map(|l| l.loss_total).unwrap_or(f64::NAN),
    )?;
    summary.into_py_any(py)
}

/// Evaluate a checkpoint against a manifest; returns the metrics report as a
/// dict with `grounding`, `retrieval`, and `oracle_grounding` sections.
#[pyfunction]
fn evaluate(py: Python<'_>, checkpoint: PathBuf, manifest: PathBuf) -> PyResult<Py<PyAny>> {
    let ckpt = Checkpoint::load(&checkpoint).map_err(to_py_err)?;
    let dataset = Dataset::load(&manifest).map_err(to_py_err)?;
    let report = rgnet::trainer::evaluate(&ckpt, &dataset).map_err(to_py_err)?;
    let value = serde_json::to_value(&report).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    json_to_py(py, &value)
}

/// Ranked moment predictions for every annotated query.
#[pyfunction]
fn predict(py: Python<'_>, checkpoint: PathBuf, manifest: PathBuf) -> PyResult<Py<PyAny>> {
    let ckpt = Checkpoint::load(&checkpoint).map_err(to_py_err)?;
    let dataset = Dataset::load(&manifest).map_err(to_py_err)?;
    let records = rgnet::trainer::predict(&ckpt, &dataset).map_err(to_py_err)?;
    let value =
        serde_json::to_value(&records).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    json_to_py(py, &value)
}

/// Sliding-window start frames for a video of `num_frames` at window length
/// `l_c_frames` (stride is half the window).
#[pyfunction]
fn window_starts(num_frames: usize, l_c_frames: usize) -> PyResult<Vec<usize>> {
    let video = rgnet::data::FrameFeatureSequence {
        video_id: "probe".into(),
        fps: 1.0,
        features: rgnet::autodiff::Arr::zeros((num_frames, 1)),
    };
    let proposals = rgnet::data::slice_proposals(&video, l_c_frames).map_err(to_py_err)?;
    Ok(proposals.into_iter().map(|p| p.start_frame).collect())
}

fn module_dir() -> &'static str {
    // Handy for the smoke test's diagnostics.
    env!("CARGO_MANIFEST_DIR")
}

#[pymodule]
fn rgnet_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("__source_dir__", module_dir())?;
    m.add_function(wrap_pyfunction!(interval_iou, m)?)?;
    m.add_function(wrap_pyfunction!(interval_giou, m)?)?;
    m.add_function(wrap_pyfunction!(coverage_fraction, m)?)?;
    m.add_function(wrap_pyfunction!(hungarian, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(predict, m)?)?;
    m.add_function(wrap_pyfunction!(window_starts, m)?)?;
    Ok(())
}
