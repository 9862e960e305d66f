//! Python bindings. Plain lists and dicts cross the boundary; the heavy
//! lifting stays in the `ensembits` crate.

use ensembits_core as core;
use ensembits_core::corpus::Ensemble;
use ensembits_core::descriptors::DescriptorConfig;
use ensembits_core::geometry::{FrameCoords, Point3};
use ensembits_core::training::{Checkpoint, LogRecord};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: core::Error) -> PyErr {
    match e {
        core::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// A conformational ensemble: P frames of L residues.
#[pyclass(name = "Ensemble", module = "ensembits", frozen)]
struct PyEnsemble {
    inner: Ensemble,
}

#[pymethods]
impl PyEnsemble {
    /// Builds a Cα-only ensemble from `frames[p][r] = (x, y, z)`.
    #[new]
    #[pyo3(signature = (id, frames, group=None, flexibility=None))]
    fn new(
        id: String,
        frames: Vec<Vec<[f64; 3]>>,
        group: Option<String>,
        flexibility: Option<Vec<f64>>,
    ) -> PyResult<Self> {
        let frames = frames
            .into_iter()
            .map(|f| FrameCoords::from_ca(f.into_iter().map(Point3::from).collect()))
            .collect::<core::Result<Vec<_>>>()
            .map_err(err)?;
        let group = group.unwrap_or_else(|| id.clone());
        let mut e = Ensemble::new(id, group, frames).map_err(err)?;
        if let Some(f) = flexibility {
            e = e.with_flexibility(f).map_err(err)?;
        }
        Ok(Self { inner: e })
    }

    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: core::corpus::read_ensemble(path).map_err(err)?,
        })
    }

    /// Parses multi-model PDB text.
    #[staticmethod]
    #[pyo3(signature = (text, id, group=None))]
    fn from_pdb(text: &str, id: &str, group: Option<&str>) -> PyResult<Self> {
        Ok(Self {
            inner: core::corpus::parse_pdb_models(text, id, group.unwrap_or(id)).map_err(err)?,
        })
    }

    fn write(&self, path: &str) -> PyResult<()> {
        core::corpus::write_ensemble(&self.inner, path).map_err(err)
    }

    fn to_pdb(&self) -> String {
        core::corpus::write_pdb_models(&self.inner)
    }

    #[getter]
    fn id(&self) -> String {
        self.inner.id.clone()
    }

    #[getter]
    fn group(&self) -> String {
        self.inner.group.clone()
    }

    #[getter]
    fn frame_count(&self) -> usize {
        self.inner.frame_count()
    }

    #[getter]
    fn residue_count(&self) -> usize {
        self.inner.residue_count()
    }

    #[getter]
    fn flexibility(&self) -> Option<Vec<f64>> {
        self.inner.flexibility().map(<[f64]>::to_vec)
    }

    /// Cα coordinates as `[frame][residue] = (x, y, z)`.
    fn ca_coords(&self) -> Vec<Vec<[f64; 3]>> {
        self.inner
            .ca_traces()
            .into_iter()
            .map(|t| t.into_iter().map(|p| [p.x, p.y, p.z]).collect())
            .collect()
    }

    fn first_frames(&self, n: usize) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.first_frames(n).map_err(err)?,
        })
    }

    fn sub_ensemble(&self, indices: Vec<usize>) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.sub_ensemble(&indices).map_err(err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Ensemble(id={:?}, frames={}, residues={})",
            self.inner.id,
            self.inner.frame_count(),
            self.inner.residue_count()
        )
    }
}

/// Descriptor family, neighbour mode and neighbour count.
#[pyclass(name = "DescriptorConfig", module = "ensembits", frozen)]
struct PyDescriptorConfig {
    inner: DescriptorConfig,
}

#[pymethods]
impl PyDescriptorConfig {
    #[new]
    #[pyo3(signature = (family="relative-frame", mode="dynamical", k=16, psi=true, frames_max=10))]
    fn new(family: &str, mode: &str, k: usize, psi: bool, frames_max: usize) -> PyResult<Self> {
        let family = family.parse().map_err(err)?;
        let mode = mode.parse().map_err(err)?;
        let mut c = match family {
            core::descriptors::Family::ThreeDi => {
                let mut c = DescriptorConfig::three_di(k, mode);
                c.psi_enabled = psi;
                c
            }
            core::descriptors::Family::RelativeFrame => DescriptorConfig::relative_frame(k, mode),
        };
        c.frames_max = frames_max;
        c.validate().map_err(err)?;
        Ok(Self { inner: c })
    }

    /// Descriptor length for ensembles of `frames` frames.
    #[pyo3(signature = (frames=1))]
    fn dim(&self, frames: usize) -> usize {
        core::descriptors::descriptor_dim(&self.inner, frames)
    }

    fn __repr__(&self) -> String {
        format!(
            "DescriptorConfig(family={:?}, mode={:?}, k={})",
            self.inner.family.to_string(),
            self.inner.mode.to_string(),
            self.inner.k
        )
    }
}

/// A trained tokenizer.
#[pyclass(name = "Checkpoint", module = "ensembits", frozen)]
struct PyCheckpoint {
    inner: Checkpoint,
}

#[pymethods]
impl PyCheckpoint {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: core::training::load_checkpoint(path).map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        core::training::save_checkpoint(&self.inner, path).map_err(err)
    }

    /// Per residue, the token tuple `(c1, …, cK)` and the distance of the
    /// latent to its first-level codeword.
    fn tokenize(&self, ensemble: &PyEnsemble) -> PyResult<Vec<(Vec<usize>, f64)>> {
        let recs = core::tokenize::tokenize_ensemble(&self.inner, &ensemble.inner).map_err(err)?;
        Ok(recs
            .into_iter()
            .map(|r| (r.tokens, r.latent_distance))
            .collect())
    }

    /// Continuous per-residue latents, `L × d_z`.
    fn encode(&self, ensemble: &PyEnsemble) -> PyResult<Vec<Vec<f64>>> {
        let z = core::tokenize::encode_ensemble(&self.inner, &ensemble.inner).map_err(err)?;
        Ok((0..z.rows()).map(|r| z.row(r).to_vec()).collect())
    }

    fn codewords(&self, level: usize) -> PyResult<Vec<Vec<f64>>> {
        let cb = self
            .inner
            .codebooks
            .get(level)
            .ok_or_else(|| PyValueError::new_err(format!("no codebook level {level}")))?;
        Ok((0..cb.size()).map(|i| cb.codeword(i).to_vec()).collect())
    }

    #[getter]
    fn codebook_sizes(&self) -> Vec<usize> {
        self.inner.codebooks.iter().map(|c| c.size()).collect()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.meta.seed
    }

    #[getter]
    fn best_epoch(&self) -> usize {
        self.inner.meta.best_epoch
    }

    #[getter]
    fn best_val_loss(&self) -> f64 {
        self.inner.meta.best_val_loss
    }

    #[getter]
    fn utilization(&self) -> Vec<f64> {
        self.inner.meta.utilization.clone()
    }

    #[getter]
    fn perplexity(&self) -> Vec<f64> {
        self.inner.meta.perplexity.clone()
    }
}

#[pyfunction]
#[pyo3(signature = (n, length, frames, seed=0))]
fn synth_corpus(n: usize, length: usize, frames: usize, seed: u64) -> PyResult<Vec<PyEnsemble>> {
    Ok(core::corpus::synth_corpus(n, length, frames, seed)
        .map_err(err)?
        .into_iter()
        .map(|inner| PyEnsemble { inner })
        .collect())
}

/// Descriptors as `[residue][frame][feature]`.
#[pyfunction]
fn compute_descriptors(
    ensemble: &PyEnsemble,
    config: &PyDescriptorConfig,
) -> PyResult<Vec<Vec<Vec<f64>>>> {
    let set =
        core::descriptors::compute_descriptors(&ensemble.inner, &config.inner).map_err(err)?;
    Ok((0..set.residue_count())
        .map(|r| {
            (0..set.frame_count())
                .map(|p| set.get(r, p).to_vec())
                .collect()
        })
        .collect())
}

#[pyfunction]
fn compute_rmsf(ensemble: &PyEnsemble) -> PyResult<Vec<f64>> {
    core::analysis::compute_rmsf(&ensemble.inner).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (ensemble, k, seed_frame=0))]
fn fps_select(ensemble: &PyEnsemble, k: usize, seed_frame: usize) -> PyResult<Vec<usize>> {
    core::corpus::fps_select(&ensemble.inner, k, seed_frame).map_err(err)
}

/// Minimum-cost assignment of the rows of `cost` to distinct columns.
#[pyfunction]
fn hungarian(cost: Vec<Vec<f64>>) -> PyResult<(Vec<usize>, f64)> {
    let n = cost.len();
    let m = cost.first().map_or(0, Vec::len);
    if cost.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("cost matrix rows differ in length"));
    }
    core::training::hungarian_assignment(&cost.concat(), n, m).map_err(err)
}

#[pyfunction]
fn spearman(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    core::analysis::spearman(&x, &y).map_err(err)
}

/// One-way ANOVA of `values` grouped by `groups`, optionally with a
/// permutation null.
#[pyfunction]
#[pyo3(signature = (values, groups, min_count=1, permutations=0, seed=0))]
fn anova<'py>(
    py: Python<'py>,
    values: Vec<f64>,
    groups: Vec<usize>,
    min_count: usize,
    permutations: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let r = if permutations > 0 {
        core::analysis::anova_with_null(&values, &groups, min_count, permutations, seed)
    } else {
        core::analysis::anova_eta2(&values, &groups, min_count)
    }
    .map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("eta2", r.eta2)?;
    d.set_item("f", r.f)?;
    d.set_item("df_between", r.df_between)?;
    d.set_item("df_within", r.df_within)?;
    d.set_item("groups", r.groups)?;
    d.set_item("samples", r.samples)?;
    d.set_item("p_param", r.p_param)?;
    d.set_item("null_mean", r.null_mean())?;
    d.set_item("p_perm", r.p_perm)?;
    Ok(d)
}

/// Trains a tokenizer. `config` is a `key=value` document of training
/// settings; `seed` overrides any seed it sets. Returns the checkpoint and
/// the per-epoch validation losses.
#[pyfunction]
#[pyo3(signature = (train, val, descriptor, config=None, seed=None))]
fn train(
    train: Vec<PyRef<'_, PyEnsemble>>,
    val: Vec<PyRef<'_, PyEnsemble>>,
    descriptor: &PyDescriptorConfig,
    config: Option<&str>,
    seed: Option<u64>,
) -> PyResult<(PyCheckpoint, Vec<f64>)> {
    let cfg = core::cli::train_config(config, seed).map_err(err)?;
    let tr: Vec<&Ensemble> = train.iter().map(|e| &e.inner).collect();
    let va: Vec<&Ensemble> = val.iter().map(|e| &e.inner).collect();
    let mut losses = Vec::new();
    let out = core::training::train(&tr, &va, &descriptor.inner, &cfg, &mut |r: &LogRecord| {
        if let LogRecord::Epoch(e) = r {
            losses.push(e.val_loss);
        }
    })
    .map_err(err)?;
    Ok((
        PyCheckpoint {
            inner: out.checkpoint,
        },
        losses,
    ))
}

#[pymodule]
fn ensembits(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEnsemble>()?;
    m.add_class::<PyDescriptorConfig>()?;
    m.add_class::<PyCheckpoint>()?;
    m.add_function(wrap_pyfunction!(synth_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(compute_descriptors, m)?)?;
    m.add_function(wrap_pyfunction!(compute_rmsf, m)?)?;
    m.add_function(wrap_pyfunction!(fps_select, m)?)?;
    m.add_function(wrap_pyfunction!(hungarian, m)?)?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    m.add_function(wrap_pyfunction!(anova, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    Ok(())
}
