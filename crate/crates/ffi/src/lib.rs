//! C interface to the vidta model.
//!
//! Every function returns a [`VidtaStatus`]; results are written through
//! out-pointers. On failure a description of the error is kept per thread
//! and can be read with [`vidta_last_error`]. Models are opaque handles
//! created by [`vidta_model_load`] or [`vidta_model_new`] and released with
//! [`vidta_model_free`]. A handle may be shared across threads for
//! prediction.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use vidta::chem::parse_smiles;
use vidta::metrics::MetricsReport;
use vidta::model::{featurize_protein, featurize_smiles, ModelConfig, ModelError, Sample, Vidta};
use vidta::pipeline::{transform_affinity, AffinitySpace, Checkpoint, PipelineError};

/// Result of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VidtaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    ParseError = 4,
    Io = 5,
    VersionMismatch = 6,
    ModelError = 7,
    Panic = 8,
}

/// Affinity reported as pK_d (passed through).
pub const VIDTA_SPACE_PKD: u32 = 0;
/// Affinity reported as a KIBA score (passed through).
pub const VIDTA_SPACE_KIBA: u32 = 1;
/// Affinity in the Metz dataset's native units (passed through).
pub const VIDTA_SPACE_METZ_NATIVE: u32 = 2;
/// Dissociation constant in nanomolar; converted to pK_d.
pub const VIDTA_SPACE_RAW_KD_NM: u32 = 3;

/// Model size presets for [`vidta_model_new`].
pub const VIDTA_PRESET_PAPER: u32 = 0;
pub const VIDTA_PRESET_TOY: u32 = 1;

/// Evaluation metrics of a prediction vector against ground truth.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct VidtaMetrics {
    pub ci: f64,
    pub rm2: f64,
    pub pcc: f64,
    pub mse: f64,
    pub n: usize,
}

/// Opaque model handle.
pub struct VidtaModel {
    inner: Vidta<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(VidtaStatus, String);

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        let status = match e {
            ModelError::VersionMismatch(_) => VidtaStatus::VersionMismatch,
            ModelError::Smiles(_) | ModelError::Sequence(_) => VidtaStatus::ParseError,
            _ => VidtaStatus::ModelError,
        };
        Failure(status, e.to_string())
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Model(m) => m.into(),
            PipelineError::FileUnreadable { .. } | PipelineError::Io(_) => Failure(VidtaStatus::Io, e.to_string()),
            PipelineError::NonPositiveKd(_) => Failure(VidtaStatus::InvalidArgument, e.to_string()),
            _ => Failure(VidtaStatus::ModelError, e.to_string()),
        }
    }
}

/// Runs `f`, recording its error (or panic) as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> VidtaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            VidtaStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            VidtaStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(VidtaStatus::NullPointer, format!("{what} is null"))
}

/// # Safety
/// `p` must be null or a valid NUL-terminated string.
unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(VidtaStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

fn space(code: u32) -> Result<AffinitySpace, Failure> {
    match code {
        VIDTA_SPACE_PKD => Ok(AffinitySpace::PKd),
        VIDTA_SPACE_KIBA => Ok(AffinitySpace::Kiba),
        VIDTA_SPACE_METZ_NATIVE => Ok(AffinitySpace::MetzNative),
        VIDTA_SPACE_RAW_KD_NM => Ok(AffinitySpace::RawKdNm),
        other => Err(Failure(
            VidtaStatus::InvalidArgument,
            format!("unknown affinity space {other}"),
        )),
    }
}

/// Message describing the most recent failure on this thread, or null if
/// the last call succeeded. Valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn vidta_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn vidta_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint file into a new handle stored in `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vidta_model_load(path: *const c_char, out: *mut *mut VidtaModel) -> VidtaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = text(path, "path")?;
        let model = Checkpoint::load(Path::new(path))?.model()?;
        *out = Box::into_raw(Box::new(VidtaModel { inner: model }));
        Ok(())
    })
}

/// Creates a freshly initialized (untrained) model of the given preset.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vidta_model_new(preset: u32, seed: u64, out: *mut *mut VidtaModel) -> VidtaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = match preset {
            VIDTA_PRESET_PAPER => ModelConfig::paper(),
            VIDTA_PRESET_TOY => ModelConfig::toy(),
            other => return Err(Failure(VidtaStatus::InvalidArgument, format!("unknown preset {other}"))),
        };
        let model = Vidta::new(cfg, seed)?;
        *out = Box::into_raw(Box::new(VidtaModel { inner: model }));
        Ok(())
    })
}

/// Writes `model` to a checkpoint file.
///
/// # Safety
/// `model` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn vidta_model_save(model: *const VidtaModel, path: *const c_char) -> VidtaStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let path = text(path, "path")?;
        Checkpoint::from_model(&model.inner).save(Path::new(path))?;
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vidta_model_free(model: *mut VidtaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Predicted affinity of one drug (SMILES) and protein (sequence or FASTA).
///
/// # Safety
/// `model` must be a live handle; strings NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vidta_model_predict(
    model: *const VidtaModel,
    smiles: *const c_char,
    protein: *const c_char,
    out: *mut f64,
) -> VidtaStatus {
    let (s, p) = (&smiles, &protein);
    vidta_model_predict_batch(model, s, p, 1, out)
}

/// Predictions for `n` pairs; `out` receives `n` values.
///
/// # Safety
/// `smiles` and `proteins` must each point to `n` NUL-terminated strings;
/// `out` must have room for `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn vidta_model_predict_batch(
    model: *const VidtaModel,
    smiles: *const *const c_char,
    proteins: *const *const c_char,
    n: usize,
    out: *mut f64,
) -> VidtaStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        if n == 0 {
            return Ok(());
        }
        if smiles.is_null() || proteins.is_null() || out.is_null() {
            return Err(null("input or output array"));
        }
        let cfg = &model.inner.config;
        let mut graphs = Vec::with_capacity(n);
        let mut prots = Vec::with_capacity(n);
        for i in 0..n {
            let s = text(*smiles.add(i), "smiles")?;
            let p = text(*proteins.add(i), "protein")?;
            graphs.push(featurize_smiles(s, cfg).map_err(|e| {
                let f = Failure::from(e);
                Failure(f.0, format!("pair {i}: {}", f.1))
            })?);
            prots.push(featurize_protein(p, cfg).map_err(|e| {
                let f = Failure::from(e);
                Failure(f.0, format!("pair {i}: {}", f.1))
            })?);
        }
        let samples: Vec<Sample> = graphs
            .iter()
            .zip(&prots)
            .map(|(drug, protein)| Sample { drug, protein })
            .collect();
        let preds = model.inner.predict(&samples)?;
        let dst = std::slice::from_raw_parts_mut(out, n);
        for (d, p) in dst.iter_mut().zip(preds) {
            *d = f64::from(p);
        }
        Ok(())
    })
}

/// Heavy-atom and bond counts of a SMILES string.
///
/// # Safety
/// `smiles` NUL-terminated; `atoms` and `bonds` writable.
#[no_mangle]
pub unsafe extern "C" fn vidta_parse_smiles_counts(
    smiles: *const c_char,
    atoms: *mut usize,
    bonds: *mut usize,
) -> VidtaStatus {
    guard(|| {
        if atoms.is_null() || bonds.is_null() {
            return Err(null("output"));
        }
        let s = text(smiles, "smiles")?;
        let mol = parse_smiles(s).map_err(|e| Failure(VidtaStatus::ParseError, e.to_string()))?;
        *atoms = mol.atom_count();
        *bonds = mol.bond_count();
        Ok(())
    })
}

/// Converts an affinity to the training target space (`VIDTA_SPACE_*`).
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vidta_transform_affinity(value: f64, space_code: u32, out: *mut f64) -> VidtaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = transform_affinity(value, space(space_code)?)?;
        Ok(())
    })
}

/// CI, r_m², Pearson correlation and MSE of `pred` against `truth`.
///
/// # Safety
/// `pred` and `truth` must hold `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vidta_metrics(
    pred: *const f64,
    truth: *const f64,
    n: usize,
    out: *mut VidtaMetrics,
) -> VidtaStatus {
    guard(|| {
        if pred.is_null() || truth.is_null() || out.is_null() {
            return Err(null("argument"));
        }
        let p = std::slice::from_raw_parts(pred, n);
        let t = std::slice::from_raw_parts(truth, n);
        let r = MetricsReport::compute(p, t).map_err(|e| Failure(VidtaStatus::InvalidArgument, e.to_string()))?;
        *out = VidtaMetrics {
            ci: r.ci,
            rm2: r.rm2,
            pcc: r.pcc,
            mse: r.mse,
            n: r.n,
        };
        Ok(())
    })
}
