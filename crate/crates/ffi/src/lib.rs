//! C interface to the csiquant quantizer, bit codec and trained models.
//!
//! Every function returns a [`CsqStatus`]. On failure the message is kept per
//! thread and can be read with [`csq_last_error`]. Model handles are opaque
//! and must be released with [`csq_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use csiquant::channel::{CMatrix, Preprocessor};
use csiquant::cli::checkpoint;
use csiquant::model::Model;
use csiquant::quantizer::{self, BitFlow, QuantSpec};
use csiquant::{Error, Tensor};
use num_complex::Complex64 as C64;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsqStatus {
    Ok = 0,
    NullPointer = 1,
    Dimension = 2,
    Numeric = 3,
    Usage = 4,
    Domain = 5,
    Encode = 6,
    CorruptPayload = 7,
    Config = 8,
    Format = 9,
    Io = 10,
    Panic = 11,
}

/// Extents of a loaded model.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CsqModelInfo {
    pub nc_crop: usize,
    pub nt: usize,
    pub codeword_len: usize,
    pub bits: u8,
    /// Feedback bits per sample, `codeword_len · bits`.
    pub feedback_bits: usize,
    /// Packed payload bytes per sample.
    pub payload_bytes: usize,
}

/// Opaque trained model.
pub struct CsqModel {
    model: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> CsqStatus {
    match e {
        Error::Dimension(_) => CsqStatus::Dimension,
        Error::Numeric(_) => CsqStatus::Numeric,
        Error::Usage(_) => CsqStatus::Usage,
        Error::Domain(_) => CsqStatus::Domain,
        Error::Encode(_) => CsqStatus::Encode,
        Error::CorruptPayload(_) => CsqStatus::CorruptPayload,
        Error::Config(_) => CsqStatus::Config,
        Error::Format(_) => CsqStatus::Format,
        Error::Io(_) => CsqStatus::Io,
    }
}

enum Fail {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CsqStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            CsqStatus::Ok
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(&format!("null pointer: {what}"));
            CsqStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            CsqStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn model_ref<'a>(m: *const CsqModel) -> Result<&'a Model, Fail> {
    m.as_ref().map(|h| &h.model).ok_or(Fail::Null("model"))
}

fn dim(msg: String) -> Fail {
    Fail::Lib(Error::Dimension(msg))
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn csq_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Bytes needed to pack `len` levels of `bits` bits, or 0 for invalid input.
#[no_mangle]
pub extern "C" fn csq_payload_bytes(bits: u8, len: usize) -> usize {
    QuantSpec::new(bits, len).map(|s| s.payload_bytes()).unwrap_or(0)
}

/// Quantizes `len` values in (−1, 1) to `bits`-bit levels and grid values.
/// Either output may be null.
///
/// # Safety
/// Non-null pointers must address `len` elements.
#[no_mangle]
pub unsafe extern "C" fn csq_quantize(
    x: *const f64,
    len: usize,
    bits: u8,
    out_levels: *mut i32,
    out_values: *mut f64,
) -> CsqStatus {
    guard(|| {
        let spec = QuantSpec::new(bits, len)?;
        let q = quantizer::quantize(slice(x, len, "x")?, spec)?;
        if !out_levels.is_null() {
            slice_mut(out_levels, len, "out_levels")?.copy_from_slice(&q.levels);
        }
        if !out_values.is_null() {
            slice_mut(out_values, len, "out_values")?.copy_from_slice(&q.values);
        }
        Ok(())
    })
}

/// Packs levels MSB-first into `out` of exactly `csq_payload_bytes(bits, len)` bytes.
///
/// # Safety
/// `levels` must address `len` elements and `out` `out_len` bytes.
#[no_mangle]
pub unsafe extern "C" fn csq_pack(
    levels: *const i32,
    len: usize,
    bits: u8,
    out: *mut u8,
    out_len: usize,
) -> CsqStatus {
    guard(|| {
        let spec = QuantSpec::new(bits, len)?;
        if out_len != spec.payload_bytes() {
            return Err(dim(format!("payload buffer of {out_len} bytes, need {}", spec.payload_bytes())));
        }
        let flow = quantizer::pack(slice(levels, len, "levels")?, spec)?;
        slice_mut(out, out_len, "out")?.copy_from_slice(&flow.payload);
        Ok(())
    })
}

unsafe fn flow_from(payload: *const u8, payload_len: usize, bits: u8, len: usize) -> Result<BitFlow, Fail> {
    let spec = QuantSpec::new(bits, len)?;
    Ok(BitFlow { payload: slice(payload, payload_len, "payload")?.to_vec(), spec })
}

/// Unpacks `len` levels of `bits` bits.
///
/// # Safety
/// `payload` must address `payload_len` bytes and `out_levels` `len` elements.
#[no_mangle]
pub unsafe extern "C" fn csq_unpack(
    payload: *const u8,
    payload_len: usize,
    bits: u8,
    len: usize,
    out_levels: *mut i32,
) -> CsqStatus {
    guard(|| {
        let levels = quantizer::unpack(&flow_from(payload, payload_len, bits, len)?)?;
        slice_mut(out_levels, len, "out_levels")?.copy_from_slice(&levels);
        Ok(())
    })
}

/// Unpacks and maps levels back to grid values `q/2^(bits−1)`.
///
/// # Safety
/// `payload` must address `payload_len` bytes and `out_values` `len` elements.
#[no_mangle]
pub unsafe extern "C" fn csq_dequantize(
    payload: *const u8,
    payload_len: usize,
    bits: u8,
    len: usize,
    out_values: *mut f64,
) -> CsqStatus {
    guard(|| {
        let values = quantizer::dequantize(&flow_from(payload, payload_len, bits, len)?)?;
        slice_mut(out_values, len, "out_values")?.copy_from_slice(&values);
        Ok(())
    })
}

/// Loads a checkpoint file. On success `*out` owns a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn csq_model_load(path: *const c_char, out: *mut *mut CsqModel) -> CsqStatus {
    guard(|| {
        if path.is_null() {
            return Err(Fail::Null("path"));
        }
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        *out = ptr::null_mut();
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Error::Usage("path is not UTF-8".into()))?;
        let (model, _) = checkpoint::load(Path::new(path))?;
        *out = Box::into_raw(Box::new(CsqModel { model }));
        Ok(())
    })
}

/// Releases a handle from [`csq_model_load`]; null is ignored.
///
/// # Safety
/// `model` must come from `csq_model_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn csq_model_free(model: *mut CsqModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn csq_model_info(model: *const CsqModel, out: *mut CsqModelInfo) -> CsqStatus {
    guard(|| {
        let m = model_ref(model)?;
        let out = out.as_mut().ok_or(Fail::Null("out"))?;
        let c = &m.config;
        *out = CsqModelInfo {
            nc_crop: c.nc_crop,
            nt: c.nt,
            codeword_len: c.codeword_len,
            bits: c.bits,
            feedback_bits: c.feedback_bits(),
            payload_bytes: c.quant_spec().payload_bytes(),
        };
        Ok(())
    })
}

fn batch(m: &Model, x: &[f64], n: usize) -> Result<Tensor, Fail> {
    let [h, w, c] = m.config.input_shape();
    Ok(Tensor::new(&[n, h, w, c], x.to_vec())?)
}

/// Encodes `n` preprocessed samples (`n·nc_crop·nt·2` values in (0,1)) into
/// `n` consecutive payloads of `payload_bytes` each.
///
/// # Safety
/// `x` must address `n·nc_crop·nt·2` values and `out` `out_len` bytes.
#[no_mangle]
pub unsafe extern "C" fn csq_model_encode(
    model: *const CsqModel,
    x: *const f64,
    n: usize,
    out: *mut u8,
    out_len: usize,
) -> CsqStatus {
    guard(|| {
        let m = model_ref(model)?;
        let per = m.config.quant_spec().payload_bytes();
        if out_len != n * per {
            return Err(dim(format!("payload buffer of {out_len} bytes, need {}", n * per)));
        }
        let x = batch(m, slice(x, n * m.config.flat_len(), "x")?, n)?;
        let out = slice_mut(out, out_len, "out")?;
        for (chunk, e) in out.chunks_exact_mut(per.max(1)).zip(m.encode(&x)?) {
            chunk.copy_from_slice(&e.flow.payload);
        }
        Ok(())
    })
}

/// Decodes `n` consecutive payloads into `n·nc_crop·nt·2` values.
///
/// # Safety
/// `payload` must address `payload_len` bytes and `out` `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn csq_model_decode(
    model: *const CsqModel,
    payload: *const u8,
    payload_len: usize,
    n: usize,
    out: *mut f64,
    out_len: usize,
) -> CsqStatus {
    guard(|| {
        let m = model_ref(model)?;
        let spec = m.config.quant_spec();
        let per = spec.payload_bytes();
        if payload_len != n * per || out_len != n * m.config.flat_len() {
            return Err(dim(format!("{n} samples need {} payload bytes and {} outputs", n * per, n * m.config.flat_len())));
        }
        let payload = slice(payload, payload_len, "payload")?;
        let flows: Vec<BitFlow> = payload.chunks_exact(per).map(|p| BitFlow { payload: p.to_vec(), spec }).collect();
        let y = m.decode(&flows)?;
        slice_mut(out, out_len, "out")?.copy_from_slice(y.data());
        Ok(())
    })
}

/// Encoder, bit codec and decoder in one call on `n` preprocessed samples.
///
/// # Safety
/// `x` and `out` must each address `n·nc_crop·nt·2` values.
#[no_mangle]
pub unsafe extern "C" fn csq_model_reconstruct(
    model: *const CsqModel,
    x: *const f64,
    n: usize,
    out: *mut f64,
) -> CsqStatus {
    guard(|| {
        let m = model_ref(model)?;
        let len = n * m.config.flat_len();
        let y = m.reconstruct(&batch(m, slice(x, len, "x")?, n)?, true)?;
        slice_mut(out, len, "out")?.copy_from_slice(y.data());
        Ok(())
    })
}

fn complex_matrix(v: &[f64], rows: usize, cols: usize) -> Result<CMatrix, Fail> {
    let data = v.chunks_exact(2).map(|p| C64::new(p[0], p[1])).collect();
    Ok(CMatrix::from_vec(rows, cols, data)?)
}

fn preprocessor(m: &Model, nc: usize) -> Result<Preprocessor, Fail> {
    Ok(Preprocessor::new(nc, m.config.nt, m.config.nc_crop, m.preproc)?)
}

/// Maps one `nc×nt` spatial-frequency channel (interleaved re/im, row-major)
/// to the model's `nc_crop×nt×2` input.
///
/// # Safety
/// `h` must address `2·nc·nt` values and `out` `nc_crop·nt·2` values.
#[no_mangle]
pub unsafe extern "C" fn csq_preprocess(model: *const CsqModel, h: *const f64, nc: usize, out: *mut f64) -> CsqStatus {
    guard(|| {
        let m = model_ref(model)?;
        let nt = m.config.nt;
        let h = complex_matrix(slice(h, 2 * nc * nt, "h")?, nc, nt)?;
        let (_, cp) = preprocessor(m, nc)?.forward(&h)?;
        slice_mut(out, m.config.flat_len(), "out")?.copy_from_slice(cp.data());
        Ok(())
    })
}

/// Inverts the preprocessing of one `nc_crop×nt×2` reconstruction into an
/// `nc×nt` channel, interleaved re/im.
///
/// # Safety
/// `hcp` must address `nc_crop·nt·2` values and `out` `2·nc·nt` values.
#[no_mangle]
pub unsafe extern "C" fn csq_invert(model: *const CsqModel, hcp: *const f64, nc: usize, out: *mut f64) -> CsqStatus {
    guard(|| {
        let m = model_ref(model)?;
        let [h, w, c] = m.config.input_shape();
        let t = Tensor::new(&[h, w, c], slice(hcp, m.config.flat_len(), "hcp")?.to_vec())?;
        let (_, full) = preprocessor(m, nc)?.invert(&t)?;
        let out = slice_mut(out, 2 * nc * m.config.nt, "out")?;
        for (o, z) in out.chunks_exact_mut(2).zip(full.data()) {
            o[0] = z.re;
            o[1] = z.im;
        }
        Ok(())
    })
}

/// Mean normalized squared error over `n` complex `rows×cols` matrices
/// stored consecutively with interleaved re/im.
///
/// # Safety
/// `truth` and `recovered` must each address `2·n·rows·cols` values.
#[no_mangle]
pub unsafe extern "C" fn csq_nmse(
    truth: *const f64,
    recovered: *const f64,
    n: usize,
    rows: usize,
    cols: usize,
    out: *mut f64,
) -> CsqStatus {
    guard(|| {
        let per = 2 * rows * cols;
        let split = |v: &[f64]| v.chunks_exact(per.max(1)).map(|s| complex_matrix(s, rows, cols)).collect::<Result<Vec<_>, _>>();
        let a = split(slice(truth, n * per, "truth")?)?;
        let b = split(slice(recovered, n * per, "recovered")?)?;
        let v = csiquant::evaluation::nmse(&a, &b)?;
        *out.as_mut().ok_or(Fail::Null("out"))? = v;
        Ok(())
    })
}
