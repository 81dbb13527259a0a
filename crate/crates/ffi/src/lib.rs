//! C ABI over `acs-core`.
//!
//! Every function returns an [`AcsStatus`]; on failure the message is
//! available from [`acs_last_error`] on the same thread. Strings handed out
//! by this library must be released with [`acs_string_free`], catalogs with
//! [`acs_catalog_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use acs_core::catalog::{load_catalog, Catalog, CatalogError, Filters};
use acs_core::fixture::{generate_release, FixtureSpec};
use acs_core::model::{Period, Release};
use acs_core::pipeline::{build_release, BuildOptions};
use acs_core::stats::{self, StatsError};

/// Emit `_ann` annotation columns.
pub const ACS_BUILD_ANNOTATIONS: u32 = 1;
/// Replace existing output files.
pub const ACS_BUILD_OVERWRITE: u32 = 2;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcsStatus {
    Ok = 0,
    /// Null pointer, invalid UTF-8 or out-of-range argument.
    InvalidArgument = 1,
    /// Unknown dataset id, column or release.
    NotFound = 2,
    /// Input rejected by a domain rule, e.g. a negative margin of error.
    Domain = 3,
    /// Reading or writing files failed, including malformed source data.
    Io = 4,
    /// A Rust panic was caught at the boundary.
    Panic = 5,
}

/// Optional exact-match geography filters; null fields match everything.
#[repr(C)]
#[derive(Debug)]
pub struct AcsFilters {
    pub sumlevel: *const c_char,
    pub stusab: *const c_char,
    pub geoid: *const c_char,
}

/// Opaque handle to a loaded catalog.
pub struct AcsCatalog {
    inner: Catalog,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(AcsStatus, String);

impl From<StatsError> for Failure {
    fn from(e: StatsError) -> Self {
        Failure(AcsStatus::Domain, e.to_string())
    }
}

impl From<CatalogError> for Failure {
    fn from(e: CatalogError) -> Self {
        let status = match e {
            CatalogError::UnknownDataset(_) | CatalogError::UnknownColumn { .. } | CatalogError::UnknownRelease(_) => {
                AcsStatus::NotFound
            }
            CatalogError::InvalidQuery(_) | CatalogError::InvalidPage(_) => AcsStatus::InvalidArgument,
            CatalogError::MoeColumn { .. } | CatalogError::Stats(_) => AcsStatus::Domain,
            _ => AcsStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(AcsStatus::InvalidArgument, msg.into())
}

fn set_error(msg: Option<String>) {
    let c = msg.map(|m| CString::new(m.replace('\0', " ")).expect("interior nul removed"));
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> AcsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(None);
            AcsStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(Some(msg));
            status
        }
        Err(_) => {
            set_error(Some("panic inside acs library".into()));
            AcsStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(invalid(format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{name} is not UTF-8")))
}

unsafe fn optional_text(p: *const c_char, name: &str) -> Result<Option<String>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        text(p, name).map(|s| Some(s.to_string()))
    }
}

unsafe fn filters(p: *const AcsFilters) -> Result<Filters, Failure> {
    let Some(f) = p.as_ref() else {
        return Ok(Filters::default());
    };
    Ok(Filters {
        sumlevel: optional_text(f.sumlevel, "sumlevel")?,
        stusab: optional_text(f.stusab, "stusab")?,
        geoid: optional_text(f.geoid, "geoid")?,
    })
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(invalid("output pointer is null"));
    }
    out.write(value);
    Ok(())
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    let c = CString::new(s).map_err(|_| invalid("result contains a nul byte"))?;
    write_out(out, c.into_raw())
}

unsafe fn write_json<T: serde::Serialize>(out: *mut *mut c_char, value: &T) -> Result<(), Failure> {
    let s = serde_json::to_string(value).map_err(|e| Failure(AcsStatus::Io, e.to_string()))?;
    write_string(out, s)
}

unsafe fn catalog<'a>(p: *const AcsCatalog) -> Result<&'a Catalog, Failure> {
    p.as_ref().map(|c| &c.inner).ok_or_else(|| invalid("catalog is null"))
}

/// Message of the last failed call on this thread, or null after a success.
/// Valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn acs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Release a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn acs_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn acs_standard_error(moe: f64, out: *mut f64) -> AcsStatus {
    guard(|| write_out(out, stats::standard_error(moe)?))
}

/// Coefficient of variation in percent.
///
/// # Safety
/// `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn acs_coefficient_of_variation(estimate: f64, moe: f64, out: *mut f64) -> AcsStatus {
    guard(|| write_out(out, stats::coefficient_of_variation(estimate, moe)?))
}

/// # Safety
/// `low` and `high` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn acs_confidence_interval(estimate: f64, moe: f64, low: *mut f64, high: *mut f64) -> AcsStatus {
    guard(|| {
        let (lo, hi) = stats::confidence_interval(estimate, moe)?;
        if high.is_null() {
            return Err(invalid("output pointer is null"));
        }
        write_out(low, lo)?;
        write_out(high, hi)
    })
}

/// # Safety
/// `moes` must point to `len` readable doubles (or be null when `len` is 0);
/// `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn acs_aggregate_moe(moes: *const f64, len: usize, out: *mut f64) -> AcsStatus {
    guard(|| {
        let values = if len == 0 {
            &[][..]
        } else if moes.is_null() {
            return Err(invalid("moes is null"));
        } else {
            std::slice::from_raw_parts(moes, len)
        };
        write_out(out, stats::aggregate_moe(values)?)
    })
}

/// Write the default synthetic release with the given seed under `root`.
///
/// # Safety
/// `root` must be a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn acs_generate_fixture(root: *const c_char, seed: u64) -> AcsStatus {
    guard(|| {
        let root = PathBuf::from(text(root, "root")?);
        let spec = FixtureSpec {
            seed,
            ..FixtureSpec::default()
        };
        generate_release(&spec, &root).map_err(|e| Failure(AcsStatus::Io, e.to_string()))?;
        Ok(())
    })
}

/// Build every table of a release. `flags` combines `ACS_BUILD_*` bits;
/// `jobs` 0 uses the available parallelism.
///
/// # Safety
/// `root`, `out` and `period` must be nul-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn acs_build(
    root: *const c_char,
    out: *const c_char,
    year: u16,
    period: *const c_char,
    flags: u32,
    jobs: u32,
) -> AcsStatus {
    guard(|| {
        let root = PathBuf::from(text(root, "root")?);
        let out = PathBuf::from(text(out, "out")?);
        let period: Period = text(period, "period")?.parse().map_err(|e| invalid(format!("{e}")))?;
        let release = Release::new(year, period).map_err(|e| invalid(e.to_string()))?;
        let options = BuildOptions {
            subjects: None,
            annotations: flags & ACS_BUILD_ANNOTATIONS != 0,
            overwrite: flags & ACS_BUILD_OVERWRITE != 0,
            jobs: jobs as usize,
        };
        build_release(&root, &out, release, &options).map_err(|e| Failure(AcsStatus::Io, e.to_string()))?;
        Ok(())
    })
}

/// Load the catalog of a built output tree.
///
/// # Safety
/// `out_root` must be a nul-terminated string; `catalog` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn acs_catalog_open(out_root: *const c_char, catalog: *mut *mut AcsCatalog) -> AcsStatus {
    guard(|| {
        let root = PathBuf::from(text(out_root, "out_root")?);
        let inner = load_catalog(&root)?;
        write_out(catalog, Box::into_raw(Box::new(AcsCatalog { inner })))
    })
}

/// Release a catalog. Null is ignored.
///
/// # Safety
/// `catalog` must come from `acs_catalog_open` and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn acs_catalog_free(catalog: *mut AcsCatalog) {
    if !catalog.is_null() {
        drop(Box::from_raw(catalog));
    }
}

/// Search hits as a JSON array.
///
/// # Safety
/// Pointers must be valid; `json_out` receives a string to free with
/// `acs_string_free`.
#[no_mangle]
pub unsafe extern "C" fn acs_catalog_search(
    catalog: *const AcsCatalog,
    query: *const c_char,
    json_out: *mut *mut c_char,
) -> AcsStatus {
    guard(|| {
        let hits = self::catalog(catalog)?.search(text(query, "query")?)?;
        write_json(json_out, &hits)
    })
}

/// One page of filtered rows as JSON `{total, page, page_size, header, rows}`.
/// `filters` may be null.
///
/// # Safety
/// Pointers must be valid; `json_out` receives a string to free with
/// `acs_string_free`.
#[no_mangle]
pub unsafe extern "C" fn acs_catalog_rows(
    catalog: *const AcsCatalog,
    dataset_id: *const c_char,
    filters: *const AcsFilters,
    page: usize,
    page_size: usize,
    json_out: *mut *mut c_char,
) -> AcsStatus {
    guard(|| {
        let f = self::filters(filters)?;
        let slice = self::catalog(catalog)?.table_slice(text(dataset_id, "dataset_id")?, &f, page, page_size)?;
        write_json(json_out, &slice)
    })
}

/// Descriptive statistics of an estimate column as JSON, with margin of error
/// statistics when the filters address a single row. `filters` may be null.
///
/// # Safety
/// Pointers must be valid; `json_out` receives a string to free with
/// `acs_string_free`.
#[no_mangle]
pub unsafe extern "C" fn acs_catalog_stats(
    catalog: *const AcsCatalog,
    dataset_id: *const c_char,
    column: *const c_char,
    filters: *const AcsFilters,
    json_out: *mut *mut c_char,
) -> AcsStatus {
    guard(|| {
        let f = self::filters(filters)?;
        let stats = self::catalog(catalog)?.quick_stats(text(dataset_id, "dataset_id")?, text(column, "column")?, &f)?;
        write_json(json_out, &stats)
    })
}

/// Write a table, optionally filtered, as CSV to `path`.
///
/// # Safety
/// Pointers must be valid nul-terminated strings; `filters` may be null.
#[no_mangle]
pub unsafe extern "C" fn acs_catalog_export(
    catalog: *const AcsCatalog,
    dataset_id: *const c_char,
    filters: *const AcsFilters,
    path: *const c_char,
) -> AcsStatus {
    guard(|| {
        let f = self::filters(filters)?;
        let catalog = self::catalog(catalog)?;
        let id = text(dataset_id, "dataset_id")?;
        catalog.table(id)?;
        let path = PathBuf::from(text(path, "path")?);
        let file = std::fs::File::create(&path).map_err(|e| Failure(AcsStatus::Io, format!("{}: {e}", path.display())))?;
        catalog.export(id, &f, std::io::BufWriter::new(file))?;
        Ok(())
    })
}
