#ifndef ACS_H
#define ACS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Emit `_ann` annotation columns.
 */
#define ACS_BUILD_ANNOTATIONS 1

/**
 * Replace existing output files.
 */
#define ACS_BUILD_OVERWRITE 2

typedef enum AcsStatus {
  ACS_STATUS_OK = 0,
  /**
   * Null pointer, invalid UTF-8 or out-of-range argument.
   */
  ACS_STATUS_INVALID_ARGUMENT = 1,
  /**
   * Unknown dataset id, column or release.
   */
  ACS_STATUS_NOT_FOUND = 2,
  /**
   * Input rejected by a domain rule, e.g. a negative margin of error.
   */
  ACS_STATUS_DOMAIN = 3,
  /**
   * Reading or writing files failed, including malformed source data.
   */
  ACS_STATUS_IO = 4,
  /**
   * A Rust panic was caught at the boundary.
   */
  ACS_STATUS_PANIC = 5,
} AcsStatus;

/**
 * Opaque handle to a loaded catalog.
 */
typedef struct AcsCatalog AcsCatalog;

/**
 * Optional exact-match geography filters; null fields match everything.
 */
typedef struct AcsFilters {
  const char *sumlevel;
  const char *stusab;
  const char *geoid;
} AcsFilters;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null after a success.
 * Valid until the next call into this library on the same thread.
 */
const char *acs_last_error(void);

/**
 * Release a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed already.
 */
void acs_string_free(char *s);

/**
 * # Safety
 * `out` must be valid for a write.
 */
enum AcsStatus acs_standard_error(double moe, double *out);

/**
 * Coefficient of variation in percent.
 *
 * # Safety
 * `out` must be valid for a write.
 */
enum AcsStatus acs_coefficient_of_variation(double estimate, double moe, double *out);

/**
 * # Safety
 * `low` and `high` must be valid for writes.
 */
enum AcsStatus acs_confidence_interval(double estimate, double moe, double *low, double *high);

/**
 * # Safety
 * `moes` must point to `len` readable doubles (or be null when `len` is 0);
 * `out` must be valid for a write.
 */
enum AcsStatus acs_aggregate_moe(const double *moes, size_t len, double *out);

/**
 * Write the default synthetic release with the given seed under `root`.
 *
 * # Safety
 * `root` must be a nul-terminated string.
 */
enum AcsStatus acs_generate_fixture(const char *root, uint64_t seed);

/**
 * Build every table of a release. `flags` combines `ACS_BUILD_*` bits;
 * `jobs` 0 uses the available parallelism.
 *
 * # Safety
 * `root`, `out` and `period` must be nul-terminated strings.
 */
enum AcsStatus acs_build(const char *root,
                         const char *out,
                         uint16_t year,
                         const char *period,
                         uint32_t flags,
                         uint32_t jobs);

/**
 * Load the catalog of a built output tree.
 *
 * # Safety
 * `out_root` must be a nul-terminated string; `catalog` valid for a write.
 */
enum AcsStatus acs_catalog_open(const char *out_root, struct AcsCatalog **catalog);

/**
 * Release a catalog. Null is ignored.
 *
 * # Safety
 * `catalog` must come from `acs_catalog_open` and not have been freed.
 */
void acs_catalog_free(struct AcsCatalog *catalog);

/**
 * Search hits as a JSON array.
 *
 * # Safety
 * Pointers must be valid; `json_out` receives a string to free with
 * `acs_string_free`.
 */
enum AcsStatus acs_catalog_search(const struct AcsCatalog *catalog,
                                  const char *query,
                                  char **json_out);

/**
 * One page of filtered rows as JSON `{total, page, page_size, header, rows}`.
 * `filters` may be null.
 *
 * # Safety
 * Pointers must be valid; `json_out` receives a string to free with
 * `acs_string_free`.
 */
enum AcsStatus acs_catalog_rows(const struct AcsCatalog *catalog,
                                const char *dataset_id,
                                const struct AcsFilters *filters,
                                size_t page,
                                size_t page_size,
                                char **json_out);

/**
 * Descriptive statistics of an estimate column as JSON, with margin of error
 * statistics when the filters address a single row. `filters` may be null.
 *
 * # Safety
 * Pointers must be valid; `json_out` receives a string to free with
 * `acs_string_free`.
 */
enum AcsStatus acs_catalog_stats(const struct AcsCatalog *catalog,
                                 const char *dataset_id,
                                 const char *column,
                                 const struct AcsFilters *filters,
                                 char **json_out);

/**
 * Write a table, optionally filtered, as CSV to `path`.
 *
 * # Safety
 * Pointers must be valid nul-terminated strings; `filters` may be null.
 */
enum AcsStatus acs_catalog_export(const struct AcsCatalog *catalog,
                                  const char *dataset_id,
                                  const struct AcsFilters *filters,
                                  const char *path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ACS_H */
