#ifndef GRAINCA_H
#define GRAINCA_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GcaStatus {
  GCA_STATUS_OK = 0,
  GCA_STATUS_NULL_POINTER = 1,
  GCA_STATUS_USAGE = 2,
  GCA_STATUS_CONFIG = 3,
  GCA_STATUS_PLACEMENT = 4,
  GCA_STATUS_PARSE = 5,
  GCA_STATUS_IO = 6,
  GCA_STATUS_FIT = 7,
  GCA_STATUS_CALIBRATION = 8,
  GCA_STATUS_PANIC = 9,
} GcaStatus;

/**
 * Opaque engine handle. Owns its lattice.
 */
typedef struct GcaEngine GcaEngine;

/**
 * Opaque lattice handle.
 */
typedef struct GcaLattice GcaLattice;

typedef struct GcaEngineParams {
  double c;
  /**
   * J/mol.
   */
  double q;
  /**
   * K.
   */
  double temperature;
  double j_energy;
  /**
   * Nonzero accepts only strictly negative energy changes.
   */
  int32_t strict;
  /**
   * Nonzero sweeps every grain cell instead of the mobile set.
   */
  int32_t full_sweep;
  uint64_t rng_seed;
} GcaEngineParams;

typedef struct GcaGrainStats {
  uint64_t grain_count;
  /**
   * Number-averaged equivalent diameter, um; NaN without grains.
   */
  double mean_diameter_um;
  double particle_fraction;
} GcaGrainStats;

typedef struct GcaStepReport {
  uint64_t cas;
  uint64_t attempts;
  uint64_t accepted;
  uint64_t boundary_cells;
} GcaStepReport;

typedef struct GcaZenerFit {
  double k;
  double n;
  double rms_log_residual;
} GcaZenerFit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Last error message on this thread, or null. Valid until the next failing
 * call on the same thread.
 */
const char *gca_last_error(void);

/**
 * Defaults: c = 1, P1 = 0.5 at 1433 K, J = 1, non-strict, mobile-set sweep.
 */
struct GcaEngineParams gca_engine_params_default(void);

/**
 * Uniform lattice of one orientation (0 fills with particles).
 *
 * # Safety
 * `out` must be a valid pointer to write a handle to.
 */
enum GcaStatus gca_lattice_new(size_t width,
                               size_t height,
                               double cell_size_um,
                               uint32_t orientation,
                               struct GcaLattice **out);

/**
 * Periodic Voronoi polycrystal with `n_grains` orientations.
 *
 * # Safety
 * `out` must be a valid pointer to write a handle to.
 */
enum GcaStatus gca_lattice_voronoi(size_t width,
                                   size_t height,
                                   double cell_size_um,
                                   size_t n_grains,
                                   uint64_t rng_seed,
                                   struct GcaLattice **out);

/**
 * Reads a lattice text file.
 *
 * # Safety
 * `path` must be a nul-terminated string; `out` a valid pointer.
 */
enum GcaStatus gca_lattice_load(const char *path, struct GcaLattice **out);

/**
 * # Safety
 * `lat` must be a live handle and `path` a nul-terminated string.
 */
enum GcaStatus gca_lattice_save(const struct GcaLattice *lat, const char *path);

/**
 * Places non-overlapping disk particles in place.
 *
 * # Safety
 * `lat` must be a live handle; `achieved` may be null.
 */
enum GcaStatus gca_lattice_place_particles(struct GcaLattice *lat,
                                           double radius_um,
                                           double volume_fraction,
                                           uint64_t rng_seed,
                                           double *achieved);

/**
 * # Safety
 * `lat` must be a live handle or null.
 */
enum GcaStatus gca_lattice_clone(const struct GcaLattice *lat, struct GcaLattice **out);

/**
 * # Safety
 * `lat` must be a handle from this library, or null; it is invalid after.
 */
void gca_lattice_free(struct GcaLattice *lat);

/**
 * # Safety
 * `lat` must be a live handle; `width`/`height` valid pointers.
 */
enum GcaStatus gca_lattice_dims(const struct GcaLattice *lat, size_t *width, size_t *height);

/**
 * Raw cell value at row-major `index`: 0 is a particle, otherwise the
 * orientation.
 *
 * # Safety
 * `lat` must be a live handle; `value` a valid pointer.
 */
enum GcaStatus gca_lattice_get(const struct GcaLattice *lat, size_t index, uint32_t *value);

/**
 * Sets a cell; 0 makes it a particle.
 *
 * # Safety
 * `lat` must be a live handle.
 */
enum GcaStatus gca_lattice_set(struct GcaLattice *lat, size_t index, uint32_t value);

/**
 * Copies all cells row-major into `buf`, which must hold `len` values.
 *
 * # Safety
 * `lat` must be a live handle; `buf` valid for `len` writes.
 */
enum GcaStatus gca_lattice_copy_cells(const struct GcaLattice *lat, uint32_t *buf, size_t len);

/**
 * Energy of grain cell `core` if it held `orientation`.
 *
 * # Safety
 * `lat` must be a live handle; `energy` a valid pointer.
 */
enum GcaStatus gca_cell_energy(const struct GcaLattice *lat,
                               size_t core,
                               uint32_t orientation,
                               double j_energy,
                               double *energy);

/**
 * Energy change if grain cell `core` switched to `trial`.
 *
 * # Safety
 * `lat` must be a live handle; `delta` a valid pointer.
 */
enum GcaStatus gca_delta_energy(const struct GcaLattice *lat,
                                size_t core,
                                uint32_t trial,
                                double j_energy,
                                double *delta);

/**
 * Whether particle cell `particle` pins when `core` holds `trial`.
 * Writes 1 or 0.
 *
 * # Safety
 * `lat` must be a live handle; `pinned` a valid pointer.
 */
enum GcaStatus gca_pins(const struct GcaLattice *lat,
                        size_t particle,
                        size_t core,
                        uint32_t trial,
                        int32_t *pinned);

/**
 * Grain count, mean equivalent diameter and particle fraction.
 *
 * # Safety
 * `lat` must be a live handle; `stats` a valid pointer.
 */
enum GcaStatus gca_lattice_stats(const struct GcaLattice *lat, struct GcaGrainStats *stats);

/**
 * Builds an engine over a copy of `lat`.
 *
 * # Safety
 * `lat` and `params` must be valid; `out` a valid pointer.
 */
enum GcaStatus gca_engine_new(const struct GcaLattice *lat,
                              const struct GcaEngineParams *params,
                              struct GcaEngine **out);

/**
 * Advances `n_cas` steps; `report` (may be null) receives the last one.
 *
 * # Safety
 * `engine` must be a live handle.
 */
enum GcaStatus gca_engine_step(struct GcaEngine *engine,
                               uint64_t n_cas,
                               struct GcaStepReport *report);

/**
 * Copies the engine's current lattice into a new handle.
 *
 * # Safety
 * `engine` must be a live handle; `out` a valid pointer.
 */
enum GcaStatus gca_engine_lattice(const struct GcaEngine *engine, struct GcaLattice **out);

/**
 * # Safety
 * `engine` must be a handle from this library, or null.
 */
void gca_engine_free(struct GcaEngine *engine);

/**
 * Fits `d_lim / r = k / f^n` to `len` pairs.
 *
 * # Safety
 * `fractions` and `sizes` must be valid for `len` reads; `fit` writable.
 */
enum GcaStatus gca_fit_zener(const double *fractions,
                             const double *sizes_um,
                             size_t len,
                             double radius_um,
                             struct GcaZenerFit *fit);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GRAINCA_H */
