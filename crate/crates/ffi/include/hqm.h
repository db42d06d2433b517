#ifndef HQM_H
#define HQM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes of fallible calls.
 */
typedef enum HqmStatus {
  HQM_STATUS_OK = 0,
  HQM_STATUS_NULL_POINTER = 1,
  HQM_STATUS_INVALID_UTF8 = 2,
  HQM_STATUS_PARSE = 3,
  HQM_STATUS_INVALID_INPUT = 4,
  HQM_STATUS_INCONSISTENT = 5,
  HQM_STATUS_NUMERICAL = 6,
  HQM_STATUS_INSUFFICIENT_DATA = 7,
  HQM_STATUS_IO = 8,
  HQM_STATUS_PANIC = 9,
} HqmStatus;

/**
 * Read-out selection for [`hqm_run_trials`].
 */
typedef enum HqmReadout {
  HQM_READOUT_OFF = 0,
  HQM_READOUT_HERALDED = 1,
  HQM_READOUT_ALL = 2,
} HqmReadout;

/**
 * Validated system configuration.
 */
typedef struct HqmConfig HqmConfig;

/**
 * Simulated trials of one run.
 */
typedef struct HqmDataset HqmDataset;

/**
 * Report and artifacts of one scenario run.
 */
typedef struct HqmScenario HqmScenario;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *hqm_last_error(void);

/**
 * Releases a string returned by this library.
 *
 * # Safety
 * `s` must be null or a pointer obtained from this library and not yet freed.
 */
void hqm_string_free(char *s);

/**
 * The built-in reference configuration.
 */
struct HqmConfig *hqm_config_reference(void);

/**
 * Parses and validates a TOML configuration.
 *
 * # Safety
 * `toml` must be a NUL-terminated string; `out` must be a valid pointer.
 */
enum HqmStatus hqm_config_from_toml(const char *toml, struct HqmConfig **out);

/**
 * Merges a partial TOML document over `base` into a new configuration.
 *
 * # Safety
 * `base` must be a live handle, `overrides` a NUL-terminated string, `out` valid.
 */
enum HqmStatus hqm_config_with_overrides(const struct HqmConfig *base,
                                         const char *overrides,
                                         struct HqmConfig **out);

/**
 * Canonical TOML form of a configuration.
 *
 * # Safety
 * `cfg` must be a live handle.
 */
char *hqm_config_to_toml(const struct HqmConfig *cfg);

/**
 * # Safety
 * `cfg` must be null or a handle not yet freed.
 */
void hqm_config_free(struct HqmConfig *cfg);

/**
 * Field decay rates κ (rad/s) of the qubit and herald cavities.
 *
 * # Safety
 * `cfg` must be a live handle; the output pointers must be valid.
 */
enum HqmStatus hqm_config_kappas(const struct HqmConfig *cfg,
                                 double *kappa_qubit,
                                 double *kappa_herald);

/**
 * Analytic storage and heralding efficiency at a herald-cavity detuning (Hz).
 *
 * # Safety
 * `cfg` must be a live handle; the output pointers must be valid.
 */
enum HqmStatus hqm_efficiencies_at(const struct HqmConfig *cfg,
                                   double detuning_hz,
                                   double *p_storage,
                                   double *p_herald);

/**
 * Simulates `n_trials` trials over all six inputs and three bases; `readout`
 * is one of the [`HqmReadout`] values.
 *
 * # Safety
 * `cfg` must be a live handle; `out` must be valid.
 */
enum HqmStatus hqm_run_trials(const struct HqmConfig *cfg,
                              uint64_t n_trials,
                              uint64_t seed,
                              uint32_t readout,
                              struct HqmDataset **out);

/**
 * Number of trials in the dataset (0 for a null handle).
 *
 * # Safety
 * `ds` must be null or a live handle.
 */
uint64_t hqm_dataset_len(const struct HqmDataset *ds);

/**
 * Number of trials with a herald click.
 *
 * # Safety
 * `ds` must be null or a live handle.
 */
uint64_t hqm_dataset_herald_count(const struct HqmDataset *ds);

/**
 * Average state fidelity of the read-out clicks, optionally restricted to heralded trials.
 *
 * # Safety
 * `ds` must be a live handle; the output pointers must be valid.
 */
enum HqmStatus hqm_dataset_average_fidelity(const struct HqmDataset *ds,
                                            bool heralded_only,
                                            double *value,
                                            double *sigma);

/**
 * Tab-separated text form of the dataset.
 *
 * # Safety
 * `ds` must be a live handle.
 */
char *hqm_dataset_to_tsv(const struct HqmDataset *ds);

/**
 * # Safety
 * `ds` must be null or a handle not yet freed.
 */
void hqm_dataset_free(struct HqmDataset *ds);

/**
 * Runs a named scenario (`spectra`, `write-read-tomo`, `coherence`,
 * `detuning-scan`, `g2`, `truncation`); `n_trials` = 0 selects its default.
 *
 * # Safety
 * `cfg` must be a live handle, `name` a NUL-terminated string, `out` valid.
 */
enum HqmStatus hqm_scenario_run(const struct HqmConfig *cfg,
                                const char *name,
                                uint64_t n_trials,
                                uint64_t seed,
                                struct HqmScenario **out);

/**
 * Plain-text summary of a scenario run.
 *
 * # Safety
 * `sc` must be a live handle.
 */
char *hqm_scenario_summary(const struct HqmScenario *sc);

/**
 * Number of failed comparisons in the report.
 *
 * # Safety
 * `sc` must be a live handle; `failures` must be valid.
 */
enum HqmStatus hqm_scenario_failures(const struct HqmScenario *sc, uint32_t *failures);

/**
 * Writes the artifacts into `dir`; `json` selects JSON instead of CSV scans.
 *
 * # Safety
 * `sc` must be a live handle and `dir` a NUL-terminated string.
 */
enum HqmStatus hqm_scenario_write(const struct HqmScenario *sc, const char *dir, bool json);

/**
 * # Safety
 * `sc` must be null or a handle not yet freed.
 */
void hqm_scenario_free(struct HqmScenario *sc);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HQM_H */
