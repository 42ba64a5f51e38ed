#ifndef EMPA_H
#define EMPA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum EmpaStatus {
  EMPA_STATUS_OK = 0,
  EMPA_STATUS_NULL_POINTER = 1,
  EMPA_STATUS_UTF8 = 2,
  EMPA_STATUS_ASSEMBLY = 3,
  EMPA_STATUS_INVALID_CONFIG = 4,
  EMPA_STATUS_DEADLOCK = 5,
  EMPA_STATUS_CYCLE_CAP = 6,
  EMPA_STATUS_SIMULATION = 7,
  EMPA_STATUS_PANIC = 8,
  EMPA_STATUS_OUT_OF_RANGE = 9,
} EmpaStatus;

/**
 * Simulation parameters.
 */
typedef struct EmpaConfig EmpaConfig;

/**
 * An assembled program.
 */
typedef struct EmpaProgram EmpaProgram;

/**
 * Outcome of a completed run.
 */
typedef struct EmpaRunResult EmpaRunResult;

/**
 * Headline numbers of a run.
 */
typedef struct EmpaSummary {
  uint64_t makespan;
  uint64_t energy;
  uint64_t messages;
  uint64_t hops;
  uint64_t memory_ops;
  uint64_t qt_count;
  uint64_t spawn_cycles;
} EmpaSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *empa_version(void);

/**
 * Message describing the last failure on this thread, or NULL. The caller
 * owns the returned string.
 */
char *empa_last_error(void);

/**
 * Releases a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void empa_string_free(char *s);

/**
 * Assembles `source` into a new program handle.
 *
 * # Safety
 * `source` must be a NUL-terminated string and `out` a valid pointer.
 */
enum EmpaStatus empa_program_assemble(const char *source, struct EmpaProgram **out);

/**
 * Builds a bundled workload. A negative `param` selects its default.
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out` a valid pointer.
 */
enum EmpaStatus empa_program_corpus(const char *name, int64_t param, struct EmpaProgram **out);

/**
 * Disassembles a program. The caller owns the returned string.
 *
 * # Safety
 * `program` must be a live handle or NULL.
 */
char *empa_program_disassemble(const struct EmpaProgram *program);

/**
 * # Safety
 * `program` must be a live handle or NULL; it is invalid afterwards.
 */
void empa_program_free(struct EmpaProgram *program);

/**
 * Default configuration: 8x8 grid and the standard costs.
 */
struct EmpaConfig *empa_config_new(void);

/**
 * Configuration from a JSON object with flat keys.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum EmpaStatus empa_config_from_json(const char *json, struct EmpaConfig **out);

/**
 * # Safety
 * `config` must be a live handle.
 */
enum EmpaStatus empa_config_set_grid(struct EmpaConfig *config, uint32_t width, uint32_t height);

/**
 * Sets the per-hop, memory and meta-dispatch latencies in cycles.
 *
 * # Safety
 * `config` must be a live handle.
 */
enum EmpaStatus empa_config_set_costs(struct EmpaConfig *config,
                                      uint64_t hop,
                                      uint64_t memory,
                                      uint64_t meta);

/**
 * Replaces the denied-core list.
 *
 * # Safety
 * `config` must be a live handle and `cores` point at `len` ids (or be NULL with `len` 0).
 */
enum EmpaStatus empa_config_set_denied(struct EmpaConfig *config,
                                       const uint32_t *cores,
                                       size_t len);

/**
 * # Safety
 * `config` must be a live handle or NULL; it is invalid afterwards.
 */
void empa_config_free(struct EmpaConfig *config);

/**
 * Runs `program` to completion.
 *
 * # Safety
 * `program` and `config` must be live handles and `out` a valid pointer.
 */
enum EmpaStatus empa_run(const struct EmpaProgram *program,
                         const struct EmpaConfig *config,
                         struct EmpaRunResult **out);

/**
 * Runs both the many-core model and the single-core baseline and writes
 * the comparison report as JSON into `*out` (caller owns it).
 *
 * # Safety
 * `program` and `config` must be live handles and `out` a valid pointer.
 */
enum EmpaStatus empa_compare_json(const struct EmpaProgram *program,
                                  const struct EmpaConfig *config,
                                  char **out);

/**
 * # Safety
 * `result` must be a live handle and `out` a valid pointer.
 */
enum EmpaStatus empa_result_summary(const struct EmpaRunResult *result, struct EmpaSummary *out);

/**
 * Final value of root register `index`.
 *
 * # Safety
 * `result` must be a live handle and `out` a valid pointer.
 */
enum EmpaStatus empa_result_register(const struct EmpaRunResult *result,
                                     uint32_t index,
                                     int64_t *out);

/**
 * Final value of memory word `addr` (0 when never written).
 *
 * # Safety
 * `result` must be a live handle and `out` a valid pointer.
 */
enum EmpaStatus empa_result_memory(const struct EmpaRunResult *result, uint64_t addr, int64_t *out);

/**
 * Full metrics as JSON. The caller owns the returned string.
 *
 * # Safety
 * `result` must be a live handle or NULL.
 */
char *empa_result_metrics_json(const struct EmpaRunResult *result);

/**
 * Event log as JSON lines. The caller owns the returned string.
 *
 * # Safety
 * `result` must be a live handle or NULL.
 */
char *empa_result_events_jsonl(const struct EmpaRunResult *result);

/**
 * # Safety
 * `result` must be a live handle or NULL; it is invalid afterwards.
 */
void empa_result_free(struct EmpaRunResult *result);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EMPA_H */
