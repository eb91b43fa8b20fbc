#ifndef MEDLEDGER_H
#define MEDLEDGER_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes. Values 3 to 10 match the command-line exit codes.
typedef enum MlStatus {
  ML_STATUS_OK = 0,
  ML_STATUS_NULL_ARGUMENT = 1,
  ML_STATUS_INVALID_UTF8 = 2,
  ML_STATUS_PARSE = 3,
  ML_STATUS_CONFIG = 4,
  ML_STATUS_STEP_FAILED = 5,
  ML_STATUS_IO = 6,
  ML_STATUS_CORRUPT_STATE = 7,
  ML_STATUS_UNKNOWN_RECORD = 8,
  ML_STATUS_CAS = 9,
  ML_STATUS_SETUP = 10,
  ML_STATUS_PANIC = 11,
} MlStatus;

// A standalone content-addressed store.
typedef struct MlCas MlCas;

// Result of running a scenario script.
typedef struct MlRun MlRun;

// A verified state directory.
typedef struct MlState MlState;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL if the last call
// succeeded. Valid until the next call into this library on the same thread.
const char *ml_last_error_message(void);

// Library version as a static string.
const char *ml_version(void);

void ml_string_free(char *s);

void ml_bytes_free(uint8_t *data, size_t len);

// SHA-256 content identifier of `data`.
enum MlStatus ml_cid_of(const uint8_t *data, size_t len, uint8_t *out_digest);

// Text form (`sha256:<hex>`) of a 32-byte digest.
enum MlStatus ml_cid_to_string(const uint8_t *digest, char **out);

// Parses and runs a scenario script. `channel_toml` may be NULL for the
// bundled channel; `seed` overrides the script's seed when `override_seed`
// is true. Step failures do not make this call fail: check
// [`ml_run_failures`].
enum MlStatus ml_scenario_run(const char *script,
                              const char *channel_toml,
                              bool override_seed,
                              uint64_t seed,
                              bool parallel_delivery,
                              struct MlRun **out);

// Number of failed steps and assertions.
size_t ml_run_failures(const struct MlRun *run);

// Transcript text, borrowed from the handle.
const char *ml_run_transcript(const struct MlRun *run);

enum MlStatus ml_run_tip_hash(const struct MlRun *run, uint8_t *out_digest);

enum MlStatus ml_run_state_hash(const struct MlRun *run, uint8_t *out_digest);

// Record id of a scenario record alias, caller-owned.
enum MlStatus ml_run_record_id(const struct MlRun *run, const char *alias, char **out);

// Writes chain, world state, channel and storage inventory to `dir`.
enum MlStatus ml_run_export(const struct MlRun *run, const char *dir);

void ml_run_free(struct MlRun *run);

// Loads and verifies an exported state directory.
enum MlStatus ml_state_open(const char *dir, struct MlState **out);

// Re-runs full chain verification on a loaded state.
enum MlStatus ml_state_verify(const struct MlState *st);

// Block count including genesis.
uint64_t ml_state_height(const struct MlState *st);

enum MlStatus ml_state_tip_hash(const struct MlState *st, uint8_t *out_digest);

enum MlStatus ml_state_world_hash(const struct MlState *st, uint8_t *out_digest);

// Audit trail of a record as tab-separated lines
// `height, tx_index, operation, creator, validity, tx_id`, caller-owned.
enum MlStatus ml_state_audit(const struct MlState *st,
                             const char *record_id,
                             char **out,
                             size_t *out_rows);

void ml_state_free(struct MlState *st);

// Empty store with replication factor `r` (at least 1).
enum MlStatus ml_cas_new(uint32_t replication_factor, struct MlCas **out);

enum MlStatus ml_cas_add_node(struct MlCas *cas, const char *node_id, const char *operator_org);

enum MlStatus ml_cas_set_node_alive(struct MlCas *cas, const char *node_id, bool alive);

enum MlStatus ml_cas_put(struct MlCas *cas, const uint8_t *data, size_t len, uint8_t *out_digest);

// Copies the content of `digest` onto `node_id` from a live holder.
enum MlStatus ml_cas_pin(struct MlCas *cas, const uint8_t *digest, const char *node_id);

// Verified read. The buffer is caller-owned; release it with
// [`ml_bytes_free`].
enum MlStatus ml_cas_get(const struct MlCas *cas,
                         const uint8_t *digest,
                         uint8_t **out_data,
                         size_t *out_len);

void ml_cas_free(struct MlCas *cas);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MEDLEDGER_H */
