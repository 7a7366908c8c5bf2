#ifndef COMPLIANCE_AGENT_H
#define COMPLIANCE_AGENT_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result codes shared by every function.
 */
typedef enum CaStatus {
  CA_STATUS_OK = 0,
  CA_STATUS_NULL_ARGUMENT = 1,
  CA_STATUS_INVALID_UTF8 = 2,
  /*
   Bad configuration, unknown tool or pipeline name, bad mode.
   */
  CA_STATUS_CONFIG = 3,
  /*
   A file could not be read or written.
   */
  CA_STATUS_IO = 4,
  /*
   Input text could not be parsed.
   */
  CA_STATUS_PARSE = 5,
  /*
   A verification run failed. Output, when produced, holds the partial trace.
   */
  CA_STATUS_RUN = 6,
  /*
   A Rust panic was caught at the boundary.
   */
  CA_STATUS_PANIC = 7,
} CaStatus;

/*
 Opaque engine handle.
 */
typedef struct CaEngine CaEngine;

/*
 Opaque policy handle.
 */
typedef struct CaPolicy CaPolicy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the most recent failure on this thread, or NULL. The pointer
 stays valid until the next call into this library on the same thread.
 */
const char *ca_last_error(void);

/*
 Releases a string returned by this library. NULL is ignored.

 # Safety
 `s` must come from this library and must not be used afterwards.
 */
void ca_string_free(char *s);

/*
 Library version as a static string.
 */
const char *ca_version(void);

/*
 Opens an engine from a TOML config file. `mode` is "replay" or "live";
 NULL means "replay".

 # Safety
 String arguments must be NUL-terminated; `out` must be writable.
 */
enum CaStatus ca_engine_open(const char *config_path, const char *mode, struct CaEngine **out);

/*
 # Safety
 `engine` must come from [`ca_engine_open`] and not be used afterwards.
 */
void ca_engine_free(struct CaEngine *engine);

/*
 Disables a tool or tool category for subsequent runs.

 # Safety
 `engine` must be a live handle not used concurrently.
 */
enum CaStatus ca_engine_disable(struct CaEngine *engine, const char *target);

/*
 Sets the planner step limit.

 # Safety
 `engine` must be a live handle not used concurrently.
 */
enum CaStatus ca_engine_set_max_steps(struct CaEngine *engine, size_t max_steps);

/*
 Verifies one image. `pipeline` is "agentic", "routing" or "zero_shot"
 (NULL means agentic). On `Ok` and on `Run`, `*out_trace_json` receives
 the trace record as JSON.

 # Safety
 `engine` must be a live handle; strings NUL-terminated; `out_trace_json` writable.
 */
enum CaStatus ca_engine_verify(const struct CaEngine *engine,
                               const char *image_path,
                               const char *pipeline,
                               char **out_trace_json);

/*
 Runs a benchmark. `manifest` NULL uses the configured manifest; `out_dir`
 NULL skips writing report files. `*out_report_json` receives the metrics.

 # Safety
 `engine` must be a live handle; strings NUL-terminated; `out_report_json` writable.
 */
enum CaStatus ca_engine_bench(const struct CaEngine *engine,
                              const char *manifest,
                              const char *pipeline,
                              const char *out_dir,
                              char **out_report_json);

/*
 Loads a policy from a TOML or JSON file.

 # Safety
 `path` NUL-terminated; `out` writable.
 */
enum CaStatus ca_policy_load(const char *path, struct CaPolicy **out);

/*
 # Safety
 `policy` must come from [`ca_policy_load`] and not be used afterwards.
 */
void ca_policy_free(struct CaPolicy *policy);

/*
 Renders the policy as prompt text.

 # Safety
 `policy` must be a live handle; `out_text` writable.
 */
enum CaStatus ca_policy_render(const struct CaPolicy *policy, char **out_text);

/*
 Parses a model answer (JSON template or tagged format) into an
 assessment, returned as JSON `{"rating","category","rationale"}`.

 # Safety
 `policy` must be a live handle; `text` NUL-terminated; `out_json` writable.
 */
enum CaStatus ca_parse_assessment(const struct CaPolicy *policy, const char *text, char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COMPLIANCE_AGENT_H */
