#ifndef DELEGATION_H
#define DELEGATION_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Status codes returned by fallible calls.
typedef enum DlgStatus {
  DLG_STATUS_OK = 0,
  DLG_STATUS_NULL_POINTER = 1,
  DLG_STATUS_INVALID_UTF8 = 2,
  DLG_STATUS_CONFIG = 3,
  DLG_STATUS_INVALID_LABEL = 4,
  DLG_STATUS_INVALID_MAP = 5,
  DLG_STATUS_INCOMPATIBLE = 6,
  DLG_STATUS_NON_CONVERGENCE = 7,
  DLG_STATUS_MODEL_TOO_LARGE = 8,
  DLG_STATUS_BUFFER_TOO_SMALL = 9,
  DLG_STATUS_IO = 10,
  DLG_STATUS_OUT_OF_RANGE = 11,
  DLG_STATUS_PANIC = 12,
  DLG_STATUS_OTHER = 13,
} DlgStatus;

typedef struct DlgConfig DlgConfig;

typedef struct DlgManager DlgManager;

typedef struct DlgMap DlgMap;

typedef struct DlgTeam DlgTeam;

// Evaluation statistics for a two-agent team.
typedef struct DlgEvalStats {
  size_t episodes;
  double mean_reward;
  double std_reward;
  double goal_rate;
  double collision_rate;
  double util_d1;
  double util_d2;
  double mean_delegations;
  double mean_atomic_steps;
  size_t timeouts;
} DlgEvalStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failing call on this thread, or null. The pointer is
// valid until the next failing call on the same thread.
const char *dlg_last_error(void);

// Library version as a static nul-terminated string.
const char *dlg_version(void);

// Manager reward for one delegation.
double dlg_reward(double cost, bool reached_goal, bool collided, bool timed_out);

// Default configuration.
//
// # Safety
// `out` must be a valid pointer to writable storage.
enum DlgStatus dlg_config_new_default(struct DlgConfig **out);

// Configuration parsed from TOML text. Relative map paths resolve against
// the working directory.
//
// # Safety
// `toml` must be a nul-terminated string; `out` must be writable.
enum DlgStatus dlg_config_new_from_toml(const char *toml, struct DlgConfig **out);

// # Safety
// `config` must come from a `dlg_config_new_*` call and not be used again.
void dlg_config_free(struct DlgConfig *config);

// Map parsed from its text form (`#` wall, `.` free, `S` start, `G` goal).
//
// # Safety
// `text` must be a nul-terminated string; `out` must be writable.
enum DlgStatus dlg_map_new_from_text(const char *text, struct DlgMap **out);

// Map from a file path or `builtin:<name>`.
//
// # Safety
// `source` must be a nul-terminated string; `out` must be writable.
enum DlgStatus dlg_map_new_from_source(const char *source, struct DlgMap **out);

// Number of free cells, goal included.
//
// # Safety
// `map` must be a live map handle or null.
size_t dlg_map_num_states(const struct DlgMap *map);

// # Safety
// `map` must come from a `dlg_map_new_*` call and not be used again.
void dlg_map_free(struct DlgMap *map);

// Pre-trains the agents of `label` (e.g. `"1H-2L"`) with costs from
// `regime` (e.g. `"1-4-7"`).
//
// # Safety
// Handles must be live; strings nul-terminated; `out` writable.
enum DlgStatus dlg_team_train(const struct DlgConfig *config,
                              const struct DlgMap *map,
                              const char *label,
                              const char *regime,
                              uint64_t seed,
                              struct DlgTeam **out);

// Number of agents in the team.
//
// # Safety
// `team` must be a live team handle or null.
size_t dlg_team_len(const struct DlgTeam *team);

// # Safety
// `team` must come from `dlg_team_train` and not be used again.
void dlg_team_free(struct DlgTeam *team);

// Trains a manager table for `team` on `map`.
//
// # Safety
// Handles must be live; `regime` nul-terminated; `out` writable.
enum DlgStatus dlg_manager_train(const struct DlgConfig *config,
                                 const struct DlgMap *map,
                                 const struct DlgTeam *team,
                                 const char *regime,
                                 uint64_t seed,
                                 struct DlgManager **out);

// Learned value of delegating to `agent` at cell `(col, row)`.
//
// # Safety
// `manager` must be live; `out` writable.
enum DlgStatus dlg_manager_q(const struct DlgManager *manager,
                             int32_t col,
                             int32_t row,
                             size_t agent,
                             double *out);

// Greedy delegation at cell `(col, row)`, ties to the lower index.
//
// # Safety
// `manager` must be live; `out` writable.
enum DlgStatus dlg_manager_greedy(const struct DlgManager *manager,
                                  int32_t col,
                                  int32_t row,
                                  size_t *out);

// # Safety
// `manager` must come from `dlg_manager_train` and not be used again.
void dlg_manager_free(struct DlgManager *manager);

// Evaluates the greedy `manager`, or the uniform random manager when
// `manager` is null, over `config`'s evaluation episodes.
//
// # Safety
// Handles must be live (`manager` may be null); `out` writable.
enum DlgStatus dlg_evaluate(const struct DlgConfig *config,
                            const struct DlgMap *map,
                            const struct DlgTeam *team,
                            const struct DlgManager *manager,
                            const char *regime,
                            uint64_t seed,
                            struct DlgEvalStats *out);

// Solves the exact model of `team` on `map` by value iteration and writes
// `Q*` row-major as `[state][agent]`, states in the map's free-cell order
// (row-major over the grid). `*needed` always receives the table length;
// when `len` is smaller the call returns `BufferTooSmall` and writes nothing
// else. `sweeps` may be null.
//
// # Safety
// Handles must be live; `q_out` must hold `len` doubles; `needed` writable.
enum DlgStatus dlg_oracle_solve(const struct DlgMap *map,
                                const struct DlgTeam *team,
                                double gamma,
                                double tolerance,
                                double *q_out,
                                size_t len,
                                size_t *needed,
                                size_t *sweeps);

// Runs the configured sweep and returns the results CSV as a newly
// allocated string, released with [`dlg_string_free`].
//
// # Safety
// `config` must be live; `out` writable.
enum DlgStatus dlg_sweep_csv(const struct DlgConfig *config, char **out);

// # Safety
// `s` must come from this library and not be used again.
void dlg_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DELEGATION_H */
