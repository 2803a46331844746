//! C ABI over the `delegation` library.
//!
//! Every object crosses the boundary as an opaque pointer created by a
//! `dlg_*_new`/`dlg_*_train` call and released with the matching `dlg_*_free`.
//! Fallible calls return a [`DlgStatus`]; on failure the message is available
//! from [`dlg_last_error`] on the same thread until the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use delegation::config::{CostRegime, ExperimentConfig};
use delegation::gridworld::{load_map, load_map_source, Cell, GridMap};
use delegation::manager::{ManagerQTable, Team};
use delegation::oracle::{value_iteration, ExactModel};
use delegation::reward::reward_fn;
use delegation::sweep::{evaluate_team, run_sweep, train_team, train_team_manager, write_csv};
use delegation::Error;

/// Status codes returned by fallible calls.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DlgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    InvalidLabel = 4,
    InvalidMap = 5,
    Incompatible = 6,
    NonConvergence = 7,
    ModelTooLarge = 8,
    BufferTooSmall = 9,
    Io = 10,
    OutOfRange = 11,
    Panic = 12,
    Other = 13,
}

pub struct DlgConfig(ExperimentConfig);
pub struct DlgMap(GridMap);
pub struct DlgTeam(Team);
pub struct DlgManager(ManagerQTable);

/// Evaluation statistics for a two-agent team.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DlgEvalStats {
    pub episodes: usize,
    pub mean_reward: f64,
    pub std_reward: f64,
    pub goal_rate: f64,
    pub collision_rate: f64,
    pub util_d1: f64,
    pub util_d2: f64,
    pub mean_delegations: f64,
    pub mean_atomic_steps: f64,
    pub timeouts: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(DlgStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Config(_)
            | Error::InvalidErrorLevel(_)
            | Error::InvalidStepSize(_)
            | Error::EmptyInput(_) => DlgStatus::Config,
            Error::InvalidLabel(_) => DlgStatus::InvalidLabel,
            Error::MapParse { .. } | Error::InvalidMap(_) => DlgStatus::InvalidMap,
            Error::Incompatible(_) => DlgStatus::Incompatible,
            Error::NonConvergence { .. } => DlgStatus::NonConvergence,
            Error::ModelTooLarge { .. } => DlgStatus::ModelTooLarge,
            Error::Io(_) => DlgStatus::Io,
            Error::ShapeMismatch { .. }
            | Error::PersistMismatch(_)
            | Error::Json(_)
            | Error::Csv(_) => DlgStatus::Other,
        };
        Failure(status, e.to_string())
    }
}

fn null(name: &str) -> Failure {
    Failure(DlgStatus::NullPointer, format!("{name} is null"))
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DlgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DlgStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {message}"));
            DlgStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(DlgStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

unsafe fn obj<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(name))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn regime_arg(p: *const c_char) -> Result<CostRegime, Failure> {
    Ok(str_arg(p, "regime")?.parse::<CostRegime>()?)
}

/// Message of the last failing call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dlg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn dlg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Manager reward for one delegation.
#[no_mangle]
pub extern "C" fn dlg_reward(
    cost: f64,
    reached_goal: bool,
    collided: bool,
    timed_out: bool,
) -> f64 {
    reward_fn(cost, reached_goal, collided, timed_out)
}

/// Default configuration.
///
/// # Safety
/// `out` must be a valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn dlg_config_new_default(out: *mut *mut DlgConfig) -> DlgStatus {
    guard(|| put(out, DlgConfig(ExperimentConfig::default())))
}

/// Configuration parsed from TOML text. Relative map paths resolve against
/// the working directory.
///
/// # Safety
/// `toml` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dlg_config_new_from_toml(
    toml: *const c_char,
    out: *mut *mut DlgConfig,
) -> DlgStatus {
    guard(|| {
        let text = str_arg(toml, "toml")?;
        put(out, DlgConfig(ExperimentConfig::from_toml(text)?))
    })
}

/// # Safety
/// `config` must come from a `dlg_config_new_*` call and not be used again.
#[no_mangle]
pub unsafe extern "C" fn dlg_config_free(config: *mut DlgConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Map parsed from its text form (`#` wall, `.` free, `S` start, `G` goal).
///
/// # Safety
/// `text` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dlg_map_new_from_text(
    text: *const c_char,
    out: *mut *mut DlgMap,
) -> DlgStatus {
    guard(|| put(out, DlgMap(load_map(str_arg(text, "text")?)?)))
}

/// Map from a file path or `builtin:<name>`.
///
/// # Safety
/// `source` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dlg_map_new_from_source(
    source: *const c_char,
    out: *mut *mut DlgMap,
) -> DlgStatus {
    guard(|| put(out, DlgMap(load_map_source(str_arg(source, "source")?)?)))
}

/// Number of free cells, goal included.
///
/// # Safety
/// `map` must be a live map handle or null.
#[no_mangle]
pub unsafe extern "C" fn dlg_map_num_states(map: *const DlgMap) -> usize {
    map.as_ref().map_or(0, |m| m.0.num_states())
}

/// # Safety
/// `map` must come from a `dlg_map_new_*` call and not be used again.
#[no_mangle]
pub unsafe extern "C" fn dlg_map_free(map: *mut DlgMap) {
    if !map.is_null() {
        drop(Box::from_raw(map));
    }
}

/// Pre-trains the agents of `label` (e.g. `"1H-2L"`) with costs from
/// `regime` (e.g. `"1-4-7"`).
///
/// # Safety
/// Handles must be live; strings nul-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dlg_team_train(
    config: *const DlgConfig,
    map: *const DlgMap,
    label: *const c_char,
    regime: *const c_char,
    seed: u64,
    out: *mut *mut DlgTeam,
) -> DlgStatus {
    guard(|| {
        let config = &obj(config, "config")?.0;
        let map = &obj(map, "map")?.0;
        let label = str_arg(label, "label")?;
        let regime = regime_arg(regime)?;
        put(out, DlgTeam(train_team(config, map, label, &regime, seed)?))
    })
}

/// Number of agents in the team.
///
/// # Safety
/// `team` must be a live team handle or null.
#[no_mangle]
pub unsafe extern "C" fn dlg_team_len(team: *const DlgTeam) -> usize {
    team.as_ref().map_or(0, |t| t.0.len())
}

/// # Safety
/// `team` must come from `dlg_team_train` and not be used again.
#[no_mangle]
pub unsafe extern "C" fn dlg_team_free(team: *mut DlgTeam) {
    if !team.is_null() {
        drop(Box::from_raw(team));
    }
}

/// Trains a manager table for `team` on `map`.
///
/// # Safety
/// Handles must be live; `regime` nul-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dlg_manager_train(
    config: *const DlgConfig,
    map: *const DlgMap,
    team: *const DlgTeam,
    regime: *const c_char,
    seed: u64,
    out: *mut *mut DlgManager,
) -> DlgStatus {
    guard(|| {
        let config = &obj(config, "config")?.0;
        let map = &obj(map, "map")?.0;
        let team = &obj(team, "team")?.0;
        let regime = regime_arg(regime)?;
        put(
            out,
            DlgManager(train_team_manager(config, map, team, &regime, seed)?),
        )
    })
}

fn table_cell(table: &ManagerQTable, col: i32, row: i32) -> Result<Cell, Failure> {
    let cell = Cell::new(col, row);
    if table
        .cells()
        .binary_search_by(|c| (c.row, c.col).cmp(&(row, col)))
        .is_err()
    {
        return Err(Failure(
            DlgStatus::OutOfRange,
            format!("{cell} is not a state of this table"),
        ));
    }
    Ok(cell)
}

/// Learned value of delegating to `agent` at cell `(col, row)`.
///
/// # Safety
/// `manager` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dlg_manager_q(
    manager: *const DlgManager,
    col: i32,
    row: i32,
    agent: usize,
    out: *mut f64,
) -> DlgStatus {
    guard(|| {
        let table = &obj(manager, "manager")?.0;
        let cell = table_cell(table, col, row)?;
        if agent >= table.n_agents() {
            return Err(Failure(
                DlgStatus::OutOfRange,
                format!("agent {agent} out of range"),
            ));
        }
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = table.get(cell, agent);
        Ok(())
    })
}

/// Greedy delegation at cell `(col, row)`, ties to the lower index.
///
/// # Safety
/// `manager` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dlg_manager_greedy(
    manager: *const DlgManager,
    col: i32,
    row: i32,
    out: *mut usize,
) -> DlgStatus {
    guard(|| {
        let table = &obj(manager, "manager")?.0;
        let cell = table_cell(table, col, row)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = table.greedy(cell);
        Ok(())
    })
}

/// # Safety
/// `manager` must come from `dlg_manager_train` and not be used again.
#[no_mangle]
pub unsafe extern "C" fn dlg_manager_free(manager: *mut DlgManager) {
    if !manager.is_null() {
        drop(Box::from_raw(manager));
    }
}

/// Evaluates the greedy `manager`, or the uniform random manager when
/// `manager` is null, over `config`'s evaluation episodes.
///
/// # Safety
/// Handles must be live (`manager` may be null); `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dlg_evaluate(
    config: *const DlgConfig,
    map: *const DlgMap,
    team: *const DlgTeam,
    manager: *const DlgManager,
    regime: *const c_char,
    seed: u64,
    out: *mut DlgEvalStats,
) -> DlgStatus {
    guard(|| {
        let config = &obj(config, "config")?.0;
        let map = &obj(map, "map")?.0;
        let team = &obj(team, "team")?.0;
        let table = manager.as_ref().map(|m| &m.0);
        let regime = regime_arg(regime)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let s = evaluate_team(config, map, team, table, &regime, seed)?;
        let util = |i: usize| s.utilization.get(i).copied().unwrap_or(0.0);
        *out = DlgEvalStats {
            episodes: s.episodes,
            mean_reward: s.mean_reward,
            std_reward: s.std_reward,
            goal_rate: s.goal_rate,
            collision_rate: s.collision_rate,
            util_d1: util(0),
            util_d2: util(1),
            mean_delegations: s.mean_delegations,
            mean_atomic_steps: s.mean_atomic_steps,
            timeouts: s.timeouts,
        };
        Ok(())
    })
}

/// Solves the exact model of `team` on `map` by value iteration and writes
/// `Q*` row-major as `[state][agent]`, states in the map's free-cell order
/// (row-major over the grid). `*needed` always receives the table length;
/// when `len` is smaller the call returns `BufferTooSmall` and writes nothing
/// else. `sweeps` may be null.
///
/// # Safety
/// Handles must be live; `q_out` must hold `len` doubles; `needed` writable.
#[no_mangle]
pub unsafe extern "C" fn dlg_oracle_solve(
    map: *const DlgMap,
    team: *const DlgTeam,
    gamma: f64,
    tolerance: f64,
    q_out: *mut f64,
    len: usize,
    needed: *mut usize,
    sweeps: *mut usize,
) -> DlgStatus {
    guard(|| {
        let map = &obj(map, "map")?.0;
        let team = &obj(team, "team")?.0;
        let needed = needed.as_mut().ok_or_else(|| null("needed"))?;
        let model = ExactModel::build(team, map, gamma)?;
        *needed = model.table_len();
        if len < model.table_len() {
            return Err(Failure(
                DlgStatus::BufferTooSmall,
                format!("buffer holds {len} values, {} needed", model.table_len()),
            ));
        }
        if q_out.is_null() {
            return Err(null("q_out"));
        }
        let sol = value_iteration(&model, tolerance)?;
        // The model enumerates states in free-cell order, as built above.
        std::slice::from_raw_parts_mut(q_out, sol.q.len()).copy_from_slice(&sol.q);
        if let Some(s) = sweeps.as_mut() {
            *s = sol.sweeps;
        }
        Ok(())
    })
}

/// Runs the configured sweep and returns the results CSV as a newly
/// allocated string, released with [`dlg_string_free`].
///
/// # Safety
/// `config` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dlg_sweep_csv(
    config: *const DlgConfig,
    out: *mut *mut c_char,
) -> DlgStatus {
    guard(|| {
        let config = &obj(config, "config")?.0;
        if out.is_null() {
            return Err(null("out"));
        }
        let mut buf = Vec::new();
        write_csv(&run_sweep(config)?, &mut buf)?;
        let text = CString::new(buf).map_err(|e| Failure(DlgStatus::Other, e.to_string()))?;
        *out = text.into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library and not be used again.
#[no_mangle]
pub unsafe extern "C" fn dlg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
