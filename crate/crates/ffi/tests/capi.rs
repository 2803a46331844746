use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use delegation_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = dlg_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

const QUICK: &str = "map = \"builtin:open3\"\ncompositions = [\"1N-2N\"]\nseeds = [0]\neval_episodes = 50\n[agent]\nepisodes = 2000\n[manager]\nepisodes = 2000\n";

struct Fixture {
    config: *mut DlgConfig,
    map: *mut DlgMap,
    team: *mut DlgTeam,
}

impl Fixture {
    fn new(label: &str) -> Self {
        let mut config = ptr::null_mut();
        let mut map = ptr::null_mut();
        let mut team = ptr::null_mut();
        unsafe {
            assert_eq!(
                dlg_config_new_from_toml(c(QUICK).as_ptr(), &mut config),
                DlgStatus::Ok
            );
            assert_eq!(
                dlg_map_new_from_source(c("builtin:open3").as_ptr(), &mut map),
                DlgStatus::Ok
            );
            let status = dlg_team_train(
                config,
                map,
                c(label).as_ptr(),
                c("1-4-7").as_ptr(),
                0,
                &mut team,
            );
            assert_eq!(status, DlgStatus::Ok, "{}", last_error());
        }
        Self { config, map, team }
    }
}

impl Drop for Fixture {
    fn drop(&mut self) {
        unsafe {
            dlg_team_free(self.team);
            dlg_map_free(self.map);
            dlg_config_free(self.config);
        }
    }
}

#[test]
fn reward_matches_the_four_cases() {
    assert_eq!(dlg_reward(4.0, true, false, false), 96.0);
    assert_eq!(dlg_reward(0.0, false, false, false), -1.0);
    assert_eq!(dlg_reward(7.0, false, true, false), -17.0);
    assert_eq!(dlg_reward(1.0, false, true, true), -101.0);
}

#[test]
fn version_is_a_static_string() {
    let v = unsafe { CStr::from_ptr(dlg_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn errors_map_to_status_codes() {
    let mut config = ptr::null_mut();
    unsafe {
        assert_eq!(
            dlg_config_new_from_toml(ptr::null(), &mut config),
            DlgStatus::NullPointer
        );
        assert!(last_error().contains("toml"));
        assert_eq!(
            dlg_config_new_from_toml(c("mapp = 1").as_ptr(), &mut config),
            DlgStatus::Config
        );
        assert!(config.is_null());
        let bad_utf8 = [0xffu8, 0];
        assert_eq!(
            dlg_config_new_from_toml(bad_utf8.as_ptr().cast(), &mut config),
            DlgStatus::InvalidUtf8
        );
        let mut map = ptr::null_mut();
        assert_eq!(
            dlg_map_new_from_text(c("S.\n.X").as_ptr(), &mut map),
            DlgStatus::InvalidMap
        );
        assert_eq!(
            dlg_map_new_from_text(c("S.\n.G").as_ptr(), &mut map),
            DlgStatus::Ok
        );
        assert_eq!(dlg_map_num_states(map), 4);
        assert_eq!(dlg_map_num_states(ptr::null()), 0);

        assert_eq!(dlg_config_new_default(&mut config), DlgStatus::Ok);
        let mut team = ptr::null_mut();
        let status = dlg_team_train(
            config,
            map,
            c("9Z-1N").as_ptr(),
            c("1-4-7").as_ptr(),
            0,
            &mut team,
        );
        assert_eq!(status, DlgStatus::InvalidLabel);
        assert!(last_error().contains("9Z-1N"));
        let status = dlg_team_train(
            config,
            map,
            c("1N-2N").as_ptr(),
            c("1-x").as_ptr(),
            0,
            &mut team,
        );
        assert_eq!(status, DlgStatus::Config);
        assert!(team.is_null());
        dlg_map_free(map);
        dlg_config_free(config);
        dlg_config_free(ptr::null_mut());
    }
}

#[test]
fn train_evaluate_and_query() {
    let f = Fixture::new("1N-2N");
    unsafe {
        assert_eq!(dlg_team_len(f.team), 2);
        let mut manager = ptr::null_mut();
        assert_eq!(
            dlg_manager_train(
                f.config,
                f.map,
                f.team,
                c("1-4-7").as_ptr(),
                0,
                &mut manager
            ),
            DlgStatus::Ok
        );
        let mut trained = DlgEvalStats::default();
        let mut random = DlgEvalStats::default();
        let regime = c("1-4-7");
        assert_eq!(
            dlg_evaluate(
                f.config,
                f.map,
                f.team,
                manager,
                regime.as_ptr(),
                0,
                &mut trained
            ),
            DlgStatus::Ok
        );
        assert_eq!(
            dlg_evaluate(
                f.config,
                f.map,
                f.team,
                ptr::null(),
                regime.as_ptr(),
                0,
                &mut random
            ),
            DlgStatus::Ok
        );
        assert_eq!(trained.episodes, 50);
        assert!((trained.util_d1 + trained.util_d2 - 1.0).abs() < 1e-12);
        assert!(trained.mean_reward >= random.mean_reward);

        let (mut q0, mut q1, mut d) = (0.0, 0.0, 9usize);
        assert_eq!(dlg_manager_q(manager, 0, 0, 0, &mut q0), DlgStatus::Ok);
        assert_eq!(dlg_manager_q(manager, 0, 0, 1, &mut q1), DlgStatus::Ok);
        assert_eq!(dlg_manager_greedy(manager, 0, 0, &mut d), DlgStatus::Ok);
        assert_eq!(d, if q1 > q0 { 1 } else { 0 });
        assert_eq!(
            dlg_manager_q(manager, 0, 0, 2, &mut q0),
            DlgStatus::OutOfRange
        );
        assert_eq!(
            dlg_manager_greedy(manager, 7, 7, &mut d),
            DlgStatus::OutOfRange
        );
        dlg_manager_free(manager);
    }
}

#[test]
fn oracle_solve_reports_size_and_fills_buffer() {
    let f = Fixture::new("1N-2N");
    unsafe {
        let mut needed = 0;
        let status = dlg_oracle_solve(
            f.map,
            f.team,
            0.95,
            1e-10,
            ptr::null_mut(),
            0,
            &mut needed,
            ptr::null_mut(),
        );
        assert_eq!(status, DlgStatus::BufferTooSmall);
        assert_eq!(needed, 9 * 2);
        let mut q = vec![f64::NAN; needed];
        let mut sweeps = 0;
        let status = dlg_oracle_solve(
            f.map,
            f.team,
            0.95,
            1e-10,
            q.as_mut_ptr(),
            q.len(),
            &mut needed,
            &mut sweeps,
        );
        assert_eq!(status, DlgStatus::Ok);
        assert!(sweeps > 0);
        assert!(q.iter().all(|v| v.is_finite()));
        // Goal at (2, 2) is the last free cell; its row is zero.
        assert_eq!(&q[16..], &[0.0, 0.0]);
        // From (2, 1) a one-step delegation reaches the goal: 100 - 1.
        assert_eq!(q[5 * 2], 99.0);
    }
}

#[test]
fn sweep_csv_round_trip() {
    let f = Fixture::new("1N-2N");
    unsafe {
        let mut out = ptr::null_mut();
        assert_eq!(dlg_sweep_csv(f.config, &mut out), DlgStatus::Ok);
        let text = CStr::from_ptr(out).to_str().unwrap().to_owned();
        dlg_string_free(out);
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            delegation::sweep::CSV_HEADER.join(",")
        );
        assert_eq!(lines.count(), 4);
    }
}

#[test]
fn header_declares_the_api_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/delegation.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "dlg_last_error",
        "dlg_config_new_from_toml",
        "dlg_team_train",
        "dlg_manager_train",
        "dlg_evaluate",
        "dlg_oracle_solve",
        "dlg_sweep_csv",
        "dlg_string_free",
        "DLG_STATUS_BUFFER_TOO_SMALL",
        "typedef struct DlgTeam DlgTeam;",
    ] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let Ok(status) = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-x", "c"])
        .arg(&header)
        .status()
    else {
        eprintln!("{cc} not available; header syntax not checked");
        return;
    };
    assert!(status.success(), "header does not compile as C99");
}
