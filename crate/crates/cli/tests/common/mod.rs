#![allow(dead_code)]

use std::collections::HashMap;
use std::ffi::OsStr;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

/// Small corpus that trains in well under a second per epoch.
pub const SMALL_CORPUS: &str = "num_diagnoses = 10\nnum_admissions = 400\nmin_len = 20\nmax_len = 60\n";
pub const FAST_TRAIN: &str = "max_epochs = 3\n";

pub fn taskhyper<I, S>(cwd: &Path, args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<OsStr>,
{
    Command::new(env!("CARGO_BIN_EXE_taskhyper"))
        .current_dir(cwd)
        .env_remove("TASKHYPER_OUT")
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn taskhyper_ok<I, S>(cwd: &Path, args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<OsStr>,
{
    let out = taskhyper(cwd, args);
    assert!(
        out.status.success(),
        "exit {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

/// Generates a corpus from `config` (TOML) into `dir/name`.
pub fn synth(dir: &Path, name: &str, config: &str) -> PathBuf {
    let cfg = write(dir, &format!("{name}.toml"), config);
    let out = dir.join(name);
    taskhyper_ok(
        dir,
        [
            OsStr::new("synth"),
            "--config".as_ref(),
            cfg.as_os_str(),
            "--out".as_ref(),
            out.as_os_str(),
        ],
    );
    out
}

/// Header-keyed rows of a comma-separated file without quoting.
pub fn read_csv(path: &Path) -> Vec<HashMap<String, String>> {
    let text = fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().expect("header").split(',').collect();
    lines
        .map(|l| {
            header
                .iter()
                .map(|h| h.to_string())
                .zip(l.split(',').map(String::from))
                .collect()
        })
        .collect()
}

pub fn num(row: &HashMap<String, String>, key: &str) -> f64 {
    row[key].parse().unwrap_or_else(|_| panic!("{key} = {:?}", row[key]))
}

pub fn row<'a>(rows: &'a [HashMap<String, String>], task: &str, mode: &str) -> &'a HashMap<String, String> {
    rows.iter()
        .find(|r| r["task"] == task && r["mode"] == mode)
        .unwrap_or_else(|| panic!("no row {task}/{mode}"))
}
