#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

/// Settings small enough for a test to run the whole pipeline in seconds.
pub const SMALL_CONFIG: &str = r#"seed = 0

[demos]
count = 20

[online]
pretrain_steps = 200
total_env_steps = 2000
learning_starts = 300
reward_update_frequency = 1000
reward_updates_per_round = 5
eval_episodes = 5

[rwr]
epochs = 3

[eval]
episodes = 10
"#;

/// A scratch directory holding one run config.
pub struct Workspace {
    pub dir: tempfile::TempDir,
    pub config: PathBuf,
}

impl Workspace {
    pub fn new(config_text: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let config = dir.path().join("run.toml");
        std::fs::write(&config, config_text).unwrap();
        Self { dir, config }
    }

    pub fn path(&self, relative: &str) -> PathBuf {
        self.dir.path().join(relative)
    }

    /// Runs a subcommand against this workspace's config.
    pub fn run(&self, args: &[&str]) -> Output {
        self.run_with_env(args, &[])
    }

    pub fn run_with_env(&self, args: &[&str], vars: &[(&str, &str)]) -> Output {
        let mut command = progress();
        command.arg("--config").arg(&self.config).args(args);
        for (k, v) in vars {
            command.env(k, v);
        }
        command.output().unwrap()
    }

    /// Runs and asserts a zero exit status; returns stdout.
    pub fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "`{}` failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    pub fn read(&self, relative: &str) -> String {
        std::fs::read_to_string(self.path(relative)).unwrap()
    }
}

/// The binary with a clean environment for `PROGRESS_*` overrides.
pub fn progress() -> Command {
    let mut command = Command::new(env!("CARGO_BIN_EXE_progress"));
    for (key, _) in std::env::vars() {
        if key.starts_with("PROGRESS_") {
            command.env_remove(key);
        }
    }
    command
}

/// The `error[<category>]` tag of a failed run's stderr.
pub fn error_category(out: &Output) -> String {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr
        .lines()
        .find(|l| l.starts_with("error["))
        .unwrap_or_else(|| panic!("no error line in {stderr}"));
    line["error[".len()..line.find(']').unwrap()].to_string()
}

/// Number of `1` cells in a CSV column.
pub fn count_ones(csv: &str, column: &str) -> (usize, usize) {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let index = header.iter().position(|c| *c == column).unwrap();
    let mut rows = 0;
    let mut ones = 0;
    for line in lines {
        rows += 1;
        if line.split(',').nth(index) == Some("1") {
            ones += 1;
        }
    }
    (ones, rows)
}

pub fn exists(path: &Path) -> bool {
    path.is_file()
}
