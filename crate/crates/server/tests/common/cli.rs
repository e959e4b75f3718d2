//! Drives the `lbsn` binary: a `serve` child process plus client invocations.

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use serde_json::Value;
use tempfile::TempDir;

pub const BIN: &str = env!("CARGO_BIN_EXE_lbsn");

pub struct CliServer {
    pub child: Child,
    pub url: String,
    pub dir: TempDir,
    pub config: PathBuf,
}

impl CliServer {
    /// Writes a config, optionally seeds the demo fixture, then starts `serve`
    /// and waits for its `listening on` line.
    pub fn start(demo: bool) -> CliServer {
        let dir = TempDir::new().unwrap();
        let config = dir.path().join("lbsn.conf");
        std::fs::write(&config, "listen_addr = 127.0.0.1:0\ndata_dir = data\n").unwrap();
        if demo {
            let out = Command::new(BIN).args(["demo", "--config"]).arg(&config).output().unwrap();
            assert!(out.status.success(), "demo: {}", String::from_utf8_lossy(&out.stderr));
        }
        let mut child = Command::new(BIN)
            .args(["serve", "--config"])
            .arg(&config)
            .env("LBSN_LOG", "warn")
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        let addr = line.trim().strip_prefix("listening on ").expect("listening line").to_string();
        CliServer {
            child,
            url: format!("http://{addr}"),
            dir,
            config,
        }
    }

    pub fn outbox(&self) -> PathBuf {
        self.dir.path().join("data").join(lbsn_server::app::SMS_OUTBOX)
    }

    /// A client identity with its own session file.
    pub fn user(&self, name: &str) -> CliUser {
        CliUser {
            url: self.url.clone(),
            session: self.dir.path().join(format!("{name}.session")),
        }
    }
}

impl Drop for CliServer {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub struct CliUser {
    pub url: String,
    pub session: PathBuf,
}

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Run {
    pub fn json(&self) -> Value {
        serde_json::from_str(&self.stdout).unwrap_or_else(|e| panic!("{e}: {}", self.stdout))
    }

    /// `error.code` from the envelope printed on stderr.
    pub fn error_code(&self) -> Option<String> {
        let v: Value = serde_json::from_str(self.stderr.trim()).ok()?;
        v["error"]["code"].as_str().map(str::to_string)
    }

    pub fn error(&self) -> Value {
        serde_json::from_str(self.stderr.trim()).unwrap_or(Value::Null)
    }
}

impl CliUser {
    pub fn run(&self, args: &[&str]) -> Run {
        let out: Output = Command::new(BIN)
            .arg("client")
            .args(["--server", &self.url, "--session"])
            .arg(&self.session)
            .args(args)
            .env("LBSN_LOG", "error")
            .output()
            .unwrap();
        Run {
            code: out.status.code().unwrap_or(-1),
            stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
            stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
        }
    }

    pub fn ok(&self, args: &[&str]) -> Value {
        let r = self.run(args);
        assert_eq!(r.code, 0, "{args:?} failed: {}", r.stderr);
        r.json()
    }
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}
