#![allow(dead_code)]

pub mod cli;
pub mod workload;

use std::path::PathBuf;

use lbsn_core::identity::PasswordHasher;
use lbsn_server::app::{self, Running, SMS_OUTBOX};
use lbsn_server::client::{outbox_code, Client};
use lbsn_server::config::Config;
use serde_json::{json, Value};
use tempfile::TempDir;
use tokio::runtime::Runtime;

pub struct TestServer {
    pub rt: Runtime,
    pub running: Option<Running>,
    pub dir: TempDir,
    pub cfg: Config,
}

impl TestServer {
    pub fn start() -> TestServer {
        Self::start_with(TempDir::new().unwrap(), |_| {})
    }

    pub fn start_with(dir: TempDir, tweak: impl FnOnce(&mut Config)) -> TestServer {
        let mut cfg = Config {
            listen_addr: "127.0.0.1:0".parse().unwrap(),
            data_dir: dir.path().join("data"),
            ..Config::default()
        };
        tweak(&mut cfg);
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .unwrap();
        let running = rt.block_on(app::start(&cfg, PasswordHasher::insecure_fast())).unwrap();
        TestServer {
            rt,
            running: Some(running),
            dir,
            cfg,
        }
    }

    pub fn url(&self) -> String {
        self.running.as_ref().unwrap().url()
    }

    pub fn client(&self) -> Client {
        Client::new(&self.url())
    }

    pub fn outbox(&self) -> PathBuf {
        self.cfg.data_dir.join(SMS_OUTBOX)
    }

    pub fn register(&self, name: &str, phone: &str) -> Value {
        self.client()
            .post(
                "/register",
                json!({
                    "username": name,
                    "password": format!("{name}-password"),
                    "nickname": name.to_uppercase(),
                    "email": format!("{name}@example.org"),
                    "phone": phone,
                    "city": "Dalian",
                    "country": "China",
                    "interests": ["hiking"],
                }),
            )
            .unwrap()
    }

    /// Registers, activates and logs in; returns an authenticated client.
    pub fn signup(&self, name: &str, phone: &str) -> Client {
        self.register(name, phone);
        let code = outbox_code(&self.outbox(), phone).unwrap();
        let c = self.client();
        c.post("/activate", json!({ "username": name, "code": code })).unwrap();
        self.login(name)
    }

    pub fn login(&self, name: &str) -> Client {
        let c = self.client();
        let s = c
            .post("/login", json!({ "username": name, "password": format!("{name}-password") }))
            .unwrap();
        c.with_token(Some(s["token"].as_str().unwrap().to_string()))
    }

    /// Stops the server and hands back its directory.
    pub fn stop(mut self) -> TempDir {
        let running = self.running.take().unwrap();
        self.rt.block_on(running.shutdown()).unwrap();
        self.dir
    }
}

pub fn befriend(a: &Client, b: &Client, b_name: &str, a_name: &str) {
    a.post("/friends", json!({ "username": b_name })).unwrap();
    b.post("/requests", json!({ "username": a_name, "accept": true })).unwrap();
}

pub fn gps(c: &Client, lat: f64, lon: f64) -> Value {
    c.post("/position", json!({ "gps": { "lat": lat, "lon": lon, "accuracy": 10.0 } }))
        .unwrap()
}
