use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lbsn_core::identity::{PasswordHasher, RegistrationForm};
use lbsn_server::app::{self, AppError, SMS_OUTBOX};
use lbsn_server::client::{outbox_code, Client, ClientError, SessionFile};
use lbsn_server::config::Config;
use lbsn_server::demo;
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "lbsn", version, about = "Location-based social networking server and client")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArg {
    /// Configuration file (`key = value` lines). Defaults apply without one.
    #[arg(long, short)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<Config, AppError> {
        match &self.config {
            Some(p) => Ok(Config::load(p)?),
            None => Ok(Config::default()),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP server.
    Serve(ConfigArg),
    /// Offline maintenance on a stopped server's data directory.
    Admin {
        #[command(flatten)]
        config: ConfigArg,
        #[command(subcommand)]
        action: AdminCmd,
    },
    /// Call a running server.
    Client(ClientCli),
    /// Seed the walkthrough fixture into the data directory.
    Demo(ConfigArg),
}

#[derive(Subcommand)]
enum AdminCmd {
    /// Grant administrator rights, creating the account when a password is given.
    CreateAdmin {
        username: String,
        #[arg(long)]
        password: Option<String>,
        #[arg(long, default_value = "10000000000")]
        phone: String,
        #[arg(long)]
        email: Option<String>,
    },
    /// Write a snapshot and empty the log.
    Checkpoint,
}

#[derive(Args)]
struct ClientCli {
    /// Server base URL.
    #[arg(long, env = "LBSN_SERVER", default_value = "http://127.0.0.1:8080")]
    server: String,
    /// Where `login` keeps the session token.
    #[arg(long, env = "LBSN_SESSION", default_value = ".lbsn-session")]
    session: PathBuf,
    #[command(subcommand)]
    cmd: ClientCmd,
}

#[derive(Subcommand)]
enum ClientCmd {
    Register {
        username: String,
        #[arg(long)]
        password: String,
        #[arg(long)]
        nickname: Option<String>,
        #[arg(long)]
        email: String,
        #[arg(long)]
        phone: String,
        #[arg(long, value_delimiter = ',')]
        interests: Vec<String>,
        #[arg(long)]
        city: Option<String>,
        #[arg(long)]
        country: Option<String>,
    },
    Activate {
        username: String,
        /// Code from the SMS; omit together with --outbox to read it from the file.
        code: Option<String>,
        /// Server's SMS outbox file, for local testing.
        #[arg(long)]
        outbox: Option<PathBuf>,
        #[arg(long)]
        phone: Option<String>,
    },
    Login {
        username: String,
        password: String,
    },
    Logout,
    Recover {
        username: String,
    },
    Redeem {
        username: String,
        code: String,
        new_password: String,
    },
    Profile {
        username: Option<String>,
    },
    Geocode {
        query: String,
    },
    /// Submit a position: a JSON measurement report, a GPS reading or a city.
    Locate {
        /// File holding a position report (ranges, tdoa, proximity, gps).
        #[arg(long, conflicts_with_all = ["gps", "city"])]
        report: Option<PathBuf>,
        /// `LAT,LON[,ACCURACY]`.
        #[arg(long, conflicts_with = "city")]
        gps: Option<String>,
        /// "City, Country"; stores the city centroid.
        #[arg(long)]
        city: Option<String>,
    },
    Nearby {
        #[arg(long, default_value_t = 1000.0)]
        radius: f64,
        #[arg(long)]
        friends_only: bool,
    },
    Knn {
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    Friends,
    Requests,
    Friend {
        #[command(subcommand)]
        action: FriendCmd,
    },
    Heartbeat,
    Chat {
        to: String,
        text: String,
    },
    History {
        peer: String,
        #[arg(long, default_value_t = 20)]
        limit: usize,
    },
    Events {
        #[arg(long, default_value_t = 0)]
        since: u64,
        #[arg(long)]
        timeout_ms: Option<u64>,
    },
    Mail {
        #[command(subcommand)]
        action: MailCmd,
    },
    Recommend {
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    /// Any endpoint: `call GET /feed` or `call POST /blog '{"title":"x"}'`.
    Call {
        method: String,
        path: String,
        body: Option<String>,
    },
}

#[derive(Subcommand)]
enum FriendCmd {
    Add { username: String },
    Accept { username: String },
    Decline { username: String },
    Remove { username: String },
}

#[derive(Subcommand)]
enum MailCmd {
    Send { to: String, subject: String, body: String },
    List,
    Read { id: u64 },
}

fn main() -> ExitCode {
    let level = std::env::var("LBSN_LOG")
        .ok()
        .and_then(|v| v.parse::<tracing::Level>().ok())
        .unwrap_or(tracing::Level::INFO);
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match cli.command {
        Command::Serve(c) => fail_on(run_serve(c)),
        Command::Admin { config, action } => fail_on(run_admin(config, action)),
        Command::Demo(c) => fail_on(run_demo(c)),
        Command::Client(c) => run_client(c),
    }
}

fn fail_on(r: Result<(), AppError>) -> ExitCode {
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run_serve(c: ConfigArg) -> Result<(), AppError> {
    let cfg = c.load()?;
    tokio::runtime::Runtime::new()?.block_on(app::serve(cfg))
}

fn run_admin(c: ConfigArg, action: AdminCmd) -> Result<(), AppError> {
    let cfg = c.load()?;
    let (svc, _) = app::open_service(&cfg, PasswordHasher::default())?;
    match action {
        AdminCmd::CreateAdmin {
            username,
            password,
            phone,
            email,
        } => {
            let exists = svc.read().identity().lookup(&username).is_some();
            if !exists {
                let password = password.ok_or(lbsn_core::Error::UnknownUser(username.clone()))?;
                svc.register(RegistrationForm {
                    username: username.clone(),
                    password,
                    nickname: username.clone(),
                    email: email.unwrap_or_else(|| format!("{username}@localhost")),
                    phone: phone.clone(),
                    ..Default::default()
                })?;
                let code = outbox_code(&cfg.data_dir.join(SMS_OUTBOX), &phone).ok_or(lbsn_core::Error::BadCode)?;
                svc.activate(&username, &code)?;
            }
            let id = svc.set_admin(&username, true)?;
            println!("{username} (user {id}) is an administrator");
        }
        AdminCmd::Checkpoint => {
            svc.checkpoint()?;
            println!("snapshot written");
        }
    }
    Ok(())
}

fn run_demo(c: ConfigArg) -> Result<(), AppError> {
    let cfg = c.load()?;
    let (svc, _) = app::open_service(&cfg, PasswordHasher::default())?;
    if demo::seed(&svc, &cfg)? {
        svc.checkpoint()?;
        println!("demo data written to {}", cfg.data_dir.display());
        println!(
            "users: {} (password {})",
            demo::USERS.iter().map(|u| u.username).collect::<Vec<_>>().join(", "),
            demo::DEMO_PASSWORD
        );
    } else {
        println!("demo data already present in {}", cfg.data_dir.display());
    }
    Ok(())
}

fn run_client(c: ClientCli) -> ExitCode {
    let saved = SessionFile::load(&c.session);
    let token = saved.as_ref().map(|s| s.token.clone());
    let client = Client::new(&c.server).with_token(token);
    match client_cmd(&client, &c, c.cmd_ref()) {
        Ok(v) => {
            // A closed pipe (e.g. `| head`) is not an error worth a panic.
            let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&v).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(2)
        }
    }
}

impl ClientCli {
    fn cmd_ref(&self) -> &ClientCmd {
        &self.cmd
    }
}

fn parse_gps(s: &str) -> Result<Value, ClientError> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| ClientError::Decode(format!("--gps: {e}")))?;
    match parts[..] {
        [lat, lon] => Ok(json!({ "lat": lat, "lon": lon, "accuracy": 10.0 })),
        [lat, lon, accuracy] => Ok(json!({ "lat": lat, "lon": lon, "accuracy": accuracy })),
        _ => Err(ClientError::Decode("--gps expects LAT,LON[,ACCURACY]".into())),
    }
}

fn enc(s: &str) -> String {
    let mut out = String::new();
    for b in s.bytes() {
        if b.is_ascii_alphanumeric() || b"-_.~".contains(&b) {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

fn client_cmd(client: &Client, c: &ClientCli, cmd: &ClientCmd) -> Result<Value, ClientError> {
    use ClientCmd::*;
    match cmd {
        Register {
            username,
            password,
            nickname,
            email,
            phone,
            interests,
            city,
            country,
        } => client.post(
            "/register",
            json!({
                "username": username,
                "password": password,
                "nickname": nickname.clone().unwrap_or_else(|| username.clone()),
                "email": email,
                "phone": phone,
                "interests": interests,
                "city": city,
                "country": country,
            }),
        ),
        Activate {
            username,
            code,
            outbox,
            phone,
        } => {
            let code = match (code, outbox, phone) {
                (Some(c), _, _) => c.clone(),
                (None, Some(path), Some(phone)) => outbox_code(path, phone)
                    .ok_or_else(|| ClientError::Decode(format!("no code for {phone} in {}", path.display())))?,
                _ => return Err(ClientError::Decode("give CODE or --outbox with --phone".into())),
            };
            client.post("/activate", json!({ "username": username, "code": code }))
        }
        Login { username, password } => {
            let session = client.post("/login", json!({ "username": username, "password": password }))?;
            let token = session["token"].as_str().unwrap_or_default().to_string();
            SessionFile {
                server: c.server.clone(),
                username: username.clone(),
                token,
            }
            .save(&c.session)
            .map_err(|e| ClientError::Transport(format!("saving session: {e}")))?;
            Ok(session)
        }
        Logout => {
            let v = client.post("/logout", json!({}))?;
            let _ = std::fs::remove_file(&c.session);
            Ok(v)
        }
        Recover { username } => client.post("/recover", json!({ "username": username })),
        Redeem {
            username,
            code,
            new_password,
        } => client.post(
            "/redeem",
            json!({ "username": username, "code": code, "new_password": new_password }),
        ),
        Profile { username: None } => client.get("/profile"),
        Profile { username: Some(u) } => client.get(&format!("/profile/{}", enc(u))),
        Geocode { query } => client.get(&format!("/geocode?q={}", enc(query))),
        Locate { report, gps, city } => {
            let body = if let Some(path) = report {
                let text = std::fs::read_to_string(path).map_err(|e| ClientError::Decode(e.to_string()))?;
                serde_json::from_str(&text).map_err(|e| ClientError::Decode(e.to_string()))?
            } else if let Some(g) = gps {
                json!({ "gps": parse_gps(g)? })
            } else if let Some(city) = city {
                let place = client.get(&format!("/geocode?q={}", enc(city)))?;
                let p = &place["position"];
                json!({ "gps": { "lat": p["lat"], "lon": p["lon"], "accuracy": 5000.0 } })
            } else {
                return Err(ClientError::Decode("give --report, --gps or --city".into()));
            };
            client.post("/position", body)
        }
        Nearby { radius, friends_only } => client.get(&format!("/nearby?radius={radius}&friends_only={friends_only}")),
        Knn { k } => client.get(&format!("/knn?k={k}")),
        Friends => client.get("/friends"),
        Requests => client.get("/requests"),
        Friend { action } => match action {
            FriendCmd::Add { username } => client.post("/friends", json!({ "username": username })),
            FriendCmd::Accept { username } => client.post("/requests", json!({ "username": username, "accept": true })),
            FriendCmd::Decline { username } => {
                client.post("/requests", json!({ "username": username, "accept": false }))
            }
            FriendCmd::Remove { username } => client.call("DELETE", &format!("/friends/{}", enc(username)), None),
        },
        Heartbeat => client.post("/heartbeat", json!({})),
        Chat { to, text } => client.post("/chat", json!({ "to": to, "body": { "kind": "text", "value": text } })),
        History { peer, limit } => client.get(&format!("/chat/history?peer={}&limit={limit}", enc(peer))),
        Events { since, timeout_ms } => {
            let mut path = format!("/events?since={since}");
            if let Some(t) = timeout_ms {
                path.push_str(&format!("&timeout_ms={t}"));
            }
            client.get(&path)
        }
        Mail { action } => match action {
            MailCmd::Send { to, subject, body } => {
                client.post("/mail", json!({ "to": to, "subject": subject, "body": body }))
            }
            MailCmd::List => client.get("/mail"),
            MailCmd::Read { id } => client.get(&format!("/mail/{id}")),
        },
        Recommend { k } => client.get(&format!("/recommend?k={k}")),
        Call { method, path, body } => {
            let body = body
                .as_deref()
                .map(serde_json::from_str::<Value>)
                .transpose()
                .map_err(|e| ClientError::Decode(format!("body: {e}")))?;
            client.call(method, path, body.as_ref())
        }
    }
}
