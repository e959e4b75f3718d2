use std::collections::{BTreeMap, BTreeSet};

use lbsn_core::service::OPERATIONS;
use lbsn_core::Error;
use lbsn_server::api::{error_body, status_for, GATEWAY_OPERATIONS, ROUTES};
use lbsn_server::client::{Client, ClientError};
use serde_json::{json, Value};

use crate::common::{befriend, gps, TestServer};
use crate::{ensure, Outcome};

/// Every operation appears in exactly one route and routes name nothing else.
fn static_table() -> Result<usize, String> {
    let mut seen: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    let mut endpoints = BTreeSet::new();
    for r in ROUTES {
        ensure!(endpoints.insert((r.method, r.path)), "{} {} listed twice", r.method, r.path);
        for op in r.ops {
            seen.entry(op).or_default().push(format!("{} {}", r.method, r.path));
        }
    }
    let expected: BTreeSet<&str> = OPERATIONS.iter().chain(GATEWAY_OPERATIONS).copied().collect();
    ensure!(expected.len() == OPERATIONS.len() + GATEWAY_OPERATIONS.len(), "operation list has duplicates");
    for op in &expected {
        match seen.get(op).map(Vec::len) {
            Some(1) => {}
            Some(n) => return Err(format!("{op} reachable via {n} routes: {:?}", seen[op])),
            None => return Err(format!("{op} has no route")),
        }
    }
    let stray: Vec<_> = seen.keys().filter(|op| !expected.contains(*op)).collect();
    ensure!(stray.is_empty(), "routes name unknown operations {stray:?}");
    Ok(expected.len())
}

fn concrete(path: &str) -> String {
    path.replace("{layer}/{z}/{x}/{y}", "normal/0/0/0")
        .replace("{username}", "nobody")
        .replace("{name}", "nogroup")
        .replace("{id}", "1")
}

/// Each listed route is mounted: private ones answer Unauthorized without a
/// session (the fallback would say NotFound), open ones reject an empty body
/// with a client error of their own.
fn mounted(srv: &TestServer) -> Result<usize, String> {
    let anon = srv.client();
    for r in ROUTES {
        let path = concrete(r.path);
        let body = (r.method != "GET" && r.method != "DELETE").then(|| json!({}));
        let res = anon.call(r.method, &path, body.as_ref());
        let ok = match &res {
            Err(ClientError::Api { status, code, .. }) if r.public => {
                (400..500).contains(status) && code != "NotFound" && code != "Unauthorized"
            }
            Err(ClientError::Api { code, .. }) => code == "Unauthorized",
            Ok(_) => false,
            Err(_) => false,
        };
        ensure!(ok, "{} {path} (public: {}): got {res:?}", r.method, r.public);
    }
    Ok(ROUTES.len())
}

/// The envelope carries `Error::code()` unchanged for every variant.
fn envelope_table() -> Result<usize, String> {
    let samples = Error::samples();
    let codes: BTreeSet<&str> = samples.iter().map(Error::code).collect();
    ensure!(codes.len() == samples.len(), "error codes are not unique");
    for e in &samples {
        let body = error_body(e);
        ensure!(body["error"]["code"] == e.code(), "{e:?} became {}", body["error"]["code"]);
        ensure!(body["error"]["message"] == e.to_string(), "{e:?} message rewritten");
        ensure!(
            body["error"].get("recovery_hint").is_some() == matches!(e, Error::BadCredentials { .. }),
            "{e:?} recovery_hint presence"
        );
        let status = status_for(e).as_u16();
        ensure!((400..600).contains(&status), "{e:?} mapped to {status}");
    }
    Ok(samples.len())
}

fn code_of(r: Result<Value, ClientError>) -> String {
    match r {
        Ok(v) => format!("ok:{v}"),
        Err(e) => e.code().map(str::to_string).unwrap_or_else(|| e.to_string()),
    }
}

fn bytes_code(r: Result<(String, Vec<u8>), ClientError>) -> String {
    code_of(r.map(|_| Value::Null))
}

/// Provokes errors over HTTP and checks the code a client receives.
fn live_codes(srv: &TestServer) -> Result<usize, String> {
    let anon = srv.client();
    let ann = srv.signup("ann", "5558001");
    let bob = srv.signup("bob", "5558002");
    let cat = srv.signup("cat", "5558003");
    srv.register("dan", "5558004");
    let admin = srv.signup("root", "5558005");
    srv.running.as_ref().unwrap().service.set_admin("root", true).map_err(|e| e.to_string())?;

    let form = |name: &str, email: &str, phone: &str| {
        json!({ "username": name, "password": "pw", "nickname": "n", "email": email, "phone": phone })
    };
    let mut checks: Vec<(&str, String)> = vec![
        ("DuplicateUsername", code_of(anon.post("/register", form("ANN", "x@y.co", "5558100")))),
        ("InvalidEmail", code_of(anon.post("/register", form("eve", "nope", "5558101")))),
        ("InvalidPhone", code_of(anon.post("/register", form("eve", "e@y.co", "12")))),
        ("MissingField", code_of(anon.post("/register", form("", "e@y.co", "5558102")))),
        ("BadCode", code_of(anon.post("/activate", json!({ "username": "dan", "code": "000000" })))),
        ("AlreadyActivated", code_of(anon.post("/activate", json!({ "username": "ann", "code": "000000" })))),
        ("NotActivated", code_of(anon.post("/login", json!({ "username": "dan", "password": "dan-password" })))),
        ("BadCredentials", code_of(anon.post("/login", json!({ "username": "ann", "password": "no" })))),
        ("UnknownUser", code_of(ann.get("/profile/ghost"))),
        ("Unauthorized", code_of(anon.get("/friends"))),
        ("Unauthorized", code_of(Client::new(&srv.url()).with_token(Some("bogus".into())).get("/friends"))),
        ("ImmutableField", code_of(ann.call("PUT", "/profile", Some(&json!({ "section": "basic", "username": "ann2" }))))),
        ("SelfFriendship", code_of(ann.post("/friends", json!({ "username": "ann" })))),
        ("NoPendingRequest", code_of(ann.post("/requests", json!({ "username": "bob", "accept": true })))),
        ("NotFriends", code_of(ann.post("/chat", json!({ "to": "cat", "body": { "kind": "text", "value": "x" } })))),
        ("NoFixForViewer", code_of(ann.get("/nearby?radius=100"))),
        ("InvalidCoordinate", code_of(ann.post("/position", json!({ "gps": { "lat": 95.0, "lon": 0.0, "accuracy": 5.0 } })))),
        ("MalformedQuery", code_of(ann.get("/geocode?q=nowhere"))),
        ("UnknownCity", code_of(ann.get("/geocode?q=Atlantis,%20Sea"))),
        ("EmptyInput", code_of(ann.post("/position", json!({})))),
        ("UnknownBlob", code_of(ann.get("/blob/deadbeef").map(|_| Value::Null))),
        ("UnknownAlbum", code_of(ann.get("/album/999"))),
        ("UnknownPhoto", code_of(ann.call("DELETE", "/photo/999", None))),
        ("UnknownPost", code_of(ann.get("/blog/999"))),
        ("UnknownSection", code_of(ann.post("/news/subscribe", json!({ "sections": ["gossip"] })))),
        ("NotAdmin", code_of(ann.get("/forum/queue"))),
        ("NotFound", code_of(ann.get("/no/such/thing"))),
        ("BadRequest", code_of(ann.get("/mail/abc"))),
        ("TileOutOfRange", bytes_code(ann.get_bytes("/tiles/normal/2/4/0"))),
    ];

    befriend(&ann, &bob, "bob", "ann");
    checks.push(("AlreadyFriends", code_of(ann.post("/friends", json!({ "username": "bob" })))));
    checks.push(("UnknownGroup", code_of(ann.call("PUT", "/friends/bob/group", Some(&json!({ "group": "Nope" }))))));
    checks.push(("DefaultGroupProtected", code_of(ann.call("DELETE", "/groups/Strangers", None))));
    ann.post("/groups", json!({ "name": "Club" })).map_err(|e| e.to_string())?;
    checks.push(("DuplicateGroupName", code_of(ann.post("/groups", json!({ "name": "Club" })))));
    gps(&ann, 38.914, 121.6147);
    checks.push(("RadiusOutOfRange", code_of(ann.get("/nearby?radius=999999"))));
    let long = "x".repeat(300);
    checks.push(("TooLong", code_of(ann.post("/mail", json!({ "to": "bob", "subject": long, "body": "b" })))));
    let huge = "y".repeat(70 * 1024);
    checks.push(("BodyTooLarge", code_of(ann.post("/mail", json!({ "to": "bob", "subject": "s", "body": huge })))));
    checks.push(("TooLarge", code_of(ann.upload(vec![0u8; 5 * 1024 * 1024 + 1], "image/png"))));
    let mail = ann.post("/mail", json!({ "to": "bob", "subject": "s", "body": "b" })).map_err(|e| e.to_string())?;
    checks.push(("NotYourMail", code_of(cat.get(&format!("/mail/{}", mail["mail_id"])))));
    let post = ann.post("/blog", json!({ "title": "t", "body": "b" })).map_err(|e| e.to_string())?;
    let pid = post["post_id"].as_u64().unwrap();
    checks.push(("NotVisible", code_of(bob.get(&format!("/blog/{pid}")))));
    ann.post(&format!("/blog/{pid}/publish"), json!({})).map_err(|e| e.to_string())?;
    checks.push(("AlreadyPublished", code_of(ann.post(&format!("/blog/{pid}/publish"), json!({})))));
    let thread = ann.post("/forum", json!({ "title": "q", "body": "b" })).map_err(|e| e.to_string())?;
    let tid = thread["post_id"].as_u64().unwrap();
    checks.push(("NotApproved", code_of(admin.post(&format!("/forum/{tid}/reply"), json!({ "body": "r" })))));
    checks.push((
        "InsufficientBeacons",
        code_of(ann.post(
            "/position",
            json!({ "ranges": [{ "beacon": { "id": "a", "position": { "lat": 38.9, "lon": 121.6 }, "kind": "WifiAp", "range_radius": 50.0 }, "range": 5.0, "sigma": 1.0 }] }),
        )),
    ));
    let b = |id: &str, lat: f64, lon: f64| {
        json!({ "beacon": { "id": id, "position": { "lat": lat, "lon": lon }, "kind": "WifiAp", "range_radius": 50.0 }, "range": 5.0, "sigma": 1.0 })
    };
    checks.push((
        "DegenerateGeometry",
        code_of(ann.post("/position", json!({ "ranges": [b("a", 38.9, 121.6), b("b", 38.9, 121.6001), b("c", 38.9, 121.6002)] }))),
    ));
    checks.push(("StaleUpdate", {
        // A fix stamped before the stored one is refused.
        let svc = &srv.running.as_ref().unwrap().service;
        let before = svc.read().geo().get(1).map(|r| r.updated_at).unwrap_or(0);
        let fix = lbsn_core::localization::Fix {
            position: lbsn_core::geomath::GeoPoint::new(38.9, 121.6).unwrap(),
            accuracy: 5.0,
            method: lbsn_core::localization::Method::Gps,
            residual_rms: 0.0,
            timestamp: before - 1,
        };
        let mut geo = svc.read().geo().clone();
        match geo.upsert_position(1, fix) {
            Err(e) => e.code().to_string(),
            Ok(_) => "ok".into(),
        }
    }));

    let known: BTreeSet<&str> = Error::samples().iter().map(Error::code).collect();
    let mut distinct = BTreeSet::new();
    let mut wrong = Vec::new();
    for (want, got) in &checks {
        ensure!(known.contains(want), "{want} is not a core error code");
        if got != want {
            wrong.push(format!("expected {want}, got {got}"));
        }
        distinct.insert(*want);
    }
    ensure!(wrong.is_empty(), "{}", wrong.join("; "));
    Ok(distinct.len())
}

pub fn suite() -> Outcome {
    let ops = static_table()?;
    let srv = TestServer::start();
    let routes = mounted(&srv)?;
    let variants = envelope_table()?;
    let live = live_codes(&srv)?;
    Ok(format!(
        "{ops} operations on {routes} routes, each exactly once; {variants} error codes verbatim in the envelope, {live} provoked over HTTP"
    ))
}
