use std::time::Instant;

use lbsn_core::geomath::{haversine, GeoPoint};
use lbsn_server::demo::DEMO_PASSWORD;
use serde_json::{json, Value};

use crate::common::cli::{path_str, CliServer};
use crate::{ensure, Outcome};

fn friend<'a>(list: &'a Value, name: &str) -> Option<&'a Value> {
    list.as_array()?.iter().find(|f| f["profile"]["username"] == name)
}

/// The walkthrough as a user would type it, via the `lbsn client` binary
/// against a `lbsn serve` process seeded with the demo fixture.
pub fn scenario() -> Outcome {
    let t0 = Instant::now();
    let srv = CliServer::start(true);
    let outbox = srv.outbox();

    // Registration, duplicate rejection, activation and login.
    let zoe = srv.user("zoe");
    let reg = ["--password", "zoe-pass", "--email", "zoe@example.org", "--phone", "13900000042"];
    let first = zoe.run(&[&["register", "zoe"][..], &reg].concat());
    ensure!(first.code == 0, "register: {}", first.stderr);
    let dup = zoe.run(&[&["register", "Zoe"][..], &reg].concat());
    ensure!(
        dup.code == 2 && dup.error_code().as_deref() == Some("DuplicateUsername"),
        "duplicate register: exit {} {}",
        dup.code,
        dup.stderr
    );
    let act = zoe.run(&["activate", "zoe", "--outbox", path_str(&outbox), "--phone", "13900000042"]);
    ensure!(act.code == 0, "activate: {}", act.stderr);
    let login = zoe.run(&["login", "zoe", "zoe-pass"]);
    ensure!(login.code == 0 && login.json()["token"].is_string(), "login: {}", login.stderr);

    let wrong = zoe.run(&["login", "zoe", "not-it"]);
    let err = wrong.error();
    ensure!(
        wrong.code == 2 && err["error"]["code"] == "BadCredentials" && err["error"]["recovery_hint"] == true,
        "wrong password: {}",
        wrong.stderr
    );

    let place = zoe.run(&["geocode", "Dalian, China"]);
    ensure!(place.code == 0, "geocode: {}", place.stderr);
    let place = place.json();
    ensure!(
        place["city"] == "Dalian" && place["country"] == "China",
        "geocode returned {place}"
    );
    let centroid = GeoPoint::new(38.914, 121.6147).unwrap();
    let got = GeoPoint::new(place["position"]["lat"].as_f64().unwrap(), place["position"]["lon"].as_f64().unwrap()).unwrap();
    ensure!(haversine(&got, &centroid) < 1.0, "geocode position {got:?}");

    // Alice reports Wi-Fi ranges; the fix is stored and her friend sees it.
    let alice = srv.user("alice");
    ensure!(alice.run(&["login", "alice", DEMO_PASSWORD]).code == 0, "alice login");
    let target = GeoPoint::new(38.91530, 121.61640).unwrap();
    let aps = [(38.91580, 121.61600), (38.91490, 121.61590), (38.91510, 121.61710)];
    let ranges: Vec<Value> = aps
        .iter()
        .enumerate()
        .map(|(i, (lat, lon))| {
            let ap = GeoPoint::new(*lat, *lon).unwrap();
            json!({
                "beacon": { "id": format!("ap{i}"), "position": { "lat": lat, "lon": lon }, "kind": "WifiAp", "range_radius": 80.0 },
                "range": haversine(&ap, &target),
                "sigma": 1.0
            })
        })
        .collect();
    let report = srv.dir.path().join("report.json");
    std::fs::write(&report, json!({ "ranges": ranges }).to_string()).unwrap();
    let fix = alice.run(&["locate", "--report", path_str(&report)]);
    ensure!(fix.code == 0, "locate: {}", fix.stderr);
    let fix = fix.json();
    ensure!(fix["method"] == "Trilateration", "fix method {}", fix["method"]);
    let pos = GeoPoint::new(fix["position"]["lat"].as_f64().unwrap(), fix["position"]["lon"].as_f64().unwrap()).unwrap();
    ensure!(haversine(&pos, &target) < 1.0, "fix {:.3} m off", haversine(&pos, &target));

    let bob = srv.user("bob");
    ensure!(bob.run(&["login", "bob", DEMO_PASSWORD]).code == 0, "bob login");
    let seen = bob.run(&["nearby", "--radius", "2000"]);
    ensure!(seen.code == 0, "bob nearby: {}", seen.stderr);
    let seen = seen.json();
    let alice_row = seen.as_array().and_then(|a| a.iter().find(|e| e["profile"]["username"] == "alice"));
    let stored = alice_row
        .map(|e| {
            GeoPoint::new(e["fix"]["position"]["lat"].as_f64().unwrap(), e["fix"]["position"]["lon"].as_f64().unwrap())
                .unwrap()
        })
        .ok_or("alice missing from bob's nearby list")?;
    ensure!(haversine(&stored, &pos) < 1e-6, "stored fix differs from the reported one");

    let near = alice.run(&["nearby", "--radius", "1000"]);
    ensure!(near.code == 0, "alice nearby: {}", near.stderr);
    let near = near.json();
    let bob_row = near
        .as_array()
        .and_then(|a| a.iter().find(|e| e["profile"]["username"] == "bob"))
        .ok_or("seeded friend bob missing from nearby")?;
    ensure!(bob_row["is_friend"] == true, "bob not flagged as a friend");

    // Chat round trip.
    ensure!(alice.run(&["heartbeat"]).code == 0, "alice heartbeat");
    ensure!(bob.run(&["heartbeat"]).code == 0, "bob heartbeat");
    let sent = alice.run(&["chat", "bob", "Trail at 9?"]);
    ensure!(sent.code == 0, "chat: {}", sent.stderr);
    let events = bob.run(&["events", "--timeout-ms", "2000"]);
    ensure!(events.code == 0, "events: {}", events.stderr);
    let got_chat = events.json().as_array().is_some_and(|a| {
        a.iter().any(|e| e["event"]["type"] == "chat" && e["event"]["message"]["body"]["value"] == "Trail at 9?")
    });
    ensure!(got_chat, "bob did not receive the chat event");
    ensure!(bob.run(&["chat", "alice", "See you there"]).code == 0, "reply");
    let hist = alice.run(&["history", "bob"]);
    ensure!(hist.code == 0, "history: {}", hist.stderr);
    let texts: Vec<String> = hist
        .json()
        .as_array()
        .map(|a| a.iter().filter_map(|m| m["body"]["value"].as_str().map(String::from)).collect())
        .unwrap_or_default();
    ensure!(
        texts.first().map(String::as_str) == Some("See you there") && texts.contains(&"Trail at 9?".to_string()),
        "history {texts:?}"
    );

    // Online flags: bob is online, dave never sent a heartbeat; after bob
    // logs out he drops to offline.
    let friends = alice.ok(&["friends"]);
    let flags = |list: &Value, name: &str| friend(list, name).map(|f| f["online"] == true);
    ensure!(flags(&friends, "bob") == Some(true), "bob should be online");
    ensure!(flags(&friends, "dave") == Some(false), "dave should be offline");
    ensure!(bob.run(&["logout"]).code == 0, "bob logout");
    let friends = alice.ok(&["friends"]);
    ensure!(flags(&friends, "bob") == Some(false), "bob should be offline after logout");

    let secs = t0.elapsed().as_secs_f64();
    ensure!(secs < 30.0, "took {secs:.1}s");
    Ok("register/duplicate/activate/login/recovery hint/geocode/locate/nearby/chat/online flags".into())
}
