//! Walkthrough fixture: a handful of Dalian users with friendships,
//! positions, posts and a forum thread.

use lbsn_core::content::{CommentTarget, PhotoUpload};
use lbsn_core::identity::{Gender, RegistrationForm};
use lbsn_core::messaging::ChatBody;
use lbsn_core::service::{GpsReading, PositionReport, Service};
use lbsn_core::Error;

use crate::app::SMS_OUTBOX;
use crate::client::outbox_code;
use crate::config::Config;

pub const DEMO_PASSWORD: &str = "demo-pass-2026";

pub struct DemoUser {
    pub username: &'static str,
    pub nickname: &'static str,
    pub phone: &'static str,
    pub gender: Gender,
    pub interests: &'static [&'static str],
    pub city: &'static str,
    pub country: &'static str,
    pub at: (f64, f64),
}

pub const USERS: &[DemoUser] = &[
    DemoUser {
        username: "alice",
        nickname: "Alice",
        phone: "13800000001",
        gender: Gender::Female,
        interests: &["hiking", "photography", "seafood"],
        city: "Dalian",
        country: "China",
        at: (38.9150, 121.6160),
    },
    DemoUser {
        username: "bob",
        nickname: "Bob",
        phone: "13800000002",
        gender: Gender::Male,
        interests: &["hiking", "football"],
        city: "Dalian",
        country: "China",
        at: (38.9172, 121.6188),
    },
    DemoUser {
        username: "carol",
        nickname: "Carol",
        phone: "13800000003",
        gender: Gender::Female,
        interests: &["photography", "hiking"],
        city: "Dalian",
        country: "China",
        at: (38.9120, 121.6130),
    },
    DemoUser {
        username: "dave",
        nickname: "Dave",
        phone: "13800000004",
        gender: Gender::Male,
        interests: &["chess"],
        city: "Beijing",
        country: "China",
        at: (39.9042, 116.4074),
    },
    DemoUser {
        username: "admin",
        nickname: "Moderator",
        phone: "13800000009",
        gender: Gender::Unspecified,
        interests: &[],
        city: "Dalian",
        country: "China",
        at: (38.9140, 121.6147),
    },
];

fn form(u: &DemoUser) -> RegistrationForm {
    RegistrationForm {
        username: u.username.into(),
        password: DEMO_PASSWORD.into(),
        nickname: u.nickname.into(),
        email: format!("{}@example.org", u.username),
        phone: u.phone.into(),
        gender: u.gender,
        birthday: None,
        interests: u.interests.iter().map(|s| s.to_string()).collect(),
        city: Some(u.city.into()),
        country: Some(u.country.into()),
    }
}

/// Seeds the fixture. Returns `Ok(false)` if it was already present.
pub fn seed(svc: &Service, cfg: &Config) -> Result<bool, Error> {
    let outbox = cfg.data_dir.join(SMS_OUTBOX);
    let mut tokens = Vec::new();
    for u in USERS {
        match svc.register(form(u)) {
            Ok(_) => {}
            Err(Error::DuplicateUsername(_)) => return Ok(false),
            Err(e) => return Err(e),
        }
        let code = outbox_code(&outbox, u.phone).ok_or(Error::BadCode)?;
        svc.activate(u.username, &code)?;
        let token = svc.login(u.username, DEMO_PASSWORD)?.token;
        svc.submit_position(
            &token,
            &PositionReport {
                gps: Some(GpsReading {
                    lat: u.at.0,
                    lon: u.at.1,
                    accuracy: 20.0,
                }),
                ..Default::default()
            },
        )?;
        tokens.push(token);
    }
    svc.set_admin("admin", true)?;
    let [alice, bob, carol, dave, admin] = &tokens[..] else {
        unreachable!("five demo users")
    };

    svc.request_friend(alice, "bob")?;
    svc.respond_friend(bob, "alice", true)?;
    svc.request_friend(alice, "dave")?;
    svc.respond_friend(dave, "alice", true)?;
    svc.request_friend(carol, "alice")?;
    svc.create_group(alice, "Hiking Club")?;
    svc.move_friend(alice, "bob", "Hiking Club")?;
    svc.set_alias(alice, "bob", Some("Bobby".into()))?;

    let post = svc.blog_write(alice, "Weekend on Bangchui Island", "Clear skies and a long coastal trail.")?;
    svc.blog_publish(alice, post.post_id)?;
    svc.blog_write(alice, "Half-written trip notes", "Draft, not shared yet.")?;
    let album = svc.album_create(alice, "Xinghai Square")?;
    let blob = svc.upload_blob(alice, &crate::tiles::render_synthetic(&crate::tiles::TileRef::new(crate::tiles::Layer::Normal, 0, 0, 0)?), "image/png")?;
    svc.photo_upload(
        alice,
        album.album_id,
        vec![PhotoUpload {
            blob_id: blob.blob_id,
            caption: "Evening by the square".into(),
        }],
    )?;
    let feed = svc.feed(bob, None, 5)?;
    if let Some(item) = feed.first() {
        svc.comment(bob, CommentTarget::Event(item.event.event_id), "Looks great!")?;
    }
    svc.record_visit(bob, "alice")?;

    svc.send_chat(bob, "alice", ChatBody::Text("Lunch at the seafood place?".into()))?;
    svc.send_mail(dave, "alice", "Visiting Dalian", "I'll be in town next month.")?;

    svc.subscribe_news(alice, &["local".into(), "sports".into(), "health".into()])?;
    let thread = svc.forum_post(bob, Some("Dalian, China"), "Best hiking trails?", "Looking for routes near the coast.")?;
    svc.forum_moderate(admin, thread.post_id, true)?;
    svc.forum_reply(alice, thread.post_id, "Try the Binhai Road trail.")?;
    svc.forum_post(carol, Some("Dalian"), "Photo walk this Sunday", "Meet at Labor Park, 9am.")?;
    // Seeding sessions would otherwise keep the fixture users logged in.
    for token in &tokens {
        svc.logout(token)?;
    }
    Ok(true)
}
