//! Session-checked operations over a shared [`Platform`].
//!
//! Writes are serialized: a command is applied under the state write lock
//! and appended to the [`Journal`] before the lock is released, so journal
//! order always equals apply order.

use std::collections::{BTreeMap, BTreeSet};
use std::io;
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::{Arc, OnceLock};

use chrono::NaiveDate;
use parking_lot::{Mutex, RwLock, RwLockReadGuard};
use serde::{Deserialize, Serialize};

use crate::content::{Album, BlogPost, Comment, CommentTarget, Photo, PhotoUpload, VisitRecord};
use crate::error::{Error, Result};
use crate::events::Envelope;
use crate::gazetteer::{Gazetteer, GazetteerEntry};
use crate::geomath::GeoPoint;
use crate::geostore::{Poi, PoiFilter};
use crate::identity::{
    new_code, new_session_token, PasswordHasher, ProfileUpdate, RegistrationForm, Session, SmsTransport,
    DEFAULT_SESSION_TTL_MS,
};
use crate::localinfo::{ForumPost, ForumReply, NewsDesk, NewsItem, NewsSection, WeatherProvider, WeatherReport};
use crate::localization::{
    best_fix, multilaterate_tdoa, proximity_fix, trilaterate, Beacon, Fix, Method, RangeMeasurement,
    TdoaMeasurement,
};
use crate::messaging::{
    blob_id, check_blob_size, BlobMeta, BlobStore, ChatBody, ChatMessage, Mail, MailFolder, Presence,
};
use crate::platform::{Command, FeedItem, FriendEntry, NearbyEntry, Outcome, Platform, PresenceEntry, UserSearch};
use crate::social::{FieldGroup, Group, PrivacyPolicy, ProfileView, RecommendationScore, Tier};
use crate::UserId;

/// Client-facing operations of the domain modules, as `module.operation`.
/// Each must be reachable through exactly one HTTP route.
pub const OPERATIONS: &[&str] = &[
    "geomath.haversine",
    "geomath.to_enu",
    "localization.trilaterate",
    "localization.multilaterate_tdoa",
    "localization.proximity_fix",
    "localization.best_fix",
    "geostore.upsert_position",
    "geostore.query_radius",
    "geostore.query_knn",
    "geostore.search_poi",
    "identity.register",
    "identity.activate",
    "identity.login",
    "identity.logout",
    "identity.recover_password",
    "identity.redeem_recovery",
    "identity.account",
    "identity.update_profile",
    "social.filter_profile",
    "social.get_privacy",
    "social.set_privacy",
    "social.visible_nearby",
    "social.visible_knn",
    "social.list_friends",
    "social.add_friend",
    "social.list_requests",
    "social.respond_request",
    "social.remove_friend",
    "social.move_to_group",
    "social.set_alias",
    "social.list_groups",
    "social.create_group",
    "social.rename_group",
    "social.delete_group",
    "social.recommend",
    "social.search_users",
    "messaging.send_chat",
    "messaging.chat_history",
    "messaging.set_history_saving",
    "messaging.send_mail",
    "messaging.list_mail",
    "messaging.read_mail",
    "messaging.delete_mail",
    "messaging.upload_blob",
    "messaging.fetch_blob",
    "messaging.heartbeat",
    "messaging.presence_of",
    "content.friend_feed",
    "content.comment",
    "content.blog_write",
    "content.blog_list",
    "content.blog_view",
    "content.blog_edit",
    "content.blog_delete",
    "content.blog_publish",
    "content.album_create",
    "content.album_list",
    "content.album_view",
    "content.album_delete",
    "content.photo_upload",
    "content.photo_edit",
    "content.photo_delete",
    "content.record_visit",
    "content.list_visitors",
    "localinfo.weather",
    "localinfo.subscribe_news",
    "localinfo.news_feed",
    "localinfo.forum_post",
    "localinfo.forum_list",
    "localinfo.forum_view",
    "localinfo.forum_queue",
    "localinfo.forum_moderate",
    "localinfo.forum_reply",
];

pub trait Clock: Send + Sync {
    /// Milliseconds since the Unix epoch.
    fn now_ms(&self) -> i64;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> i64 {
        chrono::Utc::now().timestamp_millis()
    }
}

/// A clock that only moves when told to.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicI64);

impl ManualClock {
    pub fn new(start_ms: i64) -> Self {
        ManualClock(AtomicI64::new(start_ms))
    }

    pub fn set(&self, ms: i64) {
        self.0.store(ms, Ordering::SeqCst);
    }

    pub fn advance(&self, ms: i64) {
        self.0.fetch_add(ms, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> i64 {
        self.0.load(Ordering::SeqCst)
    }
}

/// Durable record of applied commands.
pub trait Journal: Send {
    fn append(&mut self, cmd: &Command) -> io::Result<()>;

    /// Persists a full copy of `state`, after which earlier records may go.
    fn checkpoint(&mut self, _state: &Platform) -> io::Result<()> {
        Ok(())
    }

    /// Asked after every append; `true` triggers [`Journal::checkpoint`].
    fn wants_checkpoint(&self) -> bool {
        false
    }
}

#[derive(Debug, Default)]
pub struct NullJournal;

impl Journal for NullJournal {
    fn append(&mut self, _cmd: &Command) -> io::Result<()> {
        Ok(())
    }
}

/// Keeps commands in a shared vector; for tests.
#[derive(Debug, Default, Clone)]
pub struct MemoryJournal(pub Arc<Mutex<Vec<Command>>>);

impl Journal for MemoryJournal {
    fn append(&mut self, cmd: &Command) -> io::Result<()> {
        self.0.lock().push(cmd.clone());
        Ok(())
    }
}

pub type Listener = Arc<dyn Fn(&[UserId]) + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountView {
    pub profile: ProfileView,
    pub privacy: PrivacyPolicy,
    pub is_admin: bool,
    pub history_saving: bool,
    pub news_sections: BTreeSet<NewsSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpsReading {
    pub lat: f64,
    pub lon: f64,
    pub accuracy: f64,
}

/// Everything a handset observed; the server keeps the best resulting fix.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PositionReport {
    pub ranges: Vec<RangeMeasurement>,
    pub tdoa: Vec<TdoaMeasurement>,
    pub proximity: Vec<Beacon>,
    pub gps: Option<GpsReading>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestEntry {
    pub user_id: UserId,
    pub username: String,
    pub at: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FriendRequests {
    pub incoming: Vec<RequestEntry>,
    pub outgoing: Vec<RequestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MailBox {
    pub unread: usize,
    pub mails: Vec<Mail>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlbumView {
    pub album: Album,
    pub photos: Vec<Photo>,
}

pub struct ServiceBuilder {
    state: Platform,
    journal: Box<dyn Journal>,
    clock: Arc<dyn Clock>,
    hasher: PasswordHasher,
    sms: Arc<dyn SmsTransport>,
    blobs: Arc<dyn BlobStore>,
    weather: Arc<dyn WeatherProvider>,
    news: NewsDesk,
    gazetteer: Gazetteer,
    session_ttl_ms: i64,
}

impl Default for ServiceBuilder {
    fn default() -> Self {
        ServiceBuilder {
            state: Platform::default(),
            journal: Box::new(NullJournal),
            clock: Arc::new(SystemClock),
            hasher: PasswordHasher::default(),
            sms: Arc::new(crate::identity::MemoryOutbox::default()),
            blobs: Arc::new(crate::messaging::MemoryBlobStore::default()),
            weather: Arc::new(crate::localinfo::SyntheticWeather::default()),
            news: NewsDesk::default(),
            gazetteer: Gazetteer::builtin(),
            session_ttl_ms: DEFAULT_SESSION_TTL_MS,
        }
    }
}

impl ServiceBuilder {
    pub fn state(mut self, state: Platform) -> Self {
        self.state = state;
        self
    }

    pub fn journal(mut self, journal: impl Journal + 'static) -> Self {
        self.journal = Box::new(journal);
        self
    }

    pub fn clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn hasher(mut self, hasher: PasswordHasher) -> Self {
        self.hasher = hasher;
        self
    }

    pub fn sms(mut self, sms: Arc<dyn SmsTransport>) -> Self {
        self.sms = sms;
        self
    }

    pub fn blobs(mut self, blobs: Arc<dyn BlobStore>) -> Self {
        self.blobs = blobs;
        self
    }

    pub fn weather(mut self, weather: Arc<dyn WeatherProvider>) -> Self {
        self.weather = weather;
        self
    }

    pub fn news(mut self, news: NewsDesk) -> Self {
        self.news = news;
        self
    }

    pub fn gazetteer(mut self, gazetteer: Gazetteer) -> Self {
        self.gazetteer = gazetteer;
        self
    }

    pub fn pois(mut self, pois: Vec<Poi>) -> Self {
        for p in pois {
            self.state.geo_mut().insert_poi(p);
        }
        self
    }

    pub fn session_ttl_ms(mut self, ttl: i64) -> Self {
        self.session_ttl_ms = ttl;
        self
    }

    pub fn build(self) -> Service {
        Service {
            state: RwLock::new(self.state),
            journal: Mutex::new(self.journal),
            failure: Mutex::new(None),
            clock: self.clock,
            hasher: self.hasher,
            sms: self.sms,
            blobs: self.blobs,
            weather: self.weather,
            news: self.news,
            gazetteer: self.gazetteer,
            session_ttl_ms: self.session_ttl_ms,
            listener: RwLock::new(None),
            dummy_digest: OnceLock::new(),
        }
    }
}

pub struct Service {
    state: RwLock<Platform>,
    journal: Mutex<Box<dyn Journal>>,
    failure: Mutex<Option<String>>,
    clock: Arc<dyn Clock>,
    hasher: PasswordHasher,
    sms: Arc<dyn SmsTransport>,
    blobs: Arc<dyn BlobStore>,
    weather: Arc<dyn WeatherProvider>,
    news: NewsDesk,
    gazetteer: Gazetteer,
    session_ttl_ms: i64,
    listener: RwLock<Option<Listener>>,
    dummy_digest: OnceLock<String>,
}

macro_rules! expect_outcome {
    ($e:expr, $variant:ident) => {
        match $e? {
            Outcome::$variant(v) => Ok(v),
            other => unreachable!("unexpected outcome {other:?}"),
        }
    };
}

impl Service {
    pub fn builder() -> ServiceBuilder {
        ServiceBuilder::default()
    }

    pub fn now(&self) -> i64 {
        self.clock.now_ms()
    }

    pub fn gazetteer(&self) -> &Gazetteer {
        &self.gazetteer
    }

    /// Read access to the whole state.
    pub fn read(&self) -> RwLockReadGuard<'_, Platform> {
        self.state.read()
    }

    /// Called with the users whose event streams advanced.
    pub fn set_listener(&self, listener: Listener) {
        *self.listener.write() = Some(listener);
    }

    /// Applies and journals one command.
    pub fn execute(&self, cmd: Command) -> Result<Outcome> {
        if let Some(reason) = self.failure.lock().clone() {
            return Err(Error::StorageFailure(reason));
        }
        let mut state = self.state.write();
        let outcome = state.apply(&cmd)?;
        let mut journal = self.journal.lock();
        if let Err(e) = journal.append(&cmd) {
            // Memory is now ahead of disk; refuse further writes.
            let reason = e.to_string();
            *self.failure.lock() = Some(reason.clone());
            return Err(Error::StorageFailure(reason));
        }
        if journal.wants_checkpoint() {
            // A failed checkpoint loses nothing: the log still holds every
            // record and the next append asks again.
            let _ = journal.checkpoint(&state);
        }
        drop(journal);
        let touched = state.drain_touched();
        drop(state);
        if !touched.is_empty() {
            if let Some(l) = self.listener.read().clone() {
                l(&touched);
            }
        }
        Ok(outcome)
    }

    /// Writes a full snapshot through the journal.
    pub fn checkpoint(&self) -> Result<()> {
        let state = self.state.read();
        self.journal
            .lock()
            .checkpoint(&state)
            .map_err(|e| Error::StorageFailure(e.to_string()))
    }

    pub fn authenticate(&self, token: &str) -> Result<UserId> {
        self.state.read().identity().authenticate(token, self.now())
    }

    fn user_id(&self, username: &str) -> Result<UserId> {
        Ok(self.state.read().identity().require(username)?.user_id)
    }

    fn username(&self, id: UserId) -> String {
        self.state.read().identity().user(id).map(|p| p.username.clone()).unwrap_or_default()
    }

    // ----- identity -----

    pub fn register(&self, form: RegistrationForm) -> Result<UserId> {
        form.validate()?;
        if self.state.read().identity().lookup(&form.username).is_some() {
            return Err(Error::DuplicateUsername(form.username.trim().to_string()));
        }
        let digest = self.hasher.hash(&form.password);
        let code = new_code();
        let now = self.now();
        let phone = form.phone.trim().to_string();
        let id = expect_outcome!(
            self.execute(Command::Register {
                form,
                password_digest: digest,
                activation_code: code.clone(),
                now,
            }),
            User
        )?;
        self.send_sms(&phone, &format!("Your activation code is {code}"), now)?;
        Ok(id)
    }

    fn send_sms(&self, phone: &str, text: &str, now: i64) -> Result<()> {
        self.sms
            .send(phone, text, now)
            .map_err(|e| Error::StorageFailure(format!("sms outbox: {e}")))
    }

    pub fn activate(&self, username: &str, code: &str) -> Result<UserId> {
        expect_outcome!(
            self.execute(Command::Activate {
                username: username.to_string(),
                code: code.trim().to_string(),
                now: self.now(),
            }),
            User
        )
    }

    pub fn login(&self, username: &str, password: &str) -> Result<Session> {
        let account = self
            .state
            .read()
            .identity()
            .lookup(username)
            .map(|p| (p.user_id, p.password_digest.clone()));
        let Some((user, digest)) = account else {
            // Spend the same effort as a real check.
            let dummy = self.dummy_digest.get_or_init(|| self.hasher.hash("\u{0}"));
            self.hasher.verify(dummy, password);
            return Err(Error::BadCredentials { recovery_hint: true });
        };
        if !self.hasher.verify(&digest, password) {
            return Err(Error::BadCredentials { recovery_hint: true });
        }
        expect_outcome!(
            self.execute(Command::Login {
                user,
                password_digest: digest,
                token: new_session_token(),
                ttl_ms: self.session_ttl_ms,
                now: self.now(),
            }),
            Session
        )
    }

    pub fn logout(&self, token: &str) -> Result<()> {
        self.authenticate(token)?;
        self.execute(Command::Logout {
            token: token.to_string(),
            now: self.now(),
        })
        .map(|_| ())
    }

    pub fn recover_password(&self, username: &str) -> Result<()> {
        let phone = self.state.read().identity().require(username)?.contact.phone.clone();
        let code = new_code();
        let now = self.now();
        self.execute(Command::RequestRecovery {
            username: username.to_string(),
            code: code.clone(),
            now,
        })?;
        self.send_sms(&phone, &format!("Your password recovery code is {code}"), now)
    }

    pub fn redeem_recovery(&self, username: &str, code: &str, new_password: &str) -> Result<()> {
        if new_password.is_empty() {
            return Err(Error::MissingField("password"));
        }
        self.execute(Command::RedeemRecovery {
            username: username.to_string(),
            code: code.trim().to_string(),
            password_digest: self.hasher.hash(new_password),
            now: self.now(),
        })
        .map(|_| ())
    }

    /// Grants or revokes administrator rights. Not exposed over the API.
    pub fn set_admin(&self, username: &str, admin: bool) -> Result<UserId> {
        expect_outcome!(
            self.execute(Command::SetAdmin {
                username: username.to_string(),
                admin,
            }),
            User
        )
    }

    pub fn account(&self, token: &str) -> Result<AccountView> {
        let me = self.authenticate(token)?;
        let state = self.state.read();
        let p = state.identity().require_id(me)?;
        Ok(AccountView {
            profile: ProfileView::full(p),
            privacy: p.privacy,
            is_admin: p.is_admin,
            history_saving: state.messaging().history_saving(me),
            news_sections: state.local().subscriptions(me),
        })
    }

    pub fn view_profile(&self, token: &str, username: &str) -> Result<ProfileView> {
        let me = self.authenticate(token)?;
        let state = self.state.read();
        let owner = state.identity().require(username)?.user_id;
        state.view_profile(me, owner)
    }

    pub fn update_profile(&self, token: &str, update: ProfileUpdate) -> Result<AccountView> {
        let me = self.authenticate(token)?;
        self.execute(Command::UpdateProfile {
            user: me,
            update,
            now: self.now(),
        })?;
        self.account(token)
    }

    /// Changes the listed tiers, keeping the others.
    pub fn set_privacy(&self, token: &str, changes: &BTreeMap<FieldGroup, Tier>) -> Result<PrivacyPolicy> {
        let me = self.authenticate(token)?;
        let mut policy = self.state.read().identity().require_id(me)?.privacy;
        for (g, t) in changes {
            policy.set(*g, *t);
        }
        self.execute(Command::UpdateProfile {
            user: me,
            update: ProfileUpdate::Privacy { policy },
            now: self.now(),
        })?;
        Ok(policy)
    }

    // ----- location -----

    /// Runs every applicable solver and stores the best fix.
    pub fn submit_position(&self, token: &str, report: &PositionReport) -> Result<Fix> {
        let me = self.authenticate(token)?;
        let now = self.now();
        let mut fixes = Vec::new();
        let mut first_err = None;
        let mut record = |r: Result<Fix>| match r {
            Ok(f) => fixes.push(f),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        };
        if !report.ranges.is_empty() {
            record(trilaterate(&report.ranges, now));
        }
        if !report.tdoa.is_empty() {
            record(multilaterate_tdoa(&report.tdoa, now));
        }
        for b in &report.proximity {
            record(proximity_fix(b, now));
        }
        if let Some(g) = report.gps {
            record(gps_fix(g, now));
        }
        if fixes.is_empty() {
            return Err(first_err.unwrap_or(Error::EmptyInput));
        }
        let fix = best_fix(&fixes)?;
        expect_outcome!(self.execute(Command::UpdatePosition { user: me, fix }), Fix)
    }

    pub fn nearby(&self, token: &str, radius: f64, friends_only: bool) -> Result<Vec<NearbyEntry>> {
        let me = self.authenticate(token)?;
        self.state.read().visible_nearby(me, radius, friends_only)
    }

    pub fn knn(&self, token: &str, k: usize) -> Result<Vec<NearbyEntry>> {
        let me = self.authenticate(token)?;
        self.state.read().visible_knn(me, k)
    }

    /// POIs around `center`, or around the caller's fix when absent.
    pub fn search_poi(
        &self,
        token: &str,
        center: Option<GeoPoint>,
        radius: f64,
        filter: &PoiFilter,
    ) -> Result<Vec<Poi>> {
        let me = self.authenticate(token)?;
        let state = self.state.read();
        let center = match center {
            Some(c) => c,
            None => state.geo().get(me).ok_or(Error::NoFixForViewer)?.fix.position,
        };
        state.geo().search_poi(&center, radius, filter)
    }

    pub fn geocode(&self, token: &str, query: &str) -> Result<GazetteerEntry> {
        self.authenticate(token)?;
        self.gazetteer.geocode(query).cloned()
    }

    // ----- social -----

    pub fn friends(&self, token: &str) -> Result<Vec<FriendEntry>> {
        let me = self.authenticate(token)?;
        Ok(self.state.read().friends(me, self.now()))
    }

    pub fn request_friend(&self, token: &str, username: &str) -> Result<()> {
        let me = self.authenticate(token)?;
        let to = self.user_id(username)?;
        self.execute(Command::FriendRequest {
            from: me,
            to,
            now: self.now(),
        })
        .map(|_| ())
    }

    pub fn respond_friend(&self, token: &str, username: &str, accept: bool) -> Result<()> {
        let me = self.authenticate(token)?;
        let from = self.user_id(username)?;
        self.execute(Command::FriendRespond {
            user: me,
            from,
            accept,
            now: self.now(),
        })
        .map(|_| ())
    }

    pub fn friend_requests(&self, token: &str) -> Result<FriendRequests> {
        let me = self.authenticate(token)?;
        let state = self.state.read();
        let entry = |(id, at): (UserId, i64)| RequestEntry {
            user_id: id,
            username: state.identity().user(id).map(|p| p.username.clone()).unwrap_or_default(),
            at,
        };
        Ok(FriendRequests {
            incoming: state.social().incoming(me).into_iter().map(entry).collect(),
            outgoing: state.social().outgoing(me).into_iter().map(entry).collect(),
        })
    }

    pub fn remove_friend(&self, token: &str, username: &str) -> Result<()> {
        let me = self.authenticate(token)?;
        let other = self.user_id(username)?;
        self.execute(Command::RemoveFriend { user: me, other }).map(|_| ())
    }

    pub fn move_friend(&self, token: &str, username: &str, group: &str) -> Result<()> {
        let me = self.authenticate(token)?;
        let friend = self.user_id(username)?;
        self.execute(Command::MoveFriend {
            user: me,
            friend,
            group: group.to_string(),
        })
        .map(|_| ())
    }

    pub fn set_alias(&self, token: &str, username: &str, alias: Option<String>) -> Result<()> {
        let me = self.authenticate(token)?;
        let friend = self.user_id(username)?;
        self.execute(Command::SetAlias { user: me, friend, alias }).map(|_| ())
    }

    pub fn groups(&self, token: &str) -> Result<Vec<Group>> {
        let me = self.authenticate(token)?;
        Ok(self.state.read().social().groups(me).into_iter().cloned().collect())
    }

    pub fn create_group(&self, token: &str, name: &str) -> Result<Vec<Group>> {
        let me = self.authenticate(token)?;
        self.execute(Command::CreateGroup {
            user: me,
            name: name.to_string(),
        })?;
        self.groups(token)
    }

    pub fn rename_group(&self, token: &str, name: &str, new_name: &str) -> Result<Vec<Group>> {
        let me = self.authenticate(token)?;
        self.execute(Command::RenameGroup {
            user: me,
            name: name.to_string(),
            new_name: new_name.to_string(),
        })?;
        self.groups(token)
    }

    pub fn delete_group(&self, token: &str, name: &str) -> Result<Vec<Group>> {
        let me = self.authenticate(token)?;
        self.execute(Command::DeleteGroup {
            user: me,
            name: name.to_string(),
        })?;
        self.groups(token)
    }

    pub fn recommend(&self, token: &str, k: usize) -> Result<Vec<RecommendationScore>> {
        let me = self.authenticate(token)?;
        self.state.read().recommend(me, k)
    }

    pub fn search_users(&self, token: &str, query: &UserSearch) -> Result<Vec<ProfileView>> {
        let me = self.authenticate(token)?;
        Ok(self.state.read().search_users(me, query))
    }

    // ----- messaging -----

    pub fn heartbeat(&self, token: &str) -> Result<Presence> {
        let me = self.authenticate(token)?;
        expect_outcome!(
            self.execute(Command::Heartbeat {
                user: me,
                now: self.now(),
            }),
            Presence
        )
    }

    pub fn presence(&self, token: &str, usernames: &[String]) -> Result<Vec<PresenceEntry>> {
        self.authenticate(token)?;
        Ok(self.state.read().presence_of(usernames, self.now()))
    }

    /// Marks lapsed users offline. Returns whether anything changed.
    pub fn sweep_presence(&self) -> Result<bool> {
        let now = self.now();
        let needed = {
            let state = self.state.read();
            let lapsed = state.messaging().announced().any(|u| !state.is_online(u, now));
            lapsed || state.identity().sessions().any(|s| s.expires_at <= now)
        };
        if needed {
            self.execute(Command::PresenceSweep { now })?;
        }
        Ok(needed)
    }

    pub fn send_chat(&self, token: &str, to: &str, body: ChatBody) -> Result<ChatMessage> {
        let me = self.authenticate(token)?;
        let to = self.user_id(to)?;
        expect_outcome!(
            self.execute(Command::SendChat {
                from: me,
                to,
                body,
                now: self.now(),
            }),
            Chat
        )
    }

    pub fn chat_history(&self, token: &str, peer: &str, before: Option<u64>, limit: usize) -> Result<Vec<ChatMessage>> {
        let me = self.authenticate(token)?;
        let state = self.state.read();
        let peer = state.identity().require(peer)?.user_id;
        state.messaging().chat_history(me, (me, peer), before, limit)
    }

    pub fn set_history_saving(&self, token: &str, enabled: bool) -> Result<()> {
        let me = self.authenticate(token)?;
        self.execute(Command::SetHistorySaving { user: me, enabled }).map(|_| ())
    }

    /// Events after `since`. Polling also hands over queued chat and
    /// acknowledges everything up to `since`.
    pub fn poll_events(&self, token: &str, since: u64) -> Result<Vec<Envelope>> {
        let me = self.authenticate(token)?;
        let (pending, transient) = {
            let state = self.state.read();
            (
                state.messaging().has_pending(me),
                state.events().log(me).is_some_and(|l| l.has_unacked_transient(since)),
            )
        };
        if transient {
            self.execute(Command::AckEvents { user: me, upto: since })?;
        }
        if pending {
            self.execute(Command::Connect {
                user: me,
                now: self.now(),
            })?;
        }
        Ok(self.state.read().events_since(me, since))
    }

    pub fn latest_event_seq(&self, token: &str) -> Result<u64> {
        let me = self.authenticate(token)?;
        Ok(self.state.read().events().latest_seq(me))
    }

    pub fn send_mail(&self, token: &str, to: &str, subject: &str, body: &str) -> Result<Mail> {
        let me = self.authenticate(token)?;
        let to = self.user_id(to)?;
        expect_outcome!(
            self.execute(Command::SendMail {
                from: me,
                to,
                subject: subject.to_string(),
                body: body.to_string(),
                now: self.now(),
            }),
            Mail
        )
    }

    pub fn list_mail(&self, token: &str, folder: MailFolder) -> Result<MailBox> {
        let me = self.authenticate(token)?;
        let state = self.state.read();
        Ok(MailBox {
            unread: state.messaging().unread_count(me),
            mails: state.messaging().list_mail(me, folder).into_iter().cloned().collect(),
        })
    }

    pub fn read_mail(&self, token: &str, mail_id: u64) -> Result<Mail> {
        let me = self.authenticate(token)?;
        expect_outcome!(self.execute(Command::ReadMail { user: me, mail_id }), Mail)
    }

    pub fn delete_mail(&self, token: &str, mail_id: u64) -> Result<()> {
        let me = self.authenticate(token)?;
        self.execute(Command::DeleteMail { user: me, mail_id }).map(|_| ())
    }

    pub fn upload_blob(&self, token: &str, bytes: &[u8], media: &str) -> Result<BlobMeta> {
        let me = self.authenticate(token)?;
        check_blob_size(bytes.len())?;
        let id = blob_id(bytes);
        self.blobs
            .put(&id, bytes)
            .map_err(|e| Error::StorageFailure(format!("blob store: {e}")))?;
        expect_outcome!(
            self.execute(Command::RegisterBlob {
                meta: BlobMeta {
                    blob_id: id,
                    size: bytes.len(),
                    media: media.to_string(),
                    uploaded_by: me,
                    uploaded_at: self.now(),
                },
            }),
            Blob
        )
    }

    pub fn fetch_blob(&self, token: &str, id: &str) -> Result<(BlobMeta, Vec<u8>)> {
        self.authenticate(token)?;
        let meta = self.state.read().messaging().blob(id)?.clone();
        let bytes = self
            .blobs
            .get(id)
            .map_err(|e| Error::StorageFailure(format!("blob store: {e}")))?
            .ok_or_else(|| Error::UnknownBlob(id.to_string()))?;
        Ok((meta, bytes))
    }

    // ----- content -----

    pub fn feed(&self, token: &str, before: Option<u64>, limit: usize) -> Result<Vec<FeedItem>> {
        let me = self.authenticate(token)?;
        Ok(self.state.read().feed(me, before, limit))
    }

    pub fn blog_write(&self, token: &str, title: &str, body: &str) -> Result<BlogPost> {
        let me = self.authenticate(token)?;
        expect_outcome!(
            self.execute(Command::BlogWrite {
                author: me,
                title: title.to_string(),
                body: body.to_string(),
                now: self.now(),
            }),
            Blog
        )
    }

    pub fn blog_edit(&self, token: &str, post_id: u64, title: Option<String>, body: Option<String>) -> Result<BlogPost> {
        let me = self.authenticate(token)?;
        expect_outcome!(
            self.execute(Command::BlogEdit {
                author: me,
                post_id,
                title,
                body,
            }),
            Blog
        )
    }

    pub fn blog_publish(&self, token: &str, post_id: u64) -> Result<BlogPost> {
        let me = self.authenticate(token)?;
        expect_outcome!(
            self.execute(Command::BlogPublish {
                author: me,
                post_id,
                now: self.now(),
            }),
            Blog
        )
    }

    pub fn blog_delete(&self, token: &str, post_id: u64) -> Result<()> {
        let me = self.authenticate(token)?;
        self.execute(Command::BlogDelete { author: me, post_id }).map(|_| ())
    }

    pub fn blog_view(&self, token: &str, post_id: u64) -> Result<BlogPost> {
        let me = self.authenticate(token)?;
        self.state.read().content().blog_view(me, post_id).cloned()
    }

    pub fn blog_list(&self, token: &str, author: &str) -> Result<Vec<BlogPost>> {
        let me = self.authenticate(token)?;
        let state = self.state.read();
        let author = state.identity().require(author)?.user_id;
        Ok(state.content().blog_list(me, author).into_iter().cloned().collect())
    }

    pub fn album_create(&self, token: &str, title: &str) -> Result<Album> {
        let me = self.authenticate(token)?;
        expect_outcome!(
            self.execute(Command::AlbumCreate {
                owner: me,
                title: title.to_string(),
                now: self.now(),
            }),
            Album
        )
    }

    pub fn album_delete(&self, token: &str, album_id: u64) -> Result<()> {
        let me = self.authenticate(token)?;
        self.execute(Command::AlbumDelete { owner: me, album_id }).map(|_| ())
    }

    pub fn album_list(&self, token: &str, owner: &str) -> Result<Vec<Album>> {
        self.authenticate(token)?;
        let state = self.state.read();
        let owner = state.identity().require(owner)?.user_id;
        Ok(state.content().albums_of(owner).into_iter().cloned().collect())
    }

    pub fn album_view(&self, token: &str, album_id: u64) -> Result<AlbumView> {
        self.authenticate(token)?;
        let state = self.state.read();
        let album = state.content().album(album_id)?;
        Ok(AlbumView {
            album: album.clone(),
            photos: state.content().album_photos(album).into_iter().cloned().collect(),
        })
    }

    pub fn photo_upload(&self, token: &str, album_id: u64, photos: Vec<PhotoUpload>) -> Result<Vec<Photo>> {
        let me = self.authenticate(token)?;
        expect_outcome!(
            self.execute(Command::PhotoUpload {
                owner: me,
                album_id,
                photos,
                now: self.now(),
            }),
            Photos
        )
    }

    pub fn photo_edit(&self, token: &str, photo_id: u64, caption: &str) -> Result<Photo> {
        let me = self.authenticate(token)?;
        expect_outcome!(
            self.execute(Command::PhotoEdit {
                owner: me,
                photo_id,
                caption: caption.to_string(),
            }),
            Photo
        )
    }

    pub fn photo_delete(&self, token: &str, photo_id: u64) -> Result<()> {
        let me = self.authenticate(token)?;
        self.execute(Command::PhotoDelete { owner: me, photo_id }).map(|_| ())
    }

    pub fn comment(&self, token: &str, target: CommentTarget, text: &str) -> Result<Comment> {
        let me = self.authenticate(token)?;
        expect_outcome!(
            self.execute(Command::Comment {
                author: me,
                target,
                text: text.to_string(),
                now: self.now(),
            }),
            Comment
        )
    }

    pub fn record_visit(&self, token: &str, owner: &str) -> Result<()> {
        let me = self.authenticate(token)?;
        let owner = self.user_id(owner)?;
        self.execute(Command::RecordVisit {
            visitor: me,
            owner,
            now: self.now(),
        })
        .map(|_| ())
    }

    pub fn visitors(&self, token: &str) -> Result<Vec<(String, VisitRecord)>> {
        let me = self.authenticate(token)?;
        let visits = self.state.read().content().visitors(me);
        Ok(visits.into_iter().map(|v| (self.username(v.visitor), v)).collect())
    }

    // ----- local information -----

    /// City from the caller's fix, else from their profile.
    pub fn resolve_city(&self, user: UserId) -> Option<String> {
        let state = self.state.read();
        if let Some(rec) = state.geo().get(user) {
            if let Some(e) = self.gazetteer.reverse(&rec.fix.position) {
                return Some(e.city.clone());
            }
        }
        state.identity().user(user).and_then(|p| p.location.city.clone())
    }

    pub fn weather(&self, token: &str, city: &str, date: Option<NaiveDate>) -> Result<WeatherReport> {
        self.authenticate(token)?;
        let entry = self.gazetteer.resolve(city)?;
        let date = date.unwrap_or_else(|| {
            chrono::DateTime::from_timestamp_millis(self.now())
                .unwrap_or_default()
                .date_naive()
        });
        self.weather.forecast(&entry.city, date)
    }

    pub fn subscribe_news(&self, token: &str, sections: &[String]) -> Result<BTreeSet<NewsSection>> {
        let me = self.authenticate(token)?;
        let parsed = sections
            .iter()
            .map(|s| s.parse::<NewsSection>())
            .collect::<Result<BTreeSet<_>>>()?;
        self.execute(Command::Subscribe {
            user: me,
            sections: parsed.clone(),
        })?;
        Ok(parsed)
    }

    pub fn news_feed(&self, token: &str, before: Option<u64>, limit: usize) -> Result<Vec<NewsItem>> {
        let me = self.authenticate(token)?;
        let sections = self.state.read().local().subscriptions(me);
        let city = self.resolve_city(me);
        Ok(self.news.feed(&sections, city.as_deref(), before, limit))
    }

    fn require_city(&self, user: UserId, city: Option<&str>) -> Result<String> {
        match city.map(str::trim).filter(|c| !c.is_empty()) {
            Some(c) => Ok(self.gazetteer.resolve(c)?.city.clone()),
            None => self.resolve_city(user).ok_or(Error::MissingField("city")),
        }
    }

    pub fn forum_post(&self, token: &str, city: Option<&str>, title: &str, body: &str) -> Result<ForumPost> {
        let me = self.authenticate(token)?;
        let city = self.require_city(me, city)?;
        expect_outcome!(
            self.execute(Command::ForumPost {
                author: me,
                city,
                title: title.to_string(),
                body: body.to_string(),
                now: self.now(),
            }),
            Forum
        )
    }

    pub fn forum_moderate(&self, token: &str, post_id: u64, approve: bool) -> Result<ForumPost> {
        let me = self.authenticate(token)?;
        expect_outcome!(
            self.execute(Command::ForumModerate {
                admin: me,
                post_id,
                approve,
            }),
            Forum
        )
    }

    pub fn forum_reply(&self, token: &str, post_id: u64, body: &str) -> Result<ForumReply> {
        let me = self.authenticate(token)?;
        expect_outcome!(
            self.execute(Command::ForumReply {
                author: me,
                post_id,
                body: body.to_string(),
                now: self.now(),
            }),
            Reply
        )
    }

    pub fn forum_list(&self, token: &str, city: Option<&str>) -> Result<Vec<ForumPost>> {
        let me = self.authenticate(token)?;
        let city = self.require_city(me, city)?;
        Ok(self.state.read().local().list(me, &city).into_iter().cloned().collect())
    }

    pub fn forum_view(&self, token: &str, post_id: u64) -> Result<ForumPost> {
        let me = self.authenticate(token)?;
        let state = self.state.read();
        let admin = state.identity().user(me).is_some_and(|p| p.is_admin);
        state.local().view(me, admin, post_id).cloned()
    }

    pub fn forum_queue(&self, token: &str) -> Result<Vec<ForumPost>> {
        let me = self.authenticate(token)?;
        let state = self.state.read();
        if !state.identity().user(me).is_some_and(|p| p.is_admin) {
            return Err(Error::NotAdmin);
        }
        Ok(state.local().queue().into_iter().cloned().collect())
    }
}

fn gps_fix(g: GpsReading, now: i64) -> Result<Fix> {
    if !(g.accuracy > 0.0 && g.accuracy.is_finite()) {
        return Err(Error::InvalidMeasurement("gps accuracy must be positive".into()));
    }
    Ok(Fix {
        position: GeoPoint::new(g.lat, g.lon)?,
        accuracy: g.accuracy,
        method: Method::Gps,
        residual_rms: 0.0,
        timestamp: now,
    })
}
