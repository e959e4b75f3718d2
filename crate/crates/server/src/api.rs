//! HTTP/JSON routes under `/api/v1`.
//!
//! Every response body is `{"ok": ...}` or
//! `{"error": {"code", "message", "recovery_hint"?}}`, except successful
//! tile and blob downloads which return raw bytes.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{FromRequestParts, Path, Query, State};
use axum::http::request::Parts;
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post, put, MethodRouter};
use axum::{Json, Router};
use chrono::NaiveDate;
use lbsn_core::content::{CommentTarget, PhotoUpload};
use lbsn_core::geomath::GeoPoint;
use lbsn_core::geostore::PoiFilter;
use lbsn_core::identity::{ProfileUpdate, RegistrationForm};
use lbsn_core::messaging::{ChatBody, MailFolder, MAX_BLOB_BYTES};
use lbsn_core::platform::UserSearch;
use lbsn_core::service::{PositionReport, Service};
use lbsn_core::social::{FieldGroup, Tier};
use lbsn_core::{Error, UserId};
use parking_lot::Mutex;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Notify;

use crate::tiles::{content_type, Layer, TileRef, TileService};

pub const API_PREFIX: &str = "/api/v1";
/// Longest time an events request is held open.
pub const LONG_POLL_MS: u64 = 25_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RouteSpec {
    pub method: &'static str,
    /// Path below [`API_PREFIX`].
    pub path: &'static str,
    /// Module operations served by this route.
    pub ops: &'static [&'static str],
    /// Reachable without a session.
    pub public: bool,
}

const fn r(method: &'static str, path: &'static str, ops: &'static [&'static str]) -> RouteSpec {
    RouteSpec {
        method,
        path,
        ops,
        public: false,
    }
}

const fn open(method: &'static str, path: &'static str, ops: &'static [&'static str]) -> RouteSpec {
    RouteSpec {
        method,
        path,
        ops,
        public: true,
    }
}

/// Operations implemented by the gateway itself.
pub const GATEWAY_OPERATIONS: &[&str] = &["gateway.geocode", "gateway.tile", "gateway.events"];

pub const ROUTES: &[RouteSpec] = &[
    open("POST", "/register", &["identity.register"]),
    open("POST", "/activate", &["identity.activate"]),
    open("POST", "/login", &["identity.login"]),
    open("POST", "/recover", &["identity.recover_password"]),
    open("POST", "/redeem", &["identity.redeem_recovery"]),
    r("POST", "/logout", &["identity.logout"]),
    r("GET", "/profile", &["identity.account"]),
    r("PUT", "/profile", &["identity.update_profile"]),
    r("GET", "/profile/{username}", &["social.filter_profile"]),
    r("GET", "/privacy", &["social.get_privacy"]),
    r("PUT", "/privacy", &["social.set_privacy"]),
    r(
        "POST",
        "/position",
        &[
            "geomath.to_enu",
            "localization.trilaterate",
            "localization.multilaterate_tdoa",
            "localization.proximity_fix",
            "localization.best_fix",
            "geostore.upsert_position",
        ],
    ),
    r("GET", "/nearby", &["geomath.haversine", "geostore.query_radius", "social.visible_nearby"]),
    r("GET", "/knn", &["geostore.query_knn", "social.visible_knn"]),
    r("GET", "/poi", &["geostore.search_poi"]),
    r("GET", "/geocode", &["gateway.geocode"]),
    r("GET", "/friends", &["social.list_friends"]),
    r("POST", "/friends", &["social.add_friend"]),
    r("DELETE", "/friends/{username}", &["social.remove_friend"]),
    r("PUT", "/friends/{username}/group", &["social.move_to_group"]),
    r("PUT", "/friends/{username}/alias", &["social.set_alias"]),
    r("GET", "/requests", &["social.list_requests"]),
    r("POST", "/requests", &["social.respond_request"]),
    r("GET", "/groups", &["social.list_groups"]),
    r("POST", "/groups", &["social.create_group"]),
    r("PUT", "/groups/{name}", &["social.rename_group"]),
    r("DELETE", "/groups/{name}", &["social.delete_group"]),
    r("GET", "/recommend", &["social.recommend"]),
    r("GET", "/users", &["social.search_users"]),
    r("POST", "/heartbeat", &["messaging.heartbeat"]),
    r("GET", "/presence", &["messaging.presence_of"]),
    r("POST", "/chat", &["messaging.send_chat"]),
    r("GET", "/chat/history", &["messaging.chat_history"]),
    r("PUT", "/chat/settings", &["messaging.set_history_saving"]),
    r("POST", "/mail", &["messaging.send_mail"]),
    r("GET", "/mail", &["messaging.list_mail"]),
    r("GET", "/mail/{id}", &["messaging.read_mail"]),
    r("DELETE", "/mail/{id}", &["messaging.delete_mail"]),
    r("POST", "/blob", &["messaging.upload_blob"]),
    r("GET", "/blob/{id}", &["messaging.fetch_blob"]),
    r("GET", "/feed", &["content.friend_feed"]),
    r("POST", "/comment", &["content.comment"]),
    r("POST", "/blog", &["content.blog_write"]),
    r("GET", "/blog", &["content.blog_list"]),
    r("GET", "/blog/{id}", &["content.blog_view"]),
    r("PUT", "/blog/{id}", &["content.blog_edit"]),
    r("DELETE", "/blog/{id}", &["content.blog_delete"]),
    r("POST", "/blog/{id}/publish", &["content.blog_publish"]),
    r("POST", "/album", &["content.album_create"]),
    r("GET", "/album", &["content.album_list"]),
    r("GET", "/album/{id}", &["content.album_view"]),
    r("DELETE", "/album/{id}", &["content.album_delete"]),
    r("POST", "/album/{id}/photos", &["content.photo_upload"]),
    r("PUT", "/photo/{id}", &["content.photo_edit"]),
    r("DELETE", "/photo/{id}", &["content.photo_delete"]),
    r("POST", "/visitors/{username}", &["content.record_visit"]),
    r("GET", "/visitors", &["content.list_visitors"]),
    r("GET", "/weather", &["localinfo.weather"]),
    r("GET", "/news", &["localinfo.news_feed"]),
    r("POST", "/news/subscribe", &["localinfo.subscribe_news"]),
    r("POST", "/forum", &["localinfo.forum_post"]),
    r("GET", "/forum", &["localinfo.forum_list"]),
    r("GET", "/forum/queue", &["localinfo.forum_queue"]),
    r("GET", "/forum/{id}", &["localinfo.forum_view"]),
    r("POST", "/forum/{id}/moderate", &["localinfo.forum_moderate"]),
    r("POST", "/forum/{id}/reply", &["localinfo.forum_reply"]),
    r("GET", "/tiles/{layer}/{z}/{x}/{y}", &["gateway.tile"]),
    r("GET", "/events", &["gateway.events"]),
];

/// Wakes long-poll requests when a user's event stream advances.
#[derive(Default)]
pub struct Waiters {
    map: Mutex<HashMap<UserId, Arc<Notify>>>,
}

impl Waiters {
    pub fn handle(&self, user: UserId) -> Arc<Notify> {
        self.map.lock().entry(user).or_default().clone()
    }

    pub fn wake(&self, users: &[UserId]) {
        let map = self.map.lock();
        for u in users {
            if let Some(n) = map.get(u) {
                n.notify_waiters();
            }
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    pub svc: Arc<Service>,
    pub tiles: Arc<TileService>,
    pub waiters: Arc<Waiters>,
}

impl AppState {
    /// Registers the wake-up listener on the service.
    pub fn new(svc: Arc<Service>, tiles: TileService) -> AppState {
        let waiters = Arc::new(Waiters::default());
        let w = waiters.clone();
        svc.set_listener(Arc::new(move |users: &[UserId]| w.wake(users)));
        AppState {
            svc,
            tiles: Arc::new(tiles),
            waiters,
        }
    }
}

pub fn status_for(e: &Error) -> StatusCode {
    use Error::*;
    match e {
        Unauthorized | BadCredentials { .. } => StatusCode::UNAUTHORIZED,
        NotAdmin | NotVisible | NotYourMail | NotFriends | NotApproved | NotActivated => StatusCode::FORBIDDEN,
        UnknownUser(_) | UnknownGroup(_) | UnknownBlob(_) | UnknownAlbum(_) | UnknownPhoto(_) | UnknownPost(_)
        | UnknownCity(_) | NotFound => StatusCode::NOT_FOUND,
        DuplicateUsername(_) | AlreadyActivated | AlreadyFriends | AlreadyPublished | DuplicateGroupName(_)
        | StaleUpdate => StatusCode::CONFLICT,
        TooLarge(_) | BodyTooLarge(_) => StatusCode::PAYLOAD_TOO_LARGE,
        ProviderUnavailable(_) | UpstreamUnavailable(_) => StatusCode::BAD_GATEWAY,
        StorageFailure(_) | CorruptLog(_) => StatusCode::INTERNAL_SERVER_ERROR,
        InsufficientBeacons { .. } | DegenerateGeometry(_) | NoConvergence(_) | AmbiguousSolution => {
            StatusCode::UNPROCESSABLE_ENTITY
        }
        _ => StatusCode::BAD_REQUEST,
    }
}

pub fn error_body(e: &Error) -> serde_json::Value {
    let mut err = json!({ "code": e.code(), "message": e.to_string() });
    if let Some(hint) = e.recovery_hint() {
        err["recovery_hint"] = json!(hint);
    }
    json!({ "error": err })
}

#[derive(Debug)]
pub struct ApiError(pub Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (status_for(&self.0), Json(error_body(&self.0))).into_response()
    }
}

pub struct ApiOk<T>(pub T);

impl<T: Serialize> IntoResponse for ApiOk<T> {
    fn into_response(self) -> Response {
        Json(json!({ "ok": self.0 })).into_response()
    }
}

type Reply = Result<Response, ApiError>;

fn bad_request(e: impl std::fmt::Display) -> ApiError {
    ApiError(Error::BadRequest(e.to_string()))
}

/// Session token from `Authorization: Bearer` or `?access_token=`.
pub struct Token(pub String);

impl<S: Send + Sync> FromRequestParts<S> for Token {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, _: &S) -> Result<Self, Self::Rejection> {
        if let Some(v) = parts.headers.get(header::AUTHORIZATION).and_then(|v| v.to_str().ok()) {
            if let Some(t) = v.strip_prefix("Bearer ") {
                return Ok(Token(t.trim().to_string()));
            }
        }
        #[derive(Deserialize)]
        struct Q {
            access_token: Option<String>,
        }
        let q = Query::<Q>::try_from_uri(&parts.uri).ok();
        match q.and_then(|q| q.0.access_token) {
            Some(t) => Ok(Token(t)),
            None => Err(ApiError(Error::Unauthorized)),
        }
    }
}

/// Query string with rejections in the API error format.
pub struct Q<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequestParts<S> for Q<T> {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, _: &S) -> Result<Self, Self::Rejection> {
        Query::<T>::try_from_uri(&parts.uri).map(|q| Q(q.0)).map_err(bad_request)
    }
}

/// Path parameters with rejections in the API error format.
pub struct P<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned + Send> FromRequestParts<S> for P<T> {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, Self::Rejection> {
        Path::<T>::from_request_parts(parts, state)
            .await
            .map(|p| P(p.0))
            .map_err(bad_request)
    }
}

fn body<T: DeserializeOwned>(bytes: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(bytes).map_err(bad_request)
}

/// Runs a service call off the async workers.
async fn run<T, F>(st: &AppState, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&Service) -> lbsn_core::Result<T> + Send + 'static,
{
    let svc = st.svc.clone();
    tokio::task::spawn_blocking(move || f(&svc))
        .await
        .map_err(|e| ApiError(Error::StorageFailure(e.to_string())))?
        .map_err(ApiError)
}

macro_rules! call {
    ($st:expr, |$s:ident| $e:expr) => {
        run(&$st, move |$s: &Service| $e).await.map(|v| ApiOk(v).into_response())
    };
}

fn default_limit() -> usize {
    20
}

// ----- identity -----

async fn register(State(st): State<AppState>, b: Bytes) -> Reply {
    let form: RegistrationForm = body(&b)?;
    let id = run(&st, move |s| s.register(form)).await?;
    Ok(ApiOk(json!({ "user_id": id })).into_response())
}

#[derive(Deserialize)]
struct ActivateReq {
    username: String,
    code: String,
}

async fn activate(State(st): State<AppState>, b: Bytes) -> Reply {
    let req: ActivateReq = body(&b)?;
    let id = run(&st, move |s| s.activate(&req.username, &req.code)).await?;
    Ok(ApiOk(json!({ "user_id": id })).into_response())
}

#[derive(Deserialize)]
struct LoginReq {
    username: String,
    password: String,
}

async fn login(State(st): State<AppState>, b: Bytes) -> Reply {
    let req: LoginReq = body(&b)?;
    call!(st, |s| s.login(&req.username, &req.password))
}

#[derive(Deserialize)]
struct UsernameReq {
    username: String,
}

async fn recover(State(st): State<AppState>, b: Bytes) -> Reply {
    let req: UsernameReq = body(&b)?;
    call!(st, |s| s.recover_password(&req.username))
}

#[derive(Deserialize)]
struct RedeemReq {
    username: String,
    code: String,
    new_password: String,
}

async fn redeem(State(st): State<AppState>, b: Bytes) -> Reply {
    let req: RedeemReq = body(&b)?;
    call!(st, |s| s.redeem_recovery(&req.username, &req.code, &req.new_password))
}

async fn logout(State(st): State<AppState>, Token(t): Token) -> Reply {
    call!(st, |s| s.logout(&t))
}

async fn profile_get(State(st): State<AppState>, Token(t): Token) -> Reply {
    call!(st, |s| s.account(&t))
}

async fn profile_put(State(st): State<AppState>, Token(t): Token, b: Bytes) -> Reply {
    let update: ProfileUpdate = body(&b)?;
    call!(st, |s| s.update_profile(&t, update))
}

async fn profile_of(State(st): State<AppState>, Token(t): Token, P(name): P<String>) -> Reply {
    call!(st, |s| s.view_profile(&t, &name))
}

async fn privacy_get(State(st): State<AppState>, Token(t): Token) -> Reply {
    call!(st, |s| s.account(&t).map(|a| a.privacy))
}

async fn privacy_put(State(st): State<AppState>, Token(t): Token, b: Bytes) -> Reply {
    let changes: BTreeMap<FieldGroup, Tier> = body(&b)?;
    call!(st, |s| s.set_privacy(&t, &changes))
}

// ----- location -----

async fn position(State(st): State<AppState>, Token(t): Token, b: Bytes) -> Reply {
    let report: PositionReport = body(&b)?;
    call!(st, |s| s.submit_position(&t, &report))
}

#[derive(Deserialize)]
struct NearbyQ {
    #[serde(default = "default_radius")]
    radius: f64,
    #[serde(default)]
    friends_only: bool,
}

fn default_radius() -> f64 {
    1000.0
}

async fn nearby(State(st): State<AppState>, Token(t): Token, Q(q): Q<NearbyQ>) -> Reply {
    call!(st, |s| s.nearby(&t, q.radius, q.friends_only))
}

#[derive(Deserialize)]
struct KnnQ {
    #[serde(default = "default_k")]
    k: usize,
}

fn default_k() -> usize {
    10
}

async fn knn(State(st): State<AppState>, Token(t): Token, Q(q): Q<KnnQ>) -> Reply {
    call!(st, |s| s.knn(&t, q.k))
}

#[derive(Deserialize)]
struct PoiQ {
    lat: Option<f64>,
    lon: Option<f64>,
    #[serde(default = "default_radius")]
    radius: f64,
    category: Option<String>,
    name: Option<String>,
}

async fn poi(State(st): State<AppState>, Token(t): Token, Q(q): Q<PoiQ>) -> Reply {
    let center = match (q.lat, q.lon) {
        (Some(lat), Some(lon)) => Some(GeoPoint::new(lat, lon)?),
        (None, None) => None,
        _ => return Err(bad_request("lat and lon go together")),
    };
    let filter = PoiFilter {
        category: q.category.map(|c| c.parse()).transpose().map_err(bad_request)?,
        name: q.name,
    };
    call!(st, |s| s.search_poi(&t, center, q.radius, &filter))
}

#[derive(Deserialize)]
struct GeocodeQ {
    q: String,
}

async fn geocode(State(st): State<AppState>, Token(t): Token, Q(q): Q<GeocodeQ>) -> Reply {
    call!(st, |s| s.geocode(&t, &q.q))
}

// ----- social -----

async fn friends(State(st): State<AppState>, Token(t): Token) -> Reply {
    call!(st, |s| s.friends(&t))
}

async fn friend_add(State(st): State<AppState>, Token(t): Token, b: Bytes) -> Reply {
    let req: UsernameReq = body(&b)?;
    call!(st, |s| s.request_friend(&t, &req.username))
}

async fn friend_remove(State(st): State<AppState>, Token(t): Token, P(name): P<String>) -> Reply {
    call!(st, |s| s.remove_friend(&t, &name))
}

#[derive(Deserialize)]
struct GroupReq {
    group: String,
}

async fn friend_group(State(st): State<AppState>, Token(t): Token, P(name): P<String>, b: Bytes) -> Reply {
    let req: GroupReq = body(&b)?;
    call!(st, |s| s.move_friend(&t, &name, &req.group))
}

#[derive(Deserialize)]
struct AliasReq {
    alias: Option<String>,
}

async fn friend_alias(State(st): State<AppState>, Token(t): Token, P(name): P<String>, b: Bytes) -> Reply {
    let req: AliasReq = body(&b)?;
    call!(st, |s| s.set_alias(&t, &name, req.alias))
}

async fn requests(State(st): State<AppState>, Token(t): Token) -> Reply {
    call!(st, |s| s.friend_requests(&t))
}

#[derive(Deserialize)]
struct RespondReq {
    username: String,
    accept: bool,
}

async fn respond(State(st): State<AppState>, Token(t): Token, b: Bytes) -> Reply {
    let req: RespondReq = body(&b)?;
    call!(st, |s| s.respond_friend(&t, &req.username, req.accept))
}

async fn groups(State(st): State<AppState>, Token(t): Token) -> Reply {
    call!(st, |s| s.groups(&t))
}

#[derive(Deserialize)]
struct NameReq {
    name: String,
}

async fn group_create(State(st): State<AppState>, Token(t): Token, b: Bytes) -> Reply {
    let req: NameReq = body(&b)?;
    call!(st, |s| s.create_group(&t, &req.name))
}

#[derive(Deserialize)]
struct RenameReq {
    new_name: String,
}

async fn group_rename(State(st): State<AppState>, Token(t): Token, P(name): P<String>, b: Bytes) -> Reply {
    let req: RenameReq = body(&b)?;
    call!(st, |s| s.rename_group(&t, &name, &req.new_name))
}

async fn group_delete(State(st): State<AppState>, Token(t): Token, P(name): P<String>) -> Reply {
    call!(st, |s| s.delete_group(&t, &name))
}

async fn recommend(State(st): State<AppState>, Token(t): Token, Q(q): Q<KnnQ>) -> Reply {
    call!(st, |s| s.recommend(&t, q.k))
}

async fn users(State(st): State<AppState>, Token(t): Token, Q(q): Q<UserSearch>) -> Reply {
    call!(st, |s| s.search_users(&t, &q))
}

// ----- messaging -----

async fn heartbeat(State(st): State<AppState>, Token(t): Token) -> Reply {
    call!(st, |s| s.heartbeat(&t))
}

#[derive(Deserialize)]
struct PresenceQ {
    users: String,
}

async fn presence(State(st): State<AppState>, Token(t): Token, Q(q): Q<PresenceQ>) -> Reply {
    let names: Vec<String> = q
        .users
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect();
    call!(st, |s| s.presence(&t, &names))
}

#[derive(Deserialize)]
struct ChatReq {
    to: String,
    body: ChatBody,
}

async fn chat(State(st): State<AppState>, Token(t): Token, b: Bytes) -> Reply {
    let req: ChatReq = body(&b)?;
    call!(st, |s| s.send_chat(&t, &req.to, req.body))
}

#[derive(Deserialize)]
struct HistoryQ {
    peer: String,
    before: Option<u64>,
    #[serde(default = "default_limit")]
    limit: usize,
}

async fn chat_history(State(st): State<AppState>, Token(t): Token, Q(q): Q<HistoryQ>) -> Reply {
    call!(st, |s| s.chat_history(&t, &q.peer, q.before, q.limit))
}

#[derive(Deserialize)]
struct SettingsReq {
    history_saving: bool,
}

async fn chat_settings(State(st): State<AppState>, Token(t): Token, b: Bytes) -> Reply {
    let req: SettingsReq = body(&b)?;
    call!(st, |s| s.set_history_saving(&t, req.history_saving))
}

#[derive(Deserialize)]
struct MailReq {
    to: String,
    subject: String,
    #[serde(default)]
    body: String,
}

async fn mail_send(State(st): State<AppState>, Token(t): Token, b: Bytes) -> Reply {
    let req: MailReq = body(&b)?;
    call!(st, |s| s.send_mail(&t, &req.to, &req.subject, &req.body))
}

#[derive(Deserialize)]
struct FolderQ {
    folder: Option<MailFolder>,
}

async fn mail_list(State(st): State<AppState>, Token(t): Token, Q(q): Q<FolderQ>) -> Reply {
    call!(st, |s| s.list_mail(&t, q.folder.unwrap_or(MailFolder::Inbox)))
}

async fn mail_read(State(st): State<AppState>, Token(t): Token, P(id): P<u64>) -> Reply {
    call!(st, |s| s.read_mail(&t, id))
}

async fn mail_delete(State(st): State<AppState>, Token(t): Token, P(id): P<u64>) -> Reply {
    call!(st, |s| s.delete_mail(&t, id))
}

async fn blob_upload(State(st): State<AppState>, Token(t): Token, headers: HeaderMap, b: Bytes) -> Reply {
    let media = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("application/octet-stream")
        .to_string();
    call!(st, |s| s.upload_blob(&t, &b, &media))
}

async fn blob_fetch(State(st): State<AppState>, Token(t): Token, P(id): P<String>) -> Reply {
    let (meta, bytes) = run(&st, move |s| s.fetch_blob(&t, &id)).await?;
    Ok(([(header::CONTENT_TYPE, meta.media)], bytes).into_response())
}

// ----- content -----

#[derive(Deserialize)]
struct PageQ {
    before: Option<u64>,
    #[serde(default = "default_limit")]
    limit: usize,
}

async fn feed(State(st): State<AppState>, Token(t): Token, Q(q): Q<PageQ>) -> Reply {
    call!(st, |s| s.feed(&t, q.before, q.limit))
}

#[derive(Deserialize)]
struct CommentReq {
    target: CommentTarget,
    text: String,
}

async fn comment(State(st): State<AppState>, Token(t): Token, b: Bytes) -> Reply {
    let req: CommentReq = body(&b)?;
    call!(st, |s| s.comment(&t, req.target, &req.text))
}

#[derive(Deserialize)]
struct BlogReq {
    title: String,
    #[serde(default)]
    body: String,
}

async fn blog_write(State(st): State<AppState>, Token(t): Token, b: Bytes) -> Reply {
    let req: BlogReq = body(&b)?;
    call!(st, |s| s.blog_write(&t, &req.title, &req.body))
}

#[derive(Deserialize)]
struct AuthorQ {
    author: String,
}

async fn blog_list(State(st): State<AppState>, Token(t): Token, Q(q): Q<AuthorQ>) -> Reply {
    call!(st, |s| s.blog_list(&t, &q.author))
}

async fn blog_view(State(st): State<AppState>, Token(t): Token, P(id): P<u64>) -> Reply {
    call!(st, |s| s.blog_view(&t, id))
}

#[derive(Deserialize)]
struct BlogEditReq {
    title: Option<String>,
    body: Option<String>,
}

async fn blog_edit(State(st): State<AppState>, Token(t): Token, P(id): P<u64>, b: Bytes) -> Reply {
    let req: BlogEditReq = body(&b)?;
    call!(st, |s| s.blog_edit(&t, id, req.title, req.body))
}

async fn blog_delete(State(st): State<AppState>, Token(t): Token, P(id): P<u64>) -> Reply {
    call!(st, |s| s.blog_delete(&t, id))
}

async fn blog_publish(State(st): State<AppState>, Token(t): Token, P(id): P<u64>) -> Reply {
    call!(st, |s| s.blog_publish(&t, id))
}

#[derive(Deserialize)]
struct TitleReq {
    title: String,
}

async fn album_create(State(st): State<AppState>, Token(t): Token, b: Bytes) -> Reply {
    let req: TitleReq = body(&b)?;
    call!(st, |s| s.album_create(&t, &req.title))
}

#[derive(Deserialize)]
struct OwnerQ {
    owner: String,
}

async fn album_list(State(st): State<AppState>, Token(t): Token, Q(q): Q<OwnerQ>) -> Reply {
    call!(st, |s| s.album_list(&t, &q.owner))
}

async fn album_view(State(st): State<AppState>, Token(t): Token, P(id): P<u64>) -> Reply {
    call!(st, |s| s.album_view(&t, id))
}

async fn album_delete(State(st): State<AppState>, Token(t): Token, P(id): P<u64>) -> Reply {
    call!(st, |s| s.album_delete(&t, id))
}

#[derive(Deserialize)]
struct PhotosReq {
    photos: Vec<PhotoUpload>,
}

async fn photo_upload(State(st): State<AppState>, Token(t): Token, P(id): P<u64>, b: Bytes) -> Reply {
    let req: PhotosReq = body(&b)?;
    call!(st, |s| s.photo_upload(&t, id, req.photos))
}

#[derive(Deserialize)]
struct CaptionReq {
    caption: String,
}

async fn photo_edit(State(st): State<AppState>, Token(t): Token, P(id): P<u64>, b: Bytes) -> Reply {
    let req: CaptionReq = body(&b)?;
    call!(st, |s| s.photo_edit(&t, id, &req.caption))
}

async fn photo_delete(State(st): State<AppState>, Token(t): Token, P(id): P<u64>) -> Reply {
    call!(st, |s| s.photo_delete(&t, id))
}

async fn visit(State(st): State<AppState>, Token(t): Token, P(owner): P<String>) -> Reply {
    call!(st, |s| s.record_visit(&t, &owner))
}

#[derive(Serialize)]
struct VisitorEntry {
    username: String,
    #[serde(flatten)]
    visit: lbsn_core::content::VisitRecord,
}

async fn visitors(State(st): State<AppState>, Token(t): Token) -> Reply {
    call!(st, |s| s
        .visitors(&t)
        .map(|v| v.into_iter().map(|(username, visit)| VisitorEntry { username, visit }).collect::<Vec<_>>()))
}

// ----- local information -----

#[derive(Deserialize)]
struct WeatherQ {
    city: String,
    date: Option<NaiveDate>,
}

async fn weather(State(st): State<AppState>, Token(t): Token, Q(q): Q<WeatherQ>) -> Reply {
    call!(st, |s| s.weather(&t, &q.city, q.date))
}

async fn news(State(st): State<AppState>, Token(t): Token, Q(q): Q<PageQ>) -> Reply {
    call!(st, |s| s.news_feed(&t, q.before, q.limit))
}

#[derive(Deserialize)]
struct SubscribeReq {
    sections: Vec<String>,
}

async fn news_subscribe(State(st): State<AppState>, Token(t): Token, b: Bytes) -> Reply {
    let req: SubscribeReq = body(&b)?;
    call!(st, |s| s.subscribe_news(&t, &req.sections))
}

#[derive(Deserialize)]
struct ForumPostReq {
    city: Option<String>,
    title: String,
    #[serde(default)]
    body: String,
}

async fn forum_post(State(st): State<AppState>, Token(t): Token, b: Bytes) -> Reply {
    let req: ForumPostReq = body(&b)?;
    call!(st, |s| s.forum_post(&t, req.city.as_deref(), &req.title, &req.body))
}

#[derive(Deserialize)]
struct CityQ {
    city: Option<String>,
}

async fn forum_list(State(st): State<AppState>, Token(t): Token, Q(q): Q<CityQ>) -> Reply {
    call!(st, |s| s.forum_list(&t, q.city.as_deref()))
}

async fn forum_queue(State(st): State<AppState>, Token(t): Token) -> Reply {
    call!(st, |s| s.forum_queue(&t))
}

async fn forum_view(State(st): State<AppState>, Token(t): Token, P(id): P<u64>) -> Reply {
    call!(st, |s| s.forum_view(&t, id))
}

#[derive(Deserialize)]
struct ModerateReq {
    approve: bool,
}

async fn forum_moderate(State(st): State<AppState>, Token(t): Token, P(id): P<u64>, b: Bytes) -> Reply {
    let req: ModerateReq = body(&b)?;
    call!(st, |s| s.forum_moderate(&t, id, req.approve))
}

#[derive(Deserialize)]
struct ReplyReq {
    body: String,
}

async fn forum_reply(State(st): State<AppState>, Token(t): Token, P(id): P<u64>, b: Bytes) -> Reply {
    let req: ReplyReq = body(&b)?;
    call!(st, |s| s.forum_reply(&t, id, &req.body))
}

// ----- gateway -----

async fn tile(
    State(st): State<AppState>,
    Token(t): Token,
    P((layer, z, x, y)): P<(String, u64, u64, String)>,
) -> Reply {
    run(&st, move |s| s.authenticate(&t)).await?;
    let layer: Layer = layer.parse()?;
    let y = y.strip_suffix(".png").unwrap_or(&y);
    let y: u64 = y.parse().map_err(|_| bad_request(format!("bad tile row {y:?}")))?;
    let tile = TileRef::new(layer, z, x, y)?;
    let bytes = st.tiles.get(tile).await?;
    Ok(([(header::CONTENT_TYPE, content_type(&bytes))], bytes).into_response())
}

#[derive(Deserialize)]
struct EventsQ {
    #[serde(default)]
    since: u64,
    timeout_ms: Option<u64>,
}

async fn events(State(st): State<AppState>, Token(t): Token, Q(q): Q<EventsQ>) -> Reply {
    let token = t.clone();
    let user = run(&st, move |s| s.authenticate(&token)).await?;
    let notify = st.waiters.handle(user);
    let wait = Duration::from_millis(q.timeout_ms.unwrap_or(LONG_POLL_MS).min(LONG_POLL_MS));
    let deadline = tokio::time::Instant::now() + wait;
    loop {
        // Registered before checking so a wake-up in between is not lost.
        let notified = notify.notified();
        tokio::pin!(notified);
        notified.as_mut().enable();
        let token = t.clone();
        let evs = run(&st, move |s| s.poll_events(&token, q.since)).await?;
        if !evs.is_empty() {
            return Ok(ApiOk(evs).into_response());
        }
        if tokio::time::timeout_at(deadline, notified).await.is_err() {
            return Ok(ApiOk(evs).into_response());
        }
    }
}

async fn not_found() -> ApiError {
    ApiError(Error::NotFound)
}

fn handler(spec: &RouteSpec) -> MethodRouter<AppState> {
    match (spec.method, spec.path) {
        ("POST", "/register") => post(register),
        ("POST", "/activate") => post(activate),
        ("POST", "/login") => post(login),
        ("POST", "/recover") => post(recover),
        ("POST", "/redeem") => post(redeem),
        ("POST", "/logout") => post(logout),
        ("GET", "/profile") => get(profile_get),
        ("PUT", "/profile") => put(profile_put),
        ("GET", "/profile/{username}") => get(profile_of),
        ("GET", "/privacy") => get(privacy_get),
        ("PUT", "/privacy") => put(privacy_put),
        ("POST", "/position") => post(position),
        ("GET", "/nearby") => get(nearby),
        ("GET", "/knn") => get(knn),
        ("GET", "/poi") => get(poi),
        ("GET", "/geocode") => get(geocode),
        ("GET", "/friends") => get(friends),
        ("POST", "/friends") => post(friend_add),
        ("DELETE", "/friends/{username}") => delete(friend_remove),
        ("PUT", "/friends/{username}/group") => put(friend_group),
        ("PUT", "/friends/{username}/alias") => put(friend_alias),
        ("GET", "/requests") => get(requests),
        ("POST", "/requests") => post(respond),
        ("GET", "/groups") => get(groups),
        ("POST", "/groups") => post(group_create),
        ("PUT", "/groups/{name}") => put(group_rename),
        ("DELETE", "/groups/{name}") => delete(group_delete),
        ("GET", "/recommend") => get(recommend),
        ("GET", "/users") => get(users),
        ("POST", "/heartbeat") => post(heartbeat),
        ("GET", "/presence") => get(presence),
        ("POST", "/chat") => post(chat),
        ("GET", "/chat/history") => get(chat_history),
        ("PUT", "/chat/settings") => put(chat_settings),
        ("POST", "/mail") => post(mail_send),
        ("GET", "/mail") => get(mail_list),
        ("GET", "/mail/{id}") => get(mail_read),
        ("DELETE", "/mail/{id}") => delete(mail_delete),
        ("POST", "/blob") => post(blob_upload),
        ("GET", "/blob/{id}") => get(blob_fetch),
        ("GET", "/feed") => get(feed),
        ("POST", "/comment") => post(comment),
        ("POST", "/blog") => post(blog_write),
        ("GET", "/blog") => get(blog_list),
        ("GET", "/blog/{id}") => get(blog_view),
        ("PUT", "/blog/{id}") => put(blog_edit),
        ("DELETE", "/blog/{id}") => delete(blog_delete),
        ("POST", "/blog/{id}/publish") => post(blog_publish),
        ("POST", "/album") => post(album_create),
        ("GET", "/album") => get(album_list),
        ("GET", "/album/{id}") => get(album_view),
        ("DELETE", "/album/{id}") => delete(album_delete),
        ("POST", "/album/{id}/photos") => post(photo_upload),
        ("PUT", "/photo/{id}") => put(photo_edit),
        ("DELETE", "/photo/{id}") => delete(photo_delete),
        ("POST", "/visitors/{username}") => post(visit),
        ("GET", "/visitors") => get(visitors),
        ("GET", "/weather") => get(weather),
        ("GET", "/news") => get(news),
        ("POST", "/news/subscribe") => post(news_subscribe),
        ("POST", "/forum") => post(forum_post),
        ("GET", "/forum") => get(forum_list),
        ("GET", "/forum/queue") => get(forum_queue),
        ("GET", "/forum/{id}") => get(forum_view),
        ("POST", "/forum/{id}/moderate") => post(forum_moderate),
        ("POST", "/forum/{id}/reply") => post(forum_reply),
        ("GET", "/tiles/{layer}/{z}/{x}/{y}") => get(tile),
        ("GET", "/events") => get(events),
        (m, p) => panic!("no handler for {m} {p}"),
    }
}

/// The full API, mounted from [`ROUTES`].
pub fn router(state: AppState) -> Router {
    let mut by_path: Vec<(&str, MethodRouter<AppState>)> = Vec::new();
    for spec in ROUTES {
        let h = handler(spec);
        match by_path.iter_mut().find(|(p, _)| *p == spec.path) {
            Some((_, mr)) => *mr = std::mem::take(mr).merge(h),
            None => by_path.push((spec.path, h)),
        }
    }
    let mut api = Router::new();
    for (path, mr) in by_path {
        api = api.route(path, mr.fallback(method_not_allowed));
    }
    Router::new()
        .nest(API_PREFIX, api)
        .fallback(not_found)
        .layer(axum::extract::DefaultBodyLimit::max(MAX_BLOB_BYTES + (1 << 20)))
        .with_state(state)
}

async fn method_not_allowed() -> Response {
    let e = Error::BadRequest("method not allowed".into());
    (StatusCode::METHOD_NOT_ALLOWED, Json(error_body(&e))).into_response()
}
