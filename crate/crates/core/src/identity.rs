//! Accounts, sessions and one-time codes.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::{self, Write};
use std::path::PathBuf;

use argon2::password_hash::{PasswordHash, PasswordHasher as _, PasswordVerifier, SaltString};
use argon2::{Algorithm, Argon2, Params, Version};
use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use chrono::NaiveDate;
use parking_lot::Mutex;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::social::PrivacyPolicy;
use crate::UserId;

pub const SESSION_TOKEN_BYTES: usize = 16;
pub const CODE_LIFETIME_MS: i64 = 15 * 60 * 1000;
pub const DEFAULT_SESSION_TTL_MS: i64 = 24 * 60 * 60 * 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Gender {
    Male,
    Female,
    #[default]
    Unspecified,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BasicInfo {
    pub nickname: String,
    pub gender: Gender,
    pub birthday: Option<NaiveDate>,
    /// Blob id of the avatar image.
    pub avatar: Option<String>,
    pub status_text: String,
    /// Lowercase interest tags.
    pub interests: std::collections::BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ContactInfo {
    pub email: String,
    pub phone: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LocationInfo {
    pub city: Option<String>,
    pub country: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: UserId,
    pub username: String,
    pub password_digest: String,
    pub basic: BasicInfo,
    pub contact: ContactInfo,
    pub location: LocationInfo,
    pub privacy: PrivacyPolicy,
    pub is_admin: bool,
    pub activated: bool,
    pub created_at: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub token: String,
    pub user_id: UserId,
    pub created_at: i64,
    pub expires_at: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CodePurpose {
    Activation,
    Recovery,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneTimeCode {
    pub code: String,
    pub purpose: CodePurpose,
    pub user_id: UserId,
    pub expires_at: i64,
    pub consumed: bool,
}

/// Registration input as submitted by a client.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistrationForm {
    pub username: String,
    /// Never serialized, so forms can be logged without the secret.
    #[serde(skip_serializing)]
    pub password: String,
    pub nickname: String,
    pub email: String,
    pub phone: String,
    pub gender: Gender,
    pub birthday: Option<NaiveDate>,
    pub interests: Vec<String>,
    pub city: Option<String>,
    pub country: Option<String>,
}

impl RegistrationForm {
    pub fn validate(&self) -> Result<()> {
        if self.username.trim().is_empty() {
            return Err(Error::MissingField("username"));
        }
        if self.password.is_empty() {
            return Err(Error::MissingField("password"));
        }
        self.validate_details()
    }

    /// Everything except the password.
    pub fn validate_details(&self) -> Result<()> {
        let required = [
            ("username", &self.username),
            ("nickname", &self.nickname),
            ("email", &self.email),
            ("phone", &self.phone),
        ];
        for (name, value) in required {
            if value.trim().is_empty() {
                return Err(Error::MissingField(name));
            }
        }
        if !valid_email(&self.email) {
            return Err(Error::InvalidEmail);
        }
        if !valid_phone(&self.phone) {
            return Err(Error::InvalidPhone);
        }
        Ok(())
    }
}

fn valid_email(email: &str) -> bool {
    match email.trim().split_once('@') {
        Some((local, domain)) => !local.is_empty() && !domain.is_empty() && !domain.contains('@'),
        None => false,
    }
}

fn valid_phone(phone: &str) -> bool {
    let p = phone.trim();
    (5..=20).contains(&p.len()) && p.bytes().all(|b| b.is_ascii_digit())
}

pub fn normalize_interests<I, S>(tags: I) -> std::collections::BTreeSet<String>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    tags.into_iter()
        .map(|t| t.as_ref().trim().to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

/// Partial update of one profile section.
///
/// `username` exists only so attempts to change it can be refused.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "section", rename_all = "snake_case")]
pub enum ProfileUpdate {
    Basic {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        username: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        nickname: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gender: Option<Gender>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        birthday: Option<NaiveDate>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        avatar: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        status_text: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        interests: Option<Vec<String>>,
    },
    Contact {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        email: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        phone: Option<String>,
    },
    Location {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        city: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        country: Option<String>,
    },
    Privacy {
        policy: PrivacyPolicy,
    },
}

/// What an applied profile update changed, for feed bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ProfileChange {
    pub avatar: bool,
    pub other: bool,
}

/// Salted, memory-hard password digests (Argon2id, PHC string format).
#[derive(Clone)]
pub struct PasswordHasher {
    params: Params,
}

impl std::fmt::Debug for PasswordHasher {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PasswordHasher")
            .field("m_cost", &self.params.m_cost())
            .field("t_cost", &self.params.t_cost())
            .finish()
    }
}

impl Default for PasswordHasher {
    fn default() -> Self {
        PasswordHasher {
            params: Params::default(),
        }
    }
}

impl PasswordHasher {
    /// Cheapest parameters Argon2 accepts. Only for tests.
    pub fn insecure_fast() -> Self {
        PasswordHasher {
            params: Params::new(8, 1, 1, None).expect("valid argon2 params"),
        }
    }

    fn argon(&self) -> Argon2<'static> {
        Argon2::new(Algorithm::Argon2id, Version::V0x13, self.params.clone())
    }

    pub fn hash(&self, password: &str) -> String {
        let mut salt = [0u8; 16];
        rand::rng().fill_bytes(&mut salt);
        let salt = SaltString::encode_b64(&salt).expect("16-byte salt encodes");
        self.argon()
            .hash_password(password.as_bytes(), &salt)
            .expect("argon2 hashing with valid params")
            .to_string()
    }

    pub fn verify(&self, digest: &str, password: &str) -> bool {
        match PasswordHash::new(digest) {
            // Parameters come from the digest itself.
            Ok(parsed) => Argon2::default().verify_password(password.as_bytes(), &parsed).is_ok(),
            Err(_) => false,
        }
    }
}

/// 128 random bits, URL-safe base64 without padding (22 characters).
pub fn new_session_token() -> String {
    let mut bytes = [0u8; SESSION_TOKEN_BYTES];
    rand::rng().fill_bytes(&mut bytes);
    URL_SAFE_NO_PAD.encode(bytes)
}

pub fn new_code() -> String {
    format!("{:06}", rand::rng().random_range(0..1_000_000u32))
}

/// Delivery channel for short text messages to phones.
pub trait SmsTransport: Send + Sync {
    fn send(&self, phone: &str, text: &str, at_ms: i64) -> io::Result<()>;
}

/// Appends each message to a file: `timestamp<TAB>phone<TAB>text`.
#[derive(Debug)]
pub struct OutboxFile {
    path: PathBuf,
    lock: Mutex<()>,
}

impl OutboxFile {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        OutboxFile {
            path: path.into(),
            lock: Mutex::new(()),
        }
    }
}

pub fn format_outbox_line(phone: &str, text: &str, at_ms: i64) -> String {
    let ts = chrono::DateTime::from_timestamp_millis(at_ms)
        .unwrap_or_default()
        .to_rfc3339_opts(chrono::SecondsFormat::Millis, true);
    format!("{ts}\t{phone}\t{}", text.replace(['\n', '\t'], " "))
}

impl SmsTransport for OutboxFile {
    fn send(&self, phone: &str, text: &str, at_ms: i64) -> io::Result<()> {
        let _guard = self.lock.lock();
        let mut f = OpenOptions::new().create(true).append(true).open(&self.path)?;
        writeln!(f, "{}", format_outbox_line(phone, text, at_ms))
    }
}

/// In-memory outbox for tests.
#[derive(Debug, Default)]
pub struct MemoryOutbox {
    pub messages: Mutex<Vec<(String, String, i64)>>,
}

impl MemoryOutbox {
    /// Last six-digit code sent to `phone`.
    pub fn last_code_for(&self, phone: &str) -> Option<String> {
        self.messages
            .lock()
            .iter()
            .rev()
            .find(|(p, _, _)| p == phone)
            .and_then(|(_, text, _)| extract_code(text))
    }
}

pub fn extract_code(text: &str) -> Option<String> {
    text.split(|c: char| !c.is_ascii_digit())
        .find(|w| w.len() == 6)
        .map(str::to_string)
}

impl SmsTransport for MemoryOutbox {
    fn send(&self, phone: &str, text: &str, at_ms: i64) -> io::Result<()> {
        self.messages.lock().push((phone.to_string(), text.to_string(), at_ms));
        Ok(())
    }
}

/// Account store.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Identity {
    users: BTreeMap<UserId, UserProfile>,
    by_username: BTreeMap<String, UserId>,
    sessions: BTreeMap<String, Session>,
    codes: Vec<OneTimeCode>,
    next_user_id: UserId,
}

fn username_key(username: &str) -> String {
    username.trim().to_lowercase()
}

impl Identity {
    pub fn user(&self, id: UserId) -> Option<&UserProfile> {
        self.users.get(&id)
    }

    pub fn users(&self) -> impl Iterator<Item = &UserProfile> {
        self.users.values()
    }

    pub fn lookup(&self, username: &str) -> Option<&UserProfile> {
        self.by_username.get(&username_key(username)).and_then(|id| self.users.get(id))
    }

    pub fn require(&self, username: &str) -> Result<&UserProfile> {
        self.lookup(username).ok_or_else(|| Error::UnknownUser(username.to_string()))
    }

    pub fn require_id(&self, id: UserId) -> Result<&UserProfile> {
        self.users.get(&id).ok_or_else(|| Error::UnknownUser(format!("#{id}")))
    }

    pub fn codes_for(&self, user: UserId) -> impl Iterator<Item = &OneTimeCode> {
        self.codes.iter().filter(move |c| c.user_id == user)
    }

    pub fn sessions(&self) -> impl Iterator<Item = &Session> {
        self.sessions.values()
    }

    pub fn authenticate(&self, token: &str, now: i64) -> Result<UserId> {
        match self.sessions.get(token) {
            Some(s) if s.expires_at > now => Ok(s.user_id),
            _ => Err(Error::Unauthorized),
        }
    }

    pub fn has_live_session(&self, user: UserId, now: i64) -> bool {
        self.sessions.values().any(|s| s.user_id == user && s.expires_at > now)
    }

    pub fn register(
        &mut self,
        form: &RegistrationForm,
        password_digest: &str,
        activation_code: &str,
        default_privacy: PrivacyPolicy,
        now: i64,
    ) -> Result<UserId> {
        form.validate_details()?;
        let key = username_key(&form.username);
        if self.by_username.contains_key(&key) {
            return Err(Error::DuplicateUsername(form.username.trim().to_string()));
        }
        self.next_user_id += 1;
        let id = self.next_user_id;
        let profile = UserProfile {
            user_id: id,
            username: form.username.trim().to_string(),
            password_digest: password_digest.to_string(),
            basic: BasicInfo {
                nickname: form.nickname.trim().to_string(),
                gender: form.gender,
                birthday: form.birthday,
                avatar: None,
                status_text: String::new(),
                interests: normalize_interests(&form.interests),
            },
            contact: ContactInfo {
                email: form.email.trim().to_string(),
                phone: form.phone.trim().to_string(),
            },
            location: LocationInfo {
                city: form.city.clone(),
                country: form.country.clone(),
            },
            privacy: default_privacy,
            is_admin: false,
            activated: false,
            created_at: now,
        };
        self.users.insert(id, profile);
        self.by_username.insert(key, id);
        self.codes.push(OneTimeCode {
            code: activation_code.to_string(),
            purpose: CodePurpose::Activation,
            user_id: id,
            expires_at: now + CODE_LIFETIME_MS,
            consumed: false,
        });
        Ok(id)
    }

    /// Finds the unconsumed code of `purpose` for `user` matching `code`.
    fn check_code(&self, user: UserId, purpose: CodePurpose, code: &str, now: i64) -> Result<usize> {
        let idx = self
            .codes
            .iter()
            .position(|c| c.user_id == user && c.purpose == purpose && c.code == code && !c.consumed)
            .ok_or(Error::BadCode)?;
        if self.codes[idx].expires_at <= now {
            return Err(Error::Expired);
        }
        Ok(idx)
    }

    pub fn activate(&mut self, username: &str, code: &str, now: i64) -> Result<UserId> {
        let user = self.require(username)?;
        if user.activated {
            return Err(Error::AlreadyActivated);
        }
        let id = user.user_id;
        let idx = self.check_code(id, CodePurpose::Activation, code, now)?;
        self.codes[idx].consumed = true;
        self.users.get_mut(&id).expect("user exists").activated = true;
        Ok(id)
    }

    pub fn open_session(&mut self, user: UserId, token: &str, now: i64, ttl_ms: i64) -> Result<Session> {
        let profile = self.require_id(user)?;
        if !profile.activated {
            return Err(Error::NotActivated);
        }
        let session = Session {
            token: token.to_string(),
            user_id: user,
            created_at: now,
            expires_at: now + ttl_ms,
        };
        self.sessions.insert(token.to_string(), session.clone());
        Ok(session)
    }

    pub fn close_session(&mut self, token: &str) -> Option<Session> {
        self.sessions.remove(token)
    }

    pub fn purge_expired_sessions(&mut self, now: i64) {
        self.sessions.retain(|_, s| s.expires_at > now);
    }

    pub fn issue_recovery(&mut self, username: &str, code: &str, now: i64) -> Result<UserId> {
        let id = self.require(username)?.user_id;
        self.codes.push(OneTimeCode {
            code: code.to_string(),
            purpose: CodePurpose::Recovery,
            user_id: id,
            expires_at: now + CODE_LIFETIME_MS,
            consumed: false,
        });
        Ok(id)
    }

    /// Replaces the password and drops every session of the account.
    pub fn redeem_recovery(&mut self, username: &str, code: &str, new_digest: &str, now: i64) -> Result<UserId> {
        let id = self.require(username)?.user_id;
        let idx = self.check_code(id, CodePurpose::Recovery, code, now)?;
        self.codes[idx].consumed = true;
        self.users.get_mut(&id).expect("user exists").password_digest = new_digest.to_string();
        self.sessions.retain(|_, s| s.user_id != id);
        Ok(id)
    }

    pub fn set_admin(&mut self, username: &str, admin: bool) -> Result<UserId> {
        let id = self.require(username)?.user_id;
        self.users.get_mut(&id).expect("user exists").is_admin = admin;
        Ok(id)
    }

    /// Validates an update without applying it.
    pub fn check_update(&self, user: UserId, update: &ProfileUpdate) -> Result<()> {
        self.require_id(user)?;
        match update {
            ProfileUpdate::Basic { username: Some(_), .. } => Err(Error::ImmutableField("username")),
            ProfileUpdate::Basic { nickname: Some(n), .. } if n.trim().is_empty() => {
                Err(Error::MissingField("nickname"))
            }
            ProfileUpdate::Contact { email, phone } => {
                if email.as_deref().is_some_and(|e| !valid_email(e)) {
                    return Err(Error::InvalidEmail);
                }
                if phone.as_deref().is_some_and(|p| !valid_phone(p)) {
                    return Err(Error::InvalidPhone);
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn update_profile(&mut self, user: UserId, update: &ProfileUpdate) -> Result<ProfileChange> {
        self.check_update(user, update)?;
        let p = self.users.get_mut(&user).expect("checked");
        let mut change = ProfileChange::default();
        fn set<T: PartialEq + Clone>(slot: &mut T, value: &Option<T>, changed: &mut bool) {
            if let Some(v) = value {
                if slot != v {
                    *slot = v.clone();
                    *changed = true;
                }
            }
        }
        match update {
            ProfileUpdate::Basic {
                nickname,
                gender,
                birthday,
                avatar,
                status_text,
                interests,
                ..
            } => {
                set(&mut p.basic.nickname, &nickname.as_ref().map(|n| n.trim().to_string()), &mut change.other);
                set(&mut p.basic.gender, gender, &mut change.other);
                set(&mut p.basic.birthday, &birthday.map(Some), &mut change.other);
                set(&mut p.basic.status_text, status_text, &mut change.other);
                set(&mut p.basic.interests, &interests.as_ref().map(normalize_interests), &mut change.other);
                set(&mut p.basic.avatar, &avatar.clone().map(Some), &mut change.avatar);
            }
            ProfileUpdate::Contact { email, phone } => {
                set(&mut p.contact.email, &email.as_ref().map(|e| e.trim().to_string()), &mut change.other);
                set(&mut p.contact.phone, &phone.as_ref().map(|e| e.trim().to_string()), &mut change.other);
            }
            ProfileUpdate::Location { city, country } => {
                set(&mut p.location.city, &city.clone().map(Some), &mut change.other);
                set(&mut p.location.country, &country.clone().map(Some), &mut change.other);
            }
            ProfileUpdate::Privacy { policy } => {
                p.privacy = *policy;
            }
        }
        Ok(change)
    }
}
