//! Whole-system state and the command set that mutates it.
//!
//! Every mutation is a [`Command`] carrying its own timestamp and any random
//! material (codes, tokens, digests), so replaying a command log rebuilds the
//! exact same state.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::content::{
    Album, BlogPost, Comment, CommentTarget, Content, FeedEvent, FeedKind, FeedSubject, Photo, PhotoUpload,
};
use crate::error::{Error, Result};
use crate::events::{Envelope, Event, EventHub};
use crate::geomath::haversine;
use crate::geostore::GeoStore;
use crate::identity::{Identity, ProfileUpdate, RegistrationForm, Session, UserProfile};
use crate::localinfo::{ForumPost, ForumReply, LocalInfo, NewsSection};
use crate::localization::Fix;
use crate::messaging::{BlobMeta, ChatBody, ChatMessage, Delivery, Mail, Messaging, Presence};
use crate::social::{
    filter_profile, rank, recommendation_score, tier_allows, PrivacyPolicy, ProfileView, RecommendationScore,
    Relation, SocialGraph,
};
use crate::UserId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Command {
    Register {
        form: RegistrationForm,
        password_digest: String,
        activation_code: String,
        now: i64,
    },
    Activate {
        username: String,
        code: String,
        now: i64,
    },
    /// `password_digest` is the digest the password was checked against.
    Login {
        user: UserId,
        password_digest: String,
        token: String,
        ttl_ms: i64,
        now: i64,
    },
    Logout {
        token: String,
        now: i64,
    },
    RequestRecovery {
        username: String,
        code: String,
        now: i64,
    },
    RedeemRecovery {
        username: String,
        code: String,
        password_digest: String,
        now: i64,
    },
    SetAdmin {
        username: String,
        admin: bool,
    },
    UpdateProfile {
        user: UserId,
        update: ProfileUpdate,
        now: i64,
    },
    Heartbeat {
        user: UserId,
        now: i64,
    },
    PresenceSweep {
        now: i64,
    },
    UpdatePosition {
        user: UserId,
        fix: Fix,
    },
    FriendRequest {
        from: UserId,
        to: UserId,
        now: i64,
    },
    FriendRespond {
        user: UserId,
        from: UserId,
        accept: bool,
        now: i64,
    },
    RemoveFriend {
        user: UserId,
        other: UserId,
    },
    MoveFriend {
        user: UserId,
        friend: UserId,
        group: String,
    },
    SetAlias {
        user: UserId,
        friend: UserId,
        alias: Option<String>,
    },
    CreateGroup {
        user: UserId,
        name: String,
    },
    RenameGroup {
        user: UserId,
        name: String,
        new_name: String,
    },
    DeleteGroup {
        user: UserId,
        name: String,
    },
    SendChat {
        from: UserId,
        to: UserId,
        body: ChatBody,
        now: i64,
    },
    SetHistorySaving {
        user: UserId,
        enabled: bool,
    },
    /// The user opened their event stream: queued chat is handed over.
    Connect {
        user: UserId,
        now: i64,
    },
    AckEvents {
        user: UserId,
        upto: u64,
    },
    SendMail {
        from: UserId,
        to: UserId,
        subject: String,
        body: String,
        now: i64,
    },
    ReadMail {
        user: UserId,
        mail_id: u64,
    },
    DeleteMail {
        user: UserId,
        mail_id: u64,
    },
    RegisterBlob {
        meta: BlobMeta,
    },
    BlogWrite {
        author: UserId,
        title: String,
        body: String,
        now: i64,
    },
    BlogEdit {
        author: UserId,
        post_id: u64,
        title: Option<String>,
        body: Option<String>,
    },
    BlogPublish {
        author: UserId,
        post_id: u64,
        now: i64,
    },
    BlogDelete {
        author: UserId,
        post_id: u64,
    },
    AlbumCreate {
        owner: UserId,
        title: String,
        now: i64,
    },
    AlbumDelete {
        owner: UserId,
        album_id: u64,
    },
    PhotoUpload {
        owner: UserId,
        album_id: u64,
        photos: Vec<PhotoUpload>,
        now: i64,
    },
    PhotoEdit {
        owner: UserId,
        photo_id: u64,
        caption: String,
    },
    PhotoDelete {
        owner: UserId,
        photo_id: u64,
    },
    Comment {
        author: UserId,
        target: CommentTarget,
        text: String,
        now: i64,
    },
    RecordVisit {
        visitor: UserId,
        owner: UserId,
        now: i64,
    },
    Subscribe {
        user: UserId,
        sections: BTreeSet<NewsSection>,
    },
    ForumPost {
        author: UserId,
        city: String,
        title: String,
        body: String,
        now: i64,
    },
    ForumModerate {
        admin: UserId,
        post_id: u64,
        approve: bool,
    },
    ForumReply {
        author: UserId,
        post_id: u64,
        body: String,
        now: i64,
    },
}

impl Command {
    /// Short stable name of the operation.
    /// Every value [`Command::tag`] can return, in declaration order.
    pub const TAGS: &'static [&'static str] = &[
        "register",
        "activate",
        "login",
        "logout",
        "request_recovery",
        "redeem_recovery",
        "set_admin",
        "update_profile",
        "heartbeat",
        "presence_sweep",
        "update_position",
        "friend_request",
        "friend_respond",
        "remove_friend",
        "move_friend",
        "set_alias",
        "create_group",
        "rename_group",
        "delete_group",
        "send_chat",
        "set_history_saving",
        "connect",
        "ack_events",
        "send_mail",
        "read_mail",
        "delete_mail",
        "register_blob",
        "blog_write",
        "blog_edit",
        "blog_publish",
        "blog_delete",
        "album_create",
        "album_delete",
        "photo_upload",
        "photo_edit",
        "photo_delete",
        "comment",
        "record_visit",
        "subscribe",
        "forum_post",
        "forum_moderate",
        "forum_reply",
    ];

    pub fn tag(&self) -> &'static str {
        use Command::*;
        match self {
            Register { .. } => "register",
            Activate { .. } => "activate",
            Login { .. } => "login",
            Logout { .. } => "logout",
            RequestRecovery { .. } => "request_recovery",
            RedeemRecovery { .. } => "redeem_recovery",
            SetAdmin { .. } => "set_admin",
            UpdateProfile { .. } => "update_profile",
            Heartbeat { .. } => "heartbeat",
            PresenceSweep { .. } => "presence_sweep",
            UpdatePosition { .. } => "update_position",
            FriendRequest { .. } => "friend_request",
            FriendRespond { .. } => "friend_respond",
            RemoveFriend { .. } => "remove_friend",
            MoveFriend { .. } => "move_friend",
            SetAlias { .. } => "set_alias",
            CreateGroup { .. } => "create_group",
            RenameGroup { .. } => "rename_group",
            DeleteGroup { .. } => "delete_group",
            SendChat { .. } => "send_chat",
            SetHistorySaving { .. } => "set_history_saving",
            Connect { .. } => "connect",
            AckEvents { .. } => "ack_events",
            SendMail { .. } => "send_mail",
            ReadMail { .. } => "read_mail",
            DeleteMail { .. } => "delete_mail",
            RegisterBlob { .. } => "register_blob",
            BlogWrite { .. } => "blog_write",
            BlogEdit { .. } => "blog_edit",
            BlogPublish { .. } => "blog_publish",
            BlogDelete { .. } => "blog_delete",
            AlbumCreate { .. } => "album_create",
            AlbumDelete { .. } => "album_delete",
            PhotoUpload { .. } => "photo_upload",
            PhotoEdit { .. } => "photo_edit",
            PhotoDelete { .. } => "photo_delete",
            Comment { .. } => "comment",
            RecordVisit { .. } => "record_visit",
            Subscribe { .. } => "subscribe",
            ForumPost { .. } => "forum_post",
            ForumModerate { .. } => "forum_moderate",
            ForumReply { .. } => "forum_reply",
        }
    }

    /// Position of [`Command::tag`] in [`Command::TAGS`].
    pub fn tag_code(&self) -> u16 {
        let tag = self.tag();
        Command::TAGS.iter().position(|t| *t == tag).expect("tag listed") as u16
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Outcome {
    Unit,
    User(UserId),
    Session(Session),
    Presence(Presence),
    Fix(Fix),
    Group(u64),
    Chat(ChatMessage),
    Mail(Mail),
    Blob(BlobMeta),
    Blog(BlogPost),
    Album(Album),
    Photos(Vec<Photo>),
    Photo(Photo),
    Comment(Comment),
    Forum(ForumPost),
    Reply(ForumReply),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearbyEntry {
    pub profile: ProfileView,
    pub fix: Fix,
    pub distance_m: f64,
    pub online: bool,
    pub is_friend: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FriendEntry {
    pub profile: ProfileView,
    pub alias: Option<String>,
    pub group: String,
    pub online: bool,
    pub last_seen: Option<i64>,
    pub since: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresenceEntry {
    pub username: String,
    pub exists: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub user_id: Option<UserId>,
    pub online: bool,
    pub last_seen: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedItem {
    #[serde(flatten)]
    pub event: FeedEvent,
    pub comment_count: usize,
}

/// User search criteria; set parts must all match.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UserSearch {
    pub username: Option<String>,
    pub city: Option<String>,
    pub interest: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Platform {
    identity: Identity,
    social: SocialGraph,
    geo: GeoStore,
    messaging: Messaging,
    content: Content,
    local: LocalInfo,
    events: EventHub,
}

impl Platform {
    pub fn new(geo_precision: usize) -> Self {
        Platform {
            geo: GeoStore::new(geo_precision),
            ..Default::default()
        }
    }

    pub fn identity(&self) -> &Identity {
        &self.identity
    }

    pub fn social(&self) -> &SocialGraph {
        &self.social
    }

    pub fn geo(&self) -> &GeoStore {
        &self.geo
    }

    /// POIs are static data and may be loaded outside the command log.
    pub fn geo_mut(&mut self) -> &mut GeoStore {
        &mut self.geo
    }

    pub fn messaging(&self) -> &Messaging {
        &self.messaging
    }

    pub fn content(&self) -> &Content {
        &self.content
    }

    pub fn local(&self) -> &LocalInfo {
        &self.local
    }

    pub fn events(&self) -> &EventHub {
        &self.events
    }

    /// Users whose event logs grew since the last call.
    pub fn drain_touched(&mut self) -> Vec<UserId> {
        self.events.drain_touched()
    }

    /// Canonical serialized form; equal states give equal bytes.
    pub fn snapshot_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("state serializes")
    }

    pub fn from_snapshot(bytes: &[u8]) -> serde_json::Result<Self> {
        serde_json::from_slice(bytes)
    }

    pub fn is_online(&self, user: UserId, now: i64) -> bool {
        self.messaging.heartbeat_fresh(user, now) && self.identity.has_live_session(user, now)
    }

    pub fn presence(&self, user: UserId, now: i64) -> Presence {
        Presence {
            user_id: user,
            online: self.is_online(user, now),
            last_seen: self.messaging.last_heartbeat(user),
        }
    }

    fn require(&self, user: UserId) -> Result<&UserProfile> {
        self.identity.require_id(user)
    }

    fn announce(&mut self, user: UserId, online: bool, now: i64) {
        let last_seen = self.messaging.last_heartbeat(user);
        for friend in self.social.friend_ids(user) {
            self.events.push(
                friend,
                Event::Presence {
                    user_id: user,
                    online,
                    last_seen,
                },
                now,
                false,
            );
        }
    }

    fn go_offline(&mut self, user: UserId, now: i64) {
        if self.messaging.mark_offline(user) {
            self.geo.set_online(user, false);
            self.announce(user, false, now);
        }
    }

    fn publish_feed(&mut self, ev: &FeedEvent) {
        let mut audience = self.social.friend_ids(ev.actor);
        audience.insert(ev.actor);
        for user in audience {
            self.events.push(
                user,
                Event::Feed {
                    event_id: ev.event_id,
                    actor: ev.actor,
                    kind: ev.kind,
                },
                ev.occurred_at,
                false,
            );
        }
    }

    /// Applies one command. On error nothing has changed.
    pub fn apply(&mut self, cmd: &Command) -> Result<Outcome> {
        use Command as C;
        match cmd {
            C::Register {
                form,
                password_digest,
                activation_code,
                now,
            } => {
                let id = self
                    .identity
                    .register(form, password_digest, activation_code, PrivacyPolicy::default(), *now)?;
                self.social.init_user(id);
                Ok(Outcome::User(id))
            }
            C::Activate { username, code, now } => self.identity.activate(username, code, *now).map(Outcome::User),
            C::Login {
                user,
                password_digest,
                token,
                ttl_ms,
                now,
            } => {
                if &self.require(*user)?.password_digest != password_digest {
                    return Err(Error::BadCredentials { recovery_hint: true });
                }
                self.identity.open_session(*user, token, *now, *ttl_ms).map(Outcome::Session)
            }
            C::Logout { token, now } => {
                let session = self.identity.close_session(token).ok_or(Error::Unauthorized)?;
                if !self.identity.has_live_session(session.user_id, *now) {
                    self.go_offline(session.user_id, *now);
                }
                Ok(Outcome::Unit)
            }
            C::RequestRecovery { username, code, now } => {
                self.identity.issue_recovery(username, code, *now).map(Outcome::User)
            }
            C::RedeemRecovery {
                username,
                code,
                password_digest,
                now,
            } => {
                let id = self.identity.redeem_recovery(username, code, password_digest, *now)?;
                self.go_offline(id, *now);
                Ok(Outcome::User(id))
            }
            C::SetAdmin { username, admin } => self.identity.set_admin(username, *admin).map(Outcome::User),
            C::UpdateProfile { user, update, now } => {
                if let ProfileUpdate::Basic { avatar: Some(blob), .. } = update {
                    self.messaging.blob(blob)?;
                }
                let change = self.identity.update_profile(*user, update)?;
                if change.avatar {
                    let ev = self.content.emit(*user, FeedKind::AvatarChanged, FeedSubject::Profile, *now);
                    self.publish_feed(&ev);
                }
                if change.other {
                    let ev = self.content.emit(*user, FeedKind::ProfileUpdated, FeedSubject::Profile, *now);
                    self.publish_feed(&ev);
                }
                Ok(Outcome::Unit)
            }
            C::Heartbeat { user, now } => {
                self.require(*user)?;
                if self.messaging.heartbeat(*user, *now) {
                    self.announce(*user, true, *now);
                }
                self.geo.set_online(*user, true);
                Ok(Outcome::Presence(self.presence(*user, *now)))
            }
            C::PresenceSweep { now } => {
                self.identity.purge_expired_sessions(*now);
                let lapsed: Vec<UserId> = self
                    .messaging
                    .announced()
                    .filter(|u| !self.is_online(*u, *now))
                    .collect();
                for u in lapsed {
                    self.go_offline(u, *now);
                }
                Ok(Outcome::Unit)
            }
            C::UpdatePosition { user, fix } => {
                self.require(*user)?;
                self.geo.upsert_position(*user, *fix)?;
                self.geo.set_online(*user, self.messaging.is_announced(*user));
                Ok(Outcome::Fix(*fix))
            }
            C::FriendRequest { from, to, now } => {
                self.require(*from)?;
                self.require(*to)?;
                let fresh = !self.social.has_request(*from, *to);
                self.social.request(*from, *to, *now)?;
                if fresh {
                    self.events.push(*to, Event::FriendRequest { from: *from }, *now, false);
                }
                Ok(Outcome::Unit)
            }
            C::FriendRespond {
                user,
                from,
                accept,
                now,
            } => {
                if *accept {
                    self.social.accept(*user, *from, *now)?;
                    self.events.push(*from, Event::FriendAccepted { by: *user }, *now, false);
                } else {
                    self.social.decline(*user, *from)?;
                }
                Ok(Outcome::Unit)
            }
            C::RemoveFriend { user, other } => self.social.remove_friend(*user, *other).map(|_| Outcome::Unit),
            C::MoveFriend { user, friend, group } => {
                self.social.move_to_group(*user, *friend, group).map(|_| Outcome::Unit)
            }
            C::SetAlias { user, friend, alias } => {
                self.social.set_alias(*user, *friend, alias.clone()).map(|_| Outcome::Unit)
            }
            C::CreateGroup { user, name } => self.social.create_group(*user, name).map(Outcome::Group),
            C::RenameGroup { user, name, new_name } => {
                self.social.rename_group(*user, name, new_name).map(|_| Outcome::Unit)
            }
            C::DeleteGroup { user, name } => self.social.delete_group(*user, name).map(|_| Outcome::Unit),
            C::SendChat { from, to, body, now } => {
                self.require(*to)?;
                if !self.social.are_friends(*from, *to) {
                    return Err(Error::NotFriends);
                }
                let online = self.is_online(*to, *now);
                let persisted = self.messaging.persists(*from, *to);
                let msg = self.messaging.send_chat(*from, *to, body.clone(), *now, online)?;
                if online {
                    self.events.push(*to, Event::Chat { message: msg.clone() }, *now, !persisted);
                }
                // Unsaved messages are not echoed: the sender's own stream
                // would otherwise keep the text until the sender polls.
                if persisted {
                    self.events.push(*from, Event::Chat { message: msg.clone() }, *now, false);
                }
                Ok(Outcome::Chat(msg))
            }
            C::SetHistorySaving { user, enabled } => {
                self.require(*user)?;
                self.messaging.set_history_saving(*user, *enabled);
                Ok(Outcome::Unit)
            }
            C::Connect { user, now } => {
                for d in self.messaging.flush(*user) {
                    match d {
                        Delivery::Gap { peer, dropped } => {
                            self.events.push(*user, Event::ChatGap { peer, dropped }, *now, false);
                        }
                        Delivery::Message(message, persisted) => {
                            self.events.push(*user, Event::Chat { message }, *now, !persisted);
                        }
                    }
                }
                Ok(Outcome::Unit)
            }
            C::AckEvents { user, upto } => {
                self.events.ack(*user, *upto);
                Ok(Outcome::Unit)
            }
            C::SendMail {
                from,
                to,
                subject,
                body,
                now,
            } => {
                self.require(*to)?;
                let mail = self.messaging.send_mail(*from, *to, subject, body, *now)?;
                self.events.push(
                    *to,
                    Event::MailArrived {
                        mail_id: mail.mail_id,
                        from: *from,
                        subject: mail.subject.clone(),
                    },
                    *now,
                    false,
                );
                Ok(Outcome::Mail(mail))
            }
            C::ReadMail { user, mail_id } => self.messaging.read_mail(*user, *mail_id).map(Outcome::Mail),
            C::DeleteMail { user, mail_id } => self.messaging.delete_mail(*user, *mail_id).map(|_| Outcome::Unit),
            C::RegisterBlob { meta } => self.messaging.register_blob(meta.clone()).map(Outcome::Blob),
            C::BlogWrite {
                author,
                title,
                body,
                now,
            } => self.content.blog_write(*author, title, body, *now).map(Outcome::Blog),
            C::BlogEdit {
                author,
                post_id,
                title,
                body,
            } => self
                .content
                .blog_edit(*author, *post_id, title.as_deref(), body.as_deref())
                .map(Outcome::Blog),
            C::BlogPublish { author, post_id, now } => {
                let (post, ev) = self.content.blog_publish(*author, *post_id, *now)?;
                self.publish_feed(&ev);
                Ok(Outcome::Blog(post))
            }
            C::BlogDelete { author, post_id } => self.content.blog_delete(*author, *post_id).map(|_| Outcome::Unit),
            C::AlbumCreate { owner, title, now } => self.content.album_create(*owner, title, *now).map(Outcome::Album),
            C::AlbumDelete { owner, album_id } => self.content.album_delete(*owner, *album_id).map(|_| Outcome::Unit),
            C::PhotoUpload {
                owner,
                album_id,
                photos,
                now,
            } => {
                self.content.album(*album_id)?;
                for p in photos {
                    self.messaging.blob(&p.blob_id)?;
                }
                let (added, ev) = self.content.photo_upload(*owner, *album_id, photos, *now)?;
                self.publish_feed(&ev);
                Ok(Outcome::Photos(added))
            }
            C::PhotoEdit {
                owner,
                photo_id,
                caption,
            } => self.content.photo_edit(*owner, *photo_id, caption).map(Outcome::Photo),
            C::PhotoDelete { owner, photo_id } => self.content.photo_delete(*owner, *photo_id).map(|_| Outcome::Unit),
            C::Comment {
                author,
                target,
                text,
                now,
            } => {
                let social = &self.social;
                self.content
                    .comment(*author, *target, text, *now, |actor| social.are_friends(*author, actor))
                    .map(Outcome::Comment)
            }
            C::RecordVisit { visitor, owner, now } => {
                self.require(*owner)?;
                self.content.record_visit(*visitor, *owner, *now);
                Ok(Outcome::Unit)
            }
            C::Subscribe { user, sections } => {
                self.require(*user)?;
                self.local.subscribe(*user, sections.clone());
                Ok(Outcome::Unit)
            }
            C::ForumPost {
                author,
                city,
                title,
                body,
                now,
            } => self.local.forum_post(*author, city, title, body, *now).map(Outcome::Forum),
            C::ForumModerate {
                admin,
                post_id,
                approve,
            } => {
                if !self.require(*admin)?.is_admin {
                    return Err(Error::NotAdmin);
                }
                self.local.moderate(*post_id, *approve).map(Outcome::Forum)
            }
            C::ForumReply {
                author,
                post_id,
                body,
                now,
            } => self.local.reply(*author, *post_id, body, *now).map(Outcome::Reply),
        }
    }

    /// Replays `commands` onto a fresh state, skipping ones that fail.
    pub fn replay<'a>(mut self, commands: impl IntoIterator<Item = &'a Command>) -> Self {
        for c in commands {
            let _ = self.apply(c);
        }
        self.drain_touched();
        self
    }

    // ----- queries -----

    pub fn view_profile(&self, viewer: UserId, owner: UserId) -> Result<ProfileView> {
        let profile = self.require(owner)?;
        Ok(filter_profile(self.social.relation(viewer, owner), profile))
    }

    /// Whether `viewer` may see `owner`'s position.
    pub fn location_visible(&self, viewer: UserId, owner: UserId) -> bool {
        match self.identity.user(owner) {
            Some(p) => tier_allows(p.privacy.location, self.social.relation(viewer, owner)),
            None => false,
        }
    }

    fn nearby_entry(&self, viewer: UserId, owner: UserId, fix: Fix, distance_m: f64, online: bool) -> NearbyEntry {
        let profile = self.identity.user(owner).expect("indexed users exist");
        let relation = self.social.relation(viewer, owner);
        NearbyEntry {
            profile: filter_profile(relation, profile),
            fix,
            distance_m,
            online,
            is_friend: relation == Relation::Friend,
        }
    }

    /// Users within `radius` of the viewer's stored fix whose location the
    /// viewer may see, nearest first.
    pub fn visible_nearby(&self, viewer: UserId, radius: f64, friends_only: bool) -> Result<Vec<NearbyEntry>> {
        let center = self.geo.get(viewer).ok_or(Error::NoFixForViewer)?.fix.position;
        let hits = self.geo.query_radius(&center, radius, false)?;
        Ok(hits
            .into_iter()
            .filter(|r| r.user_id != viewer)
            .filter(|r| self.location_visible(viewer, r.user_id))
            .filter(|r| !friends_only || self.social.are_friends(viewer, r.user_id))
            .map(|r| {
                let d = haversine(&center, &r.fix.position);
                self.nearby_entry(viewer, r.user_id, r.fix, d, r.online)
            })
            .collect())
    }

    /// The `k` nearest users whose location the viewer may see.
    pub fn visible_knn(&self, viewer: UserId, k: usize) -> Result<Vec<NearbyEntry>> {
        let center = self.geo.get(viewer).ok_or(Error::NoFixForViewer)?.fix.position;
        let mut want = k + 1;
        loop {
            let hits = self.geo.query_knn(&center, want);
            let exhausted = hits.len() < want;
            let visible: Vec<_> = hits
                .iter()
                .filter(|r| r.user_id != viewer && self.location_visible(viewer, r.user_id))
                .collect();
            if visible.len() >= k || exhausted {
                return Ok(visible
                    .into_iter()
                    .take(k)
                    .map(|r| {
                        let d = haversine(&center, &r.fix.position);
                        self.nearby_entry(viewer, r.user_id, r.fix, d, r.online)
                    })
                    .collect());
            }
            want = want.saturating_mul(2);
        }
    }

    pub fn friends(&self, user: UserId, now: i64) -> Vec<FriendEntry> {
        self.social
            .friends(user)
            .filter_map(|(id, edge)| {
                let profile = self.identity.user(id)?;
                let presence = self.presence(id, now);
                Some(FriendEntry {
                    profile: filter_profile(Relation::Friend, profile),
                    alias: edge.alias.clone(),
                    group: self.social.group(edge.group_id).map(|g| g.name.clone()).unwrap_or_default(),
                    online: presence.online,
                    last_seen: presence.last_seen,
                    since: edge.since,
                })
            })
            .collect()
    }

    pub fn presence_of(&self, usernames: &[String], now: i64) -> Vec<PresenceEntry> {
        usernames
            .iter()
            .map(|name| match self.identity.lookup(name) {
                Some(p) => {
                    let presence = self.presence(p.user_id, now);
                    PresenceEntry {
                        username: p.username.clone(),
                        exists: true,
                        user_id: Some(p.user_id),
                        online: presence.online,
                        last_seen: presence.last_seen,
                    }
                }
                None => PresenceEntry {
                    username: name.clone(),
                    exists: false,
                    user_id: None,
                    online: false,
                    last_seen: None,
                },
            })
            .collect()
    }

    /// Activated non-friends ranked by shared interests and distance.
    pub fn recommend(&self, user: UserId, k: usize) -> Result<Vec<RecommendationScore>> {
        let me = self.require(user)?;
        let my_fix = self.geo.get(user).map(|r| r.fix.position);
        let scores = self
            .identity
            .users()
            .filter(|c| c.user_id != user && c.activated && !self.social.are_friends(user, c.user_id))
            .map(|c| {
                let theirs = self.geo.get(c.user_id).map(|r| r.fix.position);
                let d = my_fix.zip(theirs).map(|(a, b)| haversine(&a, &b));
                let (score, shared) = recommendation_score(&me.basic.interests, &c.basic.interests, d);
                RecommendationScore {
                    user_id: c.user_id,
                    username: c.username.clone(),
                    score,
                    shared_interest_count: shared,
                }
            })
            .collect();
        Ok(rank(scores, k))
    }

    /// Activated users matching the search, as the viewer may see them.
    /// City matching only considers cities visible to the viewer.
    pub fn search_users(&self, viewer: UserId, query: &UserSearch) -> Vec<ProfileView> {
        let lower = |s: &Option<String>| s.as_ref().map(|v| v.trim().to_lowercase()).filter(|v| !v.is_empty());
        let (name, city, interest) = (lower(&query.username), lower(&query.city), lower(&query.interest));
        if name.is_none() && city.is_none() && interest.is_none() {
            return Vec::new();
        }
        self.identity
            .users()
            .filter(|p| p.activated && p.user_id != viewer)
            .map(|p| filter_profile(self.social.relation(viewer, p.user_id), p))
            .filter(|v| name.as_ref().is_none_or(|n| v.username.to_lowercase().contains(n.as_str())))
            .filter(|v| {
                city.as_ref()
                    .is_none_or(|c| v.city.as_ref().is_some_and(|vc| vc.trim().to_lowercase() == *c))
            })
            .filter(|v| interest.as_ref().is_none_or(|i| v.interests.contains(i)))
            .collect()
    }

    pub fn feed(&self, viewer: UserId, before: Option<u64>, limit: usize) -> Vec<FeedItem> {
        let mut circle = self.social.friend_ids(viewer);
        circle.insert(viewer);
        self.content
            .feed(&circle, before, limit)
            .into_iter()
            .map(|event| FeedItem {
                comment_count: event.comments.len(),
                event,
            })
            .collect()
    }

    pub fn events_since(&self, user: UserId, since: u64) -> Vec<Envelope> {
        self.events.since(user, since)
    }

    /// Whether polling the stream would change state (queued chat or
    /// unacknowledged transient events).
    pub fn poll_needs_write(&self, user: UserId, acked: u64) -> bool {
        self.messaging.has_pending(user)
            || self.events.log(user).is_some_and(|l| l.has_unacked_transient(acked))
    }
}
