//! Chat, mail, presence and content-addressed blobs.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fs;
use std::io;
use std::path::PathBuf;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::UserId;

pub const MAX_CHAT_CHARS: usize = 4096;
pub const MAX_SUBJECT_CHARS: usize = 256;
pub const MAX_MAIL_BODY_BYTES: usize = 64 * 1024;
pub const MAX_BLOB_BYTES: usize = 5 * 1024 * 1024;
pub const OFFLINE_QUEUE_CAP: usize = 1000;
pub const LIVENESS_WINDOW_MS: i64 = 60_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum ChatBody {
    Text(String),
    Blob(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub msg_id: u64,
    /// The two participants, smaller id first.
    pub conversation: (UserId, UserId),
    pub sender: UserId,
    pub recipient: UserId,
    pub body: ChatBody,
    pub sent_at: i64,
    pub delivered: bool,
}

pub fn conversation_key(a: UserId, b: UserId) -> (UserId, UserId) {
    (a.min(b), a.max(b))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct Conversation {
    next_msg_id: u64,
    history: BTreeMap<u64, ChatMessage>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct OfflineQueue {
    messages: VecDeque<ChatMessage>,
    dropped: u64,
}

/// A batch handed to a recipient when they connect.
#[derive(Debug, Clone, PartialEq)]
pub enum Delivery {
    Gap { peer: UserId, dropped: u64 },
    Message(ChatMessage, bool),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MailFolder {
    Inbox,
    Sent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mail {
    pub mail_id: u64,
    pub from: UserId,
    pub to: UserId,
    pub subject: String,
    pub body: String,
    pub sent_at: i64,
    pub read: bool,
    pub deleted_by_sender: bool,
    pub deleted_by_recipient: bool,
}

impl Mail {
    fn visible_to(&self, user: UserId) -> bool {
        (user == self.from && !self.deleted_by_sender) || (user == self.to && !self.deleted_by_recipient)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobMeta {
    pub blob_id: String,
    pub size: usize,
    pub media: String,
    pub uploaded_by: UserId,
    pub uploaded_at: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Presence {
    pub user_id: UserId,
    pub online: bool,
    pub last_seen: Option<i64>,
}

pub fn blob_id(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn check_blob_size(len: usize) -> Result<()> {
    if len > MAX_BLOB_BYTES {
        Err(Error::TooLarge(len))
    } else {
        Ok(())
    }
}

/// Byte storage for blobs, keyed by content digest.
pub trait BlobStore: Send + Sync {
    /// Stores `bytes` under `id`. Storing an existing id is a no-op.
    fn put(&self, id: &str, bytes: &[u8]) -> io::Result<()>;
    fn get(&self, id: &str) -> io::Result<Option<Vec<u8>>>;
}

#[derive(Debug, Default)]
pub struct MemoryBlobStore {
    blobs: RwLock<BTreeMap<String, Vec<u8>>>,
}

impl MemoryBlobStore {
    pub fn len(&self) -> usize {
        self.blobs.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl BlobStore for MemoryBlobStore {
    fn put(&self, id: &str, bytes: &[u8]) -> io::Result<()> {
        self.blobs.write().entry(id.to_string()).or_insert_with(|| bytes.to_vec());
        Ok(())
    }

    fn get(&self, id: &str) -> io::Result<Option<Vec<u8>>> {
        Ok(self.blobs.read().get(id).cloned())
    }
}

/// One file per blob inside a directory.
#[derive(Debug)]
pub struct DirBlobStore {
    dir: PathBuf,
}

impl DirBlobStore {
    pub fn new(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(DirBlobStore { dir })
    }

    fn path(&self, id: &str) -> Option<PathBuf> {
        let ok = id.len() == 64 && id.bytes().all(|b| b.is_ascii_hexdigit());
        ok.then(|| self.dir.join(id))
    }
}

impl BlobStore for DirBlobStore {
    fn put(&self, id: &str, bytes: &[u8]) -> io::Result<()> {
        let path = self
            .path(id)
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "bad blob id"))?;
        if path.exists() {
            return Ok(());
        }
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, bytes)?;
        fs::rename(tmp, path)
    }

    fn get(&self, id: &str) -> io::Result<Option<Vec<u8>>> {
        let Some(path) = self.path(id) else {
            return Ok(None);
        };
        match fs::read(path) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Messaging {
    /// smaller id -> larger id -> conversation
    conversations: BTreeMap<UserId, BTreeMap<UserId, Conversation>>,
    /// recipient -> sender -> undelivered messages
    queues: BTreeMap<UserId, BTreeMap<UserId, OfflineQueue>>,
    history_off: BTreeSet<UserId>,
    mail: BTreeMap<u64, Mail>,
    next_mail_id: u64,
    blobs: BTreeMap<String, BlobMeta>,
    heartbeats: BTreeMap<UserId, i64>,
    /// Users last announced as online.
    announced: BTreeSet<UserId>,
}

impl Messaging {
    pub fn check_chat_body(&self, body: &ChatBody) -> Result<()> {
        match body {
            ChatBody::Text(t) if t.is_empty() => Err(Error::MissingField("body")),
            ChatBody::Text(t) if t.chars().count() > MAX_CHAT_CHARS => Err(Error::BodyTooLarge(MAX_CHAT_CHARS)),
            ChatBody::Blob(id) if !self.blobs.contains_key(id) => Err(Error::UnknownBlob(id.clone())),
            _ => Ok(()),
        }
    }

    pub fn history_saving(&self, user: UserId) -> bool {
        !self.history_off.contains(&user)
    }

    pub fn set_history_saving(&mut self, user: UserId, enabled: bool) {
        if enabled {
            self.history_off.remove(&user);
        } else {
            self.history_off.insert(user);
        }
    }

    /// Both participants must have history saving on for a message to be kept.
    pub fn persists(&self, a: UserId, b: UserId) -> bool {
        self.history_saving(a) && self.history_saving(b)
    }

    /// Assigns the next id, stores the message if both sides keep history,
    /// and queues it when the recipient is offline.
    pub fn send_chat(
        &mut self,
        from: UserId,
        to: UserId,
        body: ChatBody,
        now: i64,
        recipient_online: bool,
    ) -> Result<ChatMessage> {
        self.check_chat_body(&body)?;
        let key = conversation_key(from, to);
        let persist = self.persists(from, to);
        let conv = self.conversations.entry(key.0).or_default().entry(key.1).or_default();
        conv.next_msg_id += 1;
        let msg = ChatMessage {
            msg_id: conv.next_msg_id,
            conversation: key,
            sender: from,
            recipient: to,
            body,
            sent_at: now,
            delivered: recipient_online,
        };
        if persist {
            conv.history.insert(msg.msg_id, msg.clone());
        }
        if !recipient_online {
            let q = self.queues.entry(to).or_default().entry(from).or_default();
            q.messages.push_back(msg.clone());
            while q.messages.len() > OFFLINE_QUEUE_CAP {
                q.messages.pop_front();
                q.dropped += 1;
            }
        }
        Ok(msg)
    }

    pub fn has_pending(&self, user: UserId) -> bool {
        self.queues.contains_key(&user)
    }

    pub fn pending_count(&self, user: UserId) -> usize {
        self.queues.get(&user).map_or(0, |m| m.values().map(|q| q.messages.len()).sum())
    }

    /// Hands over everything queued for `user`, oldest first, marking it delivered.
    /// The flag next to each message says whether it is kept in history.
    pub fn flush(&mut self, user: UserId) -> Vec<Delivery> {
        let Some(queues) = self.queues.remove(&user) else {
            return Vec::new();
        };
        let mut out = Vec::new();
        let mut messages = Vec::new();
        for (peer, q) in queues {
            if q.dropped > 0 {
                out.push(Delivery::Gap { peer, dropped: q.dropped });
            }
            messages.extend(q.messages);
        }
        messages.sort_by_key(|m| (m.sent_at, m.conversation, m.msg_id));
        for mut m in messages {
            m.delivered = true;
            let kept = self
                .conversations
                .get_mut(&m.conversation.0)
                .and_then(|c| c.get_mut(&m.conversation.1))
                .and_then(|c| c.history.get_mut(&m.msg_id));
            let persisted = match kept {
                Some(h) => {
                    h.delivered = true;
                    true
                }
                None => false,
            };
            out.push(Delivery::Message(m, persisted));
        }
        out
    }

    /// Stored messages of a conversation with `msg_id < before`, newest first.
    pub fn chat_history(
        &self,
        viewer: UserId,
        conversation: (UserId, UserId),
        before: Option<u64>,
        limit: usize,
    ) -> Result<Vec<ChatMessage>> {
        if viewer != conversation.0 && viewer != conversation.1 {
            return Err(Error::Unauthorized);
        }
        let key = conversation_key(conversation.0, conversation.1);
        let Some(conv) = self.conversations.get(&key.0).and_then(|c| c.get(&key.1)) else {
            return Ok(Vec::new());
        };
        let upper = before.unwrap_or(u64::MAX);
        Ok(conv.history.range(..upper).rev().take(limit).map(|(_, m)| m.clone()).collect())
    }

    /// Every stored chat message, for audits.
    pub fn stored_messages(&self) -> impl Iterator<Item = &ChatMessage> {
        self.conversations
            .values()
            .flat_map(|m| m.values())
            .flat_map(|c| c.history.values())
    }

    pub fn check_mail(subject: &str, body: &str) -> Result<()> {
        if subject.chars().count() > MAX_SUBJECT_CHARS {
            return Err(Error::TooLong(MAX_SUBJECT_CHARS));
        }
        if body.len() > MAX_MAIL_BODY_BYTES {
            return Err(Error::BodyTooLarge(MAX_MAIL_BODY_BYTES));
        }
        Ok(())
    }

    pub fn send_mail(&mut self, from: UserId, to: UserId, subject: &str, body: &str, now: i64) -> Result<Mail> {
        Self::check_mail(subject, body)?;
        self.next_mail_id += 1;
        let mail = Mail {
            mail_id: self.next_mail_id,
            from,
            to,
            subject: subject.to_string(),
            body: body.to_string(),
            sent_at: now,
            read: false,
            deleted_by_sender: false,
            deleted_by_recipient: false,
        };
        self.mail.insert(mail.mail_id, mail.clone());
        Ok(mail)
    }

    pub fn list_mail(&self, user: UserId, folder: MailFolder) -> Vec<&Mail> {
        self.mail
            .values()
            .rev()
            .filter(|m| match folder {
                MailFolder::Inbox => m.to == user && !m.deleted_by_recipient,
                MailFolder::Sent => m.from == user && !m.deleted_by_sender,
            })
            .collect()
    }

    pub fn unread_count(&self, user: UserId) -> usize {
        self.mail
            .values()
            .filter(|m| m.to == user && !m.deleted_by_recipient && !m.read)
            .count()
    }

    pub fn mail(&self, user: UserId, id: u64) -> Result<&Mail> {
        self.mail.get(&id).filter(|m| m.visible_to(user)).ok_or(Error::NotYourMail)
    }

    pub fn read_mail(&mut self, user: UserId, id: u64) -> Result<Mail> {
        self.mail(user, id)?;
        let m = self.mail.get_mut(&id).expect("checked");
        if m.to == user {
            m.read = true;
        }
        Ok(m.clone())
    }

    /// Hides the mail from `user`; it is removed once both endpoints deleted it.
    pub fn delete_mail(&mut self, user: UserId, id: u64) -> Result<()> {
        self.mail(user, id)?;
        let m = self.mail.get_mut(&id).expect("checked");
        if m.from == user {
            m.deleted_by_sender = true;
        }
        if m.to == user {
            m.deleted_by_recipient = true;
        }
        if m.deleted_by_sender && m.deleted_by_recipient {
            self.mail.remove(&id);
        }
        Ok(())
    }

    pub fn blob(&self, id: &str) -> Result<&BlobMeta> {
        self.blobs.get(id).ok_or_else(|| Error::UnknownBlob(id.to_string()))
    }

    pub fn has_blob(&self, id: &str) -> bool {
        self.blobs.contains_key(id)
    }

    /// Records blob metadata; the first upload of given content wins.
    pub fn register_blob(&mut self, meta: BlobMeta) -> Result<BlobMeta> {
        check_blob_size(meta.size)?;
        Ok(self.blobs.entry(meta.blob_id.clone()).or_insert(meta).clone())
    }

    pub fn last_heartbeat(&self, user: UserId) -> Option<i64> {
        self.heartbeats.get(&user).copied()
    }

    pub fn heartbeat_fresh(&self, user: UserId, now: i64) -> bool {
        self.heartbeats.get(&user).is_some_and(|&t| now - t <= LIVENESS_WINDOW_MS)
    }

    pub fn is_announced(&self, user: UserId) -> bool {
        self.announced.contains(&user)
    }

    pub fn announced(&self) -> impl Iterator<Item = UserId> + '_ {
        self.announced.iter().copied()
    }

    /// Records a heartbeat. Returns true when the user was not announced online.
    pub fn heartbeat(&mut self, user: UserId, now: i64) -> bool {
        let slot = self.heartbeats.entry(user).or_insert(now);
        *slot = (*slot).max(now);
        self.announced.insert(user)
    }

    pub fn mark_offline(&mut self, user: UserId) -> bool {
        self.announced.remove(&user)
    }
}
