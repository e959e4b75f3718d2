//! Per-user event streams with sequence numbers.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::content::FeedKind;
use crate::messaging::ChatMessage;
use crate::UserId;

pub const EVENT_RETENTION: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Chat {
        message: ChatMessage,
    },
    /// Older undelivered messages from `peer` were dropped from a full queue.
    ChatGap {
        peer: UserId,
        dropped: u64,
    },
    MailArrived {
        mail_id: u64,
        from: UserId,
        subject: String,
    },
    Feed {
        event_id: u64,
        actor: UserId,
        kind: FeedKind,
    },
    Presence {
        user_id: UserId,
        online: bool,
        last_seen: Option<i64>,
    },
    FriendRequest {
        from: UserId,
    },
    FriendAccepted {
        by: UserId,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub seq: u64,
    pub at: i64,
    /// Dropped from the log once acknowledged.
    pub transient: bool,
    pub event: Event,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    next_seq: u64,
    entries: VecDeque<Envelope>,
}

impl EventLog {
    pub fn push(&mut self, event: Event, at: i64, transient: bool) -> u64 {
        self.next_seq += 1;
        self.entries.push_back(Envelope {
            seq: self.next_seq,
            at,
            transient,
            event,
        });
        while self.entries.len() > EVENT_RETENTION {
            self.entries.pop_front();
        }
        self.next_seq
    }

    pub fn latest_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn since(&self, seq: u64) -> impl Iterator<Item = &Envelope> {
        let start = self.entries.partition_point(|e| e.seq <= seq);
        self.entries.range(start..)
    }

    pub fn entries(&self) -> impl Iterator<Item = &Envelope> {
        self.entries.iter()
    }

    pub fn has_unacked_transient(&self, upto: u64) -> bool {
        self.entries.iter().take_while(|e| e.seq <= upto).any(|e| e.transient)
    }

    /// Drops transient entries with `seq <= upto`.
    pub fn ack(&mut self, upto: u64) -> usize {
        let before = self.entries.len();
        self.entries.retain(|e| !(e.transient && e.seq <= upto));
        before - self.entries.len()
    }
}

/// All event logs, plus the set of users whose log grew since the last drain.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EventHub {
    logs: BTreeMap<UserId, EventLog>,
    #[serde(skip)]
    touched: BTreeSet<UserId>,
}

impl PartialEq for EventHub {
    fn eq(&self, other: &Self) -> bool {
        self.logs == other.logs
    }
}

impl EventHub {
    pub fn push(&mut self, user: UserId, event: Event, at: i64, transient: bool) -> u64 {
        self.touched.insert(user);
        self.logs.entry(user).or_default().push(event, at, transient)
    }

    pub fn log(&self, user: UserId) -> Option<&EventLog> {
        self.logs.get(&user)
    }

    pub fn latest_seq(&self, user: UserId) -> u64 {
        self.logs.get(&user).map_or(0, EventLog::latest_seq)
    }

    pub fn since(&self, user: UserId, seq: u64) -> Vec<Envelope> {
        self.logs.get(&user).map(|l| l.since(seq).cloned().collect()).unwrap_or_default()
    }

    pub fn ack(&mut self, user: UserId, upto: u64) -> usize {
        self.logs.get_mut(&user).map_or(0, |l| l.ack(upto))
    }

    pub fn logs(&self) -> impl Iterator<Item = (&UserId, &EventLog)> {
        self.logs.iter()
    }

    pub fn drain_touched(&mut self) -> Vec<UserId> {
        std::mem::take(&mut self.touched).into_iter().collect()
    }
}
