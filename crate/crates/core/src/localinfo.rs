//! Weather, local news and the moderated city forum.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result, SeedParseError};
use crate::UserId;

pub const FORECAST_DAYS: u32 = 3;
pub const RAIN_SUGGESTION: &str = "remember to bring umbrella";
pub const COLD_SUGGESTION: &str = "take more clothes";
pub const RAIN_THRESHOLD_PCT: f64 = 50.0;
pub const COLD_THRESHOLD_C: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherDay {
    pub day_offset: u32,
    pub temp_low: f64,
    pub temp_high: f64,
    pub sunshine_hours: f64,
    pub humidity: f64,
    pub wind_speed: f64,
    pub rain_probability: f64,
    pub suggestions: Vec<String>,
}

impl WeatherDay {
    /// Fills `suggestions` from the other fields.
    pub fn with_suggestions(mut self) -> Self {
        self.suggestions = suggestions(&self);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherReport {
    pub city: String,
    pub date: NaiveDate,
    pub days: Vec<WeatherDay>,
}

pub fn suggestions(day: &WeatherDay) -> Vec<String> {
    let mut out = Vec::new();
    if day.rain_probability > RAIN_THRESHOLD_PCT {
        out.push(RAIN_SUGGESTION.to_string());
    }
    if day.temp_high < COLD_THRESHOLD_C {
        out.push(COLD_SUGGESTION.to_string());
    }
    out
}

pub trait WeatherProvider: Send + Sync {
    fn forecast(&self, city: &str, date: NaiveDate) -> Result<WeatherReport>;
}

/// Deterministic made-up weather, a pure function of (city, date, seed).
#[derive(Debug, Clone, Copy, Default)]
pub struct SyntheticWeather {
    pub seed: u64,
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

impl WeatherProvider for SyntheticWeather {
    fn forecast(&self, city: &str, date: NaiveDate) -> Result<WeatherReport> {
        let mut h = Sha256::new();
        h.update(city.trim().to_lowercase().as_bytes());
        h.update([0]);
        h.update(date.to_string().as_bytes());
        h.update(self.seed.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
        let days = (0..FORECAST_DAYS)
            .map(|day_offset| {
                let low = round1(rng.random_range(-15.0..25.0));
                let high = round1(low + rng.random_range(1.0..12.0));
                WeatherDay {
                    day_offset,
                    temp_low: low,
                    temp_high: high,
                    sunshine_hours: round1(rng.random_range(0.0..12.0)),
                    humidity: round1(rng.random_range(10.0..100.0)),
                    wind_speed: round1(rng.random_range(0.0..15.0)),
                    rain_probability: rng.random_range(0..=100) as f64,
                    suggestions: Vec::new(),
                }
                .with_suggestions()
            })
            .collect();
        Ok(WeatherReport {
            city: city.trim().to_string(),
            date,
            days,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NewsSection {
    Sports,
    Health,
    Politics,
    Local,
    Tech,
}

impl FromStr for NewsSection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sports" => Ok(NewsSection::Sports),
            "health" => Ok(NewsSection::Health),
            "politics" => Ok(NewsSection::Politics),
            "local" => Ok(NewsSection::Local),
            "tech" => Ok(NewsSection::Tech),
            _ => Err(Error::UnknownSection(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewsItem {
    pub item_id: u64,
    pub section: NewsSection,
    /// Empty for items shown in every city.
    pub city: String,
    pub headline: String,
    pub body: String,
    pub published_at: i64,
}

/// Parses `section<TAB>city<TAB>headline<TAB>body<TAB>timestamp` lines.
pub fn parse_news_seed(text: &str) -> std::result::Result<Vec<NewsItem>, SeedParseError> {
    let mut items = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim_end_matches('\r');
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let err = |reason: String| SeedParseError { line, reason };
        let cols: Vec<&str> = trimmed.split('\t').collect();
        if cols.len() != 5 {
            return Err(err(format!("expected 5 columns, got {}", cols.len())));
        }
        let section = cols[0].parse::<NewsSection>().map_err(|e| err(e.to_string()))?;
        let published_at = chrono::DateTime::parse_from_rfc3339(cols[4].trim())
            .map_err(|e| err(format!("bad timestamp: {e}")))?
            .timestamp_millis();
        items.push(NewsItem {
            item_id: items.len() as u64 + 1,
            section,
            city: cols[1].trim().to_string(),
            headline: cols[2].trim().to_string(),
            body: cols[3].trim().to_string(),
            published_at,
        });
    }
    Ok(items)
}

/// Static news catalog.
#[derive(Debug, Clone, Default)]
pub struct NewsDesk {
    items: Vec<NewsItem>,
}

fn news_order(n: &NewsItem) -> (std::cmp::Reverse<i64>, std::cmp::Reverse<u64>) {
    (std::cmp::Reverse(n.published_at), std::cmp::Reverse(n.item_id))
}

impl NewsDesk {
    pub fn new(mut items: Vec<NewsItem>) -> Self {
        items.sort_by_key(news_order);
        NewsDesk { items }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Subscribed items for `city` (plus city-less items), newest first,
    /// strictly after the item `before`.
    pub fn feed(
        &self,
        sections: &BTreeSet<NewsSection>,
        city: Option<&str>,
        before: Option<u64>,
        limit: usize,
    ) -> Vec<NewsItem> {
        let city = city.map(|c| c.trim().to_lowercase());
        let matches = |n: &NewsItem| {
            sections.contains(&n.section)
                && (n.city.is_empty() || city.as_deref() == Some(n.city.to_lowercase().as_str()))
        };
        let start = match before.and_then(|id| self.items.iter().position(|n| n.item_id == id)) {
            Some(pos) => pos + 1,
            None if before.is_some() => self.items.len(),
            None => 0,
        };
        self.items[start..].iter().filter(|n| matches(n)).take(limit).cloned().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ForumState {
    Pending,
    Approved,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForumReply {
    pub reply_id: u64,
    pub author: UserId,
    pub body: String,
    pub at: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForumPost {
    pub post_id: u64,
    pub author: UserId,
    pub city: String,
    pub title: String,
    pub body: String,
    pub state: ForumState,
    pub created_at: i64,
    pub replies: Vec<ForumReply>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LocalInfo {
    subscriptions: BTreeMap<UserId, BTreeSet<NewsSection>>,
    forum: BTreeMap<u64, ForumPost>,
    next_post_id: u64,
    next_reply_id: u64,
}

fn same_city(a: &str, b: &str) -> bool {
    a.trim().to_lowercase() == b.trim().to_lowercase()
}

impl LocalInfo {
    pub fn subscriptions(&self, user: UserId) -> BTreeSet<NewsSection> {
        self.subscriptions.get(&user).cloned().unwrap_or_default()
    }

    pub fn subscribe(&mut self, user: UserId, sections: BTreeSet<NewsSection>) {
        if sections.is_empty() {
            self.subscriptions.remove(&user);
        } else {
            self.subscriptions.insert(user, sections);
        }
    }

    pub fn forum_post(&mut self, author: UserId, city: &str, title: &str, body: &str, now: i64) -> Result<ForumPost> {
        if title.trim().is_empty() {
            return Err(Error::MissingField("title"));
        }
        self.next_post_id += 1;
        let post = ForumPost {
            post_id: self.next_post_id,
            author,
            city: city.trim().to_string(),
            title: title.to_string(),
            body: body.to_string(),
            state: ForumState::Pending,
            created_at: now,
            replies: Vec::new(),
        };
        self.forum.insert(post.post_id, post.clone());
        Ok(post)
    }

    pub fn post(&self, id: u64) -> Result<&ForumPost> {
        self.forum.get(&id).ok_or(Error::UnknownPost(id))
    }

    pub fn posts(&self) -> impl Iterator<Item = &ForumPost> {
        self.forum.values()
    }

    /// Moderation; the caller checks admin rights.
    pub fn moderate(&mut self, id: u64, approve: bool) -> Result<ForumPost> {
        let post = self.forum.get_mut(&id).ok_or(Error::UnknownPost(id))?;
        post.state = if approve {
            ForumState::Approved
        } else {
            ForumState::Rejected
        };
        Ok(post.clone())
    }

    pub fn view(&self, viewer: UserId, is_admin: bool, id: u64) -> Result<&ForumPost> {
        let post = self.post(id)?;
        if post.state == ForumState::Approved || post.author == viewer || is_admin {
            Ok(post)
        } else {
            Err(Error::UnknownPost(id))
        }
    }

    pub fn reply(&mut self, author: UserId, id: u64, body: &str, now: i64) -> Result<ForumReply> {
        let post = self.post(id)?;
        if post.state != ForumState::Approved {
            return Err(Error::NotApproved);
        }
        if body.trim().is_empty() {
            return Err(Error::MissingField("body"));
        }
        self.next_reply_id += 1;
        let reply = ForumReply {
            reply_id: self.next_reply_id,
            author,
            body: body.to_string(),
            at: now,
        };
        self.forum.get_mut(&id).expect("checked").replies.push(reply.clone());
        Ok(reply)
    }

    /// Approved posts in `city` plus the viewer's own posts there, newest first.
    pub fn list(&self, viewer: UserId, city: &str) -> Vec<&ForumPost> {
        self.forum
            .values()
            .rev()
            .filter(|p| same_city(&p.city, city))
            .filter(|p| p.state == ForumState::Approved || p.author == viewer)
            .collect()
    }

    /// Posts awaiting moderation, oldest first.
    pub fn queue(&self) -> Vec<&ForumPost> {
        self.forum.values().filter(|p| p.state == ForumState::Pending).collect()
    }
}
