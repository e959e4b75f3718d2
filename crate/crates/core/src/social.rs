//! Friend graph, groups, privacy tiers and friend recommendation.

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::identity::{Gender, UserProfile};
use crate::UserId;

pub const MY_FRIENDS: &str = "My Friends";
pub const STRANGERS: &str = "Strangers";
/// Distance decay scale for recommendations, meters.
pub const RECOMMEND_DECAY_M: f64 = 10_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tier {
    Everyone,
    FriendsOnly,
    Nobody,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldGroup {
    Phone,
    Gender,
    Birthday,
    Email,
    Location,
    Status,
}

impl FieldGroup {
    pub const ALL: [FieldGroup; 6] = [
        FieldGroup::Phone,
        FieldGroup::Gender,
        FieldGroup::Birthday,
        FieldGroup::Email,
        FieldGroup::Location,
        FieldGroup::Status,
    ];
}

/// One tier per field group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrivacyPolicy {
    pub phone: Tier,
    pub gender: Tier,
    pub birthday: Tier,
    pub email: Tier,
    pub location: Tier,
    pub status: Tier,
}

impl Default for PrivacyPolicy {
    fn default() -> Self {
        PrivacyPolicy {
            phone: Tier::FriendsOnly,
            gender: Tier::Everyone,
            birthday: Tier::FriendsOnly,
            email: Tier::FriendsOnly,
            location: Tier::FriendsOnly,
            status: Tier::Everyone,
        }
    }
}

impl PrivacyPolicy {
    pub fn uniform(tier: Tier) -> Self {
        PrivacyPolicy {
            phone: tier,
            gender: tier,
            birthday: tier,
            email: tier,
            location: tier,
            status: tier,
        }
    }

    pub fn tier(&self, group: FieldGroup) -> Tier {
        match group {
            FieldGroup::Phone => self.phone,
            FieldGroup::Gender => self.gender,
            FieldGroup::Birthday => self.birthday,
            FieldGroup::Email => self.email,
            FieldGroup::Location => self.location,
            FieldGroup::Status => self.status,
        }
    }

    pub fn set(&mut self, group: FieldGroup, tier: Tier) {
        let slot = match group {
            FieldGroup::Phone => &mut self.phone,
            FieldGroup::Gender => &mut self.gender,
            FieldGroup::Birthday => &mut self.birthday,
            FieldGroup::Email => &mut self.email,
            FieldGroup::Location => &mut self.location,
            FieldGroup::Status => &mut self.status,
        };
        *slot = tier;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    Owner,
    Friend,
    Stranger,
}

pub fn tier_allows(tier: Tier, relation: Relation) -> bool {
    match relation {
        Relation::Owner => true,
        Relation::Friend => tier != Tier::Nobody,
        Relation::Stranger => tier == Tier::Everyone,
    }
}

/// A profile as some viewer is allowed to see it. Hidden fields are `None`
/// and are omitted when serialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileView {
    pub user_id: UserId,
    pub username: String,
    pub nickname: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub avatar: Option<String>,
    #[serde(default)]
    pub interests: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gender: Option<Gender>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub birthday: Option<NaiveDate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub email: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phone: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub city: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub country: Option<String>,
}

impl ProfileView {
    pub fn full(p: &UserProfile) -> Self {
        ProfileView {
            user_id: p.user_id,
            username: p.username.clone(),
            nickname: p.basic.nickname.clone(),
            avatar: p.basic.avatar.clone(),
            interests: p.basic.interests.iter().cloned().collect(),
            gender: Some(p.basic.gender),
            birthday: p.basic.birthday,
            status_text: Some(p.basic.status_text.clone()),
            email: Some(p.contact.email.clone()),
            phone: Some(p.contact.phone.clone()),
            city: p.location.city.clone(),
            country: p.location.country.clone(),
        }
    }
}

pub fn filter_view(mut view: ProfileView, relation: Relation, policy: &PrivacyPolicy) -> ProfileView {
    let hide = |g: FieldGroup| !tier_allows(policy.tier(g), relation);
    if hide(FieldGroup::Phone) {
        view.phone = None;
    }
    if hide(FieldGroup::Gender) {
        view.gender = None;
    }
    if hide(FieldGroup::Birthday) {
        view.birthday = None;
    }
    if hide(FieldGroup::Email) {
        view.email = None;
    }
    if hide(FieldGroup::Location) {
        view.city = None;
        view.country = None;
    }
    if hide(FieldGroup::Status) {
        view.status_text = None;
    }
    view
}

pub fn filter_profile(relation: Relation, profile: &UserProfile) -> ProfileView {
    filter_view(ProfileView::full(profile), relation, &profile.privacy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub group_id: u64,
    pub owner: UserId,
    pub name: String,
    pub default: bool,
}

/// The owner's side of a friendship.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FriendEdge {
    pub group_id: u64,
    pub alias: Option<String>,
    pub since: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationScore {
    pub user_id: UserId,
    pub username: String,
    pub score: f64,
    pub shared_interest_count: usize,
}

pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> (f64, usize) {
    let shared = a.intersection(b).count();
    let union = a.len() + b.len() - shared;
    if union == 0 {
        (0.0, 0)
    } else {
        (shared as f64 / union as f64, shared)
    }
}

/// Interest similarity damped by distance; `None` distance means no decay.
pub fn recommendation_score(a: &BTreeSet<String>, b: &BTreeSet<String>, distance_m: Option<f64>) -> (f64, usize) {
    let (j, shared) = jaccard(a, b);
    let decay = distance_m.map_or(1.0, |d| (-d / RECOMMEND_DECAY_M).exp());
    (j * decay, shared)
}

/// Drops zero scores, sorts by score descending then username, keeps `k`.
pub fn rank(mut scores: Vec<RecommendationScore>, k: usize) -> Vec<RecommendationScore> {
    scores.retain(|s| s.score > 0.0);
    scores.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.username.cmp(&b.username)));
    scores.truncate(k);
    scores
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SocialGraph {
    groups: BTreeMap<u64, Group>,
    next_group_id: u64,
    /// owner -> friend -> owner's edge
    edges: BTreeMap<UserId, BTreeMap<UserId, FriendEdge>>,
    /// recipient -> sender -> requested_at
    requests: BTreeMap<UserId, BTreeMap<UserId, i64>>,
}

impl SocialGraph {
    fn add_group(&mut self, owner: UserId, name: &str, default: bool) -> u64 {
        self.next_group_id += 1;
        let id = self.next_group_id;
        self.groups.insert(
            id,
            Group {
                group_id: id,
                owner,
                name: name.to_string(),
                default,
            },
        );
        id
    }

    /// Creates the two default groups for a new account.
    pub fn init_user(&mut self, user: UserId) {
        self.add_group(user, MY_FRIENDS, true);
        self.add_group(user, STRANGERS, true);
    }

    pub fn groups(&self, owner: UserId) -> Vec<&Group> {
        self.groups.values().filter(|g| g.owner == owner).collect()
    }

    pub fn group(&self, id: u64) -> Option<&Group> {
        self.groups.get(&id)
    }

    fn group_by_name(&self, owner: UserId, name: &str) -> Option<&Group> {
        self.groups.values().find(|g| g.owner == owner && g.name == name)
    }

    fn require_group(&self, owner: UserId, name: &str) -> Result<&Group> {
        self.group_by_name(owner, name).ok_or_else(|| Error::UnknownGroup(name.to_string()))
    }

    fn default_group(&self, owner: UserId) -> u64 {
        self.group_by_name(owner, MY_FRIENDS).map(|g| g.group_id).expect("default group exists")
    }

    pub fn are_friends(&self, a: UserId, b: UserId) -> bool {
        self.edges.get(&a).is_some_and(|m| m.contains_key(&b))
    }

    pub fn friends(&self, user: UserId) -> impl Iterator<Item = (UserId, &FriendEdge)> {
        self.edges.get(&user).into_iter().flat_map(|m| m.iter().map(|(k, v)| (*k, v)))
    }

    pub fn friend_ids(&self, user: UserId) -> BTreeSet<UserId> {
        self.friends(user).map(|(id, _)| id).collect()
    }

    pub fn relation(&self, viewer: UserId, owner: UserId) -> Relation {
        if viewer == owner {
            Relation::Owner
        } else if self.are_friends(viewer, owner) {
            Relation::Friend
        } else {
            Relation::Stranger
        }
    }

    /// Senders with a pending request to `user`, oldest first.
    pub fn incoming(&self, user: UserId) -> Vec<(UserId, i64)> {
        let mut v: Vec<_> = self.requests.get(&user).into_iter().flatten().map(|(k, t)| (*k, *t)).collect();
        v.sort_by_key(|&(id, t)| (t, id));
        v
    }

    pub fn outgoing(&self, user: UserId) -> Vec<(UserId, i64)> {
        let mut v: Vec<_> = self
            .requests
            .iter()
            .filter_map(|(to, m)| m.get(&user).map(|t| (*to, *t)))
            .collect();
        v.sort_by_key(|&(id, t)| (t, id));
        v
    }

    pub fn has_request(&self, from: UserId, to: UserId) -> bool {
        self.requests.get(&to).is_some_and(|m| m.contains_key(&from))
    }

    pub fn check_request(&self, from: UserId, to: UserId) -> Result<()> {
        if from == to {
            return Err(Error::SelfFriendship);
        }
        if self.are_friends(from, to) {
            return Err(Error::AlreadyFriends);
        }
        Ok(())
    }

    /// Records a request. Repeating a pending request keeps the original time.
    pub fn request(&mut self, from: UserId, to: UserId, now: i64) -> Result<()> {
        self.check_request(from, to)?;
        self.requests.entry(to).or_default().entry(from).or_insert(now);
        Ok(())
    }

    fn take_request(&mut self, from: UserId, to: UserId) -> bool {
        let Some(m) = self.requests.get_mut(&to) else {
            return false;
        };
        let found = m.remove(&from).is_some();
        if m.is_empty() {
            self.requests.remove(&to);
        }
        found
    }

    pub fn accept(&mut self, user: UserId, from: UserId, now: i64) -> Result<()> {
        if !self.has_request(from, user) {
            return Err(Error::NoPendingRequest);
        }
        self.take_request(from, user);
        self.take_request(user, from);
        for (a, b) in [(user, from), (from, user)] {
            let group_id = self.default_group(a);
            self.edges.entry(a).or_default().insert(
                b,
                FriendEdge {
                    group_id,
                    alias: None,
                    since: now,
                },
            );
        }
        Ok(())
    }

    pub fn decline(&mut self, user: UserId, from: UserId) -> Result<()> {
        if self.take_request(from, user) {
            Ok(())
        } else {
            Err(Error::NoPendingRequest)
        }
    }

    pub fn remove_friend(&mut self, user: UserId, other: UserId) -> Result<()> {
        if !self.are_friends(user, other) {
            return Err(Error::NotFriends);
        }
        for (a, b) in [(user, other), (other, user)] {
            if let Some(m) = self.edges.get_mut(&a) {
                m.remove(&b);
                if m.is_empty() {
                    self.edges.remove(&a);
                }
            }
        }
        Ok(())
    }

    pub fn move_to_group(&mut self, user: UserId, friend: UserId, group: &str) -> Result<()> {
        if !self.are_friends(user, friend) {
            return Err(Error::NotFriends);
        }
        let gid = self.require_group(user, group)?.group_id;
        self.edges.get_mut(&user).and_then(|m| m.get_mut(&friend)).expect("edge").group_id = gid;
        Ok(())
    }

    pub fn set_alias(&mut self, user: UserId, friend: UserId, alias: Option<String>) -> Result<()> {
        let edge = self
            .edges
            .get_mut(&user)
            .and_then(|m| m.get_mut(&friend))
            .ok_or(Error::NotFriends)?;
        edge.alias = alias.filter(|a| !a.trim().is_empty());
        Ok(())
    }

    pub fn create_group(&mut self, owner: UserId, name: &str) -> Result<u64> {
        let name = name.trim();
        if name.is_empty() {
            return Err(Error::MissingField("name"));
        }
        if self.group_by_name(owner, name).is_some() {
            return Err(Error::DuplicateGroupName(name.to_string()));
        }
        Ok(self.add_group(owner, name, false))
    }

    pub fn rename_group(&mut self, owner: UserId, name: &str, new_name: &str) -> Result<()> {
        let g = self.require_group(owner, name)?;
        if g.default {
            return Err(Error::DefaultGroupProtected);
        }
        let id = g.group_id;
        let new_name = new_name.trim();
        if new_name.is_empty() {
            return Err(Error::MissingField("name"));
        }
        if new_name != name && self.group_by_name(owner, new_name).is_some() {
            return Err(Error::DuplicateGroupName(new_name.to_string()));
        }
        self.groups.get_mut(&id).expect("group").name = new_name.to_string();
        Ok(())
    }

    /// Deletes a group; its members move to the default friends group.
    pub fn delete_group(&mut self, owner: UserId, name: &str) -> Result<()> {
        let g = self.require_group(owner, name)?;
        if g.default {
            return Err(Error::DefaultGroupProtected);
        }
        let id = g.group_id;
        let fallback = self.default_group(owner);
        if let Some(m) = self.edges.get_mut(&owner) {
            for e in m.values_mut().filter(|e| e.group_id == id) {
                e.group_id = fallback;
            }
        }
        self.groups.remove(&id);
        Ok(())
    }

    /// Symmetry and group-ownership audit; used by tests.
    pub fn audit(&self) -> std::result::Result<(), String> {
        for (a, m) in &self.edges {
            for (b, e) in m {
                if a == b {
                    return Err(format!("self edge {a}"));
                }
                if !self.are_friends(*b, *a) {
                    return Err(format!("asymmetric edge {a}->{b}"));
                }
                match self.groups.get(&e.group_id) {
                    Some(g) if g.owner == *a => {}
                    _ => return Err(format!("edge {a}->{b} in foreign group {}", e.group_id)),
                }
            }
        }
        Ok(())
    }
}
