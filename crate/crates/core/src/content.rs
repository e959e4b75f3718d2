//! Homepage content: activity feed, blogs, albums, comments and visitors.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::UserId;

pub const MAX_COMMENT_CHARS: usize = 1024;
pub const VISITOR_CAP: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeedKind {
    AvatarChanged,
    BlogPublished,
    PhotosUploaded,
    ProfileUpdated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FeedSubject {
    Profile,
    Blog { post_id: u64 },
    Album { album_id: u64, count: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Comment {
    pub comment_id: u64,
    pub author: UserId,
    pub text: String,
    pub at: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedEvent {
    pub event_id: u64,
    pub actor: UserId,
    pub kind: FeedKind,
    pub subject: FeedSubject,
    pub occurred_at: i64,
    pub comments: Vec<Comment>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PostState {
    Draft,
    Published,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlogPost {
    pub post_id: u64,
    pub author: UserId,
    pub title: String,
    pub body: String,
    pub state: PostState,
    pub created_at: i64,
    pub published_at: Option<i64>,
    pub comments: Vec<Comment>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Album {
    pub album_id: u64,
    pub owner: UserId,
    pub title: String,
    pub photos: Vec<u64>,
    pub created_at: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Photo {
    pub photo_id: u64,
    pub album_id: u64,
    pub blob_id: String,
    pub caption: String,
    pub uploaded_at: i64,
    pub comments: Vec<Comment>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhotoUpload {
    pub blob_id: String,
    #[serde(default)]
    pub caption: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "id", rename_all = "snake_case")]
pub enum CommentTarget {
    Event(u64),
    Blog(u64),
    Photo(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisitRecord {
    pub visitor: UserId,
    pub visited_at: i64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Content {
    events: BTreeMap<u64, FeedEvent>,
    next_event_id: u64,
    posts: BTreeMap<u64, BlogPost>,
    next_post_id: u64,
    albums: BTreeMap<u64, Album>,
    next_album_id: u64,
    photos: BTreeMap<u64, Photo>,
    next_photo_id: u64,
    next_comment_id: u64,
    visits: BTreeMap<UserId, VecDeque<VisitRecord>>,
}

fn feed_order(e: &FeedEvent) -> (std::cmp::Reverse<i64>, std::cmp::Reverse<u64>) {
    (std::cmp::Reverse(e.occurred_at), std::cmp::Reverse(e.event_id))
}

fn require_text(name: &'static str, value: &str) -> Result<()> {
    if value.trim().is_empty() {
        Err(Error::MissingField(name))
    } else {
        Ok(())
    }
}

impl Content {
    pub fn emit(&mut self, actor: UserId, kind: FeedKind, subject: FeedSubject, now: i64) -> FeedEvent {
        self.next_event_id += 1;
        let ev = FeedEvent {
            event_id: self.next_event_id,
            actor,
            kind,
            subject,
            occurred_at: now,
            comments: Vec::new(),
        };
        self.events.insert(ev.event_id, ev.clone());
        ev
    }

    pub fn events(&self) -> impl Iterator<Item = &FeedEvent> {
        self.events.values()
    }

    pub fn event(&self, id: u64) -> Option<&FeedEvent> {
        self.events.get(&id)
    }

    /// Events by actors in `circle`, newest first, starting after `before`.
    pub fn feed(&self, circle: &BTreeSet<UserId>, before: Option<u64>, limit: usize) -> Vec<FeedEvent> {
        let mut items: Vec<&FeedEvent> = self.events.values().filter(|e| circle.contains(&e.actor)).collect();
        items.sort_by_key(|e| feed_order(e));
        let start = match before {
            None => 0,
            Some(id) => match self.events.get(&id) {
                Some(cursor) => items.partition_point(|e| feed_order(e) <= feed_order(cursor)),
                None => items.iter().position(|e| e.event_id < id).unwrap_or(items.len()),
            },
        };
        items[start..].iter().take(limit).map(|e| (*e).clone()).collect()
    }

    pub fn blog(&self, id: u64) -> Result<&BlogPost> {
        self.posts.get(&id).ok_or(Error::UnknownPost(id))
    }

    fn own_blog(&self, author: UserId, id: u64) -> Result<&BlogPost> {
        let post = self.blog(id)?;
        if post.author != author {
            return Err(Error::Unauthorized);
        }
        Ok(post)
    }

    pub fn blog_view(&self, viewer: UserId, id: u64) -> Result<&BlogPost> {
        let post = self.blog(id)?;
        if post.state == PostState::Draft && post.author != viewer {
            return Err(Error::NotVisible);
        }
        Ok(post)
    }

    /// Posts by `author` that `viewer` may see, newest first.
    pub fn blog_list(&self, viewer: UserId, author: UserId) -> Vec<&BlogPost> {
        self.posts
            .values()
            .rev()
            .filter(|p| p.author == author && (p.state == PostState::Published || viewer == author))
            .collect()
    }

    pub fn posts(&self) -> impl Iterator<Item = &BlogPost> {
        self.posts.values()
    }

    pub fn blog_write(&mut self, author: UserId, title: &str, body: &str, now: i64) -> Result<BlogPost> {
        require_text("title", title)?;
        self.next_post_id += 1;
        let post = BlogPost {
            post_id: self.next_post_id,
            author,
            title: title.to_string(),
            body: body.to_string(),
            state: PostState::Draft,
            created_at: now,
            published_at: None,
            comments: Vec::new(),
        };
        self.posts.insert(post.post_id, post.clone());
        Ok(post)
    }

    pub fn blog_edit(&mut self, author: UserId, id: u64, title: Option<&str>, body: Option<&str>) -> Result<BlogPost> {
        self.own_blog(author, id)?;
        if let Some(t) = title {
            require_text("title", t)?;
        }
        let post = self.posts.get_mut(&id).expect("checked");
        if let Some(t) = title {
            post.title = t.to_string();
        }
        if let Some(b) = body {
            post.body = b.to_string();
        }
        Ok(post.clone())
    }

    pub fn blog_publish(&mut self, author: UserId, id: u64, now: i64) -> Result<(BlogPost, FeedEvent)> {
        if self.own_blog(author, id)?.state == PostState::Published {
            return Err(Error::AlreadyPublished);
        }
        let post = self.posts.get_mut(&id).expect("checked");
        post.state = PostState::Published;
        post.published_at = Some(now);
        let post = post.clone();
        let ev = self.emit(author, FeedKind::BlogPublished, FeedSubject::Blog { post_id: id }, now);
        Ok((post, ev))
    }

    /// Removes the post and its feed events. Returns the removed event ids.
    pub fn blog_delete(&mut self, author: UserId, id: u64) -> Result<Vec<u64>> {
        self.own_blog(author, id)?;
        self.posts.remove(&id);
        let subject = FeedSubject::Blog { post_id: id };
        Ok(self.drop_events(|e| e.subject == subject))
    }

    fn drop_events(&mut self, pred: impl Fn(&FeedEvent) -> bool) -> Vec<u64> {
        let ids: Vec<u64> = self.events.values().filter(|e| pred(e)).map(|e| e.event_id).collect();
        for id in &ids {
            self.events.remove(id);
        }
        ids
    }

    pub fn album(&self, id: u64) -> Result<&Album> {
        self.albums.get(&id).ok_or(Error::UnknownAlbum(id))
    }

    pub fn albums_of(&self, owner: UserId) -> Vec<&Album> {
        self.albums.values().filter(|a| a.owner == owner).collect()
    }

    pub fn photo(&self, id: u64) -> Result<&Photo> {
        self.photos.get(&id).ok_or(Error::UnknownPhoto(id))
    }

    pub fn album_photos(&self, album: &Album) -> Vec<&Photo> {
        album.photos.iter().filter_map(|id| self.photos.get(id)).collect()
    }

    fn own_album(&self, owner: UserId, id: u64) -> Result<&Album> {
        let album = self.album(id)?;
        if album.owner != owner {
            return Err(Error::Unauthorized);
        }
        Ok(album)
    }

    pub fn album_create(&mut self, owner: UserId, title: &str, now: i64) -> Result<Album> {
        require_text("title", title)?;
        self.next_album_id += 1;
        let album = Album {
            album_id: self.next_album_id,
            owner,
            title: title.to_string(),
            photos: Vec::new(),
            created_at: now,
        };
        self.albums.insert(album.album_id, album.clone());
        Ok(album)
    }

    /// Removes the album, its photos and its upload events. Blobs stay.
    pub fn album_delete(&mut self, owner: UserId, id: u64) -> Result<()> {
        self.own_album(owner, id)?;
        let album = self.albums.remove(&id).expect("checked");
        for p in album.photos {
            self.photos.remove(&p);
        }
        self.drop_events(|e| matches!(e.subject, FeedSubject::Album { album_id, .. } if album_id == id));
        Ok(())
    }

    /// Adds photos in one batch and emits a single upload event.
    /// Blob existence is checked by the caller.
    pub fn photo_upload(
        &mut self,
        owner: UserId,
        album_id: u64,
        items: &[PhotoUpload],
        now: i64,
    ) -> Result<(Vec<Photo>, FeedEvent)> {
        self.own_album(owner, album_id)?;
        if items.is_empty() {
            return Err(Error::MissingField("photos"));
        }
        let mut added = Vec::with_capacity(items.len());
        for item in items {
            self.next_photo_id += 1;
            let photo = Photo {
                photo_id: self.next_photo_id,
                album_id,
                blob_id: item.blob_id.clone(),
                caption: item.caption.clone(),
                uploaded_at: now,
                comments: Vec::new(),
            };
            self.photos.insert(photo.photo_id, photo.clone());
            added.push(photo);
        }
        let album = self.albums.get_mut(&album_id).expect("checked");
        album.photos.extend(added.iter().map(|p| p.photo_id));
        let subject = FeedSubject::Album {
            album_id,
            count: added.len(),
        };
        let ev = self.emit(owner, FeedKind::PhotosUploaded, subject, now);
        Ok((added, ev))
    }

    fn own_photo(&self, owner: UserId, id: u64) -> Result<&Photo> {
        let photo = self.photo(id)?;
        self.own_album(owner, photo.album_id)?;
        Ok(photo)
    }

    pub fn photo_edit(&mut self, owner: UserId, id: u64, caption: &str) -> Result<Photo> {
        self.own_photo(owner, id)?;
        let photo = self.photos.get_mut(&id).expect("checked");
        photo.caption = caption.to_string();
        Ok(photo.clone())
    }

    pub fn photo_delete(&mut self, owner: UserId, id: u64) -> Result<()> {
        let album_id = self.own_photo(owner, id)?.album_id;
        self.photos.remove(&id);
        self.albums.get_mut(&album_id).expect("album").photos.retain(|p| *p != id);
        Ok(())
    }

    /// Checks that `viewer` may comment on `target`. `is_friend` answers
    /// whether an actor is a friend of the viewer.
    pub fn check_comment(
        &self,
        viewer: UserId,
        target: CommentTarget,
        text: &str,
        is_friend: impl Fn(UserId) -> bool,
    ) -> Result<()> {
        match target {
            CommentTarget::Event(id) => {
                let ev = self.events.get(&id).ok_or(Error::NotVisible)?;
                if ev.actor != viewer && !is_friend(ev.actor) {
                    return Err(Error::NotVisible);
                }
            }
            CommentTarget::Blog(id) => {
                self.blog_view(viewer, id).map_err(|_| Error::NotVisible)?;
            }
            CommentTarget::Photo(id) => {
                self.photo(id).map_err(|_| Error::NotVisible)?;
            }
        }
        require_text("text", text)?;
        if text.chars().count() > MAX_COMMENT_CHARS {
            return Err(Error::TooLong(MAX_COMMENT_CHARS));
        }
        Ok(())
    }

    pub fn comment(
        &mut self,
        viewer: UserId,
        target: CommentTarget,
        text: &str,
        now: i64,
        is_friend: impl Fn(UserId) -> bool,
    ) -> Result<Comment> {
        self.check_comment(viewer, target, text, is_friend)?;
        self.next_comment_id += 1;
        let c = Comment {
            comment_id: self.next_comment_id,
            author: viewer,
            text: text.to_string(),
            at: now,
        };
        let list = match target {
            CommentTarget::Event(id) => &mut self.events.get_mut(&id).expect("checked").comments,
            CommentTarget::Blog(id) => &mut self.posts.get_mut(&id).expect("checked").comments,
            CommentTarget::Photo(id) => &mut self.photos.get_mut(&id).expect("checked").comments,
        };
        list.push(c.clone());
        Ok(c)
    }

    /// Notes that `visitor` opened `owner`'s homepage. Own visits are ignored
    /// and a repeat visit moves the visitor to the front.
    pub fn record_visit(&mut self, visitor: UserId, owner: UserId, now: i64) {
        if visitor == owner {
            return;
        }
        let ring = self.visits.entry(owner).or_default();
        ring.retain(|v| v.visitor != visitor);
        ring.push_front(VisitRecord {
            visitor,
            visited_at: now,
        });
        ring.truncate(VISITOR_CAP);
    }

    pub fn visitors(&self, owner: UserId) -> Vec<VisitRecord> {
        self.visits.get(&owner).map(|r| r.iter().copied().collect()).unwrap_or_default()
    }
}
