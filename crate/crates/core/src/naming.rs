//! Hierarchical content names.
//!
//! Every name has the shape `x.y/<application>/<folder>/.../<appendix>`:
//! `x` is the identity authority that certified user `y`, the application
//! segment is a readable identifier, and every folder and appendix segment is
//! a 128-bit random value rendered as 32 lowercase hex characters so that the
//! name leaks nothing about the content.
//!
//! Two reserved spellings live inside this grammar: the literal folder
//! segment [`TU_SEGMENT`], which holds a folder's thread-update feed, and the
//! all-zero appendix [`INDEX_APPENDIX`], which names an application's index.

use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use thiserror::Error;

/// Width of an anonymized segment in hex characters.
pub const SEGMENT_LEN: usize = 32;

/// Folder segment under which a folder keeps its thread-update feed.
pub const TU_SEGMENT: &str = "tu";

/// Appendix of the index object at an application prefix.
pub const INDEX_APPENDIX: &str = "00000000000000000000000000000000";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NameError {
    #[error("malformed name `{text}`: {reason}")]
    Malformed { text: String, reason: &'static str },
    #[error("`{0}` is an application prefix and has no parent")]
    NoParent(String),
}

fn malformed(text: &str, reason: &'static str) -> NameError {
    NameError::Malformed {
        text: text.to_owned(),
        reason,
    }
}

/// True for a 32-character lowercase hex string.
pub fn is_segment(s: &str) -> bool {
    s.len() == SEGMENT_LEN && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
}

fn is_identifier(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-')
}

fn is_application(s: &str) -> bool {
    (1..=64).contains(&s.len())
        && s.bytes().all(|b| matches!(b, b'a'..=b'z' | b'0'..=b'9' | b'_' | b'-'))
}

/// Draws a fresh anonymized segment.
pub fn generate_segment<R: RngCore + ?Sized>(rng: &mut R) -> String {
    let mut bytes = [0u8; SEGMENT_LEN / 2];
    rng.fill_bytes(&mut bytes);
    hex::encode(bytes)
}

/// A folder: the application prefix plus zero or more folder segments.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FolderName {
    ia: String,
    user: String,
    application: String,
    folders: Vec<String>,
}

/// A full content name: a folder plus the appendix that identifies the object.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ContentName {
    folder: FolderName,
    appendix: String,
}

impl FolderName {
    /// The application prefix `ia.user/application`.
    pub fn application_prefix(ia: &str, user: &str, application: &str) -> Result<Self, NameError> {
        let text = format!("{ia}.{user}/{application}");
        if !is_identifier(ia) || !is_identifier(user) {
            return Err(malformed(&text, "bad `x.y` segment"));
        }
        if !is_application(application) {
            return Err(malformed(&text, "bad application identifier"));
        }
        Ok(FolderName {
            ia: ia.to_owned(),
            user: user.to_owned(),
            application: application.to_owned(),
            folders: Vec::new(),
        })
    }

    /// Appends a folder segment.
    pub fn child(&self, segment: &str) -> Result<Self, NameError> {
        if self.is_tu() {
            return Err(malformed(segment, "a thread-update folder has no subfolders"));
        }
        if !is_segment(segment) && segment != TU_SEGMENT {
            return Err(malformed(segment, "folder segment is not 32 lowercase hex characters"));
        }
        let mut folders = self.folders.clone();
        folders.push(segment.to_owned());
        Ok(FolderName { folders, ..self.clone() })
    }

    /// The folder holding this folder's thread-update feed.
    pub fn tu_folder(&self) -> FolderName {
        debug_assert!(!self.is_tu());
        let mut folders = self.folders.clone();
        folders.push(TU_SEGMENT.to_owned());
        FolderName { folders, ..self.clone() }
    }

    /// True when this folder is a thread-update feed folder.
    pub fn is_tu(&self) -> bool {
        self.folders.last().is_some_and(|s| s == TU_SEGMENT)
    }

    /// For a thread-update folder, the folder it governs.
    pub fn governed_folder(&self) -> Option<FolderName> {
        self.is_tu().then(|| FolderName {
            folders: self.folders[..self.folders.len() - 1].to_vec(),
            ..self.clone()
        })
    }

    pub fn join(&self, appendix: &str) -> Result<ContentName, NameError> {
        if !is_segment(appendix) {
            return Err(malformed(appendix, "appendix is not 32 lowercase hex characters"));
        }
        Ok(ContentName {
            folder: self.clone(),
            appendix: appendix.to_owned(),
        })
    }

    pub fn ia(&self) -> &str {
        &self.ia
    }

    pub fn user(&self) -> &str {
        &self.user
    }

    pub fn application(&self) -> &str {
        &self.application
    }

    pub fn folders(&self) -> &[String] {
        &self.folders
    }

    /// The producer identity `x.y`.
    pub fn owner(&self) -> String {
        format!("{}.{}", self.ia, self.user)
    }

    pub fn depth(&self) -> usize {
        self.folders.len()
    }

    pub fn is_application_prefix(&self) -> bool {
        self.folders.is_empty()
    }

    pub fn application_root(&self) -> FolderName {
        FolderName {
            folders: Vec::new(),
            ..self.clone()
        }
    }

    /// Drops the last folder segment.
    pub fn parent(&self) -> Result<FolderName, NameError> {
        if self.folders.is_empty() {
            return Err(NameError::NoParent(self.to_string()));
        }
        Ok(FolderName {
            folders: self.folders[..self.folders.len() - 1].to_vec(),
            ..self.clone()
        })
    }

    /// True iff this folder's segments are a prefix of `name`'s.
    pub fn is_prefix_of(&self, name: &ContentName) -> bool {
        self.contains(&name.folder)
    }

    /// True iff `other` is this folder or lies below it.
    pub fn contains(&self, other: &FolderName) -> bool {
        self.ia == other.ia
            && self.user == other.user
            && self.application == other.application
            && other.folders.starts_with(&self.folders)
    }

    /// The index object name at this folder's application prefix.
    pub fn index_name(&self) -> ContentName {
        ContentName {
            folder: self.application_root(),
            appendix: INDEX_APPENDIX.to_owned(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, NameError> {
        let mut parts = text.split('/');
        let head = parts.next().unwrap_or_default();
        let (ia, user) = head
            .split_once('.')
            .ok_or_else(|| malformed(text, "first segment is not `x.y`"))?;
        if !is_identifier(ia) || !is_identifier(user) {
            return Err(malformed(text, "bad `x.y` segment"));
        }
        let application = parts.next().ok_or_else(|| malformed(text, "missing application"))?;
        if !is_application(application) {
            return Err(malformed(text, "bad application identifier"));
        }
        let mut folder = FolderName::application_prefix(ia, user, application)?;
        for seg in parts {
            if seg.is_empty() {
                return Err(malformed(text, "empty segment"));
            }
            folder = folder.child(seg).map_err(|_| malformed(text, "bad folder segment"))?;
        }
        Ok(folder)
    }
}

impl ContentName {
    pub fn folder(&self) -> &FolderName {
        &self.folder
    }

    pub fn appendix(&self) -> &str {
        &self.appendix
    }

    pub fn ia(&self) -> &str {
        &self.folder.ia
    }

    pub fn user(&self) -> &str {
        &self.folder.user
    }

    pub fn application(&self) -> &str {
        &self.folder.application
    }

    pub fn folders(&self) -> &[String] {
        &self.folder.folders
    }

    pub fn owner(&self) -> String {
        self.folder.owner()
    }

    /// The folder containing this object. Always defined for content names.
    pub fn parent(&self) -> FolderName {
        self.folder.clone()
    }

    pub fn is_index(&self) -> bool {
        self.folder.is_application_prefix() && self.appendix == INDEX_APPENDIX
    }
}

/// Parses a content name; requires at least three segments.
pub fn parse_name(text: &str) -> Result<ContentName, NameError> {
    let (folder, appendix) = text
        .rsplit_once('/')
        .ok_or_else(|| malformed(text, "fewer than three segments"))?;
    if !folder.contains('/') {
        return Err(malformed(text, "fewer than three segments"));
    }
    let folder = FolderName::parse(folder)?;
    if folder.is_tu() || is_segment(appendix) {
        folder.join(appendix).map_err(|_| malformed(text, "bad appendix"))
    } else {
        Err(malformed(text, "appendix is not 32 lowercase hex characters"))
    }
}

pub fn format_name(name: &ContentName) -> String {
    name.to_string()
}

impl fmt::Display for FolderName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}/{}", self.ia, self.user, self.application)?;
        for seg in &self.folders {
            write!(f, "/{seg}")?;
        }
        Ok(())
    }
}

impl fmt::Display for ContentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.folder, self.appendix)
    }
}

impl FromStr for ContentName {
    type Err = NameError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_name(s)
    }
}

impl FromStr for FolderName {
    type Err = NameError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FolderName::parse(s)
    }
}
