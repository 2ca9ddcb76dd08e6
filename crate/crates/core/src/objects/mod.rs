//! Network objects, feeds, fragmented files, index objects, and thread-update
//! commands.

mod feed;
mod fragment;
mod index;
mod object;
mod tu;

use thiserror::Error;

use crate::codec::DecodeError;
use crate::crypto::{CryptoError, PolicyError};

pub use feed::{append_feed_entry, CutOutcome, Feed, FeedItem};
pub use fragment::{fragment_file, fragment_name, reassemble, FragmentSet, DEFAULT_CHUNK_SIZE};
pub use index::{build_index, decode_index, encode_index, IndexEntries};
pub use object::{build_object, Draft, FollowerView, Links, NetworkObject, TuRef};
pub use tu::{tu_genesis_name, ThreadUpdateCommand, TuEntry};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ObjectError {
    #[error(transparent)]
    InvalidPolicy(#[from] PolicyError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Malformed(#[from] DecodeError),
    #[error("name `{0}` is not owned by the producer")]
    NameNotOwned(String),
    #[error("segment seed and segment count must be set together, count >= 1")]
    InconsistentFragments,
    #[error("cannot fragment empty data")]
    EmptyData,
    #[error("chunk size must be at least 1")]
    ZeroChunk,
    #[error("fragment set incomplete or contains foreign names")]
    IncompleteFragments,
    #[error("entry `{0}` is not the feed tail")]
    NotTail(String),
    #[error("`{0}` is not in the feed")]
    NotInFeed(String),
    #[error("`{0}` is already in the feed")]
    AlreadyInFeed(String),
    #[error("cut range is reversed")]
    OrderViolation,
    #[error("index label must be non-empty")]
    EmptyLabel,
    #[error("index entry `{0}` names content of another user")]
    ForeignIndexEntry(String),
}
