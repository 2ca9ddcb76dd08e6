use crate::butler::DistributionCertificate;
use crate::crypto::{AttributeKey, Epoch, PublicIdentity};
use crate::naming::{ContentName, FolderName};
use crate::objects::NetworkObject;
use crate::time::SimTime;

/// Everything nodes say to each other. Request-like messages carry an id the
/// answer echoes.
#[derive(Debug, Clone)]
pub enum Message {
    Request {
        id: u64,
        name: ContentName,
    },
    Data {
        id: u64,
        object: Box<NetworkObject>,
        /// Set by distributors: the earliest time the requester may ask again.
        next_allowed: Option<SimTime>,
    },
    NotFound {
        id: u64,
        name: ContentName,
        next_allowed: Option<SimTime>,
    },
    Banned {
        id: u64,
        name: ContentName,
        next_allowed: SimTime,
    },
    Resolve {
        id: u64,
        folder: FolderName,
    },
    ResolveReply {
        id: u64,
        /// The folder the listed distributors are certified for.
        folder: FolderName,
        distributors: Vec<String>,
        expiry: SimTime,
    },
    ResolveRefused {
        id: u64,
        folder: FolderName,
    },
    Notify {
        sender: PublicIdentity,
        content_name: ContentName,
        checksum: [u8; 32],
        application: String,
        signature: Vec<u8>,
    },
    KeyRequest {
        id: u64,
        attributes: Vec<String>,
        epoch: Epoch,
    },
    KeyReply {
        id: u64,
        keys: Vec<AttributeKey>,
    },
    KeyDenied {
        id: u64,
    },
    Grant {
        certificate: Box<DistributionCertificate>,
    },
}

/// Transcript labels, in the order counters are reported.
pub const MESSAGE_KINDS: &[&str] = &[
    "REQUEST",
    "DATA",
    "NOT_FOUND",
    "BANNED",
    "RESOLVE",
    "RESOLVE_REPLY",
    "RESOLVE_REFUSED",
    "NOTIFY",
    "KEY_REQUEST",
    "KEY_REPLY",
    "KEY_DENIED",
    "GRANT",
];

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Request { .. } => "REQUEST",
            Message::Data { .. } => "DATA",
            Message::NotFound { .. } => "NOT_FOUND",
            Message::Banned { .. } => "BANNED",
            Message::Resolve { .. } => "RESOLVE",
            Message::ResolveReply { .. } => "RESOLVE_REPLY",
            Message::ResolveRefused { .. } => "RESOLVE_REFUSED",
            Message::Notify { .. } => "NOTIFY",
            Message::KeyRequest { .. } => "KEY_REQUEST",
            Message::KeyReply { .. } => "KEY_REPLY",
            Message::KeyDenied { .. } => "KEY_DENIED",
            Message::Grant { .. } => "GRANT",
        }
    }

    /// The name shown in the transcript.
    pub fn subject(&self) -> String {
        match self {
            Message::Request { name, .. } | Message::NotFound { name, .. } | Message::Banned { name, .. } => {
                name.to_string()
            }
            Message::Data { object, .. } => format!("{}#{}", object.content_name, object.version),
            Message::Resolve { folder, .. }
            | Message::ResolveReply { folder, .. }
            | Message::ResolveRefused { folder, .. } => folder.to_string(),
            Message::Notify { content_name, .. } => content_name.to_string(),
            Message::KeyRequest { attributes, epoch, .. } => format!("{}@{epoch}", attributes.join(",")),
            Message::KeyReply { keys, .. } => format!("{} keys", keys.len()),
            Message::KeyDenied { .. } => "-".into(),
            Message::Grant { certificate } => certificate.folder.to_string(),
        }
    }
}
