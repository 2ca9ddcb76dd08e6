use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, RngCore};

use crate::crypto::{alias_attribute, bucket_attribute, is_attribute, CryptoError, PublicIdentity, TrustAnchors};
use crate::naming::generate_segment;

/// Attribute prefixes the butler assigns itself; categories may not use them.
pub const RESERVED_PREFIXES: &[&str] = &["alias:", "bucket:", "dist:"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Peer {
    pub identity: PublicIdentity,
    pub categories: BTreeSet<String>,
    pub alias: String,
    pub bucket: u32,
}

impl Peer {
    /// Categories plus the peer's bucket and alias attributes.
    pub fn entitled(&self) -> BTreeSet<String> {
        let mut s = self.categories.clone();
        s.insert(bucket_attribute(self.bucket));
        s.insert(alias_attribute(&self.alias));
        s
    }
}

/// Who the owner has categorized, with per-peer alias and bucket.
#[derive(Debug, Clone)]
pub struct SocialGraph {
    self_alias: String,
    bucket_count: u32,
    peers: BTreeMap<String, Peer>,
}

pub fn is_category(c: &str) -> bool {
    is_attribute(c) && !RESERVED_PREFIXES.iter().any(|p| c.starts_with(p))
}

impl SocialGraph {
    pub fn new<R: RngCore + ?Sized>(bucket_count: u32, rng: &mut R) -> Self {
        assert!(bucket_count >= 1);
        SocialGraph {
            self_alias: generate_segment(rng),
            bucket_count,
            peers: BTreeMap::new(),
        }
    }

    pub fn self_alias(&self) -> &str {
        &self.self_alias
    }

    /// The singleton group holding only the owner.
    pub fn self_attribute(&self) -> String {
        alias_attribute(&self.self_alias)
    }

    pub fn bucket_count(&self) -> u32 {
        self.bucket_count
    }

    /// Records `peer` with `categories`, replacing earlier categories. New
    /// peers get a fresh alias and a uniform bucket.
    pub fn categorize<R: RngCore + ?Sized>(
        &mut self,
        anchors: &TrustAnchors,
        peer: PublicIdentity,
        categories: BTreeSet<String>,
        rng: &mut R,
    ) -> Result<&Peer, CryptoError> {
        anchors.verify(&peer)?;
        let name = peer.name();
        let bucket_count = self.bucket_count;
        let entry = self.peers.entry(name).or_insert_with(|| Peer {
            identity: peer.clone(),
            categories: BTreeSet::new(),
            alias: generate_segment(rng),
            bucket: rng.gen_range(0..bucket_count),
        });
        entry.identity = peer;
        entry.categories = categories;
        Ok(entry)
    }

    pub fn peer(&self, name: &str) -> Option<&Peer> {
        self.peers.get(name)
    }

    pub fn peers(&self) -> impl Iterator<Item = (&String, &Peer)> {
        self.peers.iter()
    }

    pub fn peer_by_alias(&self, alias: &str) -> Option<&Peer> {
        self.peers.values().find(|p| p.alias == alias)
    }

    pub fn remove_category(&mut self, name: &str, category: &str) -> bool {
        self.peers
            .get_mut(name)
            .is_some_and(|p| p.categories.remove(category))
    }

    /// Alias to bucket for every known peer.
    pub fn buckets(&self) -> BTreeMap<String, u32> {
        self.peers.values().map(|p| (p.alias.clone(), p.bucket)).collect()
    }

    /// Names of peers currently entitled to `attribute`.
    pub fn holders(&self, attribute: &str) -> Vec<String> {
        self.peers
            .iter()
            .filter(|(_, p)| p.entitled().contains(attribute))
            .map(|(n, _)| n.clone())
            .collect()
    }
}
