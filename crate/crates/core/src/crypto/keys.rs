//! Attribute keys, the issuer-side authority that derives them, and the
//! holder-side key ring.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::time::Duration;

use hmac::{Hmac, Mac};
use rand::RngCore;
use sha2::Sha256;

use crate::codec::{DecodeError, Decoder, Encoder};
use crate::time::SimTime;

pub type Epoch = u64;

/// Default key lifetime: one virtual week.
pub const DEFAULT_KEY_LIFETIME: Duration = Duration::from_secs(7 * 24 * 3600);

/// Number of epochs a holder keeps keys for.
pub const DEFAULT_RETENTION: u64 = 2;

pub fn bucket_attribute(bucket: u32) -> String {
    format!("bucket:{bucket}")
}

pub fn alias_attribute(alias: &str) -> String {
    format!("alias:{alias}")
}

/// Symmetric key material for one `(attribute, epoch)` of one issuer.
#[derive(Clone, PartialEq, Eq)]
pub struct AttributeKey {
    pub attribute: String,
    pub epoch: Epoch,
    pub expiry: SimTime,
    material: [u8; 32],
}

impl fmt::Debug for AttributeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AttributeKey")
            .field("attribute", &self.attribute)
            .field("epoch", &self.epoch)
            .field("expiry", &self.expiry)
            .finish_non_exhaustive()
    }
}

impl AttributeKey {
    pub(crate) fn material(&self) -> &[u8; 32] {
        &self.material
    }

    pub fn encode(&self, enc: &mut Encoder) {
        enc.str(1, &self.attribute)
            .u64(2, self.epoch)
            .u64(3, self.expiry.as_millis())
            .bytes(4, &self.material);
    }

    pub fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(AttributeKey {
            attribute: dec.str(1)?.to_owned(),
            epoch: dec.u64(2)?,
            expiry: SimTime::from_millis(dec.u64(3)?),
            material: dec.array(4)?,
        })
    }
}

/// Issuer state: the secret seed every attribute key is derived from and the
/// current epoch.
pub struct AttributeAuthority {
    owner: String,
    seed: [u8; 32],
    epoch: Epoch,
    key_lifetime: Duration,
}

impl AttributeAuthority {
    pub fn new<R: RngCore + ?Sized>(owner: impl Into<String>, rng: &mut R) -> Self {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        AttributeAuthority {
            owner: owner.into(),
            seed,
            epoch: 0,
            key_lifetime: DEFAULT_KEY_LIFETIME,
        }
    }

    pub fn with_key_lifetime(mut self, lifetime: Duration) -> Self {
        self.key_lifetime = lifetime;
        self
    }

    pub fn owner(&self) -> &str {
        &self.owner
    }

    pub fn epoch(&self) -> Epoch {
        self.epoch
    }

    pub fn key_lifetime(&self) -> Duration {
        self.key_lifetime
    }

    /// Advances to the next epoch and returns it.
    pub fn rotate_epoch(&mut self) -> Epoch {
        self.epoch += 1;
        self.epoch
    }

    pub(crate) fn material(&self, attribute: &str, epoch: Epoch) -> [u8; 32] {
        let mut mac = Hmac::<Sha256>::new_from_slice(&self.seed).expect("hmac accepts any key length");
        mac.update(b"warp-attribute-key\0");
        mac.update(self.owner.as_bytes());
        mac.update(&[0]);
        mac.update(attribute.as_bytes());
        mac.update(&[0]);
        mac.update(&epoch.to_be_bytes());
        mac.finalize().into_bytes().into()
    }

    /// Derives the key for `attribute` at `epoch`, valid from `now`.
    pub fn derive(&self, attribute: &str, epoch: Epoch, now: SimTime) -> AttributeKey {
        AttributeKey {
            attribute: attribute.to_owned(),
            epoch,
            expiry: now + self.key_lifetime,
            material: self.material(attribute, epoch),
        }
    }

    /// Keys for a categorized peer: its categories plus its bucket and alias
    /// attributes, at `epoch`.
    pub fn issue_attribute_keys(
        &self,
        peer_alias: &str,
        bucket: u32,
        categories: &BTreeSet<String>,
        epoch: Epoch,
        now: SimTime,
    ) -> Vec<AttributeKey> {
        let mut attrs = categories.clone();
        attrs.insert(bucket_attribute(bucket));
        attrs.insert(alias_attribute(peer_alias));
        attrs.iter().map(|a| self.derive(a, epoch, now)).collect()
    }
}

/// Keys one holder received from one issuer, spanning a few recent epochs.
#[derive(Debug, Clone, Default)]
pub struct KeyRing {
    issuer: String,
    keys: BTreeMap<(String, Epoch), AttributeKey>,
}

impl KeyRing {
    pub fn new(issuer: impl Into<String>) -> Self {
        KeyRing {
            issuer: issuer.into(),
            keys: BTreeMap::new(),
        }
    }

    pub fn issuer(&self) -> &str {
        &self.issuer
    }

    /// Inserts or replaces the key for `(attribute, epoch)`.
    pub fn insert(&mut self, key: AttributeKey) {
        self.keys.insert((key.attribute.clone(), key.epoch), key);
    }

    pub fn extend(&mut self, keys: impl IntoIterator<Item = AttributeKey>) {
        keys.into_iter().for_each(|k| self.insert(k));
    }

    pub fn get(&self, attribute: &str, epoch: Epoch) -> Option<&AttributeKey> {
        self.keys.get(&(attribute.to_owned(), epoch))
    }

    pub fn attributes_at(&self, epoch: Epoch) -> BTreeSet<String> {
        self.keys
            .keys()
            .filter(|(_, e)| *e == epoch)
            .map(|(a, _)| a.clone())
            .collect()
    }

    pub fn newest_epoch(&self) -> Option<Epoch> {
        self.keys.keys().map(|(_, e)| *e).max()
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &AttributeKey> {
        self.keys.values()
    }

    /// Drops expired keys and keys older than the retention window measured
    /// from the newest epoch held.
    pub fn prune(&mut self, now: SimTime, retention: u64) {
        let newest = self.newest_epoch().unwrap_or(0);
        let oldest = newest.saturating_sub(retention.saturating_sub(1));
        self.keys.retain(|(_, e), k| *e >= oldest && k.expiry >= now);
    }
}
