//! Identities, the identity-authority stub, and object signatures.

use std::collections::BTreeMap;

use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use rand::RngCore;

use super::CryptoError;
use crate::codec::{DecodeError, Decoder, Encoder};

pub const SIGNATURE_LEN: usize = 64;

fn cert_message(ia: &str, username: &str, key: &VerifyingKey) -> Vec<u8> {
    let mut m = b"warp-ia-certificate\0".to_vec();
    m.extend_from_slice(ia.as_bytes());
    m.push(0);
    m.extend_from_slice(username.as_bytes());
    m.push(0);
    m.extend_from_slice(key.as_bytes());
    m
}

/// The stub authority that vouches for `(ia, username, public key)` bindings.
pub struct IdentityAuthority {
    name: String,
    key: SigningKey,
}

impl IdentityAuthority {
    pub fn new<R: RngCore + ?Sized>(name: impl Into<String>, rng: &mut R) -> Self {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        IdentityAuthority {
            name: name.into(),
            key: SigningKey::from_bytes(&seed),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn verifying_key(&self) -> VerifyingKey {
        self.key.verifying_key()
    }

    /// Creates a key pair for `username` and certifies it.
    pub fn register<R: RngCore + ?Sized>(&self, username: &str, rng: &mut R) -> Identity {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        let signing = SigningKey::from_bytes(&seed);
        let certificate = self
            .key
            .sign(&cert_message(&self.name, username, &signing.verifying_key()));
        Identity {
            ia: self.name.clone(),
            username: username.to_owned(),
            signing,
            certificate,
        }
    }
}

/// Known identity-authority keys.
#[derive(Debug, Clone, Default)]
pub struct TrustAnchors(BTreeMap<String, VerifyingKey>);

impl TrustAnchors {
    pub fn add(&mut self, ia: &IdentityAuthority) {
        self.0.insert(ia.name.clone(), ia.verifying_key());
    }

    pub fn verify(&self, id: &PublicIdentity) -> Result<(), CryptoError> {
        let ia_key = self.0.get(&id.ia).ok_or(CryptoError::BadCertificate)?;
        ia_key
            .verify(&cert_message(&id.ia, &id.username, &id.key), &id.certificate)
            .map_err(|_| CryptoError::BadCertificate)
    }
}

/// A user's secret identity.
pub struct Identity {
    ia: String,
    username: String,
    signing: SigningKey,
    certificate: Signature,
}

impl Identity {
    pub fn ia(&self) -> &str {
        &self.ia
    }

    pub fn username(&self) -> &str {
        &self.username
    }

    /// `x.y` form.
    pub fn name(&self) -> String {
        format!("{}.{}", self.ia, self.username)
    }

    pub fn public(&self) -> PublicIdentity {
        PublicIdentity {
            ia: self.ia.clone(),
            username: self.username.clone(),
            key: self.signing.verifying_key(),
            certificate: self.certificate,
        }
    }

    pub fn verifying_key(&self) -> VerifyingKey {
        self.signing.verifying_key()
    }

    pub fn sign(&self, bytes: &[u8]) -> Vec<u8> {
        self.signing.sign(bytes).to_bytes().to_vec()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublicIdentity {
    pub ia: String,
    pub username: String,
    pub key: VerifyingKey,
    pub certificate: Signature,
}

impl PublicIdentity {
    pub fn name(&self) -> String {
        format!("{}.{}", self.ia, self.username)
    }

    pub fn verify(&self, bytes: &[u8], signature: &[u8]) -> bool {
        verify_object(&self.key, bytes, signature)
    }

    pub fn encode(&self, enc: &mut Encoder) {
        enc.str(1, &self.ia)
            .str(2, &self.username)
            .bytes(3, self.key.as_bytes())
            .bytes(4, &self.certificate.to_bytes());
    }

    pub fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let ia = dec.str(1)?.to_owned();
        let username = dec.str(2)?.to_owned();
        let key = VerifyingKey::from_bytes(&dec.array(3)?).map_err(|e| DecodeError::invalid(3, e))?;
        let certificate = Signature::from_bytes(&dec.array(4)?);
        Ok(PublicIdentity {
            ia,
            username,
            key,
            certificate,
        })
    }
}

pub fn sign_object(identity: &Identity, canonical_bytes: &[u8]) -> Vec<u8> {
    identity.sign(canonical_bytes)
}

pub fn verify_object(key: &VerifyingKey, canonical_bytes: &[u8], signature: &[u8]) -> bool {
    let Ok(sig) = <[u8; SIGNATURE_LEN]>::try_from(signature) else {
        return false;
    };
    key.verify_strict(canonical_bytes, &Signature::from_bytes(&sig)).is_ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn sign_verify() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let ia = IdentityAuthority::new("ia", &mut rng);
        let alice = ia.register("alice", &mut rng);
        let bob = ia.register("bob", &mut rng);
        let msg = b"canonical bytes".to_vec();
        let sig = sign_object(&alice, &msg);
        assert!(verify_object(&alice.verifying_key(), &msg, &sig));
        let mut flipped = msg.clone();
        flipped[3] ^= 0x10;
        assert!(!verify_object(&alice.verifying_key(), &flipped, &sig));
        assert!(!verify_object(&bob.verifying_key(), &msg, &sig));
        assert!(!verify_object(&alice.verifying_key(), &msg, &sig[..10]));
    }

    #[test]
    fn certificates() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let ia = IdentityAuthority::new("ia", &mut rng);
        let rogue = IdentityAuthority::new("ia", &mut rng);
        let mut anchors = TrustAnchors::default();
        anchors.add(&ia);
        let alice = ia.register("alice", &mut rng).public();
        assert_eq!(alice.name(), "ia.alice");
        assert!(anchors.verify(&alice).is_ok());
        let mallory = rogue.register("alice", &mut rng).public();
        assert_eq!(anchors.verify(&mallory), Err(CryptoError::BadCertificate));
        let mut renamed = alice.clone();
        renamed.username = "bob".into();
        assert_eq!(anchors.verify(&renamed), Err(CryptoError::BadCertificate));

        let mut enc = Encoder::new();
        alice.encode(&mut enc);
        let bytes = enc.finish();
        assert_eq!(PublicIdentity::decode(&mut Decoder::new(&bytes)).unwrap(), alice);
    }
}
