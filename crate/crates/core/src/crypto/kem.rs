//! Policy-tree key encapsulation.
//!
//! A fresh 32-byte secret encrypts the payload with an AEAD. The secret is
//! pushed down the policy tree: an OR gate hands the same value to every
//! child, an AND gate hands out XOR shares, a k-of-n gate hands out Shamir
//! shares, and each leaf seals what it received under the issuer's key for
//! `(attribute, epoch)`. A holder recovers the secret exactly when the
//! attributes it holds keys for satisfy the tree.
//!
//! Unlike pairing-based ABE this does not resist collusion: two holders can
//! pool leaf keys. The access semantics for a single holder are the same.

use chacha20poly1305::aead::{Aead, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, KeyInit, Nonce};
use rand::RngCore;

use super::keys::{AttributeAuthority, Epoch, KeyRing};
use super::policy::Policy;
use super::sharing::{shamir_combine, shamir_split, xor_combine, xor_split, Secret};
use super::CryptoError;
use crate::codec::{DecodeError, Decoder, Encoder};

const NONCE_LEN: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq)]
enum Wrapped {
    Leaf { nonce: [u8; NONCE_LEN], sealed: Vec<u8> },
    Gate(Vec<Wrapped>),
}

/// A payload readable only by holders whose keys satisfy `policy` at `epoch`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyCiphertext {
    pub policy: Policy,
    pub epoch: Epoch,
    wrapped: Wrapped,
    nonce: [u8; NONCE_LEN],
    payload: Vec<u8>,
}

fn random_nonce<R: RngCore + ?Sized>(rng: &mut R) -> [u8; NONCE_LEN] {
    let mut n = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut n);
    n
}

pub(crate) fn seal(key: &[u8; 32], nonce: &[u8; NONCE_LEN], msg: &[u8], aad: &[u8]) -> Vec<u8> {
    ChaCha20Poly1305::new(Key::from_slice(key))
        .encrypt(Nonce::from_slice(nonce), Payload { msg, aad })
        .expect("in-memory encryption cannot fail")
}

pub(crate) fn open(key: &[u8; 32], nonce: &[u8; NONCE_LEN], ct: &[u8], aad: &[u8]) -> Option<Vec<u8>> {
    ChaCha20Poly1305::new(Key::from_slice(key))
        .decrypt(Nonce::from_slice(nonce), Payload { msg: ct, aad })
        .ok()
}

fn leaf_aad(attribute: &str, epoch: Epoch) -> Vec<u8> {
    let mut aad = b"warp-leaf\0".to_vec();
    aad.extend_from_slice(attribute.as_bytes());
    aad.push(0);
    aad.extend_from_slice(&epoch.to_be_bytes());
    aad
}

fn header_aad(policy: &Policy, epoch: Epoch, context: &[u8]) -> Vec<u8> {
    let mut aad = b"warp-payload\0".to_vec();
    aad.extend_from_slice(policy.to_string().as_bytes());
    aad.push(0);
    aad.extend_from_slice(&epoch.to_be_bytes());
    aad.extend_from_slice(context);
    aad
}

fn wrap<R: RngCore + ?Sized>(
    node: &Policy,
    secret: &Secret,
    epoch: Epoch,
    issuer: &AttributeAuthority,
    rng: &mut R,
) -> Wrapped {
    match node {
        Policy::Leaf(attr) => {
            let nonce = random_nonce(rng);
            let key = issuer.material(attr, epoch);
            Wrapped::Leaf {
                nonce,
                sealed: seal(&key, &nonce, secret, &leaf_aad(attr, epoch)),
            }
        }
        Policy::Or(children) => {
            Wrapped::Gate(children.iter().map(|c| wrap(c, secret, epoch, issuer, rng)).collect())
        }
        Policy::And(children) => {
            let shares = xor_split(secret, children.len(), rng);
            Wrapped::Gate(
                children
                    .iter()
                    .zip(&shares)
                    .map(|(c, s)| wrap(c, s, epoch, issuer, rng))
                    .collect(),
            )
        }
        Policy::KofN { k, children } => {
            let shares = shamir_split(secret, *k, children.len(), rng);
            Wrapped::Gate(
                children
                    .iter()
                    .zip(&shares)
                    .map(|(c, s)| wrap(c, s, epoch, issuer, rng))
                    .collect(),
            )
        }
    }
}

fn unwrap(node: &Policy, wrapped: &Wrapped, epoch: Epoch, ring: &KeyRing) -> Option<Secret> {
    match (node, wrapped) {
        (Policy::Leaf(attr), Wrapped::Leaf { nonce, sealed }) => {
            let key = ring.get(attr, epoch)?;
            let plain = open(key.material(), nonce, sealed, &leaf_aad(attr, epoch))?;
            plain.try_into().ok()
        }
        (Policy::Or(children), Wrapped::Gate(ws)) => children
            .iter()
            .zip(ws)
            .find_map(|(c, w)| unwrap(c, w, epoch, ring)),
        (Policy::And(children), Wrapped::Gate(ws)) => {
            let shares = children
                .iter()
                .zip(ws)
                .map(|(c, w)| unwrap(c, w, epoch, ring))
                .collect::<Option<Vec<_>>>()?;
            Some(xor_combine(&shares))
        }
        (Policy::KofN { k, children }, Wrapped::Gate(ws)) => {
            let shares: Vec<(u8, Secret)> = children
                .iter()
                .zip(ws)
                .enumerate()
                .filter_map(|(i, (c, w))| unwrap(c, w, epoch, ring).map(|s| (i as u8 + 1, s)))
                .take(*k)
                .collect();
            (shares.len() == *k).then(|| shamir_combine(&shares))
        }
        _ => None,
    }
}

/// Encrypts `plaintext` so that only holders satisfying `policy` at `epoch`
/// can read it. `context` is bound as associated data.
pub fn encrypt_with_policy_bound<R: RngCore + ?Sized>(
    plaintext: &[u8],
    policy: &Policy,
    epoch: Epoch,
    issuer: &AttributeAuthority,
    context: &[u8],
    rng: &mut R,
) -> Result<PolicyCiphertext, CryptoError> {
    policy.validate().map_err(CryptoError::InvalidPolicy)?;
    let mut sk = [0u8; 32];
    rng.fill_bytes(&mut sk);
    let wrapped = wrap(policy, &sk, epoch, issuer, rng);
    let nonce = random_nonce(rng);
    let payload = seal(&sk, &nonce, plaintext, &header_aad(policy, epoch, context));
    Ok(PolicyCiphertext {
        policy: policy.clone(),
        epoch,
        wrapped,
        nonce,
        payload,
    })
}

pub fn encrypt_with_policy<R: RngCore + ?Sized>(
    plaintext: &[u8],
    policy: &Policy,
    epoch: Epoch,
    issuer: &AttributeAuthority,
    rng: &mut R,
) -> Result<PolicyCiphertext, CryptoError> {
    encrypt_with_policy_bound(plaintext, policy, epoch, issuer, &[], rng)
}

pub fn decrypt_with_keyring_bound(
    ct: &PolicyCiphertext,
    ring: &KeyRing,
    context: &[u8],
) -> Result<Vec<u8>, CryptoError> {
    let sk = unwrap(&ct.policy, &ct.wrapped, ct.epoch, ring).ok_or(CryptoError::AccessDenied)?;
    open(&sk, &ct.nonce, &ct.payload, &header_aad(&ct.policy, ct.epoch, context))
        .ok_or(CryptoError::IntegrityFailure)
}

/// Recovers the plaintext if `ring` holds keys satisfying the policy at the
/// ciphertext's epoch.
pub fn decrypt_with_keyring(ct: &PolicyCiphertext, ring: &KeyRing) -> Result<Vec<u8>, CryptoError> {
    decrypt_with_keyring_bound(ct, ring, &[])
}

impl PolicyCiphertext {
    /// True if `ring` can open the encapsulated secret.
    pub fn satisfiable_by(&self, ring: &KeyRing) -> bool {
        unwrap(&self.policy, &self.wrapped, self.epoch, ring).is_some()
    }

    #[cfg(test)]
    pub(crate) fn payload_mut(&mut self) -> &mut Vec<u8> {
        &mut self.payload
    }

    pub fn encode(&self, enc: &mut Encoder) {
        fn tree(enc: &mut Encoder, w: &Wrapped) {
            match w {
                Wrapped::Leaf { nonce, sealed } => {
                    enc.bytes(1, nonce).bytes(2, sealed);
                }
                Wrapped::Gate(children) => {
                    enc.list(3, children, tree);
                }
            }
        }
        enc.str(1, &self.policy.to_string())
            .u64(2, self.epoch)
            .nested(3, |e| tree(e, &self.wrapped))
            .bytes(4, &self.nonce)
            .bytes(5, &self.payload);
    }

    pub fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        fn tree(node: &Policy, dec: &mut Decoder<'_>) -> Result<Wrapped, DecodeError> {
            match node {
                Policy::Leaf(_) => Ok(Wrapped::Leaf {
                    nonce: dec.array(1)?,
                    sealed: dec.bytes(2)?.to_vec(),
                }),
                Policy::And(cs) | Policy::Or(cs) | Policy::KofN { children: cs, .. } => {
                    let mut i = 0;
                    let ws = dec.list(3, |d| {
                        let c = cs
                            .get(i)
                            .ok_or_else(|| DecodeError::invalid(3, "more wrapped children than policy"))?;
                        i += 1;
                        tree(c, d)
                    })?;
                    if ws.len() != cs.len() {
                        return Err(DecodeError::invalid(3, "wrapped tree does not mirror policy"));
                    }
                    Ok(Wrapped::Gate(ws))
                }
            }
        }
        let policy: Policy = dec
            .str(1)?
            .parse()
            .map_err(|e: super::PolicyError| DecodeError::invalid(1, e))?;
        let epoch = dec.u64(2)?;
        let wrapped = dec.nested(3, |d| tree(&policy, d))?;
        Ok(PolicyCiphertext {
            policy,
            epoch,
            wrapped,
            nonce: dec.array(4)?,
            payload: dec.bytes(5)?.to_vec(),
        })
    }
}
