//! Signing, attribute-policy encryption, key issuance, and revocation.

mod identity;
mod kem;
mod keys;
mod policy;
mod revocation;
pub mod sharing;

use thiserror::Error;

pub use identity::{
    sign_object, verify_object, Identity, IdentityAuthority, PublicIdentity, TrustAnchors, SIGNATURE_LEN,
};
pub(crate) use kem::{open as aead_open, seal as aead_seal};
pub use kem::{
    decrypt_with_keyring, decrypt_with_keyring_bound, encrypt_with_policy, encrypt_with_policy_bound,
    PolicyCiphertext,
};
pub use keys::{
    alias_attribute, bucket_attribute, AttributeAuthority, AttributeKey, Epoch, KeyRing, DEFAULT_KEY_LIFETIME,
    DEFAULT_RETENTION,
};
pub use policy::{evaluate_policy, is_attribute, Policy, PolicyError};
pub use revocation::rewrite_policy_for_revocation;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error(transparent)]
    InvalidPolicy(#[from] PolicyError),
    #[error("access denied: held keys do not satisfy the policy")]
    AccessDenied,
    #[error("integrity failure: payload authentication failed")]
    IntegrityFailure,
    #[error("unknown alias `{0}`")]
    UnknownAlias(String),
    #[error("revocation would leave no one able to satisfy the attribute")]
    EmptyAudience,
    #[error("identity certificate does not verify")]
    BadCertificate,
}
