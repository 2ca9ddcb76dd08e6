//! Revocation by policy rewrite.
//!
//! To oust one holder from an attribute without re-keying everyone, every
//! occurrence of the attribute is conditioned on membership in any bucket
//! other than the revoked holder's, or on being one of the other members of
//! that bucket by alias. Growth per occurrence is bounded by
//! `(K - 1) + (bucket size - 1)` leaves regardless of audience size.

use std::collections::BTreeMap;

use super::keys::{alias_attribute, bucket_attribute};
use super::policy::Policy;
use super::CryptoError;

pub fn rewrite_policy_for_revocation(
    policy: &Policy,
    attribute: &str,
    revoked_alias: &str,
    buckets: &BTreeMap<String, u32>,
    bucket_count: u32,
) -> Result<Policy, CryptoError> {
    let revoked_bucket = *buckets
        .get(revoked_alias)
        .ok_or_else(|| CryptoError::UnknownAlias(revoked_alias.to_owned()))?;

    let mut guard: Vec<Policy> = (0..bucket_count)
        .filter(|&b| b != revoked_bucket)
        .map(|b| Policy::Leaf(bucket_attribute(b)))
        .collect();
    guard.extend(
        buckets
            .iter()
            .filter(|(alias, &b)| b == revoked_bucket && alias.as_str() != revoked_alias)
            .map(|(alias, _)| Policy::Leaf(alias_attribute(alias))),
    );
    let guard = match guard.len() {
        0 => return Err(CryptoError::EmptyAudience),
        1 => guard.pop().unwrap(),
        _ => Policy::Or(guard),
    };

    Ok(policy.map_leaves(&mut |a| {
        if a == attribute {
            Policy::And(vec![Policy::Leaf(a.to_owned()), guard.clone()])
        } else {
            Policy::Leaf(a.to_owned())
        }
    }))
}
