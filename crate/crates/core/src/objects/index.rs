use std::collections::BTreeMap;

use super::object::Draft;
use super::ObjectError;
use crate::codec::{DecodeError, Decoder, Encoder};
use crate::crypto::Policy;
use crate::naming::{parse_name, ContentName, FolderName};

/// Application-defined labels mapped to content names.
pub type IndexEntries = BTreeMap<String, ContentName>;

pub fn encode_index(entries: &IndexEntries) -> Vec<u8> {
    let items: Vec<_> = entries.iter().collect();
    let mut enc = Encoder::new();
    enc.list(1, &items, |e, (label, name)| {
        e.str(1, label).str(2, &name.to_string());
    });
    enc.finish()
}

/// Decodes index entries, rejecting names that belong to another user than
/// `owner`.
pub fn decode_index(bytes: &[u8], owner: &str) -> Result<IndexEntries, ObjectError> {
    let mut dec = Decoder::new(bytes);
    let items = dec.list(1, |d| {
        let label = d.str(1)?.to_owned();
        let name = parse_name(d.str(2)?).map_err(|e| DecodeError::invalid(2, e))?;
        Ok((label, name))
    })?;
    dec.finish()?;
    let mut out = IndexEntries::new();
    for (label, name) in items {
        if label.is_empty() {
            return Err(ObjectError::EmptyLabel);
        }
        if name.owner() != owner {
            return Err(ObjectError::ForeignIndexEntry(name.to_string()));
        }
        if out.insert(label, name).is_some() {
            return Err(ObjectError::Malformed(DecodeError::invalid(1, "duplicate label")));
        }
    }
    Ok(out)
}

/// The draft of the index object at `prefix`'s application root.
pub fn build_index(prefix: &FolderName, entries: &IndexEntries, fp: &Policy, dp: &Policy) -> Result<Draft, ObjectError> {
    let owner = prefix.owner();
    for (label, name) in entries {
        if label.is_empty() {
            return Err(ObjectError::EmptyLabel);
        }
        if name.owner() != owner {
            return Err(ObjectError::ForeignIndexEntry(name.to_string()));
        }
    }
    Ok(Draft::new(prefix.index_name(), encode_index(entries), fp.clone(), dp.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prefix() -> FolderName {
        FolderName::parse("ia.alice/fl").unwrap()
    }

    #[test]
    fn round_trip_and_name() {
        let p = prefix();
        let mut entries = IndexEntries::new();
        entries.insert("latest".into(), p.join(&"ab".repeat(16)).unwrap());
        let policy: Policy = "friend".parse().unwrap();
        let d = build_index(&p, &entries, &policy, &policy).unwrap();
        assert!(d.name.is_index());
        assert_eq!(decode_index(&d.payload, "ia.alice").unwrap(), entries);
        assert!(matches!(decode_index(&d.payload, "ia.bob"), Err(ObjectError::ForeignIndexEntry(_))));
    }

    #[test]
    fn empty_and_bad_labels() {
        let policy: Policy = "friend".parse().unwrap();
        let d = build_index(&prefix(), &IndexEntries::new(), &policy, &policy).unwrap();
        assert!(decode_index(&d.payload, "ia.alice").unwrap().is_empty());
        let mut bad = IndexEntries::new();
        bad.insert(String::new(), prefix().index_name());
        assert_eq!(build_index(&prefix(), &bad, &policy, &policy).err(), Some(ObjectError::EmptyLabel));
        let mut foreign = IndexEntries::new();
        foreign.insert("x".into(), FolderName::parse("ia.bob/fl").unwrap().index_name());
        assert!(build_index(&prefix(), &foreign, &policy, &policy).is_err());
    }
}
