use std::fmt;

use crate::codec::{DecodeError, Decoder, Encoder};
use crate::naming::{parse_name, ContentName, FolderName, INDEX_APPENDIX};

/// A cache-control command carried on a folder's thread-update feed.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ThreadUpdateCommand {
    Add(ContentName),
    Delete(ContentName),
    /// The first name was replaced by the second. Equal names mean an
    /// in-place re-issue with a higher version.
    Update(ContentName, ContentName),
    Cut {
        from: ContentName,
        to: ContentName,
        predecessor: Option<ContentName>,
        successor: Option<ContentName>,
    },
}

impl ThreadUpdateCommand {
    /// Every name the command mentions.
    pub fn names(&self) -> Vec<&ContentName> {
        match self {
            Self::Add(x) | Self::Delete(x) => vec![x],
            Self::Update(x, y) => vec![x, y],
            Self::Cut {
                from,
                to,
                predecessor,
                successor,
            } => [Some(from), Some(to), predecessor.as_ref(), successor.as_ref()]
                .into_iter()
                .flatten()
                .collect(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Add(_) => "ADD",
            Self::Delete(_) => "DELETE",
            Self::Update(..) => "UPDATE",
            Self::Cut { .. } => "CUT",
        }
    }

    fn encode(&self, enc: &mut Encoder) {
        let s = |n: &ContentName| n.to_string();
        match self {
            Self::Add(x) => enc.u64(1, 0).str(2, &s(x)),
            Self::Delete(x) => enc.u64(1, 1).str(2, &s(x)),
            Self::Update(x, y) => enc.u64(1, 2).str(2, &s(x)).str(3, &s(y)),
            Self::Cut {
                from,
                to,
                predecessor,
                successor,
            } => enc
                .u64(1, 3)
                .str(2, &s(from))
                .str(3, &s(to))
                .opt_str(4, predecessor.as_ref().map(s).as_deref())
                .opt_str(5, successor.as_ref().map(s).as_deref()),
        };
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        fn name(dec: &mut Decoder<'_>, id: u8) -> Result<ContentName, DecodeError> {
            parse_name(dec.str(id)?).map_err(|e| DecodeError::invalid(id, e))
        }
        fn opt(dec: &mut Decoder<'_>, id: u8) -> Result<Option<ContentName>, DecodeError> {
            dec.opt_str(id)?
                .map(|s| parse_name(s).map_err(|e| DecodeError::invalid(id, e)))
                .transpose()
        }
        Ok(match dec.u64(1)? {
            0 => Self::Add(name(dec, 2)?),
            1 => Self::Delete(name(dec, 2)?),
            2 => Self::Update(name(dec, 2)?, name(dec, 3)?),
            3 => Self::Cut {
                from: name(dec, 2)?,
                to: name(dec, 3)?,
                predecessor: opt(dec, 4)?,
                successor: opt(dec, 5)?,
            },
            k => return Err(DecodeError::invalid(1, format!("unknown command kind {k}"))),
        })
    }
}

impl fmt::Display for ThreadUpdateCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let o = |n: &Option<ContentName>| n.as_ref().map_or("-".to_owned(), |n| n.to_string());
        match self {
            Self::Add(x) => write!(f, "ADD({x})"),
            Self::Delete(x) => write!(f, "DELETE({x})"),
            Self::Update(x, y) => write!(f, "UPDATE({x},{y})"),
            Self::Cut {
                from,
                to,
                predecessor,
                successor,
            } => write!(f, "CUT({from},{to},{},{})", o(predecessor), o(successor)),
        }
    }
}

/// The payload of one thread-update feed entry. The genesis entry has
/// sequence 0 and no command.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TuEntry {
    pub seq: u64,
    pub command: Option<ThreadUpdateCommand>,
}

impl TuEntry {
    pub fn encode(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.u64(1, self.seq);
        if let Some(c) = &self.command {
            enc.nested(2, |e| c.encode(e));
        }
        enc.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut dec = Decoder::new(bytes);
        let seq = dec.u64(1)?;
        let command = if seq == 0 {
            None
        } else {
            Some(dec.nested(2, ThreadUpdateCommand::decode)?)
        };
        dec.finish()?;
        Ok(TuEntry { seq, command })
    }
}

/// The fixed name of the first entry of `folder`'s thread-update feed.
pub fn tu_genesis_name(folder: &FolderName) -> ContentName {
    folder
        .tu_folder()
        .join(INDEX_APPENDIX)
        .expect("reserved appendix is a valid segment")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn name(b: u8) -> ContentName {
        FolderName::parse("ia.alice/fl").unwrap().join(&hex::encode([b; 16])).unwrap()
    }

    fn command() -> impl Strategy<Value = ThreadUpdateCommand> {
        let n = any::<u8>().prop_map(name);
        prop_oneof![
            n.clone().prop_map(ThreadUpdateCommand::Add),
            n.clone().prop_map(ThreadUpdateCommand::Delete),
            (n.clone(), n.clone()).prop_map(|(x, y)| ThreadUpdateCommand::Update(x, y)),
            (n.clone(), n.clone(), prop::option::of(n.clone()), prop::option::of(n)).prop_map(|(a, b, c, d)| {
                ThreadUpdateCommand::Cut {
                    from: a,
                    to: b,
                    predecessor: c,
                    successor: d,
                }
            }),
        ]
    }

    #[test]
    fn genesis_name_and_display() {
        let folder = FolderName::parse("ia.alice/fl").unwrap();
        let g = tu_genesis_name(&folder);
        assert_eq!(g.to_string(), format!("ia.alice/fl/tu/{INDEX_APPENDIX}"));
        let cut = ThreadUpdateCommand::Cut {
            from: name(1),
            to: name(2),
            predecessor: None,
            successor: Some(name(3)),
        };
        assert!(cut.to_string().starts_with("CUT(ia.alice/fl/0101"));
        assert!(cut.to_string().contains(",-,"));
        assert_eq!(cut.names().len(), 3);
    }

    proptest! {
        #[test]
        fn entry_round_trip(seq in 1u64.., cmd in command()) {
            let e = TuEntry { seq, command: Some(cmd) };
            prop_assert_eq!(TuEntry::decode(&e.encode()).unwrap(), e);
        }
    }

    #[test]
    fn genesis_round_trip() {
        let e = TuEntry { seq: 0, command: None };
        assert_eq!(TuEntry::decode(&e.encode()).unwrap(), e);
    }
}
