//! Canonical TLV encoding.
//!
//! A field is `id: u8`, `len: u32 big-endian`, then `len` bytes of value.
//! Records are written with strictly increasing field ids, so every value has
//! exactly one encoding; the reader rejects reordered, duplicated, unknown,
//! truncated, and trailing fields. Lists are a nested value holding repeated
//! fields with id [`LIST_ITEM`].

use thiserror::Error;

pub const LIST_ITEM: u8 = 0x01;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("malformed encoding: truncated buffer")]
    Truncated,
    #[error("malformed encoding: missing field {0}")]
    Missing(u8),
    #[error("malformed encoding: unexpected field {found} (expected {expected})")]
    Unexpected { expected: u8, found: u8 },
    #[error("malformed encoding: duplicate or out-of-order field {0}")]
    OutOfOrder(u8),
    #[error("malformed encoding: trailing field {0}")]
    Trailing(u8),
    #[error("malformed encoding: invalid value in field {field}: {reason}")]
    Invalid { field: u8, reason: String },
}

impl DecodeError {
    pub fn invalid(field: u8, reason: impl ToString) -> Self {
        DecodeError::Invalid {
            field,
            reason: reason.to_string(),
        }
    }
}

#[derive(Debug, Default)]
pub struct Encoder {
    buf: Vec<u8>,
    last: Option<u8>,
    repeated: bool,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Writes one field. Ids must be strictly increasing, except the list item
    /// id which may repeat.
    pub fn bytes(&mut self, id: u8, value: &[u8]) -> &mut Self {
        debug_assert!(
            self.last.is_none_or(|l| l < id || (l == id && self.repeated)),
            "field {id} written out of order"
        );
        self.last = Some(id);
        self.buf.push(id);
        self.buf.extend_from_slice(&(value.len() as u32).to_be_bytes());
        self.buf.extend_from_slice(value);
        self
    }

    pub fn str(&mut self, id: u8, value: &str) -> &mut Self {
        self.bytes(id, value.as_bytes())
    }

    pub fn u64(&mut self, id: u8, value: u64) -> &mut Self {
        self.bytes(id, &value.to_be_bytes())
    }

    pub fn opt_bytes(&mut self, id: u8, value: Option<&[u8]>) -> &mut Self {
        if let Some(v) = value {
            self.bytes(id, v);
        }
        self
    }

    pub fn opt_str(&mut self, id: u8, value: Option<&str>) -> &mut Self {
        self.opt_bytes(id, value.map(str::as_bytes))
    }

    pub fn nested(&mut self, id: u8, f: impl FnOnce(&mut Encoder)) -> &mut Self {
        let mut inner = Encoder::new();
        f(&mut inner);
        self.bytes(id, &inner.buf)
    }

    pub fn list<T>(&mut self, id: u8, items: &[T], mut f: impl FnMut(&mut Encoder, &T)) -> &mut Self {
        let mut inner = Encoder {
            repeated: true,
            ..Encoder::default()
        };
        for item in items {
            inner.nested(LIST_ITEM, |e| f(e, item));
        }
        self.bytes(id, &inner.buf)
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

#[derive(Debug, Clone)]
pub struct Decoder<'a> {
    buf: &'a [u8],
    last: Option<u8>,
    repeated: bool,
}

impl<'a> Decoder<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Decoder {
            buf,
            last: None,
            repeated: false,
        }
    }

    fn peek_id(&self) -> Option<u8> {
        self.buf.first().copied()
    }

    fn take(&mut self) -> Result<(u8, &'a [u8]), DecodeError> {
        if self.buf.len() < 5 {
            return Err(DecodeError::Truncated);
        }
        let id = self.buf[0];
        let len = u32::from_be_bytes(self.buf[1..5].try_into().unwrap()) as usize;
        let rest = &self.buf[5..];
        if rest.len() < len {
            return Err(DecodeError::Truncated);
        }
        if let Some(last) = self.last {
            if id < last || (id == last && !self.repeated) {
                return Err(DecodeError::OutOfOrder(id));
            }
        }
        self.last = Some(id);
        self.buf = &rest[len..];
        Ok((id, &rest[..len]))
    }

    pub fn bytes(&mut self, id: u8) -> Result<&'a [u8], DecodeError> {
        match self.peek_id() {
            None => Err(DecodeError::Missing(id)),
            Some(found) if found == id => Ok(self.take()?.1),
            Some(found) if self.last == Some(found) => Err(DecodeError::OutOfOrder(found)),
            Some(found) => Err(DecodeError::Unexpected { expected: id, found }),
        }
    }

    pub fn opt_bytes(&mut self, id: u8) -> Result<Option<&'a [u8]>, DecodeError> {
        if self.peek_id() == Some(id) {
            Ok(Some(self.take()?.1))
        } else {
            Ok(None)
        }
    }

    pub fn str(&mut self, id: u8) -> Result<&'a str, DecodeError> {
        let raw = self.bytes(id)?;
        std::str::from_utf8(raw).map_err(|e| DecodeError::invalid(id, e))
    }

    pub fn opt_str(&mut self, id: u8) -> Result<Option<&'a str>, DecodeError> {
        self.opt_bytes(id)?
            .map(|raw| std::str::from_utf8(raw).map_err(|e| DecodeError::invalid(id, e)))
            .transpose()
    }

    pub fn u64(&mut self, id: u8) -> Result<u64, DecodeError> {
        let raw = self.bytes(id)?;
        let arr: [u8; 8] = raw
            .try_into()
            .map_err(|_| DecodeError::invalid(id, "expected 8 bytes"))?;
        Ok(u64::from_be_bytes(arr))
    }

    pub fn array<const N: usize>(&mut self, id: u8) -> Result<[u8; N], DecodeError> {
        let raw = self.bytes(id)?;
        raw.try_into()
            .map_err(|_| DecodeError::invalid(id, format!("expected {N} bytes")))
    }

    pub fn nested<T>(
        &mut self,
        id: u8,
        f: impl FnOnce(&mut Decoder<'a>) -> Result<T, DecodeError>,
    ) -> Result<T, DecodeError> {
        let raw = self.bytes(id)?;
        let mut inner = Decoder::new(raw);
        let value = f(&mut inner)?;
        inner.finish()?;
        Ok(value)
    }

    pub fn list<T>(
        &mut self,
        id: u8,
        mut f: impl FnMut(&mut Decoder<'a>) -> Result<T, DecodeError>,
    ) -> Result<Vec<T>, DecodeError> {
        let raw = self.bytes(id)?;
        let mut dec = Decoder {
            repeated: true,
            ..Decoder::new(raw)
        };
        let mut out = Vec::new();
        while !dec.buf.is_empty() {
            out.push(dec.nested(LIST_ITEM, &mut f)?);
        }
        Ok(out)
    }

    /// Fails if any bytes remain.
    pub fn finish(&self) -> Result<(), DecodeError> {
        match self.peek_id() {
            None => Ok(()),
            Some(id) => Err(DecodeError::Trailing(id)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.str(1, "name").u64(2, 7).list(3, &["a", "bc"], |e, s| {
            e.str(1, s);
        });
        enc.finish()
    }

    fn read(buf: &[u8]) -> Result<(String, u64, Vec<String>), DecodeError> {
        let mut dec = Decoder::new(buf);
        let name = dec.str(1)?.to_owned();
        let v = dec.u64(2)?;
        let items = dec.list(3, |d| Ok(d.str(1)?.to_owned()))?;
        dec.finish()?;
        Ok((name, v, items))
    }

    #[test]
    fn round_trip() {
        let (n, v, items) = read(&sample()).unwrap();
        assert_eq!((n.as_str(), v), ("name", 7));
        assert_eq!(items, ["a", "bc"]);
    }

    #[test]
    fn every_truncation_fails() {
        let buf = sample();
        for cut in 0..buf.len() {
            assert!(read(&buf[..cut]).is_err(), "prefix of {cut} bytes decoded");
        }
    }

    #[test]
    fn duplicate_and_trailing_fields_fail() {
        let mut enc = Encoder::new();
        enc.str(1, "x");
        let mut buf = enc.finish();
        let copy = buf.clone();
        buf.extend_from_slice(&copy);
        let mut dec = Decoder::new(&buf);
        dec.str(1).unwrap();
        assert_eq!(dec.opt_bytes(1), Err(DecodeError::OutOfOrder(1)));

        let mut buf = sample();
        buf.extend_from_slice(&[9, 0, 0, 0, 0]);
        assert_eq!(read(&buf), Err(DecodeError::Trailing(9)));
    }

    #[test]
    fn unknown_field_fails() {
        let mut enc = Encoder::new();
        enc.str(1, "x").bytes(5, b"?");
        let buf = enc.finish();
        assert!(matches!(read(&buf), Err(DecodeError::Unexpected { expected: 2, found: 5 })));
    }
}
