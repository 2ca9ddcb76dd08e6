use thiserror::Error;

use crate::codec::{DecodeError, Decoder, Encoder};
use crate::crypto::{AttributeKey, Identity, PublicIdentity, TrustAnchors};
use crate::naming::FolderName;
use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CertificateError {
    #[error("certificate signature or issuer does not verify")]
    BadSignature,
    #[error("certificate expired")]
    Expired,
    #[error("certificate is addressed to another distributor")]
    NotForMe,
}

/// Authorizes one distributor to serve a folder of the issuer's content.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistributionCertificate {
    pub issuer: PublicIdentity,
    pub distributor: String,
    pub folder: FolderName,
    /// Distributors certified for this folder or below it, with their folder.
    pub distributors: Vec<(String, FolderName)>,
    /// Keys that open the distributor group of objects in the folder.
    pub keys: Vec<AttributeKey>,
    pub expiry: SimTime,
    signature: Vec<u8>,
}

impl DistributionCertificate {
    pub fn issue(
        issuer: &Identity,
        distributor: &str,
        folder: FolderName,
        distributors: Vec<(String, FolderName)>,
        keys: Vec<AttributeKey>,
        expiry: SimTime,
    ) -> Self {
        let mut cert = DistributionCertificate {
            issuer: issuer.public(),
            distributor: distributor.to_owned(),
            folder,
            distributors,
            keys,
            expiry,
            signature: Vec::new(),
        };
        cert.signature = issuer.sign(&cert.encode_with(&[]));
        cert
    }

    fn encode_with(&self, signature: &[u8]) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.nested(1, |e| self.issuer.encode(e))
            .str(2, &self.distributor)
            .str(3, &self.folder.to_string())
            .list(4, &self.distributors, |e, (d, f)| {
                e.str(1, d).str(2, &f.to_string());
            })
            .list(5, &self.keys, |e, k| k.encode(e))
            .u64(6, self.expiry.as_millis())
            .bytes(7, signature);
        enc.finish()
    }

    pub fn encode(&self) -> Vec<u8> {
        self.encode_with(&self.signature)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let folder = |s: &str, id| FolderName::parse(s).map_err(|e| DecodeError::invalid(id, e));
        let mut dec = Decoder::new(bytes);
        let issuer = dec.nested(1, PublicIdentity::decode)?;
        let distributor = dec.str(2)?.to_owned();
        let f = folder(dec.str(3)?, 3)?;
        let distributors = dec.list(4, |d| Ok((d.str(1)?.to_owned(), folder(d.str(2)?, 2)?)))?;
        let keys = dec.list(5, AttributeKey::decode)?;
        let expiry = SimTime::from_millis(dec.u64(6)?);
        let signature = dec.bytes(7)?.to_vec();
        dec.finish()?;
        Ok(DistributionCertificate {
            issuer,
            distributor,
            folder: f,
            distributors,
            keys,
            expiry,
            signature,
        })
    }

    /// Checks the issuer's identity certificate, that the issuer owns the
    /// folder, the signature, and expiry.
    pub fn verify(&self, anchors: &TrustAnchors, now: SimTime) -> Result<(), CertificateError> {
        anchors.verify(&self.issuer).map_err(|_| CertificateError::BadSignature)?;
        if self.issuer.name() != self.folder.owner() {
            return Err(CertificateError::BadSignature);
        }
        if !self.issuer.verify(&self.encode_with(&[]), &self.signature) {
            return Err(CertificateError::BadSignature);
        }
        if now >= self.expiry {
            return Err(CertificateError::Expired);
        }
        Ok(())
    }

    pub fn is_valid_at(&self, now: SimTime) -> bool {
        now < self.expiry
    }

    #[cfg(test)]
    pub(crate) fn tamper_expiry(&mut self, expiry: SimTime) {
        self.expiry = expiry;
    }
}
