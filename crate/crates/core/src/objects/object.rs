use rand::RngCore;
use sha2::{Digest, Sha256};

use super::ObjectError;
use crate::codec::{DecodeError, Decoder, Encoder};
use crate::crypto::{
    aead_open, aead_seal, decrypt_with_keyring_bound, encrypt_with_policy_bound, AttributeAuthority, Epoch,
    Identity, KeyRing, Policy, PolicyCiphertext,
};
use crate::naming::{parse_name, ContentName, FolderName};

/// Follower-visible links between objects.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Links {
    pub reference: Option<ContentName>,
    pub next: Option<ContentName>,
    pub previous: Option<ContentName>,
    pub segment_seed: Option<[u8; 16]>,
    pub number_of_segments: Option<u32>,
}

/// Distributor-visible fields: the governing thread-update feed and its tail
/// when the object was built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TuRef {
    pub name: FolderName,
    pub pointer: ContentName,
}

/// Everything a follower recovers from an object.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FollowerView {
    pub secret_key: [u8; 32],
    pub links: Links,
    pub payload: Vec<u8>,
}

/// The plaintext description of an object, as kept by its producer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Draft {
    pub name: ContentName,
    pub version: u64,
    pub payload: Vec<u8>,
    pub fp: Policy,
    pub dp: Policy,
    pub links: Links,
}

impl Draft {
    pub fn new(name: ContentName, payload: Vec<u8>, fp: Policy, dp: Policy) -> Self {
        Draft {
            name,
            version: 1,
            payload,
            fp,
            dp,
            links: Links::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct SealedPayload {
    nonce: [u8; 12],
    ciphertext: Vec<u8>,
}

/// A signed, partially encrypted unit of content.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkObject {
    pub content_name: ContentName,
    pub version: u64,
    pub application: String,
    payload: SealedPayload,
    follower: PolicyCiphertext,
    distributor: PolicyCiphertext,
    signature: Vec<u8>,
}

const F_NAME: u8 = 1;
const F_VERSION: u8 = 2;
const F_APPLICATION: u8 = 3;
const F_PAYLOAD: u8 = 4;
const F_FOLLOWER: u8 = 5;
const F_DISTRIBUTOR: u8 = 6;
const F_SIGNATURE: u8 = 7;

fn binding(name: &ContentName, version: u64) -> Vec<u8> {
    let mut b = name.to_string().into_bytes();
    b.push(0);
    b.extend_from_slice(&version.to_be_bytes());
    b
}

fn encode_follower(sk: &[u8; 32], links: &Links) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.bytes(1, sk)
        .opt_str(2, links.reference.as_ref().map(|n| n.to_string()).as_deref())
        .opt_str(3, links.next.as_ref().map(|n| n.to_string()).as_deref())
        .opt_str(4, links.previous.as_ref().map(|n| n.to_string()).as_deref())
        .opt_bytes(5, links.segment_seed.as_ref().map(|s| s.as_slice()))
        .opt_bytes(6, links.number_of_segments.map(|n| n.to_be_bytes()).as_ref().map(|b| b.as_slice()));
    enc.finish()
}

fn opt_name(dec: &mut Decoder<'_>, id: u8) -> Result<Option<ContentName>, DecodeError> {
    dec.opt_str(id)?
        .map(|s| parse_name(s).map_err(|e| DecodeError::invalid(id, e)))
        .transpose()
}

fn decode_follower(bytes: &[u8]) -> Result<([u8; 32], Links), DecodeError> {
    let mut dec = Decoder::new(bytes);
    let sk = dec.array(1)?;
    let reference = opt_name(&mut dec, 2)?;
    let next = opt_name(&mut dec, 3)?;
    let previous = opt_name(&mut dec, 4)?;
    let segment_seed = dec
        .opt_bytes(5)?
        .map(|b| b.try_into().map_err(|_| DecodeError::invalid(5, "seed must be 16 bytes")))
        .transpose()?;
    let number_of_segments = dec
        .opt_bytes(6)?
        .map(|b| {
            b.try_into()
                .map(u32::from_be_bytes)
                .map_err(|_| DecodeError::invalid(6, "count must be 4 bytes"))
        })
        .transpose()?;
    dec.finish()?;
    if segment_seed.is_some() != number_of_segments.is_some() || number_of_segments == Some(0) {
        return Err(DecodeError::invalid(6, "segment seed and count must appear together, count >= 1"));
    }
    Ok((
        sk,
        Links {
            reference,
            next,
            previous,
            segment_seed,
            number_of_segments,
        },
    ))
}

fn encode_tu(tu: &TuRef) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.str(1, &tu.name.to_string()).str(2, &tu.pointer.to_string());
    enc.finish()
}

fn decode_tu(bytes: &[u8]) -> Result<TuRef, DecodeError> {
    let mut dec = Decoder::new(bytes);
    let name = FolderName::parse(dec.str(1)?).map_err(|e| DecodeError::invalid(1, e))?;
    let pointer = parse_name(dec.str(2)?).map_err(|e| DecodeError::invalid(2, e))?;
    dec.finish()?;
    Ok(TuRef { name, pointer })
}

/// Builds and signs an object from its draft. A fresh secret key encrypts
/// the payload; the key and links are sealed under the draft's follower
/// policy, the thread-update fields under its distributor policy.
pub fn build_object<R: RngCore + ?Sized>(
    producer: &Identity,
    issuer: &AttributeAuthority,
    draft: &Draft,
    tu: &TuRef,
    epoch: Epoch,
    rng: &mut R,
) -> Result<NetworkObject, ObjectError> {
    if draft.name.owner() != producer.name() {
        return Err(ObjectError::NameNotOwned(draft.name.to_string()));
    }
    if draft.links.segment_seed.is_some() != draft.links.number_of_segments.is_some()
        || draft.links.number_of_segments == Some(0)
    {
        return Err(ObjectError::InconsistentFragments);
    }
    if draft.version == 0 {
        return Err(ObjectError::Malformed(DecodeError::invalid(F_VERSION, "version starts at 1")));
    }
    draft.fp.validate()?;
    draft.dp.validate()?;

    let bind = binding(&draft.name, draft.version);
    let mut sk = [0u8; 32];
    rng.fill_bytes(&mut sk);
    let mut nonce = [0u8; 12];
    rng.fill_bytes(&mut nonce);
    let payload = SealedPayload {
        nonce,
        ciphertext: aead_seal(&sk, &nonce, &draft.payload, &bind),
    };
    let follower = encrypt_with_policy_bound(&encode_follower(&sk, &draft.links), &draft.fp, epoch, issuer, &bind, rng)?;
    let distributor = encrypt_with_policy_bound(&encode_tu(tu), &draft.dp, epoch, issuer, &bind, rng)?;

    let mut obj = NetworkObject {
        content_name: draft.name.clone(),
        version: draft.version,
        application: draft.name.application().to_owned(),
        payload,
        follower,
        distributor,
        signature: Vec::new(),
    };
    obj.signature = producer.sign(&obj.signing_bytes());
    Ok(obj)
}

impl NetworkObject {
    fn encode_with(&self, signature: &[u8]) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.str(F_NAME, &self.content_name.to_string())
            .u64(F_VERSION, self.version)
            .str(F_APPLICATION, &self.application)
            .nested(F_PAYLOAD, |e| {
                e.bytes(1, &self.payload.nonce).bytes(2, &self.payload.ciphertext);
            })
            .nested(F_FOLLOWER, |e| self.follower.encode(e))
            .nested(F_DISTRIBUTOR, |e| self.distributor.encode(e))
            .bytes(F_SIGNATURE, signature);
        enc.finish()
    }

    /// The canonical bytes covered by the signature: the encoding with an
    /// empty signature field.
    pub fn signing_bytes(&self) -> Vec<u8> {
        self.encode_with(&[])
    }

    pub fn encode(&self) -> Vec<u8> {
        self.encode_with(&self.signature)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut dec = Decoder::new(bytes);
        let content_name = parse_name(dec.str(F_NAME)?).map_err(|e| DecodeError::invalid(F_NAME, e))?;
        let version = dec.u64(F_VERSION)?;
        if version == 0 {
            return Err(DecodeError::invalid(F_VERSION, "version starts at 1"));
        }
        let application = dec.str(F_APPLICATION)?.to_owned();
        if application != content_name.application() {
            return Err(DecodeError::invalid(F_APPLICATION, "application differs from name"));
        }
        let payload = dec.nested(F_PAYLOAD, |d| {
            Ok(SealedPayload {
                nonce: d.array(1)?,
                ciphertext: d.bytes(2)?.to_vec(),
            })
        })?;
        let follower = dec.nested(F_FOLLOWER, PolicyCiphertext::decode)?;
        let distributor = dec.nested(F_DISTRIBUTOR, PolicyCiphertext::decode)?;
        let signature = dec.bytes(F_SIGNATURE)?.to_vec();
        dec.finish()?;
        Ok(NetworkObject {
            content_name,
            version,
            application,
            payload,
            follower,
            distributor,
            signature,
        })
    }

    pub fn signature(&self) -> &[u8] {
        &self.signature
    }

    pub fn verify(&self, key: &ed25519_dalek::VerifyingKey) -> bool {
        crate::crypto::verify_object(key, &self.signing_bytes(), &self.signature)
    }

    /// SHA-256 of the full encoding.
    pub fn checksum(&self) -> [u8; 32] {
        Sha256::digest(self.encode()).into()
    }

    pub fn follower_policy(&self) -> &Policy {
        &self.follower.policy
    }

    pub fn distributor_policy(&self) -> &Policy {
        &self.distributor.policy
    }

    pub fn epoch(&self) -> Epoch {
        self.follower.epoch
    }

    pub fn distributor_epoch(&self) -> Epoch {
        self.distributor.epoch
    }

    pub fn readable_by(&self, ring: &KeyRing) -> bool {
        self.follower.satisfiable_by(ring)
    }

    /// Opens the follower group and then the payload.
    pub fn open_follower(&self, ring: &KeyRing) -> Result<FollowerView, ObjectError> {
        let bind = binding(&self.content_name, self.version);
        let plain = decrypt_with_keyring_bound(&self.follower, ring, &bind)?;
        let (secret_key, links) = decode_follower(&plain)?;
        let payload = aead_open(&secret_key, &self.payload.nonce, &self.payload.ciphertext, &bind)
            .ok_or(ObjectError::Crypto(crate::crypto::CryptoError::IntegrityFailure))?;
        Ok(FollowerView {
            secret_key,
            links,
            payload,
        })
    }

    /// Opens the distributor group.
    pub fn open_distributor(&self, ring: &KeyRing) -> Result<TuRef, ObjectError> {
        let bind = binding(&self.content_name, self.version);
        let plain = decrypt_with_keyring_bound(&self.distributor, ring, &bind)?;
        Ok(decode_tu(&plain)?)
    }

    #[cfg(test)]
    pub(crate) fn corrupt_payload(&mut self) {
        self.payload.ciphertext[0] ^= 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{CryptoError, IdentityAuthority};
    use crate::naming::generate_segment;
    use crate::time::SimTime;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    struct Fixture {
        rng: ChaCha20Rng,
        alice: Identity,
        issuer: AttributeAuthority,
        folder: FolderName,
    }

    fn fixture(seed: u64) -> Fixture {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let ia = IdentityAuthority::new("ia", &mut rng);
        let alice = ia.register("alice", &mut rng);
        let issuer = AttributeAuthority::new(alice.name(), &mut rng);
        let folder = FolderName::parse("ia.alice/fl")
            .unwrap()
            .child(&generate_segment(&mut rng))
            .unwrap();
        Fixture {
            rng,
            alice,
            issuer,
            folder,
        }
    }

    impl Fixture {
        fn name(&mut self) -> ContentName {
            self.folder.join(&generate_segment(&mut self.rng)).unwrap()
        }

        fn tu(&mut self) -> TuRef {
            let tu = self.folder.tu_folder();
            TuRef {
                pointer: tu.join(&generate_segment(&mut self.rng)).unwrap(),
                name: tu,
            }
        }

        fn ring(&self, attrs: &[&str]) -> KeyRing {
            let mut r = KeyRing::new(self.alice.name());
            for a in attrs {
                r.insert(self.issuer.derive(a, 0, SimTime::ZERO));
            }
            r
        }

        fn build(&mut self, draft: &Draft) -> NetworkObject {
            let tu = self.tu();
            build_object(&self.alice, &self.issuer, draft, &tu, 0, &mut self.rng).unwrap()
        }
    }

    fn draft(f: &mut Fixture, payload: &[u8]) -> Draft {
        let mut d = Draft::new(f.name(), payload.to_vec(), "friend".parse().unwrap(), "dist".parse().unwrap());
        d.links.previous = Some(f.name());
        d.links.reference = Some(f.name());
        d
    }

    #[test]
    fn follower_round_trip() {
        let mut f = fixture(1);
        let d = draft(&mut f, b"status update");
        let obj = f.build(&d);
        assert_eq!(obj.version, 1);
        assert!(obj.verify(&f.alice.verifying_key()));
        let view = obj.open_follower(&f.ring(&["friend"])).unwrap();
        assert_eq!(view.payload, b"status update");
        assert_eq!(view.links, d.links);
    }

    #[test]
    fn group_separation() {
        let mut f = fixture(2);
        let d = draft(&mut f, b"secret");
        let obj = f.build(&d);
        // Public fields are readable by anyone.
        assert_eq!(obj.content_name, d.name);
        assert_eq!(obj.application, "fl");
        let stranger = f.ring(&["colleague"]);
        assert!(matches!(
            obj.open_follower(&stranger),
            Err(ObjectError::Crypto(CryptoError::AccessDenied))
        ));
        // A distributor-only ring reads the TU fields but not the payload.
        let dist = f.ring(&["dist"]);
        let tu = obj.open_distributor(&dist).unwrap();
        assert_eq!(tu.name, f.folder.tu_folder());
        assert!(obj.open_follower(&dist).is_err());
        assert!(obj.open_distributor(&f.ring(&["friend"])).is_err());
    }

    #[test]
    fn ownership_and_fragment_invariants() {
        let mut f = fixture(3);
        let mut d = draft(&mut f, b"x");
        d.name = FolderName::parse("ia.bob/fl").unwrap().join(&"a".repeat(32)).unwrap();
        let tu = f.tu();
        assert!(matches!(
            build_object(&f.alice, &f.issuer, &d, &tu, 0, &mut f.rng),
            Err(ObjectError::NameNotOwned(_))
        ));
        let mut d = draft(&mut f, b"x");
        d.links.segment_seed = Some([0; 16]);
        assert!(matches!(
            build_object(&f.alice, &f.issuer, &d, &tu, 0, &mut f.rng),
            Err(ObjectError::InconsistentFragments)
        ));
    }

    #[test]
    fn tampering_detected() {
        let mut f = fixture(4);
        let d = draft(&mut f, b"payload");
        let mut obj = f.build(&d);
        obj.corrupt_payload();
        assert!(!obj.verify(&f.alice.verifying_key()));
        assert!(matches!(
            obj.open_follower(&f.ring(&["friend"])),
            Err(ObjectError::Crypto(CryptoError::IntegrityFailure))
        ));
    }

    #[test]
    fn truncation_is_malformed() {
        let mut f = fixture(5);
        let d = draft(&mut f, b"payload");
        let bytes = f.build(&d).encode();
        for cut in [0, 1, 5, bytes.len() / 2, bytes.len() - 1] {
            assert!(NetworkObject::decode(&bytes[..cut]).is_err());
        }
        let mut extra = bytes.clone();
        extra.extend_from_slice(&[9, 0, 0, 0, 0]);
        assert!(NetworkObject::decode(&extra).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn codec_round_trip(
            seed in any::<u64>(),
            payload in prop::collection::vec(any::<u8>(), 0..300),
            version in 1u64..1000,
            with_links in any::<bool>(),
            fragments in prop::option::of((any::<[u8; 16]>(), 1u32..50)),
        ) {
            let mut f = fixture(seed);
            let mut d = Draft::new(f.name(), payload, "OR(friend,KOFN(2;a,b,c))".parse().unwrap(), "dist".parse().unwrap());
            d.version = version;
            if with_links {
                d.links.next = Some(f.name());
                d.links.previous = Some(f.name());
            }
            if let Some((s, n)) = fragments {
                d.links.segment_seed = Some(s);
                d.links.number_of_segments = Some(n);
            }
            let obj = f.build(&d);
            let bytes = obj.encode();
            let back = NetworkObject::decode(&bytes).unwrap();
            prop_assert_eq!(&back, &obj);
            prop_assert_eq!(back.encode(), bytes);
            prop_assert!(back.verify(&f.alice.verifying_key()));
            let view = back.open_follower(&f.ring(&["a", "c"])).unwrap();
            prop_assert_eq!(view.payload, d.payload);
            prop_assert_eq!(view.links, d.links);
        }
    }
}
