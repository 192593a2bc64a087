//! Self-certifying group identities and packet authentication.
//!
//! A group controller derives its group identifier from a key pair: the
//! group ID is the SHA-256 digest of the public key concatenated with a
//! collision-avoidance counter. Owning the matching secret key therefore
//! proves ownership of the name without any external authority. The
//! controller signs its own packets directly; additional sources are
//! admitted through a controller-issued certificate binding the source's
//! key digest to the group, optionally time-limited.
//!
//! Verification is autonomous: everything needed to check a packet — signer
//! key, group counter, and (for admitted sources) the issuing key inside the
//! certificate — travels in the packet itself, so any hop or receiver can
//! validate the source-group-content relationship from the bytes and a
//! clock alone.
//!
//! Signatures are Ed25519 (deterministic, 32-byte keys, 64-byte
//! signatures); digests are SHA-256.

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use sha2::{Digest as _, Sha256};

use crate::naming;

/// 32-byte SHA-256 digest.
pub type Digest = [u8; 32];

pub const KEY_LEN: usize = 32;
pub const SIG_LEN: usize = 64;
/// Magic prefix of the packet encoding.
pub const PACKET_MAGIC: &[u8; 4] = b"NMC1";
/// Magic prefix of key files.
pub const KEY_MAGIC: &[u8; 4] = b"NMK1";

/// Errors creating identities or signing packets.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IdentityError {
    #[error("seed must carry at least 32 bytes, got {0}")]
    WeakSeed(usize),
    #[error("certificate names a different source key")]
    CertMismatch,
}

/// Errors decoding the binary packet or certificate form.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CodecError {
    #[error("bad magic, expected {expected:?}")]
    BadMagic { expected: String },
    #[error("truncated input: needed {needed} more bytes")]
    Truncated { needed: usize },
    #[error("trailing bytes after packet end")]
    TrailingBytes,
    #[error("flag byte must be 0 or 1, got {0}")]
    BadFlag(u8),
    #[error("group URI is not valid UTF-8")]
    BadUtf8,
}

/// Verdict of packet verification. Everything except `Accepted` means the
/// packet must not be forwarded or delivered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accepted,
    BadGroupBinding,
    BadSignature,
    BadCertificate,
    Expired,
}

impl Verdict {
    pub fn is_accepted(self) -> bool {
        self == Verdict::Accepted
    }
}

/// Closed validity interval in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lifetime {
    pub not_before: u64,
    pub not_after: u64,
}

impl Lifetime {
    pub fn contains(&self, now: u64) -> bool {
        self.not_before <= now && now <= self.not_after
    }
}

/// An Ed25519 key pair. Source peers hold a bare key pair; group
/// controllers wrap one in a [`GroupIdentity`].
#[derive(Debug, Clone)]
pub struct KeyPair {
    signing: SigningKey,
}

impl KeyPair {
    /// Derives a key pair deterministically from seed entropy.
    pub fn from_seed(seed: &[u8]) -> Result<KeyPair, IdentityError> {
        if seed.len() < KEY_LEN {
            return Err(IdentityError::WeakSeed(seed.len()));
        }
        let digest: Digest = Sha256::digest(seed).into();
        Ok(KeyPair {
            signing: SigningKey::from_bytes(&digest),
        })
    }

    /// Restores a key pair from raw signing-key bytes (key-file payload).
    pub fn from_signing_bytes(bytes: &[u8; KEY_LEN]) -> KeyPair {
        KeyPair {
            signing: SigningKey::from_bytes(bytes),
        }
    }

    pub fn public_key(&self) -> [u8; KEY_LEN] {
        self.signing.verifying_key().to_bytes()
    }

    pub fn signing_bytes(&self) -> [u8; KEY_LEN] {
        self.signing.to_bytes()
    }

    /// Digest of the public key; the identifier of a source peer.
    pub fn key_digest(&self) -> Digest {
        digest_key(&self.public_key())
    }

    fn sign(&self, message: &[u8]) -> [u8; SIG_LEN] {
        self.signing.sign(message).to_bytes()
    }
}

pub fn digest_key(public_key: &[u8; KEY_LEN]) -> Digest {
    Sha256::digest(public_key).into()
}

/// Group binding digest: `H(public_key || counter)` with the counter as
/// eight big-endian bytes.
pub fn digest_key_with_counter(public_key: &[u8; KEY_LEN], counter: u64) -> Digest {
    let mut h = Sha256::new();
    h.update(public_key);
    h.update(counter.to_be_bytes());
    h.finalize().into()
}

/// Checks that a public key and counter produce the claimed group ID.
pub fn verify_group_binding(public_key: &[u8; KEY_LEN], counter: u64, group_id: &Digest) -> bool {
    digest_key_with_counter(public_key, counter) == *group_id
}

fn verify_sig(public_key: &[u8; KEY_LEN], message: &[u8], sig: &[u8; SIG_LEN]) -> bool {
    let Ok(key) = VerifyingKey::from_bytes(public_key) else {
        return false;
    };
    key.verify(message, &ed25519_dalek::Signature::from_bytes(sig))
        .is_ok()
}

/// A group controller: key pair, counter, and the derived group ID.
#[derive(Debug, Clone)]
pub struct GroupIdentity {
    keys: KeyPair,
    counter: u64,
    group_id: Digest,
}

/// Creates a controller identity deterministically from seed entropy. The
/// counter disambiguates identifiers should two groups collide in the ID
/// space: the same keys with a different counter yield a different group ID.
pub fn create_group_identity(seed: &[u8], counter: u64) -> Result<GroupIdentity, IdentityError> {
    let keys = KeyPair::from_seed(seed)?;
    let group_id = digest_key_with_counter(&keys.public_key(), counter);
    Ok(GroupIdentity {
        keys,
        counter,
        group_id,
    })
}

impl GroupIdentity {
    pub fn from_keys(keys: KeyPair, counter: u64) -> GroupIdentity {
        let group_id = digest_key_with_counter(&keys.public_key(), counter);
        GroupIdentity {
            keys,
            counter,
            group_id,
        }
    }

    pub fn keys(&self) -> &KeyPair {
        &self.keys
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn group_id(&self) -> Digest {
        self.group_id
    }

    /// Group ID in the textual form carried by a name's credential clause.
    pub fn credential(&self) -> String {
        URL_SAFE_NO_PAD.encode(self.group_id)
    }
}

/// Controller-signed admission of an additional source into a group.
///
/// The certificate is self-contained: it carries the issuing public key and
/// counter, so a verifier can re-derive the group ID and check the issuer's
/// authority without any lookup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceCertificate {
    /// Digest of the admitted source's public key.
    pub source_id: Digest,
    pub group_id: Digest,
    /// Public key of the issuing controller.
    pub issuer_pub: [u8; KEY_LEN],
    /// Counter the controller used when deriving `group_id`.
    pub issuer_counter: u64,
    pub lifetime: Option<Lifetime>,
    pub signature: [u8; SIG_LEN],
}

fn certificate_message(
    source_id: &Digest,
    group_id: &Digest,
    lifetime: &Option<Lifetime>,
) -> Vec<u8> {
    let mut m = Vec::with_capacity(81);
    m.extend_from_slice(source_id);
    m.extend_from_slice(group_id);
    match lifetime {
        None => m.push(0),
        Some(l) => {
            m.push(1);
            m.extend_from_slice(&l.not_before.to_be_bytes());
            m.extend_from_slice(&l.not_after.to_be_bytes());
        }
    }
    m
}

/// Issues a certificate admitting `source_pub` as a publisher of the
/// controller's group. Admission policy (whether to issue at all) is the
/// caller's business.
pub fn issue_certificate(
    controller: &GroupIdentity,
    source_pub: &[u8; KEY_LEN],
    lifetime: Option<Lifetime>,
) -> SourceCertificate {
    let source_id = digest_key(source_pub);
    let message = certificate_message(&source_id, &controller.group_id, &lifetime);
    SourceCertificate {
        source_id,
        group_id: controller.group_id,
        issuer_pub: controller.keys.public_key(),
        issuer_counter: controller.counter,
        lifetime,
        signature: controller.keys.sign(&message),
    }
}

impl SourceCertificate {
    /// Wire form of the certificate block (also embedded in packets).
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(177);
        out.extend_from_slice(&self.source_id);
        out.extend_from_slice(&self.group_id);
        out.extend_from_slice(&self.issuer_pub);
        out.extend_from_slice(&self.issuer_counter.to_be_bytes());
        match &self.lifetime {
            None => out.push(0),
            Some(l) => {
                out.push(1);
                out.extend_from_slice(&l.not_before.to_be_bytes());
                out.extend_from_slice(&l.not_after.to_be_bytes());
            }
        }
        out.extend_from_slice(&self.signature);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<SourceCertificate, CodecError> {
        let mut r = Reader { bytes, pos: 0 };
        let cert = r.certificate()?;
        if r.pos != bytes.len() {
            return Err(CodecError::TrailingBytes);
        }
        Ok(cert)
    }

    /// Standalone check of the certificate itself against a group ID.
    pub fn verify(&self, group_id: &Digest, now: u64) -> Verdict {
        if self.group_id != *group_id {
            return Verdict::BadCertificate;
        }
        if !verify_group_binding(&self.issuer_pub, self.issuer_counter, group_id) {
            return Verdict::BadCertificate;
        }
        let message = certificate_message(&self.source_id, &self.group_id, &self.lifetime);
        if !verify_sig(&self.issuer_pub, &message, &self.signature) {
            return Verdict::BadCertificate;
        }
        if let Some(l) = &self.lifetime {
            if !l.contains(now) {
                return Verdict::Expired;
            }
        }
        Verdict::Accepted
    }
}

/// A signed multicast packet.
///
/// Controller packets carry no certificate and include the group counter;
/// packets from admitted sources attach their certificate instead.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedPacket {
    /// Canonical group URI text of the publication.
    pub group_uri: String,
    pub group_id: Digest,
    pub seq: u64,
    pub payload: Vec<u8>,
    pub certificate: Option<SourceCertificate>,
    pub signer_pub: [u8; KEY_LEN],
    /// Group counter, present on controller packets.
    pub counter: Option<u64>,
    pub signature: [u8; SIG_LEN],
}

/// Who signs a packet: the group controller itself, or an admitted source
/// presenting its certificate.
#[derive(Debug, Clone)]
pub enum PacketSigner<'a> {
    Controller(&'a GroupIdentity),
    Source {
        keys: &'a KeyPair,
        certificate: &'a SourceCertificate,
    },
}

impl PacketSigner<'_> {
    pub fn group_id(&self) -> Digest {
        match self {
            PacketSigner::Controller(c) => c.group_id,
            PacketSigner::Source { certificate, .. } => certificate.group_id,
        }
    }
}

/// Signs a payload for a group. The packet's URI is canonicalized and its
/// credential clause is bound to the signer's group ID, so receivers can
/// check the name-identity relationship. Unparseable URI text is signed
/// verbatim.
pub fn sign_packet(
    signer: &PacketSigner<'_>,
    group_uri: &str,
    seq: u64,
    payload: &[u8],
) -> Result<SignedPacket, IdentityError> {
    let group_id = signer.group_id();
    let uri_text = match naming::parse(group_uri) {
        Ok(parsed) => parsed
            .with_credentials(Some(URL_SAFE_NO_PAD.encode(group_id)))
            .to_string(),
        Err(_) => group_uri.to_string(),
    };
    let (keys, certificate, counter) = match signer {
        PacketSigner::Controller(c) => (&c.keys, None, Some(c.counter)),
        PacketSigner::Source { keys, certificate } => {
            if certificate.source_id != keys.key_digest() {
                return Err(IdentityError::CertMismatch);
            }
            (*keys, Some((*certificate).clone()), None)
        }
    };
    let mut pkt = SignedPacket {
        group_uri: uri_text,
        group_id,
        seq,
        payload: payload.to_vec(),
        certificate,
        signer_pub: keys.public_key(),
        counter,
        signature: [0; SIG_LEN],
    };
    pkt.signature = keys.sign(&pkt.signed_prefix());
    Ok(pkt)
}

/// Verifies a packet with nothing but its bytes and a clock.
pub fn verify_packet(pkt: &SignedPacket, now: u64) -> Verdict {
    // The name, when it carries a credential, must claim this group.
    if let Ok(parsed) = naming::parse(&pkt.group_uri) {
        if let Some(cred) = &parsed.sec_credentials {
            if *cred != URL_SAFE_NO_PAD.encode(pkt.group_id) {
                return Verdict::BadGroupBinding;
            }
        }
    }
    match &pkt.certificate {
        None => {
            let Some(counter) = pkt.counter else {
                return Verdict::BadGroupBinding;
            };
            if !verify_group_binding(&pkt.signer_pub, counter, &pkt.group_id) {
                return Verdict::BadGroupBinding;
            }
        }
        Some(cert) => {
            if cert.source_id != digest_key(&pkt.signer_pub) {
                return Verdict::BadCertificate;
            }
            let verdict = cert.verify(&pkt.group_id, now);
            if verdict != Verdict::Accepted {
                return verdict;
            }
        }
    }
    if !verify_sig(&pkt.signer_pub, &pkt.signed_prefix(), &pkt.signature) {
        return Verdict::BadSignature;
    }
    Verdict::Accepted
}

impl SignedPacket {
    /// Encoded bytes covered by the packet signature: everything up to and
    /// including the certificate block.
    fn signed_prefix(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode_prefix(&mut out);
        out
    }

    fn encode_prefix(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(PACKET_MAGIC);
        let uri = self.group_uri.as_bytes();
        out.extend_from_slice(&(uri.len() as u16).to_be_bytes());
        out.extend_from_slice(uri);
        out.extend_from_slice(&self.group_id);
        out.extend_from_slice(&self.seq.to_be_bytes());
        out.extend_from_slice(&(self.payload.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.payload);
        match &self.certificate {
            None => out.push(0),
            Some(c) => {
                out.push(1);
                out.extend_from_slice(&c.encode());
            }
        }
    }

    /// Full wire encoding. Big-endian integers, length-prefixed variable
    /// fields, strict flag bytes.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.signed_prefix();
        out.extend_from_slice(&self.signer_pub);
        match self.counter {
            None => out.push(0),
            Some(c) => {
                out.push(1);
                out.extend_from_slice(&c.to_be_bytes());
            }
        }
        out.extend_from_slice(&self.signature);
        out
    }

    /// Strict decoder: rejects bad magic, short input, non-boolean flags,
    /// and trailing bytes.
    pub fn decode(bytes: &[u8]) -> Result<SignedPacket, CodecError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != PACKET_MAGIC {
            return Err(CodecError::BadMagic {
                expected: String::from_utf8_lossy(PACKET_MAGIC).into_owned(),
            });
        }
        let uri_len = r.u16()? as usize;
        let uri_bytes = r.take(uri_len)?.to_vec();
        let group_uri = String::from_utf8(uri_bytes).map_err(|_| CodecError::BadUtf8)?;
        let group_id = r.digest()?;
        let seq = r.u64()?;
        let payload_len = r.u32()? as usize;
        let payload = r.take(payload_len)?.to_vec();
        let certificate = if r.flag()? {
            Some(r.certificate()?)
        } else {
            None
        };
        let signer_pub = r.key()?;
        let counter = if r.flag()? { Some(r.u64()?) } else { None };
        let signature = r.sig()?;
        if r.pos != bytes.len() {
            return Err(CodecError::TrailingBytes);
        }
        Ok(SignedPacket {
            group_uri,
            group_id,
            seq,
            payload,
            certificate,
            signer_pub,
            counter,
            signature,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.bytes.len() - self.pos < n {
            return Err(CodecError::Truncated {
                needed: n - (self.bytes.len() - self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, CodecError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CodecError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn digest(&mut self) -> Result<Digest, CodecError> {
        Ok(self.take(32)?.try_into().unwrap())
    }

    fn key(&mut self) -> Result<[u8; KEY_LEN], CodecError> {
        Ok(self.take(KEY_LEN)?.try_into().unwrap())
    }

    fn sig(&mut self) -> Result<[u8; SIG_LEN], CodecError> {
        Ok(self.take(SIG_LEN)?.try_into().unwrap())
    }

    fn flag(&mut self) -> Result<bool, CodecError> {
        match self.take(1)?[0] {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(CodecError::BadFlag(b)),
        }
    }

    fn certificate(&mut self) -> Result<SourceCertificate, CodecError> {
        let source_id = self.digest()?;
        let group_id = self.digest()?;
        let issuer_pub = self.key()?;
        let issuer_counter = self.u64()?;
        let lifetime = if self.flag()? {
            Some(Lifetime {
                not_before: self.u64()?,
                not_after: self.u64()?,
            })
        } else {
            None
        };
        let signature = self.sig()?;
        Ok(SourceCertificate {
            source_id,
            group_id,
            issuer_pub,
            issuer_counter,
            lifetime,
            signature,
        })
    }
}
