//! Ed25519 author keys, detached signatures, and the node keyring.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use rand::rngs::OsRng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub const KEYRING_SCHEMA: &str = "por.keyring.v1";
pub const KEY_SCHEMA: &str = "por.key.v1";

#[derive(Debug, Error)]
pub enum KeyError {
    #[error("invalid key material: {0}")]
    InvalidKey(String),
    #[error("key file {path}: {message}")]
    File { path: String, message: String },
}

fn decode_fixed<const N: usize>(s: &str) -> Result<[u8; N], KeyError> {
    let bytes = hex::decode(s).map_err(|e| KeyError::InvalidKey(e.to_string()))?;
    // Only lowercase hex is canonical; anything else would re-encode differently.
    if hex::encode(&bytes) != s {
        return Err(KeyError::InvalidKey("hex must be lowercase".into()));
    }
    bytes
        .try_into()
        .map_err(|b: Vec<u8>| KeyError::InvalidKey(format!("expected {N} bytes, got {}", b.len())))
}

/// Detached Ed25519 signature, lowercase hex on the wire.
#[derive(Clone, PartialEq, Eq)]
pub struct AuthorSignature([u8; 64]);

impl AuthorSignature {
    pub fn from_hex(s: &str) -> Result<Self, KeyError> {
        decode_fixed::<64>(s).map(AuthorSignature)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for AuthorSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AuthorSignature({})", self.to_hex())
    }
}

impl Serialize for AuthorSignature {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for AuthorSignature {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        AuthorSignature::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct AuthorPublicKey(VerifyingKey);

impl AuthorPublicKey {
    pub fn from_hex(s: &str) -> Result<Self, KeyError> {
        let bytes = decode_fixed::<32>(s)?;
        VerifyingKey::from_bytes(&bytes)
            .map(AuthorPublicKey)
            .map_err(|e| KeyError::InvalidKey(e.to_string()))
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0.as_bytes())
    }

    pub fn verify(&self, message: &[u8], signature: &AuthorSignature) -> bool {
        let sig = ed25519_dalek::Signature::from_bytes(&signature.0);
        self.0.verify(message, &sig).is_ok()
    }
}

impl fmt::Debug for AuthorPublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AuthorPublicKey({})", self.to_hex())
    }
}

/// An author's signing key.
#[derive(Clone)]
pub struct AuthorKey(SigningKey);

impl AuthorKey {
    pub fn generate() -> Self {
        AuthorKey(SigningKey::generate(&mut OsRng))
    }

    pub fn from_seed(seed: [u8; 32]) -> Self {
        AuthorKey(SigningKey::from_bytes(&seed))
    }

    pub fn from_hex(s: &str) -> Result<Self, KeyError> {
        decode_fixed::<32>(s).map(Self::from_seed)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0.to_bytes())
    }

    pub fn public_key(&self) -> AuthorPublicKey {
        AuthorPublicKey(self.0.verifying_key())
    }

    pub fn sign(&self, message: &[u8]) -> AuthorSignature {
        AuthorSignature(self.0.sign(message).to_bytes())
    }
}

impl fmt::Debug for AuthorKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AuthorKey({})", self.public_key().to_hex())
    }
}

/// Looks up the registered public key of an author.
pub trait KeyResolver {
    fn public_key(&self, author_ref: &str) -> Option<AuthorPublicKey>;
}

#[derive(Debug, Clone)]
struct KeyringEntry {
    public: AuthorPublicKey,
    secret: Option<AuthorKey>,
}

#[derive(Debug, Clone, Default)]
pub struct Keyring {
    entries: BTreeMap<String, KeyringEntry>,
}

#[derive(Serialize, Deserialize)]
struct KeyringDoc {
    schema: String,
    authors: Vec<KeyringDocEntry>,
}

#[derive(Serialize, Deserialize)]
struct KeyringDocEntry {
    author_ref: String,
    public_key: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    secret_key: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct KeyDoc {
    schema: String,
    author_ref: String,
    secret_key: String,
}

impl Keyring {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, author_ref: impl Into<String>, public: AuthorPublicKey) {
        self.entries
            .insert(author_ref.into(), KeyringEntry { public, secret: None });
    }

    /// Registers a key the node may sign with on the author's behalf.
    pub fn register_signing(&mut self, author_ref: impl Into<String>, key: AuthorKey) {
        self.entries.insert(
            author_ref.into(),
            KeyringEntry {
                public: key.public_key(),
                secret: Some(key),
            },
        );
    }

    pub fn signing_key(&self, author_ref: &str) -> Option<&AuthorKey> {
        self.entries.get(author_ref)?.secret.as_ref()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Same keyring with every secret key removed.
    pub fn public_only(&self) -> Keyring {
        Keyring {
            entries: self
                .entries
                .iter()
                .map(|(k, e)| {
                    (
                        k.clone(),
                        KeyringEntry {
                            public: e.public.clone(),
                            secret: None,
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, KeyError> {
        let doc: KeyringDoc =
            serde_json::from_str(text).map_err(|e| KeyError::InvalidKey(e.to_string()))?;
        if doc.schema != KEYRING_SCHEMA {
            return Err(KeyError::InvalidKey(format!("unexpected schema {:?}", doc.schema)));
        }
        let mut ring = Keyring::new();
        for entry in doc.authors {
            let public = AuthorPublicKey::from_hex(&entry.public_key)?;
            match entry.secret_key {
                Some(secret) => {
                    let key = AuthorKey::from_hex(&secret)?;
                    if key.public_key() != public {
                        return Err(KeyError::InvalidKey(format!(
                            "secret key of {} does not match its public key",
                            entry.author_ref
                        )));
                    }
                    ring.register_signing(entry.author_ref, key);
                }
                None => ring.register(entry.author_ref, public),
            }
        }
        Ok(ring)
    }

    pub fn to_json(&self) -> String {
        let doc = KeyringDoc {
            schema: KEYRING_SCHEMA.into(),
            authors: self
                .entries
                .iter()
                .map(|(author_ref, e)| KeyringDocEntry {
                    author_ref: author_ref.clone(),
                    public_key: e.public.to_hex(),
                    secret_key: e.secret.as_ref().map(AuthorKey::to_hex),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("keyring serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, KeyError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| KeyError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }
}

impl KeyResolver for Keyring {
    fn public_key(&self, author_ref: &str) -> Option<AuthorPublicKey> {
        self.entries.get(author_ref).map(|e| e.public.clone())
    }
}

/// Reads a `por.key.v1` document: `(author_ref, key)`.
pub fn load_key_file(path: impl AsRef<Path>) -> Result<(String, AuthorKey), KeyError> {
    let path = path.as_ref();
    let err = |message: String| KeyError::File {
        path: path.display().to_string(),
        message,
    };
    let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    let doc: KeyDoc = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
    if doc.schema != KEY_SCHEMA {
        return Err(err(format!("unexpected schema {:?}", doc.schema)));
    }
    Ok((doc.author_ref, AuthorKey::from_hex(&doc.secret_key)?))
}

pub fn key_file_json(author_ref: &str, key: &AuthorKey) -> String {
    serde_json::to_string_pretty(&KeyDoc {
        schema: KEY_SCHEMA.into(),
        author_ref: author_ref.into(),
        secret_key: key.to_hex(),
    })
    .expect("key serializes")
}
