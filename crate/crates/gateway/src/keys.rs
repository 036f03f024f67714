use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};

use rand::RngCore;
use sha2::{Digest, Sha256};
use subtle::ConstantTimeEq;
use tag_protocol::{AuthFailure, Authenticator, Grant, Scopes};

pub const SECRET_BYTES: usize = 32;

fn digest(secret: &str) -> [u8; 32] {
    Sha256::digest(secret.as_bytes()).into()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredKey {
    /// SHA-256 of the hex secret; the secret itself is never kept.
    pub hash: [u8; 32],
    pub scopes: Scopes,
    pub revoked: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyStore {
    keys: BTreeMap<String, StoredKey>,
}

impl KeyStore {
    /// Creates a key with a fresh random secret and returns the secret.
    pub fn generate(&mut self, key_id: &str, scopes: Scopes, rng: &mut impl RngCore) -> String {
        let mut raw = [0u8; SECRET_BYTES];
        rng.fill_bytes(&mut raw);
        let secret = hex::encode(raw);
        self.insert_secret(key_id, &secret, scopes);
        secret
    }

    pub fn insert_secret(&mut self, key_id: &str, secret: &str, scopes: Scopes) {
        self.insert_hash(key_id, digest(secret), scopes, false);
    }

    pub fn insert_hash(&mut self, key_id: &str, hash: [u8; 32], scopes: Scopes, revoked: bool) {
        self.keys
            .insert(key_id.to_string(), StoredKey { hash, scopes, revoked });
    }

    /// Returns false if there is no such key.
    pub fn revoke(&mut self, key_id: &str) -> bool {
        match self.keys.get_mut(key_id) {
            Some(k) => {
                k.revoked = true;
                true
            }
            None => false,
        }
    }

    pub fn get(&self, key_id: &str) -> Option<&StoredKey> {
        self.keys.get(key_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &StoredKey)> {
        self.keys.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn verify(&self, credentials: &str) -> Result<Grant, AuthFailure> {
        let (id, secret) = credentials.split_once(':').unwrap_or((credentials, ""));
        let presented = digest(secret);
        // Unknown ids still pay for a comparison so they look like bad secrets.
        let (stored, known) = match self.keys.get(id) {
            Some(k) => (k.hash, true),
            None => ([0u8; 32], false),
        };
        let matches: bool = presented.ct_eq(&stored).into();
        if !(known && matches) {
            return Err(AuthFailure::BadKey);
        }
        let key = &self.keys[id];
        if key.revoked {
            return Err(AuthFailure::Revoked);
        }
        Ok(Grant {
            key_id: id.to_string(),
            scopes: key.scopes,
        })
    }
}

/// A [`KeyStore`] shared between sessions. Writers replace the whole store,
/// so sessions never observe a half-applied change.
#[derive(Debug, Clone, Default)]
pub struct SharedKeys(Arc<RwLock<Arc<KeyStore>>>);

impl SharedKeys {
    pub fn new(store: KeyStore) -> Self {
        Self(Arc::new(RwLock::new(Arc::new(store))))
    }

    pub fn snapshot(&self) -> Arc<KeyStore> {
        self.0.read().expect("key store lock").clone()
    }

    pub fn replace(&self, store: KeyStore) {
        *self.0.write().expect("key store lock") = Arc::new(store);
    }

    pub fn update(&self, f: impl FnOnce(&mut KeyStore)) {
        let mut guard = self.0.write().expect("key store lock");
        let mut next = (**guard).clone();
        f(&mut next);
        *guard = Arc::new(next);
    }

    pub fn revoke(&self, key_id: &str) -> bool {
        let mut found = false;
        self.update(|s| found = s.revoke(key_id));
        found
    }
}

impl Authenticator for SharedKeys {
    fn authenticate(&self, credentials: &str) -> Result<Grant, AuthFailure> {
        self.snapshot().verify(credentials)
    }

    fn check(&self, grant: &Grant) -> Result<(), AuthFailure> {
        match self.snapshot().get(&grant.key_id) {
            Some(k) if !k.revoked => Ok(()),
            _ => Err(AuthFailure::Revoked),
        }
    }
}
