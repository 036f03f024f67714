use std::fmt;

use subtle::ConstantTimeEq;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scope {
    ReadTags,
    WriteTags,
    Subscribe,
    SubmitMission,
}

impl Scope {
    pub const ALL: [Scope; 4] = [
        Scope::ReadTags,
        Scope::WriteTags,
        Scope::Subscribe,
        Scope::SubmitMission,
    ];

    fn bit(self) -> u8 {
        1 << (self as u8)
    }

    pub fn name(self) -> &'static str {
        match self {
            Scope::ReadTags => "ReadTags",
            Scope::WriteTags => "WriteTags",
            Scope::Subscribe => "Subscribe",
            Scope::SubmitMission => "SubmitMission",
        }
    }

    pub fn parse(s: &str) -> Option<Scope> {
        Self::ALL.into_iter().find(|x| x.name() == s)
    }
}

/// A set of [`Scope`]s.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Scopes(u8);

impl Scopes {
    pub const NONE: Scopes = Scopes(0);
    pub const ALL: Scopes = Scopes(0b1111);

    pub fn from_bits(bits: u8) -> Scopes {
        Scopes(bits & Self::ALL.0)
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn contains(self, s: Scope) -> bool {
        self.0 & s.bit() != 0
    }

    pub fn with(self, s: Scope) -> Scopes {
        Scopes(self.0 | s.bit())
    }

    /// Parses a comma-separated list such as `ReadTags,Subscribe`.
    pub fn parse(s: &str) -> Option<Scopes> {
        s.split(',')
            .map(str::trim)
            .filter(|x| !x.is_empty())
            .try_fold(Scopes::NONE, |acc, x| Scope::parse(x).map(|s| acc.with(s)))
    }
}

impl FromIterator<Scope> for Scopes {
    fn from_iter<I: IntoIterator<Item = Scope>>(iter: I) -> Self {
        iter.into_iter().fold(Scopes::NONE, Scopes::with)
    }
}

impl fmt::Display for Scopes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = Scope::ALL
            .into_iter()
            .filter(|s| self.contains(*s))
            .map(Scope::name)
            .collect();
        f.write_str(&names.join(","))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuthFailure {
    /// Unknown key id or wrong secret; callers cannot tell which.
    BadKey,
    Revoked,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grant {
    pub key_id: String,
    pub scopes: Scopes,
}

/// Verifies `key_id:secret` credentials.
pub trait Authenticator: Send + Sync {
    fn authenticate(&self, credentials: &str) -> Result<Grant, AuthFailure>;

    /// Re-checked before every request so revocation takes effect mid-session.
    fn check(&self, _grant: &Grant) -> Result<(), AuthFailure> {
        Ok(())
    }
}

/// Accepts any credentials with every scope. For loopback test rigs.
#[derive(Debug, Clone, Copy, Default)]
pub struct AllowAll;

impl Authenticator for AllowAll {
    fn authenticate(&self, credentials: &str) -> Result<Grant, AuthFailure> {
        let key_id = credentials.split(':').next().unwrap_or_default();
        Ok(Grant {
            key_id: key_id.to_string(),
            scopes: Scopes::ALL,
        })
    }
}

/// One shared device credential.
#[derive(Debug, Clone)]
pub struct SingleKey {
    key_id: String,
    secret: String,
    scopes: Scopes,
}

impl SingleKey {
    pub fn new(key_id: impl Into<String>, secret: impl Into<String>, scopes: Scopes) -> Self {
        Self {
            key_id: key_id.into(),
            secret: secret.into(),
            scopes,
        }
    }

    pub fn credentials(&self) -> String {
        format!("{}:{}", self.key_id, self.secret)
    }
}

impl Authenticator for SingleKey {
    fn authenticate(&self, credentials: &str) -> Result<Grant, AuthFailure> {
        let (id, secret) = credentials.split_once(':').ok_or(AuthFailure::BadKey)?;
        let id_ok = id.as_bytes().ct_eq(self.key_id.as_bytes());
        let secret_ok = secret.as_bytes().ct_eq(self.secret.as_bytes());
        if bool::from(id_ok & secret_ok) {
            Ok(Grant {
                key_id: self.key_id.clone(),
                scopes: self.scopes,
            })
        } else {
            Err(AuthFailure::BadKey)
        }
    }
}
