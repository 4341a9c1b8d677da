use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

/// `MAJOR.MINOR.PATCH`, ordered lexicographically on the three components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Version {
    pub major: u64,
    pub minor: u64,
    pub patch: u64,
}

impl Version {
    /// Version assigned on first registration.
    pub const INITIAL: Version = Version::new(0, 1, 0);

    pub const fn new(major: u64, minor: u64, patch: u64) -> Self {
        Version {
            major,
            minor,
            patch,
        }
    }

    pub fn parse(s: &str) -> Result<Self, Error> {
        let bad = || Error::InvalidRecord(format!("invalid version string '{s}'"));
        let mut parts = s.split('.');
        let mut next = || -> Result<u64, Error> {
            let p = parts.next().ok_or_else(bad)?;
            // Reject signs, whitespace and leading zeros ("01").
            if p.is_empty() || !p.bytes().all(|b| b.is_ascii_digit()) || (p.len() > 1 && p.starts_with('0')) {
                return Err(bad());
            }
            p.parse().map_err(|_| bad())
        };
        let v = Version::new(next()?, next()?, next()?);
        if parts.next().is_some() {
            return Err(bad());
        }
        Ok(v)
    }

    pub fn bump_patch(self) -> Self {
        Version::new(self.major, self.minor, self.patch + 1)
    }
}

/// `None` starts a lineage at 0.1.0; anything else bumps PATCH.
pub fn next_version(current: Option<Version>) -> Version {
    match current {
        None => Version::INITIAL,
        Some(v) => v.bump_patch(),
    }
}

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}.{}", self.major, self.minor, self.patch)
    }
}

impl FromStr for Version {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Version::parse(s)
    }
}

impl Serialize for Version {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Version {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Version::parse(&s).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn next_version_rules() {
        assert_eq!(next_version(None).to_string(), "0.1.0");
        assert_eq!(next_version(Some(Version::parse("0.1.0").unwrap())).to_string(), "0.1.1");
        assert_eq!(next_version(Some(Version::parse("2.3.9").unwrap())).to_string(), "2.3.10");
    }

    #[test]
    fn rejects_bad_grammar() {
        for s in ["", "1", "1.2", "1.2.3.4", "a.b.c", "1.-2.3", "01.2.3", " 1.2.3", "1..3"] {
            assert!(Version::parse(s).is_err(), "{s:?} should not parse");
        }
    }

    #[test]
    fn order_is_componentwise() {
        let v = |s: &str| Version::parse(s).unwrap();
        assert!(v("0.1.10") > v("0.1.9"));
        assert!(v("1.0.0") > v("0.99.99"));
    }

    proptest! {
        #[test]
        fn parse_render_roundtrip(a in 0u64..10_000, b in 0u64..10_000, c in 0u64..10_000) {
            let v = Version::new(a, b, c);
            prop_assert_eq!(Version::parse(&v.to_string()).unwrap(), v);
        }
    }
}
