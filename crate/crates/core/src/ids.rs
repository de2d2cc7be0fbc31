//! Identifiers, fingerprints and the pinned pseudo-random primitives.

use std::fmt;
use std::hash::Hasher;
use std::str::FromStr;

use parking_lot::Mutex;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// 128-bit dataset identifier, rendered as 32 lowercase hex characters.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DatasetId(u128);

impl DatasetId {
    pub const fn from_u128(v: u128) -> Self {
        DatasetId(v)
    }

    pub fn as_u128(self) -> u128 {
        self.0
    }
}

impl fmt::Display for DatasetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:032x}", self.0)
    }
}

impl fmt::Debug for DatasetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DatasetId({self})")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid dataset id {0:?}: expected 32 hex characters")]
pub struct BadId(pub String);

impl FromStr for DatasetId {
    type Err = BadId;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() != 32 || !s.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(BadId(s.to_string()));
        }
        u128::from_str_radix(s, 16)
            .map(DatasetId)
            .map_err(|_| BadId(s.to_string()))
    }
}

impl Serialize for DatasetId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DatasetId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Identifier of a data object, unique within its dataset.
///
/// Explicit objects use their file stem; virtual objects get fresh 128-bit hex
/// ids or ids derived from their source (window segments).
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObjectId(pub String);

impl ObjectId {
    pub fn new(s: impl Into<String>) -> Self {
        ObjectId(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl From<&str> for ObjectId {
    fn from(s: &str) -> Self {
        ObjectId(s.to_string())
    }
}

/// 64-bit FNV-1a content fingerprint, serialized as 16 hex characters.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Fingerprint(pub u64);

impl Fingerprint {
    pub fn of(bytes: &[u8]) -> Self {
        Fingerprint(fnv1a64(bytes))
    }
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl fmt::Debug for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fingerprint({self})")
    }
}

impl Serialize for Fingerprint {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Fingerprint {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        u64::from_str_radix(&s, 16)
            .map(Fingerprint)
            .map_err(serde::de::Error::custom)
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = fnv::FnvHasher::default();
    h.write(bytes);
    h.finish()
}

/// The splitmix64 output function, used as a seed mixer.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for per-object randomness: stable under reordering of objects.
pub fn object_seed(dataset_seed: u64, object_id: &ObjectId) -> u64 {
    splitmix64(dataset_seed ^ fnv1a64(object_id.as_str().as_bytes()))
}

/// Source of fresh identifiers. Random by default; seedable so that two
/// sessions replaying the same operations allocate the same ids.
pub struct IdGen {
    rng: Mutex<ChaCha20Rng>,
}

impl IdGen {
    pub fn random() -> Self {
        IdGen {
            rng: Mutex::new(ChaCha20Rng::from_entropy()),
        }
    }

    pub fn seeded(seed: u64) -> Self {
        IdGen {
            rng: Mutex::new(ChaCha20Rng::seed_from_u64(seed)),
        }
    }

    fn next_u128(&self) -> u128 {
        let mut rng = self.rng.lock();
        ((rng.next_u64() as u128) << 64) | rng.next_u64() as u128
    }

    pub fn dataset_id(&self) -> DatasetId {
        DatasetId(self.next_u128())
    }

    pub fn object_id(&self) -> ObjectId {
        ObjectId(format!("{:032x}", self.next_u128()))
    }
}

impl Default for IdGen {
    fn default() -> Self {
        Self::random()
    }
}

impl fmt::Debug for IdGen {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("IdGen")
    }
}
