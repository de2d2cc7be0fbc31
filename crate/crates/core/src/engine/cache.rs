//! Content-addressed store of node outputs with an LRU byte budget.
//!
//! On disk every entry lives in `cache/<first 2 hex>/<hex>.bin`; `index.log`
//! records puts, hits and deletions so recency survives restarts.

use std::collections::HashMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Weak};

use chrono::{DateTime, TimeZone, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub const DEFAULT_BUDGET: u64 = 1 << 30;

/// SHA-256 digest identifying a plan node's output.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CacheKey(pub [u8; 32]);

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl fmt::Debug for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CacheKey({self})")
    }
}

impl FromStr for CacheKey {
    type Err = hex::FromHexError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out)?;
        Ok(CacheKey(out))
    }
}

impl Serialize for CacheKey {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CacheKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub entries: u64,
    pub bytes: u64,
    pub budget: u64,
    pub hits: u64,
    pub misses: u64,
    pub evictions: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EntryInfo {
    pub cache_key: CacheKey,
    pub byte_size: u64,
    pub created_at: DateTime<Utc>,
    pub last_hit_at: DateTime<Utc>,
    pub hit_count: u64,
}

struct Entry {
    info: EntryInfo,
    /// Monotonic recency; ties in wall-clock time are common.
    tick: u64,
    pins: usize,
    mem: Option<Arc<Vec<u8>>>,
}

#[derive(Default)]
struct Index {
    entries: HashMap<CacheKey, Entry>,
    bytes: u64,
    tick: u64,
    hits: u64,
    misses: u64,
    evictions: u64,
}

pub struct Cache {
    dir: Option<PathBuf>,
    budget: Mutex<u64>,
    index: Mutex<Index>,
    log: Option<Mutex<File>>,
    flights: Mutex<HashMap<CacheKey, Weak<Mutex<()>>>>,
}

/// Held while a node is being computed; other requests for the same key wait.
pub struct Flight {
    _guard: parking_lot::ArcMutexGuard<parking_lot::RawMutex, ()>,
}

/// Keeps an entry from being evicted while its bytes are read.
struct Pin<'a> {
    cache: &'a Cache,
    key: CacheKey,
}

impl Drop for Pin<'_> {
    fn drop(&mut self) {
        let mut ix = self.cache.index.lock();
        if let Some(e) = ix.entries.get_mut(&self.key) {
            e.pins -= 1;
        }
        let budget = *self.cache.budget.lock();
        self.cache.evict_locked(&mut ix, budget);
    }
}

fn millis(t: DateTime<Utc>) -> i64 {
    t.timestamp_millis()
}

fn from_millis(ms: i64) -> DateTime<Utc> {
    Utc.timestamp_millis_opt(ms).single().unwrap_or_default()
}

impl Cache {
    pub fn in_memory(budget: u64) -> Self {
        Cache {
            dir: None,
            budget: Mutex::new(budget),
            index: Mutex::new(Index::default()),
            log: None,
            flights: Mutex::new(HashMap::new()),
        }
    }

    /// Opens a persistent cache in `dir`, rebuilding the index from
    /// `index.log` and dropping entries whose file is gone.
    pub fn open(dir: &Path, budget: u64) -> std::io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        let log_path = dir.join("index.log");
        let mut ix = Index::default();
        if let Ok(f) = File::open(&log_path) {
            for line in BufReader::new(f).lines() {
                let line = line?;
                let parts: Vec<&str> = line.split(' ').collect();
                let Some(key) = parts.get(1).and_then(|k| k.parse::<CacheKey>().ok()) else {
                    continue;
                };
                match parts.as_slice() {
                    ["put", _, size, at] => {
                        let (Ok(size), Ok(at)) = (size.parse::<u64>(), at.parse::<i64>()) else { continue };
                        ix.tick += 1;
                        let info = EntryInfo {
                            cache_key: key,
                            byte_size: size,
                            created_at: from_millis(at),
                            last_hit_at: from_millis(at),
                            hit_count: 0,
                        };
                        if let Some(old) = ix.entries.insert(key, Entry { info, tick: ix.tick, pins: 0, mem: None }) {
                            ix.bytes -= old.info.byte_size;
                        }
                        ix.bytes += size;
                    }
                    ["hit", _, at] => {
                        ix.tick += 1;
                        let tick = ix.tick;
                        if let (Some(e), Ok(at)) = (ix.entries.get_mut(&key), at.parse::<i64>()) {
                            e.info.last_hit_at = from_millis(at);
                            e.info.hit_count += 1;
                            e.tick = tick;
                        }
                    }
                    ["del", _] => {
                        if let Some(old) = ix.entries.remove(&key) {
                            ix.bytes -= old.info.byte_size;
                        }
                    }
                    _ => {}
                }
            }
        }
        let missing: Vec<CacheKey> = ix
            .entries
            .keys()
            .filter(|k| !Self::entry_path(dir, k).exists())
            .copied()
            .collect();
        for k in missing {
            let old = ix.entries.remove(&k).expect("listed");
            ix.bytes -= old.info.byte_size;
        }
        // Compact the log to one put and the latest hit per entry.
        let mut sorted: Vec<&Entry> = ix.entries.values().collect();
        sorted.sort_by_key(|e| e.tick);
        let mut text = String::new();
        for e in &sorted {
            let i = &e.info;
            text.push_str(&format!("put {} {} {}\n", i.cache_key, i.byte_size, millis(i.created_at)));
            for _ in 0..i.hit_count.min(1) {
                text.push_str(&format!("hit {} {}\n", i.cache_key, millis(i.last_hit_at)));
            }
        }
        let tmp = dir.join("index.log.tmp");
        std::fs::write(&tmp, text)?;
        std::fs::rename(&tmp, &log_path)?;
        let log = OpenOptions::new().append(true).open(&log_path)?;
        let cache = Cache {
            dir: Some(dir.to_path_buf()),
            budget: Mutex::new(budget),
            index: Mutex::new(ix),
            log: Some(Mutex::new(log)),
            flights: Mutex::new(HashMap::new()),
        };
        cache.evict(None);
        Ok(cache)
    }

    fn entry_path(dir: &Path, key: &CacheKey) -> PathBuf {
        let hex = key.to_string();
        dir.join(&hex[..2]).join(format!("{hex}.bin"))
    }

    fn log_line(&self, line: String) {
        if let Some(log) = &self.log {
            if let Err(e) = log.lock().write_all(line.as_bytes()) {
                tracing::warn!(error = %e, "cache index log write failed");
            }
        }
    }

    pub fn budget(&self) -> u64 {
        *self.budget.lock()
    }

    pub fn set_budget(&self, budget: u64) {
        *self.budget.lock() = budget;
        self.evict(None);
    }

    pub fn stats(&self) -> CacheStats {
        let ix = self.index.lock();
        CacheStats {
            entries: ix.entries.len() as u64,
            bytes: ix.bytes,
            budget: self.budget(),
            hits: ix.hits,
            misses: ix.misses,
            evictions: ix.evictions,
        }
    }

    pub fn entries(&self) -> Vec<EntryInfo> {
        let ix = self.index.lock();
        let mut out: Vec<(u64, EntryInfo)> = ix.entries.values().map(|e| (e.tick, e.info.clone())).collect();
        out.sort_by_key(|(t, _)| *t);
        out.into_iter().map(|(_, i)| i).collect()
    }

    pub fn contains(&self, key: &CacheKey) -> bool {
        self.index.lock().entries.contains_key(key)
    }

    /// Looks a key up for a materialization run, counting a hit or a miss.
    pub fn lookup(&self, key: &CacheKey) -> bool {
        let now = Utc::now();
        let mut ix = self.index.lock();
        ix.tick += 1;
        let tick = ix.tick;
        let found = match ix.entries.get_mut(key) {
            Some(e) => {
                e.tick = tick;
                e.info.last_hit_at = now;
                e.info.hit_count += 1;
                true
            }
            None => false,
        };
        if found {
            ix.hits += 1;
        } else {
            ix.misses += 1;
        }
        drop(ix);
        if found {
            self.log_line(format!("hit {key} {}\n", millis(now)));
        }
        found
    }

    /// Reads an entry's bytes without touching statistics.
    pub fn load(&self, key: &CacheKey) -> std::io::Result<Option<Arc<Vec<u8>>>> {
        let pin = {
            let mut ix = self.index.lock();
            let Some(e) = ix.entries.get_mut(key) else {
                return Ok(None);
            };
            if let Some(m) = &e.mem {
                return Ok(Some(m.clone()));
            }
            e.pins += 1;
            Pin { cache: self, key: *key }
        };
        let dir = self.dir.as_ref().expect("disk entries have a directory");
        let bytes = std::fs::read(Self::entry_path(dir, key));
        drop(pin);
        match bytes {
            Ok(b) => Ok(Some(Arc::new(b))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                self.remove(key);
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }

    /// Stores an entry, then evicts down to the budget. Returns the number of
    /// bytes written.
    pub fn put(&self, key: CacheKey, bytes: Vec<u8>) -> std::io::Result<u64> {
        let size = bytes.len() as u64;
        let now = Utc::now();
        let mem = match &self.dir {
            Some(dir) => {
                let path = Self::entry_path(dir, &key);
                std::fs::create_dir_all(path.parent().expect("entry files sit in a shard dir"))?;
                let tmp = path.with_extension(format!("tmp{}", std::process::id()));
                std::fs::write(&tmp, &bytes)?;
                std::fs::rename(&tmp, &path)?;
                None
            }
            None => Some(Arc::new(bytes)),
        };
        {
            let mut ix = self.index.lock();
            ix.tick += 1;
            let entry = Entry {
                info: EntryInfo {
                    cache_key: key,
                    byte_size: size,
                    created_at: now,
                    last_hit_at: now,
                    hit_count: 0,
                },
                tick: ix.tick,
                pins: 0,
                mem,
            };
            if let Some(old) = ix.entries.insert(key, entry) {
                ix.bytes -= old.info.byte_size;
            }
            ix.bytes += size;
        }
        self.log_line(format!("put {key} {size} {}\n", millis(now)));
        self.evict(None);
        Ok(size)
    }

    pub fn remove(&self, key: &CacheKey) -> bool {
        let removed = {
            let mut ix = self.index.lock();
            match ix.entries.remove(key) {
                Some(e) => {
                    ix.bytes -= e.info.byte_size;
                    true
                }
                None => false,
            }
        };
        if removed {
            if let Some(dir) = &self.dir {
                let _ = std::fs::remove_file(Self::entry_path(dir, key));
            }
            self.log_line(format!("del {key}\n"));
        }
        removed
    }

    /// Evicts least recently hit, unpinned entries until the cache holds at
    /// most `target` bytes (the budget when `None`). Returns the count.
    pub fn evict(&self, target: Option<u64>) -> u64 {
        let target = target.unwrap_or_else(|| self.budget());
        let mut ix = self.index.lock();
        self.evict_locked(&mut ix, target)
    }

    fn evict_locked(&self, ix: &mut Index, target: u64) -> u64 {
        if ix.bytes <= target {
            return 0;
        }
        let mut order: Vec<(u64, CacheKey)> = ix
            .entries
            .iter()
            .filter(|(_, e)| e.pins == 0)
            .map(|(k, e)| (e.tick, *k))
            .collect();
        order.sort();
        let mut n = 0;
        for (_, key) in order {
            if ix.bytes <= target {
                break;
            }
            let e = ix.entries.remove(&key).expect("listed");
            ix.bytes -= e.info.byte_size;
            ix.evictions += 1;
            n += 1;
            if let Some(dir) = &self.dir {
                let _ = std::fs::remove_file(Self::entry_path(dir, &key));
            }
            self.log_line(format!("del {key}\n"));
        }
        n
    }

    /// Serializes computations of one key across threads.
    pub fn flight(&self, key: &CacheKey) -> Flight {
        let lock = {
            let mut flights = self.flights.lock();
            flights.retain(|_, w| w.strong_count() > 0);
            match flights.get(key).and_then(Weak::upgrade) {
                Some(l) => l,
                None => {
                    let l = Arc::new(Mutex::new(()));
                    flights.insert(*key, Arc::downgrade(&l));
                    l
                }
            }
        };
        Flight {
            _guard: lock.lock_arc(),
        }
    }
}
