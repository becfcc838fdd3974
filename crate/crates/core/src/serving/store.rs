//! In-memory cache store with LRU eviction by user count.
//!
//! Concurrent readers of distinct users' caches proceed under a shared
//! lock; inserting a user's cache swaps an Arc under the write lock, so
//! readers observe either the old cache or the new one, never a partial
//! state. Recency is tracked with a lock-free logical clock.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use super::cache::{build_cache, state_digest, KVCache};
use crate::error::Result;
use crate::model::{ModelConfig, Parameters};
use crate::sequence::{ExtractionStrategy, LifecycleSequence};

struct Entry {
    cache: Arc<KVCache>,
    last_used: AtomicU64,
}

pub struct CacheStore {
    capacity_users: usize,
    clock: AtomicU64,
    entries: RwLock<HashMap<(u64, u16), Entry>>,
}

impl CacheStore {
    /// `capacity_users` bounds the number of distinct users held.
    pub fn new(capacity_users: usize) -> Self {
        assert!(capacity_users >= 1);
        CacheStore {
            capacity_users,
            clock: AtomicU64::new(0),
            entries: RwLock::new(HashMap::new()),
        }
    }

    fn tick(&self) -> u64 {
        self.clock.fetch_add(1, Ordering::Relaxed) + 1
    }

    pub fn get(&self, user_id: u64, scenario: u16) -> Option<Arc<KVCache>> {
        let entries = self.entries.read().expect("store lock poisoned");
        let entry = entries.get(&(user_id, scenario))?;
        entry.last_used.store(self.tick(), Ordering::Relaxed);
        Some(Arc::clone(&entry.cache))
    }

    /// Insert (or replace) a user's cache, evicting the least recently used
    /// user's entries if the user count would exceed capacity.
    pub fn insert(&self, cache: KVCache) {
        let stamp = self.tick();
        let mut entries = self.entries.write().expect("store lock poisoned");
        let key = (cache.user_id, cache.scenario);
        entries.insert(key, Entry { cache: Arc::new(cache), last_used: AtomicU64::new(stamp) });

        loop {
            let mut per_user: HashMap<u64, u64> = HashMap::new();
            for ((user, _), e) in entries.iter() {
                let used = e.last_used.load(Ordering::Relaxed);
                per_user.entry(*user).and_modify(|u| *u = (*u).max(used)).or_insert(used);
            }
            if per_user.len() <= self.capacity_users {
                break;
            }
            let victim = per_user
                .iter()
                .filter(|(u, _)| **u != key.0)
                .min_by_key(|(_, used)| **used)
                .map(|(u, _)| *u)
                .expect("over capacity implies another user exists");
            entries.retain(|(user, _), _| *user != victim);
        }
    }

    /// Fetch a fresh cache, building (and storing) one when missing or stale.
    pub fn get_or_build(
        &self,
        user: &LifecycleSequence,
        scenario: u16,
        params: &Parameters,
        config: &ModelConfig,
        strategies: &[ExtractionStrategy],
    ) -> Result<Arc<KVCache>> {
        let live = state_digest(params, config, strategies);
        if let Some(hit) = self.get(user.user_id, scenario) {
            if hit.digest == live {
                return Ok(hit);
            }
        }
        let built = build_cache(user, scenario, params, config, strategies)?;
        self.insert(built);
        Ok(self.get(user.user_id, scenario).expect("just inserted"))
    }

    /// Number of distinct users currently held.
    pub fn user_count(&self) -> usize {
        let entries = self.entries.read().expect("store lock poisoned");
        let mut users: Vec<u64> = entries.keys().map(|(u, _)| *u).collect();
        users.sort_unstable();
        users.dedup();
        users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.read().expect("store lock poisoned").is_empty()
    }
}
