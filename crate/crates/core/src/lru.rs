//! Fully associative LRU set.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

/// Keys ordered by recency. Values live elsewhere; stored data is immutable
/// after load, so residency is all a cache needs to track.
#[derive(Debug, Clone)]
pub struct LruSet<K> {
    capacity: usize,
    clock: u64,
    stamp: HashMap<K, u64>,
    order: BTreeMap<u64, K>,
}

impl<K: Copy + Eq + Hash> LruSet<K> {
    pub fn new(capacity: usize) -> Self {
        LruSet {
            capacity,
            clock: 0,
            stamp: HashMap::new(),
            order: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.stamp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stamp.is_empty()
    }

    pub fn contains(&self, key: &K) -> bool {
        self.stamp.contains_key(key)
    }

    /// Hit test that promotes on hit.
    pub fn touch(&mut self, key: K) -> bool {
        match self.stamp.get_mut(&key) {
            Some(s) => {
                self.order.remove(s);
                *s = self.clock;
                self.order.insert(self.clock, key);
                self.clock += 1;
                true
            }
            None => false,
        }
    }

    /// Insert (or promote) `key`; returns the evicted key, if any.
    pub fn insert(&mut self, key: K) -> Option<K> {
        if self.capacity == 0 {
            return None;
        }
        if self.touch(key) {
            return None;
        }
        let mut evicted = None;
        if self.stamp.len() >= self.capacity {
            if let Some((_, old)) = self.order.pop_first() {
                self.stamp.remove(&old);
                evicted = Some(old);
            }
        }
        self.stamp.insert(key, self.clock);
        self.order.insert(self.clock, key);
        self.clock += 1;
        evicted
    }

    /// Most recent first.
    pub fn keys_by_recency(&self) -> Vec<K> {
        self.order.values().rev().copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn evicts_least_recent() {
        let mut c = LruSet::new(2);
        assert_eq!(c.insert(1), None);
        assert_eq!(c.insert(2), None);
        assert!(c.touch(1));
        assert_eq!(c.insert(3), Some(2));
        assert!(c.contains(&1) && c.contains(&3));
        assert_eq!(c.keys_by_recency(), vec![3, 1]);
    }

    #[test]
    fn zero_capacity_holds_nothing() {
        let mut c = LruSet::new(0);
        c.insert(5);
        assert!(!c.touch(5));
        assert!(c.is_empty());
    }

    proptest! {
        #[test]
        fn matches_naive_list(ops in proptest::collection::vec((0u8..2, 0u32..12), 0..300), cap in 1usize..6) {
            let mut c = LruSet::new(cap);
            let mut naive: Vec<u32> = Vec::new();
            for (op, k) in ops {
                if op == 0 {
                    let hit = naive.contains(&k);
                    prop_assert_eq!(c.touch(k), hit);
                    if hit {
                        naive.retain(|&x| x != k);
                        naive.insert(0, k);
                    }
                } else {
                    naive.retain(|&x| x != k);
                    naive.insert(0, k);
                    naive.truncate(cap);
                    c.insert(k);
                }
                prop_assert!(c.len() <= cap);
                prop_assert_eq!(c.keys_by_recency(), naive.clone());
            }
        }
    }
}
