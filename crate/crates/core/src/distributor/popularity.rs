use std::collections::{BTreeMap, VecDeque};
use std::time::Duration;

use crate::naming::ContentName;
use crate::time::SimTime;

pub const DEFAULT_POPULARITY_WINDOW: Duration = Duration::from_secs(3600);
pub const DEFAULT_P_MIN: u32 = 3;

/// Requests per name over a sliding window.
#[derive(Debug, Clone)]
pub struct Popularity {
    window: Duration,
    threshold: u32,
    hits: BTreeMap<ContentName, VecDeque<SimTime>>,
}

impl Default for Popularity {
    fn default() -> Self {
        Popularity::new(DEFAULT_POPULARITY_WINDOW, DEFAULT_P_MIN)
    }
}

impl Popularity {
    pub fn new(window: Duration, threshold: u32) -> Self {
        Popularity {
            window,
            threshold,
            hits: BTreeMap::new(),
        }
    }

    pub fn record(&mut self, name: &ContentName, now: SimTime) {
        self.hits.entry(name.clone()).or_default().push_back(now);
        self.expire(name, now);
    }

    fn expire(&mut self, name: &ContentName, now: SimTime) {
        if let Some(q) = self.hits.get_mut(name) {
            while q.front().is_some_and(|t| now.since(*t) >= self.window) {
                q.pop_front();
            }
            if q.is_empty() {
                self.hits.remove(name);
            }
        }
    }

    pub fn count(&mut self, name: &ContentName, now: SimTime) -> usize {
        self.expire(name, now);
        self.hits.get(name).map_or(0, VecDeque::len)
    }

    pub fn should_cache(&mut self, name: &ContentName, now: SimTime) -> bool {
        self.count(name, now) >= self.threshold as usize
    }
}
