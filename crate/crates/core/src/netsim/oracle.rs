use std::collections::HashMap;
use std::time::Duration;

use crate::naming::ContentName;
use crate::time::SimTime;

/// One object served by a distributor, as seen by the checker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServeRecord {
    pub time: SimTime,
    pub distributor: String,
    pub name: ContentName,
    pub version: u64,
    /// The latest time the distributor knew this version to be current.
    pub validated_at: SimTime,
    pub tau: Duration,
    pub upstream_fetches: u32,
    pub stale: bool,
}

/// Global checker fed by producers (invalidations) and distributors
/// (serves). Nodes never read it.
#[derive(Debug, Clone, Default)]
pub struct Oracle {
    invalidated: HashMap<(ContentName, u64), SimTime>,
    serves: Vec<ServeRecord>,
}

impl Oracle {
    /// Records that `(name, version)` stopped being current at `at`.
    pub fn invalidate(&mut self, name: &ContentName, version: u64, at: SimTime) {
        self.invalidated.entry((name.clone(), version)).or_insert(at);
    }

    pub fn invalidated_at(&self, name: &ContentName, version: u64) -> Option<SimTime> {
        self.invalidated.get(&(name.clone(), version)).copied()
    }

    /// A serve is stale when its validation is older than `tau`, or when the
    /// producer had already invalidated the version before it was validated.
    pub fn is_stale(&self, now: SimTime, name: &ContentName, version: u64, validated_at: SimTime, tau: Duration) -> bool {
        now.since(validated_at) > tau || self.invalidated_at(name, version).is_some_and(|t| t < validated_at)
    }

    /// Checks and records a serve; returns whether it was stale.
    #[allow(clippy::too_many_arguments)]
    pub fn record_serve(
        &mut self,
        now: SimTime,
        distributor: &str,
        name: &ContentName,
        version: u64,
        validated_at: SimTime,
        tau: Duration,
        upstream_fetches: u32,
    ) -> bool {
        let stale = self.is_stale(now, name, version, validated_at, tau);
        self.serves.push(ServeRecord {
            time: now,
            distributor: distributor.to_owned(),
            name: name.clone(),
            version,
            validated_at,
            tau,
            upstream_fetches,
            stale,
        });
        stale
    }

    pub fn serves(&self) -> &[ServeRecord] {
        &self.serves
    }
}
