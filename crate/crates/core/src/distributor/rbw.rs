use std::collections::{BTreeMap, VecDeque};
use std::time::Duration;

use crate::netsim::NodeId;
use crate::time::SimTime;

/// The ban extension for a peer with `fail` failed and `succ` successful
/// requests in the trailing window: `fail / (1 + succ) * delta`.
pub fn rbw_delay(fail: u32, succ: u32, delta: Duration) -> Duration {
    delta.mul_f64(fail as f64 / (1.0 + succ as f64))
}

#[derive(Debug, Clone, Default)]
struct PeerWindow {
    next_allowed: SimTime,
    log: VecDeque<(SimTime, bool)>,
}

/// Per-peer request ban window.
#[derive(Debug, Clone)]
pub struct Rbw {
    delta: Duration,
    peers: BTreeMap<NodeId, PeerWindow>,
}

impl Rbw {
    pub fn new(delta: Duration) -> Self {
        Rbw {
            delta,
            peers: BTreeMap::new(),
        }
    }

    pub fn delta(&self) -> Duration {
        self.delta
    }

    pub fn next_allowed(&self, peer: NodeId) -> SimTime {
        self.peers.get(&peer).map_or(SimTime::ZERO, |p| p.next_allowed)
    }

    /// `Err(next_allowed)` if `peer` may not send yet.
    pub fn check(&self, peer: NodeId, now: SimTime) -> Result<(), SimTime> {
        let next = self.next_allowed(peer);
        if now < next {
            Err(next)
        } else {
            Ok(())
        }
    }

    /// Logs a finished request and returns the updated `next_allowed`. The
    /// window is `(now - delta, now]`.
    pub fn record(&mut self, peer: NodeId, success: bool, now: SimTime) -> SimTime {
        let delta = self.delta;
        let w = self.peers.entry(peer).or_default();
        w.log.push_back((now, success));
        while w.log.front().is_some_and(|(t, _)| now.since(*t) >= delta) {
            w.log.pop_front();
        }
        let succ = w.log.iter().filter(|(_, s)| *s).count() as u32;
        let fail = w.log.len() as u32 - succ;
        w.next_allowed = w.next_allowed.max(now + rbw_delay(fail, succ, delta));
        w.next_allowed
    }
}
