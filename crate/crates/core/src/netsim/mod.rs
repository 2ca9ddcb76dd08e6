//! Deterministic discrete-event network of butlers and distributors.

mod message;
mod metrics;
mod oracle;
mod routing;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::butler::{Butler, ButlerConfig};
use crate::crypto::{IdentityAuthority, PublicIdentity, TrustAnchors};
use crate::distributor::{Distributor, DistributorConfig};
use crate::time::SimTime;

pub use message::{Message, MESSAGE_KINDS};
pub use metrics::{MetricsParseError, MetricsReport, COUNTERS};
pub use oracle::{Oracle, ServeRecord};
pub use routing::{Route, RoutingTable};

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetError {
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("node name `{0}` already taken")]
    DuplicateNode(String),
}

#[derive(Debug, Clone)]
pub struct NetConfig {
    /// Per ordered pair latency is drawn uniformly from this closed range.
    pub latency: (Duration, Duration),
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            latency: (Duration::from_millis(5), Duration::from_millis(50)),
        }
    }
}

/// Node names, public identities, and the trust anchors every node shares.
#[derive(Debug, Clone, Default)]
pub struct Directory {
    names: Vec<String>,
    ids: BTreeMap<String, NodeId>,
    identities: BTreeMap<String, PublicIdentity>,
    anchors: TrustAnchors,
}

impl Directory {
    pub fn id(&self, name: &str) -> Option<NodeId> {
        self.ids.get(name).copied()
    }

    pub fn name(&self, id: NodeId) -> &str {
        &self.names[id]
    }

    pub fn identity(&self, name: &str) -> Option<&PublicIdentity> {
        self.identities.get(name)
    }

    pub fn anchors(&self) -> &TrustAnchors {
        &self.anchors
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// What a node handler may touch: the clock, the directory, its outbox and
/// timers, and the instrumentation.
pub struct Ctx<'a> {
    pub now: SimTime,
    pub me: NodeId,
    pub directory: &'a Directory,
    metrics: &'a mut MetricsReport,
    oracle: &'a mut Oracle,
    outbox: Vec<(NodeId, Message)>,
    timers: Vec<(SimTime, u64)>,
}

impl Ctx<'_> {
    pub fn send(&mut self, to: NodeId, msg: Message) {
        self.outbox.push((to, msg));
    }

    pub fn set_timer(&mut self, at: SimTime, token: u64) {
        self.timers.push((at.max(self.now), token));
    }

    pub fn my_name(&self) -> &str {
        self.directory.name(self.me)
    }

    pub fn incr(&mut self, counter: &str) {
        self.add(counter, 1);
    }

    pub fn add(&mut self, counter: &str, by: u64) {
        let name = self.directory.names[self.me].clone();
        self.metrics.add(&name, counter, by);
    }

    pub fn oracle(&mut self) -> &mut Oracle {
        self.oracle
    }
}

pub enum NodeSlot {
    Butler(Box<Butler>),
    Distributor(Box<Distributor>),
}

impl NodeSlot {
    fn handle(&mut self, ctx: &mut Ctx<'_>, from: NodeId, msg: Message) {
        match self {
            NodeSlot::Butler(b) => b.handle(ctx, from, msg),
            NodeSlot::Distributor(d) => d.handle(ctx, from, msg),
        }
    }

    fn timer(&mut self, ctx: &mut Ctx<'_>, token: u64) {
        match self {
            NodeSlot::Butler(b) => b.timer(ctx, token),
            NodeSlot::Distributor(d) => d.timer(ctx, token),
        }
    }
}

#[derive(Debug)]
enum Event {
    Deliver { from: NodeId, to: NodeId, msg: Message },
    Timer { node: NodeId, token: u64 },
}

struct Queued {
    time: SimTime,
    seq: u64,
    event: Event,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    // Reversed so the max-heap pops the earliest event first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    Processed,
    Idle,
}

pub struct Network {
    seed: u64,
    config: NetConfig,
    now: SimTime,
    seq: u64,
    queue: BinaryHeap<Queued>,
    nodes: Vec<NodeSlot>,
    directory: Directory,
    down: BTreeSet<NodeId>,
    latencies: HashMap<(NodeId, NodeId), Duration>,
    metrics: MetricsReport,
    oracle: Oracle,
    transcript: Vec<String>,
    authority: IdentityAuthority,
    rng: ChaCha20Rng,
}

impl Network {
    pub fn new(seed: u64, config: NetConfig) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let authority = IdentityAuthority::new("ia", &mut rng);
        let mut directory = Directory::default();
        directory.anchors.add(&authority);
        Network {
            seed,
            config,
            now: SimTime::ZERO,
            seq: 0,
            queue: BinaryHeap::new(),
            nodes: Vec::new(),
            directory,
            down: BTreeSet::new(),
            latencies: HashMap::new(),
            metrics: MetricsReport::default(),
            oracle: Oracle::default(),
            transcript: Vec::new(),
            authority,
            rng,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn directory(&self) -> &Directory {
        &self.directory
    }

    pub fn identity_authority(&self) -> &IdentityAuthority {
        &self.authority
    }

    fn node_rng(&self, id: NodeId) -> ChaCha20Rng {
        let mut seed = [0u8; 32];
        seed[..8].copy_from_slice(&self.seed.to_be_bytes());
        seed[8..16].copy_from_slice(&(id as u64).to_be_bytes());
        seed[16..].copy_from_slice(b"warp-node-rng\0\0\0");
        ChaCha20Rng::from_seed(seed)
    }

    fn register(&mut self, username: &str) -> Result<(NodeId, crate::crypto::Identity), NetError> {
        let name = format!("{}.{username}", self.authority.name());
        if self.directory.ids.contains_key(&name) {
            return Err(NetError::DuplicateNode(name));
        }
        let identity = self.authority.register(username, &mut self.rng);
        let id = self.directory.names.len();
        self.directory.names.push(name.clone());
        self.directory.ids.insert(name.clone(), id);
        self.directory.identities.insert(name.clone(), identity.public());
        self.metrics.add_node(&name);
        Ok((id, identity))
    }

    pub fn add_butler(&mut self, username: &str, config: ButlerConfig) -> Result<NodeId, NetError> {
        let (id, identity) = self.register(username)?;
        let rng = self.node_rng(id);
        self.nodes.push(NodeSlot::Butler(Box::new(Butler::new(identity, config, rng))));
        Ok(id)
    }

    pub fn add_distributor(&mut self, username: &str, config: DistributorConfig) -> Result<NodeId, NetError> {
        let (id, identity) = self.register(username)?;
        let rng = self.node_rng(id);
        self.nodes
            .push(NodeSlot::Distributor(Box::new(Distributor::new(identity, config, rng))));
        Ok(id)
    }

    pub fn node_id(&self, name: &str) -> Result<NodeId, NetError> {
        self.directory.id(name).ok_or_else(|| NetError::UnknownNode(name.to_owned()))
    }

    pub fn node(&self, id: NodeId) -> &NodeSlot {
        &self.nodes[id]
    }

    pub fn butler(&self, id: NodeId) -> Option<&Butler> {
        match self.nodes.get(id)? {
            NodeSlot::Butler(b) => Some(b),
            NodeSlot::Distributor(_) => None,
        }
    }

    pub fn distributor(&self, id: NodeId) -> Option<&Distributor> {
        match self.nodes.get(id)? {
            NodeSlot::Distributor(d) => Some(d),
            NodeSlot::Butler(_) => None,
        }
    }

    pub fn set_down(&mut self, id: NodeId, down: bool) {
        if down {
            self.down.insert(id);
        } else {
            self.down.remove(&id);
        }
    }

    pub fn is_down(&self, id: NodeId) -> bool {
        self.down.contains(&id)
    }

    pub fn latency(&mut self, from: NodeId, to: NodeId) -> Duration {
        if from == to {
            return Duration::ZERO;
        }
        let (lo, hi) = self.config.latency;
        let seed = self.seed;
        *self.latencies.entry((from, to)).or_insert_with(|| {
            let mut pair = [0u8; 32];
            pair[..8].copy_from_slice(&seed.to_be_bytes());
            pair[8..16].copy_from_slice(&(from as u64).to_be_bytes());
            pair[16..24].copy_from_slice(&(to as u64).to_be_bytes());
            pair[24..].copy_from_slice(b"latency\0");
            let mut rng = ChaCha20Rng::from_seed(pair);
            Duration::from_millis(rng.gen_range(lo.as_millis() as u64..=hi.as_millis() as u64))
        })
    }

    fn push(&mut self, time: SimTime, event: Event) {
        self.seq += 1;
        self.queue.push(Queued {
            time,
            seq: self.seq,
            event,
        });
    }

    fn flush(&mut self, me: NodeId, outbox: Vec<(NodeId, Message)>, timers: Vec<(SimTime, u64)>) {
        let me_name = self.directory.names[me].clone();
        for (to, msg) in outbox {
            self.metrics.incr(&me_name, "messages_sent");
            self.metrics.incr(&me_name, &format!("sent.{}", msg.kind()));
            let at = self.now + self.latency(me, to);
            self.push(at, Event::Deliver { from: me, to, msg });
        }
        for (at, token) in timers {
            self.push(at, Event::Timer { node: me, token });
        }
    }

    /// Runs `f` on node `id` with a context at the current time, then
    /// schedules whatever it sent.
    pub fn act<T>(&mut self, id: NodeId, f: impl FnOnce(&mut NodeSlot, &mut Ctx<'_>) -> T) -> T {
        let mut ctx = Ctx {
            now: self.now,
            me: id,
            directory: &self.directory,
            metrics: &mut self.metrics,
            oracle: &mut self.oracle,
            outbox: Vec::new(),
            timers: Vec::new(),
        };
        let out = f(&mut self.nodes[id], &mut ctx);
        let (outbox, timers) = (ctx.outbox, ctx.timers);
        self.flush(id, outbox, timers);
        out
    }

    /// Runs `f` on butler `id`. Panics if `id` is not a butler.
    pub fn with_butler<T>(&mut self, id: NodeId, f: impl FnOnce(&mut Butler, &mut Ctx<'_>) -> T) -> T {
        self.act(id, |slot, ctx| match slot {
            NodeSlot::Butler(b) => f(b, ctx),
            NodeSlot::Distributor(_) => panic!("node {id} is not a butler"),
        })
    }

    /// Runs `f` on distributor `id`. Panics if `id` is not a distributor.
    pub fn with_distributor<T>(&mut self, id: NodeId, f: impl FnOnce(&mut Distributor, &mut Ctx<'_>) -> T) -> T {
        self.act(id, |slot, ctx| match slot {
            NodeSlot::Distributor(d) => f(d, ctx),
            NodeSlot::Butler(_) => panic!("node {id} is not a distributor"),
        })
    }

    /// Queues `msg` from `from` to `to` as if `from` had sent it now.
    pub fn send(&mut self, from: NodeId, to: NodeId, msg: Message) -> Result<(), NetError> {
        for id in [from, to] {
            if id >= self.nodes.len() {
                return Err(NetError::UnknownNode(id.to_string()));
            }
        }
        self.flush(from, vec![(to, msg)], Vec::new());
        Ok(())
    }

    pub fn next_event_time(&self) -> Option<SimTime> {
        self.queue.peek().map(|q| q.time)
    }

    /// Processes exactly one event.
    pub fn step(&mut self) -> Step {
        let Some(Queued { time, event, .. }) = self.queue.pop() else {
            return Step::Idle;
        };
        self.now = time;
        match event {
            Event::Deliver { from, to, msg } => {
                let dropped = self.down.contains(&to);
                self.transcript.push(format!(
                    "{} | {} | {} | {}{} | {}",
                    time,
                    self.directory.names[from],
                    self.directory.names[to],
                    if dropped { "DROP:" } else { "" },
                    msg.kind(),
                    msg.subject()
                ));
                if dropped {
                    let name = self.directory.names[from].clone();
                    self.metrics.incr(&name, "messages_dropped");
                } else {
                    self.act(to, |node, ctx| node.handle(ctx, from, msg));
                }
            }
            Event::Timer { node, token } => {
                if !self.down.contains(&node) {
                    self.act(node, |n, ctx| n.timer(ctx, token));
                }
            }
        }
        Step::Processed
    }

    /// Delivers every event up to and including `t`, then sets the clock to
    /// `t`.
    pub fn run_until(&mut self, t: SimTime) {
        while self.next_event_time().is_some_and(|n| n <= t) {
            self.step();
        }
        self.now = self.now.max(t);
    }

    /// Runs until the queue is empty or the clock would pass `limit`.
    pub fn run_until_idle(&mut self, limit: SimTime) {
        while self.next_event_time().is_some_and(|n| n <= limit) {
            self.step();
        }
    }

    pub fn transcript(&self) -> &[String] {
        &self.transcript
    }

    pub fn metrics(&self) -> &MetricsReport {
        &self.metrics
    }

    pub fn oracle(&self) -> &Oracle {
        &self.oracle
    }
}
