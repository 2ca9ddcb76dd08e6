//! The reading side of a butler: resolving folders to distributors, pacing
//! requests per target, fetching keys on demand, and assembling fragmented
//! files and feeds.

use std::collections::{BTreeMap, VecDeque};
use std::time::Duration;

use crate::crypto::{CryptoError, KeyRing};
use crate::naming::{ContentName, FolderName};
use crate::netsim::{Ctx, Message, NodeId, RoutingTable};
use crate::objects::{decode_index, reassemble, FragmentSet, Links, NetworkObject, ObjectError};
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FetchStatus {
    Decrypted,
    /// Fetched and verified, but the reader's keys do not satisfy the policy.
    Undecryptable,
    NotFound,
    Unreachable,
    /// Bad signature, wrong name, or failed integrity check.
    Invalid,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FetchResult {
    pub name: ContentName,
    pub status: FetchStatus,
    pub version: Option<u64>,
    pub payload: Option<Vec<u8>>,
    pub links: Option<Links>,
    pub finished_at: SimTime,
}

impl FetchResult {
    fn failed(name: ContentName, status: FetchStatus, now: SimTime) -> Self {
        FetchResult {
            name,
            status,
            version: None,
            payload: None,
            links: None,
            finished_at: now,
        }
    }
}

/// A feed walk: the entries reached, in feed order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeedResult {
    /// Status of the index lookup.
    pub status: FetchStatus,
    pub entries: Vec<FetchResult>,
}

impl FeedResult {
    pub fn decrypted(&self) -> usize {
        self.entries.iter().filter(|e| e.status == FetchStatus::Decrypted).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum JobResult {
    Object(FetchResult),
    Feed(FeedResult),
}

#[derive(Debug)]
enum JobKind {
    Object {
        first: Option<FetchResult>,
        set: Option<FragmentSet>,
        pieces: Vec<(ContentName, Vec<u8>)>,
        outstanding: usize,
    },
    Feed {
        label: String,
        stage: FeedStage,
        backward: Vec<FetchResult>,
        forward: Vec<FetchResult>,
        first: Option<ContentName>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FeedStage {
    Index,
    Backward,
    Forward,
}

#[derive(Debug)]
struct Job {
    tag: String,
    kind: JobKind,
}

#[derive(Debug)]
struct Op {
    job: u64,
    name: ContentName,
    target: Option<NodeId>,
    tried_owner: bool,
    key_requested: bool,
    object: Option<NetworkObject>,
}

#[derive(Debug)]
enum Pending {
    Request { op: u64, target: NodeId },
    Resolve { folder: FolderName, ops: Vec<u64> },
    Keys { op: u64 },
}

#[derive(Debug, Default)]
struct Gate {
    next_allowed: SimTime,
    busy: bool,
    wake_pending: bool,
    queue: VecDeque<u64>,
}

#[derive(Debug)]
pub struct FetchClient {
    route_ttl: Duration,
    timeout: Duration,
    next_id: u64,
    routing: RoutingTable,
    keyrings: BTreeMap<String, KeyRing>,
    gates: BTreeMap<NodeId, Gate>,
    ops: BTreeMap<u64, Op>,
    jobs: BTreeMap<u64, Job>,
    pending: BTreeMap<u64, Pending>,
    wakes: BTreeMap<u64, NodeId>,
    results: BTreeMap<String, JobResult>,
}

impl FetchClient {
    pub fn new(route_ttl: Duration, timeout: Duration) -> Self {
        FetchClient {
            route_ttl,
            timeout,
            next_id: 0,
            routing: RoutingTable::default(),
            keyrings: BTreeMap::new(),
            gates: BTreeMap::new(),
            ops: BTreeMap::new(),
            jobs: BTreeMap::new(),
            pending: BTreeMap::new(),
            wakes: BTreeMap::new(),
            results: BTreeMap::new(),
        }
    }

    fn fresh_id(&mut self) -> u64 {
        self.next_id += 1;
        self.next_id
    }

    pub fn result(&self, tag: &str) -> Option<&JobResult> {
        self.results.get(tag)
    }

    pub fn results(&self) -> &BTreeMap<String, JobResult> {
        &self.results
    }

    pub fn keyring(&self, issuer: &str) -> Option<&KeyRing> {
        self.keyrings.get(issuer)
    }

    pub fn routing(&self) -> &RoutingTable {
        &self.routing
    }

    /// True while any job is unfinished.
    pub fn busy(&self) -> bool {
        !self.jobs.is_empty()
    }

    pub(crate) fn store_result(&mut self, tag: &str, result: JobResult) {
        self.results.insert(tag.to_owned(), result);
    }

    pub fn fetch(&mut self, ctx: &mut Ctx<'_>, tag: &str, name: ContentName) {
        let job = self.fresh_id();
        self.jobs.insert(
            job,
            Job {
                tag: tag.to_owned(),
                kind: JobKind::Object {
                    first: None,
                    set: None,
                    pieces: Vec::new(),
                    outstanding: 1,
                },
            },
        );
        ctx.incr("fetches");
        self.start_op(ctx, job, name);
    }

    /// Reads the feed the owner's index lists under `latest/<label>` and
    /// `first/<label>`. The walk goes back from the tail, then forward from
    /// the head until it meets what it has seen, so one unreadable entry does
    /// not hide the rest.
    pub fn read_feed(&mut self, ctx: &mut Ctx<'_>, tag: &str, app_root: &FolderName, label: &str) {
        let job = self.fresh_id();
        self.jobs.insert(
            job,
            Job {
                tag: tag.to_owned(),
                kind: JobKind::Feed {
                    label: label.to_owned(),
                    stage: FeedStage::Index,
                    backward: Vec::new(),
                    forward: Vec::new(),
                    first: None,
                },
            },
        );
        ctx.incr("fetches");
        self.start_op(ctx, job, app_root.index_name());
    }

    fn start_op(&mut self, ctx: &mut Ctx<'_>, job: u64, name: ContentName) {
        let op = self.fresh_id();
        self.ops.insert(
            op,
            Op {
                job,
                name,
                target: None,
                tried_owner: false,
                key_requested: false,
                object: None,
            },
        );
        self.route(ctx, op);
    }

    fn owner_node(ctx: &Ctx<'_>, name: &ContentName) -> Option<NodeId> {
        ctx.directory.id(&name.owner())
    }

    fn route(&mut self, ctx: &mut Ctx<'_>, op: u64) {
        let folder = self.ops[&op].name.folder().clone();
        if let Some(route) = self.routing.lookup(&folder, ctx.now) {
            let node = route.node;
            ctx.incr("route_hits");
            self.ops.get_mut(&op).unwrap().target = Some(node);
            self.enqueue(ctx, op);
            return;
        }
        let joined = self.pending.values_mut().find_map(|p| match p {
            Pending::Resolve { folder: f, ops } if *f == folder => Some(ops),
            _ => None,
        });
        if let Some(ops) = joined {
            ops.push(op);
            return;
        }
        let Some(owner) = Self::owner_node(ctx, &self.ops[&op].name) else {
            self.finish_op(ctx, op, FetchStatus::Unreachable);
            return;
        };
        let id = self.fresh_id();
        self.pending.insert(
            id,
            Pending::Resolve {
                folder: folder.clone(),
                ops: vec![op],
            },
        );
        ctx.incr("resolves");
        ctx.send(owner, Message::Resolve { id, folder });
        ctx.set_timer(ctx.now + self.timeout, id);
    }

    fn on_resolved(&mut self, ctx: &mut Ctx<'_>, ops: Vec<u64>, reply: Option<(FolderName, Vec<String>, SimTime)>) {
        let mut target = None;
        if let Some((folder, distributors, expiry)) = reply {
            let known: Vec<NodeId> = distributors.iter().filter_map(|d| ctx.directory.id(d)).collect();
            let expiry = expiry.min(ctx.now + self.route_ttl);
            if !known.is_empty() {
                // Spread readers over the listed distributors, stably.
                let pick = ctx.my_name().bytes().map(u64::from).sum::<u64>() as usize % known.len();
                target = Some(known[pick]);
            } else {
                // No distributor: the owner's butler serves the folder itself.
                target = ctx.directory.id(&folder.owner());
            }
            if let Some(node) = target {
                self.routing.install(folder, node, expiry);
            }
        }
        for op in ops {
            let Some(o) = self.ops.get_mut(&op) else { continue };
            let t = target.or_else(|| ctx.directory.id(&o.name.owner()));
            o.target = t;
            if t.is_some() {
                self.enqueue(ctx, op);
            } else {
                self.finish_op(ctx, op, FetchStatus::Unreachable);
            }
        }
    }

    fn enqueue(&mut self, ctx: &mut Ctx<'_>, op: u64) {
        let target = self.ops[&op].target.expect("routed op");
        self.gates.entry(target).or_default().queue.push_back(op);
        self.pump(ctx, target);
    }

    /// Sends the next queued request to `target` if it is idle and its
    /// next-allowed time has come; otherwise arranges to try again.
    fn pump(&mut self, ctx: &mut Ctx<'_>, target: NodeId) {
        let gate = self.gates.entry(target).or_default();
        if gate.busy || gate.queue.is_empty() {
            return;
        }
        if gate.queue.iter().all(|op| !self.ops.contains_key(op)) {
            gate.queue.clear();
            return;
        }
        if ctx.now < gate.next_allowed {
            if !gate.wake_pending {
                gate.wake_pending = true;
                let at = gate.next_allowed;
                let token = self.fresh_id();
                self.wakes.insert(token, target);
                ctx.set_timer(at, token);
            }
            return;
        }
        let Some(op) = gate.queue.pop_front() else { return };
        if !self.ops.contains_key(&op) {
            self.pump(ctx, target);
            return;
        }
        let gate = self.gates.get_mut(&target).unwrap();
        gate.busy = true;
        let id = self.fresh_id();
        let name = self.ops[&op].name.clone();
        self.pending.insert(id, Pending::Request { op, target });
        ctx.send(target, Message::Request { id, name });
        ctx.set_timer(ctx.now + self.timeout, id);
    }

    fn release(&mut self, ctx: &mut Ctx<'_>, target: NodeId, next_allowed: Option<SimTime>) {
        let gate = self.gates.entry(target).or_default();
        gate.busy = false;
        if let Some(t) = next_allowed {
            gate.next_allowed = gate.next_allowed.max(t);
        }
        self.pump(ctx, target);
    }

    pub fn handle(&mut self, ctx: &mut Ctx<'_>, msg: Message) {
        match msg {
            Message::Data {
                id,
                object,
                next_allowed,
            } => {
                let Some(Pending::Request { op, target }) = self.pending.remove(&id) else { return };
                self.release(ctx, target, next_allowed);
                self.on_data(ctx, op, *object);
            }
            Message::NotFound { id, next_allowed, .. } => {
                let Some(Pending::Request { op, target }) = self.pending.remove(&id) else { return };
                self.release(ctx, target, next_allowed);
                self.retry_at_owner(ctx, op, FetchStatus::NotFound);
            }
            Message::Banned { id, next_allowed, .. } => {
                let Some(Pending::Request { op, target }) = self.pending.remove(&id) else { return };
                // Queue again behind the ban; the gate waits it out.
                self.gates.entry(target).or_default().queue.push_front(op);
                self.release(ctx, target, Some(next_allowed));
            }
            Message::ResolveReply {
                id,
                folder,
                distributors,
                expiry,
            } => {
                let Some(Pending::Resolve { ops, .. }) = self.pending.remove(&id) else { return };
                ctx.incr("resolve_round_trips");
                self.on_resolved(ctx, ops, Some((folder, distributors, expiry)));
            }
            Message::ResolveRefused { id, .. } => {
                let Some(Pending::Resolve { ops, .. }) = self.pending.remove(&id) else { return };
                ctx.incr("resolve_round_trips");
                self.on_resolved(ctx, ops, None);
            }
            Message::KeyReply { id, keys } => {
                let Some(Pending::Keys { op }) = self.pending.remove(&id) else { return };
                if let Some(owner) = self.ops.get(&op).map(|o| o.name.owner()) {
                    self.keyrings
                        .entry(owner.clone())
                        .or_insert_with(|| KeyRing::new(owner))
                        .extend(keys);
                    self.try_open(ctx, op);
                }
            }
            Message::KeyDenied { id } => {
                let Some(Pending::Keys { op }) = self.pending.remove(&id) else { return };
                self.finish_op(ctx, op, FetchStatus::Undecryptable);
            }
            _ => {}
        }
    }

    /// Returns true if the token belonged to the client.
    pub fn timer(&mut self, ctx: &mut Ctx<'_>, token: u64) -> bool {
        if let Some(target) = self.wakes.remove(&token) {
            self.gates.entry(target).or_default().wake_pending = false;
            self.pump(ctx, target);
            return true;
        }
        match self.pending.remove(&token) {
            Some(Pending::Request { op, target }) => {
                self.release(ctx, target, None);
                let Some(o) = self.ops.get(&op) else { return true };
                let folder = o.name.folder().clone();
                self.routing.forget(&folder, target);
                self.retry_at_owner(ctx, op, FetchStatus::Unreachable);
            }
            Some(Pending::Resolve { ops, .. }) => self.on_resolved(ctx, ops, None),
            Some(Pending::Keys { op }) => self.finish_op(ctx, op, FetchStatus::Undecryptable),
            None => return false,
        }
        true
    }

    /// A distributor that cannot serve is bypassed once in favour of the
    /// owner's butler.
    fn retry_at_owner(&mut self, ctx: &mut Ctx<'_>, op: u64, status: FetchStatus) {
        let Some(o) = self.ops.get(&op) else { return };
        let owner = Self::owner_node(ctx, &o.name);
        match owner {
            Some(owner) if !o.tried_owner && o.target != Some(owner) => {
                let o = self.ops.get_mut(&op).unwrap();
                o.tried_owner = true;
                o.target = Some(owner);
                self.enqueue(ctx, op);
            }
            _ => self.finish_op(ctx, op, status),
        }
    }

    fn on_data(&mut self, ctx: &mut Ctx<'_>, op: u64, object: NetworkObject) {
        let Some(name) = self.ops.get(&op).map(|o| o.name.clone()) else { return };
        let genuine = object.content_name == name
            && ctx
                .directory
                .identity(&name.owner())
                .is_some_and(|id| object.verify(&id.key));
        if !genuine {
            self.finish_op(ctx, op, FetchStatus::Invalid);
            return;
        }
        self.ops.get_mut(&op).unwrap().object = Some(object);
        self.try_open(ctx, op);
    }

    fn try_open(&mut self, ctx: &mut Ctx<'_>, op: u64) {
        let o = &self.ops[&op];
        let object = o.object.as_ref().expect("object received");
        let owner = o.name.owner();
        let empty = KeyRing::new(owner.clone());
        let ring = self.keyrings.get(&owner).unwrap_or(&empty);
        match object.open_follower(ring) {
            Ok(view) => {
                ctx.incr("decrypt_ok");
                let result = FetchResult {
                    name: o.name.clone(),
                    status: FetchStatus::Decrypted,
                    version: Some(object.version),
                    payload: Some(view.payload),
                    links: Some(view.links),
                    finished_at: ctx.now,
                };
                self.complete(ctx, op, result);
            }
            Err(ObjectError::Crypto(CryptoError::AccessDenied)) if !o.key_requested => {
                let epoch = object.epoch();
                let held = ring.attributes_at(epoch);
                let missing: Vec<String> = object
                    .follower_policy()
                    .attributes()
                    .into_iter()
                    .filter(|a| !held.contains(a))
                    .collect();
                let Some(owner_node) = ctx.directory.id(&owner).filter(|_| !missing.is_empty()) else {
                    self.finish_op(ctx, op, FetchStatus::Undecryptable);
                    return;
                };
                self.ops.get_mut(&op).unwrap().key_requested = true;
                let id = self.fresh_id();
                self.pending.insert(id, Pending::Keys { op });
                ctx.incr("key_requests_sent");
                ctx.send(
                    owner_node,
                    Message::KeyRequest {
                        id,
                        attributes: missing,
                        epoch,
                    },
                );
                ctx.set_timer(ctx.now + self.timeout, id);
            }
            Err(ObjectError::Crypto(CryptoError::AccessDenied)) => self.finish_op(ctx, op, FetchStatus::Undecryptable),
            Err(_) => self.finish_op(ctx, op, FetchStatus::Invalid),
        }
    }

    fn finish_op(&mut self, ctx: &mut Ctx<'_>, op: u64, status: FetchStatus) {
        let Some(o) = self.ops.get(&op) else { return };
        let mut result = FetchResult::failed(o.name.clone(), status, ctx.now);
        if status == FetchStatus::Undecryptable {
            result.version = o.object.as_ref().map(|x| x.version);
        }
        ctx.incr(match status {
            FetchStatus::Decrypted => "decrypt_ok",
            FetchStatus::Undecryptable | FetchStatus::Invalid => "decrypt_failed",
            FetchStatus::NotFound => "fetch_not_found",
            FetchStatus::Unreachable => "fetch_unreachable",
        });
        self.complete(ctx, op, result);
    }

    fn complete(&mut self, ctx: &mut Ctx<'_>, op: u64, result: FetchResult) {
        let Some(o) = self.ops.remove(&op) else { return };
        let Some(mut job) = self.jobs.remove(&o.job) else { return };
        let done = match &mut job.kind {
            JobKind::Object {
                first,
                set,
                pieces,
                outstanding,
            } => {
                *outstanding -= 1;
                self.object_step(ctx, o.job, result, first, set, pieces, outstanding)
            }
            JobKind::Feed { .. } => self.feed_step(ctx, o.job, &mut job.kind, result),
        };
        match done {
            Some(r) => {
                self.results.insert(job.tag, r);
            }
            None => {
                self.jobs.insert(o.job, job);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn object_step(
        &mut self,
        ctx: &mut Ctx<'_>,
        job: u64,
        result: FetchResult,
        first: &mut Option<FetchResult>,
        set: &mut Option<FragmentSet>,
        pieces: &mut Vec<(ContentName, Vec<u8>)>,
        outstanding: &mut usize,
    ) -> Option<JobResult> {
        if result.status != FetchStatus::Decrypted {
            // A missing fragment sinks the whole file; drop sibling ops.
            self.ops.retain(|_, o| o.job != job);
            let mut r = first.take().unwrap_or_else(|| result.clone());
            r.status = result.status;
            r.payload = None;
            return Some(JobResult::Object(r));
        }
        let links = result.links.clone().unwrap_or_default();
        if first.is_none() {
            if let (Some(seed), Some(count)) = (links.segment_seed, links.number_of_segments) {
                if count > 1 {
                    let s = FragmentSet {
                        folder: result.name.folder().clone(),
                        seed,
                        count,
                    };
                    for n in s.names().into_iter().filter(|n| *n != result.name) {
                        *outstanding += 1;
                        self.start_op(ctx, job, n);
                    }
                    *set = Some(s);
                }
            }
            *first = Some(result.clone());
        }
        pieces.push((result.name.clone(), result.payload.clone().unwrap_or_default()));
        if *outstanding > 0 {
            return None;
        }
        let mut r = first.take().expect("first piece recorded");
        r.finished_at = ctx.now;
        if let Some(s) = set {
            match reassemble(s, std::mem::take(pieces)) {
                Ok(data) => r.payload = Some(data),
                Err(_) => {
                    r.status = FetchStatus::Invalid;
                    r.payload = None;
                }
            }
        }
        Some(JobResult::Object(r))
    }

    fn feed_step(&mut self, ctx: &mut Ctx<'_>, job: u64, kind: &mut JobKind, result: FetchResult) -> Option<JobResult> {
        let JobKind::Feed {
            label,
            stage,
            backward,
            forward,
            first,
        } = kind
        else {
            unreachable!()
        };
        let finish = |status, backward: &mut Vec<FetchResult>, forward: &mut Vec<FetchResult>| {
            let mut entries = std::mem::take(forward);
            entries.extend(backward.drain(..).rev());
            Some(JobResult::Feed(FeedResult { status, entries }))
        };
        match *stage {
            FeedStage::Index => {
                if result.status != FetchStatus::Decrypted {
                    return finish(result.status, backward, forward);
                }
                let owner = result.name.owner();
                let entries = result
                    .payload
                    .as_deref()
                    .and_then(|p| decode_index(p, &owner).ok())
                    .unwrap_or_default();
                let latest = entries.get(&format!("latest/{label}")).cloned();
                *first = entries.get(&format!("first/{label}")).cloned();
                match latest {
                    Some(tail) => {
                        *stage = FeedStage::Backward;
                        self.start_op(ctx, job, tail);
                        None
                    }
                    None => finish(FetchStatus::NotFound, backward, forward),
                }
            }
            FeedStage::Backward => {
                let previous = result.links.as_ref().and_then(|l| l.previous.clone());
                let readable = result.status == FetchStatus::Decrypted;
                backward.push(result);
                if readable {
                    if let Some(p) = previous {
                        self.start_op(ctx, job, p);
                        return None;
                    }
                    // Reached the head.
                    return finish(FetchStatus::Decrypted, backward, forward);
                }
                match first.clone() {
                    Some(h) if !backward.iter().any(|e| e.name == h) => {
                        *stage = FeedStage::Forward;
                        self.start_op(ctx, job, h);
                        None
                    }
                    _ => finish(FetchStatus::Decrypted, backward, forward),
                }
            }
            FeedStage::Forward => {
                let next = result.links.as_ref().and_then(|l| l.next.clone());
                let readable = result.status == FetchStatus::Decrypted;
                forward.push(result);
                match next {
                    Some(n) if readable && !backward.iter().any(|e| e.name == n) => {
                        self.start_op(ctx, job, n);
                        None
                    }
                    _ => finish(FetchStatus::Decrypted, backward, forward),
                }
            }
        }
    }
}
