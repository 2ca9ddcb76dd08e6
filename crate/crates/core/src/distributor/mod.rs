//! Cache nodes: content store, thread-update following, request serving,
//! certificate handling, and the request ban window.

mod popularity;
mod rbw;
mod store;

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::butler::{CertificateError, DistributionCertificate};
use crate::crypto::{Identity, KeyRing};
use crate::naming::{ContentName, FolderName};
use crate::netsim::{Ctx, Message, NodeId};
use crate::objects::{tu_genesis_name, NetworkObject, ThreadUpdateCommand, TuEntry};
use crate::time::SimTime;

pub use popularity::{Popularity, DEFAULT_POPULARITY_WINDOW, DEFAULT_P_MIN};
pub use rbw::{rbw_delay, Rbw};
pub use store::{CachedObject, ContentStore};

pub const DEFAULT_TAU: Duration = Duration::from_secs(30 * 60);
pub const DEFAULT_DELTA: Duration = Duration::from_secs(10);
pub const DEFAULT_ROUTE_TTL: Duration = Duration::from_secs(3600);
const MAX_TU_RESTARTS: u32 = 3;

#[derive(Debug, Clone)]
pub struct DistributorConfig {
    pub tau: Duration,
    pub delta: Duration,
    pub p_min: u32,
    pub popularity_window: Duration,
    pub prefetch: bool,
    pub capacity: usize,
    pub upstream_timeout: Duration,
    pub route_ttl: Duration,
}

impl Default for DistributorConfig {
    fn default() -> Self {
        DistributorConfig {
            tau: DEFAULT_TAU,
            delta: DEFAULT_DELTA,
            p_min: DEFAULT_P_MIN,
            popularity_window: DEFAULT_POPULARITY_WINDOW,
            prefetch: false,
            capacity: 10_000,
            upstream_timeout: Duration::from_secs(2),
            route_ttl: DEFAULT_ROUTE_TTL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DistributorError {
    #[error(transparent)]
    Certificate(#[from] CertificateError),
    #[error("thread update `{0}` unreachable")]
    TuUnreachable(String),
    #[error("out-of-order thread-update command: expected {expected}, got {got}")]
    OutOfOrderCommand { expected: u64, got: u64 },
}

/// Progress through one folder's thread-update feed.
#[derive(Debug, Clone)]
pub struct TuFollowState {
    /// The last consumed entry.
    pub cursor: ContentName,
    pub seq: u64,
    pub last_checked: Option<SimTime>,
    pub following: bool,
    /// Names of the folder in the order the feed announced them.
    order: Vec<ContentName>,
    children: BTreeSet<FolderName>,
    refresh: Option<RefreshRun>,
}

#[derive(Debug, Clone)]
struct RefreshRun {
    started_at: SimTime,
    waiters: Vec<u64>,
    restarts: u32,
}

impl TuFollowState {
    fn new(tu: &FolderName) -> Self {
        let governed = tu.governed_folder().expect("thread-update folder");
        TuFollowState {
            cursor: tu_genesis_name(&governed),
            seq: 0,
            last_checked: None,
            following: false,
            order: Vec::new(),
            children: BTreeSet::new(),
            refresh: None,
        }
    }

    pub fn order(&self) -> &[ContentName] {
        &self.order
    }

    pub fn children(&self) -> &BTreeSet<FolderName> {
        &self.children
    }

    pub fn is_refreshing(&self) -> bool {
        self.refresh.is_some()
    }
}

#[derive(Debug, Clone)]
struct ServeJob {
    peer: NodeId,
    req_id: u64,
    name: ContentName,
    upstream_fetches: u32,
}

#[derive(Debug, Clone)]
enum Upstream {
    Content { serve: u64, sent_at: SimTime },
    Prefetch { sent_at: SimTime },
    Tu { tu: FolderName },
}

pub struct Distributor {
    identity: Identity,
    #[allow(dead_code)]
    rng: ChaCha20Rng,
    config: DistributorConfig,
    certificates: Vec<DistributionCertificate>,
    keyrings: BTreeMap<String, KeyRing>,
    store: ContentStore,
    tus: BTreeMap<FolderName, TuFollowState>,
    blocked: BTreeSet<ContentName>,
    /// When a thread-update command last mentioned each name.
    commanded: BTreeMap<ContentName, SimTime>,
    rbw: Rbw,
    popularity: Popularity,
    next_id: u64,
    serving: BTreeMap<u64, ServeJob>,
    upstream: BTreeMap<u64, Upstream>,
}

impl Distributor {
    pub fn new(identity: Identity, config: DistributorConfig, rng: ChaCha20Rng) -> Self {
        Distributor {
            identity,
            rng,
            store: ContentStore::new(config.capacity),
            rbw: Rbw::new(config.delta),
            popularity: Popularity::new(config.popularity_window, config.p_min),
            config,
            certificates: Vec::new(),
            keyrings: BTreeMap::new(),
            tus: BTreeMap::new(),
            blocked: BTreeSet::new(),
            commanded: BTreeMap::new(),
            next_id: 0,
            serving: BTreeMap::new(),
            upstream: BTreeMap::new(),
        }
    }

    pub fn name(&self) -> String {
        self.identity.name()
    }

    pub fn config(&self) -> &DistributorConfig {
        &self.config
    }

    pub fn store(&self) -> &ContentStore {
        &self.store
    }

    pub fn tu_state(&self, tu: &FolderName) -> Option<&TuFollowState> {
        self.tus.get(tu)
    }

    pub fn is_blocked(&self, name: &ContentName) -> bool {
        self.blocked.contains(name)
    }

    pub fn rbw(&self) -> &Rbw {
        &self.rbw
    }

    pub fn certificates(&self) -> &[DistributionCertificate] {
        &self.certificates
    }

    fn fresh_id(&mut self) -> u64 {
        self.next_id += 1;
        self.next_id
    }

    /// True if an unexpired certificate covers `folder`.
    pub fn covers(&self, folder: &FolderName, now: SimTime) -> bool {
        self.certificates
            .iter()
            .any(|c| c.is_valid_at(now) && c.folder.contains(folder))
    }

    fn is_fresh(&self, tu: &FolderName, now: SimTime) -> bool {
        self.tus
            .get(tu)
            .and_then(|s| s.last_checked)
            .is_some_and(|t| now.since(t) <= self.config.tau)
    }

    pub fn accept_certificate(&mut self, ctx: &mut Ctx<'_>, cert: DistributionCertificate) -> Result<(), DistributorError> {
        let verdict = if cert.distributor != self.name() {
            Err(CertificateError::NotForMe)
        } else {
            cert.verify(ctx.directory.anchors(), ctx.now)
        };
        if let Err(e) = verdict {
            ctx.incr("certificates_rejected");
            return Err(e.into());
        }
        let issuer = cert.issuer.name();
        self.keyrings
            .entry(issuer.clone())
            .or_insert_with(|| KeyRing::new(issuer))
            .extend(cert.keys.iter().cloned());
        self.certificates
            .retain(|c| !(c.folder == cert.folder && c.expiry <= cert.expiry));
        self.certificates.push(cert);
        ctx.incr("certificates_accepted");
        Ok(())
    }

    pub fn handle(&mut self, ctx: &mut Ctx<'_>, from: NodeId, msg: Message) {
        match msg {
            Message::Request { id, name } => self.serve_request(ctx, from, id, name),
            Message::Data { id, object, .. } => {
                if let Some(up) = self.upstream.remove(&id) {
                    self.on_upstream_data(ctx, up, *object);
                }
            }
            Message::NotFound { id, .. } | Message::Banned { id, .. } => {
                if let Some(up) = self.upstream.remove(&id) {
                    self.on_upstream_failure(ctx, up);
                }
            }
            Message::Resolve { id, folder } => self.answer_resolve(ctx, from, id, folder),
            Message::Grant { certificate } => {
                let _ = self.accept_certificate(ctx, *certificate);
            }
            _ => {}
        }
    }

    pub fn timer(&mut self, ctx: &mut Ctx<'_>, token: u64) {
        if let Some(up) = self.upstream.remove(&token) {
            self.on_upstream_failure(ctx, up);
        }
    }

    fn answer_resolve(&mut self, ctx: &mut Ctx<'_>, from: NodeId, id: u64, folder: FolderName) {
        let me = self.name();
        let best = self
            .certificates
            .iter()
            .filter(|c| c.is_valid_at(ctx.now) && c.folder.contains(&folder))
            .flat_map(|c| {
                c.distributors
                    .iter()
                    .cloned()
                    .chain([(me.clone(), c.folder.clone())])
                    .filter(|(_, f)| f.contains(&folder))
                    .map(move |(d, f)| (d, f, c.expiry))
            })
            .collect::<Vec<_>>();
        let Some(depth) = best.iter().map(|(_, f, _)| f.depth()).max() else {
            ctx.incr("resolves_refused");
            ctx.send(from, Message::ResolveRefused { id, folder });
            return;
        };
        let chosen: Vec<_> = best.into_iter().filter(|(_, f, _)| f.depth() == depth).collect();
        let expiry = chosen
            .iter()
            .map(|(_, _, e)| *e)
            .min()
            .unwrap()
            .min(ctx.now + self.config.route_ttl);
        let mut names: Vec<String> = chosen.iter().map(|(d, _, _)| d.clone()).collect();
        names.sort();
        names.dedup();
        ctx.incr("resolves_answered");
        ctx.send(
            from,
            Message::ResolveReply {
                id,
                folder: chosen[0].1.clone(),
                distributors: names,
                expiry,
            },
        );
    }

    /// The request-serving algorithm.
    pub fn serve_request(&mut self, ctx: &mut Ctx<'_>, peer: NodeId, req_id: u64, name: ContentName) {
        if let Err(until) = self.rbw.check(peer, ctx.now) {
            let next_allowed = self.rbw.record(peer, false, ctx.now).max(until);
            ctx.incr("bans");
            ctx.send(
                peer,
                Message::Banned {
                    id: req_id,
                    name,
                    next_allowed,
                },
            );
            return;
        }
        self.popularity.record(&name, ctx.now);
        let sid = self.fresh_id();
        self.serving.insert(
            sid,
            ServeJob {
                peer,
                req_id,
                name: name.clone(),
                upstream_fetches: 0,
            },
        );
        if self.blocked.contains(&name) || name.folder().is_tu() || !self.covers(name.folder(), ctx.now) {
            self.fail(ctx, sid);
            return;
        }
        if self.store.contains(&name) {
            let tu = name.folder().tu_folder();
            if self.is_fresh(&tu, ctx.now) {
                self.serve_cached(ctx, sid);
            } else {
                self.refresh_tu(ctx, &tu, Some(sid));
            }
        } else {
            ctx.incr("cache_misses");
            self.fetch_upstream(ctx, sid);
        }
    }

    fn serve_cached(&mut self, ctx: &mut Ctx<'_>, sid: u64) {
        let name = self.serving[&sid].name.clone();
        let tu = name.folder().tu_folder();
        let checked = self.tus.get(&tu).and_then(|s| s.last_checked).unwrap_or(SimTime::ZERO);
        let entry = self.store.get(&name).expect("caller checked presence");
        let validated_at = entry.fetched_at.max(checked);
        let object = entry.object.clone();
        ctx.incr("cache_hits");
        self.deliver(ctx, sid, object, validated_at);
    }

    fn deliver(&mut self, ctx: &mut Ctx<'_>, sid: u64, object: NetworkObject, validated_at: SimTime) {
        let job = self.serving.remove(&sid).expect("live serve job");
        let next_allowed = self.rbw.record(job.peer, true, ctx.now);
        let me = self.name();
        let now = ctx.now;
        let stale = ctx.oracle().record_serve(
            now,
            &me,
            &object.content_name,
            object.version,
            validated_at,
            self.config.tau,
            job.upstream_fetches,
        );
        ctx.incr("serves");
        if stale {
            ctx.incr("stale_serves");
        }
        if job.upstream_fetches > 1 {
            ctx.incr("multi_upstream_serves");
        }
        ctx.send(
            job.peer,
            Message::Data {
                id: job.req_id,
                object: Box::new(object),
                next_allowed: Some(next_allowed),
            },
        );
    }

    fn fail(&mut self, ctx: &mut Ctx<'_>, sid: u64) {
        let job = self.serving.remove(&sid).expect("live serve job");
        let next_allowed = self.rbw.record(job.peer, false, ctx.now);
        ctx.send(
            job.peer,
            Message::NotFound {
                id: job.req_id,
                name: job.name,
                next_allowed: Some(next_allowed),
            },
        );
    }

    fn request_upstream(&mut self, ctx: &mut Ctx<'_>, name: &ContentName, up: Upstream) -> bool {
        let Some(owner) = ctx.directory.id(&name.owner()) else {
            return false;
        };
        let id = self.fresh_id();
        self.upstream.insert(id, up);
        ctx.send(owner, Message::Request { id, name: name.clone() });
        ctx.set_timer(ctx.now + self.config.upstream_timeout, id);
        true
    }

    fn fetch_upstream(&mut self, ctx: &mut Ctx<'_>, sid: u64) {
        let job = self.serving.get_mut(&sid).expect("live serve job");
        job.upstream_fetches += 1;
        let name = job.name.clone();
        ctx.incr("upstream_fetches");
        let up = Upstream::Content {
            serve: sid,
            sent_at: ctx.now,
        };
        if !self.request_upstream(ctx, &name, up) {
            self.fail(ctx, sid);
        }
    }

    fn verified(&self, ctx: &Ctx<'_>, object: &NetworkObject, expected: &ContentName) -> bool {
        &object.content_name == expected
            && ctx
                .directory
                .identity(&object.content_name.owner())
                .is_some_and(|id| object.verify(&id.key))
    }

    fn on_upstream_data(&mut self, ctx: &mut Ctx<'_>, up: Upstream, object: NetworkObject) {
        match up {
            Upstream::Content { serve, sent_at } => {
                let Some(job) = self.serving.get(&serve) else { return };
                let name = job.name.clone();
                if !self.verified(ctx, &object, &name) || self.blocked.contains(&name) {
                    self.fail(ctx, serve);
                    return;
                }
                self.deliver(ctx, serve, object.clone(), sent_at);
                if self.popularity.should_cache(&name, ctx.now) {
                    self.cache(ctx, object, sent_at);
                }
            }
            Upstream::Prefetch { sent_at } => {
                let name = object.content_name.clone();
                if self.verified(ctx, &object, &name) && !self.blocked.contains(&name) {
                    self.cache(ctx, object, sent_at);
                }
            }
            Upstream::Tu { tu } => self.on_tu_entry(ctx, &tu, object),
        }
    }

    fn on_upstream_failure(&mut self, ctx: &mut Ctx<'_>, up: Upstream) {
        match up {
            Upstream::Content { serve, .. } => {
                if self.serving.contains_key(&serve) {
                    self.fail(ctx, serve);
                }
            }
            Upstream::Prefetch { .. } => {}
            Upstream::Tu { tu } => self.refresh_failed(ctx, &tu),
        }
    }

    /// Steps 8 and 10: follow the object's thread update, then cache it,
    /// provided the distributor group opens with the certificate keys.
    fn cache(&mut self, ctx: &mut Ctx<'_>, object: NetworkObject, fetched_at: SimTime) {
        let name = object.content_name.clone();
        let tu = name.folder().tu_folder();
        // A command seen after the request left may already cover this copy.
        if self.commanded.get(&name).is_some_and(|t| *t >= fetched_at) {
            return;
        }
        let Some(ring) = self.keyrings.get(&name.owner()) else { return };
        match object.open_distributor(ring) {
            Ok(tu_ref) if tu_ref.name == tu => {}
            _ => return,
        }
        self.follow(ctx, &tu);
        self.store.insert(object, fetched_at);
    }

    fn follow(&mut self, ctx: &mut Ctx<'_>, tu: &FolderName) {
        let governed = tu.governed_folder().expect("thread-update folder");
        // Register with the nearest known ancestor so its refreshes cover us.
        let mut anc = governed.parent().ok();
        while let Some(a) = anc {
            if let Some(s) = self.tus.get_mut(&a.tu_folder()) {
                s.children.insert(tu.clone());
                break;
            }
            anc = a.parent().ok();
        }
        let state = self.tus.entry(tu.clone()).or_insert_with(|| TuFollowState::new(tu));
        state.following = true;
        if state.last_checked.is_none() && state.refresh.is_none() {
            self.refresh_tu(ctx, tu, None);
        }
    }

    /// Starts walking the feed from the cursor, or joins a walk in progress.
    pub fn refresh_tu(&mut self, ctx: &mut Ctx<'_>, tu: &FolderName, waiter: Option<u64>) {
        let state = self.tus.entry(tu.clone()).or_insert_with(|| TuFollowState::new(tu));
        if let Some(run) = &mut state.refresh {
            run.waiters.extend(waiter);
            return;
        }
        state.refresh = Some(RefreshRun {
            started_at: ctx.now,
            waiters: waiter.into_iter().collect(),
            restarts: 0,
        });
        let cursor = state.cursor.clone();
        ctx.incr("tu_refreshes");
        self.fetch_tu_entry(ctx, tu, &cursor);
    }

    fn fetch_tu_entry(&mut self, ctx: &mut Ctx<'_>, tu: &FolderName, name: &ContentName) {
        ctx.incr("tu_fetches");
        if !self.request_upstream(ctx, name, Upstream::Tu { tu: tu.clone() }) {
            self.refresh_failed(ctx, tu);
        }
    }

    fn on_tu_entry(&mut self, ctx: &mut Ctx<'_>, tu: &FolderName, object: NetworkObject) {
        let name = object.content_name.clone();
        let opened = (|| {
            if name.folder() != tu || !self.verified(ctx, &object, &name) {
                return None;
            }
            let view = object.open_follower(self.keyrings.get(&name.owner())?).ok()?;
            Some((TuEntry::decode(&view.payload).ok()?, view.links.next))
        })();
        let Some((entry, next)) = opened else {
            self.refresh_failed(ctx, tu);
            return;
        };
        let seq = self.tus[tu].seq;
        if entry.seq == seq + 1 {
            if let Some(cmd) = &entry.command {
                self.apply_command(ctx, tu, cmd);
            }
            let state = self.tus.get_mut(tu).unwrap();
            state.seq = entry.seq;
            state.cursor = name;
        } else if entry.seq > seq {
            ctx.incr("out_of_order_commands");
            let state = self.tus.get_mut(tu).unwrap();
            let run = state.refresh.as_mut().expect("refresh in progress");
            run.restarts += 1;
            if run.restarts > MAX_TU_RESTARTS {
                self.refresh_failed(ctx, tu);
            } else {
                let cursor = state.cursor.clone();
                self.fetch_tu_entry(ctx, tu, &cursor);
            }
            return;
        }
        match next {
            Some(n) => self.fetch_tu_entry(ctx, tu, &n),
            None => self.refresh_done(ctx, tu),
        }
    }

    fn refresh_done(&mut self, ctx: &mut Ctx<'_>, tu: &FolderName) {
        let state = self.tus.get_mut(tu).unwrap();
        let run = state.refresh.take().expect("refresh in progress");
        state.last_checked = Some(run.started_at);
        let children: Vec<_> = state.children.iter().cloned().collect();
        for sid in run.waiters {
            self.resume(ctx, sid, true);
        }
        for child in children {
            self.refresh_tu(ctx, &child, None);
        }
    }

    fn refresh_failed(&mut self, ctx: &mut Ctx<'_>, tu: &FolderName) {
        ctx.incr("tu_unreachable");
        let Some(run) = self.tus.get_mut(tu).and_then(|s| s.refresh.take()) else { return };
        for sid in run.waiters {
            self.resume(ctx, sid, false);
        }
    }

    /// Continues a request that waited on a refresh. On failure the cached
    /// copy is not trusted and the object is fetched again.
    fn resume(&mut self, ctx: &mut Ctx<'_>, sid: u64, refreshed: bool) {
        let Some(job) = self.serving.get(&sid) else { return };
        let name = job.name.clone();
        if self.blocked.contains(&name) {
            self.fail(ctx, sid);
        } else if refreshed && self.store.contains(&name) {
            self.serve_cached(ctx, sid);
        } else {
            self.fetch_upstream(ctx, sid);
        }
    }

    fn purge(&mut self, ctx: &mut Ctx<'_>, name: &ContentName) {
        if self.store.remove(name).is_some() {
            ctx.incr("purges");
        }
    }

    /// Applies one thread-update command to the store.
    pub fn apply_command(&mut self, ctx: &mut Ctx<'_>, tu: &FolderName, cmd: &ThreadUpdateCommand) {
        ctx.incr("tu_commands_applied");
        if !matches!(cmd, ThreadUpdateCommand::Add(_)) {
            for n in cmd.names() {
                self.commanded.insert(n.clone(), ctx.now);
            }
        }
        match cmd {
            ThreadUpdateCommand::Add(x) => {
                if x.folder().is_tu() {
                    let child = x.folder().clone();
                    self.tus.get_mut(tu).unwrap().children.insert(child);
                } else {
                    self.tus.get_mut(tu).unwrap().order.push(x.clone());
                    if self.config.prefetch && !self.store.contains(x) {
                        let up = Upstream::Prefetch { sent_at: ctx.now };
                        self.request_upstream(ctx, x, up);
                    }
                }
            }
            ThreadUpdateCommand::Delete(x) => {
                self.purge(ctx, x);
                self.blocked.insert(x.clone());
                self.tus.get_mut(tu).unwrap().order.retain(|n| n != x);
            }
            ThreadUpdateCommand::Update(x, y) => {
                self.purge(ctx, x);
                if x != y {
                    self.blocked.insert(x.clone());
                    let order = &mut self.tus.get_mut(tu).unwrap().order;
                    match order.iter().position(|n| n == x) {
                        Some(i) => order[i] = y.clone(),
                        None => order.push(y.clone()),
                    }
                }
            }
            ThreadUpdateCommand::Cut {
                from,
                to,
                predecessor,
                successor,
            } => {
                let order = &self.tus[tu].order;
                let range = match (order.iter().position(|n| n == from), order.iter().position(|n| n == to)) {
                    (Some(i), Some(j)) if i <= j => order[i..=j].to_vec(),
                    _ => vec![from.clone(), to.clone()],
                };
                for n in &range {
                    self.purge(ctx, n);
                    self.blocked.insert(n.clone());
                }
                self.tus.get_mut(tu).unwrap().order.retain(|n| !range.contains(n));
                for n in [predecessor, successor].into_iter().flatten() {
                    self.purge(ctx, n);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests;
