//! The user's authoritative node: social graph, owned content, thread-update
//! emission, key service, certificates, NOTIFY handling, and the
//! application-facing API.

mod app;
mod certificate;
mod client;
mod social;

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use rand::RngCore;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::crypto::{
    rewrite_policy_for_revocation, AttributeAuthority, AttributeKey, CryptoError, Epoch, Identity, Policy,
    PolicyError, PublicIdentity, DEFAULT_KEY_LIFETIME, DEFAULT_RETENTION,
};
use crate::naming::{generate_segment, ContentName, FolderName, NameError};
use crate::netsim::{Ctx, Message, NodeId};
use crate::objects::{
    build_index, build_object, encode_index, fragment_file, tu_genesis_name, Draft, Feed, FeedItem, FragmentSet,
    IndexEntries, Links, NetworkObject, ObjectError, ThreadUpdateCommand, TuEntry, TuRef, DEFAULT_CHUNK_SIZE,
};
use crate::time::SimTime;

pub use app::{AppConfig, AppError, AppStore, Notification};
pub use certificate::{CertificateError, DistributionCertificate};
pub use client::{FeedResult, FetchClient, FetchResult, FetchStatus, JobResult};
pub use social::{is_category, Peer, SocialGraph, RESERVED_PREFIXES};

pub const DEFAULT_BUCKET_COUNT: u32 = 16;

#[derive(Debug, Clone)]
pub struct ButlerConfig {
    pub bucket_count: u32,
    pub key_lifetime: Duration,
    /// Objects built this many epochs ago are re-issued at rotation.
    pub retention: u64,
    pub eager_reencryption: bool,
    pub chunk_size: usize,
    pub route_ttl: Duration,
    pub request_timeout: Duration,
}

impl Default for ButlerConfig {
    fn default() -> Self {
        ButlerConfig {
            bucket_count: DEFAULT_BUCKET_COUNT,
            key_lifetime: DEFAULT_KEY_LIFETIME,
            retention: DEFAULT_RETENTION,
            eager_reencryption: false,
            chunk_size: DEFAULT_CHUNK_SIZE,
            route_ttl: Duration::from_secs(3600),
            request_timeout: Duration::from_secs(2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ButlerError {
    #[error("no application `{0}` installed")]
    NoSuchApplication(String),
    #[error("application `{0}` already installed")]
    AppExists(String),
    #[error("unknown folder `{0}`")]
    UnknownFolder(String),
    #[error("`{0}` is not owned by this butler")]
    NotOwned(String),
    #[error("no content named `{0}`")]
    NotFound(String),
    #[error("unknown peer `{0}`")]
    UnknownPeer(String),
    #[error("`{0}` is not a valid category")]
    BadCategory(String),
    #[error("`{0}` is not a feed folder")]
    NotAFeed(String),
    #[error("a feed labelled `{0}` already exists")]
    LabelExists(String),
    #[error("`{0}` is maintained by the butler")]
    Reserved(String),
    #[error("peer `{peer}` does not hold `{attribute}`")]
    NotEntitled { peer: String, attribute: String },
    #[error("fragmented files cannot be feed entries")]
    FragmentedFeedEntry,
    #[error("peer is not entitled to keys")]
    Unauthorized,
    #[error("epoch {0} is outside the key window")]
    StaleEpoch(Epoch),
    #[error("signature does not verify")]
    BadSignature,
    #[error(transparent)]
    InvalidPolicy(#[from] PolicyError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Object(#[from] ObjectError),
    #[error(transparent)]
    Name(#[from] NameError),
    #[error(transparent)]
    App(#[from] AppError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FolderKind {
    Plain,
    Feed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordKind {
    Content,
    Index,
    TuEntry,
}

/// One owned object: its draft, the revocations applied on top of the
/// draft's policy, and the last built object.
#[derive(Debug, Clone)]
pub struct Record {
    pub draft: Draft,
    pub kind: RecordKind,
    /// (alias, attribute) pairs ousted from this lineage.
    revocations: Vec<(String, String)>,
    built: Option<NetworkObject>,
    built_epoch: Option<Epoch>,
    dirty: bool,
    reencrypt: bool,
}

impl Record {
    fn new(draft: Draft, kind: RecordKind) -> Self {
        Record {
            draft,
            kind,
            revocations: Vec::new(),
            built: None,
            built_epoch: None,
            dirty: true,
            reencrypt: false,
        }
    }

    pub fn version(&self) -> u64 {
        self.draft.version
    }

    /// The last built object, if it reflects the current draft.
    pub fn built(&self) -> Option<&NetworkObject> {
        self.built.as_ref().filter(|_| !self.dirty)
    }

    pub fn built_epoch(&self) -> Option<Epoch> {
        self.built_epoch
    }

    pub fn revocations(&self) -> &[(String, String)] {
        &self.revocations
    }

    fn fragment_set(&self) -> Option<FragmentSet> {
        let l = &self.draft.links;
        Some(FragmentSet {
            folder: self.draft.name.folder().clone(),
            seed: l.segment_seed?,
            count: l.number_of_segments?,
        })
    }
}

impl FeedItem for Record {
    fn name(&self) -> &ContentName {
        &self.draft.name
    }

    fn links(&self) -> &Links {
        &self.draft.links
    }

    fn links_mut(&mut self) -> &mut Links {
        &mut self.draft.links
    }

    fn reissue(&mut self) {
        self.draft.version += 1;
        self.dirty = true;
    }
}

#[derive(Debug)]
struct FolderState {
    app: String,
    label: String,
    kind: FolderKind,
    plain: BTreeMap<ContentName, Record>,
    feed: Feed<Record>,
    tu: Feed<Record>,
    tu_seq: u64,
    dp: Policy,
}

/// Decides whether a NOTIFY earns a link object.
pub type NotifyPredicate = fn(&Notification, &SocialGraph) -> bool;

/// Accepts notifications from peers the owner has put in some category.
pub fn accept_categorized(n: &Notification, social: &SocialGraph) -> bool {
    social.peer(&n.sender).is_some_and(|p| !p.categories.is_empty())
}

struct App {
    root: FolderName,
    config: AppConfig,
    entries: IndexEntries,
    subscribed: bool,
    inbox: Vec<Notification>,
    predicate: NotifyPredicate,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Mutation {
    Update(Vec<u8>),
    Delete,
    /// Cut the feed range from the mutated name through `to`.
    Cut { to: ContentName },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RevokeScope {
    /// One lineage.
    Name(ContentName),
    /// Remove the peer from a category and rewrite everything that uses it.
    Attribute(String),
}

#[derive(Debug, Clone, Default)]
pub struct PublishOptions {
    /// Overrides the folder's distributor policy.
    pub dp: Option<Policy>,
    pub fragmented: bool,
    pub reference: Option<ContentName>,
}

/// The bytes a NOTIFY sender signs.
pub fn notify_bytes(name: &ContentName, checksum: &[u8; 32], application: &str) -> Vec<u8> {
    let mut out = b"warp-notify\0".to_vec();
    out.extend_from_slice(name.to_string().as_bytes());
    out.push(0);
    out.extend_from_slice(checksum);
    out.extend_from_slice(application.as_bytes());
    out
}

pub struct Butler {
    identity: Identity,
    config: ButlerConfig,
    rng: ChaCha20Rng,
    authority: AttributeAuthority,
    social: SocialGraph,
    apps: BTreeMap<String, App>,
    folders: BTreeMap<FolderName, FolderState>,
    successor: BTreeMap<ContentName, ContentName>,
    certificates: Vec<DistributionCertificate>,
    store: AppStore,
    client: FetchClient,
}

impl Butler {
    pub fn new(identity: Identity, config: ButlerConfig, mut rng: ChaCha20Rng) -> Self {
        let authority = AttributeAuthority::new(identity.name(), &mut rng).with_key_lifetime(config.key_lifetime);
        let social = SocialGraph::new(config.bucket_count, &mut rng);
        let client = FetchClient::new(config.route_ttl, config.request_timeout);
        Butler {
            identity,
            config,
            rng,
            authority,
            social,
            apps: BTreeMap::new(),
            folders: BTreeMap::new(),
            successor: BTreeMap::new(),
            certificates: Vec::new(),
            store: AppStore::default(),
            client,
        }
    }

    pub fn name(&self) -> String {
        self.identity.name()
    }

    pub fn public_identity(&self) -> PublicIdentity {
        self.identity.public()
    }

    pub fn config(&self) -> &ButlerConfig {
        &self.config
    }

    pub fn social(&self) -> &SocialGraph {
        &self.social
    }

    pub fn epoch(&self) -> Epoch {
        self.authority.epoch()
    }

    pub fn client(&self) -> &FetchClient {
        &self.client
    }

    pub fn result(&self, tag: &str) -> Option<&JobResult> {
        self.client.result(tag)
    }

    pub fn certificates(&self) -> &[DistributionCertificate] {
        &self.certificates
    }

    pub fn app_root(&self, app: &str) -> Option<&FolderName> {
        self.apps.get(app).map(|a| &a.root)
    }

    /// Follows re-issues under fresh names to the live name.
    pub fn current_name(&self, name: &ContentName) -> ContentName {
        let mut cur = name.clone();
        while let Some(next) = self.successor.get(&cur) {
            cur = next.clone();
        }
        cur
    }

    pub fn record(&self, name: &ContentName) -> Option<&Record> {
        let folder = name.folder();
        if folder.is_tu() {
            return self.folders.get(&folder.governed_folder()?)?.tu.get(name);
        }
        let s = self.folders.get(folder)?;
        s.plain.get(name).or_else(|| s.feed.get(name))
    }

    fn record_mut(&mut self, name: &ContentName) -> Option<&mut Record> {
        let folder = name.folder();
        if folder.is_tu() {
            return self.folders.get_mut(&folder.governed_folder()?)?.tu.get_mut(name);
        }
        let s = self.folders.get_mut(folder)?;
        if s.plain.contains_key(name) {
            s.plain.get_mut(name)
        } else {
            s.feed.get_mut(name)
        }
    }

    /// Content names in `folder`: feed order for feeds, name order otherwise.
    pub fn folder_contents(&self, folder: &FolderName) -> Option<Vec<ContentName>> {
        let s = self.folders.get(folder)?;
        Some(match s.kind {
            FolderKind::Feed => s.feed.names_forward(),
            FolderKind::Plain => s.plain.keys().cloned().collect(),
        })
    }

    /// The thread-update entries of `folder`, genesis first.
    pub fn tu_entries(&self, folder: &FolderName) -> Option<Vec<TuEntry>> {
        let s = self.folders.get(folder)?;
        let entries = s
            .tu
            .names_forward()
            .iter()
            .map(|n| TuEntry::decode(&s.tu.get(n).unwrap().draft.payload).expect("own encoding"))
            .collect();
        Some(entries)
    }

    pub fn folder_kind(&self, folder: &FolderName) -> Option<FolderKind> {
        self.folders.get(folder).map(|s| s.kind)
    }

    fn default_dp(folder: &FolderName) -> Policy {
        let mut leaves = vec![Policy::leaf(format!("dist:{folder}"))];
        let mut cur = folder.parent().ok();
        while let Some(p) = cur {
            leaves.push(Policy::leaf(format!("dist:{p}")));
            cur = p.parent().ok();
        }
        if leaves.len() == 1 {
            leaves.pop().unwrap()
        } else {
            Policy::Or(leaves)
        }
    }

    fn new_folder_state(&mut self, folder: &FolderName, app: &str, label: &str, kind: FolderKind) -> FolderState {
        let dp = Self::default_dp(folder);
        let genesis = TuEntry { seq: 0, command: None };
        let draft = Draft::new(tu_genesis_name(folder), genesis.encode(), dp.clone(), dp.clone());
        let mut tu = Feed::new();
        tu.append(Record::new(draft, RecordKind::TuEntry)).expect("empty feed");
        FolderState {
            app: app.to_owned(),
            label: label.to_owned(),
            kind,
            plain: BTreeMap::new(),
            feed: Feed::new(),
            tu,
            tu_seq: 0,
            dp,
        }
    }

    fn fresh_name(&mut self, folder: &FolderName) -> ContentName {
        folder
            .join(&generate_segment(&mut self.rng))
            .expect("generated segment is valid")
    }

    fn invalidate(ctx: &mut Ctx<'_>, name: &ContentName, version: u64) {
        let now = ctx.now;
        ctx.oracle().invalidate(name, version, now);
    }

    /// Reports the version before the latest re-issue of `name` as void.
    fn invalidate_prior(&self, ctx: &mut Ctx<'_>, name: &ContentName) {
        if let Some(r) = self.record(name) {
            Self::invalidate(ctx, name, r.version() - 1);
        }
    }

    /// Appends `cmd` to `folder`'s thread-update feed.
    fn emit(&mut self, ctx: &mut Ctx<'_>, folder: &FolderName, cmd: ThreadUpdateCommand) {
        let name = self.fresh_name(&folder.tu_folder());
        let state = self.folders.get_mut(folder).expect("emitting on a known folder");
        state.tu_seq += 1;
        let entry = TuEntry {
            seq: state.tu_seq,
            command: Some(cmd),
        };
        let draft = Draft::new(name, entry.encode(), state.dp.clone(), state.dp.clone());
        let old_tail = state.tu.append(Record::new(draft, RecordKind::TuEntry)).expect("fresh name");
        if let Some(t) = old_tail {
            self.invalidate_prior(ctx, &t);
        }
        ctx.incr("tu_commands_emitted");
    }

    pub fn install_app(&mut self, ctx: &mut Ctx<'_>, app: &str, config: AppConfig) -> Result<FolderName, ButlerError> {
        if self.apps.contains_key(app) {
            return Err(ButlerError::AppExists(app.to_owned()));
        }
        config.index_fp.validate()?;
        let root = FolderName::application_prefix(self.identity.ia(), self.identity.username(), app)?;
        let mut state = self.new_folder_state(&root, app, "", FolderKind::Plain);
        let index = build_index(&root, &IndexEntries::new(), &config.index_fp, &state.dp)?;
        let index_name = index.name.clone();
        state.plain.insert(index_name.clone(), Record::new(index, RecordKind::Index));
        self.folders.insert(root.clone(), state);
        self.apps.insert(
            app.to_owned(),
            App {
                root: root.clone(),
                config,
                entries: IndexEntries::new(),
                subscribed: false,
                inbox: Vec::new(),
                predicate: accept_categorized,
            },
        );
        self.emit(ctx, &root, ThreadUpdateCommand::Add(index_name));
        Ok(root)
    }

    /// Sets the folder and policy used for link objects.
    pub fn set_link_folder(&mut self, app: &str, folder: FolderName, fp: Policy) -> Result<(), ButlerError> {
        fp.validate()?;
        if !self.folders.contains_key(&folder) {
            return Err(ButlerError::UnknownFolder(folder.to_string()));
        }
        let a = self.app_mut(app)?;
        a.config.link_folder = Some(folder);
        a.config.link_fp = Some(fp);
        Ok(())
    }

    fn app_mut(&mut self, app: &str) -> Result<&mut App, ButlerError> {
        self.apps
            .get_mut(app)
            .ok_or_else(|| ButlerError::NoSuchApplication(app.to_owned()))
    }

    /// Creates a subfolder. Feed folders with a label are listed in the
    /// application index as `first/<label>` and `latest/<label>`.
    pub fn create_folder(
        &mut self,
        ctx: &mut Ctx<'_>,
        parent: &FolderName,
        label: &str,
        kind: FolderKind,
    ) -> Result<FolderName, ButlerError> {
        let app = match self.folders.get(parent) {
            Some(s) => s.app.clone(),
            None if parent.owner() != self.name() => return Err(ButlerError::NotOwned(parent.to_string())),
            None => return Err(ButlerError::UnknownFolder(parent.to_string())),
        };
        if kind == FolderKind::Feed
            && !label.is_empty()
            && self.folders.values().any(|s| s.app == app && s.label == label)
        {
            return Err(ButlerError::LabelExists(label.to_owned()));
        }
        let child = parent.child(&generate_segment(&mut self.rng))?;
        let state = self.new_folder_state(&child, &app, label, kind);
        self.folders.insert(child.clone(), state);
        self.emit(ctx, parent, ThreadUpdateCommand::Add(tu_genesis_name(&child)));
        Ok(child)
    }

    fn owned_folder(&self, folder: &FolderName) -> Result<&FolderState, ButlerError> {
        match self.folders.get(folder) {
            Some(s) => Ok(s),
            None if folder.owner() != self.name() => Err(ButlerError::NotOwned(folder.to_string())),
            None => Err(ButlerError::UnknownFolder(folder.to_string())),
        }
    }

    pub fn publish(
        &mut self,
        ctx: &mut Ctx<'_>,
        folder: &FolderName,
        payload: Vec<u8>,
        fp: Policy,
        options: PublishOptions,
    ) -> Result<ContentName, ButlerError> {
        fp.validate()?;
        if let Some(dp) = &options.dp {
            dp.validate()?;
        }
        let state = self.owned_folder(folder)?;
        let (kind, app) = (state.kind, state.app.clone());
        let dp = options.dp.clone().unwrap_or_else(|| state.dp.clone());
        if options.fragmented {
            if kind == FolderKind::Feed {
                return Err(ButlerError::FragmentedFeedEntry);
            }
            let mut seed = [0u8; 16];
            self.rng.fill_bytes(&mut seed);
            let (set, drafts) = fragment_file(&payload, self.config.chunk_size, folder, seed, &fp, &dp)?;
            for mut d in drafts {
                d.links.reference = options.reference.clone();
                let name = d.name.clone();
                let state = self.folders.get_mut(folder).unwrap();
                state.plain.insert(name.clone(), Record::new(d, RecordKind::Content));
                self.emit(ctx, folder, ThreadUpdateCommand::Add(name.clone()));
                self.ensure_built(ctx, &name)?;
            }
            return Ok(set.name(1));
        }
        let name = self.fresh_name(folder);
        let mut draft = Draft::new(name.clone(), payload, fp, dp);
        draft.links.reference = options.reference;
        let record = Record::new(draft, RecordKind::Content);
        let state = self.folders.get_mut(folder).unwrap();
        match kind {
            FolderKind::Plain => {
                state.plain.insert(name.clone(), record);
                self.emit(ctx, folder, ThreadUpdateCommand::Add(name.clone()));
            }
            FolderKind::Feed => {
                let old_tail = state.feed.append(record)?;
                self.emit(ctx, folder, ThreadUpdateCommand::Add(name.clone()));
                if let Some(t) = old_tail {
                    self.invalidate_prior(ctx, &t);
                    self.emit(ctx, folder, ThreadUpdateCommand::Update(t.clone(), t));
                }
                self.refresh_index(ctx, &app)?;
            }
        }
        self.ensure_built(ctx, &name)?;
        Ok(name)
    }

    /// Replaces the application's own index entries and re-issues the index.
    pub fn compile_index(&mut self, ctx: &mut Ctx<'_>, app: &str, entries: IndexEntries) -> Result<(), ButlerError> {
        let me = self.name();
        if let Some((_, n)) = entries.iter().find(|(_, n)| n.owner() != me) {
            return Err(ObjectError::ForeignIndexEntry(n.to_string()).into());
        }
        if entries.keys().any(|l| l.is_empty()) {
            return Err(ObjectError::EmptyLabel.into());
        }
        self.app_mut(app)?.entries = entries;
        self.refresh_index(ctx, app)
    }

    fn index_entries(&self, app: &str) -> IndexEntries {
        let a = &self.apps[app];
        let mut entries = a.entries.clone();
        for s in self.folders.values() {
            if s.app != app || s.kind != FolderKind::Feed || s.label.is_empty() {
                continue;
            }
            if let (Some(h), Some(t)) = (s.feed.head(), s.feed.tail()) {
                entries.insert(format!("first/{}", s.label), h.clone());
                entries.insert(format!("latest/{}", s.label), t.clone());
            }
        }
        entries
    }

    fn refresh_index(&mut self, ctx: &mut Ctx<'_>, app: &str) -> Result<(), ButlerError> {
        let root = self.apps.get(app).ok_or_else(|| ButlerError::NoSuchApplication(app.to_owned()))?.root.clone();
        let payload = encode_index(&self.index_entries(app));
        let idx = root.index_name();
        let rec = self.record_mut(&idx).expect("index exists");
        if rec.draft.payload == payload {
            return Ok(());
        }
        rec.draft.payload = payload;
        rec.reissue();
        self.invalidate_prior(ctx, &idx);
        self.emit(ctx, &root, ThreadUpdateCommand::Update(idx.clone(), idx));
        Ok(())
    }

    /// The follower policy actually used: the draft's policy with every
    /// recorded revocation applied.
    pub fn effective_fp(&self, record: &Record) -> Policy {
        let buckets = self.social.buckets();
        let mut fp = record.draft.fp.clone();
        for (alias, attribute) in &record.revocations {
            fp = match rewrite_policy_for_revocation(&fp, attribute, alias, &buckets, self.social.bucket_count()) {
                Ok(p) => p,
                // Nobody else could hold the attribute: only the owner remains.
                Err(CryptoError::EmptyAudience) => {
                    let me = self.social.self_attribute();
                    fp.map_leaves(&mut |a| Policy::leaf(if a == attribute { me.as_str() } else { a }))
                }
                Err(_) => fp,
            };
        }
        fp
    }

    fn tu_ref_for(&self, name: &ContentName) -> TuRef {
        let folder = name.folder();
        let tu = if folder.is_tu() {
            let governed = folder.governed_folder().expect("thread-update folder");
            match governed.parent() {
                Ok(p) => p.tu_folder(),
                Err(_) => folder.clone(),
            }
        } else {
            folder.tu_folder()
        };
        let governed = tu.governed_folder().expect("thread-update folder");
        let pointer = self
            .folders
            .get(&governed)
            .and_then(|s| s.tu.tail().cloned())
            .unwrap_or_else(|| tu_genesis_name(&governed));
        TuRef { name: tu, pointer }
    }

    /// Returns the current object for `name`, building it if the draft
    /// changed since the last build.
    pub fn ensure_built(&mut self, ctx: &mut Ctx<'_>, name: &ContentName) -> Result<NetworkObject, ButlerError> {
        let rec = self.record(name).ok_or_else(|| ButlerError::NotFound(name.to_string()))?;
        if let Some(obj) = rec.built() {
            return Ok(obj.clone());
        }
        let mut draft = rec.draft.clone();
        draft.fp = self.effective_fp(rec);
        let tu = self.tu_ref_for(name);
        let epoch = self.authority.epoch();
        let obj = build_object(&self.identity, &self.authority, &draft, &tu, epoch, &mut self.rng)?;
        let rec = self.record_mut(name).unwrap();
        let reencrypted = std::mem::take(&mut rec.reencrypt);
        rec.built = Some(obj.clone());
        rec.built_epoch = Some(epoch);
        rec.dirty = false;
        ctx.incr("objects_built");
        if reencrypted {
            ctx.incr("reencryptions");
        }
        Ok(obj)
    }

    fn content_record(&self, name: &ContentName) -> Result<&Record, ButlerError> {
        if name.owner() != self.name() {
            return Err(ButlerError::NotOwned(name.to_string()));
        }
        let rec = self.record(name).ok_or_else(|| ButlerError::NotFound(name.to_string()))?;
        if rec.kind != RecordKind::Content {
            return Err(ButlerError::Reserved(name.to_string()));
        }
        Ok(rec)
    }

    /// Updates, deletes, or cuts owned content and emits the matching
    /// thread-update commands. Returns the new name after an update.
    pub fn mutate_content(
        &mut self,
        ctx: &mut Ctx<'_>,
        name: &ContentName,
        mutation: Mutation,
    ) -> Result<Option<ContentName>, ButlerError> {
        let rec = self.content_record(name)?;
        let fragments = rec.fragment_set();
        let folder = name.folder().clone();
        let app = self.folders[&folder].app.clone();
        let in_feed = self.folders[&folder].feed.contains(name);
        match mutation {
            Mutation::Update(payload) => self.replace(ctx, name, Some(payload), Vec::new()).map(Some),
            Mutation::Delete => {
                if let Some(set) = fragments {
                    for n in set.names() {
                        if let Some(r) = self.folders.get_mut(&folder).unwrap().plain.remove(&n) {
                            Self::invalidate(ctx, &n, r.version());
                            self.emit(ctx, &folder, ThreadUpdateCommand::Delete(n));
                        }
                    }
                } else if in_feed {
                    self.cut(ctx, &folder, name, name)?;
                    self.refresh_index(ctx, &app)?;
                } else {
                    let r = self.folders.get_mut(&folder).unwrap().plain.remove(name).unwrap();
                    Self::invalidate(ctx, name, r.version());
                    self.emit(ctx, &folder, ThreadUpdateCommand::Delete(name.clone()));
                }
                Ok(None)
            }
            Mutation::Cut { to } => {
                if !in_feed {
                    return Err(ButlerError::NotAFeed(folder.to_string()));
                }
                self.content_record(&to)?;
                self.cut(ctx, &folder, name, &to)?;
                self.refresh_index(ctx, &app)?;
                Ok(None)
            }
        }
    }

    fn cut(&mut self, ctx: &mut Ctx<'_>, folder: &FolderName, from: &ContentName, to: &ContentName) -> Result<(), ButlerError> {
        let out = self.folders.get_mut(folder).unwrap().feed.cut(from, to)?;
        for r in &out.removed {
            Self::invalidate(ctx, &r.draft.name, r.version());
        }
        for n in [&out.predecessor, &out.successor].into_iter().flatten() {
            self.invalidate_prior(ctx, n);
        }
        self.emit(
            ctx,
            folder,
            ThreadUpdateCommand::Cut {
                from: from.clone(),
                to: to.clone(),
                predecessor: out.predecessor,
                successor: out.successor,
            },
        );
        Ok(())
    }

    /// Re-issues a content lineage under a fresh name with version + 1,
    /// optionally with a new payload and extra revocations.
    fn replace(
        &mut self,
        ctx: &mut Ctx<'_>,
        name: &ContentName,
        payload: Option<Vec<u8>>,
        revocations: Vec<(String, String)>,
    ) -> Result<ContentName, ButlerError> {
        let rec = self.content_record(name)?.clone();
        if let Some(set) = rec.fragment_set() {
            return self.replace_fragments(ctx, &rec, set, payload, revocations);
        }
        let folder = name.folder().clone();
        let new_name = self.fresh_name(&folder);
        let mut new = rec.clone();
        new.draft.name = new_name.clone();
        new.draft.version = rec.version() + 1;
        if let Some(p) = payload {
            new.draft.payload = p;
        }
        new.reencrypt = !revocations.is_empty();
        new.revocations.extend(revocations);
        new.built = None;
        new.built_epoch = None;
        new.dirty = true;
        let state = self.folders.get_mut(&folder).unwrap();
        let app = state.app.clone();
        if state.feed.contains(name) {
            let (_, touched) = state.feed.replace(name, new)?;
            Self::invalidate(ctx, name, rec.version());
            self.emit(ctx, &folder, ThreadUpdateCommand::Update(name.clone(), new_name.clone()));
            for t in touched {
                self.invalidate_prior(ctx, &t);
                self.emit(ctx, &folder, ThreadUpdateCommand::Update(t.clone(), t));
            }
            self.refresh_index(ctx, &app)?;
        } else {
            state.plain.remove(name);
            state.plain.insert(new_name.clone(), new);
            Self::invalidate(ctx, name, rec.version());
            self.emit(ctx, &folder, ThreadUpdateCommand::Update(name.clone(), new_name.clone()));
        }
        self.successor.insert(name.clone(), new_name.clone());
        Ok(new_name)
    }

    fn replace_fragments(
        &mut self,
        ctx: &mut Ctx<'_>,
        rec: &Record,
        old: FragmentSet,
        payload: Option<Vec<u8>>,
        revocations: Vec<(String, String)>,
    ) -> Result<ContentName, ButlerError> {
        let folder = old.folder.clone();
        let old_names = old.names();
        let state = self.folders.get_mut(&folder).unwrap();
        let old_recs: Vec<Record> = old_names.iter().filter_map(|n| state.plain.get(n).cloned()).collect();
        let data = payload.unwrap_or_else(|| old_recs.iter().flat_map(|r| r.draft.payload.clone()).collect());
        let mut seed = [0u8; 16];
        self.rng.fill_bytes(&mut seed);
        let (set, drafts) = fragment_file(&data, self.config.chunk_size, &folder, seed, &rec.draft.fp, &rec.draft.dp)?;
        let new_names = set.names();
        let state = self.folders.get_mut(&folder).unwrap();
        for n in &old_names {
            state.plain.remove(n);
        }
        for (i, mut d) in drafts.into_iter().enumerate() {
            d.links.reference = rec.draft.links.reference.clone();
            d.version = old_recs.get(i).map_or(1, |r| r.version() + 1);
            let mut r = Record::new(d, RecordKind::Content);
            r.revocations = rec.revocations.clone();
            r.revocations.extend(revocations.iter().cloned());
            r.reencrypt = !revocations.is_empty();
            state.plain.insert(r.draft.name.clone(), r);
        }
        for i in 0..old_names.len().max(new_names.len()) {
            match (old_names.get(i), new_names.get(i)) {
                (Some(o), Some(n)) => {
                    Self::invalidate(ctx, o, old_recs.get(i).map_or(1, |r| r.version()));
                    self.successor.insert(o.clone(), n.clone());
                    self.emit(ctx, &folder, ThreadUpdateCommand::Update(o.clone(), n.clone()));
                }
                (Some(o), None) => {
                    Self::invalidate(ctx, o, old_recs.get(i).map_or(1, |r| r.version()));
                    self.emit(ctx, &folder, ThreadUpdateCommand::Delete(o.clone()));
                }
                (None, Some(n)) => self.emit(ctx, &folder, ThreadUpdateCommand::Add(n.clone())),
                (None, None) => unreachable!(),
            }
        }
        Ok(set.name(1))
    }

    pub fn categorize_user<I, S>(&mut self, ctx: &mut Ctx<'_>, peer: &str, categories: I) -> Result<&Peer, ButlerError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let identity = ctx
            .directory
            .identity(peer)
            .cloned()
            .ok_or_else(|| ButlerError::UnknownPeer(peer.to_owned()))?;
        self.categorize_identity(ctx, identity, categories)
    }

    pub fn categorize_identity<I, S>(
        &mut self,
        ctx: &mut Ctx<'_>,
        identity: PublicIdentity,
        categories: I,
    ) -> Result<&Peer, ButlerError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let cats: BTreeSet<String> = categories.into_iter().map(Into::into).collect();
        if let Some(bad) = cats.iter().find(|c| !is_category(c)) {
            return Err(ButlerError::BadCategory(bad.clone()));
        }
        Ok(self.social.categorize(ctx.directory.anchors(), identity, cats, &mut self.rng)?)
    }

    /// Ousts `peer` from one lineage or from a category. Content is rebuilt
    /// lazily unless the butler is configured for eager re-encryption.
    /// Returns the re-issued names.
    pub fn revoke_access(
        &mut self,
        ctx: &mut Ctx<'_>,
        peer: &str,
        scope: RevokeScope,
    ) -> Result<Vec<ContentName>, ButlerError> {
        let p = self
            .social
            .peer(peer)
            .cloned()
            .ok_or_else(|| ButlerError::UnknownPeer(peer.to_owned()))?;
        let entitled = p.entitled();
        let mut reissued = Vec::new();
        match scope {
            RevokeScope::Name(name) => {
                let rec = self.content_record(&name)?;
                let revs: Vec<(String, String)> = rec
                    .draft
                    .fp
                    .attributes()
                    .into_iter()
                    .filter(|a| entitled.contains(a))
                    .map(|a| (p.alias.clone(), a))
                    .collect();
                if !revs.is_empty() {
                    reissued.push(self.replace(ctx, &name, None, revs)?);
                }
            }
            RevokeScope::Attribute(attribute) => {
                if !p.categories.contains(&attribute) {
                    return Err(ButlerError::NotEntitled {
                        peer: peer.to_owned(),
                        attribute,
                    });
                }
                self.social.remove_category(peer, &attribute);
                let rev = (p.alias.clone(), attribute.clone());
                let mut targets = Vec::new();
                let mut indexes = Vec::new();
                for s in self.folders.values() {
                    for r in s.plain.values().chain(s.feed.items()) {
                        if !r.draft.fp.mentions(&attribute) || r.revocations.contains(&rev) {
                            continue;
                        }
                        match r.kind {
                            RecordKind::Content => {
                                // One entry per fragment set.
                                let first = r.fragment_set().map(|set| set.name(1));
                                if first.is_none_or(|f| f == r.draft.name) {
                                    targets.push(r.draft.name.clone());
                                }
                            }
                            RecordKind::Index => indexes.push(r.draft.name.clone()),
                            RecordKind::TuEntry => {}
                        }
                    }
                }
                for name in targets {
                    reissued.push(self.replace(ctx, &name, None, vec![rev.clone()])?);
                }
                for idx in indexes {
                    let rec = self.record_mut(&idx).unwrap();
                    rec.revocations.push(rev.clone());
                    rec.reissue();
                    rec.reencrypt = true;
                    self.invalidate_prior(ctx, &idx);
                    self.emit(ctx, idx.folder(), ThreadUpdateCommand::Update(idx.clone(), idx.clone()));
                    reissued.push(idx);
                }
            }
        }
        if self.config.eager_reencryption {
            for n in &reissued {
                let set = self.record(n).and_then(Record::fragment_set);
                for m in set.map_or_else(|| vec![n.clone()], |s| s.names()) {
                    self.ensure_built(ctx, &m)?;
                }
            }
        }
        Ok(reissued)
    }

    /// Moves to the next key epoch. Objects built `retention` epochs ago are
    /// re-issued in place and certificates are renewed with fresh keys.
    pub fn rotate_epoch(&mut self, ctx: &mut Ctx<'_>) -> Epoch {
        let epoch = self.authority.rotate_epoch();
        let retention = self.config.retention;
        let expired = |r: &Record| !r.dirty && r.built_epoch.is_some_and(|e| e + retention <= epoch);
        let mut stale = Vec::new();
        for s in self.folders.values() {
            for r in s.plain.values().chain(s.feed.items()).chain(s.tu.items()) {
                if expired(r) {
                    stale.push((r.draft.name.clone(), r.kind));
                }
            }
        }
        for (name, kind) in &stale {
            let rec = self.record_mut(name).unwrap();
            rec.reissue();
            rec.reencrypt = true;
            self.invalidate_prior(ctx, name);
            if *kind != RecordKind::TuEntry {
                self.emit(ctx, name.folder(), ThreadUpdateCommand::Update(name.clone(), name.clone()));
            }
        }
        if self.config.eager_reencryption {
            for (name, _) in &stale {
                let _ = self.ensure_built(ctx, name);
            }
        }
        let renew: Vec<_> = self
            .certificates
            .iter()
            .filter(|c| c.is_valid_at(ctx.now))
            .map(|c| (c.distributor.clone(), c.folder.clone(), c.expiry))
            .collect();
        for (d, f, e) in renew {
            let _ = self.grant_certificate(ctx, &d, &f, e);
        }
        epoch
    }

    pub fn issue_certificate(
        &mut self,
        ctx: &mut Ctx<'_>,
        distributor: &str,
        folder: &FolderName,
        expiry: SimTime,
    ) -> Result<DistributionCertificate, ButlerError> {
        self.owned_folder(folder)?;
        if ctx.directory.id(distributor).is_none() {
            return Err(ButlerError::UnknownPeer(distributor.to_owned()));
        }
        let now = ctx.now;
        self.certificates
            .retain(|c| c.is_valid_at(now) && !(c.distributor == distributor && &c.folder == folder));
        let mut listed: Vec<(String, FolderName)> = self
            .certificates
            .iter()
            .filter(|c| folder.contains(&c.folder))
            .map(|c| (c.distributor.clone(), c.folder.clone()))
            .chain([(distributor.to_owned(), folder.clone())])
            .collect();
        listed.sort();
        listed.dedup();
        let attribute = format!("dist:{folder}");
        let epoch = self.authority.epoch();
        let epochs: BTreeSet<Epoch> = [epoch.saturating_sub(1), epoch].into();
        let keys = epochs.into_iter().map(|e| self.authority.derive(&attribute, e, now)).collect();
        let cert = DistributionCertificate::issue(&self.identity, distributor, folder.clone(), listed, keys, expiry);
        self.certificates.push(cert.clone());
        ctx.incr("certificates_issued");
        Ok(cert)
    }

    /// Issues a certificate and sends it to the distributor.
    pub fn grant_certificate(
        &mut self,
        ctx: &mut Ctx<'_>,
        distributor: &str,
        folder: &FolderName,
        expiry: SimTime,
    ) -> Result<(), ButlerError> {
        let cert = self.issue_certificate(ctx, distributor, folder, expiry)?;
        let to = ctx.directory.id(distributor).expect("checked at issue");
        ctx.send(
            to,
            Message::Grant {
                certificate: Box::new(cert),
            },
        );
        Ok(())
    }

    fn answer_resolve(&mut self, ctx: &mut Ctx<'_>, from: NodeId, id: u64, folder: FolderName) {
        let now = ctx.now;
        let covering: Vec<&DistributionCertificate> = self
            .certificates
            .iter()
            .filter(|c| c.is_valid_at(now) && c.folder.contains(&folder))
            .collect();
        let ttl = now + self.config.route_ttl;
        let reply = match covering.iter().map(|c| c.folder.depth()).max() {
            Some(depth) => {
                let best: Vec<_> = covering.into_iter().filter(|c| c.folder.depth() == depth).collect();
                let mut names: Vec<String> = best.iter().map(|c| c.distributor.clone()).collect();
                names.sort();
                names.dedup();
                Message::ResolveReply {
                    id,
                    folder: best[0].folder.clone(),
                    distributors: names,
                    expiry: best.iter().map(|c| c.expiry).min().unwrap().min(ttl),
                }
            }
            // The butler itself is the source for uncertified folders.
            None => Message::ResolveReply {
                id,
                folder,
                distributors: Vec::new(),
                expiry: ttl,
            },
        };
        ctx.incr("resolves_answered");
        ctx.send(from, reply);
    }

    /// Keys `peer` is entitled to among `attributes`, at `epoch`.
    pub fn handle_key_request(
        &mut self,
        ctx: &mut Ctx<'_>,
        peer: &str,
        attributes: &[String],
        epoch: Epoch,
    ) -> Result<Vec<AttributeKey>, ButlerError> {
        let p = self.social.peer(peer).ok_or(ButlerError::Unauthorized)?;
        if p.categories.is_empty() {
            return Err(ButlerError::Unauthorized);
        }
        let current = self.authority.epoch();
        if epoch > current || epoch + 1 < current {
            return Err(ButlerError::StaleEpoch(epoch));
        }
        let entitled = p.entitled();
        let keys: Vec<AttributeKey> = attributes
            .iter()
            .filter(|a| entitled.contains(*a))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .map(|a| self.authority.derive(a, epoch, ctx.now))
            .collect();
        ctx.add("keys_issued", keys.len() as u64);
        Ok(keys)
    }

    fn serve(&mut self, ctx: &mut Ctx<'_>, from: NodeId, id: u64, name: ContentName) {
        let msg = match self.ensure_built(ctx, &name) {
            Ok(object) => {
                ctx.incr("serves");
                Message::Data {
                    id,
                    object: Box::new(object),
                    next_allowed: None,
                }
            }
            Err(_) => Message::NotFound {
                id,
                name,
                next_allowed: None,
            },
        };
        ctx.send(from, msg);
    }

    pub fn subscribe_notify(&mut self, app: &str) -> Result<(), ButlerError> {
        self.app_mut(app)?.subscribed = true;
        Ok(())
    }

    pub fn set_notify_predicate(&mut self, app: &str, predicate: NotifyPredicate) -> Result<(), ButlerError> {
        self.app_mut(app)?.predicate = predicate;
        Ok(())
    }

    /// Notifications delivered to a subscribed application.
    pub fn notifications(&self, app: &str) -> &[Notification] {
        self.apps.get(app).map_or(&[], |a| &a.inbox)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn handle_notify(
        &mut self,
        ctx: &mut Ctx<'_>,
        sender: &PublicIdentity,
        content_name: &ContentName,
        checksum: [u8; 32],
        application: &str,
        signature: &[u8],
    ) -> Result<Notification, ButlerError> {
        let genuine = ctx.directory.anchors().verify(sender).is_ok()
            && sender.name() == content_name.owner()
            && sender.verify(&notify_bytes(content_name, &checksum, application), signature);
        if !genuine {
            return Err(ButlerError::BadSignature);
        }
        let app = self
            .apps
            .get(application)
            .ok_or_else(|| ButlerError::NoSuchApplication(application.to_owned()))?;
        ctx.incr("notifies_received");
        let mut note = Notification {
            sender: sender.name(),
            content_name: content_name.clone(),
            checksum,
            received_at: ctx.now,
            link: None,
        };
        let link_to = match (&app.config.link_folder, (app.predicate)(&note, &self.social)) {
            (Some(f), true) => Some((f.clone(), app.config.link_fp.clone().unwrap_or(app.config.index_fp.clone()))),
            _ => None,
        };
        if let Some((folder, fp)) = link_to {
            let options = PublishOptions {
                reference: Some(content_name.clone()),
                ..PublishOptions::default()
            };
            let link = self.publish(ctx, &folder, content_name.to_string().into_bytes(), fp, options)?;
            ctx.incr("links_created");
            note.link = Some(link);
        }
        let app = self.apps.get_mut(application).unwrap();
        if app.subscribed {
            app.inbox.push(note.clone());
        }
        Ok(note)
    }

    /// Publishes a reply to `target` in one of our folders and tells the
    /// target's owner about it.
    pub fn comment(
        &mut self,
        ctx: &mut Ctx<'_>,
        folder: &FolderName,
        payload: Vec<u8>,
        fp: Policy,
        target: &ContentName,
    ) -> Result<ContentName, ButlerError> {
        let owner = ctx
            .directory
            .id(&target.owner())
            .ok_or_else(|| ButlerError::UnknownPeer(target.owner()))?;
        let options = PublishOptions {
            reference: Some(target.clone()),
            ..PublishOptions::default()
        };
        let name = self.publish(ctx, folder, payload, fp, options)?;
        let checksum = self.ensure_built(ctx, &name)?.checksum();
        let application = target.application().to_owned();
        let signature = self.identity.sign(&notify_bytes(&name, &checksum, &application));
        ctx.send(
            owner,
            Message::Notify {
                sender: self.identity.public(),
                content_name: name.clone(),
                checksum,
                application,
                signature,
            },
        );
        Ok(name)
    }

    pub fn app_create(&mut self, app: &str, data: Vec<u8>) -> Result<u64, ButlerError> {
        self.app_mut(app)?;
        Ok(self.store.create(app, data))
    }

    pub fn app_read(&self, app: &str, id: u64) -> Result<&[u8], ButlerError> {
        if !self.apps.contains_key(app) {
            return Err(ButlerError::NoSuchApplication(app.to_owned()));
        }
        Ok(self.store.read(app, id)?)
    }

    pub fn app_update(&mut self, app: &str, id: u64, data: Vec<u8>) -> Result<(), ButlerError> {
        self.app_mut(app)?;
        Ok(self.store.update(app, id, data)?)
    }

    pub fn app_delete(&mut self, app: &str, id: u64) -> Result<(), ButlerError> {
        self.app_mut(app)?;
        Ok(self.store.delete(app, id)?)
    }

    fn local_result(&self, name: &ContentName, now: SimTime) -> FetchResult {
        let Some(rec) = self.record(name) else {
            return FetchResult {
                name: name.clone(),
                status: FetchStatus::NotFound,
                version: None,
                payload: None,
                links: None,
                finished_at: now,
            };
        };
        let payload = match rec.fragment_set() {
            Some(set) => set
                .names()
                .iter()
                .filter_map(|n| self.record(n))
                .flat_map(|r| r.draft.payload.clone())
                .collect(),
            None => rec.draft.payload.clone(),
        };
        FetchResult {
            name: name.clone(),
            status: FetchStatus::Decrypted,
            version: Some(rec.version()),
            payload: Some(payload),
            links: Some(rec.draft.links.clone()),
            finished_at: now,
        }
    }

    /// Fetches and decrypts `name`; the outcome is stored under `tag`.
    pub fn fetch(&mut self, ctx: &mut Ctx<'_>, tag: &str, name: ContentName) {
        if name.owner() == self.name() {
            let r = self.local_result(&name, ctx.now);
            self.client.store_result(tag, JobResult::Object(r));
            return;
        }
        self.client.fetch(ctx, tag, name);
    }

    /// Walks the feed labelled `label` under another user's application
    /// root; the outcome is stored under `tag`.
    pub fn read_feed(&mut self, ctx: &mut Ctx<'_>, tag: &str, app_root: &FolderName, label: &str) {
        if app_root.owner() == self.name() {
            let entries = self
                .folders
                .values()
                .find(|s| s.app == app_root.application() && s.label == label && s.kind == FolderKind::Feed)
                .map(|s| s.feed.names_forward())
                .unwrap_or_default();
            let status = if entries.is_empty() { FetchStatus::NotFound } else { FetchStatus::Decrypted };
            let entries = entries.iter().map(|n| self.local_result(n, ctx.now)).collect();
            self.client
                .store_result(tag, JobResult::Feed(FeedResult { status, entries }));
            return;
        }
        self.client.read_feed(ctx, tag, app_root, label);
    }

    pub fn handle(&mut self, ctx: &mut Ctx<'_>, from: NodeId, msg: Message) {
        match msg {
            Message::Request { id, name } => self.serve(ctx, from, id, name),
            Message::Resolve { id, folder } => self.answer_resolve(ctx, from, id, folder),
            Message::KeyRequest { id, attributes, epoch } => {
                let peer = ctx.directory.name(from).to_owned();
                match self.handle_key_request(ctx, &peer, &attributes, epoch) {
                    Ok(keys) => ctx.send(from, Message::KeyReply { id, keys }),
                    Err(_) => {
                        ctx.incr("key_denials");
                        ctx.send(from, Message::KeyDenied { id });
                    }
                }
            }
            Message::Notify {
                sender,
                content_name,
                checksum,
                application,
                signature,
            } => {
                if self
                    .handle_notify(ctx, &sender, &content_name, checksum, &application, &signature)
                    .is_err()
                {
                    ctx.incr("notifies_rejected");
                }
            }
            Message::Grant { .. } => {}
            other => self.client.handle(ctx, other),
        }
    }

    pub fn timer(&mut self, ctx: &mut Ctx<'_>, token: u64) {
        self.client.timer(ctx, token);
    }
}

#[cfg(test)]
mod tests;
