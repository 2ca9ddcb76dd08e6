//! Executes a parsed scenario on the simulator.

use std::collections::BTreeMap;
use std::time::Duration;

use thiserror::Error;
use warp_core::butler::{
    AppConfig, ButlerConfig, FeedResult, FetchResult, FetchStatus, FolderKind, JobResult, Mutation, PublishOptions,
    RevokeScope,
};
use warp_core::distributor::DistributorConfig;
use warp_core::naming::{ContentName, FolderName};
use warp_core::netsim::{MetricsReport, NetConfig, Network, NodeId};
use warp_core::time::SimTime;

use crate::scenario::{Directive, Expectation, FeedRef, FolderKindArg, MutateArg, ParseError, RevokeArg, Scenario};

/// How long a fetch may take before the runner gives up on it.
const FETCH_LIMIT: Duration = Duration::from_secs(120);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RunError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("line {line}: {reason}")]
    Directive { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: expectation failed: {detail}")]
pub struct ExpectationFailed {
    pub line: usize,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: u64,
    /// Directives after this time are skipped and the clock stops here.
    pub until: Option<SimTime>,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub expectations: usize,
    pub failures: Vec<ExpectationFailed>,
    pub metrics: MetricsReport,
    pub transcript: Vec<String>,
    pub finished_at: SimTime,
}

impl Outcome {
    /// Every expectation held and no distributor served stale content.
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.metrics.total("stale_serves") == 0
    }

    pub fn transcript_text(&self) -> String {
        let mut s = self.transcript.join("\n");
        s.push('\n');
        s
    }
}

pub fn run_text(text: &str, options: &RunOptions) -> Result<Outcome, RunError> {
    run_scenario(&text.parse()?, options)
}

pub fn run_scenario(scenario: &Scenario, options: &RunOptions) -> Result<Outcome, RunError> {
    let mut r = Runner::new(options.seed);
    let mut expectations = 0;
    let mut failures = Vec::new();
    for step in &scenario.steps {
        if options.until.is_some_and(|u| step.at > u) {
            break;
        }
        r.net.run_until(step.at);
        let fail = |reason: String| RunError::Directive { line: step.line, reason };
        match &step.directive {
            Directive::Expect(e) => {
                expectations += 1;
                if let Err(detail) = r.check(e).map_err(fail)? {
                    failures.push(ExpectationFailed { line: step.line, detail });
                }
            }
            d => r.apply(d).map_err(fail)?,
        }
    }
    match options.until {
        Some(u) => r.net.run_until(u),
        None => {
            let limit = r.net.now() + FETCH_LIMIT;
            r.net.run_until_idle(limit);
        }
    }
    Ok(Outcome {
        expectations,
        failures,
        metrics: r.net.metrics().clone(),
        transcript: r.net.transcript().to_vec(),
        finished_at: r.net.now(),
    })
}

struct Runner {
    net: Network,
    ia: String,
    folders: BTreeMap<(String, String), FolderName>,
    labels: BTreeMap<String, ContentName>,
    tags: u64,
}

type Check = Result<Result<(), String>, String>;

impl Runner {
    fn new(seed: u64) -> Self {
        let net = Network::new(seed, NetConfig::default());
        let ia = net.identity_authority().name().to_owned();
        Runner {
            net,
            ia,
            folders: BTreeMap::new(),
            labels: BTreeMap::new(),
            tags: 0,
        }
    }

    fn full(&self, user: &str) -> String {
        format!("{}.{user}", self.ia)
    }

    fn node(&self, user: &str) -> Result<NodeId, String> {
        self.net.node_id(&self.full(user)).map_err(|e| e.to_string())
    }

    fn butler(&self, user: &str) -> Result<NodeId, String> {
        let id = self.node(user)?;
        self.net
            .butler(id)
            .map(|_| id)
            .ok_or_else(|| format!("`{user}` is not a butler"))
    }

    fn folder(&self, user: &str, path: &str) -> Result<FolderName, String> {
        if !path.contains('/') {
            let id = self.butler(user)?;
            return self.net.butler(id).unwrap().app_root(path).cloned().ok_or_else(|| format!("{user} has no application `{path}`"));
        }
        self.folders
            .get(&(user.to_owned(), path.to_owned()))
            .cloned()
            .ok_or_else(|| format!("{user} has no folder `{path}`"))
    }

    /// The live name of a labelled object, following re-issues.
    fn current(&self, label: &str) -> Result<ContentName, String> {
        let first = self.labels.get(label).ok_or_else(|| format!("unknown label `{label}`"))?;
        let owner = self.net.node_id(&first.owner()).map_err(|e| e.to_string())?;
        Ok(self.net.butler(owner).expect("labels name butler content").current_name(first))
    }

    fn apply(&mut self, d: &Directive) -> Result<(), String> {
        let e = |e: warp_core::butler::ButlerError| e.to_string();
        match d {
            Directive::CreateButler { user, buckets, eager } => {
                let mut config = ButlerConfig::default();
                if let Some(k) = buckets {
                    config.bucket_count = *k;
                }
                config.eager_reencryption = *eager;
                self.net.add_butler(user, config).map_err(|e| e.to_string())?;
            }
            Directive::CreateDistributor { user, p_min, prefetch } => {
                let mut config = DistributorConfig::default();
                if let Some(p) = p_min {
                    config.p_min = *p;
                }
                config.prefetch = *prefetch;
                self.net.add_distributor(user, config).map_err(|e| e.to_string())?;
            }
            Directive::InstallApp { user, app, index_fp } => {
                let id = self.butler(user)?;
                let config = AppConfig::new(index_fp.clone());
                self.net.with_butler(id, |b, ctx| b.install_app(ctx, app, config)).map_err(e)?;
            }
            Directive::Mkfolder { user, path, kind } => {
                let (parent_path, label) = path.rsplit_once('/').ok_or("folder path needs a parent")?;
                let parent = self.folder(user, parent_path)?;
                let id = self.butler(user)?;
                let kind = match kind {
                    FolderKindArg::Feed => FolderKind::Feed,
                    FolderKindArg::Plain => FolderKind::Plain,
                };
                let f = self
                    .net
                    .with_butler(id, |b, ctx| b.create_folder(ctx, &parent, label, kind))
                    .map_err(e)?;
                self.folders.insert((user.clone(), path.clone()), f);
            }
            Directive::Categorize { user, peer, categories } => {
                let id = self.butler(user)?;
                let peer = self.full(peer);
                self.net
                    .with_butler(id, |b, ctx| b.categorize_user(ctx, &peer, categories).map(|_| ()))
                    .map_err(e)?;
            }
            Directive::GrantCertificate {
                user,
                distributor,
                path,
                valid_for,
            } => {
                let id = self.butler(user)?;
                let folder = self.folder(user, path)?;
                let dist = self.full(distributor);
                let expiry = self.net.now() + Duration::from_secs(*valid_for);
                self.net
                    .with_butler(id, |b, ctx| b.grant_certificate(ctx, &dist, &folder, expiry))
                    .map_err(e)?;
            }
            Directive::Publish {
                user,
                path,
                label,
                fp,
                body,
            } => {
                if self.labels.contains_key(label) {
                    return Err(format!("label `{label}` already used"));
                }
                let id = self.butler(user)?;
                let folder = self.folder(user, path)?;
                let payload = body.as_bytes().to_vec();
                let name = self
                    .net
                    .with_butler(id, |b, ctx| b.publish(ctx, &folder, payload, fp.clone(), PublishOptions::default()))
                    .map_err(e)?;
                self.labels.insert(label.clone(), name);
            }
            Directive::Fetch { reader, label } => {
                self.fetch(reader, label)?;
            }
            Directive::ReadFeed { reader, feed } => {
                self.read_feed(reader, feed)?;
            }
            Directive::Revoke { user, peer, scope } => {
                let id = self.butler(user)?;
                let scope = match scope {
                    RevokeArg::Name(label) => RevokeScope::Name(self.current(label)?),
                    RevokeArg::Category(c) => RevokeScope::Attribute(c.clone()),
                };
                let peer = self.full(peer);
                self.net
                    .with_butler(id, |b, ctx| b.revoke_access(ctx, &peer, scope))
                    .map_err(e)?;
            }
            Directive::Mutate { user, label, op } => {
                let id = self.butler(user)?;
                let name = self.current(label)?;
                let mutation = match op {
                    MutateArg::Update(body) => Mutation::Update(body.as_bytes().to_vec()),
                    MutateArg::Delete => Mutation::Delete,
                    MutateArg::Cut { to } => Mutation::Cut { to: self.current(to)? },
                };
                self.net
                    .with_butler(id, |b, ctx| b.mutate_content(ctx, &name, mutation))
                    .map_err(e)?;
            }
            Directive::RotateEpoch { user } => {
                let id = self.butler(user)?;
                self.net.with_butler(id, |b, ctx| b.rotate_epoch(ctx));
            }
            Directive::Expect(_) => unreachable!("handled by the caller"),
        }
        Ok(())
    }

    fn tag(&mut self) -> String {
        self.tags += 1;
        format!("scn{}", self.tags)
    }

    /// Runs the network until the job under `tag` finishes.
    fn await_job(&mut self, reader: NodeId, tag: &str) -> Result<JobResult, String> {
        let limit = self.net.now() + FETCH_LIMIT;
        loop {
            if let Some(r) = self.net.butler(reader).unwrap().result(tag) {
                return Ok(r.clone());
            }
            match self.net.next_event_time() {
                Some(t) if t <= limit => {
                    self.net.step();
                }
                _ => return Err(format!("job {tag} did not finish")),
            }
        }
    }

    fn fetch(&mut self, reader: &str, label: &str) -> Result<FetchResult, String> {
        let id = self.butler(reader)?;
        let name = self.current(label)?;
        let tag = self.tag();
        self.net.with_butler(id, |b, ctx| b.fetch(ctx, &tag, name));
        match self.await_job(id, &tag)? {
            JobResult::Object(r) => Ok(r),
            JobResult::Feed(_) => unreachable!("object fetch"),
        }
    }

    fn read_feed(&mut self, reader: &str, feed: &FeedRef) -> Result<FeedResult, String> {
        let id = self.butler(reader)?;
        let root = FolderName::application_prefix(&self.ia, &feed.owner, &feed.app).map_err(|e| e.to_string())?;
        let tag = self.tag();
        let label = feed.label.clone();
        self.net.with_butler(id, |b, ctx| b.read_feed(ctx, &tag, &root, &label));
        match self.await_job(id, &tag)? {
            JobResult::Feed(r) => Ok(r),
            JobResult::Object(_) => unreachable!("feed read"),
        }
    }

    fn check(&mut self, e: &Expectation) -> Check {
        let status_is = |r: FetchResult, want: FetchStatus, who: &str, label: &str| {
            if r.status == want {
                Ok(())
            } else {
                Err(format!("{who} fetching {label}: wanted {want:?}, got {:?}", r.status))
            }
        };
        Ok(match e {
            Expectation::Decrypts { reader, label } => {
                status_is(self.fetch(reader, label)?, FetchStatus::Decrypted, reader, label)
            }
            Expectation::DecryptFails { reader, label } => {
                status_is(self.fetch(reader, label)?, FetchStatus::Undecryptable, reader, label)
            }
            Expectation::NotFound { reader, label } => {
                status_is(self.fetch(reader, label)?, FetchStatus::NotFound, reader, label)
            }
            Expectation::Feed {
                reader,
                feed,
                visible,
                decrypted,
            } => {
                let r = self.read_feed(reader, feed)?;
                let got = (r.entries.len(), r.decrypted());
                if got == (*visible, *decrypted) {
                    Ok(())
                } else {
                    Err(format!(
                        "{reader} reading {}/{}/{}: wanted {visible} visible and {decrypted} decrypted, got {} and {}",
                        feed.owner, feed.app, feed.label, got.0, got.1
                    ))
                }
            }
            Expectation::FeedHidden { reader, feed } => {
                let r = self.read_feed(reader, feed)?;
                if r.status != FetchStatus::Decrypted && r.entries.is_empty() {
                    Ok(())
                } else {
                    Err(format!(
                        "{reader} could open {}/{}/{} ({:?}, {} entries)",
                        feed.owner,
                        feed.app,
                        feed.label,
                        r.status,
                        r.entries.len()
                    ))
                }
            }
            Expectation::Counter { counter, cmp, value } => {
                let got = self.net.metrics().total(counter);
                if cmp.holds(got, *value) {
                    Ok(())
                } else {
                    Err(format!("{counter} = {got}, wanted {cmp} {value}"))
                }
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "\
t=0 create_butler alice
t=0 create_butler bob
t=0 install_app alice fl friend
t=0 mkfolder alice fl/wall feed
t=0 categorize alice bob friend
t=1 publish alice fl/wall p1 friend hello
t=2 expect decrypts bob p1
t=2 expect decrypt_fails alice p1
t=3 expect counter decrypt_ok >= 1
";

    #[test]
    fn small_scenario_runs() {
        let out = run_text(SMALL, &RunOptions::default()).unwrap();
        assert_eq!(out.expectations, 3);
        // The owner reads her own content locally, so the second one fails.
        assert_eq!(out.failures.len(), 1);
        assert_eq!(out.failures[0].line, 8);
        assert!(!out.passed());
    }

    #[test]
    fn unknown_nodes_are_directive_errors() {
        let e = run_text("t=0 create_butler a\nt=1 categorize a zed friend\n", &RunOptions::default()).unwrap_err();
        assert!(matches!(e, RunError::Directive { line: 2, .. }), "{e}");
        let e = run_text("t=0 install_app ghost fl friend\n", &RunOptions::default()).unwrap_err();
        assert!(matches!(e, RunError::Directive { line: 1, .. }));
    }

    #[test]
    fn until_cuts_the_run() {
        let opts = RunOptions {
            seed: 1,
            until: Some(SimTime::from_secs(1)),
        };
        let out = run_text(SMALL, &opts).unwrap();
        assert_eq!(out.expectations, 0);
        assert_eq!(out.finished_at, SimTime::from_secs(1));
    }

    #[test]
    fn labels_follow_reissues() {
        let text = "\
t=0 create_butler alice
t=0 create_butler bob
t=0 install_app alice fl friend
t=0 mkfolder alice fl/wall feed
t=0 categorize alice bob friend
t=1 publish alice fl/wall p1 friend v1
t=2 mutate alice p1 update v2
t=3 expect decrypts bob p1
t=4 mutate alice p1 delete
t=5 expect not_found bob p1
";
        let out = run_text(text, &RunOptions::default()).unwrap();
        assert!(out.passed(), "{:?}", out.failures);
    }
}
