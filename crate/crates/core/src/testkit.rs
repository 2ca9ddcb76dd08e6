//! A small world for multi-node unit tests: three butlers, one distributor,
//! Alice's `fl` application with a timeline feed.

use std::time::Duration;

use crate::butler::{AppConfig, Butler, FeedResult, FetchResult, FolderKind, JobResult, PublishOptions};
use crate::crypto::Policy;
use crate::distributor::{Distributor, DistributorConfig};
use crate::naming::{ContentName, FolderName};
use crate::netsim::{Ctx, NetConfig, Network, NodeId};
use crate::time::SimTime;

pub struct World {
    pub net: Network,
    pub alice: NodeId,
    pub bob: NodeId,
    pub carol: NodeId,
    pub d1: NodeId,
    pub root: FolderName,
    pub timeline: FolderName,
    pub photos: FolderName,
    tags: u64,
}

pub fn policy(s: &str) -> Policy {
    s.parse().expect("test policy parses")
}

impl World {
    pub fn new(seed: u64) -> Self {
        Self::with_distributor(seed, DistributorConfig::default())
    }

    pub fn with_distributor(seed: u64, dist: DistributorConfig) -> Self {
        let mut net = Network::new(seed, NetConfig::default());
        let alice = net.add_butler("alice", Default::default()).unwrap();
        let bob = net.add_butler("bob", Default::default()).unwrap();
        let carol = net.add_butler("carol", Default::default()).unwrap();
        let d1 = net.add_distributor("d1", dist).unwrap();
        let (root, timeline, photos) = net.with_butler(alice, |b, ctx| {
            let root = b.install_app(ctx, "fl", AppConfig::new(policy("friend"))).unwrap();
            let timeline = b.create_folder(ctx, &root, "timeline", FolderKind::Feed).unwrap();
            let photos = b.create_folder(ctx, &root, "", FolderKind::Plain).unwrap();
            b.categorize_user(ctx, "ia.bob", ["friend"]).unwrap();
            b.categorize_user(ctx, "ia.carol", ["friend"]).unwrap();
            (root, timeline, photos)
        });
        net.with_butler(bob, |b, ctx| {
            b.install_app(ctx, "fl", AppConfig::new(policy("friend"))).unwrap();
            b.categorize_user(ctx, "ia.alice", ["colleague"]).unwrap();
        });
        net.with_butler(carol, |b, ctx| {
            b.install_app(ctx, "fl", AppConfig::new(policy("friend"))).unwrap();
        });
        let mut w = World {
            net,
            alice,
            bob,
            carol,
            d1,
            root,
            timeline,
            photos,
            tags: 0,
        };
        w.settle();
        w
    }

    /// Delivers everything pending, advancing at most a minute.
    pub fn settle(&mut self) {
        let limit = self.net.now() + Duration::from_secs(60);
        self.net.run_until_idle(limit);
    }

    pub fn advance(&mut self, d: Duration) {
        let t = self.net.now() + d;
        self.net.run_until(t);
    }

    pub fn alice<T>(&mut self, f: impl FnOnce(&mut Butler, &mut Ctx<'_>) -> T) -> T {
        let out = self.net.with_butler(self.alice, f);
        self.settle();
        out
    }

    pub fn butler(&self, id: NodeId) -> &Butler {
        self.net.butler(id).unwrap()
    }

    pub fn dist(&self) -> &Distributor {
        self.net.distributor(self.d1).unwrap()
    }

    pub fn post(&mut self, fp: &str, payload: &str) -> ContentName {
        let folder = self.timeline.clone();
        let (fp, payload) = (policy(fp), payload.as_bytes().to_vec());
        self.alice(|b, ctx| b.publish(ctx, &folder, payload, fp, PublishOptions::default()).unwrap())
    }

    pub fn grant_root(&mut self) {
        let root = self.root.clone();
        self.alice(|b, ctx| b.grant_certificate(ctx, "ia.d1", &root, SimTime::from_secs(1_000_000)).unwrap());
    }

    fn tag(&mut self) -> String {
        self.tags += 1;
        format!("t{}", self.tags)
    }

    pub fn fetch(&mut self, reader: NodeId, name: &ContentName) -> FetchResult {
        let tag = self.tag();
        let name = name.clone();
        self.net.with_butler(reader, |b, ctx| b.fetch(ctx, &tag, name));
        self.settle();
        match self.butler(reader).result(&tag) {
            Some(JobResult::Object(r)) => r.clone(),
            other => panic!("fetch did not finish: {other:?}"),
        }
    }

    pub fn read_feed(&mut self, reader: NodeId, label: &str) -> FeedResult {
        let tag = self.tag();
        let root = self.root.clone();
        let label = label.to_owned();
        self.net.with_butler(reader, |b, ctx| b.read_feed(ctx, &tag, &root, &label));
        self.settle();
        match self.butler(reader).result(&tag) {
            Some(JobResult::Feed(r)) => r.clone(),
            other => panic!("feed read did not finish: {other:?}"),
        }
    }

    pub fn total(&self, counter: &str) -> u64 {
        self.net.metrics().total(counter)
    }

    pub fn counter(&self, node: NodeId, counter: &str) -> u64 {
        self.net.metrics().get(self.net.directory().name(node), counter)
    }
}
