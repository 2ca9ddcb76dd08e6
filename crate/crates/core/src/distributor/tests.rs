use std::time::Duration;

use super::*;
use crate::butler::{FetchStatus, Mutation, PublishOptions};
use crate::testkit::{policy, World};

fn eager_cache() -> DistributorConfig {
    DistributorConfig {
        p_min: 1,
        ..DistributorConfig::default()
    }
}

fn past_tau(w: &mut World) {
    w.advance(DEFAULT_TAU + Duration::from_secs(1));
}

#[test]
fn lru_evicts_least_recently_used() {
    let mut w = World::new(30);
    let names: Vec<_> = (0..3).map(|i| w.post("friend", &format!("p{i}"))).collect();
    let objects: Vec<_> = names
        .iter()
        .map(|n| w.alice(|b, ctx| b.ensure_built(ctx, n).unwrap()))
        .collect();
    let mut store = ContentStore::new(2);
    assert_eq!(store.insert(objects[0].clone(), SimTime::ZERO), None);
    assert_eq!(store.insert(objects[1].clone(), SimTime::ZERO), None);
    store.get(&names[0]);
    assert_eq!(store.insert(objects[2].clone(), SimTime::ZERO), Some(names[1].clone()));
    assert!(store.contains(&names[0]) && store.contains(&names[2]));
    // Re-inserting a present name never evicts.
    assert_eq!(store.insert(objects[2].clone(), SimTime::from_secs(5)), None);
    assert_eq!(store.peek(&names[2]).unwrap().fetched_at, SimTime::from_secs(5));
    assert_eq!(store.len(), 2);
}

#[test]
fn popular_content_is_cached_and_served_from_cache() {
    let mut w = World::new(31);
    w.grant_root();
    let post = w.post("friend", "hello");
    for _ in 0..2 {
        assert_eq!(w.fetch(w.bob, &post).status, FetchStatus::Decrypted);
        assert!(!w.dist().store().contains(&post));
    }
    assert_eq!(w.fetch(w.bob, &post).status, FetchStatus::Decrypted);
    assert!(w.dist().store().contains(&post), "third request within the window caches");
    assert_eq!(w.fetch(w.carol, &post).status, FetchStatus::Decrypted);
    assert_eq!(w.counter(w.d1, "cache_hits"), 1);
    assert_eq!(w.counter(w.d1, "upstream_fetches"), 3);
    assert_eq!(w.total("stale_serves"), 0);
}

#[test]
fn update_purges_old_name() {
    let mut w = World::with_distributor(32, eager_cache());
    w.grant_root();
    let photos = w.photos.clone();
    let x = w.alice(|b, ctx| {
        b.publish(ctx, &photos, b"v1".to_vec(), policy("friend"), PublishOptions::default())
            .unwrap()
    });
    w.fetch(w.bob, &x);
    assert!(w.dist().store().contains(&x));
    let y = w
        .alice(|b, ctx| b.mutate_content(ctx, &x, Mutation::Update(b"v2".to_vec())))
        .unwrap()
        .unwrap();
    past_tau(&mut w);
    assert_eq!(w.fetch(w.carol, &x).status, FetchStatus::NotFound);
    assert!(!w.dist().store().contains(&x));
    assert!(w.dist().is_blocked(&x));
    assert_eq!(w.fetch(w.carol, &y).payload.as_deref(), Some(&b"v2"[..]));
    assert_eq!(w.total("stale_serves"), 0);
}

#[test]
fn cut_purges_interval_and_neighbours() {
    let mut w = World::with_distributor(33, eager_cache());
    w.grant_root();
    let names: Vec<_> = (0..5).map(|i| w.post("friend", &format!("p{i}"))).collect();
    // The first walk of the thread history replays old tail reissues, so the
    // oldest copy is only kept on a second pass.
    for _ in 0..2 {
        for n in &names {
            w.fetch(w.bob, n);
        }
    }
    assert!(names.iter().all(|n| w.dist().store().contains(n)));
    w.alice(|b, ctx| b.mutate_content(ctx, &names[1], Mutation::Cut { to: names[3].clone() }))
        .unwrap();
    past_tau(&mut w);
    let tu = w.timeline.tu_folder();
    w.net.with_distributor(w.d1, |d, ctx| d.refresh_tu(ctx, &tu, None));
    w.settle();
    let d = w.dist();
    for n in &names[1..4] {
        assert!(!d.store().contains(n) && d.is_blocked(n));
    }
    // Neighbours were re-issued with new links: purged but not blocked.
    for n in [&names[0], &names[4]] {
        assert!(!d.store().contains(n) && !d.is_blocked(n));
    }
    assert_eq!(d.tu_state(&tu).unwrap().order(), &[names[0].clone(), names[4].clone()]);
    assert_eq!(w.total("stale_serves"), 0);
}

#[test]
fn add_without_prefetch_only_moves_cursor() {
    let mut w = World::with_distributor(34, eager_cache());
    w.grant_root();
    let photos = w.photos.clone();
    let publish = |w: &mut World, body: &str| {
        let body = body.as_bytes().to_vec();
        let photos = photos.clone();
        w.alice(move |b, ctx| b.publish(ctx, &photos, body, policy("friend"), PublishOptions::default()).unwrap())
    };
    let x = publish(&mut w, "a");
    w.fetch(w.bob, &x);
    let tu = photos.tu_folder();
    let before = w.dist().tu_state(&tu).unwrap().clone();
    let stored = w.dist().store().len();

    let z = publish(&mut w, "b");
    w.net.with_distributor(w.d1, |d, ctx| d.refresh_tu(ctx, &tu, None));
    w.settle();
    let after = w.dist().tu_state(&tu).unwrap();
    assert_eq!(after.seq, before.seq + 1);
    assert_ne!(after.cursor, before.cursor);
    assert_eq!(after.order().last(), Some(&z));
    assert_eq!(w.dist().store().len(), stored);
    assert!(!w.dist().store().contains(&z));
}

#[test]
fn add_with_prefetch_fetches_new_content() {
    let mut w = World::with_distributor(
        35,
        DistributorConfig {
            prefetch: true,
            ..eager_cache()
        },
    );
    w.grant_root();
    let photos = w.photos.clone();
    let x = w.alice(|b, ctx| {
        b.publish(ctx, &photos, b"a".to_vec(), policy("friend"), PublishOptions::default())
            .unwrap()
    });
    w.fetch(w.bob, &x);
    let z = w.alice(|b, ctx| {
        b.publish(ctx, &photos, b"b".to_vec(), policy("friend"), PublishOptions::default())
            .unwrap()
    });
    let tu = photos.tu_folder();
    w.net.with_distributor(w.d1, |d, ctx| d.refresh_tu(ctx, &tu, None));
    w.settle();
    assert!(w.dist().store().contains(&z));
}

#[test]
fn certificates_scope_and_expiry() {
    let mut w = World::with_distributor(36, eager_cache());
    let (timeline, photos) = (w.timeline.clone(), w.photos.clone());
    let soon = SimTime::from_secs(100);
    w.alice(|b, ctx| b.grant_certificate(ctx, "ia.d1", &timeline, soon)).unwrap();
    let now = w.net.now();
    assert!(w.dist().covers(&timeline, now));
    assert!(!w.dist().covers(&photos, now), "sibling folder is not covered");

    // A photo request reaching the distributor is refused; the reader falls
    // back to the butler.
    let pic = w.alice(|b, ctx| {
        b.publish(ctx, &photos, b"p".to_vec(), policy("friend"), PublishOptions::default())
            .unwrap()
    });
    let name = pic.clone();
    let bob = w.bob;
    w.net
        .send(bob, w.d1, crate::netsim::Message::Request { id: 99, name })
        .unwrap();
    w.settle();
    assert!(w.net.transcript().iter().any(|l| l.contains("| ia.d1 | ia.bob | NOT_FOUND |")));

    w.advance(Duration::from_secs(200));
    let now = w.net.now();
    assert!(!w.dist().covers(&timeline, now));

    let cert = w
        .alice(|b, ctx| b.issue_certificate(ctx, "ia.d1", &timeline, SimTime::from_secs(150)))
        .unwrap();
    let r = w.net.with_distributor(w.d1, |d, ctx| d.accept_certificate(ctx, cert));
    assert_eq!(r, Err(DistributorError::Certificate(CertificateError::Expired)));

    w.net.add_distributor("d2", DistributorConfig::default()).unwrap();
    let far = now + Duration::from_secs(1000);
    let cert = w.alice(|b, ctx| b.issue_certificate(ctx, "ia.d2", &timeline, far)).unwrap();
    let r = w.net.with_distributor(w.d1, |d, ctx| d.accept_certificate(ctx, cert));
    assert_eq!(r, Err(DistributorError::Certificate(CertificateError::NotForMe)));
    assert_eq!(w.counter(w.d1, "certificates_rejected"), 2);
}

#[test]
fn distributor_resolves_to_deepest_certificate() {
    let mut w = World::new(37);
    let (root, timeline) = (w.root.clone(), w.timeline.clone());
    let t = SimTime::from_secs(10_000);
    w.net.add_distributor("d2", DistributorConfig::default()).unwrap();
    w.alice(|b, ctx| {
        b.grant_certificate(ctx, "ia.d2", &timeline, t).unwrap();
        b.grant_certificate(ctx, "ia.d1", &root, t).unwrap();
    });
    let bob = w.bob;
    w.net
        .send(
            bob,
            w.d1,
            crate::netsim::Message::Resolve {
                id: 5,
                folder: timeline.clone(),
            },
        )
        .unwrap();
    w.settle();
    let reply = w.net.transcript().iter().rev().find(|l| l.contains("RESOLVE_REPLY")).cloned();
    assert!(reply.unwrap().contains("| ia.d1 | ia.bob | RESOLVE_REPLY |"));
    assert_eq!(w.counter(w.d1, "resolves_answered"), 1);
}

#[test]
fn stale_cache_is_refreshed_before_serving() {
    let mut w = World::with_distributor(38, eager_cache());
    w.grant_root();
    let post = w.post("friend", "p");
    w.fetch(w.bob, &post);
    let refreshes = w.counter(w.d1, "tu_refreshes");
    // Within tau the cached copy is served without refreshing.
    w.fetch(w.carol, &post);
    assert_eq!(w.counter(w.d1, "tu_refreshes"), refreshes);
    past_tau(&mut w);
    w.fetch(w.carol, &post);
    assert!(w.counter(w.d1, "tu_refreshes") > refreshes);
    assert_eq!(w.total("stale_serves"), 0);
    assert_eq!(w.total("multi_upstream_serves"), 0);
}

#[test]
fn unreachable_butler_fails_closed() {
    let mut w = World::with_distributor(39, eager_cache());
    w.grant_root();
    let post = w.post("friend", "p");
    w.fetch(w.bob, &post);
    past_tau(&mut w);
    w.net.set_down(w.alice, true);
    let r = w.fetch(w.bob, &post);
    assert_ne!(r.status, FetchStatus::Decrypted, "an unverifiable copy is not served");
    assert!(w.counter(w.d1, "tu_unreachable") >= 1);
    assert_eq!(w.total("stale_serves"), 0);
}
