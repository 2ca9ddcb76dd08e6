use super::*;
use crate::crypto::alias_attribute;
use crate::testkit::{policy, World};

fn commands(w: &World, folder: &FolderName) -> Vec<ThreadUpdateCommand> {
    w.butler(w.alice)
        .tu_entries(folder)
        .unwrap()
        .into_iter()
        .filter_map(|e| e.command)
        .collect()
}

#[test]
fn friend_reads_but_colleague_does_not() {
    let mut w = World::new(1);
    let post = w.post("friend", "hello friends");
    let r = w.fetch(w.bob, &post);
    assert_eq!(r.status, FetchStatus::Decrypted);
    assert_eq!(r.payload.as_deref(), Some(&b"hello friends"[..]));

    // Bob put Alice in "colleague"; she cannot read his friend posts.
    let bob_root = w.butler(w.bob).app_root("fl").unwrap().clone();
    let bob_post = w.net.with_butler(w.bob, |b, ctx| {
        b.publish(ctx, &bob_root, b"for friends".to_vec(), policy("friend"), PublishOptions::default())
            .unwrap()
    });
    w.settle();
    assert_eq!(w.fetch(w.alice, &bob_post).status, FetchStatus::Undecryptable);
}

#[test]
fn publish_emits_one_add() {
    let mut w = World::new(2);
    let photos = w.photos.clone();
    let before = commands(&w, &photos).len();
    let name = w.alice(|b, ctx| {
        b.publish(ctx, &photos, b"pic".to_vec(), policy("friend"), PublishOptions::default())
            .unwrap()
    });
    let cmds = commands(&w, &photos);
    assert_eq!(cmds.len(), before + 1);
    assert_eq!(cmds.last(), Some(&ThreadUpdateCommand::Add(name)));
}

#[test]
fn feed_append_reissues_tail_and_index() {
    let mut w = World::new(3);
    let p1 = w.post("friend", "one");
    let p2 = w.post("friend", "two");
    let timeline = w.timeline.clone();
    let cmds = commands(&w, &timeline);
    assert_eq!(
        cmds,
        vec![
            ThreadUpdateCommand::Add(p1.clone()),
            ThreadUpdateCommand::Add(p2.clone()),
            ThreadUpdateCommand::Update(p1.clone(), p1.clone()),
        ]
    );
    assert_eq!(w.butler(w.alice).record(&p1).unwrap().version(), 2);

    // The index's latest pointer follows the tail.
    let idx = w.root.index_name();
    let r = w.fetch(w.bob, &idx);
    let entries = crate::objects::decode_index(&r.payload.unwrap(), "ia.alice").unwrap();
    assert_eq!(entries.get("latest/timeline"), Some(&p2));
    assert_eq!(entries.get("first/timeline"), Some(&p1));
}

#[test]
fn excluded_post_is_visible_but_unreadable() {
    let mut w = World::new(4);
    let carol_alias = w.butler(w.alice).social().peer("ia.carol").unwrap().alias.clone();
    w.post("friend", "one");
    let secret = w.post(&alias_attribute(&carol_alias), "not for bob");
    w.post("friend", "three");

    let r = w.fetch(w.bob, &secret);
    assert_eq!(r.status, FetchStatus::Undecryptable);
    assert!(r.version.is_some(), "the object itself was delivered");
    assert_eq!(w.fetch(w.carol, &secret).status, FetchStatus::Decrypted);

    let feed = w.read_feed(w.bob, "timeline");
    assert_eq!(feed.entries.len(), 3);
    assert_eq!(feed.decrypted(), 2);
    let carol_feed = w.read_feed(w.carol, "timeline");
    assert_eq!(carol_feed.decrypted(), 3);
    let texts: Vec<_> = carol_feed.entries.iter().map(|e| e.payload.clone().unwrap()).collect();
    assert_eq!(texts, vec![b"one".to_vec(), b"not for bob".to_vec(), b"three".to_vec()]);
}

#[test]
fn update_renames_and_bumps_version() {
    let mut w = World::new(5);
    let photos = w.photos.clone();
    let x = w.alice(|b, ctx| {
        b.publish(ctx, &photos, b"v1".to_vec(), policy("friend"), PublishOptions::default())
            .unwrap()
    });
    let y = w
        .alice(|b, ctx| b.mutate_content(ctx, &x, Mutation::Update(b"v2".to_vec())))
        .unwrap()
        .unwrap();
    assert_ne!(x, y);
    assert_eq!(w.butler(w.alice).record(&y).unwrap().version(), 2);
    assert_eq!(w.butler(w.alice).current_name(&x), y);
    assert_eq!(commands(&w, &photos).last(), Some(&ThreadUpdateCommand::Update(x.clone(), y.clone())));
    assert_eq!(w.fetch(w.bob, &x).status, FetchStatus::NotFound);
    assert_eq!(w.fetch(w.bob, &y).payload.as_deref(), Some(&b"v2"[..]));
}

#[test]
fn delete_and_cut() {
    let mut w = World::new(6);
    let names: Vec<_> = (0..5).map(|i| w.post("friend", &format!("p{i}"))).collect();
    let timeline = w.timeline.clone();

    w.alice(|b, ctx| b.mutate_content(ctx, &names[1], Mutation::Cut { to: names[3].clone() }))
        .unwrap();
    let cmd = commands(&w, &timeline).pop().unwrap();
    assert_eq!(
        cmd,
        ThreadUpdateCommand::Cut {
            from: names[1].clone(),
            to: names[3].clone(),
            predecessor: Some(names[0].clone()),
            successor: Some(names[4].clone()),
        }
    );
    assert_eq!(
        w.butler(w.alice).folder_contents(&timeline).unwrap(),
        vec![names[0].clone(), names[4].clone()]
    );
    assert_eq!(w.read_feed(w.bob, "timeline").decrypted(), 2);

    let photos = w.photos.clone();
    let pic = w.alice(|b, ctx| {
        b.publish(ctx, &photos, b"x".to_vec(), policy("friend"), PublishOptions::default())
            .unwrap()
    });
    w.alice(|b, ctx| b.mutate_content(ctx, &pic, Mutation::Delete)).unwrap();
    assert_eq!(commands(&w, &photos).pop(), Some(ThreadUpdateCommand::Delete(pic.clone())));
    assert_eq!(w.fetch(w.bob, &pic).status, FetchStatus::NotFound);

    let other = "ia.bob/fl/00000000000000000000000000000001".parse::<ContentName>().unwrap();
    assert!(matches!(
        w.alice(|b, ctx| b.mutate_content(ctx, &other, Mutation::Delete)),
        Err(ButlerError::NotOwned(_))
    ));
    let missing = photos.join("00000000000000000000000000000002").unwrap();
    assert!(matches!(
        w.alice(|b, ctx| b.mutate_content(ctx, &missing, Mutation::Delete)),
        Err(ButlerError::NotFound(_))
    ));
}

#[test]
fn fragments_round_trip_through_readers() {
    let mut w = World::new(7);
    let photos = w.photos.clone();
    let data: Vec<u8> = (0..200_000u32).map(|i| (i % 251) as u8).collect();
    let payload = data.clone();
    let first = w.alice(|b, ctx| {
        let options = PublishOptions {
            fragmented: true,
            ..PublishOptions::default()
        };
        b.publish(ctx, &photos, payload, policy("friend"), options).unwrap()
    });
    let r = w.fetch(w.bob, &first);
    assert_eq!(r.status, FetchStatus::Decrypted);
    assert_eq!(r.payload.unwrap(), data);
}

#[test]
fn revoke_name_is_lazy_and_effective() {
    let mut w = World::new(8);
    let photos = w.photos.clone();
    let x = w.alice(|b, ctx| {
        b.publish(ctx, &photos, b"pic".to_vec(), policy("friend"), PublishOptions::default())
            .unwrap()
    });
    assert_eq!(w.fetch(w.bob, &x).status, FetchStatus::Decrypted);
    let y = w
        .alice(|b, ctx| b.revoke_access(ctx, "ia.bob", RevokeScope::Name(x.clone())))
        .unwrap()
        .pop()
        .unwrap();
    assert_eq!(commands(&w, &photos).last(), Some(&ThreadUpdateCommand::Update(x.clone(), y.clone())));
    assert_eq!(w.counter(w.alice, "reencryptions"), 0, "nothing rebuilt before a request");

    assert_eq!(w.fetch(w.bob, &y).status, FetchStatus::Undecryptable);
    assert_eq!(w.counter(w.alice, "reencryptions"), 1);
    assert_eq!(w.fetch(w.carol, &y).status, FetchStatus::Decrypted);

    assert!(matches!(
        w.alice(|b, ctx| b.revoke_access(ctx, "ia.mallory", RevokeScope::Name(y.clone()))),
        Err(ButlerError::UnknownPeer(_))
    ));
}

#[test]
fn eager_revocation_rebuilds_immediately() {
    let mut w = World::new(9);
    w.net.with_butler(w.alice, |b, _| b.config.eager_reencryption = true);
    let x = w.post("friend", "p");
    w.alice(|b, ctx| b.revoke_access(ctx, "ia.bob", RevokeScope::Attribute("friend".into())))
        .unwrap();
    assert!(w.counter(w.alice, "reencryptions") >= 1);
    let y = w.butler(w.alice).current_name(&x);
    assert_ne!(x, y);
    assert_eq!(w.fetch(w.bob, &y).status, FetchStatus::Undecryptable);
    assert_eq!(w.fetch(w.carol, &y).status, FetchStatus::Decrypted);
}

#[test]
fn key_service() {
    let mut w = World::new(10);
    let friend = vec!["friend".to_string(), "colleague".to_string()];
    let keys = w.alice(|b, ctx| b.handle_key_request(ctx, "ia.bob", &friend, 0)).unwrap();
    assert_eq!(keys.iter().map(|k| k.attribute.as_str()).collect::<Vec<_>>(), vec!["friend"]);

    let stranger = w.alice(|b, ctx| b.handle_key_request(ctx, "ia.d1", &friend, 0));
    assert_eq!(stranger, Err(ButlerError::Unauthorized));

    // Other peers' aliases are never handed out.
    let carol_alias = alias_attribute(&w.butler(w.alice).social().peer("ia.carol").unwrap().alias);
    let bob_alias = alias_attribute(&w.butler(w.alice).social().peer("ia.bob").unwrap().alias);
    let asked = vec![carol_alias, bob_alias.clone()];
    let keys = w.alice(|b, ctx| b.handle_key_request(ctx, "ia.bob", &asked, 0)).unwrap();
    assert_eq!(keys.len(), 1);
    assert_eq!(keys[0].attribute, bob_alias);

    w.alice(|b, ctx| b.revoke_access(ctx, "ia.bob", RevokeScope::Attribute("friend".into())))
        .unwrap();
    w.alice(|b, ctx| b.rotate_epoch(ctx));
    let after = w.alice(|b, ctx| b.handle_key_request(ctx, "ia.bob", &friend, 1));
    // Bob is no longer categorized at all.
    assert_eq!(after, Err(ButlerError::Unauthorized));
    let stale = w.alice(|b, ctx| {
        b.rotate_epoch(ctx);
        b.rotate_epoch(ctx);
        b.handle_key_request(ctx, "ia.carol", &friend, 0)
    });
    assert_eq!(stale, Err(ButlerError::StaleEpoch(0)));
}

#[test]
fn epoch_rotation_reissues_old_builds() {
    let mut w = World::new(11);
    let photos = w.photos.clone();
    let x = w.alice(|b, ctx| {
        b.publish(ctx, &photos, b"pic".to_vec(), policy("friend"), PublishOptions::default())
            .unwrap()
    });
    w.alice(|b, ctx| b.rotate_epoch(ctx));
    assert_eq!(w.butler(w.alice).record(&x).unwrap().version(), 1);
    w.alice(|b, ctx| b.rotate_epoch(ctx));
    assert_eq!(w.butler(w.alice).record(&x).unwrap().version(), 2);
    assert_eq!(commands(&w, &photos).last(), Some(&ThreadUpdateCommand::Update(x.clone(), x.clone())));
    let r = w.fetch(w.bob, &x);
    assert_eq!(r.status, FetchStatus::Decrypted);
    assert_eq!(w.butler(w.alice).record(&x).unwrap().built_epoch(), Some(2));
}

#[test]
fn attribute_revocation_survives_rotation() {
    let mut w = World::new(12);
    let x = w.post("friend", "p");
    w.alice(|b, ctx| b.revoke_access(ctx, "ia.bob", RevokeScope::Attribute("friend".into())))
        .unwrap();
    for _ in 0..3 {
        w.alice(|b, ctx| b.rotate_epoch(ctx));
    }
    let y = w.butler(w.alice).current_name(&x);
    assert_eq!(w.fetch(w.bob, &y).status, FetchStatus::Undecryptable);
    assert_eq!(w.fetch(w.carol, &y).status, FetchStatus::Decrypted);
}

fn comment_world(seed: u64) -> (World, ContentName, FolderName) {
    let mut w = World::new(seed);
    let links = w.photos.clone();
    w.alice(|b, _| {
        b.set_link_folder("fl", links.clone(), policy("friend")).unwrap();
        b.subscribe_notify("fl").unwrap();
    });
    let post = w.post("friend", "what do you think?");
    (w, post, links)
}

#[test]
fn comment_creates_three_objects() {
    let (mut w, post, links) = comment_world(13);
    let bob_root = w.butler(w.bob).app_root("fl").unwrap().clone();
    let comment = w.net.with_butler(w.bob, |b, ctx| {
        b.comment(ctx, &bob_root, b"nice".to_vec(), policy("friend"), &post).unwrap()
    });
    w.settle();
    let inbox = w.butler(w.alice).notifications("fl").to_vec();
    assert_eq!(inbox.len(), 1);
    assert_eq!(inbox[0].content_name, comment);
    let link = inbox[0].link.clone().expect("link created");
    assert_eq!(link.folder(), &links);
    let distinct: BTreeSet<_> = [&post, &comment, &link].into_iter().collect();
    assert_eq!(distinct.len(), 3);
    let link_rec = w.butler(w.alice).record(&link).unwrap();
    assert_eq!(link_rec.draft.links.reference.as_ref(), Some(&comment));
    assert_eq!(w.counter(w.alice, "links_created"), 1);
}

#[test]
fn rejected_or_forged_notifies() {
    let (mut w, post, _) = comment_world(14);
    w.alice(|b, _| b.set_notify_predicate("fl", |_, _| false).unwrap());
    let bob_root = w.butler(w.bob).app_root("fl").unwrap().clone();
    w.net.with_butler(w.bob, |b, ctx| {
        b.comment(ctx, &bob_root, b"meh".to_vec(), policy("friend"), &post).unwrap()
    });
    w.settle();
    let inbox = w.butler(w.alice).notifications("fl");
    assert_eq!(inbox.len(), 1, "delivered and acknowledged");
    assert!(inbox[0].link.is_none());
    assert_eq!(w.counter(w.alice, "links_created"), 0);

    let bob = w.butler(w.bob).public_identity();
    let name = bob_root.join("00000000000000000000000000000003").unwrap();
    let r = w.alice(|b, ctx| b.handle_notify(ctx, &bob, &name, [7; 32], "fl", &[0; 64]));
    assert_eq!(r, Err(ButlerError::BadSignature));
}

#[test]
fn notifies_reach_only_their_application() {
    let mut w = World::new(15);
    w.alice(|b, ctx| {
        b.install_app(ctx, "photos", AppConfig::new(policy("friend"))).unwrap();
        b.subscribe_notify("photos").unwrap();
    });
    let post = w.post("friend", "p");
    let bob_root = w.butler(w.bob).app_root("fl").unwrap().clone();
    w.net.with_butler(w.bob, |b, ctx| {
        b.comment(ctx, &bob_root, b"c".to_vec(), policy("friend"), &post).unwrap()
    });
    w.settle();
    assert!(w.butler(w.alice).notifications("photos").is_empty());
    // "fl" is installed but never subscribed.
    assert!(w.butler(w.alice).notifications("fl").is_empty());
    assert_eq!(w.counter(w.alice, "notifies_received"), 1);
}

#[test]
fn certificates_list_subfolder_distributors() {
    let mut w = World::new(16);
    w.net.add_distributor("d2", Default::default()).unwrap();
    let (root, timeline) = (w.root.clone(), w.timeline.clone());
    let expiry = SimTime::from_secs(10_000);
    w.alice(|b, ctx| b.grant_certificate(ctx, "ia.d2", &timeline, expiry)).unwrap();
    let cert = w.alice(|b, ctx| b.issue_certificate(ctx, "ia.d1", &root, expiry)).unwrap();
    assert_eq!(
        cert.distributors,
        vec![("ia.d1".to_string(), root.clone()), ("ia.d2".to_string(), timeline.clone())]
    );
    assert_eq!(cert.verify(w.net.directory().anchors(), SimTime::ZERO), Ok(()));
    assert!(cert.keys.iter().all(|k| k.attribute == format!("dist:{root}")));

    let bob_root = w.butler(w.bob).app_root("fl").unwrap().clone();
    assert!(matches!(
        w.alice(|b, ctx| b.issue_certificate(ctx, "ia.d1", &bob_root, expiry)),
        Err(ButlerError::NotOwned(_))
    ));
}

#[test]
fn crud_is_scoped_per_application() {
    let mut w = World::new(17);
    w.alice(|b, ctx| b.install_app(ctx, "photos", AppConfig::new(policy("friend"))).unwrap());
    let id = w.alice(|b, _| b.app_create("fl", b"draft".to_vec())).unwrap();
    let alice = w.butler(w.alice);
    assert_eq!(alice.app_read("fl", id).unwrap(), b"draft");
    assert_eq!(alice.app_read("photos", id), Err(ButlerError::App(AppError::Unauthorized)));
    assert_eq!(alice.app_read("nope", id), Err(ButlerError::NoSuchApplication("nope".into())));
    w.alice(|b, _| b.app_delete("fl", id)).unwrap();
    assert_eq!(w.butler(w.alice).app_read("fl", id), Err(ButlerError::App(AppError::NotFound)));
}

#[test]
fn compile_index_merges_app_entries() {
    let mut w = World::new(18);
    let p = w.post("friend", "p");
    let mut entries = IndexEntries::new();
    entries.insert("pinned".into(), p.clone());
    w.alice(|b, ctx| b.compile_index(ctx, "fl", entries)).unwrap();
    let r = w.fetch(w.bob, &w.root.index_name());
    let idx = crate::objects::decode_index(&r.payload.unwrap(), "ia.alice").unwrap();
    assert_eq!(idx.get("pinned"), Some(&p));
    assert_eq!(idx.get("latest/timeline"), Some(&p));
    assert!(matches!(
        w.alice(|b, ctx| b.compile_index(ctx, "nope", IndexEntries::new())),
        Err(ButlerError::NoSuchApplication(_))
    ));
}

#[test]
fn categorize_rejects_reserved_names_and_unknown_peers() {
    let mut w = World::new(19);
    assert!(matches!(
        w.alice(|b, ctx| b.categorize_user(ctx, "ia.bob", ["alias:x"]).map(|_| ())),
        Err(ButlerError::BadCategory(_))
    ));
    assert!(matches!(
        w.alice(|b, ctx| b.categorize_user(ctx, "ia.zed", ["friend"]).map(|_| ())),
        Err(ButlerError::UnknownPeer(_))
    ));
}

#[test]
fn empty_audience_falls_back_to_owner() {
    use crate::netsim::{NetConfig, Network};
    let mut net = Network::new(20, NetConfig::default());
    let config = ButlerConfig {
        bucket_count: 1,
        ..ButlerConfig::default()
    };
    let alice = net.add_butler("alice", config).unwrap();
    net.add_butler("bob", ButlerConfig::default()).unwrap();
    let (x, y) = net.with_butler(alice, |b, ctx| {
        let root = b.install_app(ctx, "fl", AppConfig::new(policy("friend"))).unwrap();
        b.categorize_user(ctx, "ia.bob", ["friend"]).unwrap();
        let x = b
            .publish(ctx, &root, b"p".to_vec(), policy("OR(friend,colleague)"), PublishOptions::default())
            .unwrap();
        let y = b.revoke_access(ctx, "ia.bob", RevokeScope::Name(x.clone())).unwrap().pop().unwrap();
        (x, y)
    });
    let b = net.butler(alice).unwrap();
    assert_ne!(x, y);
    let fp = b.effective_fp(b.record(&y).unwrap());
    assert_eq!(fp, Policy::Or(vec![Policy::leaf(b.social().self_attribute()), Policy::leaf("colleague")]));
}
