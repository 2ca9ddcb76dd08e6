use std::collections::BTreeMap;

use super::object::{Draft, Links};
use super::ObjectError;
use crate::naming::ContentName;

/// Something that can sit in a feed: it has a name and follower links, and
/// can be re-issued in place when its links change.
pub trait FeedItem {
    fn name(&self) -> &ContentName;
    fn links(&self) -> &Links;
    fn links_mut(&mut self) -> &mut Links;
    /// Called after the item's links were changed.
    fn reissue(&mut self);
}

impl FeedItem for Draft {
    fn name(&self) -> &ContentName {
        &self.name
    }

    fn links(&self) -> &Links {
        &self.links
    }

    fn links_mut(&mut self) -> &mut Links {
        &mut self.links
    }

    fn reissue(&mut self) {
        self.version += 1;
    }
}

/// Links `entry` after `tail`: the entry's previous becomes the tail, and the
/// tail is re-issued with its next set to the entry.
pub fn append_feed_entry(tail: &Draft, mut entry: Draft) -> Result<(Draft, Draft), ObjectError> {
    if tail.links.next.is_some() {
        return Err(ObjectError::NotTail(tail.name.to_string()));
    }
    let mut tail = tail.clone();
    tail.links.next = Some(entry.name.clone());
    tail.reissue();
    entry.links.previous = Some(tail.name.clone());
    entry.links.next = None;
    Ok((tail, entry))
}

/// The result of cutting `[from, to]` out of a feed.
#[derive(Debug)]
pub struct CutOutcome<T> {
    /// Removed entries, head to tail.
    pub removed: Vec<T>,
    /// The re-issued entry before the range, if any.
    pub predecessor: Option<ContentName>,
    /// The re-issued entry after the range, if any.
    pub successor: Option<ContentName>,
}

/// A doubly linked chain of items owned by a producer.
#[derive(Debug, Clone)]
pub struct Feed<T> {
    items: BTreeMap<ContentName, T>,
    head: Option<ContentName>,
    tail: Option<ContentName>,
}

impl<T> Default for Feed<T> {
    fn default() -> Self {
        Feed {
            items: BTreeMap::new(),
            head: None,
            tail: None,
        }
    }
}

impl<T: FeedItem> Feed<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn head(&self) -> Option<&ContentName> {
        self.head.as_ref()
    }

    pub fn tail(&self) -> Option<&ContentName> {
        self.tail.as_ref()
    }

    pub fn contains(&self, name: &ContentName) -> bool {
        self.items.contains_key(name)
    }

    pub fn get(&self, name: &ContentName) -> Option<&T> {
        self.items.get(name)
    }

    pub fn get_mut(&mut self, name: &ContentName) -> Option<&mut T> {
        self.items.get_mut(name)
    }

    /// Items in arbitrary order.
    pub fn items(&self) -> impl Iterator<Item = &T> {
        self.items.values()
    }

    pub fn items_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.items.values_mut()
    }

    fn set_next(&mut self, name: &ContentName, next: Option<ContentName>) {
        let item = self.items.get_mut(name).expect("linked name is present");
        item.links_mut().next = next;
        item.reissue();
    }

    fn set_previous(&mut self, name: &ContentName, previous: Option<ContentName>) {
        let item = self.items.get_mut(name).expect("linked name is present");
        item.links_mut().previous = previous;
        item.reissue();
    }

    /// Appends at the tail. Returns the name of the re-issued former tail.
    pub fn append(&mut self, mut item: T) -> Result<Option<ContentName>, ObjectError> {
        let name = item.name().clone();
        if self.items.contains_key(&name) {
            return Err(ObjectError::AlreadyInFeed(name.to_string()));
        }
        let old_tail = self.tail.clone();
        {
            let links = item.links_mut();
            links.previous = old_tail.clone();
            links.next = None;
        }
        self.items.insert(name.clone(), item);
        match &old_tail {
            Some(t) => self.set_next(t, Some(name.clone())),
            None => self.head = Some(name.clone()),
        }
        self.tail = Some(name);
        Ok(old_tail)
    }

    /// Names from head to tail.
    pub fn names_forward(&self) -> Vec<ContentName> {
        let mut out = Vec::with_capacity(self.items.len());
        let mut cur = self.head.clone();
        while let Some(n) = cur {
            cur = self.items[&n].links().next.clone();
            out.push(n);
        }
        out
    }

    /// Names from tail to head.
    pub fn names_backward(&self) -> Vec<ContentName> {
        let mut out = Vec::with_capacity(self.items.len());
        let mut cur = self.tail.clone();
        while let Some(n) = cur {
            cur = self.items[&n].links().previous.clone();
            out.push(n);
        }
        out
    }

    /// Removes `[from, to]` and relinks the neighbours, re-issuing them.
    pub fn cut(&mut self, from: &ContentName, to: &ContentName) -> Result<CutOutcome<T>, ObjectError> {
        for n in [from, to] {
            if !self.items.contains_key(n) {
                return Err(ObjectError::NotInFeed(n.to_string()));
            }
        }
        let mut range = vec![from.clone()];
        while range.last() != Some(to) {
            match self.items[range.last().unwrap()].links().next.clone() {
                Some(n) => range.push(n),
                None => return Err(ObjectError::OrderViolation),
            }
        }
        let predecessor = self.items[from].links().previous.clone();
        let successor = self.items[to].links().next.clone();
        let removed = range.iter().map(|n| self.items.remove(n).unwrap()).collect();
        match &predecessor {
            Some(p) => self.set_next(p, successor.clone()),
            None => self.head = successor.clone(),
        }
        match &successor {
            Some(s) => self.set_previous(s, predecessor.clone()),
            None => self.tail = predecessor.clone(),
        }
        Ok(CutOutcome {
            removed,
            predecessor,
            successor,
        })
    }

    /// Puts `item` in the position of `old`, which is removed. Neighbours are
    /// relinked and re-issued; their names are returned.
    pub fn replace(&mut self, old: &ContentName, mut item: T) -> Result<(T, Vec<ContentName>), ObjectError> {
        let new_name = item.name().clone();
        if self.items.contains_key(&new_name) {
            return Err(ObjectError::AlreadyInFeed(new_name.to_string()));
        }
        let removed = self
            .items
            .remove(old)
            .ok_or_else(|| ObjectError::NotInFeed(old.to_string()))?;
        let (previous, next) = (removed.links().previous.clone(), removed.links().next.clone());
        {
            let links = item.links_mut();
            links.previous = previous.clone();
            links.next = next.clone();
        }
        self.items.insert(new_name.clone(), item);
        let mut touched = Vec::new();
        match &previous {
            Some(p) => {
                self.set_next(p, Some(new_name.clone()));
                touched.push(p.clone());
            }
            None => self.head = Some(new_name.clone()),
        }
        match &next {
            Some(n) => {
                self.set_previous(n, Some(new_name.clone()));
                touched.push(n.clone());
            }
            None => self.tail = Some(new_name),
        }
        Ok((removed, touched))
    }

    /// Full-chain walk; describes the first inconsistency found.
    pub fn check_consistency(&self) -> Result<(), String> {
        if self.items.is_empty() {
            return match (&self.head, &self.tail) {
                (None, None) => Ok(()),
                _ => Err("empty feed with head or tail".into()),
            };
        }
        let heads: Vec<_> = self.items.values().filter(|i| i.links().previous.is_none()).collect();
        let tails: Vec<_> = self.items.values().filter(|i| i.links().next.is_none()).collect();
        if heads.len() != 1 || tails.len() != 1 {
            return Err(format!("{} heads and {} tails", heads.len(), tails.len()));
        }
        if Some(heads[0].name()) != self.head.as_ref() || Some(tails[0].name()) != self.tail.as_ref() {
            return Err("head or tail pointer disagrees with links".into());
        }
        for item in self.items.values() {
            if let Some(n) = &item.links().next {
                let Some(b) = self.items.get(n) else {
                    return Err(format!("{} links to missing {n}", item.name()));
                };
                if b.links().previous.as_ref() != Some(item.name()) {
                    return Err(format!("{n}.previous is not {}", item.name()));
                }
            }
            if let Some(p) = &item.links().previous {
                if !self.items.contains_key(p) {
                    return Err(format!("{} links back to missing {p}", item.name()));
                }
            }
        }
        let forward = self.names_forward();
        if forward.len() != self.items.len() {
            return Err("chain does not visit every entry".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::naming::{generate_segment, FolderName};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn draft(rng: &mut ChaCha20Rng) -> Draft {
        let folder = FolderName::parse("ia.alice/fl").unwrap();
        Draft::new(
            folder.join(&generate_segment(rng)).unwrap(),
            vec![],
            "friend".parse().unwrap(),
            "dist".parse().unwrap(),
        )
    }

    fn feed_of(n: usize, seed: u64) -> (Feed<Draft>, ChaCha20Rng) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut feed = Feed::new();
        for _ in 0..n {
            feed.append(draft(&mut rng)).unwrap();
        }
        (feed, rng)
    }

    #[test]
    fn append_to_single_entry() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let head = draft(&mut rng);
        let (head2, new) = append_feed_entry(&head, draft(&mut rng)).unwrap();
        assert_eq!(head2.links.next.as_ref(), Some(&new.name));
        assert_eq!(new.links.previous.as_ref(), Some(&head.name));
        assert_eq!(head2.version, 2);
        assert!(matches!(append_feed_entry(&head2, draft(&mut rng)), Err(ObjectError::NotTail(_))));
    }

    #[test]
    fn cut_middle_and_head() {
        let (mut feed, _) = feed_of(3, 2);
        let names = feed.names_forward();
        let out = feed.cut(&names[1], &names[1]).unwrap();
        assert_eq!(out.predecessor.as_ref(), Some(&names[0]));
        assert_eq!(out.successor.as_ref(), Some(&names[2]));
        assert_eq!(feed.get(&names[0]).unwrap().links.next.as_ref(), Some(&names[2]));
        assert_eq!(feed.get(&names[0]).unwrap().version, 3);
        feed.check_consistency().unwrap();

        let (mut feed, _) = feed_of(3, 2);
        let out = feed.cut(&names[0], &names[0]).unwrap();
        assert_eq!(out.predecessor, None);
        assert_eq!(feed.head(), Some(&names[1]));
        assert_eq!(feed.get(&names[2]).unwrap().version, 1);
        feed.check_consistency().unwrap();
    }

    #[test]
    fn cut_errors() {
        let (mut feed, mut rng) = feed_of(3, 3);
        let names = feed.names_forward();
        let stranger = draft(&mut rng).name;
        assert!(matches!(feed.cut(&stranger, &names[1]), Err(ObjectError::NotInFeed(_))));
        assert_eq!(feed.cut(&names[2], &names[0]).err(), Some(ObjectError::OrderViolation));
        assert_eq!(feed.len(), 3);
    }

    #[test]
    fn replace_relinks_neighbours() {
        let (mut feed, mut rng) = feed_of(3, 4);
        let names = feed.names_forward();
        let new = draft(&mut rng);
        let new_name = new.name.clone();
        let (old, touched) = feed.replace(&names[1], new).unwrap();
        assert_eq!(old.name, names[1]);
        assert_eq!(touched, vec![names[0].clone(), names[2].clone()]);
        assert_eq!(feed.names_forward(), vec![names[0].clone(), new_name, names[2].clone()]);
        feed.check_consistency().unwrap();
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn random_ops_keep_chain_consistent(seed in any::<u64>(), ops in prop::collection::vec((0u8..3, any::<u16>(), any::<u16>()), 1..40)) {
            let (mut feed, mut rng) = feed_of(1, seed);
            let mut removed = Vec::new();
            for (op, a, b) in ops {
                let names = feed.names_forward();
                match op {
                    0 => { feed.append(draft(&mut rng)).unwrap(); }
                    1 if !names.is_empty() => {
                        let (i, j) = (a as usize % names.len(), b as usize % names.len());
                        let (i, j) = (i.min(j), i.max(j));
                        let out = feed.cut(&names[i], &names[j]).unwrap();
                        removed.extend(out.removed.into_iter().map(|d| d.name));
                    }
                    _ if !names.is_empty() => {
                        let i = a as usize % names.len();
                        let (old, _) = feed.replace(&names[i], draft(&mut rng)).unwrap();
                        removed.push(old.name);
                    }
                    _ => {}
                }
                prop_assert_eq!(feed.check_consistency(), Ok(()));
                let mut back = feed.names_backward();
                back.reverse();
                prop_assert_eq!(&back, &feed.names_forward());
                for r in &removed {
                    prop_assert!(!feed.names_forward().contains(r));
                }
            }
        }
    }
}
