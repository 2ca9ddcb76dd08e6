use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use super::message::MESSAGE_KINDS;

/// Every counter a node reports, in report order. Per-message-type send
/// counts follow as `sent.<TYPE>`.
pub const COUNTERS: &[&str] = &[
    "messages_sent",
    "messages_dropped",
    "resolves",
    "resolve_round_trips",
    "route_hits",
    "fetches",
    "decrypt_ok",
    "decrypt_failed",
    "fetch_not_found",
    "fetch_unreachable",
    "key_requests_sent",
    "serves",
    "cache_hits",
    "cache_misses",
    "stale_serves",
    "bans",
    "upstream_fetches",
    "multi_upstream_serves",
    "tu_refreshes",
    "tu_fetches",
    "tu_commands_applied",
    "tu_unreachable",
    "out_of_order_commands",
    "purges",
    "objects_built",
    "reencryptions",
    "tu_commands_emitted",
    "keys_issued",
    "key_denials",
    "notifies_received",
    "notifies_rejected",
    "links_created",
    "certificates_issued",
    "certificates_accepted",
    "certificates_rejected",
    "resolves_answered",
    "resolves_refused",
];

fn all_counter_names() -> Vec<String> {
    COUNTERS
        .iter()
        .map(|c| c.to_string())
        .chain(MESSAGE_KINDS.iter().map(|k| format!("sent.{k}")))
        .collect()
}

/// Counters per node, keyed by node name.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MetricsReport {
    pub nodes: BTreeMap<String, BTreeMap<String, u64>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsParseError {
    #[error("line {line}: {reason}")]
    Bad { line: usize, reason: String },
    #[error("totals disagree with the per-node sums for `{0}`")]
    Totals(String),
}

impl MetricsReport {
    pub fn add_node(&mut self, name: &str) {
        self.nodes
            .entry(name.to_owned())
            .or_insert_with(|| all_counter_names().into_iter().map(|c| (c, 0)).collect());
    }

    pub fn incr(&mut self, node: &str, counter: &str) {
        self.add(node, counter, 1);
    }

    pub fn add(&mut self, node: &str, counter: &str, by: u64) {
        self.add_node(node);
        let c = self.nodes.get_mut(node).unwrap();
        debug_assert!(c.contains_key(counter), "unknown counter {counter}");
        *c.entry(counter.to_owned()).or_default() += by;
    }

    pub fn get(&self, node: &str, counter: &str) -> u64 {
        self.nodes.get(node).and_then(|c| c.get(counter)).copied().unwrap_or(0)
    }

    /// Sum over all nodes.
    pub fn total(&self, counter: &str) -> u64 {
        self.nodes.values().filter_map(|c| c.get(counter)).sum()
    }

    pub fn totals(&self) -> BTreeMap<String, u64> {
        all_counter_names()
            .into_iter()
            .map(|c| {
                let t = self.total(&c);
                (c, t)
            })
            .collect()
    }

    /// `total.<counter>=<n>` lines, then `node[<name>].<counter>=<n>` lines.
    pub fn render_kv(&self) -> String {
        let mut out = String::new();
        for (c, v) in self.totals() {
            writeln!(out, "total.{c}={v}").unwrap();
        }
        for (node, counters) in &self.nodes {
            for c in all_counter_names() {
                writeln!(out, "node[{node}].{c}={}", counters.get(&c).copied().unwrap_or(0)).unwrap();
            }
        }
        out
    }

    pub fn parse_kv(text: &str) -> Result<Self, MetricsParseError> {
        let mut report = MetricsReport::default();
        let mut totals = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let bad = |reason: &str| MetricsParseError::Bad {
                line: i + 1,
                reason: reason.to_owned(),
            };
            if line.trim().is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| bad("missing `=`"))?;
            let value: u64 = value.parse().map_err(|_| bad("value is not an unsigned integer"))?;
            if let Some(c) = key.strip_prefix("total.") {
                totals.insert(c.to_owned(), value);
            } else if let Some(rest) = key.strip_prefix("node[") {
                let (node, c) = rest.split_once("].").ok_or_else(|| bad("malformed node key"))?;
                report.add_node(node);
                report.nodes.get_mut(node).unwrap().insert(c.to_owned(), value);
            } else {
                return Err(bad("unknown key"));
            }
        }
        for (c, v) in totals {
            if report.total(&c) != v {
                return Err(MetricsParseError::Totals(c));
            }
        }
        Ok(report)
    }

    /// A fixed-width table of totals, then one block per node with its
    /// non-zero counters.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{:<28} {:>10}", "counter", "total").unwrap();
        for (c, v) in self.totals() {
            writeln!(out, "{c:<28} {v:>10}").unwrap();
        }
        for (node, counters) in &self.nodes {
            writeln!(out, "\n[{node}]").unwrap();
            for (c, v) in counters.iter().filter(|(_, v)| **v > 0) {
                writeln!(out, "  {c:<26} {v:>10}").unwrap();
            }
        }
        out
    }
}
