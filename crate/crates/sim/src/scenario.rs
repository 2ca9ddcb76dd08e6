//! The line-oriented scenario format.
//!
//! ```text
//! # comment
//! t=<seconds> <directive> <args...>
//! ```
//!
//! Arguments are split like a POSIX shell would, so policies and post bodies
//! containing spaces go in quotes.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;
use warp_core::crypto::Policy;
use warp_core::time::SimTime;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {reason}")]
pub struct ParseError {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FolderKindArg {
    Feed,
    Plain,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RevokeArg {
    Name(String),
    Category(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MutateArg {
    Update(String),
    Delete,
    Cut { to: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Eq,
    Le,
    Ge,
}

impl Cmp {
    pub fn holds(self, lhs: u64, rhs: u64) -> bool {
        match self {
            Cmp::Eq => lhs == rhs,
            Cmp::Le => lhs <= rhs,
            Cmp::Ge => lhs >= rhs,
        }
    }
}

impl fmt::Display for Cmp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Cmp::Eq => "==",
            Cmp::Le => "<=",
            Cmp::Ge => ">=",
        })
    }
}

/// A feed address as a reader knows it: owner, application and label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeedRef {
    pub owner: String,
    pub app: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expectation {
    Decrypts { reader: String, label: String },
    DecryptFails { reader: String, label: String },
    NotFound { reader: String, label: String },
    /// The reader sees `visible` entries of which `decrypted` open.
    Feed {
        reader: String,
        feed: FeedRef,
        visible: usize,
        decrypted: usize,
    },
    /// The reader cannot even open the owner's index.
    FeedHidden { reader: String, feed: FeedRef },
    Counter { counter: String, cmp: Cmp, value: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Directive {
    CreateButler { user: String, buckets: Option<u32>, eager: bool },
    CreateDistributor { user: String, p_min: Option<u32>, prefetch: bool },
    InstallApp { user: String, app: String, index_fp: Policy },
    /// `path` is `<app>/<folder>/...`; the last component names the new
    /// folder and doubles as the feed label.
    Mkfolder { user: String, path: String, kind: FolderKindArg },
    Categorize { user: String, peer: String, categories: Vec<String> },
    GrantCertificate { user: String, distributor: String, path: String, valid_for: u64 },
    Publish { user: String, path: String, label: String, fp: Policy, body: String },
    Fetch { reader: String, label: String },
    ReadFeed { reader: String, feed: FeedRef },
    Revoke { user: String, peer: String, scope: RevokeArg },
    Mutate { user: String, label: String, op: MutateArg },
    RotateEpoch { user: String },
    Expect(Expectation),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Step {
    pub line: usize,
    pub at: SimTime,
    pub directive: Directive,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Scenario {
    pub steps: Vec<Step>,
}

impl FromStr for Scenario {
    type Err = ParseError;

    fn from_str(text: &str) -> Result<Self, ParseError> {
        let mut steps = Vec::new();
        let mut last = SimTime::ZERO;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |reason: String| ParseError { line, reason };
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let words = shell_words::split(trimmed).map_err(|e| err(e.to_string()))?;
            let (stamp, rest) = words.split_first().expect("non-empty line");
            let at = stamp
                .strip_prefix("t=")
                .and_then(|s| s.parse::<f64>().ok())
                .filter(|s| s.is_finite() && *s >= 0.0)
                .map(SimTime::from_secs_f64)
                .ok_or_else(|| err(format!("expected `t=<seconds>`, found `{stamp}`")))?;
            if at < last {
                return Err(err(format!("time {at} goes backwards")));
            }
            last = at;
            let directive = parse_directive(rest).map_err(err)?;
            steps.push(Step { line, at, directive });
        }
        Ok(Scenario { steps })
    }
}

fn parse_directive(words: &[String]) -> Result<Directive, String> {
    let Some((name, args)) = words.split_first() else {
        return Err("missing directive".into());
    };
    let a = Args { name, args };
    let d = match name.as_str() {
        "create_butler" => {
            let (pos, opts) = a.split_options(1)?;
            Directive::CreateButler {
                user: pos[0].clone(),
                buckets: opts.number("k")?,
                eager: opts.flag("eager"),
            }
        }
        "create_distributor" => {
            let (pos, opts) = a.split_options(1)?;
            Directive::CreateDistributor {
                user: pos[0].clone(),
                p_min: opts.number("p_min")?,
                prefetch: opts.flag("prefetch"),
            }
        }
        "install_app" => {
            a.arity(3)?;
            Directive::InstallApp {
                user: a.args[0].clone(),
                app: a.args[1].clone(),
                index_fp: policy(&a.args[2])?,
            }
        }
        "mkfolder" => {
            a.arity(3)?;
            let kind = match a.args[2].as_str() {
                "feed" => FolderKindArg::Feed,
                "plain" => FolderKindArg::Plain,
                other => return Err(format!("folder kind must be `feed` or `plain`, found `{other}`")),
            };
            Directive::Mkfolder {
                user: a.args[0].clone(),
                path: a.args[1].clone(),
                kind,
            }
        }
        "categorize" => {
            a.arity(3)?;
            Directive::Categorize {
                user: a.args[0].clone(),
                peer: a.args[1].clone(),
                categories: a.args[2].split(',').map(str::to_owned).collect(),
            }
        }
        "grant_certificate" => {
            a.arity(4)?;
            Directive::GrantCertificate {
                user: a.args[0].clone(),
                distributor: a.args[1].clone(),
                path: a.args[2].clone(),
                valid_for: number(&a.args[3])?,
            }
        }
        "publish" => {
            a.arity(5)?;
            Directive::Publish {
                user: a.args[0].clone(),
                path: a.args[1].clone(),
                label: a.args[2].clone(),
                fp: policy(&a.args[3])?,
                body: a.args[4].clone(),
            }
        }
        "fetch" => {
            a.arity(2)?;
            Directive::Fetch {
                reader: a.args[0].clone(),
                label: a.args[1].clone(),
            }
        }
        "read_feed" => {
            a.arity(2)?;
            Directive::ReadFeed {
                reader: a.args[0].clone(),
                feed: feed_ref(&a.args[1])?,
            }
        }
        "revoke" => {
            a.arity(4)?;
            let scope = match a.args[2].as_str() {
                "name" => RevokeArg::Name(a.args[3].clone()),
                "category" => RevokeArg::Category(a.args[3].clone()),
                other => return Err(format!("revoke scope must be `name` or `category`, found `{other}`")),
            };
            Directive::Revoke {
                user: a.args[0].clone(),
                peer: a.args[1].clone(),
                scope,
            }
        }
        "mutate" => {
            if a.args.len() < 3 {
                return Err("mutate takes <user> <label> update <body> | delete | cut <label>".into());
            }
            let op = match (a.args[2].as_str(), &a.args[3..]) {
                ("update", [body]) => MutateArg::Update(body.clone()),
                ("delete", []) => MutateArg::Delete,
                ("cut", [to]) => MutateArg::Cut { to: to.clone() },
                _ => return Err("mutate takes <user> <label> update <body> | delete | cut <label>".into()),
            };
            Directive::Mutate {
                user: a.args[0].clone(),
                label: a.args[1].clone(),
                op,
            }
        }
        "rotate_epoch" => {
            a.arity(1)?;
            Directive::RotateEpoch { user: a.args[0].clone() }
        }
        "expect" => Directive::Expect(parse_expectation(args)?),
        other => return Err(format!("unknown directive `{other}`")),
    };
    Ok(d)
}

fn parse_expectation(args: &[String]) -> Result<Expectation, String> {
    let Some((kind, rest)) = args.split_first() else {
        return Err("expect needs a kind".into());
    };
    let a = Args { name: kind, args: rest };
    let e = match kind.as_str() {
        "decrypts" | "decrypt_fails" | "not_found" => {
            a.arity(2)?;
            let (reader, label) = (rest[0].clone(), rest[1].clone());
            match kind.as_str() {
                "decrypts" => Expectation::Decrypts { reader, label },
                "decrypt_fails" => Expectation::DecryptFails { reader, label },
                _ => Expectation::NotFound { reader, label },
            }
        }
        "feed" => {
            let (pos, opts) = a.split_options(2)?;
            Expectation::Feed {
                reader: pos[0].clone(),
                feed: feed_ref(&pos[1])?,
                visible: opts.number("visible")?.ok_or("feed expectation needs visible=<n>")?,
                decrypted: opts.number("decrypted")?.ok_or("feed expectation needs decrypted=<n>")?,
            }
        }
        "feed_hidden" => {
            a.arity(2)?;
            Expectation::FeedHidden {
                reader: rest[0].clone(),
                feed: feed_ref(&rest[1])?,
            }
        }
        "counter" => {
            a.arity(3)?;
            let cmp = match rest[1].as_str() {
                "==" => Cmp::Eq,
                "<=" => Cmp::Le,
                ">=" => Cmp::Ge,
                other => return Err(format!("comparison must be ==, <= or >=, found `{other}`")),
            };
            Expectation::Counter {
                counter: rest[0].clone(),
                cmp,
                value: number(&rest[2])?,
            }
        }
        other => return Err(format!("unknown expectation `{other}`")),
    };
    Ok(e)
}

struct Args<'a> {
    name: &'a str,
    args: &'a [String],
}

struct Options<'a>(Vec<&'a str>);

impl Args<'_> {
    fn arity(&self, n: usize) -> Result<(), String> {
        if self.args.len() == n {
            Ok(())
        } else {
            Err(format!("`{}` takes {n} arguments, found {}", self.name, self.args.len()))
        }
    }

    /// `n` positional arguments followed by `key=value` or bare flags.
    fn split_options(&self, n: usize) -> Result<(&[String], Options<'_>), String> {
        if self.args.len() < n {
            return Err(format!("`{}` takes at least {n} arguments", self.name));
        }
        let (pos, rest) = self.args.split_at(n);
        Ok((pos, Options(rest.iter().map(String::as_str).collect())))
    }
}

impl Options<'_> {
    fn flag(&self, name: &str) -> bool {
        self.0.contains(&name)
    }

    fn number<T: FromStr>(&self, key: &str) -> Result<Option<T>, String> {
        self.0
            .iter()
            .find_map(|o| o.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
            .map(number)
            .transpose()
    }
}

fn number<T: FromStr>(s: &str) -> Result<T, String> {
    s.parse().map_err(|_| format!("`{s}` is not a number"))
}

fn policy(s: &str) -> Result<Policy, String> {
    s.parse().map_err(|e| format!("bad policy `{s}`: {e}"))
}

/// `<owner>/<app>/<label>`.
fn feed_ref(s: &str) -> Result<FeedRef, String> {
    match s.split('/').collect::<Vec<_>>()[..] {
        [owner, app, label] if !owner.is_empty() && !app.is_empty() && !label.is_empty() => Ok(FeedRef {
            owner: owner.into(),
            app: app.into(),
            label: label.into(),
        }),
        _ => Err(format!("feed must be <owner>/<app>/<label>, found `{s}`")),
    }
}
