//! Keyword senses arranged in a single-rooted tree, and the Leacock-Chodorow
//! similarity computed over it.
//!
//! The similarity of two senses is `-ln(p / 2D)` where `p` is the number of
//! nodes on the shortest path between them (a sense compared with itself has
//! `p = 1`) and `D` is the deepest level present in the tree, with the root at
//! depth 1. The largest attainable score is therefore `ln(2D)`, reached only by
//! identical senses. For the bundled demo taxonomy `D = 19`, giving a ceiling
//! of `ln 38 ≈ 3.638`.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const DEMO_TAXONOMY: &str = include_str!("../data/demo_taxonomy.tsv");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TaxonomyError {
    #[error("keyword is empty after normalization: {0:?}")]
    EmptyKeyword(String),
    #[error("unknown keyword: {0}")]
    UnknownKeyword(Keyword),
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("multiple roots: {first:?} and {second:?}")]
    MultipleRoots { first: String, second: String },
    #[error("taxonomy has no root")]
    NoRoot,
    #[error("node {node:?} declared twice")]
    DuplicateNode { node: String },
    #[error("node {node:?} refers to undeclared parent {parent:?}")]
    UnknownParent { node: String, parent: String },
    #[error("cycle through node {node:?}")]
    Cycle { node: String },
    #[error("reading taxonomy: {0}")]
    Io(String),
}

/// A normalized keyword: lowercased, whitespace collapsed, `_` read as a
/// space and `&`/`+`/`and` unified to ` & `, with single spaces around `/`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Keyword(String);

impl Keyword {
    pub fn new(raw: &str) -> Result<Self, TaxonomyError> {
        let text = normalize_keyword(raw);
        if text.is_empty() {
            return Err(TaxonomyError::EmptyKeyword(raw.to_string()));
        }
        Ok(Keyword(text))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Keyword {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for Keyword {
    type Error = TaxonomyError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        Keyword::new(&s)
    }
}

impl From<Keyword> for String {
    fn from(k: Keyword) -> String {
        k.0
    }
}

impl std::str::FromStr for Keyword {
    type Err = TaxonomyError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Keyword::new(s)
    }
}

fn normalize_keyword(raw: &str) -> String {
    let mut spaced = String::with_capacity(raw.len() + 8);
    for c in raw.chars().flat_map(char::to_lowercase) {
        match c {
            '&' | '+' => spaced.push_str(" & "),
            '/' => spaced.push_str(" / "),
            '_' => spaced.push(' '),
            c if c.is_whitespace() => spaced.push(' '),
            c => spaced.push(c),
        }
    }
    spaced
        .split_whitespace()
        .map(|tok| if tok == "and" { "&" } else { tok })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Largest Leacock-Chodorow score for a taxonomy of depth `max_depth`.
pub fn lc_max(max_depth: u32) -> f64 {
    (2.0 * f64::from(max_depth)).ln()
}

/// Immutable rooted tree of keyword senses.
///
/// A keyword may name several senses (nodes); in the file format a sense is
/// disambiguated with a numeric suffix such as `bank#2`.
#[derive(Clone, Debug)]
pub struct Taxonomy {
    names: Vec<String>,
    labels: Vec<Keyword>,
    parent: Vec<Option<usize>>,
    depth: Vec<u32>,
    senses: HashMap<Keyword, Vec<usize>>,
    max_depth: u32,
}

impl Taxonomy {
    /// The bundled demo taxonomy (236 senses, depth 19).
    pub fn demo() -> Self {
        Self::parse(DEMO_TAXONOMY).expect("bundled taxonomy is well formed")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TaxonomyError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| TaxonomyError::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::parse(&text)
    }

    /// Parses `child<TAB>parent` lines; the root uses `-` as its parent.
    /// Blank lines and lines starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self, TaxonomyError> {
        let mut edges = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let trimmed = line.trim_end_matches('\r');
            if trimmed.trim().is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let mut fields = trimmed.split('\t');
            let (child, parent) = match (fields.next(), fields.next(), fields.next()) {
                (Some(c), Some(p), None) => (c.trim(), p.trim()),
                _ => {
                    return Err(TaxonomyError::Malformed {
                        line: i + 1,
                        reason: "expected exactly two tab-separated fields".into(),
                    })
                }
            };
            if child.is_empty() || parent.is_empty() {
                return Err(TaxonomyError::Malformed { line: i + 1, reason: "empty field".into() });
            }
            let parent = (parent != "-").then_some(parent);
            edges.push((child.to_string(), parent.map(str::to_string)));
        }
        Self::from_edges(edges)
    }

    /// Builds a taxonomy from `(node, parent)` pairs; `None` marks the root.
    pub fn from_edges<I, S>(edges: I) -> Result<Self, TaxonomyError>
    where
        I: IntoIterator<Item = (S, Option<S>)>,
        S: Into<String>,
    {
        let edges: Vec<(String, Option<String>)> =
            edges.into_iter().map(|(c, p)| (c.into(), p.map(Into::into))).collect();

        let mut index: HashMap<String, usize> = HashMap::new();
        let mut names = Vec::with_capacity(edges.len());
        let mut labels = Vec::with_capacity(edges.len());
        let mut root: Option<usize> = None;
        for (child, parent) in &edges {
            if index.contains_key(child) {
                return Err(TaxonomyError::DuplicateNode { node: child.clone() });
            }
            let id = names.len();
            index.insert(child.clone(), id);
            labels.push(Keyword::new(sense_text(child))?);
            names.push(child.clone());
            if parent.is_none() {
                if let Some(r) = root {
                    return Err(TaxonomyError::MultipleRoots {
                        first: names[r].clone(),
                        second: child.clone(),
                    });
                }
                root = Some(id);
            }
        }
        let root = root.ok_or(TaxonomyError::NoRoot)?;

        let mut parent_of = vec![None; names.len()];
        for (child, parent) in &edges {
            if let Some(p) = parent {
                let pid = *index.get(p).ok_or_else(|| TaxonomyError::UnknownParent {
                    node: child.clone(),
                    parent: p.clone(),
                })?;
                parent_of[index[child]] = Some(pid);
            }
        }

        // Depths by walking towards the root; a walk longer than the node count
        // can only mean a cycle.
        let n = names.len();
        let mut depth = vec![0u32; n];
        depth[root] = 1;
        for start in 0..n {
            if depth[start] != 0 {
                continue;
            }
            let mut chain = vec![start];
            let mut cur = start;
            loop {
                match parent_of[cur] {
                    Some(p) if depth[p] != 0 => {
                        let mut d = depth[p];
                        for &node in chain.iter().rev() {
                            d += 1;
                            depth[node] = d;
                        }
                        break;
                    }
                    Some(p) => {
                        if chain.len() > n {
                            return Err(TaxonomyError::Cycle { node: names[p].clone() });
                        }
                        chain.push(p);
                        cur = p;
                    }
                    None => unreachable!("only the root lacks a parent"),
                }
            }
        }
        let max_depth = depth.iter().copied().max().unwrap_or(1);

        let mut senses: HashMap<Keyword, Vec<usize>> = HashMap::new();
        for (id, label) in labels.iter().enumerate() {
            senses.entry(label.clone()).or_default().push(id);
        }

        Ok(Taxonomy { names, labels, parent: parent_of, depth, senses, max_depth })
    }

    /// Depth of the deepest sense, root counted as 1.
    pub fn max_depth(&self) -> u32 {
        self.max_depth
    }

    pub fn lc_max(&self) -> f64 {
        lc_max(self.max_depth)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn contains(&self, k: &Keyword) -> bool {
        self.senses.contains_key(k)
    }

    /// Distinct keywords, sorted.
    pub fn keywords(&self) -> BTreeSet<Keyword> {
        self.senses.keys().cloned().collect()
    }

    /// Parent keyword of the first sense of `k`.
    pub fn parent_of(&self, k: &Keyword) -> Option<&Keyword> {
        let id = *self.senses.get(k)?.first()?;
        self.parent[id].map(|p| &self.labels[p])
    }

    /// Child keywords of every sense of `k`, in declaration order.
    pub fn children_of(&self, k: &Keyword) -> Vec<&Keyword> {
        let Some(ids) = self.senses.get(k) else { return Vec::new() };
        (0..self.len())
            .filter(|&c| self.parent[c].is_some_and(|p| ids.contains(&p)))
            .map(|c| &self.labels[c])
            .collect()
    }

    /// Minimum depth over the senses of `k`.
    pub fn depth_of(&self, k: &Keyword) -> Option<u32> {
        self.senses.get(k).map(|ids| ids.iter().map(|&i| self.depth[i]).min().unwrap_or(0))
    }

    /// Number of nodes on the shortest path between the closest senses of the
    /// two keywords.
    pub fn path_nodes(&self, k: &Keyword, l: &Keyword) -> Result<u32, TaxonomyError> {
        let ks = self.senses_of(k)?;
        let ls = self.senses_of(l)?;
        let mut best = u32::MAX;
        for &a in ks {
            for &b in ls {
                best = best.min(self.node_path(a, b));
            }
        }
        Ok(best)
    }

    /// Leacock-Chodorow similarity, maximised over sense pairs.
    pub fn lc_similarity(&self, k: &Keyword, l: &Keyword) -> Result<f64, TaxonomyError> {
        let nodes = self.path_nodes(k, l)?;
        Ok(self.score_for_path(nodes))
    }

    /// `lc_similarity(k, l) > threshold`.
    pub fn similar(&self, k: &Keyword, l: &Keyword, threshold: f64) -> Result<bool, TaxonomyError> {
        Ok(self.lc_similarity(k, l)? > threshold)
    }

    /// Like [`Taxonomy::similar`], but keywords outside the taxonomy are
    /// compared by exact string equality.
    pub fn similar_or_exact(&self, k: &Keyword, l: &Keyword, threshold: f64) -> bool {
        match self.lc_similarity(k, l) {
            Ok(score) => score > threshold,
            Err(_) => k == l,
        }
    }

    pub(crate) fn score_for_path(&self, nodes: u32) -> f64 {
        -(f64::from(nodes) / (2.0 * f64::from(self.max_depth))).ln()
    }

    fn senses_of(&self, k: &Keyword) -> Result<&[usize], TaxonomyError> {
        self.senses
            .get(k)
            .map(Vec::as_slice)
            .ok_or_else(|| TaxonomyError::UnknownKeyword(k.clone()))
    }

    fn node_path(&self, mut a: usize, mut b: usize) -> u32 {
        let mut edges = 0;
        while self.depth[a] > self.depth[b] {
            a = self.parent[a].expect("non-root has a parent");
            edges += 1;
        }
        while self.depth[b] > self.depth[a] {
            b = self.parent[b].expect("non-root has a parent");
            edges += 1;
        }
        while a != b {
            a = self.parent[a].expect("non-root has a parent");
            b = self.parent[b].expect("non-root has a parent");
            edges += 2;
        }
        edges + 1
    }

    /// Serializes back to the `child<TAB>parent` format.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (id, name) in self.names.iter().enumerate() {
            let parent = self.parent[id].map_or("-", |p| self.names[p].as_str());
            out.push_str(name);
            out.push('\t');
            out.push_str(parent);
            out.push('\n');
        }
        out
    }
}

fn sense_text(name: &str) -> &str {
    match name.rsplit_once('#') {
        Some((text, sense)) if !sense.is_empty() && sense.bytes().all(|b| b.is_ascii_digit()) => text,
        _ => name,
    }
}
