//! Finite switching languages and the prefix tree that deduplicates shared
//! switching histories.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `sum(probabilities) == 1`.
pub const PROBABILITY_SUM_TOL: f64 = 1e-12;

/// Mode index sequence `sigma_0, ..., sigma_T`; modes are 1-based.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SwitchingSignal(Vec<usize>);

impl SwitchingSignal {
    pub fn new(modes: Vec<usize>, num_modes: usize) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::Language("switching signal must cover at least one instant".into()));
        }
        if let Some(bad) = modes.iter().find(|&&m| m == 0 || m > num_modes) {
            return Err(Error::Language(format!("mode {bad} outside 1..={num_modes}")));
        }
        Ok(Self(modes))
    }

    pub fn constant(mode: usize, horizon: usize) -> Self {
        Self(vec![mode; horizon + 1])
    }

    pub fn horizon(&self) -> usize {
        self.0.len() - 1
    }

    pub fn modes(&self) -> &[usize] {
        &self.0
    }

    pub fn mode(&self, t: usize) -> usize {
        self.0[t]
    }

    /// Modes observed through time `t` inclusive.
    pub fn prefix(&self, t: usize) -> &[usize] {
        &self.0[..=t]
    }

    /// Prefix visible at time `t` when observations lag by `delay` steps.
    pub fn delayed_prefix(&self, t: usize, delay: usize) -> &[usize] {
        if t < delay {
            &[]
        } else {
            &self.0[..=(t - delay)]
        }
    }

    /// First instant in mode 2 or later, for signals generated by the fault model.
    pub fn fault_time(&self) -> Option<usize> {
        self.0.iter().position(|&m| m != 1)
    }
}

impl fmt::Display for SwitchingSignal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&prefix_label(&self.0))
    }
}

/// Comma-separated mode list; the empty prefix renders as `-`.
pub fn prefix_label(prefix: &[usize]) -> String {
    if prefix.is_empty() {
        return "-".to_string();
    }
    prefix.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(",")
}

/// `true` iff `a` and `b` agree on indices `0..=t`.
pub fn prefixes_equal(a: &SwitchingSignal, b: &SwitchingSignal, t: usize) -> bool {
    a.0.len() > t && b.0.len() > t && a.0[..=t] == b.0[..=t]
}

/// A finite set of distinct switching signals, optionally weighted.
#[derive(Clone, Debug, PartialEq)]
pub struct SwitchingLanguage {
    signals: Vec<SwitchingSignal>,
    probabilities: Option<Vec<f64>>,
    num_modes: usize,
}

impl SwitchingLanguage {
    pub fn new(signals: Vec<SwitchingSignal>, probabilities: Option<Vec<f64>>, num_modes: usize) -> Result<Self> {
        if signals.is_empty() {
            return Err(Error::Language("language is empty".into()));
        }
        let horizon = signals[0].horizon();
        let mut seen = BTreeSet::new();
        for s in &signals {
            if s.horizon() != horizon {
                return Err(Error::Language(format!("signal {s} has horizon {}, expected {horizon}", s.horizon())));
            }
            if s.modes().iter().any(|&m| m == 0 || m > num_modes) {
                return Err(Error::Language(format!("signal {s} uses modes outside 1..={num_modes}")));
            }
            if !seen.insert(s.clone()) {
                return Err(Error::Language(format!("duplicate signal {s}")));
            }
        }
        let lang = Self { signals, probabilities: None, num_modes };
        match probabilities {
            Some(p) => lang.with_probabilities(p),
            None => Ok(lang),
        }
    }

    pub fn with_probabilities(mut self, probabilities: Vec<f64>) -> Result<Self> {
        if probabilities.len() != self.signals.len() {
            return Err(Error::Language(format!(
                "{} probabilities for {} signals",
                probabilities.len(),
                self.signals.len()
            )));
        }
        if probabilities.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Language("probabilities must be finite and non-negative".into()));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > PROBABILITY_SUM_TOL {
            return Err(Error::Language(format!("probabilities sum to {total}, not 1")));
        }
        self.probabilities = Some(probabilities);
        Ok(self)
    }

    pub fn signals(&self) -> &[SwitchingSignal] {
        &self.signals
    }

    pub fn signal(&self, i: usize) -> &SwitchingSignal {
        &self.signals[i]
    }

    pub fn len(&self) -> usize {
        self.signals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signals.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.signals[0].horizon()
    }

    pub fn num_modes(&self) -> usize {
        self.num_modes
    }

    pub fn probabilities(&self) -> Option<&[f64]> {
        self.probabilities.as_deref()
    }

    pub fn index_of(&self, signal: &SwitchingSignal) -> Option<usize> {
        self.signals.iter().position(|s| s == signal)
    }
}

/// Signals that are nominal (mode 1) before `t_fault` and faulty (mode 2) from
/// `t_fault` on, for every `t_fault` in `0..=horizon`. Ordered by fault time.
pub fn fault_language(horizon: usize, include_never_faulty: bool) -> SwitchingLanguage {
    let mut signals: Vec<SwitchingSignal> = (0..=horizon)
        .map(|t_fault| SwitchingSignal((0..=horizon).map(|t| if t < t_fault { 1 } else { 2 }).collect()))
        .collect();
    if include_never_faulty {
        signals.push(SwitchingSignal::constant(1, horizon));
    }
    SwitchingLanguage::new(signals, None, 2).expect("fault language is well formed")
}

/// Assigns equal probability to every signal.
pub fn uniform(lang: &SwitchingLanguage) -> Result<SwitchingLanguage> {
    if lang.is_empty() {
        return Err(Error::Language("cannot make an empty language uniform".into()));
    }
    let p = 1.0 / lang.len() as f64;
    let mut probs = vec![p; lang.len()];
    // absorb rounding so the sum is 1 to machine precision
    let drift: f64 = 1.0 - probs.iter().sum::<f64>();
    probs[0] += drift;
    lang.clone().with_probabilities(probs)
}

/// One node of the prefix tree: a distinct (delayed) prefix at a given depth.
#[derive(Clone, Debug, PartialEq)]
pub struct PrefixNode {
    pub depth: usize,
    /// Delayed prefix `sigma_{0:depth-delay}`; empty while `depth < delay`.
    pub key: Vec<usize>,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Language indices of the signals passing through this node.
    pub signals: Vec<usize>,
}

/// Deduplicated switching histories. Node `(t, key)` is shared by every signal
/// whose delayed prefix at time `t` equals `key`.
#[derive(Clone, Debug, PartialEq)]
pub struct PrefixTree {
    nodes: Vec<PrefixNode>,
    levels: Vec<BTreeMap<Vec<usize>, usize>>,
    paths: Vec<Vec<usize>>,
    delay: usize,
    horizon: usize,
}

impl PrefixTree {
    pub fn nodes(&self) -> &[PrefixNode] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &PrefixNode {
        &self.nodes[i]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn delay(&self) -> usize {
        self.delay
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_signals(&self) -> usize {
        self.paths.len()
    }

    /// Node indices visited by signal `i` at depths `0..=T`.
    pub fn path(&self, signal: usize) -> &[usize] {
        &self.paths[signal]
    }

    pub fn leaf(&self, signal: usize) -> usize {
        *self.paths[signal].last().unwrap()
    }

    /// Nodes at one depth, ordered by key.
    pub fn level(&self, depth: usize) -> impl Iterator<Item = usize> + '_ {
        self.levels[depth].values().copied()
    }

    pub fn lookup(&self, depth: usize, key: &[usize]) -> Option<usize> {
        self.levels.get(depth)?.get(key).copied()
    }

    /// Node used at time `t` by a signal (need not belong to the language).
    pub fn node_for(&self, signal: &SwitchingSignal, t: usize) -> Option<usize> {
        if t > self.horizon || signal.horizon() != self.horizon {
            return None;
        }
        self.lookup(t, signal.delayed_prefix(t, self.delay))
    }
}

/// Builds the prefix tree of `lang` with observation delay `delay`.
pub fn build_prefix_tree(lang: &SwitchingLanguage, delay: usize) -> Result<PrefixTree> {
    let horizon = lang.horizon();
    if delay > horizon + 1 {
        return Err(Error::Language(format!("delay {delay} exceeds horizon + 1 = {}", horizon + 1)));
    }
    // keys are nested: equal keys at depth t imply equal keys at depth t-1,
    // so sorting keys per level and linking to the parent key yields a tree
    let mut levels: Vec<BTreeMap<Vec<usize>, usize>> = Vec::with_capacity(horizon + 1);
    let mut nodes: Vec<PrefixNode> = Vec::new();
    for t in 0..=horizon {
        let keys: BTreeSet<Vec<usize>> = lang.signals().iter().map(|s| s.delayed_prefix(t, delay).to_vec()).collect();
        let mut level = BTreeMap::new();
        for key in keys {
            let idx = nodes.len();
            nodes.push(PrefixNode {
                depth: t,
                key: key.clone(),
                parent: None,
                children: Vec::new(),
                signals: Vec::new(),
            });
            level.insert(key, idx);
        }
        levels.push(level);
    }
    let mut paths = Vec::with_capacity(lang.len());
    for (si, s) in lang.signals().iter().enumerate() {
        let path: Vec<usize> = (0..=horizon).map(|t| levels[t][s.delayed_prefix(t, delay)]).collect();
        for (t, &node) in path.iter().enumerate() {
            nodes[node].signals.push(si);
            if t > 0 {
                let parent = path[t - 1];
                match nodes[node].parent {
                    None => {
                        nodes[node].parent = Some(parent);
                        nodes[parent].children.push(node);
                    }
                    Some(p) if p != parent => {
                        return Err(Error::Structure(format!("prefix node {node} reached from two parents")))
                    }
                    _ => {}
                }
            }
        }
        paths.push(path);
    }
    Ok(PrefixTree { nodes, levels, paths, delay, horizon })
}
