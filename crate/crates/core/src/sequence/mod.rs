//! User behavior sequences and multi-scale subsequence extraction.
//!
//! A user's lifecycle sequence is split into several equal-budget
//! subsequences, one per extraction strategy; each strategy filters by
//! action (optionally scenario or a caller-supplied score) and keeps the
//! most recent matches, left-padded to its budget.

mod loader;
mod synthetic;

pub use loader::{load_events, LoadReport};
pub use synthetic::{synthesize_users, CandidateSet, SyntheticDataset, SyntheticSpec};

use crate::error::{Error, Result};

/// Reserved item id used for padding; real items start at 1.
pub const PAD_ITEM: u32 = 0;

/// Interaction kinds. Lowercase names are the wire format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    PlayFull,
    Like,
    Share,
    Comment,
    Click,
    Skip,
}

impl Action {
    pub const ALL: [Action; 6] = [
        Action::PlayFull,
        Action::Like,
        Action::Share,
        Action::Comment,
        Action::Click,
        Action::Skip,
    ];

    /// Actions treated as positive engagement by default.
    pub const POSITIVE: [Action; 4] =
        [Action::PlayFull, Action::Like, Action::Share, Action::Comment];

    pub fn name(self) -> &'static str {
        match self {
            Action::PlayFull => "play_full",
            Action::Like => "like",
            Action::Share => "share",
            Action::Comment => "comment",
            Action::Click => "click",
            Action::Skip => "skip",
        }
    }

    pub fn parse(s: &str) -> Option<Action> {
        Action::ALL.into_iter().find(|a| a.name() == s)
    }

    pub fn index(self) -> usize {
        Action::ALL.iter().position(|&a| a == self).unwrap()
    }
}

/// Small set of actions, used as a strategy filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionSet(u8);

impl ActionSet {
    pub fn empty() -> Self {
        ActionSet(0)
    }

    pub fn all() -> Self {
        ActionSet::of(&Action::ALL)
    }

    pub fn of(actions: &[Action]) -> Self {
        let mut bits = 0u8;
        for a in actions {
            bits |= 1 << a.index();
        }
        ActionSet(bits)
    }

    pub fn contains(self, a: Action) -> bool {
        self.0 & (1 << a.index()) != 0
    }

    pub fn is_superset(self, other: ActionSet) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn union(self, other: ActionSet) -> ActionSet {
        ActionSet(self.0 | other.0)
    }

    pub fn intersects(self, other: ActionSet) -> bool {
        self.0 & other.0 != 0
    }

    pub fn iter(self) -> impl Iterator<Item = Action> {
        Action::ALL.into_iter().filter(move |a| self.contains(*a))
    }

    /// Parse a `a|b|c` list; `*` means all actions.
    pub fn parse(s: &str) -> Option<ActionSet> {
        if s == "*" {
            return Some(ActionSet::all());
        }
        let mut set = ActionSet::empty();
        for part in s.split('|') {
            set = set.union(ActionSet::of(&[Action::parse(part.trim())?]));
        }
        Some(set)
    }
}

impl std::fmt::Display for ActionSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let names: Vec<&str> = self.iter().map(Action::name).collect();
        write!(f, "{}", names.join("|"))
    }
}

/// One user-item interaction: the atom of every sequence.
///
/// `score` is an optional caller-supplied per-event model score (0.0 when
/// absent) consumed by score-threshold strategies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub item_id: u32,
    pub action: Action,
    pub timestamp: u64,
    pub scenario_id: u16,
    pub score: f64,
}

impl Event {
    pub fn new(item_id: u32, action: Action, timestamp: u64, scenario_id: u16) -> Self {
        Event { item_id, action, timestamp, scenario_id, score: 0.0 }
    }

    /// Padding placeholder; masked out of every computation downstream.
    pub fn pad() -> Self {
        Event { item_id: PAD_ITEM, action: Action::Skip, timestamp: 0, scenario_id: 0, score: 0.0 }
    }

    pub fn is_pad(&self) -> bool {
        self.item_id == PAD_ITEM
    }
}

/// A user's full chronological interaction history.
#[derive(Debug, Clone, PartialEq)]
pub struct LifecycleSequence {
    pub user_id: u64,
    events: Vec<Event>,
}

impl LifecycleSequence {
    /// Build from events in any order; stable-sorts by timestamp so ties
    /// keep their input order.
    pub fn new(user_id: u64, mut events: Vec<Event>) -> Self {
        events.sort_by_key(|e| e.timestamp);
        LifecycleSequence { user_id, events }
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// A named filter plus a length budget: one of the N_b rules that turn a
/// lifecycle sequence into a fixed-length subsequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionStrategy {
    pub strategy_id: usize,
    pub name: String,
    pub action_filter: ActionSet,
    /// When set, only events from these scenarios are retained.
    pub scenario_filter: Option<Vec<u16>>,
    /// Subsequence length n_k; matches beyond it are dropped oldest-first
    /// (the most recent matching events are kept).
    pub budget: usize,
    /// Score-threshold filter realizing model-filtered strategies.
    pub min_score: Option<f64>,
}

impl ExtractionStrategy {
    pub fn new(strategy_id: usize, name: &str, actions: ActionSet, budget: usize) -> Self {
        ExtractionStrategy {
            strategy_id,
            name: name.to_string(),
            action_filter: actions,
            scenario_filter: None,
            budget,
            min_score: None,
        }
    }

    pub fn matches(&self, e: &Event) -> bool {
        self.action_filter.contains(e.action)
            && self.scenario_filter.as_ref().map_or(true, |s| s.contains(&e.scenario_id))
            && self.min_score.map_or(true, |t| e.score >= t)
    }
}

/// Fixed-length extraction result: the most recent matches, left-padded.
#[derive(Debug, Clone, PartialEq)]
pub struct SubSequence {
    pub strategy_id: usize,
    /// Exactly `budget` events; the first `budget - valid_length` are pads.
    pub events: Vec<Event>,
    pub valid_length: usize,
}

impl SubSequence {
    pub fn budget(&self) -> usize {
        self.events.len()
    }

    /// The non-pad tail, in original order.
    pub fn valid_events(&self) -> &[Event] {
        &self.events[self.events.len() - self.valid_length..]
    }
}

/// Extract one subsequence: the most recent `budget` events matching the
/// strategy's filters, original order preserved, left-padded. An empty match
/// yields an all-pad subsequence with valid_length 0.
pub fn extract(seq: &LifecycleSequence, strategy: &ExtractionStrategy) -> SubSequence {
    let matched: Vec<Event> =
        seq.events().iter().filter(|e| strategy.matches(e)).copied().collect();
    let keep_from = matched.len().saturating_sub(strategy.budget);
    let kept = &matched[keep_from..];
    let mut events = vec![Event::pad(); strategy.budget - kept.len()];
    events.extend_from_slice(kept);
    SubSequence { strategy_id: strategy.strategy_id, events, valid_length: kept.len() }
}

/// Equal-budget check shared by extraction and the model configuration.
pub fn validate_strategies(strategies: &[ExtractionStrategy]) -> Result<()> {
    if strategies.is_empty() {
        return Err(Error::Config("strategy set is empty".into()));
    }
    let budget = strategies[0].budget;
    if budget == 0 {
        return Err(Error::Config("strategy budget must be positive".into()));
    }
    for s in strategies {
        if s.budget != budget {
            return Err(Error::Config(format!(
                "strategies must share one budget; '{}' has {} but '{}' has {}",
                strategies[0].name, budget, s.name, s.budget
            )));
        }
    }
    Ok(())
}

/// Run every strategy. Budgets must all be equal (the equal-length design);
/// total non-pad length is at most n = sum of budgets.
pub fn extract_all(
    seq: &LifecycleSequence,
    strategies: &[ExtractionStrategy],
) -> Result<Vec<SubSequence>> {
    validate_strategies(strategies)?;
    Ok(strategies.iter().map(|s| extract(seq, s)).collect())
}

/// Built-in strategy sets keyed by block count. 1 keeps everything; 2 splits
/// positive/negative engagement; 4 splits finer; any other count partitions
/// actions round-robin.
pub fn default_strategy_set(blocks: usize, budget: usize) -> Vec<ExtractionStrategy> {
    let parts: Vec<(String, ActionSet)> = match blocks {
        1 => vec![("all".into(), ActionSet::all())],
        2 => vec![
            ("positive".into(), ActionSet::of(&Action::POSITIVE)),
            ("negative".into(), ActionSet::of(&[Action::Click, Action::Skip])),
        ],
        4 => vec![
            ("engaged".into(), ActionSet::of(&[Action::PlayFull, Action::Like])),
            ("social".into(), ActionSet::of(&[Action::Share, Action::Comment])),
            ("click".into(), ActionSet::of(&[Action::Click])),
            ("skip".into(), ActionSet::of(&[Action::Skip])),
        ],
        n => (0..n)
            .map(|k| {
                let actions: Vec<Action> = Action::ALL
                    .into_iter()
                    .enumerate()
                    .filter(|(i, _)| i % n == k)
                    .map(|(_, a)| a)
                    .collect();
                (format!("mod{k}"), ActionSet::of(&actions))
            })
            .collect(),
    };
    parts
        .into_iter()
        .enumerate()
        .map(|(k, (name, set))| ExtractionStrategy::new(k, &name, set, budget))
        .collect()
}
