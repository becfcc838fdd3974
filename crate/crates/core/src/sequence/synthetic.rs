//! Planted-factor synthetic data.
//!
//! Users and items get latent vectors on the unit sphere, and candidate
//! labels are the sign of the latent dot product with a small flip
//! probability, so the generator's own latents give a Bayes-optimal scorer.
//!
//! History events encode alignment in a way that rewards model capacity.
//! Direct events use the engagement actions, split into two pairs whose
//! meaning depends on a hidden per-user "dialect": one pair marks aligned
//! items, the other misaligned, flipped for half the users. The remaining
//! events arrive as click/skip pairs: a click "marker" carrying one of two
//! reserved signpost items (id 2 = aligned, id 1 = misaligned) that says
//! which way the following skip "payload" item points. Direct events are
//! readable in a single attention hop; payload events only become
//! informative after history rows have mixed with their neighbors, which
//! needs a second layer. Everything is a pure function of the seed.

use super::{Action, Event, LifecycleSequence};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Generator settings. `new` covers the common case; the remaining fields
/// have workable defaults.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub num_users: usize,
    pub vocab_size: usize,
    /// Latent dimensionality; higher rank is harder to infer from history.
    pub rank: usize,
    pub num_scenarios: u16,
    pub min_events_per_user: usize,
    pub max_events_per_user: usize,
    pub candidate_sets_per_user: usize,
    pub candidates_per_set: usize,
    pub label_flip_prob: f64,
    /// Probability that the next history slot is a marker/payload pair
    /// rather than a direct dialect-coded event.
    pub pair_frac: f64,
}

impl SyntheticSpec {
    pub fn new(seed: u64, num_users: usize, vocab_size: usize, rank: usize) -> Self {
        SyntheticSpec {
            seed,
            num_users,
            vocab_size,
            rank,
            num_scenarios: 2,
            min_events_per_user: 40,
            max_events_per_user: 80,
            candidate_sets_per_user: 5,
            candidates_per_set: 8,
            label_flip_prob: 0.01,
            pair_frac: 0.45,
        }
    }
}

/// Labeled candidate items for one user at one nominal point in time.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    pub user_id: u64,
    pub scenario_id: u16,
    pub items: Vec<u32>,
    pub labels: Vec<u8>,
    /// Temporal index within the user's sets; used for the eval split.
    pub order: usize,
}

#[derive(Debug)]
pub struct SyntheticDataset {
    pub users: Vec<LifecycleSequence>,
    pub candidate_sets: Vec<CandidateSet>,
    /// Row u-1 is the latent vector of user id u.
    pub user_latents: Vec<Vec<f64>>,
    /// Row i is the latent vector of item id i; row 0 (the pad id) is unused.
    pub item_latents: Vec<Vec<f64>>,
    /// Per-user dialect bit: which engagement-action pair marks alignment.
    pub user_dialects: Vec<bool>,
}

impl SyntheticDataset {
    /// Score candidates with the generator's own latents: the Bayes-optimal
    /// scorer for this data, used as an oracle in tests and nowhere else.
    pub fn oracle_scores(&self, user_id: u64, items: &[u32]) -> Vec<f64> {
        let p = &self.user_latents[(user_id - 1) as usize];
        items.iter().map(|&i| dot(p, &self.item_latents[i as usize])).collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn unit_vector(rng: &mut Rng, rank: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..rank).map(|_| rng.next_gauss()).collect();
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

pub fn synthesize_users(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    if spec.vocab_size < 100 {
        return Err(Error::Config(format!(
            "synthetic vocabulary must be at least 100, got {}",
            spec.vocab_size
        )));
    }
    if spec.max_events_per_user < spec.min_events_per_user || spec.num_users == 0 {
        return Err(Error::Config("bad synthetic event-count range".into()));
    }
    let mut rng = Rng::new(spec.seed);

    // Item latents first (id 0 is the pad; ids 1 and 2 are the reserved
    // marker signposts; content items are 3..vocab).
    let mut item_latents = vec![vec![0.0; spec.rank]];
    for _ in 1..spec.vocab_size {
        item_latents.push(unit_vector(&mut rng, spec.rank));
    }
    let content = |rng: &mut Rng| 3 + rng.next_below(spec.vocab_size - 3) as u32;

    let mut users = Vec::with_capacity(spec.num_users);
    let mut user_latents = Vec::with_capacity(spec.num_users);
    let mut user_dialects = Vec::with_capacity(spec.num_users);
    let mut candidate_sets = Vec::new();

    for u in 0..spec.num_users {
        let user_id = (u + 1) as u64;
        let p = unit_vector(&mut rng, spec.rank);
        let dialect = rng.next_f64() < 0.5;
        let aligned_pair =
            if dialect { [Action::Share, Action::Comment] } else { [Action::PlayFull, Action::Like] };
        let misaligned_pair =
            if dialect { [Action::PlayFull, Action::Like] } else { [Action::Share, Action::Comment] };

        let span = spec.max_events_per_user - spec.min_events_per_user + 1;
        let n_events = spec.min_events_per_user + rng.next_below(span);
        let mut ts = 1_000_000 + (u as u64) * 100_000;
        let mut events = Vec::with_capacity(n_events);
        while events.len() < n_events {
            let room_for_pair = events.len() + 1 < n_events;
            ts += 60 + rng.next_below(3600) as u64;
            let scenario = rng.next_below(spec.num_scenarios as usize) as u16;
            // A fresh handful of random items per choice: best-aligned for a
            // positive pick, worst-aligned otherwise.
            let pick = |rng: &mut Rng, best: bool| -> u32 {
                let pool: Vec<u32> = (0..4).map(|_| content(rng)).collect();
                let mut chosen = pool[0];
                let mut extreme = dot(&p, &item_latents[pool[0] as usize]);
                for &i in &pool[1..] {
                    let s = dot(&p, &item_latents[i as usize]);
                    if (best && s > extreme) || (!best && s < extreme) {
                        extreme = s;
                        chosen = i;
                    }
                }
                chosen
            };
            let mut push = |item: u32, action: Action, ts: u64| {
                let mut e = Event::new(item, action, ts, scenario);
                e.score = dot(&p, &item_latents[item as usize]);
                events.push(e);
            };
            if room_for_pair && rng.next_f64() < spec.pair_frac {
                // Marker/payload pair: signpost item 2 announces an aligned
                // payload, signpost item 1 a misaligned one.
                let aligned = rng.next_f64() < 0.5;
                push(if aligned { 2 } else { 1 }, Action::Click, ts);
                ts += 1 + rng.next_below(50) as u64;
                push(pick(&mut rng, aligned), Action::Skip, ts);
            } else if rng.next_f64() < 0.5 {
                push(pick(&mut rng, true), aligned_pair[rng.next_below(2)], ts);
            } else {
                push(pick(&mut rng, false), misaligned_pair[rng.next_below(2)], ts);
            }
        }
        users.push(LifecycleSequence::new(user_id, events));
        user_dialects.push(dialect);

        for order in 0..spec.candidate_sets_per_user {
            let scenario = rng.next_below(spec.num_scenarios as usize) as u16;
            let items: Vec<u32> =
                (0..spec.candidates_per_set).map(|_| content(&mut rng)).collect();
            let labels: Vec<u8> = items
                .iter()
                .map(|&i| {
                    let aligned = dot(&p, &item_latents[i as usize]) > 0.0;
                    let flip = rng.next_f64() < spec.label_flip_prob;
                    u8::from(aligned != flip)
                })
                .collect();
            candidate_sets.push(CandidateSet { user_id, scenario_id: scenario, items, labels, order });
        }
        user_latents.push(p);
    }

    Ok(SyntheticDataset { users, candidate_sets, user_latents, item_latents, user_dialects })
}
