//! Event-log ingestion from tab-separated text.
//!
//! Row format: `user_id \t item_id \t action \t timestamp \t scenario_id`
//! with an optional sixth score column. A header line is tolerated. Rows
//! that fail to parse are counted; more than 10% malformed is a format error.

use std::collections::BTreeMap;
use std::path::Path;

use super::{Action, Event, LifecycleSequence};
use crate::error::{Error, Result};

#[derive(Debug)]
pub struct LoadReport {
    /// Per-user sequences, sorted by user id, events sorted by timestamp
    /// (stable on ties, so equal timestamps keep file order).
    pub sequences: Vec<LifecycleSequence>,
    pub rows_read: usize,
    pub malformed_rows: usize,
}

fn parse_row(line: &str) -> Option<(u64, Event)> {
    let mut fields = line.split('\t');
    let user: u64 = fields.next()?.trim().parse().ok()?;
    let item: u32 = fields.next()?.trim().parse().ok()?;
    let action = Action::parse(fields.next()?.trim())?;
    let timestamp: u64 = fields.next()?.trim().parse().ok()?;
    let scenario: u16 = fields.next()?.trim().parse().ok()?;
    let score: f64 = match fields.next() {
        Some(s) => s.trim().parse().ok()?,
        None => 0.0,
    };
    let mut e = Event::new(item, action, timestamp, scenario);
    e.score = score;
    Some((user, e))
}

pub fn load_events(path: &Path) -> Result<LoadReport> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut per_user: BTreeMap<u64, Vec<Event>> = BTreeMap::new();
    let mut rows_read = 0;
    let mut malformed = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_row(line) {
            Some((user, event)) => {
                rows_read += 1;
                per_user.entry(user).or_default().push(event);
            }
            None if i == 0 => {
                // Header line; not counted as data.
            }
            None => {
                rows_read += 1;
                malformed += 1;
            }
        }
    }
    if rows_read > 0 && malformed * 10 > rows_read {
        return Err(Error::Format {
            path: path.display().to_string(),
            line: None,
            msg: format!("{malformed} of {rows_read} rows malformed (over 10%)"),
        });
    }
    let sequences = per_user
        .into_iter()
        .map(|(user_id, events)| LifecycleSequence::new(user_id, events))
        .collect();
    Ok(LoadReport { sequences, rows_read, malformed_rows: malformed })
}
