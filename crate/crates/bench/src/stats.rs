//! Per-event replay records and their CSV form.

use std::fmt::Write as _;

use memtree::tree::NodeKey;

use crate::Method;

pub const STATS_HEADER: &str = "event,i,j,method,wall_s,num_vars,iters,cost0,cost1,accepted";

/// One optimization triggered by a loop edge.
#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub event: usize,
    pub i: NodeKey,
    pub j: NodeKey,
    pub method: Method,
    pub wall_s: f64,
    pub num_vars: usize,
    pub iters: usize,
    pub cost0: f64,
    pub cost1: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReplayStats {
    pub events: Vec<EventRecord>,
    /// Sum of per-event optimization wall times.
    pub total_time_s: f64,
    pub tree_height: Option<u32>,
    pub node_count: usize,
    /// Non-robust chi-square over the edges kept in the graph.
    pub final_cost: f64,
}

impl ReplayStats {
    pub fn num_rejected(&self) -> usize {
        self.events.iter().filter(|e| !e.accepted).count()
    }
}

/// CSV with header and one row per event. Floats use the shortest
/// representation that parses back to the same value.
pub fn emit_stats(events: &[EventRecord]) -> String {
    let mut out = String::with_capacity(80 * (events.len() + 1));
    out.push_str(STATS_HEADER);
    out.push('\n');
    for e in events {
        let _ = writeln!(
            out,
            "{},{},{},{},{:?},{},{},{:?},{:?},{}",
            e.event, e.i, e.j, e.method, e.wall_s, e.num_vars, e.iters, e.cost0, e.cost1, e.accepted
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("stats line {line}: {msg}")]
pub struct StatsParseError {
    pub line: usize,
    pub msg: String,
}

pub fn parse_stats(text: &str) -> Result<Vec<EventRecord>, StatsParseError> {
    let mut lines = text.lines().enumerate();
    if lines.next().map(|(_, h)| h.trim()) != Some(STATS_HEADER) {
        return Err(StatsParseError {
            line: 1,
            msg: format!("expected header {STATS_HEADER:?}"),
        });
    }
    let mut out = Vec::new();
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| StatsParseError { line: n + 1, msg };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            return Err(err(format!("expected 10 columns, found {}", f.len())));
        }
        macro_rules! field {
            ($k:expr) => {
                f[$k]
                    .parse()
                    .map_err(|_| err(format!("bad value {:?} in column {}", f[$k], $k + 1)))?
            };
        }
        out.push(EventRecord {
            event: field!(0),
            i: field!(1),
            j: field!(2),
            method: f[3].parse().map_err(|e: crate::UnknownMethod| err(e.to_string()))?,
            wall_s: field!(4),
            num_vars: field!(5),
            iters: field!(6),
            cost0: field!(7),
            cost1: field!(8),
            accepted: field!(9),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_only_and_single_event() {
        assert_eq!(emit_stats(&[]), format!("{STATS_HEADER}\n"));
        let e = EventRecord {
            event: 0,
            i: 10,
            j: 2,
            method: Method::TreeTopDown,
            wall_s: 1.5e-5,
            num_vars: 3,
            iters: 2,
            cost0: 4.25,
            cost1: 0.1,
            accepted: true,
        };
        let text = emit_stats(std::slice::from_ref(&e));
        assert_eq!(text.lines().count(), 2);
        assert_eq!(
            text.lines().nth(1).unwrap(),
            "0,10,2,tree-top-down,1.5e-5,3,2,4.25,0.1,true"
        );
        assert_eq!(parse_stats(&text).unwrap(), vec![e]);
        assert!(parse_stats("nope\n").is_err());
        assert!(parse_stats(&format!("{STATS_HEADER}\n0,1,2,x,0,0,0,0,0,true\n")).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(rows in prop::collection::vec(
            (0u64..100_000, 0u64..100_000, 0usize..4, 0.0..10.0f64, 0usize..500, 0usize..60, 0.0..1e9f64, 0.0..1e9f64, any::<bool>()),
            0..30,
        )) {
            let events: Vec<EventRecord> = rows
                .into_iter()
                .enumerate()
                .map(|(event, (i, j, m, wall_s, num_vars, iters, cost0, cost1, accepted))| EventRecord {
                    event, i, j, method: Method::ALL[m], wall_s, num_vars, iters, cost0, cost1, accepted,
                })
                .collect();
            prop_assert_eq!(parse_stats(&emit_stats(&events)).unwrap(), events);
        }
    }
}
