use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

pub const MICRO_USD_PER_USD: u64 = 1_000_000;
/// 5 USD per 1000 queries.
pub const DEFAULT_MICRO_USD_PER_QUERY: u64 = 5_000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundCost {
    pub round: u32,
    pub queries: u64,
    pub cost_micro_usd: u64,
}

/// Query and cost totals in integer micro-dollars, so that totals are
/// exactly `queries × rate` with no rounding drift.
#[derive(Debug, Default)]
pub struct CostLedger {
    total_queries: AtomicU64,
    total_micro_usd: AtomicU64,
    per_round: Mutex<BTreeMap<u32, RoundCost>>,
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, round: u32, cost_micro_usd: u64) {
        // Per-round entries and totals are updated under the same lock so a
        // concurrent snapshot never sees them disagree.
        let mut rounds = self.per_round.lock().expect("ledger poisoned");
        let entry = rounds.entry(round).or_insert(RoundCost {
            round,
            ..RoundCost::default()
        });
        entry.queries += 1;
        entry.cost_micro_usd += cost_micro_usd;
        self.total_queries.fetch_add(1, Ordering::SeqCst);
        self.total_micro_usd.fetch_add(cost_micro_usd, Ordering::SeqCst);
    }

    pub fn total_queries(&self) -> u64 {
        self.total_queries.load(Ordering::SeqCst)
    }

    pub fn total_micro_usd(&self) -> u64 {
        self.total_micro_usd.load(Ordering::SeqCst)
    }

    pub fn total_usd(&self) -> f64 {
        self.total_micro_usd() as f64 / MICRO_USD_PER_USD as f64
    }

    pub fn per_round(&self) -> Vec<RoundCost> {
        self.per_round
            .lock()
            .expect("ledger poisoned")
            .values()
            .copied()
            .collect()
    }

    /// Rebuilds a ledger from per-round entries (e.g. on resume).
    pub fn from_rounds(rounds: &[RoundCost]) -> Self {
        let ledger = CostLedger::new();
        {
            let mut map = ledger.per_round.lock().expect("ledger poisoned");
            for r in rounds {
                let e = map.entry(r.round).or_insert(RoundCost {
                    round: r.round,
                    ..RoundCost::default()
                });
                e.queries += r.queries;
                e.cost_micro_usd += r.cost_micro_usd;
                ledger.total_queries.fetch_add(r.queries, Ordering::SeqCst);
                ledger
                    .total_micro_usd
                    .fetch_add(r.cost_micro_usd, Ordering::SeqCst);
            }
        }
        ledger
    }
}

/// Formats micro-dollars as a fixed two-decimal USD string.
pub fn format_usd(micro_usd: u64) -> String {
    let cents = (micro_usd + 5_000) / 10_000;
    format!("{}.{:02}", cents / 100, cents % 100)
}
