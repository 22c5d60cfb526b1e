//! Deterministic flop accounting.
//!
//! Every scalar multiply and every scalar add counts as one flop. Counters are
//! atomic so a single counter can be shared by concurrent operator applications.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Assembly,
    Svd,
    Admissibility,
    MatvecH,
    MatvecSparse,
    GmresOrthogonalization,
}

impl Phase {
    pub const ALL: [Phase; 6] = [
        Phase::Assembly,
        Phase::Svd,
        Phase::Admissibility,
        Phase::MatvecH,
        Phase::MatvecSparse,
        Phase::GmresOrthogonalization,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Assembly => "assembly",
            Phase::Svd => "svd",
            Phase::Admissibility => "admissibility",
            Phase::MatvecH => "matvec-h",
            Phase::MatvecSparse => "matvec-sparse",
            Phase::GmresOrthogonalization => "gmres-orthogonalization",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Monotone per-phase flop counters.
#[derive(Debug, Default)]
pub struct FlopCounter {
    counts: [AtomicU64; 6],
}

impl FlopCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&self, phase: Phase, flops: u64) {
        self.counts[phase.index()].fetch_add(flops, Ordering::Relaxed);
    }

    pub fn get(&self, phase: Phase) -> u64 {
        self.counts[phase.index()].load(Ordering::Relaxed)
    }

    pub fn total(&self) -> u64 {
        Phase::ALL.iter().map(|&p| self.get(p)).sum()
    }

    /// Componentwise sum of `other` into `self`.
    pub fn merge(&self, other: &FlopCounter) {
        for p in Phase::ALL {
            self.add(p, other.get(p));
        }
    }

    pub fn snapshot(&self) -> FlopSnapshot {
        let mut s = FlopSnapshot::default();
        for p in Phase::ALL {
            s.by_phase[p.index()] = self.get(p);
        }
        s
    }
}

impl Clone for FlopCounter {
    fn clone(&self) -> Self {
        let c = FlopCounter::new();
        c.merge(self);
        c
    }
}

/// Plain-data copy of a [`FlopCounter`], used in reports.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopSnapshot {
    pub by_phase: [u64; 6],
}

impl FlopSnapshot {
    pub fn get(&self, phase: Phase) -> u64 {
        self.by_phase[phase.index()]
    }

    pub fn total(&self) -> u64 {
        self.by_phase.iter().sum()
    }

    /// Flops accumulated between `earlier` and `self`.
    pub fn since(&self, earlier: &FlopSnapshot) -> FlopSnapshot {
        let mut out = FlopSnapshot::default();
        for i in 0..6 {
            out.by_phase[i] = self.by_phase[i] - earlier.by_phase[i];
        }
        out
    }

    pub fn plus(&self, other: &FlopSnapshot) -> FlopSnapshot {
        let mut out = *self;
        for i in 0..6 {
            out.by_phase[i] += other.by_phase[i];
        }
        out
    }

    pub fn to_map(&self) -> std::collections::BTreeMap<String, u64> {
        Phase::ALL
            .iter()
            .map(|&p| (p.name().to_string(), self.get(p)))
            .collect()
    }
}
