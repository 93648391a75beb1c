//! Top-k scoring of localization results and cross-method overlap.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vote::SuspiciousnessRanking;

pub const DEFAULT_KS: [usize; 4] = [1, 3, 5, 10];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("{program_id}: no ground truth")]
    NoGroundTruth { program_id: String },
    #[error("k must be at least 1")]
    InvalidK,
    #[error("no records to evaluate")]
    NoRecords,
    #[error("overlap needs at least two methods, got {0}")]
    TooFewMethods(usize),
    #[error("{program_id}: truth line {line} outside 1..={n}")]
    TruthOutOfRange { program_id: String, line: usize, n: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub program_id: String,
    pub ranking: SuspiciousnessRanking,
    /// Global line numbers.
    pub truth: BTreeSet<usize>,
}

impl EvalRecord {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.truth.is_empty() {
            return Err(EvalError::NoGroundTruth {
                program_id: self.program_id.clone(),
            });
        }
        if let Some(&line) = self.truth.iter().find(|&&l| l == 0 || l > self.ranking.n) {
            return Err(EvalError::TruthOutOfRange {
                program_id: self.program_id.clone(),
                line,
                n: self.ranking.n,
            });
        }
        Ok(())
    }

    /// 1-based rank of the best-placed truth line.
    pub fn first_hit(&self) -> Option<usize> {
        self.ranking
            .order
            .iter()
            .position(|l| self.truth.contains(l))
            .map(|p| p + 1)
    }
}

/// Whether any truth line is among the first `min(k, n)` ranked lines.
pub fn topk_hit(r: &EvalRecord, k: usize) -> Result<bool, EvalError> {
    if k == 0 {
        return Err(EvalError::InvalidK);
    }
    if r.truth.is_empty() {
        return Err(EvalError::NoGroundTruth {
            program_id: r.program_id.clone(),
        });
    }
    let k = k.min(r.ranking.order.len());
    Ok(r.ranking.order[..k].iter().any(|l| r.truth.contains(l)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopKTable {
    pub ks: Vec<usize>,
    pub total: usize,
    pub counts: BTreeMap<usize, usize>,
    pub accuracy: BTreeMap<usize, f64>,
}

impl TopKTable {
    /// One header row and one value row, e.g. `941 (62.7%)` per cell.
    pub fn to_text(&self, label: &str) -> String {
        let ks: BTreeSet<usize> = self.ks.iter().copied().collect();
        let mut cells = vec![("Method".to_string(), label.to_string())];
        for k in ks {
            let c = self.counts[&k];
            let a = self.accuracy[&k];
            cells.push((format!("Top-{k}"), format!("{c} ({:.1}%)", a * 100.0)));
        }
        let widths: Vec<usize> = cells.iter().map(|(h, v)| h.len().max(v.chars().count())).collect();
        let mut out = String::new();
        for row in 0..2 {
            let line: Vec<String> = cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, ((h, v), w))| {
                    let s = if row == 0 { h } else { v };
                    if i == 0 {
                        format!("{s:<w$}")
                    } else {
                        format!("{s:>w$}")
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
        }
        out
    }
}

pub fn evaluate(records: &[EvalRecord], ks: &[usize]) -> Result<TopKTable, EvalError> {
    if records.is_empty() {
        return Err(EvalError::NoRecords);
    }
    let mut counts = BTreeMap::new();
    for &k in ks {
        let mut c = 0;
        for r in records {
            if topk_hit(r, k)? {
                c += 1;
            }
        }
        counts.insert(k, c);
    }
    let total = records.len();
    let accuracy = counts.iter().map(|(&k, &c)| (k, c as f64 / total as f64)).collect();
    Ok(TopKTable {
        ks: ks.to_vec(),
        total,
        counts,
        accuracy,
    })
}

/// Program ids localized within the top `k` for each record set.
pub fn hit_set(records: &[EvalRecord], k: usize) -> Result<BTreeSet<String>, EvalError> {
    let mut out = BTreeSet::new();
    for r in records {
        if topk_hit(r, k)? {
            out.insert(r.program_id.clone());
        }
    }
    Ok(out)
}

/// Venn cell sizes. Each region is keyed by the `&`-joined names of the
/// methods that hit the program, in sorted order; every non-empty subset of
/// methods gets a key, including empty cells.
pub fn overlap(results: &BTreeMap<String, BTreeSet<String>>) -> Result<BTreeMap<String, usize>, EvalError> {
    if results.len() < 2 {
        return Err(EvalError::TooFewMethods(results.len()));
    }
    let methods: Vec<&String> = results.keys().collect();
    let mut regions = BTreeMap::new();
    for mask in 1u64..(1 << methods.len()) {
        regions.insert(region_name(&methods, mask), 0);
    }
    let union: BTreeSet<&String> = results.values().flatten().collect();
    for id in union {
        let mask = methods
            .iter()
            .enumerate()
            .filter(|(_, m)| results[**m].contains(id))
            .fold(0u64, |acc, (i, _)| acc | (1 << i));
        *regions.get_mut(&region_name(&methods, mask)).expect("all regions present") += 1;
    }
    Ok(regions)
}

fn region_name(methods: &[&String], mask: u64) -> String {
    methods
        .iter()
        .enumerate()
        .filter(|(i, _)| mask & (1 << i) != 0)
        .map(|(_, m)| m.as_str())
        .collect::<Vec<_>>()
        .join("&")
}
