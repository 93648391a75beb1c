//! Weighted multi-model voting over annotations.
//!
//! Every annotation spreads one unit of weight evenly over the lines it flags
//! (`1/|A|` each); a line's suspiciousness is the sum of the weights it
//! received. Lines are ranked by descending score, ties by ascending line
//! number. Sums are kept as exact rationals so that equal scores reached
//! through different additions still tie.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotate::Annotation;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VoteError {
    #[error("line {line} outside 1..={n}")]
    LineOutOfRange { line: usize, n: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteMode {
    #[default]
    #[serde(alias = "WEIGHTED")]
    Weighted,
    /// Every flagged line gets weight 1 regardless of annotation size.
    #[serde(alias = "UNWEIGHTED")]
    Unweighted,
}

/// A score usable by [`rank`].
pub trait RankScore {
    fn zero() -> Self;
    fn compare(&self, other: &Self) -> Ordering;
}

impl RankScore for f64 {
    fn zero() -> Self {
        0.0
    }
    fn compare(&self, other: &Self) -> Ordering {
        self.total_cmp(other)
    }
}

impl RankScore for BigRational {
    fn zero() -> Self {
        Zero::zero()
    }
    fn compare(&self, other: &Self) -> Ordering {
        self.cmp(other)
    }
}

fn exact_weight(a: &Annotation, mode: VoteMode) -> BigRational {
    match mode {
        VoteMode::Weighted => BigRational::new(BigInt::from(1), BigInt::from(a.flagged.len())),
        VoteMode::Unweighted => BigRational::from_integer(BigInt::from(1)),
    }
}

/// Per-line weight of one annotation; unflagged lines are absent (weight 0).
pub fn weights(a: &Annotation) -> BTreeMap<usize, f64> {
    if a.flagged.is_empty() {
        return BTreeMap::new();
    }
    let w = 1.0 / a.flagged.len() as f64;
    a.flagged.iter().map(|&l| (l, w)).collect()
}

/// Exact per-line sums of annotation weights.
pub fn aggregate_exact(annotations: &[Annotation], mode: VoteMode) -> BTreeMap<usize, BigRational> {
    let mut scores: BTreeMap<usize, BigRational> = BTreeMap::new();
    for a in annotations.iter().filter(|a| !a.flagged.is_empty()) {
        let w = exact_weight(a, mode);
        for &line in &a.flagged {
            *scores.entry(line).or_insert_with(Zero::zero) += &w;
        }
    }
    scores
}

pub fn aggregate(annotations: &[Annotation], mode: VoteMode) -> BTreeMap<usize, f64> {
    to_f64_scores(&aggregate_exact(annotations, mode))
}

fn to_f64_scores(exact: &BTreeMap<usize, BigRational>) -> BTreeMap<usize, f64> {
    exact
        .iter()
        .map(|(&l, s)| (l, s.to_f64().unwrap_or(f64::NAN)))
        .collect()
}

/// Permutation of `1..=n`: descending score, then ascending line number.
/// Lines without a score count as zero.
pub fn rank<S: RankScore>(scores: &BTreeMap<usize, S>, n: usize) -> Result<Vec<usize>, VoteError> {
    if let Some(&line) = scores.keys().find(|&&l| l == 0 || l > n) {
        return Err(VoteError::LineOutOfRange { line, n });
    }
    let zero = S::zero();
    let mut order: Vec<usize> = (1..=n).collect();
    order.sort_by(|&a, &b| {
        let sa = scores.get(&a).unwrap_or(&zero);
        let sb = scores.get(&b).unwrap_or(&zero);
        sb.compare(sa).then(a.cmp(&b))
    });
    Ok(order)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Explanation {
    pub text: String,
    pub model: String,
    pub round: u32,
}

fn model_position(model_order: &[String], model: &str) -> usize {
    model_order
        .iter()
        .position(|m| m == model)
        .unwrap_or(model_order.len())
}

/// For each line with a positive score, keeps the explanation from the
/// annotation that gave the line the highest weight. Ties fall to the
/// earlier model in `model_order`, then the earlier round. Empty
/// explanations do not count.
pub fn select_explanations(
    annotations: &[Annotation],
    scores: &BTreeMap<usize, f64>,
    mode: VoteMode,
    model_order: &[String],
) -> BTreeMap<usize, Explanation> {
    let mut out = BTreeMap::new();
    for (&line, &score) in scores {
        if score <= 0.0 {
            continue;
        }
        let best = annotations
            .iter()
            .filter(|a| a.flagged.contains(&line))
            .filter_map(|a| {
                let text = a.explanations.get(&line)?;
                (!text.trim().is_empty()).then_some((a, text))
            })
            .min_by(|(a, _), (b, _)| {
                // Higher weight first: in weighted mode, fewer flagged lines.
                let by_weight = match mode {
                    VoteMode::Weighted => a.flagged.len().cmp(&b.flagged.len()),
                    VoteMode::Unweighted => Ordering::Equal,
                };
                by_weight
                    .then_with(|| {
                        model_position(model_order, &a.model).cmp(&model_position(model_order, &b.model))
                    })
                    .then_with(|| a.model.cmp(&b.model))
                    .then_with(|| a.round.cmp(&b.round))
            });
        if let Some((a, text)) = best {
            out.insert(
                line,
                Explanation {
                    text: text.clone(),
                    model: a.model.clone(),
                    round: a.round,
                },
            );
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuspiciousnessRanking {
    pub n: usize,
    /// Positive scores only; absent lines score 0.
    pub scores: BTreeMap<usize, f64>,
    pub order: Vec<usize>,
    pub explanations: BTreeMap<usize, Explanation>,
}

impl SuspiciousnessRanking {
    pub fn score(&self, line: usize) -> f64 {
        self.scores.get(&line).copied().unwrap_or(0.0)
    }

    /// Ranked lines with a positive score.
    pub fn suspicious_lines(&self) -> impl Iterator<Item = usize> + '_ {
        self.order.iter().copied().filter(|l| self.score(*l) > 0.0)
    }

    /// 1-based position of `line` in the order.
    pub fn position(&self, line: usize) -> Option<usize> {
        self.order.iter().position(|&l| l == line).map(|p| p + 1)
    }
}

pub fn run_vote(
    annotations: &[Annotation],
    n: usize,
    mode: VoteMode,
    model_order: &[String],
) -> Result<SuspiciousnessRanking, VoteError> {
    let exact = aggregate_exact(annotations, mode);
    let order = rank(&exact, n)?;
    let scores: BTreeMap<usize, f64> = to_f64_scores(&exact)
        .into_iter()
        .filter(|(_, s)| *s > 0.0)
        .collect();
    let explanations = select_explanations(annotations, &scores, mode, model_order);
    Ok(SuspiciousnessRanking {
        n,
        scores,
        order,
        explanations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn ann(model: &str, round: u32, lines: &[usize]) -> Annotation {
        let mut a = Annotation::empty(model, round);
        for &l in lines {
            a.flag(l, Some(format!("{model}/{round}: line {l}")));
        }
        a
    }

    #[test]
    fn weights_examples() {
        assert_eq!(weights(&ann("m", 1, &[3, 7])), BTreeMap::from([(3, 0.5), (7, 0.5)]));
        assert_eq!(weights(&ann("m", 1, &[5])), BTreeMap::from([(5, 1.0)]));
        assert!(weights(&ann("m", 1, &[])).is_empty());
    }

    #[test]
    fn aggregate_examples() {
        let a1 = ann("m1", 1, &[3, 7]);
        let a2 = ann("m2", 1, &[7]);
        assert_eq!(
            aggregate(&[a1, a2], VoteMode::Weighted),
            BTreeMap::from([(3, 0.5), (7, 1.5)])
        );
        let six: Vec<_> = (0..6).map(|i| ann("m", i, &[1])).collect();
        assert_eq!(aggregate(&six, VoteMode::Weighted), BTreeMap::from([(1, 6.0)]));
        assert!(aggregate(&[], VoteMode::Weighted).is_empty());
    }

    #[test]
    fn unweighted_counts_votes() {
        let a1 = ann("m1", 1, &[3, 7]);
        let a2 = ann("m2", 1, &[7]);
        assert_eq!(
            aggregate(&[a1, a2], VoteMode::Unweighted),
            BTreeMap::from([(3, 1.0), (7, 2.0)])
        );
    }

    #[test]
    fn rank_examples() {
        let s = BTreeMap::from([(3, 0.5), (7, 1.5)]);
        assert_eq!(rank(&s, 8).unwrap(), vec![7, 3, 1, 2, 4, 5, 6, 8]);
        assert_eq!(rank(&BTreeMap::<usize, f64>::new(), 4).unwrap(), vec![1, 2, 3, 4]);
        let tie = BTreeMap::from([(2, 1.0), (9, 1.0)]);
        let order = rank(&tie, 10).unwrap();
        assert_eq!(&order[..2], &[2, 9]);
        assert_eq!(
            rank(&BTreeMap::from([(11, 1.0)]), 10),
            Err(VoteError::LineOutOfRange { line: 11, n: 10 })
        );
    }

    #[test]
    fn exact_sums_tie() {
        // 1/3 + 1/6 and 1/2 are equal but differ in floating point order of
        // operations; they must tie and fall back to line order.
        let anns = vec![
            ann("a", 1, &[5, 1, 2]),
            ann("b", 1, &[5, 3, 4, 6, 7, 8]),
            ann("c", 1, &[4, 9]),
        ];
        let r = run_vote(&anns, 9, VoteMode::Weighted, &[]).unwrap();
        // line 4: 1/6 + 1/2 = 2/3, line 5: 1/3 + 1/6 = 1/2, line 9: 1/2
        assert_eq!(&r.order[..3], &[4, 5, 9]);
    }

    #[test]
    fn explanation_from_highest_weight() {
        let a1 = ann("m1", 1, &[3, 7]);
        let a2 = ann("m2", 1, &[7]);
        let scores = aggregate(&[a1.clone(), a2.clone()], VoteMode::Weighted);
        let ex = select_explanations(&[a1, a2], &scores, VoteMode::Weighted, &[]);
        assert_eq!(ex[&7].model, "m2");
        assert_eq!(ex[&3].model, "m1");
    }

    #[test]
    fn explanation_ties_follow_model_order_then_round() {
        let order = vec!["M1".to_string(), "M2".to_string()];
        let anns = vec![ann("M2", 1, &[4]), ann("M1", 2, &[4]), ann("M1", 1, &[4])];
        let scores = aggregate(&anns, VoteMode::Weighted);
        let ex = select_explanations(&anns, &scores, VoteMode::Weighted, &order);
        assert_eq!((ex[&4].model.as_str(), ex[&4].round), ("M1", 1));
    }

    #[test]
    fn line_number_annotations_give_no_explanation() {
        let mut a = Annotation::empty("m", 1);
        a.flag(2, None);
        let r = run_vote(&[a], 3, VoteMode::Weighted, &[]).unwrap();
        assert_eq!(r.score(2), 1.0);
        assert!(r.explanations.is_empty());
    }

    #[test]
    fn run_vote_composes() {
        let a1 = ann("m1", 1, &[3, 7]);
        let a2 = ann("m2", 1, &[7]);
        let r = run_vote(&[a1, a2], 8, VoteMode::Weighted, &[]).unwrap();
        assert_eq!(r.order, vec![7, 3, 1, 2, 4, 5, 6, 8]);
        assert_eq!(r.scores, BTreeMap::from([(3, 0.5), (7, 1.5)]));
        assert_eq!(r.explanations[&7].model, "m2");
        assert_eq!(r.suspicious_lines().collect::<Vec<_>>(), vec![7, 3]);

        let none = run_vote(&[], 4, VoteMode::Weighted, &[]).unwrap();
        assert_eq!(none.order, vec![1, 2, 3, 4]);
        assert!(none.scores.is_empty());
        let empties = run_vote(&[ann("m", 1, &[]), ann("m", 2, &[])], 3, VoteMode::Weighted, &[]).unwrap();
        assert_eq!(empties.order, vec![1, 2, 3]);
    }

    fn arb_annotations() -> impl Strategy<Value = (usize, Vec<BTreeSet<usize>>)> {
        (1usize..60).prop_flat_map(|n| {
            (
                Just(n),
                prop::collection::vec(prop::collection::btree_set(1..=n, 0..10), 0..7),
            )
        })
    }

    proptest! {
        #[test]
        fn rank_is_a_permutation((n, sets) in arb_annotations()) {
            let anns: Vec<_> = sets.iter().enumerate().map(|(i, s)| {
                ann("m", i as u32, &s.iter().copied().collect::<Vec<_>>())
            }).collect();
            let r = run_vote(&anns, n, VoteMode::Weighted, &[]).unwrap();
            let mut sorted = r.order.clone();
            sorted.sort();
            prop_assert_eq!(sorted, (1..=n).collect::<Vec<_>>());
        }

        #[test]
        fn aggregate_ignores_annotation_order((n, sets) in arb_annotations(), seed in any::<u64>()) {
            let anns: Vec<_> = sets.iter().enumerate().map(|(i, s)| {
                ann("m", i as u32, &s.iter().copied().collect::<Vec<_>>())
            }).collect();
            let mut shuffled = anns.clone();
            let len = shuffled.len();
            if len > 1 {
                shuffled.rotate_left((seed as usize) % len);
                shuffled.reverse();
            }
            prop_assert_eq!(
                aggregate_exact(&anns, VoteMode::Weighted),
                aggregate_exact(&shuffled, VoteMode::Weighted)
            );
            prop_assert_eq!(
                run_vote(&anns, n, VoteMode::Weighted, &[]).unwrap().order,
                run_vote(&shuffled, n, VoteMode::Weighted, &[]).unwrap().order
            );
        }

        #[test]
        fn rank_is_scale_invariant(
            raw in prop::collection::btree_map(1usize..40, 0u32..20, 0..40),
            exp in -10i32..10,
        ) {
            let scores: BTreeMap<usize, f64> = raw.iter().map(|(&l, &s)| (l, s as f64 / 4.0)).collect();
            let c = 2f64.powi(exp);
            let scaled: BTreeMap<usize, f64> = scores.iter().map(|(&l, &s)| (l, s * c)).collect();
            prop_assert_eq!(rank(&scores, 40).unwrap(), rank(&scaled, 40).unwrap());
        }
    }
}
