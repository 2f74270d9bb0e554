//! Shapley values of activation maps: exact subset enumeration for small
//! channel counts, and the Monte-Carlo ordering estimator (SHAP-CAM).
//!
//! A coalition is a bitset over channels; channel `k` present means `A_k`
//! is kept, absent means it is replaced by zeros.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attribution::{CoefficientVector, Method};
use crate::error::{Error, Result};
use crate::network::{mask_apply_bits, ActivationStack, ModelGraph};

/// Largest channel count exact enumeration accepts (`2^20` head forwards).
pub const EXACT_CHANNEL_CAP: usize = 20;

/// A cooperative game over at most 64 players.
pub trait CoalitionGame {
    fn players(&self) -> usize;
    fn value(&self, coalition: u64) -> Result<f64>;
}

/// Target logit of the head with absent channels zeroed.
pub struct HeadGame<'a> {
    model: &'a ModelGraph,
    stack: &'a ActivationStack,
    class: usize,
}

impl<'a> HeadGame<'a> {
    pub fn new(model: &'a ModelGraph, stack: &'a ActivationStack, class: usize) -> Result<Self> {
        model.check_class(class)?;
        if stack.channels() > 64 {
            return Err(Error::Invalid(format!(
                "coalitions cover at most 64 channels, got {}",
                stack.channels()
            )));
        }
        Ok(HeadGame {
            model,
            stack,
            class,
        })
    }
}

impl CoalitionGame for HeadGame<'_> {
    fn players(&self) -> usize {
        self.stack.channels()
    }

    fn value(&self, coalition: u64) -> Result<f64> {
        self.model
            .forward_head(&mask_apply_bits(self.stack, coalition), self.class)
    }
}

/// Game given by a closure, for constructed examples.
pub struct FnGame<F> {
    players: usize,
    f: F,
}

impl<F: Fn(u64) -> f64> FnGame<F> {
    pub fn new(players: usize, f: F) -> Self {
        FnGame { players, f }
    }
}

impl<F: Fn(u64) -> f64> CoalitionGame for FnGame<F> {
    fn players(&self) -> usize {
        self.players
    }

    fn value(&self, coalition: u64) -> Result<f64> {
        Ok((self.f)(coalition))
    }
}

/// `(n - s)! (s - 1)! / n!` for a coalition of size `s ≥ 1` containing the
/// player, written as `1 / (n · C(n-1, s-1))`.
fn coalition_weight(n: usize, s: usize) -> f64 {
    let mut binom = 1.0f64;
    let k = (s - 1).min(n - s);
    for i in 0..k {
        binom = binom * (n - 1 - i) as f64 / (i + 1) as f64;
    }
    1.0 / (n as f64 * binom)
}

/// Exact Shapley values by enumerating every coalition once.
pub fn exact_shapley_values<G: CoalitionGame + ?Sized>(game: &G) -> Result<Vec<f64>> {
    let n = game.players();
    if n > EXACT_CHANNEL_CAP {
        return Err(Error::OracleCap {
            players: n,
            cap: EXACT_CHANNEL_CAP,
            evaluations: 1u128 << n,
        });
    }
    let subsets = 1usize << n;
    let values = (0..subsets as u64)
        .map(|s| game.value(s))
        .collect::<Result<Vec<f64>>>()?;
    let weights: Vec<f64> = (0..=n)
        .map(|s| if s == 0 { 0.0 } else { coalition_weight(n, s) })
        .collect();
    let mut phi = vec![0.0f64; n];
    for (k, slot) in phi.iter_mut().enumerate() {
        let bit = 1usize << k;
        *slot = (0..subsets)
            .filter(|s| s & bit != 0)
            .map(|s| weights[s.count_ones() as usize] * (values[s] - values[s ^ bit]))
            .sum();
    }
    Ok(phi)
}

/// Exact Shapley values of the activation maps for the target logit.
pub fn exact_shapley(model: &ModelGraph, a: &ActivationStack, class: usize) -> Result<CoefficientVector> {
    let game = HeadGame::new(model, a, class)?;
    CoefficientVector::new(Method::ExactShapley, exact_shapley_values(&game)?)
}

/// Permutations of `0..n` used by the Monte-Carlo estimator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrderingSet {
    players: usize,
    orderings: Vec<Vec<usize>>,
    seed: Option<u64>,
}

fn factorial(n: usize) -> Option<u128> {
    (1..=n as u128).try_fold(1u128, |acc, k| acc.checked_mul(k))
}

impl OrderingSet {
    pub fn new(players: usize, orderings: Vec<Vec<usize>>) -> Result<Self> {
        if orderings.is_empty() {
            return Err(Error::EmptyOrderings);
        }
        for (i, o) in orderings.iter().enumerate() {
            let mut seen = vec![false; players];
            let valid = o.len() == players
                && o.iter()
                    .all(|&p| p < players && !std::mem::replace(&mut seen[p], true));
            if !valid {
                return Err(Error::InvalidOrdering(format!(
                    "ordering {i} is not a permutation of 0..{players}: {o:?}"
                )));
            }
        }
        Ok(OrderingSet {
            players,
            orderings,
            seed: None,
        })
    }

    /// `count` orderings drawn from a ChaCha8 stream seeded with `seed`.
    ///
    /// Up to half of all `n!` orderings are drawn without replacement;
    /// beyond that, with replacement.
    pub fn sample(players: usize, count: usize, seed: u64) -> Result<Self> {
        if count == 0 {
            return Err(Error::EmptyOrderings);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let distinct = factorial(players).is_none_or(|total| (count as u128) <= total / 2);
        let mut seen = HashSet::new();
        let mut orderings = Vec::with_capacity(count);
        let mut base: Vec<usize> = (0..players).collect();
        while orderings.len() < count {
            base.shuffle(&mut rng);
            if distinct && !seen.insert(base.clone()) {
                continue;
            }
            orderings.push(base.clone());
        }
        Ok(OrderingSet {
            players,
            orderings,
            seed: Some(seed),
        })
    }

    /// Every ordering of `0..n`, lexicographically. Capped at 10 players.
    pub fn all(players: usize) -> Result<Self> {
        if players > 10 {
            return Err(Error::Invalid(format!(
                "refusing to enumerate {players}! orderings"
            )));
        }
        let mut out = Vec::new();
        let mut current: Vec<usize> = (0..players).collect();
        loop {
            out.push(current.clone());
            // Next lexicographic permutation.
            let Some(i) = (1..current.len()).rev().find(|&i| current[i - 1] < current[i]) else {
                break;
            };
            let j = (i..current.len()).rev().find(|&j| current[j] > current[i - 1]).unwrap();
            current.swap(i - 1, j);
            current[i..].reverse();
        }
        OrderingSet::new(players, out)
    }

    pub fn len(&self) -> usize {
        self.orderings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.orderings.is_empty()
    }

    pub fn players(&self) -> usize {
        self.players
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn orderings(&self) -> &[Vec<usize>] {
        &self.orderings
    }
}

/// Monte-Carlo Shapley estimate: average marginal contribution of each
/// player when it joins the coalition along each ordering. Coalition values
/// are memoized, so repeated prefixes cost one evaluation.
pub fn shap_cam_values<G: CoalitionGame + ?Sized>(game: &G, orderings: &OrderingSet) -> Result<Vec<f64>> {
    let n = game.players();
    if orderings.is_empty() {
        return Err(Error::EmptyOrderings);
    }
    if orderings.players() != n {
        return Err(Error::InvalidOrdering(format!(
            "orderings over {} players for a game with {n}",
            orderings.players()
        )));
    }
    let mut memo: HashMap<u64, f64> = HashMap::new();
    let mut value = |s: u64| -> Result<f64> {
        if let Some(&v) = memo.get(&s) {
            return Ok(v);
        }
        let v = game.value(s)?;
        memo.insert(s, v);
        Ok(v)
    };
    let mut alpha = vec![0.0f64; n];
    for ordering in orderings.orderings() {
        let mut coalition = 0u64;
        let mut previous = value(coalition)?;
        for &p in ordering {
            coalition |= 1u64 << p;
            let current = value(coalition)?;
            alpha[p] += current - previous;
            previous = current;
        }
    }
    let count = orderings.len() as f64;
    alpha.iter_mut().for_each(|v| *v /= count);
    Ok(alpha)
}

/// SHAP-CAM coefficients from the given orderings.
pub fn shap_cam(
    model: &ModelGraph,
    a: &ActivationStack,
    class: usize,
    orderings: &OrderingSet,
) -> Result<CoefficientVector> {
    let game = HeadGame::new(model, a, class)?;
    CoefficientVector::new(Method::ShapCam, shap_cam_values(&game, orderings)?)
}
