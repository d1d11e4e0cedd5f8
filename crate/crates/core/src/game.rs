//! Coalition games over similarity scores and their Shapley valuation.
//!
//! A game is a list of per-player similarity scores plus a temperature. The
//! worth of a coalition is the softmax-weighted mean of its members' scores,
//! so adding a strong player raises the coalition's worth and dilutes weak
//! ones. Players are indexed 0..k.
//!
//! Valuation methods:
//! * exact enumeration over subsets (binomial weights) or permutations
//! * the cyclic estimator: one seeded random permutation, repeatedly scanned
//!   left to right for marginals, rotated left by a halving stride between
//!   scans; estimates are the arithmetic mean over scans
//! * naive Monte Carlo over independently drawn permutations, as a baseline
//!
//! Every scan telescopes to the grand-coalition worth, so all estimators are
//! exactly efficient no matter the seed or stride.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SplitMix64;
use crate::tensor::{dot, softmax_temp_into, Matrix};

/// Subset enumeration walks 2^k masks; past this it is a typed error.
pub const MAX_EXACT_SUBSET_PLAYERS: usize = 20;
/// Permutation enumeration walks k! orders; past this it is a typed error.
pub const MAX_EXACT_PERMUTATION_PLAYERS: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GameError {
    #[error("{method} supports at most {max} players, got {k}")]
    TooManyPlayers {
        method: &'static str,
        k: usize,
        max: usize,
    },
    #[error("initial stride must be at least 1")]
    NonPositiveStride,
    #[error("permutation sample count must be at least 1")]
    NoSamples,
    #[error("coalition member {index} is out of range for {k} players")]
    MemberOutOfRange { index: usize, k: usize },
    #[error("coalition lists member {index} more than once")]
    DuplicateMember { index: usize },
    #[error("similarity scores must be non-empty and finite")]
    BadSims,
    #[error("temperature must be strictly positive and finite, got {tau}")]
    NonPositiveTemperature { tau: f64 },
}

/// One player set. Order is preserved (scans build coalitions by prefix) but
/// worth only depends on membership. Duplicates are rejected at construction,
/// range is checked against a concrete game.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Coalition {
    members: Vec<usize>,
}

impl Coalition {
    pub fn new(members: Vec<usize>) -> Result<Self, GameError> {
        let mut seen = std::collections::HashSet::with_capacity(members.len());
        for &m in &members {
            if !seen.insert(m) {
                return Err(GameError::DuplicateMember { index: m });
            }
        }
        Ok(Self { members })
    }

    pub fn empty() -> Self {
        Self { members: vec![] }
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// A k-player game: per-player similarity scores, softmax temperature, and
/// the fixed worth of the empty coalition (zero).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameConfig {
    sims: Vec<f64>,
    tau: f64,
    empty_utility: f64,
}

impl GameConfig {
    pub fn new(sims: Vec<f64>, tau: f64) -> Result<Self, GameError> {
        if sims.is_empty() || !sims.iter().all(|s| s.is_finite()) {
            return Err(GameError::BadSims);
        }
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(GameError::NonPositiveTemperature { tau });
        }
        Ok(Self {
            sims,
            tau,
            empty_utility: 0.0,
        })
    }

    pub fn k(&self) -> usize {
        self.sims.len()
    }

    pub fn sims(&self) -> &[f64] {
        &self.sims
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn empty_utility(&self) -> f64 {
        self.empty_utility
    }

    fn check_members(&self, members: &[usize]) -> Result<(), GameError> {
        let mut seen = vec![false; self.k()];
        for &m in members {
            if m >= self.k() {
                return Err(GameError::MemberOutOfRange {
                    index: m,
                    k: self.k(),
                });
            }
            if seen[m] {
                return Err(GameError::DuplicateMember { index: m });
            }
            seen[m] = true;
        }
        Ok(())
    }

    /// Coalition worth: softmax (at `tau`) over the members' scores, dotted
    /// with those scores. The empty coalition is worth `empty_utility`.
    pub fn utility(&self, coalition: &Coalition) -> Result<f64, GameError> {
        self.check_members(coalition.members())?;
        Ok(self.utility_unchecked(coalition.members(), &mut Scratch::new(self.k())))
    }

    /// d utility / d sims as a dense k-vector (zero for non-members):
    /// for a member a, p_a * (1 + (sims[a] - u(S)) / tau).
    pub fn utility_grad(&self, coalition: &Coalition) -> Result<Vec<f64>, GameError> {
        self.check_members(coalition.members())?;
        let mut scratch = Scratch::new(self.k());
        let mut grad = vec![0.0; self.k()];
        self.utility_grad_unchecked(coalition.members(), &mut scratch, &mut grad);
        Ok(grad)
    }

    fn utility_unchecked(&self, members: &[usize], scratch: &mut Scratch) -> f64 {
        if members.is_empty() {
            return self.empty_utility;
        }
        scratch.vals.clear();
        scratch.vals.extend(members.iter().map(|&m| self.sims[m]));
        scratch.probs.clear();
        scratch.probs.resize(members.len(), 0.0);
        softmax_temp_into(&scratch.vals, self.tau, &mut scratch.probs)
            .expect("tau validated at construction");
        dot(&scratch.probs, &scratch.vals)
    }

    /// Worth plus its gradient; `grad` must be a zeroed k-vector.
    fn utility_grad_unchecked(
        &self,
        members: &[usize],
        scratch: &mut Scratch,
        grad: &mut [f64],
    ) -> f64 {
        let u = self.utility_unchecked(members, scratch);
        for (pos, &m) in members.iter().enumerate() {
            grad[m] = scratch.probs[pos] * (1.0 + (self.sims[m] - u) / self.tau);
        }
        u
    }

    fn utility_mask(&self, mask: usize, scratch: &mut Scratch) -> f64 {
        scratch.members.clear();
        let mut bits = mask;
        while bits != 0 {
            let i = bits.trailing_zeros() as usize;
            scratch.members.push(i);
            bits &= bits - 1;
        }
        let members = std::mem::take(&mut scratch.members);
        let u = self.utility_unchecked(&members, scratch);
        scratch.members = members;
        u
    }

    /// Exact Shapley values by subset enumeration with binomial weights.
    /// Cost O(k * 2^k); rejects k > [`MAX_EXACT_SUBSET_PLAYERS`].
    pub fn shapley_exact_subsets(&self) -> Result<ShapleyReport, GameError> {
        let k = self.k();
        if k > MAX_EXACT_SUBSET_PLAYERS {
            return Err(GameError::TooManyPlayers {
                method: "shapley_exact_subsets",
                k,
                max: MAX_EXACT_SUBSET_PLAYERS,
            });
        }
        let mut scratch = Scratch::new(k);
        let n = 1usize << k;
        let mut worth = vec![0.0f64; n];
        worth[0] = self.empty_utility;
        for mask in 1..n {
            worth[mask] = self.utility_mask(mask, &mut scratch);
        }
        // weight of a coalition of size s (not counting the entering player)
        let weights: Vec<f64> = (0..k)
            .map(|s| 1.0 / (k as f64 * binomial(k - 1, s)))
            .collect();
        let mut values = vec![0.0f64; k];
        for (i, value) in values.iter_mut().enumerate() {
            let bit = 1usize << i;
            for mask in 0..n {
                if mask & bit == 0 {
                    let s = mask.count_ones() as usize;
                    *value += weights[s] * (worth[mask | bit] - worth[mask]);
                }
            }
        }
        Ok(ShapleyReport {
            values,
            method: Method::ExactSubset,
            passes: 0,
            seed: 0,
            stride_trace: vec![],
        })
    }

    /// Exact Shapley values by full permutation enumeration: every ordering
    /// is scanned once and marginals are averaged. Rejects
    /// k > [`MAX_EXACT_PERMUTATION_PLAYERS`].
    pub fn shapley_exact_permutations(&self) -> Result<ShapleyReport, GameError> {
        use itertools::Itertools;
        let k = self.k();
        if k > MAX_EXACT_PERMUTATION_PLAYERS {
            return Err(GameError::TooManyPlayers {
                method: "shapley_exact_permutations",
                k,
                max: MAX_EXACT_PERMUTATION_PLAYERS,
            });
        }
        let mut scratch = Scratch::new(k);
        let mut sums = vec![0.0f64; k];
        let mut marginals = vec![0.0f64; k];
        let mut passes: u64 = 0;
        for perm in (0..k).permutations(k) {
            self.scan_into(&perm, &mut scratch, &mut marginals);
            for (acc, m) in sums.iter_mut().zip(&marginals) {
                *acc += m;
            }
            passes += 1;
        }
        let values = sums.iter().map(|s| s / passes as f64).collect();
        Ok(ShapleyReport {
            values,
            method: Method::ExactPermutation,
            passes,
            seed: 0,
            stride_trace: vec![],
        })
    }

    /// Cyclic estimator: draw one permutation from `seed`, then scan, rotate
    /// left by the stride, halve the stride, and repeat until the stride hits
    /// zero. Values are the mean marginal over all scans, so the pass count
    /// is floor(log2(initial_stride)) + 1.
    pub fn shapley_cyclic(&self, initial_stride: usize, seed: u64) -> Result<ShapleyReport, GameError> {
        self.cyclic_impl(initial_stride, seed, None)
    }

    /// Same schedule as [`Self::shapley_cyclic`] (bit-identical values), but
    /// also returns the k x k Jacobian J[i][a] = d value_i / d sims[a] of the
    /// estimates with the permutation schedule held fixed.
    pub fn shapley_cyclic_with_jacobian(
        &self,
        initial_stride: usize,
        seed: u64,
    ) -> Result<(ShapleyReport, Matrix), GameError> {
        let k = self.k();
        let mut jac = Matrix::zeros(k, k);
        let report = self.cyclic_impl(initial_stride, seed, Some(&mut jac))?;
        let passes = report.passes as f64;
        for x in jac.as_mut_slice() {
            *x /= passes;
        }
        Ok((report, jac))
    }

    fn cyclic_impl(
        &self,
        initial_stride: usize,
        seed: u64,
        mut jacobian: Option<&mut Matrix>,
    ) -> Result<ShapleyReport, GameError> {
        if initial_stride == 0 {
            return Err(GameError::NonPositiveStride);
        }
        let k = self.k();
        let mut rng = SplitMix64::new(seed);
        let mut perm = rng.permutation(k);
        let mut scratch = Scratch::new(k);
        let mut sums = vec![0.0f64; k];
        let mut grad_prev = vec![0.0f64; k];
        let mut grad_cur = vec![0.0f64; k];
        let mut stride_trace = Vec::new();
        let mut stride = initial_stride;
        while stride > 0 {
            match jacobian.as_deref_mut() {
                None => {
                    let mut marginals = vec![0.0f64; k];
                    self.scan_into(&perm, &mut scratch, &mut marginals);
                    for (acc, m) in sums.iter_mut().zip(&marginals) {
                        *acc += m;
                    }
                }
                Some(jac) => {
                    grad_prev.iter_mut().for_each(|g| *g = 0.0);
                    let mut prev = self.empty_utility;
                    scratch.members.clear();
                    for pos in 0..k {
                        scratch.members.push(perm[pos]);
                        grad_cur.iter_mut().for_each(|g| *g = 0.0);
                        let members = std::mem::take(&mut scratch.members);
                        let cur = self.utility_grad_unchecked(&members, &mut scratch, &mut grad_cur);
                        scratch.members = members;
                        sums[perm[pos]] += cur - prev;
                        let row = jac.row_mut(perm[pos]);
                        for a in 0..k {
                            row[a] += grad_cur[a] - grad_prev[a];
                        }
                        prev = cur;
                        std::mem::swap(&mut grad_prev, &mut grad_cur);
                    }
                }
            }
            stride_trace.push(stride);
            perm.rotate_left(stride % k);
            stride /= 2;
        }
        let passes = stride_trace.len() as u64;
        let values = sums.iter().map(|s| s / passes as f64).collect();
        Ok(ShapleyReport {
            values,
            method: Method::Cyclic,
            passes,
            seed,
            stride_trace,
        })
    }

    /// Plain Monte Carlo baseline: average marginals over `n_permutations`
    /// independently drawn random orderings.
    pub fn shapley_naive_mc(&self, n_permutations: u64, seed: u64) -> Result<ShapleyReport, GameError> {
        if n_permutations == 0 {
            return Err(GameError::NoSamples);
        }
        let k = self.k();
        let mut rng = SplitMix64::new(seed);
        let mut scratch = Scratch::new(k);
        let mut sums = vec![0.0f64; k];
        let mut marginals = vec![0.0f64; k];
        for _ in 0..n_permutations {
            let perm = rng.permutation(k);
            self.scan_into(&perm, &mut scratch, &mut marginals);
            for (acc, m) in sums.iter_mut().zip(&marginals) {
                *acc += m;
            }
        }
        let values = sums.iter().map(|s| s / n_permutations as f64).collect();
        Ok(ShapleyReport {
            values,
            method: Method::NaiveMc,
            passes: n_permutations,
            seed,
            stride_trace: vec![],
        })
    }

    /// One left-to-right scan: out[player] = u(prefix with player) - u(prefix).
    fn scan_into(&self, perm: &[usize], scratch: &mut Scratch, out: &mut [f64]) {
        let mut prev = self.empty_utility;
        scratch.members.clear();
        for &p in perm {
            scratch.members.push(p);
            let members = std::mem::take(&mut scratch.members);
            let cur = self.utility_unchecked(&members, scratch);
            scratch.members = members;
            out[p] = cur - prev;
            prev = cur;
        }
    }
}

struct Scratch {
    members: Vec<usize>,
    vals: Vec<f64>,
    probs: Vec<f64>,
}

impl Scratch {
    fn new(k: usize) -> Self {
        Self {
            members: Vec::with_capacity(k),
            vals: Vec::with_capacity(k),
            probs: Vec::with_capacity(k),
        }
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ExactSubset,
    ExactPermutation,
    Cyclic,
    NaiveMc,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Method::ExactSubset => "exact_subset",
            Method::ExactPermutation => "exact_permutation",
            Method::Cyclic => "cyclic",
            Method::NaiveMc => "naive_mc",
        };
        f.write_str(s)
    }
}

/// Valuation output: per-player values plus enough bookkeeping to reproduce
/// the run. `passes` counts full permutation scans (zero for subset
/// enumeration); `stride_trace` is the halving stride sequence of the cyclic
/// schedule, empty for every other method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyReport {
    pub values: Vec<f64>,
    pub method: Method,
    pub passes: u64,
    pub seed: u64,
    pub stride_trace: Vec<usize>,
}
