//! Convergence benchmark for the attribution estimators: per coalition size
//! it compares the cyclic scan and plain permutation sampling against the
//! exact subset computation at matched marginal-evaluation budgets.

use std::time::Instant;

use rayon::prelude::*;

use super::{bad_config, EstimatorRow, HarnessError, PhaseRecord, RunReport};
use crate::game::{GameConfig, ShapleyReport};
use crate::rng::{derive_seed, SplitMix64};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    /// Coalition sizes to benchmark, each in 1..=8.
    pub k_values: Vec<usize>,
    pub tau: f64,
    /// Number of estimator seeds averaged per coalition size.
    pub seeds: u64,
    /// Initial scan stride; defaults to max(1, k / 2) per size.
    pub stride: Option<usize>,
    pub seed: u64,
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.k_values.is_empty() {
            return Err(bad_config("k_values", "non-empty list", 0));
        }
        for &k in &self.k_values {
            if !(1..=8).contains(&k) {
                return Err(bad_config("k_values", "each size in 1..=8", k));
            }
        }
        if self.seeds == 0 {
            return Err(bad_config("seeds", "seeds >= 1", self.seeds));
        }
        Ok(())
    }
}

fn error_stats(reports: &[ShapleyReport], exact: &[f64]) -> (f64, f64) {
    let mut sum = 0.0;
    let mut max: f64 = 0.0;
    let mut count = 0usize;
    for r in reports {
        for (v, e) in r.values.iter().zip(exact) {
            let err = (v - e).abs();
            sum += err;
            max = max.max(err);
            count += 1;
        }
    }
    (sum / count as f64, max)
}

/// One similarity profile per coalition size, three estimator rows per size
/// in the order exact_subset, cyclic, naive_mc. Both samplers get the same
/// budget of marginal evaluations; accuracy columns are averaged over
/// `seeds` independent runs.
pub fn bench_convergence(cfg: &BenchConfig) -> Result<RunReport, HarnessError> {
    cfg.validate()?;
    let mut estimator = Vec::with_capacity(cfg.k_values.len() * 3);
    let mut phases = Vec::with_capacity(cfg.k_values.len());
    for &k in &cfg.k_values {
        let t_k = Instant::now();
        let ku = k as u64;
        let mut sims_rng = SplitMix64::new(derive_seed(cfg.seed, &[ku, 0]));
        let sims: Vec<f64> = (0..k).map(|_| sims_rng.next_symmetric()).collect();
        let game = GameConfig::new(sims, cfg.tau)?;
        let stride = cfg.stride.unwrap_or_else(|| (k / 2).max(1));

        let t0 = Instant::now();
        let exact = game.shapley_exact_subsets()?;
        let exact_seconds = t0.elapsed().as_secs_f64();

        let t1 = Instant::now();
        let cyclic: Vec<ShapleyReport> = (0..cfg.seeds)
            .into_par_iter()
            .map(|s| game.shapley_cyclic(stride, derive_seed(cfg.seed, &[ku, 1, s])))
            .collect::<Result<_, _>>()?;
        let cyclic_seconds = t1.elapsed().as_secs_f64();
        let passes = cyclic[0].passes;
        let budget = passes * ku;

        let t2 = Instant::now();
        let naive: Vec<ShapleyReport> = (0..cfg.seeds)
            .into_par_iter()
            .map(|s| game.shapley_naive_mc(passes, derive_seed(cfg.seed, &[ku, 2, s])))
            .collect::<Result<_, _>>()?;
        let naive_seconds = t2.elapsed().as_secs_f64();

        estimator.push(EstimatorRow {
            k,
            method: exact.method.to_string(),
            budget: 1u64 << k,
            mean_abs_err: 0.0,
            max_abs_err: 0.0,
            seconds: exact_seconds,
        });
        let (mean, max) = error_stats(&cyclic, &exact.values);
        estimator.push(EstimatorRow {
            k,
            method: cyclic[0].method.to_string(),
            budget,
            mean_abs_err: mean,
            max_abs_err: max,
            seconds: cyclic_seconds,
        });
        let (mean, max) = error_stats(&naive, &exact.values);
        estimator.push(EstimatorRow {
            k,
            method: naive[0].method.to_string(),
            budget,
            mean_abs_err: mean,
            max_abs_err: max,
            seconds: naive_seconds,
        });
        phases.push(PhaseRecord {
            phase: format!("k={k}"),
            seconds: t_k.elapsed().as_secs_f64(),
        });
    }
    let report = RunReport {
        steps: vec![],
        estimator,
        cells: vec![],
        phases,
    };
    report.validate()?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(k_values: Vec<usize>) -> BenchConfig {
        BenchConfig {
            k_values,
            tau: 0.5,
            seeds: 4,
            stride: None,
            seed: 2024,
        }
    }

    #[test]
    fn rows_come_in_method_triples_per_size() {
        let report = bench_convergence(&cfg(vec![2, 4, 6])).unwrap();
        assert_eq!(report.estimator.len(), 9);
        for (i, row) in report.estimator.iter().enumerate() {
            assert_eq!(row.k, [2, 4, 6][i / 3]);
            assert_eq!(row.method, ["exact_subset", "cyclic", "naive_mc"][i % 3]);
        }
        assert_eq!(report.phases.len(), 3);
        assert_eq!(report.phases[1].phase, "k=4");
    }

    #[test]
    fn exact_rows_have_zero_error_and_subset_budget() {
        let report = bench_convergence(&cfg(vec![3, 5])).unwrap();
        for row in report.estimator.iter().filter(|r| r.method == "exact_subset") {
            assert_eq!(row.mean_abs_err, 0.0);
            assert_eq!(row.max_abs_err, 0.0);
            assert_eq!(row.budget, 1 << row.k);
        }
    }

    #[test]
    fn samplers_share_one_marginal_budget() {
        let report = bench_convergence(&cfg(vec![4, 8])).unwrap();
        for rows in report.estimator.chunks(3) {
            let (cyclic, naive) = (&rows[1], &rows[2]);
            assert_eq!(cyclic.budget, naive.budget);
            // stride max(1, k/2) halves to 1, so floor(log2(k/2)) + 1 passes
            let k = cyclic.k as u64;
            let expected_passes = (k / 2).ilog2() as u64 + 1;
            assert_eq!(cyclic.budget, expected_passes * k);
        }
    }

    #[test]
    fn single_player_is_recovered_exactly_by_everyone() {
        let report = bench_convergence(&cfg(vec![1])).unwrap();
        for row in &report.estimator {
            assert_eq!(row.mean_abs_err, 0.0, "{}", row.method);
            assert_eq!(row.max_abs_err, 0.0);
        }
    }

    #[test]
    fn repeated_runs_agree_after_zeroing_wall_clock() {
        let c = cfg(vec![2, 3, 7]);
        let mut a = bench_convergence(&c).unwrap();
        let mut b = bench_convergence(&c).unwrap();
        a.zero_timings();
        b.zero_timings();
        assert_eq!(a, b);
    }

    #[test]
    fn accuracy_columns_match_direct_estimator_calls() {
        let c = BenchConfig {
            seeds: 1,
            stride: Some(1),
            ..cfg(vec![2])
        };
        let report = bench_convergence(&c).unwrap();
        let mut rng = SplitMix64::new(derive_seed(c.seed, &[2, 0]));
        let sims: Vec<f64> = (0..2).map(|_| rng.next_symmetric()).collect();
        let game = GameConfig::new(sims, c.tau).unwrap();
        let exact = game.shapley_exact_subsets().unwrap();
        let cyclic = game.shapley_cyclic(1, derive_seed(c.seed, &[2, 1, 0])).unwrap();
        let expected: Vec<f64> = cyclic
            .values
            .iter()
            .zip(&exact.values)
            .map(|(v, e)| (v - e).abs())
            .collect();
        let row = &report.estimator[1];
        assert_eq!(row.mean_abs_err, (expected[0] + expected[1]) / 2.0);
        assert_eq!(row.max_abs_err, expected[0].max(expected[1]));
        assert_eq!(row.budget, 2);
    }

    #[test]
    fn config_validation_rejects_bad_sizes_and_seed_counts() {
        assert!(bench_convergence(&cfg(vec![])).is_err());
        assert!(bench_convergence(&cfg(vec![0])).is_err());
        assert!(bench_convergence(&cfg(vec![9])).is_err());
        let mut c = cfg(vec![2]);
        c.seeds = 0;
        assert!(bench_convergence(&c).is_err());
    }
}
