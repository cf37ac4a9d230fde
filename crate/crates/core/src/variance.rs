//! Monte Carlo estimates of the two variance components.
//!
//! * Sampling: `sigma^S_ii = (1/R) sum_r (theta_hat_ri - theta_i)^2` over
//!   `R` simulated samples, and `tr(W_S) = n * tr(Sigma_S)`.
//! * GA: for each fixed dataset, `(1/J) sum_j (theta*_(g)ji - theta_hat_i)^2`
//!   per generation over `J` independent runs, averaged pointwise over
//!   datasets. The centre is the per-dataset reference optimum on the GA
//!   grid, not the run mean.
//!
//! All random streams derive from a master seed and the replication,
//! dataset and run indices, and reductions run in index order, so results
//! do not depend on the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ga::{run_ga, GaConfig, GaTrace, InitPolicy};
use crate::problems::{Bound, Problem};
use crate::seed::{self, Stream};

/// Fraction of dropped replications above which a report is flagged.
pub const MAX_DROP_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingVarianceReport {
    pub n: usize,
    pub replications: usize,
    pub dropped: usize,
    pub unconverged: usize,
    /// Mean squared deviation from the true value, per parameter.
    pub per_param: Vec<f64>,
    pub trace_sigma: f64,
    /// `n * tr(Sigma_S)`.
    pub trace_ws: f64,
    pub flagged: bool,
}

/// Mean squared deviations of per-replication estimates around `truth`.
pub fn mean_squared_deviation(estimates: &[Vec<f64>], truth: &[f64]) -> Vec<f64> {
    let mut acc = vec![0.0; truth.len()];
    for est in estimates {
        for ((a, e), t) in acc.iter_mut().zip(est).zip(truth) {
            *a += (e - t).powi(2);
        }
    }
    let r = estimates.len().max(1) as f64;
    acc.iter().map(|a| a / r).collect()
}

pub fn estimate_sampling_variance<P: Problem>(
    problem: &P,
    n: usize,
    replications: usize,
    master_seed: u64,
) -> Result<SamplingVarianceReport> {
    if replications < 2 {
        return Err(Error::Config("sampling variance needs at least 2 replications".into()));
    }
    let results: Vec<Option<(Vec<f64>, bool)>> = (0..replications as u64)
        .into_par_iter()
        .map(|r| {
            let mut data_rng = seed::rng(master_seed, Stream::Sampling, r, 0);
            let mut est_rng = seed::rng(master_seed, Stream::Reference, r, 0);
            let sample = problem.sample(n, &mut data_rng).ok()?;
            let est = problem.sampling_estimate(&sample, &mut est_rng).ok()?;
            est.theta.iter().all(|v| v.is_finite()).then_some((est.theta, est.converged))
        })
        .collect();

    let dropped = results.iter().filter(|r| r.is_none()).count();
    let kept: Vec<(Vec<f64>, bool)> = results.into_iter().flatten().collect();
    if kept.is_empty() {
        return Err(Error::Estimator("every replication failed".into()));
    }
    let unconverged = kept.iter().filter(|(_, c)| !c).count();
    let estimates: Vec<Vec<f64>> = kept.into_iter().map(|(t, _)| t).collect();
    let per_param = mean_squared_deviation(&estimates, problem.true_params());
    let trace_sigma: f64 = per_param.iter().sum();
    Ok(SamplingVarianceReport {
        n,
        replications,
        dropped,
        unconverged,
        trace_ws: n as f64 * trace_sigma,
        trace_sigma,
        per_param,
        flagged: dropped as f64 > MAX_DROP_FRACTION * replications as f64,
    })
}

/// A fixed dataset for GA-variance estimation with its reference optimum.
#[derive(Debug, Clone)]
pub struct GaDataset<S> {
    pub sample: S,
    /// The reference estimate before projection.
    pub reference_raw: Vec<f64>,
    /// The reference estimate on the GA grid; runs are centred on this.
    pub reference: Vec<f64>,
}

/// Simulates `count` datasets of size `n` and computes their reference
/// optima.
pub fn prepare_datasets<P: Problem>(
    problem: &P,
    n: usize,
    count: usize,
    master_seed: u64,
) -> Result<Vec<GaDataset<P::Sample>>> {
    (0..count as u64)
        .into_par_iter()
        .map(|d| {
            let mut data_rng = seed::rng(master_seed, Stream::Data, d, 0);
            let mut est_rng = seed::rng(master_seed, Stream::Reference, d, 1);
            let sample = problem.sample(n, &mut data_rng)?;
            let est = problem.reference_estimate(&sample, &mut est_rng)?;
            let reference = problem.grid_reference(&est.theta, &sample);
            Ok(GaDataset { sample, reference_raw: est.theta, reference })
        })
        .collect()
}

/// Best-so-far parameters at the generations where they changed, which is
/// enough to rebuild the whole trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub dataset: usize,
    pub run: usize,
    /// `(generation, evaluations, parameters, objective)` change points,
    /// starting with generation 0.
    pub changes: Vec<(usize, u64, Vec<f64>, f64)>,
    pub generations: usize,
}

impl RunRecord {
    pub fn from_trace(dataset: usize, run: usize, trace: &GaTrace) -> Self {
        let mut changes: Vec<(usize, u64, Vec<f64>, f64)> = Vec::new();
        for r in &trace.records {
            if changes.last().map_or(true, |c| c.2 != r.best_params) {
                changes.push((r.generation, r.evaluations, r.best_params.clone(), r.best_objective));
            }
        }
        Self { dataset, run, changes, generations: trace.last().generation }
    }

    /// Best-so-far parameters at every generation `0..=generations`.
    pub fn expand(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.generations + 1);
        let mut idx = 0;
        for g in 0..=self.generations {
            while idx + 1 < self.changes.len() && self.changes[idx + 1].0 <= g {
                idx += 1;
            }
            out.push(self.changes[idx].2.as_slice());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaVarianceCurves {
    /// Generation indices `1..=G`.
    pub generations: Vec<usize>,
    /// Cumulative evaluations `V(g) = N (g + 1)`.
    pub evaluations: Vec<u64>,
    /// `per_param[i][g - 1]`.
    pub per_param: Vec<Vec<f64>>,
    pub datasets: usize,
    pub runs: usize,
}

impl GaVarianceCurves {
    pub fn n_params(&self) -> usize {
        self.per_param.len()
    }

    pub fn len(&self) -> usize {
        self.generations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.generations.is_empty()
    }
}

/// Pointwise average over datasets of the per-dataset
/// `(1/J) sum_j (theta*_ji - theta_hat_i)^2` curves, rebuilt from run
/// records.
pub fn curves_from_records(
    records: &[RunRecord],
    references: &[Vec<f64>],
    population_size: usize,
) -> Result<GaVarianceCurves> {
    let first = records.first().ok_or_else(|| Error::Contract("no run records".into()))?;
    let generations = first.generations;
    let k = references
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::Contract("missing reference optima".into()))?;
    let d_count = references.len();
    let mut runs_per_dataset = vec![0usize; d_count];
    let mut per_dataset = vec![vec![vec![0.0; generations]; k]; d_count];
    for rec in records {
        if rec.generations != generations {
            return Err(Error::Contract("runs differ in generation count".into()));
        }
        let reference = references
            .get(rec.dataset)
            .ok_or_else(|| Error::Contract(format!("no reference optimum for dataset {}", rec.dataset)))?;
        runs_per_dataset[rec.dataset] += 1;
        for (g, params) in rec.expand().into_iter().enumerate().skip(1) {
            for i in 0..k {
                per_dataset[rec.dataset][i][g - 1] += (params[i] - reference[i]).powi(2);
            }
        }
    }
    let runs = runs_per_dataset[0];
    if runs < 2 || runs_per_dataset.iter().any(|&j| j != runs) {
        return Err(Error::Contract("every dataset needs the same J >= 2 runs".into()));
    }
    let mut per_param = vec![vec![0.0; generations]; k];
    for ds in &per_dataset {
        for i in 0..k {
            for g in 0..generations {
                per_param[i][g] += ds[i][g] / runs as f64;
            }
        }
    }
    for curve in per_param.iter_mut() {
        for v in curve.iter_mut() {
            *v /= d_count as f64;
        }
    }
    Ok(GaVarianceCurves {
        generations: (1..=generations).collect(),
        evaluations: (1..=generations).map(|g| (population_size * (g + 1)) as u64).collect(),
        per_param,
        datasets: d_count,
        runs,
    })
}

/// Per-run seed, `hash(master, dataset, run)` on the GA stream.
pub fn run_seed(master_seed: u64, dataset: usize, run: usize) -> u64 {
    seed::derive(master_seed, Stream::Ga, dataset as u64, run as u64)
}

/// Runs `J` GAs on every dataset and returns the run records.
pub fn run_ga_batch<P: Problem>(
    problem: &P,
    datasets: &[GaDataset<P::Sample>],
    runs: usize,
    config: &GaConfig,
    master_seed: u64,
) -> Result<Vec<RunRecord>> {
    config.validate_for_convergence()?;
    let jobs: Vec<(usize, usize)> = (0..datasets.len())
        .flat_map(|d| (0..runs).map(move |j| (d, j)))
        .collect();
    jobs.into_par_iter()
        .map(|(d, j)| {
            let bound = Bound::new(problem, &datasets[d].sample);
            let cfg = GaConfig { seed: run_seed(master_seed, d, j), tau: bound.tau(), ..config.clone() };
            let trace = run_ga(&bound, &cfg, InitPolicy::ProblemSeeded)?;
            Ok(RunRecord::from_trace(d, j, &trace))
        })
        .collect()
}

/// GA variance curves for `J` runs on each dataset. Fitness uses `tau = n`.
pub fn estimate_ga_variance<P: Problem>(
    problem: &P,
    datasets: &[GaDataset<P::Sample>],
    runs: usize,
    config: &GaConfig,
    master_seed: u64,
) -> Result<(GaVarianceCurves, Vec<RunRecord>)> {
    if runs < 2 {
        return Err(Error::Config("GA variance needs J >= 2 runs".into()));
    }
    if datasets.is_empty() {
        return Err(Error::Config("GA variance needs at least one dataset".into()));
    }
    let k = problem.n_params();
    if datasets.iter().any(|d| d.reference.len() != k) {
        return Err(Error::Contract("missing reference optimum for a dataset".into()));
    }
    let records = run_ga_batch(problem, datasets, runs, config, master_seed)?;
    let references: Vec<Vec<f64>> = datasets.iter().map(|d| d.reference.clone()).collect();
    let curves = curves_from_records(&records, &references, config.population_size)?;
    Ok((curves, records))
}

/// `tr^(g) = sum_i sigma*_ii^(g)`.
pub fn ga_variance_trace(curves: &GaVarianceCurves) -> Vec<f64> {
    (0..curves.len())
        .map(|g| curves.per_param.iter().map(|c| c[g]).sum())
        .collect()
}

/// Diagnostic variant centred on the run mean with divisor `J - 1`,
/// averaged over datasets.
pub fn empirical_variance_curves(records: &[RunRecord], datasets: usize) -> Result<Vec<Vec<f64>>> {
    let first = records.first().ok_or_else(|| Error::Contract("no run records".into()))?;
    let generations = first.generations;
    let k = first.changes[0].2.len();
    let mut out = vec![vec![0.0; generations]; k];
    for d in 0..datasets {
        let runs: Vec<Vec<&[f64]>> = records.iter().filter(|r| r.dataset == d).map(|r| r.expand()).collect();
        let j = runs.len();
        if j < 2 {
            return Err(Error::Contract(format!("dataset {d} has fewer than 2 runs")));
        }
        for g in 1..=generations {
            for i in 0..k {
                let mean = runs.iter().map(|r| r[g][i]).sum::<f64>() / j as f64;
                let ss: f64 = runs.iter().map(|r| (r[g][i] - mean).powi(2)).sum();
                out[i][g - 1] += ss / (j - 1) as f64 / datasets as f64;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ga::GenerationRecord;

    fn trace(values: &[&[f64]]) -> GaTrace {
        GaTrace {
            records: values
                .iter()
                .enumerate()
                .map(|(g, v)| GenerationRecord {
                    generation: g,
                    best_params: v.to_vec(),
                    best_objective: g as f64,
                    evaluations: 10 * (g as u64 + 1),
                })
                .collect(),
            uniform_fallbacks: 0,
            regenerated: 0,
        }
    }

    #[test]
    fn hand_computed_ga_variance() {
        // J = 2, theta* = 1 and 3, theta_hat = 2: ((1-2)^2 + (3-2)^2) / 2 = 1.
        let a = RunRecord::from_trace(0, 0, &trace(&[&[0.0], &[1.0]]));
        let b = RunRecord::from_trace(0, 1, &trace(&[&[0.0], &[3.0]]));
        let c = curves_from_records(&[a, b], &[vec![2.0]], 10).unwrap();
        assert_eq!(c.per_param, vec![vec![1.0]]);
        assert_eq!(c.evaluations, vec![20]);
        assert_eq!(ga_variance_trace(&c), vec![1.0]);
    }

    #[test]
    fn converged_runs_give_zero_curve() {
        let a = RunRecord::from_trace(0, 0, &trace(&[&[5.0, 1.0], &[2.0, 1.0], &[2.0, 1.0]]));
        let b = RunRecord::from_trace(0, 1, &trace(&[&[7.0, 1.0], &[3.0, 0.0], &[2.0, 1.0]]));
        let c = curves_from_records(&[a, b], &[vec![2.0, 1.0]], 4).unwrap();
        assert_eq!(c.per_param[0], vec![0.5, 0.0]);
        assert_eq!(c.per_param[1], vec![0.5, 0.0]);
        assert_eq!(ga_variance_trace(&c), vec![1.0, 0.0]);
    }

    #[test]
    fn change_points_expand_to_full_trace() {
        let t = trace(&[&[1.0], &[1.0], &[2.0], &[2.0], &[2.0], &[0.5]]);
        let r = RunRecord::from_trace(3, 4, &t);
        assert_eq!(r.changes.len(), 3);
        let full: Vec<&[f64]> = t.records.iter().map(|x| x.best_params.as_slice()).collect();
        assert_eq!(r.expand(), full);
    }

    #[test]
    fn dataset_averaging_and_preconditions() {
        let recs = vec![
            RunRecord::from_trace(0, 0, &trace(&[&[0.0], &[1.0]])),
            RunRecord::from_trace(0, 1, &trace(&[&[0.0], &[1.0]])),
            RunRecord::from_trace(1, 0, &trace(&[&[0.0], &[3.0]])),
            RunRecord::from_trace(1, 1, &trace(&[&[0.0], &[3.0]])),
        ];
        let c = curves_from_records(&recs, &[vec![0.0], vec![0.0]], 10).unwrap();
        assert_eq!(c.per_param, vec![vec![5.0]]);
        assert!(curves_from_records(&recs, &[vec![0.0]], 10).is_err());
        assert!(curves_from_records(&recs[..1], &[vec![0.0]], 10).is_err());
    }

    #[test]
    fn empirical_variant_uses_run_mean() {
        let recs = vec![
            RunRecord::from_trace(0, 0, &trace(&[&[0.0], &[1.0]])),
            RunRecord::from_trace(0, 1, &trace(&[&[0.0], &[3.0]])),
        ];
        assert_eq!(empirical_variance_curves(&recs, 1).unwrap(), vec![vec![2.0]]);
    }

    #[test]
    fn msd_is_exact() {
        let est = vec![vec![1.0, 0.0], vec![3.0, 2.0]];
        assert_eq!(mean_squared_deviation(&est, &[2.0, 0.0]), vec![1.0, 2.0]);
        assert_eq!(mean_squared_deviation(&[vec![2.0]], &[2.0]), vec![0.0]);
    }
}
