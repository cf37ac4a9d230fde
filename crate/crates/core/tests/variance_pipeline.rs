use ga_tradeoff::ga::{Chromosome, GaConfig};
use ga_tradeoff::problems::{Estimate, LadProblem, Problem, ProblemKind, SampleTable};
use ga_tradeoff::rate::select_rate;
use ga_tradeoff::seed::Rng;
use ga_tradeoff::variance::*;
use ga_tradeoff::Result;

/// A problem whose estimator always returns the truth.
struct Exact;

#[derive(Clone)]
struct Unit(usize);

impl SampleTable for Unit {
    fn columns() -> &'static [&'static str] {
        &["x"]
    }
    fn rows(&self) -> Vec<Vec<f64>> {
        vec![vec![0.0]; self.0]
    }
    fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Ok(Unit(rows.len()))
    }
}

impl Problem for Exact {
    type Sample = Unit;
    fn kind(&self) -> ProblemKind {
        ProblemKind::Lad
    }
    fn param_names(&self) -> Vec<String> {
        vec!["a".into(), "b".into()]
    }
    fn true_params(&self) -> &[f64] {
        &[1.0, -1.0]
    }
    fn sample(&self, n: usize, _rng: &mut Rng) -> Result<Unit> {
        Ok(Unit(n))
    }
    fn sample_size(&self, s: &Unit) -> usize {
        s.0
    }
    fn objective(&self, theta: &[f64], _s: &Unit) -> f64 {
        -theta.iter().map(|v| v * v).sum::<f64>()
    }
    fn chromosome_len(&self) -> usize {
        4
    }
    fn decode(&self, bits: &[bool]) -> Vec<f64> {
        bits.chunks(2).map(|c| c[0] as u8 as f64 + c[1] as u8 as f64).collect()
    }
    fn seeded_population(&self, _n: usize, _rng: &mut Rng) -> Option<Result<Vec<Chromosome>>> {
        None
    }
    fn reference_estimate(&self, _s: &Unit, _rng: &mut Rng) -> Result<Estimate> {
        Ok(Estimate { theta: vec![1.0, -1.0], objective: 0.0, converged: true, diagnostic: None })
    }
    fn grid_reference(&self, theta_hat: &[f64], _s: &Unit) -> Vec<f64> {
        theta_hat.to_vec()
    }
}

fn small_ga(generations: usize) -> GaConfig {
    GaConfig { generations, ..GaConfig::default() }
}

#[test]
fn exact_estimator_has_zero_sampling_variance() {
    let r = estimate_sampling_variance(&Exact, 30, 10, 1).unwrap();
    assert_eq!(r.per_param, vec![0.0, 0.0]);
    assert_eq!(r.trace_ws, 0.0);
    assert!(!r.flagged);
    assert!(estimate_sampling_variance(&Exact, 30, 1, 1).is_err());
}

#[test]
fn sampling_report_is_consistent() {
    let p = LadProblem::default();
    let r = estimate_sampling_variance(&p, 100, 40, 5).unwrap();
    assert_eq!(r.dropped, 0);
    assert!(r.per_param.iter().all(|&v| v >= 0.0));
    assert_eq!(r.trace_sigma, r.per_param.iter().sum::<f64>());
    assert!((r.trace_ws - 100.0 * r.trace_sigma).abs() < 1e-12);
    assert_eq!(r, estimate_sampling_variance(&p, 100, 40, 5).unwrap());
}

#[test]
fn lad_curves_decrease_and_favour_linear_rate() {
    let p = LadProblem::default();
    let ds = prepare_datasets(&p, 100, 2, 9).unwrap();
    let (curves, records) = estimate_ga_variance(&p, &ds, 12, &small_ga(300), 9).unwrap();
    assert_eq!(curves.len(), 300);
    assert_eq!(records.len(), 24);
    assert_eq!(curves.evaluations[0], 100);
    let tr = ga_variance_trace(&curves);
    assert!(tr.iter().all(|&v| v >= 0.0));
    let head: f64 = tr[..30].iter().sum();
    let tail: f64 = tr[270..].iter().sum();
    assert!(tail < 0.2 * head, "head {head} tail {tail}");
    let fit = select_rate(&curves, 5).unwrap();
    assert!(fit.a >= 0.5, "{fit:?}");
}

#[test]
fn more_runs_only_add_records() {
    let p = LadProblem::default();
    let ds = prepare_datasets(&p, 60, 2, 4).unwrap();
    let cfg = small_ga(40);
    let (c4, r4) = estimate_ga_variance(&p, &ds, 4, &cfg, 4).unwrap();
    let (_, r8) = estimate_ga_variance(&p, &ds, 8, &cfg, 4).unwrap();
    let subset: Vec<RunRecord> = r8.iter().filter(|r| r.run < 4).cloned().collect();
    assert_eq!(subset, r4);
    let refs: Vec<Vec<f64>> = ds.iter().map(|d| d.reference.clone()).collect();
    assert_eq!(curves_from_records(&subset, &refs, cfg.population_size).unwrap(), c4);
}

#[test]
fn streamed_curves_match_direct_computation() {
    let p = LadProblem::default();
    let ds = prepare_datasets(&p, 50, 2, 6).unwrap();
    let cfg = small_ga(25);
    let (curves, records) = estimate_ga_variance(&p, &ds, 3, &cfg, 6).unwrap();
    for i in 0..3 {
        for g in 1..=25 {
            let mut total = 0.0;
            for (d, x) in ds.iter().enumerate() {
                let per: f64 = records
                    .iter()
                    .filter(|r| r.dataset == d)
                    .map(|r| (r.expand()[g][i] - x.reference[i]).powi(2))
                    .sum();
                total += per / 3.0;
            }
            assert!((curves.per_param[i][g - 1] - total / 2.0).abs() < 1e-15);
        }
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let p = LadProblem::default();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| {
            let ds = prepare_datasets(&p, 50, 3, 2).unwrap();
            let s = estimate_sampling_variance(&p, 50, 16, 2).unwrap();
            (estimate_ga_variance(&p, &ds, 3, &small_ga(20), 2).unwrap(), s)
        })
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn objective_gap_is_non_increasing() {
    let p = LadProblem::default();
    let ds = prepare_datasets(&p, 80, 1, 3).unwrap();
    let reference = p.objective(&ds[0].reference, &ds[0].sample);
    let (_, records) = estimate_ga_variance(&p, &ds, 5, &small_ga(200), 3).unwrap();
    for r in &records {
        let gaps: Vec<f64> = r.changes.iter().map(|c| reference - c.3 / 80.0).collect();
        assert!(gaps.windows(2).all(|w| w[1] <= w[0]), "{gaps:?}");
    }
}

#[test]
fn missing_reference_is_rejected() {
    let p = LadProblem::default();
    let mut ds = prepare_datasets(&p, 40, 1, 1).unwrap();
    ds[0].reference.clear();
    assert!(estimate_ga_variance(&p, &ds, 2, &small_ga(5), 1).is_err());
    let ds = prepare_datasets(&p, 40, 1, 1).unwrap();
    assert!(estimate_ga_variance(&p, &ds, 1, &small_ga(5), 1).is_err());
}
