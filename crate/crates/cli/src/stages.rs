//! Pipeline stages. Each stage reads its inputs from and writes its
//! outputs to the configured output directory.

use std::collections::BTreeMap;
use std::hint::black_box;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ga_tradeoff::ga::{run_ga, InitPolicy};
use ga_tradeoff::problems::{ArProblem, Bound, GkProblem, LadProblem, Problem, ProblemKind, SampleTable};
use ga_tradeoff::rate::{fitted_curve, select_rate_from};
use ga_tradeoff::seed::{self, Stream};
use ga_tradeoff::tradeoff::{self, CostModel, ProblemFit, Rates, SurfaceRow};
use ga_tradeoff::variance::{
    self, curves_from_records, empirical_variance_curves, estimate_ga_variance, estimate_sampling_variance,
    prepare_datasets, GaVarianceCurves,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::manifest::{EvaluationCost, RunManifest, StageRecord};
use crate::output::{read_rows, write_rows, write_table, Stamp};
use crate::{CliError, Command};

macro_rules! with_problem {
    ($kind:expr, $cfg:expr, $p:ident => $body:expr) => {
        match $kind {
            ProblemKind::Lad => {
                let $p = &LadProblem::default();
                $body
            }
            ProblemKind::Ar => {
                let $p = &ArProblem::default().with_sampling_fit($cfg.ar.sampling_fit);
                $body
            }
            ProblemKind::Gk => {
                let $p = &GkProblem::default();
                $body
            }
        }
    };
}

pub const SAMPLING_DETAIL: &str = "sampling_variance.csv";
pub const SAMPLING_SUMMARY: &str = "sampling_summary.csv";
pub const GA_CURVES: &str = "ga_curves.csv";
pub const REFERENCES: &str = "references.csv";
pub const TABLE1: &str = "table1_rsquare.csv";
pub const RATE_CANDIDATES: &str = "rate_candidates.csv";
pub const RATE_FIT: &str = "rate_fit.csv";
pub const OVERLAY: &str = "fig1_overlay.csv";
pub const TABLE2: &str = "table2_traces.csv";
pub const TRADEOFF: &str = "tradeoff.csv";
pub const SURFACE: &str = "surface.csv";
pub const COMPARISON: &str = "fig5_comparison.csv";
pub const CALIBRATION: &str = "calibration.csv";
pub const RUN_SUMMARY: &str = "run_ga_summary.csv";

/// Minimum wall time of one timed batch.
const MIN_BATCH_SECONDS: f64 = 1e-3;

struct Stage<'a> {
    cfg: &'a ExperimentConfig,
    out: &'a Path,
    stamp: Stamp,
    manifest: RunManifest,
}

type Outputs = (Vec<PathBuf>, Vec<PathBuf>);

impl Stage<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn record(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<Outputs, CliError>) -> Result<(), CliError> {
        eprintln!("[{name}] start");
        let start = Instant::now();
        let result = f(self);
        let seconds = start.elapsed().as_secs_f64();
        match result {
            Ok((inputs, outputs)) => {
                eprintln!("[{name}] done in {seconds:.1}s");
                self.manifest.stages.push(StageRecord { stage: name.into(), status: "ok".into(), seconds, inputs, outputs });
                Ok(())
            }
            Err(e) => {
                self.manifest.stages.push(StageRecord {
                    stage: name.into(),
                    status: "failed".into(),
                    seconds,
                    inputs: Vec::new(),
                    outputs: Vec::new(),
                });
                self.manifest.failed_stage = Some(name.into());
                self.manifest.error = Some(e.to_string());
                Err(e)
            }
        }
    }
}

pub fn execute(cfg: &ExperimentConfig, command: &Command) -> Result<(), CliError> {
    let mut st = Stage {
        cfg,
        out: &cfg.out,
        stamp: Stamp { config_hash: cfg.hash(), seed: cfg.seed },
        manifest: RunManifest::new(cfg.hash(), cfg.seed),
    };
    st.manifest.conventions = vec![
        "R2 centred on the curve mean; the uncentred value is reported alongside".into(),
        format!("rate fits skip the first {} generations", cfg.rate.burn_in),
        "GA variance is centred on the grid-projected reference optimum with divisor J".into(),
        "run seed = derive(master seed, GA stream, dataset, run)".into(),
    ];
    let result = match command {
        Command::RunGa { runs } => {
            let runs = *runs;
            st.record("run-ga", |s| stage_run_ga(s, runs))
        }
        Command::SamplingVar => st.record("sampling-var", stage_sampling),
        Command::GaVar => st.record("ga-var", stage_ga_var),
        Command::FitRate => st.record("fit-rate", stage_fit_rate),
        Command::Tradeoff => st.record("tradeoff", stage_tradeoff),
        Command::Sweep => st.record("sweep", stage_sweep),
        Command::Calibrate => st.record("calibrate", stage_calibrate),
        Command::Pipeline => st
            .record("sampling-var", stage_sampling)
            .and_then(|_| st.record("ga-var", stage_ga_var))
            .and_then(|_| st.record("fit-rate", stage_fit_rate))
            .and_then(|_| st.record("tradeoff", stage_tradeoff))
            .and_then(|_| st.record("sweep", stage_sweep)),
    };
    st.manifest.write(st.out)?;
    result
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn write_sample<P: Problem>(_p: &P, sample: &P::Sample, path: &Path, stamp: &Stamp) -> Result<PathBuf, CliError> {
    let cols: Vec<String> = P::Sample::columns().iter().map(|c| c.to_string()).collect();
    let rows: Vec<Vec<String>> = sample.rows().iter().map(|r| r.iter().map(|&v| fmt(v)).collect()).collect();
    write_table(path, stamp, &cols, &rows)
}

/// Reads a sample written by `run-ga`.
pub fn read_sample<S: SampleTable>(path: &Path) -> Result<S, CliError> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| CliError::Stage(format!("missing input {}: {e}", path.display())))?;
    let rows = r
        .records()
        .map(|rec| {
            let rec = rec.map_err(|e| CliError::Io(e.to_string()))?;
            rec.iter().map(|v| v.parse::<f64>().map_err(|e| CliError::Io(e.to_string()))).collect()
        })
        .collect::<Result<Vec<Vec<f64>>, CliError>>()?;
    Ok(S::from_rows(&rows)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummaryRow {
    pub problem: ProblemKind,
    pub run: usize,
    pub generations: usize,
    pub final_objective: f64,
    pub reference_objective: f64,
    pub gap: f64,
    pub uniform_fallbacks: usize,
    pub regenerated: usize,
}

fn stage_run_ga(st: &mut Stage, runs: usize) -> Result<Outputs, CliError> {
    if runs == 0 {
        return Err(CliError::Config("--runs must be positive".into()));
    }
    let cfg = st.cfg;
    let mut outputs = Vec::new();
    let mut summary = Vec::new();
    for &kind in &cfg.problems {
        with_problem!(kind, cfg, p => {
            let ds = prepare_datasets(p, cfg.n, 1, cfg.seed)?.remove(0);
            let sample_path = st.path(&format!("sample_{kind}.csv"));
            outputs.push(write_sample::<_>(p, &ds.sample, &sample_path, &st.stamp)?);

            let reference_objective = p.objective(&ds.reference, &ds.sample);
            let bound = Bound::new(p, &ds.sample);
            let n = bound.tau();
            let traces = (0..runs)
                .into_par_iter()
                .map(|j| {
                    let ga = ga_tradeoff::ga::GaConfig { seed: variance::run_seed(cfg.seed, 0, j), tau: n, ..cfg.ga.to_ga_config() };
                    run_ga(&bound, &ga, InitPolicy::ProblemSeeded)
                })
                .collect::<Result<Vec<_>, _>>()?;

            let mut header: Vec<String> = ["run", "generation", "evaluations", "objective"].map(String::from).to_vec();
            header.extend(p.param_names());
            let mut rows = Vec::new();
            for (j, t) in traces.iter().enumerate() {
                for r in &t.records {
                    let mut row = vec![j.to_string(), r.generation.to_string(), r.evaluations.to_string(), fmt(r.best_objective / n)];
                    row.extend(r.best_params.iter().map(|&v| fmt(v)));
                    rows.push(row);
                }
                let last = t.last().best_objective / n;
                summary.push(RunSummaryRow {
                    problem: kind,
                    run: j,
                    generations: t.last().generation,
                    final_objective: last,
                    reference_objective,
                    gap: reference_objective - last,
                    uniform_fallbacks: t.uniform_fallbacks,
                    regenerated: t.regenerated,
                });
            }
            outputs.push(write_table(&st.path(&format!("trace_{kind}.csv")), &st.stamp, &header, &rows)?);
        });
    }
    outputs.push(write_rows(&st.path(RUN_SUMMARY), &st.stamp, &summary)?);
    Ok((Vec::new(), outputs))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplingRow {
    pub problem: ProblemKind,
    pub param: String,
    pub n: usize,
    pub sigma2: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplingSummaryRow {
    pub problem: ProblemKind,
    pub n: usize,
    pub replications: usize,
    pub dropped: usize,
    pub unconverged: usize,
    pub flagged: bool,
    pub trace_sigma: f64,
    pub trace_ws: f64,
}

fn stage_sampling(st: &mut Stage) -> Result<Outputs, CliError> {
    let cfg = st.cfg;
    let mut detail = Vec::new();
    let mut summary = Vec::new();
    for &kind in &cfg.problems {
        let (names, report) = with_problem!(kind, cfg, p => {
            (p.param_names(), estimate_sampling_variance(p, cfg.n, cfg.monte_carlo.replications, cfg.seed)?)
        });
        for (name, &s) in names.iter().zip(&report.per_param) {
            detail.push(SamplingRow { problem: kind, param: name.clone(), n: cfg.n, sigma2: s });
        }
        summary.push(SamplingSummaryRow {
            problem: kind,
            n: report.n,
            replications: report.replications,
            dropped: report.dropped,
            unconverged: report.unconverged,
            flagged: report.flagged,
            trace_sigma: report.trace_sigma,
            trace_ws: report.trace_ws,
        });
    }
    let outputs = vec![
        write_rows(&st.path(SAMPLING_DETAIL), &st.stamp, &detail)?,
        write_rows(&st.path(SAMPLING_SUMMARY), &st.stamp, &summary)?,
    ];
    Ok((Vec::new(), outputs))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurveRow {
    pub problem: ProblemKind,
    pub generation: usize,
    pub evaluations: u64,
    pub param_index: usize,
    pub param: String,
    pub variance: f64,
    /// Run-mean centred variant with divisor `J - 1`.
    pub variance_run_mean: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub problem: ProblemKind,
    pub dataset: usize,
    pub param: String,
    pub reference_raw: f64,
    pub reference: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordRow {
    pub dataset: usize,
    pub run: usize,
    pub generation: usize,
    pub evaluations: u64,
    pub param_index: usize,
    pub value: f64,
}

fn stage_ga_var(st: &mut Stage) -> Result<Outputs, CliError> {
    let cfg = st.cfg;
    let ga = cfg.ga.to_ga_config();
    let mut curve_rows = Vec::new();
    let mut ref_rows = Vec::new();
    let mut outputs = Vec::new();
    for &kind in &cfg.problems {
        with_problem!(kind, cfg, p => {
            let names = p.param_names();
            let ds = prepare_datasets(p, cfg.n, cfg.monte_carlo.datasets, cfg.seed)?;
            let (curves, records) = estimate_ga_variance(p, &ds, cfg.monte_carlo.runs, &ga, cfg.seed)?;
            let empirical = empirical_variance_curves(&records, ds.len())?;
            for (d, x) in ds.iter().enumerate() {
                for (i, name) in names.iter().enumerate() {
                    ref_rows.push(ReferenceRow {
                        problem: kind,
                        dataset: d,
                        param: name.clone(),
                        reference_raw: x.reference_raw[i],
                        reference: x.reference[i],
                    });
                }
            }
            for (i, name) in names.iter().enumerate() {
                for g in 0..curves.len() {
                    curve_rows.push(CurveRow {
                        problem: kind,
                        generation: curves.generations[g],
                        evaluations: curves.evaluations[g],
                        param_index: i,
                        param: name.clone(),
                        variance: curves.per_param[i][g],
                        variance_run_mean: empirical[i][g],
                    });
                }
            }
            let rec_rows: Vec<RecordRow> = records
                .iter()
                .flat_map(|r| {
                    r.changes.iter().flat_map(move |(g, v, params, _)| {
                        params.iter().enumerate().map(move |(i, &value)| RecordRow {
                            dataset: r.dataset,
                            run: r.run,
                            generation: *g,
                            evaluations: *v,
                            param_index: i,
                            value,
                        })
                    })
                })
                .collect();
            outputs.push(write_rows(&st.path(&format!("run_records_{kind}.csv")), &st.stamp, &rec_rows)?);
        });
    }
    outputs.push(write_rows(&st.path(GA_CURVES), &st.stamp, &curve_rows)?);
    outputs.push(write_rows(&st.path(REFERENCES), &st.stamp, &ref_rows)?);
    Ok((Vec::new(), outputs))
}

/// Rebuilds one problem's curves from stored run records, without
/// re-running any GA.
pub fn curves_from_files(out: &Path, kind: ProblemKind, generations: usize, population_size: usize) -> Result<GaVarianceCurves, CliError> {
    let refs: Vec<ReferenceRow> = read_rows(&out.join(REFERENCES))?;
    let mut references: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in refs.iter().filter(|r| r.problem == kind) {
        references.entry(r.dataset).or_default().push(r.reference);
    }
    let rows: Vec<RecordRow> = read_rows(&out.join(format!("run_records_{kind}.csv")))?;
    let mut runs: BTreeMap<(usize, usize), variance::RunRecord> = BTreeMap::new();
    for r in rows {
        let rec = runs.entry((r.dataset, r.run)).or_insert_with(|| variance::RunRecord {
            dataset: r.dataset,
            run: r.run,
            changes: Vec::new(),
            generations,
        });
        if r.param_index == 0 {
            rec.changes.push((r.generation, r.evaluations, Vec::new(), f64::NAN));
        }
        match rec.changes.last_mut() {
            Some(c) => c.2.push(r.value),
            None => return Err(CliError::Stage("run record rows out of order".into())),
        }
    }
    let records: Vec<_> = runs.into_values().collect();
    let references: Vec<Vec<f64>> = references.into_values().collect();
    Ok(curves_from_records(&records, &references, population_size)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateRow {
    pub problem: ProblemKind,
    pub param: String,
    pub a: f64,
    pub w: f64,
    pub r2: f64,
    pub r2_uncentered: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateRow {
    pub problem: ProblemKind,
    pub a: f64,
    pub trace_wga: f64,
    pub mean_r2: f64,
    pub tied: bool,
    pub burn_in: usize,
    pub r2_convention: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OverlayRow {
    pub problem: ProblemKind,
    pub generation: usize,
    pub evaluations: u64,
    pub param: String,
    pub observed: f64,
    pub fitted: f64,
}

fn exponent_label(a: f64) -> String {
    for (v, s) in [(1.0 / 3.0, "1/3"), (0.5, "1/2"), (1.0, "1"), (2.0, "2")] {
        if a == v {
            return s.to_string();
        }
    }
    fmt(a)
}

/// Stored curve rows grouped by problem, in file order.
pub fn read_curves(path: &Path) -> Result<Vec<(ProblemKind, Vec<String>, GaVarianceCurves)>, CliError> {
    let rows: Vec<CurveRow> = read_rows(path)?;
    let mut out: Vec<(ProblemKind, Vec<String>, GaVarianceCurves)> = Vec::new();
    for r in rows {
        if out.last().map_or(true, |(k, _, _)| *k != r.problem) {
            let empty = GaVarianceCurves { generations: Vec::new(), evaluations: Vec::new(), per_param: Vec::new(), datasets: 0, runs: 0 };
            out.push((r.problem, Vec::new(), empty));
        }
        let (_, names, c) = out.last_mut().expect("pushed above");
        if r.param_index == names.len() {
            names.push(r.param.clone());
            c.per_param.push(Vec::new());
        }
        if r.param_index == 0 {
            c.generations.push(r.generation);
            c.evaluations.push(r.evaluations);
        }
        c.per_param
            .get_mut(r.param_index)
            .ok_or_else(|| CliError::Stage(format!("{}: rows out of order", path.display())))?
            .push(r.variance);
    }
    Ok(out)
}

fn stage_fit_rate(st: &mut Stage) -> Result<Outputs, CliError> {
    let cfg = st.cfg;
    let input = st.path(GA_CURVES);
    let curves = read_curves(&input)?;
    let mut candidates = cfg.rate.candidates.clone();
    candidates.sort_by(f64::total_cmp);

    let mut header = vec!["problem".to_string(), "param".to_string()];
    header.extend(candidates.iter().map(|&a| format!("r2_a={}", exponent_label(a))));
    header.push("selected_a".into());
    let mut table1 = Vec::new();
    let mut cand_rows = Vec::new();
    let mut rate_rows = Vec::new();
    let mut overlay = Vec::new();
    for (kind, names, c) in curves.iter().filter(|(k, _, _)| cfg.problems.contains(k)) {
        let fit = select_rate_from(c, &candidates, cfg.rate.burn_in)?;
        for (i, name) in names.iter().enumerate() {
            let mut row = vec![kind.to_string(), name.clone()];
            for cand in &fit.candidates {
                row.push(fmt(cand.fits[i].r2));
                cand_rows.push(CandidateRow {
                    problem: *kind,
                    param: name.clone(),
                    a: cand.a,
                    w: cand.fits[i].w,
                    r2: cand.fits[i].r2,
                    r2_uncentered: cand.fits[i].r2_uncentered,
                });
            }
            row.push(exponent_label(fit.a));
            table1.push(row);
            let fitted = fitted_curve(fit.coefficients[i], fit.a, &c.evaluations);
            for g in 0..c.len() {
                overlay.push(OverlayRow {
                    problem: *kind,
                    generation: c.generations[g],
                    evaluations: c.evaluations[g],
                    param: name.clone(),
                    observed: c.per_param[i][g],
                    fitted: fitted[g],
                });
            }
        }
        let chosen = fit.candidates.iter().find(|x| x.a == fit.a).expect("selected from candidates");
        rate_rows.push(RateRow {
            problem: *kind,
            a: fit.a,
            trace_wga: fit.trace_wga,
            mean_r2: chosen.mean_r2,
            tied: fit.tied,
            burn_in: fit.burn_in,
            r2_convention: "centered".into(),
        });
    }
    if rate_rows.is_empty() {
        return Err(CliError::Stage(format!("{} holds no curves for the selected problems", input.display())));
    }
    let outputs = vec![
        write_table(&st.path(TABLE1), &st.stamp, &header, &table1)?,
        write_rows(&st.path(RATE_CANDIDATES), &st.stamp, &cand_rows)?,
        write_rows(&st.path(RATE_FIT), &st.stamp, &rate_rows)?,
        write_rows(&st.path(OVERLAY), &st.stamp, &overlay)?,
    ];
    Ok((vec![input], outputs))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Table2Row {
    pub problem: ProblemKind,
    pub trace_ws: f64,
    pub trace_wga: f64,
    pub ratio: f64,
    pub a: f64,
}

/// Joins the sampling and rate stages into per-problem fits.
fn load_fits(st: &Stage) -> Result<(Vec<ProblemFit>, Vec<PathBuf>), CliError> {
    let sp = st.path(SAMPLING_SUMMARY);
    let rp = st.path(RATE_FIT);
    let sampling: Vec<SamplingSummaryRow> = read_rows(&sp)?;
    let rates: Vec<RateRow> = read_rows(&rp)?;
    let mut fits = Vec::new();
    for &kind in &st.cfg.problems {
        let s = sampling.iter().find(|r| r.problem == kind);
        let r = rates.iter().find(|r| r.problem == kind);
        let (Some(s), Some(r)) = (s, r) else {
            return Err(CliError::Stage(format!("no sampling or rate results for {kind}")));
        };
        let k = with_problem!(kind, st.cfg, p => p.n_params());
        fits.push(ProblemFit { problem: kind.to_string(), trace_ws: s.trace_ws, trace_wga: r.trace_wga, a: r.a, n_min: 10 * k });
    }
    Ok((fits, vec![sp, rp]))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub problem: String,
    pub s: f64,
    pub t: f64,
    pub c: f64,
    pub a: f64,
    pub n_real: f64,
    pub v_real: f64,
    pub n_floor: Option<usize>,
    pub objective_floor: Option<f64>,
    pub n_ceil: Option<usize>,
    pub objective_ceil: Option<f64>,
    pub n_opt: usize,
    pub v_opt: f64,
    pub objective: f64,
    pub generations: usize,
    pub method: String,
    pub fallback: Option<String>,
}

fn stage_tradeoff(st: &mut Stage) -> Result<Outputs, CliError> {
    let cfg = st.cfg;
    let (fits, inputs) = load_fits(st)?;
    let cost = CostModel::new(cfg.cost.s, cfg.cost.t, cfg.cost.budget)?;
    let mut table2 = Vec::new();
    let mut rows = Vec::new();
    for f in &fits {
        table2.push(Table2Row {
            problem: f.problem.parse()?,
            trace_ws: f.trace_ws,
            trace_wga: f.trace_wga,
            ratio: f.trace_wga / f.trace_ws,
            a: f.a,
        });
        let sol = tradeoff::solve(&cost, f.trace_ws, f.trace_wga, Rates::with_effort(f.a), f.n_min)?;
        rows.push(TradeoffRow {
            problem: f.problem.clone(),
            s: cost.s,
            t: cost.t,
            c: cost.c,
            a: f.a,
            n_real: sol.n_real,
            v_real: sol.v_real,
            n_floor: sol.floor.map(|p| p.n),
            objective_floor: sol.floor.map(|p| p.objective),
            n_ceil: sol.ceil.map(|p| p.n),
            objective_ceil: sol.ceil.map(|p| p.objective),
            n_opt: sol.n_opt,
            v_opt: sol.v_opt,
            objective: sol.objective,
            generations: sol.generations(cfg.ga.population_size),
            method: sol.method.as_str().into(),
            fallback: sol.fallback.clone(),
        });
    }
    let outputs = vec![
        write_rows(&st.path(TABLE2), &st.stamp, &table2)?,
        write_rows(&st.path(TRADEOFF), &st.stamp, &rows)?,
    ];
    Ok((inputs, outputs))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurfaceCsvRow {
    pub problem: String,
    #[serde(rename = "S")]
    pub s: f64,
    #[serde(rename = "T")]
    pub t: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub n_opt: Option<usize>,
    #[serde(rename = "V_opt")]
    pub v_opt: Option<f64>,
    pub objective: Option<f64>,
    pub n_real: f64,
    pub method: Option<String>,
    pub error: Option<String>,
}

impl From<SurfaceRow> for SurfaceCsvRow {
    fn from(r: SurfaceRow) -> Self {
        Self {
            problem: r.problem,
            s: r.s,
            t: r.t,
            c: r.c,
            n_opt: r.n_opt,
            v_opt: r.v_opt,
            objective: r.objective,
            n_real: r.n_real,
            method: r.method.map(|m| m.as_str().to_string()),
            error: r.error,
        }
    }
}

fn stage_sweep(st: &mut Stage) -> Result<Outputs, CliError> {
    let cfg = st.cfg;
    let (fits, mut inputs) = load_fits(st)?;
    let surface = tradeoff::sweep_surface(&fits, &cfg.cost.s_grid, &cfg.cost.t_grid, cfg.cost.budget)?;
    let surface: Vec<SurfaceCsvRow> = surface.into_iter().map(Into::into).collect();
    let mut outputs = vec![write_rows(&st.path(SURFACE), &st.stamp, &surface)?];

    let ratios: Vec<f64> = if cfg.cost.t_ratios.is_empty() {
        let path = st.path(CALIBRATION);
        let rows: Vec<CalibrationRow> = if path.exists() {
            inputs.push(path.clone());
            read_rows(&path)?
        } else {
            outputs.extend(stage_calibrate(st)?.1);
            read_rows(&path)?
        };
        let comparison = st.path(COMPARISON);
        st.manifest.timing_dependent.push(comparison);
        fits.iter()
            .map(|f| {
                rows.iter()
                    .find(|r| r.problem.as_str() == f.problem && r.n == cfg.n)
                    .or_else(|| rows.iter().find(|r| r.problem.as_str() == f.problem))
                    .map(|r| r.ratio_to_gk)
                    .ok_or_else(|| CliError::Stage(format!("no timing for {}", f.problem)))
            })
            .collect::<Result<_, _>>()?
    } else {
        fits.iter()
            .map(|f| {
                cfg.cost
                    .t_ratios
                    .iter()
                    .find(|r| r.problem.as_str() == f.problem)
                    .map(|r| r.ratio)
                    .ok_or_else(|| CliError::Config(format!("no T ratio configured for {}", f.problem)))
            })
            .collect::<Result<_, _>>()?
    };
    let comparison = tradeoff::timed_cost_comparison(&fits, &ratios, cfg.cost.timed_t_base, &cfg.cost.timed_s_grid, cfg.cost.budget)?;
    let comparison: Vec<SurfaceCsvRow> = comparison.into_iter().map(Into::into).collect();
    outputs.push(write_rows(&st.path(COMPARISON), &st.stamp, &comparison)?);
    Ok((inputs, outputs))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub problem: ProblemKind,
    pub n: usize,
    pub repetitions: usize,
    pub batch: usize,
    pub batch_increased: bool,
    pub median_seconds: f64,
    pub ratio_to_gk: f64,
}

/// Median wall time of one objective evaluation, with the batch size
/// doubled until a batch takes at least a millisecond.
pub fn time_objective<P: Problem>(p: &P, n: usize, repetitions: usize, seed: u64) -> Result<(f64, usize), CliError> {
    let mut rng = seed::rng(seed, Stream::Synthetic, n as u64, 0);
    let sample = p.sample(n, &mut rng)?;
    let mut thetas = Vec::new();
    while thetas.len() < 32 {
        let bits: Vec<bool> = (0..p.chromosome_len()).map(|_| rand::Rng::gen(&mut rng)).collect();
        let theta = p.decode(&bits);
        if p.is_admissible(&theta) {
            thetas.push(theta);
        }
    }
    let time_batch = |b: usize| {
        let start = Instant::now();
        for i in 0..b {
            black_box(p.objective(black_box(&thetas[i % thetas.len()]), &sample));
        }
        start.elapsed().as_secs_f64()
    };
    let mut batch = 1;
    while time_batch(batch) < MIN_BATCH_SECONDS && batch < 1 << 24 {
        batch *= 2;
    }
    let mut times: Vec<f64> = (0..repetitions).map(|_| time_batch(batch) / batch as f64).collect();
    Ok((ga_tradeoff::numeric::median(&mut times), batch))
}

fn stage_calibrate(st: &mut Stage) -> Result<Outputs, CliError> {
    let cfg = st.cfg;
    let mut rows = Vec::new();
    for &n in &cfg.calibrate.sizes {
        let mut measured = Vec::new();
        for kind in ProblemKind::ALL {
            let (secs, batch) = with_problem!(kind, cfg, p => time_objective(p, n, cfg.calibrate.repetitions, cfg.seed)?);
            measured.push((kind, secs, batch));
        }
        let gk = measured.iter().find(|m| m.0 == ProblemKind::Gk).map(|m| m.1).expect("gk measured");
        for (kind, secs, batch) in measured {
            rows.push(CalibrationRow {
                problem: kind,
                n,
                repetitions: cfg.calibrate.repetitions,
                batch,
                batch_increased: batch > 1,
                median_seconds: secs,
                ratio_to_gk: secs / gk,
            });
            st.manifest.evaluation_costs.push(EvaluationCost {
                problem: kind.to_string(),
                n,
                seconds_per_evaluation: secs,
                batch,
                batch_increased: batch > 1,
            });
        }
    }
    let path = write_rows(&st.path(CALIBRATION), &st.stamp, &rows)?;
    st.manifest.timing_dependent.push(path.clone());
    Ok((Vec::new(), vec![path]))
}
