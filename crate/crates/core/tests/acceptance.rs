//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion fails.

mod common;

use std::io::Write;
use std::process::Command;
use std::time::{Duration, Instant};

use adaptis::adapt::{
    adapt_loop, gradient_estimate_global, project, sis_update, AdaptConfig, GradientKind, ProjectionMode,
};
use adaptis::exact;
use adaptis::experiment::{run_experiment, ExperimentConfig, Method, Trace};
use adaptis::fixtures;
use adaptis::model::{Assignment, EstimationProblem, Network};
use adaptis::sampling::{replication_stream, stream, weight, ParamTable, SamplerParams};
use common::{random_row, random_rows, random_three, rel_close, Rows};
use rand::Rng;

type Outcome = std::result::Result<String, String>;

const MASTER_SEED: u64 = 20000731;

fn chain2() -> EstimationProblem {
    EstimationProblem::new(fixtures::chain2(), Assignment::new().with("X2", 1), None).unwrap()
}

fn gamble1(action: usize) -> EstimationProblem {
    EstimationProblem::new(fixtures::gamble1(), Assignment::new(), Some(action)).unwrap()
}

fn structured() -> EstimationProblem {
    let evidence = Assignment::new().with("X4", 1).with("X5", 0);
    EstimationProblem::new(fixtures::structured(), evidence, Some(2)).unwrap()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Oracle rows (declaration order) as sampler parameters (slot order).
fn to_params(problem: &EstimationProblem, net: &Network, rows: &Rows) -> SamplerParams {
    SamplerParams::new(
        (0..problem.num_free())
            .map(|slot| {
                let var = net.index_of(problem.free_name(slot)).unwrap();
                ParamTable::from_rows(&rows[var])
            })
            .collect(),
    )
}

/// Random parameters with every entry at least `floor`.
fn random_params<R: Rng>(rng: &mut R, problem: &EstimationProblem, floor: f64) -> SamplerParams {
    let mut theta = SamplerParams::prior(problem);
    for slot in 0..problem.num_free() {
        let arity = problem.free_arity(slot);
        for row in theta.table_mut(slot).rows_mut() {
            row.copy_from_slice(&random_row(rng, arity, floor));
        }
    }
    theta
}

fn oracle_values() -> Outcome {
    let start = Instant::now();
    let g = exact::true_value(&chain2()).map_err(|e| e.to_string())?;
    let v0 = exact::true_value(&gamble1(0)).map_err(|e| e.to_string())?;
    let v1 = exact::true_value(&gamble1(1)).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure((g - 0.5).abs() <= 1e-12, || format!("chain2 G = {g}"))?;
    ensure((v0 - 2.0).abs() <= 1e-12 && (v1 - 2.48).abs() <= 1e-12, || {
        format!("gamble1 values ({v0}, {v1})")
    })?;
    ensure(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;
    Ok(format!("G = {g}, V = ({v0}, {v1}) in {elapsed:?}"))
}

fn enumeration_unbiasedness() -> Outcome {
    let mut rng = stream(1);
    let mut worst: f64 = 0.0;
    for problem in [chain2(), gamble1(0), gamble1(1), structured()] {
        let truth = exact::true_value(&problem).map_err(|e| e.to_string())?;
        for _ in 0..10 {
            let theta = random_params(&mut rng, &problem, 0.01);
            let table = exact::enumerate(&problem, &theta).map_err(|e| e.to_string())?;
            let mean: f64 = table.entries.iter().map(|e| e.density * (e.target / e.density)).sum();
            worst = worst.max((mean - truth).abs());
            ensure((mean - truth).abs() <= 1e-12, || format!("Σ fω = {mean}, G = {truth}"))?;
        }
    }
    Ok(format!("max |Σ fω − G| = {worst:e}"))
}

fn gradient_correctness() -> Outcome {
    let mut rng = stream(2);
    let mut worst_fd: f64 = 0.0;
    let mut worst_avg: f64 = 0.0;
    let chain = fixtures::chain2();
    let three = random_three(&mut rng);
    let cases: Vec<(Network, Vec<(usize, usize)>, Assignment)> = vec![
        (chain, vec![(1, 1)], Assignment::new().with("X2", 1)),
        (three, vec![(2, 1)], Assignment::new().with("C", 1)),
    ];
    for (net, ev, evidence) in cases {
        let problem = EstimationProblem::new(net.clone(), evidence, None).unwrap();
        for _ in 0..10 {
            let rows = random_rows(&mut rng, &net, &ev, 0.05);
            let theta = to_params(&problem, &net, &rows);
            let grad = exact::exact_gradient_var(&problem, &theta).map_err(|e| e.to_string())?;
            let fd = common::finite_difference(&net, &rows, &ev, 1e-5);
            for slot in 0..problem.num_free() {
                let var = net.index_of(problem.free_name(slot)).unwrap();
                for (j, row) in fd[var].iter().enumerate() {
                    for (k, &want) in row.iter().enumerate() {
                        let got = grad.table(slot).get(j, k);
                        worst_fd = worst_fd.max((got - want).abs() / want.abs());
                        ensure(rel_close(got, want, 1e-6), || {
                            format!("{} [{j}][{k}]: exact {got}, differences {want}", problem.free_name(slot))
                        })?;
                    }
                }
            }

            // single-sample estimator averaged over f by enumeration
            let mut avg = vec![0.0; grad.tables().iter().map(|t| t.values().len()).sum()];
            for state in problem.states() {
                let f = theta.density(&problem, &state);
                let sample = weight(&problem, &theta, state).map_err(|e| e.to_string())?;
                let est = gradient_estimate_global(&problem, &theta, &[sample], GradientKind::Var, 0.0)
                    .map_err(|e| e.to_string())?;
                let flat = est.gradient.tables().iter().flat_map(|t| t.values().iter());
                for (a, v) in avg.iter_mut().zip(flat) {
                    *a += f * v;
                }
            }
            let exact_flat = grad.tables().iter().flat_map(|t| t.values().iter());
            for (a, e) in avg.iter().zip(exact_flat) {
                worst_avg = worst_avg.max((a - e).abs());
                ensure((a - e).abs() <= 1e-12, || format!("averaged estimator {a}, exact {e}"))?;
            }
        }
    }
    Ok(format!(
        "max relative difference {worst_fd:e}, max estimator-average gap {worst_avg:e}"
    ))
}

fn fixed_point() -> Outcome {
    let problem = chain2();
    let optimum = exact::induced_params(&problem).map_err(|e| e.to_string())?;
    let var = exact::weight_variance(&problem, &optimum).map_err(|e| e.to_string())?;
    let grad = exact::exact_gradient_var(&problem, &optimum).map_err(|e| e.to_string())?;
    let projected = project(&grad, ProjectionMode::MeanCenter).max_abs();
    ensure(var.abs() <= 1e-12, || format!("Var[ω] = {var}"))?;
    ensure(projected <= 1e-12, || format!("projected gradient {projected}"))?;
    Ok(format!("Var[ω] = {var:e}, |projected gradient| = {projected:e}"))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Runs of the variance-reduction criterion, kept for the constraint check.
fn variance_runs() -> (Vec<Trace>, Duration) {
    let problem = chain2();
    let mut config = AdaptConfig::new(GradientKind::Var);
    config.total_updates = 200;
    config.batch_size = 1;
    config.beta = 0.5;
    config.gamma = 0.1;
    let start = Instant::now();
    let traces = (0..20)
        .map(|seed| adapt_loop(&problem, &config, &mut replication_stream(MASTER_SEED, seed)).unwrap().1)
        .collect();
    (traces, start.elapsed())
}

fn variance_reduction(traces: &[Trace], elapsed: Duration) -> Outcome {
    let problem = chain2();
    let finals = traces
        .iter()
        .map(|t| exact::weight_variance(&problem, &t.steps.last().unwrap().theta))
        .collect::<adaptis::Result<Vec<f64>>>()
        .map_err(|e| e.to_string())?;
    let med = median(finals);
    ensure(med < 0.03, || format!("median final variance {med}"))?;
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!("median final Var[ω] = {med:.6} (initial 0.06) in {elapsed:?}"))
}

/// β for VAR on gamble1. VAR steps grow with ω², and gamble1 weights are
/// four times those of chain2, so the chain2 default of 0.5 overshoots into
/// high-variance samplers for most of the run.
const GAMBLE1_VAR_BETA: f64 = 0.02;

fn mse_config() -> ExperimentConfig {
    let mut var = AdaptConfig::new(GradientKind::Var);
    var.beta = GAMBLE1_VAR_BETA;
    ExperimentConfig {
        methods: vec![
            Method::Lw,
            Method::Adaptive(var),
            Method::Adaptive(AdaptConfig::new(GradientKind::L2)),
        ],
        replications: 40,
        lw_multiplier: 2,
        master_seed: MASTER_SEED,
        checkpoints: vec![50, 150, 250],
        variance_stride: 10,
    }
}

fn mse_ordering(result: &adaptis::Result<adaptis::experiment::ExperimentResult>, elapsed: Duration) -> Outcome {
    let result = result.as_ref().map_err(|e| e.to_string())?;
    let lw = result.mse_of("lw", 250).unwrap();
    let var = result.mse_of("var", 250).unwrap();
    let l2 = result.mse_of("l2", 250).unwrap();
    ensure(var < lw && l2 < lw, || format!("MSE at 250: lw {lw}, var {var}, l2 {l2}"))?;
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!("MSE at 250: lw {lw:.3e}, var {var:.3e}, l2 {l2:.3e} in {elapsed:?}"))
}

fn l2_first_step() -> Outcome {
    for problem in [chain2(), gamble1(0), structured()] {
        let mut config = AdaptConfig::new(GradientKind::L2);
        config.total_updates = 1;
        config.batch_size = 1;
        for seed in 0..10 {
            let (_, trace) = adapt_loop(&problem, &config, &mut stream(seed)).map_err(|e| e.to_string())?;
            ensure(trace.steps[0].theta == trace.initial, || format!("θ moved with seed {seed}"))?;
        }
    }
    Ok("θ after the first update equals θ before it on all fixtures".into())
}

fn constraints(traces: &[Trace], result: &adaptis::Result<adaptis::experiment::ExperimentResult>) -> Outcome {
    let mut violations: Vec<String> = traces.iter().flat_map(|t| t.constraint_violations(0.1, 1e-9)).collect();
    match result {
        Ok(r) => violations.extend(r.violations.iter().cloned()),
        Err(e) => return Err(format!("experiment failed: {e}")),
    }
    ensure(violations.is_empty(), || {
        format!("{} violations, first: {}", violations.len(), violations[0])
    })?;
    let steps: usize = traces.iter().map(|t| t.steps.len()).sum();
    Ok(format!("0 violations over {steps} variance-run steps and all experiment traces"))
}

fn sis_convexity() -> Outcome {
    let mut rng = stream(9);
    for _ in 0..100 {
        let arity = rng.gen_range(2..6);
        let rows = rng.gen_range(1..4);
        let make = |rng: &mut rand_chacha::ChaCha8Rng| {
            SamplerParams::new(vec![ParamTable::from_rows(
                &(0..rows).map(|_| random_row(rng, arity, 0.0)).collect::<Vec<_>>(),
            )])
        };
        let hat = make(&mut rng);
        let prior = make(&mut rng);
        let alpha = rng.gen_range(0.0..=1.0);
        let out = sis_update(&hat, &prior, alpha).map_err(|e| e.to_string())?;
        for row in out.table(0).rows() {
            let sum: f64 = row.iter().sum();
            ensure(row.iter().all(|&v| (0.0..=1.0).contains(&v)) && (sum - 1.0).abs() <= 1e-12, || {
                format!("invalid row {row:?} at α = {alpha}")
            })?;
        }
        ensure(sis_update(&hat, &prior, 1.0).unwrap() == prior, || "α = 1 is not θ⁰".into())?;
        ensure(sis_update(&hat, &prior, 0.0).unwrap() == hat, || "α = 0 is not θ̂".into())?;
    }
    Ok("100 random triples valid, endpoints exact".into())
}

fn reproducibility() -> Outcome {
    let config = format!("{}/fixtures/experiment.json", env!("CARGO_MANIFEST_DIR"));
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for dir in &dirs {
        let status = Command::new(env!("CARGO_BIN_EXE_adaptis"))
            .args(["experiment", &config, "--out-dir"])
            .arg(dir.path())
            .output()
            .map_err(|e| e.to_string())?;
        ensure(status.status.success(), || String::from_utf8_lossy(&status.stderr).into_owned())?;
    }
    for name in ["mse.csv", "variance.csv"] {
        let a = std::fs::read(dirs[0].path().join(name)).map_err(|e| e.to_string())?;
        let b = std::fs::read(dirs[1].path().join(name)).map_err(|e| e.to_string())?;
        ensure(a == b, || format!("{name} differs between runs"))?;
    }
    Ok("mse.csv and variance.csv byte-identical across two runs".into())
}

#[test]
fn acceptance() {
    let (traces, variance_elapsed) = variance_runs();
    let start = Instant::now();
    let experiment = run_experiment(&gamble1(0), &mse_config());
    let experiment_elapsed = start.elapsed();

    let results: Vec<(&str, Outcome)> = vec![
        ("1 oracle values", oracle_values()),
        ("2 enumeration unbiasedness", enumeration_unbiasedness()),
        ("3 gradient correctness", gradient_correctness()),
        ("4 fixed point", fixed_point()),
        ("5 variance reduction", variance_reduction(&traces, variance_elapsed)),
        ("6 MSE below likelihood weighting", mse_ordering(&experiment, experiment_elapsed)),
        ("7 L2 first update is a no-op", l2_first_step()),
        ("8 constraint maintenance", constraints(&traces, &experiment)),
        ("9 SIS convex combination", sis_convexity()),
        ("10 reproducible experiment output", reproducibility()),
    ];

    let mut report = String::new();
    for (name, outcome) in &results {
        match outcome {
            Ok(detail) => report.push_str(&format!("PASS criterion {name}: {detail}\n")),
            Err(detail) => report.push_str(&format!("FAIL criterion {name}: {detail}\n")),
        }
    }
    // written to the raw handle so the lines show up without --nocapture
    let _ = std::io::stderr().write_all(report.as_bytes());
    let failed: Vec<&str> = results.iter().filter(|(_, o)| o.is_err()).map(|(n, _)| *n).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
