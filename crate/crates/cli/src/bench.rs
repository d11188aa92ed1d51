//! Replicated time-to-tolerance comparison.
//!
//! For every dataset and rank, `f_*` is the lowest objective reached by any
//! method. A run reaches tolerance `t` at the first iteration `k` with
//! `(f_k − f_*)/|f_*| ≤ t`; a method's time for a replicate is summed over the
//! rank path. Runs that never reach `t` contribute their full time and are
//! counted as not reached.

use factmle::data_io::generate_synthetic;
use factmle::em::{solve_em, EmConfig};
use factmle::solver::solve;
use factmle::variants::solve_path;
use factmle::{CovarianceInput, SolverConfig, SolverTrace};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::args::BenchArgs;
use crate::commands::{check_rank, emit, load_path, parse_ranks, synthetic_spec, termination_name, wall_time};
use crate::{usage, CliError, CliResult};

const METHODS: [&str; 3] = ["factmle", "factmle-warm", "em"];

#[derive(Debug, Clone, Serialize)]
struct RankRun {
    replicate: usize,
    method: String,
    rank: usize,
    final_objective: f64,
    iterations: usize,
    wall_time: f64,
    termination: &'static str,
    #[serde(skip)]
    objectives: Vec<f64>,
    #[serde(skip)]
    elapsed: Vec<f64>,
}

impl RankRun {
    fn new(replicate: usize, method: &str, rank: usize, trace: &SolverTrace) -> Self {
        Self {
            replicate,
            method: method.to_string(),
            rank,
            final_objective: trace.final_objective(),
            iterations: trace.iterations,
            wall_time: wall_time(trace),
            termination: termination_name(trace.termination),
            objectives: trace.objectives.clone(),
            elapsed: trace.elapsed.clone(),
        }
    }

    fn best(&self) -> f64 {
        self.objectives.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Seconds until the relative gap to `f_star` first drops to `tol`.
    fn time_to(&self, f_star: f64, tol: f64) -> Option<f64> {
        let scale = f_star.abs().max(f64::MIN_POSITIVE);
        self.objectives
            .iter()
            .position(|&f| (f - f_star) / scale <= tol)
            .map(|k| self.elapsed[k])
    }
}

#[derive(Debug, Serialize)]
struct TableRow {
    tol: f64,
    method: String,
    mean_time: f64,
    stderr: f64,
    /// Replicates in which every rank reached `tol`.
    reached: usize,
    replicates: usize,
}

fn run_method(cov: &CovarianceInput, method: &str, ranks: &[usize], a: &BenchArgs, replicate: usize) -> CliResult<Vec<RankRun>> {
    let seed = a.seed.wrapping_add(replicate as u64);
    let base = SolverConfig {
        eps: a.eps,
        tol: a.tol,
        max_iters: a.max_iters,
        ..SolverConfig::new(ranks[0])
    };
    let mut out = Vec::with_capacity(ranks.len());
    match method {
        "factmle" => {
            for &r in ranks {
                let (_, trace) = solve(cov, &SolverConfig { rank: r, ..base.clone() })?;
                out.push(RankRun::new(replicate, method, r, &trace));
            }
        }
        "factmle-warm" => {
            for entry in solve_path(cov, ranks, &base)? {
                out.push(RankRun::new(replicate, method, entry.rank, &entry.trace));
            }
        }
        "em" => {
            for &r in ranks {
                let cfg = EmConfig {
                    max_iters: a.max_iters,
                    tol: a.tol,
                    seed,
                    ..EmConfig::new(r)
                };
                let (_, trace) = solve_em(cov, &cfg)?;
                out.push(RankRun::new(replicate, method, r, &trace));
            }
        }
        other => unreachable!("method {other} was validated"),
    }
    Ok(out)
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let k = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / k;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

pub fn benchmark(a: &BenchArgs) -> CliResult<u8> {
    if a.methods.is_empty() {
        return usage("--methods is empty");
    }
    for (i, m) in a.methods.iter().enumerate() {
        if !METHODS.contains(&m.as_str()) {
            return usage(format!("unknown method {m:?}; expected one of {}", METHODS.join(", ")));
        }
        if a.methods[..i].contains(m) {
            return usage(format!("method {m:?} listed twice"));
        }
    }
    if a.replicates == 0 {
        return usage("--replicates must be at least 1");
    }
    if a.tol_levels.is_empty() || a.tol_levels.iter().any(|&t| !(t > 0.0) || !t.is_finite()) {
        return usage("--tol-levels must be positive numbers");
    }
    let ranks = parse_ranks(&a.ranks)?;

    let shared = match &a.input {
        Some(path) => Some(load_path(path, a.input_kind, a.header)?),
        None => None,
    };
    let p = shared.as_ref().map_or(a.synthetic.p, CovarianceInput::p);
    for &r in &ranks {
        check_rank(r, p)?;
    }
    let specs = match shared {
        Some(_) => Vec::new(),
        None => (0..a.replicates)
            .map(|k| synthetic_spec(&a.synthetic, a.seed.wrapping_add(k as u64)))
            .collect::<CliResult<Vec<_>>>()?,
    };
    SolverConfig {
        eps: a.eps,
        tol: a.tol,
        max_iters: a.max_iters,
        ..SolverConfig::new(ranks[0])
    }
    .validate(p)
    .map_err(|e| CliError::Usage(e.to_string()))?;

    // Replicates are independent; collecting keeps them in index order.
    let per_replicate: Vec<CliResult<Vec<RankRun>>> = (0..a.replicates)
        .into_par_iter()
        .map(|k| {
            let owned;
            let cov = match &shared {
                Some(c) => c,
                None => {
                    owned = generate_synthetic(&specs[k])?.0;
                    &owned
                }
            };
            let mut runs = Vec::new();
            for m in &a.methods {
                runs.extend(run_method(cov, m, &ranks, a, k)?);
            }
            Ok(runs)
        })
        .collect();
    let mut runs = Vec::new();
    for r in per_replicate {
        runs.extend(r?);
    }

    // Replicates on a shared input are the same problem, so f_* pools them.
    let f_star = |replicate: usize, rank: usize| -> f64 {
        runs.iter()
            .filter(|r| r.rank == rank && (shared.is_some() || r.replicate == replicate))
            .map(RankRun::best)
            .fold(f64::INFINITY, f64::min)
    };

    let mut table = Vec::new();
    for &tol in &a.tol_levels {
        for m in &a.methods {
            let mut times = Vec::with_capacity(a.replicates);
            let mut reached = 0;
            for k in 0..a.replicates {
                let mut total = 0.0;
                let mut all = true;
                for run in runs.iter().filter(|r| r.replicate == k && &r.method == m) {
                    match run.time_to(f_star(k, run.rank), tol) {
                        Some(t) => total += t,
                        None => {
                            all = false;
                            total += run.wall_time;
                        }
                    }
                }
                reached += usize::from(all);
                times.push(total);
            }
            let (mean_time, stderr) = mean_stderr(&times);
            table.push(TableRow {
                tol,
                method: m.clone(),
                mean_time,
                stderr,
                reached,
                replicates: a.replicates,
            });
        }
    }

    let f_stars: Vec<_> = (0..if shared.is_some() { 1 } else { a.replicates })
        .map(|k| json!({"replicate": k, "values": ranks.iter().map(|&r| json!({"rank": r, "f_star": f_star(k, r)})).collect::<Vec<_>>()}))
        .collect();
    let report = json!({
        "schema": 1,
        "command": "benchmark",
        "config": {
            "input": a.input.as_ref().map(|p| p.display().to_string()),
            "synthetic": specs.first(),
            "ranks": ranks,
            "replicates": a.replicates,
            "methods": a.methods,
            "tol_levels": a.tol_levels,
            "tol": a.tol,
            "max_iters": a.max_iters,
            "eps": a.eps,
            "seed": a.seed,
        },
        "f_star": f_stars,
        "runs": runs,
        "table": table,
    });
    emit(a.out.as_deref(), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    Ok(0)
}
