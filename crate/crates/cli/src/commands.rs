use std::fs;
use std::io::Write;
use std::path::Path;

use clap::ValueEnum;
use factmle::blockdiag::{block_model, solve_block, BlockConfig, BlockStructure};
use factmle::data_io::{generate_synthetic, load_csv, write_matrix_csv};
use factmle::model::recover_loadings;
use factmle::solver::solve;
use factmle::spectra::SpectrumOptions;
use factmle::variants::{solve_continuation, solve_path, solve_ridge, ContinuationConfig, RidgeConfig};
use factmle::{
    CovarianceInput, FactorModel, Init, InputMode, SolverConfig, SolverTrace, SpectrumStrategy, StopRule,
    SyntheticSpec, Termination,
};
use nalgebra::DVector;
use serde_json::{json, Map, Value};

use crate::args::{FitArgs, InputArgs, InputKind, PathArgs, SimArgs, SolveArgs, SpectrumKind, StopKind, SyntheticArgs};
use crate::{usage, CliError, CliResult};

pub fn load_input(input: &InputArgs) -> CliResult<CovarianceInput> {
    load_path(&input.input, input.input_kind, input.header)
}

pub fn load_path(path: &Path, kind: InputKind, header: bool) -> CliResult<CovarianceInput> {
    let mode = match kind {
        InputKind::Data => InputMode::DataMatrix,
        InputKind::Cov => InputMode::CovarianceMatrix,
    };
    load_csv(path, header, mode).map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))
}

pub fn check_rank(rank: usize, p: usize) -> CliResult<()> {
    if rank == 0 || rank >= p {
        return usage(format!("--rank must satisfy 1 <= r < p = {p}, got {rank}"));
    }
    Ok(())
}

/// Parses `1,2,5` or the inclusive range `1..8`.
pub fn parse_ranks(text: &str) -> CliResult<Vec<usize>> {
    let text = text.trim();
    let bad = || CliError::Usage(format!("cannot parse rank list {text:?}"));
    let ranks: Vec<usize> = if let Some((a, b)) = text.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().parse().map_err(|_| bad())?;
        (a..=b).collect()
    } else {
        text.split(',')
            .filter(|t| !t.trim().is_empty())
            .map(|t| t.trim().parse().map_err(|_| bad()))
            .collect::<CliResult<_>>()?
    };
    if ranks.is_empty() {
        return usage("rank list is empty");
    }
    if ranks.windows(2).any(|w| w[1] <= w[0]) {
        return usage("ranks must be strictly increasing");
    }
    Ok(ranks)
}

fn parse_init(text: &str, seed: u64, p: usize) -> CliResult<Init> {
    match text {
        "half" => Ok(Init::HalfDiagonal),
        "ones" => Ok(Init::WarmStart(DVector::from_element(p, 1.0))),
        "random" => Ok(Init::UniformRandom(seed)),
        _ => {
            if let Some(s) = text.strip_prefix("random:") {
                let seed = s.parse().map_err(|_| CliError::Usage(format!("bad seed in --init {text:?}")))?;
                Ok(Init::UniformRandom(seed))
            } else if let Some(path) = text.strip_prefix("warm:") {
                warm_start(Path::new(path), p)
            } else {
                usage(format!("unknown --init {text:?}; expected half, ones, random[:SEED] or warm:PATH"))
            }
        }
    }
}

/// Reads `psi` from a previous fit report and returns `φ = 1/ψ`.
fn warm_start(path: &Path, p: usize) -> CliResult<Init> {
    let doc: Value = serde_json::from_str(&fs::read_to_string(path)?)?;
    let psi: Vec<f64> = doc
        .get("psi")
        .and_then(Value::as_array)
        .map(|a| a.iter().filter_map(Value::as_f64).collect())
        .ok_or_else(|| CliError::Usage(format!("{}: no \"psi\" array", path.display())))?;
    if psi.len() != p || psi.iter().any(|&v| !(v > 0.0)) {
        return usage(format!("{}: psi must hold {p} positive values", path.display()));
    }
    Ok(Init::WarmStart(DVector::from_iterator(p, psi.iter().map(|v| 1.0 / v))))
}

fn spectrum_options(kind: SpectrumKind, seed: u64) -> SpectrumOptions {
    let strategy = match kind {
        SpectrumKind::Auto => None,
        SpectrumKind::Dense => Some(SpectrumStrategy::DenseFull),
        SpectrumKind::Gram => Some(SpectrumStrategy::GramThin),
        SpectrumKind::Iterative => Some(SpectrumStrategy::IterativeLowRank),
    };
    SpectrumOptions {
        strategy,
        seed,
        ..SpectrumOptions::default()
    }
}

pub fn solver_config(args: &SolveArgs, rank: usize, p: usize) -> CliResult<SolverConfig> {
    let config = SolverConfig {
        rank,
        eps: args.eps,
        tol: args.tol,
        max_iters: args.max_iters,
        init: parse_init(&args.init, args.seed, p)?,
        stop_rule: match args.stop {
            StopKind::Objective => StopRule::ObjectiveRelative,
            StopKind::Iterate => StopRule::IterateRelative,
        },
        spectrum: spectrum_options(args.spectrum, args.seed),
    };
    config.validate(p).map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(config)
}

pub fn exit_code(termination: Termination) -> u8 {
    match termination {
        Termination::Converged => 0,
        Termination::MaxIters => 2,
        Termination::Stalled => {
            eprintln!("warning: the objective increased; iteration stopped");
            1
        }
    }
}

pub fn termination_name(t: Termination) -> &'static str {
    match t {
        Termination::Converged => "converged",
        Termination::MaxIters => "max_iters",
        Termination::Stalled => "stalled",
    }
}

pub fn wall_time(trace: &SolverTrace) -> f64 {
    trace.elapsed.last().copied().unwrap_or(0.0)
}

fn value_name<T: ValueEnum>(v: &T) -> String {
    v.to_possible_value().map(|p| p.get_name().to_string()).unwrap_or_default()
}

/// Writes `text` to `out`, or to stdout.
pub fn emit(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(path) => fs::write(path, text)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
        }
    }
    Ok(())
}

fn model_fields(model: &FactorModel, body: &mut Map<String, Value>) {
    if let Value::Object(m) = model.to_json() {
        for (k, v) in m {
            if k != "schema" {
                body.insert(k, v);
            }
        }
    }
}

fn trace_fields(traces: &[SolverTrace], with_objectives: bool, body: &mut Map<String, Value>) {
    let last = traces.last().expect("at least one trace");
    body.insert("objective".into(), json!(last.final_objective()));
    body.insert("iterations".into(), json!(traces.iter().map(|t| t.iterations).sum::<usize>()));
    body.insert("wall_time".into(), json!(traces.iter().map(wall_time).sum::<f64>()));
    body.insert("termination".into(), json!(termination_name(last.termination)));
    body.insert("tie_iterations".into(), json!(traces.iter().map(|t| t.tie_iterations).sum::<usize>()));
    if with_objectives {
        let all: Vec<f64> = traces.iter().flat_map(|t| t.objectives.iter().copied()).collect();
        body.insert("objectives".into(), json!(all));
    }
}

pub fn fit(a: &FitArgs) -> CliResult<u8> {
    let cov = load_input(&a.input)?;
    let p = cov.p();
    check_rank(a.rank, p)?;
    let config = solver_config(&a.solve, a.rank, p)?;

    let mut body = Map::new();
    body.insert("schema".into(), json!(1));
    body.insert("command".into(), json!("fit"));
    body.insert(
        "config".into(),
        json!({
            "input": a.input.input.display().to_string(),
            "input_kind": value_name(&a.input.input_kind),
            "rank": a.rank,
            "eps": a.solve.eps,
            "tol": a.solve.tol,
            "max_iters": a.solve.max_iters,
            "init": a.solve.init,
            "seed": a.solve.seed,
            "stop": value_name(&a.solve.stop),
            "spectrum": value_name(&a.solve.spectrum),
            "ridge": a.ridge,
            "continuation": a.continuation,
            "eps_schedule": a.eps_schedule,
            "blocks": a.blocks,
        }),
    );

    let termination = if let Some(sizes) = &a.blocks {
        fit_blocks(&cov, a, sizes, &mut body)?
    } else if let Some(gamma) = a.ridge {
        let cfg = RidgeConfig {
            gamma,
            rank: a.rank,
            tol: config.tol,
            max_iters: config.max_iters,
            init: config.init.clone(),
            stop_rule: config.stop_rule,
            spectrum: config.spectrum.clone(),
        };
        cfg.validate(p).map_err(|e| CliError::Usage(e.to_string()))?;
        body.insert("variant".into(), json!("ridge"));
        let (phi, trace) = solve_ridge(&cov, &cfg)?;
        model_fields(&recover_loadings(&cov, &phi, a.rank)?, &mut body);
        trace_fields(std::slice::from_ref(&trace), a.trace, &mut body);
        trace.termination
    } else if a.continuation {
        let cc = ContinuationConfig {
            eps_schedule: a.eps_schedule.clone().unwrap_or_else(|| ContinuationConfig::default().eps_schedule),
            ..ContinuationConfig::default()
        };
        cc.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        body.insert("variant".into(), json!("continuation"));
        let out = solve_continuation(&cov, &config, &cc)?;
        model_fields(&recover_loadings(&cov, &out.phi, a.rank)?, &mut body);
        trace_fields(&out.traces, a.trace, &mut body);
        body.insert("pinned".into(), json!(out.pinned));
        out.traces.last().expect("non-empty schedule").termination
    } else {
        body.insert("variant".into(), json!("box"));
        let (phi, trace) = solve(&cov, &config)?;
        model_fields(&recover_loadings(&cov, &phi, a.rank)?, &mut body);
        trace_fields(std::slice::from_ref(&trace), a.trace, &mut body);
        trace.termination
    };

    let text = serde_json::to_string_pretty(&Value::Object(body))? + "\n";
    emit(a.out.as_deref(), &text)?;
    Ok(exit_code(termination))
}

fn fit_blocks(cov: &CovarianceInput, a: &FitArgs, sizes: &[usize], body: &mut Map<String, Value>) -> CliResult<Termination> {
    let p = cov.p();
    let structure = BlockStructure::new(sizes.to_vec(), p).map_err(|e| CliError::Usage(e.to_string()))?;
    if a.solve.init != "half" {
        return usage("--blocks supports only --init half");
    }
    let cfg = BlockConfig {
        rank: a.rank,
        tol: a.solve.tol,
        max_iters: a.solve.max_iters,
        init: None,
    };
    body.insert("variant".into(), json!("blocks"));
    let (phi, trace) = solve_block(cov, &structure, &cfg)?;
    let model = block_model(cov, &phi, a.rank)?;
    let psi_diag: Vec<f64> = model
        .psi_blocks
        .iter()
        .flat_map(|b| b.diagonal().iter().copied().collect::<Vec<_>>())
        .collect();
    body.insert("psi".into(), json!(psi_diag));
    body.insert(
        "psi_blocks".into(),
        json!(model
            .psi_blocks
            .iter()
            .map(|b| b.row_iter().map(|r| r.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>())
            .collect::<Vec<_>>()),
    );
    body.insert(
        "loadings".into(),
        json!(model
            .loadings
            .row_iter()
            .map(|r| r.iter().copied().collect::<Vec<_>>())
            .collect::<Vec<_>>()),
    );
    body.insert("neg_loglik".into(), json!(model.neg_loglik));
    body.insert("rank_used".into(), json!(model.rank_used));
    body.insert("r".into(), json!(a.rank));
    body.insert("p".into(), json!(p));
    body.insert("blocks".into(), json!(sizes));
    trace_fields(std::slice::from_ref(&trace), a.trace, body);
    Ok(trace.termination)
}

pub fn path(a: &PathArgs) -> CliResult<u8> {
    let cov = load_input(&a.input)?;
    let p = cov.p();
    let ranks = parse_ranks(&a.ranks)?;
    for &r in &ranks {
        check_rank(r, p)?;
    }
    let config = solver_config(&a.solve, ranks[0], p)?;
    let entries = solve_path(&cov, &ranks, &config)?;

    let mut text = String::from("r,objective,neg_loglik,iterations,time,termination,rank_used\n");
    let mut code = 0;
    for e in &entries {
        text += &format!(
            "{},{},{},{},{},{},{}\n",
            e.rank,
            e.trace.final_objective(),
            e.model.neg_loglik,
            e.trace.iterations,
            wall_time(&e.trace),
            termination_name(e.trace.termination),
            e.model.rank_used
        );
        code = code.max(match e.trace.termination {
            Termination::Converged => 0,
            Termination::MaxIters => 2,
            Termination::Stalled => 3,
        });
    }
    emit(a.out.as_deref(), &text)?;
    Ok(match code {
        3 => exit_code(Termination::Stalled),
        c => c,
    })
}

pub fn synthetic_spec(s: &SyntheticArgs, seed: u64) -> CliResult<SyntheticSpec> {
    let spec = SyntheticSpec {
        p: s.p,
        n: s.n,
        r0: s.r0,
        loading_mean: s.loading_mean,
        loading_var: s.loading_var,
        uniqueness_mean: s.uniqueness_mean,
        seed,
    };
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(spec)
}

pub fn simulate(a: &SimArgs) -> CliResult<u8> {
    let spec = synthetic_spec(&a.synthetic, a.seed)?;
    let (cov, truth) = generate_synthetic(&spec)?;
    write_matrix_csv(&a.out_data, cov.data().expect("synthetic data holds X"))?;
    fs::write(&a.out_truth, serde_json::to_string_pretty(&truth.to_json())? + "\n")?;
    let summary = json!({
        "schema": 1,
        "command": "simulate",
        "spec": spec,
        "data": a.out_data.display().to_string(),
        "truth": a.out_truth.display().to_string(),
    });
    emit(None, &(serde_json::to_string_pretty(&summary)? + "\n"))?;
    Ok(0)
}
