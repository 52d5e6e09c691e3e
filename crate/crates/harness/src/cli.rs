//! The `condenser` command line.
//!
//! Every subcommand prints one JSON object per result line on stdout. On
//! failure a single line `{"error":{"code":..,"message":..}}` goes to
//! stderr and the exit code is 2 for usage errors, 1 otherwise.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use condenser_core::backbone::{
    count_macs, count_params, micro_spec, reference_spec, strided_ablation, validate, without_aads, without_dcac,
    ArchitectureSpec, Network,
};
use condenser_core::explorer::{check_constraints, explore, ConstraintSet, SearchConfig};
use condenser_core::gradsuite::GradTarget;
use condenser_core::Rng;
use serde_json::{json, Value};

use crate::bench::{bench, BenchConfig};
use crate::checkpoint::{self, Checkpoint, TrainingMeta};
use crate::dataset::{synth_shapes, Dataset, DatasetSpec, Normalization};
use crate::error::{HarnessError, Result};
use crate::experiments::{robustness_row, shift_runs, TrainedEvaluator};
use crate::report::{append_csv, append_report, write_log};
use crate::specio::{pretty_json, read_spec, spec_digest, write_spec};
use crate::train::{deterministic_env, evaluate, train, Schedule, TrainConfig};

#[derive(Parser, Debug)]
#[command(name = "condenser", version, about = "Columnar attention-condenser backbones: build, train, measure, explore")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a stock architecture document.
    InitSpec {
        #[arg(long, value_enum, default_value_t = Preset::Reference)]
        preset: Preset,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check an architecture document and report its size and rule verdicts.
    Validate {
        spec: PathBuf,
        #[arg(long)]
        constraints: Option<PathBuf>,
    },
    /// Train from scratch and write a checkpoint.
    Train(TrainArgs),
    /// Top-1 accuracy of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Time inference and append a row to a report CSV.
    Bench {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        bench: BenchArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Constrained evolutionary architecture search.
    Explore(ExploreArgs),
    /// Finite-difference gradient checks; exit 0 iff every check passes.
    Gradcheck {
        /// One of conv, batchnorm, relu, sigmoid, linear, xent, maxpool,
        /// upsample, aads, dcac, backbone, or `all`.
        #[arg(long, default_value = "all")]
        module: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Benchmark plus evaluation of a checkpoint as one report row, or the
    /// shift-robustness comparison with `--robustness`.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    Reference,
    Micro,
    Strided,
    NoDcac,
    NoAads,
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// `synthetic` or a directory with one subdirectory per class.
    #[arg(long, default_value = "synthetic")]
    data: String,
    /// Samples per class for synthetic data.
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long)]
    data_seed: Option<u64>,
}

impl DataArgs {
    fn load(&self, res: condenser_core::backbone::InputRes, classes: usize, per_class: usize, seed: u64) -> Result<Dataset> {
        let spec = if self.data == "synthetic" {
            DatasetSpec::synthetic(self.per_class.unwrap_or(per_class), self.data_seed.unwrap_or(seed), res)
        } else {
            DatasetSpec {
                source: crate::dataset::DataSource::ImageDir {
                    path: PathBuf::from(&self.data),
                },
                resolution: res,
                num_classes: classes,
                normalization: Normalization::centered(res.c),
            }
        };
        spec.load()
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Held-out synthetic samples per class evaluated after every epoch;
    /// 0 disables monitoring.
    #[arg(long, default_value_t = 0)]
    monitor_per_class: usize,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 5e-4)]
    weight_decay: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = ScheduleArg::Cosine)]
    schedule: ScheduleArg,
    /// Stop once the monitored top-1 reaches this percent.
    #[arg(long)]
    target_top1: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScheduleArg {
    Constant,
    Cosine,
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
struct ModelArgs {
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

impl ModelArgs {
    fn load(&self) -> Result<Network<f32>> {
        match (&self.spec, &self.checkpoint) {
            (Some(s), _) => Ok(Network::build(read_spec(s)?, &mut Rng::new(0))?),
            (_, Some(c)) => checkpoint::load(c)?.into_network(),
            _ => unreachable!("clap requires one of --spec/--checkpoint"),
        }
    }
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, default_value_t = 1)]
    batch: usize,
    #[arg(long, default_value_t = 3)]
    warmup: usize,
    #[arg(long, default_value_t = 20)]
    iters: usize,
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

impl BenchArgs {
    fn config(&self) -> BenchConfig {
        BenchConfig {
            batch: self.batch,
            warmup: self.warmup,
            iters: self.iters,
            threads: self.threads,
            seed: 0,
        }
    }
}

#[derive(Args, Debug)]
struct ExploreArgs {
    #[arg(long, default_value_t = 8)]
    population: usize,
    #[arg(long, default_value_t = 4)]
    generations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Constraint set as JSON; the structural rules, hard, when omitted.
    #[arg(long)]
    constraints: Option<PathBuf>,
    /// Directory receiving `log.jsonl` and `best.json`.
    #[arg(long)]
    out: PathBuf,
    /// Training epochs per candidate.
    #[arg(long, default_value_t = 2)]
    epochs: usize,
    /// Synthetic training samples per class per candidate.
    #[arg(long, default_value_t = 20)]
    per_class: usize,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long, required_unless_present = "robustness")]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    bench: BenchArgs,
    /// Compare shift consistency of the reference architecture and its
    /// strided-convolution ablation instead.
    #[arg(long)]
    robustness: bool,
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long, default_value_t = 4)]
    max_shift: usize,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
}

fn emit(v: Value) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{v}");
}

fn load_constraints(path: Option<&Path>) -> Result<ConstraintSet> {
    match path {
        None => Ok(ConstraintSet::structural()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| HarnessError::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| HarnessError::json(p.display().to_string(), e))
        }
    }
}

fn preset(p: Preset) -> Result<ArchitectureSpec> {
    Ok(match p {
        Preset::Reference => reference_spec(),
        Preset::Micro => micro_spec(),
        Preset::Strided => strided_ablation(&reference_spec())?,
        Preset::NoDcac => without_dcac(&reference_spec())?,
        Preset::NoAads => without_aads(&reference_spec())?,
    })
}

fn run_validate(path: &Path, constraints: Option<&Path>) -> Result<i32> {
    let spec = read_spec(path)?;
    if let Err(violations) = validate(&spec) {
        let list: Vec<Value> = violations
            .iter()
            .map(|v| json!({"location": v.location, "rule": format!("{:?}", v.rule), "message": v.message}))
            .collect();
        emit(json!({"valid": false, "violations": list}));
        return Err(HarnessError::Core(condenser_core::Error::InvalidSpec(
            violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "),
        )));
    }
    let cs = load_constraints(constraints)?;
    let verdicts = check_constraints(&spec, None, &cs)?;
    emit(json!({
        "valid": true,
        "spec_digest": spec_digest(&spec)?,
        "params": count_params(&spec)?,
        "macs": count_macs(&spec)?,
        "verdicts": verdicts.0,
        "structurally_feasible": verdicts.feasible(&cs),
    }));
    Ok(0)
}

fn run_train(a: &TrainArgs) -> Result<i32> {
    let spec = read_spec(&a.spec)?;
    let mut net = Network::build(spec, &mut Rng::new(a.seed))?;
    let res = net.spec().input_res;
    let classes = net.spec().num_classes;
    let data = a.data.load(res, classes, 100, 1)?;
    let monitor = if a.monitor_per_class > 0 {
        Some(synth_shapes(a.monitor_per_class, a.data.data_seed.unwrap_or(1) + 1, res)?)
    } else {
        None
    };
    let cfg = TrainConfig {
        lr: a.lr,
        momentum: a.momentum,
        weight_decay: a.weight_decay,
        epochs: a.epochs,
        batch_size: a.batch,
        seed: a.seed,
        schedule: match a.schedule {
            ScheduleArg::Constant => Schedule::Constant,
            ScheduleArg::Cosine => Schedule::Cosine,
        },
        target_top1: a.target_top1,
    };
    let history = train(&mut net, &data, &cfg, monitor.as_ref())?;
    for m in &history {
        emit(serde_json::to_value(m).map_err(|e| HarnessError::json("metrics", e))?);
    }
    let meta = TrainingMeta {
        epoch: history.len(),
        seed: a.seed,
        metrics: history,
    };
    checkpoint::save(&a.out, &Checkpoint::from_network(&net, meta))?;
    emit(json!({"checkpoint": a.out, "deterministic": deterministic_env()}));
    Ok(0)
}

fn run_eval(path: &Path, data: &DataArgs, threads: usize) -> Result<i32> {
    let net = checkpoint::load(path)?.into_network()?;
    let set = data.load(net.spec().input_res, net.spec().num_classes, 200, 2)?;
    let top1 = evaluate(&net, &set, threads)?;
    emit(json!({"top1": top1, "samples": set.len(), "spec_digest": spec_digest(net.spec())?}));
    Ok(0)
}

fn run_bench(model: &ModelArgs, args: &BenchArgs, out: Option<&Path>) -> Result<i32> {
    let cfg = args.config();
    cfg.check()?;
    let net = model.load()?;
    let report = bench(&net, &cfg)?;
    if let Some(out) = out {
        append_report(out, &report, None)?;
    }
    emit(serde_json::to_value(&report).map_err(|e| HarnessError::json("bench report", e))?);
    Ok(0)
}

fn run_explore(a: &ExploreArgs) -> Result<i32> {
    let cs = load_constraints(a.constraints.as_deref())?;
    let cfg = SearchConfig {
        population: a.population,
        generations: a.generations,
        seed: a.seed,
        epochs: a.epochs,
        ..SearchConfig::default()
    };
    let res = cfg.space.input_res;
    let train_set = synth_shapes(a.per_class, a.seed.wrapping_add(1), res)?;
    let val = synth_shapes(a.per_class.max(10), a.seed.wrapping_add(2), res)?;
    let evaluator = TrainedEvaluator {
        train: &train_set,
        val: &val,
        recipe: TrainConfig {
            epochs: a.epochs,
            ..TrainConfig::default()
        },
        weights: cfg.weights,
        bench: BenchConfig {
            warmup: 1,
            iters: 10,
            ..BenchConfig::default()
        },
    };
    let result = explore(&cfg, &cs, |spec, seed| {
        evaluator
            .evaluate(spec, seed)
            .map_err(|e| condenser_core::Error::Search(format!("evaluation failed: {e}")))
    });
    std::fs::create_dir_all(&a.out).map_err(|e| HarnessError::io(&a.out, e))?;
    let outcome = result?;
    write_log(&a.out.join("log.jsonl"), &outcome.log)?;
    write_spec(&a.out.join("best.json"), &outcome.best.spec)?;
    let b = &outcome.best;
    emit(json!({
        "best": {"generation": b.generation, "index": b.index, "spec_digest": spec_digest(&b.spec)?,
                 "a": b.perf.a, "params": b.perf.params, "macs": b.perf.macs, "u": b.perf.u},
        "evaluated": outcome.log.len(),
        "out": a.out,
    }));
    Ok(0)
}

fn run_gradcheck(module: &str, seed: u64) -> Result<i32> {
    let targets: Vec<GradTarget> = if module == "all" {
        GradTarget::ALL.to_vec()
    } else {
        vec![GradTarget::from_name(module).ok_or_else(|| {
            let names: Vec<_> = GradTarget::ALL.iter().map(|t| t.name()).collect();
            HarnessError::Usage(format!("unknown module {module:?}; expected one of {} or all", names.join(", ")))
        })?]
    };
    let mut ok = true;
    for t in targets {
        let r = t.run(seed)?;
        let pass = r.passes(t.tolerance());
        ok &= pass;
        emit(json!({"module": t.name(), "max_rel_err": r.max_rel_err, "tolerance": t.tolerance(),
                    "checked": r.checked, "pass": pass}));
    }
    Ok(if ok { 0 } else { 1 })
}

fn run_report(a: &ReportArgs) -> Result<i32> {
    if a.robustness {
        let reference = reference_spec();
        let strided = strided_ablation(&reference)?;
        let res = reference.input_res;
        let train_set = a.data.load(res, reference.num_classes, 50, 1)?;
        let test = synth_shapes(50, a.data.data_seed.unwrap_or(1) + 1, res)?;
        let recipe = TrainConfig {
            epochs: a.epochs,
            ..TrainConfig::default()
        };
        let seeds: Vec<u64> = (0..a.seeds).collect();
        let mut rows = Vec::new();
        for (name, spec) in [("aads", &reference), ("strided", &strided)] {
            let runs = shift_runs(spec, &train_set, &test, &recipe, &seeds, a.max_shift)?;
            rows.push(robustness_row(name, spec, &runs, a.max_shift)?);
        }
        append_csv(&a.out, &rows)?;
        for r in &rows {
            emit(serde_json::to_value(r).map_err(|e| HarnessError::json("robustness row", e))?);
        }
        return Ok(0);
    }
    let path = a.checkpoint.as_ref().expect("clap enforces --checkpoint");
    let cfg = a.bench.config();
    cfg.check()?;
    let net = checkpoint::load(path)?.into_network()?;
    let set = a.data.load(net.spec().input_res, net.spec().num_classes, 200, 2)?;
    let top1 = evaluate(&net, &set, a.bench.threads)?;
    let b = bench(&net, &cfg)?;
    let run = append_report(&a.out, &b, Some(top1))?;
    emit(json!({"run": run, "top1": top1, "images_per_sec": b.images_per_sec, "p50_ms": b.p50_ms,
                "p95_ms": b.p95_ms, "out": a.out}));
    Ok(0)
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::InitSpec { preset: p, out } => {
            let spec = preset(p)?;
            match out {
                Some(path) => write_spec(&path, &spec)?,
                None => print!("{}", pretty_json(&spec)?),
            }
            Ok(0)
        }
        Command::Validate { spec, constraints } => run_validate(&spec, constraints.as_deref()),
        Command::Train(a) => run_train(&a),
        Command::Eval {
            checkpoint,
            data,
            threads,
        } => run_eval(&checkpoint, &data, threads),
        Command::Bench { model, bench, out } => run_bench(&model, &bench, out.as_deref()),
        Command::Explore(a) => run_explore(&a),
        Command::Gradcheck { module, seed } => run_gradcheck(&module, seed),
        Command::Report(a) => run_report(&a),
    }
}

fn error_line(code: &str, message: &str) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{}", json!({"error": {"code": code, "message": message}}));
}

/// Runs the CLI on `argv` (including the program name) and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            error_line("usage", first);
            return 2;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            error_line(e.code(), &e.to_string());
            if matches!(e, HarnessError::Usage(_)) {
                2
            } else {
                1
            }
        }
    }
}
