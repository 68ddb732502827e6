use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

use npi_core::bench::{episode_seed, evaluate, render_trace, EvalReport};
use npi_core::search::QueryMode;
use npi_core::sort::SortInterface;
use npi_core::teachers::Teacher;
use npi_core::vm::{run_episode, Agent};
use npi_core::{CapRule, Task};
use npi_neural::{AnyPolicy, Policy, PolicyAgent};
use npi_train::bc::train_bc;
use npi_train::config::{ModelKind, TaskKind};
use npi_train::log::TrainLog;
use npi_train::rl::{compare_with_teacher, train_rl, validate, validation_sizes};
use npi_train::sweep::{grid, run_sweep, write_leaderboard};
use npi_train::verify::run_all;
use npi_train::TrainConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};

use crate::run::Run;
use crate::{Cli, CliError, Command, ConfigArgs, EvalArgs, GenArgs, SweepArgs, TaskArg, TeachArgs, TraceArgs, TrainRlArgs};

pub fn dispatch(cli: Cli) -> Result<(), CliError> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Other(e.to_string()))?;
    }
    let ctx = Ctx {
        seed: cli.seed,
        threads: cli.threads,
        root: cli.runs_dir.as_path(),
    };
    match cli.command {
        Command::Gen(a) => gen(&ctx, a),
        Command::Teach(a) => teach(&ctx, a),
        Command::TrainBc(a) => train_bc_cmd(&ctx, a),
        Command::TrainRl(a) => train_rl_cmd(&ctx, a),
        Command::Eval(a) => eval(&ctx, a),
        Command::Sweep(a) => sweep(&ctx, a),
        Command::Trace(a) => trace(&ctx, a),
        Command::Verify => verify(&ctx),
    }
}

struct Ctx<'a> {
    seed: Option<u64>,
    threads: Option<usize>,
    root: &'a Path,
}

impl Ctx<'_> {
    fn seed(&self) -> (u64, bool) {
        match self.seed {
            Some(s) => (s, false),
            None => (rand::random(), true),
        }
    }

    /// Runs `body` in a new run directory; the manifest is written even
    /// when `body` fails.
    fn with_run(
        &self,
        command: &str,
        seed: (u64, bool),
        body: impl FnOnce(&mut Run) -> Result<(), CliError>,
    ) -> Result<(), CliError> {
        let mut run = Run::create(self.root, command, seed.0, seed.1, self.threads)?;
        let result = body(&mut run);
        if let Err(e) = &result {
            run.manifest.warnings.push(format!("failed: {e}"));
        }
        run.finish()?;
        eprintln!("run directory: {}", run.dir.display());
        result
    }
}

fn query_mode(s: &str) -> Result<QueryMode, CliError> {
    s.parse().map_err(|_| CliError::Config(format!("unknown query mode {s:?}")))
}

fn cap_rule(s: &str) -> Result<CapRule, CliError> {
    s.parse().map_err(CliError::Config)
}

fn teacher(s: &str) -> Result<Teacher, CliError> {
    s.parse().map_err(CliError::Config)
}

fn default_cap(task: &Task) -> CapRule {
    match task {
        Task::Sort { interface: SortInterface::QuickSort, .. } => CapRule::TenSquared,
        Task::Sort { .. } => CapRule::Squared,
        Task::Search { .. } => CapRule::PerSize(4),
        Task::Knapsack => CapRule::PerSize(20),
    }
}

fn task_of(arg: TaskArg, interface: SortInterface, mode: QueryMode) -> Task {
    match arg {
        TaskArg::Sort => Task::sort(interface),
        TaskArg::Search => Task::search(mode),
        TaskArg::Knapsack => Task::Knapsack,
    }
}

fn check_teacher(arg: TaskArg, t: Teacher) -> Result<(), CliError> {
    let ok = match arg {
        TaskArg::Sort => t.sort_interface().is_some(),
        TaskArg::Search => matches!(t, Teacher::BinarySearch | Teacher::LinearSearch),
        TaskArg::Knapsack => t == Teacher::DfsKnapsack,
    };
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(format!("teacher {t} does not solve {arg:?}")))
    }
}

/// Config file, then `--set` overrides. An explicit seed key counts as a
/// seed choice; `--seed` wins over both.
fn load_config(args: &ConfigArgs, ctx: &Ctx) -> Result<(TrainConfig, (u64, bool)), CliError> {
    let mut cfg = TrainConfig::default();
    let mut seed_given = false;
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        seed_given |= text
            .lines()
            .any(|l| l.split_once('=').is_some_and(|(k, _)| k.trim() == "seed"));
        cfg.apply_text(&text)?;
    }
    for s in &args.sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set expects key=value, got {s:?}")))?;
        seed_given |= k.trim() == "seed";
        cfg.set(k, v)?;
    }
    let seed = match (ctx.seed, seed_given) {
        (Some(s), _) => (s, false),
        (None, true) => (cfg.seed, false),
        (None, false) => ctx.seed(),
    };
    cfg.seed = seed.0;
    cfg.validate()?;
    Ok((cfg, seed))
}

fn config_json(cfg: &TrainConfig) -> Value {
    let map: Map<String, Value> = cfg
        .to_string()
        .lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.to_string(), Value::String(v.to_string())))
        .collect();
    Value::Object(map)
}

fn load_checkpoint(path: &Path) -> Result<AnyPolicy, CliError> {
    if !path.is_file() {
        return Err(CliError::MissingCheckpoint(path.to_path_buf()));
    }
    Ok(AnyPolicy::load(path)?)
}

/// Points `cfg` at the task the checkpoint's instruction set belongs to.
fn adopt_schema(cfg: &mut TrainConfig, policy: &AnyPolicy) -> Result<(), CliError> {
    let (task, interface) = match policy.schema().name() {
        "bubble-insertion" => (TaskKind::Sort, Some(SortInterface::BubbleInsertion)),
        "quicksort" => (TaskKind::Sort, Some(SortInterface::QuickSort)),
        "full-view" => (TaskKind::Sort, Some(SortInterface::FullView)),
        "search" => (TaskKind::Search, None),
        "knapsack" => (TaskKind::Knapsack, None),
        other => return Err(CliError::Config(format!("checkpoint uses unknown instruction set {other}"))),
    };
    cfg.task = task;
    if let Some(i) = interface {
        cfg.interface = i;
    }
    cfg.model = match policy {
        AnyPolicy::Mlp(_) => ModelKind::Mlp,
        AnyPolicy::Gnn(_) => ModelKind::Gnn,
    };
    Ok(())
}

fn write_report(run: &mut Run, name: &str, report: &EvalReport) -> Result<(), CliError> {
    report.write_csv(File::create(run.artifact(name))?)?;
    Ok(())
}

fn write_json(run: &mut Run, name: &str, value: &Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    std::fs::write(run.artifact(name), text + "\n")?;
    Ok(())
}

fn gen(ctx: &Ctx, a: GenArgs) -> Result<(), CliError> {
    let mode = query_mode(&a.query_mode)?;
    let task = task_of(a.task, SortInterface::BubbleInsertion, mode);
    if a.sizes.contains(&0) {
        return Err(CliError::Config("sizes must be positive".into()));
    }
    ctx.with_run("gen", ctx.seed(), |run| {
        run.manifest.config = json!({"task": task.name(), "sizes": a.sizes, "count": a.count, "query_mode": mode.to_string()});
        let mut out = io::BufWriter::new(File::create(run.artifact("instances.txt"))?);
        for &n in &a.sizes {
            for k in 0..a.count {
                let mut rng = ChaCha8Rng::seed_from_u64(episode_seed(run.manifest.seed, n, k));
                writeln!(out, "{}", task.instance_line(n, &mut rng))?;
            }
        }
        out.flush()?;
        Ok(())
    })
}

fn teach(ctx: &Ctx, a: TeachArgs) -> Result<(), CliError> {
    let t = teacher(&a.teacher)?;
    check_teacher(a.task, t)?;
    let mode = query_mode(&a.query_mode)?;
    let interface = t.sort_interface().unwrap_or(SortInterface::BubbleInsertion);
    let task = task_of(a.task, interface, mode);
    let cap = match (&a.cap, a.budget) {
        (Some(c), _) => cap_rule(c)?,
        (None, Some(m)) => CapRule::PerSize(m),
        (None, None) => default_cap(&task),
    };
    if a.sizes.contains(&0) || a.episodes == 0 {
        return Err(CliError::Config("sizes and episodes must be positive".into()));
    }
    ctx.with_run("teach", ctx.seed(), |run| {
        let seed = run.manifest.seed;
        run.manifest.config = json!({
            "task": task, "teacher": t.name(), "sizes": a.sizes,
            "episodes": a.episodes, "cap": cap.to_string(),
        });
        let report = evaluate(t.name(), || t, &task, &a.sizes, a.episodes, cap, seed)?;
        write_report(run, "report.csv", &report)?;
        report.write_table_csv(File::create(run.artifact("table.csv"))?)?;
        if a.task == TaskArg::Search {
            let mut sens = EvalReport::default();
            for m in QueryMode::ALL {
                let label = format!("{t}@{m}");
                sens.extend(evaluate(&label, || t, &Task::search(m), &a.sizes, a.episodes, cap, seed)?);
            }
            write_report(run, "sensitivity.csv", &sens)?;
            sens.write_table_csv(io::stderr())?;
        }
        if a.traces > 0 {
            std::fs::create_dir_all(run.dir.join("traces"))?;
            for &n in &a.sizes {
                for e in 0..a.traces.min(a.episodes) {
                    let frames = episode_frames(&task, n, episode_seed(seed, n, e), cap, &mut { t })?;
                    let name = format!("traces/n{n}-e{e}.txt");
                    std::fs::write(run.artifact(&name), frames.join("\n"))?;
                }
            }
        }
        report.write_csv(io::stdout())?;
        Ok(())
    })
}

/// Runs one episode on the instance drawn from `seed` and renders it.
fn episode_frames(task: &Task, n: usize, seed: u64, cap: CapRule, agent: &mut dyn Agent) -> Result<Vec<String>, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut env = task.make_env(n, &mut rng);
    let trace = run_episode(env.as_mut(), agent, cap.cap(n), &mut rng)?;
    let mut fresh = task.make_env(n, &mut ChaCha8Rng::seed_from_u64(seed));
    let mut frames = render_trace(&trace, fresh.as_mut()).map_err(|e| CliError::Other(e.to_string()))?;
    frames.push(format!("outcome {:?} after {} steps", trace.outcome, trace.total_steps));
    Ok(frames)
}

fn train_bc_cmd(ctx: &Ctx, a: ConfigArgs) -> Result<(), CliError> {
    let (cfg, seed) = load_config(&a, ctx)?;
    ctx.with_run("train-bc", seed, |run| {
        run.manifest.config = config_json(&cfg);
        std::fs::write(run.artifact("config.txt"), cfg.to_string())?;
        let mut policy = cfg.build_policy(&mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
        let mut log = TrainLog::append(&run.artifact("log.csv"))?;
        let report = train_bc(&mut policy, &cfg, Some(&mut log))?;
        policy.to_checkpoint().save(&run.artifact("policy.ckpt"))?;
        let (v, eval) = validate(&policy, &cfg)?;
        write_report(run, "validation.csv", &eval)?;
        write_json(
            run,
            "report.json",
            &json!({
                "epochs": report.epochs, "updates": report.updates, "samples": report.samples,
                "final_agreement": report.final_agreement, "final_loss": report.final_loss,
                "converged": report.converged,
                "validation": {"solve_rate": v.solve_rate, "mean_length": v.mean_length},
            }),
        )?;
        println!(
            "epochs {} agreement {:.4} converged {} validation solve {:.1}% length {:.1}",
            report.epochs, report.final_agreement, report.converged, v.solve_rate, v.mean_length
        );
        Ok(())
    })
}

fn train_rl_cmd(ctx: &Ctx, a: TrainRlArgs) -> Result<(), CliError> {
    let (mut cfg, seed) = load_config(&a.config, ctx)?;
    let targets = a.targets.iter().map(|t| parse_target(t)).collect::<Result<Vec<_>, _>>()?;
    let init = a.init.as_deref().map(load_checkpoint).transpose()?;
    if let Some(p) = &init {
        adopt_schema(&mut cfg, p)?;
        cfg.validate()?;
    }
    ctx.with_run("train-rl", seed, |run| {
        run.manifest.config = config_json(&cfg);
        for w in cfg.off_grid() {
            run.warn(format!("outside the standard sweep grid: {w}"));
        }
        std::fs::write(run.artifact("config.txt"), cfg.to_string())?;
        let mut policy = match init {
            Some(p) => p,
            None => cfg.build_policy(&mut ChaCha8Rng::seed_from_u64(cfg.seed))?,
        };
        let mut log = TrainLog::append(&run.artifact("log.csv"))?;
        let report = train_rl(&mut policy, &cfg, Some(&mut log))?;
        policy.to_checkpoint().save(&run.artifact("policy.ckpt"))?;
        let mut sizes = validation_sizes(&cfg);
        sizes.extend(targets.iter().map(|&(n, _)| n));
        sizes.sort_unstable();
        sizes.dedup();
        let cap = CapRule::Absolute(cfg.episode_cap);
        let cmp = compare_with_teacher(&policy, &cfg, &sizes, cfg.eval_episodes, cap, cfg.seed)?;
        let mut shortfalls: Vec<String> = cmp
            .iter()
            .filter(|c| c.policy_solve_rate < 100.0 || c.length_ratio > 1.0)
            .map(|c| {
                format!(
                    "n={}: policy solves {:.1}% in {:.1} steps, teacher {:.1}% in {:.1}",
                    c.size, c.policy_solve_rate, c.policy_mean_length, c.teacher_solve_rate, c.teacher_mean_length
                )
            })
            .collect();
        let mut target_rows = Vec::new();
        for &(n, goal) in &targets {
            let c = cmp.iter().find(|c| c.size == n).expect("target sizes are evaluated");
            let met = c.policy_mean_length <= goal;
            if !met {
                shortfalls.push(format!(
                    "n={n}: policy mean length {:.1} misses the target {goal} (teacher {:.1})",
                    c.policy_mean_length, c.teacher_mean_length
                ));
            }
            target_rows.push(json!({"size": n, "target": goal, "policy_mean_length": c.policy_mean_length, "met": met}));
        }
        let validations: Vec<Value> = report
            .validations
            .iter()
            .map(|(u, v)| json!({"update": u, "solve_rate": v.solve_rate, "mean_length": v.mean_length}))
            .collect();
        write_json(
            run,
            "report.json",
            &json!({"updates": report.updates, "validations": validations, "teacher_comparison": cmp, "targets": target_rows, "shortfalls": shortfalls}),
        )?;
        for c in &cmp {
            println!(
                "n={} policy {:.1}% / {:.1} steps, teacher {:.1}% / {:.1} steps",
                c.size, c.policy_solve_rate, c.policy_mean_length, c.teacher_solve_rate, c.teacher_mean_length
            );
        }
        for s in &shortfalls {
            println!("shortfall: {s}");
        }
        Ok(())
    })
}

/// Parses `SIZE=LENGTH`.
fn parse_target(s: &str) -> Result<(usize, f64), CliError> {
    let bad = || CliError::Config(format!("invalid target {s:?}; expected SIZE=LENGTH"));
    let (n, len) = s.split_once('=').ok_or_else(bad)?;
    let n: usize = n.trim().parse().map_err(|_| bad())?;
    let len: f64 = len.trim().parse().map_err(|_| bad())?;
    if n == 0 || !len.is_finite() {
        return Err(bad());
    }
    Ok((n, len))
}

fn eval(ctx: &Ctx, a: EvalArgs) -> Result<(), CliError> {
    let policy = load_checkpoint(&a.checkpoint)?;
    let (mut cfg, seed) = load_config(&a.config, ctx)?;
    adopt_schema(&mut cfg, &policy)?;
    let task = cfg.build_task();
    let cap = match &a.cap {
        Some(c) => cap_rule(c)?,
        None => default_cap(&task),
    };
    if a.sizes.contains(&0) || a.episodes == 0 {
        return Err(CliError::Config("sizes and episodes must be positive".into()));
    }
    ctx.with_run("eval", seed, |run| {
        run.manifest.config = json!({
            "checkpoint": a.checkpoint, "task": task, "sizes": a.sizes,
            "episodes": a.episodes, "cap": cap.to_string(),
        });
        let report = evaluate("policy", || PolicyAgent::greedy(&policy), &task, &a.sizes, a.episodes, cap, seed.0)?;
        write_report(run, "report.csv", &report)?;
        report.write_csv(io::stdout())?;
        Ok(())
    })
}

fn sweep(ctx: &Ctx, a: SweepArgs) -> Result<(), CliError> {
    let (mut cfg, seed) = load_config(&a.config, ctx)?;
    let init = a.init.as_deref().map(load_checkpoint).transpose()?;
    if let Some(p) = &init {
        adopt_schema(&mut cfg, p)?;
        cfg.validate()?;
    }
    let gammas = if a.gammas.is_empty() { vec![cfg.gamma] } else { a.gammas.clone() };
    let steps = if a.n_steps.is_empty() { vec![cfg.n_steps] } else { a.n_steps.clone() };
    let points = grid(&a.lrs, &gammas, &a.entropies, &steps);
    let updates = a.updates.unwrap_or(cfg.updates);
    ctx.with_run("sweep", seed, |run| {
        run.manifest.config = json!({"base": config_json(&cfg), "grid": points, "seeds": a.seeds, "updates": updates});
        let rows = run_sweep(&cfg, &points, &a.seeds, updates, init.as_ref(), Some(&run.dir))?;
        for r in &rows {
            if let Some(p) = &r.checkpoint {
                run.manifest.artifacts.push(p.strip_prefix(&run.dir).unwrap_or(p).display().to_string());
            }
        }
        write_leaderboard(&rows, File::create(run.artifact("leaderboard.csv"))?)?;
        write_leaderboard(&rows, io::stdout())?;
        Ok(())
    })
}

fn trace(ctx: &Ctx, a: TraceArgs) -> Result<(), CliError> {
    let mode = query_mode(&a.query_mode)?;
    let (mut agent, task): (Box<dyn Agent + '_>, Task) = match (&a.teacher, &a.checkpoint) {
        (Some(name), _) => {
            let t = teacher(name)?;
            check_teacher(a.task, t)?;
            let interface = t.sort_interface().unwrap_or(SortInterface::BubbleInsertion);
            (Box::new(t), task_of(a.task, interface, mode))
        }
        (None, Some(path)) => {
            let policy = load_checkpoint(path)?;
            let mut cfg = TrainConfig { query_mode: mode, ..TrainConfig::default() };
            adopt_schema(&mut cfg, &policy)?;
            (Box::new(OwnedGreedy(policy)), cfg.build_task())
        }
        (None, None) => return Err(CliError::Config("trace needs --teacher or --checkpoint".into())),
    };
    let cap = match &a.cap {
        Some(c) => cap_rule(c)?,
        None => default_cap(&task),
    };
    if a.size == 0 {
        return Err(CliError::Config("size must be positive".into()));
    }
    ctx.with_run("trace", ctx.seed(), |run| {
        run.manifest.config = json!({"task": task, "size": a.size, "cap": cap.to_string(), "teacher": a.teacher, "checkpoint": a.checkpoint});
        let seed = run.manifest.seed;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        std::fs::write(run.artifact("instance.txt"), task.instance_line(a.size, &mut rng) + "\n")?;
        let frames = episode_frames(&task, a.size, seed, cap, agent.as_mut())?;
        let text = frames.join("\n");
        std::fs::write(run.artifact("trace.txt"), &text)?;
        println!("{text}");
        Ok(())
    })
}

struct OwnedGreedy(AnyPolicy);

impl Agent for OwnedGreedy {
    fn act(&mut self, obs: &npi_core::Observation, rng: &mut dyn rand::RngCore) -> npi_core::Instruction {
        PolicyAgent::greedy(&self.0).act(obs, rng)
    }
}

fn verify(ctx: &Ctx) -> Result<(), CliError> {
    ctx.with_run("verify", ctx.seed(), |run| {
        let results = run_all();
        let mut text = String::new();
        for r in &results {
            text.push_str(&format!(
                "{:<12} passed {:>5}  failed {}\n",
                r.name,
                r.passed,
                r.failures.len()
            ));
            for f in &r.failures {
                text.push_str(&format!("  - {f}\n"));
            }
        }
        std::fs::write(run.artifact("verify.txt"), &text)?;
        print!("{text}");
        match results.iter().filter(|r| !r.ok()).count() {
            0 => Ok(()),
            k => Err(CliError::Verify(k)),
        }
    })
}
