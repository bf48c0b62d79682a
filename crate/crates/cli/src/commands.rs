//! Subcommand implementations.

use std::io::Write;
use std::path::Path;

use hmor_core::geometry::ViewVector;
use hmor_core::gradcheck::{self, GradTarget};
use hmor_core::hmor::{enumerate_pairs, hmor_loss, RelationPairs};
use hmor_core::metrics::MetricAccumulator;
use hmor_core::solver::{Objective, Solver, TraceRow};
use hmor_core::synth::{generate_scene, perturb, Perturbation};
use hmor_core::terms::{TermContext, TermRegistry};
use hmor_core::Scene;
use log::{debug, info};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::inputs::{pair_inputs, ScenePair};
use crate::report::{self, EvalReport, GradCheckRecord, LossRecord, RefineRecord};
use crate::scene_file::{load_scene, scene_to_json};
use crate::{Format, GenArgs, GradcheckArgs, PairArgs, RefineArgs};

pub struct Context {
    pub config: RunConfig,
    pub registry: TermRegistry,
    pub jobs: usize,
    pub format: Format,
}

/// Maps `f` over `items` on `jobs` threads. Results keep input order, and the
/// first error in input order wins, so output never depends on scheduling.
fn par_map<T, R, F>(jobs: usize, items: &[T], f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Validation(format!("cannot start {jobs} worker threads: {e}")))?;
    pool.install(|| items.par_iter().map(&f).collect::<Vec<_>>())
        .into_iter()
        .collect()
}

/// Index-aligned prediction and ground truth, as `loss` and `refine` need.
fn check_matched(pred: &Scene, gt: &Scene) -> Result<()> {
    let (a, b) = (pred.topology(), gt.topology());
    let mut diffs = Vec::new();
    if a.joint_count() != b.joint_count() {
        diffs.push(format!(
            "topology.joints: {} vs {}",
            a.joint_count(),
            b.joint_count()
        ));
    }
    if a.root_index() != b.root_index() {
        diffs.push(format!(
            "topology.root_index: {} vs {}",
            a.root_index(),
            b.root_index()
        ));
    }
    if a.parts() != b.parts() {
        diffs.push("topology.parts differ".to_string());
    }
    if pred.len() != gt.len() {
        diffs.push(format!("persons: {} vs {}", pred.len(), gt.len()));
    }
    if diffs.is_empty() {
        Ok(())
    } else {
        Err(CliError::Validation(format!(
            "prediction and ground truth do not match ({})",
            diffs.join("; ")
        )))
    }
}

fn load_pair(pair: &ScenePair) -> Result<(Scene, Scene)> {
    Ok((load_scene(&pair.pred)?, load_scene(&pair.gt)?))
}

pub fn gen(ctx: Context, args: &GenArgs, stdout: &mut dyn Write) -> Result<()> {
    let mut spec = ctx.config.gen.clone();
    if let Some(n) = args.persons {
        spec.n_persons = n;
    }
    spec.validate()?;
    if args.count == 0 {
        return Err(CliError::Validation("--count must be at least 1".into()));
    }
    let seeds: Vec<u64> = (0..args.count as u64)
        .map(|i| spec.seed.wrapping_add(i))
        .collect();
    let scenes = par_map(ctx.jobs, &seeds, |&seed| {
        let s = hmor_core::synth::GenSpec {
            seed,
            ..spec.clone()
        };
        let gt = generate_scene(&s)?;
        let pred = match s.perturbation {
            Perturbation::None => None,
            _ => Some(perturb(&gt, &s)?),
        };
        Ok((gt, pred))
    })?;

    let gt_dir = report::create_dir(&args.out.join("gt"))?;
    let pred_dir = if spec.perturbation != Perturbation::None {
        Some(report::create_dir(&args.out.join("pred"))?)
    } else {
        None
    };
    for (i, (gt, pred)) in scenes.iter().enumerate() {
        let name = format!("scene-{i:04}.json");
        report::write_file(&gt_dir.join(&name), scene_to_json(gt).as_bytes())?;
        if let (Some(dir), Some(pred)) = (&pred_dir, pred) {
            report::write_file(&dir.join(&name), scene_to_json(pred).as_bytes())?;
        }
        debug!("wrote {name}");
    }
    let line = format!(
        "generated {} scene(s) with seed {} into {}\n",
        args.count,
        spec.seed,
        args.out.display()
    );
    report::emit(line.as_bytes(), None, stdout)
}

fn loss_views(config: &RunConfig, gt: &Scene) -> Vec<ViewVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.loss.view_seed);
    std::iter::once(gt.camera.normal_view())
        .chain((0..config.loss.extra_views).map(|_| ViewVector::sample(&mut rng)))
        .collect()
}

fn scene_loss(ctx: &Context, name: &str, pred: &Scene, gt: &Scene) -> Result<LossRecord> {
    check_matched(pred, gt)?;
    let hmor = &ctx.config.hmor;
    let views = loss_views(&ctx.config, gt);
    let pairs = views
        .iter()
        .map(|v| enumerate_pairs(gt, v, hmor))
        .collect::<hmor_core::Result<Vec<RelationPairs>>>()?;
    let share = 1.0 / pairs.len() as f64;
    let (mut total, mut instance, mut part, mut joint) = (0.0, 0.0, 0.0, 0.0);
    for p in &pairs {
        let l = hmor_loss(pred, p, hmor)?;
        total += share * l.total;
        instance += share * l.instance;
        part += share * l.part;
        joint += share * l.joint;
    }
    let term_ctx = TermContext {
        anchors: gt,
        pairs: &pairs,
        hmor,
    };
    let term = |name: &str| -> Result<f64> {
        Ok(ctx.registry.create(name)?.evaluate(pred, &term_ctx)?.value)
    };
    let objective = Objective::from_weights(&ctx.registry, &ctx.config.solver.weights)?
        .evaluate(pred, &term_ctx)?;
    Ok(LossRecord {
        scene: name.to_string(),
        views: views.len(),
        hmor_total: total,
        hmor_instance: instance,
        hmor_part: part,
        hmor_joint: joint,
        pose: term("pose")?,
        init: term("init")?,
        refine: term("refine")?,
        abs: term("abs")?,
        objective: objective.value,
    })
}

pub fn loss(ctx: Context, args: &PairArgs, stdout: &mut dyn Write) -> Result<()> {
    ctx.config.validate(&ctx.registry)?;
    let pairs = pair_inputs(&args.pred, &args.gt)?;
    let records = par_map(ctx.jobs, &pairs, |pair| {
        let (pred, gt) = load_pair(pair)?;
        scene_loss(&ctx, &pair.name, &pred, &gt).map_err(|e| e.in_scene(&pair.name))
    })?;
    report::emit(
        &report::render(&records, ctx.format),
        args.out.as_deref(),
        stdout,
    )
}

fn trace_csv(rows: &[TraceRow]) -> Vec<u8> {
    report::csv(rows)
}

pub fn refine(ctx: Context, args: &RefineArgs, stdout: &mut dyn Write) -> Result<()> {
    let mut config = ctx.config.clone();
    if let Some(steps) = args.steps {
        config.solver.steps = steps;
    }
    config.validate(&ctx.registry)?;
    let solver = Solver::new(config.solver.clone(), config.hmor.clone(), &ctx.registry)?;
    let pairs = pair_inputs(&args.pred, &args.gt)?;
    let runs = par_map(ctx.jobs, &pairs, |pair| {
        let (pred, gt) = load_pair(pair)?;
        check_matched(&pred, &gt).map_err(|e| e.in_scene(&pair.name))?;
        let run = solver
            .refine(&pred, &gt)
            .map_err(|e| CliError::from(e).in_scene(&pair.name))?;
        info!(
            "{}: objective {:.6} -> {:.6}",
            pair.name,
            run.trace[0].value,
            run.trace.last().map_or(f64::NAN, |r| r.value)
        );
        Ok(run)
    })?;

    let out = report::create_dir(&args.out)?;
    let mut records = Vec::with_capacity(runs.len());
    for (pair, run) in pairs.iter().zip(&runs) {
        report::write_file(&out.join(&pair.name), scene_to_json(&run.scene).as_bytes())?;
        report::write_file(
            &out.join(format!("{}.trace.csv", pair.stem())),
            &trace_csv(&run.trace),
        )?;
        let (first, last) = (
            run.trace[0],
            *run.trace.last().expect("trace includes step 0"),
        );
        records.push(RefineRecord {
            scene: pair.name.clone(),
            steps: last.step,
            initial_value: first.value,
            final_value: last.value,
            initial_violations: first.violations,
            final_violations: last.violations,
        });
    }
    report::emit(&report::render(&records, ctx.format), None, stdout)
}

pub fn eval(ctx: Context, args: &PairArgs, stdout: &mut dyn Write) -> Result<()> {
    ctx.config.validate(&ctx.registry)?;
    let pairs = pair_inputs(&args.pred, &args.gt)?;
    let metrics = &ctx.config.metrics;
    let partial = par_map(ctx.jobs, &pairs, |pair| {
        let (pred, gt) = load_pair(pair)?;
        let mut acc = MetricAccumulator::new(metrics)?;
        acc.add_scene(&pred, &gt, &ctx.config.hmor)
            .map_err(|e| CliError::from(e).in_scene(&pair.name))?;
        Ok(acc)
    })?;
    let mut total = MetricAccumulator::new(metrics)?;
    for acc in &partial {
        total.merge(acc)?;
    }
    let report = EvalReport::new(pairs.len(), total.finish());
    match &args.out {
        Some(dir) => write_eval_files(dir, &report),
        None => {
            let bytes = match ctx.format {
                Format::Json => report::json(&report),
                Format::Csv => report::csv(std::slice::from_ref(&report.summary)),
            };
            report::emit(&bytes, None, stdout)
        }
    }
}

/// `metrics.json`, `metrics.csv` and the plot-ready `pck_curve.csv`.
fn write_eval_files(dir: &Path, report: &EvalReport) -> Result<()> {
    let dir = report::create_dir(dir)?;
    report::write_file(&dir.join("metrics.json"), &report::json(report))?;
    report::write_file(
        &dir.join("metrics.csv"),
        &report::csv(std::slice::from_ref(&report.summary)),
    )?;
    report::write_file(&dir.join("pck_curve.csv"), &report::csv(&report.pck_curve))
}

pub fn gradcheck(ctx: Context, args: &GradcheckArgs, stdout: &mut dyn Write) -> Result<bool> {
    let mut opts = ctx.config.gradcheck.clone();
    opts.cases = args.cases.unwrap_or(opts.cases);
    opts.step = args.step.unwrap_or(opts.step);
    opts.tolerance = args.tolerance.unwrap_or(opts.tolerance);
    let config = RunConfig {
        gradcheck: opts.clone(),
        ..ctx.config.clone()
    };
    config.validate(&ctx.registry)?;
    let reports = par_map(ctx.jobs, &GradTarget::ALL, |&t| {
        Ok(gradcheck::run(t, opts.cases, opts.seed, opts.step)?)
    })?;
    let records: Vec<GradCheckRecord> = reports
        .iter()
        .map(|r| GradCheckRecord::new(r, opts.tolerance))
        .collect();
    for r in records.iter().filter(|r| !r.passed) {
        log::error!(
            "{}: max relative error {:e} >= {:e}",
            r.target,
            r.max_relative_error,
            r.tolerance
        );
    }
    report::emit(
        &report::render(&records, ctx.format),
        args.out.as_deref(),
        stdout,
    )?;
    Ok(records.iter().all(|r| r.passed))
}
