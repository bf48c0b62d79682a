//! Acceptance checks, one line per criterion. Runs without the libtest
//! harness so the report prints in order; exits nonzero if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::Parser;
use hmor_cli::Cli;
use hmor_core::depth::{equivalent_depth, normalize_depth, recover_absolute_depth};
use hmor_core::geometry::project_to_plane;
use hmor_core::gradcheck::{self, GradTarget};
use hmor_core::hmor::{enumerate_pairs, err_instance, hmor_loss, LevelWeights};
use hmor_core::metrics::{assign_min_cost, auc, mpjpe, pck, Alignment, MatchCost, ThresholdGrid};
use hmor_core::solver::{FreeVariables, Objective};
use hmor_core::synth::{generate_scene, perturb, perturb_with, GenSpec, Perturbation};
use hmor_core::terms::TermContext;
use hmor_core::{
    AbsolutePose, Camera, HmorConfig, RelationLabel, Scene, Solver, SolverConfig, TermRegistry,
    Vec3, ViewVector,
};
use nalgebra::{Rotation3, Unit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_s, || {
        format!("took {:.1}s, limit {limit_s}s", elapsed.as_secs_f64())
    })
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn vec_rel_err(a: &Vec3, b: &Vec3) -> f64 {
    (a - b).norm() / b.norm()
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

fn zero_on_truth() -> Outcome {
    let start = Instant::now();
    let registry = TermRegistry::builtin();
    let weights: BTreeMap<String, f64> = registry.names().map(|n| (n.to_string(), 1.0)).collect();
    let objective = Objective::from_weights(&registry, &weights).map_err(e)?;
    let hmor = HmorConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut pairs_seen = 0;
    for i in 0..200u64 {
        let spec = GenSpec {
            seed: 1000 + i,
            n_persons: 1 + (i % 4) as usize,
            ..GenSpec::default()
        };
        let gt = generate_scene(&spec).map_err(e)?;
        let views: Vec<ViewVector> = (0..32).map(|_| ViewVector::sample(&mut rng)).collect();
        let pairs = views
            .iter()
            .map(|v| enumerate_pairs(&gt, v, &hmor))
            .collect::<Result<Vec<_>, _>>()
            .map_err(e)?;
        for p in &pairs {
            pairs_seen += p.total_len();
            let loss = hmor_loss(&gt, p, &hmor).map_err(e)?;
            ensure(loss.total == 0.0, || {
                format!("scene {i}: HMOR loss {loss:?}")
            })?;
        }
        let ctx = TermContext {
            anchors: &gt,
            pairs: &pairs,
            hmor: &hmor,
        };
        let value = objective.evaluate(&gt, &ctx).map_err(e)?;
        ensure(value.value == 0.0, || {
            format!("scene {i}: objective {:?}", value.terms)
        })?;
    }
    within(start.elapsed(), 10.0)?;
    Ok(format!(
        "200 scenes x 32 views, {pairs_seen} labelled pairs, all losses 0"
    ))
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let mut worst = (0.0f64, "");
    for target in GradTarget::ALL {
        let report = gradcheck::run(target, 100, 2024, 1e-5).map_err(e)?;
        ensure(report.cases == 100, || {
            format!("{target}: {} cases", report.cases)
        })?;
        ensure(report.max_relative_error < 1e-5, || {
            format!(
                "{target}: max relative error {:.3e}",
                report.max_relative_error
            )
        })?;
        if report.max_relative_error > worst.0 {
            worst = (report.max_relative_error, target.name());
        }
    }
    within(start.elapsed(), 30.0)?;
    Ok(format!(
        "8 functions x 100 points, worst {:.2e} ({})",
        worst.0, worst.1
    ))
}

fn round_trips() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut proj_worst, mut depth_worst) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let camera = Camera::new(
            rng.random_range(300.0..3000.0),
            rng.random_range(300.0..3000.0),
            rng.random_range(100.0..1000.0),
            rng.random_range(100.0..1000.0),
        )
        .map_err(e)?;
        let (u, v) = (rng.random_range(0.0..2000.0), rng.random_range(0.0..2000.0));
        let z = rng.random_range(200.0..20000.0);
        let x = camera.back_project(u, v, z).map_err(e)?;
        let (u2, v2) = camera.project(&x).map_err(e)?;
        proj_worst = proj_worst.max(rel_err(u2, u)).max(rel_err(v2, v));
        let back = camera.back_project(u2, v2, x.z).map_err(e)?;
        proj_worst = proj_worst.max(vec_rel_err(&back, &x));

        let (a_box, a_roi) = (rng.random_range(1e2..1e5), rng.random_range(1e2..1e5));
        let z_eq =
            equivalent_depth(normalize_depth(z, &camera).map_err(e)?, a_box, a_roi).map_err(e)?;
        let z2 = recover_absolute_depth(0.0, z_eq, &camera, a_box, a_roi).map_err(e)?;
        depth_worst = depth_worst.max(rel_err(z2, z));
    }
    ensure(proj_worst < 1e-9, || {
        format!("projection round trip error {proj_worst:.3e}")
    })?;
    ensure(depth_worst < 1e-9, || {
        format!("depth round trip error {depth_worst:.3e}")
    })?;
    Ok(format!(
        "1000 + 1000 cases, worst {proj_worst:.2e} / {depth_worst:.2e}"
    ))
}

fn planar_cross() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = *ViewVector::sample(&mut rng).direction();
        let mut r = || {
            Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
        };
        let (t1, t2) = (r() * 500.0, r() * 500.0);
        let full = t1.cross(&t2).dot(&n);
        let planar = project_to_plane(&t1, &n)
            .cross(&project_to_plane(&t2, &n))
            .dot(&n);
        worst = worst.max((full - planar).abs() / (t1.norm() * t2.norm()));
    }
    ensure(worst < 1e-9, || {
        format!("planar cross mismatch {worst:.3e}")
    })?;
    Ok(format!("1000 pairs, worst {worst:.2e}"))
}

fn centroid(pose: &AbsolutePose) -> Vec3 {
    pose.joints().iter().sum::<Vec3>() / pose.len() as f64
}

fn log_values() -> Outcome {
    let view = ViewVector::camera_axis();
    let (a, b) = (Vec3::new(0.0, 0.0, 3.0), Vec3::new(0.0, 0.0, 2.5));
    let single = err_instance(&a, &b, RelationLabel::from_gap(-1.0, 0.0), &view);
    ensure(
        (single - 0.405465).abs() <= 1e-6 && (single - 1.5f64.ln()).abs() < 1e-9,
        || format!("0.5 m swap gives {single}"),
    )?;

    let gt = generate_scene(&GenSpec {
        seed: 5,
        ..GenSpec::default()
    })
    .map_err(e)?;
    let pred = perturb_with(
        &gt,
        &Perturbation::DepthSwap {
            pairs: vec![(0, 1)],
        },
        0,
    )
    .map_err(e)?;
    let config = HmorConfig {
        weights: LevelWeights {
            instance: 1.0,
            part: 0.0,
            joint: 0.0,
        },
        ..HmorConfig::default()
    };
    let pairs = enumerate_pairs(&gt, &gt.camera.normal_view(), &config).map_err(e)?;
    let loss = hmor_loss(&pred, &pairs, &config).map_err(e)?;
    let (gp, pp) = (
        gt.absolute_poses().map_err(e)?,
        pred.absolute_poses().map_err(e)?,
    );
    let front = if centroid(&gp[0]).z < centroid(&gp[1]).z {
        0
    } else {
        1
    };
    let gap = (centroid(&pp[front]).z - centroid(&pp[1 - front]).z) * 1e-3;
    ensure(
        gap > 0.0 && (loss.instance - gap.ln_1p()).abs() < 1e-9,
        || format!("swap fixture: loss {} vs log(1 + {gap})", loss.instance),
    )?;
    Ok(format!(
        "log(1.5) = {single:.9}, swap fixture {:.9} = log(1 + {gap:.4})",
        loss.instance
    ))
}

fn greedy_cost(cost: &[[f64; 3]; 3]) -> f64 {
    let (mut rows, mut cols) = ([false; 3], [false; 3]);
    let mut total = 0.0;
    for _ in 0..3 {
        let mut best = (f64::INFINITY, 0, 0);
        for r in (0..3).filter(|&r| !rows[r]) {
            for c in (0..3).filter(|&c| !cols[c]) {
                if cost[r][c] < best.0 {
                    best = (cost[r][c], r, c);
                }
            }
        }
        total += best.0;
        rows[best.1] = true;
        cols[best.2] = true;
    }
    total
}

fn metrics() -> Outcome {
    let spec = GenSpec {
        seed: 6,
        n_persons: 3,
        perturbation: Perturbation::Gauss {
            sigma_xy_mm: 40.0,
            sigma_z_mm: 200.0,
        },
        ..GenSpec::default()
    };
    let gt = generate_scene(&spec).map_err(e)?;
    let pred = perturb(&gt, &spec).map_err(e)?;
    let grid = ThresholdGrid::default();
    let thresholds = grid.thresholds().map_err(e)?;
    let curve = thresholds
        .iter()
        .map(|&t| pck(&pred, &gt, Alignment::Root, t, MatchCost::RootAligned3d))
        .collect::<Result<Vec<_>, _>>()
        .map_err(e)?;
    let mean = curve.iter().sum::<f64>() / curve.len() as f64;
    let area = auc(&pred, &gt, &grid, MatchCost::RootAligned3d).map_err(e)?;
    ensure(area == mean, || format!("AUC {area} vs mean PCK {mean}"))?;

    const PERMS: [[usize; 3]; 6] = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut strictly_better = 0;
    for case in 0..1000 {
        let cost: [[f64; 3]; 3] =
            std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(0.0..100.0)));
        let rows: Vec<Vec<f64>> = cost.iter().map(|r| r.to_vec()).collect();
        let assigned = assign_min_cost(&rows);
        let optimal: f64 = assigned
            .iter()
            .enumerate()
            .map(|(r, c)| {
                c.map(|c| cost[r][c])
                    .ok_or_else(|| format!("case {case}: row {r} unmatched"))
            })
            .sum::<Result<f64, String>>()?;
        let brute = PERMS
            .iter()
            .map(|p| (0..3).map(|r| cost[r][p[r]]).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        let greedy = greedy_cost(&cost);
        ensure(
            (optimal - brute).abs() < 1e-9 && optimal <= greedy + 1e-12,
            || format!("case {case}: optimal {optimal}, enumeration {brute}, greedy {greedy}"),
        )?;
        if optimal < greedy - 1e-12 {
            strictly_better += 1;
        }
    }

    let pose = &gt.absolute_poses().map_err(e)?[0];
    let axis = Unit::new_normalize(Vec3::new(0.3, -1.0, 0.4));
    let rotation = Rotation3::from_axis_angle(&axis, 0.8);
    let copy = AbsolutePose::new(
        pose.joints()
            .iter()
            .map(|j| rotation * j * 1.7 + Vec3::new(100.0, -50.0, 2000.0))
            .collect(),
    )
    .map_err(e)?;
    let pa = mpjpe(
        &copy,
        pose,
        Alignment::Procrustes,
        gt.topology().root_index(),
    )
    .map_err(e)?;
    ensure(pa < 1e-6, || format!("PA-MPJPE of a similar copy {pa:.3e}"))?;
    Ok(format!(
        "AUC = mean PCK = {area:.6}; optimal <= greedy in 1000/1000 ({strictly_better} strictly); PA-MPJPE {pa:.1e}"
    ))
}

fn abs_mpjpe(pred: &Scene, gt: &Scene) -> Result<f64, String> {
    let (p, g) = (
        pred.absolute_poses().map_err(e)?,
        gt.absolute_poses().map_err(e)?,
    );
    let root = gt.topology().root_index();
    let sum = p
        .iter()
        .zip(&g)
        .map(|(a, b)| mpjpe(a, b, Alignment::None, root))
        .sum::<Result<f64, _>>()
        .map_err(e)?;
    Ok(sum / p.len() as f64)
}

fn ablation_solver(hmor_weight: f64, seed: u64, registry: &TermRegistry) -> Result<Solver, String> {
    let config = SolverConfig {
        steps: 300,
        step_size: 1e-3,
        views_per_step: 4,
        free_variables: FreeVariables::RootDepthsOnly,
        seed,
        ..SolverConfig::default()
    }
    .with_weights([
        ("pose", 1.0),
        ("init", 1.0),
        ("refine", 1.0),
        ("hmor", hmor_weight),
    ]);
    let hmor = HmorConfig {
        weights: LevelWeights {
            instance: 1.0,
            part: 0.0,
            joint: 0.0,
        },
        ..HmorConfig::default()
    };
    Solver::new(config, hmor, registry).map_err(e)
}

fn ablation() -> Outcome {
    let start = Instant::now();
    let registry = TermRegistry::builtin();
    let (mut baseline, mut refined, mut clean) = (0.0, 0.0, 0);
    let scenes = 100;
    for seed in 0..scenes {
        let spec = GenSpec {
            seed,
            n_persons: 4,
            perturbation: Perturbation::Gauss {
                sigma_xy_mm: 0.0,
                sigma_z_mm: 300.0,
            },
            ..GenSpec::default()
        };
        let gt = generate_scene(&spec).map_err(e)?;
        let pred = perturb(&gt, &spec).map_err(e)?;
        let off = ablation_solver(0.0, seed, &registry)?
            .refine(&pred, &gt)
            .map_err(e)?;
        let on = ablation_solver(1000.0, seed, &registry)?
            .refine(&pred, &gt)
            .map_err(e)?;
        baseline += abs_mpjpe(&off.scene, &gt)?;
        refined += abs_mpjpe(&on.scene, &gt)?;
        if on.trace.last().is_some_and(|r| r.violations == 0) {
            clean += 1;
        }
    }
    let (baseline, refined) = (baseline / scenes as f64, refined / scenes as f64);
    let reduction = 100.0 * (1.0 - refined / baseline);
    let summary = format!(
        "ABS-MPJPE {baseline:.1} -> {refined:.1} mm ({reduction:.1}% lower), {clean}/{scenes} scenes without instance violations, {:.1}s",
        start.elapsed().as_secs_f64()
    );
    ensure(reduction >= 30.0, || {
        format!("{summary}: reduction below 30%")
    })?;
    ensure(clean * 100 >= 95 * scenes, || {
        format!("{summary}: too few clean scenes")
    })?;
    within(start.elapsed(), 300.0)?;
    Ok(summary)
}

fn cli(args: &[&str]) -> Result<Vec<u8>, String> {
    let parsed =
        Cli::try_parse_from(std::iter::once("hmor").chain(args.iter().copied())).map_err(e)?;
    let mut stdout = Vec::new();
    hmor_cli::run(&parsed, &mut stdout).map_err(e)?;
    Ok(stdout)
}

fn snapshot(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(e)? {
            let path = entry.map_err(e)?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let name = path.strip_prefix(dir).map_err(e)?.display().to_string();
                files.push((name, fs::read(&path).map_err(e)?));
            }
        }
    }
    files.sort();
    Ok(files)
}

fn pipeline(root: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let config = root.join("run.toml");
    fs::write(
        &config,
        "[gen]\nn_persons = 3\nperturbation = { kind = \"gauss\", sigma_xy_mm = 20.0, sigma_z_mm = 300.0 }\n\
         [solver]\nsteps = 50\nviews_per_step = 2\nweights = { init = 1.0, refine = 1.0, hmor = 1.0 }\n",
    )
    .map_err(e)?;
    let s = |p: &Path| p.display().to_string();
    let (cfg, scenes, refined) = (
        s(&config),
        s(&root.join("scenes")),
        s(&root.join("refined")),
    );
    let mut out = cli(&[
        "gen", "--config", &cfg, "--seed", "42", "--count", "4", "--out", &scenes,
    ])?;
    let (pred, gt) = (format!("{scenes}/pred"), format!("{scenes}/gt"));
    out.extend(cli(&[
        "refine", "--config", &cfg, "--jobs", "3", "--pred", &pred, "--gt", &gt, "--out", &refined,
    ])?);
    let mut files = snapshot(root)?;
    files.push(("<stdout>".into(), out));
    Ok(files)
}

fn determinism() -> Outcome {
    // Same directory both times: stdout mentions the output paths.
    let tmp = tempfile::tempdir().map_err(e)?;
    let first = pipeline(tmp.path())?;
    for entry in fs::read_dir(tmp.path()).map_err(e)? {
        let path = entry.map_err(e)?.path();
        if path.is_dir() {
            fs::remove_dir_all(&path)
        } else {
            fs::remove_file(&path)
        }
        .map_err(e)?;
    }
    let second = pipeline(tmp.path())?;
    ensure(first.len() == second.len(), || "different file sets".into())?;
    for ((name, x), (_, y)) in first.iter().zip(&second) {
        ensure(x == y, || format!("{name} differs between runs"))?;
    }
    let bytes: usize = first.iter().map(|(_, b)| b.len()).sum();
    Ok(format!(
        "gen + refine twice: {} outputs, {bytes} bytes identical",
        first.len()
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("zero loss on ground truth", zero_on_truth),
        ("analytic gradients", gradient_check),
        ("projection and depth round trips", round_trips),
        ("planar cross product identity", planar_cross),
        ("log(1 + gap) values", log_values),
        ("metric consistency", metrics),
        ("refinement ablation", ablation),
        ("deterministic outputs", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {}: PASS {name} [{secs:.2}s] {detail}", i + 1),
            Err(reason) => {
                failed += 1;
                println!("criterion {}: FAIL {name} [{secs:.2}s] {reason}", i + 1);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
