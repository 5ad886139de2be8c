//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any failed.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::Rng;

use burdenlab::distillation::{distill, make_student, FrozenTeacher};
use burdenlab::dynamics::{
    burden, feasibility_penalty, feasible_radius, path_load_update, project, rollout, CellParams,
    ConstraintConfig, Enforcement, ModelDims, PathMode,
};
use burdenlab::harness::{
    family_deployment, train_teacher, ExperimentConfig, Family, ReportBundle, SeedStatus, OUT_ENV,
};
use burdenlab::model::DeployedModel;
use burdenlab::numgrad::grad_check;
use burdenlab::profiles::capability;
use burdenlab::rng;
use burdenlab::tasks::{generate, SequenceTask, Supervision, TaskKind};
use burdenlab::training::{
    draw_stability_noise, init_params, train, train_task_only, ObjectiveGraph, ObjectiveWeights, OptimConfig,
};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn configs_dir() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/configs"))
}

fn gradient_fidelity() -> Outcome {
    let dims = ModelDims::new(2, 2, 4);
    let task = SequenceTask::parity(4, 3).with_supervision(Supervision::Running);
    let weights = ObjectiveWeights {
        lambda1: 1.3,
        lambda2: 0.7,
        lambda3: 2.0,
    };
    let mut rng = rng::stream(2024, "gradient-fidelity");
    let step = 1e-6;
    let (mut worst, mut resampled, mut trials) = (0.0f64, 0usize, 0usize);
    while trials < 100 {
        let params = CellParams::init_uniform(dims, 1.5, &mut rng);
        let cfg = ConstraintConfig {
            threshold: rng.random_range(0.0..0.2),
            r0: rng.random_range(0.3..1.5),
            r_min: 0.1,
            kappa: rng.random_range(0.1..2.0),
            path_mode: if trials % 2 == 0 { PathMode::Uniform } else { PathMode::Discounted },
            lambda_path: 0.8,
            enforcement: if trials % 4 < 2 { Enforcement::Soft } else { Enforcement::Hard },
            ..Default::default()
        };
        let batch = generate(&task, 2, &mut rng);
        let noise = draw_stability_noise(&batch, dims.embed, 0.3, &mut rng).map_err(|e| e.to_string())?;
        let mut og = ObjectiveGraph::build(&params, &cfg, &weights, &batch, &noise).map_err(|e| e.to_string())?;
        og.forward(&params, 0).map_err(|e| e.to_string())?;
        // finite differences are meaningless across a kink
        if og.graph.kink_margin().is_some_and(|m| m < 1e3 * step) {
            resampled += 1;
            continue;
        }
        let report = grad_check(&mut og.graph, &og.params.bind(&params), step, 1e-4).map_err(|e| e.to_string())?;
        worst = worst.max(report.max_rel_error());
        if !report.passed() {
            let f = report.failures().next().expect("a failure");
            return Err(format!(
                "trial {trials}: analytic {} vs numeric {} (rel {:.2e})",
                f.analytic, f.numeric, f.rel_error
            ));
        }
        trials += 1;
    }
    Ok(format!("100 trials, max relative error {worst:.2e}, {resampled} kink draws resampled"))
}

fn constraint_invariants() -> Outcome {
    let cases = 1000;
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    let cfg_strategy = (0.0f64..3.0, 0.0f64..3.0, 0.1f64..5.0, 0.0f64..1.0, 0.01f64..0.5, 0.1f64..2.0).prop_map(
        |(w_disp, w_grow, alpha, kappa, r_min, extra)| ConstraintConfig {
            w_disp,
            w_grow,
            alpha,
            kappa,
            r_min,
            r0: r_min + extra,
            ..Default::default()
        },
    );
    let vec_pair = (1usize..8).prop_flat_map(|n| {
        (
            prop::collection::vec(-5.0f64..5.0, n),
            prop::collection::vec(-5.0f64..5.0, n),
        )
    });
    let mut names = Vec::new();

    runner
        .run(&(cfg_strategy.clone(), 0.0f64..100.0, 0.0f64..10.0), |(cfg, load, b)| {
            let next = path_load_update(load, b, &cfg).unwrap();
            prop_assert!(next >= load);
            Ok(())
        })
        .map_err(|e| format!("load monotonicity: {e}"))?;
    names.push("load monotonicity");

    runner
        .run(&(cfg_strategy.clone(), 0.0f64..500.0, 0.0f64..500.0), |(cfg, a, b)| {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (r_lo, r_hi) = (feasible_radius(lo, &cfg), feasible_radius(hi, &cfg));
            prop_assert!(r_hi <= r_lo);
            for r in [r_lo, r_hi] {
                prop_assert!(r >= cfg.r_min && r <= cfg.r0);
            }
            Ok(())
        })
        .map_err(|e| format!("region nesting: {e}"))?;
    names.push("region nesting");

    runner
        .run(&(vec_pair.clone(), 0.0f64..6.0), |((h, _), r)| {
            let p = project(&h, r);
            let norm = p.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!(norm <= r);
            prop_assert_eq!(project(&p, r), p);
            Ok(())
        })
        .map_err(|e| format!("projection: {e}"))?;
    names.push("projection idempotence and bound");

    runner
        .run(&(vec_pair.clone(), 0.0f64..6.0), |((h, _), r)| {
            let norm = h.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert_eq!(feasibility_penalty(&h, r) == 0.0, norm <= r);
            Ok(())
        })
        .map_err(|e| format!("penalty zero set: {e}"))?;
    names.push("penalty zero iff feasible");

    runner
        .run(&(vec_pair, cfg_strategy), |((h, _), cfg)| {
            prop_assert_eq!(burden(&h, &h, &cfg).unwrap(), 0.0);
            Ok(())
        })
        .map_err(|e| format!("zero burden: {e}"))?;
    names.push("zero self-burden");

    Ok(format!("{} suites x {cases} cases: {}", names.len(), names.join(", ")))
}

fn baseline_reduction() -> Outcome {
    let cfg = ConstraintConfig::default();
    let mut checked = Vec::new();
    for (i, task) in [
        SequenceTask::copy(8, 4, 1).with_seed(3),
        SequenceTask::parity(8, 8).with_seed(4).with_supervision(Supervision::Running),
        SequenceTask::modsum(8, 6, 5).with_seed(5),
    ]
    .into_iter()
    .enumerate()
    {
        let optim = OptimConfig {
            learning_rate: 0.5,
            epochs: 15,
            seed: 100 + i as u64,
            ..Default::default()
        };
        let init = init_params(ModelDims::new(16, 8, task.vocab), &optim);
        let (p_full, log_full) =
            train(init.clone(), &cfg, &ObjectiveWeights::BASELINE, &task, &optim).map_err(|e| e.to_string())?;
        let (p_ref, log_ref) = train_task_only(init, &cfg, &task, &optim).map_err(|e| e.to_string())?;
        let same_bits = log_full.rows.len() == log_ref.rows.len()
            && log_full.to_csv_string().unwrap() == log_ref.to_csv_string().unwrap()
            && log_full.rows.iter().zip(&log_ref.rows).all(|(a, b)| {
                [a.task, a.hinge, a.feas, a.stab, a.burden_violation_rate, a.feas_violation_rate]
                    .iter()
                    .zip([b.task, b.hinge, b.feas, b.stab, b.burden_violation_rate, b.feas_violation_rate])
                    .all(|(x, y)| x.to_bits() == y.to_bits())
            });
        ensure(same_bits, || format!("{} metric logs differ", task.kind.name()))?;
        let same_params = p_full
            .tensors()
            .iter()
            .zip(p_ref.tensors())
            .all(|(a, b)| a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
        ensure(same_params, || format!("{} parameters differ", task.kind.name()))?;
        checked.push(task.kind.name());
    }
    Ok(format!("logs and weights bit-identical on {}", checked.join(", ")))
}

fn distillation_sanity() -> Outcome {
    let mut cfg = ExperimentConfig::default();
    cfg.distill.shrink = 1.0;
    let task_index = cfg
        .tasks
        .iter()
        .position(|t| t.kind == TaskKind::Copy)
        .ok_or("default config has no copy task")?;
    let task = cfg.tasks[task_index];
    let seed = cfg.seeds[0];
    let (params, _) = train_teacher(&cfg, Family::Base, seed, task_index).map_err(|e| e.to_string())?;
    let teacher = DeployedModel::new(params, family_deployment(&cfg.constraint, Family::Base));
    let dcfg = cfg.distill.config(16000, rng::derive_key(seed, "distill", 16000));
    let student = make_student(teacher.params.dims(), 1.0, dcfg.optim.init_scale, rng::derive_key(seed, "student", 0))
        .map_err(|e| e.to_string())?;
    let frozen = FrozenTeacher::new(teacher.clone(), cfg.constraint);
    let arm = distill(&frozen, "base", student, &dcfg, &task).map_err(|e| e.to_string())?;
    let k_t = capability(&teacher, &cfg.constraint, &task, &cfg.probe).map_err(|e| e.to_string())?;
    let k_s = capability(&DeployedModel::soft(arm.params), &cfg.constraint, &task, &cfg.probe)
        .map_err(|e| e.to_string())?;
    let dk = (k_t.accuracy - k_s.accuracy).max(0.0);
    let msg = format!(
        "teacher accuracy {:.4}, student {:.4}, gap {dk:.4} (distill loss {:.3} -> {:.3})",
        k_t.accuracy,
        k_s.accuracy,
        arm.summary.initial_distill_loss.unwrap_or(f64::NAN),
        arm.summary.final_distill_loss.unwrap_or(f64::NAN),
    );
    if dk <= 0.05 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn hard_enforcement() -> Outcome {
    let mut rng = rng::stream(77, "hard-enforcement");
    let (mut sequences, mut steps) = (0usize, 0usize);
    while sequences < 10_000 {
        let dims = ModelDims::new(rng.random_range(2..10), rng.random_range(1..5), 6);
        let params = CellParams::init_uniform(dims, rng.random_range(0.5..4.0), &mut rng);
        let cfg = ConstraintConfig {
            r0: rng.random_range(0.2..2.0),
            r_min: 0.1,
            kappa: rng.random_range(0.0..3.0),
            path_mode: if rng.random_bool(0.5) { PathMode::Uniform } else { PathMode::Discounted },
            enforcement: Enforcement::Hard,
            ..Default::default()
        };
        for _ in 0..100 {
            let len = rng.random_range(1..40);
            let tokens: Vec<usize> = (0..len).map(|_| rng.random_range(0..6)).collect();
            let rec = rollout(&params, &cfg, &tokens).map_err(|e| e.to_string())?;
            ensure(rec.feasibility_violation_count() == 0, || {
                format!("violation in sequence {sequences}")
            })?;
            steps += rec.len();
            sequences += 1;
        }
    }
    Ok(format!("{sequences} sequences, {steps} steps, violation rate 0"))
}

fn run_cli(config: &Path, out: &Path) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_burdenlab"))
        .args(["experiment", "--config"])
        .arg(config)
        .env(OUT_ENV, out)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(status.status.success(), || {
        format!("experiment exited with {}: {}", status.status, String::from_utf8_lossy(&status.stderr))
    })
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = configs_dir().join("smoke.toml");
    run_cli(&config, dir.path())?;
    let first = std::fs::read(dir.path().join("report.json")).map_err(|e| e.to_string())?;
    run_cli(&config, dir.path())?;
    let second = std::fs::read(dir.path().join("report.json")).map_err(|e| e.to_string())?;
    ensure(first == second, || "report.json differs between runs".into())?;
    Ok(format!("two runs of smoke.toml, report.json identical ({} bytes)", first.len()))
}

fn experiment_completion() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = configs_dir().join("default.toml");
    let cfg = ExperimentConfig::load(&config).map_err(|e| e.to_string())?;
    let started = Instant::now();
    run_cli(&config, dir.path())?;
    let elapsed = started.elapsed();
    let bundle = ReportBundle::load(dir.path().join("report.json")).map_err(|e| e.to_string())?;
    let seeds = cfg.seeds.len();
    ensure(seeds == 3 && cfg.tasks.len() == 3 && cfg.distill.budgets.len() == 3, || {
        "default config is not 3 x 3 x 3".into()
    })?;
    ensure(
        bundle.seeds.len() == seeds && bundle.seeds.iter().all(|s| s.status == SeedStatus::Completed),
        || "not every seed completed".into(),
    )?;
    for id in ["H1", "H2", "H3", "H4"] {
        let hs: Vec<_> = bundle.hypotheses.iter().filter(|h| h.id == id).collect();
        ensure(!hs.is_empty(), || format!("{id} missing"))?;
        for h in hs {
            ensure(h.per_seed.len() == seeds, || format!("{id} lacks per-seed values"))?;
            ensure(h.pooled.base.is_some() && h.pooled.cc.is_some(), || {
                format!("{id} {} lacks pooled values", h.statistic)
            })?;
        }
    }
    for f in Family::ALL {
        let slope = bundle
            .coupling
            .iter()
            .find(|c| c.family == f)
            .and_then(|c| c.estimate.as_ref())
            .map(|e| e.slope);
        ensure(slope.is_some_and(f64::is_finite), || format!("no coupling slope for {}", f.name()))?;
    }
    let cc_students: Vec<_> = bundle
        .seeds
        .iter()
        .flat_map(|s| s.students())
        .filter(|(_, s)| s.family == Family::Cc)
        .collect();
    ensure(cc_students.len() == 27, || format!("{} constrained students, expected 27", cc_students.len()))?;
    ensure(cc_students.iter().all(|(_, s)| !s.outcome.is_empty()), || {
        "a constrained student lacks an outcome label".into()
    })?;
    let per_seed = elapsed / seeds as u32;
    ensure(per_seed < Duration::from_secs(30 * 60), || format!("{per_seed:?} per seed"))?;
    Ok(format!("3 seeds x 3 budgets x 3 tasks in {elapsed:.1?} ({per_seed:.1?} per seed)"))
}

fn oracle_equivalence() -> Outcome {
    // independent reference: labels straight from the token stream
    fn reference(task: &SequenceTask, tokens: &[usize]) -> (Vec<usize>, Vec<usize>) {
        let t = task.length;
        match task.kind {
            TaskKind::Copy => {
                let start = t + 1 + task.delay;
                ((start..start + t).collect(), tokens[..t].to_vec())
            }
            TaskKind::Parity | TaskKind::Modsum => {
                let k = if task.kind == TaskKind::Parity { 2 } else { task.modulus };
                let running: Vec<usize> = (1..=t).map(|i| tokens[..i].iter().sum::<usize>() % k).collect();
                match task.supervision {
                    Supervision::Final => (vec![t - 1], vec![running[t - 1]]),
                    Supervision::Running => ((0..t).collect(), running),
                }
            }
        }
    }
    let n = 100_000;
    let mut summary = Vec::new();
    for kind in [TaskKind::Copy, TaskKind::Parity, TaskKind::Modsum] {
        let variants: Vec<SequenceTask> = match kind {
            TaskKind::Copy => vec![SequenceTask::copy(8, 8, 2), SequenceTask::copy(5, 3, 0)],
            TaskKind::Parity => vec![
                SequenceTask::parity(8, 8),
                SequenceTask::parity(8, 8).with_supervision(Supervision::Running),
            ],
            TaskKind::Modsum => vec![
                SequenceTask::modsum(8, 8, 5),
                SequenceTask::modsum(8, 8, 5).with_supervision(Supervision::Running),
            ],
        };
        for (v, task) in variants.iter().enumerate() {
            let batch = generate(task, n, &mut rng::indexed_stream(8, kind.name(), v as u64));
            for (i, ex) in batch.examples.iter().enumerate() {
                ensure(ex.tokens.len() == task.sequence_len(), || format!("{} #{i}: bad length", kind.name()))?;
                if kind == TaskKind::Copy {
                    let t = task.length;
                    ensure(
                        ex.tokens[t] == task.vocab - 1 && ex.tokens[t + 1..].iter().all(|&b| b == task.vocab - 2),
                        || format!("copy #{i}: bad layout"),
                    )?;
                }
                let (positions, labels) = reference(task, &ex.tokens);
                ensure(positions == ex.target_positions && labels == ex.labels, || {
                    format!("{} #{i}: labels disagree with reference", kind.name())
                })?;
            }
        }
        summary.push(format!("{} {}x{n}", kind.name(), variants.len()));
    }
    Ok(format!("exact agreement: {}", summary.join(", ")))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("1 gradient fidelity", gradient_fidelity),
        ("2 constraint invariants", constraint_invariants),
        ("3 baseline reduction", baseline_reduction),
        ("4 distillation sanity", distillation_sanity),
        ("5 hard enforcement", hard_enforcement),
        ("6 determinism", determinism),
        ("7 experiment completion", experiment_completion),
        ("8 oracle equivalence", oracle_equivalence),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let started = Instant::now();
        let result = run();
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS  criterion {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  criterion {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
