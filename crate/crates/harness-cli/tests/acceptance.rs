//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.
//!
//! The learning criteria train full-length runs and take tens of minutes on
//! one core. Set `DTD_ACCEPT_ONLY=1,3` to run a subset.

use std::f64::consts::PI;
use std::path::Path;
use std::time::Instant;

use dtd_core::checkpoint::{encode_checkpoint, load_checkpoint};
use dtd_core::config::DtDConfig;
use dtd_core::controller::{evaluate, run_episode, train_epoch, Agents};
use dtd_core::envs::{goal_distance, make_env, BlockRotate, GoalEnv, GoalPoint, PickPlace, PlanarPush, ENV_NAMES};
use dtd_core::harness::{compute_heatmap, percentile, run_train, Algo, RunManifest, TrainSummary};
use dtd_core::nn::{Activation, MlpParams};
use dtd_core::replay::ReplayBuffer;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    percentile(&v, 0.5)
}

// ---------------------------------------------------------------- gradients

/// Weights of layer `l` followed by its biases, as one flat index space.
fn param_mut(net: &mut MlpParams, l: usize, i: usize) -> &mut f64 {
    let nw = net.weights[l].len();
    if i < nw {
        &mut net.weights[l][i]
    } else {
        &mut net.biases[l][i - nw]
    }
}

fn gradient_suite() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for seed in 0..100u64 {
        let mut sizes = vec![rng.random_range(1..=5)];
        for _ in 0..rng.random_range(1..=3) {
            sizes.push(rng.random_range(2..=7));
        }
        // smooth hidden units keep the central difference well defined
        let mut net = MlpParams::init(&sizes, Activation::Tanh, Activation::Linear, seed).unwrap();
        for b in net.biases.iter_mut().flatten() {
            *b = rng.random_range(-0.5..0.5);
        }
        let batch = rng.random_range(1..=3);
        let x: Vec<f64> = (0..batch * net.input_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..batch * net.output_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |net: &MlpParams| -> f64 {
            let out = net.predict_batch(&x, batch).unwrap();
            out.iter().zip(&w).map(|(o, w)| o * w).sum()
        };
        let cache = net.forward_batch(&x, batch).unwrap();
        let (grads, _) = net.backward(&cache, &w).unwrap();
        for l in 0..net.num_layers() {
            for i in 0..net.weights[l].len() + net.biases[l].len() {
                let analytic = if i < net.weights[l].len() {
                    grads.weights[l][i]
                } else {
                    grads.biases[l][i - net.weights[l].len()]
                };
                let orig = *param_mut(&mut net, l, i);
                *param_mut(&mut net, l, i) = orig + h;
                let up = loss(&net);
                *param_mut(&mut net, l, i) = orig - h;
                let down = loss(&net);
                *param_mut(&mut net, l, i) = orig;
                let fd = (up - down) / (2.0 * h);
                let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    check(
        worst < 1e-4 && secs < 10.0,
        format!("100 nets, max relative error {worst:.2e}, {secs:.2}s"),
    )
}

// ---------------------------------------------------------------- relabeling

fn relabel_oracle() -> Outcome {
    let mut total = 0usize;
    let mut mismatches = 0usize;
    let mut provenance_failures = 0usize;
    let mut relabeled = 0usize;
    for (env_name, n) in [("planar-push", 2), ("pick-place", 5), ("block-rotate", 4)] {
        let mut env = make_env(env_name).unwrap();
        let spec = env.spec().clone();
        let mut cfg = DtDConfig::defaults_for(env_name);
        cfg.sub_episodes = n;
        let agents = Agents::new(&spec, &cfg, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut buffer = ReplayBuffer::new(spec.clone(), 40).unwrap();
        for seed in 0..40 {
            let (trace, _) = run_episode(env.as_mut(), &agents, &cfg, 0, seed, true, &mut rng).unwrap();
            buffer.store_episode(trace).unwrap();
        }
        for level in 0..2 {
            for _ in 0..(100_000 / 6 + 1) / 128 + 1 {
                let batch = if level == 0 {
                    buffer.sample_low(128, 0.8, &mut rng).unwrap()
                } else {
                    buffer.sample_high(128, 0.8, &mut rng).unwrap()
                };
                for i in 0..batch.len {
                    total += 1;
                    let r = dtd_core::envs::compute_reward(&spec, batch.next_achieved_row(i), batch.goal(i)).unwrap();
                    if r != batch.rewards[i] {
                        mismatches += 1;
                    }
                    let m = batch.meta[i];
                    if m.relabel_source.is_none() {
                        continue;
                    }
                    relabeled += 1;
                    let trace = buffer.episode(m.episode_id).unwrap();
                    let later: Vec<&GoalPoint> = if level == 0 {
                        (m.index + 1..=trace.horizon()).map(|s| trace.achieved_at_step(s)).collect()
                    } else {
                        (m.index + 1..=trace.sub_episodes()).map(|k| trace.achieved_at_boundary(k)).collect()
                    };
                    if !later.iter().any(|g| &g[..] == batch.goal(i)) {
                        provenance_failures += 1;
                    }
                }
            }
        }
    }
    check(
        total >= 100_000 && mismatches == 0 && provenance_failures == 0 && relabeled > 0,
        format!(
            "{total} items ({relabeled} relabeled): {mismatches} reward mismatches, {provenance_failures} provenance failures"
        ),
    )
}

// ---------------------------------------------------------------- dynamics

fn dynamics_examples() -> Outcome {
    let mut failures = Vec::new();
    let mut expect = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };

    let mut push = PlanarPush::new();
    push.reset(5);
    let before = (push.gripper(), push.block());
    push.step(&[0.0, 0.0]).unwrap();
    expect("push null action", (push.gripper(), push.block()) == before);
    let mut pick = PickPlace::new();
    pick.reset(5);
    let before = (pick.gripper(), pick.block());
    pick.step(&[0.0; 4]).unwrap();
    expect("pick-place null action", (pick.gripper(), pick.block()) == before);
    let mut rot = BlockRotate::new();
    rot.reset(5);
    let before = rot.theta();
    rot.step(&[0.0]).unwrap();
    expect("rotate null action", rot.theta() == before);

    let mut push = PlanarPush::new();
    push.set_state([0.5, 0.5], [0.1, 0.9], [0.2, 0.2]).unwrap();
    push.step(&[1.0, 0.0]).unwrap();
    expect("push step rule", push.gripper() == [0.55, 0.5] && push.block() == [0.1, 0.9]);

    push.set_state([0.43, 0.5], [0.5, 0.5], [0.9, 0.9]).unwrap();
    push.step(&[1.0, 0.0]).unwrap();
    let [bx, by] = push.block();
    expect("contact push", (bx - 0.55).abs() < 1e-9 && by == 0.5 && (push.gripper()[0] - 0.48).abs() < 1e-12);

    let mut rot = BlockRotate::new();
    rot.set_state(3.0, 0.0);
    rot.step(&[1.0]).unwrap();
    rot.step(&[1.0]).unwrap();
    expect("rotate wrap", (rot.theta() - (3.2 - 2.0 * PI)).abs() < 1e-12);

    let angular = make_env("block-rotate").unwrap().spec().clone();
    let planar = make_env("planar-push").unwrap().spec().clone();
    let d = goal_distance(&angular, &[3.0], &[-3.0]).unwrap();
    expect("wrap-around distance", (d - (2.0 * PI - 6.0)).abs() < 1e-12 && (d - 0.28319).abs() < 1e-5);
    expect("3-4-5 distance", goal_distance(&planar, &[0.0, 0.0], &[3.0, 4.0]).unwrap() == 5.0);
    let reward = |a: [f64; 2], b: [f64; 2]| dtd_core::envs::compute_reward(&planar, &a, &b).unwrap();
    expect("tolerance boundary", reward([0.0, 0.0], [0.049, 0.0]) == 0.0 && reward([0.0, 0.0], [0.05, 0.0]) == -1.0);

    check(failures.is_empty(), if failures.is_empty() { "all examples exact".into() } else { failures.join("; ") })
}

// ---------------------------------------------------------------- forcing

fn forcing_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut violations = 0;
    let mut her_violations = 0;
    for i in 0..1000u64 {
        let env_name = ENV_NAMES[rng.random_range(0..3)];
        let mut env = make_env(env_name).unwrap();
        let base = DtDConfig::defaults_for(env_name);
        let divisors: Vec<usize> = (2..=base.horizon).filter(|d| base.horizon % d == 0 && *d <= 10).collect();
        let mut cfg = base.clone();
        cfg.sub_episodes = divisors[rng.random_range(0..divisors.len())];
        cfg.low.hidden_layers = vec![8];
        cfg.high.hidden_layers = vec![8];
        let her = i % 4 == 0;
        if her {
            cfg = Algo::Her.apply_preset(&cfg).unwrap();
        }
        let agents = Agents::new(env.spec(), &cfg, i).unwrap();
        let epoch = rng.random_range(0..cfg.epochs);
        let (trace, _) = run_episode(env.as_mut(), &agents, &cfg, epoch, i, true, &mut rng).unwrap();
        if trace.high_transitions.last().unwrap().subgoal_action != trace.episode_goal {
            violations += 1;
        }
        if her && trace.transitions.iter().any(|t| t.subgoal != trace.episode_goal) {
            her_violations += 1;
        }
    }

    let mut env = make_env("planar-push").unwrap();
    let mut cfg = Algo::Ddpg.apply_preset(&DtDConfig::defaults_for("planar-push")).unwrap();
    cfg.episodes_per_epoch = 10;
    cfg.trainings_per_epoch = 20;
    cfg.eval_episodes = 2;
    let mut agents = Agents::new(env.spec(), &cfg, 1).unwrap();
    let mut buffer = ReplayBuffer::new(env.spec().clone(), 100).unwrap();
    for epoch in 0..3 {
        train_epoch(env.as_mut(), &mut agents, &mut buffer, &cfg, epoch, &mut rng).unwrap();
    }
    let relabels = buffer.relabel_count();
    check(
        violations == 0 && her_violations == 0 && relabels == 0,
        format!(
            "1000 traces: {violations} unforced finals, {her_violations} her traces with foreign sub-goals; ddpg relabel counter {relabels}"
        ),
    )
}

// ---------------------------------------------------------------- determinism

fn determinism(root: &Path) -> Outcome {
    let mut cfg = DtDConfig::defaults_for("planar-push");
    cfg.epochs = 3;
    cfg.episodes_per_epoch = 5;
    cfg.trainings_per_epoch = 20;
    cfg.eval_episodes = 5;
    let runs: Vec<RunManifest> = ["first", "second"]
        .iter()
        .map(|name| RunManifest::new(&cfg, Algo::Dtd, 2, root.join(name)).unwrap())
        .collect();
    for m in &runs {
        run_train(m).unwrap();
    }
    let mut identical = true;
    for &seed in &runs[0].seeds {
        let read = |m: &RunManifest| std::fs::read(m.seed_dir(seed).join("metrics.csv")).unwrap();
        identical &= read(&runs[0]) == read(&runs[1]);
    }
    let ckpt_path = runs[0].seed_dir(runs[0].seeds[0]).join("checkpoints/latest.ckpt");
    let bytes = std::fs::read(&ckpt_path).unwrap();
    let loaded = load_checkpoint(&ckpt_path).unwrap();
    let round_trip = encode_checkpoint(&loaded.env, loaded.sub_episodes, loaded.horizon, &loaded.agents) == bytes;
    check(
        identical && round_trip,
        format!("metrics byte-identical: {identical}; checkpoint round trip bit-exact: {round_trip}"),
    )
}

// ---------------------------------------------------------------- learning

struct PushRuns {
    summaries: Vec<(Algo, TrainSummary)>,
}

fn push_runs(root: &Path) -> PushRuns {
    let cfg = DtDConfig::defaults_for("planar-push");
    let summaries = [Algo::Dtd, Algo::Her, Algo::Ddpg]
        .into_iter()
        .map(|algo| {
            let started = Instant::now();
            let manifest = RunManifest::new(&cfg, algo, 5, root.join("push")).unwrap();
            let summary = run_train(&manifest).unwrap();
            println!("  trained planar-push/{algo} x5 in {:.0}s", started.elapsed().as_secs_f64());
            (algo, summary)
        })
        .collect();
    PushRuns { summaries }
}

fn comparison(runs: &PushRuns) -> Outcome {
    let medians: Vec<(Algo, f64)> = runs
        .summaries
        .iter()
        .map(|(algo, s)| (*algo, s.aggregate.last().unwrap().median))
        .collect();
    let get = |a: Algo| medians.iter().find(|(b, _)| *b == a).unwrap().1;
    let (dtd, her, ddpg) = (get(Algo::Dtd), get(Algo::Her), get(Algo::Ddpg));
    check(
        dtd >= 0.8 && her >= 0.8 && ddpg <= 0.3,
        format!("final median success: dtd {dtd:.3} (≥0.8), her {her:.3} (≥0.8), ddpg {ddpg:.3} (≤0.3)"),
    )
}

fn landscape(runs: &PushRuns) -> Outcome {
    let (_, dtd) = runs.summaries.iter().find(|(a, _)| *a == Algo::Dtd).unwrap();
    let mut passing = 0;
    let mut details = Vec::new();
    for run in &dtd.runs {
        let early = compute_heatmap(&load_checkpoint(run.checkpoint_path("epoch_0001.ckpt")).unwrap(), "diag", 20).unwrap();
        let late = compute_heatmap(&load_checkpoint(run.checkpoint_path("latest.ckpt")).unwrap(), "diag", 20).unwrap();
        let ratio = late.spread() / early.spread();
        let margin = 0.15;
        let inside = (0..2).all(|d| {
            let lo = late.start[d].min(late.goal[d]) - margin;
            let hi = late.start[d].max(late.goal[d]) + margin;
            let v = if d == 0 { late.argmax.0 } else { late.argmax.1 };
            (lo..=hi).contains(&v)
        });
        if ratio >= 3.0 && inside {
            passing += 1;
        }
        details.push(format!(
            "seed {}: spread {:.2} -> {:.2} (x{ratio:.1}), argmax ({:.3},{:.3}) {}",
            run.seed,
            early.spread(),
            late.spread(),
            late.argmax.0,
            late.argmax.1,
            if inside { "inside" } else { "outside" }
        ));
    }
    check(passing >= 3, format!("{passing}/5 seeds pass [{}]", details.join("; ")))
}

fn rotate_signal(root: &Path) -> Outcome {
    let cfg = DtDConfig::defaults_for("block-rotate");
    let started = Instant::now();
    let manifest = RunManifest::new(&cfg, Algo::Dtd, 5, root.join("rotate")).unwrap();
    let summary = run_train(&manifest).unwrap();
    println!("  trained block-rotate/dtd x5 in {:.0}s", started.elapsed().as_secs_f64());
    // the untrained agents of each seed are the random-policy reference
    let mut baseline = Vec::new();
    for &seed in &manifest.seeds {
        let mut run_cfg = manifest.config.clone();
        run_cfg.seed = seed;
        let mut env = make_env("block-rotate").unwrap();
        let agents = Agents::new(env.spec(), &run_cfg, seed).unwrap();
        baseline.push(evaluate(env.as_mut(), &agents, &run_cfg, run_cfg.eval_episodes, seed).unwrap().success_rate);
    }
    let base = median(&baseline);
    let fin = summary.aggregate.last().unwrap().median;
    check(
        fin >= 2.0 * base && fin > 0.0,
        format!("final median {fin:.3} vs untrained median {base:.3}"),
    )
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("DTD_ACCEPT_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |n: usize| only.as_ref().is_none_or(|o| o.contains(&n));
    let scratch = tempfile::tempdir().expect("scratch directory");

    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut run = |n: usize, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        if wanted(n) {
            let outcome = f();
            let (tag, detail) = match &outcome {
                Ok(d) => ("PASS", d),
                Err(d) => ("FAIL", d),
            };
            println!("{tag} criterion {n} ({name}): {detail}");
            results.push((n, name, outcome));
        }
    };

    run(1, "gradient suite", &mut gradient_suite);
    run(2, "relabel oracle", &mut relabel_oracle);
    run(3, "env dynamics", &mut dynamics_examples);
    let push = (wanted(4) || wanted(5)).then(|| push_runs(scratch.path()));
    if let Some(push) = &push {
        run(4, "push comparison", &mut || comparison(push));
        run(5, "value landscape", &mut || landscape(push));
    }
    run(6, "forcing and reduction", &mut forcing_invariants);
    run(7, "determinism", &mut || determinism(scratch.path()));
    run(8, "rotate learning signal", &mut || rotate_signal(scratch.path()));

    let failed = results.iter().filter(|r| r.2.is_err()).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
