//! Acceptance suite: one PASS/FAIL line per criterion. Run with
//! `cargo test -p talds-cli --test acceptance`.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use talds::config::RunConfig;
use talds::descriptors::Dataset;
use talds::diffmath::{Graph, Matrix, ZeroNorm};
use talds::embedding::{GridDims, Mode, TransformInit};
use talds::episodic::{self, sample_episode, EpisodeSpec, EvalReport, LossRecord, SyntheticSpec};
use talds::model::Model;
use talds::selection::{gate, knn, Strategy};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn talds(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_talds"))
        .args(args)
        .output()
        .expect("talds binary runs")
}

fn talds_ok(args: &[&str]) -> Result<String, String> {
    let out = talds(args);
    if !out.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

// ---------------------------------------------------------------- 1

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let out = talds(&["gradcheck", "--seed", "0"]);
    let elapsed = start.elapsed();
    let stdout = String::from_utf8_lossy(&out.stdout);
    let err: f64 = stdout
        .lines()
        .last()
        .and_then(|l| l.split_whitespace().next())
        .and_then(|t| t.strip_prefix("max_rel_err="))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| format!("unparseable gradcheck output: {stdout}"))?;
    check(
        out.status.success() && err < 1e-4 && elapsed < Duration::from_secs(60),
        format!("max rel err {err:.2e} < 1e-4, exit {:?}, {:.1}s < 60s", out.status.code(), elapsed.as_secs_f64()),
    )
}

// ---------------------------------------------------------------- 2

fn knn_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut ties = 0usize;
    for trial in 0..1000 {
        let size = rng.random_range(1..=2000);
        let d = rng.random_range(1..=64);
        // Coarse integer coordinates, duplicated rows and zero rows make
        // exact ties common.
        let mut pool = Matrix::from_shape_fn((size, d), |_| rng.random_range(-2i32..=2) as f64);
        for _ in 0..size / 4 {
            let (a, b) = (rng.random_range(0..size), rng.random_range(0..size));
            let row = pool.row(a).to_owned();
            pool.row_mut(b).assign(&row);
        }
        if rng.random_bool(0.2) {
            pool.row_mut(rng.random_range(0..size)).fill(0.0);
        }
        let q: Vec<f64> = if rng.random_bool(0.3) {
            pool.row(rng.random_range(0..size)).to_vec()
        } else {
            (0..d).map(|_| rng.random_range(-2i32..=2) as f64).collect()
        };
        let k = rng.random_range(1..=10);
        let exclude = (size > 1 && rng.random_bool(0.5)).then(|| rng.random_range(0..size));
        let got = knn(&q, pool.view(), k, exclude, ZeroNorm::Lenient).map_err(|e| e.to_string())?;

        let qn = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut all: Vec<(usize, f64)> = (0..size)
            .filter(|&j| Some(j) != exclude)
            .map(|j| {
                let r = pool.row(j);
                let rn = r.dot(&r).sqrt();
                let dot: f64 = r.iter().zip(&q).map(|(a, b)| a * b).sum();
                (j, if rn == 0.0 || qn == 0.0 { 0.0 } else { dot / (rn * qn) })
            })
            .collect();
        all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let expect: Vec<(usize, f64)> = all.iter().take(k).copied().collect();
        ties += expect.windows(2).filter(|w| w[0].1 == w[1].1).count();
        let actual: Vec<(usize, f64)> = got.iter().map(|n| (n.index, n.similarity)).collect();
        if actual.iter().map(|p| p.0).ne(expect.iter().map(|p| p.0))
            || actual.iter().zip(&expect).any(|(a, e)| (a.1 - e.1).abs() > 1e-12)
        {
            return Err(format!("trial {trial}: got {actual:?}, oracle {expect:?}"));
        }
    }
    let elapsed = start.elapsed();
    check(
        elapsed < Duration::from_secs(60),
        format!("1000 trials match ({ties} tied neighbor pairs), {:.1}s < 60s", elapsed.as_secs_f64()),
    )
}

// ---------------------------------------------------------------- 3

fn gate_analytics() -> Outcome {
    let half = gate(0.37, 0.37, 10.0);
    let hand = 1.0 / (1.0 + (-3.0f64).exp());
    let at = gate(0.8, 0.5, 10.0);
    let sweep: Vec<f64> = (0..100).map(|i| gate(-1.0 + 2.0 * i as f64 / 99.0, 0.0, 10.0)).collect();
    let monotone = sweep.windows(2).all(|w| w[1] > w[0]);
    check(
        half == 0.5 && (at - 0.95257).abs() <= 1e-5 && (at - hand).abs() < 1e-15 && monotone,
        format!("gate(R=V*)={half}, gate(λ=10,R−V*=0.3)={at:.8}, 100-point sweep strictly increasing={monotone}"),
    )
}

// ---------------------------------------------------------------- 4

fn ablation_identities(trained: &Trained) -> Outcome {
    let with = |f: &dyn Fn(&mut talds::selection::SelectionModel)| {
        let mut m = trained.model.clone();
        f(&mut m.config.selection);
        m
    };
    let support_off = with(&|s| s.enable_support_selection = false);
    let query_off = with(&|s| s.enable_query_selection = false);
    let both_off = with(&|s| {
        s.enable_support_selection = false;
        s.enable_query_selection = false;
    });
    let dn4 = with(&|s| {
        s.enable_support_selection = false;
        s.strategy = Strategy::All;
    });
    let mut worst_gamma_gap = 0.0f64;
    for i in 0..20 {
        let ep = sample_episode(&trained.dataset, &EpisodeSpec::default().with_seed(1000 + i)).map_err(|e| e.to_string())?;

        let mut g = Graph::new();
        let bound = support_off.bind(&mut g);
        let fwd = support_off.forward(&mut g, &bound, &ep, Mode::Eval, &mut Vec::new()).map_err(|e| e.to_string())?;
        let pools = g.value(fwd.support.pools);
        let per_class = pools.nrows() / ep.n_way();
        for c in 0..ep.n_way() {
            let full = pools.slice(ndarray::s![c * per_class..(c + 1) * per_class, ..]);
            if fwd.support.subset.descriptors[c] != full {
                return Err(format!("episode {i}: F_Γ off, class {c} S* differs from its pool"));
            }
        }

        let mut g = Graph::new();
        let bound = query_off.bind(&mut g);
        let fwd = query_off.forward(&mut g, &bound, &ep, Mode::Eval, &mut Vec::new()).map_err(|e| e.to_string())?;
        let gamma = g.value(fwd.query.gamma);
        let scores = g.value(fwd.query.class_scores);
        let m = gamma.nrows() / scores.nrows();
        for qi in 0..scores.nrows() {
            for c in 0..scores.ncols() {
                let sum: f64 = (qi * m..(qi + 1) * m).map(|r| gamma[[r, c]]).sum();
                worst_gamma_gap = worst_gamma_gap.max((scores[[qi, c]] - sum).abs());
            }
        }

        let a = both_off.evaluate_episode(&ep).map_err(|e| e.to_string())?;
        let b = dn4.evaluate_episode(&ep).map_err(|e| e.to_string())?;
        if a.scores.per_query != b.scores.per_query {
            return Err(format!("episode {i}: both-off scores differ from the strategy=all baseline"));
        }
    }
    let cfg = episodic::EvalConfig { episode: EpisodeSpec::default().with_seed(77), n_episodes: 50, workers: 1 };
    let ra = episodic::evaluate(&both_off, &trained.dataset, &cfg).map_err(|e| e.to_string())?;
    let rb = episodic::evaluate(&dn4, &trained.dataset, &cfg).map_err(|e| e.to_string())?;
    let same_runs = serde_json::to_string(&ra).unwrap() == serde_json::to_string(&rb).unwrap();
    check(
        worst_gamma_gap <= 1e-6 && same_runs,
        format!(
            "F_Γ off: S* == pools bit-exactly (20 episodes); F_Ψ off: max |score − Σγ| = {worst_gamma_gap:.1e} ≤ 1e-6; both off == strategy=all run bit-exactly: {same_runs}"
        ),
    )
}

// ---------------------------------------------------------------- 5, 7, 8

struct Trained {
    model: Model,
    dataset: Dataset,
    losses: Vec<LossRecord>,
    train_time: Duration,
}

const RUN_SEED: u64 = 2026;

fn planted_run_config() -> RunConfig {
    let mut cfg = RunConfig::new(RUN_SEED);
    cfg.data.synthetic = Some(SyntheticSpec::default());
    cfg.train.epochs = 5;
    cfg.train.episodes_per_epoch = 200;
    cfg.eval.n_episodes = 600;
    cfg
}

fn train_planted() -> Result<Trained, String> {
    let cfg = planted_run_config();
    cfg.validate().map_err(|e| e.to_string())?;
    let spec = cfg.data.synthetic.clone().unwrap();
    let dataset = episodic::generate_synthetic(&spec).map_err(|e| e.to_string())?;
    let input = GridDims { h: spec.height, w: spec.width, c: spec.dim };
    let mut model = Model::init(cfg.model.model_config(input), cfg.seed).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let losses = episodic::train(&mut model, &dataset, &cfg.train_config()).map_err(|e| e.to_string())?;
    Ok(Trained { model, dataset, losses, train_time: start.elapsed() })
}

fn directional_trend(trained: &Trained) -> Result<(String, EvalReport), String> {
    let start = Instant::now();
    let report = episodic::ablate(&trained.model, &trained.dataset, &planted_run_config().eval_config())
        .map_err(|e| e.to_string())?;
    let total = trained.train_time + start.elapsed();
    let get = |g, p| report.get(g, p).cloned().ok_or("missing ablation row");
    let (on, psi, off) = (get(true, true)?, get(false, true)?, get(false, false)?);
    let margin = 2.0 * on.ci95_halfwidth.max(off.ci95_halfwidth);
    let detail = format!(
        "both-on {:.4}±{:.4} ≥ F_Ψ-only {:.4}±{:.4} ≥ both-off {:.4}±{:.4}; gap {:.4} vs 2·CI {:.4}; {:.0}s < 900s",
        on.mean_accuracy,
        on.ci95_halfwidth,
        psi.mean_accuracy,
        psi.ci95_halfwidth,
        off.mean_accuracy,
        off.ci95_halfwidth,
        on.mean_accuracy - off.mean_accuracy,
        margin,
        total.as_secs_f64()
    );
    let ok = on.mean_accuracy >= psi.mean_accuracy
        && psi.mean_accuracy >= off.mean_accuracy
        && on.mean_accuracy - off.mean_accuracy >= margin
        && total < Duration::from_secs(900);
    if ok {
        Ok((detail, on))
    } else {
        Err(detail)
    }
}

fn training_progress(trained: &Trained) -> Outcome {
    let losses: Vec<f64> = trained.losses.iter().map(|r| r.loss).collect();
    if losses.len() < 200 {
        return Err(format!("only {} training episodes", losses.len()));
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let first = mean(&losses[..100]);
    let last = mean(&losses[losses.len() - 100..]);

    let mut cfg = planted_run_config();
    cfg.model.transform.init = TransformInit::Zero;
    let input = GridDims { h: 6, w: 6, c: 32 };
    let zero = Model::init(cfg.model.model_config(input), 0).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for i in 0..10 {
        let ep = sample_episode(&trained.dataset, &EpisodeSpec::default().with_seed(i)).map_err(|e| e.to_string())?;
        let out = zero.evaluate_episode(&ep).map_err(|e| e.to_string())?;
        worst = worst.max((out.loss - 5f64.ln()).abs());
    }
    check(
        last < first && worst <= 0.01,
        format!("loss first-100 mean {first:.4} → last-100 mean {last:.4}; zero-init |loss − ln 5| ≤ {worst:.1e} (≤ 0.01)"),
    )
}

fn statistical_plumbing(report: &EvalReport) -> Outcome {
    let xs = &report.per_episode;
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let ci = 1.96 * var.sqrt() / n.sqrt();
    let degenerate = EvalReport::from_episodes(vec![1.0, 0.0], &[]).map_err(|e| e.to_string())?;
    let expect = 1.96 * 0.5 / 2f64.sqrt();
    check(
        (ci - report.ci95_halfwidth).abs() <= 1e-9
            && (mean - report.mean_accuracy).abs() <= 1e-9
            && degenerate.mean_accuracy == 0.5
            && (degenerate.ci95_halfwidth - expect).abs() < 1e-15,
        format!(
            "recomputed ci {ci:.12} vs reported {:.12}; [1,0] → {}±{:.6} (oracle {expect:.6})",
            report.ci95_halfwidth, degenerate.mean_accuracy, degenerate.ci95_halfwidth
        ),
    )
}

// ---------------------------------------------------------------- 6

fn chance_level() -> Outcome {
    let mut cfg = planted_run_config();
    let spec = SyntheticSpec { signal_fraction: 0.0, seed: 6, ..SyntheticSpec::default() };
    cfg.data.synthetic = Some(spec.clone());
    cfg.train.epochs = 1;
    let dataset = episodic::generate_synthetic(&spec).map_err(|e| e.to_string())?;
    let input = GridDims { h: spec.height, w: spec.width, c: spec.dim };
    let mut model = Model::init(cfg.model.model_config(input), cfg.seed).map_err(|e| e.to_string())?;
    episodic::train(&mut model, &dataset, &cfg.train_config()).map_err(|e| e.to_string())?;
    let mut parts = vec![];
    let mut ok = true;
    for strategy in ["adaptive", "all", "fixed:0.235", "top:18"] {
        let mut m = model.clone();
        m.config.selection.strategy = strategy.parse().map_err(|e: talds::Error| e.to_string())?;
        let r = episodic::evaluate(&m, &dataset, &cfg.eval_config()).map_err(|e| e.to_string())?;
        let within = (r.mean_accuracy - 0.2).abs() <= 3.0 * r.ci95_halfwidth;
        ok &= within;
        parts.push(format!("{strategy} {:.4}±{:.4}", r.mean_accuracy, r.ci95_halfwidth));
    }
    check(ok, format!("signal_fraction 0, 600 episodes: {} (each within 3 CI of 0.20)", parts.join(", ")))
}

// ---------------------------------------------------------------- 9

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = vec![];
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_owned(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_owned();
    let synth = |out: &str| {
        talds_ok(&[
            "gen-synth", "--classes", "8", "--grid", "5x5", "--dim", "16", "--seed", "3", "--out", out,
        ])
    };
    synth(&p("data_a"))?;
    synth(&p("data_b"))?;
    if tree(&dir.path().join("data_a")) != tree(&dir.path().join("data_b")) {
        return Err("gen-synth outputs differ".into());
    }
    let train = || {
        talds_ok(&[
            "train", "--seed", "9", "--data", &p("data_a"), "--out", &p("run"), "--epochs", "2",
            "--episodes-per-epoch", "30",
        ])
    };
    train()?;
    std::fs::rename(dir.path().join("run"), dir.path().join("run_first")).map_err(|e| e.to_string())?;
    train()?;
    if tree(&dir.path().join("run")) != tree(&dir.path().join("run_first")) {
        return Err("train outputs (checkpoint/loss/config) differ".into());
    }
    let ckpt = p("run/checkpoint.json");
    let mut runs = vec![];
    for (i, workers) in ["1", "4", "4"].iter().enumerate() {
        let (j, c, a, ac) = (p(&format!("e{i}.json")), p(&format!("e{i}.csv")), p(&format!("a{i}.json")), p(&format!("a{i}.csv")));
        let stdout = talds_ok(&[
            "eval", "--checkpoint", &ckpt, "--episodes", "100", "--workers", workers, "--json-out", &j, "--csv-out", &c,
        ])?;
        let table = talds_ok(&[
            "ablate", "--checkpoint", &ckpt, "--episodes", "50", "--workers", workers, "--json-out", &a, "--csv-out", &ac,
        ])?;
        let files: Vec<Vec<u8>> = [j, c, a, ac].iter().map(|f| std::fs::read(f).unwrap()).collect();
        runs.push((stdout, table, files));
    }
    let same = runs.windows(2).all(|w| w[0] == w[1]);
    check(
        same,
        "gen-synth, train, eval and ablate reruns byte-identical (eval/ablate with --workers 1 and 4)".into(),
    )
}

fn main() {
    let start = Instant::now();
    let mut lines: Vec<(u8, Outcome)> = vec![];
    lines.push((1, gradient_fidelity()));
    lines.push((2, knn_oracle()));
    lines.push((3, gate_analytics()));
    match train_planted() {
        Ok(trained) => {
            lines.push((4, ablation_identities(&trained)));
            match directional_trend(&trained) {
                Ok((detail, both_on)) => {
                    lines.push((5, Ok(detail)));
                    lines.push((7, training_progress(&trained)));
                    lines.push((8, statistical_plumbing(&both_on)));
                }
                Err(e) => {
                    lines.push((5, Err(e)));
                    lines.push((7, training_progress(&trained)));
                    let fallback = episodic::evaluate(&trained.model, &trained.dataset, &planted_run_config().eval_config())
                        .map_err(|e| e.to_string());
                    lines.push((8, fallback.and_then(|r| statistical_plumbing(&r))));
                }
            }
        }
        Err(e) => {
            for c in [4, 5, 7, 8] {
                lines.push((c, Err(format!("training failed: {e}"))));
            }
        }
    }
    lines.push((6, chance_level()));
    lines.push((9, determinism()));
    lines.sort_by_key(|l| l.0);

    let mut failed = 0;
    for (c, outcome) in &lines {
        match outcome {
            Ok(d) => println!("criterion {c}: PASS — {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {c}: FAIL — {d}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed ({:.0}s)", lines.len() - failed, start.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
