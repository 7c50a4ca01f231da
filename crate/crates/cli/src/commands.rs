use std::path::Path;

use talds::checkpoint::Checkpoint;
use talds::config::RunConfig;
use talds::descriptors::Dataset;
use talds::diffmath::{step_decay, GradCheckOptions};
use talds::embedding::GridDims;
use talds::episodic::{self, generate_synthetic, SyntheticSpec};
use talds::model::{pipeline_gradient_check, Model};
use talds::selection::{SelectionModel, Strategy};

use crate::args::{EvalArgs, GenSynthArgs, GradcheckArgs, TrainArgs};
use crate::output;
use crate::Failure;

fn usage(e: talds::Error) -> Failure {
    Failure::Usage(e.to_string())
}

fn parse_strategy(s: &str) -> Result<Strategy, Failure> {
    s.parse::<Strategy>().map_err(usage)
}

fn is_nonempty_dir(path: &Path) -> bool {
    std::fs::read_dir(path).map(|mut d| d.next().is_some()).unwrap_or(false)
}

/// Removes what a previous `gen-synth` left behind: the manifest, the masks
/// and `.tds` files one level down. Anything else is kept.
fn clear_dataset(root: &Path) -> Result<(), Failure> {
    let fail = |p: &Path, e: std::io::Error| Failure::Data(format!("{}: {e}", p.display()));
    for name in ["classes.json", "masks.json"] {
        let p = root.join(name);
        if p.is_file() {
            std::fs::remove_file(&p).map_err(|e| fail(&p, e))?;
        }
    }
    let entries = std::fs::read_dir(root).map_err(|e| fail(root, e))?;
    for entry in entries {
        let dir = entry.map_err(|e| fail(root, e))?.path();
        if !dir.is_dir() {
            continue;
        }
        for f in std::fs::read_dir(&dir).map_err(|e| fail(&dir, e))? {
            let f = f.map_err(|e| fail(&dir, e))?.path();
            if f.extension().is_some_and(|x| x == "tds") {
                std::fs::remove_file(&f).map_err(|e| fail(&f, e))?;
            }
        }
        // Only succeeds when nothing else lives there.
        let _ = std::fs::remove_dir(&dir);
    }
    Ok(())
}

pub fn gen_synth(a: GenSynthArgs) -> Result<(), Failure> {
    let spec = SyntheticSpec {
        classes: a.classes,
        dim: a.dim,
        height: a.grid.0,
        width: a.grid.1,
        signal_fraction: a.signal_fraction,
        cluster_separation: a.separation,
        noise_scale: a.noise,
        seed: a.seed,
        samples_per_class: a.samples_per_class,
        distractor_centers: a.distractors,
    };
    spec.validate().map_err(usage)?;
    if is_nonempty_dir(&a.out) {
        if !a.force {
            return Err(Failure::Data(format!(
                "{} exists and is not empty (pass --force to overwrite)",
                a.out.display()
            )));
        }
        clear_dataset(&a.out)?;
    }
    let dataset = generate_synthetic(&spec)?;
    dataset.save(&a.out)?;
    println!(
        "wrote {} classes × {} samples ({}x{}x{}, {} signal rows each) to {}",
        spec.classes,
        spec.samples_per_class,
        spec.height,
        spec.width,
        spec.dim,
        spec.signal_rows(),
        a.out.display()
    );
    Ok(())
}

/// The dataset a run refers to, loaded from disk or generated in memory.
fn load_data(cfg: &RunConfig) -> Result<Dataset, Failure> {
    match (&cfg.data.path, &cfg.data.synthetic) {
        (Some(p), _) => Ok(Dataset::load(p)?),
        (None, Some(spec)) => Ok(generate_synthetic(spec)?),
        (None, None) => Err(Failure::Usage(
            "no dataset: pass --data or set [data] in the configuration".into(),
        )),
    }
}

fn input_dims(dataset: &Dataset) -> Result<GridDims, Failure> {
    let (h, w, c) = dataset
        .dims()
        .ok_or_else(|| Failure::Data("dataset has no samples".into()))?;
    Ok(GridDims { h, w, c })
}

fn parse_decay(s: &str) -> Result<(f64, usize), Failure> {
    let bad = || Failure::Usage(format!("--lr-decay `{s}` is not FACTOR@EVERY (e.g. 0.1@10)"));
    let (f, e) = s.split_once('@').ok_or_else(bad)?;
    let factor: f64 = f.trim().parse().map_err(|_| bad())?;
    let every: usize = e.trim().parse().map_err(|_| bad())?;
    if every == 0 {
        return Err(bad());
    }
    Ok((factor, every))
}

fn train_run_config(a: &TrainArgs) -> Result<RunConfig, Failure> {
    let mut cfg = match (&a.config, a.seed) {
        (Some(path), _) => RunConfig::load(path).map_err(|e| match e {
            talds::Error::Io { .. } => Failure::Data(e.to_string()),
            other => usage(other),
        })?,
        (None, Some(seed)) => RunConfig::new(seed),
        (None, None) => {
            return Err(Failure::Usage("pass --config, or --seed together with --data".into()))
        }
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(p) = &a.data {
        cfg.data.path = Some(p.clone());
        cfg.data.synthetic = None;
    }
    if let Some(p) = &a.out {
        cfg.output_dir = Some(p.clone());
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(e) = a.episodes_per_epoch {
        cfg.train.episodes_per_epoch = e;
    }
    if a.two_phase {
        cfg.train.two_phase = true;
    }
    let sel = &mut cfg.model.selection;
    if let Some(v) = a.lambda1 {
        sel.lambda1 = v;
    }
    if let Some(v) = a.lambda2 {
        sel.lambda2 = v;
    }
    if let Some(k) = a.k {
        sel.k_neighbors = k;
    }
    if let Some(s) = &a.strategy {
        sel.strategy = parse_strategy(s)?;
    }
    if a.no_support_selection {
        sel.enable_support_selection = false;
    }
    if a.no_query_selection {
        sel.enable_query_selection = false;
    }
    if let Some(w) = a.aux_weight {
        cfg.model.aux_weight = w;
    }
    // Pin the optimizer after the epoch override so the default schedule
    // covers the final epoch count.
    let mut opt = cfg.optimizer();
    if let Some(lr) = a.lr {
        opt.learning_rate = lr;
    }
    if let Some(d) = &a.lr_decay {
        let (factor, every) = parse_decay(d)?;
        opt.schedule = step_decay(every, factor, cfg.train.epochs);
    }
    cfg.optimizer = Some(opt);
    cfg.validate().map_err(usage)?;
    Ok(cfg.resolved())
}

pub fn train(a: TrainArgs) -> Result<(), Failure> {
    let cfg = train_run_config(&a)?;
    let sel = &cfg.model.selection;
    if sel.strategy == Strategy::All && !sel.enable_query_selection {
        eprintln!("warning: --strategy all already disables query selection; --no-query-selection is redundant");
    }
    let out = cfg
        .output_dir
        .clone()
        .ok_or_else(|| Failure::Usage("no output directory: pass --out or set output_dir".into()))?;
    let dataset = load_data(&cfg)?;
    let mut model = Model::init(cfg.model.model_config(input_dims(&dataset)?), cfg.seed)?;
    let losses = episodic::train(&mut model, &dataset, &cfg.train_config())?;

    output::ensure_dir(&out)?;
    output::write_text(&out.join("config.toml"), &cfg.to_toml())?;
    output::write_loss_csv(&out.join("loss.csv"), &losses)?;
    output::write_text(
        &out.join("checkpoint.json"),
        &Checkpoint::from_model(&model, Some(cfg.clone())).to_json(),
    )?;
    match losses.last() {
        Some(last) => println!(
            "trained {} episodes, final loss {:.4}; outputs in {}",
            losses.len(),
            last.loss,
            out.display()
        ),
        None => println!("no training episodes; initial checkpoint in {}", out.display()),
    }
    Ok(())
}

struct EvalSetup {
    model: Model,
    dataset: Dataset,
    eval: episodic::EvalConfig,
}

fn eval_setup(a: &EvalArgs) -> Result<EvalSetup, Failure> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let mut model = ckpt.to_model()?;
    let mut run = match (ckpt.run, a.seed) {
        (Some(run), _) => run,
        (None, Some(seed)) => RunConfig::new(seed),
        (None, None) => {
            return Err(Failure::Usage(
                "checkpoint carries no run configuration; pass --seed and --data".into(),
            ))
        }
    };
    if let Some(seed) = a.seed {
        run.seed = seed;
    }
    if let Some(p) = &a.data {
        run.data.path = Some(p.clone());
        run.data.synthetic = None;
    }
    if let Some(n) = a.n_way {
        run.episode.n_way = n;
    }
    if let Some(k) = a.k_shot {
        run.episode.k_shot = k;
    }
    if let Some(q) = a.queries {
        run.episode.queries_per_class = q;
    }
    if let Some(n) = a.episodes {
        run.eval.n_episodes = n;
    }
    if let Some(w) = a.workers {
        run.eval.workers = w;
    }
    if let Some(s) = &a.strategy {
        model.config.selection.strategy = parse_strategy(s)?;
        model.config.selection.validate().map_err(usage)?;
    }
    run.validate().map_err(usage)?;
    let dataset = load_data(&run)?;
    let dims = input_dims(&dataset)?;
    if dims != model.config.input {
        let m = model.config.input;
        return Err(Failure::Data(format!(
            "dataset samples are {}x{}x{} but the checkpoint expects {}x{}x{}",
            dims.h, dims.w, dims.c, m.h, m.w, m.c
        )));
    }
    Ok(EvalSetup {
        model,
        dataset,
        eval: run.eval_config(),
    })
}

pub fn eval(a: EvalArgs) -> Result<(), Failure> {
    let s = eval_setup(&a)?;
    let report = episodic::evaluate(&s.model, &s.dataset, &s.eval)?;
    println!("{}", report.summary());
    if let Some(p) = &a.json_out {
        output::write_json(p, &report)?;
    }
    if let Some(p) = &a.csv_out {
        output::write_eval_csv(p, &report)?;
    }
    Ok(())
}

pub fn ablate(a: EvalArgs) -> Result<(), Failure> {
    let s = eval_setup(&a)?;
    let report = episodic::ablate(&s.model, &s.dataset, &s.eval)?;
    print!("{}", report.table());
    if let Some(p) = &a.json_out {
        output::write_json(p, &report)?;
    }
    if let Some(p) = &a.csv_out {
        #[derive(serde::Serialize)]
        struct Row {
            f_gamma: bool,
            f_psi: bool,
            mean_accuracy: f64,
            ci95_halfwidth: f64,
            support_retained: f64,
            query_retained: f64,
        }
        let rows: Vec<Row> = report
            .rows
            .iter()
            .map(|r| Row {
                f_gamma: r.f_gamma,
                f_psi: r.f_psi,
                mean_accuracy: r.report.mean_accuracy,
                ci95_halfwidth: r.report.ci95_halfwidth,
                support_retained: r.report.selection_stats.support_retained,
                query_retained: r.report.selection_stats.query_retained,
            })
            .collect();
        output::write_rows_csv(p, rows)?;
    }
    Ok(())
}

pub fn gradcheck(a: GradcheckArgs) -> Result<(), Failure> {
    let selection: SelectionModel = match &a.config {
        Some(p) => RunConfig::load(p).map_err(usage)?.model.selection,
        None => SelectionModel::default(),
    };
    let options = GradCheckOptions {
        epsilon: a.epsilon,
        tolerance: a.tolerance,
        sabotage: a.sabotage,
        ..GradCheckOptions::default()
    };
    let report = pipeline_gradient_check(&selection, a.seed, &options)?;
    for p in &report.params {
        println!("{:<24} n={:<4} max_rel_err={:.3e}", p.name, p.entries, p.max_rel_error);
    }
    println!("max_rel_err={:.3e} tolerance={:.1e}", report.max_rel_error, report.tolerance);
    if report.passed {
        return Ok(());
    }
    let offenders: Vec<String> = report
        .failures()
        .map(|p| format!("{} ({:.3e})", p.name, p.max_rel_error))
        .collect();
    Err(Failure::Check(format!(
        "gradient check failed, max relative error {:.3e}: {}",
        report.max_rel_error,
        offenders.join(", ")
    )))
}

