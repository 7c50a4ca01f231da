use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::descriptors::{DescriptorSet, LabeledSample};
use crate::diffmath::{gradient_check, GradCheckOptions};
use crate::embedding::TransformInit;
use crate::selection::Strategy;

fn random_set(rng: &mut ChaCha8Rng, h: usize, w: usize, d: usize) -> Arc<DescriptorSet> {
    let m = Matrix::from_shape_fn((h * w, d), |_| rng.random_range(-1.0..1.0));
    Arc::new(DescriptorSet::new(m, h, w).unwrap())
}

fn toy_episode(seed: u64, n: usize, k: usize, q: usize, grid: GridDims) -> Episode {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut support = Vec::new();
    let mut queries = Vec::new();
    for c in 0..n {
        for _ in 0..k {
            support.push(LabeledSample::new(random_set(&mut rng, grid.h, grid.w, grid.c), c));
        }
        for _ in 0..q {
            queries.push(LabeledSample::new(random_set(&mut rng, grid.h, grid.w, grid.c), c));
        }
    }
    Episode::new(n, k, support, queries).unwrap()
}

const GRID: GridDims = GridDims { h: 2, w: 3, c: 4 };

fn class_scores(model: &Model, ep: &Episode) -> Matrix {
    model.evaluate_episode(ep).unwrap().scores.per_query
}

fn jitter(model: &mut Model, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in model.params.values_mut() {
        v.mapv_inplace(|x| x + rng.random_range(-scale..scale));
    }
}

#[test]
fn init_layout() {
    let model = Model::init(ModelConfig::new(GRID), 0).unwrap();
    let names: Vec<&str> = model.params.keys().map(String::as_str).collect();
    assert!(names.contains(&"f_gamma.fc1.weight") && names.contains(&"transform.weight"));
    assert_eq!(model.params["f_psi.fc1.weight"].dim(), (8, 4));
    assert_eq!(model.params["f_gamma.fc2.weight"].dim(), (4, 1));
    assert!(model.buffers.contains_key("transform.bn.running_var"));
    model.validate().unwrap();
    assert_eq!(Model::init(ModelConfig::new(GRID), 0).unwrap(), model);

    let mut broken = model.clone();
    broken.params.insert("transform.weight".into(), Matrix::zeros((3, 4)));
    assert!(broken.validate().is_err());
}

#[test]
fn identity_pipeline_is_transparent() {
    let mut cfg = ModelConfig::new(GRID);
    cfg.transform = TransformConfig::disabled();
    cfg.selection.strategy = Strategy::All;
    cfg.selection.enable_support_selection = false;
    let model = Model::init(cfg.clone(), 1).unwrap();
    let ep = toy_episode(2, 3, 2, 2, GRID);
    let got = class_scores(&model, &ep);

    // Same stages fed the raw descriptors directly.
    let mut g = Graph::new();
    let bound = model.bind(&mut g);
    let stack = |samples: &[LabeledSample]| {
        let views: Vec<_> = samples.iter().map(|s| s.set.descriptors().view()).collect();
        ndarray::concatenate(ndarray::Axis(0), &views).unwrap()
    };
    let s = g.constant(stack(ep.support()));
    let q = g.constant(stack(ep.queries()));
    let layout = PoolLayout { n_way: 3, k_shot: 2, m: 6, mode: AggregationMode::Union };
    let sup = support_stage(&mut g, &bound, &cfg.selection, s, layout).unwrap();
    let qs = query_stage(&mut g, &bound, &cfg.selection, q, 6, &sup).unwrap();
    assert_eq!(&got, g.value(qs.class_scores));

    // An identity-initialized transform without normalization changes nothing
    // on positive inputs.
    let mut cfg2 = cfg.clone();
    cfg2.transform = TransformConfig { normalization: false, ..TransformConfig::default() };
    let model2 = Model::init(cfg2, 1).unwrap();
    let pos = ep.scaled(1.0).unwrap();
    let abs = |e: &Episode| {
        let fix = |s: &LabeledSample| LabeledSample {
            set: Arc::new(DescriptorSet::new(s.set.descriptors().mapv(f64::abs), s.set.height(), s.set.width()).unwrap()),
            ..s.clone()
        };
        Episode::new(3, 2, e.support().iter().map(fix).collect(), e.queries().iter().map(fix).collect()).unwrap()
    };
    let pos = abs(&pos);
    assert_eq!(class_scores(&model, &pos), class_scores(&model2, &pos));
}

#[test]
fn zero_transform_gives_uniform_posteriors() {
    let mut cfg = ModelConfig::new(GRID);
    cfg.transform.init = TransformInit::Zero;
    let model = Model::init(cfg, 0).unwrap();
    let ep = toy_episode(3, 5, 1, 3, GRID);
    let out = model.evaluate_episode(&ep).unwrap();
    assert!((out.loss - 5f64.ln()).abs() < 1e-12);
    assert!(out.scores.posteriors.iter().all(|&p| (p - 0.2).abs() < 1e-12));
}

#[test]
fn scale_invariance_of_predictions() {
    let mut cfg = ModelConfig::new(GRID);
    cfg.transform = TransformConfig::disabled();
    cfg.selection.strategy = Strategy::All;
    let model = Model::init(cfg, 5).unwrap();
    for seed in 0..5 {
        let ep = toy_episode(seed, 4, 1, 3, GRID);
        let base = model.evaluate_episode(&ep).unwrap();
        for f in [0.05, 7.0] {
            let other = model.evaluate_episode(&ep.scaled(f).unwrap()).unwrap();
            assert_eq!(base.scores.predicted, other.scores.predicted);
            assert!((&base.scores.per_query - &other.scores.per_query).iter().all(|d| d.abs() < 1e-9));
        }
    }
}

#[test]
fn class_permutation_equivariance() {
    let mut model = Model::init(ModelConfig::new(GRID), 9).unwrap();
    jitter(&mut model, 3, 0.1);
    for seed in 0..5 {
        let ep = toy_episode(seed + 10, 3, 2, 2, GRID);
        let perm = [2, 0, 1];
        let base = class_scores(&model, &ep);
        let moved = model.evaluate_episode(&ep.permuted(&perm).unwrap()).unwrap();
        // Query order is preserved, so column c of the original lands at perm[c].
        for qi in 0..base.nrows() {
            for c in 0..3 {
                assert!((base[[qi, c]] - moved.scores.per_query[[qi, perm[c]]]).abs() < 1e-9);
            }
        }
        let base_pred = EpisodeScores::from_scores(base).predicted;
        let mapped: Vec<usize> = base_pred.iter().map(|&c| perm[c]).collect();
        assert_eq!(mapped, moved.scores.predicted);
    }
}

#[test]
fn ablation_identities() {
    let mut base_cfg = ModelConfig::new(GRID);
    base_cfg.transform.init = TransformInit::Random;
    let mut model = Model::init(base_cfg, 4).unwrap();
    jitter(&mut model, 8, 0.2);
    let ep = toy_episode(6, 3, 2, 2, GRID);
    let with = |f: &dyn Fn(&mut SelectionModel)| {
        let mut m = model.clone();
        f(&mut m.config.selection);
        m
    };

    // F_Γ off: S* is the full transformed pool, bit for bit.
    let off = with(&|s| s.enable_support_selection = false);
    let mut g = Graph::new();
    let bound = off.bind(&mut g);
    let fwd = off.forward(&mut g, &bound, &ep, Mode::Eval, &mut Vec::new()).unwrap();
    let pools = g.value(fwd.support.pools);
    for c in 0..3 {
        assert_eq!(fwd.support.subset.descriptors[c], pools.slice(ndarray::s![c * 12..(c + 1) * 12, ..]));
    }
    assert!(fwd.aux_loss.is_none());

    // F_Ψ off: class scores are plain γ sums.
    let qoff = with(&|s| s.enable_query_selection = false);
    let mut g = Graph::new();
    let bound = qoff.bind(&mut g);
    let fwd = qoff.forward(&mut g, &bound, &ep, Mode::Eval, &mut Vec::new()).unwrap();
    let gamma = g.value(fwd.query.gamma);
    let scores = g.value(fwd.query.class_scores);
    for qi in 0..6 {
        for c in 0..3 {
            let sum: f64 = (qi * 6..qi * 6 + 6).map(|r| gamma[[r, c]]).sum();
            assert!((scores[[qi, c]] - sum).abs() < 1e-6);
        }
    }

    // Both off equals the strategy=all baseline without support selection.
    let both_off = with(&|s| {
        s.enable_support_selection = false;
        s.enable_query_selection = false;
    });
    let dn4 = with(&|s| {
        s.enable_support_selection = false;
        s.strategy = Strategy::All;
    });
    assert_eq!(class_scores(&both_off, &ep), class_scores(&dn4, &ep));
}

#[test]
fn zero_aux_weight_leaves_episode_loss() {
    let model = Model::init(ModelConfig::new(GRID), 2).unwrap();
    let ep = toy_episode(1, 2, 1, 2, GRID);
    let mut g = Graph::new();
    let bound = model.bind(&mut g);
    let fwd = model.forward(&mut g, &bound, &ep, Mode::Train, &mut Vec::new()).unwrap();
    let total = fwd.total_loss(&mut g, 0.0);
    assert_eq!(g.scalar(total), g.scalar(fwd.episode_loss));
    let total = fwd.total_loss(&mut g, 0.5);
    let aux = g.scalar(fwd.aux_loss.unwrap());
    assert!((g.scalar(total) - g.scalar(fwd.episode_loss) - 0.5 * aux).abs() < 1e-12);
}

#[test]
fn train_mode_reports_batch_statistics() {
    let mut cfg = ModelConfig::new(GridDims { h: 4, w: 4, c: 2 });
    cfg.backbone = BackboneKind::TinyConv { hidden: 3, out_dim: 4 };
    let model = Model::init(cfg, 0).unwrap();
    let ep = toy_episode(0, 2, 1, 1, GridDims { h: 4, w: 4, c: 2 });
    let mut g = Graph::new();
    let bound = model.bind(&mut g);
    let mut obs = Vec::new();
    model.forward(&mut g, &bound, &ep, Mode::Train, &mut obs).unwrap();
    let prefixes: Vec<&str> = obs.iter().map(|o| o.prefix.as_str()).collect();
    assert_eq!(prefixes, ["backbone.bn1", "backbone.bn2", "transform.bn"]);
    assert!(model.forward(&mut Graph::new(), &bound, &toy_episode(0, 2, 1, 1, GRID), Mode::Eval, &mut obs).is_err());
}

#[test]
fn end_to_end_gradcheck() {
    let grid = GridDims { h: 4, w: 4, c: 2 };
    for (seed, backbone) in [
        (0, BackboneKind::PatchLinear { patch: 2, out_dim: 3 }),
        (1, BackboneKind::PatchLinear { patch: 2, out_dim: 3 }),
        (2, BackboneKind::TinyConv { hidden: 2, out_dim: 3 }),
    ] {
        let mut cfg = ModelConfig::new(grid);
        cfg.backbone = backbone;
        cfg.transform.init = TransformInit::Random;
        let mut model = Model::init(cfg, seed).unwrap();
        jitter(&mut model, seed + 50, 0.3);
        let ep = toy_episode(seed, 2, 1, 2, grid);
        let report = gradient_check(
            |g, b| {
                let fwd = model.forward(g, b, &ep, Mode::Train, &mut Vec::new())?;
                Ok(fwd.total_loss(g, model.config.aux_weight))
            },
            &model.params,
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(
            report.passed,
            "seed {seed}: {} {:?}",
            report.max_rel_error,
            report.failures().collect::<Vec<_>>()
        );
        let nonzero = report.params.iter().filter(|p| p.worst.is_some_and(|w| w.1.abs() > 1e-8)).count();
        assert!(nonzero > report.params.len() / 2, "most parameters should receive gradient");
    }
}

#[test]
fn toy_pipeline_check_passes_and_catches_sabotage() {
    let report = pipeline_gradient_check(&SelectionModel::default(), 0, &GradCheckOptions::default()).unwrap();
    assert!(report.passed, "{}", report.max_rel_error);
    assert!(report.params.iter().any(|p| p.name.starts_with("backbone.")));
    let bad = GradCheckOptions { sabotage: Some(1.01), ..Default::default() };
    let report = pipeline_gradient_check(&SelectionModel::default(), 0, &bad).unwrap();
    assert!(!report.passed);
}
