use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sampler::{episode_seed, sample_episode, EpisodeSpec};
use crate::descriptors::Dataset;
use crate::error::{Error, Result};
use crate::model::{Model, SelectionStats};

const EVAL_SALT: u64 = 0x6576_616c;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Episode shape; its seed roots the evaluation episode stream.
    pub episode: EpisodeSpec,
    pub n_episodes: usize,
    /// Threads for parallel episodes; results never depend on it.
    #[serde(default = "one")]
    pub workers: usize,
}

fn one() -> usize {
    1
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episode: EpisodeSpec::default(),
            n_episodes: 600,
            workers: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_episodes: usize,
    pub mean_accuracy: f64,
    /// `1.96 · σ / √n` with the population standard deviation σ.
    pub ci95_halfwidth: f64,
    pub per_episode: Vec<f64>,
    /// Mean retention over episodes.
    pub selection_stats: SelectionStats,
}

impl EvalReport {
    pub fn from_episodes(per_episode: Vec<f64>, stats: &[SelectionStats]) -> Result<Self> {
        let n = per_episode.len();
        if n == 0 {
            return Err(Error::invalid("a report needs at least one episode"));
        }
        let mean = per_episode.iter().sum::<f64>() / n as f64;
        let var = per_episode.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64;
        let k = stats.len().max(1) as f64;
        let selection_stats = SelectionStats {
            support_retained: stats.iter().map(|s| s.support_retained).sum::<f64>() / k,
            query_retained: stats.iter().map(|s| s.query_retained).sum::<f64>() / k,
        };
        Ok(Self {
            n_episodes: n,
            mean_accuracy: mean,
            ci95_halfwidth: 1.96 * var.sqrt() / (n as f64).sqrt(),
            per_episode,
            selection_stats,
        })
    }

    /// The one-line summary printed by the command line, `acc=<mean>±<ci> n=<episodes>`.
    pub fn summary(&self) -> String {
        format!(
            "acc={:.4}±{:.4} n={}",
            self.mean_accuracy, self.ci95_halfwidth, self.n_episodes
        )
    }
}

/// Evaluation-mode accuracy over `n_episodes` freshly sampled episodes.
pub fn evaluate(model: &Model, dataset: &Dataset, cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.episode.validate()?;
    if cfg.n_episodes == 0 {
        return Err(Error::invalid("n_episodes must be ≥ 1"));
    }
    let run = |i: usize| -> Result<(f64, SelectionStats)> {
        let seed = episode_seed(cfg.episode.seed, EVAL_SALT, i as u64);
        let episode = sample_episode(dataset, &cfg.episode.with_seed(seed))?;
        let out = model.evaluate_episode(&episode)?;
        Ok((out.accuracy, out.stats))
    };
    let results: Vec<(f64, SelectionStats)> = if cfg.workers <= 1 {
        (0..cfg.n_episodes).map(run).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::invalid(format!("cannot start {} workers: {e}", cfg.workers)))?;
        pool.install(|| (0..cfg.n_episodes).into_par_iter().map(run).collect::<Result<_>>())?
    };
    let (acc, stats): (Vec<f64>, Vec<SelectionStats>) = results.into_iter().unzip();
    EvalReport::from_episodes(acc, &stats)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub f_gamma: bool,
    pub f_psi: bool,
    pub report: EvalReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn get(&self, f_gamma: bool, f_psi: bool) -> Option<&EvalReport> {
        self.rows
            .iter()
            .find(|r| r.f_gamma == f_gamma && r.f_psi == f_psi)
            .map(|r| &r.report)
    }

    /// Aligned text table, one row per configuration.
    pub fn table(&self) -> String {
        let mark = |on: bool| if on { "yes" } else { "no" };
        let mut out = format!("{:<5} {:<5} {:>8} {:>8} {:>8} {:>8}\n", "F_Γ", "F_Ψ", "acc", "ci95", "S*", "Q kept");
        for r in &self.rows {
            out.push_str(&format!(
                "{:<5} {:<5} {:>8.4} {:>8.4} {:>8.4} {:>8.4}\n",
                mark(r.f_gamma),
                mark(r.f_psi),
                r.report.mean_accuracy,
                r.report.ci95_halfwidth,
                r.report.selection_stats.support_retained,
                r.report.selection_stats.query_retained,
            ));
        }
        out
    }
}

/// Evaluates one trained model with each selection network switched on or
/// off, on identical episodes. Rows follow the order both off, `F_Ψ` only,
/// `F_Γ` only, both on.
pub fn ablate(model: &Model, dataset: &Dataset, cfg: &EvalConfig) -> Result<AblationReport> {
    let mut rows = Vec::with_capacity(4);
    for (f_gamma, f_psi) in [(false, false), (false, true), (true, false), (true, true)] {
        let mut m = model.clone();
        m.config.selection.enable_support_selection = f_gamma;
        m.config.selection.enable_query_selection = f_psi;
        rows.push(AblationRow {
            f_gamma,
            f_psi,
            report: evaluate(&m, dataset, cfg)?,
        });
    }
    Ok(AblationReport { rows })
}
