//! Round-robin search over all enumerated gentrees.

use std::time::{Duration, Instant};

use thiserror::Error;

use crate::data::Dataset;
use crate::dims::UnitSpec;
use crate::enumerate::{enumerate_gentrees, EnumError, OperatorSet};
use crate::fit::{FitError, FitResult, FitStatus, Prepared, SearchConfig, TreeFit};
use crate::select::{pareto_front, ParetoPoint};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("dataset has no points")]
    EmptyData,
    #[error("time budget must be positive")]
    ZeroBudget,
    #[error(transparent)]
    Enumerate(#[from] EnumError),
    #[error(transparent)]
    Fit(#[from] FitError),
}

/// Search progress after each round, for reporting.
#[derive(Clone, Debug, Default)]
pub struct SearchLog {
    pub rounds: usize,
    pub trees: usize,
    pub cancelled: usize,
    pub elapsed: f64,
}

/// Fits every gentree of depth at most `cfg.depth` and returns results ranked by (sse, complexity).
pub fn run_search(
    data: &Dataset,
    cfg: &SearchConfig,
    ops: &OperatorSet,
    units: Option<&UnitSpec>,
) -> Result<Vec<FitResult>, SearchError> {
    run_search_logged(data, cfg, ops, units).map(|(r, _)| r)
}

pub fn run_search_logged(
    data: &Dataset,
    cfg: &SearchConfig,
    ops: &OperatorSet,
    units: Option<&UnitSpec>,
) -> Result<(Vec<FitResult>, SearchLog), SearchError> {
    if data.is_empty() {
        return Err(SearchError::EmptyData);
    }
    if !(cfg.budget_s > 0.0) {
        return Err(SearchError::ZeroBudget);
    }
    let mut cfg = cfg.clone();
    cfg.signs = (ops.add, ops.sub);
    if !ops.has_sum() {
        cfg.signs = (true, false);
    }
    let trees = enumerate_gentrees(ops, cfg.depth)?;
    let prep = Prepared::new(data, &cfg, units)?;
    let mut jobs: Vec<TreeFit> = trees.iter().map(|t| TreeFit::new(t, &prep, &cfg)).collect();
    let depths: Vec<usize> = trees.iter().map(|t| t.depth()).collect();
    let start = Instant::now();
    let budget = Duration::from_secs_f64(cfg.budget_s);
    let slice = Duration::from_secs_f64(cfg.time_slice_s);
    let workers = cfg.workers.max(1);
    let mut log = SearchLog { trees: jobs.len(), ..SearchLog::default() };
    loop {
        let pending: Vec<usize> = (0..jobs.len()).filter(|&i| !jobs[i].is_finished()).collect();
        if pending.is_empty() {
            break;
        }
        if start.elapsed() >= budget {
            for &i in &pending {
                jobs[i].stop(FitStatus::TimeLimited);
            }
            break;
        }
        log.rounds += 1;
        let evals = cfg.slice_evals;
        if workers == 1 {
            for &i in &pending {
                let deadline = Instant::now() + slice;
                jobs[i].step(evals, Some(deadline.min(start + budget)));
            }
        } else {
            let mut refs: Vec<&mut TreeFit> = jobs.iter_mut().filter(|j| !j.is_finished()).collect();
            let chunk = refs.len().div_ceil(workers);
            std::thread::scope(|s| {
                for part in refs.chunks_mut(chunk) {
                    s.spawn(move || {
                        for job in part.iter_mut() {
                            let deadline = Instant::now() + slice;
                            job.step(evals, Some(deadline.min(start + budget)));
                        }
                    });
                }
            });
        }
        // Incumbent update in enumeration order keeps the outcome independent of worker count.
        let mut incumbent: Option<(f64, usize, usize)> = None;
        for (i, job) in jobs.iter().enumerate() {
            let r = job.result();
            if r.formula.is_none() {
                continue;
            }
            let cand = (r.sse, r.complexity(), i);
            if incumbent.map(|b| (cand.0, cand.1) < (b.0, b.1)).unwrap_or(true) {
                incumbent = Some(cand);
            }
        }
        if let Some((sse, cx, i)) = incumbent {
            if sse < cfg.tolerance {
                let d = depths[i];
                for (j, job) in jobs.iter_mut().enumerate() {
                    if job.is_finished() {
                        continue;
                    }
                    if depths[j] > d || job.tree.complexity() > cx {
                        job.stop(FitStatus::AbortedByIncumbent);
                        log.cancelled += 1;
                    }
                }
            }
        }
    }
    log.elapsed = start.elapsed().as_secs_f64();
    let mut results: Vec<FitResult> = jobs.iter().map(|j| j.result()).filter(|r| r.formula.is_some()).collect();
    results.sort_by(|a, b| {
        rank_key(a.sse)
            .total_cmp(&rank_key(b.sse))
            .then(a.complexity().cmp(&b.complexity()))
            .then(a.tree.serialize().cmp(&b.tree.serialize()))
    });
    Ok((results, log))
}

// sse rounded to nine significant digits, so that float noise does not outrank complexity.
fn rank_key(sse: f64) -> f64 {
    if sse == 0.0 || !sse.is_finite() {
        return sse;
    }
    format!("{sse:.8e}").parse().unwrap_or(sse)
}

/// Nondominated (complexity, sse) points of a run, minimizing both.
pub fn pareto_of_run(results: &[FitResult]) -> Vec<ParetoPoint> {
    let pts: Vec<ParetoPoint> = results
        .iter()
        .filter_map(|r| {
            let f = r.formula.as_ref()?;
            Some(ParetoPoint { complexity: f.complexity() as f64, score: r.sse, label: f.to_infix(&default_names(f)) })
        })
        .collect();
    pareto_front(&pts)
}

fn default_names(f: &crate::expr::Formula) -> Vec<String> {
    let n = f.leaves().first().map(|l| l.powers.len()).unwrap_or(0);
    (1..=n).map(|i| format!("x{i}")).collect()
}
