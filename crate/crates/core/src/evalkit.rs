//! Unbiased pass@k and dataset-level evaluation of a frozen policy.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{PolicyParams, TokenFilter, Vocabulary};
use crate::rollout::{run_episode, RolloutLimits};
use crate::scene::{judge, Scene};
use crate::train::rollout_seed;

/// Step coordinate reserved for evaluation rollouts.
const EVAL_STEP: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub problem: u64,
    pub n: usize,
    pub c: usize,
}

/// Probability that at least one of `k` draws without replacement from `n`
/// attempts (`c` correct) is correct; exactly `c / n` for `k = 1`.
pub fn pass_at_k(c: usize, n: usize, k: usize) -> Result<f64> {
    if k < 1 || k > n {
        return Err(Error::Domain(format!("pass@k needs 1 <= k <= n, got k={k}, n={n}")));
    }
    if c > n {
        return Err(Error::Domain(format!("correct count {c} exceeds samples {n}")));
    }
    if k == 1 {
        return Ok(c as f64 / n as f64);
    }
    if n - c < k {
        return Ok(1.0);
    }
    let mut all_wrong = 1.0;
    for j in 0..k {
        all_wrong *= (n - c - j) as f64 / (n - j) as f64;
    }
    Ok(1.0 - all_wrong)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KEstimate {
    pub k: usize,
    pub estimate: f64,
    /// Standard error of the mean over problems.
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemLog {
    pub problem: u64,
    pub n: usize,
    pub c: usize,
    pub answer_key: String,
    pub answers: Vec<Option<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassKReport {
    pub estimates: Vec<KEstimate>,
    pub macro_accuracy: f64,
    pub records: Vec<SampleRecord>,
    pub temperature: f64,
    pub n: usize,
    pub seed: u64,
}

impl PassKReport {
    pub fn estimate(&self, k: usize) -> Option<f64> {
        self.estimates.iter().find(|e| e.k == k).map(|e| e.estimate)
    }

    /// Aggregates per-problem counts into a report.
    pub fn from_records(records: Vec<SampleRecord>, ks: &[usize], temperature: f64, n: usize, seed: u64) -> Result<Self> {
        let m = records.len();
        let mut estimates = Vec::with_capacity(ks.len());
        for &k in ks {
            let vals: Vec<f64> = records.iter().map(|r| pass_at_k(r.c, r.n, k)).collect::<Result<_>>()?;
            let (mean, stderr) = mean_and_stderr(&vals);
            estimates.push(KEstimate { k, estimate: mean, stderr });
        }
        let macro_accuracy = if m == 0 {
            0.0
        } else {
            records.iter().map(|r| r.c as f64 / r.n as f64).sum::<f64>() / m as f64
        };
        Ok(PassKReport {
            estimates,
            macro_accuracy,
            records,
            temperature,
            n,
            seed,
        })
    }
}

fn mean_and_stderr(vals: &[f64]) -> (f64, f64) {
    let m = vals.len();
    if m == 0 {
        return (0.0, 0.0);
    }
    let mean = vals.iter().sum::<f64>() / m as f64;
    if m < 2 {
        return (mean, 0.0);
    }
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
    (mean, (var / m as f64).sqrt())
}

/// Runs `n` independent rollouts per scene and reports pass@k for every `k`
/// in `ks`, with per-problem logs in scene order.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    params: &PolicyParams,
    vocab: &Vocabulary,
    scenes: &[Scene],
    n: usize,
    ks: &[usize],
    limits: &RolloutLimits,
    filter: TokenFilter,
    seed: u64,
) -> Result<(PassKReport, Vec<ProblemLog>)> {
    let max_k = ks.iter().copied().max().unwrap_or(1);
    if n < max_k || n == 0 {
        return Err(Error::Domain(format!("n = {n} is smaller than the largest k = {max_k}")));
    }
    let logs: Vec<ProblemLog> = scenes
        .par_iter()
        .map(|scene| {
            let mut answers = Vec::with_capacity(n);
            let mut c = 0;
            for s in 0..n as u64 {
                let mut rng = ChaCha8Rng::seed_from_u64(rollout_seed(seed, EVAL_STEP, scene.episode_index, s));
                let t = run_episode(params, vocab, scene, limits, filter, &mut rng)?;
                c += t.parsed_answer.as_deref().map_or(0, |a| usize::from(judge(scene, a)));
                answers.push(t.parsed_answer);
            }
            Ok(ProblemLog {
                problem: scene.episode_index,
                n,
                c,
                answer_key: scene.answer_key.clone(),
                answers,
            })
        })
        .collect::<Result<_>>()?;
    let records = logs
        .iter()
        .map(|l| SampleRecord {
            problem: l.problem,
            n: l.n,
            c: l.c,
        })
        .collect();
    let report = PassKReport::from_records(records, ks, limits.temperature, n, seed)?;
    Ok((report, logs))
}

pub fn report_csv(report: &PassKReport) -> String {
    let mut out = String::from("k,estimate,stderr\n");
    for e in &report.estimates {
        out.push_str(&format!("{},{:.6},{:.6}\n", e.k, e.estimate, e.stderr));
    }
    out
}

pub fn write_report_csv(report: &PassKReport, path: &Path) -> Result<()> {
    std::fs::write(path, report_csv(report)).map_err(|e| Error::io(path, e))
}

pub fn write_problem_log(logs: &[ProblemLog], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for l in logs {
        let s = serde_json::to_string(l).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(w, "{s}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_problem_log(path: &Path) -> Result<Vec<ProblemLog>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Format(format!("{}: {e}", path.display()))))
        .collect()
}
