//! Runs the arm matrix and writes per-arm artifacts.
//!
//! Layout of an output directory:
//!
//! ```text
//! config.toml            resolved configuration
//! corpus/                forged corpora and their reports
//! arms/<name>/           metrics.jsonl, timings.jsonl, checkpoint.zlpc,
//!                        passk.csv, passk.json, problems.jsonl, greedy.json
//!                        (or error.txt when the arm failed)
//! summary.txt            arm x {pass@1, pass@k_max, greedy pass@1}
//! summary.csv
//! ```
//!
//! A rerun always starts clean: existing arm directories are replaced.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ArmConfig, ExperimentConfig, VqaSource};
use super::metrics::{MetricsLog, MetricsRecord};
use crate::error::{Error, Result};
use crate::evalkit::{evaluate, write_problem_log, write_report_csv, PassKReport};
use crate::forge::{forge_corpus, write_corpus, write_report, ForgeConfig, QaRecord};
use crate::policy::{checkpoint, init_params, PolicyParams, Vocabulary};
use crate::rollout::RolloutLimits;
use crate::scene::{Scene, SceneGenerator, SceneSpec};
use crate::train::{rollout_seed, run_stage_with, scene_demo, text_example, SftExample, StageData, StageKind};

const TAG_SCENE: u64 = 1;
const TAG_FORGE: u64 = 2;
const TAG_INIT: u64 = 3;
const TAG_STAGE: u64 = 4;
const TAG_EVAL: u64 = 5;

/// Component seed derived from the global seed and a component-local one.
pub fn derive_seed(global: u64, tag: u64, local: u64) -> u64 {
    rollout_seed(global, tag, local, 0)
}

/// Scene spec with its seed combined with the global seed.
pub fn effective_scene_spec(config: &ExperimentConfig) -> SceneSpec {
    SceneSpec {
        seed: derive_seed(config.seed, TAG_SCENE, config.scene.seed),
        ..config.scene
    }
}

pub fn effective_forge_config(config: &ExperimentConfig, arm: Option<&ArmConfig>) -> ForgeConfig {
    let mut f = config.forge.clone();
    if let Some(arm) = arm {
        f.corpus_size = arm.text_corpus_size.unwrap_or(f.corpus_size);
        f.cot_enabled = arm.text_cot.unwrap_or(f.cot_enabled);
    }
    f.seed = derive_seed(config.seed, TAG_FORGE, config.forge.seed);
    f
}

fn stage_seed(global: u64, index: usize, kind: StageKind) -> u64 {
    derive_seed(global, TAG_STAGE, ((index as u64) << 8) | kind as u64)
}

pub fn eval_seed(global: u64) -> u64 {
    derive_seed(global, TAG_EVAL, 0)
}

/// Everything arms share: scenes, vocabulary, initial parameters and the
/// held-out set.
pub struct Workbench {
    pub config: ExperimentConfig,
    pub scenes: SceneGenerator,
    pub vocab: Vocabulary,
    pub init: PolicyParams,
    pub heldout: Vec<Scene>,
    corpora: Mutex<BTreeMap<(usize, bool), Arc<Vec<QaRecord>>>>,
    corpus_dir: Option<PathBuf>,
}

impl Workbench {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let scenes = SceneGenerator::new(effective_scene_spec(config))?;
        let vocab = Vocabulary::for_scene(scenes.spec());
        let dims = config.policy.dims(vocab.len());
        let init = init_params(derive_seed(config.seed, TAG_INIT, 0), dims)?;
        let heldout = config.eval.heldout().into_iter().map(|i| scenes.generate(i)).collect();
        Ok(Workbench {
            config: config.clone(),
            scenes,
            vocab,
            init,
            heldout,
            corpora: Mutex::new(BTreeMap::new()),
            corpus_dir: None,
        })
    }

    /// Persist forged corpora under `dir`.
    pub fn with_corpus_dir(mut self, dir: &Path) -> Self {
        self.corpus_dir = Some(dir.to_path_buf());
        self
    }

    /// Forged records for an arm, cached by (size, cot).
    pub fn corpus(&self, arm: &ArmConfig) -> Result<Arc<Vec<QaRecord>>> {
        let forge = effective_forge_config(&self.config, Some(arm));
        let key = (forge.corpus_size, forge.cot_enabled);
        let mut cache = self.corpora.lock().map_err(|_| Error::Contract("corpus cache poisoned".into()))?;
        if let Some(c) = cache.get(&key) {
            return Ok(Arc::clone(c));
        }
        let corpus = forge_corpus(self.scenes.rulebase(), &forge)?;
        if let Some(dir) = &self.corpus_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let stem = format!("text_qa_n{}_{}", key.0, if key.1 { "cot" } else { "nocot" });
            write_corpus(&corpus.records, &dir.join(format!("{stem}.jsonl")))?;
            write_report(&corpus.report, &dir.join(format!("{stem}.report.json")))?;
        }
        let records = Arc::new(corpus.records);
        cache.insert(key, Arc::clone(&records));
        Ok(records)
    }

    fn vqa_examples(&self, arm: &ArmConfig) -> Result<Vec<SftExample>> {
        let pool = match arm.vqa {
            VqaSource::None => return Ok(Vec::new()),
            VqaSource::Separate => self.config.pools.separate_pool(),
            VqaSource::Prewarm => self.config.pools.rl_pool(),
        };
        pool.into_iter()
            .map(|i| scene_demo(&self.vocab, &self.scenes.generate(i), self.scenes.rulebase(), arm.vqa_cot))
            .collect()
    }

    fn text_examples(&self, arm: &ArmConfig) -> Result<Vec<SftExample>> {
        if !arm.text {
            return Ok(Vec::new());
        }
        Ok(self.corpus(arm)?.iter().filter_map(|r| text_example(&self.vocab, r)).collect())
    }

    /// Trains an arm from the shared initial parameters, calling `on_step`
    /// with every metrics record.
    pub fn train_arm(
        &self,
        arm: &ArmConfig,
        on_step: &mut dyn FnMut(MetricsRecord, f64) -> Result<()>,
    ) -> Result<PolicyParams> {
        let needs_sft = arm.stages.iter().any(|s| s.name == StageKind::Sft.name());
        let (text, vqa) = if needs_sft {
            (self.text_examples(arm)?, self.vqa_examples(arm)?)
        } else {
            (Vec::new(), Vec::new())
        };
        let rl_pool = self.config.pools.rl_pool();
        let mut params = self.init.clone();
        for (index, desc) in arm.stages.iter().enumerate() {
            let kind = desc.kind()?;
            let data = StageData {
                vocab: &self.vocab,
                scenes: &self.scenes,
                text: &text,
                vqa: &vqa,
                text_weight: arm.text_weight,
                vqa_weight: arm.vqa_weight,
                rl_pool: &rl_pool,
                seed: stage_seed(self.config.seed, index, kind),
            };
            let mut clock = Instant::now();
            let mut log = |m: &crate::train::StepMetrics| {
                let wall_ms = clock.elapsed().as_secs_f64() * 1e3;
                clock = Instant::now();
                on_step(
                    MetricsRecord {
                        arm: arm.name.clone(),
                        stage: desc.name.clone(),
                        stage_index: index,
                        step: m.step,
                        metrics: m.metrics.clone(),
                    },
                    wall_ms,
                )
            };
            params = run_stage_with(desc, &data, params, &mut log)
                .map_err(|e| Error::Contract(format!("stage {index} ({}): {e}", desc.name)))?
                .0;
        }
        Ok(params)
    }

    pub fn tool_filter(&self, tools: bool) -> Option<Vec<bool>> {
        (!tools).then(|| self.vocab.without_tools())
    }

    /// Sampled pass@k and (optionally) greedy pass@1 on the held-out scenes.
    pub fn evaluate(&self, params: &PolicyParams, tools: bool) -> Result<Evaluation> {
        let filter = self.tool_filter(tools);
        let eval = &self.config.eval;
        let seed = eval_seed(self.config.seed);
        let (passk, problems) = evaluate(
            params,
            &self.vocab,
            &self.heldout,
            eval.n,
            &eval.ks,
            &eval.limits,
            filter.as_deref(),
            seed,
        )?;
        let greedy = if eval.greedy {
            let limits = RolloutLimits {
                temperature: 0.0,
                ..eval.limits
            };
            Some(evaluate(params, &self.vocab, &self.heldout, 1, &[1], &limits, filter.as_deref(), seed)?.0)
        } else {
            None
        };
        Ok(Evaluation { passk, problems, greedy })
    }
}

pub struct Evaluation {
    pub passk: PassKReport,
    pub problems: Vec<crate::evalkit::ProblemLog>,
    pub greedy: Option<PassKReport>,
}

impl Evaluation {
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_report_csv(&self.passk, &dir.join("passk.csv"))?;
        write_json(&self.passk, &dir.join("passk.json"))?;
        write_problem_log(&self.problems, &dir.join("problems.jsonl"))?;
        if let Some(g) = &self.greedy {
            write_json(g, &dir.join("greedy.json"))?;
        }
        Ok(())
    }
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    s.push('\n');
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmOutcome {
    pub name: String,
    pub pass_at_1: Option<f64>,
    pub k_max: usize,
    pub pass_at_k_max: Option<f64>,
    pub greedy_pass_at_1: Option<f64>,
    pub error: Option<String>,
}

impl ArmOutcome {
    pub fn from_reports(name: &str, passk: &PassKReport, greedy: Option<&PassKReport>) -> Self {
        let k_max = passk.estimates.iter().map(|e| e.k).max().unwrap_or(1);
        ArmOutcome {
            name: name.to_string(),
            pass_at_1: passk.estimate(1),
            k_max,
            pass_at_k_max: passk.estimate(k_max),
            greedy_pass_at_1: greedy.and_then(|g| g.estimate(1)),
            error: None,
        }
    }

    fn failed(name: &str, k_max: usize, error: String) -> Self {
        ArmOutcome {
            name: name.to_string(),
            pass_at_1: None,
            k_max,
            pass_at_k_max: None,
            greedy_pass_at_1: None,
            error: Some(error),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub seed: u64,
    pub arms: Vec<ArmOutcome>,
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{:.2}", 100.0 * x))
}

impl Summary {
    pub fn arm(&self, name: &str) -> Option<&ArmOutcome> {
        self.arms.iter().find(|a| a.name == name)
    }

    pub fn table(&self) -> String {
        let k_max = self.arms.iter().map(|a| a.k_max).max().unwrap_or(1);
        let width = self.arms.iter().map(|a| a.name.len()).max().unwrap_or(3).max(3);
        let mut out = format!(
            "{:<width$}  {:>8}  {:>8}  {:>10}  status\n",
            "arm",
            "pass@1",
            format!("pass@{k_max}"),
            "greedy@1"
        );
        for a in &self.arms {
            let status = a.error.as_deref().map_or("ok".to_string(), |e| format!("failed: {e}"));
            out.push_str(&format!(
                "{:<width$}  {:>8}  {:>8}  {:>10}  {status}\n",
                a.name,
                pct(a.pass_at_1),
                pct(a.pass_at_k_max),
                pct(a.greedy_pass_at_1)
            ));
        }
        out
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("arm,pass_at_1,k_max,pass_at_k_max,greedy_pass_at_1,status\n");
        let f = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
        for a in &self.arms {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                a.name,
                f(a.pass_at_1),
                a.k_max,
                f(a.pass_at_k_max),
                f(a.greedy_pass_at_1),
                if a.error.is_some() { "failed" } else { "ok" }
            ));
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let txt = dir.join("summary.txt");
        std::fs::write(&txt, self.table()).map_err(|e| Error::io(&txt, e))?;
        let csv = dir.join("summary.csv");
        std::fs::write(&csv, self.csv()).map_err(|e| Error::io(&csv, e))
    }
}

pub fn arm_dir(out: &Path, arm: &str) -> PathBuf {
    out.join("arms").join(arm)
}

fn fresh_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        std::fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Trains, evaluates and persists one arm.
pub fn run_arm(bench: &Workbench, arm: &ArmConfig, dir: &Path) -> Result<ArmOutcome> {
    fresh_dir(dir)?;
    let mut log = MetricsLog::create(dir)?;
    let params = bench.train_arm(arm, &mut |record, ms| log.append(&record, ms))?;
    log.flush()?;
    checkpoint::save(&params, &dir.join("checkpoint.zlpc"))?;
    let eval = bench.evaluate(&params, arm.eval_tools)?;
    eval.write(dir)?;
    Ok(ArmOutcome::from_reports(&arm.name, &eval.passk, eval.greedy.as_ref()))
}

fn run_arm_logged(bench: &Workbench, arm: &ArmConfig, out: &Path) -> ArmOutcome {
    let dir = arm_dir(out, &arm.name);
    match run_arm(bench, arm, &dir) {
        Ok(o) => o,
        Err(e) => {
            let msg = e.to_string();
            let _ = std::fs::create_dir_all(&dir);
            let _ = std::fs::write(dir.join("error.txt"), format!("{msg}\n"));
            ArmOutcome::failed(&arm.name, bench.config.eval.k_max(), msg)
        }
    }
}

/// Runs every arm, writing artifacts under `out`. Arm failures are recorded
/// in the summary; only setup errors abort the run.
pub fn run_experiment(config: &ExperimentConfig, out: &Path) -> Result<Summary> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let bench = Workbench::new(config)?.with_corpus_dir(&out.join("corpus"));
    let cfg_path = out.join("config.toml");
    std::fs::write(&cfg_path, config.to_toml()?).map_err(|e| Error::io(&cfg_path, e))?;
    let arms = if config.parallel_arms {
        config.arms.par_iter().map(|a| run_arm_logged(&bench, a, out)).collect()
    } else {
        config.arms.iter().map(|a| run_arm_logged(&bench, a, out)).collect()
    };
    let summary = Summary { seed: config.seed, arms };
    summary.write(out)?;
    Ok(summary)
}

/// Forges the base corpus (and any per-arm variants) into `out/corpus`.
pub fn run_forge(config: &ExperimentConfig, out: &Path) -> Result<Vec<(String, usize)>> {
    let bench = Workbench::new(config)?.with_corpus_dir(&out.join("corpus"));
    let base = ArmConfig {
        text: true,
        ..ArmConfig::default()
    };
    let mut made = BTreeMap::new();
    for arm in std::iter::once(&base).chain(config.arms.iter().filter(|a| a.text)) {
        let f = effective_forge_config(config, Some(arm));
        let n = bench.corpus(arm)?.len();
        made.insert(format!("n{}_{}", f.corpus_size, if f.cot_enabled { "cot" } else { "nocot" }), n);
    }
    Ok(made.into_iter().collect())
}

/// Rebuilds the summary of an experiment directory from the per-arm logs.
pub fn collect_summary(out: &Path) -> Result<Summary> {
    let cfg = ExperimentConfig::load(&out.join("config.toml"))?;
    let mut arms = Vec::new();
    for arm in &cfg.arms {
        let dir = arm_dir(out, &arm.name);
        let passk = dir.join("passk.json");
        if passk.exists() {
            let report: PassKReport = read_json(&passk)?;
            let gpath = dir.join("greedy.json");
            let greedy: Option<PassKReport> = if gpath.exists() { Some(read_json(&gpath)?) } else { None };
            arms.push(ArmOutcome::from_reports(&arm.name, &report, greedy.as_ref()));
        } else {
            let err = std::fs::read_to_string(dir.join("error.txt")).unwrap_or_else(|_| "missing outputs".into());
            arms.push(ArmOutcome::failed(&arm.name, cfg.eval.k_max(), err.trim().to_string()));
        }
    }
    Ok(Summary { seed: cfg.seed, arms })
}
