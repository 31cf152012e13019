//! Acceptance criteria. Each test writes one `[criterion N] PASS|FAIL` line
//! to stderr (bypassing output capture) before asserting.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use zoomlab::evalkit::pass_at_k;
use zoomlab::forge::{forge_corpus, Corruption, ForgeConfig, Verdict};
use zoomlab::policy::{
    context_window, forward_pass, logprob_and_grad, PolicyDims, PolicyParams, Vocabulary, PAD_ID,
};
use zoomlab::reward::{score, RewardConfig};
use zoomlab::rollout::{parse_answer, run_episode, Role, RolloutLimits, Token, Trajectory};
use zoomlab::runner::{run_arm, run_experiment, ExperimentConfig, Workbench};
use zoomlab::scene::{SceneGenerator, SceneSpec};
use zoomlab::train::{
    grpo_advantages, grpo_objective, scene_demo, sft_objective, AdvantageMode, GroupBatch, SftExample, SftSource,
    TrainConfig,
};

fn verdict(n: u32, pass: bool, detail: &str) {
    let line = format!("[criterion {n}] {} {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
}

fn random_params(dims: PolicyDims, rng: &mut ChaCha8Rng, scale: f64) -> PolicyParams {
    let values = (0..dims.param_count()).map(|_| rng.gen_range(-scale..scale)).collect();
    PolicyParams::from_values(dims, values).unwrap()
}

fn binom(n: usize, k: usize) -> usize {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

#[test]
fn criterion_1_pass_at_k_matches_subset_enumeration() {
    let t = Instant::now();
    let mut worst = 0.0f64;
    let mut cases = 0;
    for n in 1..=10usize {
        for c in 0..=n {
            for k in 1..=n {
                // Samples 0..c are the correct ones.
                let (mut hit, mut total) = (0usize, 0usize);
                for mask in 0u32..(1 << n) {
                    if mask.count_ones() as usize == k {
                        total += 1;
                        hit += usize::from(mask & ((1u32 << c) - 1) != 0);
                    }
                }
                assert_eq!(total, binom(n, k));
                let brute = hit as f64 / total as f64;
                worst = worst.max((pass_at_k(c, n, k).unwrap() - brute).abs());
                cases += 1;
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = worst <= 1e-12 && secs < 1.0;
    verdict(1, pass, &format!("{cases} (n,c,k) cases, max |err| = {worst:.1e}, {secs:.3}s"));
    assert!(pass);
}

#[test]
fn criterion_2_gradients_match_central_differences() {
    let t = Instant::now();
    let dims = PolicyDims {
        vocab: 6,
        embed: 3,
        hidden: 5,
        window: 4,
    };
    let h = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst, mut coords) = (0.0f64, 0usize);
    let triples = 120;
    for _ in 0..triples {
        let params = random_params(dims, &mut rng, 0.8);
        let ctx: Vec<usize> = (0..dims.window).map(|_| rng.gen_range(0..dims.vocab)).collect();
        let token = rng.gen_range(0..dims.vocab);
        let (_, grad) = logprob_and_grad(&params, &ctx, token).unwrap();
        let lp = |p: &PolicyParams| forward_pass(p, &ctx, None).unwrap().logprob(token);
        let mut probe = params.clone();
        for i in 0..params.values.len() {
            let v = params.values[i];
            probe.values[i] = v + h;
            let up = lp(&probe);
            probe.values[i] = v - h;
            let down = lp(&probe);
            probe.values[i] = v;
            let fd = (up - down) / (2.0 * h);
            let a = grad.values[i];
            let scale = a.abs().max(fd.abs());
            // Coordinates whose true gradient is below the differencing noise
            // floor are compared absolutely.
            let err = if scale > 1e-6 { (a - fd).abs() / scale } else { (a - fd).abs() / 1e-6 };
            worst = worst.max(err);
            coords += 1;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = worst < 1e-4 && secs < 30.0;
    verdict(
        2,
        pass,
        &format!("{triples} triples, {coords} coordinates, max rel err = {worst:.2e}, {secs:.2}s"),
    );
    assert!(pass);
}

/// A random trajectory: prompt, then alternating model and observation
/// blocks, always ending in an observation block.
fn random_trajectory(rng: &mut ChaCha8Rng, vocab: usize) -> Vec<Token> {
    let mut toks: Vec<Token> = (0..rng.gen_range(2..6)).map(|_| Token::new(rng.gen_range(1..vocab), Role::Prompt)).collect();
    for _ in 0..rng.gen_range(1..4) {
        for _ in 0..rng.gen_range(1..4) {
            toks.push(Token::new(rng.gen_range(1..vocab), Role::Model));
        }
        for _ in 0..rng.gen_range(1..9) {
            toks.push(Token::new(rng.gen_range(1..vocab), Role::Observation));
        }
    }
    toks
}

/// Observation positions outside every model token's context window.
fn unseen_observations(toks: &[Token], window: usize) -> Vec<usize> {
    (0..toks.len())
        .filter(|&p| toks[p].role == Role::Observation)
        .filter(|&p| !toks.iter().enumerate().any(|(t, tok)| tok.role == Role::Model && t > p && t - p <= window))
        .collect()
}

fn as_trajectory(tokens: Vec<Token>) -> Trajectory {
    let m = tokens.iter().filter(|t| t.role == Role::Model).count();
    Trajectory {
        tokens,
        logprobs: vec![0.0; m],
        tool_calls: 0,
        successful_zooms: 0,
        parsed_answer: None,
        format_ok: false,
        truncated: false,
    }
}

fn gradients(params: &PolicyParams, reference: &PolicyParams, a: &[Token], b: &[Token], refs: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let sft = [
        SftExample::new(a.to_vec(), SftSource::VqaDemo).unwrap(),
        SftExample::new(b.to_vec(), SftSource::VqaDemo).unwrap(),
    ];
    let (_, g_sft) = sft_objective(params, &sft).unwrap();
    let group = GroupBatch {
        query: 0,
        trajectories: vec![as_trajectory(a.to_vec()), as_trajectory(b.to_vec())],
        rewards: vec![1.0, 0.0],
        ref_logprobs: refs.to_vec(),
    };
    let cfg = TrainConfig {
        kl_coefficient: 0.1,
        ..TrainConfig::default()
    };
    let (_, g_grpo, _) = grpo_objective(params, reference, &[group], &cfg, None).unwrap();
    (g_sft.values, g_grpo.values)
}

#[test]
fn criterion_3_observation_content_never_reaches_the_gradient() {
    let dims = PolicyDims {
        vocab: 9,
        embed: 3,
        hidden: 4,
        window: 3,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pairs = 1000;
    let (mut identical, mut mutated_positions, mut sensitive, mut controls) = (0, 0, 0, 0);
    for _ in 0..pairs {
        let params = random_params(dims, &mut rng, 0.7);
        let reference = random_params(dims, &mut rng, 0.7);
        let a = random_trajectory(&mut rng, dims.vocab);
        let other = random_trajectory(&mut rng, dims.vocab);
        let refs: Vec<Vec<f64>> = [&a, &other]
            .iter()
            .map(|t| (0..t.iter().filter(|x| x.role == Role::Model).count()).map(|_| rng.gen_range(-3.0..-0.5)).collect())
            .collect();
        let mut b = a.clone();
        let mut other_b = other.clone();
        for (traj, mutant) in [(&a, &mut b), (&other, &mut other_b)] {
            for p in unseen_observations(traj, dims.window) {
                mutant[p].id = (traj[p].id + rng.gen_range(1..dims.vocab - 1)) % (dims.vocab - 1) + 1;
                mutated_positions += 1;
            }
        }
        let base = gradients(&params, &reference, &a, &other, &refs);
        if base == gradients(&params, &reference, &b, &other_b, &refs) {
            identical += 1;
        }
        // Control: an observation inside some model token's window does
        // condition later predictions.
        if let Some(p) = (0..a.len()).find(|&p| a[p].role == Role::Observation && !unseen_observations(&a, dims.window).contains(&p)) {
            controls += 1;
            let mut c = a.clone();
            c[p].id = c[p].id % (dims.vocab - 1) + 1;
            if base != gradients(&params, &reference, &c, &other, &refs) {
                sensitive += 1;
            }
        }
    }
    let pass = identical == pairs && mutated_positions > 0 && sensitive == controls;
    verdict(
        3,
        pass,
        &format!(
            "{identical}/{pairs} pairs bit-identical (SFT and GRPO) after mutating {mutated_positions} observation tokens; \
             {sensitive}/{controls} in-window controls changed the gradient"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_4_tool_bonus_is_gated_on_correctness() {
    let spec = SceneSpec {
        grid_side: 8,
        tile_side: 4,
        ..SceneSpec::default()
    };
    let g = SceneGenerator::new(spec).unwrap();
    let vocab = Vocabulary::for_scene(g.spec());
    let dims = PolicyDims {
        vocab: vocab.len(),
        embed: 4,
        hidden: 8,
        window: 8,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let limits = RolloutLimits {
        max_model_tokens: 16,
        ..RolloutLimits::default()
    };
    let (mut violations, mut correct, mut bonus) = (0, 0, 0);
    let n = 10_000;
    for i in 0..n {
        let scene = g.generate(rng.gen_range(0..1_000_000));
        let cfg = RewardConfig {
            format_bonus: rng.gen_range(0.0..1.0),
            tool_bonus: rng.gen_range(0.0..1.0),
        };
        let traj = match i % 3 {
            0 => {
                let params = random_params(dims, &mut rng, 1.0);
                run_episode(&params, &vocab, &scene, &limits, None, &mut rng).unwrap()
            }
            _ => {
                // A demonstration, with its answer digits scrambled a third of the time.
                let mut tokens = scene_demo(&vocab, &scene, g.rulebase(), rng.gen_bool(0.5)).unwrap().tokens;
                if i % 3 == 2 {
                    let d = tokens.len() - 2;
                    tokens[d].id = rng.gen_range(1..vocab.len());
                }
                let mut t = as_trajectory(tokens);
                t.successful_zooms = rng.gen_range(0..3);
                t.tool_calls = t.successful_zooms;
                let (answer, fmt) = parse_answer(&vocab, &t);
                t.parsed_answer = answer;
                t.format_ok = fmt;
                t
            }
        };
        let r = score(&traj, &scene, &cfg);
        if r.total > r.s_fmt && r.s_ok != 1 {
            violations += 1;
        }
        correct += usize::from(r.s_ok == 1);
        bonus += usize::from(r.s_tool > 0.0 && r.s_ok == 1);
    }
    let pass = violations == 0;
    verdict(
        4,
        pass,
        &format!("{violations} violations over {n} trajectories ({correct} correct, {bonus} with tool bonus)"),
    );
    assert!(pass);
}

#[test]
fn criterion_5_grpo_structure() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);

    let mut worst_sum = 0.0f64;
    for _ in 0..1000 {
        let g = rng.gen_range(2..17);
        let rewards: Vec<f64> = (0..g).map(|_| rng.gen_range(0.0..2.0)).collect();
        worst_sum = worst_sum.max(grpo_advantages(&rewards, AdvantageMode::MeanBaseline).iter().sum::<f64>().abs());
    }

    // Clipped tokens: ratios set through the reference log-probabilities.
    let dims = PolicyDims {
        vocab: 5,
        embed: 2,
        hidden: 4,
        window: 3,
    };
    let clip = 0.2;
    let cfg = TrainConfig {
        clip,
        ..TrainConfig::default()
    };
    let mut worst_clip = 0.0f64;
    for _ in 0..200 {
        let params = random_params(dims, &mut rng, 1.0);
        let mut trajs = Vec::new();
        let mut refs = Vec::new();
        let mut logps = Vec::new();
        for _ in 0..2 {
            let mut toks = vec![Token::new(rng.gen_range(1..5), Role::Prompt)];
            for _ in 0..3 {
                toks.push(Token::new(rng.gen_range(1..5), Role::Model));
            }
            let ids: Vec<usize> = toks.iter().map(|t| t.id).collect();
            let lp: Vec<f64> = (1..toks.len())
                .map(|i| {
                    let ctx = context_window(&ids[..i], dims.window, PAD_ID);
                    forward_pass(&params, &ctx, None).unwrap().logprob(ids[i])
                })
                .collect();
            logps.push((ids, lp));
            trajs.push(as_trajectory(toks));
        }
        // Rewards [1, 0]: advantages +0.5 and -0.5. The first token of each
        // trajectory is pushed outward past the clip range; the others stay inside.
        let adv = [0.5, -0.5];
        let ratios = [[1.0 + 2.0 * clip, 1.05, 0.9], [1.0 - 2.0 * clip, 1.1, 0.95]];
        for (j, (_, lp)) in logps.iter().enumerate() {
            refs.push(lp.iter().zip(ratios[j]).map(|(l, r): (&f64, f64)| l - r.ln()).collect::<Vec<f64>>());
        }
        let group = GroupBatch {
            query: 0,
            trajectories: trajs,
            rewards: vec![1.0, 0.0],
            ref_logprobs: refs,
        };
        let (_, grad, _) = grpo_objective(&params, &params, &[group], &cfg, None).unwrap();
        // Oracle: only unclipped tokens contribute -A·ρ·∇logp / N.
        let mut expected = PolicyParams::zeros(dims);
        for (j, (ids, _)) in logps.iter().enumerate() {
            for i in 1..ids.len() {
                if i == 1 {
                    continue;
                }
                let ctx = context_window(&ids[..i], dims.window, PAD_ID);
                let (_, g) = logprob_and_grad(&params, &ctx, ids[i]).unwrap();
                expected.add_scaled(&g, -adv[j] * ratios[j][i - 1] / 6.0);
            }
        }
        for (a, e) in grad.values.iter().zip(&expected.values) {
            worst_clip = worst_clip.max((a - e).abs());
        }
    }

    // Finite differences of the surrogate at params = reference, 3-token vocabulary.
    let dims3 = PolicyDims {
        vocab: 3,
        embed: 2,
        hidden: 3,
        window: 2,
    };
    let h = 1e-6;
    let mut worst_fd = 0.0f64;
    for _ in 0..20 {
        let theta = random_params(dims3, &mut rng, 1.0);
        let mut trajs = Vec::new();
        let mut refs = Vec::new();
        for _ in 0..4 {
            let mut toks = vec![Token::new(rng.gen_range(0..3), Role::Prompt)];
            for _ in 0..rng.gen_range(1..4) {
                toks.push(Token::new(rng.gen_range(0..3), Role::Model));
                if rng.gen_bool(0.3) {
                    toks.push(Token::new(rng.gen_range(0..3), Role::Observation));
                }
            }
            let ids: Vec<usize> = toks.iter().map(|t| t.id).collect();
            refs.push(
                (1..toks.len())
                    .filter(|&i| toks[i].role == Role::Model)
                    .map(|i| forward_pass(&theta, &context_window(&ids[..i], 2, PAD_ID), None).unwrap().logprob(ids[i]))
                    .collect::<Vec<f64>>(),
            );
            trajs.push(as_trajectory(toks));
        }
        let group = GroupBatch {
            query: 0,
            trajectories: trajs,
            rewards: (0..4).map(|_| rng.gen_range(0.0..2.0)).collect(),
            ref_logprobs: refs,
        };
        let groups = [group];
        let loss = |p: &PolicyParams| grpo_objective(p, &theta, &groups, &TrainConfig::default(), None).unwrap().0;
        let (_, grad, _) = grpo_objective(&theta, &theta, &groups, &TrainConfig::default(), None).unwrap();
        let mut probe = theta.clone();
        for i in 0..theta.values.len() {
            let v = theta.values[i];
            probe.values[i] = v + h;
            let up = loss(&probe);
            probe.values[i] = v - h;
            let down = loss(&probe);
            probe.values[i] = v;
            let fd = (up - down) / (2.0 * h);
            let a = grad.values[i];
            let scale = a.abs().max(fd.abs());
            let err = if scale > 1e-6 { (a - fd).abs() / scale } else { (a - fd).abs() / 1e-6 };
            worst_fd = worst_fd.max(err);
        }
    }

    let pass = worst_sum <= 1e-12 && worst_clip <= 1e-12 && worst_fd < 1e-3;
    verdict(
        5,
        pass,
        &format!(
            "max |sum of advantages| = {worst_sum:.1e}; max deviation from unclipped-only oracle = {worst_clip:.1e}; \
             max FD rel err at reference = {worst_fd:.1e}"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_6_forge_quality_control() {
    let t = Instant::now();
    let g = SceneGenerator::new(SceneSpec::default()).unwrap();
    let cfg = ForgeConfig {
        corpus_size: 5000,
        corruption_rate: 0.2,
        seed: 6,
        ..ForgeConfig::default()
    };
    let corpus = forge_corpus(g.rulebase(), &cfg).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let count = |tag: Option<Corruption>| {
        let of: Vec<_> = corpus.screened.iter().filter(|s| s.candidate.corruption_tag == tag).collect();
        let rejected = of.iter().filter(|s| s.verification.verdict != Verdict::Accept).count();
        (of.len(), rejected)
    };
    let contra = count(Some(Corruption::RelationContradiction));
    let off = count(Some(Corruption::OffDomain));
    let swap = count(Some(Corruption::EntitySwap));
    let clean = count(None);
    let max_rev = corpus.screened.iter().map(|s| s.candidate.revision_count).max().unwrap_or(0);
    let pass = corpus.screened.len() == 5000
        && contra.0 > 0
        && contra.1 == contra.0
        && off.0 > 0
        && off.1 == off.0
        && clean.1 == 0
        && max_rev <= 1
        && secs < 30.0;
    verdict(
        6,
        pass,
        &format!(
            "{} candidates: contradiction {}/{} rejected, off-domain {}/{} rejected, clean {}/{} rejected \
             (entity-swap {}/{}); max revisions {max_rev}; {secs:.2}s",
            corpus.screened.len(),
            contra.1,
            contra.0,
            off.1,
            off.0,
            clean.1,
            clean.0,
            swap.1,
            swap.0
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_7_corpus_statistics() {
    let g = SceneGenerator::new(SceneSpec::default()).unwrap();
    let cfg = ForgeConfig {
        corpus_size: 10_000,
        seed: 7,
        ..ForgeConfig::default()
    };
    // Table targets: MCQ/Fill/TF/Free = 24/7/4/65 %, 2.6 reasoning steps.
    assert_eq!(cfg.type_ratio, [0.24, 0.07, 0.04, 0.65]);
    assert_eq!(cfg.target_cot_steps, 2.6);
    let corpus = forge_corpus(g.rulebase(), &cfg).unwrap();
    let r = &corpus.report;
    let labels = ["MCQ", "Fill", "TF", "Free"];
    let props: Vec<f64> = labels.iter().map(|l| r.type_proportions.get(*l).copied().unwrap_or(0.0)).collect();
    let worst = props
        .iter()
        .zip(cfg.type_ratio)
        .map(|(p, t)| (p - t).abs())
        .fold(0.0f64, f64::max);
    let pass = r.total_pairs == 10_000 && worst <= 0.02 && (r.mean_cot_steps - cfg.target_cot_steps).abs() <= 1.0;
    verdict(
        7,
        pass,
        &format!(
            "{} records, proportions {:.1}/{:.1}/{:.1}/{:.1} % (max deviation {:.2} points), mean CoT steps {:.3}",
            r.total_pairs,
            100.0 * props[0],
            100.0 * props[1],
            100.0 * props[2],
            100.0 * props[3],
            100.0 * worst,
            r.mean_cot_steps
        ),
    );
    assert!(pass);
}

fn matrix_config() -> ExperimentConfig {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/matrix.toml");
    ExperimentConfig::load(&p).unwrap()
}

#[test]
fn criterion_8_directional_recipe_reproduction() {
    const FULL: &str = "sft_text_vqa_prewarm+rl_agentic";
    const RL: &str = "rl_agentic";
    const PLAIN: &str = "rl_plain";
    const VQA_ONLY: &str = "sft_vqa+rl_agentic";
    let base = matrix_config();
    let (mut a_wins, mut b_wins, mut c_wins, mut c_ties) = (0, 0, 0, 0);
    let mut gaps = Vec::new();
    let mut slowest = 0.0f64;
    let seeds = 5u64;
    for seed in 0..seeds {
        let dir = tempfile::tempdir().unwrap();
        let t = Instant::now();
        let summary = run_experiment(&ExperimentConfig { seed, ..base.clone() }, dir.path()).unwrap();
        slowest = slowest.max(t.elapsed().as_secs_f64());
        let get = |arm: &str, k: usize| {
            let a = summary.arm(arm).unwrap();
            assert!(a.error.is_none(), "{arm}: {:?}", a.error);
            100.0 * if k == 1 { a.pass_at_1.unwrap() } else { a.pass_at_k_max.unwrap() }
        };
        let gap = get(FULL, 1) - get(RL, 1);
        gaps.push(gap);
        a_wins += usize::from(gap > 0.0);
        b_wins += usize::from(get(FULL, 8) >= get(VQA_ONLY, 8));
        c_wins += usize::from(get(RL, 1) >= get(PLAIN, 1));
        c_ties += usize::from(get(RL, 1) == get(PLAIN, 1));
        let _ = writeln!(
            std::io::stderr().lock(),
            "  seed {seed}: full p@1 {:.2} p@8 {:.2} | rl_agentic p@1 {:.2} | rl_plain p@1 {:.2} | sft_vqa p@8 {:.2} | {:.1}s",
            get(FULL, 1),
            get(FULL, 8),
            get(RL, 1),
            get(PLAIN, 1),
            get(VQA_ONLY, 8),
            t.elapsed().as_secs_f64()
        );
    }
    gaps.sort_by(f64::total_cmp);
    let median = gaps[gaps.len() / 2];
    let need = 4;
    let (a, b, c) = (a_wins >= need && median >= 5.0, b_wins >= need, c_wins >= need);
    let pass = a && b && c && slowest < 15.0 * 60.0;
    verdict(
        8,
        pass,
        &format!(
            "(a) full > rl_agentic pass@1 in {a_wins}/{seeds}, median gap {median:.2} points; \
             (b) full >= sft_vqa pass@8 in {b_wins}/{seeds}; \
             (c) rl_agentic >= rl_plain pass@1 in {c_wins}/{seeds} ({c_ties} ties); slowest matrix {slowest:.0}s"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_9_reruns_are_byte_identical() {
    let cfg = matrix_config();
    let bench = Workbench::new(&cfg).unwrap();
    let files = ["metrics.jsonl", "passk.json", "passk.csv"];
    let mut identical = true;
    let mut compared = 0;
    for arm in ["sft_text_vqa_prewarm+rl_agentic", "rl_plain"] {
        let arm = cfg.arm(arm).unwrap();
        let first = tempfile::tempdir().unwrap();
        let second = tempfile::tempdir().unwrap();
        run_arm(&bench, arm, first.path()).unwrap();
        // A fresh workbench, so nothing is shared between the two runs.
        run_arm(&Workbench::new(&cfg).unwrap(), arm, second.path()).unwrap();
        for f in files {
            compared += 1;
            identical &= std::fs::read(first.path().join(f)).unwrap() == std::fs::read(second.path().join(f)).unwrap();
        }
    }
    verdict(9, identical, &format!("{compared} artifact pairs compared across reruns, all byte-identical: {identical}"));
    assert!(identical);
}
