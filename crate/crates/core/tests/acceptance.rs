//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line to
//! stderr (uncaptured) before asserting.

use std::io::Write as _;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wugbench::config::RunConfig;
use wugbench::finetune::{run_finetune, FineTuneConfig};
use wugbench::probe::OutclassSource;
use wugbench::refmodel::{pretrain, MaskedLm, ModelConfig, TrainingInstance};
use wugbench::report::read_summary;
use wugbench::runner::{self, ExperimentConfig};
use wugbench::stats::{exact_binomial_test, spearman, wilson_ci};
use wugbench::stimuli::{
    default_selectional_network, load_battery, AlternationSpec, SelectionalCondition, TokenSequence,
};
use wugbench::synthcorpus::{build_grammar, sample_corpus, Grammar, GrammarSpec};
use wugbench::vocab::{Vocabulary, MASK};

const SYNTH_SEEDS: u64 = 50;
const GRAMMAR_SEED: u64 = 0;

fn report(criterion: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "acceptance criterion {criterion:>2}: {verdict} ({detail})");
}

fn seq(s: &str) -> TokenSequence {
    TokenSequence::from_text(s)
}

/// A random 2-layer d=16 model with perturbed gains and biases.
fn random_model(seed: u64) -> MaskedLm {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words: Vec<String> = ["the", "will", "to"]
        .iter()
        .map(|s| s.to_string())
        .chain((0..rng.random_range(4..12)).map(|i| format!("w{i}")))
        .collect();
    let heads = [1, 2, 4][rng.random_range(0..3)];
    let config = ModelConfig {
        n_layers: 2,
        n_heads: heads,
        model_dim: 16,
        ffn_dim: rng.random_range(8..40),
        max_sequence_length: 16,
        vocabulary: Vocabulary::with_reserved(words).unwrap(),
        mlm_mask_rate: 0.15,
        closed_class_words: vec!["the".into(), "will".into(), "to".into()],
    };
    let base = MaskedLm::initialized(config.clone(), 0.5, seed).unwrap();
    let mut params = base.params().to_vec();
    for x in params.iter_mut() {
        *x += rng.random_range(-0.05..0.05);
    }
    MaskedLm::from_params(config, params).unwrap()
}

fn random_sentence(rng: &mut ChaCha8Rng, model: &MaskedLm, novel: &[String]) -> TokenSequence {
    let vocab: Vec<String> = model
        .vocabulary()
        .tokens()
        .iter()
        .filter(|t| !t.starts_with('['))
        .cloned()
        .chain(novel.iter().cloned())
        .collect();
    let len = rng.random_range(2..10);
    let mut toks: Vec<String> = (0..len).map(|_| vocab[rng.random_range(0..vocab.len())].clone()).collect();
    let m = rng.random_range(0..len);
    toks[m] = MASK.to_string();
    TokenSequence::new(toks)
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

#[test]
fn criterion_01_gradient_oracle() {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for cfg in 0..20u64 {
        let model = random_model(1000 + cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg);
        let mut ext = model.overlay();
        let names = vec!["dax".to_string(), "blick".to_string(), "wug".to_string()];
        ext.extend_vocab(&names, cfg).unwrap();
        for b in ext.rows.bias.iter_mut() {
            *b = rng.random_range(-0.5..0.5);
        }
        let batch: Vec<TrainingInstance> = (0..4)
            .map(|_| {
                let mut s = random_sentence(&mut rng, &model, &names);
                let pos = s.tokens.iter().position(|t| t == MASK).unwrap();
                // Keep a novel token visible so the encoder path is exercised.
                let other = (pos + 1) % s.len();
                if s.len() > 1 {
                    s.tokens[other] = names[rng.random_range(0..names.len())].clone();
                }
                TrainingInstance {
                    tokens: s,
                    target_position: pos,
                    target_id: rng.random_range(0..names.len()),
                }
            })
            .collect();
        let (_, g) = ext.mlm_loss_and_grads(&batch).unwrap();
        let analytic: Vec<f64> = g.vectors.iter().chain(&g.bias).copied().collect();
        let eps = 1e-3;
        let nv = ext.rows.vectors.len();
        let numeric: Vec<f64> = (0..analytic.len())
            .map(|i| {
                let shifted = |delta: f64| {
                    let mut e = ext.clone();
                    if i < nv {
                        e.rows.vectors[i] += delta;
                    } else {
                        e.rows.bias[i - nv] += delta;
                    }
                    e.mlm_loss_and_grads(&batch).unwrap().0
                };
                (shifted(eps) - shifted(-eps)) / (2.0 * eps)
            })
            .collect();
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1e-4 && elapsed <= Duration::from_secs(30);
    report(1, pass, &format!("worst relative error {worst:.2e} over 20 configs in {:.1}s", elapsed.as_secs_f64()));
    assert!(pass);
}

#[test]
fn criterion_02_freeze_invariant() {
    let mut ok = true;
    for seed in 0..5u64 {
        let model = random_model(2000 + seed);
        let before: Vec<u64> = model.params().iter().map(|x| x.to_bits()).collect();
        let sentences = vec![seq("the [MASK] will dax the w1"), seq("w2 dax to the [MASK]")];
        for lr in [1e-3, 0.0] {
            let mut ext = model.overlay();
            ext.extend_vocab(&["dax".into()], seed).unwrap();
            let init = ext.rows.clone();
            let cfg = FineTuneConfig { lr, ..FineTuneConfig::default() };
            let rep = run_finetune(&mut ext, &sentences, &cfg).unwrap();
            ok &= rep.losses.len() == 10;
            ok &= model.params().iter().map(|x| x.to_bits()).eq(before.iter().copied());
            let moved = ext.rows.vectors != init.vectors;
            ok &= if lr == 0.0 { !moved && ext.rows == init } else { moved };
        }
    }
    report(2, ok, "base bitwise frozen; rows move iff lr > 0");
    assert!(ok);
}

#[test]
fn criterion_03_normalization() {
    let mut worst: f64 = 0.0;
    let mut calls = 0;
    for m in 0..10u64 {
        let model = random_model(3000 + m);
        let mut ext = model.overlay();
        let names = vec!["dax".to_string(), "wug".to_string()];
        ext.extend_vocab(&names, m).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(m);
        for _ in 0..100 {
            let s = random_sentence(&mut rng, &model, &names);
            for dist in ext.forward(&s).unwrap() {
                worst = worst.max((dist.iter().sum::<f64>() - 1.0).abs());
            }
            calls += 1;
        }
    }
    let pass = calls == 1000 && worst <= 1e-6;
    report(3, pass, &format!("{calls} forward calls, max |sum - 1| = {worst:.2e}"));
    assert!(pass);
}

fn exact_p_oracle(k: u64, n: u64) -> f64 {
    let mut binom = vec![BigUint::one()];
    for i in 1..=n {
        let prev = binom[(i - 1) as usize].clone();
        binom.push(prev * BigUint::from(n - i + 1) / BigUint::from(i));
    }
    let observed = &binom[k as usize];
    let mut sum = BigUint::zero();
    for c in &binom {
        if c <= observed {
            sum += c;
        }
    }
    let total = BigUint::one() << n;
    // Ratio of two big integers, scaled to keep 64+ significant bits.
    let shift = total.bits().saturating_sub(200);
    let num = (sum << 200u32 >> shift).to_f64().unwrap();
    let den = (total << 200u32 >> shift).to_f64().unwrap();
    (num / den).min(1.0)
}

#[test]
fn criterion_04_stats_oracles() {
    let (lo, hi) = wilson_ci(100, 200, 0.95).unwrap();
    let z: f64 = 1.959963984540054;
    let (p, n) = (0.5, 200.0);
    let centre = (p + z * z / (2.0 * n)) / (1.0 + z * z / n);
    let half = z / (1.0 + z * z / n) * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt();
    let wilson_ok = (lo - (centre - half)).abs() < 1e-3
        && (hi - (centre + half)).abs() < 1e-3
        && (lo - 0.4314).abs() < 1e-3
        && (hi - 0.5686).abs() < 1e-3;

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for n in (1..=500u64).step_by(7).chain([500]) {
        for _ in 0..4 {
            let k = rng.random_range(0..=n);
            worst = worst.max((exact_binomial_test(k, n, 0.5).unwrap() - exact_p_oracle(k, n)).abs());
            cases += 1;
        }
    }
    let binom_ok = worst <= 1e-12;
    let rho = spearman(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]).unwrap();
    let spearman_ok = rho == -0.5;
    let pass = wilson_ok && binom_ok && spearman_ok;
    report(
        4,
        pass,
        &format!("wilson ({lo:.4}, {hi:.4}); binomial max error {worst:.1e} over {cases} cases; spearman {rho}"),
    );
    assert!(pass);
}

#[test]
fn criterion_05_fixture_counts() {
    let net = default_selectional_network();
    let sizes: Vec<usize> = SelectionalCondition::ALL.iter().map(|c| net.pairs(*c).len()).collect();
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/battery.json");
    let battery = load_battery(&std::fs::read_to_string(path).unwrap()).unwrap();
    let pass = sizes == [12, 6, 18] && battery.len() == 28;
    report(5, pass, &format!("condition sizes {sizes:?}, battery entries {}", battery.len()));
    assert!(pass);
}

struct Synthetic {
    grammar: Grammar,
    battery: Vec<AlternationSpec>,
    model: MaskedLm,
    config: RunConfig,
    pretrain_time: Duration,
}

/// The demo grammar and configuration, pretrained once per test binary.
fn synthetic() -> &'static Synthetic {
    static CELL: OnceLock<Synthetic> = OnceLock::new();
    CELL.get_or_init(|| {
        let config = RunConfig::demo();
        let start = Instant::now();
        let grammar = build_grammar(&GrammarSpec::demo(), GRAMMAR_SEED).unwrap();
        let corpus = sample_corpus(&grammar, config.corpus.sentences, config.corpus.seed).unwrap();
        let model_cfg = config.model_config(&grammar).unwrap();
        let (model, _) = pretrain(&corpus, &model_cfg, &config.pretrain, GRAMMAR_SEED).unwrap();
        let pretrain_time = start.elapsed();
        let battery = grammar.battery();
        Synthetic {
            grammar,
            battery,
            model,
            config,
            pretrain_time,
        }
    })
}

fn experiment(s: &Synthetic) -> ExperimentConfig {
    s.config.experiment()
}

/// Verdict and report line for one criterion.
struct Verdict {
    pass: bool,
    detail: String,
}

/// Criteria 6-8 and their timing, evaluated once and shared by the tests.
struct Replication {
    pretraining: Verdict,
    alternations: Verdict,
    selectional: Verdict,
    probe: Verdict,
    runtime: Verdict,
}

fn replication() -> &'static Replication {
    static CELL: OnceLock<Replication> = OnceLock::new();
    CELL.get_or_init(|| {
        let s = synthetic();
        let start = Instant::now();
        let pretraining = pretraining_quality(s);
        let alternations = alternation_replication(s);
        let selectional = selectional_replication(s);
        let probe = probe_replication(s);
        let total = s.pretrain_time + start.elapsed();
        let runtime = Verdict {
            pass: total <= Duration::from_secs(20 * 60),
            detail: format!("criteria 6-8 took {:.1}s including pretraining", total.as_secs_f64()),
        };
        Replication {
            pretraining,
            alternations,
            selectional,
            probe,
            runtime,
        }
    })
}

/// Held-out masked-token accuracy against uniform chance and a
/// most-frequent-token baseline.
fn pretraining_quality(s: &Synthetic) -> Verdict {
    let held_out = sample_corpus(&s.grammar, 300, 9_999).unwrap();
    let train = sample_corpus(&s.grammar, s.config.corpus.sentences, s.config.corpus.seed).unwrap();
    let mut freq = std::collections::BTreeMap::<&str, usize>::new();
    for t in train.iter().flat_map(|x| &x.tokens) {
        if s.model.config.is_content(t) {
            *freq.entry(t.as_str()).or_default() += 1;
        }
    }
    let top = freq.iter().max_by_key(|(_, c)| **c).map(|(t, _)| *t).unwrap();
    let (mut hits, mut base_hits, mut total) = (0usize, 0usize, 0usize);
    let vocab = s.model.vocabulary();
    for sent in &held_out {
        for (pos, tok) in sent.tokens.iter().enumerate() {
            if !s.model.config.is_content(tok) {
                continue;
            }
            let dist = &s.model.forward(&sent.masked_at(pos)).unwrap()[pos];
            let best = (0..dist.len()).max_by(|a, b| dist[*a].total_cmp(&dist[*b])).unwrap();
            hits += usize::from(vocab.token(best) == Some(tok.as_str()));
            base_hits += usize::from(tok == top);
            total += 1;
        }
    }
    let accuracy = hits as f64 / total as f64;
    let chance = 1.0 / vocab.len() as f64;
    Verdict {
        pass: accuracy >= 5.0 * chance && s.pretrain_time <= Duration::from_secs(300),
        detail: format!(
            "pretraining {:.1}s, held-out masked accuracy {accuracy:.3} (uniform chance {chance:.4}, most-frequent baseline {:.3})",
            s.pretrain_time.as_secs_f64(),
            base_hits as f64 / total as f64
        ),
    }
}

fn alternation_replication(s: &Synthetic) -> Verdict {
    let cfg = experiment(s);
    let trials = runner::run_alternations(&s.model, &s.battery, SYNTH_SEEDS, &cfg).unwrap();
    let outputs = runner::alternation_outputs(&trials, &s.battery, &cfg).unwrap();
    let summary = read_summary(std::str::from_utf8(outputs.get("summary.csv").unwrap()).unwrap()).unwrap();
    let mut families_ok = 0;
    let mut detail = Vec::new();
    for spec in &s.battery {
        let rows: Vec<_> = summary
            .iter()
            .filter(|r| r.group.starts_with(&format!("{}:", spec.id)))
            .collect();
        let ok = rows.iter().any(|r| r.proportion > 0.5 && r.p_value.unwrap() < 0.01);
        families_ok += usize::from(ok);
        for r in rows {
            detail.push(format!("{} {}/{}", r.group, r.successes, r.n));
        }
    }
    let asym = std::str::from_utf8(outputs.get("asymmetry.csv").unwrap()).unwrap();
    let flags_ok = asym.lines().skip(1).all(|line| {
        let f: Vec<&str> = line.split(',').collect();
        let acc: f64 = f[4].parse().unwrap();
        f[6] == (acc < 0.5).to_string()
    }) && asym.lines().count() == 1 + 2 * s.battery.len();
    Verdict {
        pass: families_ok >= 2 && flags_ok && s.pretrain_time <= Duration::from_secs(300),
        detail: format!("{families_ok}/{} families significant; {}", s.battery.len(), detail.join(", ")),
    }
}

fn selectional_replication(s: &Synthetic) -> Verdict {
    let cfg = experiment(s);
    let net = default_selectional_network();
    let sel = runner::run_selectional(&s.model, &net, SYNTH_SEEDS, &cfg).unwrap();
    let rows = runner::selectional_summary(&sel, &net, &cfg).unwrap();
    let ui_uo = &rows[2];
    let means: Vec<f64> = rows[3..].iter().map(|r| r.proportion).collect();
    Verdict {
        pass: ui_uo.proportion > 0.5 && ui_uo.p_value.unwrap() < 0.01 && means[0] < means[2],
        detail: format!(
            "unattested-in<unattested-out {}/{} (p = {:.2e}); mean surprisal ai/ui/uo {:.3}/{:.3}/{:.3}",
            ui_uo.successes,
            ui_uo.n,
            ui_uo.p_value.unwrap(),
            means[0],
            means[1],
            means[2]
        ),
    }
}

fn probe_replication(s: &Synthetic) -> Verdict {
    let cfg = experiment(s);
    let probes = runner::run_probes(&s.model, &s.battery, &OutclassSource::Distractor, SYNTH_SEEDS, &cfg).unwrap();
    let rows = runner::probe_summary(&probes, &cfg).unwrap();
    let train_acc: Vec<String> = s
        .battery
        .iter()
        .map(|spec| {
            let acc = probes.iter().find(|t| t.alternation_id == spec.id).unwrap().train_accuracy;
            format!("{} {acc:.3}", spec.id)
        })
        .collect();
    let mean_train = s
        .battery
        .iter()
        .map(|spec| probes.iter().find(|t| t.alternation_id == spec.id).unwrap().train_accuracy)
        .sum::<f64>()
        / s.battery.len() as f64;
    let groups: Vec<_> = rows.iter().filter(|r| r.group != runner::POOLED_GROUP).collect();
    let groups_ok = groups.iter().all(|r| r.proportion > 0.5 && r.p_value.unwrap() < 0.01);
    Verdict {
        pass: mean_train >= 0.95 && groups_ok,
        detail: format!(
            "mean probe train accuracy {mean_train:.3} ({}); in-class rates {}",
            train_acc.join(", "),
            groups
                .iter()
                .map(|r| format!("{} {}/{}", r.group, r.successes, r.n))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    }
}

#[test]
fn criterion_06_synthetic_alternations() {
    let r = replication();
    let _ = writeln!(std::io::stderr(), "{}", r.pretraining.detail);
    assert!(r.pretraining.pass, "pretraining check failed: {}", r.pretraining.detail);
    report(6, r.alternations.pass, &r.alternations.detail);
    assert!(r.alternations.pass);
}

#[test]
fn criterion_07_synthetic_selectional() {
    let r = replication();
    report(7, r.selectional.pass, &r.selectional.detail);
    assert!(r.selectional.pass);
}

#[test]
fn criterion_08_synthetic_probe() {
    let r = replication();
    report(8, r.probe.pass, &r.probe.detail);
    assert!(r.probe.pass);
}

#[test]
fn criterion_10_runtime() {
    let r = replication();
    report(10, r.runtime.pass, &r.runtime.detail);
    assert!(r.runtime.pass);
}

#[test]
fn criterion_09_determinism() {
    let s = synthetic();
    let cfg = experiment(s);
    let run = |workers: usize| {
        runner::with_workers(workers, || {
            let trials = runner::run_alternations(&s.model, &s.battery, SYNTH_SEEDS, &cfg).unwrap();
            runner::alternation_outputs(&trials, &s.battery, &cfg).unwrap()
        })
        .unwrap()
    };
    let runs = [run(1), run(1), run(4), run(4)];
    let files = ["trials.csv", "summary.csv", "alternations.svg"];
    let pass = runs
        .iter()
        .all(|r| files.iter().all(|f| r.get(f).is_some() && r.get(f) == runs[0].get(f)));
    report(9, pass, "trials.csv, summary.csv and SVG identical across two runs at 1 and 4 workers");
    assert!(pass);
}
