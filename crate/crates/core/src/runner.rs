//! Seed-parallel experiment execution and output assembly.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{alternation_trial, asymmetry_report, selectional_trial, AlternationTrial, SelectionalTrial, CONTRASTS};
use crate::finetune::FineTuneConfig;
use crate::probe::{fit_probe, probe_trial, OutclassSource, ProbeConfig, ProbeTrial};
use crate::refmodel::MaskedLm;
use crate::report::{
    asymmetry_csv, emit_chart, probe_csv, selectional_csv, summary_csv, trials_csv, Bar, ChartStyle, OutputSet, SummaryRow,
};
use crate::stats::{pearson, spearman, AccuracySummary, CiMethod};
use crate::stimuli::{out_class_frames, AlternationSpec, FrameSide, SelectionalCondition, SelectionalNetwork};

pub const THREADS_ENV: &str = "WUGBENCH_THREADS";
pub const POOLED_GROUP: &str = "all";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsConfig {
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub ci_method: CiMethod,
}

fn default_level() -> f64 {
    0.95
}

impl Default for StatsConfig {
    fn default() -> Self {
        StatsConfig {
            level: default_level(),
            ci_method: CiMethod::default(),
        }
    }
}

/// Settings shared by all experiments.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub finetune: FineTuneConfig,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default)]
    pub stats: StatsConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.finetune.validate()?;
        if !(self.stats.level > 0.0 && self.stats.level < 1.0) {
            return Err(Error::Config(format!("confidence level {} outside (0, 1)", self.stats.level)));
        }
        Ok(())
    }

    fn summarize(&self, experiment: &str, group: &str, flags: impl Iterator<Item = bool>) -> Result<SummaryRow> {
        let (mut k, mut n) = (0u64, 0u64);
        for f in flags {
            k += u64::from(f);
            n += 1;
        }
        let s = AccuracySummary::from_counts(k, n, self.stats.level, self.stats.ci_method)?;
        Ok(SummaryRow::accuracy(experiment, group, &s))
    }
}

/// Stable seed for one trial: FNV-1a over the identifying fields, then a
/// splitmix64 finalizer.
pub fn trial_seed(master_seed: u64, experiment: &str, alternation_id: &str, frame: &str, index: u64) -> u64 {
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |bytes: &[u8]| {
        for &b in bytes {
            h ^= u64::from(b);
            h = h.wrapping_mul(PRIME);
        }
        // Field separator so ("ab", "c") and ("a", "bc") differ.
        h ^= 0xff;
        h = h.wrapping_mul(PRIME);
    };
    feed(&master_seed.to_le_bytes());
    feed(experiment.as_bytes());
    feed(alternation_id.as_bytes());
    feed(frame.as_bytes());
    feed(&index.to_le_bytes());
    let mut z = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Worker count from the environment, defaulting to the available cores.
pub fn thread_count() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Config(format!("{THREADS_ENV}={v} is not a positive integer"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Runs `f` on a dedicated pool with `threads` workers.
pub fn with_workers<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

fn check_seeds(seeds: u64) -> Result<()> {
    if seeds == 0 {
        return Err(Error::Input("at least one seed is required".into()));
    }
    Ok(())
}

/// Battery entries with at least one out-class frame, in battery order.
pub fn testable_specs(battery: &[AlternationSpec]) -> Result<Vec<&AlternationSpec>> {
    let mut out = Vec::new();
    for spec in battery {
        if !out_class_frames(battery, &spec.id, FrameSide::A)?.is_empty() {
            out.push(spec);
        }
    }
    Ok(out)
}

fn group_name(id: &str, side: FrameSide) -> String {
    format!("{id}:{side}")
}

pub const ALTERNATIONS: &str = "alternations";
pub const SELECTIONAL: &str = "selectional";
pub const SELECTIONAL_CONDITION: &str = "selectional-condition";
pub const PROBE: &str = "probe";

/// Trials in (alternation, frame, seed) order; the `seed` field is the
/// seed index.
pub fn run_alternations(model: &MaskedLm, battery: &[AlternationSpec], seeds: u64, cfg: &ExperimentConfig) -> Result<Vec<AlternationTrial>> {
    cfg.validate()?;
    check_seeds(seeds)?;
    let mut jobs = Vec::new();
    for spec in testable_specs(battery)? {
        for side in FrameSide::BOTH {
            for i in 0..seeds {
                jobs.push((spec, side, i));
            }
        }
    }
    jobs.sort_by(|a, b| (&a.0.id, a.1, a.2).cmp(&(&b.0.id, b.1, b.2)));
    jobs.par_iter()
        .map(|&(spec, side, i)| {
            let seed = trial_seed(cfg.master_seed, ALTERNATIONS, &spec.id, side.as_str(), i);
            let mut t = alternation_trial(model, battery, spec, side, &cfg.finetune, seed)?;
            t.seed = i;
            Ok(t)
        })
        .collect()
}

/// Per-group rows in trial order followed by one pooled row.
pub fn alternation_summary(trials: &[AlternationTrial], cfg: &ExperimentConfig) -> Result<Vec<SummaryRow>> {
    let mut groups: Vec<(String, Vec<bool>)> = Vec::new();
    for t in trials {
        let g = group_name(&t.alternation_id, t.train_frame);
        match groups.last_mut() {
            Some((name, flags)) if *name == g => flags.push(t.correct),
            _ => groups.push((g, vec![t.correct])),
        }
    }
    let mut rows = groups
        .iter()
        .map(|(g, flags)| cfg.summarize(ALTERNATIONS, g, flags.iter().copied()))
        .collect::<Result<Vec<_>>>()?;
    rows.push(cfg.summarize(ALTERNATIONS, POOLED_GROUP, trials.iter().map(|t| t.correct))?);
    Ok(rows)
}

fn bars(rows: &[SummaryRow], battery: &[AlternationSpec]) -> Vec<Bar> {
    rows.iter()
        .filter(|r| r.group != POOLED_GROUP)
        .map(|r| {
            let id = r.group.rsplit_once(':').map_or(r.group.as_str(), |(id, _)| id);
            let levin = battery.iter().find(|s| s.id == id).map_or("", |s| s.levin_label.as_str());
            Bar {
                label: r.group.clone(),
                group: levin.to_string(),
                value: r.proportion,
                ci_low: r.ci_low,
                ci_high: r.ci_high,
            }
        })
        .collect()
}

/// trials.csv, summary.csv, asymmetry.csv and the accuracy chart.
pub fn alternation_outputs(trials: &[AlternationTrial], battery: &[AlternationSpec], cfg: &ExperimentConfig) -> Result<OutputSet> {
    let summary = alternation_summary(trials, cfg)?;
    let mut out = OutputSet::default();
    out.add("trials.csv", trials_csv(ALTERNATIONS, trials)?);
    out.add("summary.csv", summary_csv(&summary)?);
    out.add("asymmetry.csv", asymmetry_csv(&asymmetry_report(trials)?)?);
    let chart = emit_chart("Sister-frame accuracy by alternation", &bars(&summary, battery), ChartStyle::Accuracy)?;
    out.add("alternations.svg", chart.into_bytes());
    Ok(out)
}

/// Trials in seed-index order.
pub fn run_selectional(model: &MaskedLm, net: &SelectionalNetwork, seeds: u64, cfg: &ExperimentConfig) -> Result<Vec<SelectionalTrial>> {
    cfg.validate()?;
    check_seeds(seeds)?;
    net.validate()?;
    (0..seeds)
        .into_par_iter()
        .map(|i| {
            let seed = trial_seed(cfg.master_seed, SELECTIONAL, "", "", i);
            let mut t = selectional_trial(model, net, &cfg.finetune, seed)?;
            t.seed = i;
            Ok(t)
        })
        .collect()
}

/// Three contrast rows, then three condition rows whose `successes` holds the
/// condition's sentence count and whose `proportion` holds the mean surprisal
/// across seeds, with a normal-approximation interval.
pub fn selectional_summary(trials: &[SelectionalTrial], net: &SelectionalNetwork, cfg: &ExperimentConfig) -> Result<Vec<SummaryRow>> {
    if trials.is_empty() {
        return Err(Error::Input("no selectional trials to summarize".into()));
    }
    let mut rows = Vec::new();
    for (ci, name) in CONTRASTS.iter().enumerate() {
        rows.push(cfg.summarize(SELECTIONAL, name, trials.iter().map(|t| t.flags[ci]))?);
    }
    let z = crate::stats::z_for_level(cfg.stats.level)?;
    for (ci, cond) in SelectionalCondition::ALL.into_iter().enumerate() {
        let xs: Vec<f64> = trials.iter().map(|t| t.surprisal[ci]).collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let half = if xs.len() > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            z * (var / n).sqrt()
        } else {
            0.0
        };
        rows.push(SummaryRow {
            experiment: SELECTIONAL_CONDITION.to_string(),
            group: cond.as_str().to_string(),
            successes: net.pairs(cond).len() as u64,
            n: trials.len() as u64,
            proportion: mean,
            ci_low: mean - half,
            ci_high: mean + half,
            p_value: None,
        });
    }
    Ok(rows)
}

pub fn selectional_outputs(trials: &[SelectionalTrial], net: &SelectionalNetwork, cfg: &ExperimentConfig) -> Result<OutputSet> {
    let summary = selectional_summary(trials, net, cfg)?;
    let bar = |r: &SummaryRow| Bar {
        label: r.group.clone(),
        group: r.experiment.clone(),
        value: r.proportion,
        ci_low: r.ci_low,
        ci_high: r.ci_high,
    };
    let contrasts: Vec<Bar> = summary.iter().filter(|r| r.experiment == SELECTIONAL).map(bar).collect();
    let conditions: Vec<Bar> = summary.iter().filter(|r| r.experiment == SELECTIONAL_CONDITION).map(bar).collect();
    let mut out = OutputSet::default();
    out.add("selectional_trials.csv", selectional_csv(trials)?);
    out.add("summary.csv", summary_csv(&summary)?);
    out.add(
        "selectional_contrasts.svg",
        emit_chart("Surprisal contrast accuracy", &contrasts, ChartStyle::Accuracy)?.into_bytes(),
    );
    out.add(
        "selectional_surprisal.svg",
        emit_chart("Mean surprisal by condition", &conditions, ChartStyle::Magnitude)?.into_bytes(),
    );
    Ok(out)
}

/// Probe trials in (alternation, frame, seed) order. One probe is fitted per
/// alternation and shared by both frames.
pub fn run_probes(
    model: &MaskedLm,
    battery: &[AlternationSpec],
    source: &OutclassSource,
    seeds: u64,
    cfg: &ExperimentConfig,
) -> Result<Vec<ProbeTrial>> {
    cfg.validate()?;
    check_seeds(seeds)?;
    let mut specs: Vec<&AlternationSpec> = battery.iter().collect();
    specs.sort_by(|a, b| a.id.cmp(&b.id));
    let probes = specs
        .par_iter()
        .map(|spec| fit_probe(model, spec, source, &cfg.probe))
        .collect::<Result<Vec<_>>>()?;
    let mut jobs = Vec::new();
    for (spec, trained) in specs.iter().zip(&probes) {
        for side in FrameSide::BOTH {
            for i in 0..seeds {
                jobs.push((*spec, trained, side, i));
            }
        }
    }
    jobs.par_iter()
        .map(|&(spec, trained, side, i)| {
            let seed = trial_seed(cfg.master_seed, PROBE, &spec.id, side.as_str(), i);
            let mut t = probe_trial(model, spec, side, trained, &cfg.finetune, seed)?;
            t.seed = i;
            Ok(t)
        })
        .collect()
}

pub fn probe_summary(trials: &[ProbeTrial], cfg: &ExperimentConfig) -> Result<Vec<SummaryRow>> {
    let mut groups: Vec<(String, Vec<bool>)> = Vec::new();
    for t in trials {
        let g = group_name(&t.alternation_id, t.train_frame);
        match groups.last_mut() {
            Some((name, flags)) if *name == g => flags.push(t.inclass),
            _ => groups.push((g, vec![t.inclass])),
        }
    }
    let mut rows = groups
        .iter()
        .map(|(g, flags)| cfg.summarize(PROBE, g, flags.iter().copied()))
        .collect::<Result<Vec<_>>>()?;
    rows.push(cfg.summarize(PROBE, POOLED_GROUP, trials.iter().map(|t| t.inclass))?);
    Ok(rows)
}

/// Correlation between probe and alternation accuracies over shared groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub n: usize,
    pub pearson: f64,
    pub spearman: f64,
}

pub fn correlate(probe: &[SummaryRow], alternations: &[SummaryRow]) -> Result<Correlation> {
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for p in probe.iter().filter(|r| r.group != POOLED_GROUP) {
        if let Some(a) = alternations
            .iter()
            .find(|a| a.experiment == ALTERNATIONS && a.group == p.group)
        {
            xs.push(p.proportion);
            ys.push(a.proportion);
        }
    }
    Ok(Correlation {
        n: xs.len(),
        pearson: pearson(&xs, &ys)?,
        spearman: spearman(&xs, &ys)?,
    })
}

pub fn correlation_csv(c: &Correlation) -> Vec<u8> {
    format!("method,n,coefficient\npearson,{},{}\nspearman,{},{}\n", c.n, c.pearson, c.n, c.spearman).into_bytes()
}

pub fn probe_outputs(
    trials: &[ProbeTrial],
    battery: &[AlternationSpec],
    compare: Option<&[SummaryRow]>,
    cfg: &ExperimentConfig,
) -> Result<OutputSet> {
    let summary = probe_summary(trials, cfg)?;
    let mut out = OutputSet::default();
    out.add("probe_trials.csv", probe_csv(PROBE, trials)?);
    out.add("summary.csv", summary_csv(&summary)?);
    if let Some(alt) = compare {
        out.add("correlation.csv", correlation_csv(&correlate(&summary, alt)?));
    }
    let chart = emit_chart("Probe in-class accuracy by alternation", &bars(&summary, battery), ChartStyle::Accuracy)?;
    out.add("probe.svg", chart.into_bytes());
    Ok(out)
}
