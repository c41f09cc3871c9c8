//! Output files: atomic writes, CSV tables, manifests and SVG charts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::{AlternationTrial, AsymmetryRow, SelectionalTrial};
use crate::probe::ProbeTrial;
use crate::stats::AccuracySummary;

pub const TRIALS_HEADER: [&str; 7] = ["experiment", "alternation_id", "frame", "seed", "p_in", "p_out_mean", "correct"];
pub const SELECTIONAL_HEADER: [&str; 7] = [
    "seed",
    "surprisal_attested_in",
    "surprisal_unattested_in",
    "surprisal_unattested_out",
    "flag_ai_ui",
    "flag_ai_uo",
    "flag_ui_uo",
];
pub const SUMMARY_HEADER: [&str; 8] = ["experiment", "group", "successes", "n", "proportion", "ci_low", "ci_high", "p_value"];
pub const ASYMMETRY_HEADER: [&str; 7] = ["alternation_id", "frame", "successes", "n", "accuracy", "sister_accuracy", "below_baseline"];
pub const PROBE_HEADER: [&str; 7] = ["experiment", "alternation_id", "frame", "seed", "score", "inclass", "train_accuracy"];

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::Input(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Collects output files in memory and writes them together; if any write
/// fails, files already written by this batch are removed.
#[derive(Debug, Default)]
pub struct OutputSet {
    files: Vec<(String, Vec<u8>)>,
}

impl OutputSet {
    pub fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|(n, _)| n.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, b)| b.as_slice())
    }

    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            if let Err(e) = write_atomic(&path, bytes) {
                for p in &written {
                    let _ = std::fs::remove_file(p);
                }
                return Err(e);
            }
            written.push(path);
        }
        Ok(written)
    }
}

fn csv_bytes<R>(header: &[&str], rows: impl IntoIterator<Item = R>, mut fields: impl FnMut(R) -> Vec<String>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(fields(r))?;
    }
    w.into_inner().map_err(|e| Error::Input(format!("csv buffer: {e}")))
}

pub fn trials_csv(experiment: &str, trials: &[AlternationTrial]) -> Result<Vec<u8>> {
    csv_bytes(&TRIALS_HEADER, trials, |t| {
        vec![
            experiment.to_string(),
            t.alternation_id.clone(),
            t.train_frame.to_string(),
            t.seed.to_string(),
            t.p_in.to_string(),
            t.p_out_mean.to_string(),
            t.correct.to_string(),
        ]
    })
}

pub fn selectional_csv(trials: &[SelectionalTrial]) -> Result<Vec<u8>> {
    csv_bytes(&SELECTIONAL_HEADER, trials, |t| {
        let mut v = vec![t.seed.to_string()];
        v.extend(t.surprisal.iter().map(f64::to_string));
        v.extend(t.flags.iter().map(bool::to_string));
        v
    })
}

pub fn probe_csv(experiment: &str, trials: &[ProbeTrial]) -> Result<Vec<u8>> {
    csv_bytes(&PROBE_HEADER, trials, |t| {
        vec![
            experiment.to_string(),
            t.alternation_id.clone(),
            t.train_frame.to_string(),
            t.seed.to_string(),
            t.score.to_string(),
            t.inclass.to_string(),
            t.train_accuracy.to_string(),
        ]
    })
}

pub fn asymmetry_csv(rows: &[AsymmetryRow]) -> Result<Vec<u8>> {
    csv_bytes(&ASYMMETRY_HEADER, rows, |r| {
        vec![
            r.alternation_id.clone(),
            r.train_frame.to_string(),
            r.successes.to_string(),
            r.n.to_string(),
            r.accuracy.to_string(),
            r.sister_accuracy.map(|a| a.to_string()).unwrap_or_default(),
            r.below_baseline.to_string(),
        ]
    })
}

/// One row of summary.csv. `p_value` is empty for rows that are not
/// accuracy tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub experiment: String,
    pub group: String,
    pub successes: u64,
    pub n: u64,
    pub proportion: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: Option<f64>,
}

impl SummaryRow {
    pub fn accuracy(experiment: &str, group: &str, s: &AccuracySummary) -> Self {
        SummaryRow {
            experiment: experiment.to_string(),
            group: group.to_string(),
            successes: s.successes,
            n: s.n,
            proportion: s.proportion,
            ci_low: s.ci_low,
            ci_high: s.ci_high,
            p_value: Some(s.p_value),
        }
    }
}

pub fn summary_csv(rows: &[SummaryRow]) -> Result<Vec<u8>> {
    csv_bytes(&SUMMARY_HEADER, rows, |r| {
        vec![
            r.experiment.clone(),
            r.group.clone(),
            r.successes.to_string(),
            r.n.to_string(),
            r.proportion.to_string(),
            r.ci_low.to_string(),
            r.ci_high.to_string(),
            r.p_value.map(|p| p.to_string()).unwrap_or_default(),
        ]
    })
}

/// Reads summary.csv rows back.
pub fn read_summary(text: &str) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != SUMMARY_HEADER {
        return Err(Error::Input(format!("unexpected summary header {header:?}")));
    }
    r.records()
        .map(|rec| {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                rec[i]
                    .parse()
                    .map_err(|_| Error::Input(format!("bad number `{}` in summary", &rec[i])))
            };
            let int = |i: usize| -> Result<u64> {
                rec[i]
                    .parse()
                    .map_err(|_| Error::Input(format!("bad count `{}` in summary", &rec[i])))
            };
            Ok(SummaryRow {
                experiment: rec[0].to_string(),
                group: rec[1].to_string(),
                successes: int(2)?,
                n: int(3)?,
                proportion: num(4)?,
                ci_low: num(5)?,
                ci_high: num(6)?,
                p_value: if rec[7].is_empty() { None } else { Some(num(7)?) },
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

pub fn digest_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn digest_file(path: &Path) -> Result<InputDigest> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(InputDigest {
        path: path.display().to_string(),
        sha256: digest_bytes(&bytes),
    })
}

/// Everything needed to rerun an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment: String,
    pub tool_version: String,
    pub master_seed: u64,
    /// Seed indices; each trial seed is derived from these and the master seed.
    pub seeds: Vec<u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
}

impl RunManifest {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Input("manifest seed list is empty".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::Input("manifest seed list has duplicates".into()));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s.into_bytes())
    }
}

/// One bar of a chart.
#[derive(Debug, Clone, PartialEq)]
pub struct Bar {
    pub label: String,
    /// Bars sharing a group share a color.
    pub group: String,
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChartStyle {
    /// Axis fixed to [0, 1] with a dashed chance line at 0.5.
    Accuracy,
    /// Axis from 0 to the largest interval end, no baseline.
    Magnitude,
}

pub const PLOT_TOP: f64 = 40.0;
pub const PLOT_HEIGHT: f64 = 300.0;
const PLOT_LEFT: f64 = 60.0;
const BAR_WIDTH: f64 = 18.0;
const BAR_GAP: f64 = 6.0;
const LABEL_SPACE: f64 = 160.0;
const PALETTE: [&str; 10] = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac",
];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Top of the axis for `style`.
pub fn axis_max(style: ChartStyle, bars: &[Bar]) -> f64 {
    match style {
        ChartStyle::Accuracy => 1.0,
        ChartStyle::Magnitude => {
            let m = bars.iter().map(|b| b.ci_high.max(b.value)).fold(0.0, f64::max);
            if m > 0.0 {
                m * 1.1
            } else {
                1.0
            }
        }
    }
}

/// A standalone SVG bar chart with interval whiskers, bars in input order.
pub fn emit_chart(title: &str, bars: &[Bar], style: ChartStyle) -> Result<String> {
    if bars.is_empty() {
        return Err(Error::Input("chart has no rows".into()));
    }
    let top = axis_max(style, bars);
    let y = |v: f64| PLOT_TOP + (1.0 - v.clamp(0.0, top) / top) * PLOT_HEIGHT;
    let width = PLOT_LEFT + bars.len() as f64 * (BAR_WIDTH + BAR_GAP) + 20.0 + 140.0;
    let height = PLOT_TOP + PLOT_HEIGHT + LABEL_SPACE;
    let mut colors: BTreeMap<&str, &str> = BTreeMap::new();
    let mut order: Vec<&str> = Vec::new();
    for b in bars {
        if !colors.contains_key(b.group.as_str()) {
            colors.insert(&b.group, PALETTE[order.len() % PALETTE.len()]);
            order.push(&b.group);
        }
    }
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(s, r#"<title>{}</title>"#, esc(title));
    let _ = writeln!(s, r#"<text x="{PLOT_LEFT}" y="20" font-size="13">{}</text>"#, esc(title));
    let x_end = PLOT_LEFT + bars.len() as f64 * (BAR_WIDTH + BAR_GAP);
    let _ = writeln!(
        s,
        r#"<line class="axis" x1="{PLOT_LEFT}" y1="{:.3}" x2="{PLOT_LEFT}" y2="{:.3}" stroke="black"/>"#,
        PLOT_TOP,
        PLOT_TOP + PLOT_HEIGHT
    );
    for k in 0..=4 {
        let v = top * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.3}" y="{:.3}" text-anchor="end">{}</text>"#,
            PLOT_LEFT - 4.0,
            y(v) + 3.0,
            format_tick(v)
        );
    }
    for (i, b) in bars.iter().enumerate() {
        let x = PLOT_LEFT + BAR_GAP / 2.0 + i as f64 * (BAR_WIDTH + BAR_GAP);
        let h = PLOT_HEIGHT * b.value.clamp(0.0, top) / top;
        let _ = writeln!(
            s,
            r#"<rect class="bar" x="{x:.3}" y="{:.3}" width="{BAR_WIDTH:.3}" height="{h:.3}" fill="{}"><title>{}: {}</title></rect>"#,
            y(b.value),
            colors[b.group.as_str()],
            esc(&b.label),
            b.value
        );
        let cx = x + BAR_WIDTH / 2.0;
        let _ = writeln!(
            s,
            r#"<line class="ci" x1="{cx:.3}" y1="{:.3}" x2="{cx:.3}" y2="{:.3}" stroke="black"/>"#,
            y(b.ci_low),
            y(b.ci_high)
        );
        let ly = PLOT_TOP + PLOT_HEIGHT + 8.0;
        let _ = writeln!(
            s,
            r#"<text x="{cx:.3}" y="{ly:.3}" transform="rotate(60 {cx:.3} {ly:.3})">{}</text>"#,
            esc(&b.label)
        );
    }
    if style == ChartStyle::Accuracy {
        let _ = writeln!(
            s,
            r#"<line class="baseline" x1="{PLOT_LEFT}" y1="{:.3}" x2="{x_end:.3}" y2="{:.3}" stroke="gray" stroke-dasharray="4 3"/>"#,
            y(0.5),
            y(0.5)
        );
    }
    for (i, g) in order.iter().enumerate() {
        let ly = PLOT_TOP + 14.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{:.3}" y="{:.3}" width="10" height="10" fill="{}"/><text x="{:.3}" y="{:.3}">{}</text>"#,
            x_end + 20.0,
            ly,
            colors[g],
            x_end + 34.0,
            ly + 9.0,
            esc(g)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn format_tick(v: f64) -> String {
    let s = format!("{v:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}
