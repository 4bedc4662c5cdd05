//! Summaries of batch tables and exports from frame logs.

use std::fmt::Write as _;

use vguide_core::session::{GuidanceFrame, GuideSnapshot};
use vguide_core::{GuideError, Result};

use crate::episode::{BatchRow, Mode};

/// Five-number summary using linear interpolation between order statistics
/// (the "type 7" quantile). Infinite values sort last and propagate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quartiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(GuideError::Domain("no values to summarize".into()));
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(GuideError::Domain("NaN in summary input".into()));
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Ok(Self {
            min: v[0],
            q1: quantile_sorted(&v, 0.25),
            median: quantile_sorted(&v, 0.5),
            q3: quantile_sorted(&v, 0.75),
            max: v[v.len() - 1],
        })
    }
}

pub fn quantile_sorted(v: &[f64], p: f64) -> f64 {
    let h = (v.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if frac == 0.0 || lo + 1 >= v.len() {
        return v[lo];
    }
    // written so that an infinite upper neighbour yields inf instead of NaN
    if v[lo] == v[lo + 1] {
        v[lo]
    } else {
        v[lo] + frac * (v[lo + 1] - v[lo])
    }
}

pub fn median(values: &[f64]) -> Result<f64> {
    Ok(Quartiles::of(values)?.median)
}

/// Parses a table written by [`crate::episode::rows_to_csv`].
pub fn parse_rows(text: &str) -> Result<Vec<BatchRow>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some("seed,mode,collisions,time") => {}
        other => return Err(GuideError::Domain(format!("unexpected table header {other:?}"))),
    }
    lines
        .map(|line| {
            let bad = || GuideError::Domain(format!("bad table row {line:?}"));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(bad());
            }
            let time = if f[3] == "inf" { f64::INFINITY } else { f[3].parse().map_err(|_| bad())? };
            Ok(BatchRow {
                seed: f[0].parse().map_err(|_| bad())?,
                mode: f[1].parse()?,
                collisions: f[2].parse().map_err(|_| bad())?,
                time,
            })
        })
        .collect()
}

/// Per-mode summaries of collisions and completion time, in `Mode` order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeSummary {
    pub mode: Mode,
    pub n: usize,
    pub collisions: Quartiles,
    pub time: Quartiles,
}

pub fn summarize(rows: &[BatchRow]) -> Result<Vec<ModeSummary>> {
    if rows.is_empty() {
        return Err(GuideError::Domain("empty table".into()));
    }
    let mut modes: Vec<Mode> = rows.iter().map(|r| r.mode).collect();
    modes.sort();
    modes.dedup();
    modes
        .into_iter()
        .map(|mode| {
            let sel: Vec<&BatchRow> = rows.iter().filter(|r| r.mode == mode).collect();
            let cols: Vec<f64> = sel.iter().map(|r| r.collisions as f64).collect();
            let times: Vec<f64> = sel.iter().map(|r| r.time).collect();
            Ok(ModeSummary {
                mode,
                n: sel.len(),
                collisions: Quartiles::of(&cols)?,
                time: Quartiles::of(&times)?,
            })
        })
        .collect()
}

pub fn summary_csv(summaries: &[ModeSummary]) -> String {
    let mut out = String::from("mode,metric,n,min,q1,median,q3,max\n");
    for s in summaries {
        for (name, q) in [("collisions", &s.collisions), ("time", &s.time)] {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                s.mode,
                name,
                s.n,
                num(q.min),
                num(q.q1),
                num(q.median),
                num(q.q3),
                num(q.max)
            );
        }
    }
    out
}

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        "inf".into()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Collisions,
    Time,
}

/// Box plot of one metric, one box per mode. Infinite values are drawn at
/// the top edge of the plot.
pub fn box_plot_svg(summaries: &[ModeSummary], metric: Metric) -> Result<String> {
    if summaries.is_empty() {
        return Err(GuideError::Domain("empty table".into()));
    }
    let pick = |s: &ModeSummary| match metric {
        Metric::Collisions => s.collisions,
        Metric::Time => s.time,
    };
    let finite_max = summaries
        .iter()
        .flat_map(|s| {
            let q = pick(s);
            [q.min, q.q1, q.median, q.q3, q.max]
        })
        .filter(|v| v.is_finite())
        .fold(0.0_f64, f64::max);
    let top = if finite_max > 0.0 { finite_max * 1.1 } else { 1.0 };
    let (w, h, pad) = (120.0 * summaries.len() as f64 + 60.0, 300.0, 40.0);
    let y = |v: f64| {
        let v = if v.is_finite() { v } else { top };
        h - pad - (v / top) * (h - 2.0 * pad)
    };
    let title = match metric {
        Metric::Collisions => "collisions",
        Metric::Time => "completion time [s]",
    };
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<text x="{}" y="20">{title}</text>"#, pad);
    let _ = writeln!(
        svg,
        r#"<line x1="{pad}" y1="{}" x2="{pad}" y2="{pad}" stroke="black"/>"#,
        h - pad
    );
    let _ = writeln!(svg, r#"<text x="2" y="{}">{}</text>"#, y(top) + 4.0, num_short(top));
    let _ = writeln!(svg, r#"<text x="2" y="{}">0</text>"#, h - pad + 4.0);
    for (i, s) in summaries.iter().enumerate() {
        let q = pick(s);
        let cx = pad + 60.0 + 120.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{cx}" y1="{}" x2="{cx}" y2="{}" stroke="black"/>"#,
            y(q.min),
            y(q.max)
        );
        let _ = writeln!(
            svg,
            r#"<rect x="{}" y="{}" width="60" height="{}" fill="lightsteelblue" stroke="black"/>"#,
            cx - 30.0,
            y(q.q3),
            (y(q.q1) - y(q.q3)).max(1.0)
        );
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="black" stroke-width="2"/>"#,
            cx - 30.0,
            y(q.median),
            cx + 30.0,
            y(q.median)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            cx,
            h - pad + 18.0,
            s.mode
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn num_short(v: f64) -> String {
    format!("{v:.1}")
}

/// Every distinct guide snapshot in a frame log, in order of appearance.
pub fn guide_snapshots(frames: &[GuidanceFrame]) -> Result<Vec<GuideSnapshot>> {
    if frames.is_empty() {
        return Err(GuideError::Domain("empty frame log".into()));
    }
    let mut out: Vec<GuideSnapshot> = Vec::new();
    for f in frames {
        if let Some(g) = &f.guide {
            if out.last().map(|l| l.version) != Some(g.version) {
                out.push(g.clone());
            }
        }
    }
    Ok(out)
}

/// Ellipse chains as CSV: one row per (snapshot, plan, phase). Vector
/// fields are `;`-separated; axes are `|`-separated rows.
pub fn ellipse_csv(snapshots: &[GuideSnapshot]) -> String {
    let mut out = String::from("version,plan_id,phase,weight,mean,axes\n");
    for s in snapshots {
        for (chain, id) in s.chains.iter().zip(&s.plan_ids) {
            for e in chain {
                let mean = join(&e.mean, ";");
                let axes: Vec<String> = e.axes.iter().map(|a| join(a, ";")).collect();
                let _ = writeln!(out, "{},{},{},{},{},{}", s.version, id, e.phase, e.weight, mean, axes.join("|"));
            }
        }
    }
    out
}

/// Pose, wrench and freelance belief per tick.
pub fn trajectory_csv(frames: &[GuidanceFrame]) -> Result<String> {
    let first = frames.first().ok_or_else(|| GuideError::Domain("empty frame log".into()))?;
    let n = first.pose.len();
    let mut out = String::from("tick");
    for k in 0..n {
        let _ = write!(out, ",x{k}");
    }
    for k in 0..n {
        let _ = write!(out, ",f{k}");
    }
    out.push_str(",energy,freelance_belief\n");
    for f in frames {
        let _ = write!(out, "{}", f.tick);
        for v in f.pose.iter().chain(&f.wrench) {
            let _ = write!(out, ",{v}");
        }
        let _ = writeln!(out, ",{},{}", f.energy, f.plan_belief.last().copied().unwrap_or(0.0));
    }
    Ok(out)
}

fn join(v: &[f64], sep: &str) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(sep)
}
