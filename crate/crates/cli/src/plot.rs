//! Self-contained SVG line charts. Output depends only on the input
//! numbers, so identical CSVs render to identical bytes.

use std::fmt::Write;

use crate::metrics::{moving_average, EpisodeTable};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 78.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 56.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];
/// Window of the bold smoothed line drawn over each raw series.
pub const SMOOTHING_WINDOW: usize = 10;

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub values: Vec<f64>,
}

/// Tick positions at 1/2/5 multiples covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .into_iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn label(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-2..1e5).contains(&a) {
        format!("{v:.1e}")
    } else if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// One chart: each series drawn raw (faint) and smoothed (bold) against
/// its index.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let n = series.iter().map(|s| s.values.len()).max().unwrap_or(0);
    let finite = series.iter().flat_map(|s| s.values.iter()).copied().filter(|v| v.is_finite());
    let (mut lo, mut hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 * (1.0 + hi.abs()) {
        (lo, hi) = (lo - 1.0, hi + 1.0);
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let x_max = (n.max(2) - 1) as f64;
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |i: f64| LEFT + pw * i / x_max;
    let sy = |v: f64| TOP + ph * (1.0 - (v - lo) / (hi - lo));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        LEFT + pw / 2.0,
        escape(title)
    );
    for t in ticks(lo, hi) {
        let y = sy(t);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT:.1}" y1="{y:.2}" x2="{:.1}" y2="{y:.2}" stroke="#e5e5e5"/><text x="{:.1}" y="{:.2}" text-anchor="end">{}</text>"##,
            LEFT + pw,
            LEFT - 6.0,
            y + 4.0,
            label(t)
        );
    }
    for t in ticks(0.0, x_max) {
        let x = sx(t);
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{:.1}" text-anchor="middle">{}</text>"#,
            TOP + ph + 18.0,
            label(t)
        );
    }
    let _ = writeln!(
        s,
        r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 14.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(y_label)
    );

    let polyline = |values: &[f64]| {
        values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(i, v)| format!("{:.2},{:.2}", sx(i as f64), sy(*v)))
            .collect::<Vec<_>>()
            .join(" ")
    };
    for (k, series) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-opacity="0.3" stroke-width="1"/>"#,
            polyline(&series.values)
        );
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2.2"/>"#,
            polyline(&moving_average(&series.values, SMOOTHING_WINDOW))
        );
        let ly = TOP + 12.0 + 18.0 * k as f64;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2.2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            lx + 18.0,
            lx + 24.0,
            ly + 4.0,
            escape(&series.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Per-receiver mean SINR against episode.
pub fn sinr_chart(table: &EpisodeTable) -> String {
    let series: Vec<Series> = (1..=table.receivers())
        .map(|r| Series {
            label: format!("receiver {r}"),
            values: table.column(&format!("sinr_db_r{r}")).unwrap_or_default().to_vec(),
        })
        .collect();
    line_chart("Average SINR per episode", "episode", "mean SINR (dB)", &series)
}

/// Per-receiver and summed mean capacity against episode, in Mbit/s.
pub fn capacity_chart(table: &EpisodeTable) -> String {
    let mbps = |name: &str| -> Vec<f64> {
        table
            .column(name)
            .unwrap_or_default()
            .iter()
            .map(|v| v / 1e6)
            .collect()
    };
    let mut series: Vec<Series> = (1..=table.receivers())
        .map(|r| Series {
            label: format!("receiver {r}"),
            values: mbps(&format!("capacity_r{r}")),
        })
        .collect();
    series.push(Series {
        label: "sum".into(),
        values: mbps("capacity_sum"),
    });
    line_chart("Average capacity per episode", "episode", "mean capacity (Mbit/s)", &series)
}
