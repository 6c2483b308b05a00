//! Text renderings of results: CSV tables, band exports and SVG figures.
//!
//! Every renderer is a pure function of its input, so identical results give
//! identical bytes.

use std::fmt::Write as _;

use serde::Serialize;

use crate::area::ComparisonReport;
use crate::band::PredictionBand;
use crate::quantile::QuantileBreakpointTable;
use crate::segmented::InferenceRow;

#[derive(Serialize)]
struct BandHeader {
    gamma: f64,
    #[serde(rename = "B")]
    replicates: Option<usize>,
    seed: Option<u64>,
    area: Option<f64>,
}

/// `x,center,lower,upper` preceded by a `#` line holding
/// `{"gamma", "B", "seed", "area"}` as JSON.
pub fn band_csv(band: &PredictionBand, replicates: Option<usize>, seed: Option<u64>) -> String {
    let header = BandHeader {
        gamma: band.gamma,
        replicates,
        seed,
        area: band.area,
    };
    let mut out = format!(
        "# {}\nx,center,lower,upper\n",
        serde_json::to_string(&header).expect("plain struct serializes")
    );
    for i in 0..band.len() {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            band.grid_x[i], band.center[i], band.lower[i], band.upper[i]
        );
    }
    out
}

pub fn params_csv(rows: &[InferenceRow]) -> String {
    let mut out = String::from("parameter,estimate,se,t,p,ci_lower,ci_upper,significant\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.parameter, r.estimate, r.se, r.t, r.p, r.ci_lower, r.ci_upper, r.significant
        );
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Per-tau rows, then a blank line and a summary block. The `*_extreme`
/// columns mark the rows attaining the interval endpoints.
pub fn quantile_table_csv(t: &QuantileBreakpointTable) -> String {
    let mark = |iv: &Option<crate::quantile::RangeInterval>, v: Option<f64>| -> &'static str {
        match (iv, v) {
            (Some(iv), Some(v)) if v == iv.lower && v == iv.upper => "min+max",
            (Some(iv), Some(v)) if v == iv.lower => "min",
            (Some(iv), Some(v)) if v == iv.upper => "max",
            _ => "",
        }
    };
    let mut out = String::from("tau,alpha1,alpha2,alpha1_extreme,alpha2_extreme,error\n");
    for r in &t.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.tau,
            opt(r.alpha1),
            opt(r.alpha2),
            mark(&t.alpha1, r.alpha1),
            mark(&t.alpha2, r.alpha2),
            csv_field(r.error.as_deref().unwrap_or(""))
        );
    }
    out.push('\n');
    out.push_str("statistic,alpha1,alpha2\n");
    let field = |f: fn(&crate::quantile::RangeInterval) -> f64| {
        (opt(t.alpha1.as_ref().map(f)), opt(t.alpha2.as_ref().map(f)))
    };
    for (name, (a, b)) in [
        ("lower", field(|i| i.lower)),
        ("upper", field(|i| i.upper)),
        ("width", field(|i| i.width)),
        ("lower_tau", field(|i| i.lower_tau)),
        ("upper_tau", field(|i| i.upper_tau)),
    ] {
        let _ = writeln!(out, "{name},{a},{b}");
    }
    let _ = writeln!(out, "coverage,{0},{0}", t.coverage_label);
    let _ = writeln!(out, "partial,{0},{0}", t.partial);
    out
}

/// Breakpoint interval widths by method, minimum flagged per parameter.
pub fn widths_csv(r: &ComparisonReport) -> String {
    let mut out = String::from("parameter,method,coverage,lower,upper,width,minimum\n");
    let cov = r.coverage.as_deref().unwrap_or("");
    for row in &r.widths {
        for c in &row.cells {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                row.parameter,
                csv_field(&c.method),
                cov,
                c.lower,
                c.upper,
                c.width,
                c.minimum
            );
        }
    }
    out
}

/// Band surface areas by method, minimum flagged.
pub fn areas_csv(r: &ComparisonReport) -> String {
    let mut out = String::from("method,gamma,grid_cells,area,minimum\n");
    for a in &r.areas {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            csv_field(&a.method),
            opt(r.gamma),
            r.grid_cells,
            a.area,
            a.minimum
        );
    }
    out
}

pub fn ratios_csv(r: &ComparisonReport) -> String {
    let mut out = String::from("quantity,numerator,denominator,ratio,percent\n");
    for q in &r.ratios {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            q.quantity,
            csv_field(&q.numerator),
            csv_field(&q.denominator),
            q.ratio,
            q.percent
        );
    }
    out
}

/// Content of a scatter figure with fitted curves and shaded bands.
#[derive(Debug, Clone, Default)]
pub struct Figure {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    /// `(x, y, group)`; groups get distinct marker colours.
    pub points: Vec<(f64, f64, Option<String>)>,
    /// `(name, xs, lower, upper)`, drawn in order (widest first).
    pub bands: Vec<(String, Vec<f64>, Vec<f64>, Vec<f64>)>,
    pub curves: Vec<(String, Vec<f64>, Vec<f64>)>,
    /// Intervals drawn as segments along the x-axis.
    pub x_intervals: Vec<(String, f64, f64)>,
}

/// Long-format geometry behind a figure: `layer,series,x,y`.
pub fn figure_geometry_csv(fig: &Figure) -> String {
    let mut out = String::from("layer,series,x,y\n");
    for (x, y, g) in &fig.points {
        let _ = writeln!(out, "point,{},{x},{y}", csv_field(g.as_deref().unwrap_or("")));
    }
    for (name, xs, lo, hi) in &fig.bands {
        for (x, y) in xs.iter().zip(lo) {
            let _ = writeln!(out, "band_lower,{},{x},{y}", csv_field(name));
        }
        for (x, y) in xs.iter().zip(hi) {
            let _ = writeln!(out, "band_upper,{},{x},{y}", csv_field(name));
        }
    }
    for (name, xs, ys) in &fig.curves {
        for (x, y) in xs.iter().zip(ys) {
            let _ = writeln!(out, "curve,{},{x},{y}", csv_field(name));
        }
    }
    for (name, lo, hi) in &fig.x_intervals {
        let _ = writeln!(out, "x_interval,{},{lo},", csv_field(name));
        let _ = writeln!(out, "x_interval,{},{hi},", csv_field(name));
    }
    out
}

const W: f64 = 640.0;
const H: f64 = 480.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 16.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 56.0;
const BAND_FILLS: [&str; 3] = ["#c6dbef", "#9ecae1", "#6baed6"];
const GROUP_COLOURS: [&str; 6] = ["#252525", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Round tick step: 1, 2 or 5 times a power of ten.
fn tick_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let r = raw / mag;
    mag * if r < 1.5 {
        1.0
    } else if r < 3.5 {
        2.0
    } else if r < 7.5 {
        5.0
    } else {
        10.0
    }
}

/// Tick positions with labels printed to the precision of the step.
fn ticks(lo: f64, hi: f64) -> Vec<(f64, String)> {
    let step = tick_step(hi - lo);
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    let first = (lo / step).ceil() as i64;
    let last = (hi / step + 1e-9).floor() as i64;
    (first..=last)
        .map(|k| {
            let t = k as f64 * step;
            (t, format!("{:.*}", decimals, t))
        })
        .collect()
}

/// SVG with no timestamps or random ids.
pub fn render_svg(fig: &Figure) -> String {
    let mut xs: Vec<f64> = fig.points.iter().map(|p| p.0).collect();
    let mut ys: Vec<f64> = fig.points.iter().map(|p| p.1).collect();
    for (_, bx, lo, hi) in &fig.bands {
        xs.extend(bx);
        ys.extend(lo);
        ys.extend(hi);
    }
    for (_, cx, cy) in &fig.curves {
        xs.extend(cx);
        ys.extend(cy);
    }
    let finite = |v: &Vec<f64>| v.iter().copied().filter(|x| x.is_finite()).collect::<Vec<_>>();
    let (xs, ys) = (finite(&xs), finite(&ys));
    let range = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() {
            (0.0, 1.0)
        } else if hi > lo {
            let pad = 0.04 * (hi - lo);
            (lo - pad, hi + pad)
        } else {
            (lo - 0.5, hi + 0.5)
        }
    };
    let (x0, x1) = range(&xs);
    let (y0, y1) = range(&ys);
    let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * (W - LEFT - RIGHT);
    let py = |y: f64| H - BOTTOM - (y - y0) / (y1 - y0) * (H - TOP - BOTTOM);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        escape(&fig.title)
    );

    for (k, (name, bx, lo, hi)) in fig.bands.iter().enumerate() {
        let mut pts: Vec<String> = bx
            .iter()
            .zip(hi)
            .map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        pts.extend(
            bx.iter()
                .zip(lo)
                .rev()
                .map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y))),
        );
        let _ = writeln!(
            s,
            r#"<polygon class="band" data-name="{}" points="{}" fill="{}" fill-opacity="0.8" stroke="none"/>"#,
            escape(name),
            pts.join(" "),
            BAND_FILLS[k % BAND_FILLS.len()]
        );
    }

    // axes
    let (ax0, ax1, ay0, ay1) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
    let _ = writeln!(
        s,
        r##"<path d="M{ax0:.2},{ay0:.2} V{ay1:.2} H{ax1:.2}" fill="none" stroke="#000"/>"##
    );
    for (t, label) in ticks(x0, x1) {
        let _ = writeln!(
            s,
            r##"<line x1="{0:.2}" y1="{ay1:.2}" x2="{0:.2}" y2="{1:.2}" stroke="#000"/><text x="{0:.2}" y="{2:.2}" text-anchor="middle">{label}</text>"##,
            px(t),
            ay1 + 5.0,
            ay1 + 18.0
        );
    }
    for (t, label) in ticks(y0, y1) {
        let _ = writeln!(
            s,
            r##"<line x1="{ax0:.2}" y1="{0:.2}" x2="{1:.2}" y2="{0:.2}" stroke="#000"/><text x="{2:.2}" y="{3:.2}" text-anchor="end">{label}</text>"##,
            py(t),
            ax0 - 5.0,
            ax0 - 8.0,
            py(t) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        (ax0 + ax1) / 2.0,
        H - 14.0,
        escape(&fig.x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{0:.2}" text-anchor="middle" transform="rotate(-90 16 {0:.2})">{1}</text>"#,
        (ay0 + ay1) / 2.0,
        escape(&fig.y_label)
    );

    for (k, (name, lo, hi)) in fig.x_intervals.iter().enumerate() {
        let y = ay1 - 4.0 - 5.0 * k as f64;
        let (a, b) = (lo.max(x0), hi.min(x1));
        let _ = writeln!(
            s,
            r##"<line class="x-interval" data-name="{}" x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#000" stroke-width="2.5"/>"##,
            escape(name),
            px(a),
            px(b)
        );
    }

    for (name, cx, cy) in &fig.curves {
        let pts: Vec<String> = cx
            .iter()
            .zip(cy)
            .map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            s,
            r##"<polyline class="curve" data-name="{}" points="{}" fill="none" stroke="#08306b" stroke-width="1.8"/>"##,
            escape(name),
            pts.join(" ")
        );
    }

    let mut groups: Vec<&str> = fig.points.iter().filter_map(|p| p.2.as_deref()).collect();
    groups.sort_unstable();
    groups.dedup();
    for (x, y, g) in &fig.points {
        let colour = g
            .as_deref()
            .and_then(|g| groups.iter().position(|h| *h == g))
            .map_or(GROUP_COLOURS[0], |k| GROUP_COLOURS[(k + 1) % GROUP_COLOURS.len()]);
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{colour}"/>"#,
            px(*x),
            py(*y)
        );
    }
    for (k, g) in groups.iter().enumerate() {
        let y = TOP + 14.0 + 16.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{}"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            ax1 - 110.0,
            y - 4.0,
            GROUP_COLOURS[(k + 1) % GROUP_COLOURS.len()],
            ax1 - 100.0,
            y,
            escape(g)
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_csv_layout() {
        let mut b = PredictionBand::new(vec![0.0, 1.0], vec![0.5; 2], vec![0.0; 2], vec![1.0; 2], 0.8)
            .unwrap();
        b.area = Some(1.0);
        let s = band_csv(&b, Some(100), Some(7));
        let mut lines = s.lines();
        assert_eq!(
            lines.next().unwrap(),
            r##"# {"gamma":0.8,"B":100,"seed":7,"area":1.0}"##
        );
        assert_eq!(lines.next().unwrap(), "x,center,lower,upper");
        assert_eq!(lines.next().unwrap(), "0,0.5,0,1");
    }

    #[test]
    fn tick_steps_are_round() {
        let labels: Vec<String> = ticks(-0.04, 1.04).into_iter().map(|t| t.1).collect();
        assert_eq!(labels, ["0.0", "0.2", "0.4", "0.6", "0.8", "1.0"]);
        assert_eq!(tick_step(100.0), 20.0);
        assert_eq!(tick_step(7.0), 1.0);
        assert_eq!(tick_step(9.0), 2.0);
    }

    #[test]
    fn svg_is_deterministic_and_escaped() {
        let fig = Figure {
            title: "a < b".into(),
            points: vec![(0.0, 1.0, Some("G&1".into())), (1.0, 2.0, None)],
            curves: vec![("fit".into(), vec![0.0, 1.0], vec![1.0, 2.0])],
            x_intervals: vec![("alpha1".into(), 0.2, 0.4)],
            ..Default::default()
        };
        let a = render_svg(&fig);
        assert_eq!(a, render_svg(&fig));
        assert!(a.contains("a &lt; b") && a.contains("G&amp;1"));
        assert!(a.contains("class=\"x-interval\""));
        let g = figure_geometry_csv(&fig);
        assert!(g.starts_with("layer,series,x,y\npoint,G&1,0,1\n"));
    }
}
