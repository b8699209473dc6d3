//! Minimal SVG output: polylines, markers and labelled axes.

use std::fmt::Write as _;

use crate::evaluation::BenchReport;
use crate::trajectory::Trajectory;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Maps data coordinates to the drawing area.
struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        let pad = |a: f64, b: f64| if (b - a).abs() < 1e-12 { (a - 0.5, b + 0.5) } else { (a, b) };
        let (x0, x1) = pad(x0, x1);
        let (y0, y1) = pad(y0, y1);
        Self { x0, x1, y0, y1 }
    }

    /// Same scale on both axes, as for a map.
    fn equal_aspect(mut self) -> Self {
        let sx = (self.x1 - self.x0) / (WIDTH - 2.0 * MARGIN);
        let sy = (self.y1 - self.y0) / (HEIGHT - 2.0 * MARGIN);
        let s = sx.max(sy);
        let (cx, cy) = ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0);
        let (hw, hh) = (s * (WIDTH - 2.0 * MARGIN) / 2.0, s * (HEIGHT - 2.0 * MARGIN) / 2.0);
        self.x0 = cx - hw;
        self.x1 = cx + hw;
        self.y0 = cy - hh;
        self.y1 = cy + hh;
        self
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title));
}

fn axes(out: &mut String, f: &Frame, xlabel: &str, ylabel: &str) {
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(out, r#"<polyline points="{l},{t} {l},{b} {r},{b}" fill="none" stroke="black"/>"#);
    for k in 0..=4 {
        let a = k as f64 / 4.0;
        let (xv, yv) = (f.x0 + a * (f.x1 - f.x0), f.y0 + a * (f.y1 - f.y0));
        let (x, y) = (f.px(xv), f.py(yv));
        let _ = writeln!(out, r#"<line x1="{x}" y1="{b}" x2="{x}" y2="{}" stroke="black"/>"#, b + 4.0);
        let _ = writeln!(out, r#"<text x="{x}" y="{}" text-anchor="middle">{}</text>"#, b + 18.0, tick(xv));
        let _ = writeln!(out, r#"<line x1="{}" y1="{y}" x2="{l}" y2="{y}" stroke="black"/>"#, l - 4.0);
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, l - 6.0, y + 4.0, tick(yv));
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, WIDTH / 2.0, HEIGHT - 16.0, escape(xlabel));
    let _ = writeln!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(ylabel)
    );
}

fn legend(out: &mut String, names: &[String]) {
    for (i, name) in names.iter().enumerate() {
        let y = MARGIN + 14.0 * i as f64;
        let x = WIDTH - MARGIN - 110.0;
        let c = COLORS[i % COLORS.len()];
        let _ = writeln!(out, r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{c}" stroke-width="2"/>"#, x + 20.0);
        let _ = writeln!(out, r#"<text x="{}" y="{}">{}</text>"#, x + 26.0, y + 4.0, escape(name));
    }
}

fn tick(v: f64) -> String {
    if v.abs() >= 100.0 || v == 0.0 {
        format!("{v:.0}")
    } else if v.abs() >= 1.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Top-down (x, y) view of one or more trajectories.
pub fn trajectory_plot(tracks: &[(String, &Trajectory)]) -> String {
    let all = tracks.iter().flat_map(|(_, t)| t.poses.iter().map(|p| p.translation));
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in all {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    let f = Frame::new(x0, x1, y0, y1).equal_aspect();
    let mut out = String::new();
    header(&mut out, "Trajectories (top-down)");
    axes(&mut out, &f, "x, m", "y, m");
    for (i, (_, t)) in tracks.iter().enumerate() {
        let pts: Vec<String> = t.poses.iter().map(|p| format!("{:.2},{:.2}", f.px(p.translation.x), f.py(p.translation.y))).collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
            pts.join(" "),
            COLORS[i % COLORS.len()]
        );
    }
    legend(&mut out, &tracks.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}

/// Median translation error per noise level with quartile bars, one series
/// per rejector.
pub fn bench_plot(report: &BenchReport) -> String {
    let n = report.levels.len();
    let mut ymax: f64 = 0.0;
    for lv in &report.levels {
        for r in 0..report.rejectors.len() {
            ymax = ymax.max(lv.translation_quartiles(r).q3);
        }
    }
    let f = Frame::new(-0.5, n as f64 - 0.5, 0.0, if ymax > 0.0 { ymax * 1.1 } else { 1.0 });
    let mut out = String::new();
    header(&mut out, "ICP translation error by rejector");
    axes(&mut out, &f, "noise level", "translation error, m");
    let series = report.rejectors.len().max(1) as f64;
    for (r, _) in report.rejectors.iter().enumerate() {
        let c = COLORS[r % COLORS.len()];
        let offset = (r as f64 - (series - 1.0) / 2.0) * 0.15;
        let mut line = Vec::new();
        for (i, lv) in report.levels.iter().enumerate() {
            let q = lv.translation_quartiles(r);
            let x = f.px(i as f64 + offset);
            let _ = writeln!(
                out,
                r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="{c}" stroke-width="2"/>"#,
                f.py(q.q1),
                f.py(q.q3)
            );
            let _ = writeln!(out, r#"<circle cx="{x:.2}" cy="{:.2}" r="4" fill="{c}"/>"#, f.py(q.median));
            line.push(format!("{x:.2},{:.2}", f.py(q.median)));
        }
        let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{c}" stroke-dasharray="4 3"/>"#, line.join(" "));
    }
    for (i, lv) in report.levels.iter().enumerate() {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{}" text-anchor="middle" font-size="10">{} m / {:.0} deg</text>"#,
            f.px(i as f64),
            HEIGHT - MARGIN - 6.0,
            lv.level.l_t,
            lv.level.l_r.to_degrees()
        );
    }
    legend(&mut out, &report.rejectors.iter().map(|r| r.to_string()).collect::<Vec<_>>());
    out.push_str("</svg>\n");
    out
}
