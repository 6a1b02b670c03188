//! Minimal deterministic SVG output.

use std::fmt::Write;

use labsteg::environment::Episode;
use labsteg::labyrinth::Labyrinth;

pub const PALETTE: [&str; 6] = ["#444444", "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

pub struct Svg {
    width: f64,
    height: f64,
    body: String,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Svg {
    pub fn new(width: f64, height: f64) -> Self {
        Self { width, height, body: String::new() }
    }

    pub fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str) {
        let _ = writeln!(self.body, r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="{fill}"/>"#);
    }

    pub fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str) {
        let _ = writeln!(self.body, r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="{stroke}"/>"#);
    }

    pub fn polyline(&mut self, points: &[(f64, f64)], stroke: &str, width: f64) {
        let pts: Vec<String> = points.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="{width:.2}" stroke-linejoin="round"/>"#,
            pts.join(" ")
        );
    }

    pub fn circle(&mut self, cx: f64, cy: f64, r: f64, fill: &str) {
        let _ = writeln!(self.body, r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="{r:.2}" fill="{fill}"/>"#);
    }

    pub fn text(&mut self, x: f64, y: f64, size: f64, anchor: &str, s: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.2}" y="{y:.2}" font-family="sans-serif" font-size="{size:.1}" text-anchor="{anchor}">{}</text>"#,
            escape(s)
        );
    }

    pub fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.0} {h:.0}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.body,
            w = self.width,
            h = self.height
        )
    }
}

pub struct Series<'a> {
    pub name: &'a str,
    pub colour: &'a str,
    pub values: Vec<f64>,
}

const MARGIN: f64 = 50.0;

fn frame(svg: &mut Svg, title: &str, w: f64, h: f64, y_max: f64, y_label: &str) {
    svg.text(w / 2.0, 20.0, 14.0, "middle", title);
    svg.line(MARGIN, h - MARGIN, w - 20.0, h - MARGIN, "black");
    svg.line(MARGIN, 35.0, MARGIN, h - MARGIN, "black");
    for k in 0..=4 {
        let v = y_max * k as f64 / 4.0;
        let y = h - MARGIN - (h - MARGIN - 35.0) * k as f64 / 4.0;
        svg.line(MARGIN - 4.0, y, MARGIN, y, "black");
        svg.text(MARGIN - 6.0, y + 4.0, 10.0, "end", &format!("{v:.2}"));
    }
    svg.text(12.0, h / 2.0, 11.0, "middle", y_label);
}

fn legend(svg: &mut Svg, series: &[Series], w: f64) {
    for (i, s) in series.iter().enumerate() {
        let y = 40.0 + 14.0 * i as f64;
        svg.rect(w - 130.0, y - 8.0, 10.0, 10.0, s.colour);
        svg.text(w - 115.0, y, 10.0, "start", s.name);
    }
}

fn y_max(series: &[Series]) -> f64 {
    let m = series.iter().flat_map(|s| s.values.iter().copied()).filter(|v| v.is_finite()).fold(0.0, f64::max);
    if m > 0.0 {
        m * 1.05
    } else {
        1.0
    }
}

/// Grouped vertical bars, one group per label. Values that are not finite
/// are skipped.
pub fn bar_chart(title: &str, y_label: &str, labels: &[String], series: &[Series]) -> String {
    let groups = labels.len().max(1) as f64;
    let w = (MARGIN + 30.0 + groups * (8.0 * series.len() as f64 + 6.0)).max(480.0);
    let h = 320.0;
    let top = y_max(series);
    let mut svg = Svg::new(w, h);
    frame(&mut svg, title, w, h, top, y_label);
    let plot_w = w - MARGIN - 20.0;
    let slot = plot_w / groups;
    let bar = (slot - 2.0) / series.len().max(1) as f64;
    for (g, label) in labels.iter().enumerate() {
        for (k, s) in series.iter().enumerate() {
            let v = s.values.get(g).copied().unwrap_or(f64::NAN);
            if !v.is_finite() {
                continue;
            }
            let bh = (h - MARGIN - 35.0) * v / top;
            svg.rect(MARGIN + g as f64 * slot + 1.0 + k as f64 * bar, h - MARGIN - bh, bar, bh, s.colour);
        }
        if labels.len() <= 40 || g % 10 == 0 {
            svg.text(MARGIN + (g as f64 + 0.5) * slot, h - MARGIN + 14.0, 9.0, "middle", label);
        }
    }
    legend(&mut svg, series, w);
    svg.finish()
}

/// Line chart over shared x values.
pub fn line_chart(title: &str, y_label: &str, xs: &[f64], series: &[Series]) -> String {
    let (w, h) = (560.0, 320.0);
    let top = y_max(series);
    let mut svg = Svg::new(w, h);
    frame(&mut svg, title, w, h, top, y_label);
    let (x0, x1) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let span = if x1 > x0 { x1 - x0 } else { 1.0 };
    let px = |x: f64| MARGIN + (w - MARGIN - 40.0) * (x - x0) / span;
    let py = |y: f64| h - MARGIN - (h - MARGIN - 35.0) * y / top;
    for &x in xs {
        svg.text(px(x), h - MARGIN + 14.0, 9.0, "middle", &format!("{x:.2}"));
    }
    for s in series {
        let pts: Vec<(f64, f64)> =
            xs.iter().zip(&s.values).filter(|(_, v)| v.is_finite()).map(|(&x, &v)| (px(x), py(v))).collect();
        svg.polyline(&pts, s.colour, 2.0);
        for &(x, y) in &pts {
            svg.circle(x, y, 2.5, s.colour);
        }
    }
    legend(&mut svg, series, w);
    svg.finish()
}

const CELL: f64 = 40.0;

/// Grid with obstacles, start and goal; row 0 is drawn at the bottom.
/// Each trajectory is one polyline through cell centres.
pub fn render_labyrinth(lab: &Labyrinth, trajectories: &[(String, &Episode)]) -> String {
    let (w, h) = (lab.width() as f64 * CELL, lab.height() as f64 * CELL);
    let mut svg = Svg::new(w + 140.0, h + 20.0);
    let cy = |row: usize| 10.0 + h - (row as f64 + 0.5) * CELL;
    let cx = |col: usize| 10.0 + (col as f64 + 0.5) * CELL;
    for row in 0..lab.height() {
        for col in 0..lab.width() {
            let p = labsteg::labyrinth::Position::new(row, col);
            let fill = if lab.is_obstacle(p) {
                "#333333"
            } else if p == lab.start() {
                "#b7e4c7"
            } else if p == lab.goal() {
                "#ffd6a5"
            } else {
                "#f4f4f4"
            };
            svg.rect(cx(col) - CELL / 2.0 + 1.0, cy(row) - CELL / 2.0 + 1.0, CELL - 2.0, CELL - 2.0, fill);
        }
    }
    svg.text(cx(lab.start().col), cy(lab.start().row) + 5.0, 14.0, "middle", "S");
    svg.text(cx(lab.goal().col), cy(lab.goal().row) + 5.0, 14.0, "middle", "G");
    let n = trajectories.len().max(1) as f64;
    for (i, (name, ep)) in trajectories.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        // Offset each path slightly so overlapping routes stay visible.
        let off = (i as f64 - (n - 1.0) / 2.0) * 4.0;
        let pts: Vec<(f64, f64)> = ep.positions.iter().map(|p| (cx(p.col) + off, cy(p.row) + off)).collect();
        svg.polyline(&pts, colour, 3.0);
        let y = 20.0 + 16.0 * i as f64;
        svg.rect(w + 24.0, y - 9.0, 10.0, 10.0, colour);
        svg.text(w + 40.0, y, 11.0, "start", name);
    }
    svg.finish()
}
