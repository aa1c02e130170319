//! Self-contained SVG charts. Output is a pure function of the input data:
//! coordinates carry two decimals and no timestamps or ids are emitted.

use std::fmt::Write as _;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

pub fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn num(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

fn tick_label(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-2..1e4).contains(&a) {
        format!("{v:.1e}")
    } else if (v - v.round()).abs() < 1e-9 {
        format!("{}", v.round() as i64)
    } else {
        format!("{v:.2}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
}

impl Series {
    pub fn new(name: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self {
            name: name.into(),
            points,
            dashed: false,
        }
    }

    pub fn dashed(mut self) -> Self {
        self.dashed = true;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Range {
    lo: f64,
    hi: f64,
}

impl Range {
    fn of(values: impl Iterator<Item = f64>) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            return Range { lo: 0.0, hi: 1.0 };
        }
        if hi - lo < 1e-12 {
            let pad = if lo.abs() > 1e-12 { lo.abs() * 0.1 } else { 1.0 };
            return Range {
                lo: lo - pad,
                hi: hi + pad,
            };
        }
        Range { lo, hi }
    }

    fn include(self, v: f64) -> Self {
        Range {
            lo: self.lo.min(v),
            hi: self.hi.max(v),
        }
    }

    fn ticks(self) -> Vec<f64> {
        (0..=4)
            .map(|k| self.lo + (self.hi - self.lo) * k as f64 / 4.0)
            .collect()
    }
}

struct Frame {
    out: String,
    x: Range,
    y: Range,
}

impl Frame {
    fn new(title: &str, x_label: &str, y_label: &str, x: Range, y: Range) -> Self {
        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">
<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>
<text x="{tx}" y="22" text-anchor="middle" font-size="14">{title}</text>"#,
            w = WIDTH,
            h = HEIGHT,
            tx = num((LEFT + WIDTH - RIGHT) / 2.0),
            title = escape(title),
        );
        let mut f = Frame { out, x, y };
        f.axes(x_label, y_label);
        f
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.lo) / (self.x.hi - self.x.lo) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y.lo) / (self.y.hi - self.y.lo) * (HEIGHT - TOP - BOTTOM)
    }

    fn axes(&mut self, x_label: &str, y_label: &str) {
        let (x0, x1) = (LEFT, WIDTH - RIGHT);
        let (y0, y1) = (HEIGHT - BOTTOM, TOP);
        let _ = writeln!(
            self.out,
            r##"<g stroke="#333" fill="none"><line x1="{a}" y1="{b}" x2="{c}" y2="{b}"/><line x1="{a}" y1="{b}" x2="{a}" y2="{d}"/></g>"##,
            a = num(x0),
            b = num(y0),
            c = num(x1),
            d = num(y1),
        );
        for t in self.y.ticks() {
            let y = self.py(t);
            let _ = writeln!(
                self.out,
                r##"<line x1="{a}" y1="{y}" x2="{b}" y2="{y}" stroke="#ddd"/><text x="{c}" y="{ty}" text-anchor="end">{l}</text>"##,
                a = num(x0),
                b = num(x1),
                c = num(x0 - 6.0),
                y = num(y),
                ty = num(y + 4.0),
                l = escape(&tick_label(t)),
            );
        }
        let _ = writeln!(
            self.out,
            r#"<text x="{cx}" y="{ly}" text-anchor="middle">{xl}</text>
<text x="16" y="{cy}" text-anchor="middle" transform="rotate(-90 16 {cy})">{yl}</text>"#,
            cx = num((x0 + x1) / 2.0),
            ly = num(HEIGHT - 12.0),
            cy = num((y0 + y1) / 2.0),
            xl = escape(x_label),
            yl = escape(y_label),
        );
    }

    fn x_ticks(&mut self) {
        for t in self.x.ticks() {
            let x = self.px(t);
            let _ = writeln!(
                self.out,
                r#"<text x="{x}" y="{y}" text-anchor="middle">{l}</text>"#,
                x = num(x),
                y = num(HEIGHT - BOTTOM + 16.0),
                l = escape(&tick_label(t)),
            );
        }
    }

    fn x_categories(&mut self, labels: &[String]) {
        for (k, l) in labels.iter().enumerate() {
            let _ = writeln!(
                self.out,
                r#"<text x="{x}" y="{y}" text-anchor="middle">{l}</text>"#,
                x = num(self.px(k as f64 + 0.5)),
                y = num(HEIGHT - BOTTOM + 16.0),
                l = escape(l),
            );
        }
    }

    fn legend(&mut self, entries: &[(String, &str, bool)]) {
        for (k, (name, color, dashed)) in entries.iter().enumerate() {
            let y = TOP + 10.0 + 18.0 * k as f64;
            let x = WIDTH - RIGHT + 12.0;
            let dash = if *dashed { r#" stroke-dasharray="5 3""# } else { "" };
            let _ = writeln!(
                self.out,
                r#"<line x1="{x}" y1="{y}" x2="{x2}" y2="{y}" stroke="{color}" stroke-width="2"{dash}/><text x="{tx}" y="{ty}">{name}</text>"#,
                x = num(x),
                x2 = num(x + 20.0),
                y = num(y),
                tx = num(x + 26.0),
                ty = num(y + 4.0),
                name = escape(name),
            );
        }
    }

    fn finish(mut self) -> String {
        self.out.push_str("</svg>\n");
        self.out
    }
}

/// Line plot of several series over a numeric x axis.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let pts = || series.iter().flat_map(|s| s.points.iter());
    let x = Range::of(pts().map(|p| p.0));
    let y = Range::of(pts().map(|p| p.1)).include(0.0);
    let mut f = Frame::new(title, x_label, y_label, x, y);
    f.x_ticks();
    let mut legend = Vec::new();
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let path: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{},{}", num(f.px(x)), num(f.py(y))))
            .collect();
        let dash = if s.dashed { r#" stroke-dasharray="5 3""# } else { "" };
        let _ = writeln!(
            f.out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2"{dash} points="{}"/>"#,
            path.join(" ")
        );
        for p in &path {
            let (cx, cy) = p.split_once(',').expect("formatted pair");
            let _ = writeln!(f.out, r#"<circle cx="{cx}" cy="{cy}" r="2.5" fill="{color}"/>"#);
        }
        legend.push((s.name.clone(), color, s.dashed));
    }
    f.legend(&legend);
    f.finish()
}

/// Stacked bars per category; `stacks[k][j]` is the height of layer `j`
/// in category `k`.
pub fn stacked_bars(
    title: &str,
    x_label: &str,
    y_label: &str,
    categories: &[String],
    layers: &[&str],
    stacks: &[Vec<f64>],
) -> String {
    let top = stacks
        .iter()
        .map(|s| s.iter().sum::<f64>())
        .fold(0.0, f64::max);
    let x = Range {
        lo: 0.0,
        hi: categories.len().max(1) as f64,
    };
    let y = Range::of([0.0, top].into_iter());
    let mut f = Frame::new(title, x_label, y_label, x, y);
    let every = categories.len().div_ceil(20).max(1);
    let shown: Vec<String> = categories
        .iter()
        .enumerate()
        .map(|(k, c)| if k % every == 0 { c.clone() } else { String::new() })
        .collect();
    f.x_categories(&shown);
    let bar = (f.px(1.0) - f.px(0.0)) * 0.8;
    for (k, stack) in stacks.iter().enumerate() {
        let mut base = 0.0;
        for (j, &h) in stack.iter().enumerate() {
            let (y_top, y_bottom) = (f.py(base + h), f.py(base));
            let _ = writeln!(
                f.out,
                r#"<rect x="{x}" y="{y}" width="{w}" height="{h}" fill="{c}"/>"#,
                x = num(f.px(k as f64) + 0.1 * bar / 0.8),
                y = num(y_top),
                w = num(bar),
                h = num(y_bottom - y_top),
                c = PALETTE[j % PALETTE.len()],
            );
            base += h;
        }
    }
    let legend: Vec<(String, &str, bool)> = layers
        .iter()
        .enumerate()
        .map(|(j, l)| (l.to_string(), PALETTE[j % PALETTE.len()], false))
        .collect();
    f.legend(&legend);
    f.finish()
}

/// Side-by-side bars; `values[s][k]` is series `s` at category `k`.
pub fn grouped_bars(
    title: &str,
    x_label: &str,
    y_label: &str,
    categories: &[String],
    series: &[String],
    values: &[Vec<f64>],
) -> String {
    let x = Range {
        lo: 0.0,
        hi: categories.len().max(1) as f64,
    };
    let y = Range::of(values.iter().flatten().copied()).include(0.0);
    let mut f = Frame::new(title, x_label, y_label, x, y);
    f.x_categories(categories);
    let slot = (f.px(1.0) - f.px(0.0)) * 0.8 / series.len().max(1) as f64;
    for (s, row) in values.iter().enumerate() {
        for (k, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                continue;
            }
            let (a, b) = (f.py(v.max(0.0)), f.py(v.min(0.0)));
            let _ = writeln!(
                f.out,
                r#"<rect x="{x}" y="{y}" width="{w}" height="{h}" fill="{c}"/>"#,
                x = num(f.px(k as f64 + 0.1) + slot * s as f64),
                y = num(a),
                w = num(slot),
                h = num(b - a),
                c = PALETTE[s % PALETTE.len()],
            );
        }
    }
    let legend: Vec<(String, &str, bool)> = series
        .iter()
        .enumerate()
        .map(|(s, n)| (n.clone(), PALETTE[s % PALETTE.len()], false))
        .collect();
    f.legend(&legend);
    f.finish()
}

/// Log-log scatter of `(bound, measured)` pairs against the line `y = x`.
pub fn bound_scatter(title: &str, groups: &[(String, Vec<(f64, f64)>)]) -> String {
    let logs: Vec<(usize, f64, f64)> = groups
        .iter()
        .enumerate()
        .flat_map(|(g, (_, pts))| {
            pts.iter()
                .filter(|(b, m)| *b > 0.0 && *m > 0.0 && b.is_finite() && m.is_finite())
                .map(move |&(b, m)| (g, b.log10(), m.log10()))
        })
        .collect();
    let r = Range::of(logs.iter().flat_map(|&(_, b, m)| [b, m]));
    let mut f = Frame::new(title, "log10 bound", "log10 measured norm", r, r);
    f.x_ticks();
    let _ = writeln!(
        f.out,
        r##"<line x1="{a}" y1="{b}" x2="{c}" y2="{d}" stroke="#888" stroke-dasharray="4 3"/>"##,
        a = num(f.px(r.lo)),
        b = num(f.py(r.lo)),
        c = num(f.px(r.hi)),
        d = num(f.py(r.hi)),
    );
    for &(g, b, m) in &logs {
        let _ = writeln!(
            f.out,
            r#"<circle cx="{x}" cy="{y}" r="2.5" fill="{c}" fill-opacity="0.6"/>"#,
            x = num(f.px(b)),
            y = num(f.py(m)),
            c = PALETTE[g % PALETTE.len()],
        );
    }
    let mut legend: Vec<(String, &str, bool)> = groups
        .iter()
        .enumerate()
        .map(|(g, (n, _))| (n.clone(), PALETTE[g % PALETTE.len()], false))
        .collect();
    legend.push(("measured = bound".into(), "#888", true));
    f.legend(&legend);
    f.finish()
}
