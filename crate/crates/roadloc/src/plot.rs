//! SVG rendering of an evaluation report: recognition rate against region
//! radius for every variant, and the primary variant's error histogram.

use std::fmt::Write;

use crate::bench::{CurvePoint, EvalReport};

const W: f64 = 900.0;
const H: f64 = 380.0;
const PANEL: f64 = 360.0;
const PAD: f64 = 50.0;

struct Axes {
    x0: f64,
    x_lo: f64,
    x_hi: f64,
    y_hi: f64,
}

impl Axes {
    fn x(&self, v: f64) -> f64 {
        let span = (self.x_hi - self.x_lo).max(f64::MIN_POSITIVE);
        self.x0 + PAD + (v - self.x_lo) / span * (PANEL - PAD)
    }

    fn y(&self, v: f64) -> f64 {
        H - PAD - v / self.y_hi.max(f64::MIN_POSITIVE) * (H - 2.0 * PAD)
    }

    fn frame(&self, out: &mut String, title: &str, x_label: &str, y_label: &str) {
        let (l, r) = (self.x0 + PAD, self.x0 + PANEL);
        let (t, b) = (PAD, H - PAD);
        let _ = writeln!(
            out,
            r#"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            r - l,
            b - t
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="30" text-anchor="middle">{title}</text>"#,
            (l + r) / 2.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">{x_label}</text>"#,
            (l + r) / 2.0,
            H - 12.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle" transform="rotate(-90 {} {})">{y_label}</text>"#,
            self.x0 + 14.0,
            H / 2.0,
            self.x0 + 14.0,
            H / 2.0
        );
    }
}

fn series_style(finetuned: bool, aligned: bool) -> (&'static str, &'static str) {
    let colour = if finetuned { "#c0392b" } else { "#2c3e50" };
    let dash = if aligned { "none" } else { "6 4" };
    (colour, dash)
}

fn curves_panel(out: &mut String, curves: &[CurvePoint]) {
    let radii: Vec<f64> = curves.iter().map(|c| c.radius_m).collect();
    let ax = Axes {
        x0: 0.0,
        x_lo: radii.iter().copied().fold(f64::INFINITY, f64::min),
        x_hi: radii.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        y_hi: 1.0,
    };
    ax.frame(out, "Recognition rate", "region radius (m)", "rate");
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="end" font-size="10">{tick}</text>"#,
            PAD - 4.0,
            ax.y(tick) + 3.0
        );
    }
    let mut legend_y = PAD + 14.0;
    for finetuned in [false, true] {
        for aligned in [false, true] {
            let mut pts: Vec<&CurvePoint> = curves
                .iter()
                .filter(|c| c.finetuned == finetuned && c.aligned == aligned)
                .collect();
            if pts.is_empty() {
                continue;
            }
            pts.sort_by(|a, b| a.radius_m.total_cmp(&b.radius_m));
            let (colour, dash) = series_style(finetuned, aligned);
            let path: Vec<String> = pts
                .iter()
                .map(|c| format!("{:.1},{:.1}", ax.x(c.radius_m), ax.y(c.strict_rate)))
                .collect();
            let _ = writeln!(
                out,
                r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-dasharray="{dash}" stroke-width="2"/>"#,
                path.join(" ")
            );
            for c in &pts {
                let _ = writeln!(
                    out,
                    r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{colour}"/>"#,
                    ax.x(c.radius_m),
                    ax.y(c.strict_rate)
                );
            }
            let label = format!(
                "{}, {}",
                if finetuned {
                    "fine-tuned"
                } else {
                    "unit metric"
                },
                if aligned { "aligned" } else { "unaligned" }
            );
            let _ = writeln!(
                out,
                r#"<line x1="{}" y1="{legend_y}" x2="{}" y2="{legend_y}" stroke="{colour}" stroke-dasharray="{dash}" stroke-width="2"/><text x="{}" y="{}" font-size="10">{label}</text>"#,
                PAD + 190.0,
                PAD + 215.0,
                PAD + 220.0,
                legend_y + 3.0
            );
            legend_y += 14.0;
        }
    }
    let mut ticks = radii;
    ticks.sort_by(f64::total_cmp);
    ticks.dedup();
    for r in ticks {
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{}" text-anchor="middle" font-size="10">{r}</text>"#,
            ax.x(r),
            H - PAD + 14.0
        );
    }
}

fn histogram_panel(out: &mut String, report: &EvalReport) {
    let bins = &report.primary.histogram;
    let n = bins.len().max(1) as f64;
    let peak = bins.iter().map(|b| b.count).max().unwrap_or(0).max(1) as f64;
    let ax = Axes {
        x0: PANEL + 2.0 * PAD,
        x_lo: 0.0,
        x_hi: n,
        y_hi: peak,
    };
    ax.frame(
        out,
        &format!("Localization error, r = {} m", report.primary.radius_m),
        "error (m)",
        "queries",
    );
    for (i, b) in bins.iter().enumerate() {
        let (x, x1) = (ax.x(i as f64), ax.x(i as f64 + 1.0));
        let y = ax.y(b.count as f64);
        let fill = if b.hi_m.is_some() {
            "#2980b9"
        } else {
            "#7f8c8d"
        };
        let _ = writeln!(
            out,
            r#"<rect x="{x:.1}" y="{y:.1}" width="{:.1}" height="{:.1}" fill="{fill}"/>"#,
            (x1 - x - 1.0).max(0.5),
            H - PAD - y
        );
        if i % 4 == 0 {
            let _ = writeln!(
                out,
                r#"<text x="{x:.1}" y="{}" text-anchor="middle" font-size="10">{}</text>"#,
                H - PAD + 14.0,
                b.lo_m
            );
        }
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-size="10" text-anchor="end">peak {peak}; unlocalized {}</text>"#,
        ax.x0 + PANEL - 6.0,
        PAD + 14.0,
        report.primary.unlocalized
    );
}

pub fn render_svg(report: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    curves_panel(&mut out, &report.curves);
    histogram_panel(&mut out, report);
    out.push_str("</svg>\n");
    out
}
