//! Minimal SVG line plots for target profiles.

use std::fmt::Write;

use crate::objectives::ProfilePoint;

const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
const PANEL_W: f64 = 360.0;
const PANEL_H: f64 = 260.0;
const MARGIN: f64 = 40.0;

struct Panel<'a> {
    title: &'a str,
    x0: f64,
    y_max: f64,
}

impl Panel<'_> {
    fn point(&self, t: f64, y: f64) -> (f64, f64) {
        let px = self.x0 + MARGIN + t * (PANEL_W - 2.0 * MARGIN);
        let clipped = y.clamp(0.0, self.y_max) / self.y_max;
        let py = PANEL_H - MARGIN - clipped * (PANEL_H - 2.0 * MARGIN);
        (px, py)
    }

    fn frame(&self, out: &mut String) {
        let (left, bottom) = self.point(0.0, 0.0);
        let (right, top) = self.point(1.0, self.y_max);
        let _ = writeln!(
            out,
            r#"<rect x="{left:.1}" y="{top:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#,
            right - left,
            bottom - top
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="13">{}</text>"#,
            (left + right) / 2.0,
            top - 10.0,
            self.title
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="11">t</text>"#,
            (left + right) / 2.0,
            bottom + 25.0
        );
        for (label, y) in [("0", 0.0), (format_tick(self.y_max).as_str(), self.y_max)] {
            let (_, py) = self.point(0.0, y);
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-size="10">{label}</text>"#,
                left - 4.0,
                py + 4.0
            );
        }
    }

    fn line(&self, out: &mut String, points: impl Iterator<Item = (f64, f64)>, color: &str) {
        let coords: Vec<String> = points
            .map(|(t, y)| {
                let (px, py) = self.point(t, y);
                format!("{px:.2},{py:.2}")
            })
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            coords.join(" ")
        );
    }
}

fn format_tick(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

/// Two panels: `S(t)` divided by its time average (clipped at 4) and `C(t)`.
pub fn profile_plot(series: &[(&str, &[ProfilePoint])]) -> String {
    let width = 2.0 * PANEL_W;
    let height = PANEL_H + 20.0 * series.len() as f64 + 10.0;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let instant = Panel {
        title: "S(t) / mean S",
        x0: 0.0,
        y_max: 4.0,
    };
    let cumulative = Panel {
        title: "C(t)",
        x0: PANEL_W,
        y_max: 1.0,
    };
    instant.frame(&mut out);
    cumulative.frame(&mut out);
    for (i, (name, profile)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let span = profile.last().map_or(1.0, |p| p.t);
        let mut area = 0.0;
        for w in profile.windows(2) {
            area += 0.5 * (w[1].t - w[0].t) * (w[1].s + w[0].s);
        }
        let mean = if area > 0.0 { area / span } else { 1.0 };
        instant.line(&mut out, profile.iter().map(|p| (p.t, p.s / mean)), color);
        cumulative.line(&mut out, profile.iter().map(|p| (p.t, p.c)), color);
        let y = PANEL_H + 15.0 + 20.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<line x1="{MARGIN}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}" font-size="12">{name}</text>"#,
            y - 4.0,
            MARGIN + 24.0,
            y - 4.0,
            MARGIN + 30.0,
            y
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plot_has_one_line_per_series_and_panel() {
        let profile = vec![
            ProfilePoint { t: 0.0, s: 1.0, c: 0.0 },
            ProfilePoint { t: 0.5, s: 1.0, c: 0.5 },
            ProfilePoint { t: 1.0, s: 1.0, c: 1.0 },
        ];
        let svg = profile_plot(&[("a", &profile), ("b", &profile)]);
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<polyline").count(), 4);
        assert!(svg.trim_end().ends_with("</svg>"));
    }
}
