//! Minimal self-contained SVG line charts. Output depends only on the input
//! data, so charts are byte-reproducible.

use std::fmt::Write;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 450.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
}

/// Shaded region between `lo` and `hi` over shared x values.
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub x: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_y: bool,
    pub series: Vec<Series>,
    pub band: Option<Band>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-3 || v.abs() >= 1e5) {
        format!("{v:.0e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

struct Axes {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    log_y: bool,
}

impl Axes {
    fn ty(&self, y: f64) -> f64 {
        if self.log_y {
            y.log10()
        } else {
            y
        }
    }

    fn px(&self, x: f64) -> f64 {
        let span = if self.x1 > self.x0 { self.x1 - self.x0 } else { 1.0 };
        LEFT + (x - self.x0) / span * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        let span = if self.y1 > self.y0 { self.y1 - self.y0 } else { 1.0 };
        HEIGHT - BOTTOM - (self.ty(y) - self.y0) / span * (HEIGHT - TOP - BOTTOM)
    }
}

fn usable(log_y: bool, y: f64) -> bool {
    y.is_finite() && (!log_y || y > 0.0)
}

impl Chart {
    pub fn render(&self) -> String {
        let mut xs = vec![];
        let mut ys = vec![];
        for s in &self.series {
            for &(x, y) in &s.points {
                if x.is_finite() && usable(self.log_y, y) {
                    xs.push(x);
                    ys.push(if self.log_y { y.log10() } else { y });
                }
            }
        }
        if let Some(b) = &self.band {
            for (&x, (&lo, &hi)) in b.x.iter().zip(b.lo.iter().zip(&b.hi)) {
                for y in [lo, hi] {
                    if usable(self.log_y, y) {
                        xs.push(x);
                        ys.push(if self.log_y { y.log10() } else { y });
                    }
                }
            }
        }
        let fold = |v: &[f64], f: fn(f64, f64) -> f64, init: f64| v.iter().copied().fold(init, f);
        let (mut x0, mut x1) = (fold(&xs, f64::min, f64::INFINITY), fold(&xs, f64::max, f64::NEG_INFINITY));
        let (mut y0, mut y1) = (fold(&ys, f64::min, f64::INFINITY), fold(&ys, f64::max, f64::NEG_INFINITY));
        if xs.is_empty() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if self.log_y {
            y0 = y0.floor();
            y1 = y1.ceil().max(y0 + 1.0);
        } else if y1 <= y0 {
            y1 = y0 + 1.0;
        }
        let ax = Axes { x0, x1, y0, y1, log_y: self.log_y };

        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            (LEFT + WIDTH - RIGHT) / 2.0,
            escape(&self.title)
        );
        // frame
        let (l, r, t, b) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
        let _ = writeln!(out, r#"<rect x="{l}" y="{t}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#, r - l, b - t);

        // y ticks
        let y_ticks: Vec<f64> = if self.log_y {
            let step = ((y1 - y0) / 8.0).ceil().max(1.0);
            let mut v = vec![];
            let mut e = y0;
            while e <= y1 + 1e-9 {
                v.push(10f64.powf(e));
                e += step;
            }
            v
        } else {
            (0..=5).map(|i| y0 + (y1 - y0) * i as f64 / 5.0).collect()
        };
        for y in y_ticks {
            let py = ax.py(y);
            let label = if self.log_y { format!("1e{}", y.log10().round()) } else { fmt_tick(y) };
            let _ = writeln!(out, r##"<line x1="{l}" y1="{py:.2}" x2="{r}" y2="{py:.2}" stroke="#dddddd"/>"##);
            let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{label}</text>"#, l - 6.0, py + 4.0);
        }
        for i in 0..=5 {
            let x = x0 + (x1 - x0) * i as f64 / 5.0;
            let px = ax.px(x);
            let _ = writeln!(out, r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, b + 18.0, fmt_tick(x));
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            (l + r) / 2.0,
            HEIGHT - 16.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            out,
            r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
            (t + b) / 2.0,
            (t + b) / 2.0,
            escape(&self.y_label)
        );

        if let Some(band) = &self.band {
            let mut upper = vec![];
            let mut lower = vec![];
            for (&x, (&lo, &hi)) in band.x.iter().zip(band.lo.iter().zip(&band.hi)) {
                if usable(self.log_y, lo) && usable(self.log_y, hi) {
                    upper.push(format!("{:.2},{:.2}", ax.px(x), ax.py(hi)));
                    lower.push(format!("{:.2},{:.2}", ax.px(x), ax.py(lo)));
                }
            }
            if !upper.is_empty() {
                lower.reverse();
                upper.extend(lower);
                let _ = writeln!(out, r##"<polygon points="{}" fill="#1f77b4" fill-opacity="0.2" stroke="none"/>"##, upper.join(" "));
            }
        }
        for (i, s) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let pts: Vec<String> = s
                .points
                .iter()
                .filter(|&&(x, y)| x.is_finite() && usable(self.log_y, y))
                .map(|&(x, y)| format!("{:.2},{:.2}", ax.px(x), ax.py(y)))
                .collect();
            let dash = if s.dashed { r#" stroke-dasharray="6 4""# } else { "" };
            let _ = writeln!(
                out,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.8"{dash}/>"#,
                pts.join(" ")
            );
            let ly = TOP + 14.0 + 18.0 * i as f64;
            let _ = writeln!(
                out,
                r#"<line x1="{:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="1.8"{dash}/>"#,
                r + 10.0,
                r + 34.0
            );
            let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, r + 40.0, ly + 4.0, escape(&s.name));
        }
        out.push_str("</svg>\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chart() -> Chart {
        Chart {
            title: "P(F_t > eps) & <bound>".into(),
            x_label: "t".into(),
            y_label: "probability".into(),
            log_y: true,
            series: vec![Series {
                name: "p_hat".into(),
                points: vec![(1.0, 1.0), (2.0, 0.5), (3.0, 0.0), (4.0, 0.125)],
                dashed: false,
            }],
            band: Some(Band { x: vec![1.0, 2.0], lo: vec![0.9, 0.4], hi: vec![1.0, 0.6] }),
        }
    }

    #[test]
    fn renders_escaped_self_contained_svg() {
        let svg = chart().render();
        assert!(svg.starts_with("<svg xmlns=\"http://www.w3.org/2000/svg\""));
        assert!(svg.ends_with("</svg>\n"));
        assert!(svg.contains("&amp; &lt;bound&gt;"));
        assert!(!svg.contains("href"));
        assert!(svg.contains("<polygon"));
        // the zero is dropped on a log axis: three points remain
        let line = svg.lines().find(|l| l.starts_with("<polyline")).unwrap();
        assert_eq!(line.matches(',').count(), 3);
    }

    #[test]
    fn rendering_is_deterministic() {
        assert_eq!(chart().render(), chart().render());
    }

    #[test]
    fn empty_chart_still_renders() {
        let c = Chart {
            title: "empty".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            log_y: false,
            series: vec![],
            band: None,
        };
        assert!(c.render().contains("</svg>"));
    }
}
