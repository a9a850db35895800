//! Minimal SVG line charts with optional shaded bands.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// Lower and upper band edges, drawn as a translucent polygon.
    pub band: Option<(Vec<f64>, Vec<f64>)>,
    pub thin: bool,
}

impl Series {
    pub fn new(name: impl Into<String>, xs: Vec<f64>, ys: Vec<f64>) -> Self {
        Series {
            name: name.into(),
            xs,
            ys,
            band: None,
            thin: false,
        }
    }

    pub fn with_band(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        self.band = Some((lower, upper));
        self
    }

    pub fn thin(mut self) -> Self {
        self.thin = true;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl LinePlot {
    pub fn new(title: impl Into<String>, x_label: impl Into<String>, y_label: impl Into<String>) -> Self {
        LinePlot {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            series: Vec::new(),
        }
    }

    pub fn push(&mut self, s: Series) {
        self.series.push(s);
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        let mut xs = (f64::INFINITY, f64::NEG_INFINITY);
        let mut ys = (f64::INFINITY, f64::NEG_INFINITY);
        let take = |v: &[f64], r: &mut (f64, f64)| {
            for &x in v.iter().filter(|x| x.is_finite()) {
                r.0 = r.0.min(x);
                r.1 = r.1.max(x);
            }
        };
        for s in &self.series {
            take(&s.xs, &mut xs);
            take(&s.ys, &mut ys);
            if let Some((lo, hi)) = &s.band {
                take(lo, &mut ys);
                take(hi, &mut ys);
            }
        }
        if !xs.0.is_finite() {
            xs = (0.0, 1.0);
            ys = (0.0, 1.0);
        }
        if xs.1 - xs.0 <= 0.0 {
            xs = (xs.0 - 1.0, xs.1 + 1.0);
        }
        if ys.1 - ys.0 <= 0.0 {
            ys = (ys.0 - 1.0, ys.1 + 1.0);
        }
        let pad = 0.05 * (ys.1 - ys.0);
        (xs.0, xs.1, ys.0 - pad, ys.1 + pad)
    }

    pub fn to_svg(&self) -> String {
        let (x0, x1, y0, y1) = self.bounds();
        let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
        let py = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);
        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
            WIDTH / 2.0,
            escape(&self.title)
        );
        let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
        let _ = writeln!(
            out,
            r#"<polyline points="{l},{t} {l},{b} {r},{b}" fill="none" stroke="black"/>"#
        );
        for k in 0..=4 {
            let fx = x0 + (x1 - x0) * k as f64 / 4.0;
            let fy = y0 + (y1 - y0) * k as f64 / 4.0;
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{:.1}</text>"#,
                px(fx),
                b + 16.0,
                fx
            );
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.2}</text>"#,
                l - 4.0,
                py(fy) + 4.0,
                fy
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            WIDTH / 2.0,
            HEIGHT - 12.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            out,
            r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
            HEIGHT / 2.0,
            HEIGHT / 2.0,
            escape(&self.y_label)
        );
        for (i, s) in self.series.iter().enumerate() {
            let colour = PALETTE[i % PALETTE.len()];
            if let Some((lo, hi)) = &s.band {
                let mut pts: Vec<String> = s.xs.iter().zip(hi).map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
                pts.extend(s.xs.iter().zip(lo).rev().map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y))));
                let _ = writeln!(
                    out,
                    r#"<polygon points="{}" fill="{colour}" fill-opacity="0.2" stroke="none"/>"#,
                    pts.join(" ")
                );
            }
            let pts: Vec<String> = s
                .xs
                .iter()
                .zip(&s.ys)
                .filter(|(_, y)| y.is_finite())
                .map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y)))
                .collect();
            let width = if s.thin { 1.0 } else { 2.0 };
            let _ = writeln!(
                out,
                r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="{width}"/>"#,
                pts.join(" ")
            );
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" fill="{colour}">{}</text>"#,
                r - 90.0,
                t + 14.0 * i as f64,
                escape(&s.name)
            );
        }
        out.push_str("</svg>\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_series_and_band() {
        let mut p = LinePlot::new("a<b", "age", "tau");
        p.push(Series::new("t.rf", vec![18.0, 19.0, 20.0], vec![1.0, 2.0, 3.0]).with_band(vec![0.5; 3], vec![3.5; 3]));
        let svg = p.to_svg();
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("a&lt;b"));
        assert_eq!(svg.matches("<polygon").count(), 1);
        assert!(svg.contains("t.rf"));
        assert_eq!(svg, p.to_svg());
    }

    #[test]
    fn empty_and_flat_plots_render() {
        assert!(LinePlot::new("", "", "").to_svg().ends_with("</svg>\n"));
        let mut p = LinePlot::new("flat", "x", "y");
        p.push(Series::new("c", vec![1.0, 2.0], vec![2.0, 2.0]));
        assert!(!p.to_svg().contains("NaN"));
    }
}
