use std::fmt::Write;

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 50.0;

/// A minimal log-log line plot of `(x, y)` pairs as an SVG document.
///
/// Non-positive points are dropped. The CSV output stays the source of truth.
pub fn loglog_svg(points: &[(f64, f64)], title: &str, x_label: &str, y_label: &str) -> String {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0 && x.is_finite() && y.is_finite())
        .map(|(x, y)| (x.log10(), y.log10()))
        .collect();
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 10.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="15" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 15 {})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
    let (x0, y0, x1, y1) = (MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN / 2.0, MARGIN / 1.5);
    let _ = writeln!(
        svg,
        r#"<polyline points="{x0},{y1} {x0},{y0} {x1},{y0}" fill="none" stroke="black"/>"#
    );
    if !pts.is_empty() {
        let (lo_x, hi_x) = bounds(pts.iter().map(|p| p.0));
        let (lo_y, hi_y) = bounds(pts.iter().map(|p| p.1));
        let sx = |v: f64| x0 + (v - lo_x) / (hi_x - lo_x) * (x1 - x0);
        let sy = |v: f64| y0 - (v - lo_y) / (hi_y - lo_y) * (y0 - y1);
        let line: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#,
            line.join(" ")
        );
        for &(x, y) in &pts {
            let _ = writeln!(
                svg,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="steelblue"/>"#,
                sx(x),
                sy(y)
            );
        }
        for (v, anchor_x, anchor_y, vertical) in [(lo_x, x0, y0 + 15.0, false), (hi_x, x1, y0 + 15.0, false)]
            .into_iter()
            .chain([(lo_y, x0 - 5.0, y0, true), (hi_y, x0 - 5.0, y1, true)])
        {
            let anchor = if vertical { "end" } else { "middle" };
            let _ = writeln!(
                svg,
                r#"<text x="{anchor_x:.2}" y="{anchor_y:.2}" text-anchor="{anchor}" font-size="10">{:.3e}</text>"#,
                10f64.powf(v)
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn well_formed() {
        let svg = loglog_svg(&[(500.0, 0.01), (1000.0, 0.005), (0.0, 1.0)], "risk <vs> n", "n", "risk");
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<circle").count(), 2);
        assert!(svg.contains("risk &lt;vs&gt; n"));
        assert!(loglog_svg(&[], "t", "x", "y").contains("</svg>"));
    }
}
