//! Static SVG bar charts.

use std::fmt::Write as _;

const PALETTE: [&str; 6] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Grouped bar chart: one group per category, one bar per series. Values
/// are fractions in `[0, 1]` and are drawn as percentages; `None` leaves a
/// gap.
pub fn grouped_bars(title: &str, categories: &[String], series: &[(String, Vec<Option<f64>>)]) -> String {
    let (left, top, bottom, right) = (60.0, 40.0, 90.0, 160.0);
    let bar = 14.0;
    let group = bar * series.len().max(1) as f64 + 12.0;
    let plot_h = 260.0;
    let width = left + right + group * categories.len().max(1) as f64;
    let height = top + plot_h + bottom;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="20" font-size="14" text-anchor="middle">{}</text>"#,
        width / 2.0,
        escape(title)
    );
    for tick in 0..=5 {
        let v = tick as f64 * 20.0;
        let y = top + plot_h * (1.0 - v / 100.0);
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{v:.0}</text>"##,
            width - right,
            left - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" transform="rotate(-90 14 {:.1})" text-anchor="middle">MRR (%)</text>"#,
        top + plot_h / 2.0,
        top + plot_h / 2.0
    );
    for (c, name) in categories.iter().enumerate() {
        let x0 = left + group * c as f64 + 6.0;
        for (k, (_, values)) in series.iter().enumerate() {
            if let Some(Some(v)) = values.get(c) {
                let h = plot_h * v.clamp(0.0, 1.0);
                let _ = writeln!(
                    s,
                    r#"<rect x="{:.1}" y="{:.1}" width="{bar}" height="{h:.1}" fill="{}"><title>{:.1}</title></rect>"#,
                    x0 + bar * k as f64,
                    top + plot_h - h,
                    PALETTE[k % PALETTE.len()],
                    v * 100.0
                );
            }
        }
        let cx = x0 + bar * series.len() as f64 / 2.0;
        let cy = top + plot_h + 12.0;
        let _ = writeln!(
            s,
            r#"<text x="{cx:.1}" y="{cy:.1}" transform="rotate(45 {cx:.1} {cy:.1})">{}</text>"#,
            escape(name)
        );
    }
    for (k, (name, _)) in series.iter().enumerate() {
        let y = top + 16.0 * k as f64;
        let x = width - right + 12.0;
        let _ = writeln!(
            s,
            r#"<rect x="{x:.1}" y="{y:.1}" width="10" height="10" fill="{}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            PALETTE[k % PALETTE.len()],
            x + 14.0,
            y + 9.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bars_and_gaps() {
        let cats = vec!["a".to_string(), "b<c".to_string()];
        let svg = grouped_bars("t", &cats, &[("m".into(), vec![Some(0.5), None])]);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches("<title>").count(), 1);
        assert!(svg.contains("b&lt;c"));
    }
}
