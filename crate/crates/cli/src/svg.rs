use std::fmt::Write;

const CELL: usize = 28;
const MARGIN: usize = 120;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Renders a row-stochastic matrix as a grid of shaded squares. Each cell
/// carries its exact value in a `data-value` attribute.
pub fn heatmap_svg(title: &str, rows: &[String], cols: &[String], matrix: &[Vec<f64>]) -> String {
    let width = MARGIN + CELL * cols.len() + 10;
    let height = MARGIN + CELL * rows.len() + 10;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, "<title>{}</title>", escape(title));
    for (j, c) in cols.iter().enumerate() {
        let x = MARGIN + CELL * j + CELL / 2;
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{}" transform="rotate(-60 {x} {})" text-anchor="start">{}</text>"#,
            MARGIN - 6,
            MARGIN - 6,
            escape(c)
        );
    }
    for (i, (name, row)) in rows.iter().zip(matrix).enumerate() {
        let y = MARGIN + CELL * i;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            MARGIN - 6,
            y + CELL / 2 + 4,
            escape(name)
        );
        for (j, v) in row.iter().enumerate() {
            let shade = (255.0 * (1.0 - v.clamp(0.0, 1.0))).round() as u8;
            let _ = writeln!(
                s,
                r##"<rect x="{}" y="{y}" width="{CELL}" height="{CELL}" fill="rgb({shade},{shade},255)" stroke="#ddd" data-value="{v}"/>"##,
                MARGIN + CELL * j
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_rect_per_cell_and_escaped_labels() {
        let names = vec!["a<b".to_string(), "c".to_string()];
        let svg = heatmap_svg("t", &names, &names, &[vec![0.25, 0.75], vec![1.0, 0.0]]);
        assert_eq!(svg.matches("<rect").count(), 4);
        assert!(svg.contains("a&lt;b"));
        assert!(svg.contains(r#"data-value="0.75""#));
        assert!(svg.contains("rgb(255,255,255)"));
    }
}
