//! Attention heatmap export as CSV and SVG.
//!
//! CSV layout: a header of the sentence tokens followed by `s1`..`s(T-1)`,
//! then one row per iteration with every weight printed to six decimals.

use std::fmt::Write;

use crate::attention::AttentionTrace;
use crate::error::{IramError, Result};

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn column_labels(tokens: &[String], trace: &AttentionTrace) -> Result<Vec<String>> {
    if tokens.len() != trace.n_inputs {
        return Err(IramError::dim("trace tokens", &[trace.n_inputs], &[tokens.len()]));
    }
    let mut labels = tokens.to_vec();
    labels.extend((1..trace.iterations()).map(|t| format!("s{t}")));
    Ok(labels)
}

pub fn trace_csv(tokens: &[String], trace: &AttentionTrace) -> Result<String> {
    let labels = column_labels(tokens, trace)?;
    let mut out = String::new();
    let header: Vec<String> = labels.iter().map(|l| csv_field(l)).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in &trace.weights {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    Ok(out)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Grid with one cell per weight; cell opacity is the weight.
pub fn trace_svg(tokens: &[String], trace: &AttentionTrace) -> Result<String> {
    const CELL: usize = 40;
    const LEFT: usize = 40;
    const TOP: usize = 90;
    let labels = column_labels(tokens, trace)?;
    let width = LEFT + CELL * labels.len() + 10;
    let height = TOP + CELL * trace.iterations() + 10;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">"#
    );
    for (j, l) in labels.iter().enumerate() {
        let x = LEFT + j * CELL + CELL / 2;
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{y}" transform="rotate(-60 {x} {y})">{}</text>"#,
            xml_escape(l),
            y = TOP - 6
        );
    }
    for (t, row) in trace.weights.iter().enumerate() {
        let y = TOP + t * CELL;
        let _ = writeln!(s, r#"<text x="4" y="{}">{}</text>"#, y + CELL / 2 + 4, t + 1);
        for (j, w) in row.iter().enumerate() {
            let _ = writeln!(
                s,
                r##"<rect x="{}" y="{y}" width="{CELL}" height="{CELL}" fill="#b2182b" fill-opacity="{w:.6}" stroke="#cccccc"><title>{w:.6}</title></rect>"##,
                LEFT + j * CELL
            );
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}
