//! Deterministic SVG rendering: synergy bar panels with tuning grids, VAF
//! scans and COP traces. Numbers are printed with fixed precision so that
//! re-rendering is byte-identical.

use std::fmt::Write;

use crate::balance::CopTrace;
use crate::binning::Bin;
use crate::model::Direction;
use crate::synergy::{SynergySet, TuningCurves, VafScan};

const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn open(width: f64, height: f64, comment: &str, title: &str) -> String {
    let mut s = String::new();
    s.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(s, "<!-- {} -->", comment.replace("--", "- -"));
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\" font-family=\"sans-serif\" font-size=\"10\">"
    );
    let _ = writeln!(s, "<rect width=\"{width:.0}\" height=\"{height:.0}\" fill=\"white\"/>");
    let _ = writeln!(s, "<text x=\"10\" y=\"16\" font-size=\"13\">{}</text>", escape(title));
    s
}

/// One bar panel per synergy (muscle weights) beside its tuning grid
/// (activation per bin, one line per direction).
pub fn synergy_svg(set: &SynergySet, tuning: &TuningCurves, title: &str, comment: &str) -> String {
    let (panel_w, grid_w, row_h, top) = (360.0, 240.0, 150.0, 30.0);
    let height = top + row_h * set.n_syn as f64 + 20.0;
    let mut s = open(20.0 + panel_w + 30.0 + grid_w + 20.0, height, comment, title);
    let n_rows = set.rows.len();
    let bar_w = panel_w / n_rows as f64;
    for i in 0..set.n_syn {
        let y0 = top + row_h * i as f64;
        let base = y0 + row_h - 30.0;
        let scale = row_h - 50.0;
        let _ = writeln!(s, "<g class=\"synergy-panel\" id=\"w{}\">", i + 1);
        let _ = writeln!(s, "<text x=\"20\" y=\"{:.2}\">W{}</text>", y0 + 12.0, i + 1);
        for (m, ch) in set.rows.iter().enumerate() {
            let v = set.w[[m, i]].clamp(0.0, 1.0);
            let x = 20.0 + bar_w * m as f64;
            let _ = writeln!(
                s,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"#555555\"/>",
                x + 2.0,
                base - v * scale,
                bar_w - 4.0,
                v * scale
            );
            let _ = writeln!(
                s,
                "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"7\" text-anchor=\"middle\">{}</text>",
                x + bar_w / 2.0,
                base + 10.0,
                ch.label()
            );
        }
        let _ = writeln!(s, "</g>");

        let gx = 20.0 + panel_w + 30.0;
        let n_bins = tuning.bins.len();
        let step = grid_w / (n_bins.max(2) - 1) as f64;
        let peak = tuning.grids[i].iter().copied().fold(0.0, f64::max).max(1e-12);
        let _ = writeln!(s, "<g class=\"tuning-grid\" id=\"c{}\">", i + 1);
        let _ = writeln!(
            s,
            "<rect x=\"{gx:.2}\" y=\"{:.2}\" width=\"{grid_w:.2}\" height=\"{scale:.2}\" fill=\"none\" stroke=\"#cccccc\"/>",
            base - scale
        );
        for (d, dir) in tuning.directions.iter().enumerate() {
            let pts: Vec<String> = (0..n_bins)
                .map(|b| format!("{:.2},{:.2}", gx + step * b as f64, base - tuning.grids[i][[b, d]] / peak * scale))
                .collect();
            let _ = writeln!(
                s,
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" data-direction=\"{}\"/>",
                pts.join(" "),
                PALETTE[d % 4],
                dir.as_str()
            );
        }
        for (b, bin) in tuning.bins.iter().enumerate() {
            let _ = writeln!(
                s,
                "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"7\" text-anchor=\"middle\">{}</text>",
                gx + step * b as f64,
                base + 10.0,
                bin.as_str()
            );
        }
        let _ = writeln!(s, "</g>");
    }
    legend(&mut s, 20.0 + panel_w + 30.0, top);
    s.push_str("</svg>\n");
    s
}

fn legend(s: &mut String, x: f64, y: f64) {
    for (d, dir) in Direction::ALL.iter().enumerate() {
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" fill=\"{}\">{}</text>",
            x + 60.0 * d as f64,
            y - 4.0,
            PALETTE[d],
            dir.as_str()
        );
    }
}

/// VAF against the number of synergies, with the selection criterion.
pub fn vaf_scan_svg(scan: &VafScan, criterion: Option<f64>, selected: usize, title: &str, comment: &str) -> String {
    let (w, h, left, top, pw, ph) = (420.0, 300.0, 50.0, 30.0, 340.0, 220.0);
    let mut s = open(w, h, comment, title);
    let n_max = scan.vaf.keys().copied().max().unwrap_or(1).max(2);
    let x = |n: usize| left + pw * (n - 1) as f64 / (n_max - 1) as f64;
    let y = |v: f64| top + ph * (1.0 - v.clamp(0.0, 100.0) / 100.0);
    let _ = writeln!(
        s,
        "<rect x=\"{left:.2}\" y=\"{top:.2}\" width=\"{pw:.2}\" height=\"{ph:.2}\" fill=\"none\" stroke=\"#999999\"/>"
    );
    for tick in [0.0, 25.0, 50.0, 75.0, 100.0] {
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{tick:.0}</text>",
            left - 4.0,
            y(tick) + 3.0
        );
    }
    if let Some(c) = criterion {
        let _ = writeln!(
            s,
            "<line class=\"criterion\" x1=\"{left:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#d62728\" stroke-dasharray=\"4 3\"/>",
            y(c),
            left + pw,
            y(c)
        );
    }
    let pts: Vec<String> = scan.vaf.iter().map(|(&n, &v)| format!("{:.2},{:.2}", x(n), y(v))).collect();
    let _ = writeln!(s, "<polyline points=\"{}\" fill=\"none\" stroke=\"#1f77b4\"/>", pts.join(" "));
    for (&n, &v) in &scan.vaf {
        let fill = if n == selected { "#d62728" } else { "#1f77b4" };
        let _ = writeln!(
            s,
            "<circle class=\"vaf-point\" cx=\"{:.2}\" cy=\"{:.2}\" r=\"3.5\" fill=\"{fill}\" data-n=\"{n}\" data-vaf=\"{v:.4}\"/>",
            x(n),
            y(v)
        );
        let _ = writeln!(s, "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{n}</text>", x(n), top + ph + 14.0);
    }
    s.push_str("</svg>\n");
    s
}

/// COP paths (mm) in the horizontal plane, one polyline per labelled trace.
pub fn cop_traces_svg(traces: &[(String, &CopTrace)], title: &str, comment: &str) -> String {
    let (w, h, cx, cy, half) = (420.0, 440.0, 210.0, 230.0, 180.0);
    let mut s = open(w, h, comment, title);
    let extent = traces
        .iter()
        .flat_map(|(_, t)| t.xy.iter().zip(&t.valid).filter(|(_, &v)| v).map(|(p, _)| p[0].abs().max(p[1].abs())))
        .fold(1.0, f64::max);
    let k = half / extent;
    let _ = writeln!(
        s,
        "<line x1=\"{:.2}\" y1=\"{cy:.2}\" x2=\"{:.2}\" y2=\"{cy:.2}\" stroke=\"#cccccc\"/>",
        cx - half,
        cx + half
    );
    let _ = writeln!(
        s,
        "<line x1=\"{cx:.2}\" y1=\"{:.2}\" x2=\"{cx:.2}\" y2=\"{:.2}\" stroke=\"#cccccc\"/>",
        cy - half,
        cy + half
    );
    let _ = writeln!(s, "<text x=\"{:.2}\" y=\"{:.2}\">±{extent:.1} mm</text>", cx + half - 60.0, cy + half + 14.0);
    for (i, (label, t)) in traces.iter().enumerate() {
        // Plot y = lateral (dominant to the right), up = anterior.
        let pts: Vec<String> =
            t.xy.iter()
                .zip(&t.valid)
                .filter(|(_, &v)| v)
                .map(|(p, _)| format!("{:.2},{:.2}", cx + p[1] * k, cy - p[0] * k))
                .collect();
        let _ = writeln!(
            s,
            "<polyline class=\"cop-trace\" points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"0.8\"/>",
            pts.join(" "),
            PALETTE[i % 4]
        );
        let _ = writeln!(
            s,
            "<text x=\"10\" y=\"{:.2}\" fill=\"{}\">{}</text>",
            34.0 + 12.0 * i as f64,
            PALETTE[i % 4],
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Bin labels used by a tuning grid, for captions.
pub fn bin_labels(bins: &[Bin]) -> String {
    bins.iter().map(|b| b.as_str()).collect::<Vec<_>>().join(",")
}
