//! Static report artifacts: ledger CSV, ΔAP heatmap SVG and transfer bar
//! chart SVG. All output is a pure function of its input, byte for byte.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{io_err, Result};
use crate::eval::{build_heatmap, ledger_csv, HeatmapMatrix, LedgerRow};
use crate::game::{read_json, TransferResult};
use crate::manifest::{read_manifest, write_manifest, MANIFEST_FILE};

const CELL: f64 = 64.0;
const GAP: f64 = 10.0;
const MARGIN: f64 = 70.0;

/// Three decimals without a negative zero.
fn label(v: f64) -> String {
    let s = format!("{v:.3}");
    if s == "-0.000" {
        "0.000".into()
    } else {
        s
    }
}

/// White for the smallest value, dark blue for the largest.
fn shade(t: f64) -> (String, bool) {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    let fill = format!("#{:02x}{:02x}{:02x}", lerp(255.0, 8.0), lerp(255.0, 48.0), lerp(255.0, 107.0));
    (fill, t > 0.55)
}

fn rect(out: &mut String, class: &str, x: f64, y: f64, value: f64, lo: f64, hi: f64) {
    let t = if hi > lo { (value - lo) / (hi - lo) } else { 0.0 };
    let (fill, dark) = shade(t);
    let _ = writeln!(
        out,
        r##"<rect class="{class}" x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{fill}" stroke="#444" stroke-width="1"/>"##
    );
    let _ = writeln!(
        out,
        r##"<text x="{}" y="{}" text-anchor="middle" dominant-baseline="middle" font-size="13" fill="{}">{}</text>"##,
        x + CELL / 2.0,
        y + CELL / 2.0,
        if dark { "#fff" } else { "#000" },
        label(value)
    );
}

/// Heatmap with model orders as rows, patch orders as columns and a
/// detached μ column (row means), μ row (column means) and overall μ.
pub fn heatmap_svg(m: &HeatmapMatrix) -> String {
    let rows = m.model_orders();
    let cols = m.patch_orders();
    let values: Vec<f64> = m
        .cells
        .iter()
        .flatten()
        .chain(&m.row_mu)
        .chain(&m.col_mu)
        .copied()
        .chain([m.mu])
        .collect();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min).min(0.0);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(lo);
    let width = MARGIN + (cols + 1) as f64 * CELL + GAP + 20.0;
    let height = MARGIN + (rows + 1) as f64 * CELL + GAP + 20.0;
    let mut o = String::new();
    let _ = writeln!(
        o,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif">"#
    );
    let _ = writeln!(
        o,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="14">ΔAP = AP(grayscale) − AP(patch); rows: model order, columns: patch order</text>"#,
        width / 2.0
    );
    for c in 0..cols {
        let _ = writeln!(
            o,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="13">{}</text>"#,
            MARGIN + (c as f64 + 0.5) * CELL,
            MARGIN - 10.0,
            c + 1
        );
    }
    let mu_x = MARGIN + cols as f64 * CELL + GAP;
    let mu_y = MARGIN + rows as f64 * CELL + GAP;
    let _ = writeln!(
        o,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="13">μ</text>"#,
        mu_x + CELL / 2.0,
        MARGIN - 10.0
    );
    for r in 0..rows {
        let _ = writeln!(
            o,
            r#"<text x="{}" y="{}" text-anchor="end" dominant-baseline="middle" font-size="13">{}</text>"#,
            MARGIN - 10.0,
            MARGIN + (r as f64 + 0.5) * CELL,
            r
        );
    }
    let _ = writeln!(
        o,
        r#"<text x="{}" y="{}" text-anchor="end" dominant-baseline="middle" font-size="13">μ</text>"#,
        MARGIN - 10.0,
        mu_y + CELL / 2.0
    );
    let _ = writeln!(o, r#"<g class="cells">"#);
    for (r, row) in m.cells.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            rect(&mut o, "cell", MARGIN + c as f64 * CELL, MARGIN + r as f64 * CELL, v, lo, hi);
        }
    }
    let _ = writeln!(o, "</g>");
    let _ = writeln!(o, r#"<g class="mu-col">"#);
    for (r, &v) in m.row_mu.iter().enumerate() {
        rect(&mut o, "mu", mu_x, MARGIN + r as f64 * CELL, v, lo, hi);
    }
    let _ = writeln!(o, "</g>");
    let _ = writeln!(o, r#"<g class="mu-row">"#);
    for (c, &v) in m.col_mu.iter().enumerate() {
        rect(&mut o, "mu", MARGIN + c as f64 * CELL, mu_y, v, lo, hi);
    }
    let _ = writeln!(o, "</g>");
    rect(&mut o, "mu-all", mu_x, mu_y, m.mu, lo, hi);
    o.push_str("</svg>\n");
    o
}

/// Bars of mean zoo AP per patch order with ±std whiskers, and dashed
/// reference lines at the zoo's clean and grayscale means.
pub fn transfer_svg(t: &TransferResult) -> String {
    let (w, h) = (120.0 + 90.0 * t.bars.len().max(1) as f64, 360.0);
    let (left, top, plot_h) = (60.0, 40.0, 260.0);
    let y = |ap: f64| top + plot_h * (1.0 - ap.clamp(0.0, 1.0));
    let mut o = String::new();
    let _ = writeln!(
        o,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif">"#
    );
    let _ = writeln!(
        o,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">Transfer over {} zoo models (AP, mean ± std)</text>"#,
        w / 2.0,
        t.members.len()
    );
    let _ = writeln!(
        o,
        r##"<line x1="{left}" y1="{top}" x2="{left}" y2="{}" stroke="#000"/>"##,
        top + plot_h
    );
    for tick in 0..=5 {
        let v = tick as f64 / 5.0;
        let _ = writeln!(
            o,
            r#"<text x="{}" y="{}" text-anchor="end" dominant-baseline="middle" font-size="11">{v:.1}</text>"#,
            left - 6.0,
            y(v)
        );
    }
    for (i, bar) in t.bars.iter().enumerate() {
        let x = left + 30.0 + 90.0 * i as f64;
        let _ = writeln!(
            o,
            r##"<rect class="bar" x="{x}" y="{}" width="50" height="{}" fill="#4a7fb5"/>"##,
            y(bar.mean_ap),
            top + plot_h - y(bar.mean_ap)
        );
        let cx = x + 25.0;
        let _ = writeln!(
            o,
            r##"<line class="whisker" x1="{cx}" y1="{}" x2="{cx}" y2="{}" stroke="#000" stroke-width="1.5"/>"##,
            y(bar.mean_ap + bar.std_ap),
            y(bar.mean_ap - bar.std_ap)
        );
        let _ = writeln!(
            o,
            r#"<text x="{cx}" y="{}" text-anchor="middle" font-size="12">order {}</text>"#,
            top + plot_h + 16.0,
            bar.order
        );
        let _ = writeln!(
            o,
            r#"<text x="{cx}" y="{}" text-anchor="middle" font-size="11">{}</text>"#,
            top + plot_h + 32.0,
            label(bar.mean_ap)
        );
    }
    let right = w - 20.0;
    for (class, value, colour, name) in [
        ("ref-clean", t.clean_mean, "#2a9d40", "clean"),
        ("ref-gray", t.gray_mean, "#777", "grayscale"),
    ] {
        let _ = writeln!(
            o,
            r#"<line class="{class}" x1="{left}" y1="{0}" x2="{right}" y2="{0}" stroke="{colour}" stroke-dasharray="6 4"/>"#,
            y(value)
        );
        let _ = writeln!(
            o,
            r#"<text x="{right}" y="{}" text-anchor="end" font-size="11" fill="{colour}">{name} {}</text>"#,
            y(value) - 4.0,
            label(value)
        );
    }
    o.push_str("</svg>\n");
    o
}

pub fn emit_heatmap_svg(m: &HeatmapMatrix, path: &Path) -> Result<()> {
    fs::write(path, heatmap_svg(m)).map_err(io_err(path))
}

pub fn emit_transfer_svg(t: &TransferResult, path: &Path) -> Result<()> {
    fs::write(path, transfer_svg(t)).map_err(io_err(path))
}

/// Heatmap implied by ledger rows; orders and validation count are read off
/// the rows themselves.
pub fn heatmap_from_ledger(rows: &[LedgerRow]) -> Result<HeatmapMatrix> {
    let max_order = rows.iter().map(|r| r.model_order).max().unwrap_or(0);
    let validation: BTreeSet<usize> = rows.iter().filter(|r| r.source == "patch").map(|r| r.patch_index).collect();
    build_heatmap(rows, max_order, validation.len())
}

#[derive(Debug, Clone, Default)]
pub struct ReportOutput {
    pub written: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

/// Writes `ledger.csv` and `heatmap.svg` from `ledger.json`, and
/// `transfer.svg` when `transfer.json` exists. An existing manifest is
/// refreshed to cover the new files.
pub fn report_run(dir: &Path) -> Result<ReportOutput> {
    let rows: Vec<LedgerRow> = read_json(&dir.join("ledger.json"))?;
    let mut out = ReportOutput::default();
    let csv = dir.join("ledger.csv");
    fs::write(&csv, ledger_csv(&rows)).map_err(io_err(&csv))?;
    out.written.push(csv);
    let svg = dir.join("heatmap.svg");
    emit_heatmap_svg(&heatmap_from_ledger(&rows)?, &svg)?;
    out.written.push(svg);
    let transfer = dir.join("transfer.json");
    if transfer.exists() {
        let t: TransferResult = read_json(&transfer)?;
        let svg = dir.join("transfer.svg");
        emit_transfer_svg(&t, &svg)?;
        out.written.push(svg);
    } else {
        out.warnings
            .push("no transfer.json in the run directory; run `transfer` first for transfer.svg".into());
    }
    if dir.join(MANIFEST_FILE).exists() {
        let m = read_manifest(dir)?;
        write_manifest(dir, &m.run_id, &m.config_hash)?;
    }
    Ok(out)
}
