use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use cyclab_core::analytics::{AlignedCurves, MatrixKind, RecoveryReport, SimilarityMatrix, TrajectoryReport};
use cyclab_core::trainer::EvalGrid;

use crate::error::{CliResult, Failure};

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Numbers in SVG output use fixed precision so output is byte-stable.
fn n(v: f64) -> String {
    format!("{v:.3}")
}

fn header(title: &str) -> String {
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title)).unwrap();
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Maps data coordinates into the plotting area.
struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn fit(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let range = |it: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = it
                .filter(|v| v.is_finite())
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            match (lo.is_finite(), hi > lo) {
                (false, _) => (0.0, 1.0),
                (true, false) => (lo - 0.5, lo + 0.5),
                (true, true) => (lo, hi),
            }
        };
        let (x0, x1) = range(&mut xs.clone());
        let (y0, y1) = range(&mut ys.clone());
        Frame { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        H - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * MARGIN)
    }

    fn axes(&self, s: &mut String, xlabel: &str, ylabel: &str) {
        let (l, r, t, b) = (MARGIN, W - MARGIN, MARGIN, H - MARGIN);
        writeln!(s, r#"<path d="M{l} {t}V{b}H{r}" fill="none" stroke="black"/>"#).unwrap();
        writeln!(s, r#"<text x="{l}" y="{}" text-anchor="start">{}</text>"#, b + 15.0, n(self.x0)).unwrap();
        writeln!(s, r#"<text x="{r}" y="{}" text-anchor="end">{}</text>"#, b + 15.0, n(self.x1)).unwrap();
        writeln!(s, r#"<text x="{}" y="{b}" text-anchor="end">{}</text>"#, l - 4.0, n(self.y0)).unwrap();
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, l - 4.0, t + 8.0, n(self.y1)).unwrap();
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 12.0, escape(xlabel)).unwrap();
        writeln!(
            s,
            r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
            H / 2.0,
            H / 2.0,
            escape(ylabel)
        )
        .unwrap();
    }

    fn polyline(&self, s: &mut String, points: &[(f64, f64)], color: &str, width: f64, class: &str) {
        let pts: Vec<String> = points
            .iter()
            .filter(|(_, y)| y.is_finite())
            .map(|&(x, y)| format!("{},{}", n(self.px(x)), n(self.py(y))))
            .collect();
        writeln!(
            s,
            r#"<polyline class="{class}" points="{}" fill="none" stroke="{color}" stroke-width="{width}"/>"#,
            pts.join(" ")
        )
        .unwrap();
    }

    fn vline(&self, s: &mut String, x: f64, class: &str) {
        let px = n(self.px(x));
        writeln!(
            s,
            r##"<line class="{class}" x1="{px}" y1="{MARGIN}" x2="{px}" y2="{}" stroke="#888" stroke-dasharray="4 3"/>"##,
            H - MARGIN
        )
        .unwrap();
    }
}

fn indexed(values: &[f64]) -> Vec<(f64, f64)> {
    values.iter().enumerate().map(|(i, &v)| (i as f64, v)).collect()
}

pub fn aligned_svg(curves: &AlignedCurves, title: &str) -> String {
    let mut s = header(title);
    let all = curves.per_task.iter().flatten().chain(&curves.mean).copied();
    let f = Frame::fit((0..curves.len()).map(|k| k as f64), all);
    f.axes(&mut s, "episodes since visit", "loss");
    for c in &curves.per_task {
        f.polyline(&mut s, &indexed(c), "#c8c8c8", 0.8, "task");
    }
    f.polyline(&mut s, &indexed(&curves.mean), PALETTE[0], 2.0, "mean");
    for &m in curves.markers.iter().filter(|&&m| m > 0) {
        f.vline(&mut s, m as f64, "revisit");
    }
    s.push_str("</svg>\n");
    s
}

pub fn grid_svg(grid: &EvalGrid, title: &str) -> String {
    let mut s = header(title);
    let rows = grid.rows();
    let f = Frame::fit((0..rows.len()).map(|j| j as f64), rows.iter().flatten().copied());
    f.axes(&mut s, "evaluation index", "loss");
    for t in 0..grid.tasks() {
        let c: Vec<f64> = rows.iter().map(|r| r[t]).collect();
        f.polyline(&mut s, &indexed(&c), PALETTE[t % PALETTE.len()], 1.0, "task");
    }
    for m in (grid.tasks()..rows.len().saturating_sub(1)).step_by(grid.tasks()) {
        f.vline(&mut s, m as f64, "epoch");
    }
    s.push_str("</svg>\n");
    s
}

/// Blue below zero, red above, scaled by the largest magnitude.
fn diverging(v: f64, scale: f64) -> String {
    let t = if scale > 0.0 { (v / scale).clamp(-1.0, 1.0) } else { 0.0 };
    let fade = |c: f64| (255.0 - (255.0 - c) * t.abs()).round() as u8;
    let (r, g, b) = if t >= 0.0 { (fade(178.0), fade(24.0), fade(43.0)) } else { (fade(33.0), fade(102.0), fade(172.0)) };
    format!("#{r:02x}{g:02x}{b:02x}")
}

pub fn heatmap_svg(m: &SimilarityMatrix, title: &str) -> String {
    let mut s = header(title);
    let size = m.n();
    let defined: Vec<f64> = m.values().iter().flatten().copied().filter(|v| v.is_finite()).collect();
    let lo = defined.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = defined.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scale = lo.abs().max(hi.abs());
    let side = (H - 2.0 * MARGIN) / size.max(1) as f64;
    let left = (W - side * size as f64) / 2.0;
    for i in 0..size {
        for j in 0..size {
            let fill = m.get(i, j).map_or_else(|| "#e0e0e0".to_string(), |v| diverging(v, scale));
            writeln!(
                s,
                r#"<rect class="cell" x="{}" y="{}" width="{}" height="{}" fill="{fill}"/>"#,
                n(left + j as f64 * side),
                n(MARGIN + i as f64 * side),
                n(side),
                n(side)
            )
            .unwrap();
        }
    }
    let range = if defined.is_empty() {
        "range: undefined".to_string()
    } else {
        format!("range: [{}, {}]", n(lo), n(hi))
    };
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{range}</text>"#, W / 2.0, H - 20.0).unwrap();
    s.push_str("</svg>\n");
    s
}

pub fn trajectory_svg(r: &TrajectoryReport, title: &str) -> String {
    let mut s = header(title);
    let pts: Vec<(f64, f64)> = r
        .coords
        .iter()
        .map(|c| (c.first().copied().unwrap_or(0.0), c.get(1).copied().unwrap_or(0.0)))
        .collect();
    let f = Frame::fit(pts.iter().map(|p| p.0), pts.iter().map(|p| p.1));
    let pct = |i: usize| r.explained.get(i).map_or("-".into(), |e| format!("{:.1}%", e * 100.0));
    f.axes(&mut s, &format!("PC1 ({})", pct(0)), &format!("PC2 ({})", pct(1)));
    f.polyline(&mut s, &pts, "#c8c8c8", 0.8, "path");
    let last = pts.len().saturating_sub(1).max(1) as f64;
    for (i, &(x, y)) in pts.iter().enumerate() {
        let t = i as f64 / last;
        let color = format!("#{:02x}{:02x}{:02x}", (40.0 + 200.0 * t) as u8, 60, (220.0 - 180.0 * t) as u8);
        writeln!(s, r#"<circle class="point" cx="{}" cy="{}" r="3" fill="{color}"/>"#, n(f.px(x)), n(f.py(y))).unwrap();
    }
    if let Some(c) = r.circular_correlation {
        writeln!(s, r#"<text x="{}" y="40" text-anchor="end">circular order: {}</text>"#, W - MARGIN, n(c)).unwrap();
    }
    s.push_str("</svg>\n");
    s
}

pub fn recovery_svg(r: &RecoveryReport, title: &str) -> String {
    let mut s = header(title);
    let pts: Vec<(f64, f64)> = r.epochs.iter().filter_map(|e| e.rs.map(|v| (e.epoch as f64, v))).collect();
    let f = Frame::fit(
        r.epochs.iter().map(|e| e.epoch as f64),
        pts.iter().map(|p| p.1).chain([0.0]),
    );
    f.axes(&mut s, "epoch", "recovery score");
    f.polyline(&mut s, &pts, PALETTE[0], 2.0, "rs");
    for &(x, y) in &pts {
        writeln!(s, r#"<circle class="point" cx="{}" cy="{}" r="3" fill="{}"/>"#, n(f.px(x)), n(f.py(y)), PALETTE[0]).unwrap();
    }
    s.push_str("</svg>\n");
    s
}

fn malformed(path: &Path, what: impl std::fmt::Display) -> Failure {
    Failure::malformed(format!("{}: {what}", path.display()))
}

/// Renders one report file, choosing the chart from its contents.
pub fn render(path: &Path) -> CliResult<String> {
    let text = fs::read_to_string(path).map_err(|e| Failure::missing(format!("{}: {e}", path.display())))?;
    let title = path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    let first = text.lines().next().unwrap_or("").trim();
    if first.is_empty() {
        return Err(malformed(path, "empty input"));
    }
    if first.starts_with('{') || first.starts_with('[') {
        let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| malformed(path, e))?;
        if v.get("coords").is_some() {
            let r: TrajectoryReport = serde_json::from_value(v).map_err(|e| malformed(path, e))?;
            if r.coords.is_empty() {
                return Err(malformed(path, "no trajectory points"));
            }
            return Ok(trajectory_svg(&r, &title));
        }
        if v.get("epochs").is_some() && v.get("tasks").is_some() {
            let r: RecoveryReport = serde_json::from_value(v).map_err(|e| malformed(path, e))?;
            return Ok(recovery_svg(&r, &title));
        }
        return Err(malformed(path, "unrecognized JSON report"));
    }
    if text.lines().filter(|l| !l.trim().is_empty()).count() < 2 {
        return Err(malformed(path, "no data rows"));
    }
    if first.starts_with("k,mean") {
        let c = AlignedCurves::from_csv(&text).map_err(|e| malformed(path, e))?;
        Ok(aligned_svg(&c, &title))
    } else if first.starts_with("eval_index") {
        let g = EvalGrid::from_csv(&text, Vec::new()).map_err(|e| malformed(path, e))?;
        Ok(grid_svg(&g, &title))
    } else if first.starts_with("label,") {
        let kind = if title.contains("pairwise") { MatrixKind::Recovery } else { MatrixKind::Cosine };
        let m = SimilarityMatrix::from_csv(&text, kind).map_err(|e| malformed(path, e))?;
        Ok(heatmap_svg(&m, &title))
    } else {
        Err(malformed(path, format!("unrecognized header `{first}`")))
    }
}

pub fn cmd_plot(files: &[PathBuf], out: &Path) -> CliResult<Vec<PathBuf>> {
    fs::create_dir_all(out).map_err(|e| Failure::io(out.display(), e))?;
    let mut written = Vec::new();
    for path in files {
        let svg = render(path)?;
        let name = path.file_stem().map_or_else(|| "plot".into(), |s| s.to_string_lossy().into_owned());
        let target = out.join(format!("{name}.svg"));
        fs::write(&target, svg).map_err(|e| Failure::io(target.display(), e))?;
        written.push(target);
    }
    Ok(written)
}
