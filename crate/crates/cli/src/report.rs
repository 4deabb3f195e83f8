//! Human-readable run summaries, cost-curve SVG plots, and side-by-side
//! manifest comparison.

use std::fs;
use std::path::Path;

use reverie_core::geometry::{DepthMap, SegMask};
use reverie_core::optimize::EvalRecord;
use reverie_core::render::{palette_color, ColorImage};

use crate::pipeline::{parse_cost_log, PipelineError, RunManifest};

/// Grayscale visualization of a depth map (near = bright).
pub fn depth_to_ppm(depth: &DepthMap) -> ColorImage {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for y in 0..depth.height() {
        for x in 0..depth.width() {
            if let Some(d) = depth.get(x, y) {
                min = min.min(d);
                max = max.max(d);
            }
        }
    }
    let span = (max - min).max(1e-9);
    let mut img = ColorImage::filled(depth.width(), depth.height(), [0, 0, 32]);
    for y in 0..depth.height() {
        for x in 0..depth.width() {
            if let Some(d) = depth.get(x, y) {
                let v = (255.0 * (1.0 - (d - min) / span)) as u8;
                img.rgb[(y * depth.width() + x) as usize] = [v, v, v];
            }
        }
    }
    img
}

/// Palette visualization of a label map.
pub fn seg_to_ppm(seg: &SegMask) -> ColorImage {
    let mut img = ColorImage::filled(seg.width(), seg.height(), [0, 0, 0]);
    for y in 0..seg.height() {
        for x in 0..seg.width() {
            let label = seg.label_at(x, y);
            if !label.is_background() {
                img.rgb[(y * seg.width() + x) as usize] = palette_color(label);
            }
        }
    }
    img
}

/// Per-evaluation cost scatter plus the best-so-far line, as a standalone SVG.
pub fn cost_curve_svg(history: &[EvalRecord]) -> String {
    let width = 720.0;
    let height = 360.0;
    let margin = 48.0;
    if history.is_empty() {
        return format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\"/>"
        );
    }
    let n = history.len() as f64;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for r in history {
        lo = lo.min(r.cost);
        hi = hi.max(r.cost);
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    let x_of = |i: usize| margin + (width - 2.0 * margin) * i as f64 / (n - 1.0).max(1.0);
    let y_of = |c: f64| height - margin - (height - 2.0 * margin) * (c - lo) / (hi - lo);
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n",
        m = margin,
        b = height - margin,
        r = width - margin,
        t = margin
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"12\">evaluation</text>\n\
         <text x=\"4\" y=\"{}\" font-size=\"12\">cost</text>\n",
        width / 2.0 - 30.0,
        height - 12.0,
        margin - 8.0
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"10\">{:.4}</text>\n\
         <text x=\"{}\" y=\"{}\" font-size=\"10\">{:.4}</text>\n",
        4.0,
        height - margin,
        lo,
        4.0,
        margin + 4.0,
        hi
    ));
    // per-evaluation scatter
    for (i, r) in history.iter().enumerate() {
        let color = if r.diverged { "#cc3333" } else { "#99bbdd" };
        svg.push_str(&format!(
            "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"1.2\" fill=\"{color}\"/>\n",
            x_of(i),
            y_of(r.cost)
        ));
    }
    // best-so-far line
    let mut best = f64::INFINITY;
    let mut points = Vec::with_capacity(history.len());
    for (i, r) in history.iter().enumerate() {
        if r.cost < best {
            best = r.cost;
        }
        points.push(format!("{:.1},{:.1}", x_of(i), y_of(best)));
    }
    svg.push_str(&format!(
        "<polyline points=\"{}\" fill=\"none\" stroke=\"#224488\" stroke-width=\"1.5\"/>\n",
        points.join(" ")
    ));
    svg.push_str("</svg>\n");
    svg
}

fn stage_lines(manifest: &RunManifest) -> String {
    let mut s = String::new();
    for stage in &manifest.stages {
        s.push_str(&format!(
            "  {:<10} {:<9} {}\n",
            stage.name, stage.status, stage.detail
        ));
    }
    s
}

/// Render the human-readable summary for one manifest.
pub fn summary(manifest: &RunManifest) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "run: {} (seed {}, provider {}, noise {}{})\n",
        manifest.task_name,
        manifest.seed,
        manifest.provider,
        manifest.noise,
        manifest
            .ablate
            .as_ref()
            .map(|a| format!(", ablate {a}"))
            .unwrap_or_default()
    ));
    s.push_str("stages:\n");
    s.push_str(&stage_lines(manifest));
    s.push_str(&format!(
        "video: score {}/15 ({} {} {}), {} rejected of {} candidates\n",
        manifest.video.score_total,
        manifest.video.match_description,
        manifest.video.hand_motion,
        manifest.video.goal_reached,
        manifest.video.rejected,
        manifest.video.candidates.len(),
    ));
    for c in &manifest.video.candidates {
        s.push_str(&format!(
            "  candidate seed {:>4}: {:>2}/15 {}\n",
            c.seed,
            c.total,
            if c.accepted { "accepted" } else { "rejected" }
        ));
    }
    s.push_str(&format!(
        "keyframes: {} retained in [{}, {}]\n",
        manifest.video.keyframes.len(),
        manifest.video.start,
        manifest.video.end
    ));
    let r = &manifest.result;
    s.push_str("cost terms at the returned trajectory:\n");
    s.push_str(&format!("  actuator mask (1-IoU) : {:.6}\n", r.act_iou));
    s.push_str(&format!("  target mask (1-IoU)   : {:.6}\n", r.tar_iou));
    s.push_str(&format!("  actuator chamfer (m)  : {:.6}\n", r.act_cd));
    s.push_str(&format!("  target chamfer (m)    : {:.6}\n", r.tar_cd));
    s.push_str(&format!("  contact penalty       : {:.6}\n", r.contact));
    s.push_str(&format!(
        "best cost {:.6} (init {:.6}) over {} evaluations\n",
        r.best_cost, r.init_cost, r.evaluations
    ));
    s.push_str(&format!(
        "success: {} (metric {:.4})\n",
        if r.success { "yes" } else { "no" },
        r.success_metric
    ));
    s
}

/// Side-by-side comparison table over shared headline numbers.
pub fn comparison(manifests: &[RunManifest]) -> String {
    let mut s = String::new();
    let header: Vec<String> = manifests
        .iter()
        .map(|m| {
            format!(
                "{}/s{}{}",
                m.task_name,
                m.seed,
                m.ablate
                    .as_ref()
                    .map(|a| format!("/{a}"))
                    .unwrap_or_default()
            )
        })
        .collect();
    s.push_str(&format!("{:<22}", "run"));
    for h in &header {
        s.push_str(&format!(" {h:>20}"));
    }
    s.push('\n');
    let row = |name: &str, vals: Vec<String>| {
        let mut line = format!("{name:<22}");
        for v in vals {
            line.push_str(&format!(" {v:>20}"));
        }
        line.push('\n');
        line
    };
    s.push_str(&row(
        "video score",
        manifests
            .iter()
            .map(|m| format!("{}/15", m.video.score_total))
            .collect(),
    ));
    s.push_str(&row(
        "best cost",
        manifests
            .iter()
            .map(|m| format!("{:.6}", m.result.best_cost))
            .collect(),
    ));
    s.push_str(&row(
        "init cost",
        manifests
            .iter()
            .map(|m| format!("{:.6}", m.result.init_cost))
            .collect(),
    ));
    s.push_str(&row(
        "contact term",
        manifests
            .iter()
            .map(|m| format!("{:.4}", m.result.contact))
            .collect(),
    ));
    s.push_str(&row(
        "success",
        manifests
            .iter()
            .map(|m| {
                format!(
                    "{} ({:.4})",
                    if m.result.success { "yes" } else { "no" },
                    m.result.success_metric
                )
            })
            .collect(),
    ));
    s.push_str(&row(
        "evaluations",
        manifests
            .iter()
            .map(|m| m.result.evaluations.to_string())
            .collect(),
    ));
    s
}

/// Produce report files next to the manifest: summary.txt and cost_curve.svg.
/// Missing pieces are flagged instead of failing the whole report.
pub fn write_report(manifest: &RunManifest, out_dir: &Path) -> Result<String, PipelineError> {
    let report_dir = out_dir.join("report");
    fs::create_dir_all(&report_dir)
        .map_err(|e| PipelineError::Io(format!("{}: {e}", report_dir.display())))?;
    let mut text = summary(manifest);
    match manifest.artifacts.get("cost_log") {
        Some(log_path) if Path::new(log_path).exists() => {
            let history = parse_cost_log(
                &fs::read_to_string(log_path).map_err(|e| PipelineError::Io(e.to_string()))?,
            )?;
            let svg = cost_curve_svg(&history);
            let svg_path = report_dir.join("cost_curve.svg");
            fs::write(&svg_path, svg).map_err(|e| PipelineError::Io(e.to_string()))?;
            text.push_str(&format!("cost curve: {}\n", svg_path.display()));
        }
        _ => text.push_str("cost curve: unavailable (missing cost log)\n"),
    }
    for key in ["end_frame_depth_ppm", "end_frame_seg_ppm"] {
        match manifest.artifacts.get(key) {
            Some(p) if Path::new(p).exists() => {
                text.push_str(&format!("{key}: {p}\n"));
            }
            _ => text.push_str(&format!("{key}: missing\n")),
        }
    }
    let summary_path = report_dir.join("summary.txt");
    fs::write(&summary_path, &text).map_err(|e| PipelineError::Io(e.to_string()))?;
    Ok(text)
}
