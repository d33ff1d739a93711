//! Privacy-utility curves and size-stratified bars as SVG, rasterised to PNG.
//!
//! The SVG is written by hand so its bytes depend only on the data.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use resvg::{tiny_skia, usvg};
use taskmask_core::metrics::SizeBin;

use crate::error::{write_file, BenchError, Result};
use crate::sweep::{Method, TradeoffPoint};

const W: f64 = 640.0;
const H: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const FONT: &str = "DejaVu Sans, Arial, sans-serif";

fn color(m: Method) -> &'static str {
    match m {
        Method::Obfuscator => "#1f77b4",
        Method::Blur => "#d62728",
        Method::DetectBlur => "#2ca02c",
    }
}

fn label(m: Method) -> &'static str {
    match m {
        Method::Obfuscator => "obfuscator (lambda)",
        Method::Blur => "gaussian blur (k)",
        Method::DetectBlur => "detect + blur (k)",
    }
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)
    }
}

fn header(s: &mut String, title: &str) {
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="{FONT}" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{title}</text>"#, W / 2.0);
}

fn axes(s: &mut String, f: &Frame, xlabel: &str, ylabel: &str, xticks: &[f64]) {
    let (l, r, t, b) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
    let _ = writeln!(s, r#"<g stroke="black" fill="none"><rect x="{l}" y="{t}" width="{}" height="{}"/></g>"#, r - l, b - t);
    for i in 0..=5 {
        let v = f.y0 + (f.y1 - f.y0) * i as f64 / 5.0;
        let y = f.py(v);
        let _ = writeln!(s, r##"<line x1="{l}" y1="{y:.2}" x2="{r}" y2="{y:.2}" stroke="#dddddd"/>"##);
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{v:.1}</text>"#, l - 6.0, y + 4.0);
    }
    for &v in xticks {
        let x = f.px(v);
        let _ = writeln!(s, r##"<line x1="{x:.2}" y1="{t}" x2="{x:.2}" y2="{b}" stroke="#eeeeee"/>"##);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{v:.1}</text>"#, b + 16.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{xlabel}</text>"#, (l + r) / 2.0, H - 18.0);
    let _ = writeln!(
        s,
        r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{ylabel}</text>"#,
        (t + b) / 2.0
    );
}

/// Curve figure: attack SSIM on x (lower is more private), mAP on y, one
/// series per method.
pub fn curve_svg(points: &[TradeoffPoint]) -> Result<String> {
    if points.is_empty() {
        return Err(BenchError::Plot("no points to plot".into()));
    }
    let mut series: BTreeMap<Method, Vec<&TradeoffPoint>> = BTreeMap::new();
    for p in points {
        series.entry(p.method).or_default().push(p);
    }
    let f = Frame {
        x0: 0.0,
        x1: 1.0,
        y0: 0.0,
        y1: 1.0,
    };
    let mut s = String::new();
    header(&mut s, "Privacy-utility trade-off");
    axes(
        &mut s,
        &f,
        "reconstruction-attack SSIM (lower = more private)",
        "mAP@0.5 on transformed frames",
        &[0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
    );
    for (i, (m, pts)) in series.iter_mut().enumerate() {
        pts.sort_by(|a, b| a.knob.total_cmp(&b.knob));
        let c = color(*m);
        let _ = writeln!(s, r#"<g class="series" data-method="{}">"#, m.as_str());
        let path: Vec<String> = pts
            .iter()
            .map(|p| format!("{:.2},{:.2}", f.px(p.attack_ssim.clamp(0.0, 1.0)), f.py(p.map50.clamp(0.0, 1.0))))
            .collect();
        if path.len() > 1 {
            let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="2"/>"#, path.join(" "));
        }
        for p in pts.iter() {
            let (x, y) = (f.px(p.attack_ssim.clamp(0.0, 1.0)), f.py(p.map50.clamp(0.0, 1.0)));
            let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="4" fill="{c}"/>"#);
            let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-size="10">{}</text>"#, x + 5.0, y - 5.0, p.knob);
        }
        let ly = TOP + 10.0 + 20.0 * i as f64;
        let lx = W - RIGHT + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{c}" stroke-width="3"/><text x="{}" y="{}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            label(*m)
        );
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Grouped bars of clean versus obfuscated mAP per object-size bin.
pub fn size_svg(clean: &BTreeMap<SizeBin, Option<f64>>, obfuscated: &BTreeMap<SizeBin, Option<f64>>) -> Result<String> {
    let bins: Vec<SizeBin> = clean.keys().chain(obfuscated.keys()).copied().collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    if bins.is_empty() {
        return Err(BenchError::Plot("no size bins to plot".into()));
    }
    let f = Frame {
        x0: 0.0,
        x1: bins.len() as f64,
        y0: 0.0,
        y1: 1.0,
    };
    let mut s = String::new();
    header(&mut s, "mAP by object size");
    axes(&mut s, &f, "object size", "mAP@0.5", &[]);
    let groups = [("clean", "#7f7f7f", clean), ("obfuscated", "#1f77b4", obfuscated)];
    let slot = (W - LEFT - RIGHT) / bins.len() as f64;
    let bar = slot * 0.35;
    for (gi, (name, c, values)) in groups.iter().enumerate() {
        let _ = writeln!(s, r#"<g class="series" data-group="{name}">"#);
        for (bi, b) in bins.iter().enumerate() {
            let x = f.px(bi as f64) + slot * 0.15 + bar * gi as f64;
            match values.get(b).copied().flatten() {
                Some(v) => {
                    // A zero bar keeps a hairline so it stays visible.
                    let y = f.py(v.clamp(0.0, 1.0)).min(H - BOTTOM - 1.0);
                    let _ = writeln!(
                        s,
                        r#"<rect x="{x:.2}" y="{y:.2}" width="{bar:.2}" height="{:.2}" fill="{c}"/><text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="10">{v:.3}</text>"#,
                        H - BOTTOM - y,
                        x + bar / 2.0,
                        y - 4.0
                    );
                }
                None => {
                    let _ = writeln!(
                        s,
                        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="10">n/a</text>"#,
                        x + bar / 2.0,
                        H - BOTTOM - 4.0
                    );
                }
            }
        }
        let ly = TOP + 10.0 + 20.0 * gi as f64;
        let lx = W - RIGHT + 12.0;
        let _ = writeln!(
            s,
            r#"<rect x="{lx}" y="{}" width="14" height="10" fill="{c}"/><text x="{}" y="{}">{name}</text>"#,
            ly - 5.0,
            lx + 20.0,
            ly + 4.0
        );
        s.push_str("</g>\n");
    }
    for (bi, b) in bins.iter().enumerate() {
        let x = f.px(bi as f64 + 0.5);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#, H - BOTTOM + 16.0, b.name());
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn fontdb() -> Arc<usvg::fontdb::Database> {
    static DB: OnceLock<Arc<usvg::fontdb::Database>> = OnceLock::new();
    DB.get_or_init(|| {
        let mut db = usvg::fontdb::Database::new();
        db.load_system_fonts();
        Arc::new(db)
    })
    .clone()
}

pub fn render_png(svg: &str) -> Result<Vec<u8>> {
    let opt = usvg::Options {
        fontdb: fontdb(),
        ..usvg::Options::default()
    };
    let tree = usvg::Tree::from_str(svg, &opt).map_err(|e| BenchError::Plot(e.to_string()))?;
    let size = tree.size().to_int_size();
    let mut pixmap =
        tiny_skia::Pixmap::new(size.width(), size.height()).ok_or_else(|| BenchError::Plot("empty canvas".into()))?;
    resvg::render(&tree, tiny_skia::Transform::default(), &mut pixmap.as_mut());
    pixmap.encode_png().map_err(|e| BenchError::Plot(e.to_string()))
}

/// Writes `<path>.svg` and `<path>.png`; returns both paths.
fn emit(svg: String, path: &Path) -> Result<[PathBuf; 2]> {
    let svg_path = path.with_extension("svg");
    let png_path = path.with_extension("png");
    let png = render_png(&svg)?;
    write_file(&svg_path, svg)?;
    write_file(&png_path, png)?;
    Ok([svg_path, png_path])
}

pub fn emit_curve_plot(points: &[TradeoffPoint], path: &Path) -> Result<[PathBuf; 2]> {
    emit(curve_svg(points)?, path)
}

pub fn emit_size_plot(
    clean: &BTreeMap<SizeBin, Option<f64>>,
    obfuscated: &BTreeMap<SizeBin, Option<f64>>,
    path: &Path,
) -> Result<[PathBuf; 2]> {
    emit(size_svg(clean, obfuscated)?, path)
}
