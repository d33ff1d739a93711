//! Sweep outputs on disk: JSON report, curve and size CSVs, plots.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use taskmask_core::metrics::SizeBin;

use crate::error::{write_json, BenchError, Result};
use crate::plot::{emit_curve_plot, emit_size_plot};
use crate::sweep::{SweepReport, TradeoffPoint};

pub const CURVE_COLUMNS: [&str; 7] = ["method", "knob", "map50", "attack_ssim", "attack_mse", "ssim_direct", "identity_acc"];

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> BenchError + '_ {
    move |source| BenchError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_curves_csv(points: &[TradeoffPoint], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let e = csv_err(path);
    w.write_record(CURVE_COLUMNS).map_err(&e)?;
    for p in points {
        w.write_record([
            p.method.as_str().to_string(),
            p.knob.to_string(),
            p.map50.to_string(),
            p.attack_ssim.to_string(),
            p.attack_mse.to_string(),
            p.ssim_direct.to_string(),
            opt(p.identity_acc),
        ])
        .map_err(&e)?;
    }
    let bytes = w.into_inner().map_err(|e| BenchError::Invalid(e.to_string()))?;
    crate::error::write_file(path, bytes)
}

pub fn write_size_csv(
    clean: &BTreeMap<SizeBin, Option<f64>>,
    obfuscated: &BTreeMap<SizeBin, Option<f64>>,
    path: &Path,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let e = csv_err(path);
    w.write_record(["bin", "clean_map50", "obfuscated_map50", "relative_drop"]).map_err(&e)?;
    for b in SizeBin::ALL {
        let c = clean.get(&b).copied().flatten();
        let o = obfuscated.get(&b).copied().flatten();
        let drop = match (c, o) {
            (Some(c), Some(o)) if c > 0.0 => Some((c - o) / c),
            _ => None,
        };
        w.write_record([b.name().to_string(), opt(c), opt(o), opt(drop)]).map_err(&e)?;
    }
    let bytes = w.into_inner().map_err(|e| BenchError::Invalid(e.to_string()))?;
    crate::error::write_file(path, bytes)
}

/// Files written for a sweep, by role.
#[derive(Clone, Debug, Default)]
pub struct SweepOutputs {
    /// Deterministic metric reports.
    pub reports: BTreeMap<String, PathBuf>,
    /// Figures.
    pub plots: BTreeMap<String, PathBuf>,
}

pub fn write_sweep_outputs(report: &SweepReport, out: &Path) -> Result<SweepOutputs> {
    let mut o = SweepOutputs::default();
    let json = out.join("report.json");
    write_json(&json, report)?;
    o.reports.insert("report".into(), json);
    let curves = out.join("curves.csv");
    write_curves_csv(&report.points, &curves)?;
    o.reports.insert("curves".into(), curves);
    let [svg, png] = emit_curve_plot(&report.points, &out.join("curves"))?;
    o.plots.insert("curves_svg".into(), svg);
    o.plots.insert("curves_png".into(), png);
    if let (Some(clean), Some(obf)) = (
        report.clean.size_map50.as_ref(),
        report.reference_point().and_then(|p| p.size_map50.as_ref()),
    ) {
        let size = out.join("size.csv");
        write_size_csv(clean, obf, &size)?;
        o.reports.insert("size".into(), size);
        let [svg, png] = emit_size_plot(clean, obf, &out.join("size"))?;
        o.plots.insert("size_svg".into(), svg);
        o.plots.insert("size_png".into(), png);
    }
    Ok(o)
}
