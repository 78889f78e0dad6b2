//! Report files.
//!
//! `write_report(reports, dir)` produces:
//!
//! - `report.json`: the array of [`EvalReport`]s, verbatim.
//! - `report.csv`: one row per (condition, sequence), columns in the order of
//!   [`CSV_HEADER`].
//! - `curves/<condition>__<sequence>__success.csv` and `__precision.csv`:
//!   two-column `threshold,value` files.

use std::fs;
use std::io;
use std::path::Path;

use super::EvalReport;

pub const CSV_HEADER: &str = "condition,sequence,frames,mean_iou,failures,failure_rate,success_auc,\
precision_at_20px,ope_mean_iou,mean_spatial_iou,mean_queries_per_frame,mean_noise_l2";

pub fn report_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for report in reports {
        for s in &report.per_sequence {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                report.condition.as_str(),
                csv_field(&s.name),
                s.frames,
                s.mean_iou,
                s.failures,
                s.failure_rate,
                s.success_auc,
                s.precision_at_20px,
                s.ope_mean_iou,
                s.mean_spatial_iou.map(|v| v.to_string()).unwrap_or_default(),
                s.mean_queries_per_frame,
                s.mean_noise_l2,
            ));
        }
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn curve_csv(header: &str, points: &[(f64, f64)]) -> String {
    let mut out = format!("threshold,{header}\n");
    for (t, v) in points {
        out.push_str(&format!("{t},{v}\n"));
    }
    out
}

fn file_stem(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

pub fn write_report(reports: &[EvalReport], dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(reports).map_err(io::Error::other)?;
    fs::write(dir.join("report.json"), json + "\n")?;
    fs::write(dir.join("report.csv"), report_csv(reports))?;
    let curves = dir.join("curves");
    for report in reports {
        for s in &report.per_sequence {
            fs::create_dir_all(&curves)?;
            let stem = format!("{}__{}", report.condition.as_str(), file_stem(&s.name));
            fs::write(curves.join(format!("{stem}__success.csv")), curve_csv("success", &s.success_curve))?;
            fs::write(curves.join(format!("{stem}__precision.csv")), curve_csv("precision", &s.precision_curve))?;
        }
    }
    Ok(())
}
