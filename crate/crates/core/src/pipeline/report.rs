use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use super::run::{ensure_dir, AblationTable, EvalReport};
use crate::boxes::ObjectClass;
use crate::error::{Error, Result};
use crate::kitti::write_labels;
use crate::metrics::{APReport, ConfidenceBinTable, Difficulty};

fn write_text(path: &Path, body: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        ensure_dir(dir)?;
    }
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

pub fn ap_csv(ap: &[APReport]) -> String {
    let mut s = String::from("class,difficulty,iou,recall_positions,ap_3d,ap_bev\n");
    for r in ap {
        let _ = writeln!(s, "{},{},{},{},{},{}", r.class.name(), r.difficulty, r.iou_threshold, r.recall_positions, r.ap_3d, r.ap_bev);
    }
    s
}

/// One line per class, IoU and sampling grid; easy/moderate/hard columns,
/// each `AP_3D / AP_BEV`.
pub fn ap_table(ap: &[APReport]) -> String {
    let mut keys: Vec<(ObjectClass, String, usize)> = Vec::new();
    for r in ap {
        let k = (r.class, format!("{}", r.iou_threshold), r.recall_positions);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    let mut s = format!("{:<11} {:>4} {:>4}", "class", "IoU", "R");
    for d in Difficulty::ALL {
        let _ = write!(s, " {:>15}", d.name());
    }
    s.push('\n');
    for (class, iou, rp) in keys {
        let _ = write!(s, "{:<11} {:>4} {:>4}", class.name(), iou, rp);
        for d in Difficulty::ALL {
            let cell = ap
                .iter()
                .find(|r| r.class == class && format!("{}", r.iou_threshold) == iou && r.recall_positions == rp && r.difficulty == d)
                .map(|r| format!("{:.2} / {:.2}", r.ap_3d, r.ap_bev))
                .unwrap_or_else(|| "-".into());
            let _ = write!(s, " {cell:>15}");
        }
        s.push('\n');
    }
    s
}

/// Box-and-whisker chart of the bins: a bar up to the median and a line
/// from the first to the third quartile, one column per bin.
pub fn plot_bins(table: &ConfidenceBinTable) -> RgbImage {
    let (col, margin, height) = (16u32, 8u32, 200u32);
    let n = table.bins.len() as u32;
    let mut img = RgbImage::from_pixel(2 * margin + n * col, height + 2 * margin, Rgb([255, 255, 255]));
    let top = table.bins.iter().filter_map(|b| b.q3).fold(0.0f64, f64::max);
    let scale = if top > 0.0 { f64::from(height) / top } else { 0.0 };
    let y_of = |x: f64| margin + height - ((x * scale).round() as u32).min(height);
    for x in margin..margin + n * col {
        img.put_pixel(x, margin + height, Rgb([0, 0, 0]));
    }
    for (i, b) in table.bins.iter().enumerate() {
        let x0 = margin + i as u32 * col;
        if let Some(m) = b.median {
            for y in y_of(m)..margin + height {
                for x in x0 + 3..x0 + col - 3 {
                    img.put_pixel(x, y, Rgb([70, 110, 200]));
                }
            }
        }
        if let (Some(q1), Some(q3)) = (b.q1, b.q3) {
            let xm = x0 + col / 2;
            for y in y_of(q3)..=y_of(q1) {
                img.put_pixel(xm, y, Rgb([0, 0, 0]));
            }
        }
    }
    img
}

pub fn write_bins(dir: &Path, table: &ConfidenceBinTable) -> Result<Vec<PathBuf>> {
    let csv = dir.join("confidence_bins.csv");
    write_text(&csv, &table.to_csv())?;
    let png = dir.join("confidence_bins.png");
    plot_bins(table).save(&png).map_err(|e| Error::Image {
        path: png.clone(),
        message: e.to_string(),
    })?;
    Ok(vec![csv, png])
}

pub fn depth_csv(rep: &EvalReport) -> String {
    let mut s = String::from("slice,pixel_count,abs_rel,si_log\n");
    if let Some(d) = &rep.depth {
        let _ = writeln!(s, "{},{},{},{}", d.slice, d.pixel_count, d.abs_rel, d.si_log);
    }
    s
}

/// Writes depth, AP and bin reports plus per-frame detections in KITTI
/// label format.
pub fn write_eval_report(dir: &Path, rep: &EvalReport) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    let files = [
        ("depth.csv", depth_csv(rep)),
        ("ap.csv", ap_csv(&rep.ap)),
        ("ap_table.txt", ap_table(&rep.ap)),
    ];
    for (name, body) in files {
        let p = dir.join(name);
        write_text(&p, &body)?;
        paths.push(p);
    }
    paths.extend(write_bins(dir, &rep.bins)?);
    let det_dir = dir.join("detections");
    ensure_dir(&det_dir)?;
    for (i, dets) in rep.detections.iter().enumerate() {
        let p = det_dir.join(format!("{i:06}.txt"));
        write_labels(&p, dets, true)?;
        paths.push(p);
    }
    Ok(paths)
}

fn cell(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

/// Mean over repeats; per-repeat values follow in the CSV.
pub fn ablation_table(t: &AblationTable) -> String {
    let mut s = format!(
        "{:<5} {:>8} {:>8} {:>9} {:>9}   (car, moderate, IoU {}, R40, mean of {} runs)\n",
        "row",
        "absRel",
        "SILog",
        "AP_3D",
        "AP_BEV",
        t.iou,
        t.rows.first().map_or(0, |r| r.runs.len())
    );
    for r in &t.rows {
        let m = r.mean();
        let _ = writeln!(
            s,
            "{:<5} {:>8} {:>8} {:>9.2} {:>9.2}",
            r.flags.pattern(),
            cell(m.abs_rel),
            cell(m.si_log),
            m.ap_3d,
            m.ap_bev
        );
    }
    s
}

pub fn ablation_csv(t: &AblationTable) -> String {
    let mut s = String::from("split_depth,pc_loss,confidence_feature,run,abs_rel,si_log,ap_3d,ap_bev\n");
    let opt = |x: Option<f64>| x.map_or_else(String::new, |v| v.to_string());
    for r in &t.rows {
        for (i, m) in r.runs.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.flags.split_depth,
                r.flags.pc_loss,
                r.flags.confidence_feature,
                i,
                opt(m.abs_rel),
                opt(m.si_log),
                m.ap_3d,
                m.ap_bev
            );
        }
    }
    s
}

pub fn write_ablation(dir: &Path, t: &AblationTable) -> Result<Vec<PathBuf>> {
    let csv = dir.join("ablation.csv");
    write_text(&csv, &ablation_csv(t))?;
    let txt = dir.join("ablation.txt");
    write_text(&txt, &ablation_table(t))?;
    Ok(vec![csv, txt])
}
