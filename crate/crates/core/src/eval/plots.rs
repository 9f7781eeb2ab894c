// Static plot emission: loss-vs-step curves, mel-spectrogram triptychs,
// and an MCD bar chart, drawn onto an RGB raster with a built-in 5x7
// glyph set and written as PNG. No display server, no external assets.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::training::{read_metrics_lenient, MetricsRecord};

/// Source, converted, and target log-mels of one conversion, drawn side
/// by side. All three must share the mel-band count; frame counts are
/// echoed one pixel per frame so the panels show true relative length.
pub struct TriptychSpec {
    pub name: String,
    pub source: Array2<f64>,
    pub converted: Array2<f64>,
    pub target: Array2<f64>,
}

/// What `emit_plots` produced: the image paths and how many inputs were
/// skipped or empty. A caller that expected plots should treat a nonzero
/// warning count as a failed precondition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlotsOutcome {
    pub images: Vec<PathBuf>,
    pub warnings: usize,
}

// ----------------------------------------------------- triptych layout

/// Outer margin on both sides of a triptych.
pub const TRIPTYCH_MARGIN: usize = 24;
/// Gap between triptych panels.
pub const TRIPTYCH_GAP: usize = 16;
/// Label strip above the panels.
pub const TRIPTYCH_TOP: usize = 22;
/// Frame-count strip below the panels.
pub const TRIPTYCH_BOTTOM: usize = 18;
/// Vertical pixels per mel band.
pub const TRIPTYCH_ROW_SCALE: usize = 2;

/// Image dimensions for a triptych of the given frame counts and mel
/// bands; the width embeds each frame count exactly, one pixel per frame.
pub fn triptych_dims(frames: [usize; 3], n_mels: usize) -> (usize, usize) {
    let w = 2 * TRIPTYCH_MARGIN + 2 * TRIPTYCH_GAP + frames.iter().sum::<usize>();
    let h = TRIPTYCH_TOP + n_mels * TRIPTYCH_ROW_SCALE + TRIPTYCH_BOTTOM;
    (w, h)
}

// -------------------------------------------------------------- canvas

const BG: [u8; 3] = [255, 255, 255];
const INK: [u8; 3] = [40, 40, 40];
const GRID: [u8; 3] = [226, 226, 226];

struct Canvas {
    w: usize,
    h: usize,
    px: Vec<u8>,
}

impl Canvas {
    fn new(w: usize, h: usize) -> Canvas {
        let mut px = Vec::with_capacity(w * h * 3);
        for _ in 0..w * h {
            px.extend_from_slice(&BG);
        }
        Canvas { w, h, px }
    }

    fn set(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x < 0 || y < 0 || x >= self.w as i64 || y >= self.h as i64 {
            return;
        }
        let i = (y as usize * self.w + x as usize) * 3;
        self.px[i..i + 3].copy_from_slice(&c);
    }

    fn hline(&mut self, x0: i64, x1: i64, y: i64, c: [u8; 3]) {
        for x in x0.min(x1)..=x0.max(x1) {
            self.set(x, y, c);
        }
    }

    fn vline(&mut self, x: i64, y0: i64, y1: i64, c: [u8; 3]) {
        for y in y0.min(y1)..=y0.max(y1) {
            self.set(x, y, c);
        }
    }

    fn fill_rect(&mut self, x: i64, y: i64, w: i64, h: i64, c: [u8; 3]) {
        for yy in y..y + h {
            self.hline(x, x + w - 1, yy, c);
        }
    }

    fn line(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, c: [u8; 3]) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.set(x, y, c);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    /// Draws `text` uppercased at (x, y) top-left; returns the advance.
    fn text(&mut self, x: i64, y: i64, text: &str, c: [u8; 3]) -> i64 {
        let mut cx = x;
        for ch in text.chars() {
            let glyph = glyph(ch.to_ascii_uppercase());
            for (row, bits) in glyph.iter().enumerate() {
                for col in 0..5 {
                    if bits & (0x10 >> col) != 0 {
                        self.set(cx + col as i64, y + row as i64, c);
                    }
                }
            }
            cx += 6;
        }
        cx - x
    }

    fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let img = image::RgbImage::from_raw(self.w as u32, self.h as u32, self.px.clone())
            .expect("canvas buffer matches its dimensions");
        img.save(path)
            .map_err(|e| Error::runtime(format!("writing plot {}: {e}", path.display())))
    }
}

/// 5x7 bitmap per character; bit 4 is the leftmost pixel of a row.
fn glyph(c: char) -> [u8; 7] {
    match c {
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        'A' => [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'B' => [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E],
        'C' => [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
        'D' => [0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C],
        'E' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F],
        'F' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10],
        'G' => [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F],
        'H' => [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'I' => [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'J' => [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C],
        'K' => [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11],
        'L' => [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F],
        'M' => [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11],
        'N' => [0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11],
        'O' => [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'P' => [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10],
        'Q' => [0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D],
        'R' => [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11],
        'S' => [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E],
        'T' => [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04],
        'U' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'V' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04],
        'W' => [0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A],
        'X' => [0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11],
        'Y' => [0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04],
        'Z' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F],
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C],
        '-' => [0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00],
        '+' => [0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00],
        ':' => [0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00],
        '/' => [0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10],
        '%' => [0x19, 0x19, 0x02, 0x04, 0x08, 0x13, 0x13],
        '=' => [0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00],
        '(' => [0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02],
        ')' => [0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08],
        ' ' => [0x00; 7],
        _ => [0x1F, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1F],
    }
}

fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if a >= 1e4 || a < 1e-2 {
        format!("{v:.1E}")
    } else {
        format!("{v:.3}")
    }
}

/// Five-stop heat colormap over [0, 1].
fn heat(v: f64) -> [u8; 3] {
    const STOPS: [[f64; 3]; 5] = [
        [13.0, 8.0, 135.0],
        [126.0, 3.0, 168.0],
        [204.0, 71.0, 120.0],
        [248.0, 149.0, 64.0],
        [240.0, 249.0, 33.0],
    ];
    let v = v.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let i = (v.floor() as usize).min(STOPS.len() - 2);
    let t = v - i as f64;
    let mut c = [0u8; 3];
    for k in 0..3 {
        c[k] = (STOPS[i][k] + t * (STOPS[i + 1][k] - STOPS[i][k])).round() as u8;
    }
    c
}

// -------------------------------------------------------- loss curves

const CURVE_W: usize = 900;
const CURVE_H: usize = 540;
const CURVE_LEFT: i64 = 70;
const CURVE_RIGHT: i64 = 20;
const CURVE_TOP: i64 = 40;
const CURVE_BOTTOM: i64 = 50;

struct Series<'a> {
    label: &'a str,
    color: [u8; 3],
    points: Vec<(u64, f64)>,
}

fn curve_series(records: &[MetricsRecord]) -> Vec<Series<'_>> {
    let pick = |f: fn(&MetricsRecord) -> Option<f64>| -> Vec<(u64, f64)> {
        records
            .iter()
            .filter_map(|r| f(r).filter(|v| v.is_finite()).map(|v| (r.step, v)))
            .collect()
    };
    let mut series = vec![
        Series {
            label: "TOTAL L1",
            color: [130, 60, 180],
            points: pick(|r| Some(r.losses.total_l1)),
        },
        Series {
            label: "TOTAL L2",
            color: [40, 150, 90],
            points: pick(|r| Some(r.losses.total_l2)),
        },
        Series { label: "RECON", color: [215, 70, 60], points: pick(|r| Some(r.losses.recon)) },
        Series {
            label: "CONTENT",
            color: [60, 120, 215],
            points: pick(|r| Some(r.losses.content)),
        },
        Series { label: "ADV", color: [230, 160, 40], points: pick(|r| Some(r.losses.adv)) },
        Series { label: "GE2E", color: [90, 90, 90], points: pick(|r| r.losses.ge2e) },
    ];
    // Keep the two composite losses unconditionally; drop optional series
    // that never move off zero (they were not part of this regime).
    series.retain(|s| {
        s.label.starts_with("TOTAL") || s.points.iter().any(|&(_, v)| v != 0.0)
    });
    series.retain(|s| !s.points.is_empty());
    series
}

fn plot_loss_curves(records: &[MetricsRecord], path: &Path) -> Result<()> {
    let series = curve_series(records);
    let mut canvas = Canvas::new(CURVE_W, CURVE_H);
    let (x0, x1) = (CURVE_LEFT, CURVE_W as i64 - CURVE_RIGHT);
    let (y0, y1) = (CURVE_TOP, CURVE_H as i64 - CURVE_BOTTOM);

    let steps: Vec<u64> = records.iter().map(|r| r.step).collect();
    let (s_lo, s_hi) = (
        *steps.iter().min().expect("records nonempty") as f64,
        *steps.iter().max().expect("records nonempty") as f64,
    );
    let mut v_lo = f64::INFINITY;
    let mut v_hi = f64::NEG_INFINITY;
    for s in &series {
        for &(_, v) in &s.points {
            v_lo = v_lo.min(v);
            v_hi = v_hi.max(v);
        }
    }
    if !v_lo.is_finite() || !v_hi.is_finite() {
        v_lo = 0.0;
        v_hi = 1.0;
    }
    if v_hi - v_lo < 1e-12 {
        v_lo -= 1.0;
        v_hi += 1.0;
    }
    let pad = 0.05 * (v_hi - v_lo);
    let (v_lo, v_hi) = (v_lo - pad, v_hi + pad);

    let sx = |s: f64| -> i64 {
        if s_hi > s_lo {
            x0 + ((s - s_lo) / (s_hi - s_lo) * (x1 - x0) as f64).round() as i64
        } else {
            (x0 + x1) / 2
        }
    };
    let sy = |v: f64| -> i64 { y1 - ((v - v_lo) / (v_hi - v_lo) * (y1 - y0) as f64).round() as i64 };

    for i in 0..5 {
        let v = v_lo + (v_hi - v_lo) * i as f64 / 4.0;
        let y = sy(v);
        canvas.hline(x0, x1, y, GRID);
        let label = fmt_num(v);
        canvas.text(x0 - 8 - 6 * label.len() as i64, y - 3, &label, INK);
        let s = s_lo + (s_hi - s_lo) * i as f64 / 4.0;
        let x = sx(s);
        canvas.vline(x, y0, y1, GRID);
        let label = format!("{}", s.round() as i64);
        canvas.text(x - 3 * label.len() as i64, y1 + 8, &label, INK);
    }
    canvas.hline(x0, x1, y1, INK);
    canvas.vline(x0, y0, y1, INK);
    canvas.text(x0, 6, "TRAINING LOSSES", INK);
    canvas.text((x0 + x1) / 2 - 12, CURVE_H as i64 - 14, "STEP", INK);

    let mut lx = x0 + 130;
    for s in &series {
        canvas.fill_rect(lx, 6, 10, 7, s.color);
        let adv = canvas.text(lx + 14, 6, s.label, INK);
        lx += 14 + adv + 16;
    }

    for s in &series {
        for pair in s.points.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            canvas.line(sx(a.0 as f64), sy(a.1), sx(b.0 as f64), sy(b.1), s.color);
        }
        if s.points.len() == 1 {
            let (st, v) = s.points[0];
            canvas.fill_rect(sx(st as f64) - 1, sy(v) - 1, 3, 3, s.color);
        }
    }
    canvas.save(path)
}

// ----------------------------------------------------------- triptych

fn plot_triptych(spec: &TriptychSpec, path: &Path) -> Result<()> {
    let panels = [
        ("SOURCE", &spec.source),
        ("CONVERTED", &spec.converted),
        ("TARGET", &spec.target),
    ];
    let n_mels = spec.source.shape()[1];
    for (label, mel) in &panels {
        if mel.shape()[0] == 0 {
            return Err(Error::validation(format!("{label} mel has zero frames")));
        }
        if mel.shape()[1] != n_mels {
            return Err(Error::validation(format!(
                "{label} mel has {} bands, expected {n_mels}",
                mel.shape()[1]
            )));
        }
    }
    let frames = [
        spec.source.shape()[0],
        spec.converted.shape()[0],
        spec.target.shape()[0],
    ];
    let (w, h) = triptych_dims(frames, n_mels);
    let mut canvas = Canvas::new(w, h);

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (_, mel) in &panels {
        for &v in mel.iter() {
            if v.is_finite() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    let range = if hi > lo { hi - lo } else { 1.0 };

    let mut px0 = TRIPTYCH_MARGIN as i64;
    for (i, (label, mel)) in panels.iter().enumerate() {
        canvas.text(px0, 7, label, INK);
        let t_frames = mel.shape()[0];
        for t in 0..t_frames {
            for m in 0..n_mels {
                let v = ((mel[[t, m]] - lo) / range).clamp(0.0, 1.0);
                // Low bands at the bottom, like a spectrogram.
                let y = TRIPTYCH_TOP + (n_mels - 1 - m) * TRIPTYCH_ROW_SCALE;
                for dy in 0..TRIPTYCH_ROW_SCALE {
                    canvas.set(px0 + t as i64, (y + dy) as i64, heat(v));
                }
            }
        }
        let bottom = (TRIPTYCH_TOP + n_mels * TRIPTYCH_ROW_SCALE) as i64;
        canvas.text(px0, bottom + 5, &format!("{t_frames} FRAMES"), INK);
        px0 += frames[i] as i64 + TRIPTYCH_GAP as i64;
    }
    canvas.save(path)
}

// ---------------------------------------------------------- MCD bars

fn plot_mcd_bars(entries: &[(String, f64, f64)], path: &Path) -> Result<()> {
    let n = entries.len() as i64;
    let slot = 140i64;
    let w = (150 + slot * n).max(400) as usize;
    let h = 420usize;
    let (x0, y0, y1) = (70i64, 40i64, h as i64 - 60);
    let mut canvas = Canvas::new(w, h);

    let top = entries.iter().map(|e| e.1 + e.2).fold(0.0f64, f64::max);
    let top = if top > 0.0 { top * 1.15 } else { 1.0 };
    let sy = |v: f64| -> i64 { y1 - (v.clamp(0.0, top) / top * (y1 - y0) as f64).round() as i64 };

    for i in 0..5 {
        let v = top * i as f64 / 4.0;
        let y = sy(v);
        canvas.hline(x0, w as i64 - 20, y, GRID);
        let label = fmt_num(v);
        canvas.text(x0 - 8 - 6 * label.len() as i64, y - 3, &label, INK);
    }
    canvas.hline(x0, w as i64 - 20, y1, INK);
    canvas.vline(x0, y0, y1, INK);
    canvas.text(x0, 6, "MCD DB (LOWER IS BETTER)", INK);

    const BAR_COLORS: [[u8; 3]; 4] =
        [[60, 120, 215], [215, 70, 60], [40, 150, 90], [230, 160, 40]];
    for (i, (label, mean, std)) in entries.iter().enumerate() {
        let cx = x0 + 40 + slot * i as i64 + slot / 2;
        let bw = 60i64;
        let color = BAR_COLORS[i % BAR_COLORS.len()];
        canvas.fill_rect(cx - bw / 2, sy(*mean), bw, y1 - sy(*mean), color);
        // Spread whisker.
        canvas.vline(cx, sy(mean + std), sy((mean - std).max(0.0)), INK);
        canvas.hline(cx - 8, cx + 8, sy(mean + std), INK);
        canvas.hline(cx - 8, cx + 8, sy((mean - std).max(0.0)), INK);
        let value = format!("{mean:.2}");
        canvas.text(cx - 3 * value.len() as i64, sy(mean + std) - 12, &value, INK);
        canvas.text(cx - 3 * label.len() as i64, y1 + 8, label, INK);
    }
    canvas.save(path)
}

// -------------------------------------------------------- entry point

fn sanitize(name: &str) -> String {
    let cleaned: String = name
        .chars()
        .map(|c| {
            let c = c.to_ascii_lowercase();
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect();
    if cleaned.is_empty() {
        "unnamed".into()
    } else {
        cleaned
    }
}

/// Draws whatever the inputs support: loss curves when the metrics log
/// has readable records, one bar chart when any report is given, one
/// triptych per spec. Malformed log lines and an empty log are counted
/// as warnings rather than errors so a partial run still yields the
/// plots it can.
pub fn emit_plots(
    metrics_log: Option<&Path>,
    reports: &[EvalReport],
    triptychs: &[TriptychSpec],
    out_dir: &Path,
) -> Result<PlotsOutcome> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut outcome = PlotsOutcome { images: Vec::new(), warnings: 0 };

    if let Some(log_path) = metrics_log {
        let (records, skipped) = read_metrics_lenient(log_path)?;
        outcome.warnings += skipped;
        if records.is_empty() {
            outcome.warnings += 1;
            log::warn!(
                "metrics log {} has no readable records; skipping loss curves",
                log_path.display()
            );
        } else {
            let img = out_dir.join("loss_curves.png");
            plot_loss_curves(&records, &img)?;
            outcome.images.push(img);
        }
    }

    let mut bars: Vec<(String, f64, f64)> = Vec::new();
    for report in reports {
        bars.push((report.kind.clone(), report.mcd_mean, report.mcd_std));
        if let Some(b) = &report.baseline {
            bars.push((b.kind.clone(), b.mcd_mean, b.mcd_std));
        }
    }
    if !bars.is_empty() {
        let img = out_dir.join("mcd_comparison.png");
        plot_mcd_bars(&bars, &img)?;
        outcome.images.push(img);
    }

    for spec in triptychs {
        let img = out_dir.join(format!("mel_triptych_{}.png", sanitize(&spec.name)));
        plot_triptych(spec, &img)?;
        outcome.images.push(img);
    }
    Ok(outcome)
}
