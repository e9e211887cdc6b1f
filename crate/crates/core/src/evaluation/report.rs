//! Evaluating F on labeled style sets: per-style metrics, metrics CSV,
//! biased-alignment curves and feature export.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use dha_nn::Scalar;
use image::{Rgb, RgbImage};

use super::metrics::{aggregate_domains, ConfusionMatrix, DomainMetrics, StyleScore};
use crate::adaptation::SegNetwork;
use crate::data::{Image, SegMask, Split};
use crate::error::{invalid, DhaError, IoContext, Result};

const EVAL_BATCH: usize = 16;

/// Labeled images of one true style, used only for evaluation.
#[derive(Clone, Debug)]
pub struct StyleSet {
    pub style: String,
    pub split: Split,
    pub ids: Vec<String>,
    pub images: Vec<Image>,
    pub masks: Vec<SegMask>,
}

impl StyleSet {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Accumulated confusion of `net` over a set.
pub fn confusion<S: Scalar>(net: &SegNetwork<S>, set: &StyleSet) -> Result<ConfusionMatrix> {
    if set.is_empty() {
        return invalid(format!("style `{}` has no images", set.style));
    }
    let mut cm = ConfusionMatrix::new(net.classes());
    for (imgs, masks) in set.images.chunks(EVAL_BATCH).zip(set.masks.chunks(EVAL_BATCH)) {
        let refs: Vec<&Image> = imgs.iter().collect();
        for (p, t) in net.predict(&refs)?.iter().zip(masks) {
            cm.add(t, p)?;
        }
    }
    Ok(cm)
}

/// Per-style evaluation of one network.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub metrics: DomainMetrics,
    /// Per-class IoU for each style, in `metrics.compound ++ metrics.open` order.
    pub class_iou: Vec<Vec<Option<f64>>>,
}

pub fn evaluate<S: Scalar>(net: &SegNetwork<S>, sets: &[StyleSet]) -> Result<Evaluation> {
    let mut compound = Vec::new();
    let mut open = Vec::new();
    let mut class_iou = Vec::new();
    for split in [Split::Compound, Split::Open] {
        for set in sets.iter().filter(|s| s.split == split) {
            let cm = confusion(net, set)?;
            let score = StyleScore {
                style: set.style.clone(),
                miou: cm.miou()?,
                images: set.len(),
            };
            class_iou.push(cm.class_iou());
            if split == Split::Compound { compound.push(score) } else { open.push(score) }
        }
    }
    Ok(Evaluation {
        metrics: aggregate_domains(compound, open)?,
        class_iou,
    })
}

pub const METRICS_HEADER: &str = "run_id,iteration,split,style,class,iou,miou";

/// Metrics CSV rows: one per (style, class), then the four aggregates with
/// class `all`. Undefined IoUs are left empty.
pub fn metrics_csv_rows(run_id: &str, iteration: usize, eval: &Evaluation) -> String {
    let mut out = String::new();
    let m = &eval.metrics;
    let styles = m.compound.iter().map(|s| (Split::Compound, s)).chain(m.open.iter().map(|s| (Split::Open, s)));
    for ((split, score), ious) in styles.zip(&eval.class_iou) {
        for (c, iou) in ious.iter().enumerate() {
            let iou = iou.map(|v| format!("{v:.6}")).unwrap_or_default();
            let _ = writeln!(out, "{run_id},{iteration},{split},{},{c},{iou},{:.6}", score.style, score.miou);
        }
    }
    for (name, v) in [("C", m.c), ("C+O", m.c_plus_o), ("C_weighted", m.c_weighted), ("C+O_weighted", m.c_plus_o_weighted)] {
        let _ = writeln!(out, "{run_id},{iteration},aggregate,{name},all,,{v:.6}");
    }
    out
}

/// Per-style mIoU at each checkpoint iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct Curves {
    pub iterations: Vec<usize>,
    pub styles: Vec<String>,
    /// `values[s][i]`: style `s` at `iterations[i]`.
    pub values: Vec<Vec<f64>>,
}

impl Curves {
    pub fn style(&self, name: &str) -> Option<&[f64]> {
        self.styles.iter().position(|s| s == name).map(|i| self.values[i].as_slice())
    }

    /// Peak minus final value of one style's curve.
    pub fn drop_from_peak(&self, name: &str) -> Option<f64> {
        let v = self.style(name)?;
        let peak = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some(peak - v.last()?)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,style,miou\n");
        for (i, it) in self.iterations.iter().enumerate() {
            for (s, name) in self.styles.iter().enumerate() {
                let _ = writeln!(out, "{it},{name},{:.6}", self.values[s][i]);
            }
        }
        out
    }

    /// Inverse of [`Curves::to_csv`].
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, msg: &str| DhaError::Parse {
            path: path.to_path_buf(),
            line,
            msg: msg.into(),
        };
        let mut curves = Curves {
            iterations: Vec::new(),
            styles: Vec::new(),
            values: Vec::new(),
        };
        for (i, line) in text.lines().enumerate().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 3 {
                return Err(err(i + 1, "expected iteration,style,miou"));
            }
            let it: usize = f[0].parse().map_err(|_| err(i + 1, "bad iteration"))?;
            let v: f64 = f[2].parse().map_err(|_| err(i + 1, "bad miou"))?;
            if curves.iterations.last() != Some(&it) {
                curves.iterations.push(it);
            }
            let s = match curves.styles.iter().position(|s| s == f[1]) {
                Some(s) => s,
                None => {
                    curves.styles.push(f[1].to_string());
                    curves.values.push(Vec::new());
                    curves.styles.len() - 1
                }
            };
            curves.values[s].push(v);
        }
        if curves.values.iter().any(|v| v.len() != curves.iterations.len()) {
            return Err(err(0, "every style needs a value at every iteration"));
        }
        Ok(curves)
    }

    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(DhaError::Missing(path.to_path_buf()));
        }
        Self::parse(&fs::read_to_string(path).at(path)?, path)
    }

    /// Writes `curves.csv` and one `curve_<style>.png` per style.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).at(dir)?;
        let csv = dir.join("curves.csv");
        fs::write(&csv, self.to_csv()).at(&csv)?;
        for (s, name) in self.styles.iter().enumerate() {
            let path = dir.join(format!("curve_{name}.png"));
            line_plot(&self.iterations, &self.values[s])
                .save(&path)
                .map_err(|e| DhaError::Image {
                    path: path.clone(),
                    msg: e.to_string(),
                })?;
        }
        Ok(())
    }
}

/// Evaluate every snapshot on every set.
pub fn biased_alignment_curves<S: Scalar>(snapshots: &[(usize, SegNetwork<S>)], sets: &[StyleSet]) -> Result<Curves> {
    if snapshots.len() < 2 {
        return invalid(format!("biased-alignment curves need at least 2 checkpoints, got {}", snapshots.len()));
    }
    let mut values = vec![Vec::with_capacity(snapshots.len()); sets.len()];
    for (_, net) in snapshots {
        for (s, set) in sets.iter().enumerate() {
            values[s].push(confusion(net, set)?.miou()?);
        }
    }
    Ok(Curves {
        iterations: snapshots.iter().map(|(i, _)| *i).collect(),
        styles: sets.iter().map(|s| s.style.clone()).collect(),
        values,
    })
}

const PLOT_W: u32 = 320;
const PLOT_H: u32 = 200;
const MARGIN: u32 = 20;

/// Minimal line chart: light grid at 0.25 steps of mIoU, axes, and the
/// polyline with a dot per checkpoint. The y axis spans [0, 1].
fn line_plot(xs: &[usize], ys: &[f64]) -> RgbImage {
    let mut img = RgbImage::from_pixel(PLOT_W, PLOT_H, Rgb([255, 255, 255]));
    let (x0, x1) = (MARGIN as f64, (PLOT_W - MARGIN) as f64);
    let (y0, y1) = ((PLOT_H - MARGIN) as f64, MARGIN as f64);
    let lo = *xs.first().unwrap_or(&0) as f64;
    let hi = (*xs.last().unwrap_or(&1) as f64).max(lo + 1.0);
    let px = |x: usize| x0 + (x as f64 - lo) / (hi - lo) * (x1 - x0);
    let py = |y: f64| y0 + y.clamp(0.0, 1.0) * (y1 - y0);
    for q in 0..=4 {
        let y = py(q as f64 / 4.0).round() as u32;
        let shade = if q == 0 { [0, 0, 0] } else { [220, 220, 220] };
        for x in MARGIN..=PLOT_W - MARGIN {
            img.put_pixel(x, y, Rgb(shade));
        }
    }
    for y in MARGIN..=PLOT_H - MARGIN {
        img.put_pixel(MARGIN, y, Rgb([0, 0, 0]));
    }
    let pts: Vec<(f64, f64)> = xs.iter().zip(ys).map(|(&x, &y)| (px(x), py(y))).collect();
    for w in pts.windows(2) {
        draw_line(&mut img, w[0], w[1], Rgb([200, 40, 40]));
    }
    for &(x, y) in &pts {
        for dy in -1i32..=1 {
            for dx in -1i32..=1 {
                put(&mut img, x.round() as i32 + dx, y.round() as i32 + dy, Rgb([30, 30, 160]));
            }
        }
    }
    img
}

fn put(img: &mut RgbImage, x: i32, y: i32, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn draw_line(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), c: Rgb<u8>) {
    let steps = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).max(1);
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        put(img, (a.0 + t * (b.0 - a.0)).round() as i32, (a.1 + t * (b.1 - a.1)).round() as i32, c);
    }
}

/// One exported feature row.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRow {
    pub image_id: String,
    pub split: Split,
    pub style: Option<u32>,
    pub values: Vec<f64>,
}

/// Feature matrix written as a `width N` header line followed by
/// tab-separated `image_id`, `split`, `style` (empty if unknown) and the
/// space-separated values.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExport {
    pub width: usize,
    pub rows: Vec<FeatureRow>,
}

pub struct FeatureInput<'a> {
    pub image_id: &'a str,
    pub split: Split,
    pub style: Option<u32>,
    pub image: &'a Image,
}

pub fn export_features<S: Scalar>(net: &SegNetwork<S>, inputs: &[FeatureInput<'_>], layer: &str) -> Result<FeatureExport> {
    let mut rows = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(EVAL_BATCH) {
        let imgs: Vec<&Image> = chunk.iter().map(|i| i.image).collect();
        for (inp, feats) in chunk.iter().zip(net.layer_features(&imgs, layer)?) {
            rows.push(FeatureRow {
                image_id: inp.image_id.to_string(),
                split: inp.split,
                style: inp.style,
                values: feats.iter().map(|v| v.to_f64().unwrap()).collect(),
            });
        }
    }
    // width is known even with no rows
    let width = match rows.first() {
        Some(r) => r.values.len(),
        None => net.layer_features(&[&Image::filled(16, 16, [0.0; 3])?], layer)?[0].len(),
    };
    Ok(FeatureExport { width, rows })
}

impl FeatureExport {
    pub fn to_text(&self) -> String {
        let mut out = format!("width {}\n", self.width);
        for r in &self.rows {
            let style = r.style.map(|s| s.to_string()).unwrap_or_default();
            let vals: Vec<String> = r.values.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{}\t{}\t{}\t{}", r.image_id, r.split, style, vals.join(" "));
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| DhaError::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut lines = text.lines();
        let width = lines
            .next()
            .and_then(|h| h.strip_prefix("width "))
            .and_then(|w| w.trim().parse::<usize>().ok())
            .ok_or_else(|| err(1, "missing `width N` header".into()))?;
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let ln = i + 2;
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(err(ln, format!("expected 4 fields, found {}", f.len())));
            }
            let split = f[1].parse::<Split>().map_err(|e| err(ln, e))?;
            let style = if f[2].is_empty() {
                None
            } else {
                Some(f[2].parse::<u32>().map_err(|_| err(ln, format!("bad style `{}`", f[2])))?)
            };
            let values = f[3]
                .split(' ')
                .map(|v| v.parse::<f64>().map_err(|_| err(ln, format!("bad value `{v}`"))))
                .collect::<Result<Vec<_>>>()?;
            if values.len() != width {
                return Err(err(ln, format!("{} values, header says {width}", values.len())));
            }
            rows.push(FeatureRow {
                image_id: f[0].into(),
                split,
                style,
                values,
            });
        }
        Ok(Self { width, rows })
    }
}
