//! Pixel accuracy measures, boundary F1 and error overlays.

use std::fmt;

use crate::codec::ImageBuffer;
use crate::error::{Error, Result};
use crate::label::{ClassMap, LabelMask, ROI};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        Self { k, counts: vec![0; k * k] }
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    /// Pixels with ground truth `g` predicted as `p`.
    pub fn get(&self, g: usize, p: usize) -> u64 {
        self.counts[g * self.k + p]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, g: usize) -> u64 {
        (0..self.k).map(|p| self.get(g, p)).sum()
    }

    pub fn col_sum(&self, p: usize) -> u64 {
        (0..self.k).map(|g| self.get(g, p)).sum()
    }

    pub fn accumulate(&mut self, gt: &ClassMap, pred: &ClassMap) -> Result<()> {
        if (gt.width, gt.height) != (pred.width, pred.height) {
            return Err(Error::Shape(format!(
                "ground truth is {}x{} but prediction is {}x{}",
                gt.width, gt.height, pred.width, pred.height
            )));
        }
        for (&g, &p) in gt.classes.iter().zip(&pred.classes) {
            if g >= self.k || p >= self.k {
                return Err(Error::LabelRange(format!("class {} >= K={}", g.max(p), self.k)));
            }
            self.counts[g * self.k + p] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.k != self.k {
            return Err(Error::Shape(format!("cannot merge K={} into K={}", other.k, self.k)));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

pub fn confusion(gt: &ClassMap, pred: &ClassMap, k: usize) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(k);
    cm.accumulate(gt, pred)?;
    Ok(cm)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub iou: Vec<f64>,
    pub mean_iou: f64,
    /// Per-class boundary F1, when computed.
    pub bf_score: Option<Vec<f64>>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Micro-averaged metrics; any 0/0 is reported as 0.
pub fn metrics(cm: &ConfusionMatrix) -> MetricReport {
    let k = cm.classes();
    let (mut precision, mut recall, mut f1, mut iou) = (vec![], vec![], vec![], vec![]);
    for c in 0..k {
        let tp = cm.get(c, c);
        let fp = cm.col_sum(c) - tp;
        let fn_ = cm.row_sum(c) - tp;
        let p = ratio(tp, tp + fp);
        let r = ratio(tp, tp + fn_);
        precision.push(p);
        recall.push(r);
        f1.push(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) });
        iou.push(ratio(tp, tp + fp + fn_));
    }
    let mean_iou = iou.iter().sum::<f64>() / k as f64;
    MetricReport {
        precision,
        recall,
        f1,
        iou,
        mean_iou,
        bf_score: None,
    }
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "class,precision,recall,f1,iou,bf_score";

    /// One row per class followed by a `mean` row carrying mean IoU.
    pub fn to_csv(&self, class_names: &[&str]) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for (c, name) in class_names.iter().enumerate().take(self.iou.len()) {
            let bf = self
                .bf_score
                .as_ref()
                .map(|b| format!("{:.6}", b[c]))
                .unwrap_or_default();
            out.push_str(&format!(
                "{name},{:.6},{:.6},{:.6},{:.6},{bf}\n",
                self.precision[c], self.recall[c], self.f1[c], self.iou[c]
            ));
        }
        out.push_str(&format!("mean,,,,{:.6},\n", self.mean_iou));
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(Self::CSV_HEADER) {
            return Err(Error::Codec("metric report CSV has an unexpected header".into()));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::Codec(format!("bad number {s:?} in metric report")))
        };
        let mut r = MetricReport {
            precision: vec![],
            recall: vec![],
            f1: vec![],
            iou: vec![],
            mean_iou: f64::NAN,
            bf_score: None,
        };
        let mut bf = vec![];
        for line in lines {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(Error::Codec(format!("metric report row {line:?} needs 6 fields")));
            }
            if f[0] == "mean" {
                r.mean_iou = parse(f[4])?;
                continue;
            }
            r.precision.push(parse(f[1])?);
            r.recall.push(parse(f[2])?);
            r.f1.push(parse(f[3])?);
            r.iou.push(parse(f[4])?);
            if !f[5].is_empty() {
                bf.push(parse(f[5])?);
            }
        }
        if r.mean_iou.is_nan() || r.iou.is_empty() {
            return Err(Error::Codec("metric report has no classes or no mean row".into()));
        }
        if !bf.is_empty() {
            r.bf_score = Some(bf);
        }
        Ok(r)
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>6} {:>9} {:>9} {:>9} {:>9} {:>9}", "class", "precision", "recall", "f1", "iou", "bf")?;
        for c in 0..self.iou.len() {
            let bf = self.bf_score.as_ref().map(|b| format!("{:.4}", b[c])).unwrap_or_else(|| "-".into());
            writeln!(
                f,
                "{c:>6} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {bf:>9}",
                self.precision[c], self.recall[c], self.f1[c], self.iou[c]
            )?;
        }
        write!(f, "mean IoU {:.4}", self.mean_iou)
    }
}

/// Pixels of class `k` that touch a non-`k` pixel or the frame (4-adjacency).
pub fn boundary(map: &ClassMap, k: usize) -> Vec<bool> {
    let (w, h) = (map.width, map.height);
    let mut out = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            if map.classes[y * w + x] != k {
                continue;
            }
            let on_frame = x == 0 || y == 0 || x + 1 == w || y + 1 == h;
            out[y * w + x] = on_frame
                || map.classes[y * w + x - 1] != k
                || map.classes[y * w + x + 1] != k
                || map.classes[(y - 1) * w + x] != k
                || map.classes[(y + 1) * w + x] != k;
        }
    }
    out
}

/// Exact squared Euclidean distance to the nearest set pixel; `None` when the
/// set is empty. Column pass then a row-wise minimum over columns.
pub fn squared_distance_map(set: &[bool], width: usize, height: usize) -> Option<Vec<u64>> {
    if !set.iter().any(|&b| b) {
        return None;
    }
    let mut vert: Vec<Option<u64>> = vec![None; width * height];
    for x in 0..width {
        let mut last: Option<usize> = None;
        for y in 0..height {
            if set[y * width + x] {
                last = Some(y);
            }
            vert[y * width + x] = last.map(|l| (y - l) as u64);
        }
        let mut next: Option<usize> = None;
        for y in (0..height).rev() {
            if set[y * width + x] {
                next = Some(y);
            }
            if let Some(n) = next {
                let d = (n - y) as u64;
                let cell = &mut vert[y * width + x];
                *cell = Some(cell.map_or(d, |v| v.min(d)));
            }
        }
    }
    let mut out = vec![u64::MAX; width * height];
    for y in 0..height {
        for x in 0..width {
            let mut best = u64::MAX;
            for xs in 0..width {
                if let Some(g) = vert[y * width + xs] {
                    let dx = x.abs_diff(xs) as u64;
                    best = best.min(dx * dx + g * g);
                }
            }
            out[y * width + x] = best;
        }
    }
    Some(out)
}

/// Default BF tolerance: 0.75% of the diagonal, rounded up, at least one pixel.
pub fn default_bf_tolerance(width: usize, height: usize) -> f64 {
    let diag = ((width * width + height * height) as f64).sqrt();
    (0.0075 * diag).ceil().max(1.0)
}

pub fn bf_score(gt: &ClassMap, pred: &ClassMap, k: usize, theta: f64) -> Result<f64> {
    if (gt.width, gt.height) != (pred.width, pred.height) {
        return Err(Error::Shape("BF score needs equal extents".into()));
    }
    let (w, h) = (gt.width, gt.height);
    let bg = boundary(gt, k);
    let bp = boundary(pred, k);
    let (ng, np) = (bg.iter().filter(|&&b| b).count(), bp.iter().filter(|&&b| b).count());
    match (ng, np) {
        (0, 0) => return Ok(1.0),
        (0, _) | (_, 0) => return Ok(0.0),
        _ => {}
    }
    let limit = theta * theta;
    let dg = squared_distance_map(&bg, w, h).expect("nonempty");
    let dp = squared_distance_map(&bp, w, h).expect("nonempty");
    let matched = |set: &[bool], dist: &[u64]| {
        set.iter()
            .zip(dist)
            .filter(|(&b, &d)| b && d as f64 <= limit)
            .count()
    };
    let precision = matched(&bp, &dg) as f64 / np as f64;
    let recall = matched(&bg, &dp) as f64 / ng as f64;
    Ok(if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    })
}

pub const WHITE: [u8; 3] = [255, 255, 255];
pub const GREEN: [u8; 3] = [0, 255, 0];
pub const MAGENTA: [u8; 3] = [255, 0, 255];
pub const BLACK: [u8; 3] = [0, 0, 0];
pub const PALETTE: [[u8; 3]; 4] = [WHITE, GREEN, MAGENTA, BLACK];

/// True positives white, false positives green, false negatives magenta,
/// true negatives black, with the ROI as the foreground class.
pub fn overlay(gt: &LabelMask, pred: &LabelMask) -> Result<ImageBuffer> {
    if (gt.width(), gt.height()) != (pred.width(), pred.height()) {
        return Err(Error::Shape("overlay needs equal extents".into()));
    }
    let px = gt
        .pixels()
        .iter()
        .zip(pred.pixels())
        .flat_map(|(&g, &p)| match (g == ROI, p == ROI) {
            (true, true) => WHITE,
            (false, true) => GREEN,
            (true, false) => MAGENTA,
            (false, false) => BLACK,
        })
        .collect();
    ImageBuffer::rgb(gt.width(), gt.height(), px)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub architecture: String,
    pub augmentation: String,
    pub report: MetricReport,
}

pub const BASELINE: &str = "initial";

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub delta_rows: Vec<Vec<String>>,
}

fn csv_lines(header: &[String], rows: &[Vec<String>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    out
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        csv_lines(&self.header, &self.rows)
    }

    pub fn deltas_csv(&self) -> String {
        csv_lines(&self.header, &self.delta_rows)
    }
}

/// Table with one row per run: per-class precision, recall, F1-score and IoU
/// followed by the mean IoU. `classes` lists `(class id, display name)` in
/// column order. Deltas are against the `initial` run of the same architecture.
pub fn compare_runs(runs: &[RunReport], classes: &[(usize, &str)]) -> Result<Comparison> {
    if runs.len() < 2 {
        return Err(Error::Config(format!("need at least two runs to compare, got {}", runs.len())));
    }
    let mut header = vec!["architecture".to_string(), "augmentation".to_string()];
    for metric in ["precision", "recall", "F1-score", "IoU"] {
        for (_, name) in classes {
            header.push(format!("{metric} {name}"));
        }
    }
    header.push("mean IoU".into());

    let values = |r: &MetricReport| -> Vec<f64> {
        let mut v = vec![];
        for series in [&r.precision, &r.recall, &r.f1, &r.iou] {
            for &(id, _) in classes {
                v.push(series[id]);
            }
        }
        v.push(r.mean_iou);
        v
    };
    for run in runs {
        if let Some(&(id, _)) = classes.iter().find(|(id, _)| *id >= run.report.iou.len()) {
            return Err(Error::Config(format!("run {} has no class {id}", run.augmentation)));
        }
    }
    let mut rows = vec![];
    let mut delta_rows = vec![];
    for run in runs {
        let base = runs
            .iter()
            .find(|r| r.architecture == run.architecture && r.augmentation == BASELINE)
            .ok_or_else(|| {
                Error::Config(format!("no {BASELINE:?} run for architecture {}", run.architecture))
            })?;
        let v = values(&run.report);
        let b = values(&base.report);
        let mut row = vec![run.architecture.clone(), run.augmentation.clone()];
        row.extend(v.iter().map(|x| format!("{x:.6}")));
        rows.push(row);
        let mut drow = vec![run.architecture.clone(), run.augmentation.clone()];
        drow.extend(v.iter().zip(&b).map(|(x, y)| format!("{:.6}", x - y)));
        delta_rows.push(drow);
    }
    Ok(Comparison {
        header,
        rows,
        delta_rows,
    })
}
