//! Multi-scale sliding-window detection: window schedule, patch grid, batched
//! scoring, thresholding, single-linkage clustering and max-boundary boxes.

use std::collections::HashMap;
use std::thread;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{resize_region, BBox, Image, Rgb};
use crate::model::{output_module, DisCnn, InferenceNet, Scratch, INPUT_CHANNELS, INPUT_SIZE, OUTPUT_DIM};

pub const DEFAULT_STRIDE_DIV: usize = 3;
pub const DEFAULT_WA_DIV: usize = 20;
pub const DEFAULT_BATCH_CAP: usize = 512;

/// One scale of the schedule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub sws: usize,
    pub stride: usize,
    /// Decrement applied after this scale.
    pub wa: usize,
}

/// Window sizes in visiting order, strictly decreasing.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct WindowSchedule {
    pub windows: Vec<Window>,
    pub min_sws: usize,
}

impl WindowSchedule {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Total patch count over all scales on a `width x height` image.
    pub fn patch_count(&self, width: usize, height: usize) -> usize {
        self.windows
            .iter()
            .map(|w| grid_positions(width, w.sws, w.stride).len() * grid_positions(height, w.sws, w.stride).len())
            .sum()
    }
}

/// Divisors turning a window size into its stride and attenuation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Divisors {
    pub stride_div: usize,
    pub wa_div: usize,
}

impl Default for Divisors {
    fn default() -> Self {
        Divisors {
            stride_div: DEFAULT_STRIDE_DIV,
            wa_div: DEFAULT_WA_DIV,
        }
    }
}

impl Divisors {
    pub fn window(&self, sws: usize) -> Window {
        Window {
            sws,
            stride: (sws / self.stride_div).max(1),
            wa: (sws / self.wa_div).max(1),
        }
    }
}

/// Schedule for an `l x m` image (height x width).
///
/// Without `range`, starts at `min(l, m)` and continues while `sws > min_sws`.
/// With `range = (hi, lo)`, starts at `hi` and continues while `sws > lo`.
/// The first window is always emitted.
pub fn window_schedule(l: usize, m: usize, min_sws: usize, range: Option<(usize, usize)>) -> Result<WindowSchedule> {
    window_schedule_with(l, m, min_sws, range, Divisors::default())
}

pub fn window_schedule_with(
    l: usize,
    m: usize,
    min_sws: usize,
    range: Option<(usize, usize)>,
    div: Divisors,
) -> Result<WindowSchedule> {
    if div.stride_div == 0 || div.wa_div == 0 {
        return Err(Error::invalid("stride and attenuation divisors must be positive"));
    }
    let side = l.min(m);
    let (start, floor) = match range {
        None => {
            if min_sws == 0 {
                return Err(Error::invalid("min_sws must be at least 1"));
            }
            if min_sws > side {
                return Err(Error::invalid(format!(
                    "min_sws {min_sws} exceeds the smaller image side {side}"
                )));
            }
            (side, min_sws)
        }
        Some((hi, lo)) => {
            if hi == 0 || lo >= hi {
                return Err(Error::invalid(format!("window range [{hi}, {lo}) is empty")));
            }
            if hi > side {
                return Err(Error::invalid(format!(
                    "window range start {hi} exceeds the smaller image side {side}"
                )));
            }
            (hi, lo)
        }
    };
    let mut windows = Vec::new();
    let mut sws = start;
    loop {
        let w = div.window(sws);
        windows.push(w);
        sws -= w.wa.min(sws);
        if sws == 0 || sws <= floor {
            break;
        }
    }
    Ok(WindowSchedule { windows, min_sws: floor })
}

/// Window origins along one axis: the stride grid, plus a final origin
/// flush with the far edge when the grid stops short of it.
pub fn grid_positions(extent: usize, sws: usize, stride: usize) -> Vec<usize> {
    if sws > extent || sws == 0 {
        return Vec::new();
    }
    let mut v: Vec<usize> = (0..=extent - sws).step_by(stride.max(1)).collect();
    if *v.last().expect("origin 0 is always on the grid") + sws < extent {
        v.push(extent - sws);
    }
    v
}

/// Top-left corners of every window of size `sws` in row-major order.
pub fn patch_positions(width: usize, height: usize, sws: usize, stride: usize) -> Result<Vec<(usize, usize)>> {
    if sws == 0 || stride == 0 {
        return Err(Error::invalid("window size and stride must be positive"));
    }
    if sws > width || sws > height {
        return Err(Error::invalid(format!("window {sws} larger than {width}x{height} image")));
    }
    let xs = grid_positions(width, sws, stride);
    let ys = grid_positions(height, sws, stride);
    Ok(ys.iter().flat_map(|&y| xs.iter().map(move |&x| (x, y))).collect())
}

/// Box and pixels of every window of size `sws`, row-major.
pub fn extract_patches(image: &Image, sws: usize, stride: usize) -> Result<Vec<(BBox, Image)>> {
    patch_positions(image.width(), image.height(), sws, stride)?
        .into_iter()
        .map(|(x, y)| Ok((square(x, y, sws), image.crop(x, y, sws, sws)?)))
        .collect()
}

fn square(x: usize, y: usize, sws: usize) -> BBox {
    BBox {
        xmin: x as i64,
        ymin: y as i64,
        xmax: (x + sws) as i64,
        ymax: (y + sws) as i64,
    }
}

/// A scored window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub xmin: i64,
    pub ymin: i64,
    pub xmax: i64,
    pub ymax: i64,
    pub sws: usize,
    pub module: f32,
}

impl PatchRecord {
    pub fn bbox(&self) -> BBox {
        BBox {
            xmin: self.xmin,
            ymin: self.ymin,
            xmax: self.xmax,
            ymax: self.ymax,
        }
    }

    pub fn center(&self) -> (f64, f64) {
        self.bbox().center()
    }
}

/// Scores windows with an infer-mode network, resizing each to the network input.
///
/// Windows are processed in groups of at most `batch_cap`. Windows of a single
/// colour are scored once per colour; their resized input is identical regardless
/// of window size.
pub struct Scorer<'a> {
    net: &'a InferenceNet,
    batch_cap: usize,
    memo: HashMap<Rgb, f32>,
    scratch: Scratch<f32>,
    out: Vec<f32>,
    inputs: Vec<f32>,
    pending: Vec<usize>,
    forwards: usize,
}

impl<'a> Scorer<'a> {
    pub fn new(net: &'a InferenceNet, batch_cap: usize) -> Self {
        Scorer {
            net,
            batch_cap: batch_cap.max(1),
            memo: HashMap::new(),
            scratch: Scratch::default(),
            out: Vec::with_capacity(OUTPUT_DIM),
            inputs: Vec::new(),
            pending: Vec::new(),
            forwards: 0,
        }
    }

    /// Network evaluations performed so far.
    pub fn forwards(&self) -> usize {
        self.forwards
    }

    fn uniform_module(&mut self, color: Rgb) -> f32 {
        if let Some(&m) = self.memo.get(&color) {
            return m;
        }
        let img = Image::new(INPUT_SIZE, INPUT_SIZE, color).expect("positive extents");
        self.inputs.clear();
        img.write_normalized_chw(&mut self.inputs);
        self.net.forward_sample(&self.inputs, &mut self.scratch, &mut self.out);
        self.forwards += 1;
        let m = output_module(&self.out);
        self.memo.insert(color, m);
        m
    }

    fn flush(&mut self, records: &mut [PatchRecord]) {
        let plane = INPUT_CHANNELS * INPUT_SIZE * INPUT_SIZE;
        for (k, &idx) in self.pending.iter().enumerate() {
            self.net
                .forward_sample(&self.inputs[k * plane..(k + 1) * plane], &mut self.scratch, &mut self.out);
            records[idx].module = output_module(&self.out);
        }
        self.forwards += self.pending.len();
        self.pending.clear();
        self.inputs.clear();
    }

    /// Scores square windows of `image`; output order equals input order.
    pub fn score(&mut self, image: &Image, sws: usize, positions: &[(usize, usize)]) -> Vec<PatchRecord> {
        let mut records: Vec<PatchRecord> = positions
            .iter()
            .map(|&(x, y)| PatchRecord {
                xmin: x as i64,
                ymin: y as i64,
                xmax: (x + sws) as i64,
                ymax: (y + sws) as i64,
                sws,
                module: 0.0,
            })
            .collect();
        self.inputs.clear();
        self.pending.clear();
        for (i, &(x, y)) in positions.iter().enumerate() {
            if let Some(c) = image.region_is_uniform(x, y, sws, sws) {
                if !self.pending.is_empty() {
                    self.flush(&mut records);
                }
                records[i].module = self.uniform_module(c);
                continue;
            }
            resize_region(image, x, y, sws, sws, INPUT_SIZE, INPUT_SIZE).write_normalized_chw(&mut self.inputs);
            self.pending.push(i);
            if self.pending.len() == self.batch_cap {
                self.flush(&mut records);
            }
        }
        self.flush(&mut records);
        records
    }
}

/// Scores already-cut square patches (each `sws x sws`), in order.
pub fn score_patches(model: &DisCnn, patches: &[(BBox, Image)], batch_cap: usize) -> Result<Vec<PatchRecord>> {
    let net = InferenceNet::new(model)?;
    let mut scorer = Scorer::new(&net, batch_cap);
    let mut out = Vec::with_capacity(patches.len());
    for (b, img) in patches {
        if img.width() != img.height() {
            return Err(Error::invalid(format!("patch {}x{} is not square", img.width(), img.height())));
        }
        let mut r = scorer.score(img, img.width(), &[(0, 0)]);
        let mut rec = r.pop().expect("one position");
        rec.xmin = b.xmin;
        rec.ymin = b.ymin;
        rec.xmax = b.xmax;
        rec.ymax = b.ymax;
        out.push(rec);
    }
    Ok(out)
}

/// Records whose module strictly exceeds `thr`, order preserved.
pub fn threshold_filter(records: &[PatchRecord], thr: f64) -> Vec<PatchRecord> {
    records.iter().filter(|r| f64::from(r.module) > thr).copied().collect()
}

/// A connected group of positive windows.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DetectionCluster {
    pub members: Vec<PatchRecord>,
    /// Component-wise min/max over member boxes.
    pub bbox: BBox,
    pub member_count: usize,
    pub max_module: f32,
    /// Distinct member window sizes, descending.
    pub scales_present: Vec<usize>,
}

/// `[min xmin, min ymin, max xmax, max ymax]` over the records.
pub fn max_boundary_box(records: &[PatchRecord]) -> Result<BBox> {
    let first = records
        .first()
        .ok_or_else(|| Error::invalid("max-boundary box of an empty cluster"))?;
    Ok(records.iter().skip(1).fold(first.bbox(), |b, r| BBox {
        xmin: b.xmin.min(r.xmin),
        ymin: b.ymin.min(r.ymin),
        xmax: b.xmax.max(r.xmax),
        ymax: b.ymax.max(r.ymax),
    }))
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

fn record_key(r: &PatchRecord) -> (i64, i64, std::cmp::Reverse<usize>, u32) {
    (r.ymin, r.xmin, std::cmp::Reverse(r.sws), r.module.to_bits())
}

/// Single-linkage clusters: records are joined when their centres lie within
/// `link_distance`. Members and clusters come out in a canonical order, so
/// the result does not depend on input order.
pub fn cluster_records(records: &[PatchRecord], link_distance: f64) -> Vec<DetectionCluster> {
    let mut sorted = records.to_vec();
    sorted.sort_by_key(record_key);
    let n = sorted.len();
    let centers: Vec<(f64, f64)> = sorted.iter().map(PatchRecord::center).collect();
    let mut parent: Vec<usize> = (0..n).collect();
    let limit = link_distance * link_distance;
    for i in 0..n {
        for j in i + 1..n {
            let (dx, dy) = (centers[i].0 - centers[j].0, centers[i].1 - centers[j].1);
            if dx * dx + dy * dy <= limit {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: Vec<Vec<PatchRecord>> = Vec::new();
    let mut slot: HashMap<usize, usize> = HashMap::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        let g = *slot.entry(root).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(sorted[i]);
    }
    groups
        .into_iter()
        .map(|members| {
            let mut scales: Vec<usize> = members.iter().map(|r| r.sws).collect();
            scales.sort_unstable_by(|a, b| b.cmp(a));
            scales.dedup();
            DetectionCluster {
                bbox: max_boundary_box(&members).expect("nonempty group"),
                member_count: members.len(),
                max_module: members.iter().map(|r| r.module).fold(f32::MIN, f32::max),
                scales_present: scales,
                members,
            }
        })
        .collect()
}

/// Detection parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectConfig {
    pub min_sws: usize,
    pub thr: f64,
    /// Centre distance for clustering; `min_sws` (or the range floor) when absent.
    #[serde(default)]
    pub link_distance: Option<f64>,
    #[serde(default = "default_batch_cap")]
    pub batch_cap: usize,
    /// Fixed window range `[hi, lo)` replacing the full-image schedule.
    #[serde(default)]
    pub range: Option<(usize, usize)>,
    #[serde(default = "default_stride_div")]
    pub stride_div: usize,
    #[serde(default = "default_wa_div")]
    pub wa_div: usize,
}

fn default_batch_cap() -> usize {
    DEFAULT_BATCH_CAP
}

fn default_stride_div() -> usize {
    DEFAULT_STRIDE_DIV
}

fn default_wa_div() -> usize {
    DEFAULT_WA_DIV
}

impl DetectConfig {
    pub fn new(min_sws: usize, thr: f64) -> Self {
        DetectConfig {
            min_sws,
            thr,
            link_distance: None,
            batch_cap: DEFAULT_BATCH_CAP,
            range: None,
            stride_div: DEFAULT_STRIDE_DIV,
            wa_div: DEFAULT_WA_DIV,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.thr.is_finite() && self.thr >= 0.0) {
            return Err(Error::invalid(format!("thr must be a finite value >= 0, got {}", self.thr)));
        }
        if self.batch_cap == 0 {
            return Err(Error::invalid("batch_cap must be at least 1"));
        }
        if let Some(d) = self.link_distance {
            if !(d.is_finite() && d > 0.0) {
                return Err(Error::invalid(format!("link_distance must be positive, got {d}")));
            }
        }
        Ok(())
    }

    pub fn divisors(&self) -> Divisors {
        Divisors {
            stride_div: self.stride_div,
            wa_div: self.wa_div,
        }
    }

    pub fn schedule(&self, image: &Image) -> Result<WindowSchedule> {
        window_schedule_with(image.height(), image.width(), self.min_sws, self.range, self.divisors())
    }

    pub fn link(&self) -> f64 {
        self.link_distance
            .unwrap_or_else(|| self.range.map_or(self.min_sws, |(_, lo)| lo.max(1)) as f64)
    }
}

/// Result of one detection run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Detection {
    pub clusters: Vec<DetectionCluster>,
    pub scales: usize,
    pub patches_scored: usize,
    pub positive_patches: usize,
}

impl Detection {
    pub fn boxes(&self) -> Vec<BBox> {
        self.clusters.iter().map(|c| c.bbox).collect()
    }
}

fn scale_records(net: &InferenceNet, image: &Image, windows: &[Window], cap: usize, thr: f64) -> Result<Vec<(usize, Vec<PatchRecord>)>> {
    let mut scorer = Scorer::new(net, cap);
    windows
        .iter()
        .map(|w| {
            let pos = patch_positions(image.width(), image.height(), w.sws, w.stride)?;
            let recs = scorer.score(image, w.sws, &pos);
            Ok((pos.len(), threshold_filter(&recs, thr)))
        })
        .collect()
}

/// Runs every scale, keeps windows above the threshold, then clusters once.
pub fn detect(image: &Image, model: &DisCnn, config: &DetectConfig) -> Result<Detection> {
    let net = InferenceNet::new(model)?;
    detect_with_net(image, &net, config, 1)
}

/// [`detect`] with a folded network and up to `workers` threads over scales.
/// The output does not depend on `workers`.
pub fn detect_with_net(image: &Image, net: &InferenceNet, config: &DetectConfig, workers: usize) -> Result<Detection> {
    config.validate()?;
    let schedule = config.schedule(image)?;
    let windows = &schedule.windows;
    let workers = workers.clamp(1, windows.len().max(1));
    let per_scale: Vec<(usize, Vec<PatchRecord>)> = if workers == 1 {
        scale_records(net, image, windows, config.batch_cap, config.thr)?
    } else {
        // worker k takes scales k, k + workers, ...
        let parts: Vec<Result<Vec<(usize, Vec<PatchRecord>)>>> = thread::scope(|s| {
            let handles: Vec<_> = (0..workers)
                .map(|k| {
                    let mine: Vec<Window> = windows.iter().skip(k).step_by(workers).copied().collect();
                    s.spawn(move || scale_records(net, image, &mine, config.batch_cap, config.thr))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("scoring worker panicked")).collect()
        });
        let parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
        let mut iters: Vec<_> = parts.into_iter().map(|p| p.into_iter()).collect();
        (0..windows.len())
            .map(|i| iters[i % workers].next().expect("one result per scale"))
            .collect()
    };
    let patches_scored = per_scale.iter().map(|(n, _)| n).sum();
    let positives: Vec<PatchRecord> = per_scale.into_iter().flat_map(|(_, r)| r).collect();
    Ok(Detection {
        clusters: cluster_records(&positives, config.link()),
        scales: windows.len(),
        patches_scored,
        positive_patches: positives.len(),
    })
}

/// Every window at each fixed size, sorted by module (highest first).
pub fn inspect(image: &Image, model: &DisCnn, sizes: &[usize], div: Divisors, batch_cap: usize) -> Result<Vec<(usize, Vec<PatchRecord>)>> {
    let net = InferenceNet::new(model)?;
    let mut scorer = Scorer::new(&net, batch_cap);
    sizes
        .iter()
        .map(|&sws| {
            let w = div.window(sws);
            let pos = patch_positions(image.width(), image.height(), sws, w.stride)?;
            let mut recs = scorer.score(image, sws, &pos);
            recs.sort_by(|a, b| b.module.total_cmp(&a.module).then_with(|| record_key(a).cmp(&record_key(b))));
            Ok((sws, recs))
        })
        .collect()
}

/// Horizontal strip of the given windows, each resized to `tile x tile`.
pub fn render_strip(image: &Image, records: &[PatchRecord], tile: usize) -> Result<Image> {
    let mut strip = Image::new(tile * records.len().max(1), tile, [0, 0, 0])?;
    for (i, r) in records.iter().enumerate() {
        let t = resize_region(image, r.xmin as usize, r.ymin as usize, r.sws, r.sws, tile, tile);
        strip.blit(&t, i * tile, 0);
    }
    Ok(strip)
}

/// Per-cluster entry of the detection document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    #[serde(rename = "box")]
    pub bbox: [i64; 4],
    pub member_count: usize,
    pub max_module: f32,
    pub scales_present: Vec<usize>,
}

/// JSON detection document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionDocument {
    pub image: String,
    pub config: DetectConfig,
    pub scales: usize,
    pub patches_scored: usize,
    pub positive_patches: usize,
    pub clusters: Vec<ClusterSummary>,
}

impl DetectionDocument {
    pub fn new(image: impl Into<String>, config: &DetectConfig, detection: &Detection) -> Self {
        DetectionDocument {
            image: image.into(),
            config: config.clone(),
            scales: detection.scales,
            patches_scored: detection.patches_scored,
            positive_patches: detection.positive_patches,
            clusters: detection
                .clusters
                .iter()
                .map(|c| ClusterSummary {
                    bbox: c.bbox.as_array(),
                    member_count: c.member_count,
                    max_module: c.max_module,
                    scales_present: c.scales_present.clone(),
                })
                .collect(),
        }
    }
}
