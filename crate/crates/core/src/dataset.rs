//! Training samples: the STL-10 binary loader, structural data checks, and
//! seeded synthetic glyph datasets and detection scenes.

use std::fs;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{resize_region, BBox, Image, Rgb};
use crate::model::INPUT_SIZE;

/// Side length of an STL-10 image.
pub const STL10_SIDE: usize = 96;
/// Bytes per STL-10 image (3 channels, 96 x 96).
pub const STL10_IMAGE_BYTES: usize = 3 * STL10_SIDE * STL10_SIDE;

pub const DEFAULT_MIN_RATIO: f64 = 2.0;

/// One labelled training image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub image: Image,
    pub positive: bool,
    /// Tag of the generating class (STL-10 label, or a [`source`] tag for synthetic data).
    pub source_class: u8,
}

/// Source-class tags used by the synthetic generator.
pub mod source {
    pub const CAR_GLYPH: u8 = 1;
    pub const DIAMOND_GLYPH: u8 = 2;
    pub const NOISE: u8 = 3;
    pub const STRIPES: u8 = 4;
    pub const BLANK: u8 = 5;
    pub const PATCHWORK: u8 = 6;
}

fn file_len(path: &Path) -> Result<u64> {
    Ok(fs::metadata(path).map_err(|e| Error::io(path, e))?.len())
}

/// Loads an STL-10 binary split, keeping classes in `class_filter`.
///
/// `images_path` holds `3 x 96 x 96` bytes per image, each channel stored
/// column-major; `labels_path` holds one byte per image (1 to 10).
pub fn load_stl10_split(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    class_filter: &[u8],
    positive_class: u8,
) -> Result<Vec<Sample>> {
    let (images_path, labels_path) = (images_path.as_ref(), labels_path.as_ref());
    let image_len = file_len(images_path)?;
    if image_len % STL10_IMAGE_BYTES as u64 != 0 {
        return Err(Error::DatasetSize {
            what: "image file (multiple of 27648)",
            expected: (image_len / STL10_IMAGE_BYTES as u64 + 1) * STL10_IMAGE_BYTES as u64,
            actual: image_len,
        });
    }
    let count = image_len / STL10_IMAGE_BYTES as u64;
    let label_len = file_len(labels_path)?;
    if label_len != count {
        return Err(Error::DatasetSize {
            what: "label file (one byte per image)",
            expected: count,
            actual: label_len,
        });
    }
    if class_filter.is_empty() {
        return Ok(Vec::new());
    }
    let labels = fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    let images = fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    images
        .chunks_exact(STL10_IMAGE_BYTES)
        .zip(&labels)
        .filter(|(_, l)| class_filter.contains(l))
        .map(|(raw, &label)| {
            Ok(Sample {
                image: stl10_to_image(raw)?,
                positive: label == positive_class,
                source_class: label,
            })
        })
        .collect()
}

/// Converts one channel-planar, column-major STL-10 record to row-major RGB.
pub fn stl10_to_image(raw: &[u8]) -> Result<Image> {
    if raw.len() != STL10_IMAGE_BYTES {
        return Err(Error::DatasetSize {
            what: "STL-10 image record",
            expected: STL10_IMAGE_BYTES as u64,
            actual: raw.len() as u64,
        });
    }
    let n = STL10_SIDE;
    let mut data = vec![0u8; STL10_IMAGE_BYTES];
    for c in 0..3 {
        for x in 0..n {
            for y in 0..n {
                data[(y * n + x) * 3 + c] = raw[c * n * n + x * n + y];
            }
        }
    }
    Image::from_raw(n, n, data)
}

/// Outcome of the structural data checks.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LemmaReport {
    pub positives: usize,
    pub negatives: usize,
    pub negative_classes: usize,
    /// Negatives per positive; infinite when there are no positives.
    pub ratio: f64,
    pub warnings: Vec<String>,
}

impl LemmaReport {
    pub fn is_clean(&self) -> bool {
        self.warnings.is_empty()
    }
}

/// Counts-only checks: enough negative classes and enough negatives per positive.
/// Feature overlap between classes is not examined.
pub fn validate_lemma_requirements(samples: &[Sample], min_ratio: f64) -> LemmaReport {
    let positives = samples.iter().filter(|s| s.positive).count();
    let negatives = samples.len() - positives;
    let mut classes: Vec<u8> = samples.iter().filter(|s| !s.positive).map(|s| s.source_class).collect();
    classes.sort_unstable();
    classes.dedup();
    let ratio = if positives == 0 {
        f64::INFINITY
    } else {
        negatives as f64 / positives as f64
    };
    let mut warnings = Vec::new();
    if positives == 0 {
        warnings.push("no positive samples".to_string());
    }
    if negatives == 0 {
        warnings.push("no negative samples".to_string());
    } else if classes.len() < 2 {
        warnings.push(format!("only {} negative class present (need at least 2)", classes.len()));
    }
    if positives > 0 && ratio < min_ratio {
        warnings.push(format!("negative:positive ratio {ratio:.2} is below the minimum {min_ratio:.2}"));
    }
    LemmaReport {
        positives,
        negatives,
        negative_classes: classes.len(),
        ratio,
        warnings,
    }
}

/// Shapes available for planting and for positive classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlyphKind {
    /// Body with a cabin, two hubbed wheels and a light plate.
    Car,
    /// Three nested diamonds.
    Diamond,
}

/// Glyph colours; slot meaning depends on the kind.
pub type Palette = [Rgb; 4];

const CAR_WHEELS: [(f64, f64); 2] = [(0.24, 0.8), (0.76, 0.8)];
const WHEEL_RADIUS: f64 = 0.2;
const HUB_RADIUS: f64 = 0.07;
const PLATE: [f64; 4] = [0.38, 0.5, 0.62, 0.64];

impl GlyphKind {
    pub fn source_class(self) -> u8 {
        match self {
            GlyphKind::Car => source::CAR_GLYPH,
            GlyphKind::Diamond => source::DIAMOND_GLYPH,
        }
    }

    pub fn canonical_palette(self) -> Palette {
        match self {
            // body, tyre, hub, plate
            GlyphKind::Car => [[200, 40, 40], [20, 20, 20], [150, 150, 150], [240, 240, 200]],
            // outer, middle, core, unused
            GlyphKind::Diamond => [[40, 90, 210], [250, 210, 40], [30, 160, 60], [0, 0, 0]],
        }
    }

    /// Colour at unit coordinates `(u, v)` of the glyph square, or `None` off-glyph.
    pub fn color_at(self, palette: &Palette, u: f64, v: f64) -> Option<Rgb> {
        match self {
            GlyphKind::Car => {
                for (cx, cy) in CAR_WHEELS {
                    let d2 = (u - cx).powi(2) + (v - cy).powi(2);
                    if d2 <= HUB_RADIUS * HUB_RADIUS {
                        return Some(palette[2]);
                    }
                    if d2 <= WHEEL_RADIUS * WHEEL_RADIUS {
                        return Some(palette[1]);
                    }
                }
                if (PLATE[0]..PLATE[2]).contains(&u) && (PLATE[1]..PLATE[3]).contains(&v) {
                    return Some(palette[3]);
                }
                let body = (0.0..1.0).contains(&u) && (0.3..0.8).contains(&v);
                let cabin = (0.22..0.78).contains(&u) && (0.02..0.3).contains(&v);
                (body || cabin).then_some(palette[0])
            }
            GlyphKind::Diamond => {
                let d = (u - 0.5).abs() + (v - 0.5).abs();
                if d <= 0.12 {
                    Some(palette[2])
                } else if d <= 0.3 {
                    Some(palette[1])
                } else if d <= 0.5 {
                    Some(palette[0])
                } else {
                    None
                }
            }
        }
    }

    /// Sub-feature boxes in unit coordinates `[xmin, ymin, xmax, ymax]`.
    pub fn component_boxes_unit(self) -> Vec<[f64; 4]> {
        match self {
            GlyphKind::Car => {
                let mut v: Vec<[f64; 4]> = CAR_WHEELS
                    .iter()
                    .map(|&(cx, cy)| {
                        [cx - WHEEL_RADIUS, cy - WHEEL_RADIUS, cx + WHEEL_RADIUS, (cy + WHEEL_RADIUS).min(1.0)]
                    })
                    .collect();
                v.push(PLATE);
                v
            }
            GlyphKind::Diamond => vec![[0.38, 0.38, 0.62, 0.62]],
        }
    }

    /// Sub-feature boxes of a glyph planted at `bbox`, in pixels (outward rounding).
    pub fn component_boxes(self, bbox: &BBox) -> Vec<BBox> {
        let (w, h) = (bbox.width() as f64, bbox.height() as f64);
        self.component_boxes_unit()
            .into_iter()
            .map(|[a, b, c, d]| BBox {
                xmin: bbox.xmin + (a * w).floor() as i64,
                ymin: bbox.ymin + (b * h).floor() as i64,
                xmax: bbox.xmin + (c * w).ceil() as i64,
                ymax: bbox.ymin + (d * h).ceil() as i64,
            })
            .collect()
    }
}

/// Draws a glyph into the square `[x0, x0 + size) x [y0, y0 + size)`, clipped to the image.
/// Pixels are sampled at their centres.
pub fn render_glyph(image: &mut Image, kind: GlyphKind, palette: &Palette, x0: f64, y0: f64, size: f64) {
    let (w, h) = (image.width() as f64, image.height() as f64);
    let xs = x0.max(0.0).floor() as usize;
    let ys = y0.max(0.0).floor() as usize;
    let xe = (x0 + size).min(w).ceil() as usize;
    let ye = (y0 + size).min(h).ceil() as usize;
    for y in ys..ye {
        let v = (y as f64 + 0.5 - y0) / size;
        for x in xs..xe {
            let u = (x as f64 + 0.5 - x0) / size;
            if !(0.0..1.0).contains(&u) || !(0.0..1.0).contains(&v) {
                continue;
            }
            if let Some(c) = kind.color_at(palette, u, v) {
                image.set_pixel(x, y, c);
            }
        }
    }
}

/// Glyph-free texture families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextureKind {
    Noise,
    Stripes,
    Blank,
    Patchwork,
}

impl TextureKind {
    pub fn source_class(self) -> u8 {
        match self {
            TextureKind::Noise => source::NOISE,
            TextureKind::Stripes => source::STRIPES,
            TextureKind::Blank => source::BLANK,
            TextureKind::Patchwork => source::PATCHWORK,
        }
    }
}

fn random_color(rng: &mut impl Rng) -> Rgb {
    [rng.random(), rng.random(), rng.random()]
}

fn jitter_color(c: Rgb, amount: i32, rng: &mut impl Rng) -> Rgb {
    if amount == 0 {
        return c;
    }
    c.map(|v| (i32::from(v) + rng.random_range(-amount..=amount)).clamp(0, 255) as u8)
}

/// Renders a `w x h` texture with no disks or glyph parts.
pub fn render_texture(kind: TextureKind, w: usize, h: usize, rng: &mut impl Rng) -> Image {
    match kind {
        TextureKind::Blank => Image::new(w, h, random_color(rng)).expect("positive extents"),
        TextureKind::Noise => {
            if rng.random_bool(0.5) {
                let base = random_color(rng);
                let sigma = rng.random_range(8.0..60.0);
                let normal = Normal::new(0.0, sigma).expect("positive sigma");
                let data = (0..w * h)
                    .flat_map(|_| base)
                    .map(|c| (f64::from(c) + normal.sample(rng)).round().clamp(0.0, 255.0) as u8)
                    .collect();
                Image::from_raw(w, h, data).expect("sized buffer")
            } else {
                // smooth clouds: coarse random grid upsampled
                let g = rng.random_range(3..=12);
                let coarse = Image::from_raw(g, g, (0..g * g * 3).map(|_| rng.random()).collect())
                    .expect("sized buffer");
                resize_region(&coarse, 0, 0, g, g, w, h)
            }
        }
        TextureKind::Stripes => {
            let (a, b) = (random_color(rng), random_color(rng));
            let period = rng.random_range(6.0..32.0);
            let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
            let checker = rng.random_bool(0.25);
            let (s, c) = angle.sin_cos();
            let mut img = Image::new(w, h, a).expect("positive extents");
            for y in 0..h {
                for x in 0..w {
                    let t = (x as f64 * c + y as f64 * s) / period;
                    let mut on = t.rem_euclid(1.0) < 0.5;
                    if checker {
                        let t2 = (-(x as f64) * s + y as f64 * c) / period;
                        on ^= t2.rem_euclid(1.0) < 0.5;
                    }
                    if on {
                        img.set_pixel(x, y, b);
                    }
                }
            }
            img
        }
        TextureKind::Patchwork => {
            let mut img = Image::new(w, h, random_color(rng)).expect("positive extents");
            for _ in 0..rng.random_range(1..=4) {
                let rw = rng.random_range(w / 8..=w * 3 / 4).max(1);
                let rh = rng.random_range(h / 8..=h * 3 / 4).max(1);
                let x = rng.random_range(0..=w - rw);
                let y = rng.random_range(0..=h - rh);
                let patch = if rng.random_bool(0.7) {
                    Image::new(rw, rh, random_color(rng)).expect("positive extents")
                } else {
                    let inner = [TextureKind::Noise, TextureKind::Stripes][rng.random_range(0..2)];
                    render_texture(inner, rw, rh, rng)
                };
                img.blit(&patch, x, y);
            }
            img
        }
    }
}

/// Synthetic dataset parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// The positive glyph.
    pub glyph: GlyphKind,
    /// Glyph edge as a fraction of the frame, sampled uniformly.
    pub scale: (f64, f64),
    /// Maximum centre offset as a fraction of the frame.
    pub jitter: f64,
    /// Per-channel colour jitter around the canonical palette.
    pub color_jitter: i32,
    /// Texture families used for negatives, cycled in order.
    pub textures: Vec<TextureKind>,
    /// Other glyph kinds included among the negatives.
    pub other_glyphs: Vec<GlyphKind>,
}

impl SynthConfig {
    pub fn for_glyph(glyph: GlyphKind) -> Self {
        let other = match glyph {
            GlyphKind::Car => GlyphKind::Diamond,
            GlyphKind::Diamond => GlyphKind::Car,
        };
        SynthConfig {
            glyph,
            scale: (0.8, 1.2),
            jitter: 0.04,
            color_jitter: 24,
            textures: vec![
                TextureKind::Noise,
                TextureKind::Stripes,
                TextureKind::Blank,
                TextureKind::Patchwork,
            ],
            other_glyphs: vec![other],
        }
    }
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig::for_glyph(GlyphKind::Car)
    }
}

fn glyph_sample(kind: GlyphKind, cfg: &SynthConfig, rng: &mut impl Rng) -> Image {
    let n = INPUT_SIZE as f64;
    let mut img = Image::new(INPUT_SIZE, INPUT_SIZE, random_color(rng)).expect("positive extents");
    let size = rng.random_range(cfg.scale.0..=cfg.scale.1) * n;
    let j = cfg.jitter * n;
    let cx = n / 2.0 + if j > 0.0 { rng.random_range(-j..=j) } else { 0.0 };
    let cy = n / 2.0 + if j > 0.0 { rng.random_range(-j..=j) } else { 0.0 };
    let palette = kind
        .canonical_palette()
        .map(|c| jitter_color(c, cfg.color_jitter, rng));
    render_glyph(&mut img, kind, &palette, cx - size / 2.0, cy - size / 2.0, size);
    img
}

/// Seeded dataset of `n_pos` car-glyph positives followed by `n_neg` glyph-free negatives.
pub fn generate_synthetic_dataset(seed: u64, n_pos: usize, n_neg: usize) -> Vec<Sample> {
    generate_synthetic_dataset_with(&SynthConfig::default(), seed, n_pos, n_neg)
}

/// As [`generate_synthetic_dataset`] with explicit parameters.
///
/// Negatives cycle through the texture families and then the other glyph kinds.
pub fn generate_synthetic_dataset_with(cfg: &SynthConfig, seed: u64, n_pos: usize, n_neg: usize) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_pos + n_neg);
    for _ in 0..n_pos {
        out.push(Sample {
            image: glyph_sample(cfg.glyph, cfg, &mut rng),
            positive: true,
            source_class: cfg.glyph.source_class(),
        });
    }
    let families = cfg.textures.len() + cfg.other_glyphs.len();
    for i in 0..n_neg {
        let slot = if families == 0 { 0 } else { i % families };
        let (image, source_class) = if slot < cfg.textures.len() {
            let kind = cfg.textures[slot];
            (render_texture(kind, INPUT_SIZE, INPUT_SIZE, &mut rng), kind.source_class())
        } else if families > 0 {
            let kind = cfg.other_glyphs[slot - cfg.textures.len()];
            (glyph_sample(kind, cfg, &mut rng), kind.source_class())
        } else {
            (render_texture(TextureKind::Blank, INPUT_SIZE, INPUT_SIZE, &mut rng), source::BLANK)
        };
        out.push(Sample {
            image,
            positive: false,
            source_class,
        });
    }
    out
}

/// A glyph to plant in a scene.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plant {
    pub kind: GlyphKind,
    pub bbox: BBox,
}

/// Detection scene description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    /// Seeds the background colour and distractor placement.
    pub seed: u64,
    pub plants: Vec<Plant>,
    /// Glyph-free texture patches placed away from the plants.
    pub distractors: usize,
}

impl SceneSpec {
    /// A scene with a single planted glyph.
    pub fn single(width: usize, height: usize, seed: u64, kind: GlyphKind, bbox: BBox) -> Self {
        SceneSpec {
            width,
            height,
            seed,
            plants: vec![Plant { kind, bbox }],
            distractors: 0,
        }
    }
}

/// Renders the scene; returns it with the ground-truth box of every plant.
pub fn make_scene(spec: &SceneSpec) -> Result<(Image, Vec<BBox>)> {
    for p in &spec.plants {
        let b = p.bbox;
        if b.xmin < 0 || b.ymin < 0 || b.xmax > spec.width as i64 || b.ymax > spec.height as i64 || b.xmin >= b.xmax || b.ymin >= b.ymax {
            return Err(Error::invalid(format!(
                "plant box {:?} does not fit in a {}x{} scene",
                b.as_array(),
                spec.width,
                spec.height
            )));
        }
        if b.width() != b.height() {
            return Err(Error::invalid(format!("plant box {:?} is not square", b.as_array())));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut img = Image::new(spec.width, spec.height, random_color(&mut rng))?;
    let mut taken: Vec<BBox> = spec.plants.iter().map(|p| p.bbox).collect();
    let families = [TextureKind::Noise, TextureKind::Stripes, TextureKind::Patchwork];
    for _ in 0..spec.distractors {
        let max_side = spec.width.min(spec.height).min(128);
        if max_side < 16 {
            break;
        }
        for _attempt in 0..64 {
            let w = rng.random_range(max_side / 3..=max_side);
            let h = rng.random_range(max_side / 3..=max_side);
            let x = rng.random_range(0..=spec.width - w);
            let y = rng.random_range(0..=spec.height - h);
            let b = BBox {
                xmin: x as i64,
                ymin: y as i64,
                xmax: (x + w) as i64,
                ymax: (y + h) as i64,
            };
            let margin = BBox {
                xmin: b.xmin - 16,
                ymin: b.ymin - 16,
                xmax: b.xmax + 16,
                ymax: b.ymax + 16,
            };
            if taken.iter().any(|t| t.intersection_area(&margin) > 0) {
                continue;
            }
            let kind = *families.choose(&mut rng).expect("nonempty");
            img.blit(&render_texture(kind, w, h, &mut rng), x, y);
            taken.push(b);
            break;
        }
    }
    for p in &spec.plants {
        let b = p.bbox;
        render_glyph(
            &mut img,
            p.kind,
            &p.kind.canonical_palette(),
            b.xmin as f64,
            b.ymin as f64,
            b.width() as f64,
        );
    }
    Ok((img, spec.plants.iter().map(|p| p.bbox).collect()))
}

/// A square box of side `size` at a seeded random position inside a `width x height` scene.
pub fn random_plant_box(width: usize, height: usize, size: usize, rng: &mut impl Rng) -> Result<BBox> {
    if size == 0 || size > width || size > height {
        return Err(Error::invalid(format!("a {size} px glyph does not fit in {width}x{height}")));
    }
    let x = rng.random_range(0..=width - size) as i64;
    let y = rng.random_range(0..=height - size) as i64;
    BBox::new(x, y, x + size as i64, y + size as i64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stl10_single_image_layout() {
        // channel c, column x, row y stored at c*9216 + x*96 + y
        let mut raw = vec![0u8; STL10_IMAGE_BYTES];
        for c in 0..3 {
            for x in 0..96 {
                for y in 0..96 {
                    raw[c * 9216 + x * 96 + y] = ((x * 7 + y * 3 + c * 50) % 251) as u8;
                }
            }
        }
        let img = stl10_to_image(&raw).unwrap();
        for (x, y) in [(0, 0), (1, 0), (0, 1), (95, 3), (40, 77)] {
            let want: Vec<u8> = (0..3).map(|c| ((x * 7 + y * 3 + c * 50) % 251) as u8).collect();
            assert_eq!(img.pixel(x, y).to_vec(), want);
        }
    }

    #[test]
    fn stl10_files() {
        let dir = tempfile::tempdir().unwrap();
        let xp = dir.path().join("x.bin");
        let yp = dir.path().join("y.bin");
        let mut raw = vec![7u8; STL10_IMAGE_BYTES * 3];
        raw[STL10_IMAGE_BYTES] = 200;
        fs::write(&xp, &raw).unwrap();
        fs::write(&yp, [3u8, 1, 5]).unwrap();
        let s = load_stl10_split(&xp, &yp, &[3, 1], 3).unwrap();
        assert_eq!(s.len(), 2);
        assert!(s[0].positive && !s[1].positive);
        assert_eq!(s[1].source_class, 1);
        assert_eq!(s[1].image.pixel(0, 0), [200, 7, 7]);
        assert!(load_stl10_split(&xp, &yp, &[], 3).unwrap().is_empty());

        fs::write(&yp, [3u8, 1]).unwrap();
        assert!(matches!(
            load_stl10_split(&xp, &yp, &[3], 3),
            Err(Error::DatasetSize { expected: 3, actual: 2, .. })
        ));
        fs::write(&xp, &raw[..100]).unwrap();
        assert!(matches!(load_stl10_split(&xp, &yp, &[3], 3), Err(Error::DatasetSize { actual: 100, .. })));
    }

    fn tagged(pos: usize, neg: &[(u8, usize)]) -> Vec<Sample> {
        let img = Image::new(1, 1, [0, 0, 0]).unwrap();
        let mut v: Vec<Sample> = (0..pos)
            .map(|_| Sample { image: img.clone(), positive: true, source_class: 3 })
            .collect();
        for &(class, n) in neg {
            v.extend((0..n).map(|_| Sample { image: img.clone(), positive: false, source_class: class }));
        }
        v
    }

    #[test]
    fn lemma_report() {
        let r = validate_lemma_requirements(&tagged(100, &[(1, 50)]), DEFAULT_MIN_RATIO);
        assert_eq!(r.warnings.len(), 2);
        let six: Vec<(u8, usize)> = [2, 4, 5, 6, 7, 8].iter().map(|&c| (c, 100)).collect();
        let r = validate_lemma_requirements(&tagged(100, &six), DEFAULT_MIN_RATIO);
        assert!(r.is_clean(), "{:?}", r.warnings);
        assert_eq!((r.negative_classes, r.ratio), (6, 6.0));
        assert!(!validate_lemma_requirements(&tagged(10, &[]), DEFAULT_MIN_RATIO).is_clean());
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = generate_synthetic_dataset(11, 5, 9);
        assert_eq!(a, generate_synthetic_dataset(11, 5, 9));
        assert_ne!(a, generate_synthetic_dataset(12, 5, 9));
        assert!(generate_synthetic_dataset(3, 0, 6).iter().all(|s| !s.positive));
        assert_eq!(a.iter().filter(|s| s.positive).count(), 5);
    }

    #[test]
    fn scene_echoes_box_and_is_deterministic() {
        let b = BBox::new(100, 100, 164, 164).unwrap();
        let mut spec = SceneSpec::single(256, 256, 5, GlyphKind::Car, b);
        spec.distractors = 2;
        let (img, boxes) = make_scene(&spec).unwrap();
        assert_eq!(boxes, vec![b]);
        assert_eq!(make_scene(&spec).unwrap().0, img);
        let out = SceneSpec::single(256, 256, 5, GlyphKind::Car, BBox::new(200, 200, 264, 264).unwrap());
        assert!(make_scene(&out).is_err());
    }

    #[test]
    fn component_boxes_inside_glyph() {
        let b = BBox::new(10, 20, 74, 84).unwrap();
        for kind in [GlyphKind::Car, GlyphKind::Diamond] {
            for c in kind.component_boxes(&b) {
                assert!(b.contains(&c), "{c:?}");
            }
        }
    }
}
