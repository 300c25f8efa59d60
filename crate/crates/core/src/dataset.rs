//! Procedural outline shapes with ground truth and gap-cut copies.
//!
//! Shapes are traced as closed 8-connected pixel paths. Gaps are cut along
//! the arc-length parameterization of those paths, so every degraded image
//! is a strict subset of its ground truth.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::BinaryImage;
use crate::scores::{gap_metric, GapStat};

pub type Pixel = (i32, i32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Category {
    Circle,
    Kite,
    Parallelogram,
    Rectangle,
    Rhombus,
    Square,
    Trapezoid,
    Triangle,
    Overlap,
}

pub const CATEGORIES: [Category; 9] = [
    Category::Circle,
    Category::Kite,
    Category::Parallelogram,
    Category::Rectangle,
    Category::Rhombus,
    Category::Square,
    Category::Trapezoid,
    Category::Triangle,
    Category::Overlap,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Simple,
    Complex,
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetKind::Simple => "simple",
            DatasetKind::Complex => "complex",
        })
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "simple" => Ok(DatasetKind::Simple),
            "complex" => Ok(DatasetKind::Complex),
            other => Err(format!("unknown dataset {other:?} (expected simple or complex)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub category: Category,
    /// (row, col) of the shape centre in pixels.
    pub center: (f64, f64),
    /// Half-extent of the outline in pixels.
    pub scale: f64,
    /// Minor/major extent ratio for shapes that have one.
    pub aspect: f64,
    /// Category-specific shear in [-1, 1].
    pub skew: f64,
    pub rotation: f64,
    /// Amplitude of the hand-drawn wobble in pixels; 0 gives clean geometry.
    pub jitter: f64,
    pub jitter_seed: u64,
    pub stroke_width: usize,
    /// Component outlines of a [`Category::Overlap`]; their union is drawn
    /// and the geometry fields above are unused.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub parts: Vec<ShapeSpec>,
}

impl ShapeSpec {
    /// Clean, unrotated shape of the given category.
    pub fn regular(category: Category, center: (f64, f64), scale: f64) -> Self {
        ShapeSpec {
            category,
            center,
            scale,
            aspect: 0.7,
            skew: 0.5,
            rotation: 0.0,
            jitter: 0.0,
            jitter_seed: 0,
            stroke_width: 1,
            parts: Vec::new(),
        }
    }

    /// Union of two or more component outlines.
    pub fn overlap(parts: Vec<ShapeSpec>) -> Self {
        let first = parts
            .first()
            .cloned()
            .unwrap_or_else(|| ShapeSpec::regular(Category::Circle, (0.0, 0.0), 1.0));
        ShapeSpec {
            category: Category::Overlap,
            stroke_width: first.stroke_width,
            parts,
            ..first
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    pub num_gaps: usize,
    /// Contour pixels removed per gap.
    pub gap_length: usize,
    pub seed: u64,
}

/// Unit-scale polygon of a single (non-overlap) category, (x, y) with y down.
fn unit_polygon(spec: &ShapeSpec) -> Vec<(f64, f64)> {
    let a = spec.aspect;
    let s = spec.skew;
    match spec.category {
        Category::Circle => {
            let n = ((2.0 * PI * spec.scale) / 2.0).ceil().max(24.0) as usize;
            (0..n)
                .map(|i| {
                    let t = 2.0 * PI * i as f64 / n as f64;
                    (t.cos(), t.sin())
                })
                .collect()
        }
        Category::Square => vec![(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)],
        Category::Rectangle => vec![(-1.0, -a), (1.0, -a), (1.0, a), (-1.0, a)],
        Category::Rhombus => vec![(0.0, -1.0), (a, 0.0), (0.0, 1.0), (-a, 0.0)],
        Category::Kite => {
            let top = 0.45 + 0.15 * s.abs();
            vec![(0.0, -top), (a, -top + 0.35 * a), (0.0, 1.0), (-a, -top + 0.35 * a)]
        }
        Category::Parallelogram => {
            let sh = 0.35 * s;
            let k = 1.0 / (1.0 + sh.abs());
            vec![
                ((-1.0 + sh) * k, -a),
                ((1.0 + sh) * k, -a),
                ((1.0 - sh) * k, a),
                ((-1.0 - sh) * k, a),
            ]
        }
        Category::Trapezoid => {
            let top = 0.4 + 0.2 * s.abs();
            vec![(-top, -a), (top, -a), (1.0, a), (-1.0, a)]
        }
        Category::Triangle => vec![(0.5 * s, -1.0), (1.0, 0.8), (-1.0, 0.8)],
        Category::Overlap => Vec::new(),
    }
}

fn place(spec: &ShapeSpec, unit: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let (sin, cos) = spec.rotation.sin_cos();
    unit.iter()
        .map(|&(x, y)| {
            let (xr, yr) = (x * cos - y * sin, x * sin + y * cos);
            (spec.center.0 + spec.scale * yr, spec.center.1 + spec.scale * xr)
        })
        .collect()
}

/// Subdivides edges and displaces interior points perpendicular to the edge
/// with a smoothed random offset, plus a random shift of every vertex.
fn wobble(poly: &[(f64, f64)], amplitude: f64, rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    let n = poly.len();
    let shifted: Vec<(f64, f64)> = poly
        .iter()
        .map(|&(r, c)| {
            (
                r + rng.random_range(-amplitude..=amplitude),
                c + rng.random_range(-amplitude..=amplitude),
            )
        })
        .collect();
    let mut out = Vec::new();
    for i in 0..n {
        let (p, q) = (shifted[i], shifted[(i + 1) % n]);
        let len = ((q.0 - p.0).powi(2) + (q.1 - p.1).powi(2)).sqrt();
        let pieces = (len / 6.0).ceil().max(1.0) as usize;
        let (nr, nc) = if len > 0.0 {
            (-(q.1 - p.1) / len, (q.0 - p.0) / len)
        } else {
            (0.0, 0.0)
        };
        let mut prev = 0.0;
        out.push(p);
        for j in 1..pieces {
            let t = j as f64 / pieces as f64;
            let target = rng.random_range(-amplitude..=amplitude) * 0.6;
            let off = 0.5 * (prev + target);
            prev = off;
            out.push((p.0 + t * (q.0 - p.0) + off * nr, p.1 + t * (q.1 - p.1) + off * nc));
        }
    }
    out
}

fn outline(spec: &ShapeSpec) -> Vec<Vec<(f64, f64)>> {
    if spec.category == Category::Overlap {
        return spec.parts.iter().flat_map(outline).collect();
    }
    let poly = place(spec, &unit_polygon(spec));
    let poly = if spec.jitter > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.jitter_seed);
        wobble(&poly, spec.jitter, &mut rng)
    } else {
        poly
    };
    vec![poly]
}

/// Bresenham line between two pixels, both endpoints included.
pub fn line_pixels(from: Pixel, to: Pixel) -> Vec<Pixel> {
    let (mut r, mut c) = from;
    let dr = (to.0 - r).abs();
    let dc = -(to.1 - c).abs();
    let sr = if r < to.0 { 1 } else { -1 };
    let sc = if c < to.1 { 1 } else { -1 };
    let mut err = dr + dc;
    let mut out = vec![(r, c)];
    while (r, c) != to {
        let e2 = 2 * err;
        if e2 >= dc {
            err += dc;
            r += sr;
        }
        if e2 <= dr {
            err += dr;
            c += sc;
        }
        out.push((r, c));
    }
    out
}

/// Closed pixel path through the rounded polygon vertices, without the
/// repeated start pixel.
fn trace_polygon(poly: &[(f64, f64)]) -> Vec<Pixel> {
    let verts: Vec<Pixel> = poly
        .iter()
        .map(|&(r, c)| (r.round() as i32, c.round() as i32))
        .collect();
    let mut path: Vec<Pixel> = Vec::new();
    for i in 0..verts.len() {
        for p in line_pixels(verts[i], verts[(i + 1) % verts.len()]) {
            if path.last() != Some(&p) {
                path.push(p);
            }
        }
    }
    while path.len() > 1 && path.first() == path.last() {
        path.pop();
    }
    path
}

/// Traced outline: one closed centreline path per contour.
#[derive(Debug, Clone, PartialEq)]
pub struct TracedShape {
    pub canvas: usize,
    pub stroke_width: usize,
    pub contours: Vec<Vec<Pixel>>,
}

impl TracedShape {
    fn stamp(&self, img: &mut BinaryImage, p: Pixel) {
        let w = self.stroke_width as i32;
        let lo = -(w - 1) / 2;
        for dr in lo..lo + w {
            for dc in lo..lo + w {
                let (r, c) = (p.0 + dr, p.1 + dc);
                if r >= 0 && c >= 0 && (r as usize) < self.canvas && (c as usize) < self.canvas {
                    img.set(r as usize, c as usize, 0.0);
                }
            }
        }
    }

    pub fn render(&self) -> BinaryImage {
        self.render_subset(|_, _| true)
    }

    fn render_subset(&self, keep: impl Fn(usize, usize) -> bool) -> BinaryImage {
        let mut img = BinaryImage::blank(self.canvas, self.canvas);
        for (ci, contour) in self.contours.iter().enumerate() {
            for (pi, &p) in contour.iter().enumerate() {
                if keep(ci, pi) {
                    self.stamp(&mut img, p);
                }
            }
        }
        img
    }

    pub fn contour_length(&self) -> usize {
        self.contours.iter().map(Vec::len).sum()
    }

    /// Removes `num_gaps` runs of `gap_length` consecutive path pixels,
    /// separated by at least `2·gap_length` kept pixels.
    pub fn cut_gaps(&self, spec: &DegradationSpec) -> Result<Degraded> {
        let ground_truth = self.render();
        if spec.num_gaps == 0 {
            return Ok(Degraded {
                image: ground_truth,
                gaps: Vec::new(),
            });
        }
        let g = spec.gap_length;
        if g == 0 {
            return Err(Error::Infeasible("gap_length must be ≥ 1".into()));
        }
        let total = self.contour_length();
        if spec.num_gaps * g >= total {
            return Err(Error::Infeasible(format!(
                "{} gaps of {g} px exceed the contour length {total}",
                spec.num_gaps
            )));
        }
        let counts = allocate(spec.num_gaps, &self.contours.iter().map(Vec::len).collect::<Vec<_>>());
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut removed: Vec<Vec<bool>> = self.contours.iter().map(|c| vec![false; c.len()]).collect();
        let mut runs: Vec<(usize, Vec<usize>)> = Vec::new();
        for (ci, (&n, contour)) in counts.iter().zip(&self.contours).enumerate() {
            if n == 0 {
                continue;
            }
            let len = contour.len();
            if n * 3 * g > len {
                return Err(Error::Infeasible(format!(
                    "{n} gaps of {g} px with {}-px spacing do not fit a contour of {len} px",
                    2 * g
                )));
            }
            let slack = len - n * 3 * g;
            let offset = rng.random_range(0..len);
            let mut shifts: Vec<usize> = (0..n).map(|_| rng.random_range(0..=slack)).collect();
            shifts.sort_unstable();
            for (i, shift) in shifts.into_iter().enumerate() {
                let start = offset + i * 3 * g + shift;
                let positions: Vec<usize> = (start..start + g).map(|p| p % len).collect();
                for &p in &positions {
                    removed[ci][p] = true;
                }
                runs.push((ci, positions));
            }
        }
        let image = self.render_subset(|ci, pi| !removed[ci][pi]);
        let gaps = runs
            .into_iter()
            .map(|(ci, positions)| {
                let mut px: Vec<(usize, usize)> = Vec::new();
                for p in positions {
                    let mut probe = BinaryImage::blank(self.canvas, self.canvas);
                    self.stamp(&mut probe, self.contours[ci][p]);
                    for (r, c) in probe.dark_pixels(0.5) {
                        if !image.is_dark(r, c, 0.5) && !px.contains(&(r, c)) {
                            px.push((r, c));
                        }
                    }
                }
                px
            })
            .collect::<Vec<_>>();
        if gaps.iter().any(Vec::is_empty) {
            return Err(Error::Infeasible(format!(
                "a {g}-px gap is covered by the {}-px stroke",
                self.stroke_width
            )));
        }
        Ok(Degraded { image, gaps })
    }
}

/// Largest-remainder split of `n` gaps proportional to contour lengths.
fn allocate(n: usize, lengths: &[usize]) -> Vec<usize> {
    let total: usize = lengths.iter().sum();
    let mut counts: Vec<usize> = lengths.iter().map(|&l| n * l / total).collect();
    let mut rema: Vec<(usize, usize)> = lengths.iter().enumerate().map(|(i, &l)| ((n * l) % total, i)).collect();
    rema.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut left = n - counts.iter().sum::<usize>();
    for (_, i) in rema {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

#[derive(Debug, Clone, PartialEq)]
pub struct Degraded {
    pub image: BinaryImage,
    /// Pixels turned to background, one list per gap.
    pub gaps: Vec<Vec<(usize, usize)>>,
}

/// Traces the outline of `spec` on a `canvas`×`canvas` raster.
pub fn trace_shape(spec: &ShapeSpec, canvas: usize) -> Result<TracedShape> {
    if spec.stroke_width == 0 {
        return Err(Error::Config("stroke_width must be ≥ 1".into()));
    }
    let contours: Vec<Vec<Pixel>> = outline(spec).iter().map(|p| trace_polygon(p)).collect();
    let margin = spec.stroke_width as i32;
    for &(r, c) in contours.iter().flatten() {
        if r < margin || c < margin || r >= canvas as i32 - margin || c >= canvas as i32 - margin {
            return Err(Error::OutOfCanvas {
                canvas,
                detail: format!("pixel ({r}, {c}) is within {margin} px of the border"),
            });
        }
    }
    Ok(TracedShape {
        canvas,
        stroke_width: spec.stroke_width,
        contours,
    })
}

/// Hard binary outline of `spec`.
pub fn render_shape(spec: &ShapeSpec, canvas: usize) -> Result<BinaryImage> {
    Ok(trace_shape(spec, canvas)?.render())
}

/// Gap-cut copy of a rendered outline.
pub fn cut_gaps(shape: &TracedShape, spec: &DegradationSpec) -> Result<BinaryImage> {
    Ok(shape.cut_gaps(spec)?.image)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSample {
    pub id: String,
    pub category: Category,
    pub ground_truth: BinaryImage,
    pub degraded: BinaryImage,
    pub gap_stat: GapStat,
    pub shape: ShapeSpec,
    pub degradation: DegradationSpec,
    /// Removed pixels per gap.
    pub gaps: Vec<Vec<(usize, usize)>>,
}

impl DatasetSample {
    pub fn build(id: String, shape: ShapeSpec, degradation: DegradationSpec, canvas: usize) -> Result<Self> {
        let traced = trace_shape(&shape, canvas)?;
        let ground_truth = traced.render();
        let Degraded { image, gaps } = traced.cut_gaps(&degradation)?;
        let gap_stat = gap_metric(&ground_truth, &image, 0.5)?;
        Ok(DatasetSample {
            id,
            category: shape.category,
            ground_truth,
            degraded: image,
            gap_stat,
            shape,
            degradation,
            gaps,
        })
    }
}

struct Ranges {
    scale: (f64, f64),
    jitter: (f64, f64),
    gaps: (usize, usize),
    gap_length: (f64, f64),
}

fn ranges(kind: DatasetKind, canvas: usize) -> Ranges {
    let s = canvas as f64 / 128.0;
    match kind {
        DatasetKind::Simple => Ranges {
            scale: (0.26 * canvas as f64, 0.36 * canvas as f64),
            jitter: (0.0, 0.0),
            gaps: (1, 3),
            gap_length: (3.0 * s, 6.0 * s),
        },
        DatasetKind::Complex => Ranges {
            scale: (0.24 * canvas as f64, 0.36 * canvas as f64),
            jitter: (1.0 * s, 2.5 * s),
            gaps: (3, 8),
            gap_length: (5.0 * s, 10.0 * s),
        },
    }
}

fn random_shape(
    category: Category,
    kind: DatasetKind,
    canvas: usize,
    stroke_width: usize,
    rng: &mut ChaCha8Rng,
) -> ShapeSpec {
    let r = ranges(kind, canvas);
    let c = canvas as f64 / 2.0;
    let wiggle = 0.05 * canvas as f64;
    let single = |category: Category, shrink: f64, rng: &mut ChaCha8Rng| ShapeSpec {
        category,
        center: (
            c + rng.random_range(-wiggle..=wiggle),
            c + rng.random_range(-wiggle..=wiggle),
        ),
        scale: shrink * rng.random_range(r.scale.0..=r.scale.1),
        aspect: rng.random_range(0.55..=0.9),
        skew: rng.random_range(-1.0..=1.0),
        rotation: match kind {
            DatasetKind::Simple if category == Category::Square => rng.random_range(0.0..PI / 2.0),
            _ => rng.random_range(0.0..PI),
        },
        jitter: if r.jitter.1 > 0.0 {
            rng.random_range(r.jitter.0..=r.jitter.1)
        } else {
            0.0
        },
        jitter_seed: rng.random(),
        stroke_width,
        parts: Vec::new(),
    };
    if category != Category::Overlap {
        return single(category, 1.0, rng);
    }
    let first = CATEGORIES[rng.random_range(0..8)];
    let second = CATEGORIES[rng.random_range(0..8)];
    let offset = 0.13 * canvas as f64;
    let angle: f64 = rng.random_range(0.0..2.0 * PI);
    let mut a = single(first, 0.7, rng);
    let mut b = single(second, 0.7, rng);
    a.center = (c + offset * angle.sin(), c + offset * angle.cos());
    b.center = (c - offset * angle.sin(), c - offset * angle.cos());
    ShapeSpec::overlap(vec![a, b])
}

const MAX_ATTEMPTS: usize = 64;

fn random_traced_shape(
    category: Category,
    cfg: &DatasetConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(ShapeSpec, TracedShape)> {
    let mut shrink = 1.0;
    for _ in 0..MAX_ATTEMPTS {
        let mut shape = random_shape(category, cfg.kind, cfg.canvas, cfg.stroke_width, rng);
        scale_shape(&mut shape, shrink);
        match trace_shape(&shape, cfg.canvas) {
            Ok(t) => return Ok((shape, t)),
            Err(Error::OutOfCanvas { .. }) => shrink *= 0.92,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Infeasible(format!(
        "no {category:?} fits a {}px canvas after {MAX_ATTEMPTS} attempts",
        cfg.canvas
    )))
}

const LAYOUT_ATTEMPTS: usize = 8;

fn random_sample(id: String, category: Category, cfg: &DatasetConfig, rng: &mut ChaCha8Rng) -> Result<DatasetSample> {
    let r = ranges(cfg.kind, cfg.canvas);
    let (shape, traced) = random_traced_shape(category, cfg, rng)?;
    // A run no longer than the stroke is mostly painted over by its neighbours.
    let gap_length = (rng.random_range(r.gap_length.0..=r.gap_length.1).round() as usize).max(cfg.stroke_width + 1);
    let mut num_gaps = rng.random_range(r.gaps.0..=r.gaps.1);
    // Shapes too small for the drawn count keep as many gaps as fit; a
    // layout with a hidden gap is redrawn a few times first.
    while num_gaps > 0 {
        for _ in 0..LAYOUT_ATTEMPTS {
            let degradation = DegradationSpec {
                num_gaps,
                gap_length,
                seed: rng.random(),
            };
            match traced.cut_gaps(&degradation) {
                Ok(_) => return DatasetSample::build(id, shape, degradation, cfg.canvas),
                Err(Error::Infeasible(_)) => continue,
                Err(e) => return Err(e),
            }
        }
        num_gaps -= 1;
    }
    Err(Error::Infeasible(format!(
        "{category:?} outline too short for a {gap_length}px gap"
    )))
}

fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// The `index`-th single-outline shape of `cfg` with a prescribed gap layout.
/// The outline and the placement seed depend only on `cfg.seed` and `index`,
/// so calls differing in `gap_length` cut the same shape.
pub fn sample_with_gaps(
    cfg: &DatasetConfig,
    index: usize,
    num_gaps: usize,
    gap_length: usize,
) -> Result<DatasetSample> {
    cfg.validate()?;
    let mut rng = sample_rng(cfg.seed, index);
    let category = CATEGORIES[index % (CATEGORIES.len() - 1)];
    let (shape, _) = random_traced_shape(category, cfg, &mut rng)?;
    let degradation = DegradationSpec {
        num_gaps,
        gap_length,
        seed: rng.random(),
    };
    DatasetSample::build(
        format!("{}_{index:05}_g{gap_length}", cfg.kind),
        shape,
        degradation,
        cfg.canvas,
    )
}

fn scale_shape(shape: &mut ShapeSpec, factor: f64) {
    shape.scale *= factor;
    for p in &mut shape.parts {
        scale_shape(p, factor);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    pub count: usize,
    pub canvas: usize,
    pub stroke_width: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            kind: DatasetKind::Simple,
            count: 100,
            canvas: 128,
            stroke_width: 1,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn new(kind: DatasetKind, count: usize, canvas: usize, seed: u64) -> Self {
        DatasetConfig {
            kind,
            count,
            canvas,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.canvas < 16 {
            return Err(Error::Config(format!(
                "canvas must be at least 16 px, got {}",
                self.canvas
            )));
        }
        if self.stroke_width == 0 || self.stroke_width > self.canvas / 8 {
            return Err(Error::Config(format!(
                "stroke_width must lie in [1, {}], got {}",
                self.canvas / 8,
                self.stroke_width
            )));
        }
        Ok(())
    }
}

/// Deterministic dataset: categories in round-robin order, one independent
/// random stream per sample.
pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Vec<DatasetSample>> {
    cfg.validate()?;
    (0..cfg.count)
        .map(|i| {
            let mut rng = sample_rng(cfg.seed, i);
            let id = format!("{}_{i:05}", cfg.kind);
            random_sample(id, CATEGORIES[i % CATEGORIES.len()], cfg, &mut rng)
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub category: Category,
    pub ground_truth: String,
    pub degraded: String,
    pub gap_stat: GapStat,
    pub shape: ShapeSpec,
    pub degradation: DegradationSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub config: DatasetConfig,
    pub samples: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes `<root>/<kind>/{id}_gt.png`, `{id}_degraded.png` and the manifest.
/// Returns the dataset directory.
pub fn write_dataset(root: &Path, cfg: &DatasetConfig, samples: &[DatasetSample]) -> Result<PathBuf> {
    let dir = root.join(cfg.kind.to_string());
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut entries = Vec::with_capacity(samples.len());
    for s in samples {
        let gt = format!("{}_gt.png", s.id);
        let degraded = format!("{}_degraded.png", s.id);
        s.ground_truth.save_png(dir.join(&gt))?;
        s.degraded.save_png(dir.join(&degraded))?;
        entries.push(ManifestEntry {
            id: s.id.clone(),
            category: s.category,
            ground_truth: gt,
            degraded,
            gap_stat: s.gap_stat,
            shape: s.shape.clone(),
            degradation: s.degradation.clone(),
        });
    }
    let manifest = Manifest {
        config: DatasetConfig {
            count: samples.len(),
            ..cfg.clone()
        },
        samples: entries,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(dir)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Loads a dataset directory written by [`write_dataset`]. Gap pixel lists are
/// re-derived from the stored shape and degradation specs.
pub fn load_dataset(dir: &Path) -> Result<(Manifest, Vec<DatasetSample>)> {
    let manifest = read_manifest(dir)?;
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for e in &manifest.samples {
        let ground_truth = BinaryImage::load_png(dir.join(&e.ground_truth))?;
        let degraded = BinaryImage::load_png(dir.join(&e.degraded))?;
        let gaps = trace_shape(&e.shape, ground_truth.height())
            .and_then(|t| t.cut_gaps(&e.degradation))
            .map(|d| d.gaps)
            .unwrap_or_default();
        samples.push(DatasetSample {
            id: e.id.clone(),
            category: e.category,
            gap_stat: gap_metric(&ground_truth, &degraded, 0.5)?,
            ground_truth,
            degraded,
            shape: e.shape.clone(),
            degradation: e.degradation.clone(),
            gaps,
        });
    }
    Ok((manifest, samples))
}
