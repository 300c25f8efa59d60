//! Point-set scores that drive snapshot selection.
//!
//! * reconstruction score ρ: percentage of the incomplete image's contour
//!   points that the output reproduces within `match_radius`;
//! * overfit score ω: percentage of the output's contour points with no
//!   incomplete-image point within `match_radius` (novel points);
//! * dissimilarity δ: distance of (ρ, ω) from the target (100, γ).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::BinaryImage;

pub type Point = (u32, u32);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoreConfig {
    pub binarize_threshold: f32,
    pub match_radius: f64,
    /// Target overfit score.
    pub gamma: f64,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig {
            binarize_threshold: 0.5,
            match_radius: 1.5,
            gamma: 5.0,
        }
    }
}

impl ScoreConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.binarize_threshold > 0.0 && self.binarize_threshold < 1.0) {
            return Err(Error::Config(format!(
                "binarize_threshold must lie in (0, 1), got {}",
                self.binarize_threshold
            )));
        }
        if !(self.match_radius > 0.0 && self.match_radius.is_finite()) {
            return Err(Error::Config(format!(
                "match_radius must be positive, got {}",
                self.match_radius
            )));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma must be ≥ 0, got {}", self.gamma)));
        }
        Ok(())
    }
}

fn dist2(a: Point, b: Point) -> u64 {
    let dr = a.0 as i64 - b.0 as i64;
    let dc = a.1 as i64 - b.1 as i64;
    (dr * dr + dc * dc) as u64
}

/// Static 2-d tree stored as an implicit balanced layout: the median of every
/// slice is its root, left half below, right half above.
#[derive(Debug, Clone, Default)]
pub struct KdTree {
    nodes: Vec<Point>,
}

impl KdTree {
    pub fn build(points: &[Point]) -> Self {
        let mut nodes = points.to_vec();
        Self::arrange(&mut nodes, 0);
        KdTree { nodes }
    }

    fn key(p: &Point, axis: usize) -> u32 {
        if axis == 0 {
            p.0
        } else {
            p.1
        }
    }

    fn arrange(slice: &mut [Point], axis: usize) {
        if slice.len() <= 1 {
            return;
        }
        let mid = slice.len() / 2;
        slice.select_nth_unstable_by_key(mid, |p| (Self::key(p, axis), Self::key(p, 1 - axis)));
        let (left, rest) = slice.split_at_mut(mid);
        Self::arrange(left, 1 - axis);
        Self::arrange(&mut rest[1..], 1 - axis);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nearest stored point and its squared distance.
    pub fn nearest(&self, query: Point) -> Option<(Point, u64)> {
        let mut best = None;
        Self::search(&self.nodes, query, 0, &mut best);
        best
    }

    fn search(slice: &[Point], q: Point, axis: usize, best: &mut Option<(Point, u64)>) {
        if slice.is_empty() {
            return;
        }
        let mid = slice.len() / 2;
        let node = slice[mid];
        let d = dist2(node, q);
        if best.is_none_or(|(_, bd)| d < bd) {
            *best = Some((node, d));
        }
        let diff = Self::key(&q, axis) as i64 - Self::key(&node, axis) as i64;
        let (near, far) = if diff < 0 {
            (&slice[..mid], &slice[mid + 1..])
        } else {
            (&slice[mid + 1..], &slice[..mid])
        };
        Self::search(near, q, 1 - axis, best);
        if best.is_none_or(|(_, bd)| ((diff * diff) as u64) <= bd) {
            Self::search(far, q, 1 - axis, best);
        }
    }

    /// Whether any stored point lies within `radius` of `query`.
    pub fn any_within(&self, query: Point, radius: f64) -> bool {
        self.nearest(query).is_some_and(|(_, d)| (d as f64) <= radius * radius)
    }
}

/// Contour points of an image plus their spatial index.
#[derive(Debug, Clone)]
pub struct PointSet {
    points: Vec<Point>,
    index: KdTree,
    height: usize,
    width: usize,
}

impl PointSet {
    pub fn from_points(height: usize, width: usize, points: Vec<Point>) -> Self {
        debug_assert!(points
            .iter()
            .all(|&(r, c)| (r as usize) < height && (c as usize) < width));
        let index = KdTree::build(&points);
        PointSet {
            points,
            index,
            height,
            width,
        }
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn index(&self) -> &KdTree {
        &self.index
    }

    /// Number of this set's points with a point of `other` within `radius`.
    pub fn matched_in(&self, other: &PointSet, radius: f64) -> usize {
        self.points
            .iter()
            .filter(|&&p| other.index.any_within(p, radius))
            .count()
    }
}

/// Every pixel darker than `threshold` becomes a point.
pub fn extract_points(img: &BinaryImage, threshold: f32) -> PointSet {
    let points = img.dark_pixels(threshold).map(|(r, c)| (r as u32, c as u32)).collect();
    PointSet::from_points(img.height(), img.width(), points)
}

/// ρ in [0, 100]; 100 when the incomplete image has no points.
pub fn reconstruction_score(output: &BinaryImage, incomplete: &BinaryImage, cfg: &ScoreConfig) -> Result<f64> {
    output.check_same_dims(incomplete)?;
    let out = extract_points(output, cfg.binarize_threshold);
    let inc = extract_points(incomplete, cfg.binarize_threshold);
    Ok(reconstruction_score_points(&out, &inc, cfg.match_radius))
}

pub fn reconstruction_score_points(output: &PointSet, incomplete: &PointSet, radius: f64) -> f64 {
    if incomplete.is_empty() {
        return 100.0;
    }
    100.0 * incomplete.matched_in(output, radius) as f64 / incomplete.len() as f64
}

/// ω in [0, 100]; 0 when the output has no points.
pub fn overfit_score(output: &BinaryImage, incomplete: &BinaryImage, cfg: &ScoreConfig) -> Result<f64> {
    output.check_same_dims(incomplete)?;
    let out = extract_points(output, cfg.binarize_threshold);
    let inc = extract_points(incomplete, cfg.binarize_threshold);
    Ok(overfit_score_points(&out, &inc, cfg.match_radius))
}

pub fn overfit_score_points(output: &PointSet, incomplete: &PointSet, radius: f64) -> f64 {
    if output.is_empty() {
        return 0.0;
    }
    let novel = output.len() - output.matched_in(incomplete, radius);
    100.0 * novel as f64 / output.len() as f64
}

/// δ = √((ρ − 100)² + (ω − γ)²)
pub fn dissimilarity(rho: f64, omega: f64, gamma: f64) -> f64 {
    ((rho - 100.0).powi(2) + (omega - gamma).powi(2)).sqrt()
}

/// ρ, ω and δ of one output against a prepared incomplete-image point set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scores {
    pub rho: f64,
    pub omega: f64,
    pub delta: f64,
}

pub fn score_against(output: &BinaryImage, incomplete: &PointSet, cfg: &ScoreConfig) -> Scores {
    let out = extract_points(output, cfg.binarize_threshold);
    let rho = reconstruction_score_points(&out, incomplete, cfg.match_radius);
    let omega = overfit_score_points(&out, incomplete, cfg.match_radius);
    Scores {
        rho,
        omega,
        delta: dissimilarity(rho, omega, cfg.gamma),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapStat {
    pub phi_gt: usize,
    pub phi_incomplete: usize,
    pub gap: f64,
}

/// Fraction of ground-truth contour pixels missing from the incomplete image.
pub fn gap_metric(ground_truth: &BinaryImage, incomplete: &BinaryImage, threshold: f32) -> Result<GapStat> {
    ground_truth.check_same_dims(incomplete)?;
    let phi_gt = ground_truth.dark_count(threshold);
    if phi_gt == 0 {
        return Err(Error::EmptyGroundTruth);
    }
    let phi_incomplete = incomplete.dark_count(threshold);
    Ok(GapStat {
        phi_gt,
        phi_incomplete,
        gap: (phi_gt as f64 - phi_incomplete as f64) / phi_gt as f64,
    })
}
