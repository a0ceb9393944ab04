//! Stationary ergodic microstructures on a periodized in-plane box.
//!
//! A [`MicrostructureRealization`] is one frozen sample `ω` of the random
//! medium, restricted to the flat torus `[0, L)²`. Queries go through
//! [`MicrostructureRealization::phase_at`], and the translation action
//! `T_x ω` is [`MicrostructureRealization::shift`].

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};

pub type PhaseId = u32;

/// RNG stream ids. Positions and marks are drawn from independent streams.
const STREAM_COUNT: u64 = 0;
const STREAM_POSITIONS: u64 = 1;
const STREAM_MARKS: u64 = 2;
const STREAMS_PER_ATTEMPT: u64 = 3;
const MAX_RESAMPLE_ATTEMPTS: u64 = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MicrostructureKind {
    /// Stripes normal to `e1`; phase widths proportional to the mark probabilities.
    PeriodicTexture,
    /// Two-phase checkerboard with square side `period_hint`.
    Checkerboard,
    /// Voronoi tessellation of a Poisson point process with i.i.d. marks.
    PoissonVoronoi,
}

/// What to do when the Poisson draw is empty.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptyDrawPolicy {
    #[default]
    Error,
    Resample,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mark {
    pub phase: PhaseId,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MicrostructureModel {
    pub kind: MicrostructureKind,
    #[serde(default = "default_period")]
    pub period_hint: f64,
    #[serde(default)]
    pub intensity: f64,
    pub mark_distribution: Vec<Mark>,
    pub phase_count: usize,
    #[serde(default)]
    pub empty_draw: EmptyDrawPolicy,
}

fn default_period() -> f64 {
    1.0
}

impl MicrostructureModel {
    /// Single-phase medium.
    pub fn homogeneous(phase: PhaseId) -> Self {
        Self {
            kind: MicrostructureKind::PeriodicTexture,
            period_hint: 1.0,
            intensity: 0.0,
            mark_distribution: vec![Mark {
                phase,
                probability: 1.0,
            }],
            phase_count: 1,
            empty_draw: EmptyDrawPolicy::Error,
        }
    }

    /// Stripes normal to `e1` with the given phases and volume fractions.
    pub fn laminate(period: f64, marks: &[(PhaseId, f64)]) -> Self {
        Self {
            kind: MicrostructureKind::PeriodicTexture,
            period_hint: period,
            intensity: 0.0,
            mark_distribution: to_marks(marks),
            phase_count: marks.len(),
            empty_draw: EmptyDrawPolicy::Error,
        }
    }

    pub fn checkerboard(square: f64, a: PhaseId, b: PhaseId) -> Self {
        Self {
            kind: MicrostructureKind::Checkerboard,
            period_hint: square,
            intensity: 0.0,
            mark_distribution: to_marks(&[(a, 0.5), (b, 0.5)]),
            phase_count: 2,
            empty_draw: EmptyDrawPolicy::Error,
        }
    }

    pub fn poisson_voronoi(intensity: f64, marks: &[(PhaseId, f64)]) -> Self {
        Self {
            kind: MicrostructureKind::PoissonVoronoi,
            period_hint: 1.0,
            intensity,
            mark_distribution: to_marks(marks),
            phase_count: marks.len(),
            empty_draw: EmptyDrawPolicy::Error,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let marks = &self.mark_distribution;
        if marks.is_empty() {
            return Err(Error::InvalidModel("mark_distribution is empty".into()));
        }
        if self.phase_count != marks.len() {
            return Err(Error::InvalidModel(format!(
                "phase_count {} does not match {} marks",
                self.phase_count,
                marks.len()
            )));
        }
        if marks.iter().any(|m| !(m.probability >= 0.0)) {
            return Err(Error::InvalidModel("negative mark probability".into()));
        }
        let total: f64 = marks.iter().map(|m| m.probability).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidModel(format!(
                "mark probabilities sum to {total}, expected 1"
            )));
        }
        for (k, m) in marks.iter().enumerate() {
            if marks[..k].iter().any(|o| o.phase == m.phase) {
                return Err(Error::InvalidModel(format!("duplicate phase {}", m.phase)));
            }
        }
        match self.kind {
            MicrostructureKind::PoissonVoronoi => {
                if !(self.intensity > 0.0) {
                    return Err(Error::InvalidModel("intensity must be positive".into()));
                }
            }
            MicrostructureKind::PeriodicTexture | MicrostructureKind::Checkerboard => {
                if !(self.period_hint > 0.0) {
                    return Err(Error::InvalidModel("period_hint must be positive".into()));
                }
                if self.kind == MicrostructureKind::Checkerboard && marks.len() != 2 {
                    return Err(Error::InvalidModel(
                        "checkerboard needs exactly two phases".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn phases(&self) -> Vec<PhaseId> {
        self.mark_distribution.iter().map(|m| m.phase).collect()
    }

    /// Expected area fraction of each phase, in `mark_distribution` order.
    pub fn area_fractions(&self) -> Vec<f64> {
        match self.kind {
            MicrostructureKind::Checkerboard => vec![0.5, 0.5],
            _ => self.mark_distribution.iter().map(|m| m.probability).collect(),
        }
    }

    fn is_periodic(&self) -> bool {
        self.kind != MicrostructureKind::PoissonVoronoi
    }
}

fn to_marks(marks: &[(PhaseId, f64)]) -> Vec<Mark> {
    marks
        .iter()
        .map(|&(phase, probability)| Mark { phase, probability })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarkedPoint {
    pub position: [f64; 2],
    pub phase: PhaseId,
}

/// Uniform bucket grid over the torus for nearest-point queries.
#[derive(Debug)]
struct BucketIndex {
    per_side: usize,
    size: f64,
    starts: Vec<usize>,
    ids: Vec<usize>,
}

impl BucketIndex {
    fn build(points: &[MarkedPoint], box_side: f64) -> Self {
        let per_side = ((points.len() as f64).sqrt().floor() as usize).max(1);
        let size = box_side / per_side as f64;
        let bucket_of = |p: &MarkedPoint| {
            let bx = ((p.position[0] / size) as usize).min(per_side - 1);
            let by = ((p.position[1] / size) as usize).min(per_side - 1);
            by * per_side + bx
        };
        let mut counts = vec![0usize; per_side * per_side + 1];
        for p in points {
            counts[bucket_of(p) + 1] += 1;
        }
        for k in 1..counts.len() {
            counts[k] += counts[k - 1];
        }
        let starts = counts.clone();
        let mut cursor = counts;
        let mut ids = vec![0usize; points.len()];
        for (id, p) in points.iter().enumerate() {
            let b = bucket_of(p);
            ids[cursor[b]] = id;
            cursor[b] += 1;
        }
        Self {
            per_side,
            size,
            starts,
            ids,
        }
    }

    fn bucket(&self, bx: usize, by: usize) -> &[usize] {
        let b = by * self.per_side + bx;
        &self.ids[self.starts[b]..self.starts[b + 1]]
    }
}

/// One frozen sample of the medium on `[0, L)²`, together with the state of
/// the translation action.
#[derive(Clone, Debug)]
pub struct MicrostructureRealization {
    model: MicrostructureModel,
    seed: u64,
    box_side: f64,
    points: Arc<[MarkedPoint]>,
    offset: [f64; 2],
    index: Option<Arc<BucketIndex>>,
}

/// Samples a realization of `model` on a box of side `box_side`.
///
/// For periodic kinds the seed is recorded but ignored.
pub fn sample_realization(
    model: &MicrostructureModel,
    seed: u64,
    box_side: f64,
) -> Result<MicrostructureRealization> {
    model.validate()?;
    if !(box_side > 0.0) {
        return Err(Error::InvalidArgument("box_side must be positive".into()));
    }
    if model.is_periodic() {
        let ratio = box_side / model.period_hint;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) || ratio.round() < 1.0 {
            return Err(Error::NonCommensurateBox {
                box_side,
                period: model.period_hint,
            });
        }
        return Ok(MicrostructureRealization {
            model: model.clone(),
            seed,
            box_side,
            points: Arc::from(Vec::new()),
            offset: [0.0, 0.0],
            index: None,
        });
    }

    let mean = model.intensity * box_side * box_side;
    let mut attempt = 0;
    let points = loop {
        let base = attempt * STREAMS_PER_ATTEMPT;
        let count = draw_count(seed, base + STREAM_COUNT, mean);
        if count > 0 {
            break draw_points(model, seed, base, count, box_side);
        }
        match model.empty_draw {
            EmptyDrawPolicy::Error => return Err(Error::EmptyPointProcess { seed }),
            EmptyDrawPolicy::Resample => {
                attempt += 1;
                if attempt >= MAX_RESAMPLE_ATTEMPTS {
                    return Err(Error::EmptyPointProcess { seed });
                }
            }
        }
    };
    let index = BucketIndex::build(&points, box_side);
    Ok(MicrostructureRealization {
        model: model.clone(),
        seed,
        box_side,
        points: Arc::from(points),
        offset: [0.0, 0.0],
        index: Some(Arc::new(index)),
    })
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn draw_count(seed: u64, stream: u64, mean: f64) -> usize {
    let mut rng = stream_rng(seed, stream);
    // rand_distr's Poisson rejects a zero mean; any positive mean is fine.
    let dist = Poisson::new(mean).expect("positive Poisson mean");
    dist.sample(&mut rng) as usize
}

fn draw_points(
    model: &MicrostructureModel,
    seed: u64,
    base: u64,
    count: usize,
    box_side: f64,
) -> Vec<MarkedPoint> {
    let mut pos_rng = stream_rng(seed, base + STREAM_POSITIONS);
    let mut mark_rng = stream_rng(seed, base + STREAM_MARKS);
    (0..count)
        .map(|_| {
            let x = wrap(pos_rng.random::<f64>() * box_side, box_side);
            let y = wrap(pos_rng.random::<f64>() * box_side, box_side);
            let u: f64 = mark_rng.random();
            MarkedPoint {
                position: [x, y],
                phase: pick_mark(&model.mark_distribution, u),
            }
        })
        .collect()
}

fn pick_mark(marks: &[Mark], u: f64) -> PhaseId {
    let mut acc = 0.0;
    for m in marks {
        acc += m.probability;
        if u < acc {
            return m.phase;
        }
    }
    // u sits in the rounding gap above the last partial sum
    marks
        .iter()
        .rev()
        .find(|m| m.probability > 0.0)
        .unwrap_or(&marks[marks.len() - 1])
        .phase
}

/// Wraps `x` into `[0, L)`.
pub fn wrap(x: f64, l: f64) -> f64 {
    let w = x.rem_euclid(l);
    if w >= l {
        0.0
    } else {
        w
    }
}

/// Minimum-image difference `a - b` on a circle of length `l`.
fn min_image(a: f64, b: f64, l: f64) -> f64 {
    let mut d = (a - b).rem_euclid(l);
    if d > 0.5 * l {
        d -= l;
    }
    d
}

fn lex_less(a: [f64; 2], b: [f64; 2]) -> bool {
    a[0] < b[0] || (a[0] == b[0] && a[1] < b[1])
}

impl MicrostructureRealization {
    pub fn model(&self) -> &MicrostructureModel {
        &self.model
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn box_side(&self) -> f64 {
        self.box_side
    }

    pub fn points(&self) -> &[MarkedPoint] {
        &self.points
    }

    pub fn offset(&self) -> [f64; 2] {
        self.offset
    }

    /// Phase occupying `point`, after applying the current translation.
    pub fn phase_at(&self, point: [f64; 2]) -> PhaseId {
        let l = self.box_side;
        let q = [
            wrap(point[0] + self.offset[0], l),
            wrap(point[1] + self.offset[1], l),
        ];
        match self.model.kind {
            MicrostructureKind::PeriodicTexture => self.stripe_phase(q),
            MicrostructureKind::Checkerboard => {
                let p = self.model.period_hint;
                let i = (q[0] / p).floor() as i64;
                let j = (q[1] / p).floor() as i64;
                let marks = &self.model.mark_distribution;
                if (i + j).rem_euclid(2) == 0 {
                    marks[0].phase
                } else {
                    marks[1].phase
                }
            }
            MicrostructureKind::PoissonVoronoi => self.points[self.nearest(q)].phase,
        }
    }

    fn stripe_phase(&self, q: [f64; 2]) -> PhaseId {
        let p = self.model.period_hint;
        let t = q[0].rem_euclid(p) / p;
        pick_mark(&self.model.mark_distribution, t)
    }

    /// Index of the nearest Poisson point to `q ∈ [0, L)²` under the torus
    /// metric; ties go to the lexicographically smaller position.
    fn nearest(&self, q: [f64; 2]) -> usize {
        let index = self.index.as_ref().expect("Voronoi realization has an index");
        let l = self.box_side;
        let n = index.per_side;
        let bx = ((q[0] / index.size) as usize).min(n - 1);
        let by = ((q[1] / index.size) as usize).min(n - 1);

        let mut best = usize::MAX;
        let mut best_d2 = f64::INFINITY;
        let consider = |id: usize, best: &mut usize, best_d2: &mut f64| {
            let p = self.points[id].position;
            let dx = min_image(p[0], q[0], l);
            let dy = min_image(p[1], q[1], l);
            let d2 = dx * dx + dy * dy;
            if d2 < *best_d2
                || (d2 == *best_d2 && lex_less(p, self.points[*best].position))
            {
                *best_d2 = d2;
                *best = id;
            }
        };

        // Rings of buckets at Chebyshev distance r; once a ring wraps onto
        // itself every bucket has been seen, so fall back to a full scan.
        let mut r = 0usize;
        loop {
            if 2 * r + 1 > n {
                for id in 0..self.points.len() {
                    consider(id, &mut best, &mut best_d2);
                }
                return best;
            }
            let ri = r as isize;
            for dy in -ri..=ri {
                for dx in -ri..=ri {
                    if dx.abs().max(dy.abs()) != ri {
                        continue;
                    }
                    let cx = (bx as isize + dx).rem_euclid(n as isize) as usize;
                    let cy = (by as isize + dy).rem_euclid(n as isize) as usize;
                    for &id in index.bucket(cx, cy) {
                        consider(id, &mut best, &mut best_d2);
                    }
                }
            }
            // Anything outside rings 0..=r is at least r bucket widths away.
            let reach = r as f64 * index.size;
            if best != usize::MAX && best_d2 < reach * reach {
                return best;
            }
            r += 1;
        }
    }

    /// The realization `T_x ω`: `shift(x).phase_at(p) == phase_at(p + x)`.
    pub fn shift(&self, x: [f64; 2]) -> Self {
        let mut out = self.clone();
        out.offset = [self.offset[0] + x[0], self.offset[1] + x[1]];
        out
    }

    /// Samples the phase at element centres of an `n1 × n2` grid.
    pub fn rasterize(&self, n1: usize, n2: usize) -> Result<PhaseGrid> {
        self.rasterize_with(n1, n2, Execution::Parallel)
    }

    pub fn rasterize_with(&self, n1: usize, n2: usize, exec: Execution) -> Result<PhaseGrid> {
        if n1 == 0 || n2 == 0 {
            return Err(Error::InvalidArgument("grid sizes must be at least 1".into()));
        }
        let l = self.box_side;
        let cell_phase = exec::map_range(exec, n1 * n2, |k| {
            let (i, j) = (k / n2, k % n2);
            self.phase_at([
                (i as f64 + 0.5) * l / n1 as f64,
                (j as f64 + 0.5) * l / n2 as f64,
            ])
        });
        Ok(PhaseGrid {
            n1,
            n2,
            box_side: l,
            cell_phase,
        })
    }

    /// JSON dump `{model, seed, box_side, offset, points: [[x, y, phase], ...]}`.
    pub fn to_dump(&self) -> RealizationDump {
        RealizationDump {
            model: self.model.clone(),
            seed: self.seed,
            box_side: self.box_side,
            offset: self.offset,
            points: self
                .points
                .iter()
                .map(|p| (p.position[0], p.position[1], p.phase))
                .collect(),
        }
    }

    pub fn from_dump(dump: &RealizationDump) -> Result<Self> {
        dump.model.validate()?;
        let points: Vec<MarkedPoint> = dump
            .points
            .iter()
            .map(|&(x, y, phase)| MarkedPoint {
                position: [x, y],
                phase,
            })
            .collect();
        if points
            .iter()
            .any(|p| !(0.0..dump.box_side).contains(&p.position[0]) || !(0.0..dump.box_side).contains(&p.position[1]))
        {
            return Err(Error::InvalidModel("point outside [0, L)²".into()));
        }
        let index = if dump.model.is_periodic() {
            None
        } else {
            if points.is_empty() {
                return Err(Error::EmptyPointProcess { seed: dump.seed });
            }
            Some(Arc::new(BucketIndex::build(&points, dump.box_side)))
        };
        Ok(Self {
            model: dump.model.clone(),
            seed: dump.seed,
            box_side: dump.box_side,
            points: Arc::from(points),
            offset: dump.offset,
            index,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealizationDump {
    pub model: MicrostructureModel,
    pub seed: u64,
    pub box_side: f64,
    #[serde(default)]
    pub offset: [f64; 2],
    pub points: Vec<(f64, f64, PhaseId)>,
}

/// Phase ids sampled at element centres; constant through the thickness.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseGrid {
    pub n1: usize,
    pub n2: usize,
    pub box_side: f64,
    /// Row-major: entry `i * n2 + j` is cell `(i, j)`, `i` along `x1`.
    pub cell_phase: Vec<PhaseId>,
}

impl PhaseGrid {
    pub fn uniform(n1: usize, n2: usize, box_side: f64, phase: PhaseId) -> Self {
        Self {
            n1,
            n2,
            box_side,
            cell_phase: vec![phase; n1 * n2],
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> PhaseId {
        self.cell_phase[i * self.n2 + j]
    }

    /// Fraction of cells carrying each phase in `phases`.
    pub fn histogram(&self, phases: &[PhaseId]) -> Vec<f64> {
        let total = self.cell_phase.len() as f64;
        phases
            .iter()
            .map(|ph| self.cell_phase.iter().filter(|&&c| c == *ph).count() as f64 / total)
            .collect()
    }
}
