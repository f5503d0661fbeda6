//! Deterministic synthetic multimodal datasets and probe classifiers.
//!
//! Records are rendered independently: record `i` uses a ChaCha stream
//! seeded by `seed` on stream `i`, so any record can be regenerated on its
//! own. Labels cycle through the classes (`label = i mod C`), which keeps
//! the classes balanced exactly.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use diffmvae_nn::{Activation, Adam, Mlp, ParamStore, Tape};
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::multimodal_model::{argmax, DecoderKind, Likelihood, ModalitySpec};

pub const IMAGE_SIDE: usize = 16;
pub const SHAPE_CLASSES: usize = 4;
pub const GLYPH_CLASSES: usize = 10;
pub const ATTRIBUTE_BITS: usize = 8;

/// One record with every modality flattened, keyed by modality name.
#[derive(Clone, Debug, PartialEq)]
pub struct MultimodalRecord {
    pub modalities: BTreeMap<String, Vec<f64>>,
    pub label: usize,
}

/// Column-stacked modalities: `data[m]` is `n x dim_m`, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MultimodalDataset {
    pub names: Vec<String>,
    pub shapes: Vec<Vec<usize>>,
    pub data: Vec<Array2<f64>>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl MultimodalDataset {
    pub fn new(
        names: Vec<String>,
        shapes: Vec<Vec<usize>>,
        data: Vec<Array2<f64>>,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if names.len() != shapes.len() || names.len() != data.len() || names.is_empty() {
            return Err(invalid("names, shapes and data must have one entry per modality"));
        }
        for ((name, shape), x) in names.iter().zip(&shapes).zip(&data) {
            if x.nrows() != labels.len() {
                return Err(invalid(format!("modality '{name}' has {} rows for {} labels", x.nrows(), labels.len())));
            }
            if shape.iter().product::<usize>() != x.ncols() {
                return Err(invalid(format!("modality '{name}' shape {shape:?} does not match {} columns", x.ncols())));
            }
        }
        if labels.iter().any(|&l| l >= num_classes) {
            return Err(invalid("label outside [0, num_classes)"));
        }
        Ok(Self { names, shapes, data, labels, num_classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_modalities(&self) -> usize {
        self.names.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn modality(&self, name: &str) -> Option<&Array2<f64>> {
        self.index_of(name).map(|i| &self.data[i])
    }

    pub fn record(&self, i: usize) -> MultimodalRecord {
        let modalities = self.names.iter().zip(&self.data).map(|(n, x)| (n.clone(), x.row(i).to_vec())).collect();
        MultimodalRecord { modalities, label: self.labels[i] }
    }

    /// Rows `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            names: self.names.clone(),
            shapes: self.shapes.clone(),
            data: self.data.iter().map(|x| x.select(Axis(0), indices)).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// The first `n` rows and the rest.
    pub fn split(&self, n: usize) -> (Self, Self) {
        let n = n.min(self.len());
        let head: Vec<usize> = (0..n).collect();
        let tail: Vec<usize> = (n..self.len()).collect();
        (self.select(&head), self.select(&tail))
    }

    /// Modality specs using `kind_for(name)` for each decoder. Feed-forward
    /// modalities get a Bernoulli likelihood.
    pub fn specs(&self, kind_for: impl Fn(&str) -> DecoderKind) -> Vec<ModalitySpec> {
        self.names
            .iter()
            .zip(&self.shapes)
            .map(|(n, s)| match kind_for(n) {
                DecoderKind::Diffusion => ModalitySpec::diffusion(n.clone(), s.clone()),
                DecoderKind::FeedForward => ModalitySpec::feed_forward(n.clone(), s.clone(), Likelihood::Bernoulli),
            })
            .collect()
    }

    /// Number of records per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_classes];
        self.labels.iter().for_each(|&l| c[l] += 1);
        c
    }
}

fn record_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

type Point = (f64, f64);

/// Stroke primitives in glyph coordinates `[-1, 1]^2`, y pointing down.
#[derive(Clone, Copy)]
enum Stroke {
    Seg(Point, Point),
    Ring(Point, f64),
}

fn glyph(class: usize) -> Vec<Stroke> {
    use Stroke::{Ring, Seg};
    match class {
        0 => vec![Ring((0.0, 0.0), 0.8)],
        1 => vec![Seg((0.0, -0.9), (0.0, 0.9)), Seg((-0.35, -0.6), (0.0, -0.9))],
        2 => vec![Seg((-0.7, -0.8), (0.7, -0.8)), Seg((0.7, -0.8), (-0.7, 0.8)), Seg((-0.7, 0.8), (0.7, 0.8))],
        3 => vec![Seg((0.0, -0.85), (0.8, 0.75)), Seg((0.8, 0.75), (-0.8, 0.75)), Seg((-0.8, 0.75), (0.0, -0.85))],
        4 => vec![Seg((0.0, -0.85), (0.0, 0.85)), Seg((-0.85, 0.0), (0.85, 0.0))],
        5 => vec![Seg((-0.75, -0.75), (0.75, 0.75)), Seg((-0.75, 0.75), (0.75, -0.75))],
        6 => vec![
            Seg((-0.7, -0.7), (0.7, -0.7)),
            Seg((0.7, -0.7), (0.7, 0.7)),
            Seg((0.7, 0.7), (-0.7, 0.7)),
            Seg((-0.7, 0.7), (-0.7, -0.7)),
        ],
        7 => vec![Seg((-0.75, -0.8), (0.0, 0.85)), Seg((0.0, 0.85), (0.75, -0.8))],
        8 => vec![Seg((-0.8, -0.8), (0.8, -0.8)), Seg((0.0, -0.8), (0.0, 0.9))],
        _ => vec![Seg((-0.7, -0.85), (-0.7, 0.85)), Seg((0.7, -0.85), (0.7, 0.85)), Seg((-0.7, 0.0), (0.7, 0.0))],
    }
}

fn seg_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    ((p.0 - a.0 - t * dx).powi(2) + (p.1 - a.1 - t * dy).powi(2)).sqrt()
}

/// Similarity placement of glyph space onto the pixel grid.
#[derive(Clone, Copy)]
struct Placement {
    cx: f64,
    cy: f64,
    /// Pixels per glyph unit.
    scale: f64,
    angle: f64,
}

impl Placement {
    /// Pixel centre `(col, row)` mapped back into glyph coordinates.
    fn to_glyph(&self, col: usize, row: usize) -> Point {
        let (x, y) = ((col as f64 + 0.5 - self.cx) / self.scale, (row as f64 + 0.5 - self.cy) / self.scale);
        let (s, c) = self.angle.sin_cos();
        (c * x + s * y, -s * x + c * y)
    }
}

/// Anti-aliased stroke coverage in `[0, 1]`, `width` in pixels.
fn render_strokes(strokes: &[Stroke], place: Placement, width: f64) -> Vec<f64> {
    let mut img = vec![0.0; IMAGE_SIDE * IMAGE_SIDE];
    for row in 0..IMAGE_SIDE {
        for col in 0..IMAGE_SIDE {
            let p = place.to_glyph(col, row);
            let d = strokes
                .iter()
                .map(|s| match *s {
                    Stroke::Seg(a, b) => seg_distance(p, a, b),
                    Stroke::Ring(c, r) => (((p.0 - c.0).powi(2) + (p.1 - c.1).powi(2)).sqrt() - r).abs(),
                })
                .fold(f64::INFINITY, f64::min);
            img[row * IMAGE_SIDE + col] = (0.5 * width + 0.5 - d * place.scale).clamp(0.0, 1.0);
        }
    }
    img
}

/// Background texture of modality `m` with a per-record phase.
fn background(m: usize, phase: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut img = vec![0.0; IMAGE_SIDE * IMAGE_SIDE];
    for row in 0..IMAGE_SIDE {
        for col in 0..IMAGE_SIDE {
            let (x, y) = (col as f64, row as f64);
            let v = match m % 5 {
                0 => 0.5 + 0.5 * (2.0 * PI * y / 4.0 + phase).sin(),
                1 => 0.5 + 0.5 * (2.0 * PI * x / 4.0 + phase).sin(),
                2 => {
                    let k = (phase * 2.0) as usize;
                    if ((col + k) / 2 + row / 2).is_multiple_of(2) { 1.0 } else { 0.0 }
                }
                3 => 0.5 + 0.5 * (2.0 * PI * (x + y) / 6.0 + phase).sin(),
                _ => {
                    let r = ((x - 7.5).powi(2) + (y - 7.5).powi(2)).sqrt();
                    0.5 + 0.5 * (2.0 * PI * r / 5.0 + phase).cos()
                }
            };
            let noise: f64 = rng.random_range(-0.05..0.05);
            img[row * IMAGE_SIDE + col] = (0.35 * v + noise).clamp(0.0, 0.4);
        }
    }
    img
}

fn polymnist_record(index: usize, m: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = record_rng(seed, index);
    let class = index % GLYPH_CLASSES;
    let strokes = glyph(class);
    (0..m)
        .map(|k| {
            let place = Placement {
                cx: 8.0 + rng.random_range(-1.5..1.5),
                cy: 8.0 + rng.random_range(-1.5..1.5),
                scale: 5.5 * rng.random_range(0.85..1.1),
                angle: rng.random_range(-0.2..0.2),
            };
            let width = rng.random_range(1.1..1.6);
            let fg = render_strokes(&strokes, place, width);
            let phase = rng.random_range(0.0..2.0 * PI);
            let bg = background(k, phase, &mut rng);
            fg.iter().zip(&bg).map(|(&g, &b)| g + (1.0 - g) * b).collect()
        })
        .collect()
}

/// `n` records of `m` 16 x 16 image modalities, each showing the same
/// glyph class (10 classes) over a modality-specific background texture.
/// Modalities are named `m0`, `m1`, ...
pub fn make_polymnist_like(n: usize, m: usize, seed: u64) -> Result<MultimodalDataset> {
    if !(2..=5).contains(&m) {
        return Err(invalid(format!("modality count must be in 2..=5, got {m}")));
    }
    let dim = IMAGE_SIDE * IMAGE_SIDE;
    let mut data: Vec<Array2<f64>> = (0..m).map(|_| Array2::zeros((n, dim))).collect();
    for i in 0..n {
        for (k, img) in polymnist_record(i, m, seed).into_iter().enumerate() {
            data[k].row_mut(i).assign(&ndarray::ArrayView1::from(&img));
        }
    }
    MultimodalDataset::new(
        (0..m).map(|k| format!("m{k}")).collect(),
        vec![vec![IMAGE_SIDE, IMAGE_SIDE]; m],
        data,
        (0..n).map(|i| i % GLYPH_CLASSES).collect(),
        GLYPH_CLASSES,
    )
}

/// Signed distance to a convex polygon, exact inside and a lower bound
/// outside. Vertices may be in either winding order.
fn convex_sdf(vertices: &[Point], p: Point) -> f64 {
    let n = vertices.len();
    let centroid = vertices.iter().fold((0.0, 0.0), |a, v| (a.0 + v.0 / n as f64, a.1 + v.1 / n as f64));
    (0..n)
        .map(|i| {
            let (a, b) = (vertices[i], vertices[(i + 1) % n]);
            let (ex, ey) = (b.0 - a.0, b.1 - a.1);
            let len = (ex * ex + ey * ey).sqrt();
            let (mut nx, mut ny) = (ey / len, -ex / len);
            if nx * (centroid.0 - a.0) + ny * (centroid.1 - a.1) > 0.0 {
                nx = -nx;
                ny = -ny;
            }
            nx * (p.0 - a.0) + ny * (p.1 - a.1)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Signed distance (glyph units) to a filled shape of class `c`.
fn shape_sdf(c: usize, p: Point) -> f64 {
    match c {
        0 => (p.0 * p.0 + p.1 * p.1).sqrt() - 0.9,
        1 => p.0.abs().max(p.1.abs()) - 0.75,
        2 => convex_sdf(&[(0.0, -0.9), (0.9, 0.7), (-0.9, 0.7)], p),
        _ => {
            // Plus sign: union of two bars.
            let bar = |u: f64, v: f64| (u.abs() - 0.85).max(v.abs() - 0.3);
            bar(p.0, p.1).min(bar(p.1, p.0))
        }
    }
}

/// `n` records of a shape raster, its binary mask and an 8-bit attribute
/// vector; 4 shape classes.
///
/// Attribute bits: 0-1 class code (`[c & 1, c >> 1]`), 2 right half,
/// 3 lower half, 4 large, 5-7 independent coin flips.
pub fn make_shapes_attributes(n: usize, seed: u64) -> Result<MultimodalDataset> {
    if n == 0 {
        return Err(invalid("need at least one record"));
    }
    let dim = IMAGE_SIDE * IMAGE_SIDE;
    let mut raster = Array2::zeros((n, dim));
    let mut mask = Array2::zeros((n, dim));
    let mut attrs = Array2::zeros((n, ATTRIBUTE_BITS));
    for i in 0..n {
        let mut rng = record_rng(seed, i);
        let class = i % SHAPE_CLASSES;
        let large = rng.random_bool(0.5);
        let scale = if large { rng.random_range(4.5..5.5) } else { rng.random_range(3.2..4.0) };
        let margin = scale + 0.5;
        let place = Placement {
            cx: rng.random_range(margin..IMAGE_SIDE as f64 - margin),
            cy: rng.random_range(margin..IMAGE_SIDE as f64 - margin),
            scale,
            angle: rng.random_range(-0.15..0.15),
        };
        let level = rng.random_range(0.7..1.0);
        for row in 0..IMAGE_SIDE {
            for col in 0..IMAGE_SIDE {
                let coverage = (0.5 - shape_sdf(class, place.to_glyph(col, row)) * scale).clamp(0.0, 1.0);
                let shade = 1.0 - 0.15 * (row as f64 / IMAGE_SIDE as f64);
                let k = row * IMAGE_SIDE + col;
                raster[[i, k]] = level * shade * coverage;
                mask[[i, k]] = if coverage > 0.3 { 1.0 } else { 0.0 };
            }
        }
        let bits = [
            (class & 1) as f64,
            (class >> 1) as f64,
            (place.cx >= IMAGE_SIDE as f64 / 2.0) as u8 as f64,
            (place.cy >= IMAGE_SIDE as f64 / 2.0) as u8 as f64,
            large as u8 as f64,
            rng.random_bool(0.5) as u8 as f64,
            rng.random_bool(0.5) as u8 as f64,
            rng.random_bool(0.5) as u8 as f64,
        ];
        attrs.row_mut(i).assign(&ndarray::ArrayView1::from(&bits));
    }
    MultimodalDataset::new(
        vec!["image".into(), "mask".into(), "attributes".into()],
        vec![vec![IMAGE_SIDE, IMAGE_SIDE], vec![IMAGE_SIDE, IMAGE_SIDE], vec![ATTRIBUTE_BITS]],
        vec![raster, mask, attrs],
        (0..n).map(|i| i % SHAPE_CLASSES).collect(),
        SHAPE_CLASSES,
    )
}

/// Small MLP classifier for one modality.
pub struct ProbeClassifier {
    mlp: Mlp,
    params: ParamStore,
    /// Held-out accuracy measured after training.
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Standard deviation of Gaussian input noise used as augmentation.
    pub input_noise: f64,
    /// Fraction of records held out for the accuracy estimate.
    pub holdout: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { hidden: vec![128, 64], epochs: 20, batch_size: 64, lr: 2e-3, input_noise: 0.1, holdout: 0.2, seed: 0 }
    }
}

impl ProbeClassifier {
    pub const MIN_ACCURACY: f64 = 0.95;

    pub fn logits(&self, x: &Array2<f64>) -> Array2<f64> {
        let tape = Tape::new();
        self.mlp.forward(&tape, &self.params, tape.constant(x.clone())).value()
    }

    pub fn predict(&self, x: &Array2<f64>) -> Vec<usize> {
        self.logits(x).axis_iter(Axis(0)).map(|r| argmax(r.iter().copied())).collect()
    }

    /// Penultimate-layer activations, used as Fréchet features.
    pub fn features(&self, x: &Array2<f64>) -> Array2<f64> {
        let tape = Tape::new();
        self.mlp.penultimate(&tape, &self.params, tape.constant(x.clone())).value()
    }

    /// Fraction of rows of `x` classified as `labels`.
    pub fn score(&self, x: &Array2<f64>, labels: &[usize]) -> f64 {
        let pred = self.predict(x);
        pred.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len().max(1) as f64
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.in_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.mlp.out_dim()
    }
}

/// Trains a probe on `x` with `labels` without any accuracy requirement.
pub fn fit_probe(x: &Array2<f64>, labels: &[usize], num_classes: usize, cfg: &ProbeConfig) -> Result<ProbeClassifier> {
    if x.nrows() != labels.len() || x.nrows() < 2 {
        return Err(invalid("probe training needs at least two labelled rows"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    order.shuffle(&mut rng);
    let n_hold = ((x.nrows() as f64 * cfg.holdout).round() as usize).clamp(1, x.nrows() - 1);
    let (hold, train) = order.split_at(n_hold);

    let mut params = ParamStore::new();
    let mut dims = vec![x.ncols()];
    dims.extend_from_slice(&cfg.hidden);
    dims.push(num_classes);
    let mlp = Mlp::new(&mut params, "probe", &dims, Activation::Relu, &mut rng);
    let mut opt = Adam::new(&params, cfg.lr);
    let mut train = train.to_vec();
    for _ in 0..cfg.epochs {
        train.shuffle(&mut rng);
        for chunk in train.chunks(cfg.batch_size) {
            let mut xb = x.select(Axis(0), chunk);
            if cfg.input_noise > 0.0 {
                xb.mapv_inplace(|v| v + cfg.input_noise * rng.sample::<f64, _>(StandardNormal));
            }
            let yb: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let tape = Tape::new();
            let loss = mlp.forward(&tape, &params, tape.constant(xb)).softmax_cross_entropy(&yb).mean();
            let grads = tape.backward(loss).into_param_grads(&params);
            opt.step(&mut params, &grads);
        }
    }
    let mut probe = ProbeClassifier { mlp, params, accuracy: 0.0 };
    let pred = probe.predict(&x.select(Axis(0), hold));
    let correct = pred.iter().zip(hold).filter(|(p, &i)| **p == labels[i]).count();
    probe.accuracy = correct as f64 / hold.len() as f64;
    Ok(probe)
}

/// Trains a probe for `modality` and fails if its held-out accuracy is
/// below [`ProbeClassifier::MIN_ACCURACY`].
pub fn train_probe_classifier(dataset: &MultimodalDataset, modality: &str, cfg: &ProbeConfig) -> Result<ProbeClassifier> {
    let x = dataset.modality(modality).ok_or_else(|| invalid(format!("no modality named '{modality}'")))?;
    let probe = fit_probe(x, &dataset.labels, dataset.num_classes, cfg)?;
    if probe.accuracy < ProbeClassifier::MIN_ACCURACY {
        return Err(Error::Harness(format!(
            "probe for '{modality}' reached only {:.3} held-out accuracy (need {})",
            probe.accuracy,
            ProbeClassifier::MIN_ACCURACY
        )));
    }
    Ok(probe)
}
