//! Labeled sample collections and the desk-scale synthetic generators.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Samples paired with labels. Never empty.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    id: String,
    inputs: Vec<Tensor>,
    labels: Vec<Tensor>,
}

impl Dataset {
    pub fn new(id: impl Into<String>, inputs: Vec<Tensor>, labels: Vec<Tensor>) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::DatasetMismatch {
                inputs: inputs.len(),
                labels: labels.len(),
            });
        }
        if inputs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(Self {
            id: id.into(),
            inputs,
            labels,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }

    pub fn labels(&self) -> &[Tensor] {
        &self.labels
    }

    pub fn sample(&self, i: usize) -> (&Tensor, &Tensor) {
        (&self.inputs[i], &self.labels[i])
    }

    /// Samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize], id: impl Into<String>) -> Result<Self> {
        Self::new(
            id,
            indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            indices.iter().map(|&i| self.labels[i].clone()).collect(),
        )
    }

    /// The first `n` samples (all of them if `n >= len`).
    pub fn head(&self, n: usize) -> Result<Self> {
        let n = n.min(self.len());
        let idx: Vec<usize> = (0..n).collect();
        self.subset(&idx, format!("{}[..{}]", self.id, n))
    }

    /// Sample indices sorted by content (input values, then label values).
    ///
    /// Reductions that visit samples in this order give bit-identical
    /// results for any permutation of the dataset.
    pub fn canonical_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| {
            cmp_slices(self.inputs[a].data(), self.inputs[b].data())
                .then_with(|| cmp_slices(self.labels[a].data(), self.labels[b].data()))
        });
        idx
    }

    /// Class index of each label (argmax of one-hot labels).
    pub fn classes(&self) -> Vec<usize> {
        self.labels.iter().map(argmax).collect()
    }
}

fn cmp_slices(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => {}
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

pub fn argmax(t: &Tensor) -> usize {
    let mut best = 0;
    for (i, v) in t.data().iter().enumerate() {
        if *v > t.data()[best] {
            best = i;
        }
    }
    best
}

pub fn one_hot(class: usize, classes: usize) -> Tensor {
    let mut data = vec![0.0; classes];
    data[class] = 1.0;
    Tensor::from_raw(vec![classes], data)
}

/// Synthetic dataset families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    /// Two interleaved half circles in the plane, 2 classes.
    TwoMoons,
    /// 10 isotropic Gaussian clusters in 8 dimensions.
    GaussianBlobs,
    /// 10 noisy, jittered 8x8 digit glyphs, shape `[1, 8, 8]`.
    Digits8x8,
}

impl GeneratorKind {
    pub const ALL: [GeneratorKind; 3] = [Self::TwoMoons, Self::GaussianBlobs, Self::Digits8x8];

    pub fn name(self) -> &'static str {
        match self {
            Self::TwoMoons => "two_moons",
            Self::GaussianBlobs => "gaussian_blobs",
            Self::Digits8x8 => "digits8x8",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name).ok_or_else(|| {
            Error::InvalidConfig(format!(
                "unknown dataset kind `{name}`; expected one of two_moons, gaussian_blobs, digits8x8"
            ))
        })
    }

    pub fn classes(self) -> usize {
        match self {
            Self::TwoMoons => 2,
            Self::GaussianBlobs | Self::Digits8x8 => 10,
        }
    }

    pub fn input_shape(self) -> Vec<usize> {
        match self {
            Self::TwoMoons => vec![2],
            Self::GaussianBlobs => vec![BLOB_DIM],
            Self::Digits8x8 => vec![1, 8, 8],
        }
    }
}

const BLOB_DIM: usize = 8;
const BLOB_SPREAD: f64 = 2.5;
const BLOB_STD: f64 = 1.0;
const MOON_NOISE: f64 = 0.3;
const DIGIT_NOISE: f64 = 0.3;

// Stream tags for generator draws.
const TAG_SAMPLE: u64 = 0x5A4D;
const TAG_CENTER: u64 = 0xCE47;

const GLYPHS: [[&str; 8]; 10] = [
    [
        "..####..", ".#....#.", ".#....#.", ".#....#.", ".#....#.", ".#....#.", ".#....#.", "..####..",
    ],
    [
        "...##...", "..###...", "...##...", "...##...", "...##...", "...##...", "...##...", "..####..",
    ],
    [
        "..####..", ".#....#.", "......#.", ".....#..", "....#...", "...#....", "..#.....", ".######.",
    ],
    [
        "..####..", ".#....#.", "......#.", "...###..", "......#.", "......#.", ".#....#.", "..####..",
    ],
    [
        "....##..", "...#.#..", "..#..#..", ".#...#..", ".######.", ".....#..", ".....#..", ".....#..",
    ],
    [
        ".######.", ".#......", ".#......", ".#####..", "......#.", "......#.", ".#....#.", "..####..",
    ],
    [
        "..####..", ".#......", ".#......", ".#####..", ".#....#.", ".#....#.", ".#....#.", "..####..",
    ],
    [
        ".######.", "......#.", ".....#..", "....#...", "...#....", "...#....", "...#....", "...#....",
    ],
    [
        "..####..", ".#....#.", ".#....#.", "..####..", ".#....#.", ".#....#.", ".#....#.", "..####..",
    ],
    [
        "..####..", ".#....#.", ".#....#.", "..#####.", "......#.", "......#.", "......#.", "..####..",
    ],
];

/// Generates `n` samples with balanced classes (sample `i` has class `i mod k`).
/// Labels are one-hot. Output is a pure function of `(kind, n, seed)`.
pub fn generate(kind: GeneratorKind, n: usize, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::InvalidConfig(format!(
            "dataset size must be at least 2, got {n}"
        )));
    }
    let k = kind.classes();
    let centers: Vec<Vec<f64>> = if kind == GeneratorKind::GaussianBlobs {
        (0..k)
            .map(|c| {
                let mut r = rng::stream(seed, &[TAG_CENTER, c as u64]);
                (0..BLOB_DIM).map(|_| rng::symmetric(&mut r, BLOB_SPREAD)).collect()
            })
            .collect()
    } else {
        Vec::new()
    };
    let mut inputs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % k;
        let mut r = rng::stream(seed, &[TAG_SAMPLE, i as u64]);
        let x = match kind {
            GeneratorKind::TwoMoons => {
                let t = core::f64::consts::PI * rng::unit(&mut r);
                let (s, c) = (libm::sin(t), libm::cos(t));
                let (px, py) = if class == 0 { (c, s) } else { (1.0 - c, 0.5 - s) };
                vec![
                    px + MOON_NOISE * rng::normal(&mut r),
                    py + MOON_NOISE * rng::normal(&mut r),
                ]
            }
            GeneratorKind::GaussianBlobs => centers[class]
                .iter()
                .map(|c| c + BLOB_STD * rng::normal(&mut r))
                .collect(),
            GeneratorKind::Digits8x8 => {
                let dy = rng::below(&mut r, 3) as isize - 1;
                let dx = rng::below(&mut r, 3) as isize - 1;
                let glyph = &GLYPHS[class];
                let mut img = vec![0.0; 64];
                for y in 0..8isize {
                    for x in 0..8isize {
                        let (sy, sx) = (y - dy, x - dx);
                        let on = (0..8).contains(&sy)
                            && (0..8).contains(&sx)
                            && glyph[sy as usize].as_bytes()[sx as usize] == b'#';
                        img[(y * 8 + x) as usize] = if on { 1.0 } else { 0.0 };
                    }
                }
                for v in img.iter_mut() {
                    *v += DIGIT_NOISE * rng::normal(&mut r);
                }
                img
            }
        };
        inputs.push(Tensor::from_raw(kind.input_shape(), x));
        labels.push(one_hot(class, k));
    }
    Dataset::new(dataset_id(kind, n, seed), inputs, labels)
}

pub fn dataset_id(kind: GeneratorKind, n: usize, seed: u64) -> String {
    let mut s = kind.name().to_string();
    s.push_str(&format!("(n={n},seed={seed})"));
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_moons_is_balanced() {
        let d = generate(GeneratorKind::TwoMoons, 200, 1).unwrap();
        assert_eq!(d.len(), 200);
        let classes = d.classes();
        assert_eq!(classes.iter().filter(|&&c| c == 0).count(), 100);
        assert_eq!(classes.iter().filter(|&&c| c == 1).count(), 100);
    }

    #[test]
    fn same_seed_same_data() {
        for kind in GeneratorKind::ALL {
            let a = generate(kind, 50, 9).unwrap();
            let b = generate(kind, 50, 9).unwrap();
            assert_eq!(a, b);
            let c = generate(kind, 50, 10).unwrap();
            assert_ne!(a, c);
        }
    }

    #[test]
    fn unknown_kind_lists_options() {
        let err = GeneratorKind::parse("spirals").unwrap_err();
        let Error::InvalidConfig(msg) = err else { panic!() };
        assert!(msg.contains("two_moons") && msg.contains("digits8x8"));
    }

    #[test]
    fn rejects_tiny_and_mismatched() {
        assert!(generate(GeneratorKind::TwoMoons, 1, 0).is_err());
        assert_eq!(Dataset::new("x", vec![], vec![]).unwrap_err(), Error::EmptyDataset);
        assert!(matches!(
            Dataset::new("x", vec![Tensor::scalar(1.0)], vec![]),
            Err(Error::DatasetMismatch { .. })
        ));
    }

    #[test]
    fn canonical_order_ignores_permutation() {
        let d = generate(GeneratorKind::GaussianBlobs, 40, 3).unwrap();
        let mut perm: Vec<usize> = (0..40).collect();
        perm.reverse();
        let p = d.subset(&perm, "rev").unwrap();
        let a: Vec<&Tensor> = d.canonical_order().iter().map(|&i| &d.inputs()[i]).collect();
        let b: Vec<&Tensor> = p.canonical_order().iter().map(|&i| &p.inputs()[i]).collect();
        assert_eq!(a, b);
    }
}
