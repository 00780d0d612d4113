#![allow(dead_code)]

use cfrobust_core::models::{fit_tree, GlvqModel, SoftmaxModel, TreeModel};
use cfrobust_core::{Dataset, LabeledSample, Matrix, Vector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn normal(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vector {
    Vector::from_fn(d, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        scale * z
    })
}

pub fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vector {
    loop {
        let v = normal(rng, d, 1.0);
        let n = v.norm();
        if n > 1e-6 {
            return v / n;
        }
    }
}

pub fn uniform_box(rng: &mut ChaCha8Rng, d: usize, half: f64) -> Vector {
    Vector::from_fn(d, |_, _| rng.random_range(-half..half))
}

/// `n` points per class around `centres` with isotropic noise `sd`.
pub fn gaussian_classes(
    rng: &mut ChaCha8Rng,
    centres: &[Vector],
    n: usize,
    sd: f64,
) -> Dataset {
    let d = centres[0].len();
    let mut samples = Vec::new();
    for (label, c) in centres.iter().enumerate() {
        for _ in 0..n {
            samples.push(LabeledSample::new(c + normal(rng, d, sd), label).unwrap());
        }
    }
    Dataset::new(samples, vec![], centres.len()).unwrap()
}

pub fn random_softmax(rng: &mut ChaCha8Rng, classes: usize, d: usize) -> SoftmaxModel {
    SoftmaxModel {
        weights: Matrix::from_fn(classes, d, |_, _| -> f64 { StandardNormal.sample(rng) }),
        bias: normal(rng, classes, 1.0),
    }
}

/// Every class owns `per_class` prototypes.
pub fn random_glvq(rng: &mut ChaCha8Rng, classes: usize, per_class: usize, d: usize) -> GlvqModel {
    let mut protos = Vec::new();
    let mut labels = Vec::new();
    for c in 0..classes {
        for _ in 0..per_class {
            protos.push(normal(rng, d, 2.0));
            labels.push(c);
        }
    }
    GlvqModel::new(protos, labels, classes).unwrap()
}

/// A tree fitted to randomly labelled points, so its splits are arbitrary
/// but it still uses every class.
pub fn random_tree(rng: &mut ChaCha8Rng, classes: usize, d: usize, depth: usize) -> TreeModel {
    let mut samples = Vec::new();
    for i in 0..60 {
        samples.push(LabeledSample::new(uniform_box(rng, d, 3.0), i % classes).unwrap());
    }
    fit_tree(&Dataset::new(samples, vec![], classes).unwrap(), depth).unwrap()
}

/// Independent predictors written against the raw parameters.
pub fn softmax_argmax(m: &SoftmaxModel, x: &[f64]) -> usize {
    let mut best = (f64::NEG_INFINITY, 0);
    for k in 0..m.weights.nrows() {
        let s: f64 = (0..x.len()).map(|j| m.weights[(k, j)] * x[j]).sum::<f64>() + m.bias[k];
        if s > best.0 {
            best = (s, k);
        }
    }
    best.1
}

pub fn nearest_prototype(m: &GlvqModel, x: &[f64]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (p, &l) in m.prototypes.iter().zip(&m.labels) {
        let d: f64 = (0..x.len()).map(|j| (p[j] - x[j]).powi(2)).sum();
        if d < best.0 {
            best = (d, l);
        }
    }
    best.1
}

pub fn tree_walk(m: &TreeModel, x: &[f64]) -> usize {
    use cfrobust_core::models::TreeNode;
    let mut i = 0;
    loop {
        match &m.nodes[i] {
            TreeNode::Leaf { label } => return *label,
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => i = if x[*feature] <= *threshold { *left } else { *right },
        }
    }
}

/// Smallest squared distance from `x0` to a planar point classified as
/// `target`, found by a coarse scan of `[lo, hi]²` and then zoomed scans
/// around several well-separated coarse candidates.
pub fn planar_grid_oracle(
    n: usize,
    lo: f64,
    hi: f64,
    x0: [f64; 2],
    classify: &dyn Fn(&[f64]) -> bool,
) -> Option<f64> {
    let cost = |x: f64, y: f64| (x - x0[0]).powi(2) + (y - x0[1]).powi(2);
    let scan = |lo: [f64; 2], hi: [f64; 2], m: usize| {
        let mut hits = Vec::new();
        for i in 0..m {
            for j in 0..m {
                let x = lo[0] + (hi[0] - lo[0]) * i as f64 / (m - 1) as f64;
                let y = lo[1] + (hi[1] - lo[1]) * j as f64 / (m - 1) as f64;
                if classify(&[x, y]) {
                    hits.push((cost(x, y), x, y));
                }
            }
        }
        hits
    };
    let mut coarse = scan([lo, lo], [hi, hi], n);
    if coarse.is_empty() {
        return None;
    }
    coarse.sort_by(|a, b| a.0.total_cmp(&b.0));
    let cell = (hi - lo) / (n - 1) as f64;
    let mut seeds: Vec<(f64, f64, f64)> = Vec::new();
    for h in &coarse {
        if seeds.len() == 12 {
            break;
        }
        if seeds
            .iter()
            .all(|s| (s.1 - h.1).abs().max((s.2 - h.2).abs()) > 10.0 * cell)
        {
            seeds.push(*h);
        }
    }
    let mut best = coarse[0].0;
    for seed in seeds {
        let mut inc = seed;
        let mut r = 4.0 * cell;
        for _ in 0..8 {
            let m = 41;
            for h in scan([inc.1 - r, inc.2 - r], [inc.1 + r, inc.2 + r], m) {
                if h.0 < inc.0 {
                    inc = h;
                }
            }
            r *= 0.35;
        }
        best = best.min(inc.0);
    }
    Some(best)
}
