//! Naive scalar-loop reference implementation of the scoring pipeline, plus
//! random-instance helpers shared by the integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use dprnn::encoders::{ImageInstance, TextInstance};
use dprnn::matching::Temperatures;
use dprnn::params::{Dims, GruParams, ModelParams};
use dprnn::tensor::Tensor;
use rand::Rng;

const EPS: f64 = 1e-8;

type Rows = Vec<Vec<f64>>;

fn rows(t: &Tensor) -> Rows {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt() + EPS)
}

fn softmax(x: &[f64], lambda: f64) -> Vec<f64> {
    let m = x.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(lambda * v));
    let e: Vec<f64> = x.iter().map(|&v| (lambda * v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `x·W + b` for one row.
fn affine(x: &[f64], w: &Tensor, b: Option<&Tensor>) -> Vec<f64> {
    let mut out = vec![0.0; w.cols()];
    for c in 0..w.cols() {
        let mut s = b.map_or(0.0, |b| b.get(0, c));
        for r in 0..w.rows() {
            s += x[r] * w.get(r, c);
        }
        out[c] = s;
    }
    out
}

fn gru_step(p: &GruParams, x: &[f64], h: &[f64]) -> Vec<f64> {
    let xz = affine(x, &p.w_update, Some(&p.b_update));
    let hz = affine(h, &p.u_update, None);
    let xr = affine(x, &p.w_reset, Some(&p.b_reset));
    let hr = affine(h, &p.u_reset, None);
    let n = h.len();
    let z: Vec<f64> = (0..n).map(|i| sigmoid(xz[i] + hz[i])).collect();
    let r: Vec<f64> = (0..n).map(|i| sigmoid(xr[i] + hr[i])).collect();
    let rh: Vec<f64> = (0..n).map(|i| r[i] * h[i]).collect();
    let xc = affine(x, &p.w_candidate, Some(&p.b_candidate));
    let hc = affine(&rh, &p.u_candidate, None);
    (0..n)
        .map(|i| (1.0 - z[i]) * h[i] + z[i] * (xc[i] + hc[i]).tanh())
        .collect()
}

pub fn naive_bi_gru(forward: &GruParams, backward: &GruParams, inputs: &Rows) -> Rows {
    let n = inputs.len();
    let hid = forward.u_update.rows();
    let mut fwd = vec![vec![0.0; hid]; n];
    let mut h = vec![0.0; hid];
    for j in 0..n {
        h = gru_step(forward, &inputs[j], &h);
        fwd[j] = h.clone();
    }
    let mut bwd = vec![vec![0.0; hid]; n];
    let mut h = vec![0.0; hid];
    for j in (0..n).rev() {
        h = gru_step(backward, &inputs[j], &h);
        bwd[j] = h.clone();
    }
    (0..n)
        .map(|j| (0..hid).map(|c| (fwd[j][c] + bwd[j][c]) / 2.0).collect())
        .collect()
}

pub fn naive_encode_image(p: &ModelParams, image: &ImageInstance) -> Rows {
    let d = rows(image.descriptors());
    let b = rows(image.boxes());
    (0..d.len())
        .map(|i| {
            let f = affine(&d[i], &p.image.feature_w, Some(&p.image.feature_b));
            let g = affine(&b[i], &p.image.position_w, Some(&p.image.position_b));
            f.iter().zip(&g).map(|(f, g)| f * sigmoid(*g)).collect()
        })
        .collect()
}

pub fn naive_encode_text(p: &ModelParams, text: &TextInstance) -> Rows {
    let embedded: Rows = text
        .tokens()
        .iter()
        .map(|&t| p.text.embedding.row(t).to_vec())
        .collect();
    naive_bi_gru(&p.text.gru.forward, &p.text.gru.backward, &embedded)
}

pub fn naive_word_weights(words: &Rows, attn: &Tensor, beta: f64) -> Vec<f64> {
    let s: Vec<f64> = words.iter().map(|w| dot(attn.row(0), w)).collect();
    softmax(&s, beta)
}

/// `(S_w, S_o)` by the defining sums.
pub fn naive_pair(
    objects: &Rows,
    words: &Rows,
    p: &ModelParams,
    t: &Temperatures,
    word_weights: &[f64],
) -> (f64, f64) {
    let (k, n) = (objects.len(), words.len());
    let mut clamped = vec![vec![0.0; n]; k];
    for i in 0..k {
        for j in 0..n {
            clamped[i][j] = cos(&objects[i], &words[j]).max(0.0);
        }
    }
    // Object-to-word path: normalize each word's column over objects.
    let mut s_object_terms = vec![0.0; k];
    for i in 0..k {
        let mut a = vec![0.0; n];
        for j in 0..n {
            let mut col = 0.0;
            for r in 0..k {
                col += clamped[r][j] * clamped[r][j];
            }
            a[j] = clamped[i][j] / (col + EPS * EPS).sqrt();
        }
        let alpha = softmax(&a, t.lambda1);
        let mut attended = vec![0.0; words[0].len()];
        for j in 0..n {
            for c in 0..attended.len() {
                attended[c] += alpha[j] * words[j][c];
            }
        }
        s_object_terms[i] = cos(&objects[i], &attended);
    }
    // Word-to-object path: normalize each object's row over words.
    let mut s_word_terms = vec![0.0; n];
    for j in 0..n {
        let mut a = vec![0.0; k];
        for i in 0..k {
            let mut row = 0.0;
            for c in 0..n {
                row += clamped[i][c] * clamped[i][c];
            }
            a[i] = clamped[i][j] / (row + EPS * EPS).sqrt();
        }
        let alpha = softmax(&a, t.lambda2);
        let mut attended = vec![0.0; objects[0].len()];
        for i in 0..k {
            for c in 0..attended.len() {
                attended[c] += alpha[i] * objects[i][c];
            }
        }
        s_word_terms[j] = cos(&words[j], &attended);
    }
    let object_weights = naive_word_weights(objects, &p.matching.object_attention, t.beta_o);
    let s_word = (0..n).map(|j| word_weights[j] * s_word_terms[j]).sum();
    let s_object = (0..k).map(|i| object_weights[i] * s_object_terms[i]).sum();
    (s_word, s_object)
}

/// `Σ_i Σ_j a^w_j · o_i·w_j` and each object's anchor word.
pub fn naive_early(objects: &Rows, words: &Rows, word_weights: &[f64]) -> (f64, Vec<usize>) {
    let mut total = 0.0;
    let mut anchors = Vec::new();
    for o in objects {
        let mut best = (0, f64::NEG_INFINITY);
        for (j, w) in words.iter().enumerate() {
            let p = word_weights[j] * dot(o, w);
            total += p;
            if p > best.1 {
                best = (j, p);
            }
        }
        anchors.push(best.0);
    }
    (total, anchors)
}

/// Ensemble score of one pair, with or without the recurrent embedding.
pub fn naive_score(
    p: &ModelParams,
    t: &Temperatures,
    image: &ImageInstance,
    text: &TextInstance,
    rve: bool,
) -> f64 {
    let mut objects = naive_encode_image(p, image);
    let words = naive_encode_text(p, text);
    let aw = naive_word_weights(&words, &p.matching.word_attention, t.beta_w);
    if rve {
        let (_, anchors) = naive_early(&objects, &words, &aw);
        let mut order: Vec<usize> = (0..objects.len()).collect();
        order.sort_by_key(|&i| anchors[i]);
        let ordered: Rows = order.iter().map(|&i| objects[i].clone()).collect();
        objects = naive_bi_gru(&p.rve.forward, &p.rve.backward, &ordered);
    }
    let (sw, so) = naive_pair(&objects, &words, p, t, &aw);
    (sw + so) / 2.0
}

pub fn to_rows(t: &Tensor) -> Rows {
    rows(t)
}

pub fn random_tensor(rng: &mut impl Rng, r: usize, c: usize, scale: f64) -> Tensor {
    Tensor::new(
        r,
        c,
        (0..r * c)
            .map(|_| rng.random_range(-scale..scale))
            .collect(),
    )
    .unwrap()
}

/// Parameters with every entry, biases included, uniform in `±scale`.
pub fn random_params(rng: &mut impl Rng, dims: Dims, scale: f64) -> ModelParams {
    let mut p = ModelParams::init(rng, dims);
    for (_, t) in p.named_mut() {
        *t = random_tensor(rng, t.rows(), t.cols(), scale);
    }
    p
}

pub fn random_image(rng: &mut impl Rng, id: &str, k: usize, d: usize) -> ImageInstance {
    let boxes = Tensor::new(
        k,
        4,
        (0..4 * k).map(|_| rng.random_range(0.0..=1.0)).collect(),
    )
    .unwrap();
    ImageInstance::new(id, random_tensor(rng, k, d, 1.0), boxes).unwrap()
}

pub fn random_text(rng: &mut impl Rng, id: &str, n: usize, vocab: usize) -> TextInstance {
    TextInstance::new(id, (0..n).map(|_| rng.random_range(0..vocab)).collect()).unwrap()
}
