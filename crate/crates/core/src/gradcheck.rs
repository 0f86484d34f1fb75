//! Central finite-difference checks of the tape's analytic gradients.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoders::{
    bi_gru_on, encode_image_on, encode_text_on, gru_cell_on, ImageInstance, TextInstance,
};
use crate::error::Result;
use crate::matching::{pair_similarity_on, Objective, Temperatures};
use crate::model::{forward_pair, PairWeights};
use crate::params::{BiGruParams, Dims, GruParams, ModelParams};
use crate::rve::RveMode;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::training::{batch_loss_and_grads, BatchOptions};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Magnitude below which errors are measured absolutely.
const FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub entries: usize,
    pub max_rel_error: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= TOLERANCE
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Checks `d(Σ R ⊙ f(inputs))/d inputs` where `R` is a fixed random
/// weighting, so non-scalar outputs are covered in every component.
pub fn check_function(
    name: &str,
    inputs: &[Tensor],
    rng: &mut ChaCha8Rng,
    f: &dyn Fn(&mut Tape, &[Var]) -> Result<Var>,
) -> Result<CheckResult> {
    let eval = |vals: &[Tensor], weights: &Tensor| -> Result<(Tape, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let w = tape.leaf(weights.clone());
        let prod = tape.mul(out, w)?;
        let loss = tape.sum(prod);
        Ok((tape, vars, loss))
    };
    let out_shape = {
        let mut probe = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| probe.leaf(t.clone())).collect();
        let out = f(&mut probe, &vars)?;
        probe.value(out).shape()
    };
    let weights = Tensor::new(
        out_shape[0],
        out_shape[1],
        (0..out_shape[0] * out_shape[1])
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )?;
    let (mut tape, vars, loss) = eval(inputs, &weights)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| tape.grad_or_zeros(v)).collect();

    let value = |vals: &[Tensor]| -> Result<f64> {
        let (tape, _, loss) = eval(vals, &weights)?;
        Ok(tape.value(loss).item())
    };
    let mut worst: f64 = 0.0;
    let mut entries = 0;
    let mut vals = inputs.to_vec();
    for (which, grad) in analytic.iter().enumerate() {
        for e in 0..vals[which].len() {
            let orig = vals[which].data()[e];
            vals[which].data_mut()[e] = orig + STEP;
            let up = value(&vals)?;
            vals[which].data_mut()[e] = orig - STEP;
            let down = value(&vals)?;
            vals[which].data_mut()[e] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            worst = worst.max(relative_error(grad.data()[e], numeric));
            entries += 1;
        }
    }
    Ok(CheckResult {
        name: name.to_string(),
        entries,
        max_rel_error: worst,
    })
}

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
    .unwrap()
}

/// Entries bounded away from zero so kinks are never straddled.
fn away_from_zero(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    random(rng, rows, cols).map(|v| {
        if v.abs() < 0.1 {
            v.signum() * 0.1 + v
        } else {
            v
        }
    })
}

fn gru_inputs(rng: &mut ChaCha8Rng, input: usize, hidden: usize) -> Vec<Tensor> {
    let g = GruParams::init(rng, input, hidden);
    let mut out = Vec::new();
    g.visit("", &mut |_, t| out.push(t.map(|v| v * 2.0)));
    out
}

fn gru_from(vars: &[Var]) -> GruParams<Var> {
    GruParams {
        w_update: vars[0],
        u_update: vars[1],
        b_update: vars[2],
        w_reset: vars[3],
        u_reset: vars[4],
        b_reset: vars[5],
        w_candidate: vars[6],
        u_candidate: vars[7],
        b_candidate: vars[8],
    }
}

fn temps() -> Temperatures {
    Temperatures {
        lambda1: 9.0,
        lambda2: 4.0,
        beta_w: 0.3,
        beta_o: 0.3,
    }
}

/// Dimensions small enough for exhaustive finite differences.
pub fn small_dims() -> Dims {
    Dims {
        vocab: 6,
        image_features: 5,
        word_dim: 8,
        hidden: 8,
    }
}

fn small_pair(rng: &mut ChaCha8Rng, id: usize, dims: Dims) -> (ImageInstance, TextInstance) {
    let k = rng.random_range(2..=4);
    let n = rng.random_range(2..=4);
    let boxes = Tensor::new(
        k,
        4,
        (0..k * 4).map(|_| rng.random_range(0.0..1.0)).collect(),
    )
    .unwrap();
    let image =
        ImageInstance::new(format!("i{id}"), random(rng, k, dims.image_features), boxes).unwrap();
    let text = TextInstance::new(
        format!("t{id}"),
        (0..n).map(|_| rng.random_range(0..dims.vocab)).collect(),
    )
    .unwrap();
    (image, text)
}

/// Every differentiable primitive, the recurrent and encoder blocks, the
/// pair score under each objective, the RVE path, and the full batch loss.
pub fn run_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let mut results = Vec::new();
    macro_rules! check {
        ($name:expr, $inputs:expr, $f:expr) => {{
            let inputs: Vec<Tensor> = $inputs;
            let mut local = ChaCha8Rng::seed_from_u64(r.random());
            results.push(check_function($name, &inputs, &mut local, &$f)?);
        }};
    }

    check!(
        "matmul",
        vec![random(r, 3, 4), random(r, 4, 2)],
        |t: &mut Tape, v: &[Var]| t.matmul(v[0], v[1])
    );
    check!(
        "transpose",
        vec![random(r, 3, 2)],
        |t: &mut Tape, v: &[Var]| Ok(t.transpose(v[0]))
    );
    check!(
        "add",
        vec![random(r, 2, 3), random(r, 2, 3)],
        |t: &mut Tape, v: &[Var]| t.add(v[0], v[1])
    );
    check!(
        "sub",
        vec![random(r, 2, 3), random(r, 2, 3)],
        |t: &mut Tape, v: &[Var]| t.sub(v[0], v[1])
    );
    check!(
        "mul",
        vec![random(r, 2, 3), random(r, 2, 3)],
        |t: &mut Tape, v: &[Var]| t.mul(v[0], v[1])
    );
    check!(
        "add_row_bias",
        vec![random(r, 3, 4), random(r, 1, 4)],
        |t: &mut Tape, v: &[Var]| t.add_row_bias(v[0], v[1])
    );
    check!(
        "scale",
        vec![random(r, 2, 2)],
        |t: &mut Tape, v: &[Var]| Ok(t.scale(v[0], -1.7))
    );
    check!(
        "offset",
        vec![random(r, 2, 2)],
        |t: &mut Tape, v: &[Var]| Ok(t.offset(v[0], 0.4))
    );
    check!(
        "sigmoid",
        vec![random(r, 2, 3).map(|x| 3.0 * x)],
        |t: &mut Tape, v: &[Var]| Ok(t.sigmoid(v[0]))
    );
    check!(
        "tanh",
        vec![random(r, 2, 3).map(|x| 2.0 * x)],
        |t: &mut Tape, v: &[Var]| Ok(t.tanh(v[0]))
    );
    check!(
        "clamp_at_zero",
        vec![away_from_zero(r, 3, 3)],
        |t: &mut Tape, v: &[Var]| Ok(t.clamp_at_zero(v[0]))
    );
    check!(
        "softmax_rows",
        vec![random(r, 3, 4)],
        |t: &mut Tape, v: &[Var]| t.softmax_rows(v[0], 9.0)
    );
    check!(
        "softmax_rows_masked",
        vec![random(r, 2, 4)],
        |t: &mut Tape, v: &[Var]| {
            t.softmax_rows_masked(v[0], 4.0, Some(&[true, false, true, true]))
        }
    );
    check!(
        "cosine_matrix",
        vec![random(r, 3, 4), random(r, 2, 4)],
        |t: &mut Tape, v: &[Var]| t.cosine_matrix(v[0], v[1])
    );
    check!(
        "row_cosine",
        vec![random(r, 3, 4), random(r, 3, 4)],
        |t: &mut Tape, v: &[Var]| t.row_cosine(v[0], v[1])
    );
    check!(
        "col_normalize",
        vec![random(r, 3, 4)],
        |t: &mut Tape, v: &[Var]| Ok(t.col_normalize(v[0], 1e-8))
    );
    check!(
        "gather_rows",
        vec![random(r, 4, 3)],
        |t: &mut Tape, v: &[Var]| t.gather_rows(v[0], &[2, 0, 3, 0])
    );
    check!(
        "stack_rows",
        vec![random(r, 1, 3), random(r, 1, 3)],
        |t: &mut Tape, v: &[Var]| {
            let a = t.row(v[0], 0)?;
            t.stack_rows(&[v[1], a, v[1]])
        }
    );
    check!("sum", vec![random(r, 3, 2)], |t: &mut Tape, v: &[Var]| Ok(
        t.sum(v[0])
    ));

    let mut cell = gru_inputs(r, 3, 4);
    cell.push(random(r, 1, 3));
    cell.push(random(r, 1, 4));
    check!("gru_cell", cell, |t: &mut Tape, v: &[Var]| gru_cell_on(
        t,
        &gru_from(&v[..9]),
        v[9],
        v[10]
    ));

    let mut bi = gru_inputs(r, 3, 4);
    bi.extend(gru_inputs(r, 3, 4));
    bi.push(random(r, 4, 3));
    check!("bi_gru", bi, |t: &mut Tape, v: &[Var]| {
        let p = BiGruParams {
            forward: gru_from(&v[..9]),
            backward: gru_from(&v[9..18]),
        };
        bi_gru_on(t, &p, v[18])
    });

    let dims = small_dims();
    let params = ModelParams::init(r, dims);
    let (image, text) = small_pair(r, 0, dims);

    let mut image_inputs = Vec::new();
    params
        .image
        .visit("", &mut |_, t| image_inputs.push(t.clone()));
    let img = image.clone();
    check!(
        "encode_image",
        image_inputs,
        move |t: &mut Tape, v: &[Var]| {
            let p = crate::params::ImageEncoderParams {
                feature_w: v[0],
                feature_b: v[1],
                position_w: v[2],
                position_b: v[3],
            };
            encode_image_on(t, &p, &img)
        }
    );

    let mut text_inputs = Vec::new();
    params
        .text
        .visit("", &mut |_, t| text_inputs.push(t.clone()));
    let txt = text.clone();
    check!(
        "encode_text",
        text_inputs,
        move |t: &mut Tape, v: &[Var]| {
            let p = crate::params::TextEncoderParams {
                embedding: v[0],
                gru: BiGruParams {
                    forward: gru_from(&v[1..10]),
                    backward: gru_from(&v[10..19]),
                },
            };
            encode_text_on(t, &p, &txt)
        }
    );

    for objective in [
        Objective::WordOriented,
        Objective::ObjectOriented,
        Objective::Ensemble,
    ] {
        let inputs = vec![
            random(r, 3, dims.hidden),
            random(r, 4, dims.hidden),
            params.matching.word_attention.clone(),
            params.matching.object_attention.clone(),
        ];
        check!(
            &format!("pair_similarity_{}", objective.as_str()),
            inputs,
            move |t: &mut Tape, v: &[Var]| {
                let p = crate::params::MatchingParams {
                    word_attention: v[2],
                    object_attention: v[3],
                };
                let g = pair_similarity_on(t, v[0], v[1], &p, &temps(), objective, None)?;
                Ok(g.s_final)
            }
        );
    }

    // RVE path with the reordering frozen at the unperturbed point.
    let objects = Arc::new(random(r, 4, dims.hidden));
    let words = Arc::new(random(r, 3, dims.hidden));
    let weights = PairWeights::from_params(&params);
    let reference = forward_pair(
        objects.clone(),
        words.clone(),
        &weights,
        &temps(),
        Objective::Ensemble,
        RveMode::Recurrent,
    )?;
    let permutation = reference
        .reordering
        .clone()
        .expect("recurrent mode reorders")
        .permutation;
    let mut rve_inputs = vec![(*objects).clone(), (*words).clone()];
    params.rve.visit("", &mut |_, t| rve_inputs.push(t.clone()));
    let matching = params.matching.clone();
    check!(
        "recurrent_visual_embedding",
        rve_inputs,
        move |t: &mut Tape, v: &[Var]| {
            let ordered = t.gather_rows(v[0], &permutation)?;
            let p = BiGruParams {
                forward: gru_from(&v[2..11]),
                backward: gru_from(&v[11..20]),
            };
            let embedded = bi_gru_on(t, &p, ordered)?;
            let m = matching.map(&mut |x| t.leaf(x.clone()));
            Ok(
                pair_similarity_on(t, embedded, v[1], &m, &temps(), Objective::Ensemble, None)?
                    .s_final,
            )
        }
    );

    results.push(check_batch_loss(r, &params, dims)?);
    Ok(results)
}

/// Full two-pair batch loss against every model parameter, with both the
/// RVE and early selection active. The large margin keeps both hinges active
/// so every parameter receives gradient.
fn check_batch_loss(rng: &mut ChaCha8Rng, params: &ModelParams, dims: Dims) -> Result<CheckResult> {
    let pairs: Vec<_> = (0..2).map(|i| small_pair(rng, i, dims)).collect();
    let refs: Vec<_> = pairs.iter().map(|(i, t)| (i, t)).collect();
    let opts = BatchOptions {
        temps: temps(),
        objective: Objective::Ensemble,
        gamma: 1.0,
        negatives: Some(1),
        rve: true,
        encoder_grads: true,
    };
    let (_, grads) = batch_loss_and_grads(params, &refs, &opts, true)?;
    let grads = grads.expect("requested");
    let mut p = params.clone();
    let mut worst: f64 = 0.0;
    let mut entries = 0;
    let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
    let grad_list: Vec<Tensor> = grads.named().into_iter().map(|(_, t)| t.clone()).collect();
    for (slot, name) in names.iter().enumerate() {
        for e in 0..grad_list[slot].len() {
            let mut at = |delta: f64| -> Result<f64> {
                let orig = {
                    let mut all = p.named_mut();
                    let t = &mut all[slot].1;
                    let orig = t.data()[e];
                    t.data_mut()[e] = orig + delta;
                    orig
                };
                let loss = batch_loss_and_grads(&p, &refs, &opts, false)?.0.loss;
                p.named_mut()[slot].1.data_mut()[e] = orig;
                Ok(loss)
            };
            let numeric = (at(STEP)? - at(-STEP)?) / (2.0 * STEP);
            let err = relative_error(grad_list[slot].data()[e], numeric);
            if err > TOLERANCE {
                log::debug!(
                    "batch loss: {name}[{e}] analytic {} numeric {numeric}",
                    grad_list[slot].data()[e]
                );
            }
            worst = worst.max(err);
            entries += 1;
        }
    }
    Ok(CheckResult {
        name: "batch_triplet_loss".into(),
        entries,
        max_rel_error: worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((relative_error(0.0, 1e-9) - 1e-3).abs() < 1e-12);
    }

    #[test]
    fn suite_passes() {
        for r in run_suite(1).unwrap() {
            assert!(
                r.passed(),
                "{}: {:.3e} over {} entries",
                r.name,
                r.max_rel_error,
                r.entries
            );
        }
    }
}
