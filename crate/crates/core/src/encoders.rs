//! Image and text encoders into the common `h`-dimensional space.
//!
//! Objects: `o_i = fo_i ⊙ po_i` where `fo_i` is a linear projection of the
//! region descriptor and `po_i` a sigmoid projection of its normalized box.
//! Words: embedding lookup followed by a bi-directional GRU whose two hidden
//! sequences are averaged. Both directions start from a zero state.

use crate::error::{Error, Result};
use crate::params::{BiGruParams, GruParams, ImageEncoderParams, TextEncoderParams};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// One image as `k` region descriptors plus their normalized
/// `(width, height, center_x, center_y)` boxes.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageInstance {
    id: String,
    descriptors: Tensor,
    boxes: Tensor,
}

impl ImageInstance {
    pub fn new(id: impl Into<String>, descriptors: Tensor, boxes: Tensor) -> Result<Self> {
        let id = id.into();
        if boxes.cols() != 4 || boxes.rows() != descriptors.rows() {
            return Err(Error::Validation(format!(
                "image {id}: {} descriptors need a {}x4 box matrix, got {:?}",
                descriptors.rows(),
                descriptors.rows(),
                boxes.shape()
            )));
        }
        if let Some((pos, v)) = boxes
            .data()
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::Validation(format!(
                "image {id}: box coordinate {v} of object {} is outside [0, 1]",
                pos / 4
            )));
        }
        if !descriptors.is_finite() {
            return Err(Error::Validation(format!(
                "image {id}: non-finite descriptor"
            )));
        }
        Ok(Self {
            id,
            descriptors,
            boxes,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn descriptors(&self) -> &Tensor {
        &self.descriptors
    }

    pub fn boxes(&self) -> &Tensor {
        &self.boxes
    }

    pub fn num_objects(&self) -> usize {
        self.descriptors.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.descriptors.cols()
    }
}

/// One sentence as vocabulary indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TextInstance {
    id: String,
    tokens: Vec<usize>,
}

impl TextInstance {
    pub fn new(id: impl Into<String>, tokens: Vec<usize>) -> Result<Self> {
        let id = id.into();
        if tokens.is_empty() {
            return Err(Error::Validation(format!(
                "text {id}: empty token sequence"
            )));
        }
        Ok(Self { id, tokens })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Adds the input-side gate pre-activations `X·W + b` for every row of `inputs`.
struct InputProjection {
    update: Var,
    reset: Var,
    candidate: Var,
}

fn project_inputs(tape: &mut Tape, p: &GruParams<Var>, inputs: Var) -> Result<InputProjection> {
    let mut proj = |w: Var, b: Var| -> Result<Var> {
        let xw = tape.matmul(inputs, w)?;
        tape.add_row_bias(xw, b)
    };
    Ok(InputProjection {
        update: proj(p.w_update, p.b_update)?,
        reset: proj(p.w_reset, p.b_reset)?,
        candidate: proj(p.w_candidate, p.b_candidate)?,
    })
}

/// One recurrence step given the input-side pre-activations of this step.
fn gru_step(
    tape: &mut Tape,
    p: &GruParams<Var>,
    xz: Var,
    xr: Var,
    xc: Var,
    h_prev: Var,
) -> Result<Var> {
    let hz = tape.matmul(h_prev, p.u_update)?;
    let z_pre = tape.add(xz, hz)?;
    let z = tape.sigmoid(z_pre);

    let hr = tape.matmul(h_prev, p.u_reset)?;
    let r_pre = tape.add(xr, hr)?;
    let r = tape.sigmoid(r_pre);

    let gated = tape.mul(r, h_prev)?;
    let hc = tape.matmul(gated, p.u_candidate)?;
    let c_pre = tape.add(xc, hc)?;
    let candidate = tape.tanh(c_pre);

    let neg_z = tape.scale(z, -1.0);
    let keep = tape.offset(neg_z, 1.0);
    let kept = tape.mul(keep, h_prev)?;
    let fresh = tape.mul(z, candidate)?;
    tape.add(kept, fresh)
}

fn check_gru_dims(p: &GruParams<Var>, tape: &Tape, input: usize, hidden: usize) -> Result<()> {
    let w = tape.value(p.w_update).shape();
    let u = tape.value(p.u_update).shape();
    if w != [input, u[0]] || u != [hidden, hidden] {
        return Err(Error::Shape {
            op: "gru_cell",
            left: [input, hidden],
            right: w,
        });
    }
    Ok(())
}

/// Single GRU step on a tape: `x` is `1 × in`, `h_prev` is `1 × hid`.
pub fn gru_cell_on(tape: &mut Tape, p: &GruParams<Var>, x: Var, h_prev: Var) -> Result<Var> {
    let (xs, hs) = (tape.value(x).shape(), tape.value(h_prev).shape());
    if xs[0] != 1 || hs[0] != 1 {
        return Err(Error::Shape {
            op: "gru_cell",
            left: xs,
            right: hs,
        });
    }
    check_gru_dims(p, tape, xs[1], hs[1])?;
    let proj = project_inputs(tape, p, x)?;
    gru_step(tape, p, proj.update, proj.reset, proj.candidate, h_prev)
}

/// Value-level [`gru_cell_on`].
pub fn gru_cell(params: &GruParams, x: &Tensor, h_prev: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let p = params.map(&mut |t| tape.leaf(t.clone()));
    let x = tape.leaf(x.clone());
    let h = tape.leaf(h_prev.clone());
    let out = gru_cell_on(&mut tape, &p, x, h)?;
    Ok(tape.value(out).clone())
}

/// Runs one direction over the rows of `inputs`; returns the hidden state at
/// every position, indexed by position (not by visiting order).
pub fn gru_sequence_on(
    tape: &mut Tape,
    p: &GruParams<Var>,
    inputs: Var,
    reverse: bool,
) -> Result<Vec<Var>> {
    let [n, input] = tape.value(inputs).shape();
    let hidden = tape.value(p.u_update).rows();
    check_gru_dims(p, tape, input, hidden)?;
    let proj = project_inputs(tape, p, inputs)?;
    let mut h = tape.leaf(Tensor::zeros(1, hidden));
    let mut states = vec![h; n];
    let order: Vec<usize> = if reverse {
        (0..n).rev().collect()
    } else {
        (0..n).collect()
    };
    for j in order {
        let xz = tape.row(proj.update, j)?;
        let xr = tape.row(proj.reset, j)?;
        let xc = tape.row(proj.candidate, j)?;
        h = gru_step(tape, p, xz, xr, xc, h)?;
        states[j] = h;
    }
    Ok(states)
}

/// `(forward_j + backward_j) / 2` for every row of `inputs`.
pub fn bi_gru_on(tape: &mut Tape, p: &BiGruParams<Var>, inputs: Var) -> Result<Var> {
    let fwd = gru_sequence_on(tape, &p.forward, inputs, false)?;
    let bwd = gru_sequence_on(tape, &p.backward, inputs, true)?;
    let fwd = tape.stack_rows(&fwd)?;
    let bwd = tape.stack_rows(&bwd)?;
    let sum = tape.add(fwd, bwd)?;
    Ok(tape.scale(sum, 0.5))
}

pub fn encode_text_on(
    tape: &mut Tape,
    p: &TextEncoderParams<Var>,
    text: &TextInstance,
) -> Result<Var> {
    let vocab = tape.value(p.embedding).rows();
    if let Some(bad) = text.tokens().iter().find(|&&t| t >= vocab) {
        return Err(Error::Validation(format!(
            "text {}: token {bad} outside vocabulary of {vocab}",
            text.id()
        )));
    }
    let embedded = tape.gather_rows(p.embedding, text.tokens())?;
    bi_gru_on(tape, &p.gru, embedded)
}

pub fn encode_image_on(
    tape: &mut Tape,
    p: &ImageEncoderParams<Var>,
    image: &ImageInstance,
) -> Result<Var> {
    let descriptors = tape.leaf(image.descriptors().clone());
    let boxes = tape.leaf(image.boxes().clone());
    let fw = tape.matmul(descriptors, p.feature_w)?;
    let fo = tape.add_row_bias(fw, p.feature_b)?;
    let pw = tape.matmul(boxes, p.position_w)?;
    let pb = tape.add_row_bias(pw, p.position_b)?;
    let po = tape.sigmoid(pb);
    tape.mul(fo, po)
}

/// Word features, `n × h`.
pub fn encode_text(params: &TextEncoderParams, text: &TextInstance) -> Result<Tensor> {
    let mut tape = Tape::new();
    let p = params.map(&mut |t| tape.leaf(t.clone()));
    let out = encode_text_on(&mut tape, &p, text)?;
    Ok(tape.value(out).clone())
}

/// Object features, `k × h`.
pub fn encode_image(params: &ImageEncoderParams, image: &ImageInstance) -> Result<Tensor> {
    let mut tape = Tape::new();
    let p = params.map(&mut |t| tape.leaf(t.clone()));
    let out = encode_image_on(&mut tape, &p, image)?;
    Ok(tape.value(out).clone())
}
