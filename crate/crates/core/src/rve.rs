//! Text-driven object reordering and the recurrent visual embedding.
//!
//! For a pair `(I, T)` each object is anchored at its most related word
//! `argmax_j P(i,j)` with `P(i,j) = a^w_j · (o_iᵀ w_j)`. Objects are stably
//! sorted by anchor position and re-encoded by a bi-directional GRU, so the
//! new feature of an object depends on the objects the text places next to it.
//! The permutation is a piecewise-constant function of the parameters and is
//! treated as a constant by the backward pass.
//!
//! All positions and indices here are zero-based.

use crate::encoders::bi_gru_on;
use crate::error::{Error, Result};
use crate::params::RveParams;
use crate::tape::{Tape, Var};
use crate::tensor::{dot, Tensor};

/// Whether the recurrent pass runs or the pre-RVE object features are used
/// unchanged.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RveMode {
    Recurrent,
    /// Skips reordering and the recurrent pass entirely, making the pipeline
    /// the plain matching model.
    IdentityProbe,
}

/// `P(i,j)` for every object `i` and word `j`, `k × n`.
#[derive(Clone, Debug, PartialEq)]
pub struct RelatednessMatrix(pub Tensor);

impl RelatednessMatrix {
    pub fn values(&self) -> &Tensor {
        &self.0
    }
}

/// `P(i,j) = a^w_j · (o_iᵀ w_j)` with the raw (unnormalized, unclamped) dot
/// product.
pub fn relatedness(
    objects: &Tensor,
    words: &Tensor,
    word_weights: &[f64],
) -> Result<RelatednessMatrix> {
    if objects.cols() != words.cols() || word_weights.len() != words.rows() {
        return Err(Error::Shape {
            op: "relatedness",
            left: objects.shape(),
            right: words.shape(),
        });
    }
    let mut p = Tensor::zeros(objects.rows(), words.rows());
    for i in 0..objects.rows() {
        for (j, &a) in word_weights.iter().enumerate() {
            p.set(i, j, a * dot(objects.row(i), words.row(j)));
        }
    }
    Ok(RelatednessMatrix(p))
}

/// Per-object argmax over words; ties go to the smallest position.
pub fn most_related_word(p: &RelatednessMatrix) -> Vec<usize> {
    let m = p.values();
    (0..m.rows())
        .map(|i| {
            let row = m.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Result of sorting objects by anchor position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Reordering {
    /// `permutation[slot]` is the original index of the object placed at `slot`.
    pub permutation: Vec<usize>,
    /// Anchor word position of each original object.
    pub anchors: Vec<usize>,
}

impl Reordering {
    /// Anchor positions read along the new order; non-decreasing.
    pub fn anchors_in_order(&self) -> Vec<usize> {
        self.permutation.iter().map(|&i| self.anchors[i]).collect()
    }

    /// `inverse[original] = slot`.
    pub fn inverse(&self) -> Vec<usize> {
        let mut inv = vec![0; self.permutation.len()];
        for (slot, &src) in self.permutation.iter().enumerate() {
            inv[src] = slot;
        }
        inv
    }

    pub fn is_identity(&self) -> bool {
        self.permutation.iter().enumerate().all(|(i, &p)| i == p)
    }
}

/// Stable sort of object indices by `(anchor, original index)`.
pub fn reorder(anchors: &[usize]) -> Reordering {
    let mut permutation: Vec<usize> = (0..anchors.len()).collect();
    permutation.sort_by_key(|&i| anchors[i]);
    Reordering {
        permutation,
        anchors: anchors.to_vec(),
    }
}

/// Reorders the rows of `objects` by `anchors`; returns the record and the
/// reordered matrix.
pub fn reorder_objects(objects: &Tensor, anchors: &[usize]) -> Result<(Reordering, Tensor)> {
    if anchors.len() != objects.rows() {
        return Err(Error::Validation(format!(
            "{} anchors for {} objects",
            anchors.len(),
            objects.rows()
        )));
    }
    let r = reorder(anchors);
    let reordered = objects.gather_rows(&r.permutation);
    Ok((r, reordered))
}

/// `S_em = Σ_i Σ_j P(i,j)`, summed row by row.
pub fn early_matching_score(p: &RelatednessMatrix) -> f64 {
    p.values().sum()
}

/// Anchors, reordering and early score for one pair from plain values.
pub fn plan(objects: &Tensor, words: &Tensor, word_weights: &[f64]) -> Result<(Reordering, f64)> {
    let p = relatedness(objects, words, word_weights)?;
    let anchors = most_related_word(&p);
    Ok((reorder(&anchors), early_matching_score(&p)))
}

/// Bi-GRU over already-reordered object rows; output stays in slot order.
pub fn recurrent_embed_on(
    tape: &mut Tape,
    ordered_objects: Var,
    params: &RveParams<Var>,
) -> Result<Var> {
    bi_gru_on(tape, params, ordered_objects)
}

/// Value-level [`recurrent_embed_on`].
pub fn recurrent_embed(ordered_objects: &Tensor, params: &RveParams) -> Result<Tensor> {
    let mut tape = Tape::new();
    let p = params.map(&mut |t| tape.leaf(t.clone()));
    let o = tape.leaf(ordered_objects.clone());
    let out = recurrent_embed_on(&mut tape, o, &p)?;
    Ok(tape.value(out).clone())
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::encoders::gru_cell;
    use crate::params::{BiGruParams, GruParams};

    fn rel(rows: &[Vec<f64>]) -> RelatednessMatrix {
        RelatednessMatrix(Tensor::from_rows(rows).unwrap())
    }

    #[test]
    fn relatedness_hand_case() {
        let objects = Tensor::from_rows(&[vec![1.0, 1.0]]).unwrap();
        let words = Tensor::from_rows(&[vec![2.0, 0.0], vec![1.0, 3.0], vec![0.0, 0.0]]).unwrap();
        let p = relatedness(&objects, &words, &[0.5, 0.5, 0.0]).unwrap();
        assert_eq!(p.values().row(0), &[1.0, 2.0, 0.0]);
        let orth = relatedness(
            &Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap(),
            &Tensor::from_rows(&[vec![0.0, 5.0]]).unwrap(),
            &[1.0],
        )
        .unwrap();
        assert_eq!(orth.values().item(), 0.0);
    }

    #[test]
    fn relatedness_keeps_negative_dots() {
        let p = relatedness(
            &Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap(),
            &Tensor::from_rows(&[vec![-2.0, 0.0]]).unwrap(),
            &[1.0],
        )
        .unwrap();
        assert_eq!(p.values().item(), -2.0);
    }

    #[test]
    fn argmax_cases() {
        assert_eq!(most_related_word(&rel(&[vec![1.0, 3.0, 2.0]])), vec![1]);
        assert_eq!(most_related_word(&rel(&[vec![2.0, 2.0, 2.0]])), vec![0]);
        assert_eq!(
            most_related_word(&rel(&[vec![-1.0], vec![5.0]])),
            vec![0, 0]
        );
    }

    #[test]
    fn reorder_cases() {
        // One-based anchors (3, 1, 2) → sources (2, 3, 1).
        assert_eq!(reorder(&[2, 0, 1]).permutation, vec![1, 2, 0]);
        assert!(reorder(&[4, 4, 4, 4]).is_identity());
        assert!(reorder(&[3]).is_identity());
        let r = reorder(&[2, 0, 2, 1, 0]);
        assert_eq!(r.permutation, vec![1, 4, 3, 0, 2]);
        assert_eq!(r.anchors_in_order(), vec![0, 0, 1, 2, 2]);
        let inv = r.inverse();
        for (slot, &src) in r.permutation.iter().enumerate() {
            assert_eq!(inv[src], slot);
        }
    }

    #[test]
    fn early_score_cases() {
        assert_eq!(
            early_matching_score(&rel(&[vec![0.0, 0.0], vec![0.0, 0.0]])),
            0.0
        );
        assert_eq!(
            early_matching_score(&rel(&[vec![1.0, 2.0], vec![3.0, 4.0]])),
            10.0
        );
        assert_eq!(
            early_matching_score(&rel(&[vec![3.0, 4.0], vec![1.0, 2.0]])),
            10.0
        );
    }

    #[test]
    fn zero_rve_params_give_zero_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let o = Tensor::new(3, 4, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let p = BiGruParams {
            forward: GruParams::zeros(4, 4),
            backward: GruParams::zeros(4, 4),
        };
        let out = recurrent_embed(&o, &p).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_object_with_tied_directions_is_one_cell_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = GruParams::init(&mut rng, 4, 4);
        let p = BiGruParams {
            forward: g.clone(),
            backward: g.clone(),
        };
        let o = Tensor::row_vector(vec![0.3, -0.2, 0.9, 0.1]);
        let out = recurrent_embed(&o, &p).unwrap();
        let step = gru_cell(&g, &o, &Tensor::zeros(1, 4)).unwrap();
        assert!(out.max_abs_diff(&step) < 1e-15);
    }
}
