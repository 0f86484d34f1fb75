//! Multi-attention cross matching of one image-text pair.
//!
//! Given object features `O` (`k × h`) and word features `W` (`n × h`):
//!
//! * `A[i][j]` is the clamped cosine of `o_i` and `w_j`, L2-normalized over
//!   objects for each word (with `ε²` under the root);
//! * `α = softmax_rows(λ1·A)`, `t_i = Σ_j α[i][j] w_j`, `S(i,T) = cos(o_i, t_i)`;
//! * the dual path swaps the roles of objects and words with `λ2`, giving
//!   `S(I,j) = cos(w_j, m_j)`;
//! * self-attention weights `a^w = softmax(β_w · W_w Wᵀ)` and
//!   `ã^o = softmax(β_o · W_o Oᵀ)` aggregate them into the word-oriented score
//!   `S_w = Σ_j a^w_j S(I,j)` and object-oriented score `S_o = Σ_i ã^o_i S(i,T)`.

use crate::error::{Error, Result};
use crate::params::MatchingParams;
use crate::tape::{Tape, Var};
use crate::tensor::{Tensor, NORM_EPS};

/// Which aggregate a model is trained on and reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Objective {
    WordOriented,
    ObjectOriented,
    /// Mean of the word- and object-oriented scores.
    Ensemble,
}

impl Objective {
    pub fn as_str(self) -> &'static str {
        match self {
            Objective::WordOriented => "word",
            Objective::ObjectOriented => "object",
            Objective::Ensemble => "ensemble",
        }
    }
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "word" => Ok(Objective::WordOriented),
            "object" => Ok(Objective::ObjectOriented),
            "ensemble" => Ok(Objective::Ensemble),
            other => Err(Error::Config(format!(
                "unknown objective {other:?} (expected word, object or ensemble)"
            ))),
        }
    }
}

/// Inverse temperatures of the four softmaxes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Temperatures {
    pub lambda1: f64,
    pub lambda2: f64,
    pub beta_w: f64,
    pub beta_o: f64,
}

impl Temperatures {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("beta_w", self.beta_w),
            ("beta_o", self.beta_o),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Validation(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Clamped-cosine affinities normalized over objects (`k × n`).
pub fn object_to_word_affinity_on(tape: &mut Tape, objects: Var, words: Var) -> Result<Var> {
    let cos = tape.cosine_matrix(objects, words)?;
    let clamped = tape.clamp_at_zero(cos);
    Ok(tape.col_normalize(clamped, NORM_EPS))
}

/// Cross-guided attention: `α = softmax_rows(λ·A)` and the attended rows
/// `α · values`. Returns `(attended, α)`.
pub fn attend_on(tape: &mut Tape, values: Var, affinity: Var, lambda: f64) -> Result<(Var, Var)> {
    let alpha = tape.softmax_rows(affinity, lambda)?;
    let attended = tape.matmul(alpha, values)?;
    Ok((attended, alpha))
}

/// Softmax over rows of `features` of `β · (attn · feature_row)`, as `1 × r`.
pub fn self_attention_on(tape: &mut Tape, features: Var, attn: Var, beta: f64) -> Result<Var> {
    let ft = tape.transpose(features);
    let scores = tape.matmul(attn, ft)?;
    tape.softmax_rows(scores, beta)
}

/// Tape handles of every intermediate of one pair's score.
#[derive(Clone, Copy, Debug)]
pub struct PairGraph {
    pub affinity: Var,
    pub affinity_dual: Var,
    pub alpha: Var,
    pub alpha_dual: Var,
    pub attended_text: Var,
    pub attended_image: Var,
    pub object_text_sims: Var,
    pub image_word_sims: Var,
    pub word_weights: Var,
    pub object_weights: Var,
    pub s_word: Var,
    pub s_object: Var,
    pub s_final: Var,
}

/// Builds the full pair score on `tape`. `word_weights` may be passed in when
/// the caller already computed `a^w` for the same words.
pub fn pair_similarity_on(
    tape: &mut Tape,
    objects: Var,
    words: Var,
    params: &MatchingParams<Var>,
    temps: &Temperatures,
    objective: Objective,
    word_weights: Option<Var>,
) -> Result<PairGraph> {
    let (os, ws) = (tape.value(objects).shape(), tape.value(words).shape());
    if os[1] != ws[1] {
        return Err(Error::Shape {
            op: "pair_similarity",
            left: os,
            right: ws,
        });
    }
    let cos = tape.cosine_matrix(objects, words)?;
    let clamped = tape.clamp_at_zero(cos);
    let affinity = tape.col_normalize(clamped, NORM_EPS);
    let (attended_text, alpha) = attend_on(tape, words, affinity, temps.lambda1)?;
    let object_text_sims = tape.row_cosine(objects, attended_text)?;

    let clamped_t = tape.transpose(clamped);
    let affinity_dual = tape.col_normalize(clamped_t, NORM_EPS);
    let (attended_image, alpha_dual) = attend_on(tape, objects, affinity_dual, temps.lambda2)?;
    let image_word_sims = tape.row_cosine(words, attended_image)?;

    let word_weights = match word_weights {
        Some(w) => w,
        None => self_attention_on(tape, words, params.word_attention, temps.beta_w)?,
    };
    let object_weights = self_attention_on(tape, objects, params.object_attention, temps.beta_o)?;

    let s_word = tape.matmul(word_weights, image_word_sims)?;
    let s_object = tape.matmul(object_weights, object_text_sims)?;
    let s_final = match objective {
        Objective::WordOriented => s_word,
        Objective::ObjectOriented => s_object,
        Objective::Ensemble => {
            let both = tape.add(s_word, s_object)?;
            tape.scale(both, 0.5)
        }
    };
    Ok(PairGraph {
        affinity,
        affinity_dual,
        alpha,
        alpha_dual,
        attended_text,
        attended_image,
        object_text_sims,
        image_word_sims,
        word_weights,
        object_weights,
        s_word,
        s_object,
        s_final,
    })
}

/// Every quantity of one pair's score, as plain values.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityBreakdown {
    /// `A`, `k × n`.
    pub affinity: Tensor,
    /// `Ã`, `n × k`.
    pub affinity_dual: Tensor,
    /// `α`, `k × n`.
    pub alpha: Tensor,
    /// `α̃`, `n × k`.
    pub alpha_dual: Tensor,
    /// `t_i` rows, `k × h`.
    pub attended_text: Tensor,
    /// `m_j` rows, `n × h`.
    pub attended_image: Tensor,
    pub object_text_sims: Vec<f64>,
    pub image_word_sims: Vec<f64>,
    pub word_weights: Vec<f64>,
    pub object_weights: Vec<f64>,
    pub s_word: f64,
    pub s_object: f64,
    pub s_final: f64,
}

impl SimilarityBreakdown {
    pub fn from_graph(tape: &Tape, g: &PairGraph) -> Self {
        let v = |var: Var| tape.value(var).clone();
        SimilarityBreakdown {
            affinity: v(g.affinity),
            affinity_dual: v(g.affinity_dual),
            alpha: v(g.alpha),
            alpha_dual: v(g.alpha_dual),
            attended_text: v(g.attended_text),
            attended_image: v(g.attended_image),
            object_text_sims: v(g.object_text_sims).into_data(),
            image_word_sims: v(g.image_word_sims).into_data(),
            word_weights: v(g.word_weights).into_data(),
            object_weights: v(g.object_weights).into_data(),
            s_word: tape.value(g.s_word).item(),
            s_object: tape.value(g.s_object).item(),
            s_final: tape.value(g.s_final).item(),
        }
    }
}

fn bind(tape: &mut Tape, params: &MatchingParams) -> MatchingParams<Var> {
    params.map(&mut |t| tape.leaf(t.clone()))
}

/// Value-level pair score.
pub fn pair_similarity(
    objects: &Tensor,
    words: &Tensor,
    params: &MatchingParams,
    temps: &Temperatures,
    objective: Objective,
) -> Result<SimilarityBreakdown> {
    temps.validate()?;
    let mut tape = Tape::new();
    let o = tape.leaf(objects.clone());
    let w = tape.leaf(words.clone());
    let p = bind(&mut tape, params);
    let g = pair_similarity_on(&mut tape, o, w, &p, temps, objective, None)?;
    Ok(SimilarityBreakdown::from_graph(&tape, &g))
}

/// Value-level `A` (`k × n`).
pub fn object_to_word_affinity(objects: &Tensor, words: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let o = tape.leaf(objects.clone());
    let w = tape.leaf(words.clone());
    let a = object_to_word_affinity_on(&mut tape, o, w)?;
    Ok(tape.value(a).clone())
}

/// Value-level text attention per object: returns `(t, α)`.
pub fn attend_text_per_object(
    words: &Tensor,
    affinity: &Tensor,
    lambda1: f64,
) -> Result<(Tensor, Tensor)> {
    let mut tape = Tape::new();
    let w = tape.leaf(words.clone());
    let a = tape.leaf(affinity.clone());
    let (t, alpha) = attend_on(&mut tape, w, a, lambda1)?;
    Ok((tape.value(t).clone(), tape.value(alpha).clone()))
}

/// `S(i,T) = cos(o_i, t_i)` for each object.
pub fn object_text_similarity(objects: &Tensor, attended_text: &Tensor) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let o = tape.leaf(objects.clone());
    let t = tape.leaf(attended_text.clone());
    let s = tape.row_cosine(o, t)?;
    Ok(tape.value(s).data().to_vec())
}

/// Dual path: returns `(m, α̃, S(I,j))`.
pub fn dual_image_word_similarity(
    objects: &Tensor,
    words: &Tensor,
    lambda2: f64,
) -> Result<(Tensor, Tensor, Vec<f64>)> {
    let mut tape = Tape::new();
    let o = tape.leaf(objects.clone());
    let w = tape.leaf(words.clone());
    let dual = object_to_word_affinity_on(&mut tape, w, o)?;
    let (m, alpha_dual) = attend_on(&mut tape, o, dual, lambda2)?;
    let s = tape.row_cosine(w, m)?;
    Ok((
        tape.value(m).clone(),
        tape.value(alpha_dual).clone(),
        tape.value(s).data().to_vec(),
    ))
}

/// Value-level self-attention weights over the rows of `features`.
pub fn self_attention_weights(features: &Tensor, attn: &Tensor, beta: f64) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let f = tape.leaf(features.clone());
    let a = tape.leaf(attn.clone());
    let w = self_attention_on(&mut tape, f, a, beta)?;
    Ok(tape.value(w).data().to_vec())
}
