//! Plain-text dump of one pair's attention maps and object reordering.

use std::fmt::Write as _;

use crate::encoders::{ImageInstance, TextInstance};
use crate::error::Result;
use crate::model::Model;
use crate::tensor::Tensor;

fn matrix(out: &mut String, name: &str, t: &Tensor) {
    let _ = writeln!(out, "[{name}] {}x{}", t.rows(), t.cols());
    for r in 0..t.rows() {
        let row: Vec<String> = t.row(r).iter().map(|v| format!("{v:.6}")).collect();
        let _ = writeln!(out, "{}", row.join("\t"));
    }
}

/// Scores `(image, text)` and renders every attention map, the per-element
/// similarities and, when the RVE ran, each object's anchor word and slot.
/// `words` labels the text's tokens.
pub fn dump_attention(
    model: &Model,
    image: &ImageInstance,
    text: &TextInstance,
    words: &[String],
) -> Result<String> {
    let score = model.score(image, text)?;
    let b = &score.breakdown;
    let mut out = String::new();
    let _ = writeln!(out, "image={}", image.id());
    let _ = writeln!(out, "text={}", text.id());
    let _ = writeln!(out, "words={}", words.join(" "));
    let _ = writeln!(out, "objective={}", model.config.objective.as_str());
    let _ = writeln!(out, "s_word={:.6}", b.s_word);
    let _ = writeln!(out, "s_object={:.6}", b.s_object);
    let _ = writeln!(out, "s_final={:.6}", b.s_final);
    match &score.reordering {
        Some(r) => {
            let _ = writeln!(out, "[reordering] object anchor_word slot");
            let inverse = r.inverse();
            for (object, anchor) in r.anchors.iter().enumerate() {
                let _ = writeln!(out, "{object}\t{anchor}\t{}", inverse[object]);
            }
        }
        None => {
            let _ = writeln!(out, "[reordering] none");
        }
    }
    matrix(&mut out, "object_word_affinity", &b.affinity);
    matrix(&mut out, "object_to_word_attention", &b.alpha);
    matrix(&mut out, "word_object_affinity", &b.affinity_dual);
    matrix(&mut out, "word_to_object_attention", &b.alpha_dual);
    matrix(
        &mut out,
        "word_weights",
        &Tensor::row_vector(b.word_weights.clone()),
    );
    matrix(
        &mut out,
        "object_weights",
        &Tensor::row_vector(b.object_weights.clone()),
    );
    matrix(
        &mut out,
        "object_text_similarity",
        &Tensor::row_vector(b.object_text_sims.clone()),
    );
    matrix(
        &mut out,
        "image_word_similarity",
        &Tensor::row_vector(b.image_word_sims.clone()),
    );
    Ok(out)
}
