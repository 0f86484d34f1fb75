//! The per-pair scoring pipeline: encoders, optional recurrent visual
//! embedding, cross matching.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoders::{encode_image_on, encode_text_on, ImageInstance, TextInstance};
use crate::error::{Error, Result};
use crate::matching::{
    pair_similarity_on, self_attention_on, Objective, PairGraph, SimilarityBreakdown, Temperatures,
};
use crate::params::{Dims, MatchingParams, ModelParams, RveParams};
use crate::rve::{self, recurrent_embed_on, Reordering, RveMode};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub dims: Dims,
    pub temps: Temperatures,
    pub objective: Objective,
    /// Whether inference runs the recurrent visual embedding.
    pub rve: bool,
}

impl ModelConfig {
    pub fn rve_mode(&self) -> RveMode {
        if self.rve {
            RveMode::Recurrent
        } else {
            RveMode::IdentityProbe
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

/// Matching and RVE weights wrapped for cheap sharing across pair tapes.
#[derive(Clone, Debug)]
pub struct PairWeights {
    pub matching: MatchingParams<Arc<Tensor>>,
    pub rve: RveParams<Arc<Tensor>>,
}

impl PairWeights {
    pub fn from_params(params: &ModelParams) -> Self {
        let mut share = |t: &Tensor| Arc::new(t.clone());
        PairWeights {
            matching: params.matching.map(&mut share),
            rve: params.rve.map(&mut share),
        }
    }
}

/// One pair's forward graph, kept alive so it can be differentiated later.
#[derive(Debug)]
pub struct PairTape {
    pub tape: Tape,
    pub objects: Var,
    pub words: Var,
    pub matching: MatchingParams<Var>,
    pub rve: Option<RveParams<Var>>,
    pub graph: PairGraph,
    pub reordering: Option<Reordering>,
}

impl PairTape {
    pub fn score(&self) -> f64 {
        self.tape.value(self.graph.s_final).item()
    }

    pub fn breakdown(&self) -> SimilarityBreakdown {
        SimilarityBreakdown::from_graph(&self.tape, &self.graph)
    }
}

/// Scores one pair from encoder outputs on a fresh tape.
pub fn forward_pair(
    objects: Arc<Tensor>,
    words: Arc<Tensor>,
    weights: &PairWeights,
    temps: &Temperatures,
    objective: Objective,
    mode: RveMode,
) -> Result<PairTape> {
    let mut tape = Tape::new();
    let o = tape.leaf_shared(objects);
    let w = tape.leaf_shared(words);
    let matching = weights
        .matching
        .map(&mut |t| tape.leaf_shared(Arc::clone(t)));
    let word_weights = self_attention_on(&mut tape, w, matching.word_attention, temps.beta_w)?;

    let (matched_objects, rve_vars, reordering) = match mode {
        RveMode::IdentityProbe => (o, None, None),
        RveMode::Recurrent => {
            let (reordering, _) = rve::plan(
                tape.value(o),
                tape.value(w),
                tape.value(word_weights).data(),
            )?;
            let ordered = tape.gather_rows(o, &reordering.permutation)?;
            let rve_vars = weights.rve.map(&mut |t| tape.leaf_shared(Arc::clone(t)));
            let embedded = recurrent_embed_on(&mut tape, ordered, &rve_vars)?;
            (embedded, Some(rve_vars), Some(reordering))
        }
    };
    let graph = pair_similarity_on(
        &mut tape,
        matched_objects,
        w,
        &matching,
        temps,
        objective,
        Some(word_weights),
    )?;
    Ok(PairTape {
        tape,
        objects: o,
        words: w,
        matching,
        rve: rve_vars,
        graph,
        reordering,
    })
}

/// Full record of one scored pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PairScore {
    pub breakdown: SimilarityBreakdown,
    pub reordering: Option<Reordering>,
}

impl Model {
    pub fn new(config: ModelConfig, params: ModelParams) -> Result<Self> {
        params.validate()?;
        if params.dims() != config.dims {
            return Err(Error::Validation(format!(
                "parameter dims {:?} disagree with config {:?}",
                params.dims(),
                config.dims
            )));
        }
        config.temps.validate()?;
        Ok(Self { config, params })
    }

    /// Fresh parameters drawn from a ChaCha8 stream seeded with `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = ModelParams::init(&mut ChaCha8Rng::seed_from_u64(seed), config.dims);
        Self::new(config, params)
    }

    pub fn encode_image(&self, image: &ImageInstance) -> Result<Tensor> {
        if image.feature_dim() != self.config.dims.image_features {
            return Err(Error::Shape {
                op: "encode_image",
                left: [image.num_objects(), image.feature_dim()],
                right: [self.config.dims.image_features, self.config.dims.hidden],
            });
        }
        let mut tape = Tape::new();
        let p = self.params.image.map(&mut |t| tape.leaf(t.clone()));
        let out = encode_image_on(&mut tape, &p, image)?;
        Ok(tape.value(out).clone())
    }

    pub fn encode_text(&self, text: &TextInstance) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.params.text.map(&mut |t| tape.leaf(t.clone()));
        let out = encode_text_on(&mut tape, &p, text)?;
        Ok(tape.value(out).clone())
    }

    pub fn pair_weights(&self) -> PairWeights {
        PairWeights::from_params(&self.params)
    }

    pub fn score(&self, image: &ImageInstance, text: &TextInstance) -> Result<PairScore> {
        let objects = Arc::new(self.encode_image(image)?);
        let words = Arc::new(self.encode_text(text)?);
        let pair = forward_pair(
            objects,
            words,
            &self.pair_weights(),
            &self.config.temps,
            self.config.objective,
            self.config.rve_mode(),
        )?;
        Ok(PairScore {
            breakdown: pair.breakdown(),
            reordering: pair.reordering,
        })
    }

    /// `images × texts` matrix of final scores; every pair runs the full
    /// pipeline, including its own reordering and recurrent pass.
    pub fn similarity_matrix(
        &self,
        images: &[&ImageInstance],
        texts: &[&TextInstance],
    ) -> Result<Tensor> {
        let objects = images
            .iter()
            .map(|i| self.encode_image(i).map(Arc::new))
            .collect::<Result<Vec<_>>>()?;
        let words = texts
            .iter()
            .map(|t| self.encode_text(t).map(Arc::new))
            .collect::<Result<Vec<_>>>()?;
        self.similarity_matrix_encoded(&objects, &words)
    }

    pub fn similarity_matrix_encoded(
        &self,
        objects: &[Arc<Tensor>],
        words: &[Arc<Tensor>],
    ) -> Result<Tensor> {
        if objects.is_empty() || words.is_empty() {
            return Err(Error::Validation(
                "similarity matrix needs images and texts".into(),
            ));
        }
        let weights = self.pair_weights();
        let mut out = Tensor::zeros(objects.len(), words.len());
        for (i, o) in objects.iter().enumerate() {
            for (j, w) in words.iter().enumerate() {
                let pair = forward_pair(
                    Arc::clone(o),
                    Arc::clone(w),
                    &weights,
                    &self.config.temps,
                    self.config.objective,
                    self.config.rve_mode(),
                )?;
                out.set(i, j, pair.score());
            }
        }
        Ok(out)
    }
}
