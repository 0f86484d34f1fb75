//! Hardest-negative triplet training with early pair selection and staged
//! parameter freezing.
//!
//! A batch is scored in two levels. The encoders run once per image and text
//! on a batch tape. Each selected `(image, text)` pair then gets its own pair
//! tape whose leaves are the encoder outputs and shared matching/RVE weights.
//! After the loss picks its hardest negatives, only pairs with a nonzero loss
//! coefficient are differentiated; their leaf gradients are summed in pair
//! order and pushed back through the batch tape.

use std::collections::{HashMap, HashSet, VecDeque};
use std::sync::Arc;

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::Corpus;
use crate::encoders::{encode_image_on, encode_text_on, ImageInstance, TextInstance};
use crate::error::{Error, Result};
use crate::matching::{self_attention_weights, Objective, Temperatures};
use crate::model::{forward_pair, Model, PairWeights};
use crate::params::{ModelParams, ParamGroup};
use crate::rve::{self, RveMode};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub gamma: f64,
    /// Non-corresponding images kept per text by early selection.
    pub negatives: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub schedule: StageSchedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.2,
            negatives: 10,
            learning_rate: 0.0002,
            batch_size: 128,
            epochs: 30,
            seed: 0,
            clip_norm: Some(2.0),
            schedule: StageSchedule::MultiStage,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be positive");
        }
        if self.negatives == 0 {
            return bad("d must be at least 1");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.clip_norm.is_some_and(|c| c <= 0.0) {
            return bad("clip norm must be positive");
        }
        Ok(())
    }
}

/// `lr₀ / 10^⌊e/10⌋` for zero-based epoch `e`.
pub fn learning_rate_at(lr0: f64, epoch: usize) -> f64 {
    lr0 / 10f64.powi((epoch / 10) as i32)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageSchedule {
    /// Matching model first, then the RVE alone, then everything.
    MultiStage,
    /// Never runs the recurrent visual embedding; trains the matching model
    /// throughout. Used as the ablation baseline.
    MatchingOnly,
}

impl StageSchedule {
    pub fn as_str(self) -> &'static str {
        match self {
            StageSchedule::MultiStage => "multi-stage",
            StageSchedule::MatchingOnly => "matching-only",
        }
    }

    /// Stage of zero-based `epoch`.
    pub fn stage(self, epoch: usize) -> Stage {
        use ParamGroup::*;
        match (self, epoch) {
            (StageSchedule::MatchingOnly, _) | (StageSchedule::MultiStage, 0) => Stage {
                rve: false,
                trainable: vec![ImageProjection, TextEncoder, Attention],
            },
            (StageSchedule::MultiStage, 1) => Stage {
                rve: true,
                trainable: vec![Rve],
            },
            (StageSchedule::MultiStage, _) => Stage {
                rve: true,
                trainable: ParamGroup::ALL.to_vec(),
            },
        }
    }

    /// Whether a model trained for `epochs` epochs scores with the RVE.
    pub fn final_rve(self, epochs: usize) -> bool {
        epochs > 0 && self.stage(epochs - 1).rve
    }
}

impl std::str::FromStr for StageSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multi-stage" => Ok(StageSchedule::MultiStage),
            "matching-only" => Ok(StageSchedule::MatchingOnly),
            other => Err(Error::Config(format!("unknown schedule {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Stage {
    pub rve: bool,
    pub trainable: Vec<ParamGroup>,
}

impl Stage {
    pub fn trains(&self, group: ParamGroup) -> bool {
        self.trainable.contains(&group)
    }
}

/// For each text (row of `early`, `texts × images`), its own image plus the
/// `d` other images with the highest early score, ties to the smaller image
/// index. Each selection is returned sorted by image index.
pub fn select_pairs(early: &Tensor, d: usize) -> Vec<Vec<usize>> {
    let s = early.rows();
    let d = clamp_negatives(d, s);
    (0..s)
        .map(|t| {
            let row = early.row(t);
            let mut others: Vec<usize> = (0..early.cols()).filter(|&i| i != t).collect();
            others.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            let mut keep: Vec<usize> = others.into_iter().take(d).collect();
            keep.push(t);
            keep.sort_unstable();
            keep
        })
        .collect()
}

fn clamp_negatives(d: usize, s: usize) -> usize {
    if d >= s {
        warn!(
            "selection width {d} exceeds batch of {s}; clamped to {}",
            s.saturating_sub(1)
        );
        s.saturating_sub(1)
    } else {
        d
    }
}

/// Hardest non-corresponding partners among scored pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HardestNegatives {
    /// Per text `t`: the image `b ≠ t` maximizing `S(b, t)`.
    pub image_for_text: Vec<Option<usize>>,
    /// Per image `i`: the text `c ≠ i` maximizing `S(i, c)` among texts whose
    /// selection included `i`.
    pub text_for_image: Vec<Option<usize>>,
}

/// `scores` is `images × texts`; only entries with `scored[i][t]` are read.
/// Pair `b` is the corresponding pair of image `b` and text `b`.
pub fn hardest_negatives(scores: &Tensor, scored: &[Vec<bool>]) -> HardestNegatives {
    let s = scores.rows();
    let argmax = |cands: &mut dyn Iterator<Item = (usize, f64)>| {
        let mut best: Option<(usize, f64)> = None;
        for (idx, v) in cands {
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((idx, v));
            }
        }
        best.map(|(i, _)| i)
    };
    let image_for_text = (0..s)
        .map(|t| {
            argmax(
                &mut (0..s)
                    .filter(|&i| i != t && scored[i][t])
                    .map(|i| (i, scores.get(i, t))),
            )
        })
        .collect();
    let text_for_image = (0..s)
        .map(|i| {
            argmax(
                &mut (0..s)
                    .filter(|&t| t != i && scored[i][t])
                    .map(|t| (t, scores.get(i, t))),
            )
        })
        .collect();
    HardestNegatives {
        image_for_text,
        text_for_image,
    }
}

/// `[γ − S_pos + S_hard_text]₊ + [γ − S_pos + S_hard_image]₊`; a missing
/// negative contributes nothing.
pub fn triplet_loss(
    s_pos: f64,
    s_hard_text: Option<f64>,
    s_hard_image: Option<f64>,
    gamma: f64,
) -> f64 {
    let hinge = |neg: Option<f64>| neg.map_or(0.0, |n| (gamma - s_pos + n).max(0.0));
    hinge(s_hard_text) + hinge(s_hard_image)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchOptions {
    pub temps: Temperatures,
    pub objective: Objective,
    pub gamma: f64,
    /// Early-selection width; `None` scores all `s²` pairs.
    pub negatives: Option<usize>,
    pub rve: bool,
    /// Skip the encoder backward pass when no encoder group is trainable.
    pub encoder_grads: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchReport {
    pub loss: f64,
    /// `images × texts`; unscored entries are NaN.
    pub scores: Tensor,
    pub selected: Vec<Vec<usize>>,
    pub hardest: HardestNegatives,
    /// Pairs that ran the recurrent visual embedding.
    pub rve_invocations: usize,
    /// Images no text selected, hence without an image-anchored term.
    pub missing_image_terms: usize,
}

struct EncodedBatch {
    tape: Tape,
    image_vars: Vec<Var>,
    text_vars: Vec<Var>,
    image_params: crate::params::ImageEncoderParams<Var>,
    text_params: crate::params::TextEncoderParams<Var>,
}

fn encode_batch(
    params: &ModelParams,
    pairs: &[(&ImageInstance, &TextInstance)],
) -> Result<EncodedBatch> {
    let mut tape = Tape::new();
    let image_params = params.image.map(&mut |t| tape.leaf(t.clone()));
    let text_params = params.text.map(&mut |t| tape.leaf(t.clone()));
    let mut image_vars = Vec::with_capacity(pairs.len());
    let mut text_vars = Vec::with_capacity(pairs.len());
    for (image, text) in pairs {
        image_vars.push(encode_image_on(&mut tape, &image_params, image)?);
        text_vars.push(encode_text_on(&mut tape, &text_params, text)?);
    }
    Ok(EncodedBatch {
        tape,
        image_vars,
        text_vars,
        image_params,
        text_params,
    })
}

/// Early scores `texts × images` from encoder outputs.
pub fn early_scores(
    objects: &[Arc<Tensor>],
    words: &[Arc<Tensor>],
    word_attention: &Tensor,
    beta_w: f64,
) -> Result<Tensor> {
    let mut out = Tensor::zeros(words.len(), objects.len());
    for (t, w) in words.iter().enumerate() {
        let aw = self_attention_weights(w, word_attention, beta_w)?;
        for (i, o) in objects.iter().enumerate() {
            let p = rve::relatedness(o, w, &aw)?;
            out.set(t, i, rve::early_matching_score(&p));
        }
    }
    Ok(out)
}

macro_rules! fields {
    ($block:expr, $visit:ident) => {{
        let mut out = Vec::new();
        $block.$visit("", &mut |_, t| out.push(t));
        out
    }};
}

/// Adds each variable's gradient into the matching gradient tensor; both
/// lists come from walking the same kind of parameter block.
fn accumulate_fields(grads: Vec<&mut Tensor>, vars: Vec<&Var>, tape: &Tape) {
    for (g, &v) in grads.into_iter().zip(vars) {
        if let Some(d) = tape.grad(v) {
            g.add_assign(d);
        }
    }
}

/// Loss of one batch of corresponding pairs and, if `want_grads`, its
/// gradient with respect to every parameter.
pub fn batch_loss_and_grads(
    params: &ModelParams,
    pairs: &[(&ImageInstance, &TextInstance)],
    opts: &BatchOptions,
    want_grads: bool,
) -> Result<(BatchReport, Option<ModelParams>)> {
    let s = pairs.len();
    if s < 2 {
        return Err(Error::Validation(format!(
            "a batch needs at least 2 pairs, got {s}"
        )));
    }
    let mut enc = encode_batch(params, pairs)?;
    let objects: Vec<Arc<Tensor>> = enc
        .image_vars
        .iter()
        .map(|&v| Arc::new(enc.tape.value(v).clone()))
        .collect();
    let words: Vec<Arc<Tensor>> = enc
        .text_vars
        .iter()
        .map(|&v| Arc::new(enc.tape.value(v).clone()))
        .collect();

    let selected = match (opts.rve, opts.negatives) {
        (true, Some(d)) => {
            let early = early_scores(
                &objects,
                &words,
                &params.matching.word_attention,
                opts.temps.beta_w,
            )?;
            select_pairs(&early, d)
        }
        _ => vec![(0..s).collect(); s],
    };
    let mode = if opts.rve {
        RveMode::Recurrent
    } else {
        RveMode::IdentityProbe
    };

    let weights = PairWeights::from_params(params);
    let mut scored = vec![vec![false; s]; s];
    let mut scores = Tensor::filled(s, s, f64::NAN);
    let mut tapes = Vec::new();
    let mut rve_invocations = 0;
    for (t, images) in selected.iter().enumerate() {
        for &i in images {
            let pair = forward_pair(
                Arc::clone(&objects[i]),
                Arc::clone(&words[t]),
                &weights,
                &opts.temps,
                opts.objective,
                mode,
            )?;
            if pair.rve.is_some() {
                rve_invocations += 1;
            }
            scores.set(i, t, pair.score());
            scored[i][t] = true;
            tapes.push(((i, t), pair));
        }
    }

    let hardest = hardest_negatives(&scores, &scored);
    let mut loss = 0.0;
    let mut coef: HashMap<(usize, usize), f64> = HashMap::new();
    let mut missing = 0;
    for b in 0..s {
        let pos = scores.get(b, b);
        if let Some(c) = hardest.text_for_image[b] {
            let margin = opts.gamma - pos + scores.get(b, c);
            if margin > 0.0 {
                loss += margin;
                *coef.entry((b, b)).or_default() -= 1.0;
                *coef.entry((b, c)).or_default() += 1.0;
            }
        } else {
            missing += 1;
        }
        if let Some(i) = hardest.image_for_text[b] {
            let margin = opts.gamma - pos + scores.get(i, b);
            if margin > 0.0 {
                loss += margin;
                *coef.entry((b, b)).or_default() -= 1.0;
                *coef.entry((i, b)).or_default() += 1.0;
            }
        }
    }
    if missing > 0 {
        debug!("{missing} image(s) without an image-anchored loss term");
    }
    let report = BatchReport {
        loss,
        scores,
        selected,
        hardest,
        rve_invocations,
        missing_image_terms: missing,
    };
    if !want_grads {
        return Ok((report, None));
    }

    let mut grads = params.zeros_like();
    let mut object_grads: Vec<Option<Tensor>> = vec![None; s];
    let mut word_grads: Vec<Option<Tensor>> = vec![None; s];
    for ((i, t), mut pair) in tapes {
        let c = coef.get(&(i, t)).copied().unwrap_or(0.0);
        if c == 0.0 {
            continue;
        }
        pair.tape
            .backward_with(&[(pair.graph.s_final, Tensor::scalar(c))])?;
        add_grad(&mut object_grads[i], &pair.tape, pair.objects);
        add_grad(&mut word_grads[t], &pair.tape, pair.words);
        accumulate_fields(
            fields!(grads.matching, visit_mut),
            fields!(pair.matching, visit),
            &pair.tape,
        );
        if let Some(rve_vars) = &pair.rve {
            accumulate_fields(
                fields!(grads.rve, visit_mut),
                fields!(rve_vars, visit),
                &pair.tape,
            );
        }
    }
    if opts.encoder_grads {
        let mut seeds = Vec::new();
        for (v, g) in enc
            .image_vars
            .iter()
            .zip(object_grads)
            .chain(enc.text_vars.iter().zip(word_grads))
        {
            if let Some(g) = g {
                seeds.push((*v, g));
            }
        }
        if !seeds.is_empty() {
            enc.tape.backward_with(&seeds)?;
            accumulate_fields(
                fields!(grads.image, visit_mut),
                fields!(enc.image_params, visit),
                &enc.tape,
            );
            accumulate_fields(
                fields!(grads.text, visit_mut),
                fields!(enc.text_params, visit),
                &enc.tape,
            );
        }
    }
    Ok((report, Some(grads)))
}

fn add_grad(slot: &mut Option<Tensor>, tape: &Tape, v: Var) {
    if let Some(g) = tape.grad(v) {
        match slot {
            Some(acc) => acc.add_assign(g),
            None => *slot = Some(g.clone()),
        }
    }
}

/// Standard bias-corrected Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first: ModelParams,
    pub second: ModelParams,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            first: params.zeros_like(),
            second: params.zeros_like(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam step on the parameters whose group `trainable` accepts; the
/// moments of frozen groups are left untouched.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamState,
    lr: f64,
    trainable: &dyn Fn(ParamGroup) -> bool,
) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let g = grads.named();
    let m = state.first.named_mut();
    let v = state.second.named_mut();
    for ((((name, p), (_, g)), (_, m)), (_, v)) in
        params.named_mut().into_iter().zip(g).zip(m).zip(v)
    {
        if p.shape() != g.shape() || p.shape() != m.shape() || p.shape() != v.shape() {
            return Err(Error::Shape {
                op: "adam_step",
                left: p.shape(),
                right: g.shape(),
            });
        }
        if !trainable(ParamGroup::of(&name)) {
            continue;
        }
        let (p, g, m, v) = (p.data_mut(), g.data(), m.data_mut(), v.data_mut());
        for j in 0..p.len() {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            p[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
        }
    }
    Ok(())
}

/// Rescales the trainable gradients so their joint norm is at most `max`;
/// returns the norm before clipping.
pub fn clip_global_norm(
    grads: &mut ModelParams,
    max: f64,
    trainable: &dyn Fn(ParamGroup) -> bool,
) -> f64 {
    let norm = grads
        .named()
        .iter()
        .filter(|(n, _)| trainable(ParamGroup::of(n)))
        .map(|(_, g)| g.squared_norm())
        .sum::<f64>()
        .sqrt();
    if norm > max {
        let scale = max / norm;
        for (n, g) in grads.named_mut() {
            if trainable(ParamGroup::of(&n)) {
                g.scale_in_place(scale);
            }
        }
    }
    norm
}

/// Shuffles pair indices for one epoch and cuts them into batches.
///
/// Pairs linked through a designated hard negative (a text and an image of
/// another pair) form a group that goes into one batch whenever it fits. No
/// batch holds two pairs of the same image; such pairs are deferred to a
/// later batch. Batches of fewer than two pairs are dropped.
pub fn epoch_batches(corpus: &Corpus, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let n = corpus.pairs.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut pairs_of_image: HashMap<usize, Vec<usize>> = HashMap::new();
    let mut pair_of_text: HashMap<usize, usize> = HashMap::new();
    for (idx, &(i, t)) in corpus.pairs.iter().enumerate() {
        pairs_of_image.entry(i).or_default().push(idx);
        pair_of_text.insert(t, idx);
    }
    for &(t, i) in &corpus.hard_negatives {
        let (Some(&a), Some(others)) = (pair_of_text.get(&t), pairs_of_image.get(&i)) else {
            continue;
        };
        for &b in others {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut group_of_root: HashMap<usize, usize> = HashMap::new();
    for idx in 0..n {
        let r = find(&mut parent, idx);
        let g = *group_of_root.entry(r).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(idx);
    }
    groups.shuffle(rng);
    for g in &mut groups {
        g.shuffle(rng);
    }

    let mut queue: VecDeque<Vec<usize>> = groups.into();
    let mut batches = Vec::new();
    let mut batch: Vec<usize> = Vec::new();
    let mut images = HashSet::new();
    let mut flush = |batch: &mut Vec<usize>, images: &mut HashSet<usize>| {
        if batch.len() >= 2 {
            batches.push(std::mem::take(batch));
        } else if !batch.is_empty() {
            debug!("dropping a batch of {} pair(s)", batch.len());
            batch.clear();
        }
        images.clear();
    };
    while let Some(group) = queue.pop_front() {
        if !batch.is_empty() && batch.len() + group.len() > batch_size && group.len() <= batch_size
        {
            flush(&mut batch, &mut images);
        }
        let mut deferred = Vec::new();
        let mut added = false;
        for p in group {
            if batch.len() == batch_size {
                flush(&mut batch, &mut images);
            }
            if images.insert(corpus.pairs[p].0) {
                batch.push(p);
                added = true;
            } else {
                deferred.push(p);
            }
        }
        if !deferred.is_empty() {
            if !added {
                flush(&mut batch, &mut images);
            }
            queue.push_back(deferred);
        }
    }
    flush(&mut batch, &mut images);
    batches
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    /// Zero-based.
    pub epoch: usize,
    pub learning_rate: f64,
    pub stage: Stage,
    pub mean_loss: f64,
    pub batches: usize,
    pub rve_invocations: usize,
    pub checksums: Vec<(ParamGroup, u64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<EpochLog>,
}

/// Trains `model` in place of a copy; `on_epoch` sees the parameters after
/// every epoch.
pub fn train_with(
    corpus: &Corpus,
    model: Model,
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochLog, &Model) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    corpus.validate()?;
    if corpus.is_empty() {
        return Err(Error::Validation("training corpus is empty".into()));
    }
    let mut model = model;
    let mut adam = AdamState::new(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_ba7c);
    let mut log = Vec::new();
    for epoch in 0..config.epochs {
        let stage = config.schedule.stage(epoch);
        let lr = learning_rate_at(config.learning_rate, epoch);
        let opts = BatchOptions {
            temps: model.config.temps,
            objective: model.config.objective,
            gamma: config.gamma,
            negatives: Some(config.negatives),
            rve: stage.rve,
            encoder_grads: stage.trains(ParamGroup::ImageProjection)
                || stage.trains(ParamGroup::TextEncoder),
        };
        let trainable = |g: ParamGroup| stage.trains(g);
        let batches = epoch_batches(corpus, config.batch_size, &mut rng);
        let (mut total, mut rve_invocations) = (0.0, 0);
        for (b, batch) in batches.iter().enumerate() {
            let pairs: Vec<_> = batch
                .iter()
                .map(|&p| {
                    let (i, t) = corpus.pairs[p];
                    (&corpus.images[i], &corpus.texts[t])
                })
                .collect();
            let negatives = config.negatives.min(pairs.len() - 1);
            let opts = BatchOptions {
                negatives: Some(negatives),
                ..opts
            };
            let (report, grads) = batch_loss_and_grads(&model.params, &pairs, &opts, true)?;
            if !report.loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: b,
                    loss: report.loss,
                });
            }
            let mut grads = grads.expect("gradients requested");
            if let Some(max) = config.clip_norm {
                clip_global_norm(&mut grads, max, &trainable);
            }
            adam_step(&mut model.params, &grads, &mut adam, lr, &trainable)?;
            total += report.loss;
            rve_invocations += report.rve_invocations;
        }
        let entry = EpochLog {
            epoch,
            learning_rate: lr,
            mean_loss: if batches.is_empty() {
                0.0
            } else {
                total / batches.len() as f64
            },
            batches: batches.len(),
            rve_invocations,
            checksums: ParamGroup::ALL
                .iter()
                .map(|&g| (g, model.params.checksum(g)))
                .collect(),
            stage,
        };
        info!(
            "epoch {} lr {:.2e} rve {} loss {:.5} over {} batches",
            epoch + 1,
            lr,
            entry.stage.rve,
            entry.mean_loss,
            entry.batches
        );
        model.config.rve = entry.stage.rve;
        on_epoch(&entry, &model)?;
        log.push(entry);
    }
    model.config.rve = config.schedule.final_rve(config.epochs);
    Ok(TrainOutcome { model, log })
}

pub fn train(corpus: &Corpus, model: Model, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(corpus, model, config, &mut |_, _| Ok(()))
}
