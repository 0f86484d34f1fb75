//! Seeded synthetic corpora with planted image–text correspondence.
//!
//! Each concept owns a random unit centroid in descriptor space and a token
//! `cNNN`. An image is a set of noisy concept objects with random boxes.
//!
//! * `Plain`: an image holds `m` concepts; its text lists their tokens in
//!   random order, mixed with filler tokens.
//! * `OrderSensitive`: images come in twins over the same `k` concepts. Each
//!   twin splits the concepts into two spatial clusters (left and right), and
//!   the twins use different splits. A text lists one cluster's tokens and
//!   then the other's, with no fillers. The twins' texts therefore contain
//!   the same tokens and differ only in order, and no single object tells
//!   the twins apart. Objects of one cluster share an appearance cue (a
//!   global side code added to their descriptors), so which objects belong
//!   together is visible, but only jointly. Each twin is the other's
//!   designated hard negative.
//!
//! All reals are rounded to `f32` at generation time so an in-memory corpus
//! equals the one read back from disk.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::dataset::{Manifest, ManifestImage, Split, Vocabulary};
use super::features::save_features;
use crate::corpus::Corpus;
use crate::encoders::{ImageInstance, TextInstance};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Concept tokens are `c000`…`c999`.
pub const MAX_CONCEPTS: usize = 1000;
pub const FILLER_TOKENS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynthMode {
    Plain,
    OrderSensitive,
}

impl std::str::FromStr for SynthMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(SynthMode::Plain),
            "order_sensitive" | "order-sensitive" => Ok(SynthMode::OrderSensitive),
            other => Err(Error::Config(format!("unknown synth mode {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthConfig {
    pub concepts: usize,
    pub train_pairs: usize,
    pub val_pairs: usize,
    pub test_pairs: usize,
    /// Objects per image.
    pub objects: usize,
    /// Longest text.
    pub max_words: usize,
    /// Concepts per image in plain mode.
    pub concepts_per_image: usize,
    pub noise: f64,
    pub feature_dim: usize,
    pub mode: SynthMode,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            concepts: 50,
            train_pairs: 1000,
            val_pairs: 0,
            test_pairs: 200,
            objects: 6,
            max_words: 8,
            concepts_per_image: 3,
            noise: 0.1,
            feature_dim: 32,
            mode: SynthMode::Plain,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.concepts < 2 {
            return bad(format!("need at least 2 concepts, got {}", self.concepts));
        }
        if self.concepts > MAX_CONCEPTS {
            return bad(format!(
                "{} concepts exceed the vocabulary budget of {MAX_CONCEPTS}",
                self.concepts
            ));
        }
        if self.feature_dim == 0 || self.objects == 0 {
            return bad("feature_dim and objects must be positive".into());
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!(
                "noise must be a finite non-negative number, got {}",
                self.noise
            ));
        }
        match self.mode {
            SynthMode::Plain => {
                let m = self.concepts_per_image;
                if m == 0 || m > self.objects || m > self.concepts || m > self.max_words {
                    return bad(format!(
                        "{m} concepts per image do not fit {} objects, {} concepts, {} words",
                        self.objects, self.concepts, self.max_words
                    ));
                }
            }
            SynthMode::OrderSensitive => {
                let k = self.objects;
                if k < 4 || !k.is_multiple_of(2) {
                    return bad(format!(
                        "order-sensitive mode needs an even object count ≥ 4, got {k}"
                    ));
                }
                if k > self.concepts || k > self.max_words {
                    return bad(format!("{k} objects need as many concepts and words"));
                }
                for n in [self.train_pairs, self.val_pairs, self.test_pairs] {
                    if n % 2 != 0 {
                        return bad(format!(
                            "order-sensitive splits must have an even pair count, got {n}"
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthImage {
    pub split: Split,
    pub instance: ImageInstance,
    /// Concept of each object, in object order.
    pub concepts: Vec<usize>,
    /// Spatial clusters as concept sets; empty in plain mode.
    pub groups: Vec<BTreeSet<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub vocab: Vocabulary,
    pub centroids: Vec<Vec<f64>>,
    pub images: Vec<SynthImage>,
    /// Text `i` corresponds to image `i`.
    pub texts: Vec<(String, Vec<String>)>,
    /// `(text, image)`.
    pub hard_negatives: Vec<(usize, usize)>,
}

fn concept_token(c: usize) -> String {
    format!("c{c:03}")
}

fn filler_token(f: usize) -> String {
    format!("w{f:02}")
}

fn round32(v: f64) -> f64 {
    v as f32 as f64
}

struct Generator<'a> {
    cfg: &'a SynthConfig,
    rng: ChaCha8Rng,
    centroids: Vec<Vec<f64>>,
    /// Unit vector added (left, negated) or (right) to every object
    /// descriptor in order-sensitive mode: objects of one spatial cluster
    /// share an appearance cue, as overlapping or touching regions do.
    side_code: Option<Vec<f64>>,
}

fn unit_vector(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.into_iter().map(|x| round32(x / norm)).collect()
}

impl Generator<'_> {
    fn object(&mut self, concept: usize) -> Vec<f64> {
        let noise = self.cfg.noise;
        let c = &self.centroids[concept];
        let mut out = Vec::with_capacity(c.len());
        for &v in c {
            let e: f64 = if noise > 0.0 {
                self.rng.sample(StandardNormal)
            } else {
                0.0
            };
            out.push(round32(v + noise * e));
        }
        out
    }

    fn random_box(&mut self) -> [f64; 4] {
        let r = &mut self.rng;
        [
            r.random_range(0.05..0.5),
            r.random_range(0.05..0.5),
            r.random_range(0.0..1.0),
            r.random_range(0.0..1.0),
        ]
    }

    fn image(
        &mut self,
        id: &str,
        objects: Vec<(usize, [f64; 4])>,
    ) -> Result<(ImageInstance, Vec<usize>)> {
        let d = self.cfg.feature_dim;
        let mut desc = Vec::with_capacity(objects.len() * d);
        let mut boxes = Vec::with_capacity(objects.len() * 4);
        let mut concepts = Vec::with_capacity(objects.len());
        for (c, b) in objects {
            let mut o = self.object(c);
            if let Some(code) = &self.side_code {
                let sign = if b[2] < 0.5 { -1.0 } else { 1.0 };
                for (v, &u) in o.iter_mut().zip(code) {
                    *v = round32(*v + sign * u);
                }
            }
            desc.extend(o);
            boxes.extend(b.iter().map(|&v| round32(v)));
            concepts.push(c);
        }
        let k = concepts.len();
        Ok((
            ImageInstance::new(id, Tensor::new(k, d, desc)?, Tensor::new(k, 4, boxes)?)?,
            concepts,
        ))
    }

    fn plain(&mut self, id: &str) -> Result<(SynthImage, Vec<String>)> {
        let (k, m) = (self.cfg.objects, self.cfg.concepts_per_image);
        let chosen: Vec<usize> = index::sample(&mut self.rng, self.cfg.concepts, m).into_vec();
        let mut assignment = chosen.clone();
        for _ in m..k {
            assignment.push(chosen[self.rng.random_range(0..m)]);
        }
        assignment.shuffle(&mut self.rng);
        let objects = assignment
            .into_iter()
            .map(|c| (c, self.random_box()))
            .collect();
        let (instance, concepts) = self.image(id, objects)?;

        let mut words: Vec<String> = chosen.iter().map(|&c| concept_token(c)).collect();
        words.shuffle(&mut self.rng);
        let fillers = self.rng.random_range(0..=self.cfg.max_words - m);
        for _ in 0..fillers {
            let at = self.rng.random_range(0..=words.len());
            let f = self.rng.random_range(0..FILLER_TOKENS);
            words.insert(at, filler_token(f));
        }
        let image = SynthImage {
            split: Split::Train,
            instance,
            concepts,
            groups: Vec::new(),
        };
        Ok((image, words))
    }

    /// Random split of `concepts` into two equal halves.
    fn halves(&mut self, concepts: &[usize]) -> [BTreeSet<usize>; 2] {
        let mut c = concepts.to_vec();
        c.shuffle(&mut self.rng);
        let (a, b) = c.split_at(c.len() / 2);
        [a.iter().copied().collect(), b.iter().copied().collect()]
    }

    fn clustered(
        &mut self,
        id: &str,
        groups: &[BTreeSet<usize>; 2],
    ) -> Result<(SynthImage, Vec<String>)> {
        let left_first = self.rng.random_bool(0.5);
        let mut objects = Vec::new();
        for (g, members) in groups.iter().enumerate() {
            let center = if (g == 0) == left_first { 0.25 } else { 0.75 };
            for &c in members {
                let r = &mut self.rng;
                let b = [
                    r.random_range(0.1..0.3),
                    r.random_range(0.1..0.3),
                    center + r.random_range(-0.1..0.1),
                    r.random_range(0.2..0.8),
                ];
                objects.push((c, b));
            }
        }
        objects.shuffle(&mut self.rng);
        let (instance, concepts) = self.image(id, objects)?;

        let mut order = [0, 1];
        order.shuffle(&mut self.rng);
        let mut words = Vec::new();
        for g in order {
            let mut members: Vec<usize> = groups[g].iter().copied().collect();
            members.shuffle(&mut self.rng);
            words.extend(members.into_iter().map(concept_token));
        }
        let image = SynthImage {
            split: Split::Train,
            instance,
            concepts,
            groups: groups.to_vec(),
        };
        Ok((image, words))
    }
}

fn same_grouping(a: &[BTreeSet<usize>; 2], b: &[BTreeSet<usize>; 2]) -> bool {
    (a[0] == b[0] && a[1] == b[1]) || (a[0] == b[1] && a[1] == b[0])
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let centroids = (0..cfg.concepts)
        .map(|_| unit_vector(&mut rng, cfg.feature_dim))
        .collect();
    let side_code =
        (cfg.mode == SynthMode::OrderSensitive).then(|| unit_vector(&mut rng, cfg.feature_dim));
    let mut g = Generator {
        cfg,
        rng,
        centroids,
        side_code,
    };

    let mut tokens: Vec<String> = (0..cfg.concepts).map(concept_token).collect();
    tokens.extend((0..FILLER_TOKENS).map(filler_token));
    let vocab = Vocabulary::new(tokens)?;

    let mut images = Vec::new();
    let mut texts = Vec::new();
    let mut hard_negatives = Vec::new();
    for (split, count) in [
        (Split::Train, cfg.train_pairs),
        (Split::Val, cfg.val_pairs),
        (Split::Test, cfg.test_pairs),
    ] {
        let mut made = 0;
        while made < count {
            match cfg.mode {
                SynthMode::Plain => {
                    let n = images.len();
                    let (mut img, words) = g.plain(&format!("img{n:05}"))?;
                    img.split = split;
                    images.push(img);
                    texts.push((format!("txt{n:05}"), words));
                    made += 1;
                }
                SynthMode::OrderSensitive => {
                    let concepts = index::sample(&mut g.rng, cfg.concepts, cfg.objects).into_vec();
                    let first = g.halves(&concepts);
                    let second = loop {
                        let h = g.halves(&concepts);
                        if !same_grouping(&first, &h) {
                            break h;
                        }
                    };
                    let n = images.len();
                    for (offset, grouping) in [first, second].iter().enumerate() {
                        let idx = n + offset;
                        let (mut img, words) = g.clustered(&format!("img{idx:05}"), grouping)?;
                        img.split = split;
                        images.push(img);
                        texts.push((format!("txt{idx:05}"), words));
                    }
                    hard_negatives.push((n, n + 1));
                    hard_negatives.push((n + 1, n));
                    made += 2;
                }
            }
        }
    }
    let ds = SynthDataset {
        config: *cfg,
        vocab,
        centroids: g.centroids,
        images,
        texts,
        hard_negatives,
    };
    if cfg.mode == SynthMode::OrderSensitive {
        ds.check_order_sensitive()?;
    }
    Ok(ds)
}

impl SynthDataset {
    /// Confirms every designated hard negative shares its positive's token
    /// multiset while grouping the objects differently.
    pub fn check_order_sensitive(&self) -> Result<()> {
        for &(t, i) in &self.hard_negatives {
            let mut own: Vec<&String> = self.texts[t].1.iter().collect();
            let mut other: Vec<&String> = self.texts[i].1.iter().collect();
            own.sort();
            other.sort();
            if own != other {
                return Err(Error::Validation(format!(
                    "text {t} and twin {i} use different tokens"
                )));
            }
            let (a, b) = (&self.images[t].groups, &self.images[i].groups);
            let (a, b): (&[BTreeSet<usize>; 2], &[BTreeSet<usize>; 2]) =
                match (a.as_slice().try_into(), b.as_slice().try_into()) {
                    (Ok(a), Ok(b)) => (a, b),
                    _ => {
                        return Err(Error::Validation(format!(
                            "image {i} lacks a two-cluster grouping"
                        )))
                    }
                };
            if same_grouping(a, b) {
                return Err(Error::Validation(format!(
                    "images {t} and {i} share a grouping"
                )));
            }
        }
        Ok(())
    }

    pub fn corpus(&self, split: Split) -> Result<Corpus> {
        let mut corpus = Corpus::default();
        let mut remap = vec![None; self.images.len()];
        for (n, img) in self
            .images
            .iter()
            .enumerate()
            .filter(|(_, i)| i.split == split)
        {
            remap[n] = Some(corpus.images.len());
            corpus.pairs.push((corpus.images.len(), corpus.texts.len()));
            corpus.images.push(img.instance.clone());
            let (id, words) = &self.texts[n];
            corpus
                .texts
                .push(TextInstance::new(id.clone(), self.vocab.encode(words)?)?);
        }
        for &(t, i) in &self.hard_negatives {
            if let (Some(t), Some(i)) = (remap[t], remap[i]) {
                corpus.hard_negatives.push((t, i));
            }
        }
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            vocab: PathBuf::from("vocab.txt"),
            texts: PathBuf::from("texts.txt"),
            images: self
                .images
                .iter()
                .zip(&self.texts)
                .map(|(img, (tid, _))| ManifestImage {
                    id: img.instance.id().to_string(),
                    split: img.split,
                    features: PathBuf::from(format!("features/{}.feat", img.instance.id())),
                    texts: vec![tid.clone()],
                })
                .collect(),
            hard_negatives: self
                .hard_negatives
                .iter()
                .map(|&(t, i)| {
                    (
                        self.texts[t].0.clone(),
                        self.images[i].instance.id().to_string(),
                    )
                })
                .collect(),
        }
    }

    /// Writes `manifest.txt`, `vocab.txt`, `texts.txt` and one feature file
    /// per image under `dir`; returns the manifest path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let features = dir.join("features");
        std::fs::create_dir_all(&features).map_err(|e| Error::io(&features, e))?;
        let write = |name: &str, body: String| {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))
        };
        write("vocab.txt", self.vocab.to_text())?;
        let mut texts = String::new();
        for (id, words) in &self.texts {
            let _ = writeln!(texts, "{id}\t{}", words.join(" "));
        }
        write("texts.txt", texts)?;
        for img in &self.images {
            save_features(
                &img.instance,
                &features.join(format!("{}.feat", img.instance.id())),
            )?;
        }
        write("manifest.txt", self.manifest().to_text())?;
        Ok(dir.join("manifest.txt"))
    }
}
