//! Learnable parameter blocks.
//!
//! Each block is generic over its slot type: `Tensor` for stored weights,
//! [`Var`](crate::tape::Var) once bound to a tape, `Tensor` again for
//! gradients and optimizer moments. Blocks flatten to stable dotted names
//! (`text.forward.u_reset`, ...) which key the checkpoint format.

use std::hash::{DefaultHasher, Hash, Hasher};

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

macro_rules! param_block {
    ($(#[$meta:meta])* pub struct $name:ident { $($(#[$fmeta:meta])* pub $field:ident,)* }) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name<T = Tensor> {
            $($(#[$fmeta])* pub $field: T,)*
        }

        impl<T> $name<T> {
            pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> $name<U> {
                $name { $($field: f(&self.$field),)* }
            }

            pub fn visit<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, &'a T)) {
                $(f(format!("{prefix}.{}", stringify!($field)), &self.$field);)*
            }

            pub fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut impl FnMut(String, &'a mut T)) {
                $(f(format!("{prefix}.{}", stringify!($field)), &mut self.$field);)*
            }
        }
    };
}

param_block! {
    /// Standard gated recurrent unit. With input row `x` and previous state
    /// `h`:
    ///
    /// ```text
    /// z  = σ(x·W_z + h·U_z + b_z)
    /// r  = σ(x·W_r + h·U_r + b_r)
    /// h̃ = tanh(x·W_c + (r ⊙ h)·U_c + b_c)
    /// h' = (1 − z) ⊙ h + z ⊙ h̃
    /// ```
    pub struct GruParams {
        pub w_update,
        pub u_update,
        pub b_update,
        pub w_reset,
        pub u_reset,
        pub b_reset,
        pub w_candidate,
        pub u_candidate,
        pub b_candidate,
    }
}

param_block! {
    /// Per-object projection: `o = (f·W_f + b_f) ⊙ σ(box·W_p + b_p)`.
    pub struct ImageEncoderParams {
        pub feature_w,
        pub feature_b,
        pub position_w,
        pub position_b,
    }
}

param_block! {
    /// The two `1 × h` self-attention vectors.
    pub struct MatchingParams {
        pub word_attention,
        pub object_attention,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiGruParams<T = Tensor> {
    pub forward: GruParams<T>,
    pub backward: GruParams<T>,
}

impl<T> BiGruParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> BiGruParams<U> {
        BiGruParams {
            forward: self.forward.map(f),
            backward: self.backward.map(f),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, &'a T)) {
        self.forward.visit(&format!("{prefix}.forward"), f);
        self.backward.visit(&format!("{prefix}.backward"), f);
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut impl FnMut(String, &'a mut T)) {
        self.forward.visit_mut(&format!("{prefix}.forward"), f);
        self.backward.visit_mut(&format!("{prefix}.backward"), f);
    }
}

/// Word embedding table (`V × q`) plus the bi-directional GRU over it.
#[derive(Clone, Debug, PartialEq)]
pub struct TextEncoderParams<T = Tensor> {
    pub embedding: T,
    pub gru: BiGruParams<T>,
}

impl<T> TextEncoderParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> TextEncoderParams<U> {
        TextEncoderParams {
            embedding: f(&self.embedding),
            gru: self.gru.map(f),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, &'a T)) {
        f(format!("{prefix}.embedding"), &self.embedding);
        self.gru.visit(prefix, f);
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut impl FnMut(String, &'a mut T)) {
        f(format!("{prefix}.embedding"), &mut self.embedding);
        self.gru.visit_mut(prefix, f);
    }
}

/// Recurrent visual embedding: a bi-directional GRU over reordered objects,
/// independent of the text encoder's GRU.
pub type RveParams<T = Tensor> = BiGruParams<T>;

/// Trainable groups used by the stage schedule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    /// Image encoder fully connected layers.
    ImageProjection,
    TextEncoder,
    Attention,
    Rve,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 4] = [
        ParamGroup::ImageProjection,
        ParamGroup::TextEncoder,
        ParamGroup::Attention,
        ParamGroup::Rve,
    ];

    pub fn of(name: &str) -> ParamGroup {
        match name.split('.').next() {
            Some("image") => ParamGroup::ImageProjection,
            Some("text") => ParamGroup::TextEncoder,
            Some("matching") => ParamGroup::Attention,
            Some("rve") => ParamGroup::Rve,
            _ => panic!("unknown parameter name {name}"),
        }
    }
}

/// Every learnable parameter of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T = Tensor> {
    pub image: ImageEncoderParams<T>,
    pub text: TextEncoderParams<T>,
    pub matching: MatchingParams<T>,
    pub rve: RveParams<T>,
}

impl<T> ModelParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> ModelParams<U> {
        ModelParams {
            image: self.image.map(f),
            text: self.text.map(f),
            matching: self.matching.map(f),
            rve: self.rve.map(f),
        }
    }

    pub fn visit<'a>(&'a self, f: &mut impl FnMut(String, &'a T)) {
        self.image.visit("image", f);
        self.text.visit("text", f);
        self.matching.visit("matching", f);
        self.rve.visit("rve", f);
    }

    pub fn visit_mut<'a>(&'a mut self, f: &mut impl FnMut(String, &'a mut T)) {
        self.image.visit_mut("image", f);
        self.text.visit_mut("text", f);
        self.matching.visit_mut("matching", f);
        self.rve.visit_mut("rve", f);
    }

    pub fn named(&self) -> Vec<(String, &T)> {
        let mut out = Vec::new();
        self.visit(&mut |n, t| out.push((n, t)));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut T)> {
        let mut out = Vec::new();
        self.visit_mut(&mut |n, t| out.push((n, t)));
        out
    }
}

/// Shapes that fully determine a parameter set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    pub vocab: usize,
    pub image_features: usize,
    pub word_dim: usize,
    pub hidden: usize,
}

fn xavier(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(rng, fan_in, fan_out, bound)
}

fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, bound: f64) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Tensor::new(rows, cols, data).expect("positive dims")
}

impl GruParams {
    pub fn init(rng: &mut impl Rng, input: usize, hidden: usize) -> Self {
        GruParams {
            w_update: xavier(rng, input, hidden),
            u_update: xavier(rng, hidden, hidden),
            b_update: Tensor::zeros(1, hidden),
            w_reset: xavier(rng, input, hidden),
            u_reset: xavier(rng, hidden, hidden),
            b_reset: Tensor::zeros(1, hidden),
            w_candidate: xavier(rng, input, hidden),
            u_candidate: xavier(rng, hidden, hidden),
            b_candidate: Tensor::zeros(1, hidden),
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        GruParams {
            w_update: Tensor::zeros(input, hidden),
            u_update: Tensor::zeros(hidden, hidden),
            b_update: Tensor::zeros(1, hidden),
            w_reset: Tensor::zeros(input, hidden),
            u_reset: Tensor::zeros(hidden, hidden),
            b_reset: Tensor::zeros(1, hidden),
            w_candidate: Tensor::zeros(input, hidden),
            u_candidate: Tensor::zeros(hidden, hidden),
            b_candidate: Tensor::zeros(1, hidden),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_update.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.u_update.rows()
    }
}

impl ModelParams {
    /// Xavier-uniform weights, zero biases, embeddings uniform in ±0.1.
    pub fn init(rng: &mut impl Rng, dims: Dims) -> Self {
        let Dims {
            vocab,
            image_features,
            word_dim,
            hidden,
        } = dims;
        ModelParams {
            image: ImageEncoderParams {
                feature_w: xavier(rng, image_features, hidden),
                feature_b: Tensor::zeros(1, hidden),
                position_w: xavier(rng, 4, hidden),
                position_b: Tensor::zeros(1, hidden),
            },
            text: TextEncoderParams {
                embedding: uniform(rng, vocab, word_dim, 0.1),
                gru: BiGruParams {
                    forward: GruParams::init(rng, word_dim, hidden),
                    backward: GruParams::init(rng, word_dim, hidden),
                },
            },
            matching: MatchingParams {
                word_attention: xavier(rng, 1, hidden),
                object_attention: xavier(rng, 1, hidden),
            },
            rve: BiGruParams {
                forward: GruParams::init(rng, hidden, hidden),
                backward: GruParams::init(rng, hidden, hidden),
            },
        }
    }

    pub fn dims(&self) -> Dims {
        Dims {
            vocab: self.text.embedding.rows(),
            image_features: self.image.feature_w.rows(),
            word_dim: self.text.embedding.cols(),
            hidden: self.image.feature_w.cols(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        self.map(&mut |t| Tensor::zeros(t.rows(), t.cols()))
    }

    /// Checks every block against the shapes implied by `self.dims()`.
    pub fn validate(&self) -> Result<()> {
        let reference = ModelParams::shapes(self.dims());
        let mut problems = Vec::new();
        let actual = self.named();
        for ((name, t), (_, want)) in actual.iter().zip(reference.named()) {
            if t.shape() != *want {
                problems.push(format!("{name}: {:?} != {:?}", t.shape(), want));
            }
            if !t.is_finite() {
                problems.push(format!("{name}: non-finite entries"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems.join("; ")))
        }
    }

    /// Expected shape of every block.
    pub fn shapes(dims: Dims) -> ModelParams<[usize; 2]> {
        let gru = |input: usize, hidden: usize| GruParams {
            w_update: [input, hidden],
            u_update: [hidden, hidden],
            b_update: [1, hidden],
            w_reset: [input, hidden],
            u_reset: [hidden, hidden],
            b_reset: [1, hidden],
            w_candidate: [input, hidden],
            u_candidate: [hidden, hidden],
            b_candidate: [1, hidden],
        };
        let h = dims.hidden;
        ModelParams {
            image: ImageEncoderParams {
                feature_w: [dims.image_features, h],
                feature_b: [1, h],
                position_w: [4, h],
                position_b: [1, h],
            },
            text: TextEncoderParams {
                embedding: [dims.vocab, dims.word_dim],
                gru: BiGruParams {
                    forward: gru(dims.word_dim, h),
                    backward: gru(dims.word_dim, h),
                },
            },
            matching: MatchingParams {
                word_attention: [1, h],
                object_attention: [1, h],
            },
            rve: BiGruParams {
                forward: gru(h, h),
                backward: gru(h, h),
            },
        }
    }

    /// Order-sensitive hash of the bit patterns of one group's tensors.
    pub fn checksum(&self, group: ParamGroup) -> u64 {
        let mut hasher = DefaultHasher::new();
        self.visit(&mut |name, t| {
            if ParamGroup::of(&name) == group {
                name.hash(&mut hasher);
                for v in t.data() {
                    v.to_bits().hash(&mut hasher);
                }
            }
        });
        hasher.finish()
    }

    pub fn parameter_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn dims() -> Dims {
        Dims {
            vocab: 7,
            image_features: 5,
            word_dim: 3,
            hidden: 4,
        }
    }

    #[test]
    fn names_are_unique_and_grouped() {
        let p = ModelParams::init(&mut ChaCha8Rng::seed_from_u64(1), dims());
        let names: Vec<String> = p.named().into_iter().map(|(n, _)| n).collect();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
        assert!(names.contains(&"text.forward.u_reset".to_string()));
        assert!(names.contains(&"rve.backward.b_candidate".to_string()));
        assert_eq!(
            ParamGroup::of("matching.word_attention"),
            ParamGroup::Attention
        );
    }

    #[test]
    fn init_is_seeded_and_valid() {
        let a = ModelParams::init(&mut ChaCha8Rng::seed_from_u64(3), dims());
        let b = ModelParams::init(&mut ChaCha8Rng::seed_from_u64(3), dims());
        assert_eq!(a, b);
        a.validate().unwrap();
        assert!(a.text.embedding.data().iter().all(|v| v.abs() <= 0.1));
        assert_eq!(a.dims(), dims());
    }

    #[test]
    fn checksum_tracks_group_changes_only() {
        let mut p = ModelParams::init(&mut ChaCha8Rng::seed_from_u64(5), dims());
        let before: Vec<u64> = ParamGroup::ALL.iter().map(|g| p.checksum(*g)).collect();
        p.rve.forward.u_reset.data_mut()[0] += 1.0;
        let after: Vec<u64> = ParamGroup::ALL.iter().map(|g| p.checksum(*g)).collect();
        assert_eq!(before[..3], after[..3]);
        assert_ne!(before[3], after[3]);
    }
}
