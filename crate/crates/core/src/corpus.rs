//! In-memory image/text collections with their correspondences.

use std::collections::HashSet;

use crate::encoders::{ImageInstance, TextInstance};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus {
    pub images: Vec<ImageInstance>,
    pub texts: Vec<TextInstance>,
    /// `(image, text)` index of every corresponding pair.
    pub pairs: Vec<(usize, usize)>,
    /// `(text, image)` designated hard negatives.
    pub hard_negatives: Vec<(usize, usize)>,
}

impl Corpus {
    pub fn validate(&self) -> Result<()> {
        let mut seen_texts = HashSet::new();
        for &(i, t) in &self.pairs {
            if i >= self.images.len() || t >= self.texts.len() {
                return Err(Error::Validation(format!("pair ({i}, {t}) out of range")));
            }
            if !seen_texts.insert(t) {
                return Err(Error::Validation(format!(
                    "text {} corresponds to more than one image",
                    self.texts[t].id()
                )));
            }
        }
        for (i, img) in self.images.iter().enumerate() {
            if !self.pairs.iter().any(|&(pi, _)| pi == i) {
                return Err(Error::Validation(format!(
                    "image {} has no corresponding text",
                    img.id()
                )));
            }
        }
        for &(t, i) in &self.hard_negatives {
            if t >= self.texts.len() || i >= self.images.len() {
                return Err(Error::Validation(format!(
                    "hard negative ({t}, {i}) out of range"
                )));
            }
            if self.pairs.contains(&(i, t)) {
                return Err(Error::Validation(format!(
                    "hard negative {} → {} is a corresponding pair",
                    self.texts[t].id(),
                    self.images[i].id()
                )));
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Image each text corresponds to.
    pub fn image_of_text(&self) -> Vec<usize> {
        let mut out = vec![usize::MAX; self.texts.len()];
        for &(i, t) in &self.pairs {
            out[t] = i;
        }
        out
    }

    /// Texts of each image, in pair order.
    pub fn texts_of_image(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.images.len()];
        for &(i, t) in &self.pairs {
            out[i].push(t);
        }
        out
    }

    /// Sub-corpus over a subset of images, keeping their texts and any hard
    /// negatives whose both ends survive.
    pub fn restrict_to_images(&self, images: &[usize]) -> Corpus {
        let mut image_map = vec![None; self.images.len()];
        for (new, &old) in images.iter().enumerate() {
            image_map[old] = Some(new);
        }
        let mut text_map = vec![None; self.texts.len()];
        let mut out = Corpus {
            images: images.iter().map(|&i| self.images[i].clone()).collect(),
            ..Corpus::default()
        };
        for &(i, t) in &self.pairs {
            if let Some(ni) = image_map[i] {
                text_map[t] = Some(out.texts.len());
                out.pairs.push((ni, out.texts.len()));
                out.texts.push(self.texts[t].clone());
            }
        }
        for &(t, i) in &self.hard_negatives {
            if let (Some(nt), Some(ni)) = (text_map[t], image_map[i]) {
                out.hard_negatives.push((nt, ni));
            }
        }
        out
    }
}
