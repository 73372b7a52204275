//! Deterministic Sort-of-CLEVR: scenes, rendering, questions with a geometric
//! oracle, and the binary dataset file.

mod file;
mod question;
mod scene;

pub use file::{read_dataset, write_dataset, load_dataset, save_dataset, MAGIC, VERSION};
pub use question::{
    answer_oracle, generate_questions, Answer, Family, Question, ANSWER_VOCABULARY, QUESTION_DIM, SUBTYPES,
};
pub use scene::{
    bytes_to_tensor, footprint, overlaps, render, render_bytes, sample_scene, Scene, SceneConfig, SceneObject, Shape, BACKGROUND_RGB,
    COLOR_NAMES, COLOR_RGB,
};

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{contract_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub images: usize,
    pub seed: u64,
    pub questions_per_family: usize,
    pub scene: SceneConfig,
}

impl DatasetConfig {
    pub fn new(images: usize, seed: u64) -> Self {
        DatasetConfig {
            images,
            seed,
            questions_per_family: 10,
            scene: SceneConfig::default(),
        }
    }

    pub fn questions_per_image(&self) -> usize {
        2 * self.questions_per_family
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];
}

/// One image with its questions.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub scene: Scene,
    /// Planar RGB bytes, `[3, canvas, canvas]`.
    pub pixels: Vec<u8>,
    pub qa: Vec<(Question, Answer)>,
}

/// Image identifiers of each split.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    /// Contiguous 80/10/10 split: validation and test get `n / 10` images each,
    /// training the rest.
    pub fn by_image(n: usize) -> Splits {
        let held = n / 10;
        let train = n - 2 * held;
        Splits {
            train: (0..train).collect(),
            val: (train..train + held).collect(),
            test: (train + held..n).collect(),
        }
    }

    pub fn get(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub images: Vec<ImageRecord>,
    pub splits: Splits,
}

/// Generator for image `index`: the run seed selects the key and the index
/// selects the stream, so images can be produced independently.
pub fn image_rng(seed: u64, index: u64) -> Rng {
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Scene, pixels and questions of image `index`; a pure function of
/// `(config, index)`.
pub fn generate_image(config: &DatasetConfig, index: u64) -> Result<ImageRecord> {
    let mut rng = image_rng(config.seed, index);
    let scene = sample_scene(&config.scene, &mut rng, config.seed, index)?;
    let qa = generate_questions(&scene, config.questions_per_family, config.scene.canvas, &mut rng)?;
    let pixels = render_bytes(&scene, &config.scene);
    Ok(ImageRecord { scene, pixels, qa })
}

pub fn build_dataset(config: &DatasetConfig) -> Result<Dataset> {
    if config.images == 0 {
        return Err(contract_err!("a dataset needs at least one image"));
    }
    let images = (0..config.images as u64)
        .map(|i| generate_image(config, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        config: config.clone(),
        images,
        splits: Splits::by_image(config.images),
    })
}

/// Tensors for a group of images and all their questions.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    /// `[b, 3, canvas, canvas]`.
    pub images: Tensor<T>,
    /// `[q, 11]`.
    pub questions: Tensor<T>,
    pub answers: Vec<usize>,
    /// Row of `images` each question refers to.
    pub image_of: Vec<usize>,
    pub relational: Vec<bool>,
}

impl Dataset {
    pub fn canvas(&self) -> usize {
        self.config.scene.canvas
    }

    pub fn qa_count(&self) -> usize {
        self.images.iter().map(|r| r.qa.len()).sum()
    }

    pub fn batch<T: Scalar>(&self, ids: &[usize]) -> Batch<T> {
        let c = self.canvas();
        let plane = 3 * c * c;
        let scale = T::of(1.0 / 255.0);
        let mut pixels = Vec::with_capacity(ids.len() * plane);
        let (mut questions, mut answers, mut image_of, mut relational) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (row, &id) in ids.iter().enumerate() {
            let rec = &self.images[id];
            pixels.extend(rec.pixels.iter().map(|&b| T::of(b as f64) * scale));
            for (q, a) in &rec.qa {
                questions.extend(q.encode().iter().map(|&b| T::of(b as f64)));
                answers.push(a.index());
                image_of.push(row);
                relational.push(q.family == Family::Relational);
            }
        }
        let nq = answers.len();
        Batch {
            images: Tensor::new(&[ids.len(), 3, c, c], pixels).expect("planar images"),
            questions: Tensor::new(&[nq, QUESTION_DIM], questions).expect("encoded questions"),
            answers,
            image_of,
            relational,
        }
    }
}
