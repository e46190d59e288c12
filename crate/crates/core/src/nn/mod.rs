//! Neural core: CNN embedder, triplet mining, classifier, optimiser,
//! training loops, checkpoints and gradient checks.

pub mod checkpoint;
pub mod classifier;
pub mod embedder;
pub mod gradcheck;
pub mod layers;
pub mod optim;
pub mod tensor;
pub mod train;
pub mod triplet;

pub use checkpoint::{load_classifier, load_embedder, save_classifier, save_embedder, sha256_hex};
pub use classifier::{bce_grad, bce_loss, classify, Classifier, ClassifierConfig};
pub use embedder::{embed, ConvBlock, Embedder, EmbedderConfig};
pub use gradcheck::grad_check;
pub use optim::Adam;
pub use tensor::{Param, Parameterized, Scalar};
pub use train::{
    evaluate_classifier, train_classifier, train_embedder, EmbedSample, LabeledEmbedding, TrainHistory,
};
pub use triplet::{mine_semi_hard, triplet_loss, Triplet};
