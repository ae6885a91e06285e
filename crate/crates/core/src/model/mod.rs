//! The two-stream multiple-instance model over human/object pairs.

pub mod checkpoint;
pub mod features;
pub mod head;
pub mod loss;
pub mod matrix;
pub mod network;
pub mod params;
pub mod train;

pub use features::{pair_index, Appearance, ConcatEncoder, PairEncoder, PairFeatureMatrix};
pub use head::{col_softmax, image_scores, row_softmax};
pub use loss::{bce_loss, focal_loss, total_loss};
pub use matrix::Matrix;
pub use network::{backward, featurize, forward_hoi, forward_prep, image_loss, image_loss_grad, LossConfig, TrainingExample};
pub use params::{GradientSet, ModelParams, Shape};
pub use train::{optimizer_step, train, train_epoch, EpochStats, TrainConfig};

/// Hidden-layer pair features for one bag.
pub fn pair_features(
    record: &crate::dataset::ImageRecord,
    appearance: &Appearance,
    params: &ModelParams,
    encoder: &impl PairEncoder,
) -> PairFeatureMatrix {
    let x = encoder.encode(record, appearance);
    let (_, z) = featurize(params, &x);
    PairFeatureMatrix {
        z,
        pair_index: pair_index(record.humans.len(), record.objects.len()),
    }
}
