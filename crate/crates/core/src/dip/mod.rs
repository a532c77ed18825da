//! Learned residual refiner for the alternating-projections iteration.

pub mod adam;
pub mod conv;
pub mod model_io;
pub mod net;
pub mod train;

pub use adam::{AdamConfig, AdamState};
pub use conv::{complex_conv4d, real_conv4d, ComplexKernel4D, FeatureMap, RealKernel4D, Scalar};
pub use model_io::{load_model, save_model};
pub use net::{
    dip_backward, dip_backward_in, dip_forward, dip_forward_in, dip_iterate, dip_loss,
    Architecture, DipInputs, DipParams, GatedLayer, Precision,
};
pub use train::{
    make_training_sample, train, train_from, EpochLog, TrainConfig, TrainOutcome, TrainingSample,
};
