//! Synthetic burst generation and end-to-end training of the unrolled
//! network.

mod dataset;
mod loss;
mod noise;
mod optim;
pub mod scene;
mod synth;
mod tbptt;

pub use dataset::{sample_rng, Dataset, DatasetConfig, GroundTruthSource, NoiseSpec, SampleSource, TrainingSample, WarpSource};
pub use loss::l1_loss;
pub use noise::{add_noise, NoiseModel, MIN_PROX_SIGMA};
pub use optim::{optimizer_step, AmsGradConfig, AmsGradState};
pub use synth::{synthesize_burst, Augment, SyntheticBurst, SyntheticBurstSpec, Task};
pub use tbptt::{evaluate, optimizer_path, reference_psnr, tbptt_train, unrolled_gradient, EpochStats, TrainConfig, TrainOutcome, Trainer};
