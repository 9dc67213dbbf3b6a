//! Generator and discriminator with an explicit feature body / linear head
//! split, adversarial losses and the alternating training steps.

mod loss;
mod nets;
mod train;

pub use loss::{
    gradient_penalty, hinge_d_loss, interpolate, penalty_with_grads, wgan_d_loss, AdversarialLoss,
    LossKind, PenaltyGrad,
};
pub use nets::{
    Architecture, DiscriminatorNet, DiscriminatorPass, GeneratorNet, GeneratorPass, LinearHead,
    LEAKY_SLOPE,
};
pub use train::{
    generator_mask, generator_objective, DStepReport, GStepReport, GanState, GeneratorObjective,
    TrainConfig, Trainer,
};
