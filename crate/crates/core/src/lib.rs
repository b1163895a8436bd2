// build checkpoint — full module map restored as modules land
pub mod assignment;
pub mod baselines;
pub mod mlp;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod tape;
pub mod tensor;
pub mod weight_space;

pub use assignment::{solve_lap_max, DoublyStochasticStack};
pub use baselines::AlignResult;
pub use mlp::TaskSpec;
pub use scalar::Scalar;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
pub use weight_space::{Activation, ActivationFeatures, PermutationSequence, WeightSpaceVector};
