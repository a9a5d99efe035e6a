//! Direct preference optimisation on the simulator's toy policy, and the
//! search → pairs → update loop around it.

mod iteration;
mod objective;

pub use iteration::{
    greedy_captions, greedy_hallucination_rate, run_iteration, run_loop, IterationOutput, IterationReport,
    LoopError,
};
pub use objective::{
    dpo_gradient, dpo_loss, log_ratio_term, neg_log_sigmoid, prepare_pairs, train, DpoConfig, DpoError,
    SkippedPair, TrainingPair,
};
