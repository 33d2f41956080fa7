//! The parameter-conditioned latent generator and its propagation schemes.

mod operator;
mod rollout;
mod step;

pub use operator::{
    inverse_softplus, BoundOperator, KoopmanOperator, OperatorInit, D_NAME, LORA_A_NAME,
    LORA_B_NAME, S_NAME,
};
pub use rollout::{
    rollout, rollout_exp, rollout_exp_matrix, rollout_graph, rollout_matrix, LatentState,
    LatentTrajectory,
};
pub use step::{
    euler_step_graph, rk4_step_graph, step, step_euler, step_exp, step_graph,
    step_implicit_midpoint, step_rk4, LatentField, Scheme,
};
