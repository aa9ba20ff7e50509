//! Embedding-incorporation mechanisms: control network, control layer,
//! control vector, control variable, constant scale and concatenation.
//!
//! Each mechanism maps an embedding `e` to a shift and/or scale applied to
//! the input features or to hidden activations. All of them are
//! differentiable end-to-end and plug into [`crate::nn::Mlp`] through a
//! [`Conditioner`].

mod conditioner;
mod ops;
mod spec;

pub(crate) use conditioner::CondCache;
pub use conditioner::Conditioner;
pub(crate) use ops::{affine, affine_input_grad, affine_param_grads};
pub use ops::{
    apply_concatenate, apply_constant_scale, apply_control_layer, apply_control_network, apply_control_variable,
    apply_control_vector, ControlLayerParams, ControlNetworkParams, DenseParams, DEFAULT_CONSTANT_SCALE,
};
pub use spec::{
    count_conditioning_params, ConditioningDims, ConditioningSpec, Embedding, EmbeddingLevel, Mechanism, SiteSelection,
    Transform,
};

#[cfg(test)]
mod tests;
