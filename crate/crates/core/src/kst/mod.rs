//! Constructions based on the Kolmogorov superposition representation with
//! Cantor-set inner functions.

mod builder;
mod cantor;
mod phi;

pub use builder::{
    assemble_kst, build_column_sum_block, build_inner_stack, build_kst_network, build_outer_interp_layer,
};
pub use cantor::{
    binary_digits, cantor_decode, cantor_encode, interpolation_points, phi_truncated, CantorCode,
    OmegaK, CODE_CAP,
};
pub use phi::build_phi_tilde_fnn;
