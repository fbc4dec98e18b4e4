//! Grid-based constructions: piecewise-constant approximation of Hölder and
//! Sobolev maps through a discretize, encode, average and read-out pipeline.

mod cells;
mod holder;
mod memorize;
mod step;
mod sup;

pub use cells::{
    cell_of, grid_point, grid_points, grid_points_capped, trifling_contains, trifling_measure,
    trifling_measure_bound, Grid, GRID_CAP,
};
pub(crate) use cells::{checked_pow, scalar_in_trifling};
pub use holder::{
    assemble_holder_lp, assemble_sobolev_lp, build_holder_network, cell_average, contextual_tokens,
    default_lp_delta,
};
pub use memorize::{build_average_attention, build_readout_layer, build_token_code_layer};
pub use step::{build_discretization_layer, build_step_fnn, positional_encoding};
pub use sup::{assemble_sup_norm, build_sup_network, default_sup_delta, mid_selector_layers, COPY_CAP};
