//! Two-layer quasi-geostrophic channel model.

mod elliptic;
mod grid;
mod init;
mod model;
mod params;
mod state;

pub use elliptic::{x_symbol, y_symbol, EllipticSolver};
pub use grid::{Grid, N_LAYERS};
pub use init::JetInit;
pub use model::QgModel;
pub use params::{Hill, ModelSetup, Orography, QgParams, DEFAULT_BACKGROUND_WIND};
pub use state::{ForcingTerm, ModelState, Trajectory, VorticityField};
