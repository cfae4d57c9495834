//! Browser bindings: run the reference channel, watch the perturbed model
//! drift away from it, and size the correction networks.

use wasm_bindgen::prelude::*;

use qgml_core::evaluation::state_rmse;
use qgml_core::neural::{param_count, Activation, NetworkSpec};
use qgml_core::qg::{Grid, JetInit, ModelState, QgModel, N_LAYERS};
use qgml_core::units::{days, hours, to_days};
use qgml_core::Result;

fn js(e: qgml_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// The reference model and its current state.
#[wasm_bindgen]
pub struct Channel {
    reference: QgModel,
    perturbed: QgModel,
    state: ModelState,
}

impl Channel {
    pub fn try_new(spinup_days: f64) -> Result<Self> {
        let reference = QgModel::reference();
        let init = JetInit::default().state(reference.grid());
        let state = reference.resolvent(&init, days(spinup_days), None)?;
        Ok(Self {
            perturbed: QgModel::perturbed(),
            reference,
            state,
        })
    }

    pub fn try_advance(&mut self, n_hours: f64) -> Result<()> {
        self.state = self.reference.resolvent(&self.state, hours(n_hours), None)?;
        Ok(())
    }

    /// RMSE between reference and perturbed forecasts, once per day.
    pub fn try_model_error(&self, n_days: usize) -> Result<Vec<f64>> {
        let (mut a, mut b) = (self.state.clone(), self.state.clone());
        let mut out = Vec::with_capacity(n_days);
        for _ in 0..n_days {
            a = self.reference.resolvent(&a, days(1.0), None)?;
            b = self.perturbed.resolvent(&b, days(1.0), None)?;
            out.push(state_rmse(&a, &b)?);
        }
        Ok(out)
    }

    pub fn layer(&self, layer: usize) -> Vec<f64> {
        let g = self.reference.grid();
        let n = g.nx * g.ny;
        let l = layer.min(N_LAYERS - 1);
        self.state.psi[l * n..(l + 1) * n].to_vec()
    }
}

#[wasm_bindgen]
impl Channel {
    #[wasm_bindgen(constructor)]
    pub fn new(spinup_days: f64) -> std::result::Result<Channel, JsError> {
        Self::try_new(spinup_days).map_err(js)
    }

    pub fn advance(&mut self, n_hours: f64) -> std::result::Result<(), JsError> {
        self.try_advance(n_hours).map_err(js)
    }

    #[wasm_bindgen(js_name = modelError)]
    pub fn model_error(&self, n_days: usize) -> std::result::Result<Vec<f64>, JsError> {
        self.try_model_error(n_days).map_err(js)
    }

    /// Stream function of one layer, row-major `ny × nx`.
    pub fn psi(&self, layer: usize) -> Vec<f64> {
        self.layer(layer)
    }

    #[wasm_bindgen(getter)]
    pub fn nx(&self) -> usize {
        self.reference.grid().nx
    }

    #[wasm_bindgen(getter)]
    pub fn ny(&self) -> usize {
        self.reference.grid().ny
    }

    #[wasm_bindgen(getter, js_name = timeDays)]
    pub fn time_days(&self) -> f64 {
        to_days(self.state.time)
    }
}

pub fn try_network_params(family: &str, depth: usize, width: usize, relu: bool) -> Result<usize> {
    let g = Grid::default();
    let field = (N_LAYERS, g.ny, g.nx);
    let act = if relu { Activation::Relu } else { Activation::Linear };
    let spec = match family {
        "D" => NetworkSpec::dense(field, depth, width, act),
        "CD" => NetworkSpec::conv_dense(field, depth, width, act),
        _ => {
            return Err(qgml_core::Error::InvalidParameter {
                name: "family".into(),
                reason: format!("{family:?} is not D or CD"),
            })
        }
    };
    param_count(&spec)
}

/// Trainable parameters of a correction network on the default grid.
#[wasm_bindgen(js_name = networkParams)]
pub fn network_params(family: &str, depth: usize, width: usize, relu: bool) -> std::result::Result<usize, JsError> {
    try_network_params(family, depth, width, relu).map_err(js)
}
