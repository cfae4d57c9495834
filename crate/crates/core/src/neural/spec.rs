use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerSpec {
    Dense {
        width: usize,
        activation: Activation,
    },
    /// Same-size convolution, periodic in x and zero-padded in y.
    Conv2d {
        filters: usize,
        kernel: usize,
        activation: Activation,
    },
    Flatten,
    Reshape {
        channels: usize,
        ny: usize,
        nx: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    D,
    CD,
}

/// Field shape `(channels, ny, nx)`.
pub type FieldShape = (usize, usize, usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Field(FieldShape),
    Flat(usize),
}

impl Shape {
    pub fn size(&self) -> usize {
        match *self {
            Shape::Field((c, ny, nx)) => c * ny * nx,
            Shape::Flat(n) => n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub family: Family,
    pub input: FieldShape,
    pub output: FieldShape,
    pub layers: Vec<LayerSpec>,
}

pub const DEFAULT_KERNEL: usize = 3;

impl NetworkSpec {
    /// Dense-only template: `depth` hidden dense layers of `width` nodes,
    /// then a linear dense layer onto the output field.
    pub fn dense(field: FieldShape, depth: usize, width: usize, activation: Activation) -> Self {
        let mut layers = vec![LayerSpec::Flatten];
        layers.extend((0..depth).map(|_| LayerSpec::Dense { width, activation }));
        push_head(&mut layers, field);
        Self {
            family: Family::D,
            input: field,
            output: field,
            layers,
        }
    }

    /// `depth` convolutions of `width` filters, then `depth` dense layers of
    /// `width` nodes, then the linear output layer.
    pub fn conv_dense(field: FieldShape, depth: usize, width: usize, activation: Activation) -> Self {
        let mut layers: Vec<LayerSpec> = (0..depth)
            .map(|_| LayerSpec::Conv2d {
                filters: width,
                kernel: DEFAULT_KERNEL,
                activation,
            })
            .collect();
        layers.push(LayerSpec::Flatten);
        layers.extend((0..depth).map(|_| LayerSpec::Dense { width, activation }));
        push_head(&mut layers, field);
        Self {
            family: Family::CD,
            input: field,
            output: field,
            layers,
        }
    }

    /// Short label such as `D-1x4-linear`.
    pub fn label(&self) -> String {
        let depth = self
            .layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::Dense { .. }))
            .count()
            .saturating_sub(1);
        let (width, act) = self
            .layers
            .iter()
            .find_map(|l| match *l {
                LayerSpec::Dense { width, activation } | LayerSpec::Conv2d { filters: width, activation, .. } => {
                    Some((width, activation))
                }
                _ => None,
            })
            .unwrap_or((0, Activation::Linear));
        let act = match act {
            Activation::Linear => "linear",
            Activation::Relu => "relu",
        };
        format!("{:?}-{depth}x{width}-{act}", self.family)
    }

    /// Output shape of every layer, checking that the chain is consistent.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        let mut shape = Shape::Field(self.input);
        let mut out = Vec::with_capacity(self.layers.len());
        let mut seen_dense = false;
        let n = self.layers.len();
        for (k, layer) in self.layers.iter().enumerate() {
            shape = match (*layer, shape) {
                (LayerSpec::Dense { width, activation }, Shape::Flat(_)) => {
                    check_width(width)?;
                    check_final(k, n, activation, &self.layers)?;
                    seen_dense = true;
                    Shape::Flat(width)
                }
                (
                    LayerSpec::Conv2d {
                        filters,
                        kernel,
                        activation,
                    },
                    Shape::Field((_, ny, nx)),
                ) => {
                    check_width(filters)?;
                    if kernel % 2 == 0 || kernel == 0 {
                        return Err(invalid("kernel", "must be odd"));
                    }
                    if self.family == Family::D {
                        return Err(invalid("layers", "D networks hold no convolutions"));
                    }
                    if seen_dense {
                        return Err(invalid("layers", "convolutions must precede dense layers"));
                    }
                    check_final(k, n, activation, &self.layers)?;
                    Shape::Field((filters, ny, nx))
                }
                (LayerSpec::Flatten, s @ Shape::Field(_)) => Shape::Flat(s.size()),
                (LayerSpec::Reshape { channels, ny, nx }, Shape::Flat(m)) if m == channels * ny * nx => {
                    Shape::Field((channels, ny, nx))
                }
                (l, s) => {
                    return Err(invalid(
                        "layers",
                        format!("layer {k} ({l:?}) cannot follow shape {s:?}"),
                    ))
                }
            };
            out.push(shape);
        }
        if shape != Shape::Field(self.output) {
            return Err(invalid(
                "layers",
                format!("final shape {shape:?} differs from {:?}", self.output),
            ));
        }
        Ok(out)
    }
}

fn push_head(layers: &mut Vec<LayerSpec>, (c, ny, nx): FieldShape) {
    layers.push(LayerSpec::Dense {
        width: c * ny * nx,
        activation: Activation::Linear,
    });
    layers.push(LayerSpec::Reshape { channels: c, ny, nx });
}

fn check_width(w: usize) -> Result<()> {
    if w == 0 {
        Err(invalid("width", "must be positive"))
    } else {
        Ok(())
    }
}

/// The last parametrised layer must be linear.
fn check_final(k: usize, n: usize, act: Activation, layers: &[LayerSpec]) -> Result<()> {
    let last = layers[k + 1..n]
        .iter()
        .all(|l| matches!(l, LayerSpec::Flatten | LayerSpec::Reshape { .. }));
    if last && act != Activation::Linear {
        return Err(invalid("activation", "the final layer must be linear"));
    }
    Ok(())
}

/// Number of trainable parameters.
pub fn param_count(spec: &NetworkSpec) -> Result<usize> {
    let shapes = spec.shapes()?;
    let mut prev = Shape::Field(spec.input);
    let mut total = 0;
    for (layer, shape) in spec.layers.iter().zip(&shapes) {
        total += layer_params(layer, prev);
        prev = *shape;
    }
    Ok(total)
}

pub(crate) fn layer_params(layer: &LayerSpec, input: Shape) -> usize {
    match (*layer, input) {
        (LayerSpec::Dense { width, .. }, s) => s.size() * width + width,
        (LayerSpec::Conv2d { filters, kernel, .. }, Shape::Field((c, _, _))) => (kernel * kernel * c + 1) * filters,
        _ => 0,
    }
}

/// The 24 architectures: both families × {1, 4} layers × {4, 8, 16} nodes
/// × {linear, relu}.
pub fn sweep_specs(field: FieldShape) -> Vec<NetworkSpec> {
    let mut out = Vec::with_capacity(24);
    for family in [Family::D, Family::CD] {
        for depth in [1, 4] {
            for width in [4, 8, 16] {
                for act in [Activation::Linear, Activation::Relu] {
                    out.push(match family {
                        Family::D => NetworkSpec::dense(field, depth, width, act),
                        Family::CD => NetworkSpec::conv_dense(field, depth, width, act),
                    });
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIELD: FieldShape = (2, 20, 40);

    #[test]
    fn counts() {
        let d4 = NetworkSpec::dense(FIELD, 1, 4, Activation::Linear);
        assert_eq!(param_count(&d4).unwrap(), 14404);
        let d8 = NetworkSpec::dense(FIELD, 1, 8, Activation::Linear);
        assert_eq!(param_count(&d8).unwrap(), 27208);
        let conv = LayerSpec::Conv2d {
            filters: 4,
            kernel: 3,
            activation: Activation::Relu,
        };
        assert_eq!(layer_params(&conv, Shape::Field(FIELD)), 76);
        assert_eq!(d4.label(), "D-1x4-linear");
    }

    #[test]
    fn sweep_has_24_valid_specs() {
        let specs = sweep_specs(FIELD);
        assert_eq!(specs.len(), 24);
        for s in &specs {
            s.shapes().unwrap();
        }
        let labels: std::collections::HashSet<String> = specs.iter().map(|s| s.label()).collect();
        assert_eq!(labels.len(), 24);
    }

    #[test]
    fn rejects_bad_chains() {
        let mut s = NetworkSpec::dense(FIELD, 1, 4, Activation::Linear);
        s.layers.remove(0);
        assert!(param_count(&s).is_err());

        let mut s = NetworkSpec::conv_dense(FIELD, 1, 4, Activation::Relu);
        s.layers.swap(0, 2);
        assert!(s.shapes().is_err());

        let mut s = NetworkSpec::dense(FIELD, 1, 4, Activation::Linear);
        s.layers[2] = LayerSpec::Dense {
            width: 1600,
            activation: Activation::Relu,
        };
        assert!(s.shapes().is_err());

        let mut s = NetworkSpec::dense(FIELD, 1, 4, Activation::Linear);
        s.family = Family::CD;
        s.layers.insert(
            0,
            LayerSpec::Conv2d {
                filters: 2,
                kernel: 2,
                activation: Activation::Linear,
            },
        );
        assert!(s.shapes().is_err());
    }
}
