//! Small differentiable models with exact reverse-mode gradients.
//!
//! Architectures are sequential chains of 1-D/2-D valid convolutions (stride
//! 1, no padding), rectifiers, flatten, fully-connected layers, and an
//! optional whitening output layer. Everything runs in `f64`; gradients with
//! respect to parameters and inputs are computed analytically layer by layer.

mod layers;
mod whitening;

pub use whitening::WhiteningState;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::parallel;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Activation shape flowing between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    /// Channel-major 1-D signal: `[c0 t0.., c1 t0.., ..]`.
    OneD { channels: usize, len: usize },
    /// Channel-major 2-D image, rows within a channel stored row-major.
    TwoD {
        channels: usize,
        height: usize,
        width: usize,
    },
    Flat { size: usize },
}

impl Shape {
    pub fn size(&self) -> usize {
        match *self {
            Shape::OneD { channels, len } => channels * len,
            Shape::TwoD {
                channels,
                height,
                width,
            } => channels * height * width,
            Shape::Flat { size } => size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    },
    Fc {
        #[serde(rename = "in")]
        inputs: usize,
        #[serde(rename = "out")]
        outputs: usize,
    },
    Relu,
    Flatten,
    Whitening,
}

impl LayerSpec {
    fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
            } => out_channels * in_channels * kernel + out_channels,
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
            } => out_channels * in_channels * kernel * kernel + out_channels,
            LayerSpec::Fc { inputs, outputs } => inputs * outputs + outputs,
            _ => 0,
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Conv1d {
                in_channels, kernel, ..
            } => in_channels * kernel,
            LayerSpec::Conv2d {
                in_channels, kernel, ..
            } => in_channels * kernel * kernel,
            LayerSpec::Fc { inputs, .. } => inputs,
            _ => 0,
        }
    }

    /// Output shape for a given input shape, or a structured error.
    fn infer(&self, input: &Shape, index: usize) -> Result<Shape> {
        let err = |expected: String| {
            Err(Error::Dimension {
                context: format!("layer {index} ({self:?})"),
                expected,
                actual: format!("{input:?}"),
            })
        };
        match *self {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
            } => match *input {
                Shape::OneD { channels, len } if channels == in_channels && len >= kernel => {
                    Ok(Shape::OneD {
                        channels: out_channels,
                        len: len - kernel + 1,
                    })
                }
                _ => err(format!("1-D input with {in_channels} channels, len >= {kernel}")),
            },
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
            } => match *input {
                Shape::TwoD {
                    channels,
                    height,
                    width,
                } if channels == in_channels && height >= kernel && width >= kernel => {
                    Ok(Shape::TwoD {
                        channels: out_channels,
                        height: height - kernel + 1,
                        width: width - kernel + 1,
                    })
                }
                _ => err(format!("2-D input with {in_channels} channels, sides >= {kernel}")),
            },
            LayerSpec::Fc { inputs, outputs } => {
                if input.size() == inputs && matches!(input, Shape::Flat { .. }) {
                    Ok(Shape::Flat { size: outputs })
                } else {
                    err(format!("flat input of size {inputs}"))
                }
            }
            LayerSpec::Relu => Ok(*input),
            LayerSpec::Flatten => Ok(Shape::Flat { size: input.size() }),
            LayerSpec::Whitening => match *input {
                Shape::Flat { size } => Ok(Shape::Flat { size }),
                _ => err("flat input".into()),
            },
        }
    }
}

/// Architecture description: input shape plus an ordered layer list.
/// Serialized as JSON so experiments are config-driven.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input: Shape,
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    /// Shapes after each layer (index 0 is the input shape). Errors when
    /// adjacent layers fail to compose or whitening is not the final layer.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        let mut shapes = vec![self.input];
        for (i, layer) in self.layers.iter().enumerate() {
            if matches!(layer, LayerSpec::Whitening) && i + 1 != self.layers.len() {
                return Err(Error::InvalidConfig(
                    "whitening must be the final layer".into(),
                ));
            }
            let next = layer.infer(shapes.last().unwrap(), i)?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn input_size(&self) -> usize {
        self.input.size()
    }

    pub fn output_size(&self) -> Result<usize> {
        Ok(self.shapes()?.last().unwrap().size())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }

    pub fn has_whitening(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, LayerSpec::Whitening))
    }
}

/// How the whitening layer (if present) obtains its statistics during a
/// forward pass.
#[derive(Debug, Clone)]
pub enum WhitenMode<'a> {
    /// Use the state stored on the model; error when unfitted.
    Frozen,
    /// Fit mean/covariance on the given batch rows. The backward pass
    /// differentiates through these statistics.
    BatchStats { stat_rows: &'a [usize] },
}

/// Saved forward activations needed by the backward pass.
pub struct Tape {
    /// `activations[0]` is the batch input; `activations[i+1]` is layer `i`'s output.
    activations: Vec<Matrix>,
    whiten: Option<whitening::WhitenTape>,
}

impl Tape {
    pub fn output(&self) -> &Matrix {
        self.activations.last().unwrap()
    }

    /// Whitening state fitted during this forward pass (batch-stats mode only).
    pub fn fitted_whitening(&self) -> Option<&WhiteningState> {
        self.whiten.as_ref().and_then(|w| w.fitted())
    }
}

pub struct Gradients {
    pub params: Vec<f64>,
    pub inputs: Matrix,
}

/// A parametric map `g : R^n -> R^d` with exact gradients.
#[derive(Debug, Clone)]
pub struct DifferentiableModel {
    spec: ModelSpec,
    shapes: Vec<Shape>,
    offsets: Vec<usize>,
    params: Vec<f64>,
    whitening: Option<WhiteningState>,
}

impl DifferentiableModel {
    /// Validates the spec and initializes parameters uniformly in
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` from `rng`.
    pub fn new<R: Rng + ?Sized>(spec: ModelSpec, rng: &mut R) -> Result<Self> {
        let shapes = spec.shapes()?;
        let mut offsets = Vec::with_capacity(spec.layers.len() + 1);
        let mut total = 0;
        for layer in &spec.layers {
            offsets.push(total);
            total += layer.param_count();
        }
        offsets.push(total);

        let mut params = vec![0.0; total];
        for (i, layer) in spec.layers.iter().enumerate() {
            let n = layer.param_count();
            if n == 0 {
                continue;
            }
            let bound = 1.0 / (layer.fan_in() as f64).sqrt();
            for p in &mut params[offsets[i]..offsets[i] + n] {
                *p = rng.random_range(-bound..bound);
            }
        }

        Ok(DifferentiableModel {
            spec,
            shapes,
            offsets,
            params,
            whitening: None,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::dim("set_params", self.params.len(), params.len()));
        }
        self.params = params;
        Ok(())
    }

    pub fn whitening(&self) -> Option<&WhiteningState> {
        self.whitening.as_ref()
    }

    pub fn set_whitening(&mut self, state: WhiteningState) {
        self.whitening = Some(state);
    }

    fn layer_params(&self, i: usize) -> &[f64] {
        &self.params[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Forward pass using frozen whitening statistics.
    pub fn forward(&self, batch: &Matrix) -> Result<Matrix> {
        let (out, _) = self.forward_tape(batch, WhitenMode::Frozen)?;
        Ok(out)
    }

    /// Forward pass that records activations for a later backward call.
    pub fn forward_tape(&self, batch: &Matrix, mode: WhitenMode) -> Result<(Matrix, Tape)> {
        if batch.cols() != self.spec.input_size() {
            return Err(Error::dim(
                "model_forward input",
                self.spec.input_size(),
                batch.cols(),
            ));
        }

        let mut activations = Vec::with_capacity(self.spec.layers.len() + 1);
        activations.push(batch.clone());
        let mut whiten_tape = None;

        for (i, layer) in self.spec.layers.iter().enumerate() {
            let input = activations.last().unwrap();
            let out = match layer {
                LayerSpec::Whitening => {
                    let (out, tape) = match &mode {
                        WhitenMode::Frozen => {
                            let state = self.whitening.as_ref().ok_or_else(|| {
                                Error::InvalidConfig(
                                    "whitening layer present but no fitted state".into(),
                                )
                            })?;
                            whitening::forward_frozen(input, state)
                        }
                        WhitenMode::BatchStats { stat_rows } => {
                            whitening::forward_batch(input, stat_rows)?
                        }
                    };
                    whiten_tape = Some(tape);
                    out
                }
                _ => self.plain_layer_forward(i, layer, input),
            };
            activations.push(out);
        }

        let output = activations.last().unwrap();
        if !output.is_finite() {
            return Err(Error::NonFinite("model_forward output".into()));
        }
        Ok((
            output.clone(),
            Tape {
                activations,
                whiten: whiten_tape,
            },
        ))
    }

    fn plain_layer_forward(&self, i: usize, layer: &LayerSpec, input: &Matrix) -> Matrix {
        let params = self.layer_params(i);
        let in_shape = &self.shapes[i];
        let out_len = self.shapes[i + 1].size();
        let rows = parallel::map_indexed(input.rows(), |r| {
            let mut out = vec![0.0; out_len];
            layers::forward_row(layer, in_shape, params, input.row(r), &mut out);
            out
        });
        let mut m = Matrix::zeros(input.rows(), out_len);
        for (r, row) in rows.into_iter().enumerate() {
            m.row_mut(r).copy_from_slice(&row);
        }
        m
    }

    /// Reverse-mode pass. `upstream` must match the forward output shape; the
    /// returned input gradient matches the original batch shape.
    pub fn backward(&self, tape: &Tape, upstream: &Matrix) -> Result<Gradients> {
        let out = tape.output();
        if upstream.rows() != out.rows() || upstream.cols() != out.cols() {
            return Err(Error::dim(
                "model_backward upstream",
                format!("{}x{}", out.rows(), out.cols()),
                format!("{}x{}", upstream.rows(), upstream.cols()),
            ));
        }

        let mut grad_params = vec![0.0; self.params.len()];
        let mut grad = upstream.clone();

        for (i, layer) in self.spec.layers.iter().enumerate().rev() {
            let input = &tape.activations[i];
            grad = match layer {
                LayerSpec::Whitening => {
                    let wt = tape.whiten.as_ref().ok_or_else(|| {
                        Error::InvalidConfig("backward without whitening tape".into())
                    })?;
                    whitening::backward(wt, &grad)
                }
                _ => {
                    let params = self.layer_params(i);
                    let gp = &mut grad_params[self.offsets[i]..self.offsets[i + 1]];
                    layers::backward_batch(layer, &self.shapes[i], params, input, &grad, gp)
                }
            };
        }

        if grad.data().iter().any(|v| !v.is_finite())
            || grad_params.iter().any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("model_backward gradients".into()));
        }
        Ok(Gradients {
            params: grad_params,
            inputs: grad,
        })
    }

    /// Fits whitening statistics on `reference` so that the transformed
    /// reference outputs have zero mean and identity covariance. The state is
    /// returned, not stored; pair with [`DifferentiableModel::set_whitening`].
    pub fn fit_whitening(&self, reference: &Matrix) -> Result<WhiteningState> {
        if !self.spec.has_whitening() {
            return Err(Error::InvalidConfig(
                "fit_whitening on a spec without a whitening layer".into(),
            ));
        }
        let all_rows: Vec<usize> = (0..reference.rows()).collect();
        let (_, tape) = self.forward_tape(reference, WhitenMode::BatchStats { stat_rows: &all_rows })?;
        Ok(tape.fitted_whitening().unwrap().clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fc_identity_spec() -> ModelSpec {
        ModelSpec {
            input: Shape::Flat { size: 3 },
            layers: vec![LayerSpec::Fc { inputs: 3, outputs: 3 }],
        }
    }

    #[test]
    fn identity_fc_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = DifferentiableModel::new(fc_identity_spec(), &mut rng).unwrap();
        // W = I, b = 0
        let mut p = vec![0.0; 12];
        p[0] = 1.0;
        p[4] = 1.0;
        p[8] = 1.0;
        model.set_params(p).unwrap();
        let x = Matrix::from_vec(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let y = model.forward(&x).unwrap();
        assert_eq!(y.row(0), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn empty_batch_passes_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = DifferentiableModel::new(fc_identity_spec(), &mut rng).unwrap();
        let x = Matrix::zeros(0, 3);
        let y = model.forward(&x).unwrap();
        assert_eq!(y.rows(), 0);
        assert_eq!(y.cols(), 3);
    }

    #[test]
    fn s_curve_spec_maps_3_to_2() {
        let spec = ModelSpec {
            input: Shape::OneD { channels: 1, len: 3 },
            layers: vec![
                LayerSpec::Conv1d { in_channels: 1, out_channels: 4, kernel: 2 },
                LayerSpec::Relu,
                LayerSpec::Conv1d { in_channels: 4, out_channels: 4, kernel: 2 },
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Fc { inputs: 4, outputs: 2 },
            ],
        };
        assert_eq!(spec.output_size().unwrap(), 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = DifferentiableModel::new(spec, &mut rng).unwrap();
        let x = Matrix::from_vec(1, 3, vec![0.1, -0.4, 0.7]).unwrap();
        assert_eq!(model.forward(&x).unwrap().cols(), 2);
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let spec = ModelSpec {
            input: Shape::Flat { size: 3 },
            layers: vec![LayerSpec::Fc { inputs: 4, outputs: 2 }],
        };
        assert!(spec.shapes().is_err());
    }

    #[test]
    fn whitening_must_be_last() {
        let spec = ModelSpec {
            input: Shape::Flat { size: 3 },
            layers: vec![LayerSpec::Whitening, LayerSpec::Fc { inputs: 3, outputs: 2 }],
        };
        assert!(spec.shapes().is_err());
    }

    #[test]
    fn linear_layer_adjoint_is_weight_row() {
        // y = Wx with upstream e1: grad wrt x must be the first column of W
        // in our (in x out) layout, i.e. W[:, 0].
        let spec = ModelSpec {
            input: Shape::Flat { size: 2 },
            layers: vec![LayerSpec::Fc { inputs: 2, outputs: 2 }],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = DifferentiableModel::new(spec, &mut rng).unwrap();
        model
            .set_params(vec![1.0, 2.0, 3.0, 4.0, 0.0, 0.0])
            .unwrap(); // W = [[1,2],[3,4]] (in x out)
        let x = Matrix::from_vec(1, 2, vec![0.5, -0.3]).unwrap();
        let (_, tape) = model.forward_tape(&x, WhitenMode::Frozen).unwrap();
        let up = Matrix::from_vec(1, 2, vec![1.0, 0.0]).unwrap();
        let g = model.backward(&tape, &up).unwrap();
        assert_eq!(g.inputs.row(0), &[1.0, 3.0]);
    }

    #[test]
    fn relu_blocks_gradient_at_negative_preactivation() {
        let spec = ModelSpec {
            input: Shape::Flat { size: 1 },
            layers: vec![LayerSpec::Relu],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = DifferentiableModel::new(spec, &mut rng).unwrap();
        let x = Matrix::from_vec(1, 1, vec![-0.5]).unwrap();
        let (_, tape) = model.forward_tape(&x, WhitenMode::Frozen).unwrap();
        let up = Matrix::from_vec(1, 1, vec![1.0]).unwrap();
        let g = model.backward(&tape, &up).unwrap();
        assert_eq!(g.inputs.row(0), &[0.0]);
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = fc_identity_spec();
        let m1 = DifferentiableModel::new(spec.clone(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let m2 = DifferentiableModel::new(spec, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(m1.params(), m2.params());
    }

    #[test]
    fn spec_json_roundtrip() {
        let spec = ModelSpec {
            input: Shape::TwoD { channels: 1, height: 8, width: 8 },
            layers: vec![
                LayerSpec::Conv2d { in_channels: 1, out_channels: 8, kernel: 3 },
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Fc { inputs: 288, outputs: 2 },
                LayerSpec::Whitening,
            ],
        };
        let json = serde_json::to_string(&spec).unwrap();
        let back: ModelSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
        assert!(json.contains("\"in\":288"));
    }
}
