//! Residual sine-activated deformation network.
//!
//! A field maps a canonical position `x` to `x + g(x)` where `g` is a small
//! MLP with sine activations on every hidden layer and a linear output layer.
//! The output layer starts at exactly zero, so a fresh field is the identity.

use rand::Rng;
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::geometry::{PointSet, Vec3};

pub use crate::io::checkpoint::{load_field, load_field_any, load_field_expecting, save_field};

pub const DEFAULT_OMEGA0: f64 = 30.0;
pub const DEFAULT_HIDDEN: [usize; 3] = [128, 128, 128];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("non-finite input coordinate at point {0}")]
    NonFiniteInput(usize),
    #[error("non-finite gamma {0}")]
    NonFiniteGamma(f64),
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("omega0 must be positive and finite, got {0}")]
    InvalidOmega(f64),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

pub type FieldResult<T> = std::result::Result<T, FieldError>;

/// One affine layer; `weight` is `[fan_in, fan_out]`, `bias` is `[fan_out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Affine map applied around the network: the MLP sees `(x - center) / scale`
/// and its output is multiplied by `scale`. Pipelines train in a normalized
/// frame and attach it here so the field works directly on world points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputFrame {
    pub center: Vec3,
    pub scale: f64,
}

impl Default for InputFrame {
    fn default() -> Self {
        Self {
            center: Vec3::zeros(),
            scale: 1.0,
        }
    }
}

impl InputFrame {
    pub fn is_identity(&self) -> bool {
        self.center == Vec3::zeros() && self.scale == 1.0
    }

    pub fn to_local(&self, p: &Vec3) -> Vec3 {
        (p - self.center) / self.scale
    }

    pub fn to_world(&self, p: &Vec3) -> Vec3 {
        p * self.scale + self.center
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeformationField {
    layers: Vec<Layer>,
    omega0: f64,
    frame: InputFrame,
}

/// Draws a field with the default `3 -> 128 -> 128 -> 128 -> 3` layout.
pub fn init_field(seed: u64, omega0: f64) -> FieldResult<DeformationField> {
    DeformationField::init(&DEFAULT_HIDDEN, seed, omega0)
}

fn uniform(rng: &mut impl Rng, shape: Vec<usize>, bound: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape, data).expect("shape matches")
}

impl DeformationField {
    /// Sine-network initialization: first layer weights in `[-1/3, 1/3]`,
    /// later hidden weights in `±sqrt(6 / fan_in) / omega0`, hidden biases in
    /// `±1 / sqrt(fan_in)`, output layer all zeros.
    pub fn init(hidden: &[usize], seed: u64, omega0: f64) -> FieldResult<Self> {
        if !(omega0 > 0.0 && omega0.is_finite()) {
            return Err(FieldError::InvalidOmega(omega0));
        }
        if hidden.is_empty() || hidden.contains(&0) {
            return Err(FieldError::InvalidArchitecture(format!(
                "hidden widths must be non-empty and positive, got {hidden:?}"
            )));
        }
        let mut rng = crate::rng::rng(seed);
        let mut dims = vec![3];
        dims.extend_from_slice(hidden);
        dims.push(3);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (l, pair) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let last = l == dims.len() - 2;
            let layer = if last {
                Layer {
                    weight: Tensor::zeros(vec![fan_in, fan_out]),
                    bias: Tensor::zeros(vec![fan_out]),
                }
            } else {
                let w_bound = if l == 0 {
                    1.0 / fan_in as f64
                } else {
                    (6.0 / fan_in as f64).sqrt() / omega0
                };
                Layer {
                    weight: uniform(&mut rng, vec![fan_in, fan_out], w_bound),
                    bias: uniform(&mut rng, vec![fan_out], 1.0 / (fan_in as f64).sqrt()),
                }
            };
            layers.push(layer);
        }
        Ok(Self {
            layers,
            omega0,
            frame: InputFrame::default(),
        })
    }

    /// Assembles a field from explicit layers, checking that they chain from
    /// 3 inputs to 3 outputs.
    pub fn from_layers(layers: Vec<Layer>, omega0: f64, frame: InputFrame) -> FieldResult<Self> {
        if !(omega0 > 0.0 && omega0.is_finite()) {
            return Err(FieldError::InvalidOmega(omega0));
        }
        if layers.len() < 2 {
            return Err(FieldError::InvalidArchitecture(
                "need at least one hidden layer".into(),
            ));
        }
        let mut fan_in = 3;
        for (l, layer) in layers.iter().enumerate() {
            let (r, c) = layer.weight.dims();
            if layer.weight.shape().len() != 2 || r != fan_in || layer.bias.len() != c {
                return Err(FieldError::InvalidArchitecture(format!(
                    "layer {l}: weight {:?}, bias {:?}, expected fan-in {fan_in}",
                    layer.weight.shape(),
                    layer.bias.shape()
                )));
            }
            if !layer.weight.all_finite() || !layer.bias.all_finite() {
                return Err(FieldError::InvalidArchitecture(format!(
                    "layer {l} has non-finite parameters"
                )));
            }
            fan_in = c;
        }
        if fan_in != 3 {
            return Err(FieldError::InvalidArchitecture(format!(
                "output width {fan_in}, expected 3"
            )));
        }
        if !(frame.scale > 0.0 && frame.scale.is_finite()) {
            return Err(FieldError::InvalidArchitecture(format!(
                "frame scale {} must be positive",
                frame.scale
            )));
        }
        Ok(Self {
            layers,
            omega0,
            frame,
        })
    }

    /// Layer widths from input to output, e.g. `[3, 128, 128, 128, 3]`.
    pub fn architecture(&self) -> Vec<usize> {
        let mut dims = vec![3];
        dims.extend(self.layers.iter().map(|l| l.bias.len()));
        dims
    }

    pub fn omega0(&self) -> f64 {
        self.omega0
    }

    pub fn frame(&self) -> InputFrame {
        self.frame
    }

    pub fn with_frame(mut self, frame: InputFrame) -> Self {
        self.frame = frame;
        self
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Parameter tensors in `[w0, b0, w1, b1, ...]` order.
    pub fn parameters(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn parameter_names(&self) -> Vec<String> {
        (0..self.layers.len())
            .flat_map(|l| [format!("layer{l}.weight"), format!("layer{l}.bias")])
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|t| t.len()).sum()
    }

    fn check_input(points: &[Vec3]) -> FieldResult<()> {
        match points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            Some(i) => Err(FieldError::NonFiniteInput(i)),
            None => Ok(()),
        }
    }

    /// `g(x)` for every point, in world units.
    pub fn displacement(&self, points: &[Vec3]) -> FieldResult<Vec<Vec3>> {
        Self::check_input(points)?;
        // same op sequence as the taped forward pass, so both agree bitwise
        let tape = Tape::new();
        let vars = self.constants_on(&tape);
        let input = tape.constant(Tensor::from_rows(points));
        let out = vars.displacement(&input)?;
        Ok(out.value().to_rows3()?)
    }

    /// `x + g(x)` pointwise.
    pub fn deform(&self, points: &[Vec3]) -> FieldResult<Vec<Vec3>> {
        self.deform_partial(points, 1.0)
    }

    /// `x + gamma * g(x)`; `gamma` in `[0, 1]` interpolates, beyond extrapolates.
    pub fn deform_partial(&self, points: &[Vec3], gamma: f64) -> FieldResult<Vec<Vec3>> {
        if !gamma.is_finite() {
            return Err(FieldError::NonFiniteGamma(gamma));
        }
        let disp = self.displacement(points)?;
        Ok(points
            .iter()
            .zip(disp)
            .map(|(x, d)| if gamma == 1.0 { x + d } else { x + d * gamma })
            .collect())
    }

    pub fn deform_point_set(&self, points: &PointSet) -> FieldResult<Vec<Vec3>> {
        self.deform(points.positions())
    }

    /// Registers every parameter as a gradient-tracked leaf.
    pub fn parameters_on<'t>(&self, tape: &'t Tape) -> FieldVars<'t> {
        self.vars_on(tape, true)
    }

    /// Registers the parameters as constants (evaluation only).
    pub fn constants_on<'t>(&self, tape: &'t Tape) -> FieldVars<'t> {
        self.vars_on(tape, false)
    }

    fn vars_on<'t>(&self, tape: &'t Tape, trainable: bool) -> FieldVars<'t> {
        let leaf = |t: &Tensor| {
            if trainable {
                tape.parameter(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        FieldVars {
            weights: self.layers.iter().map(|l| leaf(&l.weight)).collect(),
            biases: self.layers.iter().map(|l| leaf(&l.bias)).collect(),
            omega0: self.omega0,
            frame: self.frame,
        }
    }
}

/// A field's parameters recorded on a tape.
#[derive(Debug, Clone)]
pub struct FieldVars<'t> {
    weights: Vec<Var<'t>>,
    biases: Vec<Var<'t>>,
    omega0: f64,
    frame: InputFrame,
}

impl<'t> FieldVars<'t> {
    /// Wraps externally created parameter handles, given in
    /// `[w0, b0, w1, b1, ...]` order, with the layout of `template`.
    pub fn new(template: &DeformationField, params: Vec<Var<'t>>) -> Self {
        assert_eq!(params.len(), 2 * template.layers.len(), "one weight and bias per layer");
        Self {
            weights: params.iter().step_by(2).copied().collect(),
            biases: params.iter().skip(1).step_by(2).copied().collect(),
            omega0: template.omega0,
            frame: template.frame,
        }
    }

    /// Parameter handles in `[w0, b0, w1, b1, ...]` order.
    pub fn params(&self) -> Vec<Var<'t>> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [*w, *b])
            .collect()
    }

    /// `g(x)` for an `[n, 3]` input, honouring the input frame.
    pub fn displacement(&self, input: &Var<'t>) -> Result<Var<'t>, AutodiffError> {
        let tape = input.tape();
        let mut h = *input;
        if !self.frame.is_identity() {
            let shift = tape.constant(Tensor::new(vec![3], (-self.frame.center).as_slice().to_vec())?);
            h = h.bias_add(&shift)?.scale(1.0 / self.frame.scale)?;
        }
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            h = h.matmul(w)?.bias_add(b)?;
            if l < last {
                h = h.scale(self.omega0)?.sin()?;
            }
        }
        if self.frame.scale != 1.0 {
            h = h.scale(self.frame.scale)?;
        }
        Ok(h)
    }

    /// `x + gamma * g(x)` recorded on the tape.
    pub fn deform_partial(&self, input: &Var<'t>, gamma: f64) -> Result<Var<'t>, AutodiffError> {
        let g = self.displacement(input)?;
        input.add(&g.scale(gamma)?)
    }
}

/// One field per target frame `t = 1..T`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DynamicFieldSet {
    fields: Vec<DeformationField>,
}

impl DynamicFieldSet {
    pub fn new(fields: Vec<DeformationField>) -> Self {
        Self { fields }
    }

    pub fn fields(&self) -> &[DeformationField] {
        &self.fields
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    /// Field for target frame `t` (1-based, matching frame numbering).
    pub fn frame(&self, t: usize) -> Option<&DeformationField> {
        t.checked_sub(1).and_then(|i| self.fields.get(i))
    }
}
