//! Feed-forward generators built from affine layers and pointwise activations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Matrix, Rng, Vector};

pub mod genw;

pub use genw::{load_weights, save_weights};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu { slope: f64 },
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn name(&self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::LeakyRelu { .. } => "leaky_relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu { slope } => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative at pre-activation `x`. ReLU-type kinks take the inactive
    /// branch at exactly zero.
    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu { slope } => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
        }
    }

    /// Lipschitz constant `M` of the scalar nonlinearity.
    pub fn lipschitz(&self) -> f64 {
        match *self {
            Activation::Identity | Activation::Relu | Activation::Tanh => 1.0,
            Activation::LeakyRelu { slope } => slope.abs().max(1.0),
            Activation::Sigmoid => 0.25,
        }
    }

    /// True for the activations with a single kink at zero (ReLU, LeakyReLU).
    pub fn has_two_linear_pieces(&self) -> bool {
        matches!(self, Activation::Relu | Activation::LeakyRelu { .. })
    }

    pub fn is_piecewise_linear(&self) -> bool {
        matches!(
            self,
            Activation::Identity | Activation::Relu | Activation::LeakyRelu { .. }
        )
    }

    pub fn validate(&self) -> Result<()> {
        if let Activation::LeakyRelu { slope } = *self {
            if !(slope > 0.0 && slope < 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "leaky relu slope must lie in (0, 1), got {slope}"
                )));
            }
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `x ↦ act(W x + b)`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vector,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weights: Matrix, bias: Vector, activation: Activation) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::dims("layer bias", weights.rows(), bias.len()));
        }
        if !bias.is_finite() {
            return Err(Error::InvalidParameter("layer bias must be finite".into()));
        }
        activation.validate()?;
        Ok(Layer {
            weights,
            bias,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    fn pre_activation(&self, x: &[f64]) -> Result<Vector> {
        let mut pre = self.weights.matvec(x)?;
        pre.axpy(1.0, &self.bias);
        Ok(pre)
    }
}

/// `G: R^k → R^n`, a composition of `d >= 1` layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorNet {
    layers: Vec<Layer>,
}

impl GeneratorNet {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidParameter(
                "a generator needs at least one layer".into(),
            ));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[1].in_dim() != pair[0].out_dim() {
                return Err(Error::InconsistentLayers {
                    layer: i + 1,
                    expected: pair[1].in_dim(),
                    actual: pair[0].out_dim(),
                });
            }
        }
        Ok(GeneratorNet { layers })
    }

    /// Single layer with `W = I`, `b = 0`.
    pub fn identity(dim: usize, activation: Activation) -> Result<Self> {
        GeneratorNet::new(vec![Layer::new(
            Matrix::identity(dim),
            Vector::zeros(dim),
            activation,
        )?])
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Latent dimension k.
    pub fn k(&self) -> usize {
        self.layers[0].in_dim()
    }

    /// Output dimension n.
    pub fn n(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// Layer count d.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn is_piecewise_linear(&self) -> bool {
        self.layers.iter().all(|l| l.activation.is_piecewise_linear())
    }

    pub fn forward(&self, z: &[f64]) -> Result<Vector> {
        if z.len() != self.k() {
            return Err(Error::dims("generator input", self.k(), z.len()));
        }
        let mut x = Vector::new(z.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut pre = layer.pre_activation(&x)?;
            pre.iter_mut().for_each(|v| *v = layer.activation.apply(*v));
            if !pre.is_finite() {
                return Err(Error::NonFinite { layer: i });
            }
            x = pre;
        }
        Ok(x)
    }

    /// Forward pass that keeps every layer's pre-activation for a later
    /// [`GeneratorNet::backward`].
    pub fn forward_tape(&self, z: &[f64]) -> Result<Tape> {
        if z.len() != self.k() {
            return Err(Error::dims("generator input", self.k(), z.len()));
        }
        let mut pres = Vec::with_capacity(self.layers.len());
        let mut x = Vector::new(z.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let pre = layer.pre_activation(&x)?;
            let out: Vector = pre.iter().map(|&v| layer.activation.apply(v)).collect();
            if !out.is_finite() || !pre.is_finite() {
                return Err(Error::NonFinite { layer: i });
            }
            pres.push(pre);
            x = out;
        }
        Ok(Tape { output: x, pres })
    }

    /// Reverse sweep: `J(z)ᵀ v` for the point recorded in `tape`.
    pub fn backward(&self, tape: &Tape, cotangent: &[f64]) -> Result<Vector> {
        if cotangent.len() != self.n() {
            return Err(Error::dims("vjp cotangent", self.n(), cotangent.len()));
        }
        let mut grad = Vector::new(cotangent.to_vec());
        for (layer, pre) in self.layers.iter().zip(&tape.pres).rev() {
            for (g, &p) in grad.iter_mut().zip(pre.iter()) {
                *g *= layer.activation.derivative(p);
            }
            grad = layer.weights.matvec_t(&grad)?;
        }
        Ok(grad)
    }

    /// `(G(z), J(z)ᵀ v)` from one forward and one backward sweep.
    pub fn forward_vjp(&self, z: &[f64], cotangent: &[f64]) -> Result<(Vector, Vector)> {
        if cotangent.len() != self.n() {
            return Err(Error::dims("vjp cotangent", self.n(), cotangent.len()));
        }
        let tape = self.forward_tape(z)?;
        let grad = self.backward(&tape, cotangent)?;
        Ok((tape.output, grad))
    }

    /// `J(z)ᵀ v` where `J = ∂G/∂z`.
    pub fn vjp(&self, z: &[f64], cotangent: &[f64]) -> Result<Vector> {
        self.forward_vjp(z, cotangent).map(|(_, g)| g)
    }

    pub fn lipschitz_bound(&self) -> LipschitzBound {
        let layer_factors: Vec<f64> = self
            .layers
            .iter()
            .map(|l| l.activation.lipschitz() * l.in_dim().max(l.out_dim()) as f64 * l.weights.max_abs())
            .collect();
        let per_layer = layer_factors.iter().product();

        let m = self
            .layers
            .iter()
            .map(|l| l.activation.lipschitz())
            .fold(0.0_f64, f64::max);
        let c = self
            .layers
            .iter()
            .map(|l| l.in_dim().max(l.out_dim()))
            .max()
            .unwrap_or(0) as f64;
        let w_max = self
            .layers
            .iter()
            .map(|l| l.weights.max_abs())
            .fold(0.0_f64, f64::max);
        let uniform = (m * c * w_max).powi(self.depth() as i32);

        LipschitzBound {
            per_layer,
            uniform,
            layer_factors,
        }
    }
}

/// Activations recorded by [`GeneratorNet::forward_tape`].
#[derive(Debug, Clone)]
pub struct Tape {
    pub output: Vector,
    pres: Vec<Vector>,
}

/// Closed-form Lipschitz bounds for a generator.
///
/// Each layer contributes `M · c · w_max`, with `c` the larger of the layer's
/// input and output widths (`c · w_max` bounds the spectral norm of any
/// `c_out × c_in` matrix with entries at most `w_max`). `per_layer` is the
/// product of these factors; `uniform` is `(M c w_max)^d` using network-wide
/// maxima and is never smaller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzBound {
    pub per_layer: f64,
    pub uniform: f64,
    pub layer_factors: Vec<f64>,
}

/// `B^k(r)`: projection of latent iterates onto the ball of radius `r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentBallConstraint {
    pub radius: f64,
}

impl LatentBallConstraint {
    pub fn new(radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "latent ball radius must be positive, got {radius}"
            )));
        }
        Ok(LatentBallConstraint { radius })
    }

    /// Radial rescaling when `‖z‖ > r`.
    pub fn project(&self, z: &mut [f64]) {
        if self.radius.is_infinite() {
            return;
        }
        let norm = crate::tensor::norm2(z);
        if norm > self.radius {
            let s = self.radius / norm;
            z.iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// Shape and initialization of a random generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomNetSpec {
    pub k: usize,
    pub n: usize,
    pub depth: usize,
    pub width: usize,
    #[serde(default = "default_hidden")]
    pub activation: Activation,
    #[serde(default = "default_output")]
    pub output_activation: Activation,
    /// Weights are `N(0, weight_scale² / fan_in)`.
    #[serde(default = "default_weight_scale")]
    pub weight_scale: f64,
    /// Biases are `N(0, bias_scale²)`; zero gives a bias-free net.
    #[serde(default)]
    pub bias_scale: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_hidden() -> Activation {
    Activation::Relu
}

fn default_output() -> Activation {
    Activation::Identity
}

fn default_weight_scale() -> f64 {
    std::f64::consts::SQRT_2
}

impl RandomNetSpec {
    pub fn relu(k: usize, n: usize, depth: usize, width: usize, seed: u64) -> Self {
        RandomNetSpec {
            k,
            n,
            depth,
            width,
            activation: Activation::Relu,
            output_activation: Activation::Identity,
            weight_scale: default_weight_scale(),
            bias_scale: 0.0,
            seed,
        }
    }

    pub fn build(&self) -> Result<GeneratorNet> {
        random_net(&mut Rng::new(self.seed), self)
    }
}

/// Draws a generator with `depth - 1` hidden layers of width `width`.
///
/// Parameters are rounded to `f32` so that the net survives a GENW round trip
/// unchanged.
pub fn random_net(rng: &mut Rng, spec: &RandomNetSpec) -> Result<GeneratorNet> {
    if spec.k == 0 || spec.n == 0 || spec.depth == 0 || spec.width == 0 {
        return Err(Error::InvalidParameter(
            "random net needs k, n, depth, width >= 1".into(),
        ));
    }
    let mut dims = vec![spec.k];
    dims.extend(std::iter::repeat_n(spec.width, spec.depth - 1));
    dims.push(spec.n);

    let mut layers = Vec::with_capacity(spec.depth);
    for (i, w) in dims.windows(2).enumerate() {
        let (fan_in, fan_out) = (w[0], w[1]);
        let sd = spec.weight_scale / (fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| round_f32(sd * rng.normal()))
            .collect();
        let bias = (0..fan_out)
            .map(|_| {
                if spec.bias_scale > 0.0 {
                    round_f32(spec.bias_scale * rng.normal())
                } else {
                    0.0
                }
            })
            .collect();
        let activation = if i + 1 == spec.depth {
            spec.output_activation
        } else {
            spec.activation
        };
        layers.push(Layer::new(Matrix::new(fan_out, fan_in, data)?, bias, activation)?);
    }
    GeneratorNet::new(layers)
}

fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::norm2;

    fn relu_identity(dim: usize) -> GeneratorNet {
        GeneratorNet::identity(dim, Activation::Relu).unwrap()
    }

    #[test]
    fn identity_layer_forward_and_vjp() {
        let g = GeneratorNet::identity(3, Activation::Identity).unwrap();
        assert_eq!(&*g.forward(&[1.0, -2.0, 3.0]).unwrap(), &[1.0, -2.0, 3.0]);
        assert_eq!(&*g.vjp(&[0.5, 0.5, 0.5], &[4.0, 5.0, 6.0]).unwrap(), &[4.0, 5.0, 6.0]);
    }

    #[test]
    fn relu_layer_forward_and_vjp() {
        let g = relu_identity(2);
        assert_eq!(&*g.forward(&[-1.0, 2.0]).unwrap(), &[0.0, 2.0]);
        assert_eq!(&*g.vjp(&[-1.0, 2.0], &[1.0, 1.0]).unwrap(), &[0.0, 1.0]);
        // derivative 0 at the kink
        assert_eq!(&*g.vjp(&[0.0, 2.0], &[1.0, 1.0]).unwrap(), &[0.0, 1.0]);
    }

    #[test]
    fn two_layer_matches_scalar_oracle() {
        // Hand-evaluated: h = relu(W1 z + b1), out = W2 h + b2.
        let w1 = Matrix::from_rows(&[vec![1.0, -1.0], vec![0.5, 2.0], vec![-1.0, 0.0]]).unwrap();
        let b1 = Vector::new(vec![0.0, -1.0, 0.5]);
        let w2 = Matrix::from_rows(&[vec![1.0, 1.0, 1.0], vec![2.0, 0.0, -1.0]]).unwrap();
        let b2 = Vector::new(vec![0.25, 0.0]);
        let g = GeneratorNet::new(vec![
            Layer::new(w1, b1, Activation::Relu).unwrap(),
            Layer::new(w2, b2, Activation::Identity).unwrap(),
        ])
        .unwrap();
        // z = (1, 0.5): pre1 = (0.5, 0.5, -0.5) → h = (0.5, 0.5, 0)
        // out = (0.5 + 0.5 + 0 + 0.25, 1.0 - 0) = (1.25, 1.0)
        let out = g.forward(&[1.0, 0.5]).unwrap();
        assert_eq!(&*out, &[1.25, 1.0]);
        // vjp with v = (1, 1): W2ᵀv = (3, 1, 0), masked by (1,1,0) → (3,1,0)
        // W1ᵀ(3,1,0) = (3 + 0.5, -3 + 2) = (3.5, -1)
        assert_eq!(&*g.vjp(&[1.0, 0.5], &[1.0, 1.0]).unwrap(), &[3.5, -1.0]);
    }

    #[test]
    fn forward_rejects_wrong_dim() {
        let g = relu_identity(3);
        assert!(matches!(g.forward(&[1.0]), Err(Error::DimensionMismatch { .. })));
        assert!(g.vjp(&[1.0, 1.0, 1.0], &[1.0]).is_err());
    }

    #[test]
    fn forward_reports_non_finite_layer() {
        let big = Matrix::new(1, 1, vec![1e300]).unwrap();
        let g = GeneratorNet::new(vec![
            Layer::new(Matrix::identity(1), Vector::zeros(1), Activation::Identity).unwrap(),
            Layer::new(big.clone(), Vector::zeros(1), Activation::Identity).unwrap(),
            Layer::new(big, Vector::zeros(1), Activation::Identity).unwrap(),
        ])
        .unwrap();
        assert!(matches!(g.forward(&[1.0]), Err(Error::NonFinite { layer: 2 })));
    }

    #[test]
    fn inconsistent_layers_rejected() {
        let l1 = Layer::new(Matrix::zeros(20, 10), Vector::zeros(20), Activation::Relu).unwrap();
        let l2 = Layer::new(Matrix::zeros(5, 30), Vector::zeros(5), Activation::Relu).unwrap();
        assert!(matches!(
            GeneratorNet::new(vec![l1, l2]),
            Err(Error::InconsistentLayers { layer: 1, expected: 30, actual: 20 })
        ));
    }

    #[test]
    fn leaky_slope_validated() {
        let bad = Layer::new(Matrix::identity(1), Vector::zeros(1), Activation::LeakyRelu { slope: 1.5 });
        assert!(bad.is_err());
    }

    #[test]
    fn lipschitz_examples() {
        let l = Layer::new(Matrix::new(4, 4, vec![0.5; 16]).unwrap(), Vector::zeros(4), Activation::Relu).unwrap();
        let g = GeneratorNet::new(vec![l.clone()]).unwrap();
        assert_eq!(g.lipschitz_bound().per_layer, 2.0);
        assert_eq!(g.lipschitz_bound().uniform, 2.0);

        let id = GeneratorNet::identity(7, Activation::Identity).unwrap();
        assert_eq!(id.lipschitz_bound().per_layer, 7.0);

        let two = GeneratorNet::new(vec![l.clone(), l]).unwrap();
        assert_eq!(two.lipschitz_bound().per_layer, 4.0);

        let sig = GeneratorNet::identity(4, Activation::Sigmoid).unwrap();
        assert_eq!(sig.lipschitz_bound().per_layer, 1.0);
    }

    #[test]
    fn per_layer_bound_never_exceeds_uniform() {
        for seed in 0..10 {
            let spec = RandomNetSpec {
                bias_scale: 0.1,
                ..RandomNetSpec::relu(3, 40, 3, 17, seed)
            };
            let b = spec.build().unwrap().lipschitz_bound();
            assert!(b.per_layer <= b.uniform);
        }
    }

    #[test]
    fn random_net_shapes() {
        let g = RandomNetSpec::relu(5, 256, 2, 32, 1).build().unwrap();
        assert_eq!((g.k(), g.n(), g.depth()), (5, 256, 2));
        assert_eq!(g.layers()[0].out_dim(), 32);
        assert_eq!(g.layers()[1].activation, Activation::Identity);
        let one = RandomNetSpec::relu(4, 9, 1, 100, 1).build().unwrap();
        assert_eq!((one.k(), one.n(), one.depth()), (4, 9, 1));
        assert!(RandomNetSpec::relu(0, 9, 1, 1, 1).build().is_err());
    }

    #[test]
    fn ball_projection_rescales() {
        let c = LatentBallConstraint::new(1.0).unwrap();
        let mut z = vec![3.0, 4.0];
        c.project(&mut z);
        assert!((norm2(&z) - 1.0).abs() < 1e-15);
        let mut inside = vec![0.1, 0.2];
        c.project(&mut inside);
        assert_eq!(inside, vec![0.1, 0.2]);
        assert!(LatentBallConstraint::new(0.0).is_err());
    }

    #[test]
    fn relu_net_is_piecewise_linear_along_a_line() {
        let g = RandomNetSpec {
            bias_scale: 0.5,
            ..RandomNetSpec::relu(3, 20, 3, 8, 11)
        }
        .build()
        .unwrap();
        let mut rng = Rng::new(12);
        let z0 = rng.normal_vector(3);
        let v = rng.normal_vector(3);
        let h = 1e-3;
        let pts: Vec<Vector> = (0..4001)
            .map(|i| {
                let t = -2.0 + h * i as f64;
                let z: Vec<f64> = z0.iter().zip(v.iter()).map(|(a, b)| a + t * b).collect();
                g.forward(&z).unwrap()
            })
            .collect();
        let mut kinks = 0;
        for w in pts.windows(3) {
            let second: f64 = (0..20).map(|j| (w[2][j] - 2.0 * w[1][j] + w[0][j]).abs()).sum();
            if second > 1e-9 {
                kinks += 1;
            }
        }
        // Each breakpoint touches at most two consecutive second differences.
        assert!(kinks <= 2 * (8 + 8), "too many nonlinear grid points: {kinks}");
    }

    #[test]
    fn bias_free_relu_net_is_positively_homogeneous() {
        let g = RandomNetSpec::relu(4, 30, 3, 16, 3).build().unwrap();
        let z = Rng::new(4).normal_vector(4);
        let gz = g.forward(&z).unwrap();
        for alpha in [0.0, 0.3, 1.0, 2.5, 10.0] {
            let lhs = g.forward(&z.scaled(alpha)).unwrap();
            let rhs = gz.scaled(alpha);
            assert!(norm2(&lhs.sub(&rhs)) <= 1e-12 * (1.0 + rhs.norm2()));
        }
    }
}
