//! ReLU multilayer perceptrons and their region-local affine structure.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::{dot, Arrangement, Hyperplane, Sign, SignVector};
use crate::witness::SignedConstraint;

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::usage(format!(
                "matrix data has {} entries, expected {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }
}

/// One affine layer `x ↦ W x + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn new(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::usage(format!(
                "bias length {} does not match {} weight rows",
                bias.len(),
                weights.rows()
            )));
        }
        Ok(Layer { weights, bias })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.weights.mul_vec(x);
        for (v, b) in y.iter_mut().zip(&self.bias) {
            *v += b;
        }
        y
    }
}

/// A ReLU MLP with `L >= 1` hidden layers and a linear output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

impl Mlp {
    /// `layers` holds the hidden layers followed by the output layer.
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.len() < 2 {
            return Err(Error::usage(
                "an MLP needs at least one hidden layer and an output layer",
            ));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[1].weights.cols() != pair[0].weights.rows() {
                return Err(Error::usage(format!(
                    "layer {} expects {} inputs but layer {} has {} outputs",
                    i + 2,
                    pair[1].weights.cols(),
                    i + 1,
                    pair[0].weights.rows()
                )));
            }
        }
        for l in &layers {
            if l.weights.rows() == 0 || l.weights.cols() == 0 {
                return Err(Error::usage("layer widths must be positive"));
            }
            if l.weights.data().iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(Error::usage("weights and biases must be finite"));
            }
        }
        Ok(Mlp { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weights.rows()
    }

    /// Number of hidden layers `L`.
    pub fn depth(&self) -> usize {
        self.layers.len() - 1
    }

    /// `n_0, n_1, ..., n_L` (input and hidden widths).
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.hidden_layers().iter().map(|l| l.weights.rows()))
            .collect()
    }

    /// `n_0, ..., n_L, m`.
    pub fn all_widths(&self) -> Vec<usize> {
        let mut w = self.widths();
        w.push(self.output_dim());
        w
    }

    pub fn hidden_layers(&self) -> &[Layer] {
        &self.layers[..self.layers.len() - 1]
    }

    pub fn output_layer(&self) -> &Layer {
        self.layers.last().unwrap()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Hidden width `n_l` for `l` in `1..=L`.
    pub fn width(&self, l: usize) -> usize {
        self.layers[l - 1].weights.rows()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Hidden pre-activations for each layer.
    pub fn pre_activations(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_input(x)?;
        let mut h = x.to_vec();
        let mut out = Vec::with_capacity(self.depth());
        for layer in self.hidden_layers() {
            let pre = layer.apply(&h);
            h = pre.iter().map(|&v| v.max(0.0)).collect();
            out.push(pre);
        }
        Ok(out)
    }

    /// Output and activation pattern at `x`. A pre-activation `<= 0` is inactive.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ActivationPattern)> {
        self.check_input(x)?;
        let mut h = x.to_vec();
        let mut pattern = Vec::with_capacity(self.depth());
        for layer in self.hidden_layers() {
            let pre = layer.apply(&h);
            pattern.push(pre.iter().map(|&v| v > 0.0).collect());
            h = pre.iter().map(|&v| v.max(0.0)).collect();
        }
        Ok((self.output_layer().apply(&h), ActivationPattern(pattern)))
    }

    /// Network sign vector of `x` from its activation pattern.
    pub fn network_sign_vector(&self, x: &[f64]) -> Result<NetworkSignVector> {
        Ok(self.forward(x)?.1.to_sign_vector())
    }

    fn check_prefix(&self, prefix: &[SignVector], layer: usize) -> Result<()> {
        if layer == 0 || layer > self.depth() {
            return Err(Error::usage(format!("layer {layer} out of range 1..={}", self.depth())));
        }
        if prefix.len() != layer - 1 {
            return Err(Error::usage(format!(
                "layer {layer} needs a prefix of {} layers, got {}",
                layer - 1,
                prefix.len()
            )));
        }
        self.check_layers(prefix)
    }

    fn check_layers(&self, prefix: &[SignVector]) -> Result<()> {
        for (i, s) in prefix.iter().enumerate() {
            if s.len() != self.width(i + 1) || !s.is_cell() {
                return Err(Error::usage(format!(
                    "prefix layer {} must be a {{+,-}} vector of length {}",
                    i + 1,
                    self.width(i + 1)
                )));
            }
        }
        Ok(())
    }

    /// Effective affine map of layer `layer` (1-based) on the region named
    /// by `prefix` (the sign vectors of layers `1..layer`).
    pub fn effective_affine(&self, prefix: &[SignVector], layer: usize) -> Result<EffectiveAffine> {
        self.check_prefix(prefix, layer)?;
        let mut eff = EffectiveAffine::first(self);
        for (l, s) in prefix.iter().enumerate() {
            eff = eff.next(self, l + 2, s)?;
        }
        Ok(eff)
    }

    /// `𝒜^l | C(prefix)`.
    pub fn conditioned_arrangement(&self, prefix: &[SignVector], layer: usize) -> Result<Arrangement> {
        self.effective_affine(prefix, layer)?.arrangement()
    }

    /// Strict LP constraints describing the cell of a network sign vector
    /// prefix, one per non-degenerate neuron.
    pub fn cell_constraints(&self, prefix: &NetworkSignVector) -> Result<CellConstraints> {
        let k = prefix.depth();
        if k > self.depth() {
            return Err(Error::usage(format!(
                "prefix has {k} layers but the network has {}",
                self.depth()
            )));
        }
        self.check_layers(prefix.layers())?;
        let mut constraints = Vec::new();
        let mut eff = EffectiveAffine::first(self);
        for (l, signs) in prefix.layers().iter().enumerate() {
            if l > 0 {
                eff = eff.next(self, l + 1, &prefix.layers()[l - 1])?;
            }
            let arr = eff.arrangement()?;
            for (i, (h, &s)) in arr.hyperplanes().iter().zip(signs.signs()).enumerate() {
                match h.constant_sign() {
                    Some(c) if c != s => {
                        return Ok(CellConstraints::Contradiction {
                            layer: l + 1,
                            neuron: i,
                        })
                    }
                    Some(_) => {}
                    None => constraints.push(SignedConstraint::new(h.clone(), s)?),
                }
            }
        }
        Ok(CellConstraints::Constraints(constraints))
    }

    /// End-to-end affine map `x ↦ A x + c` of the network output on the
    /// region named by a full network sign vector.
    pub fn region_output_affine(&self, v: &NetworkSignVector) -> Result<(Matrix, Vec<f64>)> {
        if v.depth() != self.depth() {
            return Err(Error::usage("region affine needs a full network sign vector"));
        }
        self.check_layers(v.layers())?;
        let mut eff = EffectiveAffine::first(self);
        for l in 1..v.depth() {
            eff = eff.next(self, l + 1, &v.layers()[l - 1])?;
        }
        let out = eff.compose(self.output_layer(), v.layers().last().unwrap());
        Ok((out.weights, out.bias))
    }

    /// Random network with the given `n_0, ..., n_L, m` widths.
    pub fn random<R: Rng + ?Sized>(widths: &[usize], init: Init, rng: &mut R) -> Result<Self> {
        if widths.len() < 3 || widths.contains(&0) {
            return Err(Error::usage(
                "widths must list input, at least one hidden layer and output, all positive",
            ));
        }
        let n0 = widths[0];
        let hidden = widths.len() - 2;
        let mut layers: Vec<Layer> = Vec::with_capacity(widths.len() - 1);
        for (l, pair) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
            let data: Vec<f64> = (0..fan_in * fan_out).map(|_| normal.sample(rng)).collect();
            let weights = Matrix::new(fan_out, fan_in, data)?;
            let is_hidden = l < hidden;
            let shared_anchor: Vec<f64> = (0..n0).map(|_| rng.random_range(0.25..0.75)).collect();
            let bias: Vec<f64> = (0..fan_out)
                .map(|i| match init {
                    Init::He => Normal::new(0.0, 1e-3).unwrap().sample(rng),
                    _ if !is_hidden => Normal::new(0.0, 1e-3).unwrap().sample(rng),
                    Init::SharedAnchor if l == 0 => -dot(weights.row(i), &shared_anchor),
                    Init::Anchored | Init::SharedAnchor => {
                        // Pass neuron i's hyperplane through a random box point,
                        // avoiding points where every input to this layer is dead.
                        let mut h = Vec::new();
                        for _ in 0..100 {
                            let anchor: Vec<f64> = (0..n0).map(|_| rng.random_range(0.05..0.95)).collect();
                            h = hidden_output(&layers, &anchor);
                            if h.iter().any(|&v| v > 0.0) {
                                break;
                            }
                        }
                        -dot(weights.row(i), &h)
                    }
                })
                .collect();
            layers.push(Layer::new(weights, bias)?);
        }
        Mlp::new(layers)
    }
}

fn hidden_output(layers: &[Layer], x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for layer in layers {
        h = layer.apply(&h).into_iter().map(|v| v.max(0.0)).collect();
    }
    h
}

/// Bias initialization for [`Mlp::random`]. Weights are always
/// `N(0, 2/fan_in)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Init {
    /// Near-zero biases (`N(0, 1e-6)`): hyperplanes pass close to the origin.
    He,
    /// Each hidden neuron's boundary passes through its own random point of
    /// the unit box, so every neuron cuts the box.
    #[default]
    Anchored,
    /// As `Anchored`, but all first-layer boundaries share one interior
    /// point, which yields `2^{n_1}` first-layer cells when `n_1 <= n_0`.
    SharedAnchor,
}

impl FromStr for Init {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "he" => Ok(Init::He),
            "anchored" => Ok(Init::Anchored),
            "shared-anchor" => Ok(Init::SharedAnchor),
            other => Err(Error::usage(format!("unknown init scheme {other:?}"))),
        }
    }
}

/// Layer-`l` pre-activations as an affine function of the network input,
/// valid on one region prefix.
#[derive(Clone, Debug, PartialEq)]
pub struct EffectiveAffine {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl EffectiveAffine {
    /// `(W¹, b¹)`.
    pub fn first(mlp: &Mlp) -> Self {
        let l = &mlp.layers[0];
        EffectiveAffine {
            weights: l.weights.clone(),
            bias: l.bias.clone(),
        }
    }

    /// Effective map of layer `layer` given this map (layer `layer - 1`) and
    /// that layer's sign vector: `W^l D W*`, `W^l D b* + b^l`.
    pub fn next(&self, mlp: &Mlp, layer: usize, signs: &SignVector) -> Result<Self> {
        if layer < 2 || layer > mlp.depth() {
            return Err(Error::usage(format!("no hidden layer {layer}")));
        }
        if signs.len() != self.weights.rows() {
            return Err(Error::usage("sign vector does not match the layer width"));
        }
        Ok(self.compose(&mlp.layers[layer - 1], signs))
    }

    fn compose(&self, layer: &Layer, signs: &SignVector) -> EffectiveAffine {
        let active: Vec<usize> = signs
            .signs()
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == Sign::Pos)
            .map(|(i, _)| i)
            .collect();
        let n0 = self.weights.cols();
        let rows = layer.weights.rows();
        let mut w = Matrix::zeros(rows, n0);
        let mut b = layer.bias.clone();
        for (r, br) in b.iter_mut().enumerate() {
            let out = &mut w.data[r * n0..(r + 1) * n0];
            for &j in &active {
                let c = layer.weights.get(r, j);
                if c == 0.0 {
                    continue;
                }
                for (o, v) in out.iter_mut().zip(self.weights.row(j)) {
                    *o += c * v;
                }
                *br += c * self.bias[j];
            }
        }
        EffectiveAffine { weights: w, bias: b }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.weights.mul_vec(x);
        for (v, b) in y.iter_mut().zip(&self.bias) {
            *v += b;
        }
        y
    }

    /// Hyperplanes `w*_i · x = -b*_i`, `+` on the active side.
    pub fn arrangement(&self) -> Result<Arrangement> {
        let hs = (0..self.weights.rows())
            .map(|i| Hyperplane::from_affine(self.weights.row(i).to_vec(), self.bias[i]))
            .collect::<Result<Vec<_>>>()?;
        Arrangement::new(self.weights.cols(), hs)
    }
}

/// Result of [`Mlp::cell_constraints`].
#[derive(Clone, Debug, PartialEq)]
pub enum CellConstraints {
    Constraints(Vec<SignedConstraint>),
    /// A neuron with a constant effective pre-activation has the wrong sign
    /// in the prefix, so the prefix names no cell.
    Contradiction {
        layer: usize,
        neuron: usize,
    },
}

/// Per-layer binary activation indicators.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ActivationPattern(pub Vec<Vec<bool>>);

impl ActivationPattern {
    pub fn to_sign_vector(&self) -> NetworkSignVector {
        NetworkSignVector(
            self.0
                .iter()
                .map(|z| {
                    z.iter()
                        .map(|&a| if a { Sign::Pos } else { Sign::Neg })
                        .collect::<Vec<_>>()
                        .into()
                })
                .collect(),
        )
    }
}

/// Tuple of per-layer cell sign vectors naming one activation region (or a
/// prefix of one).
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NetworkSignVector(Vec<SignVector>);

impl NetworkSignVector {
    pub fn new(layers: Vec<SignVector>) -> Self {
        NetworkSignVector(layers)
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    pub fn layers(&self) -> &[SignVector] {
        &self.0
    }

    pub fn layer(&self, l: usize) -> &SignVector {
        &self.0[l - 1]
    }

    /// `V^{1..k}`.
    pub fn prefix(&self, k: usize) -> NetworkSignVector {
        NetworkSignVector(self.0[..k].to_vec())
    }

    pub fn extended(&self, s: SignVector) -> NetworkSignVector {
        let mut v = self.0.clone();
        v.push(s);
        NetworkSignVector(v)
    }

    /// `None` if any entry is 0.
    pub fn to_activation_pattern(&self) -> Option<ActivationPattern> {
        self.0
            .iter()
            .map(|s| {
                s.signs()
                    .iter()
                    .map(|&g| match g {
                        Sign::Pos => Some(true),
                        Sign::Neg => Some(false),
                        Sign::Zero => None,
                    })
                    .collect::<Option<Vec<_>>>()
            })
            .collect::<Option<Vec<_>>>()
            .map(ActivationPattern)
    }
}

impl fmt::Display for NetworkSignVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, s) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("|")?;
            }
            write!(f, "{s}")?;
        }
        Ok(())
    }
}

impl FromStr for NetworkSignVector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.split('|')
            .map(str::parse)
            .collect::<Result<Vec<SignVector>>>()
            .map(NetworkSignVector)
    }
}
