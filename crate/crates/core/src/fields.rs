//! Implicit appearance fields: Fourier-feature encoding followed by a ReLU
//! MLP with a sigmoid on the output layer.
//!
//! The background field maps a global point to RGB. An object field maps a
//! point in the object's local frame to RGB plus opacity.

use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{BoundParams, ParamGroup, ParamStore};
use crate::rng::gaussian;

/// Random Fourier features `[cos(2π B x), sin(2π B x)]` with a fixed
/// Gaussian matrix `B` (`n_features x d`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierMapping {
    b: Tensor,
    sigma: f64,
}

impl FourierMapping {
    pub fn sample(n_features: usize, dim: usize, sigma: f64, rng: &mut impl Rng) -> Self {
        let data = (0..n_features * dim)
            .map(|_| sigma * gaussian(rng))
            .collect();
        Self {
            b: Tensor::matrix(n_features, dim, data).expect("fourier matrix"),
            sigma,
        }
    }

    pub fn from_matrix(b: Tensor, sigma: f64) -> Result<Self> {
        if b.shape().len() != 2 {
            return Err(Error::Invalid(format!(
                "fourier matrix must be 2-D, got {:?}",
                b.shape()
            )));
        }
        Ok(Self { b, sigma })
    }

    pub fn matrix(&self) -> &Tensor {
        &self.b
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn n_features(&self) -> usize {
        self.b.shape()[0]
    }

    pub fn input_dim(&self) -> usize {
        self.b.shape()[1]
    }

    pub fn output_dim(&self) -> usize {
        2 * self.n_features()
    }

    /// `2π Bᵀ`, shape `d x n_features`.
    fn projection(&self) -> Tensor {
        let (n, d) = (self.n_features(), self.input_dim());
        let mut t = vec![0.0; n * d];
        for f in 0..n {
            for j in 0..d {
                t[j * n + f] = TAU * self.b.data()[f * d + j];
            }
        }
        Tensor::matrix(d, n, t).expect("projection")
    }

    /// Encode an `n x d` matrix of points into `n x 2·n_features`.
    pub fn encode<'t>(&self, x: Var<'t>) -> Result<Var<'t>> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.input_dim() {
            return Err(Error::Invalid(format!(
                "fourier input must be n x {}, got {:?}",
                self.input_dim(),
                shape
            )));
        }
        let proj = x.tape().constant(self.projection());
        Ok(x.matmul(proj)?.cos_sin()?)
    }

    /// Encode plain points; same kernels as [`encode`](Self::encode).
    pub fn encode_points(&self, points: &[[f64; 2]]) -> Result<Tensor> {
        let tape = Tape::inference();
        let flat = points.iter().flat_map(|p| p.iter().copied()).collect();
        let x = tape.constant(Tensor::matrix(points.len(), 2, flat)?);
        Ok(self.encode(x)?.value())
    }
}

/// Fully connected ReLU network with a sigmoid on the final layer.
///
/// Parameters live in a [`ParamStore`] under `{prefix}.{layer}.weight`
/// (`in x out`) and `{prefix}.{layer}.bias`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    prefix: String,
    sizes: Vec<usize>,
}

impl Mlp {
    /// `n_layers` linear layers: `n_layers - 1` hidden layers of `width`
    /// followed by the output layer. Weights and biases are drawn from
    /// `U(-1/√fan_in, 1/√fan_in)`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        width: usize,
        n_layers: usize,
        output: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if n_layers == 0 || width == 0 {
            return Err(Error::Config(format!(
                "an MLP needs at least one layer and positive width (got {n_layers} x {width})"
            )));
        }
        let mut sizes = vec![input];
        sizes.extend(std::iter::repeat(width).take(n_layers - 1));
        sizes.push(output);
        let mlp = Self {
            prefix: prefix.to_string(),
            sizes,
        };
        for l in 0..n_layers {
            let (fan_in, fan_out) = (mlp.sizes[l], mlp.sizes[l + 1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-bound..=bound))
                .collect();
            let b = (0..fan_out).map(|_| rng.gen_range(-bound..=bound)).collect();
            store.insert(
                mlp.weight_name(l),
                ParamGroup::Mlp,
                Tensor::matrix(fan_in, fan_out, w)?,
            );
            store.insert(mlp.bias_name(l), ParamGroup::Mlp, Tensor::vector(b));
        }
        Ok(mlp)
    }

    pub fn weight_name(&self, layer: usize) -> String {
        format!("{}.{}.weight", self.prefix, layer)
    }

    pub fn bias_name(&self, layer: usize) -> String {
        format!("{}.{}.bias", self.prefix, layer)
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn layer_count(&self) -> usize {
        self.sizes.len() - 1
    }

    /// Layer sizes including input and output.
    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("sizes")
    }

    pub fn forward<'t>(&self, params: &BoundParams<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let mut h = x;
        let last = self.layer_count() - 1;
        for l in 0..=last {
            let w = params.get(&self.weight_name(l))?;
            let b = params.get(&self.bias_name(l))?;
            h = h.matmul(w)?.add_row(b)?;
            h = if l == last { h.sigmoid() } else { h.relu() };
        }
        Ok(h)
    }
}

/// Field sizes shared by the background and object representations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    pub n_fourier: usize,
    pub sigma: f64,
    pub n_layers: usize,
    pub width: usize,
}

/// Static background color `c_bg(x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackgroundField {
    pub mapping: FourierMapping,
    pub net: Mlp,
}

impl BackgroundField {
    pub fn new(store: &mut ParamStore, prefix: &str, spec: &FieldSpec, rng: &mut impl Rng) -> Result<Self> {
        let mapping = FourierMapping::sample(spec.n_fourier, 2, spec.sigma, rng);
        let net = Mlp::new(store, prefix, mapping.output_dim(), spec.width, spec.n_layers, 3, rng)?;
        Ok(Self { mapping, net })
    }

    /// RGB (`n x 3`) at global points (`n x 2`).
    pub fn eval<'t>(&self, params: &BoundParams<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let features = self.mapping.encode(x)?;
        self.eval_features(params, features)
    }

    /// RGB from already encoded points; lets callers cache the encoding of a
    /// fixed pixel grid.
    pub fn eval_features<'t>(&self, params: &BoundParams<'t>, features: Var<'t>) -> Result<Var<'t>> {
        self.net.forward(params, features)
    }
}

/// Object color and opacity `(c_obj, o) = G(γ(x'))` in local coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectField {
    pub mapping: FourierMapping,
    pub net: Mlp,
}

/// Object field output split into color and opacity.
#[derive(Clone, Copy, Debug)]
pub struct ObjectSample<'t> {
    /// `n x 3`
    pub rgb: Var<'t>,
    /// `n x 1`
    pub opacity: Var<'t>,
}

impl ObjectField {
    pub fn new(store: &mut ParamStore, prefix: &str, spec: &FieldSpec, rng: &mut impl Rng) -> Result<Self> {
        let mapping = FourierMapping::sample(spec.n_fourier, 2, spec.sigma, rng);
        let net = Mlp::new(store, prefix, mapping.output_dim(), spec.width, spec.n_layers, 4, rng)?;
        Ok(Self { mapping, net })
    }

    pub fn eval<'t>(&self, params: &BoundParams<'t>, x_local: Var<'t>) -> Result<ObjectSample<'t>> {
        let out = self.net.forward(params, self.mapping.encode(x_local)?)?;
        Ok(ObjectSample {
            rgb: out.slice(1, 0, 3)?,
            opacity: out.slice(1, 3, 4)?,
        })
    }
}
