use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};

/// Affine map `x W + b` with `W: in x out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Uniform `(-1/sqrt(in), 1/sqrt(in))` initialization for weights and bias.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        Self::with_scale(store, name, in_dim, out_dim, 1.0, rng)
    }

    /// Like [`Linear::new`] with the init range multiplied by `scale`.
    pub fn with_scale<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        let bound = scale / (in_dim as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("valid init bound");
        let w = Array2::from_shape_fn((in_dim, out_dim), |_| dist.sample(rng));
        let b = Array2::from_shape_fn((1, out_dim), |_| dist.sample(rng));
        Self {
            weight: store.add(format!("{name}.weight"), w),
            bias: store.add(format!("{name}.bias"), b),
            in_dim,
            out_dim,
        }
    }

    /// Re-binds to parameters already present in `store` under `name`.
    pub fn bind(store: &ParamStore, name: &str) -> Option<Self> {
        let weight = store.id(&format!("{name}.weight"))?;
        let bias = store.id(&format!("{name}.bias"))?;
        let (in_dim, out_dim) = store.get(weight).dim();
        Some(Self { weight, bias, in_dim, out_dim })
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Var<'t> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        x.matmul(w).add_row(b)
    }

    pub fn num_params(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Silu,
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply<'t>(self, x: Var<'t>) -> Var<'t> {
        match self {
            Activation::Silu => x.silu(),
            Activation::Relu => x.relu(),
            Activation::Tanh => x.tanh(),
        }
    }
}

/// Plain multilayer perceptron; the activation is applied between layers but
/// not after the last one.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    /// `dims` lists every width, input first and output last.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dims: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least input and output widths");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Self { layers, activation }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("nonempty").out_dim
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Var<'t> {
        let n = self.layers.len();
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, store, h);
            if i + 1 < n {
                h = self.activation.apply(h);
            }
        }
        h
    }

    /// Activations feeding the final layer.
    pub fn penultimate<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Var<'t> {
        let mut h = x;
        for layer in &self.layers[..self.layers.len() - 1] {
            h = self.activation.apply(layer.forward(tape, store, h));
        }
        h
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Linear::num_params).sum()
    }
}

/// Sinusoidal features of scalar times in `[0, 1]`; `dim` must be even.
///
/// Row `i` is `[sin(1000 t_i f_k), cos(1000 t_i f_k)]` over `dim / 2`
/// geometrically spaced frequencies `f_k` from 1 down to 1e-4.
pub fn sinusoidal_embedding(times: &[f64], dim: usize) -> Array2<f64> {
    assert!(dim >= 2 && dim.is_multiple_of(2), "embedding width must be even");
    let half = dim / 2;
    let freqs: Vec<f64> = (0..half)
        .map(|k| (-(10_000f64).ln() * k as f64 / half.max(2).saturating_sub(1).max(1) as f64).exp())
        .collect();
    Array2::from_shape_fn((times.len(), dim), |(r, c)| {
        let arg = 1000.0 * times[r] * freqs[c % half];
        if c < half {
            arg.sin()
        } else {
            arg.cos()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mlp_shapes_and_param_count() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp = Mlp::new(&mut store, "m", &[4, 8, 3], Activation::Silu, &mut rng);
        assert_eq!(mlp.num_params(), 4 * 8 + 8 + 8 * 3 + 3);
        assert_eq!(store.num_scalars(), mlp.num_params());
        let tape = Tape::new();
        let x = tape.constant(Array2::ones((5, 4)));
        assert_eq!(mlp.forward(&tape, &store, x).shape(), (5, 3));
        assert_eq!(mlp.penultimate(&tape, &store, x).shape(), (5, 8));
    }

    #[test]
    fn rebinding_finds_the_same_ids() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lin = Linear::new(&mut store, "enc.0", 3, 2, &mut rng);
        let again = Linear::bind(&store, "enc.0").unwrap();
        assert_eq!(lin.weight, again.weight);
        assert_eq!((again.in_dim, again.out_dim), (3, 2));
    }

    #[test]
    fn embedding_is_bounded_and_time_sensitive() {
        let e = sinusoidal_embedding(&[0.0, 0.5, 1.0], 16);
        assert_eq!(e.dim(), (3, 16));
        assert!(e.iter().all(|v| v.abs() <= 1.0));
        assert_eq!(e[[0, 0]], 0.0);
        assert_eq!(e[[0, 8]], 1.0);
        assert!((&e.row(1) - &e.row(2)).iter().any(|d| d.abs() > 1e-3));
    }
}
