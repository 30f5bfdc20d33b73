//! Frozen random hidden layers with unsupervised tweaking.
//!
//! Each hidden layer is a set of node blocks. A block holds random weights
//! `W` (input width × block size) and bias `b`, drawn once from `U[-1, 1]` and
//! never written again. Presenting a batch to a layer first computes the
//! drifted block outputs `σ(Ṽ W + 1b)`, then fits, per block, a sparse map
//! from the drifted output back to the layer input. The transposed map
//! becomes the block's effective weights for that batch, giving the tweaked
//! representation passed to the next layer.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result, ResultExt};
use crate::sparse_solver::{self, GainScaling, L1LsProblem, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Closed range of values the activation can produce in `f64`.
    pub fn range(self) -> (f64, f64) {
        match self {
            Activation::Tanh => (-1.0, 1.0),
            Activation::Sigmoid => (0.0, 1.0),
        }
    }

    fn code(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Sigmoid => 1,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Activation::Tanh),
            1 => Ok(Activation::Sigmoid),
            _ => Err(Error::Format(format!("unknown activation code {c}"))),
        }
    }
}

/// How the fitted bias row enters the tweaked forward pass.
///
/// The reconstruction fits `Ṽ_drift W̃ + 1b̃ ≈ Ṽ`, so `b̃` lives in the input
/// space of the layer. `Center` subtracts it from the input before applying
/// `W̃ᵀ`, i.e. `σ((Ṽ − 1b̃) W̃ᵀ)`; `Omit` drops it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TweakBias {
    #[default]
    Center,
    Omit,
}

impl TweakBias {
    fn code(self) -> u8 {
        match self {
            TweakBias::Center => 0,
            TweakBias::Omit => 1,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(TweakBias::Center),
            1 => Ok(TweakBias::Omit),
            _ => Err(Error::Format(format!("unknown tweak bias code {c}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerConfig {
    pub n_blocks: usize,
    pub block_size: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl LayerConfig {
    pub fn new(n_blocks: usize, block_size: usize) -> Self {
        Self {
            n_blocks,
            block_size,
            activation: Activation::Tanh,
        }
    }

    pub fn width(&self) -> usize {
        self.n_blocks * self.block_size
    }
}

/// One group of hidden units sharing a random weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeBlock {
    w: Array2<f64>,
    b: Array1<f64>,
}

impl NodeBlock {
    fn sample(rng: &mut ChaCha8Rng, input_dim: usize, size: usize) -> Self {
        let w = Array2::from_shape_simple_fn((input_dim, size), || rng.random_range(-1.0..=1.0));
        let b = Array1::from_shape_simple_fn(size, || rng.random_range(-1.0..=1.0));
        Self { w, b }
    }

    /// Random weights, `input width × block size`.
    pub fn weights(&self) -> ArrayView2<'_, f64> {
        self.w.view()
    }

    pub fn bias(&self) -> &Array1<f64> {
        &self.b
    }

    pub fn size(&self) -> usize {
        self.b.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    config: LayerConfig,
    input_dim: usize,
    blocks: Vec<NodeBlock>,
}

impl Layer {
    pub fn config(&self) -> &LayerConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn blocks(&self) -> &[NodeBlock] {
        &self.blocks
    }
}

/// Activations of one layer for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Representation {
    values: Array2<f64>,
    layer_index: usize,
    tweaked: bool,
}

impl Representation {
    /// Raw input batch, the layer-0 representation.
    pub fn input(x: Array2<f64>) -> Result<Self> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("input batch has non-finite entries".into()));
        }
        Ok(Self {
            values: x,
            layer_index: 0,
            tweaked: true,
        })
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn layer_index(&self) -> usize {
        self.layer_index
    }

    pub fn is_tweaked(&self) -> bool {
        self.tweaked
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn width(&self) -> usize {
        self.values.ncols()
    }
}

/// The frozen hidden stack.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomLayerStack {
    layers: Vec<Layer>,
    input_dim: usize,
    weight_seed: u64,
    solver: SolverConfig,
    tweak_bias: TweakBias,
}

/// Samples a stack with the default solver settings.
pub fn init_stack(configs: &[LayerConfig], input_dim: usize, weight_seed: u64) -> Result<RandomLayerStack> {
    RandomLayerStack::new(configs, input_dim, weight_seed, SolverConfig::default(), TweakBias::default())
}

impl RandomLayerStack {
    pub fn new(
        configs: &[LayerConfig],
        input_dim: usize,
        weight_seed: u64,
        solver: SolverConfig,
        tweak_bias: TweakBias,
    ) -> Result<Self> {
        if configs.is_empty() {
            return Err(Error::Argument("stack needs at least one layer".into()));
        }
        if input_dim == 0 {
            return Err(Error::Argument("input dimension must be positive".into()));
        }
        solver.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(weight_seed);
        let mut layers = Vec::with_capacity(configs.len());
        let mut width = input_dim;
        for (l, cfg) in configs.iter().enumerate() {
            if cfg.n_blocks == 0 || cfg.block_size == 0 {
                return Err(Error::Argument(format!(
                    "layer {l} has zero width ({} blocks of {})",
                    cfg.n_blocks, cfg.block_size
                )));
            }
            let blocks = (0..cfg.n_blocks)
                .map(|_| NodeBlock::sample(&mut rng, width, cfg.block_size))
                .collect();
            layers.push(Layer {
                config: *cfg,
                input_dim: width,
                blocks,
            });
            width = cfg.width();
        }
        Ok(Self {
            layers,
            input_dim,
            weight_seed,
            solver,
            tweak_bias,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, |l| l.config.width())
    }

    pub fn weight_seed(&self) -> u64 {
        self.weight_seed
    }

    pub fn solver(&self) -> &SolverConfig {
        &self.solver
    }

    pub fn tweak_bias(&self) -> TweakBias {
        self.tweak_bias
    }

    pub fn configs(&self) -> Vec<LayerConfig> {
        self.layers.iter().map(|l| l.config).collect()
    }

    fn layer(&self, layer: usize) -> Result<&Layer> {
        self.layers
            .get(layer)
            .ok_or_else(|| Error::Argument(format!("layer {layer} out of range (stack has {})", self.layers.len())))
    }

    /// Drifted outputs `σ(Ṽ W_j + 1b_j)` of every block of `layer`.
    pub fn forward_drift(&self, prev: &Representation, layer: usize) -> Result<Vec<Representation>> {
        let lay = self.layer(layer)?;
        if prev.width() != lay.input_dim {
            return Err(Error::Argument(format!(
                "layer {layer} expects width {}, got {}",
                lay.input_dim,
                prev.width()
            )));
        }
        let act = lay.config.activation;
        Ok(lay
            .blocks
            .iter()
            .map(|blk| {
                let mut v = prev.values.dot(&blk.w);
                v += &blk.b;
                v.mapv_inplace(|z| act.apply(z));
                Representation {
                    values: v,
                    layer_index: layer + 1,
                    tweaked: false,
                }
            })
            .collect())
    }

    /// Fits each block's reconstruction of `prev` and returns the tweaked
    /// layer output, blocks concatenated in order.
    pub fn tweak(&self, prev: &Representation, drifted: &[Representation], layer: usize) -> Result<Representation> {
        let lay = self.layer(layer)?;
        if drifted.len() != lay.blocks.len() {
            return Err(Error::Argument(format!(
                "layer {layer} has {} blocks, got {} drifted outputs",
                lay.blocks.len(),
                drifted.len()
            )));
        }
        let act = lay.config.activation;
        let mut parts = Vec::with_capacity(drifted.len());
        for (j, d) in drifted.iter().enumerate() {
            if d.rows() != prev.rows() || d.width() != lay.config.block_size {
                return Err(Error::Argument(format!(
                    "layer {layer} block {j}: drifted output is {}x{}, expected {}x{}",
                    d.rows(),
                    d.width(),
                    prev.rows(),
                    lay.config.block_size
                )));
            }
            let (w_t, b_t) = fit_reconstruction(prev.values.view(), d.values.view(), &self.solver)
                .context(|| format!("tweaking layer {layer} block {j}"))?;
            let mut out = match self.tweak_bias {
                TweakBias::Center => (&prev.values - &b_t).dot(&w_t.t()),
                TweakBias::Omit => prev.values.dot(&w_t.t()),
            };
            out.mapv_inplace(|z| act.apply(z));
            parts.push(out);
        }
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        let values = concatenate(Axis(1), &views).map_err(|e| Error::Argument(e.to_string()))?;
        Ok(Representation {
            values,
            layer_index: layer + 1,
            tweaked: true,
        })
    }

    /// Runs every layer on `x` and returns the final tweaked representation.
    pub fn represent(&self, x: ArrayView2<'_, f64>) -> Result<Representation> {
        if x.ncols() != self.input_dim {
            return Err(Error::Argument(format!(
                "stack expects {} input columns, got {}",
                self.input_dim,
                x.ncols()
            )));
        }
        let mut cur = Representation::input(x.to_owned())?;
        for l in 0..self.layers.len() {
            let drifted = self.forward_drift(&cur, l)?;
            cur = self.tweak(&cur, &drifted, l)?;
        }
        Ok(cur)
    }

    /// [`Self::represent`] applied to consecutive row chunks of `x`, each
    /// tweaked on its own; `chunk == 0` presents `x` whole.
    pub fn represent_chunked(&self, x: ArrayView2<'_, f64>, chunk: usize) -> Result<Array2<f64>> {
        if chunk == 0 || chunk >= x.nrows() {
            return Ok(self.represent(x)?.into_values());
        }
        let mut parts = Vec::new();
        for start in (0..x.nrows()).step_by(chunk) {
            let end = (start + chunk).min(x.nrows());
            parts.push(self.represent(x.slice(s![start..end, ..]))?.into_values());
        }
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        concatenate(Axis(0), &views).map_err(|e| Error::Argument(e.to_string()))
    }

    fn weight_values(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.blocks.iter())
            .flat_map(|b| b.w.iter().chain(b.b.iter()))
    }

    /// SHA-256 over all random weights and biases in sampling order.
    pub fn weights_digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for v in self.weight_values() {
            h.update(v.to_le_bytes());
        }
        h.finalize().into()
    }

    /// Serializes seed and configuration, plus the raw weights when
    /// `embed_weights` is set.
    pub fn to_bytes(&self, embed_weights: bool) -> Vec<u8> {
        let mut w = Writer::new(STACK_MAGIC, STACK_VERSION);
        w.u64(self.weight_seed);
        w.usize(self.input_dim);
        w.u32(self.layers.len() as u32);
        for l in &self.layers {
            w.usize(l.config.n_blocks);
            w.usize(l.config.block_size);
            w.u8(l.config.activation.code());
        }
        w.f64(self.solver.lambda);
        w.f64(self.solver.gamma);
        w.usize(self.solver.max_iters);
        w.f64(self.solver.tol);
        w.u8(match self.solver.gain_scaling {
            GainScaling::Raw => 0,
            GainScaling::Spectral => 1,
        });
        w.f64(self.solver.divergence_ceiling);
        w.u8(self.tweak_bias.code());
        w.u8(embed_weights as u8);
        if embed_weights {
            w.f64s(self.weight_values());
        }
        w.finish()
    }

    /// Rebuilds a stack from [`Self::to_bytes`] output. Embedded weights must
    /// match the ones regenerated from the seed bit for bit.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (mut r, version) = Reader::open(bytes, STACK_MAGIC, "stack")?;
        if version != STACK_VERSION {
            return Err(Error::Format(format!("unsupported stack version {version}")));
        }
        let seed = r.u64()?;
        let input_dim = r.usize()?;
        let n_layers = r.u32()? as usize;
        let mut configs = Vec::with_capacity(n_layers.min(1024));
        for _ in 0..n_layers {
            let n_blocks = r.usize()?;
            let block_size = r.usize()?;
            let activation = Activation::from_code(r.u8()?)?;
            configs.push(LayerConfig {
                n_blocks,
                block_size,
                activation,
            });
        }
        let lambda = r.f64()?;
        let gamma = r.f64()?;
        let max_iters = r.usize()?;
        let tol = r.f64()?;
        let gain_scaling = match r.u8()? {
            0 => GainScaling::Raw,
            1 => GainScaling::Spectral,
            c => return Err(Error::Format(format!("unknown gain scaling code {c}"))),
        };
        let divergence_ceiling = r.f64()?;
        let tweak_bias = TweakBias::from_code(r.u8()?)?;
        let embedded = r.u8()? != 0;
        let solver = SolverConfig {
            lambda,
            gamma,
            max_iters,
            tol,
            gain_scaling,
            divergence_ceiling,
        };
        let stack = Self::new(&configs, input_dim, seed, solver, tweak_bias)?;
        if embedded {
            let count = stack.weight_values().count();
            let stored = r.f64s(count)?;
            let same = stack
                .weight_values()
                .zip(&stored)
                .all(|(a, b)| a.to_bits() == b.to_bits());
            if !same {
                return Err(Error::Consistency(
                    "embedded weights differ from the ones generated by the seed".into(),
                ));
            }
        }
        r.finish()?;
        Ok(stack)
    }
}

const STACK_MAGIC: &[u8; 4] = b"IF2S";
const STACK_VERSION: u32 = 1;

/// Solves `min ½‖[V_d 1][W̃; b̃] − Ṽ‖² + λ‖[W̃; b̃]‖₁` for one block and
/// returns `W̃` (block size × input width) and `b̃` (input width).
pub fn fit_reconstruction(
    prev: ArrayView2<'_, f64>,
    drifted: ArrayView2<'_, f64>,
    solver: &SolverConfig,
) -> Result<(Array2<f64>, Array1<f64>)> {
    let n = drifted.nrows();
    let s = drifted.ncols();
    let mut z = Array2::<f64>::ones((n, s + 1));
    z.slice_mut(s![.., ..s]).assign(&drifted);
    let problem = L1LsProblem::new(z.view(), prev, solver.lambda, solver.gamma)?;
    let state = sparse_solver::solve_with(&problem, solver)?;
    let w = state.x.slice(s![..s, ..]).to_owned();
    let b = state.x.row(s).to_owned();
    Ok((w, b))
}
