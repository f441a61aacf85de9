//! Toy-scale embedding networks built from residual or depthwise-separable
//! blocks.
//!
//! Both families share the same outer shape: an affine stem from the flat
//! input to the hidden representation, a stack of blocks, and an affine head
//! producing the `embed_dim` embedding. The depthwise-separable family
//! reshapes the stem output into a `width × grid_side × grid_side` feature map
//! and applies a rectifier after every block.
//!
//! All parameters live in one flat array. Layout, in order:
//!
//! | segment | residual | depthwise-separable |
//! |---|---|---|
//! | stem weights, biases | `width × input`, `width` | `width·S² × input`, `width·S²` |
//! | per block | `W1, b1, W2, b2` | depthwise `width·k²`, pointwise `width²` |
//! | head weights, biases | `embed × width`, `embed` | `embed × width·S²`, `embed` |

mod blocks;
mod checkpoint;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Mat;

pub use blocks::{conv_output_size, DepthwiseSeparableBlock, Grid, ResidualBlock};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};

use blocks::{affine, affine_backward, relu, DwsView, ResidualView};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BackboneKind {
    Residual,
    DepthwiseSeparable,
}

impl BackboneKind {
    pub const ALL: [BackboneKind; 2] = [BackboneKind::Residual, BackboneKind::DepthwiseSeparable];

    pub fn label(self) -> &'static str {
        match self {
            BackboneKind::Residual => "Residual",
            BackboneKind::DepthwiseSeparable => "DWSep",
        }
    }

    fn code(self) -> u8 {
        match self {
            BackboneKind::Residual => 1,
            BackboneKind::DepthwiseSeparable => 2,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(BackboneKind::Residual),
            2 => Some(BackboneKind::DepthwiseSeparable),
            _ => None,
        }
    }
}

impl fmt::Display for BackboneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for BackboneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "residual" | "resnet" | "res" => Ok(BackboneKind::Residual),
            "dws" | "dwsep" | "depthwise" | "depthwiseseparable" | "depthwise-separable" | "mobilenet" => {
                Ok(BackboneKind::DepthwiseSeparable)
            }
            other => Err(Error::InvalidConfig(format!("unknown backbone `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub kind: BackboneKind,
    pub input_dim: usize,
    /// Hidden units (residual) or channels (depthwise-separable).
    pub width: usize,
    pub blocks: usize,
    pub embed_dim: usize,
    /// Spatial side of the depthwise-separable feature map.
    pub grid_side: usize,
    /// Odd depthwise kernel size; padding is `kernel / 2`.
    pub kernel: usize,
}

impl NetworkConfig {
    pub fn new(kind: BackboneKind, input_dim: usize) -> Self {
        let width = match kind {
            BackboneKind::Residual => 32,
            BackboneKind::DepthwiseSeparable => 16,
        };
        NetworkConfig {
            kind,
            input_dim,
            width,
            blocks: 2,
            embed_dim: 16,
            grid_side: 4,
            kernel: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("input_dim", self.input_dim),
            ("width", self.width),
            ("embed_dim", self.embed_dim),
            ("grid_side", self.grid_side),
            ("kernel", self.kernel),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!("kernel {} must be odd", self.kernel)));
        }
        Ok(())
    }

    /// Width of the flat hidden representation fed to the head.
    fn hidden_len(&self) -> usize {
        match self.kind {
            BackboneKind::Residual => self.width,
            BackboneKind::DepthwiseSeparable => self.width * self.grid_side * self.grid_side,
        }
    }

    fn block_len(&self) -> usize {
        match self.kind {
            BackboneKind::Residual => ResidualView::param_count(self.width),
            BackboneKind::DepthwiseSeparable => {
                DepthwiseSeparableBlock::count_for(self.width, self.width, self.kernel)
            }
        }
    }

    fn layout(&self) -> Layout {
        let h = self.hidden_len();
        let stem_w = 0;
        let stem_b = stem_w + h * self.input_dim;
        let blocks = stem_b + h;
        let head_w = blocks + self.blocks * self.block_len();
        let head_b = head_w + self.embed_dim * h;
        Layout {
            stem_w,
            stem_b,
            blocks,
            head_w,
            head_b,
            total: head_b + self.embed_dim,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }
}

#[derive(Clone, Copy, Debug)]
struct Layout {
    stem_w: usize,
    stem_b: usize,
    blocks: usize,
    head_w: usize,
    head_b: usize,
    total: usize,
}

/// Activations of one forward pass, retained for [`EmbeddingNetwork::backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    inputs: Mat,
    samples: Vec<SampleCache>,
}

#[derive(Clone, Debug)]
struct SampleCache {
    /// Hidden state entering each block, then the final hidden state.
    states: Vec<Vec<f64>>,
    /// Residual: pre-activations of each block. Depthwise-separable: the
    /// depthwise output followed by the pointwise output of each block.
    inner: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingNetwork {
    config: NetworkConfig,
    params: Vec<f64>,
}

fn xavier(rng: &mut ChaCha8Rng, out: &mut [f64], fan_in: usize, fan_out: usize) {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in out {
        *v = rng.random_range(-a..=a);
    }
}

/// Build a network with Xavier-uniform weights and zero biases.
/// Identical `(config, seed)` give bit-identical parameters.
pub fn init_network(config: NetworkConfig, seed: u64) -> Result<EmbeddingNetwork> {
    config.validate()?;
    let lay = config.layout();
    let mut params = vec![0.0; lay.total];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = config.hidden_len();

    xavier(&mut rng, &mut params[lay.stem_w..lay.stem_b], config.input_dim, h);
    let bl = config.block_len();
    for b in 0..config.blocks {
        let p = &mut params[lay.blocks + b * bl..lay.blocks + (b + 1) * bl];
        match config.kind {
            BackboneKind::Residual => {
                let (w, ww) = (config.width, config.width * config.width);
                xavier(&mut rng, &mut p[..ww], w, w);
                xavier(&mut rng, &mut p[ww + w..2 * ww + w], w, w);
            }
            BackboneKind::DepthwiseSeparable => {
                let kk = config.kernel * config.kernel;
                let (dw, pw) = p.split_at_mut(config.width * kk);
                xavier(&mut rng, dw, kk, kk);
                xavier(&mut rng, pw, config.width, config.width);
            }
        }
    }
    xavier(&mut rng, &mut params[lay.head_w..lay.head_b], h, config.embed_dim);
    Ok(EmbeddingNetwork { config, params })
}

impl EmbeddingNetwork {
    pub fn from_params(config: NetworkConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if params.len() != config.param_count() {
            return Err(Error::mismatch("network parameters", config.param_count(), params.len()));
        }
        Ok(EmbeddingNetwork { config, params })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    fn block_slice(&self, b: usize) -> &[f64] {
        let lay = self.config.layout();
        let bl = self.config.block_len();
        &self.params[lay.blocks + b * bl..lay.blocks + (b + 1) * bl]
    }

    fn dws_view<'a>(&self, p: &'a [f64]) -> DwsView<'a> {
        let c = self.config.width;
        let kk = self.config.kernel * self.config.kernel;
        DwsView {
            in_ch: c,
            out_ch: c,
            kernel: self.config.kernel,
            padding: self.config.kernel / 2,
            depthwise: &p[..c * kk],
            pointwise: &p[c * kk..],
        }
    }

    /// Materialise residual block `b` as an owning value.
    pub fn residual_block(&self, b: usize) -> Option<ResidualBlock> {
        if self.config.kind != BackboneKind::Residual || b >= self.config.blocks {
            return None;
        }
        let v = ResidualView::from_slice(self.config.width, self.block_slice(b));
        Some(ResidualBlock {
            width: v.width,
            w1: v.w1.to_vec(),
            b1: v.b1.to_vec(),
            w2: v.w2.to_vec(),
            b2: v.b2.to_vec(),
        })
    }

    /// Materialise depthwise-separable block `b` as an owning value.
    pub fn dws_block(&self, b: usize) -> Option<DepthwiseSeparableBlock> {
        if self.config.kind != BackboneKind::DepthwiseSeparable || b >= self.config.blocks {
            return None;
        }
        let v = self.dws_view(self.block_slice(b));
        Some(DepthwiseSeparableBlock {
            in_ch: v.in_ch,
            out_ch: v.out_ch,
            kernel: v.kernel,
            padding: v.padding,
            depthwise: v.depthwise.to_vec(),
            pointwise: v.pointwise.to_vec(),
        })
    }

    fn forward_sample(&self, x: &[f64]) -> (Vec<f64>, SampleCache) {
        let cfg = &self.config;
        let lay = cfg.layout();
        let h = cfg.hidden_len();
        let mut state = vec![0.0; h];
        affine(
            &self.params[lay.stem_w..lay.stem_b],
            &self.params[lay.stem_b..lay.blocks],
            x,
            &mut state,
        );
        let mut cache = SampleCache {
            states: Vec::with_capacity(cfg.blocks + 1),
            inner: Vec::with_capacity(2 * cfg.blocks),
        };
        for b in 0..cfg.blocks {
            let p = self.block_slice(b);
            let next = match cfg.kind {
                BackboneKind::Residual => {
                    let (pre, out) = ResidualView::from_slice(cfg.width, p).forward(&state);
                    cache.inner.push(pre);
                    out
                }
                BackboneKind::DepthwiseSeparable => {
                    let s = cfg.grid_side;
                    let v = self.dws_view(p);
                    let grid = Grid {
                        channels: cfg.width,
                        height: s,
                        width: s,
                        data: state.clone(),
                    };
                    let d = v.depthwise_forward(&grid);
                    let pw = v.pointwise_forward(&d);
                    let out = pw.data.iter().map(|&z| relu(z)).collect();
                    cache.inner.push(d.data);
                    cache.inner.push(pw.data);
                    out
                }
            };
            cache.states.push(std::mem::replace(&mut state, next));
        }
        let mut emb = vec![0.0; cfg.embed_dim];
        affine(
            &self.params[lay.head_w..lay.head_b],
            &self.params[lay.head_b..lay.total],
            &state,
            &mut emb,
        );
        cache.states.push(state);
        (emb, cache)
    }

    fn check_inputs(&self, inputs: &Mat) -> Result<()> {
        if inputs.cols() != self.config.input_dim {
            return Err(Error::mismatch("network input dim", self.config.input_dim, inputs.cols()));
        }
        Ok(())
    }

    /// `N × embed_dim` embeddings of the input rows.
    pub fn embed(&self, inputs: &Mat) -> Result<Mat> {
        self.check_inputs(inputs)?;
        let mut out = Mat::zeros(inputs.rows(), self.config.embed_dim);
        for i in 0..inputs.rows() {
            let (e, _) = self.forward_sample(inputs.row(i));
            out.row_mut(i).copy_from_slice(&e);
        }
        Ok(out)
    }

    pub fn embed_with_cache(&self, inputs: &Mat) -> Result<(Mat, ForwardCache)> {
        self.check_inputs(inputs)?;
        let mut out = Mat::zeros(inputs.rows(), self.config.embed_dim);
        let mut samples = Vec::with_capacity(inputs.rows());
        for i in 0..inputs.rows() {
            let (e, c) = self.forward_sample(inputs.row(i));
            out.row_mut(i).copy_from_slice(&e);
            samples.push(c);
        }
        Ok((
            out,
            ForwardCache {
                inputs: inputs.clone(),
                samples,
            },
        ))
    }

    /// Parameter gradient (flat, in layout order) for upstream embedding
    /// gradients `grad_features` (`N × embed_dim`), summed over the batch.
    pub fn backward(&self, cache: &ForwardCache, grad_features: &Mat) -> Result<Vec<f64>> {
        let cfg = &self.config;
        if grad_features.rows() != cache.samples.len() {
            return Err(Error::mismatch("upstream gradient rows", cache.samples.len(), grad_features.rows()));
        }
        if grad_features.cols() != cfg.embed_dim {
            return Err(Error::mismatch("upstream gradient cols", cfg.embed_dim, grad_features.cols()));
        }
        let lay = cfg.layout();
        let bl = cfg.block_len();
        let h = cfg.hidden_len();
        let mut grad = vec![0.0; lay.total];

        for (i, sc) in cache.samples.iter().enumerate() {
            let g_out = grad_features.row(i);
            if g_out.iter().all(|&g| g == 0.0) {
                continue;
            }
            let mut d_state = vec![0.0; h];
            {
                let (head_w, head_b) = grad[lay.head_w..lay.total].split_at_mut(h * cfg.embed_dim);
                affine_backward(
                    &self.params[lay.head_w..lay.head_b],
                    &sc.states[cfg.blocks],
                    g_out,
                    head_w,
                    head_b,
                    Some(&mut d_state),
                );
            }
            for b in (0..cfg.blocks).rev() {
                let p = self.block_slice(b);
                let g_block = &mut grad[lay.blocks + b * bl..lay.blocks + (b + 1) * bl];
                let x = &sc.states[b];
                d_state = match cfg.kind {
                    BackboneKind::Residual => ResidualView::from_slice(cfg.width, p).backward(
                        x,
                        &sc.inner[b],
                        &d_state,
                        g_block,
                    ),
                    BackboneKind::DepthwiseSeparable => {
                        let s = cfg.grid_side;
                        let c = cfg.width;
                        let pw_out = &sc.inner[2 * b + 1];
                        let d_pw: Vec<f64> = d_state
                            .iter()
                            .zip(pw_out)
                            .map(|(&g, &z)| if z > 0.0 { g } else { 0.0 })
                            .collect();
                        let grid = |data: &[f64]| Grid {
                            channels: c,
                            height: s,
                            width: s,
                            data: data.to_vec(),
                        };
                        self.dws_view(p)
                            .backward(&grid(x), &grid(&sc.inner[2 * b]), &grid(&d_pw), g_block)
                            .data
                    }
                };
            }
            let (stem_w, stem_b) = grad[lay.stem_w..lay.blocks].split_at_mut(h * cfg.input_dim);
            affine_backward(
                &self.params[lay.stem_w..lay.stem_b],
                cache.inputs.row(i),
                &d_state,
                stem_w,
                stem_b,
                None,
            );
        }
        Ok(grad)
    }

    /// Forward then backward in one call.
    pub fn network_backward(&self, inputs: &Mat, grad_features: &Mat) -> Result<Vec<f64>> {
        let (_, cache) = self.embed_with_cache(inputs)?;
        self.backward(&cache, grad_features)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::{evaluate_loss, ClassifierParams, LossKind, LossSpec};
    use crate::tensor::FeatureBatch;

    fn small(kind: BackboneKind) -> NetworkConfig {
        NetworkConfig {
            kind,
            input_dim: 6,
            width: if kind == BackboneKind::Residual { 5 } else { 3 },
            blocks: 2,
            embed_dim: 4,
            grid_side: 3,
            kernel: 3,
        }
    }

    fn random_inputs(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Mat {
        Mat::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        for kind in BackboneKind::ALL {
            let a = init_network(small(kind), 5).unwrap();
            let b = init_network(small(kind), 5).unwrap();
            let c = init_network(small(kind), 6).unwrap();
            assert_eq!(a.params(), b.params());
            assert_ne!(a.params(), c.params());
        }
    }

    #[test]
    fn invalid_sizes_rejected() {
        let mut cfg = small(BackboneKind::Residual);
        cfg.embed_dim = 0;
        assert!(matches!(init_network(cfg, 1), Err(Error::InvalidConfig(_))));
        let mut cfg = small(BackboneKind::DepthwiseSeparable);
        cfg.kernel = 2;
        assert!(init_network(cfg, 1).is_err());
    }

    #[test]
    fn embed_shape_and_batch_independence() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for kind in BackboneKind::ALL {
            let mut cfg = NetworkConfig::new(kind, 10);
            cfg.embed_dim = 16;
            let net = init_network(cfg, 3).unwrap();
            let x = random_inputs(&mut rng, 5, 10);
            let all = net.embed(&x).unwrap();
            assert_eq!((all.rows(), all.cols()), (5, 16));
            for i in 0..5 {
                let single = Mat::from_rows(&[x.row(i).to_vec()]).unwrap();
                assert_eq!(net.embed(&single).unwrap().row(0), all.row(i));
            }
            assert!(net.embed(&random_inputs(&mut rng, 2, 9)).is_err());
        }
    }

    #[test]
    fn zero_parameters_give_zero_embeddings() {
        for kind in BackboneKind::ALL {
            let cfg = small(kind);
            let net = EmbeddingNetwork::from_params(cfg.clone(), vec![0.0; cfg.param_count()]).unwrap();
            let x = Mat::from_fn(3, 6, |r, c| (r + c) as f64 - 2.0);
            assert!(net.embed(&x).unwrap().as_slice().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn zeroed_blocks_are_identity() {
        let mut net = init_network(small(BackboneKind::Residual), 9).unwrap();
        let lay = net.config.layout();
        net.params[lay.blocks..lay.head_w].iter_mut().for_each(|v| *v = 0.0);
        let block = net.residual_block(1).unwrap();
        let x = vec![0.3, -0.2, 1.5, -4.0, 2.0];
        assert_eq!(block.forward(&x).unwrap(), x);
    }

    /// Per-layer recomputation through the owning block types.
    #[test]
    fn embed_matches_layerwise_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for kind in BackboneKind::ALL {
            let cfg = small(kind);
            let net = init_network(cfg.clone(), 2).unwrap();
            let lay = cfg.layout();
            let x = random_inputs(&mut rng, 3, cfg.input_dim);
            let emb = net.embed(&x).unwrap();
            let h = cfg.hidden_len();
            for i in 0..3 {
                let mut state: Vec<f64> = (0..h)
                    .map(|r| {
                        let w = &net.params[lay.stem_w + r * cfg.input_dim..lay.stem_w + (r + 1) * cfg.input_dim];
                        net.params[lay.stem_b + r] + w.iter().zip(x.row(i)).map(|(a, b)| a * b).sum::<f64>()
                    })
                    .collect();
                for b in 0..cfg.blocks {
                    state = match kind {
                        BackboneKind::Residual => net.residual_block(b).unwrap().forward(&state).unwrap(),
                        BackboneKind::DepthwiseSeparable => {
                            let g = Grid::from_vec(cfg.width, cfg.grid_side, cfg.grid_side, state).unwrap();
                            let out = net.dws_block(b).unwrap().forward(&g).unwrap();
                            out.data.iter().map(|v| v.max(0.0)).collect()
                        }
                    };
                }
                for e in 0..cfg.embed_dim {
                    let w = &net.params[lay.head_w + e * h..lay.head_w + (e + 1) * h];
                    let v = net.params[lay.head_b + e] + w.iter().zip(&state).map(|(a, b)| a * b).sum::<f64>();
                    assert!((v - emb.get(i, e)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for kind in BackboneKind::ALL {
            let net = init_network(small(kind), 1).unwrap();
            let x = random_inputs(&mut rng, 4, 6);
            let g = net.network_backward(&x, &Mat::zeros(4, 4)).unwrap();
            assert!(g.iter().all(|&v| v == 0.0));
            assert!(net.network_backward(&x, &Mat::zeros(3, 4)).is_err());
        }
    }

    #[test]
    fn blockless_network_closed_form_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut cfg = small(BackboneKind::Residual);
        cfg.blocks = 0;
        let net = init_network(cfg.clone(), 3).unwrap();
        let lay = cfg.layout();
        let x = random_inputs(&mut rng, 1, cfg.input_dim);
        let up = random_inputs(&mut rng, 1, cfg.embed_dim);
        let g = net.network_backward(&x, &up).unwrap();
        let (h, d, e) = (cfg.width, cfg.input_dim, cfg.embed_dim);
        let stem = |r: usize| {
            net.params[lay.stem_b + r]
                + (0..d).map(|c| net.params[lay.stem_w + r * d + c] * x.get(0, c)).sum::<f64>()
        };
        for o in 0..e {
            assert!((g[lay.head_b + o] - up.get(0, o)).abs() < 1e-12);
            for r in 0..h {
                assert!((g[lay.head_w + o * h + r] - up.get(0, o) * stem(r)).abs() < 1e-12);
            }
        }
        for r in 0..h {
            let back: f64 = (0..e).map(|o| net.params[lay.head_w + o * h + r] * up.get(0, o)).sum();
            assert!((g[lay.stem_b + r] - back).abs() < 1e-12);
            for c in 0..d {
                assert!((g[lay.stem_w + r * d + c] - back * x.get(0, c)).abs() < 1e-12);
            }
        }
    }

    /// Scalar objective `Σ up ⊙ embed(x)` differentiated by central differences.
    #[test]
    fn finite_difference_on_sampled_coordinates() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for kind in BackboneKind::ALL {
            let net = init_network(small(kind), 8).unwrap();
            let x = random_inputs(&mut rng, 3, 6);
            let up = random_inputs(&mut rng, 3, 4);
            let g = net.network_backward(&x, &up).unwrap();
            let objective = |n: &EmbeddingNetwork| -> f64 {
                let e = n.embed(&x).unwrap();
                e.as_slice().iter().zip(up.as_slice()).map(|(a, b)| a * b).sum()
            };
            let h = 1e-6;
            for _ in 0..50 {
                let k = rng.random_range(0..net.params.len());
                let mut p = net.clone();
                p.params[k] += h;
                let plus = objective(&p);
                p.params[k] -= 2.0 * h;
                let minus = objective(&p);
                let num = (plus - minus) / (2.0 * h);
                let err = (num - g[k]).abs() / num.abs().max(g[k].abs()).max(1.0);
                assert!(err < 1e-4, "{kind:?} coord {k}: {num} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn end_to_end_loss_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for kind in BackboneKind::ALL {
            let net = init_network(small(kind), 4).unwrap();
            let x = random_inputs(&mut rng, 5, 6);
            let labels = vec![0, 1, 2, 1, 0];
            let params = ClassifierParams::new(random_inputs(&mut rng, 4, 3), vec![0.0; 3]).unwrap();
            let spec = LossSpec::new(LossKind::ArcFace);
            let loss_of = |n: &EmbeddingNetwork| {
                let b = FeatureBatch::new(n.embed(&x).unwrap(), labels.clone(), 3).unwrap();
                evaluate_loss(&spec, &b, &params).unwrap()
            };
            let out = loss_of(&net);
            let g = net.network_backward(&x, &out.grad_features).unwrap();
            let h = 1e-6;
            for _ in 0..30 {
                let k = rng.random_range(0..net.params.len());
                let mut p = net.clone();
                p.params[k] += h;
                let plus = loss_of(&p).loss;
                p.params[k] -= 2.0 * h;
                let minus = loss_of(&p).loss;
                let num = (plus - minus) / (2.0 * h);
                let err = (num - g[k]).abs() / num.abs().max(g[k].abs()).max(1.0);
                assert!(err < 1e-4, "{kind:?} coord {k}: {num} vs {}", g[k]);
            }
        }
    }
}
