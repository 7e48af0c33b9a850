//! A small trainable conditional convolutional velocity network.
//!
//! Input is the channel concatenation of the noised grid (3 planes), the
//! condition view broadcast-tiled to grid size (3 planes), and a sinusoidal
//! time embedding (constant planes). A stack of same-padded square
//! convolutions with tanh activations (bounded derivative) feeds a linear
//! 3-channel output head. The network is fully convolutional, so one set of
//! weights serves any tile size.
//!
//! Convolutions run as im2col + matrix multiplication; gradients are computed
//! by hand with cached activations, in a fixed order, so training is
//! deterministic.

use super::{check_cond_shape, VelocityModel};
use crate::error::{Error, Result};
use crate::mvgrid::{MvGrid, Raster, ViewImage, CHANNELS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::{Read, Write};
use std::path::Path;

/// Architecture hyperparameters. `layers` counts all convolutions including
/// the linear output head; hidden layers all share `hidden` channels.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TinyArch {
    pub hidden: usize,
    pub layers: usize,
    pub kernel: usize,
    pub time_dim: usize,
}

impl Default for TinyArch {
    fn default() -> Self {
        Self {
            hidden: 32,
            layers: 4,
            kernel: 3,
            time_dim: 16,
        }
    }
}

impl TinyArch {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.layers < 2 {
            return Err(Error::InvalidConfig(format!(
                "network needs hidden >= 1 and layers >= 2, got hidden {}, layers {}",
                self.hidden, self.layers
            )));
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(Error::InvalidConfig(format!(
                "kernel size must be odd, got {}",
                self.kernel
            )));
        }
        if self.time_dim == 0 || self.time_dim % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "time embedding dimension must be even and > 0, got {}",
                self.time_dim
            )));
        }
        Ok(())
    }

    /// 3 noised-grid channels + 3 tiled condition channels + time embedding.
    pub fn input_channels(&self) -> usize {
        2 * CHANNELS + self.time_dim
    }

    /// Channel count entering each conv layer, plus the final output count.
    fn channel_plan(&self) -> Vec<usize> {
        let mut plan = Vec::with_capacity(self.layers + 1);
        plan.push(self.input_channels());
        for _ in 0..self.layers - 1 {
            plan.push(self.hidden);
        }
        plan.push(CHANNELS);
        plan
    }

    pub fn param_count(&self) -> usize {
        let plan = self.channel_plan();
        let kk = self.kernel * self.kernel;
        plan.windows(2)
            .map(|p| p[0] * p[1] * kk + p[1])
            .sum()
    }
}

#[derive(Debug, Clone)]
struct ConvLayer {
    c_in: usize,
    c_out: usize,
    /// `c_out x (c_in * kernel^2)`, row-major.
    weight: Vec<f64>,
    bias: Vec<f64>,
}

/// Sinusoidal time embedding: channel `2j` is `sin(pi * t * 2^j)`, channel
/// `2j + 1` is `cos(pi * t * 2^j)`.
fn time_embedding(t: f64, time_dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(time_dim);
    for j in 0..time_dim / 2 {
        let arg = std::f64::consts::PI * t * (2.0f64).powi(j as i32);
        out.push(arg.sin());
        out.push(arg.cos());
    }
    out
}

/// Row-major matrix multiply `C = alpha * op(A) * op(B) + beta * C` where
/// `op(X)` optionally transposes. Dimensions are those of `op(A)` (m x k) and
/// `op(B)` (k x n).
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_transposed { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Expand planar input (channels x h x w) into convolution columns
/// ((channels * k^2) x (h * w)) with zero padding, so a convolution becomes
/// one matrix product.
fn im2col(src: &[f64], channels: usize, h: usize, w: usize, k: usize, dst: &mut Vec<f64>) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    dst.clear();
    dst.resize(channels * k * k * hw, 0.0);
    for ci in 0..channels {
        let plane = &src[ci * hw..(ci + 1) * hw];
        for dy in 0..k {
            let oy = dy as isize - pad;
            for dx in 0..k {
                let ox = dx as isize - pad;
                let row = &mut dst[((ci * k + dy) * k + dx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + oy;
                    let dst_row = &mut row[y * w..y * w + w];
                    if sy < 0 || sy >= h as isize {
                        continue; // stays zero
                    }
                    let src_row = &plane[sy as usize * w..sy as usize * w + w];
                    if ox >= 0 {
                        let ox = ox as usize;
                        if ox < w {
                            dst_row[..w - ox].copy_from_slice(&src_row[ox..]);
                        }
                    } else {
                        let sh = (-ox) as usize;
                        if sh < w {
                            dst_row[sh..].copy_from_slice(&src_row[..w - sh]);
                        }
                    }
                }
            }
        }
    }
}

/// Transpose of [`im2col`]: scatter-add columns back onto planes. `dst` must
/// be zeroed (or hold a partial sum) on entry.
fn col2im_add(cols: &[f64], channels: usize, h: usize, w: usize, k: usize, dst: &mut [f64]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..channels {
        let plane = &mut dst[ci * hw..(ci + 1) * hw];
        for dy in 0..k {
            let oy = dy as isize - pad;
            for dx in 0..k {
                let ox = dx as isize - pad;
                let row = &cols[((ci * k + dy) * k + dx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + oy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src_row = &row[y * w..y * w + w];
                    let base = sy as usize * w;
                    if ox >= 0 {
                        let ox = ox as usize;
                        for x in 0..w.saturating_sub(ox) {
                            plane[base + x + ox] += src_row[x];
                        }
                    } else {
                        let sh = (-ox) as usize;
                        for x in sh..w {
                            plane[base + x - sh] += src_row[x];
                        }
                    }
                }
            }
        }
    }
}

/// Activations and column buffers kept from a forward pass for backprop.
pub(crate) struct ForwardCache {
    h: usize,
    w: usize,
    /// `acts[0]` is the network input; `acts[i + 1]` is layer i's
    /// post-activation output. All planar (channels x h x w).
    acts: Vec<Vec<f64>>,
    /// `cols[i]` is im2col of `acts[i]`.
    cols: Vec<Vec<f64>>,
}

/// The trainable conditional velocity network.
#[derive(Debug, Clone)]
pub struct TinyFlowNet {
    arch: TinyArch,
    layers: Vec<ConvLayer>,
    init_seed: u64,
}

impl TinyFlowNet {
    /// Fresh network: hidden layers get uniform fan-in-scaled weights from the
    /// seeded generator; the output head starts at zero so the initial
    /// prediction is identically zero.
    pub fn new(arch: TinyArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let plan = arch.channel_plan();
        let kk = arch.kernel * arch.kernel;
        let last = plan.len() - 2;
        let layers = plan
            .windows(2)
            .enumerate()
            .map(|(i, p)| {
                let (c_in, c_out) = (p[0], p[1]);
                let weight = if i == last {
                    vec![0.0; c_out * c_in * kk]
                } else {
                    let scale = (1.0 / (c_in * kk) as f64).sqrt();
                    (0..c_out * c_in * kk)
                        .map(|_| rng.gen_range(-scale..scale))
                        .collect()
                };
                ConvLayer {
                    c_in,
                    c_out,
                    weight,
                    bias: vec![0.0; c_out],
                }
            })
            .collect();
        Ok(Self {
            arch,
            layers,
            init_seed: seed,
        })
    }

    pub fn arch(&self) -> &TinyArch {
        &self.arch
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn param_count(&self) -> usize {
        self.arch.param_count()
    }

    /// All parameters as one flat vector (per layer: weights then biases).
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend_from_slice(&layer.weight);
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    /// Overwrite all parameters from a flat vector in [`Self::params_flat`]
    /// order.
    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::ShapeMismatch {
                context: "TinyFlowNet::set_params_flat",
                expected: format!("{} parameters", self.param_count()),
                actual: format!("{}", params.len()),
            });
        }
        if let Some(bad) = params.iter().find(|p| !p.is_finite()) {
            return Err(Error::OutOfRange {
                context: "TinyFlowNet::set_params_flat",
                detail: format!("non-finite parameter {bad}"),
            });
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            let (wn, bn) = (layer.weight.len(), layer.bias.len());
            layer.weight.copy_from_slice(&params[offset..offset + wn]);
            offset += wn;
            layer.bias.copy_from_slice(&params[offset..offset + bn]);
            offset += bn;
        }
        Ok(())
    }

    /// Assemble the planar network input for `(z, cond, t)`.
    fn build_input(&self, z: &MvGrid, cond: &ViewImage, t: f64) -> Vec<f64> {
        let (h, w) = (z.pixel_height(), z.pixel_width());
        let (th, tw) = (cond.height(), cond.width());
        let hw = h * w;
        let mut input = vec![0.0; self.arch.input_channels() * hw];
        let zv = z.values();
        let cv = cond.values();
        for y in 0..h {
            for x in 0..w {
                let px = (y * w + x) * CHANNELS;
                let cpx = ((y % th) * tw + (x % tw)) * CHANNELS;
                for c in 0..CHANNELS {
                    input[c * hw + y * w + x] = zv[px + c];
                    input[(CHANNELS + c) * hw + y * w + x] = cv[cpx + c];
                }
            }
        }
        for (j, e) in time_embedding(t, self.arch.time_dim).into_iter().enumerate() {
            input[(2 * CHANNELS + j) * hw..(2 * CHANNELS + j + 1) * hw].fill(e);
        }
        input
    }

    fn forward_planes(
        &self,
        input: Vec<f64>,
        h: usize,
        w: usize,
        keep_cache: bool,
    ) -> (Vec<f64>, Option<ForwardCache>) {
        let hw = h * w;
        let k = self.arch.kernel;
        let mut acts: Vec<Vec<f64>> = vec![input];
        let mut cols_cache: Vec<Vec<f64>> = Vec::new();
        let mut cols = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            im2col(acts.last().unwrap(), layer.c_in, h, w, k, &mut cols);
            let mut out = vec![0.0; layer.c_out * hw];
            gemm(
                layer.c_out,
                layer.c_in * k * k,
                hw,
                1.0,
                &layer.weight,
                false,
                &cols,
                false,
                0.0,
                &mut out,
            );
            let is_last = i + 1 == self.layers.len();
            for (co, b) in layer.bias.iter().enumerate() {
                let row = &mut out[co * hw..(co + 1) * hw];
                if is_last {
                    for v in row {
                        *v += b;
                    }
                } else {
                    for v in row {
                        *v = (*v + b).tanh();
                    }
                }
            }
            if keep_cache {
                cols_cache.push(std::mem::take(&mut cols));
            }
            acts.push(out);
        }
        let output = acts.pop().unwrap();
        let cache = keep_cache.then(|| ForwardCache {
            h,
            w,
            acts,
            cols: cols_cache,
        });
        (output, cache)
    }

    /// Forward pass keeping the activation/column cache for backprop. Returns
    /// the velocity grid and the cache.
    pub(crate) fn forward_cached(
        &self,
        z: &MvGrid,
        cond: &ViewImage,
        t: f64,
    ) -> Result<(MvGrid, ForwardCache)> {
        check_cond_shape(z, cond, "TinyFlowNet")?;
        let (h, w) = (z.pixel_height(), z.pixel_width());
        let input = self.build_input(z, cond, t);
        let (out, cache) = self.forward_planes(input, h, w, true);
        Ok((planes_to_grid(&out, z), cache.expect("cache requested")))
    }

    /// Backpropagate `d(loss)/d(output)` (given in interleaved grid layout)
    /// and accumulate parameter gradients into `grads` (flat layout matching
    /// [`Self::params_flat`]).
    pub(crate) fn backward(
        &self,
        cache: &ForwardCache,
        dout_grid: &[f64],
        grads: &mut [f64],
    ) {
        assert_eq!(grads.len(), self.param_count());
        let (h, w) = (cache.h, cache.w);
        let hw = h * w;
        let k = self.arch.kernel;

        // Deinterleave the incoming gradient into planes.
        let mut d = vec![0.0; CHANNELS * hw];
        for y in 0..h {
            for x in 0..w {
                for c in 0..CHANNELS {
                    d[c * hw + y * w + x] = dout_grid[(y * w + x) * CHANNELS + c];
                }
            }
        }

        // Flat offsets of each layer's weight block.
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for layer in &self.layers {
            offsets.push(off);
            off += layer.weight.len() + layer.bias.len();
        }

        let mut dcols = Vec::new();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let is_last = i + 1 == self.layers.len();
            if !is_last {
                // acts[i + 1] is this layer's tanh output y; dL/dpre = d * (1 - y^2).
                let y = &cache.acts[i + 1];
                for (dv, yv) in d.iter_mut().zip(y) {
                    *dv *= 1.0 - yv * yv;
                }
            }
            let ck = layer.c_in * k * k;
            let (w_grad, b_grad) = grads[offsets[i]..offsets[i] + layer.weight.len() + layer.bias.len()]
                .split_at_mut(layer.weight.len());
            // dW += d . cols^T
            gemm(layer.c_out, hw, ck, 1.0, &d, false, &cache.cols[i], true, 1.0, w_grad);
            for co in 0..layer.c_out {
                b_grad[co] += d[co * hw..(co + 1) * hw].iter().sum::<f64>();
            }
            if i > 0 {
                // dcols = W^T . d, then scatter back to the previous planes.
                dcols.clear();
                dcols.resize(ck * hw, 0.0);
                gemm(ck, layer.c_out, hw, 1.0, &layer.weight, true, &d, false, 0.0, &mut dcols);
                d.clear();
                d.resize(layer.c_in * hw, 0.0);
                col2im_add(&dcols, layer.c_in, h, w, k, &mut d);
            }
        }
    }

    /// Persist the parameters with a self-describing header. The bytes are a
    /// pure function of the model and `tile_size`, so checkpoints are
    /// reproducible.
    pub fn save_checkpoint(&self, path: impl AsRef<Path>, tile_size: u32) -> Result<()> {
        let path = path.as_ref();
        let header = CheckpointHeader {
            version: CHECKPOINT_VERSION,
            arch: self.arch.clone(),
            tile_size,
            seed: self.init_seed,
            param_count: self.param_count() as u64,
        };
        let header_json =
            serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut write = |bytes: &[u8]| file.write_all(bytes).map_err(|e| Error::io(path, e));
        write(CHECKPOINT_MAGIC)?;
        write(&(header_json.len() as u32).to_le_bytes())?;
        write(&header_json)?;
        for p in self.params_flat() {
            write(&p.to_le_bytes())?;
        }
        Ok(())
    }

    /// Load a checkpoint, validating magic, version, and parameter count.
    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Self, CheckpointHeader)> {
        let path = path.as_ref();
        let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut magic = [0u8; 8];
        file.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format(format!(
                "{path:?} is not a model checkpoint (bad magic)"
            )));
        }
        let mut len_bytes = [0u8; 4];
        file.read_exact(&mut len_bytes).map_err(|e| Error::io(path, e))?;
        let mut header_json = vec![0u8; u32::from_le_bytes(len_bytes) as usize];
        file.read_exact(&mut header_json).map_err(|e| Error::io(path, e))?;
        let header: CheckpointHeader =
            serde_json::from_slice(&header_json).map_err(|e| Error::Format(e.to_string()))?;
        if header.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                header.version
            )));
        }
        if header.param_count != header.arch.param_count() as u64 {
            return Err(Error::Format(format!(
                "checkpoint parameter count {} does not match architecture ({})",
                header.param_count,
                header.arch.param_count()
            )));
        }
        let mut raw = Vec::new();
        file.read_to_end(&mut raw).map_err(|e| Error::io(path, e))?;
        if raw.len() != header.param_count as usize * 8 {
            return Err(Error::Format(format!(
                "checkpoint payload is {} bytes, expected {}",
                raw.len(),
                header.param_count * 8
            )));
        }
        let params: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let mut net = Self::new(header.arch.clone(), header.seed)?;
        net.set_params_flat(&params)?;
        Ok((net, header))
    }
}

fn planes_to_grid(planes: &[f64], like: &MvGrid) -> MvGrid {
    let (h, w) = (like.pixel_height(), like.pixel_width());
    let hw = h * w;
    let mut values = vec![0.0; CHANNELS * hw];
    for y in 0..h {
        for x in 0..w {
            for c in 0..CHANNELS {
                values[(y * w + x) * CHANNELS + c] = planes[c * hw + y * w + x];
            }
        }
    }
    like.with_values(values)
}

impl VelocityModel for TinyFlowNet {
    fn predict_raw(&self, z: &MvGrid, cond: &ViewImage, t: f64) -> Result<MvGrid> {
        check_cond_shape(z, cond, "TinyFlowNet")?;
        let (h, w) = (z.pixel_height(), z.pixel_width());
        let input = self.build_input(z, cond, t);
        let (out, _) = self.forward_planes(input, h, w, false);
        Ok(planes_to_grid(&out, z))
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKPOINT_MAGIC: &[u8; 8] = b"EDP23NET";

/// Self-describing checkpoint metadata.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub arch: TinyArch,
    /// Tile size of the training data (informational; the network itself is
    /// size-independent).
    pub tile_size: u32,
    /// Seed the parameters were initialized from.
    pub seed: u64,
    pub param_count: u64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mvgrid::GridNoise;

    fn small_arch() -> TinyArch {
        TinyArch {
            hidden: 4,
            layers: 3,
            kernel: 3,
            time_dim: 4,
        }
    }

    fn random_grid(seed: u64, tile: usize) -> MvGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = GridNoise::sample(&mut rng, tile * 2, tile * 3);
        MvGrid::from_values(tile, tile, n.values().to_vec()).unwrap()
    }

    fn random_view(seed: u64, tile: usize) -> ViewImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = GridNoise::sample(&mut rng, tile, tile);
        ViewImage::from_values(tile, tile, n.values().to_vec()).unwrap()
    }

    fn randomized_net(arch: TinyArch, seed: u64) -> TinyFlowNet {
        // Fresh nets have a zero output head; give every parameter a small
        // random value so tests exercise a non-trivial function.
        let mut net = TinyFlowNet::new(arch, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
        let params: Vec<f64> = (0..net.param_count()).map(|_| rng.gen_range(-0.3..0.3)).collect();
        net.set_params_flat(&params).unwrap();
        net
    }

    #[test]
    fn param_count_matches_default_arch() {
        // Default: input 22 channels, three hidden convs of 32, linear head.
        // 9*(22*32 + 32*32 + 32*32 + 32*3) + (32 + 32 + 32 + 3) = 25731.
        assert_eq!(TinyArch::default().param_count(), 25_731);
        let net = TinyFlowNet::new(TinyArch::default(), 0).unwrap();
        assert_eq!(net.params_flat().len(), 25_731);
    }

    #[test]
    fn arch_validation() {
        assert!(TinyArch { kernel: 2, ..TinyArch::default() }.validate().is_err());
        assert!(TinyArch { time_dim: 3, ..TinyArch::default() }.validate().is_err());
        assert!(TinyArch { layers: 1, ..TinyArch::default() }.validate().is_err());
        assert!(TinyArch { hidden: 0, ..TinyArch::default() }.validate().is_err());
        assert!(TinyArch { kernel: 5, ..TinyArch::default() }.validate().is_ok());
    }

    #[test]
    fn fresh_net_predicts_zero() {
        let net = TinyFlowNet::new(small_arch(), 3).unwrap();
        let v = net.predict_raw(&random_grid(1, 8), &random_view(2, 8), 0.4).unwrap();
        assert!(v.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let a = TinyFlowNet::new(small_arch(), 7).unwrap();
        let b = TinyFlowNet::new(small_arch(), 7).unwrap();
        let c = TinyFlowNet::new(small_arch(), 8).unwrap();
        assert_eq!(a.params_flat(), b.params_flat());
        assert_ne!(a.params_flat(), c.params_flat());
    }

    #[test]
    fn forward_is_deterministic_and_finite() {
        let net = randomized_net(small_arch(), 11);
        let (z, cond) = (random_grid(4, 8), random_view(5, 8));
        let v1 = net.predict_raw(&z, &cond, 0.6).unwrap();
        let v2 = net.predict_raw(&z, &cond, 0.6).unwrap();
        assert_eq!(v1.values(), v2.values());
        assert!(v1.values().iter().all(|v| v.is_finite()));
        // tanh keeps hidden activations bounded, so outputs are modest.
        assert!(v1.values().iter().all(|v| v.abs() < 1e3));
    }

    #[test]
    fn fully_convolutional_across_tile_sizes() {
        let net = randomized_net(small_arch(), 13);
        for tile in [8, 16] {
            let v = net
                .predict_raw(&random_grid(20 + tile as u64, tile), &random_view(30 + tile as u64, tile), 0.3)
                .unwrap();
            assert_eq!(v.pixel_width(), tile * 2);
            assert_eq!(v.pixel_height(), tile * 3);
        }
    }

    #[test]
    fn conditioning_and_time_affect_output() {
        let net = randomized_net(small_arch(), 17);
        let z = random_grid(40, 8);
        let (c1, c2) = (random_view(41, 8), random_view(42, 8));
        let v1 = net.predict_raw(&z, &c1, 0.5).unwrap();
        let v2 = net.predict_raw(&z, &c2, 0.5).unwrap();
        let v3 = net.predict_raw(&z, &c1, 0.9).unwrap();
        assert_ne!(v1.values(), v2.values());
        assert_ne!(v1.values(), v3.values());
    }

    #[test]
    fn backward_matches_finite_differences_on_output_sum() {
        // Check d(sum of outputs)/d(theta) against central differences for a
        // spread of parameters in every layer.
        let net = randomized_net(small_arch(), 19);
        let (z, cond, t) = (random_grid(50, 8), random_view(51, 8), 0.45);

        let (out, cache) = net.forward_cached(&z, &cond, t).unwrap();
        let mut grads = vec![0.0; net.param_count()];
        net.backward(&cache, &vec![1.0; out.values().len()], &mut grads);

        let base_params = net.params_flat();
        let h = 1e-5;
        let n_params = net.param_count();
        for idx in (0..n_params).step_by(n_params / 23) {
            let mut probe = net.clone();
            let mut p = base_params.clone();
            p[idx] = base_params[idx] + h;
            probe.set_params_flat(&p).unwrap();
            let up: f64 = probe.predict_raw(&z, &cond, t).unwrap().values().iter().sum();
            p[idx] = base_params[idx] - h;
            probe.set_params_flat(&p).unwrap();
            let down: f64 = probe.predict_raw(&z, &cond, t).unwrap().values().iter().sum();
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads[idx];
            let denom = analytic.abs().max(numeric.abs()).max(1e-8);
            assert!(
                (analytic - numeric).abs() / denom < 1e-5,
                "param {idx}: analytic {analytic}, numeric {numeric}"
            );
        }
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let net = randomized_net(small_arch(), 23);
        net.save_checkpoint(&path, 8).unwrap();
        let (loaded, header) = TinyFlowNet::load_checkpoint(&path).unwrap();
        assert_eq!(header.tile_size, 8);
        assert_eq!(header.arch, small_arch());
        assert_eq!(header.seed, 23);
        let a = net.params_flat();
        let b = loaded.params_flat();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));

        let (z, cond) = (random_grid(60, 8), random_view(61, 8));
        let va = net.predict_raw(&z, &cond, 0.2).unwrap();
        let vb = loaded.predict_raw(&z, &cond, 0.2).unwrap();
        assert!(va.values().iter().zip(vb.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn checkpoint_files_are_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.bin"), dir.path().join("b.bin"));
        let net = randomized_net(small_arch(), 29);
        net.save_checkpoint(&p1, 16).unwrap();
        net.save_checkpoint(&p2, 16).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let net = TinyFlowNet::new(small_arch(), 1).unwrap();
        net.save_checkpoint(&path, 8).unwrap();

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] ^= 0xFF;
        std::fs::write(&path, &bytes).unwrap();
        assert!(TinyFlowNet::load_checkpoint(&path).is_err());

        net.save_checkpoint(&path, 8).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(TinyFlowNet::load_checkpoint(&path).is_err());
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        // <im2col(x), y> must equal <x, col2im(y)> — the defining property of
        // the transpose, which backprop relies on.
        let (c, h, w, k) = (2, 5, 4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let x: Vec<f64> = (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..c * k * k * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut cols = Vec::new();
        im2col(&x, c, h, w, k, &mut cols);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; c * h * w];
        col2im_add(&y, c, h, w, k, &mut back);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn time_embedding_shape_and_range() {
        let emb = time_embedding(0.37, 16);
        assert_eq!(emb.len(), 16);
        assert!(emb.iter().all(|e| e.abs() <= 1.0));
        assert_ne!(time_embedding(0.1, 16), time_embedding(0.9, 16));
    }
}
