//! Skip-connected hourglass generator.
//!
//! Level `i` takes a map at resolution `R/2^i` and produces:
//!
//! * a skip branch: `skip_kernel` conv → norm → leaky-ReLU at the same resolution;
//! * a down branch: stride-2 `main_kernel` conv → norm → leaky-ReLU at half resolution,
//!   which feeds level `i + 1` (or is used directly at the deepest level);
//! * an up branch: nearest 2× upsample of the deeper result, concatenated with the
//!   skip branch, then `main_kernel` conv → norm → leaky-ReLU.
//!
//! A final 1×1 conv and a sigmoid map the top-level features to the output.

use contour_autodiff::{Graph, Real, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub depth: usize,
    pub down_channels: usize,
    pub up_channels: usize,
    pub skip_channels: usize,
    pub main_kernel: usize,
    pub skip_kernel: usize,
    pub noise_channels: usize,
    pub output_channels: usize,
    pub activation_slope: f64,
    /// Per-channel normalization with a learned affine after every hidden conv.
    pub normalize: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl GeneratorConfig {
    /// Five levels, 128 up/down channels, 64 skip channels.
    pub fn full() -> Self {
        GeneratorConfig {
            depth: 5,
            down_channels: 128,
            up_channels: 128,
            skip_channels: 64,
            main_kernel: 3,
            skip_kernel: 1,
            noise_channels: 32,
            output_channels: 1,
            activation_slope: 0.1,
            normalize: true,
        }
    }

    /// Reduced network for CPU-sized runs: depth 4, 32/16 channels.
    pub fn desk() -> Self {
        GeneratorConfig {
            depth: 4,
            down_channels: 32,
            up_channels: 32,
            skip_channels: 16,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("generator: {m}")));
        if self.depth == 0 {
            return fail("depth must be ≥ 1");
        }
        if self.main_kernel.is_multiple_of(2) || self.skip_kernel.is_multiple_of(2) {
            return fail("kernel sizes must be odd");
        }
        if self.down_channels == 0 || self.up_channels == 0 || self.noise_channels == 0 || self.output_channels == 0 {
            return fail("channel counts must be ≥ 1");
        }
        if !(self.activation_slope.is_finite() && self.activation_slope >= 0.0) {
            return fail("activation slope must be finite and non-negative");
        }
        Ok(())
    }

    /// Required divisor of the input height and width.
    pub fn size_multiple(&self) -> usize {
        1 << self.depth
    }

    pub fn check_size(&self, height: usize, width: usize) -> Result<()> {
        let m = self.size_multiple();
        if height == 0 || width == 0 || !height.is_multiple_of(m) || !width.is_multiple_of(m) {
            return Err(Error::Config(format!(
                "input {height}×{width} is not divisible by 2^depth = {m}"
            )));
        }
        Ok(())
    }

    fn level_input_channels(&self, level: usize) -> usize {
        if level == 0 {
            self.noise_channels
        } else {
            self.down_channels
        }
    }

    fn level_up_input_channels(&self, level: usize) -> usize {
        let deeper = if level + 1 == self.depth {
            self.down_channels
        } else {
            self.up_channels
        };
        deeper + self.skip_channels
    }
}

/// Named trainable tensors in a fixed enumeration order.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams<T> {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Real> GeneratorParams<T> {
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }
}

struct ParamBuilder<'a, T> {
    rng: &'a mut ChaCha8Rng,
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> ParamBuilder<'_, T> {
    fn uniform(&mut self, name: String, shape: Vec<usize>, bound: f64) {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| T::from_f64_lossy(self.rng.random_range(-bound..=bound)))
            .collect();
        self.push(name, Tensor::new(shape, data).expect("consistent shape"));
    }

    fn constant(&mut self, name: String, shape: Vec<usize>, value: f64) {
        self.push(name, Tensor::full(shape, T::from_f64_lossy(value)));
    }

    fn push(&mut self, name: String, t: Tensor<T>) {
        self.names.push(name);
        self.tensors.push(t.with_grad());
    }

    /// Weight drawn from U(−1/√fan_in, 1/√fan_in). A normalized conv gets
    /// the normalization affine instead of a bias, which the mean subtraction
    /// would cancel.
    fn conv(&mut self, prefix: &str, c_out: usize, c_in: usize, k: usize, norm: bool) {
        let bound = 1.0 / ((c_in * k * k) as f64).sqrt();
        self.uniform(format!("{prefix}.weight"), vec![c_out, c_in, k, k], bound);
        if norm {
            self.constant(format!("{prefix}.norm_scale"), vec![c_out], 1.0);
            self.constant(format!("{prefix}.norm_shift"), vec![c_out], 0.0);
        } else {
            self.uniform(format!("{prefix}.bias"), vec![c_out], bound);
        }
    }
}

/// Random initial parameters, reproducible from `seed`.
pub fn init_generator<T: Real>(config: &GeneratorConfig, seed: u64) -> Result<GeneratorParams<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = ParamBuilder {
        rng: &mut rng,
        names: Vec::new(),
        tensors: Vec::new(),
    };
    let norm = config.normalize;
    for level in 0..config.depth {
        let c_in = config.level_input_channels(level);
        b.conv(
            &format!("down{level}"),
            config.down_channels,
            c_in,
            config.main_kernel,
            norm,
        );
        if config.skip_channels > 0 {
            b.conv(
                &format!("skip{level}"),
                config.skip_channels,
                c_in,
                config.skip_kernel,
                norm,
            );
        }
        b.conv(
            &format!("up{level}"),
            config.up_channels,
            config.level_up_input_channels(level),
            config.main_kernel,
            norm,
        );
    }
    b.conv("out", config.output_channels, config.up_channels, 1, false);
    Ok(GeneratorParams {
        names: b.names,
        tensors: b.tensors,
    })
}

/// Fixed input noise: i.i.d. U[0, 0.1], never trained.
pub fn make_noise<T: Real>(config: &GeneratorConfig, height: usize, width: usize, seed: u64) -> Result<Tensor<T>> {
    config.check_size(height, width)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = config.noise_channels * height * width;
    let data = (0..n).map(|_| T::from_f64_lossy(rng.random_range(0.0..=0.1))).collect();
    Ok(Tensor::new(vec![config.noise_channels, height, width], data)?)
}

/// Builds the generator on `graph`. `params` are the parameter leaves in the
/// order produced by [`init_generator`]; `z` is the noise leaf.
pub fn forward<T: Real>(graph: &mut Graph<T>, config: &GeneratorConfig, params: &[Var], z: Var) -> Result<Var> {
    let shape = graph.shape(z).to_vec();
    match shape.as_slice() {
        &[c, h, w] if c == config.noise_channels => config.check_size(h, w)?,
        _ => {
            return Err(Error::Config(format!(
                "noise must be {}×H×W, got {shape:?}",
                config.noise_channels
            )))
        }
    }
    let mut cursor = ParamCursor {
        params,
        next: 0,
        normalize: config.normalize,
        slope: T::from_f64_lossy(config.activation_slope),
    };
    let top = level(graph, config, &mut cursor, 0, z)?;
    let w = cursor.take();
    let b = cursor.take();
    let logits = graph.conv2d(top, w, Some(b), 1, 0)?;
    Ok(graph.sigmoid(logits))
}

struct ParamCursor<'a, T> {
    params: &'a [Var],
    next: usize,
    normalize: bool,
    slope: T,
}

impl<T: Real> ParamCursor<'_, T> {
    fn take(&mut self) -> Var {
        let v = self.params[self.next];
        self.next += 1;
        v
    }

    fn block(&mut self, g: &mut Graph<T>, x: Var, stride: usize) -> Result<Var> {
        let w = self.take();
        let k = g.shape(w)[2];
        let h = if self.normalize {
            let h = g.conv2d(x, w, None, stride, (k - 1) / 2)?;
            let scale = self.take();
            let shift = self.take();
            g.channel_norm(h, scale, shift, T::from_f64_lossy(NORM_EPS))?
        } else {
            let b = self.take();
            g.conv2d(x, w, Some(b), stride, (k - 1) / 2)?
        };
        Ok(g.leaky_relu(h, self.slope))
    }
}

fn level<T: Real>(
    g: &mut Graph<T>,
    config: &GeneratorConfig,
    cursor: &mut ParamCursor<'_, T>,
    depth: usize,
    x: Var,
) -> Result<Var> {
    let down = cursor.block(g, x, 2)?;
    let skip = if config.skip_channels > 0 {
        Some(cursor.block(g, x, 1)?)
    } else {
        None
    };
    // Parameters of this level's up block come after the skip block but the
    // deeper levels must be built first; remember where they sit.
    let up_params = cursor.next;
    cursor.next += if config.normalize { 3 } else { 2 };
    let deeper = if depth + 1 < config.depth {
        level(g, config, cursor, depth + 1, down)?
    } else {
        down
    };
    let after = cursor.next;
    let upsampled = g.upsample_nearest2x(deeper)?;
    let merged = match skip {
        Some(s) => g.concat_channels(&[upsampled, s])?,
        None => upsampled,
    };
    cursor.next = up_params;
    let out = cursor.block(g, merged, 1)?;
    cursor.next = after;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Resampling {
    /// Convolution with the given stride.
    Stride(usize),
    /// Nearest-neighbour upsampling by the given factor.
    Upsample(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerGeometry {
    pub kernel: usize,
    pub resampling: Resampling,
}

/// Receptive field of a chain of layers by the usual composition
/// `r ← r + (k − 1)·j`, `j ← j·s` (upsampling divides the jump).
pub fn receptive_field_of(layers: &[LayerGeometry]) -> usize {
    let mut r = 1.0f64;
    let mut jump = 1.0f64;
    for layer in layers {
        match layer.resampling {
            Resampling::Stride(s) => {
                r += (layer.kernel as f64 - 1.0) * jump;
                jump *= s as f64;
            }
            Resampling::Upsample(f) => {
                jump /= f as f64;
                r += (layer.kernel as f64 - 1.0) * jump;
            }
        }
    }
    r.round() as usize
}

/// Receptive field of one output pixel along the deepest encoder/decoder path.
pub fn receptive_field(config: &GeneratorConfig) -> usize {
    let k = config.main_kernel;
    let mut layers = Vec::with_capacity(2 * config.depth + 1);
    for _ in 0..config.depth {
        layers.push(LayerGeometry {
            kernel: k,
            resampling: Resampling::Stride(2),
        });
    }
    for _ in 0..config.depth {
        layers.push(LayerGeometry {
            kernel: 1,
            resampling: Resampling::Upsample(2),
        });
        layers.push(LayerGeometry {
            kernel: k,
            resampling: Resampling::Stride(1),
        });
    }
    layers.push(LayerGeometry {
        kernel: 1,
        resampling: Resampling::Stride(1),
    });
    receptive_field_of(&layers)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> GeneratorConfig {
        GeneratorConfig {
            depth: 2,
            down_channels: 8,
            up_channels: 8,
            skip_channels: 4,
            noise_channels: 3,
            ..GeneratorConfig::full()
        }
    }

    #[test]
    fn same_seed_gives_identical_parameters() {
        let a = init_generator::<f32>(&toy(), 9).unwrap();
        let b = init_generator::<f32>(&toy(), 9).unwrap();
        assert_eq!(a, b);
        let c = init_generator::<f32>(&toy(), 10).unwrap();
        assert_ne!(a.tensors, c.tensors);
    }

    #[test]
    fn full_config_first_down_conv_shape() {
        let p = init_generator::<f32>(&GeneratorConfig::full(), 0).unwrap();
        assert_eq!(p.names[0], "down0.weight");
        assert_eq!(p.tensors[0].shape(), &[128, 32, 3, 3]);
    }

    #[test]
    fn toy_parameter_count_matches_hand_sum() {
        // Per normalized conv: c_out·c_in·k² weights + 2·c_out norm affine.
        let conv = |o: usize, i: usize, k: usize| o * i * k * k + 2 * o;
        let expected = conv(8, 3, 3) // down0
            + conv(4, 3, 1) // skip0
            + conv(8, 8 + 4, 3) // up0: up1 output + skip0
            + conv(8, 8, 3) // down1
            + conv(4, 8, 1) // skip1
            + conv(8, 8 + 4, 3) // up1: down1 output + skip1
            + (8 + 1); // out: 1×8×1×1 + bias
        let p = init_generator::<f64>(&toy(), 1).unwrap();
        assert_eq!(p.parameter_count(), expected);
        assert!(p.tensors.iter().all(|t| t.requires_grad()));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            GeneratorConfig { depth: 0, ..toy() },
            GeneratorConfig {
                main_kernel: 4,
                ..toy()
            },
            GeneratorConfig {
                down_channels: 0,
                ..toy()
            },
        ];
        for cfg in bad {
            assert!(init_generator::<f32>(&cfg, 0).is_err());
        }
    }

    #[test]
    fn noise_is_reproducible_and_bounded() {
        let cfg = toy();
        let a = make_noise::<f32>(&cfg, 16, 16, 4).unwrap();
        assert_eq!(a, make_noise::<f32>(&cfg, 16, 16, 4).unwrap());
        assert!(a.data().iter().all(|&v| (0.0..=0.1).contains(&v)));
        assert!(!a.requires_grad());
        assert!(make_noise::<f32>(&cfg, 18, 16, 4).is_err());
    }

    #[test]
    fn noise_mean_is_near_centre() {
        let cfg = GeneratorConfig {
            noise_channels: 16,
            ..toy()
        };
        let n = make_noise::<f64>(&cfg, 64, 64, 77).unwrap();
        let mean = n.data().iter().sum::<f64>() / n.numel() as f64;
        assert!((mean - 0.05).abs() < 0.005, "{mean}");
    }

    #[test]
    fn stacked_receptive_fields() {
        let conv3 = LayerGeometry {
            kernel: 3,
            resampling: Resampling::Stride(1),
        };
        assert_eq!(receptive_field_of(&[conv3]), 3);
        assert_eq!(receptive_field_of(&[conv3, conv3]), 5);
    }

    #[test]
    fn full_receptive_field_follows_recurrence() {
        // Down: r = 1 + 2·(1+2+4+8+16) = 63, jump 32.
        // Up (jump 16, 8, 4, 2, 1): 63 + 2·31 = 125.
        assert_eq!(receptive_field(&GeneratorConfig::full()), 125);
    }

    #[test]
    fn larger_kernels_grow_receptive_field() {
        let rf = |k| {
            receptive_field(&GeneratorConfig {
                main_kernel: k,
                ..GeneratorConfig::desk()
            })
        };
        assert!(rf(3) < rf(5) && rf(5) < rf(7));
    }
}
