//! Convolution slicers: kernel schedules for the base/stride/dilation
//! families, sampled kernel stacks, evaluation, reverse-mode gradients,
//! and parameter accounting.
//!
//! A slicer maps a `c x d x d` tensor to `R^k` (a scalar for `k = 1`)
//! through a chain of no-padding convolutions whose kernels are
//! unit-Frobenius-norm random tensors, halving the spatial size per layer
//! until a single cell remains.

use std::fmt;
use std::str::FromStr;

use crate::conv::{conv2d, mac_count, output_dim, ConvSpec};
use crate::error::{Error, Result};
use crate::rng::{sample_unit_tensor, Substream};
use crate::tensor::Tensor3;

/// The three kernel-schedule families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SlicerVariant {
    /// Large kernels of size `d/2^h + 1`, stride 1, dilation 1.
    Base,
    /// 2x2 kernels with stride 2.
    Stride,
    /// 2x2 kernels with dilation `d/2^h`, stride 1.
    Dilation,
}

impl fmt::Display for SlicerVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SlicerVariant::Base => write!(f, "base"),
            SlicerVariant::Stride => write!(f, "stride"),
            SlicerVariant::Dilation => write!(f, "dilation"),
        }
    }
}

impl FromStr for SlicerVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" | "b" => Ok(SlicerVariant::Base),
            "stride" | "s" => Ok(SlicerVariant::Stride),
            "dilation" | "d" => Ok(SlicerVariant::Dilation),
            other => Err(Error::InvalidArgument(format!("unknown variant '{other}'"))),
        }
    }
}

/// One convolution layer of a slicer schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    /// Sigmoid after this layer; always false on the final layer.
    pub sigmoid: bool,
}

impl LayerSpec {
    fn conv_spec(&self) -> ConvSpec {
        ConvSpec {
            in_channels: self.in_channels,
            kernel: self.kernel,
            stride: self.stride,
            dilation: self.dilation,
        }
    }
}

/// A deterministic slicer structure for a given `(variant, c, d, k)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlicerSchedule {
    variant: SlicerVariant,
    nonlinear: bool,
    k: usize,
    channels: usize,
    input_dim: usize,
    layers: Vec<LayerSpec>,
}

/// Kernel shapes `(kernel, stride, dilation)` for even `d`: with
/// `d = 2^(N-1) a` for the largest such `N`, layers `1..N-1` halve the
/// spatial size and the final `a x a` layer reduces to one cell.
fn even_layer_shapes(variant: SlicerVariant, d: usize) -> Vec<(usize, usize, usize)> {
    debug_assert!(d >= 2 && d % 2 == 0);
    let t = d.trailing_zeros() as usize; // N = t + 1
    let a = d >> t;
    let mut shapes = Vec::with_capacity(t + 1);
    for h in 1..=t {
        match variant {
            SlicerVariant::Base => shapes.push(((d >> h) + 1, 1, 1)),
            SlicerVariant::Stride => shapes.push((2, 2, 1)),
            SlicerVariant::Dilation => shapes.push((2, 1, d >> h)),
        }
    }
    shapes.push((a, 1, 1));
    shapes
}

fn scalar_layer_shapes(variant: SlicerVariant, d: usize) -> Result<Vec<(usize, usize, usize)>> {
    if d < 2 {
        return Err(Error::InvalidDimension(format!(
            "slicer schedules require d >= 2, got {d}"
        )));
    }
    if d % 2 == 0 {
        Ok(even_layer_shapes(variant, d))
    } else {
        // odd case: a 2x2 stride-1 reducer brings d to d-1, then the even
        // schedule applies
        let mut shapes = vec![(2, 1, 1)];
        shapes.extend(even_layer_shapes(variant, d - 1));
        Ok(shapes)
    }
}

impl SlicerSchedule {
    /// Builds the schedule for `variant` on `c x d x d` inputs with `k`
    /// output channels. `nonlinear` inserts a sigmoid after every layer
    /// except the last.
    pub fn new(
        variant: SlicerVariant,
        channels: usize,
        input_dim: usize,
        k: usize,
        nonlinear: bool,
    ) -> Result<Self> {
        if channels == 0 || k == 0 {
            return Err(Error::InvalidShape("channels and k must be >= 1".into()));
        }
        let shapes = scalar_layer_shapes(variant, input_dim)?;
        let last = shapes.len() - 1;
        let layers = shapes
            .iter()
            .enumerate()
            .map(|(l, &(kernel, stride, dilation))| LayerSpec {
                in_channels: if l == 0 { channels } else { k },
                out_channels: k,
                kernel,
                stride,
                dilation,
                sigmoid: nonlinear && l != last,
            })
            .collect();
        let schedule = Self {
            variant,
            nonlinear,
            k,
            channels,
            input_dim,
            layers,
        };
        debug_assert_eq!(schedule.spatial_dims()?.last(), Some(&1));
        Ok(schedule)
    }

    pub fn base(channels: usize, input_dim: usize) -> Result<Self> {
        Self::new(SlicerVariant::Base, channels, input_dim, 1, false)
    }

    pub fn stride(channels: usize, input_dim: usize) -> Result<Self> {
        Self::new(SlicerVariant::Stride, channels, input_dim, 1, false)
    }

    pub fn dilation(channels: usize, input_dim: usize) -> Result<Self> {
        Self::new(SlicerVariant::Dilation, channels, input_dim, 1, false)
    }

    /// A degenerate one-layer schedule whose kernel covers the whole
    /// image; applying it equals the dot product with a vectorized unit
    /// direction (conventional slicing).
    pub fn single_full(channels: usize, input_dim: usize) -> Result<Self> {
        if channels == 0 || input_dim == 0 {
            return Err(Error::InvalidShape("zero input shape".into()));
        }
        Ok(Self {
            variant: SlicerVariant::Base,
            nonlinear: false,
            k: 1,
            channels,
            input_dim,
            layers: vec![LayerSpec {
                in_channels: channels,
                out_channels: 1,
                kernel: input_dim,
                stride: 1,
                dilation: 1,
                sigmoid: false,
            }],
        })
    }

    pub fn variant(&self) -> SlicerVariant {
        self.variant
    }

    pub fn nonlinear(&self) -> bool {
        self.nonlinear
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Spatial dimension after each layer; the last entry is always 1.
    pub fn spatial_dims(&self) -> Result<Vec<usize>> {
        let mut dims = Vec::with_capacity(self.layers.len());
        let mut d = self.input_dim;
        for layer in &self.layers {
            d = output_dim(d, layer.kernel, layer.stride, layer.dilation)?;
            dims.push(d);
        }
        Ok(dims)
    }

    /// Total stored kernel entries (projection memory per slice).
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.out_channels * l.in_channels * l.kernel * l.kernel)
            .sum()
    }

    /// Total multiply-accumulates for one slicer evaluation.
    pub fn mac_count(&self) -> Result<usize> {
        let mut total = 0;
        let mut d = self.input_dim;
        for layer in &self.layers {
            total += layer.out_channels * mac_count(d, &layer.conv_spec())?;
            d = output_dim(d, layer.kernel, layer.stride, layer.dilation)?;
        }
        Ok(total)
    }
}

/// Builds the `k`-channel variant of a scalar schedule: layer 1 maps
/// `c -> k` channels, later layers `k -> k`; for `k = 1` this is the
/// scalar schedule.
pub fn make_k_schedule(
    variant: SlicerVariant,
    channels: usize,
    input_dim: usize,
    k: usize,
) -> Result<SlicerSchedule> {
    SlicerSchedule::new(variant, channels, input_dim, k, false)
}

/// A sampled realization of a schedule: one unit-norm kernel per layer
/// per output channel.
#[derive(Debug, Clone)]
pub struct KernelStack {
    schedule: SlicerSchedule,
    /// `kernels[layer][out_channel]`, each `in_channels x kernel x kernel`.
    kernels: Vec<Vec<Tensor3>>,
}

impl KernelStack {
    /// Wraps explicit kernels after validating shapes against the schedule.
    pub fn from_kernels(schedule: SlicerSchedule, kernels: Vec<Vec<Tensor3>>) -> Result<Self> {
        if kernels.len() != schedule.layers.len() {
            return Err(Error::InvalidShape("kernel count != layer count".into()));
        }
        for (layer, ks) in schedule.layers.iter().zip(&kernels) {
            if ks.len() != layer.out_channels {
                return Err(Error::InvalidShape("per-layer kernel count mismatch".into()));
            }
            for k in ks {
                if k.channels() != layer.in_channels || k.dim() != layer.kernel {
                    return Err(Error::InvalidShape("kernel shape mismatch".into()));
                }
            }
        }
        Ok(Self { schedule, kernels })
    }

    pub fn schedule(&self) -> &SlicerSchedule {
        &self.schedule
    }

    pub fn kernels(&self) -> &[Vec<Tensor3>] {
        &self.kernels
    }

    pub fn kernels_mut(&mut self) -> &mut [Vec<Tensor3>] {
        &mut self.kernels
    }

    /// Renormalizes every kernel to unit Frobenius norm (the projected
    /// gradient ascent retraction step).
    pub fn renormalize(&mut self) {
        for layer in &mut self.kernels {
            for kernel in layer {
                let norm = kernel.frobenius_norm();
                if norm > 0.0 {
                    kernel.scale(1.0 / norm);
                }
            }
        }
    }
}

/// Draws one unit-norm kernel per layer per output channel from `rng`.
pub fn sample_kernel_stack(schedule: &SlicerSchedule, rng: &mut Substream) -> Result<KernelStack> {
    let kernels = schedule
        .layers
        .iter()
        .map(|layer| {
            (0..layer.out_channels)
                .map(|_| sample_unit_tensor(layer.in_channels, layer.kernel, rng))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(KernelStack {
        schedule: schedule.clone(),
        kernels,
    })
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn stack_channels(parts: Vec<Tensor3>) -> Tensor3 {
    let dim = parts[0].dim();
    let channels = parts.len();
    let mut data = Vec::with_capacity(channels * dim * dim);
    for p in parts {
        data.extend_from_slice(p.data());
    }
    Tensor3::new(channels, dim, data).expect("stacked channel shapes agree")
}

fn check_input(stack: &KernelStack, x: &Tensor3) -> Result<()> {
    let s = &stack.schedule;
    if x.channels() != s.channels || x.dim() != s.input_dim {
        return Err(Error::InvalidShape(format!(
            "input {}x{}x{} does not match schedule {}x{}x{}",
            x.channels(),
            x.dim(),
            x.dim(),
            s.channels,
            s.input_dim,
            s.input_dim
        )));
    }
    Ok(())
}

fn forward_pass(
    stack: &KernelStack,
    x: &Tensor3,
    sigma: &dyn Fn(f64) -> f64,
) -> Result<(Vec<Tensor3>, Vec<Tensor3>)> {
    check_input(stack, x)?;
    let mut inputs = Vec::with_capacity(stack.kernels.len());
    let mut outputs = Vec::with_capacity(stack.kernels.len());
    let mut state = x.clone();
    for (layer, kernels) in stack.schedule.layers.iter().zip(&stack.kernels) {
        inputs.push(state.clone());
        let parts = kernels
            .iter()
            .map(|k| conv2d(&state, k, layer.stride, layer.dilation))
            .collect::<Result<Vec<_>>>()?;
        let mut merged = stack_channels(parts);
        if layer.sigmoid {
            for v in merged.data_mut() {
                *v = sigma(*v);
            }
        }
        outputs.push(merged.clone());
        state = merged;
    }
    Ok((inputs, outputs))
}

/// Applies the slicer, returning a point in `R^k`.
pub fn apply_slicer(stack: &KernelStack, x: &Tensor3) -> Result<Vec<f64>> {
    let (_, outputs) = forward_pass(stack, x, &sigmoid)?;
    Ok(outputs.last().expect("at least one layer").data().to_vec())
}

/// Scalar shorthand for `k = 1` slicers.
pub fn apply_slicer_scalar(stack: &KernelStack, x: &Tensor3) -> Result<f64> {
    if stack.schedule.k != 1 {
        return Err(Error::InvalidArgument("scalar apply requires k = 1".into()));
    }
    Ok(apply_slicer(stack, x)?[0])
}

#[cfg(test)]
pub(crate) fn apply_slicer_with_sigma(
    stack: &KernelStack,
    x: &Tensor3,
    sigma: impl Fn(f64) -> f64,
) -> Result<Vec<f64>> {
    let (_, outputs) = forward_pass(stack, x, &sigma)?;
    Ok(outputs.last().expect("at least one layer").data().to_vec())
}

/// Gradients of every output component with respect to every kernel
/// entry, mirroring the `kernels[layer][out_channel]` layout.
pub struct SlicerGradient {
    pub value: Vec<f64>,
    /// `grads[output_component][layer][out_channel]`.
    pub grads: Vec<Vec<Vec<Tensor3>>>,
}

/// Reverse-mode differentiation through the convolution chain (and the
/// sigmoid for nonlinear slicers), one backward pass per output
/// component.
pub fn apply_slicer_with_grad_multi(stack: &KernelStack, x: &Tensor3) -> Result<SlicerGradient> {
    let (inputs, outputs) = forward_pass(stack, x, &sigmoid)?;
    let value = outputs.last().expect("at least one layer").data().to_vec();
    let n_layers = stack.kernels.len();
    let k = stack.schedule.k;

    let mut grads = Vec::with_capacity(k);
    for component in 0..k {
        // seed on the final 1x1 output
        let mut grad_out = Tensor3::zeros(k, 1);
        grad_out.set(component, 0, 0, 1.0);

        let mut kernel_grads: Vec<Vec<Tensor3>> = stack
            .kernels
            .iter()
            .map(|ks| ks.iter().map(|t| Tensor3::zeros(t.channels(), t.dim())).collect())
            .collect();

        for l in (0..n_layers).rev() {
            let layer = &stack.schedule.layers[l];
            let input = &inputs[l];
            let (s, b) = (layer.stride, layer.dilation);
            let dp = outputs[l].dim();
            let kdim = layer.kernel;

            // back through the activation: sigma'(z) = y * (1 - y)
            let mut grad_z = grad_out.clone();
            if layer.sigmoid {
                for (g, &y) in grad_z.data_mut().iter_mut().zip(outputs[l].data()) {
                    *g *= y * (1.0 - y);
                }
            }

            let mut grad_in = Tensor3::zeros(input.channels(), input.dim());
            for m in 0..layer.out_channels {
                let kernel = &stack.kernels[l][m];
                let gk = &mut kernel_grads[l][m];
                for i in 0..dp {
                    for j in 0..dp {
                        let gy = grad_z.get(m, i, j);
                        if gy == 0.0 {
                            continue;
                        }
                        for h in 0..input.channels() {
                            for ki in 0..kdim {
                                for kj in 0..kdim {
                                    let (r, c) = (s * i + b * ki, s * j + b * kj);
                                    gk.set(
                                        h,
                                        ki,
                                        kj,
                                        gk.get(h, ki, kj) + gy * input.get(h, r, c),
                                    );
                                    grad_in.set(
                                        h,
                                        r,
                                        c,
                                        grad_in.get(h, r, c) + gy * kernel.get(h, ki, kj),
                                    );
                                }
                            }
                        }
                    }
                }
            }
            grad_out = grad_in;
        }
        grads.push(kernel_grads);
    }
    Ok(SlicerGradient { value, grads })
}

/// Value and kernel gradient for a scalar (`k = 1`) slicer. The gradient
/// matches central finite differences at non-degenerate points.
pub fn apply_slicer_with_grad(
    stack: &KernelStack,
    x: &Tensor3,
) -> Result<(f64, Vec<Vec<Tensor3>>)> {
    if stack.schedule.k != 1 {
        return Err(Error::InvalidArgument("gradient apply requires k = 1".into()));
    }
    let mut g = apply_slicer_with_grad_multi(stack, x)?;
    Ok((g.value[0], g.grads.pop().expect("one component")))
}
