//! Network assembly, forward evaluation with activation caching, and
//! reverse-mode differentiation seeded at the pre-softmax scores.

use crate::error::{GpError, Result};
use crate::layers::Layer;
use crate::tensor::Tensor;

/// Where a backward pass stops, or where a re-entrant forward starts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Truncation {
    /// All the way to the network input.
    Input,
    /// Stop at the input activation of the named layer.
    Layer(String),
}

impl Truncation {
    pub fn parse(s: &str) -> Truncation {
        if s.eq_ignore_ascii_case("input") {
            Truncation::Input
        } else {
            Truncation::Layer(s.to_string())
        }
    }
}

impl std::fmt::Display for Truncation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Truncation::Input => write!(f, "INPUT"),
            Truncation::Layer(name) => write!(f, "{name}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<Layer>,
    input_shape: Vec<usize>,
    num_classes: usize,
    /// input shape of each layer, plus the final score shape at the end.
    shapes: Vec<Vec<usize>>,
    /// Per-channel means subtracted from raw inputs before inference.
    pub channel_means: Vec<f64>,
}

impl Network {
    pub fn new(layers: Vec<Layer>, input_shape: Vec<usize>, num_classes: usize) -> Result<Self> {
        if layers.is_empty() {
            return Err(GpError::InvalidArgument("network has no layers".into()));
        }
        for (i, a) in layers.iter().enumerate() {
            for b in &layers[i + 1..] {
                if a.name == b.name {
                    return Err(GpError::InvalidArgument(format!(
                        "duplicate layer name `{}`",
                        a.name
                    )));
                }
            }
        }
        let mut shapes = vec![input_shape.clone()];
        for layer in &layers {
            let next = layer.out_shape(shapes.last().unwrap())?;
            shapes.push(next);
        }
        let out = shapes.last().unwrap();
        let out_ok = match out.len() {
            1 => out[0] == num_classes,
            3 => out[0] == num_classes,
            _ => false,
        };
        if !out_ok {
            return Err(GpError::InvalidArgument(format!(
                "final layer produces {out:?}, expected {num_classes} score channels"
            )));
        }
        Ok(Network {
            layers,
            input_shape,
            num_classes,
            shapes,
            channel_means: Vec::new(),
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn score_shape(&self) -> &[usize] {
        self.shapes.last().unwrap()
    }

    pub fn layer_index(&self, name: &str) -> Result<usize> {
        self.layers
            .iter()
            .position(|l| l.name == name)
            .ok_or_else(|| GpError::UnknownLayer(name.to_string()))
    }

    /// Input activation shape of the named layer.
    pub fn layer_input_shape(&self, name: &str) -> Result<&[usize]> {
        Ok(&self.shapes[self.layer_index(name)?])
    }

    /// Name of the layer following `name`, if any.
    pub fn layer_after(&self, name: &str) -> Result<Option<&str>> {
        let i = self.layer_index(name)?;
        Ok(self.layers.get(i + 1).map(|l| l.name.as_str()))
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }

    /// Mutable access for the trainer; inference paths never call this.
    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }
}

/// Cached activations from one forward pass: `acts[i]` is the input of layer
/// `i`, `acts[len]` is the final score tensor.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    acts: Vec<Tensor>,
}

impl ForwardTrace {
    pub fn scores(&self) -> &Tensor {
        self.acts.last().unwrap()
    }

    pub fn input_of(&self, layer_idx: usize) -> &Tensor {
        &self.acts[layer_idx]
    }

    pub fn output_of(&self, layer_idx: usize) -> &Tensor {
        &self.acts[layer_idx + 1]
    }

    pub fn num_layers(&self) -> usize {
        self.acts.len() - 1
    }
}

#[derive(Debug, Clone)]
pub struct GradientBundle {
    /// Gradient at the activation where the backward pass terminated.
    pub input_grad: Tensor,
    /// Per-layer (d_weights, d_bias), indexed like `Network::layers`;
    /// None for parameterless layers. Only populated by `backward_params`.
    pub param_grads: Option<Vec<Option<(Tensor, Tensor)>>>,
}

/// Traced evaluation of layers `start_idx..`, starting from `activation`.
/// Returns activations `[activation, out(start_idx), ..., scores]`.
pub(crate) fn forward_layers(
    net: &Network,
    start_idx: usize,
    activation: &Tensor,
) -> Result<Vec<Tensor>> {
    let mut acts = Vec::with_capacity(net.layers.len() - start_idx + 1);
    acts.push(activation.clone());
    for layer in &net.layers[start_idx..] {
        let out = layer.forward(acts.last().unwrap())?;
        acts.push(out);
    }
    Ok(acts)
}

/// Reverse sweep over layers `start_idx..` given their traced activations
/// (as produced by `forward_layers`). Returns the gradient at `acts[0]`.
pub(crate) fn backward_layers(
    net: &Network,
    acts: &[Tensor],
    start_idx: usize,
    seed: &Tensor,
) -> Result<Tensor> {
    let mut grad = seed.clone();
    for i in (start_idx..net.layers.len()).rev() {
        grad = net.layers[i].backward_input(&acts[i - start_idx], &grad)?;
    }
    Ok(grad)
}

/// Full forward pass caching every intermediate activation.
pub fn forward(net: &Network, x: &Tensor) -> Result<ForwardTrace> {
    if x.shape() != net.input_shape {
        return Err(GpError::shape(&net.input_shape, x.shape(), "forward input"));
    }
    Ok(ForwardTrace {
        acts: forward_layers(net, 0, x)?,
    })
}

/// Evaluate only layers from `layer` onward, starting from the given
/// activation (which must match that layer's recorded input shape).
pub fn forward_from(net: &Network, layer: &str, activation: &Tensor) -> Result<Tensor> {
    let start = net.layer_index(layer)?;
    if activation.shape() != net.shapes[start] {
        return Err(GpError::shape(
            &net.shapes[start],
            activation.shape(),
            format!("forward_from {layer}"),
        ));
    }
    let mut act = activation.clone();
    for l in &net.layers[start..] {
        act = l.forward(&act)?;
    }
    Ok(act)
}

/// Vector-Jacobian product of `scores . seed` with respect to the activation
/// at `stop`: seeded at the pre-softmax scores, backpropagated through every
/// layer above the stop point.
pub fn backward_from_seed(
    net: &Network,
    trace: &ForwardTrace,
    seed: &Tensor,
    stop: &Truncation,
) -> Result<GradientBundle> {
    if seed.shape() != trace.scores().shape() {
        return Err(GpError::shape(
            trace.scores().shape(),
            seed.shape(),
            "backward seed",
        ));
    }
    let stop_idx = match stop {
        Truncation::Input => 0,
        Truncation::Layer(name) => net.layer_index(name)?,
    };
    let grad = backward_layers(net, &trace.acts[stop_idx..], stop_idx, seed)?;
    Ok(GradientBundle {
        input_grad: grad,
        param_grads: None,
    })
}

/// Standard reverse-mode parameter gradients, seeded with a loss gradient at
/// the scores. Also carries the gradient at the network input.
pub fn backward_params(
    net: &Network,
    trace: &ForwardTrace,
    loss_grad_at_scores: &Tensor,
) -> Result<GradientBundle> {
    if loss_grad_at_scores.shape() != trace.scores().shape() {
        return Err(GpError::shape(
            trace.scores().shape(),
            loss_grad_at_scores.shape(),
            "loss gradient",
        ));
    }
    let mut grad = loss_grad_at_scores.clone();
    let mut param_grads: Vec<Option<(Tensor, Tensor)>> = vec![None; net.layers.len()];
    for i in (0..net.layers.len()).rev() {
        let x = trace.input_of(i);
        param_grads[i] = net.layers[i].backward_params(x, &grad)?;
        grad = net.layers[i].backward_input(x, &grad)?;
    }
    Ok(GradientBundle {
        input_grad: grad,
        param_grads: Some(param_grads),
    })
}

/// Numerically stable softmax over the channel axis of a [C,H,W] tensor, or
/// over the whole vector for 1-d scores.
pub fn softmax(z: &Tensor) -> Result<Tensor> {
    match z.shape().len() {
        1 => {
            let mut out = z.clone();
            softmax_slice(out.data_mut());
            Ok(out)
        }
        3 => {
            let (c, h, w) = (z.shape()[0], z.shape()[1], z.shape()[2]);
            let plane = h * w;
            let mut out = z.clone();
            let d = out.data_mut();
            let mut col = vec![0.0; c];
            for p in 0..plane {
                for ch in 0..c {
                    col[ch] = d[ch * plane + p];
                }
                softmax_slice(&mut col);
                for ch in 0..c {
                    d[ch * plane + p] = col[ch];
                }
            }
            Ok(out)
        }
        _ => Err(GpError::InvalidArgument(format!(
            "softmax expects [C] or [C,H,W] scores, got {:?}",
            z.shape()
        ))),
    }
}

fn softmax_slice(v: &mut [f64]) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Central finite differences of `scores . seed` with respect to every input
/// element. Forward passes only; serves as the independent oracle for
/// `backward_from_seed`.
pub fn finite_difference_input_grad(
    net: &Network,
    x: &Tensor,
    seed: &Tensor,
    step: f64,
) -> Result<Tensor> {
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[i] += step;
        let mut xm = x.clone();
        xm.data_mut()[i] -= step;
        let fp = forward(net, &xp)?.scores().dot(seed)?;
        let fm = forward(net, &xm)?.scores().dot(seed)?;
        grad.data_mut()[i] = (fp - fm) / (2.0 * step);
    }
    Ok(grad)
}

/// Central finite differences of a scalar loss with respect to one layer's
/// parameters, for checking `backward_params`.
pub fn finite_difference_param_grad(
    net: &Network,
    x: &Tensor,
    seed: &Tensor,
    layer_idx: usize,
    step: f64,
) -> Result<Option<(Tensor, Tensor)>> {
    use crate::layers::LayerKind;
    let eval = |net: &Network| -> Result<f64> { forward(net, x)?.scores().dot(seed) };
    let layer = &net.layers[layer_idx];
    let (nw, nb) = match &layer.kind {
        LayerKind::Conv2d { weights, bias, .. } => (weights.len(), bias.len()),
        LayerKind::Linear { weights, bias } => (weights.len(), bias.len()),
        _ => return Ok(None),
    };
    let mut dw_data = vec![0.0; nw];
    let mut db_data = vec![0.0; nb];
    let (w_shape, b_shape);
    match &layer.kind {
        LayerKind::Conv2d { weights, bias, .. } | LayerKind::Linear { weights, bias } => {
            w_shape = weights.shape().to_vec();
            b_shape = bias.shape().to_vec();
        }
        _ => unreachable!(),
    }
    for i in 0..nw + nb {
        let bump = |delta: f64| -> Result<f64> {
            let mut n2 = net.clone();
            match &mut n2.layers_mut()[layer_idx].kind {
                LayerKind::Conv2d { weights, bias, .. } | LayerKind::Linear { weights, bias } => {
                    if i < nw {
                        weights.data_mut()[i] += delta;
                    } else {
                        bias.data_mut()[i - nw] += delta;
                    }
                }
                _ => unreachable!(),
            }
            eval(&n2)
        };
        let g = (bump(step)? - bump(-step)?) / (2.0 * step);
        if i < nw {
            dw_data[i] = g;
        } else {
            db_data[i - nw] = g;
        }
    }
    Ok(Some((
        Tensor::new(w_shape, dw_data)?,
        Tensor::new(b_shape, db_data)?,
    )))
}
