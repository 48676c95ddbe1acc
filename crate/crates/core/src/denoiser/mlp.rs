use super::embedding::write_time_embedding;
use super::params::DenoiserParams;
use crate::error::{Error, Result};
use crate::numeric::{gemm, Tensor};

/// Activations retained by [`mlp_forward_cached`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each dense layer.
    inputs: Vec<Tensor>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Tensor>,
    labels: Option<Vec<usize>>,
}

fn silu(z: f64) -> f64 {
    z / (1.0 + (-z).exp())
}

fn silu_grad(z: f64) -> f64 {
    let s = 1.0 / (1.0 + (-z).exp());
    s * (1.0 + z * (1.0 - s))
}

/// Predicted noise for a batch. See [`mlp_forward_cached`].
pub fn mlp_forward(
    p: &DenoiserParams,
    x_in: &Tensor,
    t: &[f64],
    labels: Option<&[usize]>,
    self_cond: Option<&Tensor>,
) -> Result<Tensor> {
    mlp_forward_cached(p, x_in, t, labels, self_cond).map(|(out, _)| out)
}

/// Forward pass over a `[batch, in_dim]` input.
///
/// For a conditional network, `labels = None` means the null class for
/// every example. For a self-conditioned network, `self_cond = None`
/// means a zero previous estimate.
pub fn mlp_forward_cached(
    p: &DenoiserParams,
    x_in: &Tensor,
    t: &[f64],
    labels: Option<&[usize]>,
    self_cond: Option<&Tensor>,
) -> Result<(Tensor, ForwardCache)> {
    let arch = &p.arch;
    let (batch, dim) = x_in.dims2()?;
    if dim != arch.in_dim {
        return Err(Error::Shape(format!(
            "network expects width {}, got {dim}",
            arch.in_dim
        )));
    }
    if t.len() != batch {
        return Err(Error::Shape(format!("{} times for batch {batch}", t.len())));
    }
    let labels: Option<Vec<usize>> = match (arch.cond_classes, labels) {
        (None, None) => None,
        (None, Some(_)) => {
            return Err(Error::InvalidArgument(
                "labels given to an unconditional network".into(),
            ))
        }
        (Some(c), None) => Some(vec![c; batch]),
        (Some(c), Some(l)) => {
            if l.len() != batch {
                return Err(Error::Shape(format!("{} labels for batch {batch}", l.len())));
            }
            if let Some(&bad) = l.iter().find(|&&v| v > c) {
                return Err(Error::InvalidArgument(format!(
                    "label {bad} out of range (classes={c}, null={c})"
                )));
            }
            Some(l.to_vec())
        }
    };
    match (arch.self_cond, self_cond) {
        (false, Some(_)) => {
            return Err(Error::InvalidArgument(
                "self-conditioning input given to a network without it".into(),
            ))
        }
        (true, Some(s)) => x_in.expect_same_shape(s)?,
        _ => {}
    }

    let width = arch.input_width();
    let temb = arch.time_embed_dim;
    let mut h = Tensor::zeros(&[batch, width]);
    for i in 0..batch {
        let row = h.row_mut(i);
        row[..dim].copy_from_slice(x_in.row(i));
        write_time_embedding(t[i], &mut row[dim..dim + temb]);
        if let Some(s) = self_cond {
            row[dim + temb..].copy_from_slice(s.row(i));
        }
    }

    let n_layers = p.layers.len();
    let mut inputs = Vec::with_capacity(n_layers);
    let mut pre = Vec::with_capacity(n_layers - 1);
    for (li, layer) in p.layers.iter().enumerate() {
        let (fan_out, fan_in) = layer.weight.dims2()?;
        let mut z = Tensor::zeros(&[batch, fan_out]);
        for i in 0..batch {
            z.row_mut(i).copy_from_slice(layer.bias.data());
        }
        gemm(
            batch,
            fan_in,
            fan_out,
            1.0,
            h.data(),
            (fan_in, 1),
            layer.weight.data(),
            (1, fan_in),
            1.0,
            z.data_mut(),
        );
        if li == 0 {
            if let (Some(table), Some(l)) = (&p.class_embed, &labels) {
                for (i, &c) in l.iter().enumerate() {
                    for (v, e) in z.row_mut(i).iter_mut().zip(table.row(c)) {
                        *v += e;
                    }
                }
            }
        }
        inputs.push(h);
        if li + 1 == n_layers {
            let out = z.check_finite("mlp_forward")?;
            return Ok((out, ForwardCache { inputs, pre, labels }));
        }
        h = z.map(silu);
        pre.push(z);
    }
    unreachable!("network has an output layer")
}

/// Gradients of a scalar loss with respect to every parameter, given
/// `loss_grad = ∂loss/∂output`.
pub fn mlp_backward(
    p: &DenoiserParams,
    cache: &ForwardCache,
    loss_grad: &Tensor,
) -> Result<DenoiserParams> {
    let (batch, out_dim) = loss_grad.dims2()?;
    if out_dim != p.arch.in_dim || cache.inputs.first().map(Tensor::rows) != Some(batch) {
        return Err(Error::Shape(format!(
            "loss gradient {:?} does not match the cached forward pass",
            loss_grad.shape()
        )));
    }
    let mut grads = p.zeros_like();
    let mut dz = loss_grad.clone();
    for li in (0..p.layers.len()).rev() {
        let layer = &p.layers[li];
        let (fan_out, fan_in) = layer.weight.dims2()?;
        let h = &cache.inputs[li];
        let g = &mut grads.layers[li];
        gemm(
            fan_out,
            batch,
            fan_in,
            1.0,
            dz.data(),
            (1, fan_out),
            h.data(),
            (fan_in, 1),
            0.0,
            g.weight.data_mut(),
        );
        let gb = g.bias.data_mut();
        for i in 0..batch {
            for (acc, v) in gb.iter_mut().zip(dz.row(i)) {
                *acc += v;
            }
        }
        if li == 0 {
            if let (Some(table), Some(labels)) = (grads.class_embed.as_mut(), &cache.labels) {
                for (i, &c) in labels.iter().enumerate() {
                    for (acc, v) in table.row_mut(c).iter_mut().zip(dz.row(i)) {
                        *acc += v;
                    }
                }
            }
            break;
        }
        let mut dh = Tensor::zeros(&[batch, fan_in]);
        gemm(
            batch,
            fan_out,
            fan_in,
            1.0,
            dz.data(),
            (fan_out, 1),
            layer.weight.data(),
            (fan_in, 1),
            0.0,
            dh.data_mut(),
        );
        let z_prev = &cache.pre[li - 1];
        for (d, &z) in dh.data_mut().iter_mut().zip(z_prev.data()) {
            *d *= silu_grad(z);
        }
        dz = dh;
    }
    Ok(grads)
}

/// `mean((pred − target)²)` over every element, and its gradient with
/// respect to `pred`.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    pred.expect_same_shape(target)?;
    let n = pred.len() as f64;
    let diff = pred.sub(target)?;
    let loss = diff.data().iter().map(|d| d * d).sum::<f64>() / n;
    Ok((loss, diff.scale(2.0 / n)))
}
