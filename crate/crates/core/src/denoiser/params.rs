use std::fmt;
use std::io::{BufRead, Read, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numeric::{Rng, Tensor};

/// Shape of the ε-prediction MLP.
///
/// The first layer sees `[x_in, time_embedding(t), self_cond_input]`. Class
/// conditioning does not widen the input: a learned row per class (plus a
/// null row at index `cond_classes`) is added to the first hidden
/// pre-activation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpArch {
    pub in_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub time_embed_dim: usize,
    pub cond_classes: Option<usize>,
    pub self_cond: bool,
}

impl MlpArch {
    pub fn new(in_dim: usize, hidden_dims: Vec<usize>, time_embed_dim: usize) -> Result<Self> {
        Self {
            in_dim,
            hidden_dims,
            time_embed_dim,
            cond_classes: None,
            self_cond: false,
        }
        .validated()
    }

    pub fn validated(self) -> Result<Self> {
        if self.in_dim == 0 {
            return Err(Error::InvalidArgument("in_dim must be positive".into()));
        }
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return Err(Error::InvalidArgument(
                "need at least one hidden layer, all widths positive".into(),
            ));
        }
        if !self.time_embed_dim.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "time_embed_dim must be even, got {}",
                self.time_embed_dim
            )));
        }
        if self.cond_classes == Some(0) {
            return Err(Error::InvalidArgument("cond_classes must be positive".into()));
        }
        Ok(self)
    }

    pub fn input_width(&self) -> usize {
        self.in_dim + self.time_embed_dim + if self.self_cond { self.in_dim } else { 0 }
    }

    /// `(fan_in, fan_out)` per dense layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut prev = self.input_width();
        for &h in &self.hidden_dims {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.in_dim));
        dims
    }

    /// Row of the class-embedding table used for "no label".
    pub fn null_class(&self) -> Option<usize> {
        self.cond_classes
    }
}

impl fmt::Display for MlpArch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let hidden: Vec<String> = self.hidden_dims.iter().map(usize::to_string).collect();
        write!(
            f,
            "in={} hidden={} temb={} classes={} self_cond={}",
            self.in_dim,
            hidden.join(","),
            self.time_embed_dim,
            self.cond_classes
                .map_or_else(|| "none".to_string(), |c| c.to_string()),
            u8::from(self.self_cond)
        )
    }
}

impl FromStr for MlpArch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |why: String| Error::Format(format!("arch {s:?}: {why}"));
        let mut in_dim = None;
        let mut hidden = None;
        let mut temb = None;
        let mut classes = None;
        let mut self_cond = false;
        for tok in s.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| bad(format!("token {tok:?} is not key=value")))?;
            let num = |v: &str| v.parse::<usize>().map_err(|_| bad(format!("bad number {v:?}")));
            match k {
                "in" => in_dim = Some(num(v)?),
                "hidden" => {
                    hidden = Some(v.split(',').map(num).collect::<Result<Vec<_>>>()?);
                }
                "temb" => temb = Some(num(v)?),
                "classes" => classes = if v == "none" { None } else { Some(num(v)?) },
                "self_cond" => self_cond = num(v)? != 0,
                _ => return Err(bad(format!("unknown key {k:?}"))),
            }
        }
        MlpArch {
            in_dim: in_dim.ok_or_else(|| bad("missing in".into()))?,
            hidden_dims: hidden.ok_or_else(|| bad("missing hidden".into()))?,
            time_embed_dim: temb.ok_or_else(|| bad("missing temb".into()))?,
            cond_classes: classes,
            self_cond,
        }
        .validated()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `[fan_out, fan_in]`.
    pub weight: Tensor,
    /// `[fan_out]`.
    pub bias: Tensor,
}

/// MLP weights. Also used as the gradient and optimizer-moment container,
/// since those have identical structure.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    pub arch: MlpArch,
    pub layers: Vec<Dense>,
    /// `[cond_classes + 1, hidden_dims[0]]` when conditional.
    pub class_embed: Option<Tensor>,
}

/// Scale of the hidden-layer uniform init relative to `√(3/fan_in)`; keeps
/// SiLU activations at roughly unit scale through depth.
const INIT_GAIN: f64 = 1.6;

impl DenoiserParams {
    pub fn zeros(arch: &MlpArch) -> Self {
        let layers = arch
            .layer_dims()
            .into_iter()
            .map(|(fan_in, fan_out)| Dense {
                weight: Tensor::zeros(&[fan_out, fan_in]),
                bias: Tensor::zeros(&[fan_out]),
            })
            .collect();
        let class_embed = arch
            .cond_classes
            .map(|c| Tensor::zeros(&[c + 1, arch.hidden_dims[0]]));
        Self {
            arch: arch.clone(),
            layers,
            class_embed,
        }
    }

    /// Training init: scaled-uniform hidden layers, zero output layer (so
    /// the initial prediction is ε̂ = 0) and zero weights on the
    /// self-conditioning slice of the input.
    pub fn init(arch: &MlpArch, rng: &mut Rng) -> Self {
        let mut p = Self::init_random(arch, rng, 1.0);
        let last = p.layers.last_mut().expect("at least one layer");
        last.weight.data_mut().fill(0.0);
        last.bias.data_mut().fill(0.0);
        if arch.self_cond {
            let width = arch.input_width();
            let start = arch.in_dim + arch.time_embed_dim;
            let w = &mut p.layers[0].weight;
            for r in 0..w.rows() {
                w.data_mut()[r * width + start..(r + 1) * width].fill(0.0);
            }
        }
        p
    }

    /// Every tensor drawn at random, biases included; the output layer is
    /// scaled by `output_gain`. Used for gradient checks.
    pub fn init_random(arch: &MlpArch, rng: &mut Rng, output_gain: f64) -> Self {
        let mut p = Self::zeros(arch);
        let n_layers = p.layers.len();
        for (i, layer) in p.layers.iter_mut().enumerate() {
            let fan_in = layer.weight.shape()[1] as f64;
            let gain = if i + 1 == n_layers { output_gain } else { INIT_GAIN };
            let a = gain * (3.0 / fan_in).sqrt();
            for w in layer.weight.data_mut() {
                *w = a * (2.0 * rng.uniform() - 1.0);
            }
            for b in layer.bias.data_mut() {
                *b = 0.1 * (2.0 * rng.uniform() - 1.0);
            }
        }
        if let Some(e) = p.class_embed.as_mut() {
            for v in e.data_mut() {
                *v = 0.5 * (2.0 * rng.uniform() - 1.0);
            }
        }
        p
    }

    /// Parameter tensors in serialization order: each layer's weight then
    /// bias, then the class embedding.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = Vec::with_capacity(2 * self.layers.len() + 1);
        for l in &self.layers {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out.extend(self.class_embed.as_ref());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::with_capacity(2 * self.layers.len() + 1);
        for l in &mut self.layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.extend(self.class_embed.as_mut());
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.arch)
    }

    pub fn same_structure(&self, other: &Self) -> bool {
        self.arch == other.arch
            && self
                .tensors()
                .iter()
                .zip(other.tensors())
                .all(|(a, b)| a.shape() == b.shape())
    }

    /// Flat copy of all parameters in serialization order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors()
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "{} {}", FILE_MAGIC, self.arch)?;
        for t in self.tensors() {
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let mut r = std::io::BufReader::new(r);
        let mut header = String::new();
        r.read_line(&mut header)
            .map_err(|e| Error::Format(format!("reading header: {e}")))?;
        let arch_str = header
            .trim_end_matches('\n')
            .strip_prefix(FILE_MAGIC)
            .ok_or_else(|| Error::Format("missing params header".into()))?;
        let arch: MlpArch = arch_str.parse()?;
        let mut p = Self::zeros(&arch);
        let mut buf = [0u8; 8];
        for t in p.tensors_mut() {
            for v in t.data_mut() {
                r.read_exact(&mut buf)
                    .map_err(|_| Error::Format("params file truncated".into()))?;
                *v = f64::from_le_bytes(buf);
            }
        }
        if r.read(&mut buf).map_err(|e| Error::Format(e.to_string()))? != 0 {
            return Err(Error::Format("trailing bytes after params".into()));
        }
        if !p.is_finite() {
            return Err(Error::Format("params file contains non-finite values".into()));
        }
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(std::io::BufWriter::new(f))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(f)
    }
}

const FILE_MAGIC: &str = "schedlab-mlp";
