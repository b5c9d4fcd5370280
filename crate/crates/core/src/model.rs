//! Encoder, decoder and regression heads, plus the model file container.
//!
//! Model file layout (all integers and floats little-endian):
//!
//! ```text
//! magic        8 bytes  "CHRNCMDL"
//! version      u32      1
//! header_len   u32
//! header       UTF-8 JSON: architecture and metadata
//! n_arrays     u32
//! per array:   name_len u32, name UTF-8, ndim u32, dims u64 x ndim,
//!              values f64 x prod(dims)
//! ```
//!
//! Array names: `encoder.input_mean`, `encoder.input_scale`,
//! `encoder.layer{l}.weight|bias`, `decoder.layer{l}.weight|bias`,
//! `head.{score}.layer{l}.weight|bias`.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp, MlpCache};
use crate::rng::Rng;

const MAGIC: &[u8; 8] = b"CHRNCMDL";
const VERSION: u32 = 1;

/// Feature encoder: fixed per-feature standardization followed by an MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderSpec {
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub net: Mlp,
}

pub struct EncoderCache {
    net: MlpCache,
}

impl EncoderSpec {
    pub fn new(
        input_dim: usize,
        hidden: &[usize],
        embed_dim: usize,
        activation: Activation,
        rng: &mut Rng,
    ) -> Self {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(embed_dim);
        Self {
            input_mean: vec![0.0; input_dim],
            input_scale: vec![1.0; input_dim],
            net: Mlp::new(&dims, activation, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn embed_dim(&self) -> usize {
        self.net.output_dim()
    }

    /// Sets standardization from the column means and standard deviations of
    /// `x`; near-constant columns keep unit scale.
    pub fn fit_normalization(&mut self, x: ArrayView2<f64>) {
        let n = x.nrows().max(1) as f64;
        for j in 0..x.ncols() {
            let col = x.column(j);
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            self.input_mean[j] = mean;
            self.input_scale[j] = if var.sqrt() > 1e-12 { 1.0 / var.sqrt() } else { 1.0 };
        }
    }

    fn normalize(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut z = x.to_owned();
        for mut row in z.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.input_mean).zip(&self.input_scale) {
                *v = (*v - m) * s;
            }
        }
        z
    }

    pub fn embed(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.net.forward(self.normalize(x).view())
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> (Array2<f64>, EncoderCache) {
        let (out, net) = self.net.forward_cached(self.normalize(x).view());
        (out, EncoderCache { net })
    }

    /// Gradient with respect to the trainable MLP parameters.
    pub fn backward(&self, cache: &EncoderCache, d_emb: ArrayView2<f64>) -> Vec<f64> {
        self.net.backward(&cache.net, d_emb).0
    }
}

/// One scalar regression head per score type.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorSpec {
    pub score_names: Vec<String>,
    pub heads: Vec<Mlp>,
}

impl RegressorSpec {
    pub fn new(
        score_names: &[String],
        embed_dim: usize,
        hidden: &[usize],
        activation: Activation,
        rng: &mut Rng,
    ) -> Self {
        let mut dims = vec![embed_dim];
        dims.extend_from_slice(hidden);
        dims.push(1);
        Self {
            score_names: score_names.to_vec(),
            heads: score_names
                .iter()
                .map(|_| Mlp::new(&dims, activation, rng))
                .collect(),
        }
    }

    pub fn n_params(&self) -> usize {
        self.heads.iter().map(|h| h.params().len()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.heads.iter().flat_map(|h| h.params().iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        let mut off = 0;
        for h in &mut self.heads {
            let n = h.params().len();
            h.params_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }

    /// Raw (unclipped) predictions, shape `(n, heads)`.
    pub fn predict(&self, emb: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((emb.nrows(), self.heads.len()));
        for (k, h) in self.heads.iter().enumerate() {
            out.column_mut(k).assign(&h.forward(emb).column(0));
        }
        out
    }

    pub fn forward_cached(&self, emb: ArrayView2<f64>) -> (Array2<f64>, Vec<MlpCache>) {
        let mut out = Array2::zeros((emb.nrows(), self.heads.len()));
        let mut caches = Vec::with_capacity(self.heads.len());
        for (k, h) in self.heads.iter().enumerate() {
            let (y, c) = h.forward_cached(emb);
            out.column_mut(k).assign(&y.column(0));
            caches.push(c);
        }
        (out, caches)
    }

    /// Returns (flat head gradient, gradient with respect to embeddings).
    pub fn backward(&self, caches: &[MlpCache], d_out: ArrayView2<f64>) -> (Vec<f64>, Array2<f64>) {
        let mut grad = Vec::with_capacity(self.n_params());
        let mut d_emb: Option<Array2<f64>> = None;
        for (k, (h, c)) in self.heads.iter().zip(caches).enumerate() {
            let dk = d_out.column(k).to_owned().insert_axis(ndarray::Axis(1));
            let (g, dx) = h.backward(c, dk.view());
            grad.extend(g);
            d_emb = Some(match d_emb {
                None => dx,
                Some(acc) => acc + dx,
            });
        }
        (grad, d_emb.unwrap_or_else(|| Array2::zeros((d_out.nrows(), 0))))
    }
}

/// Everything a model file can hold.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub encoder: EncoderSpec,
    pub decoder: Option<Mlp>,
    pub regressor: Option<RegressorSpec>,
    pub meta: BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct NetHeader {
    dims: Vec<usize>,
    activation: Activation,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    encoder: NetHeader,
    decoder: Option<NetHeader>,
    heads: Option<(Vec<String>, NetHeader)>,
    meta: BTreeMap<String, String>,
}

fn net_header(m: &Mlp) -> NetHeader {
    NetHeader {
        dims: m.dims().to_vec(),
        activation: m.activation(),
    }
}

impl ModelBundle {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            encoder: net_header(&self.encoder.net),
            decoder: self.decoder.as_ref().map(net_header),
            heads: self
                .regressor
                .as_ref()
                .map(|r| (r.score_names.clone(), net_header(&r.heads[0]))),
            meta: self.meta.clone(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");

        let d = self.encoder.input_dim();
        let mut arrays: Vec<(String, Vec<usize>, &[f64])> = vec![
            ("encoder.input_mean".into(), vec![d], &self.encoder.input_mean),
            ("encoder.input_scale".into(), vec![d], &self.encoder.input_scale),
        ];
        arrays.extend(self.encoder.net.named_params("encoder"));
        if let Some(dec) = &self.decoder {
            arrays.extend(dec.named_params("decoder"));
        }
        if let Some(reg) = &self.regressor {
            for (name, head) in reg.score_names.iter().zip(&reg.heads) {
                arrays.extend(head.named_params(&format!("head.{name}")));
            }
        }

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
        for (name, dims, values) in arrays {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
            for dim in dims {
                out.extend_from_slice(&(dim as u64).to_le_bytes());
            }
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::ModelFormat("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::ModelFormat(format!("unsupported version {version}")));
        }
        let header_len = r.u32()? as usize;
        let header: Header = serde_json::from_slice(r.take(header_len)?)
            .map_err(|e| Error::ModelFormat(format!("header: {e}")))?;
        let n_arrays = r.u32()?;
        let mut arrays: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for _ in 0..n_arrays {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|e| Error::ModelFormat(format!("array name: {e}")))?;
            let ndim = r.u32()? as usize;
            let mut count = 1usize;
            for _ in 0..ndim {
                count = count
                    .checked_mul(r.u64()? as usize)
                    .ok_or_else(|| Error::ModelFormat("array too large".into()))?;
            }
            let values = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            arrays.insert(name, values);
        }
        if r.pos != bytes.len() {
            return Err(Error::ModelFormat("trailing bytes".into()));
        }

        let mut take = |name: &str| {
            arrays
                .remove(name)
                .ok_or_else(|| Error::ModelFormat(format!("missing array `{name}`")))
        };
        let mut load_net = |prefix: &str, h: &NetHeader| -> Result<Mlp> {
            let mut flat = Vec::new();
            for l in 0..h.dims.len() - 1 {
                flat.extend(take(&format!("{prefix}.layer{l}.weight"))?);
                flat.extend(take(&format!("{prefix}.layer{l}.bias"))?);
            }
            Mlp::from_params(&h.dims, h.activation, flat)
                .ok_or_else(|| Error::ModelFormat(format!("`{prefix}` shape mismatch")))
        };
        let net = load_net("encoder", &header.encoder)?;
        let decoder = header
            .decoder
            .as_ref()
            .map(|h| load_net("decoder", h))
            .transpose()?;
        let regressor = match &header.heads {
            None => None,
            Some((names, h)) => Some(RegressorSpec {
                score_names: names.clone(),
                heads: names
                    .iter()
                    .map(|n| load_net(&format!("head.{n}"), h))
                    .collect::<Result<_>>()?,
            }),
        };
        let input_mean = take("encoder.input_mean")?;
        let input_scale = take("encoder.input_scale")?;
        if input_mean.len() != net.input_dim() || input_scale.len() != net.input_dim() {
            return Err(Error::ModelFormat("normalization shape mismatch".into()));
        }
        Ok(ModelBundle {
            encoder: EncoderSpec {
                input_mean,
                input_scale,
                net,
            },
            decoder,
            regressor,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::ModelFormat("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
