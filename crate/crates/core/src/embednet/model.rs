use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gradcore::{Bindings, Graph, Init, Initializer, NodeId, ParamStore, Tensor};
use crate::imaging::FaceImage;

use super::config::{EncoderConfig, MarginConfig};

/// Prefix of the trainable encoder's parameters.
pub const ENCODER: &str = "enc.";
/// Prefix of the frozen trusted-image encoder in dual-encoder mode.
pub const TRUSTED: &str = "trusted.";
pub const ID_HEAD: &str = "id.w";
pub const CRITIC_A: &str = "critic_a.";
pub const CRITIC_G: &str = "critic_g.";

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTriple {
    pub z_a: Vec<f64>,
    pub z_g: Vec<f64>,
    pub z_f: Vec<f64>,
}

/// Output nodes of one encoder application to a batch.
#[derive(Clone, Copy, Debug)]
pub struct EncoderNodes {
    pub z_a: NodeId,
    pub z_g: NodeId,
    pub z_f: NodeId,
}

fn dense(init: &mut Initializer, p: &mut ParamStore, name: &str, fan_in: usize, out: usize) {
    p.insert(format!("{}.w", name), init.tensor(&[fan_in, out], Init::FanInUniform { dense: true }));
    p.insert(format!("{}.b", name), init.tensor(&[out], Init::Zeros));
}

/// Encoder parameters under `prefix`, drawn from `init` in a fixed order.
pub fn init_encoder(cfg: &EncoderConfig, prefix: &str, init: &mut Initializer) -> Result<ParamStore> {
    cfg.validate()?;
    let mut p = ParamStore::new();
    let mut cin = 3;
    for (i, &c) in cfg.channels.iter().enumerate() {
        let w = init.tensor(&[c, cin, cfg.kernel, cfg.kernel], Init::FanInUniform { dense: false });
        p.insert(format!("{}conv{}.w", prefix, i), w);
        p.insert(format!("{}conv{}.b", prefix, i), init.tensor(&[c], Init::Zeros));
        cin = c;
    }
    dense(init, &mut p, &format!("{}fc_a", prefix), cfg.branch_input(), cfg.d_a);
    dense(init, &mut p, &format!("{}fc_g", prefix), cfg.branch_input(), cfg.d_g);
    dense(init, &mut p, &format!("{}fc_f", prefix), cfg.d_a + cfg.d_g, cfg.d_f);
    Ok(p)
}

/// ID head with unit-norm class columns.
pub fn init_id_head(cfg: &EncoderConfig, init: &mut Initializer) -> Tensor {
    let mut w = init.tensor(&[cfg.d_f, cfg.n_classes], Init::FanInUniform { dense: true });
    normalize_columns(&mut w);
    w
}

pub fn init_critic(d: usize, hidden: usize, prefix: &str, init: &mut Initializer) -> ParamStore {
    let mut p = ParamStore::new();
    dense(init, &mut p, &format!("{}fc1", prefix), d, hidden);
    dense(init, &mut p, &format!("{}out", prefix), 2 * hidden, 1);
    p
}

/// Encoder, ID head and both critics for a seed.
pub fn init_model(cfg: &EncoderConfig, seed: u64) -> Result<ParamStore> {
    let mut init = Initializer::new(seed);
    let mut p = init_encoder(cfg, ENCODER, &mut init)?;
    p.insert(ID_HEAD, init_id_head(cfg, &mut init));
    p.extend(init_critic(cfg.d_a, cfg.critic_hidden, CRITIC_A, &mut init));
    p.extend(init_critic(cfg.d_g, cfg.critic_hidden, CRITIC_G, &mut init));
    Ok(p)
}

/// Rescales every column of a rank-2 tensor to unit length; zero columns
/// are left as they are.
pub fn normalize_columns(w: &mut Tensor) {
    let (rows, cols) = (w.shape()[0], w.shape()[1]);
    let data = w.data_mut();
    for j in 0..cols {
        let n = (0..rows).map(|i| data[i * cols + j].powi(2)).sum::<f64>().sqrt();
        if n > 0.0 {
            for i in 0..rows {
                data[i * cols + j] /= n;
            }
        }
    }
}

fn linear(g: &mut Graph, x: NodeId, name: &str) -> NodeId {
    let w = g.leaf(&format!("{}.w", name));
    let b = g.leaf(&format!("{}.b", name));
    let y = g.matmul(x, w);
    g.add_bias(y, b)
}

/// Encoder applied to an `[n, 3, size, size]` batch.
pub fn build_encoder(g: &mut Graph, cfg: &EncoderConfig, prefix: &str, input: NodeId, n: usize) -> EncoderNodes {
    let mut h = input;
    for (i, &stride) in cfg.strides.iter().enumerate() {
        let w = g.leaf(&format!("{}conv{}.w", prefix, i));
        let b = g.leaf(&format!("{}conv{}.b", prefix, i));
        let c = g.conv2d(h, w, Some(b), stride, cfg.pad());
        h = g.relu(c);
    }
    let half = cfg.final_depth() / 2;
    let a = g.slice(h, 1, 0, half);
    let a = g.reshape(a, &[n, cfg.branch_input()]);
    let z_a = linear(g, a, &format!("{}fc_a", prefix));
    let l = g.slice(h, 1, half, 2 * half);
    let l = g.reshape(l, &[n, cfg.branch_input()]);
    let z_g = linear(g, l, &format!("{}fc_g", prefix));
    let cat = g.concat(&[z_a, z_g], 1);
    let z_f = linear(g, cat, &format!("{}fc_f", prefix));
    EncoderNodes { z_a, z_g, z_f }
}

/// `[n, 3, h, w]` tensor of a batch of images.
pub fn stack_images(images: &[&FaceImage]) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::invalid("empty image batch"))?;
    let (w, h) = (first.width(), first.height());
    let mut data = Vec::with_capacity(images.len() * 3 * w * h);
    for img in images {
        if img.width() != w || img.height() != h {
            return Err(Error::shape("stack_images", "images differ in size"));
        }
        data.extend_from_slice(img.data());
    }
    Tensor::new(vec![images.len(), 3, h, w], data)
}

const ENCODE_CHUNK: usize = 16;

/// Embeddings of every image, computed in parallel chunks. Each image's
/// result is independent of how the batch is chunked.
pub fn encode_batch(
    params: &ParamStore,
    cfg: &EncoderConfig,
    prefix: &str,
    images: &[&FaceImage],
) -> Result<Vec<EmbeddingTriple>> {
    if let Some(bad) = images
        .iter()
        .find(|i| i.width() != cfg.input_size || i.height() != cfg.input_size)
    {
        return Err(Error::shape(
            "encode",
            format!(
                "image is {}x{}, encoder expects {}x{}",
                bad.width(),
                bad.height(),
                cfg.input_size,
                cfg.input_size
            ),
        ));
    }
    let chunks: Vec<Vec<EmbeddingTriple>> = images
        .par_chunks(ENCODE_CHUNK)
        .map(|chunk| {
            let n = chunk.len();
            let mut g = Graph::new();
            let x = g.leaf("x");
            let e = build_encoder(&mut g, cfg, prefix, x, n);
            let out = g.concat(&[e.z_a, e.z_g, e.z_f], 1);
            g.set_output(out);
            let mut b = Bindings::new();
            b.bind_all(params.iter());
            b.bind_owned("x", stack_images(chunk)?);
            let t = g.evaluate(&b)?;
            let width = cfg.d_a + cfg.d_g + cfg.d_f;
            Ok(t.data()
                .chunks(width)
                .map(|row| EmbeddingTriple {
                    z_a: row[..cfg.d_a].to_vec(),
                    z_g: row[cfg.d_a..cfg.d_a + cfg.d_g].to_vec(),
                    z_f: row[cfg.d_a + cfg.d_g..].to_vec(),
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

pub fn encode(params: &ParamStore, cfg: &EncoderConfig, image: &FaceImage) -> Result<EmbeddingTriple> {
    Ok(encode_batch(params, cfg, ENCODER, &[image])?.remove(0))
}

/// Critic scores `[n]` for embedding pairs `[n, d]`. Embeddings enter the
/// critic unit-normalized: the stage-1 losses fix only their direction.
pub fn build_critic(g: &mut Graph, prefix: &str, z_i: NodeId, z_j: NodeId, n: usize) -> NodeId {
    let name = format!("{}fc1", prefix);
    let z_i = g.normalize(z_i, 1);
    let z_j = g.normalize(z_j, 1);
    let h_i = linear(g, z_i, &name);
    let h_i = g.relu(h_i);
    let h_j = linear(g, z_j, &name);
    let h_j = g.relu(h_j);
    let cat = g.concat(&[h_i, h_j], 1);
    let s = linear(g, cat, &format!("{}out", prefix));
    g.reshape(s, &[n])
}

/// Score of one critic on one embedding pair.
pub fn critic_score(params: &ParamStore, prefix: &str, z_i: &[f64], z_j: &[f64]) -> Result<f64> {
    if z_i.len() != z_j.len() {
        return Err(Error::shape("critic_score", "embedding sizes differ"));
    }
    let d = params.require(&format!("{}fc1.w", prefix))?.shape()[0];
    if z_i.len() != d {
        return Err(Error::shape(
            "critic_score",
            format!("critic expects {} inputs, got {}", d, z_i.len()),
        ));
    }
    let mut g = Graph::new();
    let (a, b) = (g.leaf("z_i"), g.leaf("z_j"));
    let s = build_critic(&mut g, prefix, a, b, 1);
    g.set_output(s);
    let mut bind = Bindings::new();
    bind.bind_all(params.iter());
    bind.bind_owned("z_i", Tensor::matrix(1, d, z_i.to_vec())?);
    bind.bind_owned("z_j", Tensor::matrix(1, d, z_j.to_vec())?);
    Ok(g.evaluate(&bind)?.data()[0])
}

/// Cosine matrix between row-normalized `z_f` and column-normalized `w`,
/// turned into margin logits and reduced to the mean cross-entropy.
pub fn build_id_loss(g: &mut Graph, z_f: NodeId, w: NodeId, labels: &[usize], margin: &MarginConfig) -> NodeId {
    let zn = g.normalize(z_f, 1);
    let wn = g.normalize(w, 0);
    let cos = g.matmul(zn, wn);
    let logits = g.angular_margin_logits(cos, labels, margin.angular());
    g.softmax_cross_entropy(logits, labels)
}
