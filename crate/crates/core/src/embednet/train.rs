use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::phi_g;
use crate::gradcore::{sgd_update_subset, Bindings, Graph, LrSchedule, ParamStore, Tensor};
use crate::imaging::{build_triplet, PoolEntry, Triplet, TripletOptions};

use super::config::{
    stage1_schedule, stage2_schedule, CheckpointMeta, EncoderConfig, LossWeights, MarginConfig, UpdateSchedule,
};
use super::data::Dataset;
use super::losses::{build_appearance_loss, build_landmark_loss, build_mi_loss};
use super::model::{
    build_critic, build_encoder, build_id_loss, init_model, normalize_columns, stack_images, CRITIC_A, CRITIC_G,
    ENCODER, ID_HEAD, TRUSTED,
};

/// Parameters plus the settings they were trained with.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ParamStore,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn sidecar_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".meta");
        PathBuf::from(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.params.save(path)?;
        std::fs::write(Self::sidecar_path(path), self.meta.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let params = ParamStore::load(path)?;
        let meta = CheckpointMeta::parse(&std::fs::read_to_string(Self::sidecar_path(path))?)?;
        Ok(Checkpoint { params, meta })
    }

    /// Prefix of the encoder applied to trusted images.
    pub fn trusted_prefix(&self) -> &'static str {
        if self.meta.dual_encoder {
            TRUSTED
        } else {
            ENCODER
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage1Config {
    pub encoder: EncoderConfig,
    pub margin: MarginConfig,
    pub weights: LossWeights,
    pub schedule: LrSchedule,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub triplet: TripletOptions,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Stage1Config {
            encoder: EncoderConfig::default(),
            margin: MarginConfig::default(),
            weights: LossWeights::default(),
            schedule: stage1_schedule(),
            epochs: 10,
            batch_size: 128,
            seed: 0,
            triplet: TripletOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage2Config {
    pub weights: LossWeights,
    pub margin: MarginConfig,
    pub schedule: LrSchedule,
    pub epochs: usize,
    /// Pairs per batch: half genuine, a quarter each of cross-subject and
    /// real/morph imposters.
    pub batch_size: usize,
    pub seed: u64,
    pub dual_encoder: bool,
    pub update: UpdateSchedule,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Stage2Config {
            weights: LossWeights::default(),
            margin: MarginConfig::default(),
            schedule: stage2_schedule(),
            epochs: 10,
            batch_size: 128,
            seed: 0,
            dual_encoder: false,
            update: UpdateSchedule::Joint,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub checkpoint: Checkpoint,
    /// Mean batch loss per epoch.
    pub epoch_losses: Vec<f64>,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn is_stage1_param(name: &str) -> bool {
    name.starts_with(ENCODER) || name == ID_HEAD
}

/// One SGD step on `graph` for the parameters selected by `train`.
fn step(
    graph: &Graph,
    params: &mut ParamStore,
    inputs: Vec<(&str, Tensor)>,
    lr: f64,
    train: impl Fn(&str) -> bool,
) -> Result<f64> {
    let names: Vec<String> = params
        .names()
        .filter(|n| train(n) && graph.leaf_id(n).is_some())
        .cloned()
        .collect();
    let wrt: Vec<&str> = names.iter().map(String::as_str).collect();
    let grads = {
        let mut b = Bindings::new();
        b.bind_all(params.iter());
        for (k, v) in inputs {
            b.bind_owned(k, v);
        }
        graph.gradient(&b, &wrt)?
    };
    sgd_update_subset(params, &grads.grads, lr, |n| wrt.contains(&n))?;
    if lr != 0.0 && wrt.contains(&ID_HEAD) {
        normalize_columns(params.get_mut(ID_HEAD).expect("id head present"));
    }
    Ok(grads.value)
}

/// Stage-1 graph for a batch of `n` triplets stacked as
/// `[x_0..x_n, x'_0..x'_n, x̂_0..x̂_n]`.
pub fn stage1_graph(
    cfg: &EncoderConfig,
    margin: &MarginConfig,
    weights: &LossWeights,
    appearance_labels: &[usize],
    landmark_labels: &[usize],
) -> Graph {
    let n = appearance_labels.len();
    let mut g = Graph::new();
    let x = g.leaf("x");
    let e = build_encoder(&mut g, cfg, ENCODER, x, 3 * n);
    let part = |g: &mut Graph, node, k: usize| g.slice(node, 0, k * n, (k + 1) * n);
    let (za_x, za_hat) = (part(&mut g, e.z_a, 0), part(&mut g, e.z_a, 2));
    let (zg_x, zg_p, zg_hat) = (part(&mut g, e.z_g, 0), part(&mut g, e.z_g, 1), part(&mut g, e.z_g, 2));
    let (zf_x, zf_p) = (part(&mut g, e.z_f, 0), part(&mut g, e.z_f, 1));
    let w = g.leaf(ID_HEAD);
    let id_x = build_id_loss(&mut g, zf_x, w, appearance_labels, margin);
    let id_p = build_id_loss(&mut g, zf_p, w, landmark_labels, margin);
    let phi = g.leaf("phi");
    let la = build_appearance_loss(&mut g, za_x, za_hat);
    let lg = build_landmark_loss(&mut g, zg_p, zg_hat, zg_x, phi, weights.alpha_g);
    let id = g.add(id_x, id_p);
    let la = g.scale(la, weights.lambda1_a);
    let lg = g.scale(lg, weights.lambda1_g);
    let t = g.add(id, la);
    let total = g.add(t, lg);
    g.set_output(total);
    g
}

/// Input tensors (`x`, `phi`) for [`stage1_graph`].
pub fn stage1_inputs(batch: &[Triplet]) -> Result<Vec<(&'static str, Tensor)>> {
    let imgs: Vec<_> = batch
        .iter()
        .map(|t| &t.appearance)
        .chain(batch.iter().map(|t| &t.landmark_image))
        .chain(batch.iter().map(|t| &t.intermediate))
        .collect();
    let phi = batch
        .iter()
        .map(|t| phi_g(&t.appearance_landmarks, &t.landmark_landmarks))
        .collect::<Result<Vec<_>>>()?;
    Ok(vec![("x", stack_images(&imgs)?), ("phi", Tensor::vector(phi))])
}

/// Minimizes the stage-1 loss over freshly mined triplets each epoch.
pub fn train_stage1(data: &Dataset, cfg: &Stage1Config) -> Result<TrainReport> {
    cfg.margin.validate()?;
    cfg.weights.validate()?;
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let reals = data.reals();
    let n_classes = reals
        .iter()
        .map(|&i| data.samples[i].class)
        .collect::<std::collections::BTreeSet<_>>()
        .len();
    if n_classes < 2 {
        return Err(Error::invalid("stage 1 needs at least 2 classes"));
    }
    let enc = EncoderConfig {
        n_classes: data.classes.len(),
        ..cfg.encoder.clone()
    };
    let mut params = init_model(&enc, cfg.seed)?;
    let pool: Vec<PoolEntry> = reals
        .iter()
        .map(|&i| PoolEntry {
            image: &data.samples[i].image,
            landmarks: &data.samples[i].landmarks,
            class: data.samples[i].class,
        })
        .collect();

    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.schedule.at_epoch(epoch);
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.shuffle(&mut rng_for(cfg.seed, (epoch as u64) << 32));
        let mut total = 0.0;
        let mut batches = 0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let triplets = chunk
                .par_iter()
                .enumerate()
                .map(|(k, &i)| {
                    let stream = ((epoch as u64) << 32) | (b * cfg.batch_size + k + 1) as u64;
                    let e = &pool[i];
                    build_triplet(e.image, e.landmarks, e.class, &pool, &mut rng_for(cfg.seed, stream), &cfg.triplet)
                })
                .collect::<Result<Vec<_>>>()?;
            let a: Vec<usize> = triplets.iter().map(|t| t.appearance_class).collect();
            let l: Vec<usize> = triplets.iter().map(|t| t.landmark_class).collect();
            let graph = stage1_graph(&enc, &cfg.margin, &cfg.weights, &a, &l);
            total += step(&graph, &mut params, stage1_inputs(&triplets)?, lr, is_stage1_param)?;
            batches += 1;
        }
        epoch_losses.push(total / batches.max(1) as f64);
    }
    Ok(TrainReport {
        checkpoint: Checkpoint {
            params,
            meta: CheckpointMeta {
                stage: 1,
                seed: cfg.seed,
                encoder: enc,
                margin: cfg.margin,
                weights: cfg.weights,
                dual_encoder: false,
            },
        },
        epoch_losses,
    })
}

/// A training pair: trusted and questioned sample indices, genuine or not.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrainPair {
    pub trusted: usize,
    pub questioned: usize,
    pub genuine: bool,
}

/// Genuine pairs (two reals of one subject), cross-subject real pairs and
/// (real, morph) pairs of a dataset.
pub fn stage2_pair_pools(data: &Dataset) -> (Vec<TrainPair>, Vec<TrainPair>, Vec<TrainPair>) {
    let reals = data.reals();
    let morphs = data.morphs();
    let (mut gen, mut cross, mut morph) = (Vec::new(), Vec::new(), Vec::new());
    for (a, &i) in reals.iter().enumerate() {
        for &j in &reals[a + 1..] {
            let pair = TrainPair {
                trusted: i,
                questioned: j,
                genuine: data.samples[i].class == data.samples[j].class,
            };
            if pair.genuine {
                gen.push(pair);
            } else {
                cross.push(pair);
            }
        }
        for &m in &morphs {
            morph.push(TrainPair {
                trusted: i,
                questioned: m,
                genuine: false,
            });
        }
    }
    (gen, cross, morph)
}

/// Stage-2 graph over `pairs`; the trusted side runs through `trusted_prefix`.
pub fn stage2_graph(
    cfg: &EncoderConfig,
    margin: &MarginConfig,
    weights: &LossWeights,
    pairs: &[TrainPair],
    data: &Dataset,
    trusted_prefix: &str,
) -> Result<Graph> {
    let n = pairs.len();
    let gen: Vec<usize> = (0..n).filter(|&k| pairs[k].genuine).collect();
    let imp: Vec<usize> = (0..n).filter(|&k| !pairs[k].genuine).collect();
    if gen.is_empty() || imp.is_empty() {
        return Err(Error::invalid("stage-2 batch needs genuine and imposter pairs"));
    }
    let mut g = Graph::new();
    let (xt, xq) = (g.leaf("xt"), g.leaf("xq"));
    let et = build_encoder(&mut g, cfg, trusted_prefix, xt, n);
    let eq = build_encoder(&mut g, cfg, ENCODER, xq, n);

    let mi = |g: &mut Graph, prefix: &str, zt, zq| {
        let s = build_critic(g, prefix, zt, zq, n);
        let sg = g.gather_rows(s, &gen);
        let si = g.gather_rows(s, &imp);
        build_mi_loss(g, sg, si)
    };
    let la = mi(&mut g, CRITIC_A, et.z_a, eq.z_a);
    let lg = mi(&mut g, CRITIC_G, et.z_g, eq.z_g);

    // ID loss over real images seen by the trainable encoder
    let mut parts = Vec::new();
    let mut labels = Vec::new();
    if trusted_prefix == ENCODER {
        let rows: Vec<usize> = (0..n).collect();
        parts.push(g.gather_rows(et.z_f, &rows));
        labels.extend(pairs.iter().map(|p| data.samples[p.trusted].class));
    }
    let q_real: Vec<usize> = (0..n).filter(|&k| data.samples[pairs[k].questioned].is_real()).collect();
    if !q_real.is_empty() {
        parts.push(g.gather_rows(eq.z_f, &q_real));
        labels.extend(q_real.iter().map(|&k| data.samples[pairs[k].questioned].class));
    }
    let zf = g.concat(&parts, 0);
    let w = g.leaf(ID_HEAD);
    let id = build_id_loss(&mut g, zf, w, &labels, margin);

    let la = g.scale(la, weights.lambda2_a);
    let lg = g.scale(lg, weights.lambda2_g);
    let t = g.add(la, lg);
    let total = g.add(t, id);
    g.set_output(total);
    Ok(g)
}

pub fn stage2_inputs(pairs: &[TrainPair], data: &Dataset) -> Result<Vec<(&'static str, Tensor)>> {
    let t: Vec<_> = pairs.iter().map(|p| &data.samples[p.trusted].image).collect();
    let q: Vec<_> = pairs.iter().map(|p| &data.samples[p.questioned].image).collect();
    Ok(vec![("xt", stack_images(&t)?), ("xq", stack_images(&q)?)])
}

/// Continues from a stage-1 checkpoint with the contrastive critics and the
/// ID loss. In dual-encoder mode the trusted-image encoder is a frozen copy
/// of the stage-1 encoder.
pub fn train_stage2(data: &Dataset, stage1: &Checkpoint, cfg: &Stage2Config) -> Result<TrainReport> {
    cfg.margin.validate()?;
    cfg.weights.validate()?;
    if cfg.batch_size < 4 {
        return Err(Error::Config("stage-2 batch_size must be at least 4".into()));
    }
    if data.morphs().is_empty() {
        return Err(Error::invalid("stage 2 needs morphs in the manifest"));
    }
    let (gen, cross, morph) = stage2_pair_pools(data);
    if gen.is_empty() {
        return Err(Error::invalid("stage 2 needs a subject with two real captures"));
    }
    let enc = stage1.meta.encoder.clone();
    let mut params = stage1.params.clone();
    let trusted_prefix = if cfg.dual_encoder {
        params.copy_prefix(ENCODER, TRUSTED);
        TRUSTED
    } else {
        ENCODER
    };

    let n_gen = cfg.batch_size / 2;
    let n_cross = if cross.is_empty() { 0 } else { (cfg.batch_size - n_gen) / 2 };
    let n_morph = cfg.batch_size - n_gen - n_cross;
    let steps = gen.len().div_ceil(n_gen);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut step_index = 0u64;
    for epoch in 0..cfg.epochs {
        let lr = cfg.schedule.at_epoch(epoch);
        let mut rng = rng_for(cfg.seed, (epoch as u64) << 32);
        let mut order = gen.clone();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for s in 0..steps {
            let mut batch: Vec<TrainPair> = (0..n_gen).map(|k| order[(s * n_gen + k) % order.len()]).collect();
            batch.extend((0..n_cross).map(|_| cross[rng.random_range(0..cross.len())]));
            batch.extend((0..n_morph).map(|_| morph[rng.random_range(0..morph.len())]));
            let graph = stage2_graph(&enc, &cfg.margin, &cfg.weights, &batch, data, trusted_prefix)?;
            let inputs = stage2_inputs(&batch, data)?;
            let critics_turn = step_index % 2 == 0;
            let train = |n: &str| {
                let critic = n.starts_with(CRITIC_A) || n.starts_with(CRITIC_G);
                let model = n.starts_with(ENCODER) || n == ID_HEAD;
                match cfg.update {
                    UpdateSchedule::Joint => critic || model,
                    UpdateSchedule::Alternating => (critic && critics_turn) || (model && !critics_turn),
                }
            };
            total += step(&graph, &mut params, inputs, lr, train)?;
            step_index += 1;
        }
        epoch_losses.push(total / steps as f64);
    }
    Ok(TrainReport {
        checkpoint: Checkpoint {
            params,
            meta: CheckpointMeta {
                stage: 2,
                seed: cfg.seed,
                encoder: enc,
                margin: cfg.margin,
                weights: cfg.weights,
                dual_encoder: cfg.dual_encoder,
            },
        },
        epoch_losses,
    })
}

/// Appearance and landmark critic scores of each pair.
pub fn critic_scores(ckpt: &Checkpoint, data: &Dataset, pairs: &[TrainPair]) -> Result<Vec<(f64, f64)>> {
    let enc = &ckpt.meta.encoder;
    pairs
        .par_chunks(16)
        .map(|chunk| {
            let n = chunk.len();
            let mut g = Graph::new();
            let (xt, xq) = (g.leaf("xt"), g.leaf("xq"));
            let et = build_encoder(&mut g, enc, ckpt.trusted_prefix(), xt, n);
            let eq = build_encoder(&mut g, enc, ENCODER, xq, n);
            let sa = build_critic(&mut g, CRITIC_A, et.z_a, eq.z_a, n);
            let sg = build_critic(&mut g, CRITIC_G, et.z_g, eq.z_g, n);
            let out = g.concat(&[sa, sg], 0);
            g.set_output(out);
            let mut b = Bindings::new();
            b.bind_all(ckpt.params.iter());
            for (k, v) in stage2_inputs(chunk, data)? {
                b.bind_owned(k, v);
            }
            let t = g.evaluate(&b)?;
            Ok((0..n).map(|k| (t.data()[k], t.data()[n + k])).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().flatten().collect())
}
