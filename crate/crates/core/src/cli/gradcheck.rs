use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embednet::{
    build_appearance_loss, build_critic, build_encoder, build_id_loss, build_landmark_loss, build_mi_loss,
    init_model, stage1_graph, stage2_graph, Dataset, EncoderConfig, LossWeights, MarginConfig, Sample, TrainPair,
    CRITIC_A, CRITIC_G, ENCODER, ID_HEAD,
};
use crate::error::Result;
use crate::geometry::canonical_template;
use crate::gradcore::{finite_difference_check_with, Bindings, Graph, ParamStore, Tensor};
use crate::imaging::{FaceImage, SampleKind};

pub const LOSS_NAMES: [&str; 7] = ["L1_a", "L1_g", "L1_id", "L1_t", "L2_a", "L2_g", "L2_t"];
pub const GRADCHECK_TOLERANCE: f64 = 1e-3;
const EPS: f64 = 1e-5;

/// Max relative finite-difference error per loss over all seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub seeds: Vec<u64>,
    pub rows: Vec<(&'static str, f64)>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|(_, e)| *e <= GRADCHECK_TOLERANCE)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("seeds: {:?}\n", self.seeds);
        for (name, e) in &self.rows {
            let verdict = if *e <= GRADCHECK_TOLERANCE { "ok" } else { "FAIL" };
            s.push_str(&format!("{:<6} max_rel_error {:.3e} {}\n", name, e, verdict));
        }
        s
    }
}

/// Small encoder: the losses are the same code at any width.
pub fn gradcheck_encoder() -> EncoderConfig {
    EncoderConfig {
        input_size: 12,
        channels: vec![4, 4],
        strides: vec![2, 2],
        kernel: 3,
        d_a: 4,
        d_g: 4,
        d_f: 5,
        n_classes: 3,
        critic_hidden: 5,
    }
}

fn random_image(rng: &mut ChaCha8Rng, size: usize) -> FaceImage {
    let data = (0..3 * size * size).map(|_| rng.random_range(-1.0..1.0)).collect();
    FaceImage::new(size, size, data).expect("sized buffer")
}

fn random_batch(rng: &mut ChaCha8Rng, n: usize, size: usize) -> Tensor {
    let data = (0..n * 3 * size * size).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(vec![n, 3, size, size], data).expect("sized buffer")
}

struct Case {
    graph: Graph,
    inputs: Vec<(&'static str, Tensor)>,
}

fn cases(cfg: &EncoderConfig, seed: u64) -> Result<Vec<(&'static str, Case)>> {
    let margin = MarginConfig::default();
    let weights = LossWeights::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = cfg.input_size;
    let n = 2;
    let (app, lm) = (vec![0usize, 1], vec![2usize, 0]);
    let x = random_batch(&mut rng, 3 * n, s);
    let phi = Tensor::vector((0..n).map(|_| rng.random_range(0.5..2.0)).collect());

    let mut out = Vec::new();
    let slice = |g: &mut Graph, node, k: usize| g.slice(node, 0, k * n, (k + 1) * n);

    let mut g = Graph::new();
    let xl = g.leaf("x");
    let e = build_encoder(&mut g, cfg, ENCODER, xl, 3 * n);
    let (a0, a2) = (slice(&mut g, e.z_a, 0), slice(&mut g, e.z_a, 2));
    let l = build_appearance_loss(&mut g, a0, a2);
    g.set_output(l);
    out.push(("L1_a", Case { graph: g, inputs: vec![("x", x.clone())] }));

    let mut g = Graph::new();
    let xl = g.leaf("x");
    let e = build_encoder(&mut g, cfg, ENCODER, xl, 3 * n);
    let (g0, g1, g2) = (slice(&mut g, e.z_g, 0), slice(&mut g, e.z_g, 1), slice(&mut g, e.z_g, 2));
    let p = g.leaf("phi");
    let l = build_landmark_loss(&mut g, g1, g2, g0, p, weights.alpha_g);
    g.set_output(l);
    out.push((
        "L1_g",
        Case {
            graph: g,
            inputs: vec![("x", x.clone()), ("phi", phi.clone())],
        },
    ));

    let mut g = Graph::new();
    let xl = g.leaf("x");
    let e = build_encoder(&mut g, cfg, ENCODER, xl, 3 * n);
    let f0 = slice(&mut g, e.z_f, 0);
    let w = g.leaf(ID_HEAD);
    let l = build_id_loss(&mut g, f0, w, &app, &margin);
    g.set_output(l);
    out.push(("L1_id", Case { graph: g, inputs: vec![("x", x.clone())] }));

    out.push((
        "L1_t",
        Case {
            graph: stage1_graph(cfg, &margin, &weights, &app, &lm),
            inputs: vec![("x", x), ("phi", phi)],
        },
    ));

    // stage 2: two reals of class 0, one of class 1, one morph
    let classes = ["s000", "s001", "s002"].map(String::from).to_vec();
    let kinds = [(0, SampleKind::Real), (0, SampleKind::Real), (1, SampleKind::Real), (0, SampleKind::Morph)];
    let samples = kinds
        .iter()
        .enumerate()
        .map(|(i, &(class, kind))| Sample {
            path: format!("img{}", i),
            subject: classes[class].clone(),
            class,
            kind,
            image: random_image(&mut rng, s),
            landmarks: canonical_template(s),
        })
        .collect();
    let data = Dataset::from_samples(samples, classes)?;
    let pairs = [(0, 1, true), (2, 0, false), (0, 3, false), (1, 0, true)].map(|(t, q, genuine)| TrainPair {
        trusted: t,
        questioned: q,
        genuine,
    });
    let xt = Tensor::new(
        vec![4, 3, s, s],
        pairs.iter().flat_map(|p| data.samples[p.trusted].image.data().to_vec()).collect(),
    )?;
    let xq = Tensor::new(
        vec![4, 3, s, s],
        pairs.iter().flat_map(|p| data.samples[p.questioned].image.data().to_vec()).collect(),
    )?;
    let gen = [0usize, 3];
    let imp = [1usize, 2];
    for (name, prefix, pick_g) in [("L2_a", CRITIC_A, false), ("L2_g", CRITIC_G, true)] {
        let mut g = Graph::new();
        let (t, q) = (g.leaf("xt"), g.leaf("xq"));
        let et = build_encoder(&mut g, cfg, ENCODER, t, 4);
        let eq = build_encoder(&mut g, cfg, ENCODER, q, 4);
        let (zt, zq) = if pick_g { (et.z_g, eq.z_g) } else { (et.z_a, eq.z_a) };
        let sc = build_critic(&mut g, prefix, zt, zq, 4);
        let sg = g.gather_rows(sc, &gen);
        let si = g.gather_rows(sc, &imp);
        let l = build_mi_loss(&mut g, sg, si);
        g.set_output(l);
        out.push((
            name,
            Case {
                graph: g,
                inputs: vec![("xt", xt.clone()), ("xq", xq.clone())],
            },
        ));
    }
    out.push((
        "L2_t",
        Case {
            graph: stage2_graph(cfg, &margin, &weights, &pairs, &data, ENCODER)?,
            inputs: vec![("xt", xt), ("xq", xq)],
        },
    ));
    Ok(out)
}

/// Central-difference check of every loss graph at `seeds`, with respect to
/// all parameters each graph reads. `tamper` may alter a named loss's
/// analytic gradient before comparison.
pub fn gradcheck_with(
    seeds: &[u64],
    mut tamper: impl FnMut(&str, &str, &mut Tensor),
) -> Result<GradcheckReport> {
    let cfg = gradcheck_encoder();
    let mut worst = LOSS_NAMES.map(|n| (n, 0.0f64)).to_vec();
    for &seed in seeds {
        let params: ParamStore = init_model(&cfg, seed)?;
        for (name, case) in cases(&cfg, seed)? {
            let wrt: Vec<&str> = params
                .names()
                .filter(|p| case.graph.leaf_id(p).is_some())
                .map(String::as_str)
                .collect();
            let mut b = Bindings::new();
            b.bind_all(params.iter());
            for (k, v) in &case.inputs {
                b.bind(*k, v);
            }
            let r = finite_difference_check_with(&case.graph, &b, &wrt, EPS, |leaf, g| tamper(name, leaf, g))?;
            let slot = worst.iter_mut().find(|(n, _)| *n == name).expect("known loss");
            slot.1 = slot.1.max(r.max_rel_error);
        }
    }
    Ok(GradcheckReport {
        seeds: seeds.to_vec(),
        rows: worst,
    })
}

pub fn gradcheck(seeds: &[u64]) -> Result<GradcheckReport> {
    gradcheck_with(seeds, |_, _, _| {})
}

/// The three seeds checked for a run seed.
pub fn gradcheck_seeds(seed: u64) -> [u64; 3] {
    [seed, seed.wrapping_add(1), seed.wrapping_add(2)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_losses_pass_and_are_listed() {
        let r = gradcheck(&[5]).unwrap();
        let names: Vec<&str> = r.rows.iter().map(|(n, _)| *n).collect();
        assert_eq!(names, LOSS_NAMES);
        assert!(r.passed(), "{}", r.to_text());
    }

    #[test]
    fn injected_fault_fails() {
        let r = gradcheck_with(&[5], |loss, leaf, g| {
            if loss == "L2_g" && leaf.starts_with(CRITIC_G) {
                g.data_mut()[0] += 0.5;
            }
        })
        .unwrap();
        assert!(!r.passed());
        let bad: Vec<&str> = r.rows.iter().filter(|(_, e)| *e > GRADCHECK_TOLERANCE).map(|(n, _)| *n).collect();
        assert_eq!(bad, ["L2_g"]);
    }
}
