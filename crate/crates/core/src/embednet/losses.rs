//! Loss graphs. Each `build_*` function appends to a graph and returns the
//! scalar node; the plain functions evaluate the same graphs on values.

use crate::error::{Error, Result};
use crate::gradcore::{Bindings, Graph, NodeId, Tensor};

use super::config::MarginConfig;
use super::model::build_id_loss;

/// `-mean(cos(z_a(x), z_a(x̂)))`
pub fn build_appearance_loss(g: &mut Graph, za_x: NodeId, za_hat: NodeId) -> NodeId {
    let c = g.cosine(za_x, za_hat);
    let m = g.mean(c);
    g.neg(m)
}

/// `mean(-cos(z_g(x'), z_g(x̂)) + max(0, cos(z_g(x'), z_g(x)) - alpha_g * phi))`
/// where `phi` is a `[n]` node.
pub fn build_landmark_loss(
    g: &mut Graph,
    zg_prime: NodeId,
    zg_hat: NodeId,
    zg_x: NodeId,
    phi: NodeId,
    alpha_g: f64,
) -> NodeId {
    let keep = g.cosine(zg_prime, zg_hat);
    let cross = g.cosine(zg_prime, zg_x);
    let bound = g.scale(phi, alpha_g);
    let excess = g.sub(cross, bound);
    let hinge = g.hinge(excess);
    let per = g.sub(hinge, keep);
    g.mean(per)
}

/// `-(mean(genuine) - log(mean(exp(imposter))))`
pub fn build_mi_loss(g: &mut Graph, genuine: NodeId, imposter: NodeId) -> NodeId {
    let m = g.mean(genuine);
    let l = g.log_mean_exp(imposter);
    let d = g.sub(m, l);
    g.neg(d)
}

fn rows(name: &str, v: &[Vec<f64>]) -> Result<Tensor> {
    let d = v.first().map(Vec::len).unwrap_or(0);
    if v.is_empty() || d == 0 {
        return Err(Error::invalid(format!("{}: empty batch", name)));
    }
    if v.iter().any(|r| r.len() != d) {
        return Err(Error::invalid(format!("{}: ragged batch", name)));
    }
    Tensor::matrix(v.len(), d, v.concat())
}

fn eval(g: &Graph, b: &Bindings) -> Result<f64> {
    Ok(g.evaluate(b)?.data()[0])
}

pub fn loss_appearance(za_x: &[Vec<f64>], za_hat: &[Vec<f64>]) -> Result<f64> {
    let mut g = Graph::new();
    let (a, b) = (g.leaf("a"), g.leaf("b"));
    build_appearance_loss(&mut g, a, b);
    let mut bind = Bindings::new();
    bind.bind_owned("a", rows("loss_appearance", za_x)?);
    bind.bind_owned("b", rows("loss_appearance", za_hat)?);
    eval(&g, &bind)
}

pub fn loss_landmark(
    zg_prime: &[Vec<f64>],
    zg_hat: &[Vec<f64>],
    zg_x: &[Vec<f64>],
    phi: &[f64],
    alpha_g: f64,
) -> Result<f64> {
    if phi.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::invalid("phi_g must be ≥ 0"));
    }
    let mut g = Graph::new();
    let (p, h, x, f) = (g.leaf("p"), g.leaf("h"), g.leaf("x"), g.leaf("phi"));
    build_landmark_loss(&mut g, p, h, x, f, alpha_g);
    let mut bind = Bindings::new();
    bind.bind_owned("p", rows("loss_landmark", zg_prime)?);
    bind.bind_owned("h", rows("loss_landmark", zg_hat)?);
    bind.bind_owned("x", rows("loss_landmark", zg_x)?);
    bind.bind_owned("phi", Tensor::vector(phi.to_vec()));
    eval(&g, &bind)
}

/// Angular-margin ID loss averaged over the batch; `w` is `[d_f, n_classes]`.
pub fn loss_id(z_f: &[Vec<f64>], labels: &[usize], w: &Tensor, margin: &MarginConfig) -> Result<f64> {
    margin.validate()?;
    if w.rank() != 2 {
        return Err(Error::shape("loss_id", "class weights must be rank 2"));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= w.shape()[1]) {
        return Err(Error::invalid(format!("label {} ≥ n_classes {}", bad, w.shape()[1])));
    }
    let mut g = Graph::new();
    let (z, wl) = (g.leaf("z"), g.leaf("w"));
    build_id_loss(&mut g, z, wl, labels, margin);
    let mut bind = Bindings::new();
    bind.bind_owned("z", rows("loss_id", z_f)?);
    bind.bind("w", w);
    eval(&g, &bind)
}

pub fn loss_mi(genuine: &[f64], imposter: &[f64]) -> Result<f64> {
    if genuine.is_empty() || imposter.is_empty() {
        return Err(Error::invalid("loss_mi needs genuine and imposter scores"));
    }
    let mut g = Graph::new();
    let (a, b) = (g.leaf("g"), g.leaf("i"));
    build_mi_loss(&mut g, a, b);
    let mut bind = Bindings::new();
    bind.bind_owned("g", Tensor::vector(genuine.to_vec()));
    bind.bind_owned("i", Tensor::vector(imposter.to_vec()));
    eval(&g, &bind)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcore::finite_difference_check;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn appearance_cases() {
        let u = vec![vec![1.0, 2.0, -1.0]];
        assert!(close(loss_appearance(&u, &u).unwrap(), -1.0, 1e-12));
        let o = loss_appearance(&[vec![1.0, 0.0]], &[vec![0.0, 3.0]]).unwrap();
        assert!(close(o, 0.0, 1e-12));
        let mixed = loss_appearance(&[vec![1.0, 1.0], vec![1.0, 1.0]], &[vec![2.0, 2.0], vec![-1.0, -1.0]]).unwrap();
        assert!(close(mixed, 0.0, 1e-12));
        assert!(loss_appearance(&[vec![0.0, 0.0]], &[vec![1.0, 0.0]]).is_err());
    }

    #[test]
    fn landmark_cases() {
        let p = vec![vec![1.0, 0.0]];
        // hinge inactive: cos(p, x) = 0 ≤ alpha * phi
        let v = loss_landmark(&p, &p, &[vec![0.0, 1.0]], &[0.1], 9.4).unwrap();
        assert!(close(v, -1.0, 1e-12));
        // all identical with phi = 0: -1 + 1
        assert!(close(loss_landmark(&p, &p, &p, &[0.0], 9.4).unwrap(), 0.0, 1e-12));
        // cos(p, hat) = 0.9, cos(p, x) = 0.5, alpha * phi = 0.2
        let hat = vec![vec![0.9, (1.0f64 - 0.81).sqrt()]];
        let x = vec![vec![0.5, (1.0f64 - 0.25).sqrt()]];
        let v = loss_landmark(&p, &hat, &x, &[0.1], 2.0).unwrap();
        assert!(close(v, -0.9 + 0.3, 1e-12));
        assert!(loss_landmark(&p, &p, &p, &[-0.1], 1.0).is_err());
    }

    #[test]
    fn id_loss_cases() {
        let m = MarginConfig::default();
        // two classes, z aligned with column 0 and orthogonal to column 1
        let w = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let v = loss_id(&[vec![3.0, 0.0]], &[0], &w, &m).unwrap();
        let t = 64.0 * (0.4f64.cos() - 0.15);
        let oracle = -(t.exp() / (t.exp() + 1.0)).ln();
        assert!(close(v, oracle, 1e-12), "{} vs {}", v, oracle);

        // m1 = 1, m2 = m3 = 0 is plain softmax over s * cos
        let plain = MarginConfig { m1: 1.0, m2: 0.0, m3: 0.0, s: 3.0 };
        let w = Tensor::matrix(2, 3, vec![1.0, 0.2, -0.5, 0.3, 1.0, 0.4]).unwrap();
        let z = vec![0.6, -0.8];
        let cos: Vec<f64> = (0..3)
            .map(|j| {
                let col = [w.data()[j], w.data()[3 + j]];
                (z[0] * col[0] + z[1] * col[1]) / (col[0].hypot(col[1]))
            })
            .collect();
        let lse = cos.iter().map(|c| (3.0 * c).exp()).sum::<f64>().ln();
        let v = loss_id(&[z], &[1], &w, &plain).unwrap();
        assert!(close(v, lse - 3.0 * cos[1], 1e-12));

        let single = Tensor::matrix(2, 1, vec![0.3, 0.4]).unwrap();
        assert_eq!(loss_id(&[vec![1.0, -2.0]], &[0], &single, &m).unwrap(), 0.0);
        assert!(loss_id(&[vec![0.0, 0.0]], &[0], &single, &m).is_err());
        assert!(loss_id(&[vec![1.0, 0.0]], &[1], &single, &m).is_err());
    }

    #[test]
    fn mi_cases() {
        assert!(close(loss_mi(&[1.0, 1.0], &[0.0]).unwrap(), -1.0, 1e-15));
        let v = loss_mi(&[2.0], &[0.0, 2.0]).unwrap();
        let oracle = -(2.0 - ((1.0 + 2f64.exp()) / 2.0).ln());
        assert!(close(v, oracle, 1e-12));
        assert!(loss_mi(&[], &[1.0]).is_err());
        // large scores stay finite
        assert!(loss_mi(&[800.0], &[900.0, 1000.0]).unwrap().is_finite());
    }

    fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Tensor {
        Tensor::matrix(n, d, (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn loss_graphs_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut g = Graph::new();
        let (a, h, x, p) = (g.leaf("a"), g.leaf("h"), g.leaf("x"), g.leaf("p"));
        let phi = g.leaf("phi");
        let la = build_appearance_loss(&mut g, a, h);
        let lg = build_landmark_loss(&mut g, p, h, x, phi, 1.5);
        let (gs, is) = (g.leaf("gs"), g.leaf("is"));
        let lm = build_mi_loss(&mut g, gs, is);
        let s1 = g.add(la, lg);
        let total = g.add(s1, lm);
        g.set_output(total);
        let mut b = Bindings::new();
        for n in ["a", "h", "x", "p"] {
            b.bind_owned(n, random_rows(&mut rng, 4, 6));
        }
        b.bind_owned("phi", Tensor::vector(vec![0.01, 0.2, 0.05, 0.0]));
        b.bind_owned("gs", Tensor::vector(vec![0.3, -1.2, 2.0]));
        b.bind_owned("is", Tensor::vector(vec![1.1, 0.4, -0.7, 3.0]));
        let c = finite_difference_check(&g, &b, &["a", "h", "x", "p", "gs", "is"], 1e-6).unwrap();
        assert!(c.max_rel_error <= 1e-3, "{:?}", c);
    }

    proptest! {
        #[test]
        fn mi_constant_is_zero(c in -50.0f64..50.0, n in 1usize..6, m in 1usize..6) {
            prop_assert!(loss_mi(&vec![c; n], &vec![c; m]).unwrap().abs() < 1e-9);
        }

        #[test]
        fn mi_decreases_with_genuine_scores(
            gen in proptest::collection::vec(-5.0f64..5.0, 1..6),
            imp in proptest::collection::vec(-5.0f64..5.0, 1..6),
            delta in 0.01f64..3.0,
        ) {
            let up: Vec<f64> = gen.iter().map(|v| v + delta).collect();
            prop_assert!(loss_mi(&up, &imp).unwrap() < loss_mi(&gen, &imp).unwrap());
        }

        #[test]
        fn id_loss_ignores_embedding_scale(seed in 0u64..1000, k in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = random_rows(&mut rng, 4, 3);
            let z: Vec<Vec<f64>> = (0..3).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let zk: Vec<Vec<f64>> = z.iter().map(|r| r.iter().map(|v| v * k).collect()).collect();
            let m = MarginConfig::default();
            let (a, b) = (loss_id(&z, &[0, 2, 1], &w, &m).unwrap(), loss_id(&zk, &[0, 2, 1], &w, &m).unwrap());
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        }
    }
}
