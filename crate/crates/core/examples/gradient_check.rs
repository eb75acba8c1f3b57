//! Checks reverse-mode gradients against central differences, first on a
//! hand-built graph, then on every training loss of the detector.

use morphkit::cli::{gradcheck, gradcheck_seeds};
use morphkit::gradcore::{finite_difference_check, Bindings, Graph, Tensor};

fn main() -> morphkit::Result<()> {
    // log-mean-exp of a normalized linear map
    let mut g = Graph::new();
    let (x, w) = (g.leaf("x"), g.leaf("w"));
    let h = g.matmul(x, w);
    let h = g.normalize(h, 1);
    let l = g.log_mean_exp(h);
    g.set_output(l);

    let xv = Tensor::matrix(3, 4, (0..12).map(|i| (i as f64 * 0.37).sin()).collect())?;
    let wv = Tensor::matrix(4, 2, (0..8).map(|i| (i as f64 * 0.91).cos()).collect())?;
    let mut b = Bindings::new();
    b.bind("x", &xv).bind("w", &wv);
    let grads = g.gradient(&b, &["w"])?;
    println!("loss {:.6}", g.evaluate(&b)?.data()[0]);
    println!("dL/dw {:?}", grads.get("w").map(|t| t.data().to_vec()));
    let r = finite_difference_check(&g, &b, &["x", "w"], 1e-6)?;
    println!("hand graph: max rel error {:.2e} over {} coordinates", r.max_rel_error, r.checked);

    let report = gradcheck(&gradcheck_seeds(7))?;
    print!("{}", report.to_text());
    println!("all within tolerance: {}", report.passed());
    Ok(())
}
