use super::dense::Tensor;
use super::graph::{Graph, Var};
use crate::error::Result;

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    /// max over all checked elements of |analytic - numeric| / max(1, |analytic|, |numeric|)
    pub max_rel_err: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn within(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

/// Compares the reverse-mode gradient of `build` against central finite
/// differences over every element of every input. `build` must be a pure
/// function of its inputs returning a scalar loss.
pub fn grad_check_multi(
    inputs: &[Tensor],
    eps: f64,
    build: impl Fn(&mut Graph, &[Var]) -> Result<Var>,
) -> Result<GradCheckReport> {
    let eval = |tensors: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = tensors.iter().map(|t| g.param(t.clone())).collect();
        let loss = build(&mut g, &vars)?;
        g.value(loss).item()
    };

    // Analytic pass.
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &vars)?;
    let grads = g.backward(loss)?;

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut max_rel_err: f64 = 0.0;
    let mut checked = 0;
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros_like(&inputs[i]));
        for j in 0..inputs[i].numel() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + eps;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - eps;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.data()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            max_rel_err = max_rel_err.max(rel);
            checked += 1;
        }
    }
    Ok(GradCheckReport { max_rel_err, checked })
}

/// Single-input convenience wrapper around [`grad_check_multi`].
pub fn grad_check(
    input: &Tensor,
    eps: f64,
    build: impl Fn(&mut Graph, Var) -> Result<Var>,
) -> Result<GradCheckReport> {
    grad_check_multi(std::slice::from_ref(input), eps, |g, vars| build(g, vars[0]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use rand::Rng;

    fn random_tensor(shape: Vec<usize>, key: &[u64]) -> Tensor {
        let mut rng = rng_from(key);
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect()).unwrap()
    }

    #[test]
    fn every_op_passes_gradient_check() {
        let tol = 1e-5;
        let eps = 1e-4;

        // tanh -> reduce_sum
        let x = random_tensor(vec![4, 3], &[1]);
        let r = grad_check(&x, eps, |g, v| {
            let t = g.tanh(v);
            Ok(g.reduce_sum(t))
        })
        .unwrap();
        assert!(r.within(tol), "tanh: {}", r.max_rel_err);

        // relu (inputs away from the kink) -> reduce_mean
        let mut x = random_tensor(vec![8], &[2]);
        for v in x.data_mut() {
            if v.abs() < 0.2 {
                *v += 0.4_f64.copysign(*v);
            }
        }
        let r = grad_check(&x, eps, |g, v| {
            let t = g.relu(v);
            Ok(g.reduce_mean(t))
        })
        .unwrap();
        assert!(r.within(tol), "relu: {}", r.max_rel_err);

        // exp + affine
        let x = random_tensor(vec![5], &[3]);
        let r = grad_check(&x, eps, |g, v| {
            let e = g.exp(v);
            let a = g.affine(e, 0.5, 0.1);
            Ok(g.reduce_sum(a))
        })
        .unwrap();
        assert!(r.within(tol), "exp/affine: {}", r.max_rel_err);

        // matmul + transpose
        let a = random_tensor(vec![3, 4], &[4]);
        let b = random_tensor(vec![3, 2], &[5]);
        let r = grad_check_multi(&[a, b], eps, |g, vs| {
            let at = g.transpose(vs[0])?;
            let m = g.matmul(at, vs[1])?;
            Ok(g.reduce_sum(m))
        })
        .unwrap();
        assert!(r.within(tol), "matmul: {}", r.max_rel_err);

        // softmax weighted by a constant propensity
        let x = random_tensor(vec![6], &[6]);
        let r = grad_check(&x, eps, |g, v| {
            let s = g.softmax(v)?;
            let w = g.input(Tensor::vector((1..=6).map(|i| i as f64).collect()).unwrap());
            let p = g.mul(s, w)?;
            Ok(g.reduce_sum(p))
        })
        .unwrap();
        assert!(r.within(tol), "softmax: {}", r.max_rel_err);

        // logsumexp
        let x = random_tensor(vec![7], &[7]);
        let r = grad_check(&x, eps, |g, v| g.logsumexp(v)).unwrap();
        assert!(r.within(tol), "logsumexp: {}", r.max_rel_err);

        // gaussian_log_pdf wrt mu and sigma (sigma kept positive via exp)
        let mu = random_tensor(vec![6], &[8]);
        let logsig = random_tensor(vec![6], &[9]);
        let r = grad_check_multi(&[mu, logsig], eps, |g, vs| {
            let y = g.input(Tensor::vector(vec![0.3, -0.2, 0.8, 0.1, -0.5, 0.0]).unwrap());
            let sigma = g.exp(vs[1]);
            g.gaussian_log_pdf(y, vs[0], sigma)
        })
        .unwrap();
        assert!(r.within(tol), "gaussian_log_pdf: {}", r.max_rel_err);

        // concat + slice + reshape + broadcast add/sub/mul
        let a = random_tensor(vec![4], &[10]);
        let b = random_tensor(vec![4], &[11]);
        let c = random_tensor(vec![1, 4], &[12]);
        let r = grad_check_multi(&[a, b, c], eps, |g, vs| {
            let cat = g.concat0(&[vs[0], vs[1]])?;
            let sl = g.slice(cat, 2, 4)?;
            let mat = g.reshape(sl, vec![2, 2])?;
            let wide = g.concat0(&[mat, mat])?; // (4,2)
            let rsh = g.reshape(wide, vec![2, 4])?;
            let biased = g.add(rsh, vs[2])?;
            let scaled = g.mul(biased, vs[2])?;
            let diff = g.sub(scaled, vs[2])?;
            Ok(g.reduce_mean(diff))
        })
        .unwrap();
        assert!(r.within(tol), "concat/slice/broadcast: {}", r.max_rel_err);

        // scalar broadcast both sides
        let s = Tensor::scalar(0.7);
        let v = random_tensor(vec![5], &[13]);
        let r = grad_check_multi(&[s, v], eps, |g, vs| {
            let m = g.mul(vs[0], vs[1])?;
            let t = g.add(m, vs[0])?;
            Ok(g.reduce_sum(t))
        })
        .unwrap();
        assert!(r.within(tol), "scalar broadcast: {}", r.max_rel_err);
    }

    #[test]
    fn composite_random_shapes_up_to_64() {
        // Random small MLP-like composites over a few shape draws.
        for trial in 0..6u64 {
            let mut rng = rng_from(&[100, trial]);
            let n = rng.gen_range(1..=8usize);
            let d = rng.gen_range(1..=8usize);
            let w = random_tensor(vec![d, n], &[101, trial]);
            let x = random_tensor(vec![n, d], &[102, trial]);
            let b = random_tensor(vec![1, n], &[103, trial]);
            let r = grad_check_multi(&[w, x, b], 1e-4, |g, vs| {
                let h = g.matmul(vs[1], vs[0])?; // (n,n)
                let hb = g.add(h, vs[2])?;
                let t = g.tanh(hb);
                Ok(g.reduce_mean(t))
            })
            .unwrap();
            assert!(r.within(1e-5), "trial {trial}: {}", r.max_rel_err);
        }
    }
}
