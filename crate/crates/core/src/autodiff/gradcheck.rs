use super::{Graph, ParamStore, Var};
use crate::error::{Error, Result};

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// max over scalars of |analytic - numeric| / max(1, |numeric|)
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
    /// Smallest winner/runner-up gap of any max-pool in the forward pass.
    pub min_pool_margin: f64,
    pub eps: f64,
}

impl GradCheckReport {
    /// Max-pool is not differentiable at a tie; a perturbation of `eps`
    /// can flip the argmax when the gap is this small.
    pub fn near_pool_tie(&self) -> bool {
        self.min_pool_margin < 10.0 * self.eps
    }
}

/// Compares tape gradients of the scalar produced by `forward` against
/// central finite differences for every trainable scalar in `params`.
///
/// Frozen rows are skipped. `forward` must be deterministic.
pub fn check_gradients<F>(params: &ParamStore, eps: f64, forward: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let (analytic, margin) = {
        let mut g = Graph::new(params);
        let out = forward(&mut g)?;
        g.check_finite()?;
        (g.backward(out)?, g.min_pool_margin())
    };

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::inference(store);
        let out = forward(&mut g)?;
        g.check_finite()?;
        Ok(g.value(out).data()[0])
    };

    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
        min_pool_margin: margin,
        eps,
    };
    for id in params.ids() {
        let grad = analytic.dense(id);
        let cols = params.get(id).cols();
        let frozen = params.frozen_row(id);
        for (i, &a) in grad.iter().enumerate() {
            if frozen == Some(i / cols.max(1)) {
                continue;
            }
            let orig = params.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + eps;
            let plus = eval(&work)?;
            work.get_mut(id).data_mut()[i] = orig - eps;
            let minus = eval(&work)?;
            work.get_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            if !numeric.is_finite() || !a.is_finite() {
                return Err(Error::NonFinite { op: "check_gradients" });
            }
            let err = (a - numeric).abs() / numeric.abs().max(1.0);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = params.name(id).to_string();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    #[test]
    fn linear_softmax_cross_entropy_is_exact() {
        let mut s = ParamStore::new();
        let w = s.add(
            "w",
            Tensor::matrix(3, 4, (0..12).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap(),
        );
        let b = s.add("b", Tensor::row(vec![0.1, -0.2, 0.05, 0.3]));
        let x = Tensor::row(vec![0.5, -1.0, 2.0]);
        let report = check_gradients(&s, 1e-5, |g| {
            let xv = g.constant(x.clone());
            let wv = g.param(w);
            let bv = g.param(b);
            let h = g.matmul(xv, wv)?;
            let z = g.add_row(h, bv)?;
            let p = g.softmax_rows(z);
            g.loss(p, 2, None, 1.0)
        })
        .unwrap();
        assert_eq!(report.checked, 16);
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn every_primitive_matches_finite_differences() {
        let mut s = ParamStore::new();
        let seq = s.add(
            "seq",
            Tensor::matrix(5, 3, (0..15).map(|i| ((i * 7) as f64 * 0.13).cos()).collect()).unwrap(),
        );
        let filt = s.add(
            "filt",
            Tensor::matrix(2, 6, (0..12).map(|i| ((i * 3) as f64 * 0.29).sin()).collect()).unwrap(),
        );
        let v = s.add("v", Tensor::matrix(8, 3, (0..24).map(|i| (i as f64 * 0.41).sin() * 0.5).collect()).unwrap());
        let report = check_gradients(&s, 1e-5, |g| {
            let x = g.param(seq);
            let f = g.param(filt);
            let c = g.conv1d(x, f)?;
            let c = g.tanh(c);
            let p = g.piecewise_max_pool(c, (1, 1), (3, 4))?;
            let gp = g.max_pool(c)?;
            let feat = g.hconcat(&[p, gp])?;
            let sg = g.sigmoid(feat);
            let om = g.one_minus(sg);
            let m = g.mul(sg, om)?;
            let d = g.sub(feat, m)?;
            let d = g.mask_mul(d, vec![2.0, 0.0, 2.0, 2.0, 0.0, 2.0, 2.0, 2.0])?;
            let vv = g.param(v);
            let z = g.matmul(d, vv)?;
            let rows = g.repeat_rows(z, 3)?;
            let t = g.transpose(rows);
            let att = g.softmax_rows(t);
            let att_col = g.slice_rows(att, 0, 1)?;
            let att_col = g.transpose(att_col);
            let xs = g.slice_rows(x, 1, 3)?;
            let scaled = g.scale_rows(xs, att_col)?;
            let top = g.slice_cols(scaled, 0, 2)?;
            let stacked = g.vconcat(&[top, top])?;
            let flat_w = g.constant(Tensor::matrix(2, 3, vec![0.3, -0.1, 0.2, 0.5, 0.4, -0.6]).unwrap());
            let logits = g.matmul(stacked, flat_w)?;
            let one = g.slice_rows(logits, 5, 1)?;
            let probs = g.softmax_rows(one);
            g.loss(probs, 1, Some(&[0.2, 0.5, 0.3]), 0.5)
        })
        .unwrap();
        assert!(!report.near_pool_tie(), "{report:?}");
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }
}
