//! Loss terms shared by the encoder trainers, as graph builders plus
//! plain scalar versions for checking.

use wlembed_nn::{Activation, Graph, Mlp, Tensor, Var};

use crate::error::{CoreError, Result};
use crate::traces::ConfigKey;

/// `max(0, |za - zp|^2 - |za - zn|^2 + alpha)`.
pub fn triplet_loss(za: &[f64], zp: &[f64], zn: &[f64], alpha: f64) -> f64 {
    let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    (d(za, zp) - d(za, zn) + alpha).max(0.0)
}

/// Mean triplet loss over matching rows of three embedding batches.
pub fn triplet_loss_graph(g: &mut Graph, za: Var, zp: Var, zn: Var, alpha: f64) -> Var {
    let dp = g.row_sq_dist(za, zp);
    let dn = g.row_sq_dist(za, zn);
    let diff = g.sub(dp, dn);
    let shifted = g.add_scalar(diff, alpha);
    let hinge = g.relu(shifted);
    g.mean(hinge)
}

/// Mean over rows of the squared row distance, `(1/N) sum |a - b|^2`.
pub fn mean_row_sq_dist(g: &mut Graph, a: Var, b: Var) -> Var {
    let d = g.row_sq_dist(a, b);
    g.mean(d)
}

/// KL divergence of `N(mu, diag(exp(logvar)))` from `N(0, I)` for one
/// sample.
pub fn gaussian_kl(mu: &[f64], logvar: &[f64]) -> f64 {
    mu.iter().zip(logvar).map(|(m, lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv)).sum()
}

/// Mean over rows of the per-row Gaussian KL term.
pub fn gaussian_kl_graph(g: &mut Graph, mu: Var, logvar: Var) -> Var {
    let mu2 = g.square(mu);
    let var = g.exp(logvar);
    let a = g.add(mu2, var);
    let b = g.sub(a, logvar);
    let c = g.add_scalar(b, -1.0);
    let per_row = g.row_sum(c);
    let half = g.scale(per_row, 0.5);
    g.mean(half)
}

/// Numerator and denominator membership masks of the soft nearest
/// neighbor loss. A pair is a numerator pair when it shares the workload
/// but not the configuration, and a denominator pair when both differ.
pub fn snn_masks(workloads: &[usize], configs: &[ConfigKey]) -> Result<(Tensor, Tensor)> {
    let n = workloads.len();
    let mut num = vec![0.0; n * n];
    let mut den = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i == j || configs[i] == configs[j] {
                continue;
            }
            if workloads[i] == workloads[j] {
                num[i * n + j] = 1.0;
            } else {
                den[i * n + j] = 1.0;
            }
        }
        let row = i * n..(i + 1) * n;
        if !num[row.clone()].iter().any(|&m| m > 0.0) {
            return Err(CoreError::invalid(format!("snn batch point {i} has no same-workload partner")));
        }
        if !den[row].iter().any(|&m| m > 0.0) {
            return Err(CoreError::invalid(format!("snn batch point {i} has no other-workload partner")));
        }
    }
    Ok((Tensor::matrix(n, n, num)?, Tensor::matrix(n, n, den)?))
}

/// Soft nearest neighbor loss: mean over points of
/// `-log(sum_num exp(-d/T) / sum_den exp(-d/T))` with squared distances `d`.
pub fn snn_loss_graph(g: &mut Graph, z: Var, workloads: &[usize], configs: &[ConfigKey], temperature: f64) -> Result<Var> {
    let (num, den) = snn_masks(workloads, configs)?;
    let n = workloads.len();
    let sq = g.square(z);
    let norms = g.row_sum(sq);
    let ones = g.constant(Tensor::filled(&[1, n], 1.0));
    let left = g.matmul(norms, ones);
    let right = g.transpose(left);
    let zt = g.transpose(z);
    let gram = g.matmul(z, zt);
    let gram2 = g.scale(gram, -2.0);
    let sum = g.add(left, right);
    let dist = g.add(sum, gram2);
    let logits = g.scale(dist, -1.0 / temperature);
    let lse_num = g.masked_log_sum_exp(logits, num);
    let lse_den = g.masked_log_sum_exp(logits, den);
    let per_point = g.sub(lse_den, lse_num);
    Ok(g.mean(per_point))
}

/// Squared Frobenius norm of the Jacobian of encoder outputs
/// `out_start..out_end` with respect to the input, averaged over the rows
/// of `x`. Layer derivatives are graph nodes, so the result is
/// differentiable in the encoder weights.
pub fn contractive_penalty(g: &mut Graph, net: &Mlp, vars: &[Var], x: Var, out_start: usize, out_end: usize) -> Result<Var> {
    if net.layers.iter().any(|l| !l.activation.is_smooth()) {
        return Err(CoreError::invalid("the contractive penalty needs smooth activations (tanh or sigmoid)"));
    }
    let outs = net.forward_layers(g, vars, x);
    let rows = g.value(x).rows();
    let last = net.layers.len() - 1;
    let mut total: Option<Var> = None;
    for b in 0..rows {
        let mut jt: Option<Var> = None;
        for (l, layer) in net.layers.iter().enumerate() {
            let mut w = vars[layer.weight];
            if l == last {
                w = g.slice_cols(w, out_start, out_end);
            }
            let mut step = match jt {
                Some(prev) => g.matmul(prev, w),
                None => w,
            };
            if layer.activation != Activation::Identity {
                let y = g.gather_rows(outs[l], &[b]);
                let y = if l == last { g.slice_cols(y, out_start, out_end) } else { y };
                let d = layer.activation.derivative_on_graph(g, y).expect("smooth activation");
                step = g.mul_row(step, d);
            }
            jt = Some(step);
        }
        let jt = jt.expect("at least one layer");
        let sq = g.square(jt);
        let fro = g.sum(sq);
        total = Some(match total {
            Some(t) => g.add(t, fro),
            None => fro,
        });
    }
    let total = total.ok_or_else(|| CoreError::invalid("contractive penalty on an empty batch"))?;
    Ok(g.scale(total, 1.0 / rows as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplet_hand_cases() {
        assert_eq!(triplet_loss(&[1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0], 0.5), 0.5);
        assert_eq!(triplet_loss(&[0.0, 0.0], &[1.0, 0.0], &[2.0, 0.0], 0.5), 0.0);
        assert_eq!(triplet_loss(&[0.0, 0.0], &[1.0, 0.0], &[1.0, 0.0], 0.5), 0.5);
    }

    #[test]
    fn kl_closed_forms() {
        assert_eq!(gaussian_kl(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert!((gaussian_kl(&[1.0], &[0.0]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn snn_masks_need_partners() {
        let keys: Vec<ConfigKey> = vec![vec![1], vec![2], vec![1], vec![2]];
        assert!(snn_masks(&[0, 0, 1, 1], &keys).is_ok());
        assert!(snn_masks(&[0, 0, 0, 0], &keys).is_err());
        assert!(snn_masks(&[0, 1, 2, 3], &keys).is_err());
    }
}
