//! Division networks: the truncated geometric series on a segment and the dyadic
//! partition-of-unity stitching over `[2^{-K}, 1]`.

use super::arith::mult_net;
use super::schedule_nets::select;
use crate::error::{Error, Result};
use crate::netcalc::{Layer, ReluNet, SparseMatrix};

/// Stages `p` of the product form, the smallest with `2^p - 1 >= (b/a) ceil(log(1/eps))`.
pub fn segment_stages(a: f64, b: f64, eps: f64) -> usize {
    let r = (b / a) * (1.0 / eps).ln().ceil().max(1.0);
    let mut p = 1;
    while 2f64.powi(p as i32) - 1.0 < r {
        p += 1;
    }
    p
}

/// Stated bound `(32 log^2(1/eps) / a^2) (eps + eps_in)` of [`div_segment_net`].
pub fn segment_bound(a: f64, eps: f64, eps_in: f64) -> f64 {
    32.0 * (1.0 / eps).ln().powi(2) / (a * a) * (eps + eps_in)
}

/// `(x, y) -> x / y` for `y in [a, b]`, `|x| <= y`.
///
/// With `z = clip(1 - y/b, 0, 1)` the series `(x/b) sum_{i < 2^p} z^i` equals
/// `(x/b) prod_{k<p} (1 + z^{2^k})`, evaluated by `p` pipelined product stages on
/// normalized quantities and rescaled by `2^p` at the end.
pub fn div_segment_net(a: f64, b: f64, eps: f64, eps_in: f64) -> Result<ReluNet> {
    if !(a > 0.0 && a <= b && b <= 1.0) {
        return Err(Error::invalid(format!("div_segment_net needs 0 < a <= b <= 1, got a={a}, b={b}")));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::invalid(format!("div_segment_net needs eps in (0,1), got {eps}")));
    }
    if !(eps_in >= 0.0 && eps_in <= b) {
        return Err(Error::invalid(format!("eps_in must lie in [0, b], got {eps_in}")));
    }
    let p = segment_stages(a, b, eps);
    let delta = (eps / 4f64.powi(p as i32 + 1)).max(1e-17);
    let mult = mult_net(2, 1.0, delta)?;

    // hidden: (1 - y/b)+, (-y/b)+, (x/b)+, (-x/b)+
    let first = Layer::new(
        SparseMatrix::from_triplets(
            4,
            2,
            vec![(0, 1, -1.0 / b), (1, 1, -1.0 / b), (2, 0, 1.0 / b), (3, 0, -1.0 / b)],
        )?,
        vec![-1.0, 0.0, 0.0, 0.0],
    )?;
    // state (x/b, Q_1 = (1 + z)/2, z)
    let second = Layer::new(
        SparseMatrix::from_triplets(
            3,
            4,
            vec![(0, 2, 1.0), (0, 3, -1.0), (1, 0, 0.5), (1, 1, -0.5), (2, 0, 1.0), (2, 1, -1.0)],
        )?,
        vec![0.0, -0.5, 0.0],
    )?;
    let mut net = ReluNet::new(vec![first, second])?;

    let pass_x = ReluNet::affine(select(3, &[0]), &[0.0])?;
    let q_next = mult.pre_affine(
        &SparseMatrix::from_triplets(2, 3, vec![(0, 1, 1.0), (1, 2, 0.5)])?,
        &[0.0, 0.5],
    )?;
    let z_next = mult.pre_affine(&select(3, &[2, 2]), &[0.0, 0.0])?;
    if p > 1 {
        // advance z to z^2 so that stage k sees z^{2^k}
        let pass_q = ReluNet::affine(select(3, &[1]), &[0.0])?;
        net = ReluNet::concat(&ReluNet::parallel(&[pass_x.clone(), pass_q, z_next.clone()], true)?, &net)?;
    }
    for k in 1..p {
        let stage = if k + 1 < p {
            ReluNet::parallel(&[pass_x.clone(), q_next.clone(), z_next.clone()], true)?
        } else {
            ReluNet::parallel(&[pass_x.clone(), q_next.clone()], true)?
        };
        net = ReluNet::concat(&stage, &net)?;
    }
    let width = if p > 1 { 2 } else { 3 };
    let last = mult
        .pre_affine(&select(width, &[0, 1]), &[0.0, 0.0])?
        .linear_post(&SparseMatrix::from_triplets(1, 1, vec![(0, 0, 2f64.powi(p as i32))])?, &[0.0])?;
    ReluNet::concat(&last, &net)
}

/// Dyadic knots `t_k = 2^{-K+k}`, `k = 0..=K`.
pub fn dyadic_knots(k_max: usize) -> Vec<f64> {
    (0..=k_max).map(|k| 2f64.powi(k as i32 - k_max as i32)).collect()
}

/// `y -> ReLU((b - y)/(b - a)) - ReLU((a - y)/(b - a))`, terms appended to `(hidden, out)`.
fn push_ramp(
    hidden: &mut Vec<(usize, usize, f64)>,
    bias: &mut Vec<f64>,
    out: &mut Vec<(usize, usize, f64)>,
    a: f64,
    b: f64,
    sign: f64,
) {
    let w = 1.0 / (b - a);
    let r = bias.len();
    // rows compute ReLU(sign * (-y) w + b w) with the input scaled by `sign`
    hidden.push((r, 0, -sign * w));
    bias.push(-b * w);
    hidden.push((r + 1, 0, -sign * w));
    bias.push(-a * w);
    out.push((0, r, 1.0));
    out.push((0, r + 1, -1.0));
}

/// Hat functions `g_1, ..., g_{K-1}` on the dyadic knots; they sum to one on all of `R`.
pub fn pou_weights(k_max: usize) -> Result<Vec<ReluNet>> {
    if k_max < 4 {
        return Err(Error::invalid(format!("pou_weights needs K >= 4, got {k_max}")));
    }
    let t = dyadic_knots(k_max);
    let mut nets = Vec::with_capacity(k_max - 1);
    for k in 1..k_max {
        let (mut hidden, mut bias, mut out) = (Vec::new(), Vec::new(), Vec::new());
        let mut c = 0.0;
        if k < k_max - 1 {
            push_ramp(&mut hidden, &mut bias, &mut out, t[k], t[k + 1], 1.0);
        }
        if k > 1 {
            push_ramp(&mut hidden, &mut bias, &mut out, -t[k], -t[k - 1], -1.0);
        }
        if k > 1 && k < k_max - 1 {
            c = -1.0;
        }
        let n = bias.len();
        nets.push(ReluNet::new(vec![
            Layer::new(SparseMatrix::from_triplets(n, 1, hidden)?, bias)?,
            Layer::new(SparseMatrix::from_triplets(1, n, out)?, vec![-c])?,
        ])?);
    }
    Ok(nets)
}

/// Stated bound `2049 (4 K^2 log^2 2 + log^2(1/eps)) eps` of [`div_net`].
pub fn div_bound(k_max: usize, eps: f64) -> f64 {
    let k = k_max as f64;
    2049.0 * (4.0 * k * k * 2f64.ln().powi(2) + (1.0 / eps).ln().powi(2)) * eps
}

/// Division on `y in [2^{-K}, 1]`, `|x| <= y`, with band `k` built at accuracy
/// `2^{-2(K-k)} eps` (floored near double precision).
pub fn div_net(k_max: usize, eps: f64) -> Result<ReluNet> {
    div_net_with(k_max, eps, |k| (4f64.powi(-((k_max - k) as i32)) * eps).max(1e-13))
}

/// [`div_net`] with a caller-chosen accuracy per band.
pub fn div_net_with(k_max: usize, eps: f64, band_eps: impl Fn(usize) -> f64) -> Result<ReluNet> {
    if k_max < 4 {
        return Err(Error::invalid(format!("div_net needs K >= 4, got {k_max}")));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::invalid(format!("div_net needs eps in (0,1), got {eps}")));
    }
    let t = dyadic_knots(k_max);
    let pou = pou_weights(k_max)?;
    let bands = k_max - 1;
    let mut members = Vec::with_capacity(2 * bands);
    for g in &pou {
        members.push(g.pre_affine(&select(2, &[1]), &[0.0])?);
    }
    for k in 1..k_max {
        let a = t[k.saturating_sub(2)];
        let b = t[(k + 2).min(k_max)];
        let acc = band_eps(k).min(eps);
        members.push(div_segment_net(a, b, acc, 0.0)?);
    }
    // reorder to (g_1, q_1, g_2, q_2, ...)
    let perm = SparseMatrix::from_triplets(
        2 * bands,
        2 * bands,
        (0..bands).flat_map(|k| [(2 * k, k, 1.0), (2 * k + 1, bands + k, 1.0)]).collect(),
    )?;
    let inner = ReluNet::parallel(&members, true)?.linear_post(&perm, &vec![0.0; 2 * bands])?;
    let h2 = mult_net(2, 2.0, eps / 4.0)?;
    let outer = ReluNet::parallel(&vec![h2; bands], false)?
        .linear_post(&SparseMatrix::from_triplets(1, bands, (0..bands).map(|k| (0, k, 1.0)).collect())?, &[0.0])?;
    ReluNet::concat(&outer, &inner)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn eval2(net: &ReluNet, x: f64, y: f64) -> f64 {
        net.evaluate(&[x, y]).unwrap()[0]
    }

    #[test]
    fn segment_examples() {
        let (a, b, eps) = (0.25, 1.0, 1e-3);
        let net = div_segment_net(a, b, eps, 0.0).unwrap();
        let bound = segment_bound(a, eps, 0.0);
        let mut r = rng::stream(2, 0);
        let mut worst: f64 = 0.0;
        for _ in 0..3000 {
            let y = r.random_range(a..=b);
            let x = r.random_range(-y..=y);
            worst = worst.max((eval2(&net, x, y) - x / y).abs());
        }
        assert!(worst <= bound, "{worst} > {bound}");
        assert!(worst <= 2.0 * eps, "{worst}");
        assert_eq!(eval2(&net, 0.0, 0.6), 0.0);
        assert!((eval2(&net, 0.5, 0.5) - 1.0).abs() <= 2.0 * eps);
    }

    #[test]
    fn partition_of_unity() {
        let k_max = 8;
        let g = pou_weights(k_max).unwrap();
        assert_eq!(g.len(), k_max - 1);
        let t = dyadic_knots(k_max);
        let mut r = rng::stream(3, 0);
        for _ in 0..1000 {
            let y: f64 = r.random_range(-0.5..1.5);
            let s: f64 = g.iter().map(|n| n.evaluate(&[y]).unwrap()[0]).sum();
            assert!((s - 1.0).abs() <= 1e-12);
        }
        for k in 1..k_max {
            let v: Vec<f64> = g.iter().map(|n| n.evaluate(&[t[k]]).unwrap()[0]).collect();
            for (i, vi) in v.iter().enumerate() {
                let want = if i + 1 == k { 1.0 } else { 0.0 };
                assert!((vi - want).abs() <= 1e-12, "k={k} i={i} v={vi}");
            }
        }
        // between t_k and t_{k+1} only two hats are active
        let y = 0.5 * (t[3] + t[4]);
        let v: Vec<f64> = g.iter().map(|n| n.evaluate(&[y]).unwrap()[0]).collect();
        assert!((v[2] - 0.5).abs() < 1e-12 && (v[3] - 0.5).abs() < 1e-12);
        assert!(v.iter().enumerate().all(|(i, x)| i == 2 || i == 3 || x.abs() < 1e-12));
    }

    #[test]
    fn div_net_deep_band_and_top() {
        let k_max = 6;
        let eps = 1e-2;
        let net = div_net(k_max, eps).unwrap();
        let bound = div_bound(k_max, eps);
        let lo = 2f64.powi(-(k_max as i32));
        assert!((eval2(&net, 1.0, 1.0) - 1.0).abs() <= bound);
        assert!((eval2(&net, lo, lo) - 1.0).abs() <= bound);
        assert!((eval2(&net, 0.3, 0.6) - 0.5).abs() <= 0.05);
        assert_eq!(eval2(&net, 0.0, 0.3), 0.0);
    }
}
