//! Product and exponential networks.

use crate::error::{Error, Result};
use crate::netcalc::{Layer, ReluNet, SparseMatrix};

fn layer(rows: usize, cols: usize, entries: Vec<(usize, usize, f64)>, b: Vec<f64>) -> Layer {
    Layer::new(SparseMatrix::from_triplets(rows, cols, entries).unwrap(), b).unwrap()
}

/// `x -> clip(x / c, -1, 1)` coordinatewise, one hidden layer of width `4 dim`.
///
/// An exact zero input gives an exact zero output.
pub fn clip_unit(dim: usize, c: f64) -> ReluNet {
    let s = 1.0 / c;
    let mut hidden = Vec::with_capacity(4 * dim);
    let mut bias = Vec::with_capacity(4 * dim);
    let mut out = Vec::with_capacity(4 * dim);
    for i in 0..dim {
        // u1 = (x/c)+, u2 = (x/c - 1)+, v1 = (-x/c)+, v2 = (-x/c - 1)+
        let r = 4 * i;
        hidden.extend([(r, i, s), (r + 1, i, s), (r + 2, i, -s), (r + 3, i, -s)]);
        bias.extend([0.0, 1.0, 0.0, 1.0]);
        out.extend([(i, r, 1.0), (i, r + 1, -1.0), (i, r + 2, -1.0), (i, r + 3, 1.0)]);
    }
    ReluNet::new(vec![
        layer(4 * dim, dim, hidden, bias),
        layer(dim, 4 * dim, out, vec![0.0; dim]),
    ])
    .unwrap()
}

/// Levels `m` of the sawtooth expansion so that a product of `d` factors bounded by `c`
/// is within `eps`.
pub fn mult_levels(d: usize, c: f64, eps: f64) -> usize {
    if d < 2 {
        return 0;
    }
    let target = ((d - 1) as f64 * c.powi(d as i32) / eps).log2();
    (((target - 1.0) / 2.0).ceil().max(0.0)) as usize
}

/// Approximate product of `(p, q)` in `[-1, 1]^2` as `f_m(|s|) - f_m(|delta|)` with
/// `s = (p+q)/2`, `delta = (p-q)/2` and `f_m` the sawtooth interpolant of `x^2`.
///
/// The error is at most `2^{-2m-1}` and the output lies in `[-1, 1]`. The two channels use
/// identical weights in interleaved order, so an exact zero factor gives an exact zero.
pub fn unit_mult(m: usize) -> ReluNet {
    let mut layers = Vec::with_capacity(m + 2);
    // hidden order: s+, d+, s-, d-
    layers.push(layer(
        4,
        2,
        vec![
            (0, 0, 0.5),
            (0, 1, 0.5),
            (1, 0, 0.5),
            (1, 1, -0.5),
            (2, 0, -0.5),
            (2, 1, -0.5),
            (3, 0, -0.5),
            (3, 1, 0.5),
        ],
        vec![0.0; 4],
    ));
    if m == 0 {
        layers.push(layer(2, 4, vec![(0, 0, 1.0), (0, 2, 1.0), (1, 1, 1.0), (1, 3, 1.0)], vec![0.0; 2]));
        layers.push(layer(1, 2, vec![(0, 0, 1.0), (0, 1, -1.0)], vec![0.0]));
        return ReluNet::new(layers).unwrap();
    }
    // neurons per level: acc_s, acc_d, u_s, u_d, v_s, v_d with channel c in {0, 1}
    let mut e = Vec::new();
    for c in 0..2 {
        for row in [c, 2 + c, 4 + c] {
            e.push((row, c, 1.0));
            e.push((row, 2 + c, 1.0));
        }
    }
    layers.push(layer(6, 4, e, vec![0.0, 0.0, 0.0, 0.0, 0.5, 0.5]));
    for s in 1..m {
        let w = 0.25f64.powi(s as i32);
        let mut e = Vec::new();
        for c in 0..2 {
            e.extend([(c, c, 1.0), (c, 2 + c, -2.0 * w), (c, 4 + c, 4.0 * w)]);
            e.extend([(2 + c, 2 + c, 2.0), (2 + c, 4 + c, -4.0)]);
            e.extend([(4 + c, 2 + c, 2.0), (4 + c, 4 + c, -4.0)]);
        }
        layers.push(layer(6, 6, e, vec![0.0, 0.0, 0.0, 0.0, 0.5, 0.5]));
    }
    let w = 0.25f64.powi(m as i32);
    layers.push(layer(
        1,
        6,
        vec![
            (0, 0, 1.0),
            (0, 1, -1.0),
            (0, 2, -2.0 * w),
            (0, 3, 2.0 * w),
            (0, 4, 4.0 * w),
            (0, 5, -4.0 * w),
        ],
        vec![0.0],
    ));
    ReluNet::new(layers).unwrap()
}

/// Product network for `d >= 2` factors in `[-c, c]`.
///
/// Inputs are clipped to the box, multiplied pairwise in a balanced tree and rescaled by
/// `c^d`. Guarantees: error at most `eps + d c^{d-1} eps'` under input perturbations
/// `eps'`, output bounded by `c^d`, exact zero when any input is exactly zero.
pub fn mult_net(d: usize, c: f64, eps: f64) -> Result<ReluNet> {
    if d < 2 {
        return Err(Error::invalid(format!("mult_net needs d >= 2, got {d}")));
    }
    if !(c >= 1.0 && c.is_finite()) {
        return Err(Error::invalid(format!("mult_net needs C >= 1, got {c}")));
    }
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::invalid(format!("mult_net needs eps in (0,1], got {eps}")));
    }
    let m = mult_levels(d, c, eps);
    let unit = unit_mult(m);
    let mut net = clip_unit(d, c);
    let mut width = d;
    while width > 1 {
        let mut members = Vec::with_capacity(width.div_ceil(2));
        for _ in 0..width / 2 {
            members.push(unit.clone());
        }
        if width % 2 == 1 {
            members.push(ReluNet::identity(1, 1));
        }
        let level = ReluNet::parallel(&members, false)?;
        net = ReluNet::concat(&level, &net)?;
        width = members.len();
    }
    net.linear_post(&SparseMatrix::from_triplets(1, 1, vec![(0, 0, c.powi(d as i32))])?, &[0.0])
}

/// The stated error bound of [`mult_net`].
pub fn mult_bound(d: usize, c: f64, eps: f64, eps_in: f64) -> f64 {
    eps + d as f64 * c.powi(d as i32 - 1) * eps_in
}

/// Monomial `prod_k x_k^{alpha_k}` on `[-c, c]^n` through input duplication.
///
/// A degree-one monomial is a clipped coordinate, degree zero the constant one.
pub fn monomial_net(alpha: &[usize], c: f64, eps: f64) -> Result<ReluNet> {
    let n = alpha.len();
    let deg: usize = alpha.iter().sum();
    match deg {
        0 => ReluNet::constant(n, &[1.0]),
        1 => {
            let k = alpha.iter().position(|&a| a == 1).unwrap();
            let sel = SparseMatrix::from_triplets(1, n, vec![(0, k, 1.0)])?;
            clip_unit(1, c)
                .linear_post(&SparseMatrix::from_triplets(1, 1, vec![(0, 0, c)])?, &[0.0])?
                .pre_affine(&sel, &[0.0])
        }
        _ => {
            let mut e = Vec::with_capacity(deg);
            let mut row = 0;
            for (k, &a) in alpha.iter().enumerate() {
                for _ in 0..a {
                    e.push((row, k, 1.0));
                    row += 1;
                }
            }
            let dup = SparseMatrix::from_triplets(deg, n, e)?;
            mult_net(deg, c, eps)?.pre_affine(&dup, &vec![0.0; deg])
        }
    }
}

/// Continuous piecewise-linear function through `(knots[i], values[i])`, constant outside
/// the knot range, as a one-hidden-layer network.
pub fn pwl_net(knots: &[f64], values: &[f64]) -> Result<ReluNet> {
    let n = knots.len();
    if n < 2 || values.len() != n {
        return Err(Error::invalid("pwl_net needs at least two knots and matching values"));
    }
    if knots.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("pwl_net knots must be strictly increasing"));
    }
    let slopes: Vec<f64> = (0..n - 1)
        .map(|i| (values[i + 1] - values[i]) / (knots[i + 1] - knots[i]))
        .collect();
    // basis ReLU(x_i - x) anchored at the right end, so small values far right are not
    // formed by cancellation of large terms
    let mut hidden = Vec::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let d = if i == 0 {
            slopes[0]
        } else {
            let next = if i < n - 1 { slopes[i] } else { 0.0 };
            next - slopes[i - 1]
        };
        hidden.push((i, 0, -1.0));
        out.push((0, i, d));
    }
    let bias: Vec<f64> = knots.iter().map(|k| -k).collect();
    ReluNet::new(vec![
        layer(n, 1, hidden, bias),
        layer(1, n, out, vec![-values[n - 1]]),
    ])
}

/// Knots for the interpolant of `e^{-x}` with absolute error at most `eps0` on `[0, inf)`.
fn exp_abs_knots(eps0: f64) -> Vec<f64> {
    let end = (2.0 / eps0).ln().max(0.0);
    let mut knots = vec![0.0];
    let mut x: f64 = 0.0;
    if end == 0.0 {
        return vec![0.0, 1.0];
    }
    while x < end {
        // interpolation error on [x, x+h] is at most h^2 e^{-x} / 8
        let h = 0.999 * (8.0 * eps0 * x.exp()).sqrt();
        x = (x + h).min(end);
        knots.push(x);
    }
    knots
}

/// One-hidden-layer approximation of `e^{-x}` with `|phi(x) - e^{-x}| <= eps0` for
/// `x >= 0`, `|phi(x)| <= eps0 / 2` for `x >= log(2/eps0)` and Lipschitz constant 1.
///
/// Knots are spaced `sqrt(8 eps0 e^x)` apart, so the width grows like `eps0^{-1/2}`.
pub fn exp_net(eps0: f64) -> Result<ReluNet> {
    if !(eps0 > 0.0 && eps0.is_finite()) {
        return Err(Error::invalid(format!("exp_net needs eps0 > 0, got {eps0}")));
    }
    let knots = exp_abs_knots(eps0.min(1.0));
    let mut values: Vec<f64> = knots.iter().map(|x| (-x).exp()).collect();
    if eps0 >= 1.0 {
        values = vec![0.5, 0.5];
    }
    pwl_net(&knots, &values)
}

/// `e^a exp_net(x + a)`: valid on `x >= -a` with error `e^a (eps0 + |x - x'|)`.
pub fn shifted_exp_net(eps0: f64, a: f64) -> Result<ReluNet> {
    if !(a >= 0.0 && a.is_finite()) {
        return Err(Error::invalid(format!("shift must be finite and >= 0, got {a}")));
    }
    let base = exp_net(eps0)?;
    if a == 0.0 {
        return Ok(base);
    }
    base.pre_affine(&SparseMatrix::identity(1), &[a])?
        .linear_post(&SparseMatrix::from_triplets(1, 1, vec![(0, 0, a.exp())])?, &[0.0])
}

/// Interpolant of `e^{-x}` on uniform knots over `[lo, hi]` with relative error at most
/// `eta` there; constant `e^{-lo}` below and `e^{-hi}` above.
pub fn exp_rel_net(eta: f64, lo: f64, hi: f64) -> Result<ReluNet> {
    if !(eta > 0.0 && eta < 1.0 && lo < hi && hi.is_finite() && lo.is_finite()) {
        return Err(Error::invalid("exp_rel_net needs eta in (0,1) and lo < hi"));
    }
    // relative error on a panel of width h is at most h^2 e^h / 8
    let mut h = (8.0 * eta).sqrt();
    while h * h * h.exp() / 8.0 > eta {
        h *= 0.99;
    }
    let n = ((hi - lo) / h).ceil().max(1.0) as usize;
    let knots: Vec<f64> = (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect();
    let values: Vec<f64> = knots.iter().map(|x| (-x).exp()).collect();
    pwl_net(&knots, &values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn eval1(net: &ReluNet, x: &[f64]) -> f64 {
        net.evaluate(x).unwrap()[0]
    }

    #[test]
    fn clip_is_exact_inside() {
        let net = clip_unit(2, 4.0);
        let y = net.evaluate(&[2.0, -9.0]).unwrap();
        assert_eq!(y, vec![0.5, -1.0]);
        assert_eq!(net.evaluate(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn unit_mult_error_matches_levels() {
        for m in 0..8 {
            let net = unit_mult(m);
            let mut worst: f64 = 0.0;
            for i in 0..=40 {
                for j in 0..=40 {
                    let p = -1.0 + i as f64 / 20.0;
                    let q = -1.0 + j as f64 / 20.0;
                    let v = eval1(&net, &[p, q]);
                    worst = worst.max((v - p * q).abs());
                    assert!(v.abs() <= 1.0 + 1e-12);
                }
            }
            assert!(worst <= 2f64.powi(-2 * m as i32 - 1) + 1e-14, "m={m} err={worst}");
        }
    }

    #[test]
    fn mult_examples() {
        let net = mult_net(2, 4.0, 1e-3).unwrap();
        assert!((eval1(&net, &[2.0, 3.0]) - 6.0).abs() <= 1e-3);
        let mut r = rng::stream(1, 0);
        for _ in 0..200 {
            let q: f64 = r.random_range(-10.0..10.0);
            assert_eq!(eval1(&net, &[0.0, q]), 0.0);
            assert_eq!(eval1(&net, &[q, 0.0]), 0.0);
        }
        assert!(eval1(&net, &[100.0, 100.0]).abs() <= 16.0);
    }

    #[test]
    fn three_factor_zero_anywhere() {
        let net = mult_net(3, 2.0, 1e-4).unwrap();
        for pos in 0..3 {
            let mut x = [1.3, -0.7, 1.9];
            x[pos] = 0.0;
            assert_eq!(eval1(&net, &x), 0.0);
        }
    }

    #[test]
    fn monomial_matches_power() {
        let net = monomial_net(&[2, 0, 1], 1.0, 1e-6).unwrap();
        let v = eval1(&net, &[0.5, 0.9, -0.4]);
        assert!((v - 0.25 * -0.4).abs() < 1e-6);
        let lin = monomial_net(&[0, 1], 1.0, 1e-6).unwrap();
        assert_eq!(eval1(&lin, &[0.3, -0.6]), -0.6);
    }

    #[test]
    fn exp_examples() {
        let net = exp_net(1e-3).unwrap();
        assert!((eval1(&net, &[0.0]) - 1.0).abs() <= 1e-3);
        assert!(eval1(&net, &[(3e3f64).ln() + 5.0]).abs() <= 1e-3);
        let net = exp_net(1e-4).unwrap();
        let mut worst: f64 = 0.0;
        let mut lip: f64 = 0.0;
        let mut prev = eval1(&net, &[0.0]);
        for i in 1..=10_000 {
            let x = 20.0 * i as f64 / 10_000.0;
            let v = eval1(&net, &[x]);
            worst = worst.max((v - (-x).exp()).abs());
            lip = lip.max((v - prev).abs() / 0.002);
            prev = v;
        }
        assert!(worst <= 1e-4, "{worst}");
        assert!(lip <= 1.0 + 1e-9);
    }

    #[test]
    fn shifted_exp_bound() {
        let eps0 = 1e-3;
        let net = shifted_exp_net(eps0, 1.0).unwrap();
        assert!((eval1(&net, &[0.0]) - 1.0).abs() <= std::f64::consts::E * eps0);
        let net = shifted_exp_net(eps0, 2.0).unwrap();
        for i in 0..=1200 {
            let x = -2.0 + i as f64 / 100.0;
            let err = (eval1(&net, &[x]) - (-x).exp()).abs();
            assert!(err <= 2f64.exp() * eps0 + 1e-12, "x={x} err={err}");
        }
        assert_eq!(shifted_exp_net(eps0, 0.0).unwrap(), exp_net(eps0).unwrap());
    }

    #[test]
    fn relative_exp() {
        let net = exp_rel_net(1e-4, -0.5, 30.0).unwrap();
        for i in 0..=3000 {
            let x = -0.5 + 30.5 * i as f64 / 3000.0;
            let v = eval1(&net, &[x]);
            let rel = (v - (-x).exp()).abs() / (-x).exp();
            assert!(rel <= 1e-4, "x={x} rel={rel}");
        }
    }
}
