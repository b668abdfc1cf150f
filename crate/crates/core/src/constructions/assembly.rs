//! The assembled score network for `d = 1`.
//!
//! Per cell `j` with anchor `u_j` and width `h`, the Gaussian exponent of the surrogate
//! splits as `V_{j,0} + r_j . a_j(w) + b_j(w)` with normalized coordinates `r_j` in the unit
//! cube. The cell integral `h e^{-V_{j,0}} Phi_j(r_j)` is realized as a relative-accuracy
//! exponential of `V_{j,0}` times a Taylor polynomial of `Phi_j`. Cells are summed into the
//! denominator `Q` and numerators `P_l`, and `f_l = 2 div(P_l / 4, Q / 2)`.

use super::arith::{exp_rel_net, monomial_net, mult_net};
use super::division::div_net_with;
use super::schedule_nets::{chi_net, rho_net, select};
use super::{clip_to_ball, ConstructionReport};
use crate::error::{Error, Result};
use crate::generator::{factorial, GeneratorSpec, LocalPolySurrogate, PartitionGrid};
use crate::netcalc::{ReluNet, SparseMatrix};
use crate::oracle::{gauss_legendre, practical_radius, ImageGrid, Mixture, QuadratureRule};
use crate::schedule::DiffusionSchedule;

/// Knobs of the assembly and its audit.
#[derive(Debug, Clone, Copy)]
pub struct AssemblyOptions {
    /// Gauss-Legendre nodes per cell for the Taylor coefficients.
    pub coef_nodes: usize,
    /// Points of the geometric audit grid in `t`.
    pub audit_t: usize,
    /// Audit points per ambient axis.
    pub audit_y: usize,
    /// Cap on `audit_y^D` per time slice; the per-axis count shrinks to fit.
    pub audit_slice_cap: usize,
    /// Margin applied to the numerically computed sup norms.
    pub sup_margin: f64,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        Self {
            coef_nodes: 40,
            audit_t: 64,
            audit_y: 32,
            audit_slice_cap: 4096,
            sup_margin: 1.05,
        }
    }
}

/// Results of the audit on the compact set.
#[derive(Debug, Clone)]
pub struct AssemblyAudit {
    pub n_points: usize,
    pub sup_error: f64,
    pub bound: f64,
    /// Smallest `Q(y,t)` divided by its lower bound; at least 1 when the audit passes.
    pub min_q_ratio: f64,
    pub q_lower: f64,
    /// Points where the clip at radius 2 was active.
    pub clip_active: usize,
    pub max_f_norm: f64,
}

/// The assembled network with its pieces.
#[derive(Debug, Clone)]
pub struct AssembledScore {
    pub sched: DiffusionSchedule,
    pub dim: usize,
    pub eps: f64,
    pub eps_prime: f64,
    /// `(y, t) -> f(y, t)`.
    pub f_net: ReluNet,
    /// `(y, t) -> (Q, P_1, ..., P_D)`.
    pub qp_net: ReluNet,
    /// `(Q, P) -> f`.
    pub div_head: ReluNet,
    pub k_div: usize,
    pub n_cells: usize,
    pub report: ConstructionReport,
    pub audit: AssemblyAudit,
}

impl AssembledScore {
    /// `-y / tvar + (m / tvar) clip(f(y,t), 2)`.
    pub fn score(&self, y: &[f64], t: f64) -> Result<Vec<f64>> {
        let mut x = y.to_vec();
        x.push(t);
        let f = self.f_net.evaluate(&x)?;
        let v = self.sched.eval(t)?;
        let f = clip_to_ball(&f, 2.0);
        Ok(y.iter().zip(&f).map(|(yl, fl)| -yl / v.tvar + v.m * fl / v.tvar).collect())
    }
}

struct Cell {
    anchor: f64,
    g: Vec<f64>,
    /// `d^k g(u_j)` for `k = 1..=floor(beta)`.
    derivs: Vec<Vec<f64>>,
    /// Sup norms of `V_{j,k}`; entry 0 is the sup of `V(t)`.
    sups: Vec<f64>,
    v0_max: f64,
}

/// Sorted `t` values used for sup norms.
fn t_scan(sched: &DiffusionSchedule, n: usize) -> Vec<f64> {
    if sched.t_max == sched.t0 {
        return vec![sched.t0];
    }
    let ratio = sched.t_max / sched.t0;
    (0..n).map(|i| sched.t0 * ratio.powf(i as f64 / (n - 1) as f64)).collect()
}

/// Builds the score network and audits it on the compact set.
pub fn assemble_score_net(
    gen: &GeneratorSpec,
    sched: &DiffusionSchedule,
    eps: f64,
    eps_prime: f64,
    opts: &AssemblyOptions,
) -> Result<AssembledScore> {
    let dim = gen.dim;
    let kb = gen.floor_beta();
    if gen.d != 1 || kb > 2 || dim > 3 {
        return Err(Error::precondition(format!(
            "assembly supports d = 1, floor(beta) <= 2, D <= 3; got d={}, floor(beta)={kb}, D={dim}",
            gen.d
        )));
    }
    if !gen.holder.is_finite() {
        return Err(Error::precondition("assembly needs a finite Hölder constant"));
    }
    if !(eps > 0.0 && eps < 1.0 && eps_prime > 0.0 && eps_prime < 1.0) {
        return Err(Error::invalid("eps and eps_prime must lie in (0,1)"));
    }
    sched.validate()?;
    let tvar0 = sched.tvar_t0();
    let small = dim as f64 * eps * (1.0 / eps).ln().sqrt();
    if small > tvar0 {
        return Err(Error::precondition(format!(
            "smallness condition D eps sqrt(log(1/eps)) = {small:.4} exceeds tilde sigma_t0^2 = {tvar0:.4}"
        )));
    }

    let grid = PartitionGrid::new(eps, 1)?;
    let n_cells = grid.n;
    let h = grid.width();
    let beta = gen.beta;
    // R_t^2 / tvar_t does not depend on t for the chi-square radius
    let q_ratio = practical_radius(sched, sched.t0, eps, beta, dim).powi(2) / tvar0;
    let q_lower = h * (-4.0 - q_ratio).exp();
    let k_base = ((4.0 + (1.0 / h).ln() + q_ratio) / 2f64.ln()).ceil() as usize;
    let k_div = k_base.max(3) + 1;

    let ts = t_scan(sched, 256);
    let radii: Vec<f64> = ts.iter().map(|&t| practical_radius(sched, t, eps, beta, dim)).collect();
    let n_u = 2001;
    let image: Vec<Vec<f64>> = (0..n_u).map(|i| gen.eval(&[i as f64 / (n_u - 1) as f64])).collect();
    let gsup = image
        .iter()
        .flat_map(|p| p.iter().map(|v| v.abs()))
        .fold(0.0, f64::max);
    let m_box = ts
        .iter()
        .zip(&radii)
        .map(|(&t, &r)| r + sched.eval_unchecked(t).m * gsup)
        .fold(1.0f64, f64::max)
        * 1.01;

    let calv_sup = sched.eval_unchecked(sched.t0).calv;
    let mut cells = Vec::with_capacity(n_cells);
    for flat in 0..n_cells {
        let j = grid.cell_index(flat);
        let anchor = grid.anchor(&j)[0];
        let g = gen.eval(&[anchor]);
        let derivs: Vec<Vec<f64>> = (1..=kb).map(|k| gen.partial(&[k], &[anchor])).collect::<Result<_>>()?;
        let mut sups = vec![calv_sup * opts.sup_margin];
        for dk in &derivs {
            let norm = dk.iter().map(|v| v * v).sum::<f64>().sqrt();
            let mut s: f64 = 0.0;
            for (&t, &r) in ts.iter().zip(&radii) {
                let v = sched.eval_unchecked(t);
                let inner = image
                    .iter()
                    .map(|p| (v.m * p.iter().zip(&g).zip(dk).map(|((a, b), c)| (a - b) * c).sum::<f64>()).abs())
                    .fold(0.0, f64::max);
                s = s.max(v.m / v.tvar * (inner + r * norm));
            }
            sups.push(s * opts.sup_margin);
        }
        let mut v0_max: f64 = 0.0;
        for (&t, &r) in ts.iter().zip(&radii) {
            let v = sched.eval_unchecked(t);
            let far = image
                .iter()
                .map(|p| p.iter().zip(&g).map(|(a, b)| (v.m * (a - b)).powi(2)).sum::<f64>().sqrt())
                .fold(0.0, f64::max);
            v0_max = v0_max.max((far + r).powi(2) / (2.0 * v.tvar));
        }
        cells.push(Cell {
            anchor,
            g,
            derivs,
            sups,
            v0_max,
        });
    }

    // error budget, every piece relative to the local denominator
    let share = eps_prime / 8.0;
    let feat_eps = share / (1.5 + (dim as f64).sqrt());
    let features = feature_net(sched, dim, m_box, feat_eps)?;
    let n_feat = dim + 2;

    let mut cell_nets = Vec::with_capacity(n_cells);
    for cell in &cells {
        cell_nets.push(cell_net(cell, dim, h, n_feat, share, q_lower, opts)?);
    }
    let summed = ReluNet::parallel(&cell_nets, true)?;
    let mut e = Vec::new();
    for c in 0..n_cells {
        for o in 0..=dim {
            e.push((o, c * (dim + 1) + o, h));
        }
    }
    let summed = summed.linear_post(
        &SparseMatrix::from_triplets(dim + 1, n_cells * (dim + 1), e)?,
        &vec![0.0; dim + 1],
    )?;
    let qp_net = ReluNet::concat(&summed, &features)?;

    let div_eps = eps_prime / 4.0;
    let div = div_net_with(k_div, div_eps, |_| div_eps)?;
    let heads: Vec<ReluNet> = (0..dim)
        .map(|l| {
            let m = SparseMatrix::from_triplets(2, dim + 1, vec![(0, 1 + l, 0.25), (1, 0, 0.5)])?;
            div.pre_affine(&m, &[0.0, 0.0])
        })
        .collect::<Result<_>>()?;
    let div_head = ReluNet::parallel(&heads, true)?.linear_post(
        &SparseMatrix::from_triplets(dim, dim, (0..dim).map(|l| (l, l, 2.0)).collect())?,
        &vec![0.0; dim],
    )?;
    let f_net = ReluNet::concat(&div_head, &qp_net)?;

    let audit = audit_assembly(gen, sched, eps, &qp_net, &div_head, q_lower, opts)?;
    if audit.min_q_ratio < 1.0 {
        return Err(Error::Audit(format!(
            "denominator fell to {:.3e} of its lower bound {q_lower:.3e}",
            audit.min_q_ratio
        )));
    }
    let report = ConstructionReport {
        name: "score_net".into(),
        net: f_net.clone(),
        target_accuracy: audit.bound,
        domain_spec: format!(
            "compact set over t in [{},{}] ({} t-points, {} per axis), chi-square radius",
            sched.t0,
            sched.t_max,
            opts.audit_t,
            audit_axis_points(opts, gen.dim)
        ),
        measured_error: audit.sup_error,
        bound: audit.bound,
        n_points: audit.n_points,
    };
    Ok(AssembledScore {
        sched: *sched,
        dim,
        eps,
        eps_prime,
        f_net,
        qp_net,
        div_head,
        k_div,
        n_cells,
        report,
        audit,
    })
}

/// `(y, t) -> (rho, chi_2, chi_1 y_1, ..., chi_1 y_D)`, each within `acc`.
fn feature_net(sched: &DiffusionSchedule, dim: usize, m_box: f64, acc: f64) -> Result<ReluNet> {
    let n = dim + 1;
    let rho = rho_net(sched, dim, m_box, acc)?;
    let chi2 = chi_net(sched, 2, acc)?.pre_affine(&select(n, &[dim]), &[0.0])?;
    let c = m_box.max(1.0 / sched.tvar_t0());
    let chi1 = chi_net(sched, 1, acc / (4.0 * c))?.pre_affine(&select(n, &[dim]), &[0.0])?;
    let ys = ReluNet::affine(select(n, &(0..dim).collect::<Vec<_>>()), &vec![0.0; dim])?;
    let y_chi = ReluNet::parallel(&[ys, chi1], true)?;
    let mult = mult_net(2, c, acc / 2.0)?;
    let prods: Vec<ReluNet> = (0..dim)
        .map(|l| mult.pre_affine(&select(dim + 1, &[l, dim]), &[0.0, 0.0]))
        .collect::<Result<_>>()?;
    let prods = ReluNet::concat(&ReluNet::parallel(&prods, true)?, &y_chi)?;
    ReluNet::parallel(&[rho, chi2, prods], true)
}

/// Enumerates multi-indices over `a_hat.len()` variables by decreasing
/// `prod a_hat^alpha / alpha!` until the neglected mass is at most `budget`.
fn taylor_indices(a_hat: &[f64], budget: f64) -> Vec<Vec<usize>> {
    let n = a_hat.len();
    let total = a_hat.iter().sum::<f64>().exp();
    let caps: Vec<usize> = a_hat
        .iter()
        .map(|&a| {
            let mut k = 0;
            let mut term = 1.0;
            while term > 1e-30 * total && k < 200 {
                k += 1;
                term *= a / k as f64;
            }
            k
        })
        .collect();
    let mut cand: Vec<(f64, Vec<usize>)> = Vec::new();
    let mut idx = vec![0usize; n];
    loop {
        let w: f64 = idx
            .iter()
            .zip(a_hat)
            .map(|(&k, &a)| a.powi(k as i32) / factorial(k))
            .product();
        cand.push((w, idx.clone()));
        let mut p = 0;
        while p < n {
            idx[p] += 1;
            if idx[p] <= caps[p] {
                break;
            }
            idx[p] = 0;
            p += 1;
        }
        if p == n {
            break;
        }
    }
    cand.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    let mut kept = Vec::new();
    let mut acc = 0.0;
    for (w, a) in cand {
        if total - acc <= budget {
            break;
        }
        acc += w;
        kept.push(a);
    }
    kept.sort_by(|a, b| a.iter().sum::<usize>().cmp(&b.iter().sum::<usize>()).then_with(|| a.cmp(b)));
    kept
}

/// Network `F -> (Upsilon_j^1, Upsilon_j^{g_1}, ..., Upsilon_j^{g_D})` for one cell, where
/// `F = (rho, chi_2, chi_1 y)` are the shared features.
fn cell_net(
    cell: &Cell,
    dim: usize,
    h: f64,
    n_feat: usize,
    share: f64,
    q_lower: f64,
    opts: &AssemblyOptions,
) -> Result<ReluNet> {
    let kb = cell.derivs.len();
    let (wn, ww) = gauss_legendre(opts.coef_nodes, 0.0, 1.0);
    let nw = wn.len();

    // Delta(w) = g_j(u_j - h w) - g(u_j) on the nodes
    let mut delta = vec![vec![0.0; dim]; nw];
    for (i, &w) in wn.iter().enumerate() {
        for (k, dk) in cell.derivs.iter().enumerate() {
            let c = (-h * w).powi(k as i32 + 1) / factorial(k + 1);
            for l in 0..dim {
                delta[i][l] += dk[l] * c;
            }
        }
    }
    // variable 0 is V(t); variable k >= 1 is V_{j,k}
    let mut a_fun = vec![vec![0.0; nw]; kb + 1];
    let mut b_fun = vec![0.0; nw];
    for i in 0..nw {
        a_fun[0][i] = cell.sups[0] * delta[i].iter().map(|v| v * v).sum::<f64>();
        for k in 1..=kb {
            let c = (-h * wn[i]).powi(k as i32) / factorial(k);
            a_fun[k][i] = 2.0 * cell.sups[k] * c;
            b_fun[i] -= cell.sups[k] * c;
        }
    }
    let active: Vec<usize> = (0..=kb)
        .filter(|&k| a_fun[k].iter().any(|v| v.abs() > 1e-300))
        .collect();
    let psi: Vec<Vec<f64>> = (0..=dim)
        .map(|p| {
            (0..nw)
                .map(|i| if p == 0 { 1.0 } else { cell.g[p - 1] + delta[i][p - 1] })
                .collect()
        })
        .collect();
    let psi_max = psi.iter().flatten().fold(1.0f64, |m, v| m.max(v.abs()));
    // e^{-c.a - b} at the cube center c = 1/2 is e^{-a_0 / 2}
    let center: Vec<f64> = (0..nw).map(|i| (-0.5 * a_fun[0][i]).exp()).collect();
    let e_center = center.iter().fold(0.0f64, |m, v| m.max(*v));
    let phi_lower = (0..nw)
        .map(|i| {
            let top: f64 = (0..=kb).map(|k| a_fun[k][i].max(0.0)).sum::<f64>() + b_fun[i];
            (-top).exp()
        })
        .fold(f64::INFINITY, f64::min);
    let phi_upper = (0..nw)
        .map(|i| {
            let low: f64 = (0..=kb).map(|k| a_fun[k][i].min(0.0)).sum::<f64>() + b_fun[i];
            (-low).exp()
        })
        .fold(0.0f64, f64::max);

    let a_hat: Vec<f64> = active
        .iter()
        .map(|&k| a_fun[k].iter().fold(0.0f64, |m, v| m.max(v.abs())) / 2.0)
        .collect();
    let tol = share * phi_lower;
    let alphas = if active.is_empty() {
        vec![vec![]]
    } else {
        taylor_indices(&a_hat, tol / (psi_max * e_center))
    };
    // coefficients of z^alpha with z = 2 r - 1
    let coefs: Vec<Vec<f64>> = (0..=dim)
        .map(|p| {
            alphas
                .iter()
                .map(|alpha| {
                    let mut s = 0.0;
                    for i in 0..nw {
                        let mut term = ww[i] * psi[p][i] * center[i];
                        for (&k, &ak) in active.iter().zip(alpha) {
                            term *= (-0.5 * a_fun[k][i]).powi(ak as i32) / factorial(ak);
                        }
                        s += term;
                    }
                    s
                })
                .collect()
        })
        .collect();

    // features -> z: z_0 = chi_2 / sup V - 1, z_k = V_{j,k} / sup_k
    let mut zrows = Vec::new();
    let mut zoff = Vec::new();
    for (r, &k) in active.iter().enumerate() {
        if k == 0 {
            zrows.push((r, 1, 1.0 / cell.sups[0]));
            zoff.push(-1.0);
        } else {
            let dk = &cell.derivs[k - 1];
            let gd: f64 = cell.g.iter().zip(dk).map(|(a, b)| a * b).sum();
            zrows.push((r, 1, gd / cell.sups[k]));
            for l in 0..dim {
                zrows.push((r, 2 + l, -dk[l] / cell.sups[k]));
            }
            zoff.push(0.0);
        }
    }
    let nz = active.len();
    let nonconst: Vec<usize> = (0..alphas.len()).filter(|&i| alphas[i].iter().sum::<usize>() > 0).collect();
    let const_idx = alphas.iter().position(|a| a.iter().all(|&k| k == 0));
    let poly = if nonconst.is_empty() {
        let c: Vec<f64> = (0..=dim).map(|p| const_idx.map_or(0.0, |i| coefs[p][i])).collect();
        ReluNet::constant(n_feat, &c)?
    } else {
        let coef_mass: f64 = nonconst
            .iter()
            .map(|&i| (0..=dim).map(|p| coefs[p][i].abs()).fold(0.0, f64::max))
            .sum();
        let mono_eps = (tol / coef_mass.max(1e-300)).min(1e-2);
        let monos: Vec<ReluNet> = nonconst
            .iter()
            .map(|&i| monomial_net(&alphas[i], 1.0, mono_eps))
            .collect::<Result<_>>()?;
        let zmap = SparseMatrix::from_triplets(nz, n_feat, zrows)?;
        let stacked = ReluNet::parallel(&monos, true)?.pre_affine(&zmap, &zoff)?;
        let mut e = Vec::new();
        for p in 0..=dim {
            for (c, &i) in nonconst.iter().enumerate() {
                e.push((p, c, coefs[p][i]));
            }
        }
        let offsets: Vec<f64> = (0..=dim).map(|p| const_idx.map_or(0.0, |i| coefs[p][i])).collect();
        stacked.linear_post(&SparseMatrix::from_triplets(dim + 1, nonconst.len(), e)?, &offsets)?
    };

    // V_{j,0} = rho - g . (chi_1 y) + |g|^2 chi_2 / 2
    let g2: f64 = cell.g.iter().map(|v| v * v).sum();
    let mut vrow = vec![(0, 0, 1.0), (0, 1, 0.5 * g2)];
    for l in 0..dim {
        vrow.push((0, 2 + l, -cell.g[l]));
    }
    let lo = -4.0 * share;
    let hi = cell.v0_max + 1.0;
    let expo = exp_rel_net(share, lo, hi)?
        .pre_affine(&SparseMatrix::from_triplets(1, n_feat, vrow)?, &[0.0])?;

    let pair = ReluNet::parallel(&[expo, poly], true)?;
    let c_mult = (phi_upper * psi_max).max(1.0) * 1.05;
    let mult = mult_net(2, c_mult, (share * q_lower).min(1e-2))?;
    let outs: Vec<ReluNet> = (0..=dim)
        .map(|p| mult.pre_affine(&select(dim + 2, &[0, 1 + p]), &[0.0, 0.0]))
        .collect::<Result<_>>()?;
    let _ = cell.anchor;
    ReluNet::concat(&ReluNet::parallel(&outs, true)?, &pair)
}

fn audit_axis_points(opts: &AssemblyOptions, dim: usize) -> usize {
    let mut k = opts.audit_y.max(2);
    while k > 2 && k.pow(dim as u32) > opts.audit_slice_cap {
        k -= 1;
    }
    k
}

fn audit_assembly(
    gen: &GeneratorSpec,
    sched: &DiffusionSchedule,
    eps: f64,
    qp_net: &ReluNet,
    div_head: &ReluNet,
    q_lower: f64,
    opts: &AssemblyOptions,
) -> Result<AssemblyAudit> {
    let dim = gen.dim;
    let sur = LocalPolySurrogate::build(gen, eps)?;
    let n = sur.grid.n;
    let reference = Mixture::from_surrogate(&sur, &QuadratureRule::new(24 * n))?;
    let image = ImageGrid::new(gen, &QuadratureRule::new(64));
    let n_u = 2001;
    let pts: Vec<Vec<f64>> = (0..n_u).map(|i| gen.eval(&[i as f64 / (n_u - 1) as f64])).collect();

    let mut points: Vec<Vec<f64>> = Vec::new();
    for t in t_scan(sched, opts.audit_t) {
        let v = sched.eval_unchecked(t);
        let r = practical_radius(sched, t, eps, gen.beta, dim);
        let lo: Vec<f64> = (0..dim).map(|l| pts.iter().map(|p| v.m * p[l]).fold(f64::INFINITY, f64::min) - r).collect();
        let hi: Vec<f64> = (0..dim).map(|l| pts.iter().map(|p| v.m * p[l]).fold(f64::NEG_INFINITY, f64::max) + r).collect();
        let k = audit_axis_points(opts, dim);
        let total = k.pow(dim as u32);
        for flat in 0..total {
            let mut rem = flat;
            let mut y = Vec::with_capacity(dim + 1);
            for l in 0..dim {
                let i = rem % k;
                rem /= k;
                y.push(lo[l] + (hi[l] - lo[l]) * i as f64 / (k - 1) as f64);
            }
            if image.min_dist2(&y, v.m) <= r * r {
                y.push(t);
                points.push(y);
            }
        }
    }

    struct Local {
        err: f64,
        qmin: f64,
        clip: usize,
        fmax: f64,
    }
    let parts = crate::exec::map_chunks(points.len(), 16, |range| {
        let mut s = Vec::new();
        let mut out = Local {
            err: 0.0,
            qmin: f64::INFINITY,
            clip: 0,
            fmax: 0.0,
        };
        for p in &points[range] {
            let t = p[dim];
            let v = sched.eval_unchecked(t);
            let want = reference.eval_at(&v, &p[..dim]).map(|e| e.f_value).unwrap_or_else(|_| vec![f64::NAN; dim]);
            let qp = qp_net.evaluate_with(p, &mut s);
            let f = div_head.evaluate_with(&qp, &mut s);
            let norm = f.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 2.0 {
                out.clip += 1;
            }
            out.fmax = out.fmax.max(want.iter().map(|x| x * x).sum::<f64>().sqrt());
            let err = f.iter().zip(&want).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            out.err = if err.is_nan() { f64::INFINITY } else { out.err.max(err) };
            out.qmin = out.qmin.min(qp[0] / q_lower);
        }
        out
    });
    let mut audit = AssemblyAudit {
        n_points: points.len(),
        sup_error: 0.0,
        bound: (dim as f64).sqrt() * eps.powf(gen.beta),
        min_q_ratio: f64::INFINITY,
        q_lower,
        clip_active: 0,
        max_f_norm: 0.0,
    };
    for p in parts {
        audit.sup_error = audit.sup_error.max(p.err);
        audit.min_q_ratio = audit.min_q_ratio.min(p.qmin);
        audit.clip_active += p.clip;
        audit.max_f_norm = audit.max_f_norm.max(p.fmax);
    }
    Ok(audit)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn audit_grid_shrinks_with_dimension() {
        let o = AssemblyOptions::default();
        assert_eq!(audit_axis_points(&o, 1), 32);
        assert_eq!(audit_axis_points(&o, 2), 32);
        assert_eq!(audit_axis_points(&o, 3), 16);
    }
    use crate::generator::zoo;

    #[test]
    fn taylor_indices_cover_mass() {
        let a = [0.5, 2.0];
        let idx = taylor_indices(&a, 1e-6);
        let total = 2.5f64.exp();
        let kept: f64 = idx
            .iter()
            .map(|al| al.iter().zip(&a).map(|(&k, &x)| x.powi(k as i32) / factorial(k)).product::<f64>())
            .sum();
        assert!(total - kept <= 1e-6);
        assert_eq!(idx[0], vec![0, 0]);
    }

    #[test]
    fn constant_generator_is_exact_to_budget() {
        let gen = zoo::constant(vec![0.4]);
        let sched = DiffusionSchedule::new(0.6, 0.2, 1.5).unwrap();
        let opts = AssemblyOptions {
            audit_t: 8,
            audit_y: 16,
            ..Default::default()
        };
        let a = assemble_score_net(&gen, &sched, 0.3, 0.01, &opts).unwrap();
        assert!(a.audit.sup_error <= a.audit.bound, "{:?}", a.audit);
        assert!(a.audit.min_q_ratio >= 1.0);
    }
}
