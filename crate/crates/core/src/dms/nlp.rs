//! Smooth constrained problems and a primal-dual interior-point solver.
//!
//! A problem is `min c'x + sum q_i x_i^2` subject to `l_i <= g_i(x) <= u_i`
//! and simple bounds on `x`. Each `g_i` is a linear form plus a sum of
//! nonlinear [`Term`]s that know their own local derivatives. Variables with
//! equal bounds are held fixed and never enter the Newton systems.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::jet::Jet;
use crate::linalg::norm_inf;
use crate::sparse::{SparseLu, Triplets};

#[derive(Debug, Clone, PartialEq)]
pub enum Term {
    /// Real (`imag = false`) or imaginary part of the constant-power load
    /// current at voltage `(a, b)`, with real power `p0 + sum c_k x[k]`.
    Load {
        a: usize,
        b: usize,
        p: Vec<(usize, f64)>,
        p0: f64,
        q: f64,
        imag: bool,
    },
    /// Part of `(g + jb) (v_re + j v_im) t^power`.
    Tap {
        v_re: usize,
        v_im: usize,
        t: usize,
        power: i32,
        g: f64,
        b: f64,
        imag: bool,
    },
    /// `(re . x)^2 + (im . x)^2`.
    SqMag {
        re: Vec<(usize, f64)>,
        im: Vec<(usize, f64)>,
    },
    /// `P^2 + Q^2` of `sum_phi V_p conj(I_p)` with `I_p = y (V_p / t^2 - V_s / t)`.
    /// Each phase lists `[vp_re, vp_im, vs_re, vs_im]`.
    XfmrPower {
        phases: Vec<[usize; 4]>,
        t: usize,
        g: f64,
        b: f64,
    },
}

impl Term {
    pub fn vars(&self) -> Vec<usize> {
        match self {
            Term::Load { a, b, p, .. } => {
                let mut v = vec![*a, *b];
                v.extend(p.iter().map(|e| e.0));
                v
            }
            Term::Tap { v_re, v_im, t, .. } => vec![*v_re, *v_im, *t],
            Term::SqMag { re, im } => {
                let mut v: Vec<usize> = re.iter().chain(im).map(|e| e.0).collect();
                v.sort_unstable();
                v.dedup();
                v
            }
            Term::XfmrPower { phases, t, .. } => {
                let mut v: Vec<usize> = phases.iter().flatten().copied().collect();
                v.push(*t);
                v
            }
        }
    }

    /// Value with gradient and Hessian over [`Term::vars`].
    pub fn jet(&self, x: &[f64]) -> (Vec<usize>, Jet) {
        let vars = self.vars();
        let n = vars.len();
        let var = |k: usize| Jet::var(x[vars[k]], k, n);
        let jet = match self {
            Term::Load { p, p0, q, imag, .. } => {
                let (a, b) = (var(0), var(1));
                let mut pw = Jet::constant(*p0, n);
                for (k, &(_, c)) in p.iter().enumerate() {
                    pw = pw.add(&var(2 + k).scale(c));
                }
                let m = a.square().add(&b.square());
                let num = if *imag {
                    pw.mul(&b).sub(&a.scale(*q))
                } else {
                    pw.mul(&a).add(&b.scale(*q))
                };
                num.div(&m)
            }
            Term::Tap {
                power, g, b, imag, ..
            } => {
                let (vr, vi, t) = (var(0), var(1), var(2));
                let lin = if *imag {
                    vr.scale(*b).add(&vi.scale(*g))
                } else {
                    vr.scale(*g).sub(&vi.scale(*b))
                };
                let inv = t.recip();
                let factor = match power {
                    -1 => inv,
                    -2 => inv.square(),
                    0 => Jet::constant(1.0, n),
                    1 => t,
                    other => panic!("unsupported tap power {other}"),
                };
                lin.mul(&factor)
            }
            Term::SqMag { re, im } => {
                let lin = |coeffs: &[(usize, f64)]| {
                    let mut j = Jet::constant(0.0, n);
                    for &(v, c) in coeffs {
                        let k = vars.binary_search(&v).expect("variable listed");
                        j.v += c * x[v];
                        j.g[k] += c;
                    }
                    j
                };
                lin(re).square().add(&lin(im).square())
            }
            Term::XfmrPower { phases, g, b, .. } => {
                let t = var(n - 1);
                let inv = t.recip();
                let inv2 = inv.square();
                let mut p = Jet::constant(0.0, n);
                let mut q = Jet::constant(0.0, n);
                for k in 0..phases.len() {
                    let (pr, pi, sr, si) = (var(4 * k), var(4 * k + 1), var(4 * k + 2), var(4 * k + 3));
                    let dr = pr.mul(&inv2).sub(&sr.mul(&inv));
                    let di = pi.mul(&inv2).sub(&si.mul(&inv));
                    let ir = dr.scale(*g).sub(&di.scale(*b));
                    let ii = dr.scale(*b).add(&di.scale(*g));
                    p = p.add(&pr.mul(&ir)).add(&pi.mul(&ii));
                    q = q.add(&pi.mul(&ir)).sub(&pr.mul(&ii));
                }
                p.square().add(&q.square())
            }
        };
        (vars, jet)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Term::Load {
                a, b, p, p0, q, imag,
            } => {
                let (va, vb) = (x[*a], x[*b]);
                let pw = p0 + p.iter().map(|&(k, c)| c * x[k]).sum::<f64>();
                let m = va * va + vb * vb;
                if *imag {
                    (pw * vb - q * va) / m
                } else {
                    (pw * va + q * vb) / m
                }
            }
            Term::SqMag { re, im } => {
                let r: f64 = re.iter().map(|&(v, c)| c * x[v]).sum();
                let i: f64 = im.iter().map(|&(v, c)| c * x[v]).sum();
                r * r + i * i
            }
            _ => self.jet(x).1.v,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub name: String,
    pub linear: Vec<(usize, f64)>,
    pub terms: Vec<(f64, Term)>,
    pub lower: f64,
    pub upper: f64,
}

impl Constraint {
    pub fn value(&self, x: &[f64]) -> f64 {
        let lin: f64 = self.linear.iter().map(|&(j, a)| a * x[j]).sum();
        lin + self
            .terms
            .iter()
            .map(|(k, t)| k * t.value(x))
            .sum::<f64>()
    }

    pub fn is_equality(&self) -> bool {
        self.lower == self.upper
    }

    /// Distance outside `[lower, upper]`.
    pub fn violation(&self, x: &[f64]) -> f64 {
        let v = self.value(x);
        (self.lower - v).max(v - self.upper).max(0.0)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Nlp {
    pub names: Vec<String>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub obj_linear: Vec<(usize, f64)>,
    pub obj_quadratic: Vec<(usize, f64)>,
    pub constraints: Vec<Constraint>,
}

impl Nlp {
    pub fn add_var(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> usize {
        self.names.push(name.into());
        self.lower.push(lower);
        self.upper.push(upper);
        self.names.len() - 1
    }

    pub fn num_vars(&self) -> usize {
        self.names.len()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.obj_linear.iter().map(|&(j, c)| c * x[j]).sum::<f64>()
            + self
                .obj_quadratic
                .iter()
                .map(|&(j, q)| q * x[j] * x[j])
                .sum::<f64>()
    }

    pub fn objective_gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.num_vars()];
        for &(j, c) in &self.obj_linear {
            g[j] += c;
        }
        for &(j, q) in &self.obj_quadratic {
            g[j] += 2.0 * q * x[j];
        }
        g
    }

    /// Sparse constraint Jacobian rows as `(var, value)` lists.
    pub fn jacobian_rows(&self, x: &[f64]) -> Vec<Vec<(usize, f64)>> {
        self.constraints
            .iter()
            .map(|c| {
                let mut row = c.linear.clone();
                for (k, t) in &c.terms {
                    let (vars, j) = t.jet(x);
                    row.extend(vars.iter().zip(&j.g).map(|(&v, g)| (v, k * g)));
                }
                row
            })
            .collect()
    }

    /// `grad f + J' lambda - z_l + z_u` over all variables.
    pub fn lagrangian_gradient(&self, x: &[f64], lambda: &[f64], z_l: &[f64], z_u: &[f64]) -> Vec<f64> {
        let mut g = self.objective_gradient(x);
        for (row, l) in self.jacobian_rows(x).iter().zip(lambda) {
            for &(j, v) in row {
                g[j] += l * v;
            }
        }
        for j in 0..g.len() {
            g[j] += z_u[j] - z_l[j];
        }
        g
    }

    pub fn max_violation(&self, x: &[f64]) -> (usize, f64) {
        self.constraints
            .iter()
            .enumerate()
            .map(|(i, c)| (i, c.violation(x)))
            .fold((0, 0.0), |best, cur| if cur.1 > best.1 { cur } else { best })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpmOptions {
    pub mu0: f64,
    pub sigma: f64,
    pub tau_min: f64,
    pub tol_dual: f64,
    pub tol_primal: f64,
    pub tol_compl: f64,
    pub max_iter: usize,
}

impl Default for IpmOptions {
    fn default() -> Self {
        IpmOptions {
            mu0: 0.1,
            sigma: 0.2,
            tau_min: 0.995,
            tol_dual: 1e-8,
            tol_primal: 1e-9,
            tol_compl: 1e-9,
            max_iter: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpmResult {
    pub x: Vec<f64>,
    /// Multipliers of the constraint rows, for `L = f + lambda' g`.
    pub lambda: Vec<f64>,
    pub z_lower: Vec<f64>,
    pub z_upper: Vec<f64>,
    pub iterations: usize,
    pub objective: f64,
    /// Infinity norm of the Lagrangian gradient over free variables and slacks.
    pub stationarity: f64,
    pub primal_infeasibility: f64,
    pub complementarity: f64,
    pub restorations: usize,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IpmError {
    #[error("interior point did not converge in {} iterations (stationarity {:.2e}, infeasibility {:.2e})", .0.iterations, .0.stationarity, .0.primal_infeasibility)]
    NonConvergence(Box<IpmResult>),
    #[error("locally infeasible: constraint {constraint} violated by {violation:.3e}")]
    LocallyInfeasible {
        constraint: usize,
        violation: f64,
        last: Box<IpmResult>,
    },
}

const GAMMA_THETA: f64 = 1e-5;
const GAMMA_PHI: f64 = 1e-8;
const DELTA: f64 = 1.0;
const S_THETA: f64 = 1.1;
const S_PHI: f64 = 2.3;
const ETA_PHI: f64 = 1e-4;

/// Interior-point state in the space of free variables followed by slacks.
struct Layout {
    free: Vec<usize>,
    pos: Vec<Option<usize>>,
    /// Constraint index -> slack position in `w`, for inequalities.
    slack: Vec<Option<usize>>,
    wl: Vec<f64>,
    wu: Vec<f64>,
}

impl Layout {
    fn new(nlp: &Nlp) -> Layout {
        let mut free = Vec::new();
        let mut pos = vec![None; nlp.num_vars()];
        let mut wl = Vec::new();
        let mut wu = Vec::new();
        for j in 0..nlp.num_vars() {
            if nlp.lower[j] < nlp.upper[j] {
                pos[j] = Some(free.len());
                free.push(j);
                wl.push(nlp.lower[j]);
                wu.push(nlp.upper[j]);
            }
        }
        let mut slack = vec![None; nlp.constraints.len()];
        for (i, c) in nlp.constraints.iter().enumerate() {
            if !c.is_equality() {
                slack[i] = Some(wl.len());
                wl.push(c.lower);
                wu.push(c.upper);
            }
        }
        Layout {
            free,
            pos,
            slack,
            wl,
            wu,
        }
    }

    fn nw(&self) -> usize {
        self.wl.len()
    }

    fn write_x(&self, w: &[f64], x: &mut [f64]) {
        for (k, &j) in self.free.iter().enumerate() {
            x[j] = w[k];
        }
    }
}

/// Pushes `v` strictly inside `[l, u]`.
fn push_inside(v: f64, l: f64, u: f64) -> f64 {
    let k = 1e-2;
    let mut v = v;
    if l.is_finite() && u.is_finite() {
        let pl = (k * l.abs().max(1.0)).min(k * (u - l));
        let pu = (k * u.abs().max(1.0)).min(k * (u - l));
        v = v.clamp(l + pl, u - pu);
    } else if l.is_finite() {
        v = v.max(l + k * l.abs().max(1.0));
    } else if u.is_finite() {
        v = v.min(u - k * u.abs().max(1.0));
    }
    v
}

struct Eval {
    /// Residual of the equality system in `w` space.
    r: Vec<f64>,
    jac: Vec<Vec<(usize, f64)>>,
    grad_f: Vec<f64>,
}

struct Solver<'a> {
    nlp: &'a Nlp,
    lay: Layout,
    x: Vec<f64>,
    w: Vec<f64>,
    lambda: Vec<f64>,
    zl: Vec<f64>,
    zu: Vec<f64>,
    mu: f64,
    delta_w_last: f64,
}

impl Solver<'_> {
    fn x_of(&self, w: &[f64]) -> Vec<f64> {
        let mut x = self.x.clone();
        self.lay.write_x(w, &mut x);
        x
    }

    fn residual(&self, c: &[f64], w: &[f64]) -> Vec<f64> {
        self.nlp
            .constraints
            .iter()
            .enumerate()
            .map(|(i, con)| match self.lay.slack[i] {
                Some(s) => c[i] - w[s],
                None => c[i] - con.lower,
            })
            .collect()
    }

    fn values(&self, x: &[f64]) -> Vec<f64> {
        self.nlp.constraints.iter().map(|c| c.value(x)).collect()
    }

    fn evaluate(&self) -> Eval {
        let x = &self.x;
        let c = self.values(x);
        let r = self.residual(&c, &self.w);
        let mut jac = Vec::with_capacity(c.len());
        for (i, row) in self.nlp.jacobian_rows(x).into_iter().enumerate() {
            let mut wr: Vec<(usize, f64)> = row
                .into_iter()
                .filter_map(|(j, v)| self.lay.pos[j].map(|p| (p, v)))
                .collect();
            if let Some(s) = self.lay.slack[i] {
                wr.push((s, -1.0));
            }
            jac.push(wr);
        }
        let gx = self.nlp.objective_gradient(x);
        let mut grad_f = vec![0.0; self.lay.nw()];
        for (k, &j) in self.lay.free.iter().enumerate() {
            grad_f[k] = gx[j];
        }
        Eval { r, jac, grad_f }
    }

    fn hessian(&self, t: &mut Triplets) {
        let x = &self.x;
        for &(j, q) in &self.nlp.obj_quadratic {
            if let Some(p) = self.lay.pos[j] {
                t.push(p, p, 2.0 * q);
            }
        }
        for (con, &l) in self.nlp.constraints.iter().zip(&self.lambda) {
            if l == 0.0 {
                continue;
            }
            for (k, term) in &con.terms {
                let (vars, jet) = term.jet(x);
                let n = vars.len();
                for a in 0..n {
                    let Some(pa) = self.lay.pos[vars[a]] else { continue };
                    for b in 0..n {
                        let Some(pb) = self.lay.pos[vars[b]] else { continue };
                        let h = jet.h[a * n + b];
                        if h != 0.0 {
                            t.push(pa, pb, l * k * h);
                        }
                    }
                }
            }
        }
    }

    fn barrier(&self, w: &[f64], x: &[f64]) -> f64 {
        let mut phi = self.nlp.objective(x);
        for k in 0..w.len() {
            if self.lay.wl[k].is_finite() {
                phi -= self.mu * (w[k] - self.lay.wl[k]).ln();
            }
            if self.lay.wu[k].is_finite() {
                phi -= self.mu * (self.lay.wu[k] - w[k]).ln();
            }
        }
        phi
    }

    fn sigma_diag(&self) -> Vec<f64> {
        (0..self.lay.nw())
            .map(|k| {
                let mut s = 0.0;
                if self.lay.wl[k].is_finite() {
                    s += self.zl[k] / (self.w[k] - self.lay.wl[k]);
                }
                if self.lay.wu[k].is_finite() {
                    s += self.zu[k] / (self.lay.wu[k] - self.w[k]);
                }
                s
            })
            .collect()
    }

    fn dual_residual(&self, ev: &Eval) -> Vec<f64> {
        let mut g = ev.grad_f.clone();
        for (row, l) in ev.jac.iter().zip(&self.lambda) {
            for &(p, v) in row {
                g[p] += l * v;
            }
        }
        for k in 0..g.len() {
            g[k] += self.zu[k] - self.zl[k];
        }
        g
    }

    fn complementarity(&self, mu: f64) -> f64 {
        let mut m = 0.0f64;
        for k in 0..self.lay.nw() {
            if self.lay.wl[k].is_finite() {
                m = m.max(((self.w[k] - self.lay.wl[k]) * self.zl[k] - mu).abs());
            }
            if self.lay.wu[k].is_finite() {
                m = m.max(((self.lay.wu[k] - self.w[k]) * self.zu[k] - mu).abs());
            }
        }
        m
    }

    fn result(&self, iterations: usize, restorations: usize) -> IpmResult {
        let ev = self.evaluate();
        let dual = self.dual_residual(&ev);
        let mut z_lower = vec![0.0; self.nlp.num_vars()];
        let mut z_upper = vec![0.0; self.nlp.num_vars()];
        for (k, &j) in self.lay.free.iter().enumerate() {
            z_lower[j] = self.zl[k];
            z_upper[j] = self.zu[k];
        }
        IpmResult {
            x: self.x.clone(),
            lambda: self.lambda.clone(),
            z_lower,
            z_upper,
            iterations,
            objective: self.nlp.objective(&self.x),
            stationarity: norm_inf(&dual),
            primal_infeasibility: norm_inf(&ev.r),
            complementarity: self.complementarity(0.0),
            restorations,
        }
    }

    /// Solves the primal-dual Newton system; returns `(dw, dlambda)`.
    fn newton_step(&mut self, ev: &Eval) -> Option<(Vec<f64>, Vec<f64>)> {
        let nw = self.lay.nw();
        let m = ev.r.len();
        let sig = self.sigma_diag();
        let mut hess = Triplets::new(nw, nw);
        self.hessian(&mut hess);
        let hess_csr = hess.to_csr();

        // rhs = -(grad_f + J' lambda - mu/(w-l) + mu/(u-w)), -r
        let mut rhs = vec![0.0; nw + m];
        let mut gb = ev.grad_f.clone();
        for (row, l) in ev.jac.iter().zip(&self.lambda) {
            for &(p, v) in row {
                gb[p] += l * v;
            }
        }
        for k in 0..nw {
            if self.lay.wl[k].is_finite() {
                gb[k] -= self.mu / (self.w[k] - self.lay.wl[k]);
            }
            if self.lay.wu[k].is_finite() {
                gb[k] += self.mu / (self.lay.wu[k] - self.w[k]);
            }
        }
        for k in 0..nw {
            rhs[k] = -gb[k];
        }
        for i in 0..m {
            rhs[nw + i] = -ev.r[i];
        }

        let mut delta_w = if self.delta_w_last > 0.0 {
            (self.delta_w_last / 3.0).max(1e-20)
        } else {
            0.0
        };
        let mut delta_c = 0.0;
        let mut first = true;
        for _ in 0..40 {
            let mut t = Triplets::new(nw + m, nw + m);
            for i in 0..nw {
                for (j, v) in hess_csr.row(i) {
                    t.push(i, j, v);
                }
                t.push(i, i, sig[i] + delta_w);
            }
            for (i, row) in ev.jac.iter().enumerate() {
                for &(p, v) in row {
                    t.push(nw + i, p, v);
                    t.push(p, nw + i, v);
                }
                if delta_c > 0.0 {
                    t.push(nw + i, nw + i, -delta_c);
                }
            }
            let k = t.to_csr();
            let lu = match SparseLu::factor(&k) {
                Ok(lu) => lu,
                Err(_) => {
                    if delta_c < 1e-4 {
                        delta_c = if delta_c == 0.0 { 1e-8 * self.mu.powf(0.25) } else { delta_c * 10.0 };
                    } else {
                        delta_w = if delta_w == 0.0 { 1e-4 } else { delta_w * 8.0 };
                    }
                    continue;
                }
            };
            let sol = lu.solve_refined(&k, &rhs);
            let dw = &sol[..nw];
            // Curvature test in place of an inertia count.
            let hd = hess_csr.matvec(dw);
            let curv: f64 = (0..nw)
                .map(|i| dw[i] * (hd[i] + (sig[i] + delta_w) * dw[i]))
                .sum();
            let dd: f64 = dw.iter().map(|v| v * v).sum();
            if curv >= 1e-12 * dd || !first && delta_w > 1e20 {
                self.delta_w_last = delta_w;
                return Some((dw.to_vec(), sol[nw..].to_vec()));
            }
            first = false;
            delta_w = if delta_w == 0.0 {
                if self.delta_w_last == 0.0 {
                    1e-4
                } else {
                    (self.delta_w_last / 3.0).max(1e-20)
                }
            } else if self.delta_w_last == 0.0 {
                delta_w * 100.0
            } else {
                delta_w * 8.0
            };
        }
        None
    }

    fn max_step(&self, w: &[f64], dw: &[f64], tau: f64) -> f64 {
        let mut a = 1.0f64;
        for k in 0..w.len() {
            if dw[k] < 0.0 && self.lay.wl[k].is_finite() {
                a = a.min(-tau * (w[k] - self.lay.wl[k]) / dw[k]);
            }
            if dw[k] > 0.0 && self.lay.wu[k].is_finite() {
                a = a.min(tau * (self.lay.wu[k] - w[k]) / dw[k]);
            }
        }
        a
    }

    /// Gauss-Newton on `||r||^2` with steps kept inside the bounds.
    /// Returns false when the violation cannot be reduced.
    fn restore(&mut self) -> bool {
        let nw = self.lay.nw();
        let mut ev = self.evaluate();
        let start = norm_inf(&ev.r);
        let mut rho = 1e-6;
        for _ in 0..200 {
            let rn = norm_inf(&ev.r);
            if rn <= (0.01 * start).max(1e-10) {
                break;
            }
            let m = ev.r.len();
            let mut t = Triplets::new(nw + m, nw + m);
            for k in 0..nw {
                let mut d = rho;
                if self.lay.wl[k].is_finite() {
                    d += rho / (self.w[k] - self.lay.wl[k]).powi(2);
                }
                if self.lay.wu[k].is_finite() {
                    d += rho / (self.lay.wu[k] - self.w[k]).powi(2);
                }
                t.push(k, k, d);
            }
            for (i, row) in ev.jac.iter().enumerate() {
                for &(p, v) in row {
                    t.push(nw + i, p, v);
                    t.push(p, nw + i, v);
                }
                t.push(nw + i, nw + i, -1.0);
            }
            let k = t.to_csr();
            let Ok(lu) = SparseLu::factor(&k) else {
                rho *= 10.0;
                continue;
            };
            let mut rhs = vec![0.0; nw + m];
            for i in 0..m {
                rhs[nw + i] = -ev.r[i];
            }
            let sol = lu.solve_refined(&k, &rhs);
            let dw = &sol[..nw];
            let alpha = self.max_step(&self.w, dw, 0.995);
            let wt: Vec<f64> = self.w.iter().zip(dw).map(|(a, d)| a + alpha * d).collect();
            let xt = self.x_of(&wt);
            let rt = self.residual(&self.values(&xt), &wt);
            let n_old: f64 = ev.r.iter().map(|v| v * v).sum();
            let n_new: f64 = rt.iter().map(|v| v * v).sum();
            if n_new < n_old {
                self.w = wt;
                self.x = xt;
                ev = self.evaluate();
                rho = (rho / 4.0).max(1e-12);
            } else {
                rho *= 8.0;
                if rho > 1e12 {
                    break;
                }
            }
        }
        let end = norm_inf(&ev.r);
        if end > (0.9 * start).max(1e-8) {
            return false;
        }
        // Reset duals around the restored point.
        self.lambda.iter_mut().for_each(|l| *l = 0.0);
        for k in 0..nw {
            if self.lay.wl[k].is_finite() {
                self.zl[k] = self.mu / (self.w[k] - self.lay.wl[k]);
            }
            if self.lay.wu[k].is_finite() {
                self.zu[k] = self.mu / (self.lay.wu[k] - self.w[k]);
            }
        }
        true
    }
}

/// Solves `nlp` from `x0`; fixed variables keep their bound value.
pub fn solve_ipm(nlp: &Nlp, x0: &[f64], opts: &IpmOptions) -> Result<IpmResult, IpmError> {
    let lay = Layout::new(nlp);
    let nw = lay.nw();
    let mut x: Vec<f64> = x0.to_vec();
    for j in 0..nlp.num_vars() {
        if nlp.lower[j] == nlp.upper[j] {
            x[j] = nlp.lower[j];
        } else {
            x[j] = push_inside(x[j], nlp.lower[j], nlp.upper[j]);
        }
    }
    let mut w = vec![0.0; nw];
    for (k, &j) in lay.free.iter().enumerate() {
        w[k] = x[j];
    }
    for (i, con) in nlp.constraints.iter().enumerate() {
        if let Some(s) = lay.slack[i] {
            w[s] = push_inside(con.value(&x), con.lower, con.upper);
        }
    }
    let mu = opts.mu0;
    let zl: Vec<f64> = (0..nw)
        .map(|k| if lay.wl[k].is_finite() { mu / (w[k] - lay.wl[k]) } else { 0.0 })
        .collect();
    let zu: Vec<f64> = (0..nw)
        .map(|k| if lay.wu[k].is_finite() { mu / (lay.wu[k] - w[k]) } else { 0.0 })
        .collect();
    let mut s = Solver {
        nlp,
        lay,
        x,
        w,
        lambda: vec![0.0; nlp.constraints.len()],
        zl,
        zu,
        mu,
        delta_w_last: 0.0,
    };
    let mu_min = (opts.tol_compl / 10.0).min(opts.tol_dual / 10.0);
    let kappa_eps = 10.0;
    let mut restorations = 0;
    let mut filter: Vec<(f64, f64)> = Vec::new();
    let mut filter_mu = s.mu;
    let theta_ref: f64 = s.evaluate().r.iter().map(|v| v.abs()).sum();

    for iter in 0..opts.max_iter {
        let ev = s.evaluate();
        let dual = s.dual_residual(&ev);
        let e_dual = norm_inf(&dual);
        let e_primal = norm_inf(&ev.r);
        if e_dual <= opts.tol_dual && e_primal <= opts.tol_primal && s.complementarity(0.0) <= opts.tol_compl {
            return Ok(s.result(iter, restorations));
        }
        loop {
            let e_mu = e_dual.max(e_primal).max(s.complementarity(s.mu));
            if e_mu <= kappa_eps * s.mu && s.mu > mu_min {
                s.mu = (opts.sigma * s.mu).max(mu_min);
            } else {
                break;
            }
        }

        let Some((dw, dl)) = s.newton_step(&ev) else {
            if e_primal > opts.tol_primal.max(1e-7) {
                restorations += 1;
                if s.restore() {
                    continue;
                }
                let (constraint, violation) = nlp.max_violation(&s.x);
                return Err(IpmError::LocallyInfeasible {
                    constraint,
                    violation,
                    last: Box::new(s.result(iter, restorations)),
                });
            }
            return Err(IpmError::NonConvergence(Box::new(s.result(iter, restorations))));
        };
        let tau = opts.tau_min.max(1.0 - s.mu);
        let alpha_max = s.max_step(&s.w, &dw, tau);

        // dz from the linearized complementarity.
        let mut dzl = vec![0.0; nw];
        let mut dzu = vec![0.0; nw];
        for k in 0..nw {
            if s.lay.wl[k].is_finite() {
                let d = s.w[k] - s.lay.wl[k];
                dzl[k] = s.mu / d - s.zl[k] - s.zl[k] / d * dw[k];
            }
            if s.lay.wu[k].is_finite() {
                let d = s.lay.wu[k] - s.w[k];
                dzu[k] = s.mu / d - s.zu[k] + s.zu[k] / d * dw[k];
            }
        }
        let mut alpha_d = 1.0f64;
        for k in 0..nw {
            if dzl[k] < 0.0 {
                alpha_d = alpha_d.min(-tau * s.zl[k] / dzl[k]);
            }
            if dzu[k] < 0.0 {
                alpha_d = alpha_d.min(-tau * s.zu[k] / dzu[k]);
            }
        }

        // Filter line search on (constraint violation, barrier objective).
        let theta0: f64 = ev.r.iter().map(|v| v.abs()).sum();
        if filter_mu != s.mu {
            filter.clear();
            filter_mu = s.mu;
        }
        let theta_max = 1e4 * theta_ref.max(1.0);
        let theta_min = 1e-4 * theta_ref.max(1.0);
        let phi0 = s.barrier(&s.w, &s.x);
        let mut gb = ev.grad_f.clone();
        for k in 0..nw {
            if s.lay.wl[k].is_finite() {
                gb[k] -= s.mu / (s.w[k] - s.lay.wl[k]);
            }
            if s.lay.wu[k].is_finite() {
                gb[k] += s.mu / (s.lay.wu[k] - s.w[k]);
            }
        }
        let slope: f64 = gb.iter().zip(&dw).map(|(g, d)| g * d).sum();
        let alpha_min = {
            let a = if slope < 0.0 {
                (GAMMA_THETA.min(GAMMA_PHI * theta0 / -slope))
                    .min(DELTA * theta0.powf(S_THETA) / (-slope).powf(S_PHI))
            } else {
                GAMMA_THETA
            };
            (0.05 * a).max(1e-14)
        };
        let mut alpha = alpha_max;
        let mut accepted = false;
        let tiny = s
            .w
            .iter()
            .zip(&dw)
            .all(|(w, d)| d.abs() <= 10.0 * f64::EPSILON * (1.0 + w.abs()));
        if tiny && e_primal <= opts.tol_primal {
            // Nothing left to gain in the primal: take the full step so the
            // multipliers can settle.
            let wt: Vec<f64> = s.w.iter().zip(&dw).map(|(a, d)| a + alpha * d).collect();
            s.x = s.x_of(&wt);
            s.w = wt;
            accepted = true;
        }
        while !accepted && alpha >= alpha_min {
            let wt: Vec<f64> = s.w.iter().zip(&dw).map(|(a, d)| a + alpha * d).collect();
            let xt = s.x_of(&wt);
            let rt = s.residual(&s.values(&xt), &wt);
            let theta_t: f64 = rt.iter().map(|v| v.abs()).sum();
            let phi_t = s.barrier(&wt, &xt);
            if phi_t.is_finite() && theta_t <= theta_max {
                let in_filter = filter
                    .iter()
                    .any(|&(tf, pf): &(f64, f64)| theta_t >= tf && phi_t >= pf);
                let switching = slope < 0.0
                    && alpha * (-slope).powf(S_PHI) > DELTA * theta0.powf(S_THETA);
                let armijo = phi_t <= phi0 + ETA_PHI * alpha * slope;
                let (ok, f_type) = if switching && theta0 <= theta_min {
                    (armijo, true)
                } else {
                    let sufficient = theta_t <= (1.0 - GAMMA_THETA) * theta0
                        || phi_t <= phi0 - GAMMA_PHI * theta0;
                    (sufficient, false)
                };
                if ok && !in_filter {
                    if !f_type || !armijo {
                        filter.push(((1.0 - GAMMA_THETA) * theta0, phi0 - GAMMA_PHI * theta0));
                    }
                    s.w = wt;
                    s.x = xt;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            if e_primal > opts.tol_primal.max(1e-7) {
                restorations += 1;
                if !s.restore() {
                    let (constraint, violation) = nlp.max_violation(&s.x);
                    return Err(IpmError::LocallyInfeasible {
                        constraint,
                        violation,
                        last: Box::new(s.result(iter, restorations)),
                    });
                }
                filter.clear();
                continue;
            }
            // Near-feasible stall: take a short step to keep moving.
            alpha = alpha_max * 1e-2;
            let wt: Vec<f64> = s.w.iter().zip(&dw).map(|(a, d)| a + alpha * d).collect();
            s.x = s.x_of(&wt);
            s.w = wt;
        }
        for (l, d) in s.lambda.iter_mut().zip(&dl) {
            *l += alpha * d;
        }
        for k in 0..nw {
            s.zl[k] += alpha_d * dzl[k];
            s.zu[k] += alpha_d * dzu[k];
            // Keep duals within a wide band of their primal-dual estimates.
            let kappa = 1e10;
            if s.lay.wl[k].is_finite() {
                let d = s.w[k] - s.lay.wl[k];
                s.zl[k] = s.zl[k].clamp(s.mu / (kappa * d), kappa * s.mu / d);
            }
            if s.lay.wu[k].is_finite() {
                let d = s.lay.wu[k] - s.w[k];
                s.zu[k] = s.zu[k].clamp(s.mu / (kappa * d), kappa * s.mu / d);
            }
        }
    }
    Err(IpmError::NonConvergence(Box::new(s.result(opts.max_iter, restorations))))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solve(nlp: &Nlp, x0: &[f64]) -> IpmResult {
        solve_ipm(nlp, x0, &IpmOptions::default()).unwrap()
    }

    #[test]
    fn bound_constrained_quadratic() {
        // min (x - 2)^2 = x^2 - 4x + 4 with x <= 1 -> x = 1
        let mut nlp = Nlp::default();
        let x = nlp.add_var("x", f64::NEG_INFINITY, 1.0);
        nlp.obj_linear.push((x, -4.0));
        nlp.obj_quadratic.push((x, 1.0));
        let r = solve(&nlp, &[0.0]);
        assert!((r.x[0] - 1.0).abs() < 1e-7);
        assert!((r.z_upper[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn circle_constraint() {
        // min x + y s.t. x^2 + y^2 <= 2 -> (-1, -1)
        let mut nlp = Nlp::default();
        let x = nlp.add_var("x", f64::NEG_INFINITY, f64::INFINITY);
        let y = nlp.add_var("y", f64::NEG_INFINITY, f64::INFINITY);
        nlp.obj_linear = vec![(x, 1.0), (y, 1.0)];
        nlp.constraints.push(Constraint {
            name: "disc".into(),
            linear: vec![],
            terms: vec![(
                1.0,
                Term::SqMag {
                    re: vec![(x, 1.0)],
                    im: vec![(y, 1.0)],
                },
            )],
            lower: f64::NEG_INFINITY,
            upper: 2.0,
        });
        let r = solve(&nlp, &[0.0, 0.0]);
        assert!((r.x[0] + 1.0).abs() < 1e-6 && (r.x[1] + 1.0).abs() < 1e-6);
        // Stationarity: 1 + 2 lambda x = 0 -> lambda = 0.5
        assert!((r.lambda[0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn equality_with_fixed_variable() {
        // min x^2 + y^2 s.t. x + y + z = 1, z fixed at 3 -> x = y = -1
        let mut nlp = Nlp::default();
        let x = nlp.add_var("x", f64::NEG_INFINITY, f64::INFINITY);
        let y = nlp.add_var("y", f64::NEG_INFINITY, f64::INFINITY);
        let z = nlp.add_var("z", 3.0, 3.0);
        nlp.obj_quadratic = vec![(x, 1.0), (y, 1.0)];
        nlp.constraints.push(Constraint {
            name: "sum".into(),
            linear: vec![(x, 1.0), (y, 1.0), (z, 1.0)],
            terms: vec![],
            lower: 1.0,
            upper: 1.0,
        });
        let r = solve(&nlp, &[0.0, 0.0, 0.0]);
        assert!((r.x[0] + 1.0).abs() < 1e-8 && (r.x[1] + 1.0).abs() < 1e-8);
        assert_eq!(r.x[2], 3.0);
    }

    #[test]
    fn infeasible_is_reported() {
        // x^2 + y^2 <= 1 and x >= 3
        let mut nlp = Nlp::default();
        let x = nlp.add_var("x", 3.0, f64::INFINITY);
        let y = nlp.add_var("y", f64::NEG_INFINITY, f64::INFINITY);
        nlp.obj_linear = vec![(y, 1.0)];
        nlp.constraints.push(Constraint {
            name: "disc".into(),
            linear: vec![],
            terms: vec![(
                1.0,
                Term::SqMag {
                    re: vec![(x, 1.0)],
                    im: vec![(y, 1.0)],
                },
            )],
            lower: f64::NEG_INFINITY,
            upper: 1.0,
        });
        match solve_ipm(&nlp, &[3.5, 0.0], &IpmOptions::default()) {
            Err(IpmError::LocallyInfeasible { constraint, .. }) => assert_eq!(constraint, 0),
            other => panic!("expected infeasibility, got {other:?}"),
        }
    }

    #[test]
    fn term_gradients_match_finite_differences() {
        let x = vec![0.95, -0.1, 0.3, 0.9, -0.05, 1.02, 0.2];
        let terms = vec![
            Term::Load { a: 0, b: 1, p: vec![(2, 1.0), (6, -1.0)], p0: 0.1, q: 0.05, imag: false },
            Term::Load { a: 0, b: 1, p: vec![], p0: 0.1, q: 0.05, imag: true },
            Term::Tap { v_re: 3, v_im: 4, t: 5, power: -2, g: 2.0, b: -6.0, imag: true },
            Term::SqMag { re: vec![(0, 2.0), (3, -2.0)], im: vec![(1, 1.5), (4, -1.5)] },
            Term::XfmrPower { phases: vec![[0, 1, 3, 4]], t: 5, g: 2.0, b: -6.0 },
        ];
        for term in &terms {
            let (vars, jet) = term.jet(&x);
            assert!((jet.v - term.value(&x)).abs() < 1e-14);
            for (k, &v) in vars.iter().enumerate() {
                let h = 1e-6;
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[v] += h;
                xm[v] -= h;
                let fd = (term.value(&xp) - term.value(&xm)) / (2.0 * h);
                assert!((jet.g[k] - fd).abs() < 1e-7, "{term:?} d/dx{v}");
            }
        }
    }
}
