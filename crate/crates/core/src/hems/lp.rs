//! Bounded-variable primal simplex on a dense tableau.
//!
//! Every structural variable needs a finite lower bound; upper bounds may be
//! infinite. Rows are converted to equalities with slack columns, and a
//! phase-one over artificial columns finds the first feasible basis.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub cost: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub rows: Vec<(Vec<(usize, f64)>, RowKind, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, objective: f64 },
    Infeasible,
    Unbounded,
    IterationLimit,
}

const FEAS_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-10;
const PIVOT_TOL: f64 = 1e-11;
const DEGENERATE_SWITCH: usize = 50;

impl LinearProgram {
    pub fn new(n: usize) -> Self {
        LinearProgram {
            cost: vec![0.0; n],
            lower: vec![0.0; n],
            upper: vec![f64::INFINITY; n],
            rows: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.cost.len()
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, kind: RowKind, rhs: f64) {
        self.rows.push((coeffs, kind, rhs));
    }

    pub fn solve(&self) -> LpOutcome {
        Tableau::build(self).run(self)
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Status {
    Basic,
    AtLower,
    AtUpper,
}

struct Tableau {
    m: usize,
    n_total: usize,
    n_struct: usize,
    /// Row-major `m x n_total` entries of `B^-1 A`.
    t: Vec<f64>,
    x_basic: Vec<f64>,
    basis: Vec<usize>,
    status: Vec<Status>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    art_start: usize,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Tableau {
        let m = lp.rows.len();
        let n_struct = lp.num_vars();
        let n_slack = lp.rows.iter().filter(|r| r.1 != RowKind::Eq).count();
        let art_start = n_struct + n_slack;
        let n_total = art_start + m;
        let mut t = vec![0.0; m * n_total];
        let mut lower = lp.lower.clone();
        let mut upper = lp.upper.clone();
        lower.resize(n_total, 0.0);
        upper.resize(n_total, f64::INFINITY);
        let mut status = vec![Status::AtLower; n_total];

        let mut slack = n_struct;
        let mut rhs = vec![0.0; m];
        for (i, (coeffs, kind, b)) in lp.rows.iter().enumerate() {
            for &(j, a) in coeffs {
                t[i * n_total + j] += a;
            }
            match kind {
                RowKind::Le => {
                    t[i * n_total + slack] = 1.0;
                    slack += 1;
                }
                RowKind::Ge => {
                    t[i * n_total + slack] = -1.0;
                    slack += 1;
                }
                RowKind::Eq => {}
            }
            rhs[i] = *b;
        }
        for j in 0..n_struct {
            assert!(lower[j].is_finite(), "variable {j} needs a finite lower bound");
        }

        // Artificial a_i with sign so that a_i = |b - A x_N| >= 0 at the start.
        let mut x_basic = vec![0.0; m];
        let mut basis = vec![0; m];
        for i in 0..m {
            let row = &mut t[i * n_total..(i + 1) * n_total];
            let ax: f64 = (0..art_start).map(|j| row[j] * lower[j]).sum();
            let r = rhs[i] - ax;
            let sign = if r >= 0.0 { 1.0 } else { -1.0 };
            if sign < 0.0 {
                for v in row.iter_mut().take(art_start) {
                    *v = -*v;
                }
            }
            row[art_start + i] = 1.0;
            basis[i] = art_start + i;
            status[art_start + i] = Status::Basic;
            x_basic[i] = r.abs();
        }
        Tableau {
            m,
            n_total,
            n_struct,
            t,
            x_basic,
            basis,
            status,
            lower,
            upper,
            art_start,
        }
    }

    fn value(&self, j: usize) -> f64 {
        match self.status[j] {
            Status::AtLower => self.lower[j],
            Status::AtUpper => self.upper[j],
            Status::Basic => unreachable!(),
        }
    }

    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let mut d = cost.to_vec();
        for i in 0..self.m {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.t[i * self.n_total..(i + 1) * self.n_total];
                for (dj, tij) in d.iter_mut().zip(row) {
                    *dj -= cb * tij;
                }
            }
        }
        d
    }

    /// Runs simplex iterations for `cost`; returns false if unbounded.
    fn optimize(&mut self, cost: &[f64], max_iter: usize) -> Option<bool> {
        let mut d = self.reduced_costs(cost);
        let mut degenerate_run = 0;
        for _ in 0..max_iter {
            let bland = degenerate_run >= DEGENERATE_SWITCH;
            // Entering column: improving direction per its bound status.
            let mut entering: Option<(usize, f64)> = None;
            for j in 0..self.n_total {
                let dir = match self.status[j] {
                    Status::Basic => continue,
                    Status::AtLower if d[j] < -COST_TOL => 1.0,
                    Status::AtUpper if d[j] > COST_TOL => -1.0,
                    _ => continue,
                };
                if self.upper[j] - self.lower[j] <= 0.0 {
                    continue;
                }
                if bland {
                    entering = Some((j, dir));
                    break;
                }
                if entering.is_none_or(|(k, _)| d[j].abs() > d[k].abs()) {
                    entering = Some((j, dir));
                }
            }
            let Some((q, dir)) = entering else {
                return Some(true);
            };

            // Ratio test. Basic i moves by -dir * theta * t[i][q].
            let mut theta = self.upper[q] - self.lower[q];
            let mut leave: Option<(usize, bool)> = None;
            for i in 0..self.m {
                let a = self.t[i * self.n_total + q] * dir;
                let b = self.basis[i];
                let (limit, to_upper) = if a > PIVOT_TOL {
                    ((self.x_basic[i] - self.lower[b]) / a, false)
                } else if a < -PIVOT_TOL && self.upper[b].is_finite() {
                    ((self.upper[b] - self.x_basic[i]) / -a, true)
                } else {
                    continue;
                };
                let limit = limit.max(0.0);
                let better = match leave {
                    None => limit < theta,
                    Some((k, _)) => {
                        limit < theta - 1e-12
                            || (limit <= theta + 1e-12
                                && if bland {
                                    b < self.basis[k]
                                } else {
                                    a.abs() > (self.t[k * self.n_total + q]).abs()
                                })
                    }
                };
                if better {
                    theta = limit;
                    leave = Some((i, to_upper));
                }
            }
            if !theta.is_finite() {
                return Some(false);
            }
            if theta <= 1e-12 {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }

            for i in 0..self.m {
                self.x_basic[i] -= dir * theta * self.t[i * self.n_total + q];
            }
            match leave {
                None => {
                    // Bound flip.
                    self.status[q] = if dir > 0.0 {
                        Status::AtUpper
                    } else {
                        Status::AtLower
                    };
                }
                Some((r, to_upper)) => {
                    let leaving = self.basis[r];
                    let entering_value = self.value(q) + dir * theta;
                    self.pivot(r, q, &mut d);
                    self.status[leaving] = if to_upper {
                        Status::AtUpper
                    } else {
                        Status::AtLower
                    };
                    self.status[q] = Status::Basic;
                    self.basis[r] = q;
                    self.x_basic[r] = entering_value;
                }
            }
        }
        None
    }

    fn pivot(&mut self, r: usize, q: usize, d: &mut [f64]) {
        let n = self.n_total;
        let piv = self.t[r * n + q];
        for v in &mut self.t[r * n..(r + 1) * n] {
            *v /= piv;
        }
        let (before, rest) = self.t.split_at_mut(r * n);
        let (prow, after) = rest.split_at_mut(n);
        for row in before.chunks_mut(n).chain(after.chunks_mut(n)) {
            let f = row[q];
            if f != 0.0 {
                for (v, p) in row.iter_mut().zip(prow.iter()) {
                    *v -= f * p;
                }
                row[q] = 0.0;
            }
        }
        let f = d[q];
        if f != 0.0 {
            for (dj, p) in d.iter_mut().zip(prow.iter()) {
                *dj -= f * p;
            }
            d[q] = 0.0;
        }
    }

    fn run(mut self, lp: &LinearProgram) -> LpOutcome {
        let max_iter = 50 * (self.m + self.n_total) + 1000;
        let mut phase1 = vec![0.0; self.n_total];
        for c in phase1.iter_mut().skip(self.art_start) {
            *c = 1.0;
        }
        match self.optimize(&phase1, max_iter) {
            None => return LpOutcome::IterationLimit,
            Some(false) => unreachable!("phase one is bounded below"),
            Some(true) => {}
        }
        let infeas: f64 = (0..self.m)
            .filter(|&i| self.basis[i] >= self.art_start)
            .map(|i| self.x_basic[i])
            .sum();
        let scale = lp
            .rows
            .iter()
            .map(|r| r.2.abs())
            .fold(1.0f64, f64::max);
        if infeas > FEAS_TOL * scale * (self.m as f64).max(1.0) {
            return LpOutcome::Infeasible;
        }
        // Pin artificials at zero for phase two.
        for j in self.art_start..self.n_total {
            self.upper[j] = 0.0;
            if self.status[j] == Status::AtUpper {
                self.status[j] = Status::AtLower;
            }
        }
        let mut cost = lp.cost.clone();
        cost.resize(self.n_total, 0.0);
        match self.optimize(&cost, max_iter) {
            None => return LpOutcome::IterationLimit,
            Some(false) => return LpOutcome::Unbounded,
            Some(true) => {}
        }
        let mut x = vec![0.0; self.n_struct];
        for j in 0..self.n_struct {
            if self.status[j] != Status::Basic {
                x[j] = self.value(j);
            }
        }
        for i in 0..self.m {
            let b = self.basis[i];
            if b < self.n_struct {
                x[b] = self.x_basic[i].clamp(self.lower[b], self.upper[b]);
            }
        }
        let objective = x.iter().zip(&lp.cost).map(|(a, c)| a * c).sum();
        LpOutcome::Optimal { x, objective }
    }
}
