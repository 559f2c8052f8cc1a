//! Small dense two-phase simplex.
//!
//! Problems here have at most a few hundred variables, so a full tableau
//! with Bland's pivoting rule is fast enough and never cycles.

const PIVOT_EPS: f64 = 1e-11;
const COST_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

/// `maximize objective · x` subject to the constraints and `x >= 0`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearProgram {
    num_vars: usize,
    objective: Vec<f64>,
    constraints: Vec<Constraint>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

impl LpOutcome {
    pub fn is_feasible(&self) -> bool {
        !matches!(self, LpOutcome::Infeasible)
    }
}

impl LinearProgram {
    pub fn new(num_vars: usize) -> Self {
        Self {
            num_vars,
            objective: vec![0.0; num_vars],
            constraints: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    /// Appends a fresh variable and returns its index.
    pub fn add_var(&mut self) -> usize {
        self.num_vars += 1;
        self.objective.push(0.0);
        self.num_vars - 1
    }

    pub fn set_objective(&mut self, var: usize, coeff: f64) {
        self.objective[var] = coeff;
    }

    pub fn add_constraint(&mut self, coeffs: Vec<(usize, f64)>, relation: Relation, rhs: f64) {
        debug_assert!(coeffs.iter().all(|&(v, _)| v < self.num_vars));
        self.constraints.push(Constraint {
            coeffs,
            relation,
            rhs,
        });
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn solve(&self) -> LpOutcome {
        Tableau::build(self).run(&self.objective)
    }
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
    num_structural: usize,
    /// Columns at or beyond this index are artificial.
    first_artificial: usize,
    width: usize,
    /// Scale of the right-hand side, used for the phase-one tolerance.
    rhs_scale: f64,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Self {
        let n = lp.num_vars;
        let m = lp.constraints.len();
        let slacks = lp
            .constraints
            .iter()
            .filter(|c| c.relation != Relation::Eq)
            .count();
        let first_artificial = n + slacks;
        let artificials = lp
            .constraints
            .iter()
            .filter(|c| {
                let flip = c.rhs < 0.0;
                match c.relation {
                    Relation::Le => flip,
                    Relation::Ge => !flip,
                    Relation::Eq => true,
                }
            })
            .count();
        let width = first_artificial + artificials + 1;
        let mut rows = Vec::with_capacity(m);
        let mut basis = Vec::with_capacity(m);
        let mut slack_col = n;
        let mut art_col = first_artificial;
        let mut rhs_scale = 1.0f64;
        for c in &lp.constraints {
            let mut row = vec![0.0; width];
            let sign = if c.rhs < 0.0 { -1.0 } else { 1.0 };
            for &(v, a) in &c.coeffs {
                row[v] += sign * a;
            }
            row[width - 1] = sign * c.rhs;
            rhs_scale = rhs_scale.max(c.rhs.abs());
            let relation = match (c.relation, sign < 0.0) {
                (Relation::Le, true) => Relation::Ge,
                (Relation::Ge, true) => Relation::Le,
                (r, _) => r,
            };
            match relation {
                Relation::Le => {
                    row[slack_col] = 1.0;
                    basis.push(slack_col);
                    slack_col += 1;
                }
                Relation::Ge => {
                    row[slack_col] = -1.0;
                    slack_col += 1;
                    row[art_col] = 1.0;
                    basis.push(art_col);
                    art_col += 1;
                }
                Relation::Eq => {
                    row[art_col] = 1.0;
                    basis.push(art_col);
                    art_col += 1;
                }
            }
            rows.push(row);
        }
        Self {
            rows,
            basis,
            num_structural: n,
            first_artificial,
            width,
            rhs_scale,
        }
    }

    fn rhs(&self, row: usize) -> f64 {
        self.rows[row][self.width - 1]
    }

    fn pivot(&mut self, row: usize, col: usize, obj: &mut [f64]) {
        let p = self.rows[row][col];
        for v in self.rows[row].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.rows[row].clone();
        for (r, other) in self.rows.iter_mut().enumerate() {
            if r == row {
                continue;
            }
            let f = other[col];
            if f != 0.0 {
                for (o, &pv) in other.iter_mut().zip(&pivot_row) {
                    *o -= f * pv;
                }
                other[col] = 0.0;
            }
        }
        let f = obj[col];
        if f != 0.0 {
            for (o, &pv) in obj.iter_mut().zip(&pivot_row) {
                *o -= f * pv;
            }
            obj[col] = 0.0;
        }
        self.basis[row] = col;
    }

    /// Reduced-cost row for maximizing `costs` (indexed by column) with the
    /// current basis: entry j holds `z_j - c_j`.
    fn objective_row(&self, costs: &[f64]) -> Vec<f64> {
        let mut obj: Vec<f64> = (0..self.width)
            .map(|j| if j + 1 < self.width { -costs[j] } else { 0.0 })
            .collect();
        for (r, &b) in self.basis.iter().enumerate() {
            let cb = costs[b];
            if cb != 0.0 {
                for (o, &v) in obj.iter_mut().zip(&self.rows[r]) {
                    *o += cb * v;
                }
            }
        }
        obj
    }

    /// Bland's rule simplex over columns `< limit`. Returns false when
    /// unbounded.
    fn optimize(&mut self, obj: &mut [f64], limit: usize) -> bool {
        loop {
            let Some(col) = (0..limit).find(|&j| obj[j] < -COST_EPS) else {
                return true;
            };
            let mut best: Option<(usize, f64)> = None;
            for r in 0..self.rows.len() {
                let a = self.rows[r][col];
                if a > PIVOT_EPS {
                    let ratio = self.rhs(r) / a;
                    let better = match best {
                        None => true,
                        Some((br, bv)) => {
                            ratio < bv - 1e-14
                                || (ratio <= bv + 1e-14 && self.basis[r] < self.basis[br])
                        }
                    };
                    if better {
                        best = Some((r, ratio));
                    }
                }
            }
            match best {
                Some((row, _)) => self.pivot(row, col, obj),
                None => return false,
            }
        }
    }

    fn run(mut self, objective: &[f64]) -> LpOutcome {
        let art_count = self.width - 1 - self.first_artificial;
        if art_count > 0 {
            let mut costs = vec![0.0; self.width];
            for c in costs
                .iter_mut()
                .take(self.width - 1)
                .skip(self.first_artificial)
            {
                *c = -1.0;
            }
            let mut obj = self.objective_row(&costs);
            self.optimize(&mut obj, self.width - 1);
            let infeasibility: f64 = self
                .basis
                .iter()
                .enumerate()
                .filter(|(_, &b)| b >= self.first_artificial)
                .map(|(r, _)| self.rhs(r))
                .sum();
            if infeasibility > 1e-9 * self.rhs_scale {
                return LpOutcome::Infeasible;
            }
            // Drive remaining zero-level artificials out of the basis.
            let mut r = 0;
            while r < self.rows.len() {
                if self.basis[r] >= self.first_artificial {
                    let col = (0..self.first_artificial)
                        .filter(|&j| self.rows[r][j].abs() > 1e-9)
                        .max_by(|&a, &b| self.rows[r][a].abs().total_cmp(&self.rows[r][b].abs()));
                    match col {
                        Some(col) => {
                            let mut dummy = vec![0.0; self.width];
                            self.pivot(r, col, &mut dummy);
                        }
                        None => {
                            self.rows.remove(r);
                            self.basis.remove(r);
                            continue;
                        }
                    }
                }
                r += 1;
            }
        }

        let mut costs = vec![0.0; self.width];
        costs[..self.num_structural].copy_from_slice(objective);
        let mut obj = self.objective_row(&costs);
        if !self.optimize(&mut obj, self.first_artificial) {
            return LpOutcome::Unbounded;
        }
        let mut x = vec![0.0; self.num_structural];
        for (r, &b) in self.basis.iter().enumerate() {
            if b < self.num_structural {
                x[b] = self.rhs(r).max(0.0);
            }
        }
        let value = x.iter().zip(objective).map(|(a, b)| a * b).sum();
        LpOutcome::Optimal { x, value }
    }
}
