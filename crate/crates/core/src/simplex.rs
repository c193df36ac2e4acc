//! Dense two-phase simplex for the small feasibility problems behind the
//! contracted Lagrangian. Bland's rule keeps it cycle-free.

const EPS: f64 = 1e-11;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum LpOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    objective: Vec<f64>,
    basis: Vec<usize>,
    rhs: usize,
}

impl Tableau {
    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.rows[r][c];
        for v in self.rows[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i != r {
                let f = row[c];
                if f != 0.0 {
                    for (v, &pv) in row.iter_mut().zip(&pivot_row) {
                        *v -= f * pv;
                    }
                }
            }
        }
        let f = self.objective[c];
        if f != 0.0 {
            for (v, &pv) in self.objective.iter_mut().zip(&pivot_row) {
                *v -= f * pv;
            }
        }
        self.basis[r] = c;
    }

    /// Maximize over the columns `< allowed`; returns false when unbounded.
    fn run(&mut self, allowed: usize) -> bool {
        loop {
            let Some(c) = (0..allowed).find(|&j| self.objective[j] < -EPS) else {
                return true;
            };
            let mut best: Option<(usize, f64)> = None;
            for (i, row) in self.rows.iter().enumerate() {
                if row[c] > EPS {
                    let ratio = row[self.rhs] / row[c];
                    let replace = match best {
                        None => true,
                        Some((bi, br)) => ratio < br - EPS || (ratio <= br + EPS && self.basis[i] < self.basis[bi]),
                    };
                    if replace {
                        best = Some((i, ratio));
                    }
                }
            }
            match best {
                Some((r, _)) => self.pivot(r, c),
                None => return false,
            }
        }
    }
}

/// Maximize `c·x` subject to `A x = b`, `x ≥ 0`.
pub(crate) fn maximize(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> LpOutcome {
    let n = c.len();
    let m = a.len();
    let rhs = n + m;
    let scale = 1.0 + b.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    let mut rows = Vec::with_capacity(m);
    for (i, (row, &bi)) in a.iter().zip(b).enumerate() {
        let sign = if bi < 0.0 { -1.0 } else { 1.0 };
        let mut r = vec![0.0; rhs + 1];
        for j in 0..n {
            r[j] = sign * row[j];
        }
        r[n + i] = 1.0;
        r[rhs] = sign * bi;
        rows.push(r);
    }
    let mut objective = vec![0.0; rhs + 1];
    for row in &rows {
        for j in 0..n {
            objective[j] -= row[j];
        }
        objective[rhs] -= row[rhs];
    }
    let mut t = Tableau {
        rows,
        objective,
        basis: (n..n + m).collect(),
        rhs,
    };
    t.run(rhs);
    if t.objective[rhs] < -1e-9 * scale {
        return LpOutcome::Infeasible;
    }
    for r in 0..m {
        if t.basis[r] >= n {
            if let Some(c) = (0..n).find(|&j| t.rows[r][j].abs() > EPS) {
                t.pivot(r, c);
            }
        }
    }

    t.objective = vec![0.0; rhs + 1];
    for j in 0..n {
        t.objective[j] = -c[j];
    }
    for r in 0..m {
        let bc = t.basis[r];
        let f = t.objective[bc];
        if f != 0.0 {
            let row = t.rows[r].clone();
            for (v, pv) in t.objective.iter_mut().zip(row) {
                *v -= f * pv;
            }
        }
    }
    if !t.run(n) {
        return LpOutcome::Unbounded;
    }
    let mut x = vec![0.0; n];
    for (r, &bc) in t.basis.iter().enumerate() {
        if bc < n {
            x[bc] = t.rows[r][rhs].max(0.0);
        }
    }
    let value = c.iter().zip(&x).map(|(a, b)| a * b).sum();
    LpOutcome::Optimal { x, value }
}
