//! Dense two-phase simplex with Bland's pivoting rule.
//!
//! Variables are non-negative; the objective is maximized.

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-9;
const MAX_PIVOTS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

#[derive(Debug, Clone, Default)]
pub struct LinearProgram {
    objective: Vec<f64>,
    constraints: Vec<Constraint>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

impl LinearProgram {
    pub fn maximize(objective: Vec<f64>) -> Self {
        LinearProgram { objective, constraints: Vec::new() }
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn constrain(&mut self, coeffs: Vec<f64>, relation: Relation, rhs: f64) -> &mut Self {
        self.constraints.push(Constraint { coeffs, relation, rhs });
        self
    }

    pub fn solve(&self) -> Result<LpOutcome> {
        let n = self.n_vars();
        if self.constraints.iter().any(|c| c.coeffs.len() != n) {
            return Err(Error::shape("constraint width differs from objective width"));
        }
        Tableau::build(self).solve(&self.objective)
    }
}

struct Tableau {
    /// Row `i` holds the coefficients of constraint `i`; the last column is the right-hand side.
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
    n_orig: usize,
    first_artificial: usize,
    n_cols: usize,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Self {
        let n = lp.n_vars();
        let normalized: Vec<(Vec<f64>, Relation, f64)> = lp
            .constraints
            .iter()
            .map(|c| {
                if c.rhs < 0.0 {
                    let flipped = match c.relation {
                        Relation::Le => Relation::Ge,
                        Relation::Ge => Relation::Le,
                        Relation::Eq => Relation::Eq,
                    };
                    (c.coeffs.iter().map(|v| -v).collect(), flipped, -c.rhs)
                } else {
                    (c.coeffs.clone(), c.relation, c.rhs)
                }
            })
            .collect();
        let n_slack = normalized.iter().filter(|c| c.1 != Relation::Eq).count();
        let n_art = normalized.iter().filter(|c| c.1 != Relation::Le).count();
        let first_artificial = n + n_slack;
        let n_cols = first_artificial + n_art;
        let mut rows = Vec::with_capacity(normalized.len());
        let mut basis = Vec::with_capacity(normalized.len());
        let (mut slack, mut art) = (n, first_artificial);
        for (coeffs, rel, rhs) in normalized {
            let mut row = vec![0.0; n_cols + 1];
            row[..n].copy_from_slice(&coeffs);
            row[n_cols] = rhs;
            match rel {
                Relation::Le => {
                    row[slack] = 1.0;
                    basis.push(slack);
                    slack += 1;
                }
                Relation::Ge => {
                    row[slack] = -1.0;
                    slack += 1;
                    row[art] = 1.0;
                    basis.push(art);
                    art += 1;
                }
                Relation::Eq => {
                    row[art] = 1.0;
                    basis.push(art);
                    art += 1;
                }
            }
            rows.push(row);
        }
        Tableau { rows, basis, n_orig: n, first_artificial, n_cols }
    }

    /// Reduced-cost row `c_B·B⁻¹A − c`, with the current objective value in the last entry.
    fn price(&self, cost: &[f64]) -> Vec<f64> {
        let mut obj: Vec<f64> = (0..=self.n_cols).map(|j| -cost.get(j).copied().unwrap_or(0.0)).collect();
        obj[self.n_cols] = 0.0;
        for (row, &b) in self.rows.iter().zip(&self.basis) {
            let cb = cost.get(b).copied().unwrap_or(0.0);
            if cb != 0.0 {
                obj.iter_mut().zip(row).for_each(|(o, r)| *o += cb * r);
            }
        }
        obj
    }

    fn pivot(&mut self, obj: &mut [f64], r: usize, c: usize) {
        let p = self.rows[r][c];
        self.rows[r].iter_mut().for_each(|v| *v /= p);
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                row.iter_mut().zip(&pivot_row).for_each(|(v, pv)| *v -= f * pv);
            }
        }
        let f = obj[c];
        if f != 0.0 {
            obj.iter_mut().zip(&pivot_row).for_each(|(v, pv)| *v -= f * pv);
        }
        self.basis[r] = c;
    }

    /// Runs simplex iterations over columns `< allowed`; returns false if unbounded.
    fn iterate(&mut self, obj: &mut [f64], allowed: usize) -> Result<bool> {
        for _ in 0..MAX_PIVOTS {
            let Some(c) = (0..allowed).find(|&j| obj[j] < -PIVOT_TOL) else {
                return Ok(true);
            };
            let mut leave: Option<(usize, f64)> = None;
            for (i, row) in self.rows.iter().enumerate() {
                if row[c] > PIVOT_TOL {
                    let ratio = row[self.n_cols] / row[c];
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - 1e-12 || (ratio <= lr + 1e-12 && self.basis[i] < self.basis[li]) {
                                Some((i, ratio))
                            } else {
                                Some((li, lr))
                            }
                        }
                    };
                }
            }
            match leave {
                None => return Ok(false),
                Some((r, _)) => self.pivot(obj, r, c),
            }
        }
        Err(Error::Internal("simplex exceeded its pivot limit".into()))
    }

    fn solve(mut self, objective: &[f64]) -> Result<LpOutcome> {
        if self.first_artificial < self.n_cols {
            let mut phase1 = vec![0.0; self.n_cols];
            phase1[self.first_artificial..].iter_mut().for_each(|c| *c = -1.0);
            let mut obj = self.price(&phase1);
            self.iterate(&mut obj, self.n_cols)?;
            if obj[self.n_cols] < -1e-7 {
                return Ok(LpOutcome::Infeasible);
            }
            self.drive_out_artificials();
        }
        let mut obj = self.price(objective);
        if !self.iterate(&mut obj, self.first_artificial)? {
            return Ok(LpOutcome::Unbounded);
        }
        let mut x = vec![0.0; self.n_orig];
        for (row, &b) in self.rows.iter().zip(&self.basis) {
            if b < self.n_orig {
                x[b] = row[self.n_cols];
            }
        }
        let value = x.iter().zip(objective).map(|(a, b)| a * b).sum();
        Ok(LpOutcome::Optimal { x, value })
    }

    /// Pivots basic artificials out after phase one, dropping rows that turn out redundant.
    fn drive_out_artificials(&mut self) {
        let mut r = 0;
        while r < self.rows.len() {
            if self.basis[r] >= self.first_artificial {
                let col = (0..self.first_artificial).find(|&j| self.rows[r][j].abs() > PIVOT_TOL);
                match col {
                    Some(c) => {
                        let mut dummy = vec![0.0; self.n_cols + 1];
                        self.pivot(&mut dummy, r, c);
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
        for row in &mut self.rows {
            row[self.first_artificial..self.n_cols].iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn optimal(outcome: LpOutcome) -> (Vec<f64>, f64) {
        match outcome {
            LpOutcome::Optimal { x, value } => (x, value),
            other => panic!("expected optimum, got {other:?}"),
        }
    }

    #[test]
    fn textbook_maximization() {
        // max 3x + 5y s.t. x <= 4, 2y <= 12, 3x + 2y <= 18
        let mut lp = LinearProgram::maximize(vec![3.0, 5.0]);
        lp.constrain(vec![1.0, 0.0], Relation::Le, 4.0)
            .constrain(vec![0.0, 2.0], Relation::Le, 12.0)
            .constrain(vec![3.0, 2.0], Relation::Le, 18.0);
        let (x, v) = optimal(lp.solve().unwrap());
        assert!((v - 36.0).abs() < 1e-9);
        assert!((x[0] - 2.0).abs() < 1e-9 && (x[1] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn equality_and_ge_need_phase_one() {
        // max x - y s.t. x + y = 1, x >= 0.25, y >= 0.5
        let mut lp = LinearProgram::maximize(vec![1.0, -1.0]);
        lp.constrain(vec![1.0, 1.0], Relation::Eq, 1.0)
            .constrain(vec![1.0, 0.0], Relation::Ge, 0.25)
            .constrain(vec![0.0, 1.0], Relation::Ge, 0.5);
        let (x, v) = optimal(lp.solve().unwrap());
        assert!((x[0] - 0.5).abs() < 1e-9);
        assert!(v.abs() < 1e-9);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let mut lp = LinearProgram::maximize(vec![1.0]);
        lp.constrain(vec![1.0], Relation::Le, 1.0).constrain(vec![1.0], Relation::Ge, 2.0);
        assert_eq!(lp.solve().unwrap(), LpOutcome::Infeasible);
        let mut lp = LinearProgram::maximize(vec![1.0, 0.0]);
        lp.constrain(vec![0.0, 1.0], Relation::Le, 1.0);
        assert_eq!(lp.solve().unwrap(), LpOutcome::Unbounded);
    }

    #[test]
    fn negative_rhs_is_flipped() {
        // max -x s.t. -x <= -2  (x >= 2)
        let mut lp = LinearProgram::maximize(vec![-1.0]);
        lp.constrain(vec![-1.0], Relation::Le, -2.0);
        let (x, _) = optimal(lp.solve().unwrap());
        assert!((x[0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn redundant_equalities_are_dropped() {
        let mut lp = LinearProgram::maximize(vec![1.0, 2.0]);
        lp.constrain(vec![1.0, 1.0], Relation::Eq, 1.0)
            .constrain(vec![2.0, 2.0], Relation::Eq, 2.0);
        let (x, v) = optimal(lp.solve().unwrap());
        assert!((v - 2.0).abs() < 1e-9);
        assert!((x[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_cycling_example_terminates() {
        // Beale's example, which cycles under the textbook largest-coefficient rule.
        let mut lp = LinearProgram::maximize(vec![0.75, -150.0, 0.02, -6.0]);
        lp.constrain(vec![0.25, -60.0, -0.04, 9.0], Relation::Le, 0.0)
            .constrain(vec![0.5, -90.0, -0.02, 3.0], Relation::Le, 0.0)
            .constrain(vec![0.0, 0.0, 1.0, 0.0], Relation::Le, 1.0);
        let (_, v) = optimal(lp.solve().unwrap());
        assert!((v - 0.05).abs() < 1e-9);
    }
}
