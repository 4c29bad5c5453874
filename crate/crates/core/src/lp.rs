//! Dense two-phase simplex over exact rationals with Bland's rule.
//!
//! Sized for conservation-law certificates (tens of rows and columns), where
//! sign decisions must be exact.

use num::{BigRational, One, Signed, Zero};

pub type Q = BigRational;

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<Q>, value: Q },
    Infeasible,
    Unbounded,
}

struct Tableau {
    rows: Vec<Vec<Q>>,
    obj: Vec<Q>,
    basis: Vec<usize>,
    width: usize,
}

impl Tableau {
    fn rhs(&self) -> usize {
        self.width - 1
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.rows[r][c].clone();
        for v in self.rows[r].iter_mut() {
            *v /= &p;
        }
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i != r && !row[c].is_zero() {
                let f = row[c].clone();
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    if !pv.is_zero() {
                        *v -= &f * pv;
                    }
                }
            }
        }
        if !self.obj[c].is_zero() {
            let f = self.obj[c].clone();
            for (v, pv) in self.obj.iter_mut().zip(&pivot_row) {
                if !pv.is_zero() {
                    *v -= &f * pv;
                }
            }
        }
        self.basis[r] = c;
    }

    /// Install `cost` (indexed by column) as the objective to maximize.
    fn set_objective(&mut self, cost: &[Q]) {
        let mut obj = vec![Q::zero(); self.width];
        obj[..cost.len()].clone_from_slice(cost);
        for (row, &b) in self.rows.iter().zip(&self.basis) {
            if b < cost.len() && !cost[b].is_zero() {
                for (o, v) in obj.iter_mut().zip(row) {
                    *o -= &cost[b] * v;
                }
            }
        }
        self.obj = obj;
    }

    /// Run simplex iterations over columns `< allowed`. Returns false when
    /// unbounded.
    fn optimize(&mut self, allowed: usize) -> bool {
        let rhs = self.rhs();
        loop {
            let Some(enter) = (0..allowed).find(|&j| self.obj[j].is_positive()) else {
                return true;
            };
            let mut leave: Option<(usize, Q)> = None;
            for (i, row) in self.rows.iter().enumerate() {
                if row[enter].is_positive() {
                    let ratio = &row[rhs] / &row[enter];
                    let better = match &leave {
                        None => true,
                        Some((li, lr)) => {
                            ratio < *lr || (ratio == *lr && self.basis[i] < self.basis[*li])
                        }
                    };
                    if better {
                        leave = Some((i, ratio));
                    }
                }
            }
            match leave {
                Some((r, _)) => self.pivot(r, enter),
                None => return false,
            }
        }
    }
}

/// Maximize `objective · x` subject to `a x = b`, `x >= 0`.
pub fn maximize(a: &[Vec<Q>], b: &[Q], objective: &[Q]) -> LpOutcome {
    let m = a.len();
    let n = objective.len();
    debug_assert!(a.iter().all(|row| row.len() == n));
    let width = n + m + 1;
    let mut rows = Vec::with_capacity(m);
    for (i, (row, bi)) in a.iter().zip(b).enumerate() {
        let flip = bi.is_negative();
        let mut t = vec![Q::zero(); width];
        for (dst, v) in t.iter_mut().zip(row) {
            *dst = if flip { -v.clone() } else { v.clone() };
        }
        t[n + i] = Q::one();
        t[width - 1] = if flip { -bi.clone() } else { bi.clone() };
        rows.push(t);
    }
    let mut tab = Tableau {
        rows,
        obj: Vec::new(),
        basis: (n..n + m).collect(),
        width,
    };

    // Phase 1: drive the artificial columns to zero.
    let mut phase1 = vec![Q::zero(); n + m];
    phase1[n..].iter_mut().for_each(|c| *c = -Q::one());
    tab.set_objective(&phase1);
    tab.optimize(n + m);
    if !tab.obj[tab.rhs()].is_zero() {
        return LpOutcome::Infeasible;
    }
    let mut r = 0;
    while r < tab.rows.len() {
        if tab.basis[r] >= n {
            match (0..n).find(|&j| !tab.rows[r][j].is_zero()) {
                Some(j) => tab.pivot(r, j),
                None => {
                    // redundant equality
                    tab.rows.remove(r);
                    tab.basis.remove(r);
                    continue;
                }
            }
        }
        r += 1;
    }

    tab.set_objective(objective);
    if !tab.optimize(n) {
        return LpOutcome::Unbounded;
    }
    let rhs = tab.rhs();
    let mut x = vec![Q::zero(); n];
    for (row, &bcol) in tab.rows.iter().zip(&tab.basis) {
        if bcol < n {
            x[bcol] = row[rhs].clone();
        }
    }
    let value = -tab.obj[rhs].clone();
    LpOutcome::Optimal { x, value }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(v: i64) -> Q {
        Q::from_integer(v.into())
    }

    fn qv(v: &[i64]) -> Vec<Q> {
        v.iter().map(|&x| q(x)).collect()
    }

    #[test]
    fn small_textbook_problem() {
        // max 3x + 2y, x + y + s1 = 4, x + 3y + s2 = 6
        let a = vec![qv(&[1, 1, 1, 0]), qv(&[1, 3, 0, 1])];
        let out = maximize(&a, &qv(&[4, 6]), &qv(&[3, 2, 0, 0]));
        match out {
            LpOutcome::Optimal { x, value } => {
                assert_eq!(value, q(12));
                assert_eq!(x[0], q(4));
                assert_eq!(x[1], q(0));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn fractional_optimum_is_exact() {
        // max x + y, 2x + y <= 4, x + 2y <= 4  -> x = y = 4/3
        let a = vec![qv(&[2, 1, 1, 0]), qv(&[1, 2, 0, 1])];
        let LpOutcome::Optimal { x, value } = maximize(&a, &qv(&[4, 4]), &qv(&[1, 1, 0, 0])) else {
            panic!()
        };
        let four_thirds = Q::new(4.into(), 3.into());
        assert_eq!(x[0], four_thirds);
        assert_eq!(x[1], four_thirds);
        assert_eq!(value, Q::new(8.into(), 3.into()));
    }

    #[test]
    fn infeasible_and_unbounded() {
        // x + y = -1 with x, y >= 0
        let a = vec![qv(&[1, 1])];
        assert_eq!(maximize(&a, &qv(&[-1]), &qv(&[1, 0])), LpOutcome::Infeasible);
        // max x, x - y = 0
        let a = vec![qv(&[1, -1])];
        assert_eq!(maximize(&a, &qv(&[0]), &qv(&[1, 0])), LpOutcome::Unbounded);
    }

    #[test]
    fn redundant_rows_are_dropped() {
        // x + y = 2 twice, max x
        let a = vec![qv(&[1, 1]), qv(&[2, 2])];
        let LpOutcome::Optimal { value, .. } = maximize(&a, &qv(&[2, 4]), &qv(&[1, 0])) else {
            panic!()
        };
        assert_eq!(value, q(2));
    }

    #[test]
    fn degenerate_cycling_example_terminates() {
        // Beale's example, which cycles under the textbook largest-coefficient rule.
        let a = vec![
            vec![Q::new(1.into(), 4.into()), q(-8), q(-1), q(9), q(1), q(0), q(0)],
            vec![Q::new(1.into(), 2.into()), q(-12), Q::new((-1).into(), 2.into()), q(3), q(0), q(1), q(0)],
            vec![q(0), q(0), q(1), q(0), q(0), q(0), q(1)],
        ];
        let obj = vec![Q::new(3.into(), 4.into()), q(-20), Q::new(1.into(), 2.into()), q(-6), q(0), q(0), q(0)];
        let LpOutcome::Optimal { value, .. } = maximize(&a, &qv(&[0, 0, 1]), &obj) else {
            panic!()
        };
        assert_eq!(value, Q::new(5.into(), 4.into()));
    }
}
