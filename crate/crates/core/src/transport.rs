//! Exact balanced optimal transport through a dense two-phase simplex.
//!
//! Problem sizes here are tiny (supports of a node and its neighbours), so a
//! tableau with Bland's anti-cycling rule is sufficient and easy to audit.

const TOL: f64 = 1e-12;

struct Tableau {
    rows: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    basis: Vec<usize>,
    active: Vec<bool>,
}

impl Tableau {
    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.rows[r][c];
        for v in self.rows[r].iter_mut() {
            *v /= p;
        }
        self.rhs[r] /= p;
        let pivot_row = self.rows[r].clone();
        let pivot_rhs = self.rhs[r];
        for i in 0..self.rows.len() {
            if i == r {
                continue;
            }
            let f = self.rows[i][c];
            if f != 0.0 {
                for (v, pv) in self.rows[i].iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                self.rhs[i] -= f * pivot_rhs;
                if self.rhs[i].abs() < TOL {
                    self.rhs[i] = 0.0;
                }
            }
        }
        self.basis[r] = c;
    }

    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let mut d = cost.to_vec();
        for (i, row) in self.rows.iter().enumerate() {
            if !self.active[i] {
                continue;
            }
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                for (dj, a) in d.iter_mut().zip(row) {
                    *dj -= cb * a;
                }
            }
        }
        d
    }

    /// Minimises `cost` over columns `< allowed`; returns false if unbounded.
    fn optimise(&mut self, cost: &[f64], allowed: usize) -> bool {
        loop {
            let d = self.reduced_costs(cost);
            let Some(enter) = (0..allowed).find(|&j| d[j] < -TOL) else {
                return true;
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows.len() {
                if !self.active[i] || self.rows[i][enter] <= TOL {
                    continue;
                }
                let ratio = self.rhs[i] / self.rows[i][enter];
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((li, lr)) => {
                        if ratio < lr - TOL || (ratio <= lr + TOL && self.basis[i] < self.basis[li]) {
                            Some((i, ratio))
                        } else {
                            Some((li, lr))
                        }
                    }
                };
            }
            match leave {
                Some((r, _)) => self.pivot(r, enter),
                None => return false,
            }
        }
    }
}

/// Minimises `cost . x` subject to `a x = b`, `x >= 0`.
///
/// Returns the optimal value and solution, or `None` when infeasible or
/// unbounded.
pub fn linear_program(a: &[Vec<f64>], b: &[f64], cost: &[f64]) -> Option<(f64, Vec<f64>)> {
    let m = a.len();
    let n = cost.len();
    let mut rows = Vec::with_capacity(m);
    let mut rhs = Vec::with_capacity(m);
    for (row, &bi) in a.iter().zip(b) {
        assert_eq!(row.len(), n, "constraint width");
        let sign = if bi < 0.0 { -1.0 } else { 1.0 };
        let mut r: Vec<f64> = row.iter().map(|v| v * sign).collect();
        r.extend(std::iter::repeat(0.0).take(m));
        rows.push(r);
        rhs.push(bi * sign);
    }
    for (i, r) in rows.iter_mut().enumerate() {
        r[n + i] = 1.0;
    }
    let mut t = Tableau { rows, rhs, basis: (n..n + m).collect(), active: vec![true; m] };

    let mut phase1 = vec![0.0; n + m];
    phase1[n..].fill(1.0);
    t.optimise(&phase1, n + m);
    let infeasibility: f64 = t.basis.iter().zip(&t.rhs).filter(|(&j, _)| j >= n).map(|(_, v)| v).sum();
    if infeasibility > 1e-9 {
        return None;
    }
    for i in 0..m {
        if t.basis[i] < n {
            continue;
        }
        match (0..n).find(|&j| t.rows[i][j].abs() > TOL) {
            Some(j) => t.pivot(i, j),
            None => t.active[i] = false,
        }
    }

    let mut full_cost = cost.to_vec();
    full_cost.extend(std::iter::repeat(0.0).take(m));
    if !t.optimise(&full_cost, n) {
        return None;
    }
    let mut x = vec![0.0; n];
    for (i, &j) in t.basis.iter().enumerate() {
        if t.active[i] && j < n {
            x[j] = t.rhs[i];
        }
    }
    let value = x.iter().zip(cost).map(|(x, c)| x * c).sum();
    Some((value, x))
}

/// Minimum-cost coupling of `supply` and `demand` (equal totals) under
/// `cost[i][j]`.
pub fn transport_cost(supply: &[f64], demand: &[f64], cost: &[Vec<f64>]) -> f64 {
    let (m, n) = (supply.len(), demand.len());
    let mut a = Vec::with_capacity(m + n);
    for i in 0..m {
        let mut row = vec![0.0; m * n];
        row[i * n..(i + 1) * n].fill(1.0);
        a.push(row);
    }
    for j in 0..n {
        let mut row = vec![0.0; m * n];
        for i in 0..m {
            row[i * n + j] = 1.0;
        }
        a.push(row);
    }
    let b: Vec<f64> = supply.iter().chain(demand).copied().collect();
    let c: Vec<f64> = cost.iter().flatten().copied().collect();
    linear_program(&a, &b, &c).expect("balanced transport is always feasible and bounded").0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_lp() {
        // min -x - y  s.t. x + s1 = 2, y + s2 = 3, x + y + s3 = 4
        let a = vec![
            vec![1.0, 0.0, 1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 1.0, 0.0],
            vec![1.0, 1.0, 0.0, 0.0, 1.0],
        ];
        let (v, x) = linear_program(&a, &[2.0, 3.0, 4.0], &[-1.0, -1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!((v + 4.0).abs() < 1e-12);
        assert!((x[0] + x[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_lp() {
        let a = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        assert!(linear_program(&a, &[1.0, 2.0], &[1.0, 1.0]).is_none());
    }

    #[test]
    fn unbounded_lp() {
        let a = vec![vec![1.0, -1.0]];
        assert!(linear_program(&a, &[1.0], &[-1.0, 0.0]).is_none());
    }

    /// Every 2x2 coupling is `[[x, p0 - x], [q0 - x, 1 - p0 - q0 + x]]`; the
    /// cost is linear in `x`, so the optimum sits at an end of its range.
    fn brute_2x2(p: [f64; 2], q: [f64; 2], c: [[f64; 2]; 2]) -> f64 {
        let lo = (p[0] - q[1]).max(0.0);
        let hi = p[0].min(q[0]);
        [lo, hi]
            .iter()
            .map(|&x| x * c[0][0] + (p[0] - x) * c[0][1] + (q[0] - x) * c[1][0] + (p[1] - q[0] + x) * c[1][1])
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn matches_two_by_two_enumeration() {
        let cases = [
            ([0.5, 0.5], [0.3, 0.7], [[0.0, 2.0], [1.0, 0.5]]),
            ([0.9, 0.1], [0.2, 0.8], [[1.0, 3.0], [0.2, 0.1]]),
            ([0.25, 0.75], [0.25, 0.75], [[0.0, 1.0], [1.0, 0.0]]),
        ];
        for (p, q, c) in cases {
            let lp = transport_cost(&p, &q, &[c[0].to_vec(), c[1].to_vec()]);
            assert!((lp - brute_2x2(p, q, c)).abs() < 1e-12, "{p:?} {q:?}");
        }
    }

    #[test]
    fn degenerate_supports() {
        let v = transport_cost(&[1.0], &[0.5, 0.5], &[vec![2.0, 4.0]]);
        assert!((v - 3.0).abs() < 1e-12);
        let v = transport_cost(&[0.5, 0.5, 0.0], &[0.5, 0.5], &[vec![0.0, 1.0], vec![1.0, 0.0], vec![5.0, 5.0]]);
        assert!(v.abs() < 1e-12);
    }
}
