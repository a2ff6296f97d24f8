//! Exact earth mover's distance by the transportation network simplex.
//!
//! The basis is a spanning tree over row and column nodes with `m + n - 1`
//! basic cells. Degeneracy is removed by the classic perturbation: every
//! supply gets `+eps` and the last demand gets `+m*eps`. Flows are carried as
//! `x + k*eps` pairs and compared lexicographically, so every basis is
//! nondegenerate, the leaving cell is unique and the method cannot cycle.
//! The reported plan is the `x` part, a basic feasible solution of the
//! unperturbed problem that shares the optimal basis.

use crate::error::{contract, Result};

/// Dense row-major cost matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return contract(format!("{} cost entries for a {rows}x{cols} matrix", data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return contract("ragged cost matrix");
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    /// Pairwise squared Euclidean distances.
    pub fn squared_distances(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<Self> {
        let data = a
            .iter()
            .flat_map(|p| b.iter().map(move |q| p.iter().zip(q).map(|(x, y)| (x - y) * (x - y)).sum()))
            .collect();
        Self::new(a.len(), b.len(), data)
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn transpose(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                data.push(self.at(i, j));
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }
}

/// A transport plan with its marginals and cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pub rows: usize,
    pub cols: usize,
    /// Row-major plan entries.
    pub plan: Vec<f64>,
    pub row_marginal: Vec<f64>,
    pub col_marginal: Vec<f64>,
    pub objective: f64,
}

impl Coupling {
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.plan[i * self.cols + j]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.plan.chunks(self.cols).map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.cols];
        for row in self.plan.chunks(self.cols) {
            row.iter().zip(s.iter_mut()).for_each(|(v, t)| *t += v);
        }
        s
    }

    pub fn nonzeros(&self) -> usize {
        self.plan.iter().filter(|&&v| v > 0.0).count()
    }

    /// `sum_ij C_ij * plan_ij`.
    pub fn cost_under(&self, cost: &CostMatrix) -> f64 {
        self.plan.iter().zip(&cost.data).map(|(g, c)| g * c).sum()
    }

    /// Largest deviation from the prescribed marginals.
    pub fn marginal_error(&self) -> f64 {
        let r = self.row_sums().iter().zip(&self.row_marginal).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let c = self.col_sums().iter().zip(&self.col_marginal).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        r.max(c)
    }
}

/// `x + k*eps` with lexicographic order.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Flow {
    x: f64,
    k: i64,
}

impl Flow {
    fn less_than(self, other: Flow, tol: f64) -> bool {
        if (self.x - other.x).abs() > tol {
            self.x < other.x
        } else {
            self.k < other.k
        }
    }

    fn add(self, o: Flow) -> Flow {
        Flow { x: self.x + o.x, k: self.k + o.k }
    }

    fn sub(self, o: Flow) -> Flow {
        Flow { x: self.x - o.x, k: self.k - o.k }
    }
}

pub fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// Optimal coupling with uniform marginals.
pub fn emd_uniform(cost: &CostMatrix) -> Result<Coupling> {
    emd(cost, &uniform(cost.rows), &uniform(cost.cols))
}

/// Solves `min <C, P>` over nonnegative `P` with row sums `a` and column sums `b`.
pub fn emd(cost: &CostMatrix, a: &[f64], b: &[f64]) -> Result<Coupling> {
    let (m, n) = (cost.rows, cost.cols);
    if m == 0 || n == 0 {
        return contract("empty cost matrix");
    }
    if a.len() != m || b.len() != n {
        return contract(format!("marginals of length {}/{} for a {m}x{n} cost", a.len(), b.len()));
    }
    if cost.data.iter().any(|c| !c.is_finite()) {
        return contract("cost matrix has non-finite entries");
    }
    if a.iter().chain(b).any(|v| !v.is_finite() || *v < 0.0) {
        return contract("marginals must be finite and nonnegative");
    }
    let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    if (sa - sb).abs() > 1e-9 {
        return contract(format!("marginal masses differ: {sa} vs {sb}"));
    }
    let flow_tol = 1e-13 * sa.max(1.0);
    let cost_scale = cost.data.iter().fold(0.0f64, |acc, c| acc.max(c.abs()));
    let cost_tol = 1e-12 * cost_scale.max(1.0);

    let mut solver = Simplex::northwest(cost, a, b, flow_tol);
    solver.run(cost_tol)?;

    let mut plan = vec![0.0; m * n];
    for (&(i, j), f) in solver.cells.iter().zip(&solver.flows) {
        plan[i * n + j] += f.x.max(0.0);
    }
    let objective = plan.iter().zip(&cost.data).map(|(g, c)| g * c).sum();
    Ok(Coupling {
        rows: m,
        cols: n,
        plan,
        row_marginal: a.to_vec(),
        col_marginal: b.to_vec(),
        objective,
    })
}

struct Simplex<'a> {
    cost: &'a CostMatrix,
    m: usize,
    n: usize,
    cells: Vec<(usize, usize)>,
    flows: Vec<Flow>,
    flow_tol: f64,
    u: Vec<f64>,
    v: Vec<f64>,
    adjacency: Vec<Vec<(usize, usize)>>,
    cursor: usize,
}

impl<'a> Simplex<'a> {
    /// Northwest-corner basis of the perturbed problem.
    fn northwest(cost: &'a CostMatrix, a: &[f64], b: &[f64], flow_tol: f64) -> Self {
        let (m, n) = (cost.rows, cost.cols);
        let mut supply: Vec<Flow> = a.iter().map(|&x| Flow { x, k: 1 }).collect();
        let mut demand: Vec<Flow> = b.iter().map(|&x| Flow { x, k: 0 }).collect();
        demand[n - 1].k = m as i64;
        let mut cells = Vec::with_capacity(m + n - 1);
        let mut flows = Vec::with_capacity(m + n - 1);
        let (mut i, mut j) = (0, 0);
        loop {
            let take = if supply[i].less_than(demand[j], flow_tol) { supply[i] } else { demand[j] };
            cells.push((i, j));
            flows.push(take);
            if i == m - 1 && j == n - 1 {
                break;
            }
            supply[i] = supply[i].sub(take);
            demand[j] = demand[j].sub(take);
            // the perturbation guarantees exactly one side is exhausted, except at the last cell
            if (i < m - 1 && supply[i].less_than(demand[j], flow_tol)) || j == n - 1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        Self {
            cost,
            m,
            n,
            cells,
            flows,
            flow_tol,
            u: vec![0.0; m],
            v: vec![0.0; n],
            adjacency: vec![Vec::new(); m + n],
            cursor: 0,
        }
    }

    fn rebuild_tree(&mut self) {
        for adj in &mut self.adjacency {
            adj.clear();
        }
        for (idx, &(i, j)) in self.cells.iter().enumerate() {
            self.adjacency[i].push((self.m + j, idx));
            self.adjacency[self.m + j].push((i, idx));
        }
    }

    /// Dual potentials with `u[0] = 0` and `u_i + v_j = c_ij` on the tree.
    fn potentials(&mut self) {
        let mut seen = vec![false; self.m + self.n];
        let mut stack = vec![0usize];
        seen[0] = true;
        self.u[0] = 0.0;
        while let Some(node) = stack.pop() {
            for &(next, idx) in &self.adjacency[node] {
                if seen[next] {
                    continue;
                }
                seen[next] = true;
                let (i, j) = self.cells[idx];
                let c = self.cost.at(i, j);
                if next >= self.m {
                    self.v[j] = c - self.u[i];
                } else {
                    self.u[i] = c - self.v[j];
                }
                stack.push(next);
            }
        }
    }

    /// Block search over cells in a fixed cyclic order.
    fn entering(&mut self, cost_tol: f64) -> Option<(usize, usize)> {
        let total = self.m * self.n;
        let block = ((total as f64).sqrt().ceil() as usize).max(1);
        let mut best: Option<(usize, f64)> = None;
        let mut scanned = 0;
        while scanned < total {
            let end = (scanned + block).min(total);
            for _ in scanned..end {
                let cell = self.cursor;
                self.cursor = (self.cursor + 1) % total;
                let (i, j) = (cell / self.n, cell % self.n);
                let rc = self.cost.at(i, j) - self.u[i] - self.v[j];
                if rc < -cost_tol && best.is_none_or(|(_, b)| rc < b) {
                    best = Some((cell, rc));
                }
            }
            scanned = end;
            if best.is_some() {
                break;
            }
        }
        best.map(|(cell, _)| (cell / self.n, cell % self.n))
    }

    /// Basic cells on the tree path from column `j` back to row `i`, in order.
    fn path(&self, i: usize, j: usize) -> Vec<usize> {
        let nodes = self.m + self.n;
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; nodes];
        let mut seen = vec![false; nodes];
        let mut stack = vec![i];
        seen[i] = true;
        let target = self.m + j;
        while let Some(node) = stack.pop() {
            if node == target {
                break;
            }
            for &(next, idx) in &self.adjacency[node] {
                if !seen[next] {
                    seen[next] = true;
                    parent[next] = Some((node, idx));
                    stack.push(next);
                }
            }
        }
        let mut out = Vec::new();
        let mut node = target;
        while node != i {
            let (prev, idx) = parent[node].expect("basis is a spanning tree");
            out.push(idx);
            node = prev;
        }
        out
    }

    fn run(&mut self, cost_tol: f64) -> Result<()> {
        let limit = 50 * (self.m * self.n).max(16) + 1000;
        for _ in 0..limit {
            self.rebuild_tree();
            self.potentials();
            let Some((i, j)) = self.entering(cost_tol) else {
                return Ok(());
            };
            // the cycle alternates -, +, -, ... along the path starting at column j
            let path = self.path(i, j);
            let mut leave: Option<usize> = None;
            for (pos, &idx) in path.iter().enumerate() {
                if pos % 2 == 0 {
                    let better = match leave {
                        None => true,
                        Some(l) => self.flows[idx].less_than(self.flows[l], self.flow_tol),
                    };
                    if better {
                        leave = Some(idx);
                    }
                }
            }
            let leave = leave.expect("a cycle has a decreasing cell");
            let theta = self.flows[leave];
            for (pos, &idx) in path.iter().enumerate() {
                self.flows[idx] = if pos % 2 == 0 {
                    self.flows[idx].sub(theta)
                } else {
                    self.flows[idx].add(theta)
                };
            }
            self.cells[leave] = (i, j);
            self.flows[leave] = theta;
        }
        contract("network simplex exceeded its pivot limit")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_point_sets_cost_zero() {
        let pts = vec![vec![0.0, 1.0], vec![2.0, -1.0], vec![5.0, 5.0]];
        let c = CostMatrix::squared_distances(&pts, &pts).unwrap();
        let g = emd_uniform(&c).unwrap();
        assert!(g.objective.abs() < 1e-15);
        for i in 0..3 {
            assert!((g.at(i, i) - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn single_row_is_column_marginal() {
        let c = CostMatrix::new(1, 4, vec![3.0, 1.0, 2.0, 7.0]).unwrap();
        let b = [0.1, 0.2, 0.3, 0.4];
        let g = emd(&c, &[1.0], &b).unwrap();
        for j in 0..4 {
            assert!((g.at(0, j) - b[j]).abs() < 1e-15);
        }
    }

    #[test]
    fn unequal_mass_is_contract_error() {
        let c = CostMatrix::new(2, 2, vec![0.0; 4]).unwrap();
        assert!(matches!(emd(&c, &[0.5, 0.5], &[0.5, 0.6]), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn known_two_by_two() {
        // crossing is cheaper than matching the diagonal
        let c = CostMatrix::new(2, 2, vec![4.0, 1.0, 1.0, 4.0]).unwrap();
        let g = emd_uniform(&c).unwrap();
        assert!((g.objective - 1.0).abs() < 1e-15);
        assert!((g.at(0, 1) - 0.5).abs() < 1e-15 && g.at(0, 0) == 0.0);
    }

    #[test]
    fn zero_mass_rows_are_handled() {
        let c = CostMatrix::new(3, 2, vec![1.0, 2.0, 0.0, 0.0, 3.0, 1.0]).unwrap();
        let g = emd(&c, &[0.5, 0.0, 0.5], &[0.5, 0.5]).unwrap();
        assert!(g.marginal_error() < 1e-15);
        assert!((g.objective - 1.0).abs() < 1e-15);
    }
}
