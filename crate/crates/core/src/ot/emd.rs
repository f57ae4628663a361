//! Exact transportation LP by the transportation simplex (MODI) method,
//! north-west-corner start, Bland's rule for both entering and leaving cells.

use std::collections::VecDeque;

use super::{check_dims, GroundMetric, Histogram};
use crate::error::{Error, Result};

const MASS_TOL: f64 = 1e-9;

/// Optimal flow of a transportation problem.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    pub cost: f64,
    pub rows: usize,
    pub cols: usize,
    /// Row-major flows.
    pub flow: Vec<f64>,
    pub pivots: usize,
}

/// Solves `min Σ c_ij x_ij` subject to row sums `supply`, column sums
/// `demand`, `x ≥ 0`. `cost` is row-major `supply.len() × demand.len()`.
pub fn transport_lp(supply: &[f64], demand: &[f64], cost: &[f64]) -> Result<TransportPlan> {
    let (m, n) = (supply.len(), demand.len());
    if m == 0 || n == 0 {
        return Err(Error::EmptyInput);
    }
    if cost.len() != m * n {
        return Err(Error::DimensionMismatch { expected: m * n, got: cost.len() });
    }
    if supply.iter().chain(demand).chain(cost).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    if supply.iter().chain(demand).any(|&v| v < 0.0) {
        return Err(Error::BadParameters("negative supply or demand".into()));
    }
    let (ts, td): (f64, f64) = (supply.iter().sum(), demand.iter().sum());
    if (ts - td).abs() > MASS_TOL {
        return Err(Error::InfeasibleMarginals(ts, td));
    }

    let mut flow = vec![0.0; m * n];
    let mut basic = vec![false; m * n];
    north_west_corner(supply, demand, &mut flow, &mut basic);

    let scale = cost.iter().fold(0.0_f64, |a, &c| a.max(c.abs())).max(1.0);
    let eps = 1e-12 * scale;
    let max_pivots = 50 * m * n + 100;
    let mut pivots = 0;
    let mut u = vec![0.0; m];
    let mut v = vec![0.0; n];
    loop {
        potentials(m, n, cost, &basic, &mut u, &mut v);
        // Bland: lowest-index improving cell enters.
        let entering = (0..m * n).find(|&k| !basic[k] && cost[k] - u[k / n] - v[k % n] < -eps);
        let Some(enter) = entering else { break };
        pivots += 1;
        if pivots > max_pivots {
            return Err(Error::BadParameters("transportation simplex failed to terminate".into()));
        }
        let path = tree_path(m, n, &basic, enter / n, enter % n);
        // Cells on the path alternate, starting next to column `enter % n`
        // with a minus sign; the cell adjacent to the entering row is minus
        // as well because the path has odd length.
        let k = path.len();
        let minus: Vec<usize> = (0..k).filter(|t| (k - 1 - t).is_multiple_of(2)).map(|t| path[t]).collect();
        let theta = minus.iter().map(|&c| flow[c]).fold(f64::INFINITY, f64::min);
        let leave = *minus
            .iter()
            .filter(|&&c| flow[c] <= theta)
            .min()
            .expect("cycle has a minus cell");
        for (t, &c) in path.iter().enumerate() {
            if (k - 1 - t).is_multiple_of(2) {
                flow[c] = (flow[c] - theta).max(0.0);
            } else {
                flow[c] += theta;
            }
        }
        flow[enter] = theta;
        flow[leave] = 0.0;
        basic[enter] = true;
        basic[leave] = false;
    }
    let total = flow.iter().zip(cost).map(|(x, c)| x * c).sum();
    Ok(TransportPlan { cost: total, rows: m, cols: n, flow, pivots })
}

fn north_west_corner(supply: &[f64], demand: &[f64], flow: &mut [f64], basic: &mut [bool]) {
    let (m, n) = (supply.len(), demand.len());
    let mut s = supply.to_vec();
    let mut d = demand.to_vec();
    let (mut i, mut j) = (0, 0);
    loop {
        let x = s[i].min(d[j]);
        flow[i * n + j] = x;
        basic[i * n + j] = true;
        let row_done = s[i] < d[j];
        s[i] -= x;
        d[j] -= x;
        if i == m - 1 && j == n - 1 {
            break;
        }
        if i == m - 1 {
            j += 1;
        } else if j == n - 1 || row_done {
            i += 1;
        } else {
            j += 1;
        }
    }
    // Absorb rounding residue into the last cell.
    let k = m * n - 1;
    flow[k] = (flow[k] + s[m - 1].max(0.0)).max(0.0);
}

/// Node ids: rows `0..m`, columns `m..m+n`.
fn adjacency(m: usize, n: usize, basic: &[bool]) -> Vec<Vec<(usize, usize)>> {
    let mut adj = vec![Vec::new(); m + n];
    for (k, _) in basic.iter().enumerate().filter(|(_, &b)| b) {
        let (i, j) = (k / n, k % n);
        adj[i].push((m + j, k));
        adj[m + j].push((i, k));
    }
    adj
}

fn potentials(m: usize, n: usize, cost: &[f64], basic: &[bool], u: &mut [f64], v: &mut [f64]) {
    let adj = adjacency(m, n, basic);
    let mut seen = vec![false; m + n];
    let mut pot = vec![0.0; m + n];
    for root in 0..m + n {
        if seen[root] {
            continue;
        }
        seen[root] = true;
        let mut queue = VecDeque::from([root]);
        while let Some(a) = queue.pop_front() {
            for &(b, cell) in &adj[a] {
                if !seen[b] {
                    seen[b] = true;
                    // u_i + v_j = c_ij on basic cells.
                    pot[b] = cost[cell] - pot[a];
                    queue.push_back(b);
                }
            }
        }
    }
    u.copy_from_slice(&pot[..m]);
    v.copy_from_slice(&pot[m..]);
}

/// Basic cells on the tree path from row `row` to column `col`, ordered from
/// the row end to the column end.
fn tree_path(m: usize, n: usize, basic: &[bool], row: usize, col: usize) -> Vec<usize> {
    let adj = adjacency(m, n, basic);
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; m + n];
    let mut seen = vec![false; m + n];
    seen[row] = true;
    let mut queue = VecDeque::from([row]);
    let target = m + col;
    while let Some(a) = queue.pop_front() {
        if a == target {
            break;
        }
        for &(b, cell) in &adj[a] {
            if !seen[b] {
                seen[b] = true;
                parent[b] = Some((a, cell));
                queue.push_back(b);
            }
        }
    }
    let mut cells = Vec::new();
    let mut node = target;
    while let Some((p, cell)) = parent[node] {
        cells.push(cell);
        node = p;
    }
    cells.reverse();
    cells
}

/// Exact earth mover's distance under `metric`.
pub fn emd_exact(h: &Histogram, hp: &Histogram, metric: &GroundMetric) -> Result<f64> {
    check_dims(h.dim(), hp.dim(), metric)?;
    Ok(transport_lp(h.as_slice(), hp.as_slice(), metric.as_slice())?.cost)
}
