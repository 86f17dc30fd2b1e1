//! Grid-to-grid sums `out(v, I) = sum_{v*, I*} c(v*, I*) phi(E/m)`.
//!
//! On the uniform grid `E/m = h_v^2 s2 / 4 + h_I (l + l* + 1) / m` depends only on
//! the squared index distance `s2` of the two velocities and on `l + l*`, so `phi`
//! is tabulated once and the sum reduces to table lookups. Each output node is
//! accumulated sequentially in a fixed order, which keeps results independent of
//! the thread count.

use rayon::prelude::*;

use crate::phase_space::PhaseGrid;

struct PairTable {
    width: usize,
    data: Vec<f64>,
}

impl PairTable {
    fn new(grid: &PhaseGrid, m: f64, phi: &(impl Fn(f64) -> f64 + Sync)) -> Self {
        let nv = grid.nv();
        let width = 2 * grid.ni() - 1;
        let s2_max = 3 * (nv - 1) * (nv - 1);
        let hv2 = grid.hv() * grid.hv();
        let hi = grid.hi();
        let mut data = Vec::with_capacity((s2_max + 1) * width);
        for s2 in 0..=s2_max {
            for lk in 0..width {
                data.push(phi(0.25 * hv2 * s2 as f64 + hi * (lk + 1) as f64 / m));
            }
        }
        Self { width, data }
    }

    #[inline]
    fn row(&self, s2: usize) -> &[f64] {
        &self.data[s2 * self.width..(s2 + 1) * self.width]
    }
}

fn velocity_triplet(iv: usize, nv: usize) -> [usize; 3] {
    [iv / (nv * nv), (iv / nv) % nv, iv % nv]
}

/// Sum over input nodes of `coeff * phi(E/m)`, for every output node.
pub(crate) fn pair_sum(
    grid: &PhaseGrid,
    m: f64,
    coeff: &[f64],
    phi: impl Fn(f64) -> f64 + Sync,
) -> Vec<f64> {
    let nv = grid.nv();
    let ni = grid.ni();
    let table = PairTable::new(grid, m, &phi);
    let active: Vec<bool> = coeff
        .chunks(ni)
        .map(|c| c.iter().any(|x| *x != 0.0))
        .collect();
    let rows: Vec<Vec<f64>> = (0..grid.velocity_len())
        .into_par_iter()
        .map(|iv| {
            let [i1, i2, i3] = velocity_triplet(iv, nv);
            let mut acc = vec![0.0; ni];
            for j1 in 0..nv {
                let d1 = i1.abs_diff(j1);
                for j2 in 0..nv {
                    let d2 = i2.abs_diff(j2);
                    for j3 in 0..nv {
                        let jv = (j1 * nv + j2) * nv + j3;
                        if !active[jv] {
                            continue;
                        }
                        let d3 = i3.abs_diff(j3);
                        let row = table.row(d1 * d1 + d2 * d2 + d3 * d3);
                        let c = &coeff[jv * ni..(jv + 1) * ni];
                        for (k, &ck) in c.iter().enumerate() {
                            if ck == 0.0 {
                                continue;
                            }
                            for (a, t) in acc.iter_mut().zip(&row[k..k + ni]) {
                                *a += ck * t;
                            }
                        }
                    }
                }
            }
            acc
        })
        .collect();
    rows.concat()
}

/// Like [`pair_sum`] but also returns `sum coeff * phi(E/m) * (v - v*)_a` for `a = 0, 1, 2`.
pub(crate) fn pair_sum_with_velocity(
    grid: &PhaseGrid,
    m: f64,
    coeff: &[f64],
    phi: impl Fn(f64) -> f64 + Sync,
) -> (Vec<f64>, [Vec<f64>; 3]) {
    let nv = grid.nv();
    let ni = grid.ni();
    let hv = grid.hv();
    let table = PairTable::new(grid, m, &phi);
    let active: Vec<bool> = coeff
        .chunks(ni)
        .map(|c| c.iter().any(|x| *x != 0.0))
        .collect();
    let rows: Vec<[Vec<f64>; 4]> = (0..grid.velocity_len())
        .into_par_iter()
        .map(|iv| {
            let [i1, i2, i3] = velocity_triplet(iv, nv);
            let mut acc: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; ni]);
            let mut tmp = vec![0.0; ni];
            for j1 in 0..nv {
                let d1 = i1.abs_diff(j1);
                let u1 = (i1 as f64 - j1 as f64) * hv;
                for j2 in 0..nv {
                    let d2 = i2.abs_diff(j2);
                    let u2 = (i2 as f64 - j2 as f64) * hv;
                    for j3 in 0..nv {
                        let jv = (j1 * nv + j2) * nv + j3;
                        if !active[jv] {
                            continue;
                        }
                        let d3 = i3.abs_diff(j3);
                        let u3 = (i3 as f64 - j3 as f64) * hv;
                        let row = table.row(d1 * d1 + d2 * d2 + d3 * d3);
                        let c = &coeff[jv * ni..(jv + 1) * ni];
                        tmp.fill(0.0);
                        for (k, &ck) in c.iter().enumerate() {
                            if ck == 0.0 {
                                continue;
                            }
                            for (a, t) in tmp.iter_mut().zip(&row[k..k + ni]) {
                                *a += ck * t;
                            }
                        }
                        for (l, t) in tmp.iter().enumerate() {
                            acc[0][l] += t;
                            acc[1][l] += u1 * t;
                            acc[2][l] += u2 * t;
                            acc[3][l] += u3 * t;
                        }
                    }
                }
            }
            acc
        })
        .collect();
    let mut out: [Vec<f64>; 4] = std::array::from_fn(|_| Vec::with_capacity(grid.len()));
    for row in rows {
        for (o, r) in out.iter_mut().zip(row) {
            o.extend(r);
        }
    }
    let [s, a, b, c] = out;
    (s, [a, b, c])
}
