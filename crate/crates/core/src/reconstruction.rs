//! Off-grid evaluation of `f(v, I) / I^alpha`.
//!
//! A Gaussian envelope `W = exp(b.v + c|v|^2 + d I)` is fitted to `log(f / I^alpha)`
//! by weighted least squares; the ratio `f / (I^alpha W)` is then interpolated
//! multilinearly and multiplied back by `W`. Polyatomic Maxwellians are
//! reproduced exactly, and smooth fields inherit the accuracy of interpolating
//! a slowly varying ratio. Outside the box the reconstruction is zero; between
//! the outermost nodes and the box faces the ratio is held constant.

use nalgebra::{Matrix6, Vector6};

use crate::phase_space::{DistributionField, GridValues, PhaseGrid};
use crate::Vec3;

#[derive(Debug, Clone)]
pub(crate) struct Reconstruction {
    nv: usize,
    ni: usize,
    lv: f64,
    imax: f64,
    inv_hv: f64,
    inv_hi: f64,
    ratio: Vec<f64>,
    envelope: Option<Envelope>,
}

#[derive(Debug, Clone, Copy)]
struct Envelope {
    b: [f64; 3],
    c: f64,
    d: f64,
}

impl Envelope {
    #[inline]
    fn eval(&self, v: &Vec3, i: f64) -> f64 {
        (self.b[0] * v[0]
            + self.b[1] * v[1]
            + self.b[2] * v[2]
            + self.c * v.norm_squared()
            + self.d * i)
            .exp()
    }

    fn fit(grid: &PhaseGrid, f: &[f64], alpha: f64) -> Option<Self> {
        let fmax = f.iter().cloned().fold(0.0, f64::max);
        if fmax <= 0.0 {
            return None;
        }
        let mut normal = Matrix6::<f64>::zeros();
        let mut rhs = Vector6::<f64>::zeros();
        let floor = 1e-12 * fmax;
        for (n, &fv) in f.iter().enumerate() {
            if fv <= floor {
                continue;
            }
            let v = grid.velocity(n);
            let i = grid.internal_energy(n);
            let phi = Vector6::new(1.0, v[0], v[1], v[2], v.norm_squared(), i);
            let y = (fv / i.powf(alpha)).ln();
            let w = fv / fmax;
            normal += w * phi * phi.transpose();
            rhs += w * y * phi;
        }
        let coef = normal.cholesky()?.solve(&rhs);
        if !(coef[4] < 0.0 && coef[5] < 0.0) || coef.iter().any(|c| !c.is_finite()) {
            return None;
        }
        Some(Self {
            b: [coef[1], coef[2], coef[3]],
            c: coef[4],
            d: coef[5],
        })
    }
}

impl Reconstruction {
    pub(crate) fn new(f: &DistributionField, alpha: f64) -> Self {
        let grid = f.grid();
        let envelope = Envelope::fit(grid, f.values(), alpha);
        let ratio = f
            .values()
            .iter()
            .enumerate()
            .map(|(n, fv)| {
                let v = grid.velocity(n);
                let i = grid.internal_energy(n);
                let w = envelope.map_or(1.0, |e| e.eval(&v, i));
                fv / (i.powf(alpha) * w)
            })
            .collect();
        Self {
            nv: grid.nv(),
            ni: grid.ni(),
            lv: grid.lv(),
            imax: grid.imax(),
            inv_hv: 1.0 / grid.hv(),
            inv_hi: 1.0 / grid.hi(),
            ratio,
            envelope,
        }
    }

    #[inline]
    fn locate(x: f64, inv_h: f64, n: usize) -> (usize, f64) {
        let s = x * inv_h - 0.5;
        if s <= 0.0 {
            (0, 0.0)
        } else if s >= (n - 1) as f64 {
            (n - 2, 1.0)
        } else {
            let i = s as usize;
            (i, s - i as f64)
        }
    }

    /// Reconstructed `f(v, I) / I^alpha`.
    #[inline]
    pub(crate) fn ratio_at(&self, v: &Vec3, i: f64) -> f64 {
        let lv = self.lv;
        if v[0].abs() > lv || v[1].abs() > lv || v[2].abs() > lv || i < 0.0 || i > self.imax {
            return 0.0;
        }
        let (i0, t0) = Self::locate(v[0] + lv, self.inv_hv, self.nv);
        let (i1, t1) = Self::locate(v[1] + lv, self.inv_hv, self.nv);
        let (i2, t2) = Self::locate(v[2] + lv, self.inv_hv, self.nv);
        let (l, tl) = Self::locate(i, self.inv_hi, self.ni);
        let sz = self.ni;
        let sy = self.nv * sz;
        let sx = self.nv * sy;
        let r = &self.ratio;
        let base = i0 * sx + i1 * sy + i2 * sz + l;
        let along_i = |n: usize| r[n] + tl * (r[n + 1] - r[n]);
        let along_z = |n: usize| {
            let a = along_i(n);
            a + t2 * (along_i(n + sz) - a)
        };
        let along_y = |n: usize| {
            let a = along_z(n);
            a + t1 * (along_z(n + sy) - a)
        };
        let lo = along_y(base);
        let acc = lo + t0 * (along_y(base + sx) - lo);
        if acc == 0.0 {
            return 0.0;
        }
        acc * self.envelope.map_or(1.0, |e| e.eval(v, i))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn reproduces_maxwellian_off_grid() {
        let grid = Arc::new(PhaseGrid::new(5.0, 10, 15.0, 10).unwrap());
        let alpha = 0.5;
        let t = 1.3;
        let u = Vec3::new(0.3, -0.2, 0.1);
        let maxwell =
            |v: &Vec3, i: f64| i.powf(alpha) * (-((v - u).norm_squared() / 2.0 + i) / t).exp();
        let f = DistributionField::from_fn(grid.clone(), maxwell).unwrap();
        let rec = Reconstruction::new(&f, alpha);
        for (v, i) in [
            (Vec3::new(0.11, 1.7, -2.3), 0.37),
            (Vec3::new(-4.9, 0.0, 0.4), 14.9),
            (Vec3::new(1.0, 1.0, 1.0), 0.01),
        ] {
            let exact = maxwell(&v, i) / i.powf(alpha);
            let got = rec.ratio_at(&v, i);
            assert!((got / exact - 1.0).abs() < 1e-9, "{got} vs {exact}");
        }
        assert_eq!(rec.ratio_at(&Vec3::new(5.1, 0.0, 0.0), 1.0), 0.0);
        assert_eq!(rec.ratio_at(&Vec3::zeros(), 15.5), 0.0);
    }

    #[test]
    fn interpolates_nodes_exactly() {
        let grid = Arc::new(PhaseGrid::new(2.0, 6, 3.0, 5).unwrap());
        let f = DistributionField::from_fn(grid.clone(), |v, i| {
            (1.0 + v[0] * v[0] + (v[1] * 2.0).cos()) * (1.0 + i)
        })
        .unwrap();
        let rec = Reconstruction::new(&f, 1.0);
        for n in 0..grid.len() {
            let v = grid.velocity(n);
            let i = grid.internal_energy(n);
            let exact = f.values()[n] / i;
            assert!((rec.ratio_at(&v, i) / exact - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_field_has_no_envelope() {
        let grid = Arc::new(PhaseGrid::new(2.0, 5, 3.0, 5).unwrap());
        let rec = Reconstruction::new(&DistributionField::zeros(grid), 0.5);
        assert_eq!(rec.ratio_at(&Vec3::zeros(), 1.0), 0.0);
    }
}
