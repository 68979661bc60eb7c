//! `h(z) = P_z(H(K) = ∞)` on a box around `K`, as the solution of the
//! discrete Dirichlet problem with `h = 0` on `K` and boundary data from the
//! hitting formula. Harmonicity holds to solver tolerance, so that the
//! transition weights `h(z) / (2d h(y))` of the conditioned walk sum to one.

use crate::capacity::{hitting_prob, EquilibriumMeasure};
use crate::error::{Error, Result};
use crate::green::GreenTable;
use crate::lattice::{Ball, LatticePoint, SiteSet, MAX_DIM};

/// Dense indexing of the sites of a ball.
#[derive(Clone, Debug)]
pub struct BoxGrid {
    pub ball: Ball,
    side: usize,
    strides: [usize; MAX_DIM],
    len: usize,
}

impl BoxGrid {
    pub fn new(ball: Ball) -> Self {
        let d = ball.dim();
        let side = (2 * ball.radius + 1) as usize;
        let mut strides = [0; MAX_DIM];
        let mut s = 1;
        for st in strides.iter_mut().take(d) {
            *st = s;
            s *= side;
        }
        BoxGrid { ball, side, strides, len: s }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn index(&self, p: &LatticePoint) -> Option<usize> {
        let d = self.ball.dim();
        let (c, r) = (self.ball.center.raw(), self.ball.radius);
        let mut i = 0;
        for k in 0..d {
            let off = p.raw()[k] - c[k] + r;
            if off < 0 || off > 2 * r {
                return None;
            }
            i += off as usize * self.strides[k];
        }
        Some(i)
    }

    pub fn point(&self, mut i: usize) -> LatticePoint {
        let d = self.ball.dim();
        let mut c = [0i64; MAX_DIM];
        for k in 0..d {
            c[k] = (i % self.side) as i64 - self.ball.radius + self.ball.center.raw()[k];
            i /= self.side;
        }
        LatticePoint::new(&c[..d])
    }

    /// Flat-index offset of unit step `code`.
    #[inline]
    pub fn offset(&self, code: u8) -> isize {
        let s = self.strides[(code >> 1) as usize] as isize;
        if code & 1 == 0 {
            s
        } else {
            -s
        }
    }
}

const FREE: u8 = 0;
const IN_K: u8 = 1;
const FIXED: u8 = 2;

#[derive(Clone, Debug)]
pub struct EscapeField {
    grid: BoxGrid,
    h: Vec<f64>,
    kind: Vec<u8>,
    pub sweeps: usize,
    pub residual: f64,
}

/// Harmonicity target for the solver.
pub const SOLVER_TOLERANCE: f64 = 1e-12;

impl EscapeField {
    /// Solves for `h` on `bx` given `K ⊆ B(center, radius - 2)`.
    pub fn solve(k: &SiteSet, bx: &Ball, em: &EquilibriumMeasure, table: &GreenTable) -> Result<Self> {
        let d = bx.dim();
        if k.dim() != d || em.dim() != d || table.dim() != d {
            return Err(Error::Incompatible("dimensions of K, box, measure and table differ".into()));
        }
        let inner = Ball::new(bx.center, bx.radius - 2);
        if bx.radius < 2 || k.iter().any(|p| !inner.contains(&p)) {
            return Err(Error::Geometry(format!("K must lie in the box shrunk by 2 (box radius {})", bx.radius)));
        }
        let grid = BoxGrid::new(*bx);
        let n = grid.len();
        let mut h = vec![1.0; n];
        let mut kind = vec![FREE; n];
        let empty = k.is_empty();
        for i in 0..n {
            let p = grid.point(i);
            if k.contains(&p) {
                kind[i] = IN_K;
                h[i] = 0.0;
            } else {
                if (p - bx.center).sup_norm() == bx.radius {
                    kind[i] = FIXED;
                }
                if !empty {
                    h[i] = 1.0 - hitting_prob(&p, em, table)?.value;
                }
            }
        }
        let mut field = EscapeField { grid, h, kind, sweeps: 0, residual: 0.0 };
        if !empty {
            field.sor()?;
        }
        field.residual = field.max_harmonic_residual();
        Ok(field)
    }

    fn sor(&mut self) -> Result<()> {
        let d = self.grid.ball.dim();
        let offs: Vec<isize> = (0..2 * d as u8).map(|c| self.grid.offset(c)).collect();
        let omega = 2.0 / (1.0 + (std::f64::consts::PI / self.grid.side as f64).sin());
        let inv = 1.0 / (2 * d) as f64;
        let free: Vec<usize> = (0..self.h.len()).filter(|&i| self.kind[i] == FREE).collect();
        let parity: Vec<bool> = free
            .iter()
            .map(|&i| {
                let p = self.grid.point(i);
                p.coords().iter().sum::<i64>().rem_euclid(2) == 0
            })
            .collect();
        let max_sweeps = 200_000;
        for sweep in 1..=max_sweeps {
            for colour in [true, false] {
                for (&i, &par) in free.iter().zip(&parity) {
                    if par != colour {
                        continue;
                    }
                    let avg: f64 = offs.iter().map(|&o| self.h[(i as isize + o) as usize]).sum::<f64>() * inv;
                    self.h[i] += omega * (avg - self.h[i]);
                }
            }
            if sweep % 8 == 0 {
                let r = self.max_harmonic_residual();
                if r < SOLVER_TOLERANCE {
                    self.sweeps = sweep;
                    for v in self.h.iter_mut() {
                        *v = v.clamp(0.0, 1.0);
                    }
                    return Ok(());
                }
            }
        }
        Err(Error::NoConvergence(format!("escape field SOR after {max_sweeps} sweeps")))
    }

    pub fn grid(&self) -> &BoxGrid {
        &self.grid
    }

    pub fn ball(&self) -> &Ball {
        &self.grid.ball
    }

    /// `h(p)` for `p` in the box.
    #[inline]
    pub fn value(&self, p: &LatticePoint) -> Option<f64> {
        self.grid.index(p).map(|i| self.h[i])
    }

    #[inline]
    pub fn value_at(&self, i: usize) -> f64 {
        self.h[i]
    }

    /// Points where `h` is harmonic: in the box, off `K`, off the box faces.
    #[inline]
    pub fn is_free(&self, i: usize) -> bool {
        self.kind[i] == FREE
    }

    pub fn max_harmonic_residual(&self) -> f64 {
        let d = self.grid.ball.dim();
        let offs: Vec<isize> = (0..2 * d as u8).map(|c| self.grid.offset(c)).collect();
        let inv = 1.0 / (2 * d) as f64;
        (0..self.h.len())
            .filter(|&i| self.kind[i] == FREE)
            .map(|i| {
                let avg: f64 = offs.iter().map(|&o| self.h[(i as isize + o) as usize]).sum::<f64>() * inv;
                (avg - self.h[i]).abs()
            })
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capacity::capacity_of;

    #[test]
    fn grid_index_roundtrip() {
        let g = BoxGrid::new(Ball::new(LatticePoint::new(&[1, -2, 3]), 2));
        for i in 0..g.len() {
            assert_eq!(g.index(&g.point(i)), Some(i));
        }
        let p = LatticePoint::new(&[1, -2, 3]);
        let i = g.index(&p).unwrap();
        for c in 0..6u8 {
            assert_eq!(g.index(&p.stepped(c)), Some((i as isize + g.offset(c)) as usize));
        }
        assert_eq!(g.index(&LatticePoint::new(&[4, 0, 0])), None);
    }

    #[test]
    fn empty_set_gives_unit_field() {
        let t = GreenTable::shared(3).unwrap();
        let em = EquilibriumMeasure::from_sites(vec![], vec![], vec![], "variational").unwrap();
        let f = EscapeField::solve(&SiteSet::new(3), &Ball::centered(3, 4), &em, &t).unwrap();
        assert!((0..f.grid().len()).all(|i| f.value_at(i) == 1.0));
    }

    #[test]
    fn harmonic_and_complementary_to_hitting() {
        let d = 5;
        let t = GreenTable::shared(d).unwrap();
        let k = Ball::centered(d, 1).to_site_set();
        let em = capacity_of(&k, &t).unwrap().to_measure().unwrap();
        let bx = Ball::centered(d, 4);
        let f = EscapeField::solve(&k, &bx, &em, &t).unwrap();
        assert!(f.residual < 1e-10, "{}", f.residual);
        for p in [LatticePoint::axis(d, 0, 2), LatticePoint::new(&[2, 2, -1, 0, 0])] {
            let h = f.value(&p).unwrap();
            let hit = hitting_prob(&p, &em, &t).unwrap().value;
            assert!((h + hit - 1.0).abs() < 0.02, "{p}: {h} + {hit}");
        }
        assert_eq!(f.value(&LatticePoint::origin(d)), Some(0.0));
        assert!((0..f.grid().len()).all(|i| (0.0..=1.0).contains(&f.value_at(i))));
    }

    #[test]
    fn margin_enforced() {
        let t = GreenTable::shared(3).unwrap();
        let k = Ball::centered(3, 3).to_site_set();
        let em = capacity_of(&k, &t).unwrap().to_measure().unwrap();
        assert!(matches!(EscapeField::solve(&k, &Ball::centered(3, 4), &em, &t), Err(Error::Geometry(_))));
    }
}
