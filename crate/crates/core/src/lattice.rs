//! Geometry of `Z^d` under the sup-norm: points, balls and hashed site sets.

use std::fmt;
use std::ops::{Add, Sub};

use rustc_hash::FxHashSet;

use crate::error::{Error, Result};

/// Largest supported lattice dimension.
pub const MAX_DIM: usize = 8;
/// Smallest supported lattice dimension (the walk must be transient).
pub const MIN_DIM: usize = 3;

/// Validates a runtime dimension.
pub fn check_dim(d: usize) -> Result<()> {
    if (MIN_DIM..=MAX_DIM).contains(&d) {
        Ok(())
    } else {
        Err(Error::UnsupportedDimension(d))
    }
}

/// A point of `Z^d`. Coordinates beyond `dim` are always zero.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LatticePoint {
    dim: u8,
    coords: [i64; MAX_DIM],
}

impl LatticePoint {
    pub fn origin(d: usize) -> Self {
        assert!(d <= MAX_DIM, "dimension {d} exceeds {MAX_DIM}");
        LatticePoint { dim: d as u8, coords: [0; MAX_DIM] }
    }

    pub fn new(coords: &[i64]) -> Self {
        let mut p = Self::origin(coords.len());
        p.coords[..coords.len()].copy_from_slice(coords);
        p
    }

    /// The point `k * e_axis`.
    pub fn axis(d: usize, axis: usize, k: i64) -> Self {
        let mut p = Self::origin(d);
        p.coords[axis] = k;
        p
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    #[inline]
    pub fn coords(&self) -> &[i64] {
        &self.coords[..self.dim as usize]
    }

    #[inline]
    pub fn coord(&self, i: usize) -> i64 {
        self.coords[i]
    }

    #[inline]
    pub fn raw(&self) -> &[i64; MAX_DIM] {
        &self.coords
    }

    #[inline]
    pub fn raw_mut(&mut self) -> &mut [i64; MAX_DIM] {
        &mut self.coords
    }

    /// `|x| = max_i |x_i|`.
    #[inline]
    pub fn sup_norm(&self) -> i64 {
        self.coords().iter().map(|c| c.abs()).max().unwrap_or(0)
    }

    /// Squared Euclidean norm, as a float.
    #[inline]
    pub fn euclid_sq(&self) -> f64 {
        self.coords().iter().map(|&c| (c as f64) * (c as f64)).sum()
    }

    /// `|x|²` in exact integer arithmetic.
    pub fn norm_sq(&self) -> i64 {
        self.coords().iter().map(|&c| c * c).sum()
    }

    pub fn neg(&self) -> Self {
        let mut p = *self;
        for c in p.coords.iter_mut() {
            *c = -*c;
        }
        p
    }

    /// Applies the unit step with code `code` (see [`step_delta`]).
    #[inline]
    pub fn step(&mut self, code: u8) {
        let (axis, delta) = step_delta(code);
        self.coords[axis] += delta;
    }

    pub fn stepped(mut self, code: u8) -> Self {
        self.step(code);
        self
    }

    /// The `2d` nearest neighbours in step-code order.
    pub fn neighbors(&self) -> impl Iterator<Item = LatticePoint> + '_ {
        (0..2 * self.dim).map(move |c| self.stepped(c))
    }

    /// Sorted absolute coordinates, largest first. Invariant under the
    /// hyperoctahedral group, so it labels symmetry orbits.
    pub fn canonical(&self) -> Self {
        let mut p = *self;
        let d = self.dim();
        for c in p.coords[..d].iter_mut() {
            *c = c.abs();
        }
        p.coords[..d].sort_unstable_by(|a, b| b.cmp(a));
        p
    }

    pub fn sup_dist(&self, other: &Self) -> i64 {
        (*self - *other).sup_norm()
    }
}

/// Decodes a step code into `(axis, ±1)`: even codes step up, odd codes step down.
#[inline]
pub fn step_delta(code: u8) -> (usize, i64) {
    ((code >> 1) as usize, if code & 1 == 0 { 1 } else { -1 })
}

/// Code of the step reversing `code`.
#[inline]
pub fn reverse_step(code: u8) -> u8 {
    code ^ 1
}

impl Add for LatticePoint {
    type Output = LatticePoint;
    fn add(self, rhs: Self) -> Self {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch");
        let mut p = self;
        for i in 0..MAX_DIM {
            p.coords[i] += rhs.coords[i];
        }
        p
    }
}

impl Sub for LatticePoint {
    type Output = LatticePoint;
    fn sub(self, rhs: Self) -> Self {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch");
        let mut p = self;
        for i in 0..MAX_DIM {
            p.coords[i] -= rhs.coords[i];
        }
        p
    }
}

impl fmt::Debug for LatticePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({})", self)
    }
}

impl fmt::Display for LatticePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.coords().iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

impl std::str::FromStr for LatticePoint {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let coords = s
            .trim()
            .trim_start_matches('(')
            .trim_end_matches(')')
            .split(',')
            .map(|c| c.trim().parse::<i64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse(format!("bad lattice point {s:?}: {e}")))?;
        if coords.is_empty() || coords.len() > MAX_DIM {
            return Err(Error::Parse(format!("bad lattice point {s:?}")));
        }
        Ok(LatticePoint::new(&coords))
    }
}

/// `B(x, R) = { y : |x - y| <= R }`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ball {
    pub center: LatticePoint,
    pub radius: i64,
}

impl Ball {
    pub fn new(center: LatticePoint, radius: i64) -> Self {
        assert!(radius >= 0, "negative radius");
        Ball { center, radius }
    }

    pub fn centered(d: usize, radius: i64) -> Self {
        Ball::new(LatticePoint::origin(d), radius)
    }

    pub fn dim(&self) -> usize {
        self.center.dim()
    }

    #[inline]
    pub fn contains(&self, p: &LatticePoint) -> bool {
        (*p - self.center).sup_norm() <= self.radius
    }

    /// True when `self ⊆ other`.
    pub fn is_inside(&self, other: &Ball) -> bool {
        (self.center - other.center).sup_norm() + self.radius <= other.radius
    }

    pub fn volume(&self) -> u64 {
        ((2 * self.radius + 1) as u64).pow(self.dim() as u32)
    }

    /// Number of sites with `|y - x| = R` (for `R = 0`, the centre).
    pub fn boundary_count(&self) -> u64 {
        if self.radius == 0 {
            return 1;
        }
        self.volume() - ((2 * self.radius - 1) as u64).pow(self.dim() as u32)
    }

    /// All sites, in lexicographic order.
    pub fn sites(&self) -> Vec<LatticePoint> {
        let d = self.dim();
        let r = self.radius;
        let mut out = Vec::with_capacity(self.volume() as usize);
        let mut off = [-r; MAX_DIM];
        loop {
            let mut p = self.center;
            for i in 0..d {
                p.coords[i] += off[i];
            }
            out.push(p);
            let mut i = d;
            loop {
                if i == 0 {
                    return out;
                }
                i -= 1;
                if off[i] < r {
                    off[i] += 1;
                    break;
                }
                off[i] = -r;
            }
        }
    }

    pub fn to_site_set(&self) -> SiteSet {
        SiteSet::from_points(self.dim(), self.sites())
    }
}

/// Offset-binary packing of a point into a `u128` key. Each coordinate gets
/// `128 / d` bits, so unit steps change the key by `±2^(bits * axis)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Packer {
    dim: usize,
    bits: u32,
    offset: i64,
}

impl Packer {
    pub fn new(d: usize) -> Self {
        let bits = (128 / d.max(1)).min(62) as u32;
        Packer { dim: d, bits, offset: 1i64 << (bits - 1) }
    }

    /// Largest absolute coordinate that packs.
    pub fn max_abs(&self) -> i64 {
        self.offset - 2
    }

    #[inline]
    pub fn pack(&self, p: &LatticePoint) -> Option<u128> {
        let mut key = 0u128;
        for i in (0..self.dim).rev() {
            let c = p.coords[i];
            if c.abs() > self.max_abs() {
                return None;
            }
            key = (key << self.bits) | (c + self.offset) as u128;
        }
        Some(key)
    }

    #[inline]
    pub fn unpack(&self, mut key: u128) -> LatticePoint {
        let mut p = LatticePoint::origin(self.dim);
        let mask = (1u128 << self.bits) - 1;
        for i in 0..self.dim {
            p.coords[i] = (key & mask) as i64 - self.offset;
            key >>= self.bits;
        }
        p
    }

    /// Key increment of the unit step `code`, as a wrapping add.
    #[inline]
    pub fn step_increment(&self, code: u8) -> u128 {
        let (axis, delta) = step_delta(code);
        let unit = 1u128 << (self.bits * axis as u32);
        if delta > 0 {
            unit
        } else {
            unit.wrapping_neg()
        }
    }
}

/// A finite subset of `Z^d`, hashed by packed coordinates, with a cached
/// bounding box for cheap rejection of far-away queries.
#[derive(Clone, Debug)]
pub struct SiteSet {
    packer: Packer,
    keys: FxHashSet<u128>,
    lo: [i64; MAX_DIM],
    hi: [i64; MAX_DIM],
}

impl SiteSet {
    pub fn new(d: usize) -> Self {
        SiteSet {
            packer: Packer::new(d),
            keys: FxHashSet::default(),
            lo: [i64::MAX; MAX_DIM],
            hi: [i64::MIN; MAX_DIM],
        }
    }

    pub fn from_points(d: usize, pts: impl IntoIterator<Item = LatticePoint>) -> Self {
        let mut s = SiteSet::new(d);
        for p in pts {
            s.insert(p);
        }
        s
    }

    pub fn dim(&self) -> usize {
        self.packer.dim
    }

    pub fn packer(&self) -> &Packer {
        &self.packer
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Inserts `p`; panics if a coordinate exceeds the packable range
    /// (`±2^(128/d - 1)`), far beyond any simulated window.
    pub fn insert(&mut self, p: LatticePoint) -> bool {
        assert_eq!(p.dim(), self.dim(), "dimension mismatch");
        let key = self
            .packer
            .pack(&p)
            .unwrap_or_else(|| panic!("site {p} outside packable range"));
        for i in 0..self.dim() {
            self.lo[i] = self.lo[i].min(p.coords[i]);
            self.hi[i] = self.hi[i].max(p.coords[i]);
        }
        self.keys.insert(key)
    }

    pub fn insert_key(&mut self, key: u128) -> bool {
        if self.keys.contains(&key) {
            return false;
        }
        let p = self.packer.unpack(key);
        self.insert(p)
    }

    #[inline]
    pub fn in_bbox(&self, p: &LatticePoint) -> bool {
        (0..self.dim()).all(|i| p.coords[i] >= self.lo[i] && p.coords[i] <= self.hi[i])
    }

    #[inline]
    pub fn contains(&self, p: &LatticePoint) -> bool {
        if !self.in_bbox(p) {
            return false;
        }
        match self.packer.pack(p) {
            Some(k) => self.keys.contains(&k),
            None => false,
        }
    }

    #[inline]
    pub fn contains_key(&self, key: u128) -> bool {
        self.keys.contains(&key)
    }

    pub fn keys(&self) -> impl Iterator<Item = u128> + '_ {
        self.keys.iter().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = LatticePoint> + '_ {
        self.keys.iter().map(|&k| self.packer.unpack(k))
    }

    /// Points in a deterministic (lexicographic) order.
    pub fn sorted_points(&self) -> Vec<LatticePoint> {
        let mut v: Vec<_> = self.iter().collect();
        v.sort_unstable();
        v
    }

    /// Smallest sup-norm ball centred at the bounding-box midpoint that
    /// contains the set. `None` when empty.
    pub fn bounding_ball(&self) -> Option<Ball> {
        if self.is_empty() {
            return None;
        }
        let d = self.dim();
        let mut c = LatticePoint::origin(d);
        let mut r = 0;
        for i in 0..d {
            let mid = (self.lo[i] + self.hi[i]).div_euclid(2);
            c.coords[i] = mid;
            r = r.max((self.hi[i] - mid).max(mid - self.lo[i]));
        }
        Some(Ball::new(c, r))
    }

    pub fn is_subset_of(&self, other: &SiteSet) -> bool {
        self.keys.iter().all(|k| other.keys.contains(k))
    }

    pub fn extend(&mut self, other: &SiteSet) {
        for p in other.iter() {
            self.insert(p);
        }
    }

    /// Sites having at least one neighbour outside the set; only these can
    /// carry equilibrium mass.
    pub fn outer_boundary_sites(&self) -> Vec<LatticePoint> {
        let mut v: Vec<_> = self
            .iter()
            .filter(|p| p.neighbors().any(|q| !self.contains(&q)))
            .collect();
        v.sort_unstable();
        v
    }
}

impl PartialEq for SiteSet {
    fn eq(&self, other: &Self) -> bool {
        self.dim() == other.dim() && self.keys == other.keys
    }
}
