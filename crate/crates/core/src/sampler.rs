//! Local sampling of the interlacement point process at level `u` on a
//! finite set `A`: the number of trajectories meeting `A` is
//! Poisson(`u cap(A)`), their time-0 points (first entrance into `A`) are
//! i.i.d. from `ẽ_A`, forward parts are simple random walks and backward
//! parts are walks conditioned never to return to `A`.
//!
//! Two samplers realise this law. [`SampleMethod::Equilibrium`] draws the
//! count and the anchors from a computed equilibrium measure and the
//! backward parts by an h-transform (inside the escape-field box) or by
//! rejection. [`SampleMethod::Thinning`] needs no potential theory: it
//! proposes Poisson(`u |∂A|`) starting points uniformly on the inner
//! boundary of `A` and keeps those whose backward walk never returns, which
//! thins the proposals to exactly the law above.
//!
//! Walks are cut when they leave `B(c, L)` around the window centre, with
//! `L` chosen so that the probability of coming back to the window is below
//! `eps_trunc`.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::capacity::{ball_capacity_upper, capacity_mc, capacity_of, default_outer_radius, EquilibriumMeasure};
use crate::error::{Error, Result};
use crate::escape_field::EscapeField;
use crate::green::{asymptotic_constant, GreenTable};
use crate::lattice::{reverse_step, Ball, LatticePoint, Packer, SiteSet};
use crate::rng::RngStream;
use crate::walk::{random_step, WalkPath};

/// Largest anchor set for which capacity and `ẽ_A` come from the dense
/// variational solve; larger sets use escape simulation.
pub const VARIATIONAL_LIMIT: usize = 2000;

/// Largest window (in sites) on which the escape field is solved.
pub const ESCAPE_FIELD_LIMIT: u64 = 2_000_000;

/// The set trajectories are sampled on.
#[derive(Clone, Debug)]
pub enum AnchorSet {
    Sites(SiteSet),
    Ball(Ball),
}

impl AnchorSet {
    pub fn dim(&self) -> usize {
        match self {
            AnchorSet::Sites(s) => s.dim(),
            AnchorSet::Ball(b) => b.dim(),
        }
    }

    #[inline]
    pub fn contains(&self, p: &LatticePoint) -> bool {
        match self {
            AnchorSet::Sites(s) => s.contains(p),
            AnchorSet::Ball(b) => b.contains(p),
        }
    }

    pub fn bounding_ball(&self) -> Option<Ball> {
        match self {
            AnchorSet::Sites(s) => s.bounding_ball(),
            AnchorSet::Ball(b) => Some(*b),
        }
    }

    pub fn size(&self) -> u64 {
        match self {
            AnchorSet::Sites(s) => s.len() as u64,
            AnchorSet::Ball(b) => b.volume(),
        }
    }

    pub fn same_as(&self, other: &AnchorSet) -> bool {
        match (self, other) {
            (AnchorSet::Sites(a), AnchorSet::Sites(b)) => a == b,
            (AnchorSet::Ball(a), AnchorSet::Ball(b)) => a == b,
            _ => false,
        }
    }
}

/// Smallest gap `r >= 2` with `cap · g(r + 1) <= eps`, and the bound
/// achieved, for a set of capacity at most `cap_bound`.
pub fn escape_gap(d: usize, cap_bound: f64, eps: f64) -> (i64, f64) {
    // slack for the lattice Green function exceeding its asymptote
    let k = 1.1 * cap_bound * asymptotic_constant(d);
    let gap = (k / eps).powf(1.0 / (d as f64 - 2.0)).ceil().max(2.0) as i64;
    (gap, k * ((gap + 1) as f64).powf(2.0 - d as f64))
}

/// Radius `L` around the window centre with
/// `cap(window) · g(L + 1 - W) <= eps`, and the bound actually achieved.
pub fn escape_radius(window: &Ball, eps: f64) -> Result<(i64, f64)> {
    let cap = ball_capacity_upper(window.dim(), window.radius)?;
    let (gap, cert) = escape_gap(window.dim(), cap, eps);
    Ok((window.radius + gap, cert))
}

/// Where half-paths are cut.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cut {
    /// Return to the whole window has probability below `eps`.
    Window,
    /// Return to `A` has probability below `eps`; cheaper when the window
    /// is large and only `A` matters.
    AnchorSet,
}

/// One trajectory of the local picture. `backward` starts at the anchor and
/// lists `X(0), X(-1), X(-2), ...`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub sample_id: u64,
    pub index: usize,
    pub forward: WalkPath,
    pub backward: WalkPath,
    /// Bounds on the probability that the half-path re-enters the window
    /// after its cut.
    pub forward_certificate: f64,
    pub backward_certificate: f64,
    /// Sorted packed keys of the sites visited inside the window.
    pub trace: Vec<u128>,
}

impl Trajectory {
    pub fn anchor(&self) -> LatticePoint {
        self.forward.start
    }

    /// Every visited point, from the far end of the backward part to the
    /// end of the forward part.
    pub fn points(&self) -> impl Iterator<Item = LatticePoint> + '_ {
        let back: Vec<LatticePoint> = self.backward.points().collect();
        back.into_iter().rev().chain(self.forward.points().skip(1))
    }

    pub fn meets(&self, pred: impl Fn(&LatticePoint) -> bool) -> bool {
        self.backward.points().any(|p| pred(&p)) || self.forward.points().any(|p| pred(&p))
    }

    pub fn meets_ball(&self, b: &Ball) -> bool {
        self.meets(|p| b.contains(p))
    }

    /// Backward points at `t < 0` lying in `a`.
    pub fn backward_violations(&self, a: &AnchorSet) -> usize {
        self.backward.points().skip(1).filter(|p| a.contains(p)).count()
    }

    /// The path from the first visit to `set` onward, re-parametrised so
    /// that time 0 is that visit.
    pub fn from_first_entry(&self, set: impl Fn(&LatticePoint) -> bool) -> Option<WalkPath> {
        let back: Vec<LatticePoint> = self.backward.points().collect();
        if let Some(k) = (0..back.len()).rev().find(|&k| set(&back[k])) {
            let mut steps: Vec<u8> = self.backward.steps[..k].iter().rev().map(|&c| reverse_step(c)).collect();
            steps.extend_from_slice(&self.forward.steps);
            return Some(WalkPath { start: back[k], steps, stream: self.forward.stream });
        }
        let fwd: Vec<LatticePoint> = self.forward.points().collect();
        let k = (1..fwd.len()).find(|&k| set(&fwd[k]))?;
        Some(WalkPath { start: fwd[k], steps: self.forward.steps[k..].to_vec(), stream: self.forward.stream })
    }

    /// Appends `n` further forward steps drawn from a stream derived from
    /// the trajectory's own.
    pub fn extend_forward(&mut self, n: usize) {
        let base = self.forward.stream.unwrap_or(RngStream::new(self.sample_id, self.index as u64));
        let mut rng = base.child2(7, self.forward.steps.len() as u64).rng();
        let d = self.forward.start.dim();
        self.forward.steps.extend((0..n).map(|_| random_step(&mut rng, d)));
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleMethod {
    Equilibrium,
    Thinning,
}

impl SampleMethod {
    pub fn tag(&self) -> &'static str {
        match self {
            SampleMethod::Equilibrium => "equilibrium",
            SampleMethod::Thinning => "thinning",
        }
    }
}

#[derive(Clone, Debug)]
pub struct InterlacementSample {
    pub id: u64,
    pub d: usize,
    pub u: f64,
    pub anchors: Arc<AnchorSet>,
    pub window: Ball,
    pub eps_trunc: f64,
    pub escape_radius: i64,
    /// Capacity used for the Poisson draw (`NaN` for the thinning sampler,
    /// which never needs it).
    pub cap: f64,
    pub seed: u64,
    pub method: SampleMethod,
    pub trajectories: Vec<Trajectory>,
}

impl InterlacementSample {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Line-oriented text form. Steps are run-length encoded as
    /// `<count><letter>` with letter `a + code`.
    pub fn to_text(&self) -> String {
        let mut s = String::from("interlacement-sample v1\n");
        let _ = writeln!(
            s,
            "id={} d={} u={:e} cap={:e} window={};{} eps={:e} escape={} seed={} method={} n={}",
            self.id,
            self.d,
            self.u,
            self.cap,
            self.window.center,
            self.window.radius,
            self.eps_trunc,
            self.escape_radius,
            self.seed,
            self.method.tag(),
            self.trajectories.len()
        );
        for t in &self.trajectories {
            let _ = writeln!(
                s,
                "traj {} {} anchor={} fwd={} bwd={} cert={:e},{:e}",
                t.sample_id,
                t.index,
                t.anchor(),
                rle_encode(&t.forward.steps),
                rle_encode(&t.backward.steps),
                t.forward_certificate,
                t.backward_certificate
            );
        }
        s
    }

    /// Parses [`Self::to_text`] output; the anchor set is not serialised and
    /// must be supplied.
    pub fn from_text(text: &str, anchors: Arc<AnchorSet>) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some("interlacement-sample v1") {
            return Err(Error::Parse("missing sample header".into()));
        }
        let head = lines.next().ok_or_else(|| Error::Parse("missing sample metadata".into()))?;
        let field = |k: &str| -> Result<&str> {
            head.split_whitespace()
                .find_map(|tok| tok.strip_prefix(k).and_then(|r| r.strip_prefix('=')))
                .ok_or_else(|| Error::Parse(format!("missing field {k}")))
        };
        let num = |k: &str| -> Result<f64> { field(k)?.parse().map_err(|_| Error::Parse(format!("bad {k}"))) };
        let int = |k: &str| -> Result<u64> { field(k)?.parse().map_err(|_| Error::Parse(format!("bad {k}"))) };
        let (wc, wr) = field("window")?.split_once(';').ok_or_else(|| Error::Parse("bad window".into()))?;
        let window = Ball::new(wc.parse()?, wr.parse().map_err(|_| Error::Parse("bad window radius".into()))?);
        let method = match field("method")? {
            "equilibrium" => SampleMethod::Equilibrium,
            "thinning" => SampleMethod::Thinning,
            m => return Err(Error::Parse(format!("unknown method {m}"))),
        };
        let mut trajectories = Vec::new();
        let seed = int("seed")?;
        for line in lines {
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != 7 || toks[0] != "traj" {
                return Err(Error::Parse(format!("bad trajectory line {line:?}")));
            }
            let get = |i: usize, k: &str| -> Result<&str> {
                toks[i].strip_prefix(k).ok_or_else(|| Error::Parse(format!("expected {k} in {line:?}")))
            };
            let sample_id: u64 = toks[1].parse().map_err(|_| Error::Parse("bad sample id".into()))?;
            let index: usize = toks[2].parse().map_err(|_| Error::Parse("bad index".into()))?;
            let anchor: LatticePoint = get(3, "anchor=")?.parse()?;
            let (fc, bc) = get(6, "cert=")?.split_once(',').ok_or_else(|| Error::Parse("bad cert".into()))?;
            let stream = Some(traj_stream(seed, sample_id, index));
            let forward = WalkPath { start: anchor, steps: rle_decode(get(4, "fwd=")?)?, stream };
            let backward = WalkPath { start: anchor, steps: rle_decode(get(5, "bwd=")?)?, stream };
            let trace = window_trace(&window, &forward, &backward);
            trajectories.push(Trajectory {
                sample_id,
                index,
                forward,
                backward,
                forward_certificate: fc.parse().map_err(|_| Error::Parse("bad cert".into()))?,
                backward_certificate: bc.parse().map_err(|_| Error::Parse("bad cert".into()))?,
                trace,
            });
        }
        if trajectories.len() as u64 != int("n")? {
            return Err(Error::Parse("trajectory count does not match header".into()));
        }
        Ok(InterlacementSample {
            id: int("id")?,
            d: int("d")? as usize,
            u: num("u")?,
            anchors,
            window,
            eps_trunc: num("eps")?,
            escape_radius: int("escape")? as i64,
            cap: num("cap")?,
            seed,
            method,
            trajectories,
        })
    }
}

pub fn rle_encode(steps: &[u8]) -> String {
    let mut s = String::new();
    let mut i = 0;
    while i < steps.len() {
        let c = steps[i];
        let mut j = i;
        while j < steps.len() && steps[j] == c {
            j += 1;
        }
        let _ = write!(s, "{}{}", j - i, (b'a' + c) as char);
        i = j;
    }
    if s.is_empty() {
        s.push('-');
    }
    s
}

pub fn rle_decode(s: &str) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    if s == "-" {
        return Ok(out);
    }
    let mut count = 0usize;
    for ch in s.chars() {
        if let Some(dg) = ch.to_digit(10) {
            count = count * 10 + dg as usize;
        } else if ch.is_ascii_lowercase() && count > 0 {
            out.extend(std::iter::repeat_n(ch as u8 - b'a', count));
            count = 0;
        } else {
            return Err(Error::Parse(format!("bad run-length code {s:?}")));
        }
    }
    if count != 0 {
        return Err(Error::Parse(format!("dangling count in {s:?}")));
    }
    Ok(out)
}

fn window_trace(window: &Ball, fwd: &WalkPath, bwd: &WalkPath) -> Vec<u128> {
    let packer = Packer::new(window.dim());
    let mut v: Vec<u128> = bwd
        .points()
        .chain(fwd.points().skip(1))
        .filter(|p| window.contains(p))
        .map(|p| packer.pack(&p).expect("window inside packing range"))
        .collect();
    v.sort_unstable();
    v.dedup();
    v
}

fn traj_stream(seed: u64, sample_id: u64, index: usize) -> RngStream {
    RngStream::new(seed, sample_id).child2(1, index as u64)
}

/// How backward parts are drawn in the equilibrium sampler.
#[derive(Clone, Debug)]
pub enum BackwardLaw {
    /// Steps `y -> z` with probability `h(z) / (2d h(y))` inside the box;
    /// rejection from the point where the box face is reached.
    HTransform(Arc<EscapeField>),
    /// Simple random walks from the anchor, redrawn until one avoids `A`.
    Rejection,
}

/// Result of re-running truncated walks further out.
#[derive(Clone, Copy, Debug, Default)]
pub struct AuditReport {
    pub half_paths: usize,
    pub reentries: usize,
    pub eps_trunc: f64,
}

impl AuditReport {
    pub fn fraction(&self) -> f64 {
        self.reentries as f64 / self.half_paths.max(1) as f64
    }
}

/// Precomputed sampler for a fixed anchor set and window.
#[derive(Clone, Debug)]
pub struct Sampler {
    d: usize,
    anchors: Arc<AnchorSet>,
    anchor_ball: Ball,
    window: Ball,
    eps: f64,
    cut: Ball,
    certificate: f64,
    cap: f64,
    measure: Option<Arc<EquilibriumMeasure>>,
    backward: BackwardLaw,
    method: SampleMethod,
    boundary: Vec<LatticePoint>,
    boundary_count: u64,
}

impl Sampler {
    fn validate(anchors: &AnchorSet, window: &Ball, eps: f64) -> Result<(Ball, Ball, f64)> {
        Self::validate_cut(anchors, window, eps, Cut::Window)
    }

    fn validate_cut(anchors: &AnchorSet, window: &Ball, eps: f64, cut: Cut) -> Result<(Ball, Ball, f64)> {
        let d = anchors.dim();
        crate::lattice::check_dim(d)?;
        if window.dim() != d {
            return Err(Error::DimensionMismatch(window.dim(), d));
        }
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::InvalidArgument(format!("eps_trunc must be in (0,1), got {eps}")));
        }
        let ab = anchors.bounding_ball().ok_or(Error::EmptySet)?;
        let inner = Ball::new(window.center, window.radius - 2);
        if !ab.is_inside(&inner) {
            return Err(Error::Geometry("A must lie inside the window with margin 2".into()));
        }
        let (cut_ball, cert) = match cut {
            Cut::Window => {
                let (l, cert) = escape_radius(window, eps)?;
                (Ball::new(window.center, l), cert)
            }
            Cut::AnchorSet => {
                let g0 = crate::green::GreenTable::shared(d)?.g0();
                let bound = (anchors.size() as f64 / g0).min(ball_capacity_upper(d, ab.radius)?);
                let (gap, cert) = escape_gap(d, bound, eps);
                (Ball::new(ab.center, ab.radius + gap), cert)
            }
        };
        if cut_ball.radius + cut_ball.center.sup_norm() + 2 > Packer::new(d).max_abs() {
            return Err(Error::Geometry("escape radius exceeds coordinate range".into()));
        }
        Ok((ab, cut_ball, cert))
    }

    /// Equilibrium sampler on a site set: `ẽ_A` from the variational
    /// problem for `|A| <= VARIATIONAL_LIMIT` (escape simulation otherwise),
    /// backward parts by h-transform on the window when it is small enough.
    pub fn new(a: SiteSet, window: Ball, eps: f64, table: &GreenTable, stream: RngStream) -> Result<Self> {
        let anchors = AnchorSet::Sites(a);
        Self::validate(&anchors, &window, eps)?;
        let AnchorSet::Sites(a) = &anchors else { unreachable!() };
        let measure = if a.len() <= VARIATIONAL_LIMIT {
            capacity_of(a, table)?.to_measure()?
        } else {
            let rho = a.bounding_ball().map_or(1, |b| b.radius);
            capacity_mc(a, 200, default_outer_radius(a.dim(), rho), stream)?.to_measure()?
        };
        let backward = if window.volume() <= ESCAPE_FIELD_LIMIT {
            BackwardLaw::HTransform(Arc::new(EscapeField::solve(a, &window, &measure, table)?))
        } else {
            BackwardLaw::Rejection
        };
        Self::with_measure(anchors, window, eps, measure, backward)
    }

    pub fn with_measure(anchors: AnchorSet, window: Ball, eps: f64, measure: EquilibriumMeasure, backward: BackwardLaw) -> Result<Self> {
        Self::with_measure_cut(anchors, window, eps, measure, backward, Cut::Window)
    }

    /// As [`Self::with_measure`] with an explicit cut rule.
    pub fn with_measure_cut(anchors: AnchorSet, window: Ball, eps: f64, measure: EquilibriumMeasure, backward: BackwardLaw, cut: Cut) -> Result<Self> {
        let (anchor_ball, cut, cert) = Self::validate_cut(&anchors, &window, eps, cut)?;
        if measure.dim() != anchors.dim() {
            return Err(Error::Incompatible("measure dimension differs from A".into()));
        }
        if let BackwardLaw::HTransform(f) = &backward {
            if f.ball() != &window {
                return Err(Error::Incompatible("escape field box must equal the window".into()));
            }
        }
        Ok(Sampler {
            d: anchors.dim(),
            anchors: Arc::new(anchors),
            anchor_ball,
            window,
            eps,
            cut,
            certificate: cert,
            cap: measure.capacity(),
            measure: Some(Arc::new(measure)),
            backward,
            method: SampleMethod::Equilibrium,
            boundary: Vec::new(),
            boundary_count: 0,
        })
    }

    /// Thinning sampler: needs neither capacity nor equilibrium measure.
    pub fn thinning(anchors: AnchorSet, window: Ball, eps: f64) -> Result<Self> {
        Self::thinning_with_cut(anchors, window, eps, Cut::Window)
    }

    pub fn thinning_with_cut(anchors: AnchorSet, window: Ball, eps: f64, cut: Cut) -> Result<Self> {
        let (anchor_ball, cut, cert) = Self::validate_cut(&anchors, &window, eps, cut)?;
        let (boundary, boundary_count) = match &anchors {
            AnchorSet::Sites(s) => {
                let b = crate::capacity::BoundaryIndexed::new(s)?.boundary;
                let n = b.len() as u64;
                (b, n)
            }
            AnchorSet::Ball(b) => (Vec::new(), b.boundary_count()),
        };
        Ok(Sampler {
            d: anchors.dim(),
            anchors: Arc::new(anchors),
            anchor_ball,
            window,
            eps,
            cut,
            certificate: cert,
            cap: f64::NAN,
            measure: None,
            backward: BackwardLaw::Rejection,
            method: SampleMethod::Thinning,
            boundary,
            boundary_count,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn anchors(&self) -> &Arc<AnchorSet> {
        &self.anchors
    }

    pub fn window(&self) -> &Ball {
        &self.window
    }

    /// Half-paths end on leaving this ball.
    pub fn cut(&self) -> &Ball {
        &self.cut
    }

    /// Bound on the probability that a cut half-path returns to the window.
    pub fn certificate(&self) -> f64 {
        self.certificate
    }

    pub fn cap(&self) -> f64 {
        self.cap
    }

    pub fn method(&self) -> SampleMethod {
        self.method
    }

    pub fn measure(&self) -> Option<&EquilibriumMeasure> {
        self.measure.as_deref()
    }

    pub fn backward_law(&self) -> &BackwardLaw {
        &self.backward
    }

    /// `n` i.i.d. draws from `ẽ_A`.
    pub fn draw_anchors(&self, n: usize, stream: RngStream) -> Result<Vec<LatticePoint>> {
        let m = self.measure.as_ref().ok_or_else(|| Error::Incompatible("thinning sampler has no measure".into()))?;
        let mut rng = stream.rng();
        (0..n).map(|_| m.sample(&mut rng)).collect()
    }

    fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
        if mean <= 0.0 {
            return 0;
        }
        Poisson::new(mean).expect("finite positive mean").sample(rng) as u64
    }

    #[inline]
    fn outside(&self, p: &LatticePoint) -> bool {
        !self.cut.contains(p)
    }

    #[inline]
    fn in_a(&self, p: &LatticePoint) -> bool {
        p.sup_dist(&self.anchor_ball.center) <= self.anchor_ball.radius && self.anchors.contains(p)
    }

    fn forward_walk<R: Rng + ?Sized>(&self, x: LatticePoint, rng: &mut R) -> Vec<u8> {
        let mut p = x;
        let mut steps = Vec::new();
        while !self.outside(&p) {
            let c = random_step(rng, self.d);
            p.step(c);
            steps.push(c);
        }
        steps
    }

    /// One simple-random-walk attempt from `x`: `Some(steps)` if it reaches
    /// the cut radius without visiting `A` at `t >= 1`.
    fn escape_attempt<R: Rng + ?Sized>(&self, x: LatticePoint, rng: &mut R) -> Option<Vec<u8>> {
        let mut p = x;
        let mut steps = Vec::new();
        loop {
            let c = random_step(rng, self.d);
            p.step(c);
            steps.push(c);
            if self.in_a(&p) {
                return None;
            }
            if self.outside(&p) {
                return Some(steps);
            }
        }
    }

    fn avoiding_walk<R: Rng + ?Sized>(&self, x: LatticePoint, rng: &mut R) -> Vec<u8> {
        if self.outside(&x) {
            return Vec::new();
        }
        loop {
            if let Some(s) = self.escape_attempt(x, rng) {
                return s;
            }
        }
    }

    fn h_backward<R: Rng + ?Sized>(&self, field: &EscapeField, x: LatticePoint, rng: &mut R) -> Vec<u8> {
        let grid = field.grid();
        let mut idx = grid.index(&x).expect("anchor inside escape-field box");
        let mut p = x;
        let mut steps = Vec::new();
        let mut w = [0.0f64; 16];
        loop {
            if !steps.is_empty() && !field.is_free(idx) {
                steps.extend(self.avoiding_walk(p, rng));
                return steps;
            }
            let mut total = 0.0;
            for c in 0..2 * self.d {
                w[c] = field.value_at((idx as isize + grid.offset(c as u8)) as usize);
                total += w[c];
            }
            let mut r = rng.random::<f64>() * total;
            let mut pick = 2 * self.d - 1;
            for c in 0..2 * self.d {
                if r < w[c] {
                    pick = c;
                    break;
                }
                r -= w[c];
            }
            while w[pick] == 0.0 {
                pick -= 1;
            }
            let c = pick as u8;
            p.step(c);
            idx = (idx as isize + grid.offset(c)) as usize;
            steps.push(c);
        }
    }

    fn make_trajectory(&self, seed: u64, sample_id: u64, index: usize, anchor: LatticePoint, fwd: Vec<u8>, bwd: Vec<u8>) -> Trajectory {
        let stream = Some(traj_stream(seed, sample_id, index));
        let forward = WalkPath { start: anchor, steps: fwd, stream };
        let backward = WalkPath { start: anchor, steps: bwd, stream };
        let trace = window_trace(&self.window, &forward, &backward);
        Trajectory {
            sample_id,
            index,
            forward,
            backward,
            forward_certificate: self.certificate,
            backward_certificate: self.certificate,
            trace,
        }
    }

    /// Number of trajectories the sample drawn from `(u, stream)` has.
    /// Consumes the same randomness as [`Self::sample`] for the equilibrium
    /// sampler.
    pub fn sample_count(&self, u: f64, stream: RngStream) -> Result<u64> {
        check_u(u)?;
        match self.method {
            SampleMethod::Equilibrium => Ok(Self::poisson(u * self.cap, &mut stream.child2(0, 0).rng())),
            SampleMethod::Thinning => Ok(self.thinning_survivors(u, stream, false).len() as u64),
        }
    }

    /// Accepted proposals of the thinning sampler: anchor, forward steps
    /// (only when `with_forward`) and backward steps.
    fn thinning_survivors(&self, u: f64, stream: RngStream, with_forward: bool) -> Vec<(LatticePoint, Vec<u8>, Vec<u8>)> {
        let (seed, sample_id) = (stream.seed, stream.index);
        let n = Self::poisson(u * self.boundary_count as f64, &mut stream.child2(0, 0).rng());
        (0..n as usize)
            .into_par_iter()
            .filter_map(|i| {
                let mut rng = RngStream::new(seed, sample_id).child2(3, i as u64).rng();
                let x = match self.anchors.as_ref() {
                    AnchorSet::Sites(_) => self.boundary[rng.random_range(0..self.boundary.len())],
                    AnchorSet::Ball(b) => {
                        use crate::capacity::SiteRegion;
                        b.sample_inner_boundary(&mut rng)
                    }
                };
                let bwd = self.escape_attempt(x, &mut rng)?;
                let fwd = if with_forward { self.forward_walk(x, &mut rng) } else { Vec::new() };
                Some((x, fwd, bwd))
            })
            .collect()
    }

    /// Anchors of the trajectories the thinning sampler keeps, without
    /// drawing forward parts.
    pub fn thinning_anchors(&self, u: f64, stream: RngStream) -> Result<Vec<LatticePoint>> {
        check_u(u)?;
        if self.method != SampleMethod::Thinning {
            return Err(Error::Incompatible("not a thinning sampler".into()));
        }
        Ok(self.thinning_survivors(u, stream, false).into_iter().map(|(x, _, _)| x).collect())
    }

    /// Draws the local picture at level `u`. The sample id is the stream
    /// index and trajectory `i` uses its own derived stream.
    pub fn sample(&self, u: f64, stream: RngStream) -> Result<InterlacementSample> {
        check_u(u)?;
        let sample_id = stream.index;
        let seed = stream.seed;
        let trajectories = match self.method {
            SampleMethod::Equilibrium => {
                let n = Self::poisson(u * self.cap, &mut stream.child2(0, 0).rng());
                let m = self.measure.as_ref().expect("equilibrium sampler has a measure");
                (0..n as usize)
                    .into_par_iter()
                    .map(|i| {
                        let mut rng = traj_stream(seed, sample_id, i).rng();
                        let x = m.sample(&mut rng)?;
                        let fwd = self.forward_walk(x, &mut rng);
                        let bwd = match &self.backward {
                            BackwardLaw::HTransform(f) => self.h_backward(f, x, &mut rng),
                            BackwardLaw::Rejection => self.avoiding_walk(x, &mut rng),
                        };
                        Ok(self.make_trajectory(seed, sample_id, i, x, fwd, bwd))
                    })
                    .collect::<Result<Vec<_>>>()?
            }
            SampleMethod::Thinning => {
                let kept = self.thinning_survivors(u, stream, true);
                kept.into_iter()
                    .enumerate()
                    .map(|(i, (x, f, b))| self.make_trajectory(seed, sample_id, i, x, f, b))
                    .collect()
            }
        };
        Ok(InterlacementSample {
            id: sample_id,
            d: self.d,
            u,
            anchors: self.anchors.clone(),
            window: self.window,
            eps_trunc: self.eps,
            escape_radius: self.cut.radius,
            cap: self.cap,
            seed,
            method: self.method,
            trajectories,
        })
    }

    /// Continues every half-path of `s` as a simple random walk from its cut
    /// point until it leaves `B(c, factor · L)` and counts those that come
    /// back into the window.
    pub fn audit(&self, s: &InterlacementSample, factor: i64, stream: RngStream) -> AuditReport {
        let outer = factor.max(2) * self.cut.radius;
        let mut report = AuditReport { eps_trunc: self.eps, ..Default::default() };
        for t in &s.trajectories {
            for (h, path) in [&t.forward, &t.backward].into_iter().enumerate() {
                let mut rng = stream.child2(t.index as u64, h as u64).rng();
                let mut p = path.end();
                report.half_paths += 1;
                while p.sup_dist(&self.cut.center) <= outer {
                    p.step(random_step(&mut rng, self.d));
                    if self.window.contains(&p) {
                        report.reentries += 1;
                        break;
                    }
                }
            }
        }
        report
    }
}

fn check_u(u: f64) -> Result<()> {
    if !(u > 0.0 && u.is_finite()) {
        return Err(Error::InvalidArgument(format!("u must be positive, got {u}")));
    }
    Ok(())
}

/// One-shot equilibrium sample of level `u` on `A` in `window`.
pub fn sample(u: f64, a: &SiteSet, window: Ball, eps: f64, table: &GreenTable, stream: RngStream) -> Result<InterlacementSample> {
    Sampler::new(a.clone(), window, eps, table, stream.child2(9, 9))?.sample(u, stream)
}

/// Union of two independent samples on the same `A` and window: a sample at
/// level `u1 + u2`.
pub fn superpose(s1: &InterlacementSample, s2: &InterlacementSample) -> Result<InterlacementSample> {
    if s1.d != s2.d || s1.window != s2.window || !s1.anchors.same_as(&s2.anchors) {
        return Err(Error::Incompatible("samples differ in A, window or dimension".into()));
    }
    let mut out = s1.clone();
    out.u = s1.u + s2.u;
    out.trajectories.extend(s2.trajectories.iter().cloned());
    Ok(out)
}

/// Splits `s` into the trajectories meeting `B(c, r)` (`c` the window
/// centre) and the rest.
pub fn split_by_ball(s: &InterlacementSample, r: i64) -> Result<(InterlacementSample, InterlacementSample)> {
    if r < 0 || r > s.window.radius {
        return Err(Error::Geometry(format!("split radius {r} outside window radius {}", s.window.radius)));
    }
    let b = Ball::new(s.window.center, r);
    let (hit, miss): (Vec<_>, Vec<_>) = s.trajectories.iter().cloned().partition(|t| t.meets_ball(&b));
    let mut a = s.clone();
    a.trajectories = hit;
    let mut c = s.clone();
    c.trajectories = miss;
    Ok((a, c))
}

/// Sites of `region` visited by some trajectory of `s`.
pub fn occupation_field(s: &InterlacementSample, region: &Ball) -> Result<SiteSet> {
    if !region.is_inside(&s.window) {
        return Err(Error::Geometry("region must lie inside the window".into()));
    }
    let packer = Packer::new(s.d);
    let mut out = SiteSet::new(s.d);
    for t in &s.trajectories {
        for &k in &t.trace {
            if region.contains(&packer.unpack(k)) {
                out.insert_key(k);
            }
        }
    }
    Ok(out)
}
