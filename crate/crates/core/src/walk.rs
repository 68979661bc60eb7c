//! Simple random walk paths and stopping rules.

use rand::Rng;

use crate::error::{Error, Result};
use crate::lattice::{Ball, LatticePoint, SiteSet};
use crate::rng::RngStream;

/// Uniform draw of one of the `2d` unit steps.
#[inline]
pub fn random_step<R: Rng + ?Sized>(rng: &mut R, d: usize) -> u8 {
    rng.random_range(0..2 * d as u32) as u8
}

/// A nearest-neighbour path stored as its start point plus step codes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WalkPath {
    pub start: LatticePoint,
    pub steps: Vec<u8>,
    pub stream: Option<RngStream>,
}

impl WalkPath {
    pub fn new(start: LatticePoint) -> Self {
        WalkPath { start, steps: Vec::new(), stream: None }
    }

    /// Number of steps taken.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// `X(0), X(1), ..., X(len)`.
    pub fn points(&self) -> impl Iterator<Item = LatticePoint> + '_ {
        let mut cur = self.start;
        std::iter::once(cur).chain(self.steps.iter().map(move |&c| {
            cur.step(c);
            cur
        }))
    }

    pub fn end(&self) -> LatticePoint {
        let mut p = self.start;
        for &c in &self.steps {
            p.step(c);
        }
        p
    }

    pub fn point_at(&self, t: usize) -> LatticePoint {
        let mut p = self.start;
        for &c in &self.steps[..t] {
            p.step(c);
        }
        p
    }

    /// Checks that consecutive points differ by one unit in one coordinate.
    pub fn is_nearest_neighbor(&self) -> bool {
        let pts: Vec<_> = self.points().collect();
        pts.windows(2).all(|w| {
            let diff = w[1] - w[0];
            diff.coords().iter().map(|c| c.abs()).sum::<i64>() == 1
        })
    }
}

/// When to stop a walk. A hit rule alone may never terminate, so it must sit
/// inside a [`StopRule::Composite`] together with a length or exit cap.
#[derive(Clone, Copy, Debug)]
pub enum StopRule<'a> {
    Length(usize),
    ExitBall(&'a Ball),
    HitSet(&'a SiteSet),
    Composite(&'a [StopRule<'a>]),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopCause {
    Length,
    Exit,
    Hit,
}

impl StopRule<'_> {
    fn is_capped(&self) -> bool {
        match self {
            StopRule::Length(_) | StopRule::ExitBall(_) => true,
            StopRule::HitSet(_) => false,
            StopRule::Composite(rules) => rules.iter().any(|r| r.is_capped()),
        }
    }

    /// Cause triggered at point `p` after `t` steps. At equal times a hit
    /// takes precedence over an exit, which takes precedence over length.
    fn triggered(&self, p: &LatticePoint, t: usize) -> Option<StopCause> {
        match self {
            StopRule::Length(n) => (t >= *n).then_some(StopCause::Length),
            StopRule::ExitBall(b) => (!b.contains(p)).then_some(StopCause::Exit),
            StopRule::HitSet(k) => k.contains(p).then_some(StopCause::Hit),
            StopRule::Composite(rules) => {
                let mut best: Option<StopCause> = None;
                for r in rules.iter() {
                    if let Some(c) = r.triggered(p, t) {
                        best = Some(match (best, c) {
                            (_, StopCause::Hit) | (None, _) => c,
                            (Some(StopCause::Hit), _) => StopCause::Hit,
                            (Some(StopCause::Exit), _) => StopCause::Exit,
                            (Some(StopCause::Length), c) => c,
                        });
                    }
                }
                best
            }
        }
    }
}

/// Runs a simple random walk from `start` until `rule` fires. Hitting uses
/// `H(K) = inf{t >= 0 : X(t) ∈ K}`, so a start inside `K` stops at once.
pub fn walk_until(start: LatticePoint, rule: StopRule<'_>, stream: RngStream) -> Result<(WalkPath, StopCause)> {
    if !rule.is_capped() {
        return Err(Error::InvalidArgument(
            "hitting rule needs a length or exit cap".into(),
        ));
    }
    let d = start.dim();
    let mut rng = stream.rng();
    let mut path = WalkPath { start, steps: Vec::new(), stream: Some(stream) };
    let mut cur = start;
    let mut t = 0usize;
    loop {
        if let Some(cause) = rule.triggered(&cur, t) {
            return Ok((path, cause));
        }
        let c = random_step(&mut rng, d);
        cur.step(c);
        path.steps.push(c);
        t += 1;
    }
}

/// A walk of exactly `n` steps.
pub fn fixed_length(start: LatticePoint, n: usize, stream: RngStream) -> WalkPath {
    let d = start.dim();
    let mut rng = stream.rng();
    let steps = (0..n).map(|_| random_step(&mut rng, d)).collect();
    WalkPath { start, steps, stream: Some(stream) }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn start_in_set_stops_at_time_zero() {
        let k = SiteSet::from_points(3, [LatticePoint::origin(3)]);
        let ball = Ball::centered(3, 10);
        let rules = [StopRule::HitSet(&k), StopRule::ExitBall(&ball)];
        let (p, cause) = walk_until(LatticePoint::origin(3), StopRule::Composite(&rules), RngStream::new(1, 0)).unwrap();
        assert_eq!(p.len(), 0);
        assert_eq!(cause, StopCause::Hit);
    }

    #[test]
    fn uncapped_hit_rule_rejected() {
        let k = SiteSet::from_points(3, [LatticePoint::new(&[5, 0, 0])]);
        let r = walk_until(LatticePoint::origin(3), StopRule::HitSet(&k), RngStream::new(1, 0));
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
        let rules = [StopRule::HitSet(&k)];
        assert!(walk_until(LatticePoint::origin(3), StopRule::Composite(&rules), RngStream::new(1, 0)).is_err());
    }

    #[test]
    fn reproducible_and_nearest_neighbor() {
        let a = fixed_length(LatticePoint::origin(5), 500, RngStream::new(42, 9));
        let b = fixed_length(LatticePoint::origin(5), 500, RngStream::new(42, 9));
        assert_eq!(a, b);
        assert!(a.is_nearest_neighbor());
        assert_eq!(a.points().count(), 501);
        assert_eq!(a.points().last().unwrap(), a.end());
    }

    /// Exhaustive enumeration of all 2- and 3-step paths gives the law of the
    /// exit time from `B(0,1)` on {2, 3}; the sampler must match it.
    #[test]
    fn exit_time_from_unit_ball_matches_enumeration() {
        let d = 3;
        let ball = Ball::centered(d, 1);
        let mut exit_at = [0u64; 4];
        let n = 2 * d as u8;
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    let mut p = LatticePoint::origin(d);
                    let mut t_exit = None;
                    for (t, s) in [a, b, c].into_iter().enumerate() {
                        p.step(s);
                        if !ball.contains(&p) {
                            t_exit = Some(t + 1);
                            break;
                        }
                    }
                    if let Some(t) = t_exit {
                        exit_at[t] += 1;
                    }
                }
            }
        }
        let total = (n as f64).powi(3);
        let p2 = exit_at[2] as f64 / total;
        let p3 = exit_at[3] as f64 / total;
        assert_eq!(exit_at[1], 0);
        assert!((p2 - 1.0 / 6.0).abs() < 1e-12);

        let reps = 20_000u64;
        let (mut c2, mut c3) = (0u64, 0u64);
        for i in 0..reps {
            let (path, cause) = walk_until(LatticePoint::origin(d), StopRule::ExitBall(&ball), RngStream::new(3, i)).unwrap();
            assert_eq!(cause, StopCause::Exit);
            assert!(path.len() >= 2);
            match path.len() {
                2 => c2 += 1,
                3 => c3 += 1,
                _ => {}
            }
        }
        for (count, p) in [(c2, p2), (c3, p3)] {
            let est = count as f64 / reps as f64;
            let sigma = (p * (1.0 - p) / reps as f64).sqrt();
            assert!((est - p).abs() < 3.0 * sigma, "est {est} vs {p}");
        }
    }

    #[test]
    fn coordinate_variance_is_n_over_d() {
        let d = 5;
        let n = 10_000;
        let reps = 10_000u64;
        let mut sq = Vec::with_capacity(reps as usize);
        for i in 0..reps {
            let w = fixed_length(LatticePoint::origin(d), n, RngStream::new(11, i));
            let e = w.end();
            sq.push(e.coords().iter().map(|&c| (c * c) as f64).sum::<f64>() / d as f64);
        }
        let mean = sq.iter().sum::<f64>() / reps as f64;
        let var = sq.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
        let se = (var / reps as f64).sqrt();
        let target = n as f64 / d as f64;
        assert!((mean - target).abs() < 3.0 * se, "mean {mean} target {target} se {se}");
    }

    #[test]
    fn step_frequencies_uniform() {
        let d = 4;
        let w = fixed_length(LatticePoint::origin(d), 200_000, RngStream::new(5, 0));
        let mut counts = vec![0u64; 2 * d];
        for &s in &w.steps {
            counts[s as usize] += 1;
        }
        let n = w.len() as f64;
        let p = 1.0 / (2 * d) as f64;
        let sigma = (n * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n * p).abs() < 5.0 * sigma);
        }
    }
}
