//! Trace sets of walk segments and the layered sets built from them.
//!
//! `Φ(paths, R)` is the union over paths of `{X(t) : 1 <= t <= R²/2}` clipped
//! to `B(X(0), R)`. `Ψ(ω, A, R)` applies `Φ` to the trajectories of `ω`
//! meeting `A`, each started at its first visit to `A`. The layers are
//! `A¹ = Φ(Y, R)` for the walk `Y` after it leaves `B(R)`, and
//! `Aˢ = Ψ(ωˢ restricted to trajectories avoiding B(r), Aˢ⁻¹, R)`.

use rustc_hash::FxHashMap;

use crate::error::{Error, Result};
use crate::lattice::{Ball, LatticePoint, SiteSet};
use crate::rng::RngStream;
use crate::sampler::{AnchorSet, Cut, InterlacementSample, Sampler};
use crate::walk::{fixed_length, walk_until, StopRule, WalkPath};

/// `⌊R²/2⌋`, the last time index used by `Φ`.
pub fn phi_horizon(r: i64) -> usize {
    (r * r / 2) as usize
}

/// `Φ(paths, R)`.
pub fn phi_set(paths: &[WalkPath], r: i64) -> Result<SiteSet> {
    if r < 1 {
        return Err(Error::InvalidArgument(format!("R must be at least 1, got {r}")));
    }
    let d = paths.first().map_or(3, |p| p.start.dim());
    let mut out = SiteSet::new(d);
    for p in paths {
        phi_into(p, r, &mut out, |_| {})?;
    }
    Ok(out)
}

fn phi_into(p: &WalkPath, r: i64, out: &mut SiteSet, mut on_new: impl FnMut(LatticePoint)) -> Result<()> {
    let horizon = phi_horizon(r);
    if p.len() < horizon {
        return Err(Error::InvalidArgument(format!("path of length {} shorter than R²/2 = {horizon}", p.len())));
    }
    let ball = Ball::new(p.start, r);
    for x in p.points().skip(1).take(horizon) {
        if ball.contains(&x) && out.insert(x) {
            on_new(x);
        }
    }
    Ok(())
}

/// Entry paths of the trajectories of `s` that meet `a`, started at their
/// first visit and extended to at least `R²/2` steps.
fn entry_paths(s: &InterlacementSample, a: &SiteSet, r: i64) -> Vec<((u64, usize), WalkPath)> {
    let horizon = phi_horizon(r);
    s.trajectories
        .iter()
        .filter_map(|t| {
            let mut p = t.from_first_entry(|x| a.contains(x))?;
            if p.len() < horizon {
                let mut tt = t.clone();
                tt.extend_forward(horizon - p.len());
                p = tt.from_first_entry(|x| a.contains(x))?;
            }
            Some(((t.sample_id, t.index), p))
        })
        .collect()
}

/// `Ψ(s, A, R)`.
pub fn psi_set(s: &InterlacementSample, a: &SiteSet, r: i64) -> Result<SiteSet> {
    let paths: Vec<WalkPath> = entry_paths(s, a, r).into_iter().map(|(_, p)| p).collect();
    let mut out = SiteSet::new(s.d);
    for p in &paths {
        phi_into(p, r, &mut out, |_| {})?;
    }
    Ok(out)
}

/// Which trajectory put a site into a layer, and where it first met the
/// previous layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Witness {
    /// `(sample id, index)`; layer 1 uses `(0, 0)` for the walk `Y`.
    pub trajectory: (u64, usize),
    pub entry: LatticePoint,
}

#[derive(Clone, Debug)]
pub struct LayerSet {
    pub s: usize,
    pub sites: SiteSet,
    pub r: i64,
    pub big_r: i64,
    pub u: f64,
    pub sample_id: Option<u64>,
    pub witnesses: FxHashMap<LatticePoint, Witness>,
    /// Entry paths of the contributing trajectories, keyed by label.
    pub paths: FxHashMap<(u64, usize), WalkPath>,
    /// Trajectories sampled on the previous layer, and those of them kept
    /// after discarding the ones meeting `B(r)`.
    pub sampled: usize,
    pub kept: usize,
}

#[derive(Clone, Debug)]
pub struct LayerParams {
    pub d: usize,
    pub s_max: usize,
    pub r: i64,
    pub big_r: i64,
    pub u: f64,
    /// Start of the walk whose post-exit segment gives the first layer.
    pub start: LatticePoint,
    pub eps_trunc: f64,
}

impl LayerParams {
    pub fn new(d: usize, s_max: usize, r: i64, big_r: i64, u: f64) -> Self {
        LayerParams { d, s_max, r, big_r, u, start: LatticePoint::origin(d), eps_trunc: 1e-2 }
    }
}

/// Builds `A¹, ..., A^{s_max}` from independent randomness drawn from
/// `stream`: child 0 drives the walk `Y`, child `s` the sample for layer `s`.
pub fn build_layers(params: &LayerParams, stream: RngStream) -> Result<Vec<LayerSet>> {
    let LayerParams { d, s_max, r, big_r, u, start, eps_trunc } = *params;
    crate::lattice::check_dim(d)?;
    if r >= big_r || r < 0 {
        return Err(Error::InvalidArgument(format!("need 0 <= r < R, got r={r}, R={big_r}")));
    }
    if s_max < 1 {
        return Err(Error::InvalidArgument("s_max must be at least 1".into()));
    }
    if start.dim() != d || start.sup_norm() > big_r {
        return Err(Error::InvalidArgument("start must lie in B(R)".into()));
    }
    let horizon = phi_horizon(big_r);
    let exit_ball = Ball::centered(d, big_r);
    let (x, _) = walk_until(start, StopRule::ExitBall(&exit_ball), stream.child2(0, 0))?;
    let y = fixed_length(x.end(), horizon, stream.child2(0, 1));
    let mut first = SiteSet::new(d);
    let mut witnesses = FxHashMap::default();
    phi_into(&y, big_r, &mut first, |p| {
        witnesses.insert(p, Witness { trajectory: (0, 0), entry: y.start });
    })?;
    let mut paths = FxHashMap::default();
    paths.insert((0, 0), y);
    let mut layers = vec![LayerSet { s: 1, sites: first, r, big_r, u, sample_id: None, witnesses, paths, sampled: 0, kept: 0 }];
    let small = Ball::centered(d, r);
    for s in 2..=s_max {
        let prev = &layers[s - 2];
        if prev.sites.is_empty() {
            layers.push(LayerSet {
                s,
                sites: SiteSet::new(d),
                r,
                big_r,
                u,
                sample_id: None,
                witnesses: FxHashMap::default(),
                paths: FxHashMap::default(),
                sampled: 0,
                kept: 0,
            });
            continue;
        }
        let ab = prev.sites.bounding_ball().expect("nonempty layer");
        let reach = ab.center.sup_norm() + ab.radius;
        let window = Ball::centered(d, reach.max(r) + 2);
        let sampler = Sampler::thinning_with_cut(AnchorSet::Sites(prev.sites.clone()), window, eps_trunc, Cut::AnchorSet)?;
        let smp = sampler.sample(u, stream.child2(s as u64, 0))?;
        let sampled = smp.len();
        let mut kept_sample = smp.clone();
        kept_sample.trajectories.retain(|t| !t.meets_ball(&small));
        let kept = kept_sample.len();
        let mut sites = SiteSet::new(d);
        let mut witnesses = FxHashMap::default();
        let mut paths = FxHashMap::default();
        for (label, p) in entry_paths(&kept_sample, &prev.sites, big_r) {
            let entry = p.start;
            phi_into(&p, big_r, &mut sites, |q| {
                witnesses.insert(q, Witness { trajectory: label, entry });
            })?;
            paths.insert(label, p);
        }
        layers.push(LayerSet { s, sites, r, big_r, u, sample_id: Some(smp.id), witnesses, paths, sampled, kept });
    }
    Ok(layers)
}

/// Checks every witness chain: each site of layer `s` is visited by its
/// witness path within the `Φ` horizon and ball, the witness path starts at
/// a site of layer `s-1`, and that site's own witness path visits it.
/// Returns the number of sites checked.
pub fn verify_witness_chains(layers: &[LayerSet]) -> Result<usize> {
    let mut checked = 0;
    for (i, layer) in layers.iter().enumerate() {
        let horizon = phi_horizon(layer.big_r);
        for site in layer.sites.iter() {
            let w = layer.witnesses.get(&site).ok_or_else(|| Error::Geometry(format!("no witness for {site} in layer {}", layer.s)))?;
            let path = layer.paths.get(&w.trajectory).ok_or_else(|| Error::Geometry("missing witness path".into()))?;
            if path.start != w.entry || !path.points().skip(1).take(horizon).any(|p| p == site) {
                return Err(Error::Geometry(format!("witness path does not visit {site}")));
            }
            if !Ball::new(w.entry, layer.big_r).contains(&site) {
                return Err(Error::Geometry(format!("{site} outside the witness ball")));
            }
            if i > 0 {
                let prev = &layers[i - 1];
                if !prev.sites.contains(&w.entry) {
                    return Err(Error::Geometry(format!("entry {} not in layer {}", w.entry, prev.s)));
                }
                let pw = prev.witnesses[&w.entry];
                let ppath = &prev.paths[&pw.trajectory];
                if !ppath.points().any(|p| p == w.entry) {
                    return Err(Error::Geometry("consecutive witnesses do not intersect".into()));
                }
            }
            checked += 1;
        }
    }
    Ok(checked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unit_radius_gives_empty_set() {
        let p = fixed_length(LatticePoint::origin(4), 10, RngStream::new(1, 0));
        assert!(phi_set(&[p], 1).unwrap().is_empty());
    }

    #[test]
    fn short_path_rejected() {
        let p = fixed_length(LatticePoint::origin(3), 5, RngStream::new(1, 0));
        assert!(matches!(phi_set(&[p], 4), Err(Error::InvalidArgument(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn phi_respects_ball_and_cardinality(seed in 0u64..1000, n in 1usize..5, r in 1i64..12) {
            let paths: Vec<WalkPath> = (0..n as u64)
                .map(|i| fixed_length(LatticePoint::axis(5, 0, 3 * i as i64), phi_horizon(r) + 3, RngStream::new(seed, i)))
                .collect();
            let phi = phi_set(&paths, r).unwrap();
            prop_assert!(phi.len() <= n * phi_horizon(r));
            for x in phi.iter() {
                prop_assert!(paths.iter().any(|p| Ball::new(p.start, r).contains(&x)));
            }
        }
    }

    #[test]
    fn layers_nested_in_growing_balls_with_valid_witnesses() {
        let params = LayerParams { u: 0.5, ..LayerParams::new(5, 3, 1, 6, 0.5) };
        for k in 0..3 {
            let layers = build_layers(&params, RngStream::new(21, k)).unwrap();
            assert_eq!(layers.len(), 3);
            let y = &layers[0].paths[&(0, 0)];
            for x in layers[0].sites.iter() {
                assert!(Ball::new(y.start, 6).contains(&x));
            }
            for l in &layers {
                let b = Ball::centered(5, (l.s as i64 + 1) * 6);
                assert!(l.sites.iter().all(|x| b.contains(&x)), "layer {} escapes B((s+1)R)", l.s);
            }
            assert_eq!(verify_witness_chains(&layers).unwrap(), layers.iter().map(|l| l.sites.len()).sum::<usize>());
        }
        assert!(build_layers(&LayerParams::new(5, 2, 6, 6, 1.0), RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn psi_of_sample_missing_a_is_empty() {
        let params = LayerParams::new(5, 2, 1, 4, 0.3);
        let layers = build_layers(&params, RngStream::new(3, 3)).unwrap();
        let far = SiteSet::from_points(5, [LatticePoint::axis(5, 0, 200)]);
        let a = layers[0].sites.clone();
        let window = Ball::centered(5, 12);
        let smp = Sampler::thinning_with_cut(AnchorSet::Sites(a.clone()), window, 1e-2, Cut::AnchorSet)
            .unwrap()
            .sample(0.5, RngStream::new(4, 0))
            .unwrap();
        assert!(psi_set(&smp, &far, 4).unwrap().is_empty());
        let psi = psi_set(&smp, &a, 4).unwrap();
        for x in psi.iter() {
            assert!(smp.trajectories.iter().any(|t| {
                let e = t.from_first_entry(|q| a.contains(q)).unwrap();
                Ball::new(e.start, 4).contains(&x)
            }));
        }
    }
}
