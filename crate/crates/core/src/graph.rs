//! The graph whose vertices are trajectories and whose edges join
//! trajectories with intersecting window traces.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rustc_hash::FxHashMap;

use crate::error::{Error, Result};
use crate::lattice::{Ball, Packer};
use crate::sampler::InterlacementSample;

/// `(sample id, trajectory index)`.
pub type VertexLabel = (u64, usize);

#[derive(Clone, Debug)]
pub struct IntersectionGraph {
    d: usize,
    window: Ball,
    labels: Vec<VertexLabel>,
    label_index: FxHashMap<VertexLabel, u32>,
    adjacency: Vec<Vec<u32>>,
    site_index: FxHashMap<u128, Vec<u32>>,
}

/// Builds the graph in one pass over the traces: every site's visitor list
/// yields a clique, and cliques are merged with deduplication.
pub fn build_graph(samples: &[InterlacementSample]) -> Result<IntersectionGraph> {
    let first = samples.first().ok_or_else(|| Error::InvalidArgument("no samples".into()))?;
    if samples.iter().any(|s| s.window != first.window || s.d != first.d) {
        return Err(Error::Incompatible("samples have different windows".into()));
    }
    let mut labels = Vec::new();
    let mut label_index = FxHashMap::default();
    let mut site_index: FxHashMap<u128, Vec<u32>> = FxHashMap::default();
    for s in samples {
        for t in &s.trajectories {
            let v = labels.len() as u32;
            let label = (t.sample_id, t.index);
            if label_index.insert(label, v).is_some() {
                return Err(Error::Incompatible(format!("duplicate trajectory label {}:{}", label.0, label.1)));
            }
            labels.push(label);
            for &k in &t.trace {
                site_index.entry(k).or_default().push(v);
            }
        }
    }
    let mut edges: Vec<(u32, u32)> = Vec::new();
    for visitors in site_index.values() {
        for (i, &a) in visitors.iter().enumerate() {
            for &b in &visitors[i + 1..] {
                edges.push((a.min(b), a.max(b)));
            }
        }
    }
    edges.sort_unstable();
    edges.dedup();
    let mut adjacency = vec![Vec::new(); labels.len()];
    for &(a, b) in &edges {
        adjacency[a as usize].push(b);
        adjacency[b as usize].push(a);
    }
    for nb in adjacency.iter_mut() {
        nb.sort_unstable();
    }
    Ok(IntersectionGraph { d: first.d, window: first.window, labels, label_index, adjacency, site_index })
}

/// Summary of distances between trajectories meeting an inner ball.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DiameterStat {
    pub vertices: usize,
    pub pairs: usize,
    pub disconnected_pairs: usize,
    /// Largest finite distance among the pairs.
    pub max_distance: Option<u32>,
}

impl IntersectionGraph {
    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn vertex_count(&self) -> usize {
        self.labels.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(|a| a.len()).sum::<usize>() / 2
    }

    pub fn label(&self, v: u32) -> VertexLabel {
        self.labels[v as usize]
    }

    pub fn vertex(&self, label: VertexLabel) -> Result<u32> {
        self.label_index.get(&label).copied().ok_or_else(|| Error::UnknownVertex(format!("{}:{}", label.0, label.1)))
    }

    pub fn neighbors(&self, v: u32) -> &[u32] {
        &self.adjacency[v as usize]
    }

    /// Edges `(a, b)` with `a < b`, sorted.
    pub fn edges(&self) -> Vec<(u32, u32)> {
        let mut e: Vec<(u32, u32)> = self
            .adjacency
            .iter()
            .enumerate()
            .flat_map(|(a, nb)| nb.iter().filter(move |&&b| b > a as u32).map(move |&b| (a as u32, b)))
            .collect();
        e.sort_unstable();
        e
    }

    /// Trajectories visiting a site.
    pub fn visitors(&self, key: u128) -> &[u32] {
        self.site_index.get(&key).map_or(&[], |v| v.as_slice())
    }

    /// BFS distances from `v`; `None` for unreachable vertices.
    pub fn distances_from(&self, v: u32) -> Vec<Option<u32>> {
        let mut dist = vec![None; self.labels.len()];
        dist[v as usize] = Some(0);
        let mut queue = VecDeque::from([v]);
        while let Some(a) = queue.pop_front() {
            let da = dist[a as usize].expect("queued vertices have distances");
            for &b in &self.adjacency[a as usize] {
                if dist[b as usize].is_none() {
                    dist[b as usize] = Some(da + 1);
                    queue.push_back(b);
                }
            }
        }
        dist
    }

    /// Graph distance `ρ(v, w)`; `Ok(None)` if unreachable.
    pub fn distance(&self, v: VertexLabel, w: VertexLabel) -> Result<Option<u32>> {
        let a = self.vertex(v)?;
        let b = self.vertex(w)?;
        Ok(self.distances_from(a)[b as usize])
    }

    /// Distances among trajectories whose trace meets `B(c, radius)` with
    /// `c` the window centre (by default a quarter of the window).
    pub fn window_diameter(&self, samples: &[InterlacementSample], radius: Option<i64>) -> DiameterStat {
        let r = radius.unwrap_or(self.window.radius / 4);
        let inner = Ball::new(self.window.center, r);
        let packer = Packer::new(self.d);
        let mut members = Vec::new();
        for s in samples {
            for t in &s.trajectories {
                if t.trace.iter().any(|&k| inner.contains(&packer.unpack(k))) {
                    if let Ok(v) = self.vertex((t.sample_id, t.index)) {
                        members.push(v);
                    }
                }
            }
        }
        let mut stat = DiameterStat { vertices: members.len(), pairs: 0, disconnected_pairs: 0, max_distance: None };
        for (i, &a) in members.iter().enumerate() {
            let dist = self.distances_from(a);
            for &b in &members[i + 1..] {
                stat.pairs += 1;
                match dist[b as usize] {
                    Some(x) => stat.max_distance = Some(stat.max_distance.map_or(x, |m| m.max(x))),
                    None => stat.disconnected_pairs += 1,
                }
            }
        }
        stat
    }

    /// Edge list: a header line, then `sample:index sample:index` per edge.
    pub fn edge_list_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# vertices {} edges {}", self.vertex_count(), self.edge_count());
        for (a, b) in self.edges() {
            let (la, lb) = (self.label(a), self.label(b));
            let _ = writeln!(s, "{}:{} {}:{}", la.0, la.1, lb.0, lb.1);
        }
        s
    }

    /// CSV `visitors,sites`: how many sites are visited by exactly k
    /// trajectories.
    pub fn site_index_summary(&self) -> String {
        let mut hist: Vec<usize> = Vec::new();
        for v in self.site_index.values() {
            if hist.len() <= v.len() {
                hist.resize(v.len() + 1, 0);
            }
            hist[v.len()] += 1;
        }
        let mut s = String::from("visitors,sites\n");
        for (k, &c) in hist.iter().enumerate().filter(|(_, &c)| c > 0) {
            let _ = writeln!(s, "{k},{c}");
        }
        s
    }

    /// CSV `separation_bin,rho,count` over all pairs of trajectories, binned
    /// dyadically by the sup-distance of their anchors (`bin k` holds
    /// `[2^k, 2^{k+1})`, bin 0 also holds 0); `rho` is `inf` when
    /// disconnected.
    pub fn distance_histogram(&self, samples: &[InterlacementSample]) -> Result<String> {
        let mut anchors = vec![None; self.labels.len()];
        for s in samples {
            for t in &s.trajectories {
                anchors[self.vertex((t.sample_id, t.index))? as usize] = Some(t.anchor());
            }
        }
        let mut counts: std::collections::BTreeMap<(u32, Option<u32>), usize> = Default::default();
        for a in 0..self.labels.len() {
            let dist = self.distances_from(a as u32);
            for b in a + 1..self.labels.len() {
                let (Some(x), Some(y)) = (anchors[a], anchors[b]) else { continue };
                let sep = x.sup_dist(&y).max(1) as u64;
                let bin = 63 - sep.leading_zeros();
                *counts.entry((bin, dist[b])).or_default() += 1;
            }
        }
        let mut s = String::from("separation_bin,rho,count\n");
        for ((bin, rho), c) in counts {
            let r = rho.map_or_else(|| "inf".to_string(), |x| x.to_string());
            let _ = writeln!(s, "{bin},{r},{c}");
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::green::GreenTable;
    use crate::lattice::{LatticePoint, SiteSet};
    use crate::rng::RngStream;
    use crate::sampler::Sampler;
    use crate::walk::WalkPath;
    use rand::Rng;

    fn samples(n: usize, u: f64, seed: u64) -> Vec<InterlacementSample> {
        let t = GreenTable::shared(3).unwrap();
        let s = Sampler::new(Ball::centered(3, 1).to_site_set(), Ball::centered(3, 4), 0.05, &t, RngStream::new(0, 0)).unwrap();
        (0..n as u64).map(|k| s.sample(u, RngStream::new(seed, k)).unwrap()).collect()
    }

    /// Pairwise intersection of traces recomputed from the raw paths.
    fn brute_force_edges(samples: &[InterlacementSample]) -> Vec<(VertexLabel, VertexLabel)> {
        let traces: Vec<(VertexLabel, SiteSet)> = samples
            .iter()
            .flat_map(|s| {
                s.trajectories.iter().map(|t| {
                    let pts = t.points().filter(|p| s.window.contains(p));
                    ((t.sample_id, t.index), SiteSet::from_points(s.d, pts))
                })
            })
            .collect();
        let mut out = Vec::new();
        for i in 0..traces.len() {
            for j in i + 1..traces.len() {
                if traces[i].1.iter().any(|p| traces[j].1.contains(&p)) {
                    out.push((traces[i].0, traces[j].0));
                }
            }
        }
        out.sort_unstable();
        out
    }

    #[test]
    fn matches_brute_force_on_small_instances() {
        let mut rng = RngStream::new(77, 0).rng();
        for case in 0..50u64 {
            let n = rng.random_range(1..=3);
            let ss = samples(n, 1.5, 1000 + case);
            if ss.iter().map(|s| s.len()).sum::<usize>() > 20 {
                continue;
            }
            let g = build_graph(&ss).unwrap();
            let mut got: Vec<(VertexLabel, VertexLabel)> =
                g.edges().into_iter().map(|(a, b)| { let (x, y) = (g.label(a), g.label(b)); (x.min(y), x.max(y)) }).collect();
            got.sort_unstable();
            assert_eq!(got, brute_force_edges(&ss), "case {case}");
        }
    }

    #[test]
    fn single_and_shared_site() {
        let mut ss = samples(1, 3.0, 5);
        ss[0].trajectories.truncate(1);
        let g = build_graph(&ss).unwrap();
        assert_eq!((g.vertex_count(), g.edge_count()), (1, 0));
        // two hand-made trajectories sharing exactly the site (1,0,0)
        let mut s = ss[0].clone();
        let mk = |start: [i64; 3], steps: Vec<u8>, idx: usize| {
            let mut t = s.trajectories[0].clone();
            t.index = idx;
            t.forward = WalkPath { start: LatticePoint::new(&start), steps, stream: None };
            t.backward = WalkPath::new(LatticePoint::new(&start));
            let packer = Packer::new(3);
            let mut tr: Vec<u128> = t.forward.points().map(|p| packer.pack(&p).unwrap()).collect();
            tr.sort_unstable();
            tr.dedup();
            t.trace = tr;
            t
        };
        let a = mk([0, 0, 0], vec![0], 0);
        let b = mk([1, 1, 0], vec![3], 1);
        s.trajectories = vec![a, b];
        let g = build_graph(&[s]).unwrap();
        assert_eq!(g.edges(), vec![(0, 1)]);
    }

    #[test]
    fn distance_is_a_metric() {
        let ss = samples(4, 2.0, 9);
        let g = build_graph(&ss).unwrap();
        let n = g.vertex_count() as u32;
        assert!(n > 3);
        let all: Vec<Vec<Option<u32>>> = (0..n).map(|v| g.distances_from(v)).collect();
        let mut rng = RngStream::new(10, 0).rng();
        for _ in 0..1000 {
            let (a, b, c) = (rng.random_range(0..n) as usize, rng.random_range(0..n) as usize, rng.random_range(0..n) as usize);
            assert_eq!(all[a][a], Some(0));
            assert_eq!(all[a][b], all[b][a]);
            if let (Some(ab), Some(bc)) = (all[a][b], all[b][c]) {
                assert!(all[a][c].unwrap() <= ab + bc);
            }
        }
        assert!(matches!(g.distance((999, 0), g.label(0)), Err(Error::UnknownVertex(_))));
    }

    #[test]
    fn exports_have_headers() {
        let ss = samples(2, 1.0, 11);
        let g = build_graph(&ss).unwrap();
        assert!(g.edge_list_text().starts_with("# vertices"));
        assert!(g.site_index_summary().starts_with("visitors,sites\n"));
        let h = g.distance_histogram(&ss).unwrap();
        assert!(h.starts_with("separation_bin,rho,count\n"));
        let total: usize = h.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap()).sum();
        let n = g.vertex_count();
        assert_eq!(total, n * (n - 1) / 2);
        let st = g.window_diameter(&ss, None);
        assert!(st.pairs <= n * (n - 1) / 2);
    }
}
