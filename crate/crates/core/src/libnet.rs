// SPDX-License-Identifier: Apache-2.0

//! Library co-occurrence network and its community structure.
//!
//! Two libraries co-occur when one project imports both. Edges carry a
//! smoothed pointwise mutual information and only positive associations are
//! kept. Communities come from Louvain modularity optimisation: the first
//! level of the hierarchy gives the fine partition, the converged top level
//! gives the coarse one.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::Result;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CooccurrenceCounts {
    pub project_counts: BTreeMap<String, usize>,
    /// Keyed by the lexicographically ordered pair.
    pub pair_counts: BTreeMap<(String, String), usize>,
    pub n_projects: usize,
}

pub fn cooccurrence_counts<'a, I>(project_library_sets: I) -> CooccurrenceCounts
where
    I: IntoIterator<Item = &'a BTreeSet<String>>,
{
    let mut c = CooccurrenceCounts::default();
    for libs in project_library_sets {
        if libs.is_empty() {
            continue;
        }
        c.n_projects += 1;
        let v: Vec<&String> = libs.iter().collect();
        for (i, a) in v.iter().enumerate() {
            *c.project_counts.entry((*a).clone()).or_default() += 1;
            for b in &v[i + 1..] {
                *c.pair_counts.entry(((*a).clone(), (*b).clone())).or_default() += 1;
            }
        }
    }
    c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibraryGraph {
    pub nodes: Vec<String>,
    /// `(a, b, pmi)` with `a < b`.
    pub edges: Vec<(String, String, f64)>,
    pub project_counts: BTreeMap<String, usize>,
    pub pair_counts: BTreeMap<(String, String), usize>,
    pub n_projects: usize,
    /// Pairs whose PMI was undefined (zero smoothed marginal).
    pub skipped_pairs: usize,
}

/// Smoothed PMI of one pair. Each of the `K = L(L-1)/2` possible pairs gets
/// `alpha` pseudo-projects, so a library's marginal gains `alpha (L-1)`.
pub fn pmi(c_ab: usize, c_a: usize, c_b: usize, n: usize, n_libraries: usize, alpha: f64) -> Option<f64> {
    let l = n_libraries as f64;
    let k_pairs = l * (l - 1.0) / 2.0;
    let k_x = l - 1.0;
    let num = (c_ab as f64 + alpha) * (n as f64 + alpha * k_pairs);
    let den = (c_a as f64 + alpha * k_x) * (c_b as f64 + alpha * k_x);
    (num > 0.0 && den > 0.0).then(|| (num / den).ln())
}

pub fn pmi_graph(counts: &CooccurrenceCounts, alpha: f64, threshold: f64) -> Result<LibraryGraph> {
    if counts.n_projects == 0 {
        return Err(crate::Error::invalid("no projects"));
    }
    if !(alpha >= 0.0) {
        return Err(crate::Error::invalid("smoothing alpha must be non-negative"));
    }
    let l = counts.project_counts.len();
    let mut edges = Vec::new();
    let mut skipped = 0;
    for ((a, b), &c_ab) in &counts.pair_counts {
        if a == b || c_ab == 0 {
            continue;
        }
        let c_a = counts.project_counts.get(a).copied().unwrap_or(0);
        let c_b = counts.project_counts.get(b).copied().unwrap_or(0);
        match pmi(c_ab, c_a, c_b, counts.n_projects, l, alpha) {
            Some(w) if w > threshold => edges.push((a.clone(), b.clone(), w)),
            Some(_) => {}
            None => skipped += 1,
        }
    }
    Ok(LibraryGraph {
        nodes: counts.project_counts.keys().cloned().collect(),
        edges,
        project_counts: counts.project_counts.clone(),
        pair_counts: counts.pair_counts.clone(),
        n_projects: counts.n_projects,
        skipped_pairs: skipped,
    })
}

/// Keeps the `k` most widely used libraries (ties by name), then drops
/// nodes left without edges.
pub fn top_k_filter(graph: &LibraryGraph, k: usize) -> LibraryGraph {
    let mut ranked: Vec<&String> = graph.nodes.iter().collect();
    ranked.sort_by(|a, b| {
        let ca = graph.project_counts.get(*a).copied().unwrap_or(0);
        let cb = graph.project_counts.get(*b).copied().unwrap_or(0);
        cb.cmp(&ca).then_with(|| a.cmp(b))
    });
    let keep: BTreeSet<&String> = ranked.into_iter().take(k).collect();
    let edges: Vec<(String, String, f64)> = graph
        .edges
        .iter()
        .filter(|(a, b, _)| keep.contains(a) && keep.contains(b))
        .cloned()
        .collect();
    let connected: BTreeSet<&String> = edges.iter().flat_map(|(a, b, _)| [a, b]).collect();
    let nodes: Vec<String> = graph
        .nodes
        .iter()
        .filter(|n| connected.contains(n))
        .cloned()
        .collect();
    let project_counts = graph
        .project_counts
        .iter()
        .filter(|(n, _)| connected.contains(n))
        .map(|(n, c)| (n.clone(), *c))
        .collect();
    LibraryGraph {
        nodes,
        edges,
        project_counts,
        pair_counts: graph.pair_counts.clone(),
        n_projects: graph.n_projects,
        skipped_pairs: graph.skipped_pairs,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Fine,
    Coarse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunityMap {
    pub assignment: BTreeMap<String, usize>,
    pub level: Level,
    pub resolution: f64,
    pub seed: u64,
}

impl CommunityMap {
    pub fn n_communities(&self) -> usize {
        self.assignment.values().collect::<BTreeSet<_>>().len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Louvain {
    pub fine: CommunityMap,
    pub coarse: CommunityMap,
    /// Modularity after each local-moving pass, across all levels.
    pub modularity_trace: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Communities {
    pub fine: usize,
    pub coarse: usize,
}

impl Louvain {
    pub fn table(&self) -> BTreeMap<String, Communities> {
        self.fine
            .assignment
            .iter()
            .map(|(lib, &fine)| (lib.clone(), Communities { fine, coarse: self.coarse.assignment[lib] }))
            .collect()
    }
}

/// Weighted undirected graph as a symmetric adjacency list. A self-loop
/// entry holds `A_ii`, which counts twice toward the degree convention
/// used by modularity (`k_i = sum_j A_ij`).
#[derive(Debug, Clone)]
struct Adj {
    nbrs: Vec<Vec<(usize, f64)>>,
}

impl Adj {
    fn degree(&self, i: usize) -> f64 {
        self.nbrs[i].iter().map(|e| e.1).sum()
    }

    fn total(&self) -> f64 {
        (0..self.nbrs.len()).map(|i| self.degree(i)).sum()
    }

    fn aggregate(&self, comm: &[usize], n_comm: usize) -> Adj {
        let mut maps: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n_comm];
        for (i, row) in self.nbrs.iter().enumerate() {
            for &(j, w) in row {
                *maps[comm[i]].entry(comm[j]).or_default() += w;
            }
        }
        Adj { nbrs: maps.into_iter().map(|m| m.into_iter().collect()).collect() }
    }
}

fn modularity_of(adj: &Adj, comm: &[usize], resolution: f64) -> f64 {
    let two_m = adj.total();
    if two_m <= 0.0 {
        return 0.0;
    }
    let n_comm = comm.iter().max().map_or(0, |m| m + 1);
    let mut inside = vec![0.0; n_comm];
    let mut tot = vec![0.0; n_comm];
    for (i, row) in adj.nbrs.iter().enumerate() {
        tot[comm[i]] += adj.degree(i);
        for &(j, w) in row {
            if comm[i] == comm[j] {
                inside[comm[i]] += w;
            }
        }
    }
    inside
        .iter()
        .zip(&tot)
        .map(|(a, t)| a / two_m - resolution * (t / two_m).powi(2))
        .sum()
}

/// Relabels communities 0.. in order of first appearance.
fn compact(comm: &mut [usize]) -> usize {
    let mut map = HashMap::new();
    for c in comm.iter_mut() {
        let next = map.len();
        *c = *map.entry(*c).or_insert(next);
    }
    map.len()
}

/// One local-moving phase. Returns the partition (compacted) and whether
/// any node moved.
fn local_moving(adj: &Adj, resolution: f64, rng: &mut ChaCha8Rng, trace: &mut Vec<f64>) -> (Vec<usize>, bool) {
    let n = adj.nbrs.len();
    let two_m = adj.total();
    let k: Vec<f64> = (0..n).map(|i| adj.degree(i)).collect();
    let mut comm: Vec<usize> = (0..n).collect();
    let mut tot = k.clone();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut moved_any = false;
    if two_m <= 0.0 {
        return (comm, false);
    }
    let mut links: HashMap<usize, f64> = HashMap::new();
    loop {
        let mut moved = false;
        for &i in &order {
            links.clear();
            for &(j, w) in &adj.nbrs[i] {
                if j != i {
                    *links.entry(comm[j]).or_default() += w;
                }
            }
            let own = comm[i];
            tot[own] -= k[i];
            let gain = |c: usize, kin: f64| kin - resolution * tot[c] * k[i] / two_m;
            let mut best = own;
            let mut best_gain = gain(own, links.get(&own).copied().unwrap_or(0.0));
            let mut cands: Vec<(usize, f64)> = links.iter().map(|(&c, &w)| (c, w)).collect();
            cands.sort_unstable_by_key(|c| c.0);
            for (c, kin) in cands {
                let g = gain(c, kin);
                if g > best_gain + 1e-12 {
                    best = c;
                    best_gain = g;
                }
            }
            tot[best] += k[i];
            if best != own {
                comm[i] = best;
                moved = true;
                moved_any = true;
            }
        }
        trace.push(modularity_of(adj, &comm, resolution));
        if !moved {
            break;
        }
    }
    compact(&mut comm);
    (comm, moved_any)
}

/// Louvain on `graph`. Node visiting order at each level is shuffled by a
/// generator seeded with `seed`.
pub fn louvain(graph: &LibraryGraph, resolution: f64, seed: u64) -> Louvain {
    let index: BTreeMap<&str, usize> = graph
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let mut nbrs: Vec<Vec<(usize, f64)>> = vec![Vec::new(); graph.nodes.len()];
    for (a, b, w) in &graph.edges {
        let (Some(&i), Some(&j)) = (index.get(a.as_str()), index.get(b.as_str())) else {
            continue;
        };
        if i != j {
            nbrs[i].push((j, *w));
            nbrs[j].push((i, *w));
        }
    }
    let mut adj = Adj { nbrs };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trace = Vec::new();
    let mut node_comm: Vec<usize> = (0..graph.nodes.len()).collect();
    let mut fine: Option<Vec<usize>> = None;
    loop {
        let (comm, moved) = local_moving(&adj, resolution, &mut rng, &mut trace);
        for c in node_comm.iter_mut() {
            *c = comm[*c];
        }
        if fine.is_none() {
            fine = Some(node_comm.clone());
        }
        let n_comm = comm.iter().max().map_or(0, |m| m + 1);
        if !moved || n_comm == adj.nbrs.len() {
            break;
        }
        adj = adj.aggregate(&comm, n_comm);
    }
    let mut fine = fine.unwrap_or_default();
    compact(&mut fine);
    compact(&mut node_comm);
    let to_map = |c: &[usize], level| CommunityMap {
        assignment: graph.nodes.iter().cloned().zip(c.iter().copied()).collect(),
        level,
        resolution,
        seed,
    };
    Louvain {
        fine: to_map(&fine, Level::Fine),
        coarse: to_map(&node_comm, Level::Coarse),
        modularity_trace: trace,
    }
}

/// Newman modularity of `assignment` on `graph` with a resolution factor.
pub fn modularity(graph: &LibraryGraph, assignment: &BTreeMap<String, usize>, resolution: f64) -> f64 {
    let index: BTreeMap<&str, usize> = graph
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let mut nbrs: Vec<Vec<(usize, f64)>> = vec![Vec::new(); graph.nodes.len()];
    for (a, b, w) in &graph.edges {
        let (i, j) = (index[a.as_str()], index[b.as_str()]);
        nbrs[i].push((j, *w));
        nbrs[j].push((i, *w));
    }
    let mut comm: Vec<usize> = graph.nodes.iter().map(|n| assignment[n]).collect();
    compact(&mut comm);
    modularity_of(&Adj { nbrs }, &comm, resolution)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn set(libs: &[&str]) -> BTreeSet<String> {
        libs.iter().map(|s| s.to_string()).collect()
    }

    fn pair(a: &str, b: &str) -> (String, String) {
        (a.to_string(), b.to_string())
    }

    #[test]
    fn counting() {
        let c = cooccurrence_counts(&[set(&["A", "B"])]);
        assert_eq!(c.pair_counts[&pair("A", "B")], 1);
        let c = cooccurrence_counts(&[set(&["A", "B"]), set(&["B", "A"])]);
        assert_eq!(c.pair_counts[&pair("A", "B")], 2);
        let c = cooccurrence_counts(&[set(&["A"])]);
        assert!(c.pair_counts.is_empty());
        assert_eq!(c.project_counts["A"], 1);
    }

    #[test]
    fn independence_boundary_has_no_edge() {
        let projects = vec![set(&["A", "B"]); 100];
        let g = pmi_graph(&cooccurrence_counts(&projects), 0.0, 0.0).unwrap();
        assert!(g.edges.is_empty());
    }

    #[test]
    fn hand_case_log_two() {
        let mut projects = vec![set(&["A", "B"]); 50];
        projects.extend(vec![set(&["C"]); 50]);
        let g = pmi_graph(&cooccurrence_counts(&projects), 0.0, 0.0).unwrap();
        assert_eq!(g.edges.len(), 1);
        assert!((g.edges[0].2 - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn disjoint_libraries_have_no_edge() {
        let g = pmi_graph(&cooccurrence_counts(&[set(&["A"]), set(&["B"])]), 0.0, 0.0).unwrap();
        assert!(g.edges.is_empty());
    }

    #[test]
    fn smoothing_pseudo_counts() {
        // L = 3: K = 3 pairs, k_x = 2.
        let v = pmi(4, 5, 6, 10, 3, 1.0).unwrap();
        assert!((v - ((5.0 * 13.0) / (7.0 * 8.0) as f64).ln()).abs() < 1e-12);
    }

    fn graph(nodes: &[&str], edges: &[(&str, &str, f64)], counts: &[usize]) -> LibraryGraph {
        LibraryGraph {
            nodes: nodes.iter().map(|s| s.to_string()).collect(),
            edges: edges.iter().map(|(a, b, w)| (a.to_string(), b.to_string(), *w)).collect(),
            project_counts: nodes.iter().zip(counts).map(|(n, c)| (n.to_string(), *c)).collect(),
            pair_counts: BTreeMap::new(),
            n_projects: 10,
            skipped_pairs: 0,
        }
    }

    #[test]
    fn top_k() {
        let g = graph(&["a", "b", "c", "d"], &[("a", "b", 1.0), ("b", "c", 1.0)], &[5, 9, 7, 8]);
        let all = top_k_filter(&g, 10);
        assert_eq!(all.nodes, vec!["a", "b", "c"]);
        assert_eq!(all.edges.len(), 2);
        let two = top_k_filter(&g, 2);
        assert!(two.nodes.is_empty() && two.edges.is_empty());
        let three = top_k_filter(&g, 3);
        assert_eq!(three.nodes, vec!["b", "c"]);
        assert_eq!(three.edges, vec![("b".into(), "c".into(), 1.0)]);
    }

    fn two_cliques() -> LibraryGraph {
        let names: Vec<String> = (0..10).map(|i| format!("n{i}")).collect();
        let mut edges = Vec::new();
        for base in [0, 5] {
            for i in base..base + 5 {
                for j in i + 1..base + 5 {
                    edges.push((names[i].clone(), names[j].clone(), 1.0));
                }
            }
        }
        edges.push((names[4].clone(), names[5].clone(), 0.1));
        LibraryGraph {
            project_counts: names.iter().map(|n| (n.clone(), 1)).collect(),
            nodes: names,
            edges,
            pair_counts: BTreeMap::new(),
            n_projects: 1,
            skipped_pairs: 0,
        }
    }

    #[test]
    fn planted_partition_recovered() {
        let g = two_cliques();
        for seed in 0..10 {
            let r = louvain(&g, 1.0, seed);
            for map in [&r.fine, &r.coarse] {
                assert_eq!(map.n_communities(), 2);
                let a = &map.assignment;
                assert!((0..5).all(|i| a[&format!("n{i}")] == a["n0"]));
                assert!((5..10).all(|i| a[&format!("n{i}")] == a["n5"]));
                assert_ne!(a["n0"], a["n5"]);
            }
        }
    }

    #[test]
    fn modularity_hand_value() {
        // Two disjoint edges, each its own community: Q = 2 * (2/4 - (2/4)^2) = 0.5
        let g = graph(&["a", "b", "c", "d"], &[("a", "b", 1.0), ("c", "d", 1.0)], &[1; 4]);
        let asg: BTreeMap<String, usize> =
            [("a", 0), ("b", 0), ("c", 1), ("d", 1)].iter().map(|(n, c)| (n.to_string(), *c)).collect();
        assert!((modularity(&g, &asg, 1.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn trivial_graphs() {
        let single = graph(&["a"], &[], &[1]);
        let r = louvain(&single, 1.0, 0);
        assert_eq!(r.fine.assignment.len(), 1);
        let empty = graph(&[], &[], &[]);
        assert!(louvain(&empty, 1.0, 0).coarse.assignment.is_empty());
    }

    fn random_graph(seed: u64, n: usize, p: f64) -> LibraryGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let names: Vec<String> = (0..n).map(|i| format!("l{i:03}")).collect();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.random::<f64>() < p {
                    edges.push((names[i].clone(), names[j].clone(), rng.random_range(0.1..2.0)));
                }
            }
        }
        LibraryGraph {
            project_counts: names.iter().map(|n| (n.clone(), 1)).collect(),
            nodes: names,
            edges,
            pair_counts: BTreeMap::new(),
            n_projects: 1,
            skipped_pairs: 0,
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn louvain_partitions_and_improves(seed in 0u64..1000, n in 2usize..40, p in 0.05f64..0.5) {
            let g = random_graph(seed, n, p);
            let r = louvain(&g, 1.0, seed);
            prop_assert_eq!(r.fine.assignment.len(), n);
            prop_assert_eq!(r.coarse.assignment.len(), n);
            let singletons: BTreeMap<String, usize> =
                g.nodes.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
            let q0 = modularity(&g, &singletons, 1.0);
            prop_assert!(modularity(&g, &r.coarse.assignment, 1.0) >= q0 - 1e-12);
            prop_assert!(modularity(&g, &r.fine.assignment, 1.0) >= q0 - 1e-12);
            for w in r.modularity_trace.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-9, "{:?}", r.modularity_trace);
            }
            // Coarse communities are unions of fine ones.
            let mut up: BTreeMap<usize, usize> = BTreeMap::new();
            for (lib, f) in &r.fine.assignment {
                let c = r.coarse.assignment[lib];
                prop_assert_eq!(*up.entry(*f).or_insert(c), c);
            }
            prop_assert_eq!(louvain(&g, 1.0, seed), r);
        }

        #[test]
        fn pmi_symmetric_and_monotone(
            c_ab in 1usize..50, extra_a in 0usize..50, extra_b in 0usize..50,
            rest in 0usize..100, alpha in 0.0f64..3.0, l in 2usize..20
        ) {
            let (c_a, c_b) = (c_ab + extra_a, c_ab + extra_b);
            let n = c_a + c_b + rest;
            let p = pmi(c_ab, c_a, c_b, n, l, alpha).unwrap();
            prop_assert_eq!(p, pmi(c_ab, c_b, c_a, n, l, alpha).unwrap());
            let more = pmi(c_ab + 1, c_a, c_b, n, l, alpha).unwrap();
            prop_assert!(more >= p);
        }
    }
}
