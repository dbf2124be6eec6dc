//! Independent re-derivations used by the property and acceptance tests.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};

use scigraph_core::embed::EmbeddingIndex;
use scigraph_core::eval::{classify, Cutoff, Side};
use scigraph_core::frontier::{Histogram, PaperKey};
use scigraph_core::graph::{ContributionGraph, ContributionId, CorpusId, MatchType, PubDate};
use scigraph_core::roadmap::{Direction, Tree, TreeNode};
use scigraph_core::taskgen::Problem;

/// AP straight from the definition: for each gold item, the share of gold
/// among the items ranked at or above it. Summed in rank order so the float
/// result is comparable bit for bit.
pub fn ap(ranked: &[usize], gold: &[usize]) -> f64 {
    let rank: HashMap<usize, usize> = ranked.iter().enumerate().map(|(i, &x)| (x, i + 1)).collect();
    let mut ranks: Vec<usize> = gold.iter().map(|g| rank[g]).collect();
    ranks.sort_unstable();
    let total: f64 = ranks
        .iter()
        .map(|&r| ranks.iter().filter(|&&o| o <= r).count() as f64 / r as f64)
        .sum();
    total / gold.len() as f64
}

pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn go(prefix: &mut Vec<usize>, left: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if left.is_empty() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..left.len() {
            let x = left.remove(i);
            prefix.push(x);
            go(prefix, left, out);
            prefix.pop();
            left.insert(i, x);
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), &mut (0..n).collect(), &mut out);
    out
}

pub fn subsets(n: usize, size: usize) -> Vec<Vec<usize>> {
    (0u32..1 << n)
        .filter(|m| m.count_ones() as usize == size)
        .map(|m| (0..n).filter(|i| m & (1 << i) != 0).collect())
        .collect()
}

/// Expected AP of a uniformly random ranking of `n` items, `r` of them gold.
pub fn expected_random_ap(n: usize, r: usize) -> f64 {
    let n_f = n as f64;
    let h: f64 = (1..=n).map(|k| 1.0 / k as f64).sum();
    if n == 1 {
        return 1.0;
    }
    h / n_f + (r as f64 - 1.0) * (n_f - h) / (n_f * (n_f - 1.0))
}

/// Selection by repeated maximum over the available keys.
pub fn select_batch(hist: &Histogram, available: &dyn Fn(&PaperKey) -> bool, k: usize) -> Vec<PaperKey> {
    let mut pool: Vec<(PaperKey, usize)> = hist
        .iter()
        .filter(|(key, _)| available(key))
        .map(|(key, &n)| (key.clone(), n))
        .collect();
    let mut out = Vec::new();
    while out.len() < k && !pool.is_empty() {
        let mut best = 0;
        for i in 1..pool.len() {
            let (bk, bn) = &pool[best];
            let (k2, n2) = &pool[i];
            if n2 > bn || (n2 == bn && k2 < bk) {
                best = i;
            }
        }
        out.push(pool.remove(best).0);
    }
    out
}

/// Side of the cutoff by explicit case analysis.
pub fn side(year: i32, date: Option<PubDate>, cutoff: Cutoff) -> Side {
    let month = date.filter(|d| d.year == year).and_then(|d| d.month);
    if let (Some(m), Some(cm)) = (month, cutoff.month) {
        if year < cutoff.year || (year == cutoff.year && m <= cm) {
            return Side::Pre;
        }
        return Side::Post;
    }
    if year < cutoff.year {
        Side::Pre
    } else if year > cutoff.year {
        Side::Post
    } else {
        Side::Discarded
    }
}

pub fn check_split(year: i32, date: Option<PubDate>, cutoff: Cutoff) -> Option<String> {
    let got = classify(year, date, cutoff);
    let want = side(year, date, cutoff);
    if got != want {
        return Some(format!("{year} {date:?} vs {cutoff}: {got:?} != {want:?}"));
    }
    if date.and_then(|d| d.month).is_none() && year == cutoff.year && got != Side::Discarded {
        return Some(format!("year-only {year} at cutoff {cutoff} not discarded"));
    }
    None
}

/// Adjacency straight from the edge list.
pub struct Adjacency {
    pub pre: BTreeMap<ContributionId, BTreeSet<ContributionId>>,
    pub post: BTreeMap<ContributionId, BTreeSet<ContributionId>>,
    pub strong_pre: BTreeMap<ContributionId, BTreeSet<ContributionId>>,
}

impl Adjacency {
    pub fn new(g: &ContributionGraph) -> Self {
        let mut a = Adjacency {
            pre: BTreeMap::new(),
            post: BTreeMap::new(),
            strong_pre: BTreeMap::new(),
        };
        for e in g.edges() {
            a.pre.entry(e.dep_id.clone()).or_default().insert(e.pre_id.clone());
            a.post.entry(e.pre_id.clone()).or_default().insert(e.dep_id.clone());
            if e.match_type == MatchType::Strong {
                a.strong_pre.entry(e.dep_id.clone()).or_default().insert(e.pre_id.clone());
            }
        }
        a
    }

    fn of<'a>(map: &'a BTreeMap<ContributionId, BTreeSet<ContributionId>>, id: &ContributionId) -> Vec<&'a ContributionId> {
        map.get(id).map(|s| s.iter().collect()).unwrap_or_default()
    }
}

fn breadth_first_distances(
    root: &ContributionId,
    next: &BTreeMap<ContributionId, BTreeSet<ContributionId>>,
) -> HashMap<ContributionId, usize> {
    let mut dist = HashMap::from([(root.clone(), 0)]);
    let mut queue = VecDeque::from([root.clone()]);
    while let Some(id) = queue.pop_front() {
        let d = dist[&id];
        for n in Adjacency::of(next, &id) {
            if !dist.contains_key(n) {
                dist.insert(n.clone(), d + 1);
                queue.push_back(n.clone());
            }
        }
    }
    dist
}

/// Tree shape, depth bound and hidden-count arithmetic.
pub fn check_tree(
    adj: &Adjacency,
    tree: &Tree,
    root: &ContributionId,
    max_depth: usize,
    top_k: Option<usize>,
) -> Vec<String> {
    let mut v = Vec::new();
    let next = match tree.direction {
        Direction::Pre => &adj.pre,
        Direction::Post => &adj.post,
    };
    if &tree.root.id != root {
        v.push(format!("root is {} not {root}", tree.root.id));
    }
    let mut seen = HashSet::new();
    let dist = breadth_first_distances(root, next);
    fn walk<'a>(n: &'a TreeNode, d: usize, out: &mut Vec<(&'a TreeNode, usize)>) {
        out.push((n, d));
        for c in &n.children {
            walk(c, d + 1, out);
        }
    }
    let mut nodes = Vec::new();
    walk(&tree.root, 0, &mut nodes);
    for &(n, d) in &nodes {
        if !seen.insert(n.id.clone()) {
            v.push(format!("{} appears twice", n.id));
        }
        if d > max_depth {
            v.push(format!("{} at depth {d} > {max_depth}", n.id));
        }
        // first discovery puts each node at its shortest distance; pruning
        // can only push impact nodes deeper
        match dist.get(&n.id) {
            Some(&x) if x == d || (top_k.is_some() && x < d) => {}
            other => v.push(format!("{} at depth {d}, distance {other:?}", n.id)),
        }
        let neighbours = Adjacency::of(next, &n.id);
        for c in &n.children {
            if !neighbours.contains(&&c.id) {
                v.push(format!("{} -> {} is not an edge", n.id, c.id));
            }
        }
        match top_k {
            None => {
                if n.hidden_count != 0 {
                    v.push(format!("{} hides {} in a precursor tree", n.id, n.hidden_count));
                }
            }
            Some(k) => {
                if n.children.len() > k {
                    v.push(format!("{} shows {} > {k}", n.id, n.children.len()));
                }
                let want = if d == max_depth {
                    neighbours.len()
                } else {
                    neighbours.len() - n.children.len()
                };
                if n.hidden_count != want {
                    v.push(format!("{} hidden {} != {want}", n.id, n.hidden_count));
                }
            }
        }
    }
    if top_k.is_none() {
        // precursor trees are complete within the depth bound
        let within: BTreeSet<&ContributionId> = dist.iter().filter(|(_, &d)| d <= max_depth).map(|(id, _)| id).collect();
        let shown: BTreeSet<&ContributionId> = nodes.iter().map(|(n, _)| &n.id).collect();
        if within != shown {
            v.push(format!("precursor tree covers {} of {} reachable nodes", shown.len(), within.len()));
        }
    }
    v
}

/// Re-derives a problem from the graph and index by brute force.
pub fn check_problem(
    g: &ContributionGraph,
    adj: &Adjacency,
    index: &EmbeddingIndex,
    p: &Problem,
    k: usize,
    strong_only: bool,
) -> Vec<String> {
    let mut v = Vec::new();
    let target = &p.target.id;
    let year_of = |id: &ContributionId| g.paper(&id.corpus).map(|m| m.year);
    let year = year_of(target).unwrap();
    if p.target.year != year {
        v.push(format!("{}: target year {} != {year}", p.problem_id, p.target.year));
    }
    let pre_map = if strong_only { &adj.strong_pre } else { &adj.pre };
    let gold: BTreeSet<ContributionId> = Adjacency::of(pre_map, target)
        .into_iter()
        .filter(|id| year_of(id).is_some_and(|y| y <= year))
        .cloned()
        .collect();
    let stated: BTreeSet<ContributionId> = p.gold_ids.iter().cloned().collect();
    if gold != stated {
        v.push(format!("{}: gold mismatch", p.problem_id));
    }
    let ids: Vec<ContributionId> = p.candidate_ids();
    let unique: BTreeSet<&ContributionId> = ids.iter().collect();
    if ids.len() != k || unique.len() != k {
        v.push(format!("{}: {} candidates, {} unique", p.problem_id, ids.len(), unique.len()));
    }
    for gid in &stated {
        if !unique.contains(gid) {
            v.push(format!("{}: gold {gid} missing from candidates", p.problem_id));
        }
    }
    // papers linked to the target paper, from the raw edge list
    let mut linked: HashSet<&CorpusId> = HashSet::from([&target.corpus]);
    for e in g.edges() {
        if e.dep_id.corpus == target.corpus {
            linked.insert(&e.pre_id.corpus);
        }
        if e.pre_id.corpus == target.corpus {
            linked.insert(&e.dep_id.corpus);
        }
    }
    for id in &ids {
        if year_of(id).is_none_or(|y| y > year) {
            v.push(format!("{}: candidate {id} postdates the target", p.problem_id));
        }
        if !stated.contains(id) && linked.contains(&id.corpus) {
            v.push(format!("{}: distractor {id} from a linked paper", p.problem_id));
        }
        if id == target {
            v.push(format!("{}: target among candidates", p.problem_id));
        }
    }
    // distractors are the nearest admissible neighbours
    let query = index.query_vector(target).unwrap();
    let mut admissible: Vec<(f64, &ContributionId)> = index
        .iter()
        .map(|(id, _)| id)
        .filter(|id| {
            *id != target && !gold.contains(*id) && !linked.contains(&id.corpus) && year_of(id).is_some_and(|y| y <= year)
        })
        .map(|id| (index.score(&query, id).unwrap(), id))
        .collect();
    admissible.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    let want: BTreeSet<&ContributionId> = admissible.iter().take(k - gold.len()).map(|(_, id)| *id).collect();
    let got: BTreeSet<&ContributionId> = ids.iter().filter(|id| !stated.contains(id)).collect();
    if want != got {
        v.push(format!("{}: distractors are not the nearest admissible nodes", p.problem_id));
    }
    v
}
