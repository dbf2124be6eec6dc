//! Precursor and impact trees around one contribution, with DOT and JSON
//! export.

use std::collections::{HashSet, VecDeque};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::graph::{ContributionGraph, ContributionId};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum RoadmapError {
    #[error("unknown contribution {0}")]
    NotFound(ContributionId),
    #[error("top-k must be at least 1")]
    ZeroTopK,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Along incoming edges: what the root was built on.
    Pre,
    /// Along outgoing edges: what was built on the root.
    Post,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: ContributionId,
    pub name: String,
    pub title: String,
    pub children: Vec<TreeNode>,
    pub hidden_count: usize,
}

impl TreeNode {
    /// Visits nodes depth-first with their depth.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a TreeNode, usize)) {
        fn go<'a>(n: &'a TreeNode, d: usize, f: &mut impl FnMut(&'a TreeNode, usize)) {
            f(n, d);
            for c in &n.children {
                go(c, d + 1, f);
            }
        }
        go(self, 0, f);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tree {
    pub direction: Direction,
    pub root: TreeNode,
}

impl Tree {
    pub fn node_count(&self) -> usize {
        let mut n = 0;
        self.root.walk(&mut |_, _| n += 1);
        n
    }

    pub fn depth(&self) -> usize {
        let mut d = 0;
        self.root.walk(&mut |_, x| d = d.max(x));
        d
    }
}

struct Slot {
    id: ContributionId,
    children: Vec<usize>,
    hidden: usize,
}

fn assemble(graph: &ContributionGraph, slots: &[Slot], i: usize) -> TreeNode {
    let s = &slots[i];
    let c = graph.contribution(&s.id).expect("tree node exists");
    TreeNode {
        id: s.id.clone(),
        name: c.name.clone(),
        title: graph.paper_of(&s.id).map(|p| p.title.clone()).unwrap_or_default(),
        children: s.children.iter().map(|&j| assemble(graph, slots, j)).collect(),
        hidden_count: s.hidden,
    }
}

/// Breadth-first expansion with a visited set. `expand` returns the
/// children to attach (already filtered to unvisited) and the hidden count.
fn bfs(
    graph: &ContributionGraph,
    root: &ContributionId,
    max_depth: usize,
    mut expand: impl FnMut(&ContributionId, &HashSet<ContributionId>, bool) -> (Vec<ContributionId>, usize),
) -> Result<TreeNode, RoadmapError> {
    if graph.contribution(root).is_none() {
        return Err(RoadmapError::NotFound(root.clone()));
    }
    let mut slots = vec![Slot {
        id: root.clone(),
        children: Vec::new(),
        hidden: 0,
    }];
    let mut visited = HashSet::from([root.clone()]);
    let mut queue = VecDeque::from([(0usize, 0usize)]);
    while let Some((i, depth)) = queue.pop_front() {
        let (children, hidden) = expand(&slots[i].id.clone(), &visited, depth >= max_depth);
        slots[i].hidden = hidden;
        for child in children {
            visited.insert(child.clone());
            let j = slots.len();
            slots.push(Slot {
                id: child,
                children: Vec::new(),
                hidden: 0,
            });
            slots[i].children.push(j);
            queue.push_back((j, depth + 1));
        }
    }
    Ok(assemble(graph, &slots, 0))
}

/// What the root was built on, up to `max_depth` edges away. Every node
/// appears once, at its first discovery; children are ordered by id.
pub fn precursor_tree(graph: &ContributionGraph, root: &ContributionId, max_depth: usize) -> Result<Tree, RoadmapError> {
    let root = bfs(graph, root, max_depth, |id, visited, at_limit| {
        if at_limit {
            return (Vec::new(), 0);
        }
        let children = graph
            .precursors(id, false)
            .into_iter()
            .filter(|c| !visited.contains(c))
            .collect();
        (children, 0)
    })?;
    Ok(Tree {
        direction: Direction::Pre,
        root,
    })
}

/// What was built on the root. At each node the unvisited dependents are
/// ranked by their own number of distinct dependents (descending, then id)
/// and the first `top_k` are kept; `hidden_count` is the number of distinct
/// dependents not shown under that node.
pub fn impact_tree(
    graph: &ContributionGraph,
    root: &ContributionId,
    max_depth: usize,
    top_k: usize,
) -> Result<Tree, RoadmapError> {
    if top_k == 0 {
        return Err(RoadmapError::ZeroTopK);
    }
    let root = bfs(graph, root, max_depth, |id, visited, at_limit| {
        let all = graph.dependents(id);
        if at_limit {
            return (Vec::new(), all.len());
        }
        let mut open: Vec<(usize, ContributionId)> = all
            .iter()
            .filter(|c| !visited.contains(*c))
            .map(|c| (graph.dependents(c).len(), c.clone()))
            .collect();
        open.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
        let shown: Vec<ContributionId> = open.into_iter().take(top_k).map(|(_, c)| c).collect();
        let hidden = all.len() - shown.len();
        (shown, hidden)
    })?;
    Ok(Tree {
        direction: Direction::Post,
        root,
    })
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => {}
            c => out.push(c),
        }
    }
    out
}

/// Graphviz digraph of a tree. Precursor edges point from child to parent,
/// impact edges from parent to child; hidden counts become box nodes.
pub fn export_dot(tree: &Tree) -> String {
    let mut out = String::new();
    let name = match tree.direction {
        Direction::Pre => "precursors",
        Direction::Post => "impact",
    };
    writeln!(out, "digraph {name} {{").unwrap();
    writeln!(out, "  rankdir=LR;").unwrap();
    writeln!(out, "  node [shape=ellipse];").unwrap();
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    fn collect<'a>(n: &'a TreeNode, nodes: &mut Vec<&'a TreeNode>, edges: &mut Vec<(&'a TreeNode, &'a TreeNode)>) {
        nodes.push(n);
        for c in &n.children {
            edges.push((n, c));
            collect(c, nodes, edges);
        }
    }
    collect(&tree.root, &mut nodes, &mut edges);
    for n in &nodes {
        let id = n.id.to_string();
        writeln!(out, "  \"{}\" [label=\"{}\\n{}\"];", escape(&id), escape(&n.name), escape(&n.title)).unwrap();
        if n.hidden_count > 0 {
            writeln!(
                out,
                "  \"{}#hidden\" [shape=box, label=\"+{} hidden\"];",
                escape(&id),
                n.hidden_count
            )
            .unwrap();
        }
    }
    for (parent, child) in &edges {
        let (from, to) = match tree.direction {
            Direction::Pre => (&child.id, &parent.id),
            Direction::Post => (&parent.id, &child.id),
        };
        writeln!(out, "  \"{}\" -> \"{}\";", escape(&from.to_string()), escape(&to.to_string())).unwrap();
    }
    for n in &nodes {
        if n.hidden_count > 0 {
            let id = escape(&n.id.to_string());
            match tree.direction {
                Direction::Pre => writeln!(out, "  \"{id}#hidden\" -> \"{id}\" [style=dashed];").unwrap(),
                Direction::Post => writeln!(out, "  \"{id}\" -> \"{id}#hidden\" [style=dashed];").unwrap(),
            }
        }
    }
    out.push_str("}\n");
    out
}

/// JSON mirror of the tree, rooted at the root node.
pub fn export_json(tree: &Tree) -> String {
    serde_json::to_string_pretty(&tree.root).expect("tree serializes") + "\n"
}
