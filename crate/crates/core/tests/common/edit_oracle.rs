//! Edit distance by breadth-first search over the graph whose nodes are all
//! strings up to a maximum length and whose edges are single insertions,
//! deletions and substitutions.

use std::collections::{HashMap, VecDeque};

pub struct EditGraph {
    nodes: Vec<Vec<u8>>,
    adjacency: Vec<Vec<u32>>,
}

impl EditGraph {
    pub fn new(alphabet: u8, max_len: usize) -> Self {
        let mut nodes: Vec<Vec<u8>> = vec![Vec::new()];
        let mut frontier = vec![Vec::new()];
        for _ in 0..max_len {
            let mut next = Vec::new();
            for s in &frontier {
                for c in 0..alphabet {
                    let mut t: Vec<u8> = s.clone();
                    t.push(c);
                    next.push(t);
                }
            }
            nodes.extend(next.iter().cloned());
            frontier = next;
        }
        let index: HashMap<Vec<u8>, usize> = nodes
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        let adjacency = nodes
            .iter()
            .map(|s| neighbours(s, &index, alphabet, max_len))
            .collect();
        Self { nodes, adjacency }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, i: usize) -> &[u8] {
        &self.nodes[i]
    }

    /// Shortest-path length from `source` to every node.
    pub fn distances_from(&self, source: usize) -> Vec<u32> {
        let mut dist = vec![u32::MAX; self.nodes.len()];
        let mut queue = VecDeque::from([source]);
        dist[source] = 0;
        while let Some(u) = queue.pop_front() {
            for &v in &self.adjacency[u] {
                let v = v as usize;
                if dist[v] == u32::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        dist
    }
}

fn neighbours(s: &[u8], index: &HashMap<Vec<u8>, usize>, alphabet: u8, max_len: usize) -> Vec<u32> {
    let mut out = Vec::new();
    for i in 0..s.len() {
        let mut t = s.to_vec();
        t.remove(i);
        out.push(index[&t] as u32);
        for c in 0..alphabet {
            if c != s[i] {
                let mut t = s.to_vec();
                t[i] = c;
                out.push(index[&t] as u32);
            }
        }
    }
    if s.len() < max_len {
        for i in 0..=s.len() {
            for c in 0..alphabet {
                let mut t = s.to_vec();
                t.insert(i, c);
                out.push(index[&t] as u32);
            }
        }
    }
    out
}
