mod common;

use common::edit_oracle::EditGraph;
use phonostudio::metrics::levenshtein;
use rayon::prelude::*;

#[test]
fn levenshtein_equals_shortest_edit_path_on_all_short_strings() {
    let graph = EditGraph::new(4, 6);
    assert_eq!(graph.len(), 5461);
    let mismatches: usize = (0..graph.len())
        .into_par_iter()
        .map(|i| {
            let dist = graph.distances_from(i);
            (0..graph.len())
                .filter(|&j| levenshtein(graph.node(i), graph.node(j)) != dist[j] as usize)
                .count()
        })
        .sum();
    assert_eq!(mismatches, 0);
}
