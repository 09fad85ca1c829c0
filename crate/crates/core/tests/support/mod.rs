#![allow(dead_code)]

pub mod gen;
pub mod reference;

use cape_core::cpl::{parse_policy, Policy};
use cape_core::graph::{parse_graph, PredicateGraph};

pub use gen::rng;

pub fn random_graph(seed: u64, max_elements: usize) -> PredicateGraph {
    let doc = gen::graph(&mut rng(seed), max_elements);
    parse_graph(&doc.to_string()).expect("generated graphs are valid")
}

/// `n` random policies with ids `p00`, `p01`, ...
pub fn random_policies(seed: u64, n: usize) -> Vec<Policy> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| parse_policy(&gen::policy(&mut r, &format!("p{i:02}")).to_string()).expect("generated policy"))
        .collect()
}
