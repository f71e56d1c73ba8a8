#![allow(dead_code)]

use ramac_core::topology::Node;
use ramac_core::Topology;

pub fn single_link() -> Topology {
    Topology::build(
        vec![Node::new(1, 1.0), Node::new(2, 1.0)],
        &[(1, 2)],
        &[(1, 2, 1.0)],
    )
    .unwrap()
}

/// Path 1–2–3 where 2 relays in one direction only: links (1,2), (3,2), (2,3).
pub fn three_link_path() -> Topology {
    Topology::build(
        vec![Node::new(1, 1.0), Node::new(2, 2.0), Node::new(3, 1.0)],
        &[(1, 2), (2, 3)],
        &[(1, 2, 1.0), (3, 2, 1.0), (2, 3, 1.0)],
    )
    .unwrap()
}

/// Instances with at most three links.
pub fn small_instances() -> Vec<(&'static str, Topology)> {
    vec![
        ("single", single_link()),
        ("star3", Topology::gen_star(3).unwrap()),
        ("linear2", Topology::gen_linear(2).unwrap()),
        ("star4", Topology::gen_star(4).unwrap()),
        ("path3", three_link_path()),
    ]
}
