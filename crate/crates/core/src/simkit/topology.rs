//! Call-graph templates: fixed e-commerce-shaped topologies and seeded
//! random DAGs.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::encoding::ServiceGraph;
use crate::error::{Error, Result};

const MAX_OUT_DEGREE: usize = 4;

/// Which topology to generate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TopologyTemplate {
    /// 11-service storefront: one frontend fanning out to product,
    /// cart, checkout and supporting services.
    Boutique11,
    /// 13-service shop with per-service data stores and an async
    /// shipping queue.
    Sockshop13,
    /// Connected random DAG with bounded fan-out.
    Random { n: usize },
}

impl TopologyTemplate {
    pub fn parse(name: &str, n: Option<usize>) -> Result<Self> {
        match name {
            "boutique11" => Ok(TopologyTemplate::Boutique11),
            "sockshop13" => Ok(TopologyTemplate::Sockshop13),
            "random" => {
                let n = n.ok_or_else(|| {
                    Error::Config("random template requires a node count".into())
                })?;
                if n < 2 {
                    return Err(Error::Config("random template needs n >= 2".into()));
                }
                Ok(TopologyTemplate::Random { n })
            }
            other => Err(Error::Config(format!("unknown template '{other}'"))),
        }
    }

    pub fn name(&self) -> String {
        match self {
            TopologyTemplate::Boutique11 => "boutique11".into(),
            TopologyTemplate::Sockshop13 => "sockshop13".into(),
            TopologyTemplate::Random { n } => format!("random{n}"),
        }
    }
}

/// A generated topology: the graph plus its entry services.
#[derive(Clone, Debug)]
pub struct Topology {
    pub name: String,
    pub graph: ServiceGraph,
    pub entries: Vec<usize>,
}

/// Deterministic per (template, seed). The fixed templates ignore the
/// seed; the random template produces a connected DAG with out-degree
/// at most 4, rooted at service 0.
pub fn generate_topology(template: &TopologyTemplate, seed: u64) -> Result<Topology> {
    match template {
        TopologyTemplate::Boutique11 => boutique11(),
        TopologyTemplate::Sockshop13 => sockshop13(),
        TopologyTemplate::Random { n } => random_dag(*n, seed),
    }
}

fn boutique11() -> Result<Topology> {
    let names = [
        "frontend",
        "adservice",
        "cartservice",
        "checkoutservice",
        "currencyservice",
        "emailservice",
        "paymentservice",
        "productcatalog",
        "recommendation",
        "shippingservice",
        "cartcache",
    ];
    let edges = [
        (0, 1),
        (0, 2),
        (0, 3),
        (0, 4),
        (0, 7),
        (0, 8),
        (0, 9),
        (3, 2),
        (3, 4),
        (3, 5),
        (3, 6),
        (3, 7),
        (3, 9),
        (8, 7),
        (2, 10),
    ];
    let graph = ServiceGraph::from_edges(names.iter().map(|s| s.to_string()).collect(), &edges)?;
    Ok(Topology {
        name: "boutique11".into(),
        graph,
        entries: vec![0],
    })
}

fn sockshop13() -> Result<Topology> {
    let names = [
        "front-end",
        "orders",
        "carts",
        "catalogue",
        "user",
        "payment",
        "shipping",
        "queue-master",
        "rabbitmq",
        "carts-db",
        "orders-db",
        "catalogue-db",
        "user-db",
    ];
    let edges = [
        (0, 1),
        (0, 2),
        (0, 3),
        (0, 4),
        (1, 2),
        (1, 4),
        (1, 5),
        (1, 6),
        (1, 10),
        (6, 7),
        (7, 8),
        (2, 9),
        (3, 11),
        (4, 12),
    ];
    let graph = ServiceGraph::from_edges(names.iter().map(|s| s.to_string()).collect(), &edges)?;
    Ok(Topology {
        name: "sockshop13".into(),
        graph,
        entries: vec![0],
    })
}

fn random_dag(n: usize, seed: u64) -> Result<Topology> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out_degree = vec![0usize; n];
    let mut edges: Vec<(usize, usize)> = Vec::new();
    // spine: every node gets one parent among its predecessors, which
    // keeps the DAG weakly connected and reachable from node 0
    for i in 1..n {
        let candidates: Vec<usize> = (0..i).filter(|&j| out_degree[j] < MAX_OUT_DEGREE).collect();
        let parent = candidates[rng.gen_range(0..candidates.len())];
        edges.push((parent, i));
        out_degree[parent] += 1;
    }
    // extra forward edges
    for i in 2..n {
        if rng.gen_bool(0.35) {
            let candidates: Vec<usize> = (0..i)
                .filter(|&j| out_degree[j] < MAX_OUT_DEGREE && !edges.contains(&(j, i)))
                .collect();
            if !candidates.is_empty() {
                let parent = candidates[rng.gen_range(0..candidates.len())];
                edges.push((parent, i));
                out_degree[parent] += 1;
            }
        }
    }
    let names = (0..n).map(|i| format!("svc{i}")).collect();
    let graph = ServiceGraph::from_edges(names, &edges)?;
    Ok(Topology {
        name: format!("random{n}"),
        graph,
        entries: vec![0],
    })
}

/// Topological order of a DAG; errors on cycles.
pub fn topological_order(graph: &ServiceGraph) -> Result<Vec<usize>> {
    let n = graph.n();
    let mut in_degree = vec![0usize; n];
    for (_, j) in graph.edges() {
        in_degree[j] += 1;
    }
    let mut queue: Vec<usize> = (0..n).filter(|&i| in_degree[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    let mut head = 0;
    while head < queue.len() {
        let u = queue[head];
        head += 1;
        order.push(u);
        for v in graph.out_neighbors(u) {
            in_degree[v] -= 1;
            if in_degree[v] == 0 {
                queue.push(v);
            }
        }
    }
    if order.len() != n {
        return Err(Error::Graph("call graph contains a cycle".into()));
    }
    Ok(order)
}
