use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{Address32, ForwardingTable, Network, RangeEntry, RouterId};

/// Addresses owned by each generated router.
pub const ADDRESS_BLOCK: u32 = 1 << 24;

#[derive(Debug, Clone)]
pub struct GeneratedNetwork {
    pub network: Network,
    /// Routers in the order their address blocks were assigned.
    pub routers: Vec<RouterId>,
    /// Spanning tree the tables follow, as (child, parent).
    pub tree: Vec<(RouterId, RouterId)>,
}

/// A random connected topology of `n` routers (`n <= 256`) with
/// `extra_links` additional random links, and range tables that forward
/// along a spanning tree.
///
/// Address blocks are handed out in tree preorder, so every subtree owns one
/// contiguous range: each router forwards a child's subtree range to that
/// child and defaults everything else to its parent.
pub fn spanning_tree_network<R: Rng>(n: usize, extra_links: usize, rng: &mut R) -> GeneratedNetwork {
    assert!((1..=256).contains(&n), "one address block per router, at most 256");
    let names: Vec<RouterId> = (0..n).map(|i| format!("r{i:02}")).collect();
    let mut net = Network::default();
    for name in &names {
        net.topology.add_router(name).expect("generated names are valid");
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut parent: Vec<Option<usize>> = vec![None; n];
    for i in 1..n {
        let child = order[i];
        let par = order[rng.gen_range(0..i)];
        parent[child] = Some(par);
        children[par].push(child);
        net.topology.link(&names[child], &names[par]).expect("distinct routers");
    }
    let mut added = 0;
    let mut attempts = 0;
    while added < extra_links && attempts < extra_links * 20 && n > 2 {
        attempts += 1;
        let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if a != b && !net.topology.linked(&names[a], &names[b]) {
            net.topology.link(&names[a], &names[b]).expect("distinct routers");
            added += 1;
        }
    }

    // Preorder numbering and subtree sizes, iteratively.
    let root = order[0];
    let mut preorder = Vec::with_capacity(n);
    let mut stack = vec![root];
    while let Some(v) = stack.pop() {
        preorder.push(v);
        let mut kids = children[v].clone();
        kids.sort_unstable();
        stack.extend(kids.into_iter().rev());
    }
    let mut position = vec![0usize; n];
    for (k, &v) in preorder.iter().enumerate() {
        position[v] = k;
    }
    let mut size = vec![1usize; n];
    for &v in preorder.iter().rev() {
        if let Some(p) = parent[v] {
            size[p] += size[v];
        }
    }

    let block = |k: usize| -> (Address32, Address32) {
        let lo = k as u32 * ADDRESS_BLOCK;
        (Address32(lo), Address32(lo + (ADDRESS_BLOCK - 1)))
    };
    for v in 0..n {
        net.local.insert(names[v].clone(), vec![block(position[v])]);
        let ranges = children[v]
            .iter()
            .map(|&c| RangeEntry {
                lo: block(position[c]).0,
                hi: block(position[c] + size[c] - 1).1,
                next_hop: names[c].clone(),
            })
            .collect();
        let default = parent[v].map(|p| names[p].clone());
        let table = ForwardingTable::new(&names[v], ranges, default).expect("subtree ranges are disjoint");
        net.tables.insert(names[v].clone(), table);
    }

    let tree = (0..n)
        .filter_map(|v| parent[v].map(|p| (names[v].clone(), names[p].clone())))
        .collect();
    let routers = preorder.iter().map(|&v| names[v].clone()).collect();
    GeneratedNetwork { network: net, routers, tree }
}

/// Next hop from every router toward every listed address, following
/// breadth-first shortest paths with ties broken by router name. Used to
/// derive converged tables for scripted scenarios.
pub(crate) fn converged_tables(net: &Network, owners: &BTreeMap<Address32, RouterId>) -> BTreeMap<RouterId, ForwardingTable> {
    use std::collections::{HashMap, VecDeque};

    let mut tables = BTreeMap::new();
    for source in net.topology.routers() {
        // first_hop[x] = neighbour of `source` on the chosen path to x.
        let mut first_hop: HashMap<&str, &str> = HashMap::new();
        let mut queue: VecDeque<&str> = VecDeque::new();
        first_hop.insert(source, source);
        queue.push_back(source);
        while let Some(v) = queue.pop_front() {
            for w in net.topology.neighbours(v) {
                if !first_hop.contains_key(w.as_str()) {
                    let via = if v == source { w.as_str() } else { first_hop[v] };
                    first_hop.insert(w, via);
                    queue.push_back(w);
                }
            }
        }
        let next_hops: BTreeMap<Address32, RouterId> = owners
            .iter()
            .filter(|(_, owner)| *owner != source)
            .filter_map(|(addr, owner)| first_hop.get(owner.as_str()).map(|hop| (*addr, hop.to_string())))
            .collect();
        tables.insert(source.clone(), ForwardingTable::from_next_hops(source, &next_hops));
    }
    tables
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::refmodel::route_by_address;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn generated_tables_deliver_everywhere() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = spanning_tree_network(12, 6, &mut rng);
        assert_eq!(g.tree.len(), 11);
        for start in &g.routers {
            for (k, dst) in g.routers.iter().enumerate() {
                let a = Address32(k as u32 * ADDRESS_BLOCK + 17);
                let route = route_by_address(&g.network, start, a, 12).unwrap();
                assert_eq!(route.last(), Some(dst));
            }
        }
    }

    #[test]
    fn single_router() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = spanning_tree_network(1, 3, &mut rng);
        let route = route_by_address(&g.network, "r00", Address32(5), 1).unwrap();
        assert_eq!(route.hops, vec!["r00"]);
    }
}
