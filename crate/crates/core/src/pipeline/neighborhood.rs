use crate::events::{Event, NodeIndex};

#[derive(Debug, Clone, PartialEq)]
struct Contact {
    partner: NodeIndex,
    time: f64,
    feature: Vec<f64>,
}

/// A neighbor of some center node together with the most recent event
/// connecting it to the node it was reached from.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub node: NodeIndex,
    pub via: NodeIndex,
    pub depth: usize,
    pub time: f64,
    pub feature: Vec<f64>,
}

/// Undirected, time-ordered contact lists for every node.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TemporalAdjacency {
    contacts: Vec<Vec<Contact>>,
}

impl TemporalAdjacency {
    pub fn new(num_nodes: usize) -> Self {
        Self {
            contacts: vec![Vec::new(); num_nodes],
        }
    }

    pub fn from_events(events: &[Event]) -> Self {
        let n = events
            .iter()
            .map(|e| e.src.index().max(e.dst.index()) + 1)
            .max()
            .unwrap_or(0);
        let mut adj = Self::new(n);
        for e in events {
            adj.insert(e);
        }
        adj
    }

    pub fn clear(&mut self) {
        self.contacts.iter_mut().for_each(Vec::clear);
    }

    pub fn insert(&mut self, event: &Event) {
        let need = event.src.index().max(event.dst.index()) + 1;
        if self.contacts.len() < need {
            self.contacts.resize(need, Vec::new());
        }
        let mut push = |a: NodeIndex, b: NodeIndex| {
            self.contacts[a.index()].push(Contact {
                partner: b,
                time: event.time,
                feature: event.feature.clone(),
            })
        };
        push(event.src, event.dst);
        if event.src != event.dst {
            push(event.dst, event.src);
        }
    }

    /// Most recent `cap` distinct partners of `node` with contacts at or
    /// before `t`, newest first.
    fn recent_partners(&self, node: NodeIndex, t: f64, cap: usize) -> Vec<&Contact> {
        let Some(list) = self.contacts.get(node.index()) else {
            return Vec::new();
        };
        let end = list.partition_point(|c| c.time <= t);
        let mut seen: Vec<NodeIndex> = Vec::new();
        let mut out = Vec::new();
        for c in list[..end].iter().rev() {
            if out.len() == cap {
                break;
            }
            if !seen.contains(&c.partner) {
                seen.push(c.partner);
                out.push(c);
            }
        }
        out
    }

    /// The `L`-hop temporal neighborhood of `center` over `[0, t]`: at each
    /// depth, the most recent `cap` distinct partners of every frontier node,
    /// excluding the center and nodes already reached.
    pub fn neighborhood(&self, center: NodeIndex, t: f64, layers: usize, cap: usize) -> Vec<Neighbor> {
        let mut out: Vec<Neighbor> = Vec::new();
        let mut frontier = vec![center];
        for depth in 1..=layers {
            let mut next = Vec::new();
            for &from in &frontier {
                for c in self.recent_partners(from, t, cap) {
                    if c.partner == center || out.iter().any(|n| n.node == c.partner) {
                        continue;
                    }
                    out.push(Neighbor {
                        node: c.partner,
                        via: from,
                        depth,
                        time: c.time,
                        feature: c.feature.clone(),
                    });
                    next.push(c.partner);
                }
            }
            if next.is_empty() {
                break;
            }
            frontier = next;
        }
        out
    }
}

/// Neighborhood of `node` computed directly from a stream prefix.
pub fn temporal_neighborhood(
    node: NodeIndex,
    t: f64,
    layers: usize,
    cap: usize,
    prefix: &[Event],
) -> Vec<Neighbor> {
    TemporalAdjacency::from_events(prefix).neighborhood(node, t, layers.max(1), cap)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(ns: &[Neighbor]) -> Vec<usize> {
        ns.iter().map(|n| n.node.index()).collect()
    }

    #[test]
    fn isolated_node_has_no_neighbors() {
        let events = vec![Event::scalar(1, 2, 1.0, 1.0)];
        assert!(temporal_neighborhood(NodeIndex::new(0), 5.0, 1, 25, &events).is_empty());
        assert!(temporal_neighborhood(NodeIndex::new(7), 5.0, 2, 25, &events).is_empty());
    }

    #[test]
    fn direct_neighbors_and_recency_cap() {
        let events = vec![Event::scalar(1, 2, 1.0, 1.0), Event::scalar(1, 3, 2.0, 1.0)];
        let mut all = ids(&temporal_neighborhood(NodeIndex::new(1), 5.0, 1, 25, &events));
        all.sort_unstable();
        assert_eq!(all, vec![2, 3]);
        assert_eq!(ids(&temporal_neighborhood(NodeIndex::new(1), 5.0, 1, 1, &events)), vec![3]);
    }

    #[test]
    fn pairs_with_most_recent_event_and_respects_time() {
        let events = vec![
            Event::scalar(0, 1, 1.0, 10.0),
            Event::scalar(0, 1, 2.0, 20.0),
            Event::scalar(1, 2, 3.0, 30.0),
        ];
        let ns = temporal_neighborhood(NodeIndex::new(0), 10.0, 1, 5, &events);
        assert_eq!(ns.len(), 1);
        assert_eq!(ns[0].feature, vec![20.0]);
        let early = temporal_neighborhood(NodeIndex::new(0), 1.5, 1, 5, &events);
        assert_eq!(early[0].feature, vec![10.0]);
        let two_hop = temporal_neighborhood(NodeIndex::new(0), 10.0, 2, 5, &events);
        assert_eq!(ids(&two_hop), vec![1, 2]);
        assert_eq!(two_hop[1].depth, 2);
        assert_eq!(two_hop[1].via, NodeIndex::new(1));
    }
}
