//! Distribution network as a rooted tree of cables.
//!
//! The tree is described by a [`GridSpec`] (named nodes and cables, as they
//! appear in a scenario file) and validated into a [`GridTree`], which
//! indexes lots and cables densely and precomputes, for every lot, the cables
//! on its path to the transformer and, for every cable, the lots it feeds.
//!
//! Flows are signed: positive means power travels from the transformer
//! towards the lots, negative means solar back-feed. A cable capacity bounds
//! the magnitude of its flow in both directions.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Power tolerance (kW) used for every capacity comparison.
pub const POWER_EPS: f64 = 1e-7;

/// Dense index of a parking lot inside a [`GridTree`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LotId(pub usize);

/// Dense index of a cable inside a [`GridTree`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CableId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeKind {
    Transformer,
    Junction,
    Lot,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridNode {
    pub name: String,
    pub kind: NodeKind,
    /// Parking spaces; lots only.
    #[serde(default)]
    pub spots: u32,
    /// Peak power of the solar array in kW; lots only, 0 without an array.
    #[serde(default)]
    pub solar_peak: f64,
    /// Relative probability that an EV lists this lot in its preference.
    #[serde(default)]
    pub selection_weight: f64,
}

impl GridNode {
    pub fn transformer(name: &str) -> Self {
        Self::plain(name, NodeKind::Transformer)
    }

    pub fn junction(name: &str) -> Self {
        Self::plain(name, NodeKind::Junction)
    }

    pub fn lot(name: &str, spots: u32, solar_peak: f64, selection_weight: f64) -> Self {
        Self {
            name: name.into(),
            kind: NodeKind::Lot,
            spots,
            solar_peak,
            selection_weight,
        }
    }

    fn plain(name: &str, kind: NodeKind) -> Self {
        Self {
            name: name.into(),
            kind,
            spots: 0,
            solar_peak: 0.0,
            selection_weight: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CableSpec {
    pub child: String,
    pub parent: String,
    /// Thermal limit in kW.
    pub capacity: f64,
}

impl CableSpec {
    pub fn new(child: &str, parent: &str, capacity: f64) -> Self {
        Self {
            child: child.into(),
            parent: parent.into(),
            capacity,
        }
    }
}

/// Unvalidated network description.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nodes: Vec<GridNode>,
    pub cables: Vec<CableSpec>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("cables form a cycle through node `{0}`")]
    CycleDetected(String),
    #[error("node `{0}` has more than one parent cable")]
    MultipleParents(String),
    #[error("expected exactly one transformer, found {0}")]
    MultipleRoots(usize),
    #[error("node `{0}` is not connected to the transformer")]
    DisconnectedNode(String),
    #[error("cable `{child}`-`{parent}` has non-positive capacity {capacity}")]
    NonPositiveCapacity {
        child: String,
        parent: String,
        capacity: f64,
    },
    #[error("cable refers to unknown node `{0}`")]
    UnknownNode(String),
    #[error("node name `{0}` is used twice")]
    DuplicateNode(String),
    #[error("node `{0}` is not a lot but declares spots, solar or a selection weight")]
    LotFieldsOnNonLot(String),
    #[error("node `{0}` has a negative or non-finite attribute")]
    InvalidLotAttribute(String),
    #[error("the network has no parking lot")]
    NoLots,
    #[error("lot selection weights sum to zero")]
    ZeroSelectionWeight,
    #[error("load vector refers to lot index {index}, but the network has {lots} lots")]
    UnknownLot { index: usize, lots: usize },
    #[error("the base state already violates cable `{0}`")]
    InfeasibleBaseState(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cable {
    pub child: usize,
    pub parent: usize,
    pub capacity: f64,
}

/// Validated, immutable network with derived path and downstream sets.
#[derive(Clone, Debug)]
pub struct GridTree {
    nodes: Vec<GridNode>,
    root: usize,
    cables: Vec<Cable>,
    /// Cable connecting each node to its parent (`None` for the root).
    parent_cable: Vec<Option<CableId>>,
    lots: Vec<usize>,
    /// Normalized lot selection probabilities.
    weights: Vec<f64>,
    /// Cables from each lot up to the root, nearest first.
    paths: Vec<Vec<CableId>>,
    /// Lots fed through each cable.
    downstream: Vec<Vec<LotId>>,
    /// Node indices in an order where every child precedes its parent.
    bottom_up: Vec<usize>,
    children: Vec<Vec<usize>>,
    /// `competes[a * lots + b]` iff the root paths of lots a and b share a cable.
    competes: Vec<bool>,
}

impl GridSpec {
    pub fn validate(&self) -> Result<GridTree, GridError> {
        GridTree::new(self)
    }

    /// Transformer feeding two 200 kW junction cables: P1..P3 on the left,
    /// P4..P7 on the right, every lot on its own 200 kW cable.
    pub fn default_case(spots: u32, solar_peak: f64) -> Self {
        let mut nodes = vec![
            GridNode::transformer("T"),
            GridNode::junction("J_left"),
            GridNode::junction("J_right"),
        ];
        let mut cables = vec![
            CableSpec::new("J_left", "T", 200.0),
            CableSpec::new("J_right", "T", 200.0),
        ];
        for i in 1..=7 {
            let name = alloc::format!("P{i}");
            nodes.push(GridNode::lot(&name, spots, solar_peak, 1.0 / 7.0));
            let junction = if i <= 3 { "J_left" } else { "J_right" };
            cables.push(CableSpec::new(&name, junction, 200.0));
        }
        Self { nodes, cables }
    }

    /// A single lot holding all spots and panels of `lots` lots behind one
    /// cable of the given capacity.
    pub fn copperplate(lots: u32, spots_per_lot: u32, solar_peak_per_lot: f64, capacity: f64) -> Self {
        Self {
            nodes: vec![
                GridNode::transformer("T"),
                GridNode::lot(
                    "P",
                    spots_per_lot * lots,
                    solar_peak_per_lot * f64::from(lots),
                    1.0,
                ),
            ],
            cables: vec![CableSpec::new("P", "T", capacity)],
        }
    }
}

impl GridTree {
    pub fn new(spec: &GridSpec) -> Result<Self, GridError> {
        let mut index = BTreeMap::new();
        for (i, node) in spec.nodes.iter().enumerate() {
            if index.insert(node.name.as_str(), i).is_some() {
                return Err(GridError::DuplicateNode(node.name.clone()));
            }
            let finite = node.solar_peak.is_finite() && node.selection_weight.is_finite();
            if !finite || node.solar_peak < 0.0 || node.selection_weight < 0.0 {
                return Err(GridError::InvalidLotAttribute(node.name.clone()));
            }
            if node.kind != NodeKind::Lot
                && (node.spots != 0 || node.solar_peak != 0.0 || node.selection_weight != 0.0)
            {
                return Err(GridError::LotFieldsOnNonLot(node.name.clone()));
            }
        }
        let roots: Vec<usize> = spec
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.kind == NodeKind::Transformer)
            .map(|(i, _)| i)
            .collect();
        if roots.len() != 1 {
            return Err(GridError::MultipleRoots(roots.len()));
        }
        let root = roots[0];

        let n = spec.nodes.len();
        let mut cables = Vec::with_capacity(spec.cables.len());
        let mut parent_cable: Vec<Option<CableId>> = vec![None; n];
        for (ci, c) in spec.cables.iter().enumerate() {
            let child = *index
                .get(c.child.as_str())
                .ok_or_else(|| GridError::UnknownNode(c.child.clone()))?;
            let parent = *index
                .get(c.parent.as_str())
                .ok_or_else(|| GridError::UnknownNode(c.parent.clone()))?;
            if !(c.capacity > 0.0) || !c.capacity.is_finite() {
                return Err(GridError::NonPositiveCapacity {
                    child: c.child.clone(),
                    parent: c.parent.clone(),
                    capacity: c.capacity,
                });
            }
            if child == root || child == parent {
                return Err(GridError::CycleDetected(c.child.clone()));
            }
            if parent_cable[child].is_some() {
                return Err(GridError::MultipleParents(c.child.clone()));
            }
            parent_cable[child] = Some(CableId(ci));
            cables.push(Cable {
                child,
                parent,
                capacity: c.capacity,
            });
        }

        // Walk up from every node; a walk longer than n steps loops forever.
        for start in 0..n {
            let mut v = start;
            let mut steps = 0;
            while v != root {
                match parent_cable[v] {
                    Some(c) => v = cables[c.0].parent,
                    None => return Err(GridError::DisconnectedNode(spec.nodes[v].name.clone())),
                }
                steps += 1;
                if steps > n {
                    return Err(GridError::CycleDetected(spec.nodes[start].name.clone()));
                }
            }
        }

        let mut children = vec![Vec::new(); n];
        for c in &cables {
            children[c.parent].push(c.child);
        }
        let mut order = vec![root];
        let mut head = 0;
        while head < order.len() {
            let v = order[head];
            head += 1;
            order.extend(children[v].iter().copied());
        }
        order.reverse();

        let lots: Vec<usize> = (0..n)
            .filter(|&i| spec.nodes[i].kind == NodeKind::Lot)
            .collect();
        if lots.is_empty() {
            return Err(GridError::NoLots);
        }
        let total_weight: f64 = lots.iter().map(|&i| spec.nodes[i].selection_weight).sum();
        if !(total_weight > 0.0) {
            return Err(GridError::ZeroSelectionWeight);
        }
        let weights = lots
            .iter()
            .map(|&i| spec.nodes[i].selection_weight / total_weight)
            .collect();

        let mut paths = Vec::with_capacity(lots.len());
        let mut downstream = vec![Vec::new(); cables.len()];
        for (li, &node) in lots.iter().enumerate() {
            let mut path = Vec::new();
            let mut v = node;
            while let Some(c) = parent_cable[v] {
                path.push(c);
                downstream[c.0].push(LotId(li));
                v = cables[c.0].parent;
            }
            paths.push(path);
        }

        let l = lots.len();
        let mut competes = vec![false; l * l];
        for a in 0..l {
            for b in 0..l {
                competes[a * l + b] = paths[a].iter().any(|c| paths[b].contains(c));
            }
        }

        Ok(Self {
            nodes: spec.nodes.clone(),
            root,
            cables,
            parent_cable,
            lots,
            weights,
            paths,
            downstream,
            bottom_up: order,
            children,
            competes,
        })
    }

    pub fn lot_count(&self) -> usize {
        self.lots.len()
    }

    pub fn cable_count(&self) -> usize {
        self.cables.len()
    }

    pub fn lot_ids(&self) -> impl Iterator<Item = LotId> + '_ {
        (0..self.lots.len()).map(LotId)
    }

    pub fn lot(&self, lot: LotId) -> &GridNode {
        &self.nodes[self.lots[lot.0]]
    }

    pub fn lot_by_name(&self, name: &str) -> Option<LotId> {
        self.lots
            .iter()
            .position(|&i| self.nodes[i].name == name)
            .map(LotId)
    }

    pub fn cable(&self, cable: CableId) -> &Cable {
        &self.cables[cable.0]
    }

    pub fn capacity(&self, cable: CableId) -> f64 {
        self.cables[cable.0].capacity
    }

    /// `child-parent` label of a cable, e.g. `J_left-T`.
    pub fn cable_name(&self, cable: CableId) -> String {
        let c = &self.cables[cable.0];
        alloc::format!("{}-{}", self.nodes[c.child].name, self.nodes[c.parent].name)
    }

    /// Cable connecting the named node to its parent.
    pub fn cable_above(&self, node_name: &str) -> Option<CableId> {
        let i = self.nodes.iter().position(|n| n.name == node_name)?;
        self.parent_cable[i]
    }

    pub fn root_name(&self) -> &str {
        &self.nodes[self.root].name
    }

    pub fn path_to_root(&self, lot: LotId) -> &[CableId] {
        &self.paths[lot.0]
    }

    pub fn downstream_lots(&self, cable: CableId) -> &[LotId] {
        &self.downstream[cable.0]
    }

    /// Normalized probability of each lot being drawn for a preference list.
    pub fn selection_weights(&self) -> &[f64] {
        &self.weights
    }

    /// Whether two lots share at least one cable on their way to the root.
    pub fn lots_compete(&self, a: LotId, b: LotId) -> bool {
        self.competes[a.0 * self.lots.len() + b.0]
    }

    fn check_len(&self, v: &[f64]) -> Result<(), GridError> {
        if v.len() > self.lots.len() {
            return Err(GridError::UnknownLot {
                index: self.lots.len(),
                lots: self.lots.len(),
            });
        }
        Ok(())
    }

    /// Signed flow through every cable: the sum of demand minus solar over
    /// the lots downstream of it. Missing trailing entries count as zero.
    pub fn cable_flows(&self, demand: &[f64], solar: &[f64]) -> Result<Vec<f64>, GridError> {
        self.check_len(demand)?;
        self.check_len(solar)?;
        let mut flows = vec![0.0; self.cables.len()];
        for (li, path) in self.paths.iter().enumerate() {
            let net = demand.get(li).copied().unwrap_or(0.0) - solar.get(li).copied().unwrap_or(0.0);
            if net != 0.0 {
                for c in path {
                    flows[c.0] += net;
                }
            }
        }
        Ok(flows)
    }

    /// True iff every cable carries at most its capacity in either direction.
    pub fn is_feasible(&self, demand: &[f64], solar: &[f64]) -> Result<bool, GridError> {
        let flows = self.cable_flows(demand, solar)?;
        Ok(flows
            .iter()
            .zip(&self.cables)
            .all(|(f, c)| f.abs() <= c.capacity + POWER_EPS))
    }

    /// Largest extra demand that `lot` can draw without overloading any cable
    /// on its path to the root.
    pub fn residual_capacity(&self, lot: LotId, demand: &[f64], solar: &[f64]) -> Result<f64, GridError> {
        if lot.0 >= self.lots.len() {
            return Err(GridError::UnknownLot {
                index: lot.0,
                lots: self.lots.len(),
            });
        }
        let flows = self.cable_flows(demand, solar)?;
        for (ci, f) in flows.iter().enumerate() {
            if f.abs() > self.cables[ci].capacity + POWER_EPS {
                return Err(GridError::InfeasibleBaseState(self.cable_name(CableId(ci))));
            }
        }
        let room = self.paths[lot.0]
            .iter()
            .map(|c| self.cables[c.0].capacity - flows[c.0])
            .fold(f64::INFINITY, f64::min);
        Ok(room.max(0.0))
    }

    /// Chooses how much of the available solar power each lot feeds in so
    /// that every cable stays within capacity in both directions, using as
    /// much solar as possible. Returns `None` when no curtailment works,
    /// i.e. the demand alone overloads a cable.
    pub fn dispatch_solar(&self, demand: &[f64], solar: &[f64]) -> Option<Vec<f64>> {
        let n = self.nodes.len();
        // Per subtree: demand below, and the interval of achievable used solar.
        let mut load = vec![0.0; n];
        let mut lo = vec![0.0; n];
        let mut hi = vec![0.0; n];
        let mut own_hi = vec![0.0; n];
        for (li, &node) in self.lots.iter().enumerate() {
            load[node] = demand.get(li).copied().unwrap_or(0.0);
            own_hi[node] = solar.get(li).copied().unwrap_or(0.0).max(0.0);
        }
        for &v in &self.bottom_up {
            let (mut l, mut h, mut d): (f64, f64, f64) = (0.0, own_hi[v], load[v]);
            for &c in &self.children[v] {
                l += lo[c];
                h += hi[c];
                d += load[c];
            }
            load[v] = d;
            if let Some(c) = self.parent_cable[v] {
                let cap = self.cables[c.0].capacity;
                l = l.max(d - cap);
                h = h.min(d + cap);
                if l > h + POWER_EPS {
                    return None;
                }
                h = h.max(l);
            }
            lo[v] = l;
            hi[v] = h;
        }
        let mut target = vec![0.0; n];
        target[self.root] = hi[self.root];
        let mut used = vec![0.0; n];
        for &v in self.bottom_up.iter().rev() {
            let mut rest = target[v];
            for &c in &self.children[v] {
                target[c] = lo[c];
                rest -= lo[c];
            }
            let own = rest.clamp(0.0, own_hi[v]);
            used[v] = own;
            rest -= own;
            for &c in &self.children[v] {
                if rest <= 0.0 {
                    break;
                }
                let add = rest.min(hi[c] - lo[c]);
                target[c] += add;
                rest -= add;
            }
        }
        Some(self.lots.iter().map(|&node| used[node]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_lot_tree() -> GridTree {
        GridSpec {
            nodes: vec![
                GridNode::transformer("T"),
                GridNode::junction("J"),
                GridNode::lot("P1", 10, 100.0, 1.0),
                GridNode::lot("P2", 10, 0.0, 1.0),
            ],
            cables: vec![
                CableSpec::new("J", "T", 200.0),
                CableSpec::new("P1", "J", 200.0),
                CableSpec::new("P2", "J", 200.0),
            ],
        }
        .validate()
        .unwrap()
    }

    fn flow_of(tree: &GridTree, flows: &[f64], child: &str) -> f64 {
        flows[tree.cable_above(child).unwrap().0]
    }

    #[test]
    fn minimal_tree_is_valid() {
        let spec = GridSpec {
            nodes: vec![
                GridNode::transformer("T"),
                GridNode::lot("A", 1, 0.0, 1.0),
                GridNode::lot("B", 1, 0.0, 1.0),
            ],
            cables: vec![CableSpec::new("A", "T", 50.0), CableSpec::new("B", "T", 50.0)],
        };
        let tree = spec.validate().unwrap();
        assert_eq!(tree.path_to_root(LotId(0)).len(), 1);
        assert_eq!(tree.path_to_root(LotId(1)).len(), 1);
        assert!(!tree.lots_compete(LotId(0), LotId(1)));
    }

    #[test]
    fn two_parents_rejected() {
        let spec = GridSpec {
            nodes: vec![
                GridNode::transformer("T"),
                GridNode::junction("J"),
                GridNode::lot("A", 1, 0.0, 1.0),
            ],
            cables: vec![
                CableSpec::new("J", "T", 50.0),
                CableSpec::new("A", "T", 50.0),
                CableSpec::new("A", "J", 50.0),
            ],
        };
        assert_eq!(spec.validate().unwrap_err(), GridError::MultipleParents("A".into()));
    }

    #[test]
    fn cycle_and_structure_errors() {
        let cyclic = GridSpec {
            nodes: vec![
                GridNode::transformer("T"),
                GridNode::junction("J1"),
                GridNode::junction("J2"),
                GridNode::lot("A", 1, 0.0, 1.0),
            ],
            cables: vec![
                CableSpec::new("J1", "J2", 50.0),
                CableSpec::new("J2", "J1", 50.0),
                CableSpec::new("A", "T", 50.0),
            ],
        };
        assert!(matches!(cyclic.validate(), Err(GridError::CycleDetected(_))));

        let two_roots = GridSpec {
            nodes: vec![GridNode::transformer("T"), GridNode::transformer("U")],
            cables: vec![],
        };
        assert_eq!(two_roots.validate().unwrap_err(), GridError::MultipleRoots(2));

        let orphan = GridSpec {
            nodes: vec![GridNode::transformer("T"), GridNode::lot("A", 1, 0.0, 1.0)],
            cables: vec![],
        };
        assert_eq!(orphan.validate().unwrap_err(), GridError::DisconnectedNode("A".into()));

        let zero = GridSpec {
            nodes: vec![GridNode::transformer("T"), GridNode::lot("A", 1, 0.0, 1.0)],
            cables: vec![CableSpec::new("A", "T", 0.0)],
        };
        assert!(matches!(zero.validate(), Err(GridError::NonPositiveCapacity { .. })));
    }

    #[test]
    fn default_case_paths() {
        let tree = GridSpec::default_case(70, 200.0).validate().unwrap();
        assert_eq!(tree.lot_count(), 7);
        assert_eq!(tree.cable_count(), 9);
        let p1 = tree.lot_by_name("P1").unwrap();
        let names: Vec<String> = tree
            .path_to_root(p1)
            .iter()
            .map(|&c| tree.cable_name(c))
            .collect();
        assert_eq!(names, ["P1-J_left", "J_left-T"]);
        let p4 = tree.lot_by_name("P4").unwrap();
        assert!(tree.lots_compete(p1, LotId(1)));
        assert!(!tree.lots_compete(p1, p4));
        let w: f64 = tree.selection_weights().iter().sum();
        assert!((w - 1.0).abs() < 1e-12);
    }

    #[test]
    fn flows_sum_downstream() {
        let tree = two_lot_tree();
        let flows = tree.cable_flows(&[150.0, 100.0], &[60.0, 0.0]).unwrap();
        assert_eq!(flow_of(&tree, &flows, "P1"), 90.0);
        assert_eq!(flow_of(&tree, &flows, "P2"), 100.0);
        assert_eq!(flow_of(&tree, &flows, "J"), 190.0);
        assert!(tree.is_feasible(&[150.0, 100.0], &[60.0, 0.0]).unwrap());

        let zero = tree.cable_flows(&[], &[]).unwrap();
        assert!(zero.iter().all(|&f| f == 0.0));

        let back = tree.cable_flows(&[0.0], &[50.0]).unwrap();
        assert_eq!(flow_of(&tree, &back, "P1"), -50.0);

        assert!(matches!(
            tree.cable_flows(&[0.0, 0.0, 1.0], &[]),
            Err(GridError::UnknownLot { .. })
        ));
    }

    #[test]
    fn feasibility_is_a_magnitude_bound() {
        let tree = two_lot_tree();
        assert!(!tree.is_feasible(&[250.0], &[]).unwrap());
        assert!(!tree.is_feasible(&[0.0], &[250.0]).unwrap());
        assert!(tree.is_feasible(&[0.0], &[200.0]).unwrap());
    }

    #[test]
    fn residual_is_min_over_path() {
        let tree = two_lot_tree();
        let r = tree
            .residual_capacity(LotId(0), &[150.0, 100.0], &[60.0, 0.0])
            .unwrap();
        assert!((r - 10.0).abs() < 1e-12);
        assert_eq!(tree.residual_capacity(LotId(1), &[], &[]).unwrap(), 200.0);
        let saturated = tree.residual_capacity(LotId(0), &[100.0, 100.0], &[]).unwrap();
        assert_eq!(saturated, 0.0);
        assert_eq!(tree.residual_capacity(LotId(1), &[100.0, 100.0], &[]).unwrap(), 0.0);
        assert!(matches!(
            tree.residual_capacity(LotId(0), &[300.0], &[]),
            Err(GridError::InfeasibleBaseState(_))
        ));
    }

    #[test]
    fn dispatch_curtails_only_excess_backfeed() {
        let tree = GridSpec::default_case(10, 200.0).validate().unwrap();
        // Left group: 3 x 200 kW solar with no demand pushes 600 kW into a 200 kW cable.
        let solar = [200.0; 7];
        let demand = [0.0, 0.0, 0.0, 50.0, 50.0, 50.0, 50.0];
        let used = tree.dispatch_solar(&demand, &solar).unwrap();
        assert!(tree.is_feasible(&demand, &used).unwrap());
        let left: f64 = used[..3].iter().sum();
        assert!((left - 200.0).abs() < 1e-9);
        // The right group can absorb 200 kW demand plus 200 kW export.
        let right: f64 = used[3..].iter().sum();
        assert!((right - 400.0).abs() < 1e-9);
    }
}
