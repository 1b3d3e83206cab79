//! The n×n signalized grid road network.
//!
//! Every route is a straight corridor entering at one boundary and leaving at
//! the opposite one. A corridor is made of `n + 1` lanes: `n` signalized lanes
//! that each end at an intersection stop line, followed by one unsignalized
//! outflow lane. Signalized lanes have ids `0..4n²` so they can index the
//! per-lane observation vectors directly; outflow lanes follow.

use serde::Serialize;

use crate::error::{Error, Result};

pub type IntersectionId = usize;
pub type LaneId = usize;
pub type RouteId = usize;

/// Direction of travel along a lane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Heading {
    North,
    East,
    South,
    West,
}

impl Heading {
    pub const ALL: [Heading; 4] = [Heading::North, Heading::East, Heading::South, Heading::West];

    /// Side of the downstream intersection this heading arrives at, in
    /// clockwise order N=0, E=1, S=2, W=3.
    pub fn arrival_side(self) -> usize {
        match self {
            Heading::South => 0,
            Heading::West => 1,
            Heading::North => 2,
            Heading::East => 3,
        }
    }

    /// Side of the upstream intersection this heading departs through.
    pub fn departure_side(self) -> usize {
        match self {
            Heading::North => 0,
            Heading::East => 1,
            Heading::South => 2,
            Heading::West => 3,
        }
    }

    pub fn is_north_south(self) -> bool {
        matches!(self, Heading::North | Heading::South)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Centrality {
    Central,
    Edge,
}

/// Either end of a lane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "id")]
pub enum Node {
    Intersection(IntersectionId),
    Boundary,
}

#[derive(Debug, Clone, Serialize)]
pub struct Intersection {
    pub id: IntersectionId,
    pub row: usize,
    pub col: usize,
    /// Incoming lanes indexed by arrival side (N, E, S, W).
    pub incoming: [LaneId; 4],
    /// Outgoing lanes indexed by departure side (N, E, S, W).
    pub outgoing: [LaneId; 4],
    pub centrality: Centrality,
}

#[derive(Debug, Clone, Serialize)]
pub struct Lane {
    pub id: LaneId,
    pub upstream: Node,
    pub downstream: Node,
    pub length: f64,
    pub heading: Heading,
    pub is_inflow: bool,
    pub is_outflow: bool,
    pub route: RouteId,
    /// Index of this lane within its route.
    pub index_in_route: usize,
}

impl Lane {
    pub fn is_signalized(&self) -> bool {
        matches!(self.downstream, Node::Intersection(_))
    }
}

/// A straight path from an inflow edge to the opposite outflow edge.
#[derive(Debug, Clone, Serialize)]
pub struct Route {
    pub id: RouteId,
    pub heading: Heading,
    pub lanes: Vec<LaneId>,
    /// Intersections crossed, in travel order.
    pub intersections: Vec<IntersectionId>,
    pub block_length: f64,
}

impl Route {
    pub fn total_length(&self) -> f64 {
        self.block_length * self.lanes.len() as f64
    }

    /// Offset along the route of the stop line of the `k`-th intersection.
    pub fn stop_line(&self, k: usize) -> f64 {
        self.block_length * (k + 1) as f64
    }

    /// Index into `lanes` of the lane containing `offset`. An offset exactly
    /// on a stop line belongs to the lane ending there.
    pub fn lane_index_at(&self, offset: f64) -> usize {
        let idx = (offset / self.block_length).ceil() - 1.0;
        if idx < 0.0 {
            0
        } else {
            (idx as usize).min(self.lanes.len() - 1)
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RoadNetwork {
    pub n: usize,
    pub block_length: f64,
    pub intersections: Vec<Intersection>,
    pub lanes: Vec<Lane>,
    pub routes: Vec<Route>,
    /// First lane of every route.
    pub inflow_edges: Vec<LaneId>,
}

impl RoadNetwork {
    /// Builds the grid. Pure function of its arguments.
    pub fn build_grid(n: usize, block_length: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument(
                "grid dimension must be positive".into(),
            ));
        }
        if !(block_length > 0.0 && block_length.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "block length must be positive, got {block_length}"
            )));
        }

        let id_of = |row: usize, col: usize| row * n + col;
        let mut route_paths: Vec<(Heading, Vec<IntersectionId>)> = Vec::with_capacity(4 * n);
        for r in 0..n {
            route_paths.push((Heading::East, (0..n).map(|c| id_of(r, c)).collect()));
        }
        for r in 0..n {
            route_paths.push((Heading::West, (0..n).rev().map(|c| id_of(r, c)).collect()));
        }
        for c in 0..n {
            route_paths.push((Heading::South, (0..n).map(|r| id_of(r, c)).collect()));
        }
        for c in 0..n {
            route_paths.push((Heading::North, (0..n).rev().map(|r| id_of(r, c)).collect()));
        }

        let signalized = 4 * n * n;
        let mut lanes = Vec::with_capacity(signalized + 4 * n);
        let mut routes = Vec::with_capacity(4 * n);
        // Outflow lanes are appended after all signalized ones.
        let mut outflow = Vec::with_capacity(4 * n);
        let mut incoming = vec![[usize::MAX; 4]; n * n];
        let mut outgoing = vec![[usize::MAX; 4]; n * n];

        for (route_id, (heading, path)) in route_paths.into_iter().enumerate() {
            let mut route_lanes = Vec::with_capacity(n + 1);
            for (k, &node) in path.iter().enumerate() {
                let id = route_id * n + k;
                let upstream = if k == 0 {
                    Node::Boundary
                } else {
                    Node::Intersection(path[k - 1])
                };
                lanes.push(Lane {
                    id,
                    upstream,
                    downstream: Node::Intersection(node),
                    length: block_length,
                    heading,
                    is_inflow: k == 0,
                    is_outflow: false,
                    route: route_id,
                    index_in_route: k,
                });
                incoming[node][heading.arrival_side()] = id;
                if k > 0 {
                    outgoing[path[k - 1]][heading.departure_side()] = id;
                }
                route_lanes.push(id);
            }
            let out_id = signalized + route_id;
            let last = path[n - 1];
            outflow.push(Lane {
                id: out_id,
                upstream: Node::Intersection(last),
                downstream: Node::Boundary,
                length: block_length,
                heading,
                is_inflow: false,
                is_outflow: true,
                route: route_id,
                index_in_route: n,
            });
            outgoing[last][heading.departure_side()] = out_id;
            route_lanes.push(out_id);
            routes.push(Route {
                id: route_id,
                heading,
                lanes: route_lanes,
                intersections: path,
                block_length,
            });
        }
        lanes.extend(outflow);

        let intersections = (0..n * n)
            .map(|id| {
                let (row, col) = (id / n, id % n);
                let interior = row > 0 && row + 1 < n && col > 0 && col + 1 < n;
                Intersection {
                    id,
                    row,
                    col,
                    incoming: incoming[id],
                    outgoing: outgoing[id],
                    centrality: if interior {
                        Centrality::Central
                    } else {
                        Centrality::Edge
                    },
                }
            })
            .collect();
        let inflow_edges = routes.iter().map(|r| r.lanes[0]).collect();

        Ok(RoadNetwork {
            n,
            block_length,
            intersections,
            lanes,
            routes,
            inflow_edges,
        })
    }

    pub fn num_intersections(&self) -> usize {
        self.intersections.len()
    }

    /// Number of signalized lanes, M. These are the lanes the observation
    /// vectors are indexed by.
    pub fn num_signalized_lanes(&self) -> usize {
        4 * self.n * self.n
    }

    pub fn lane(&self, id: LaneId) -> Result<&Lane> {
        self.lanes
            .get(id)
            .ok_or_else(|| Error::NotFound(format!("lane {id}")))
    }

    pub fn intersection(&self, id: IntersectionId) -> Result<&Intersection> {
        self.intersections
            .get(id)
            .ok_or_else(|| Error::NotFound(format!("intersection {id}")))
    }

    /// Incoming and outgoing lane sets of intersection `c`.
    pub fn lanes_of_intersection(&self, c: IntersectionId) -> Result<([LaneId; 4], [LaneId; 4])> {
        let i = self.intersection(c)?;
        Ok((i.incoming, i.outgoing))
    }

    pub fn central_count(&self) -> usize {
        self.intersections
            .iter()
            .filter(|i| i.centrality == Centrality::Central)
            .count()
    }

    /// Topology as a JSON document (nodes, lanes, routes).
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
