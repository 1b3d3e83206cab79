//! Discrete-time microscopic vehicle simulation.
//!
//! Longitudinal dynamics follow the Krauss safe-speed idea in its discrete
//! (Euler) form: a follower never drives faster than the speed from which it
//! could still stop, braking at `max_decel` every step, behind a leader that
//! brakes just as hard. With that bound the following hold at every step:
//!
//! * bumper gaps stay at least `min_gap` once established,
//! * no vehicle decelerates faster than `max_decel`.
//!
//! Stop lines showing red are stationary obstacles whenever the vehicle can
//! still stop in front of them; yellow is treated as red only if the vehicle
//! can stop at `yellow_decel` (dilemma-zone rule). Vehicles that cannot stop
//! proceed.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{LaneId, RoadNetwork, RouteId};
use crate::signal::{Indication, SignalState};

/// Speed below which a vehicle counts as halting (m/s).
pub const HALTING_SPEED: f64 = 0.1;
/// Speed below which a vehicle is part of a queue (5 km/h).
pub const QUEUE_SPEED: f64 = 5.0 / 3.6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// Seconds per simulation (and decision) step.
    pub dt: f64,
    /// Physics sub-steps per step.
    pub substeps: u32,
    pub v_max: f64,
    pub min_gap: f64,
    pub max_decel: f64,
    pub max_accel: f64,
    /// Deceleration a driver accepts to stop for a yellow light.
    pub yellow_decel: f64,
    pub vehicle_length: f64,
    /// Vehicles per hour per inflow edge.
    pub inflow_rate: f64,
    #[serde(skip)]
    pub rng_seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 1.0,
            substeps: 1,
            v_max: 60.0,
            min_gap: 2.5,
            max_decel: 7.5,
            max_accel: 2.6,
            yellow_decel: 4.5,
            vehicle_length: 5.0,
            inflow_rate: 360.0,
            rng_seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sim.dt", self.dt),
            ("sim.v_max", self.v_max),
            ("sim.min_gap", self.min_gap),
            ("sim.max_decel", self.max_decel),
            ("sim.max_accel", self.max_accel),
            ("sim.yellow_decel", self.yellow_decel),
            ("sim.vehicle_length", self.vehicle_length),
            ("sim.inflow_rate", self.inflow_rate),
        ];
        for (path, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(path, format!("must be positive, got {v}")));
            }
        }
        if self.substeps == 0 {
            return Err(Error::config("sim.substeps", "must be at least 1"));
        }
        if self.yellow_decel > self.max_decel {
            return Err(Error::config(
                "sim.yellow_decel",
                "must not exceed max_decel",
            ));
        }
        if self.inflow_rate * self.dt / 3600.0 > 1.0 {
            return Err(Error::config(
                "sim.inflow_rate",
                "spawn probability per step exceeds one",
            ));
        }
        Ok(())
    }

    pub fn spawn_probability(&self) -> f64 {
        self.inflow_rate * self.dt / 3600.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Vehicle {
    pub id: u64,
    pub route: RouteId,
    /// Front bumper distance from the start of the route (m).
    pub offset: f64,
    pub speed: f64,
    pub entered_at: u64,
    /// Consecutive seconds spent halting.
    pub waiting: f64,
    /// Total seconds spent halting since entering.
    pub total_wait: f64,
}

impl Vehicle {
    /// Lane currently occupied. A vehicle exactly at a stop line still
    /// belongs to the lane ending there.
    pub fn lane(&self, net: &RoadNetwork) -> LaneId {
        let route = &net.routes[self.route];
        route.lanes[route.lane_index_at(self.offset)]
    }

    /// Front position measured from the start of the current lane.
    pub fn lane_position(&self, net: &RoadNetwork) -> f64 {
        let route = &net.routes[self.route];
        let idx = route.lane_index_at(self.offset);
        self.offset - route.block_length * idx as f64
    }
}

/// All vehicles of one simulation instance, kept per route in travel order
/// (front-most vehicle first).
#[derive(Debug, Clone, Default)]
pub struct WorldState {
    pub corridors: Vec<VecDeque<Vehicle>>,
    pub step: u64,
    pub entered: u64,
    pub departed: u64,
    next_id: u64,
}

impl WorldState {
    pub fn new(net: &RoadNetwork) -> Self {
        WorldState {
            corridors: vec![VecDeque::new(); net.routes.len()],
            ..Default::default()
        }
    }

    pub fn vehicle_count(&self) -> usize {
        self.corridors.iter().map(VecDeque::len).sum()
    }

    pub fn vehicles(&self) -> impl Iterator<Item = &Vehicle> {
        self.corridors.iter().flat_map(|c| c.iter())
    }

    /// Places a vehicle directly; used to build scenes by hand.
    pub fn insert_vehicle(&mut self, route: RouteId, offset: f64, speed: f64) -> Result<u64> {
        let corridor = self
            .corridors
            .get_mut(route)
            .ok_or_else(|| Error::NotFound(format!("route {route}")))?;
        let id = self.next_id;
        self.next_id += 1;
        let v = Vehicle {
            id,
            route,
            offset,
            speed,
            entered_at: self.step,
            waiting: 0.0,
            total_wait: 0.0,
        };
        let pos = corridor
            .iter()
            .position(|o| o.offset < offset)
            .unwrap_or(corridor.len());
        corridor.insert(pos, v);
        self.entered += 1;
        Ok(id)
    }

    pub fn is_conserved(&self) -> bool {
        self.entered == self.departed + self.vehicle_count() as u64
    }
}

/// Distance covered when starting this step at `v` and then braking by
/// `decel_step` (m/s per step) every following step until stopped.
pub fn braking_distance(v: f64, decel_step: f64, dt: f64) -> f64 {
    if v <= 0.0 {
        return 0.0;
    }
    let n = (v / decel_step).floor();
    let r = v - n * decel_step;
    dt * ((n + 1.0) * r + decel_step * n * (n + 1.0) / 2.0)
}

/// Largest `v` whose [`braking_distance`] does not exceed `distance`.
pub fn max_speed_for_distance(distance: f64, decel_step: f64, dt: f64) -> f64 {
    if distance <= 0.0 {
        return 0.0;
    }
    let y = distance / dt;
    let mut n = ((-1.0 + (1.0 + 8.0 * y / decel_step).sqrt()) / 2.0)
        .floor()
        .max(0.0);
    while decel_step * n * (n + 1.0) / 2.0 > y && n > 0.0 {
        n -= 1.0;
    }
    while decel_step * (n + 1.0) * (n + 2.0) / 2.0 <= y {
        n += 1.0;
    }
    let r = ((y - decel_step * n * (n + 1.0) / 2.0) / (n + 1.0)).clamp(0.0, decel_step);
    n * decel_step + r
}

/// Bernoulli arrivals on every inflow edge. A draw is consumed for every edge
/// every step, so blocked entries do not shift the random stream.
pub fn inject_inflow<R: Rng>(
    world: &mut WorldState,
    net: &RoadNetwork,
    config: &SimConfig,
    rng: &mut R,
) -> usize {
    let p = config.spawn_probability();
    let need = config.min_gap + config.vehicle_length;
    let mut spawned = 0;
    for route in 0..net.routes.len() {
        let arrives = rng.random::<f64>() < p;
        if !arrives {
            continue;
        }
        let corridor = &mut world.corridors[route];
        let free = corridor
            .back()
            .map_or(f64::INFINITY, |last| last.offset - config.vehicle_length);
        if free < need {
            continue;
        }
        corridor.push_back(Vehicle {
            id: world.next_id,
            route,
            offset: 0.0,
            speed: 0.0,
            entered_at: world.step,
            waiting: 0.0,
            total_wait: 0.0,
        });
        world.next_id += 1;
        world.entered += 1;
        spawned += 1;
    }
    spawned
}

/// Advances every vehicle by one step (`config.substeps` physics updates).
/// `signals` is indexed by intersection id.
pub fn step_vehicles(
    world: &mut WorldState,
    net: &RoadNetwork,
    signals: &[SignalState],
    config: &SimConfig,
) -> Result<()> {
    if signals.len() != net.num_intersections() {
        return Err(Error::InvalidArgument(format!(
            "expected {} signal states, got {}",
            net.num_intersections(),
            signals.len()
        )));
    }
    let h = config.dt / f64::from(config.substeps);
    for _ in 0..config.substeps {
        for (route_id, corridor) in world.corridors.iter_mut().enumerate() {
            let route = &net.routes[route_id];
            let total = route.total_length();
            let mut leader: Option<(f64, f64)> = None;
            for veh in corridor.iter_mut() {
                let v_new = next_speed(veh, leader, route, signals, config, h)?;
                veh.speed = v_new;
                veh.offset += v_new * h;
                if v_new < HALTING_SPEED {
                    veh.waiting += h;
                    veh.total_wait += h;
                } else {
                    veh.waiting = 0.0;
                }
                leader = Some((veh.offset, veh.speed));
            }
            while corridor.front().is_some_and(|v| v.offset >= total) {
                corridor.pop_front();
                world.departed += 1;
            }
            check_gaps(corridor, config.vehicle_length)?;
        }
    }
    world.step += 1;
    Ok(())
}

fn next_speed(
    veh: &Vehicle,
    leader: Option<(f64, f64)>,
    route: &crate::network::Route,
    signals: &[SignalState],
    config: &SimConfig,
    h: f64,
) -> Result<f64> {
    let decel = config.max_decel * h;
    let v = veh.speed;
    let desired = (v + config.max_accel * h).min(config.v_max);
    let mut bound = desired;

    if let Some((lead_offset, lead_speed)) = leader {
        let gap = (lead_offset - config.vehicle_length - veh.offset - config.min_gap).max(0.0);
        let leader_travel = braking_distance(lead_speed, decel, h) - lead_speed * h;
        bound = bound
            .min(max_speed_for_distance(gap + leader_travel, decel, h))
            .min(gap / h);
    }

    let n = route.intersections.len();
    let reach = braking_distance(desired, decel, h);
    let mut k = route.lane_index_at(veh.offset);
    while k < n {
        let d = route.stop_line(k) - veh.offset;
        if d > reach {
            break;
        }
        let sig = &signals[route.intersections[k]];
        let stop_decel = match sig.indication_for(route.heading) {
            Indication::Green => None,
            Indication::Yellow => Some(config.yellow_decel * h),
            Indication::Red => Some(decel),
        };
        if let Some(b) = stop_decel {
            let can_stop = max_speed_for_distance(d, b, h) >= (v - b).max(0.0) - 1e-9;
            if can_stop {
                bound = bound.min(max_speed_for_distance(d, decel, h));
                break;
            }
        }
        k += 1;
    }

    let v_new = bound.max(0.0);
    if v_new < v - decel - 1e-9 {
        return Err(Error::SimulationFault(format!(
            "vehicle {} needs to brake from {v:.6} to {v_new:.6} m/s in one step",
            veh.id
        )));
    }
    Ok(v_new)
}

fn check_gaps(corridor: &VecDeque<Vehicle>, length: f64) -> Result<()> {
    for (lead, follow) in corridor.iter().zip(corridor.iter().skip(1)) {
        if follow.offset + length > lead.offset + 1e-9 {
            return Err(Error::SimulationFault(format!(
                "vehicle {} overlaps leader {} (gap {:.6} m)",
                follow.id,
                lead.id,
                lead.offset - length - follow.offset
            )));
        }
    }
    Ok(())
}

/// Raw per-lane observation for a signalized lane.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LaneObservation {
    pub lane: LaneId,
    /// Vehicles slower than [`HALTING_SPEED`].
    pub halting: u32,
    /// Mean of `v_max - speed` over vehicles on the lane; 0 when empty.
    pub speed_lag: f64,
    /// Stop line to the rear of the last queued vehicle (m).
    pub queue_length: f64,
    /// Mean consecutive waiting time of queued vehicles (s).
    pub queue_wait: f64,
    /// Earliest time (s) any vehicle on the lane can reach the stop line at
    /// full acceleration; `None` for an empty lane.
    pub lead_time: Option<f64>,
}

/// Vehicles on every signalized lane, front-most first.
fn vehicles_by_lane<'a>(world: &'a WorldState, net: &RoadNetwork) -> Vec<Vec<&'a Vehicle>> {
    let m = net.num_signalized_lanes();
    let mut by_lane: Vec<Vec<&Vehicle>> = vec![Vec::new(); m];
    for veh in world.vehicles() {
        let lane = veh.lane(net);
        if lane < m {
            by_lane[lane].push(veh);
        }
    }
    by_lane
}

/// Observations for the signalized lanes, ordered by lane id.
pub fn observe_lanes(
    world: &WorldState,
    net: &RoadNetwork,
    config: &SimConfig,
) -> Vec<LaneObservation> {
    vehicles_by_lane(world, net)
        .into_iter()
        .enumerate()
        .map(|(lane, vehicles)| observe_lane(lane, &vehicles, net, config))
        .collect()
}

fn observe_lane(
    lane: LaneId,
    vehicles: &[&Vehicle],
    net: &RoadNetwork,
    config: &SimConfig,
) -> LaneObservation {
    let info = &net.lanes[lane];
    let route = &net.routes[info.route];
    let stop = route.stop_line(info.index_in_route);
    let start = stop - info.length;

    let halting = vehicles.iter().filter(|v| v.speed < HALTING_SPEED).count() as u32;
    let speed_lag = if vehicles.is_empty() {
        0.0
    } else {
        vehicles.iter().map(|v| config.v_max - v.speed).sum::<f64>() / vehicles.len() as f64
    };

    let queued: Vec<&&Vehicle> = vehicles
        .iter()
        .take_while(|v| v.speed < QUEUE_SPEED)
        .collect();
    let (queue_length, queue_wait) = match queued.last() {
        Some(last) => {
            let rear = (last.offset - config.vehicle_length).max(start);
            let wait = queued.iter().map(|v| v.waiting).sum::<f64>() / queued.len() as f64;
            ((stop - rear).min(info.length), wait)
        }
        None => (0.0, 0.0),
    };

    let a = config.max_accel;
    let lead_time = vehicles
        .iter()
        .map(|v| {
            let d = (stop - v.offset).max(0.0);
            (-v.speed + (v.speed * v.speed + 2.0 * a * d).sqrt()) / a
        })
        .reduce(f64::min);

    LaneObservation {
        lane,
        halting,
        speed_lag,
        queue_length,
        queue_wait,
        lead_time,
    }
}

/// Network-wide aggregates for one step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub vehicles: usize,
    /// Vehicles slower than 0.1 m/s anywhere in the network.
    pub halting: u32,
    /// Mean waiting time over queued vehicles (s).
    pub queue_time: f64,
    /// Mean queue length over lanes holding a queue (m).
    pub queue_length: f64,
    /// Mean speed; absent when the network is empty.
    pub speed: Option<f64>,
    /// Mean cumulative halting time of the vehicles present (s).
    pub cumulative_wait: f64,
    pub entered: u64,
    pub departed: u64,
}

impl MetricsRecord {
    pub const CSV_HEADER: [&'static str; 9] = [
        "step",
        "vehicles",
        "halting",
        "queue_time",
        "queue_length",
        "speed",
        "cumulative_wait",
        "entered",
        "departed",
    ];

    pub fn csv_row(&self) -> [String; 9] {
        [
            self.step.to_string(),
            self.vehicles.to_string(),
            self.halting.to_string(),
            format!("{:.6}", self.queue_time),
            format!("{:.6}", self.queue_length),
            self.speed.map(|s| format!("{s:.6}")).unwrap_or_default(),
            format!("{:.6}", self.cumulative_wait),
            self.entered.to_string(),
            self.departed.to_string(),
        ]
    }
}

pub fn snapshot_metrics(
    world: &WorldState,
    net: &RoadNetwork,
    config: &SimConfig,
) -> MetricsRecord {
    let count = world.vehicle_count();
    let halting = world.vehicles().filter(|v| v.speed < HALTING_SPEED).count() as u32;
    let speed = (count > 0).then(|| world.vehicles().map(|v| v.speed).sum::<f64>() / count as f64);
    let cumulative_wait = if count > 0 {
        world.vehicles().map(|v| v.total_wait).sum::<f64>() / count as f64
    } else {
        0.0
    };

    let mut queued_wait = 0.0;
    let mut queued = 0usize;
    let mut queue_sum = 0.0;
    let mut queues = 0usize;
    for vehicles in vehicles_by_lane(world, net) {
        let q: Vec<_> = vehicles
            .iter()
            .take_while(|v| v.speed < QUEUE_SPEED)
            .collect();
        if q.is_empty() {
            continue;
        }
        queued += q.len();
        queued_wait += q.iter().map(|v| v.waiting).sum::<f64>();
        let lane = vehicles[0].lane(net);
        queue_sum += observe_lane(lane, &vehicles, net, config).queue_length;
        queues += 1;
    }

    MetricsRecord {
        step: world.step,
        vehicles: count,
        halting,
        queue_time: if queued > 0 {
            queued_wait / queued as f64
        } else {
            0.0
        },
        queue_length: if queues > 0 {
            queue_sum / queues as f64
        } else {
            0.0
        },
        speed,
        cumulative_wait,
        entered: world.entered,
        departed: world.departed,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub step: u64,
    pub vehicle: u64,
    pub lane: LaneId,
    pub position: f64,
    pub speed: f64,
}

pub fn trajectory_rows(world: &WorldState, net: &RoadNetwork) -> Vec<TrajectoryRow> {
    world
        .vehicles()
        .map(|v| TrajectoryRow {
            step: world.step,
            vehicle: v.id,
            lane: v.lane(net),
            position: v.lane_position(net),
            speed: v.speed,
        })
        .collect()
}
