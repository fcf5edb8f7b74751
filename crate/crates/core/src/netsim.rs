//! Deterministic discrete-event simulation kernel.
//!
//! A seeded clock-and-queue core drives vehicle motion on a straight
//! two-lane road and a range-limited broadcast channel with configurable
//! loss and latency. Scripted overtaking intents feed the protocol state
//! machines; every send, delivery, drop, state transition and decision is
//! recorded in a trace. Identical worlds, configs and seeds produce
//! bit-identical traces.
//!
//! Geometry is one-dimensional: positions are longitudinal coordinates and
//! the lane flag only decides the travel direction. The overtaking model's
//! lateral axis lives entirely inside the kinematics.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::kinematics::{NodeId, SafetyAssessment, VehicleState};
use crate::protocol::{
    ActiveManeuver, Decision, Message, MessageKind, OvertakerFsm, OvertakerState,
    ProtocolConfig, ResponderFsm, COMMITMENT_MARGIN,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("{name} is out of range: {value}")]
    BadConfig { name: &'static str, value: f64 },
    #[error("duplicate node id {0}")]
    DuplicateNode(NodeId),
    #[error("invalid vehicle: {0}")]
    BadVehicle(String),
    #[error("scripted intent references unknown node {0}")]
    UnknownNode(NodeId),
    #[error("event scheduled in the past: {at} < {now}")]
    EventInPast { at: f64, now: f64 },
    #[error(transparent)]
    Protocol(#[from] crate::protocol::ProtocolError),
}

/// Message latency model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Latency {
    /// Every delivery takes exactly this long, seconds.
    Fixed(f64),
    /// Delivery time drawn uniformly from `[lo, hi)` seconds.
    Uniform { lo: f64, hi: f64 },
}

impl Latency {
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            Latency::Fixed(s) => s,
            Latency::Uniform { lo, hi } => {
                if hi > lo {
                    rng.random_range(lo..hi)
                } else {
                    lo
                }
            }
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        let (lo, hi) = match *self {
            Latency::Fixed(s) => (s, s),
            Latency::Uniform { lo, hi } => (lo, hi),
        };
        if !(lo.is_finite() && hi.is_finite()) || lo < 0.0 || hi < lo {
            return Err(SimError::BadConfig {
                name: "latency",
                value: lo.min(hi),
            });
        }
        Ok(())
    }
}

/// Channel and clock parameters of one simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Radio reach, meters.
    pub comm_range: f64,
    /// Probability that a scheduled delivery is lost, in [0, 1].
    pub loss_prob: f64,
    pub latency: Latency,
    /// Motion integration step, seconds.
    pub tick: f64,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(
        comm_range: f64,
        loss_prob: f64,
        latency: Latency,
        tick: f64,
        seed: u64,
    ) -> Result<Self, SimError> {
        if !comm_range.is_finite() || comm_range <= 0.0 {
            return Err(SimError::BadConfig {
                name: "comm_range",
                value: comm_range,
            });
        }
        if !(0.0..=1.0).contains(&loss_prob) {
            return Err(SimError::BadConfig {
                name: "loss_prob",
                value: loss_prob,
            });
        }
        latency.validate()?;
        if !tick.is_finite() || tick <= 0.0 {
            return Err(SimError::BadConfig {
                name: "tick",
                value: tick,
            });
        }
        Ok(Self {
            comm_range,
            loss_prob,
            latency,
            tick,
            seed,
        })
    }
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            comm_range: 500.0,
            loss_prob: 0.0,
            latency: Latency::Fixed(0.02),
            tick: 0.1,
            seed: 0,
        }
    }
}

/// Whether two vehicles can hear each other: longitudinal distance within
/// the radio reach. Lanes share the geometry.
pub fn in_range(a: &VehicleState, b: &VehicleState, comm_range: f64) -> bool {
    (a.pos_x - b.pos_x).abs() <= comm_range
}

/// What the simulation can be asked to do at a point in time.
#[derive(Debug, Clone, PartialEq)]
pub enum SimEvent {
    /// Advance vehicle positions by one tick.
    Tick,
    /// A scripted overtaking intent fires at this node.
    ScriptedIntent { overtaker: NodeId, tto_s: f64 },
    /// A message arrives at a node.
    Deliver { to: NodeId, msg: Message },
    /// Check whether the node's pending request has timed out.
    TimeoutCheck { node: NodeId, request_id: u64 },
}

#[derive(Debug, Clone, PartialEq)]
struct Scheduled {
    time: f64,
    seq: u64,
    event: SimEvent,
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap, we want the earliest (time, seq).
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Time-ordered event queue with FIFO tie-breaking on equal times.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Scheduled>,
    next_seq: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, time: f64, event: SimEvent) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Scheduled { time, seq, event });
    }

    pub fn pop(&mut self) -> Option<(f64, SimEvent)> {
        self.heap.pop().map(|s| (s.time, s.event))
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

/// A planned message arrival produced by [`broadcast`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Delivery {
    pub to: NodeId,
    /// Arrival time, seconds; never precedes the send time.
    pub at: f64,
}

/// Plans the deliveries of one broadcast: every other node within range
/// receives the message with probability `1 - loss_prob` after a latency
/// sample; out-of-range nodes receive nothing. Deterministic given the RNG
/// state and the (sorted) position map.
pub fn broadcast(
    sender: NodeId,
    positions: &BTreeMap<NodeId, f64>,
    cfg: &SimConfig,
    now: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<Delivery> {
    let sender_pos = positions[&sender];
    let mut deliveries = Vec::new();
    for (&id, &pos) in positions {
        if id == sender || (pos - sender_pos).abs() > cfg.comm_range {
            continue;
        }
        let lost = rng.random_range(0.0..1.0) < cfg.loss_prob;
        if lost {
            continue;
        }
        deliveries.push(Delivery {
            to: id,
            at: now + cfg.latency.sample(rng),
        });
    }
    deliveries
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceEventKind {
    Send,
    Deliver,
    Drop,
    Transition,
    Decision,
}

/// One recorded simulation event.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEvent {
    pub time: f64,
    pub node: NodeId,
    pub event: TraceEventKind,
    pub payload: serde_json::Value,
}

/// Chronological record of everything that happened in a run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimTrace {
    pub events: Vec<TraceEvent>,
}

impl SimTrace {
    /// One JSON object per line, suitable for diffing across runs.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for event in &self.events {
            out.push_str(&serde_json::to_string(event).expect("trace event serializes"));
            out.push('\n');
        }
        out
    }

    fn record(&mut self, time: f64, node: NodeId, event: TraceEventKind, payload: serde_json::Value) {
        self.events.push(TraceEvent {
            time,
            node,
            event,
            payload,
        });
    }
}

/// A scripted protocol trigger: at `at` seconds, `overtaker` initiates an
/// intent round advertising the given TTO estimate. Re-assessments on
/// timeout reuse the same estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScriptedIntent {
    pub at: f64,
    pub overtaker: NodeId,
    pub tto_s: f64,
}

/// One vehicle with its protocol machinery.
#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub vehicle: VehicleState,
    pub responder: ResponderFsm,
    pub overtaker: Option<OvertakerFsm>,
    /// Maneuvers this node has learned about (from intents it acked and its
    /// own overtakes).
    pub known_maneuvers: Vec<ActiveManeuver>,
}

impl Node {
    pub fn new(vehicle: VehicleState) -> Self {
        let id = vehicle.id;
        Self {
            vehicle,
            responder: ResponderFsm::new(id),
            overtaker: None,
            known_maneuvers: Vec::new(),
        }
    }
}

/// Vehicles plus protocol configuration plus the intent script.
#[derive(Debug, Clone, PartialEq)]
pub struct SimWorld {
    pub nodes: BTreeMap<NodeId, Node>,
    pub intents: Vec<ScriptedIntent>,
    pub protocol: ProtocolConfig,
}

impl SimWorld {
    pub fn new(
        vehicles: Vec<VehicleState>,
        intents: Vec<ScriptedIntent>,
        protocol: ProtocolConfig,
    ) -> Result<Self, SimError> {
        let mut nodes = BTreeMap::new();
        for vehicle in vehicles {
            vehicle.validate().map_err(|e| SimError::BadVehicle(e.to_string()))?;
            let id = vehicle.id;
            if nodes.insert(id, Node::new(vehicle)).is_some() {
                return Err(SimError::DuplicateNode(id));
            }
        }
        for intent in &intents {
            if !nodes.contains_key(&intent.overtaker) {
                return Err(SimError::UnknownNode(intent.overtaker));
            }
        }
        Ok(Self {
            nodes,
            intents,
            protocol,
        })
    }
}

/// Final state of a completed run: the trace plus the world as it ended.
#[derive(Debug, Clone, PartialEq)]
pub struct SimRun {
    pub trace: SimTrace,
    pub world: SimWorld,
}

/// Runs the world for `horizon` seconds.
///
/// Vehicles move at constant speed each tick; scripted intents initiate
/// protocol rounds; messages travel through the lossy range-limited channel;
/// timeouts resend or abort. The trace records every message send, delivery,
/// drop, FSM transition and decision with timestamps.
pub fn run(mut world: SimWorld, cfg: &SimConfig, horizon: f64) -> Result<SimRun, SimError> {
    if !horizon.is_finite() || horizon <= 0.0 {
        return Err(SimError::BadConfig {
            name: "horizon",
            value: horizon,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut queue = EventQueue::new();
    let mut trace = SimTrace::default();
    let mut now = 0.0f64;

    queue.push(cfg.tick, SimEvent::Tick);
    for intent in &world.intents {
        queue.push(
            intent.at,
            SimEvent::ScriptedIntent {
                overtaker: intent.overtaker,
                tto_s: intent.tto_s,
            },
        );
    }

    let mut ticks_done = 1u64;
    while let Some((time, event)) = queue.pop() {
        if time > horizon {
            break;
        }
        if time < now - 1e-12 {
            return Err(SimError::EventInPast { at: time, now });
        }
        now = time;
        match event {
            SimEvent::Tick => {
                for node in world.nodes.values_mut() {
                    let v = &mut node.vehicle;
                    v.pos_x += v.speed * v.lane.direction() * cfg.tick;
                    let responder_before = node.responder.state();
                    node.responder.expire(now);
                    if node.responder.state() != responder_before {
                        trace.record(
                            now,
                            v.id,
                            TraceEventKind::Transition,
                            json!({
                                "fsm": "responder",
                                "from": responder_before,
                                "to": node.responder.state(),
                            }),
                        );
                    }
                    node.known_maneuvers.retain(|m| m.is_active(now));
                }
                ticks_done += 1;
                let next = ticks_done as f64 * cfg.tick;
                if next <= horizon {
                    queue.push(next, SimEvent::Tick);
                }
            }
            SimEvent::ScriptedIntent { overtaker, tto_s } => {
                let assessment = SafetyAssessment::assume_safe(tto_s);
                let neighbors = neighbors_of(&world.nodes, overtaker, cfg.comm_range);
                let (fsm, msg) = OvertakerFsm::initiate(
                    overtaker,
                    &assessment,
                    neighbors,
                    world.protocol,
                    now,
                )?;
                trace.record(
                    now,
                    overtaker,
                    TraceEventKind::Transition,
                    json!({ "fsm": "overtaker", "from": "idle", "to": fsm.state() }),
                );
                send_broadcast(&world.nodes, &msg, cfg, now, &mut rng, &mut queue, &mut trace);
                handle_overtaker_outcome(
                    world.nodes.get_mut(&overtaker).expect("validated"),
                    fsm,
                    now,
                    &mut queue,
                    &mut trace,
                );
            }
            SimEvent::Deliver { to, msg } => {
                if !world.nodes.contains_key(&to) {
                    continue;
                }
                trace.record(
                    now,
                    to,
                    TraceEventKind::Deliver,
                    serde_json::to_value(&msg).expect("message serializes"),
                );
                match msg.kind {
                    MessageKind::Intent => deliver_intent(
                        &mut world, cfg, &msg, to, now, &mut rng, &mut queue, &mut trace,
                    ),
                    MessageKind::Ack | MessageKind::Nack => {
                        deliver_response(&mut world, &msg, to, now, &mut trace)
                    }
                }
            }
            SimEvent::TimeoutCheck { node: id, request_id } => {
                let neighbors = neighbors_of(&world.nodes, id, cfg.comm_range);
                let Some(node) = world.nodes.get_mut(&id) else {
                    continue;
                };
                let Some(fsm) = node.overtaker.as_mut() else {
                    continue;
                };
                if fsm.state() != OvertakerState::AwaitingResponses
                    || fsm.current_request_id() != request_id
                    || now + 1e-12 < fsm.deadline()
                {
                    continue;
                }
                // Scripted runs assume the situation still assesses as safe
                // with the original TTO estimate.
                let fresh = SafetyAssessment::assume_safe(fsm.tto_s());
                let (resend, decision) = fsm.on_timeout(&fresh, neighbors, now);
                let fsm_after = fsm.clone();
                if let Some(msg) = resend {
                    send_broadcast(&world.nodes, &msg, cfg, now, &mut rng, &mut queue, &mut trace);
                }
                let node = world.nodes.get_mut(&id).expect("node exists");
                apply_decision(node, &fsm_after, decision, now, &mut trace);
                schedule_timeout_check(&fsm_after, &mut queue);
            }
        }
    }
    Ok(SimRun { trace, world })
}

fn neighbors_of(
    nodes: &BTreeMap<NodeId, Node>,
    id: NodeId,
    comm_range: f64,
) -> std::collections::BTreeSet<NodeId> {
    let me = &nodes[&id].vehicle;
    nodes
        .values()
        .filter(|n| n.vehicle.id != id && in_range(me, &n.vehicle, comm_range))
        .map(|n| n.vehicle.id)
        .collect()
}

/// Schedules a broadcast's deliveries and records the send plus any drops.
fn send_broadcast(
    nodes: &BTreeMap<NodeId, Node>,
    msg: &Message,
    cfg: &SimConfig,
    now: f64,
    rng: &mut ChaCha8Rng,
    queue: &mut EventQueue,
    trace: &mut SimTrace,
) {
    trace.record(
        now,
        msg.sender,
        TraceEventKind::Send,
        serde_json::to_value(msg).expect("message serializes"),
    );
    let positions: BTreeMap<NodeId, f64> =
        nodes.values().map(|n| (n.vehicle.id, n.vehicle.pos_x)).collect();
    let sender_pos = positions[&msg.sender];
    for (&id, &pos) in &positions {
        if id == msg.sender || (pos - sender_pos).abs() > cfg.comm_range {
            continue;
        }
        if rng.random_range(0.0..1.0) < cfg.loss_prob {
            trace.record(
                now,
                id,
                TraceEventKind::Drop,
                serde_json::to_value(msg).expect("message serializes"),
            );
            continue;
        }
        let at = now + cfg.latency.sample(rng);
        queue.push(at, SimEvent::Deliver { to: id, msg: msg.clone() });
    }
}

/// Sends a unicast reply back to the requester through the same channel.
#[allow(clippy::too_many_arguments)]
fn send_unicast(
    nodes: &BTreeMap<NodeId, Node>,
    msg: &Message,
    to: NodeId,
    cfg: &SimConfig,
    now: f64,
    rng: &mut ChaCha8Rng,
    queue: &mut EventQueue,
    trace: &mut SimTrace,
) {
    trace.record(
        now,
        msg.sender,
        TraceEventKind::Send,
        serde_json::to_value(msg).expect("message serializes"),
    );
    let (Some(from_node), Some(to_node)) = (nodes.get(&msg.sender), nodes.get(&to)) else {
        return;
    };
    if !in_range(&from_node.vehicle, &to_node.vehicle, cfg.comm_range) {
        return;
    }
    if rng.random_range(0.0..1.0) < cfg.loss_prob {
        trace.record(
            now,
            to,
            TraceEventKind::Drop,
            serde_json::to_value(msg).expect("message serializes"),
        );
        return;
    }
    let at = now + cfg.latency.sample(rng);
    queue.push(at, SimEvent::Deliver { to, msg: msg.clone() });
}

#[allow(clippy::too_many_arguments)]
fn deliver_intent(
    world: &mut SimWorld,
    cfg: &SimConfig,
    msg: &Message,
    to: NodeId,
    now: f64,
    rng: &mut ChaCha8Rng,
    queue: &mut EventQueue,
    trace: &mut SimTrace,
) {
    let Some(node) = world.nodes.get_mut(&to) else {
        return;
    };
    // A node with its own request in flight treats its own planned maneuver
    // as active knowledge; two opposing intents must never both collect a
    // full ack set.
    let mut knowledge = node.known_maneuvers.clone();
    if let Some(own) = &node.overtaker {
        if own.state() == OvertakerState::AwaitingResponses {
            knowledge.push(ActiveManeuver {
                overtaker_id: to,
                until: own.deadline() + own.tto_s() * COMMITMENT_MARGIN,
            });
        }
    }
    let responder_before = node.responder.state();
    let reply = node.responder.on_intent(msg, &knowledge, now);
    if node.responder.state() != responder_before {
        trace.record(
            now,
            to,
            TraceEventKind::Transition,
            json!({
                "fsm": "responder",
                "from": responder_before,
                "to": node.responder.state(),
            }),
        );
    }
    if reply.kind == MessageKind::Ack {
        node.known_maneuvers.push(ActiveManeuver {
            overtaker_id: msg.maneuver.overtaker_id,
            until: now + msg.maneuver.tto_s * COMMITMENT_MARGIN,
        });
    }
    send_unicast(&world.nodes, &reply, msg.sender, cfg, now, rng, queue, trace);
}

fn deliver_response(
    world: &mut SimWorld,
    msg: &Message,
    to: NodeId,
    now: f64,
    trace: &mut SimTrace,
) {
    let Some(node) = world.nodes.get_mut(&to) else {
        return;
    };
    let Some(fsm) = node.overtaker.as_mut() else {
        return;
    };
    let before = fsm.state();
    let decision = fsm.on_message(msg, now);
    if fsm.state() != before {
        trace.record(
            now,
            to,
            TraceEventKind::Transition,
            json!({
                "fsm": "overtaker",
                "from": before,
                "to": fsm.state(),
                "request_id": msg.request_id,
            }),
        );
    }
    let fsm_snapshot = fsm.clone();
    apply_decision(node, &fsm_snapshot, decision, now, trace);
}

/// Records a Proceed/Abort decision; on Proceed the node becomes engaged in
/// its own maneuver and remembers it.
fn apply_decision(
    node: &mut Node,
    fsm: &OvertakerFsm,
    decision: Decision,
    now: f64,
    trace: &mut SimTrace,
) {
    match decision {
        Decision::Proceed => {
            let until = now + fsm.tto_s() * COMMITMENT_MARGIN;
            node.responder.engage(until);
            node.known_maneuvers.push(ActiveManeuver {
                overtaker_id: fsm.owner(),
                until,
            });
            trace.record(
                now,
                fsm.owner(),
                TraceEventKind::Decision,
                json!({ "decision": "proceed", "request_id": fsm.current_request_id() }),
            );
        }
        Decision::Abort => {
            trace.record(
                now,
                fsm.owner(),
                TraceEventKind::Decision,
                json!({ "decision": "abort", "request_id": fsm.current_request_id() }),
            );
        }
        Decision::None => {}
    }
}

/// Arms the timeout check for a freshly set deadline.
fn schedule_timeout_check(fsm: &OvertakerFsm, queue: &mut EventQueue) {
    if fsm.state() == OvertakerState::AwaitingResponses {
        queue.push(
            fsm.deadline(),
            SimEvent::TimeoutCheck {
                node: fsm.owner(),
                request_id: fsm.current_request_id(),
            },
        );
    }
}

fn handle_overtaker_outcome(
    node: &mut Node,
    fsm: OvertakerFsm,
    now: f64,
    queue: &mut EventQueue,
    trace: &mut SimTrace,
) {
    let decision = match fsm.state() {
        OvertakerState::Proceed => Decision::Proceed,
        OvertakerState::Abort => Decision::Abort,
        _ => Decision::None,
    };
    apply_decision(node, &fsm, decision, now, trace);
    schedule_timeout_check(&fsm, queue);
    node.overtaker = Some(fsm);
}

/// Serde mirror of a full simulation setup, the `protocol` subcommand's
/// input format.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorldSpec {
    pub comm_range: f64,
    #[serde(default)]
    pub loss_prob: f64,
    #[serde(default = "default_latency")]
    pub latency: Latency,
    #[serde(default = "default_tick")]
    pub tick: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_response_timeout")]
    pub response_timeout: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    pub horizon: f64,
    pub vehicles: Vec<VehicleState>,
    pub intents: Vec<ScriptedIntent>,
}

fn default_latency() -> Latency {
    Latency::Fixed(0.02)
}

fn default_tick() -> f64 {
    0.1
}

fn default_response_timeout() -> f64 {
    0.5
}

fn default_max_retries() -> u32 {
    2
}

impl WorldSpec {
    /// Splits the spec into the pieces [`run`] consumes.
    pub fn into_parts(self) -> Result<(SimWorld, SimConfig, f64), SimError> {
        let cfg = SimConfig::new(self.comm_range, self.loss_prob, self.latency, self.tick, self.seed)?;
        let protocol = ProtocolConfig::new(self.response_timeout, self.max_retries)?;
        let world = SimWorld::new(self.vehicles, self.intents, protocol)?;
        Ok((world, cfg, self.horizon))
    }
}
