//! The overtaking-intention protocol.
//!
//! When the safety model predicts a safe maneuver, the overtaker broadcasts
//! an intent and waits for every in-range neighbor to answer. An ACK commits
//! the responder to constant speed for the maneuver; a NACK signals a known
//! conflicting maneuver and aborts the overtake immediately. Missing answers
//! are never read as consent: a timeout re-assesses, bumps the request
//! identifier and resends, and exhausted retries abort.
//!
//! Request numbering exists to defuse delayed or duplicated responses: a
//! response is only honored when its identifier matches the current request;
//! everything else is discarded without touching the state machine.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{NodeId, SafetyAssessment, Verdict};

/// A responder that ACKs commits to constant speed for the advertised TTO
/// times this margin.
pub const COMMITMENT_MARGIN: f64 = 1.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("refusing to initiate: the safety assessment is unsafe")]
    UnsafeAssessment,
    #[error("response timeout must be positive, got {0}")]
    BadTimeout(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    Intent,
    Ack,
    Nack,
}

/// Compact description of the maneuver an intent announces; responses echo it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManeuverSummary {
    pub overtaker_id: NodeId,
    /// Estimated total time to overtake, seconds.
    pub tto_s: f64,
}

/// One protocol message. Responses echo the `request_id` of the intent they
/// answer so the overtaker can tell which request a response belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub kind: MessageKind,
    pub sender: NodeId,
    pub request_id: u64,
    /// Simulation time the message was sent, seconds.
    pub timestamp: f64,
    pub maneuver: ManeuverSummary,
}

/// Outcome reported by an overtaker FSM transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    /// Keep waiting.
    None,
    Proceed,
    Abort,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OvertakerState {
    Idle,
    AwaitingResponses,
    Proceed,
    Abort,
}

/// Protocol timing knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    /// How long to wait for the full response set, seconds.
    pub response_timeout: f64,
    /// How many resends are allowed after the initial intent.
    pub max_retries: u32,
}

impl ProtocolConfig {
    pub fn new(response_timeout: f64, max_retries: u32) -> Result<Self, ProtocolError> {
        if !response_timeout.is_finite() || response_timeout <= 0.0 {
            return Err(ProtocolError::BadTimeout(response_timeout));
        }
        Ok(Self {
            response_timeout,
            max_retries,
        })
    }
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            response_timeout: 0.5,
            max_retries: 2,
        }
    }
}

/// State machine run by the vehicle that wants to overtake.
#[derive(Debug, Clone, PartialEq)]
pub struct OvertakerFsm {
    owner: NodeId,
    state: OvertakerState,
    current_request_id: u64,
    pending: BTreeSet<NodeId>,
    retries_left: u32,
    deadline: f64,
    tto_s: f64,
    config: ProtocolConfig,
}

impl OvertakerFsm {
    /// Starts a protocol round for a safe assessment: broadcasts the intent
    /// with request id 0 and waits for every neighbor currently in range.
    /// With no neighbors there is nobody to object and the overtake proceeds
    /// on the assessment alone.
    pub fn initiate(
        owner: NodeId,
        assessment: &SafetyAssessment,
        neighbors: BTreeSet<NodeId>,
        config: ProtocolConfig,
        now: f64,
    ) -> Result<(Self, Message), ProtocolError> {
        if assessment.verdict != Verdict::Safe {
            return Err(ProtocolError::UnsafeAssessment);
        }
        let message = Message {
            kind: MessageKind::Intent,
            sender: owner,
            request_id: 0,
            timestamp: now,
            maneuver: ManeuverSummary {
                overtaker_id: owner,
                tto_s: assessment.tto_s,
            },
        };
        let state = if neighbors.is_empty() {
            OvertakerState::Proceed
        } else {
            OvertakerState::AwaitingResponses
        };
        Ok((
            Self {
                owner,
                state,
                current_request_id: 0,
                pending: neighbors,
                retries_left: config.max_retries,
                deadline: now + config.response_timeout,
                tto_s: assessment.tto_s,
                config,
            },
            message,
        ))
    }

    /// Feeds a received response in. Acks for the current request shrink the
    /// pending set and an empty set means consensus; a Nack for the current
    /// request aborts at once. Responses carrying any other request id are
    /// stale and are discarded without a state change, as is everything
    /// received outside `AwaitingResponses`.
    pub fn on_message(&mut self, msg: &Message, _now: f64) -> Decision {
        if self.state != OvertakerState::AwaitingResponses {
            return Decision::None;
        }
        if msg.request_id != self.current_request_id {
            return Decision::None;
        }
        match msg.kind {
            MessageKind::Ack => {
                self.pending.remove(&msg.sender);
                if self.pending.is_empty() {
                    self.state = OvertakerState::Proceed;
                    Decision::Proceed
                } else {
                    Decision::None
                }
            }
            MessageKind::Nack => {
                self.state = OvertakerState::Abort;
                Decision::Abort
            }
            MessageKind::Intent => Decision::None,
        }
    }

    /// Handles an expired response deadline. While retries remain and the
    /// situation still assesses as safe, the request id is bumped, the
    /// intent is rebroadcast to the nodes now in range and all earlier
    /// partial answers are forgotten. Exhausted retries or a now-unsafe
    /// assessment abort.
    pub fn on_timeout(
        &mut self,
        fresh_assessment: &SafetyAssessment,
        neighbors: BTreeSet<NodeId>,
        now: f64,
    ) -> (Option<Message>, Decision) {
        if self.state != OvertakerState::AwaitingResponses || now < self.deadline {
            return (None, Decision::None);
        }
        if self.retries_left == 0 || fresh_assessment.verdict != Verdict::Safe {
            self.state = OvertakerState::Abort;
            return (None, Decision::Abort);
        }
        self.retries_left -= 1;
        self.current_request_id += 1;
        self.tto_s = fresh_assessment.tto_s;
        self.deadline = now + self.config.response_timeout;
        self.pending = neighbors;
        let message = Message {
            kind: MessageKind::Intent,
            sender: self.owner,
            request_id: self.current_request_id,
            timestamp: now,
            maneuver: ManeuverSummary {
                overtaker_id: self.owner,
                tto_s: self.tto_s,
            },
        };
        let decision = if self.pending.is_empty() {
            self.state = OvertakerState::Proceed;
            Decision::Proceed
        } else {
            Decision::None
        };
        (Some(message), decision)
    }

    pub fn owner(&self) -> NodeId {
        self.owner
    }

    pub fn state(&self) -> OvertakerState {
        self.state
    }

    pub fn current_request_id(&self) -> u64 {
        self.current_request_id
    }

    pub fn pending(&self) -> &BTreeSet<NodeId> {
        &self.pending
    }

    pub fn retries_left(&self) -> u32 {
        self.retries_left
    }

    pub fn deadline(&self) -> f64 {
        self.deadline
    }

    pub fn tto_s(&self) -> f64 {
        self.tto_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponderState {
    Free,
    /// Promised an overtaker to hold speed until the commitment expires.
    CommittedConstantSpeed,
    /// Executing an overtake of its own.
    EngagedInManeuver,
}

/// A maneuver a node knows to be in progress.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActiveManeuver {
    pub overtaker_id: NodeId,
    /// Simulation time the maneuver is expected to be over, seconds.
    pub until: f64,
}

impl ActiveManeuver {
    pub fn is_active(&self, now: f64) -> bool {
        self.until > now
    }

    /// Conflicts with a request unless it is the requester's own maneuver.
    pub fn conflicts_with(&self, requester: NodeId, now: f64) -> bool {
        self.overtaker_id != requester && self.is_active(now)
    }
}

/// State machine run by every vehicle that can receive intents.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponderFsm {
    owner: NodeId,
    state: ResponderState,
    /// When the current commitment or own maneuver ends.
    commitment_until: f64,
}

impl ResponderFsm {
    pub fn new(owner: NodeId) -> Self {
        Self {
            owner,
            state: ResponderState::Free,
            commitment_until: 0.0,
        }
    }

    /// Answers an intent. A node that knows of a conflicting active maneuver
    /// (someone else's overtake still running, or its own) returns a Nack;
    /// otherwise it Acks and commits to constant speed for the advertised
    /// maneuver duration plus margin. Both replies echo the request id.
    pub fn on_intent(
        &mut self,
        msg: &Message,
        local_knowledge: &[ActiveManeuver],
        now: f64,
    ) -> Message {
        let requester = msg.maneuver.overtaker_id;
        let own_maneuver_running =
            self.state == ResponderState::EngagedInManeuver && self.commitment_until > now;
        let conflict = own_maneuver_running
            || local_knowledge
                .iter()
                .any(|m| m.conflicts_with(requester, now));
        let kind = if conflict {
            MessageKind::Nack
        } else {
            self.state = ResponderState::CommittedConstantSpeed;
            self.commitment_until = self
                .commitment_until
                .max(now + msg.maneuver.tto_s * COMMITMENT_MARGIN);
            MessageKind::Ack
        };
        Message {
            kind,
            sender: self.owner,
            request_id: msg.request_id,
            timestamp: now,
            maneuver: msg.maneuver,
        }
    }

    /// Marks the node as executing its own overtake until the given time.
    pub fn engage(&mut self, until: f64) {
        self.state = ResponderState::EngagedInManeuver;
        self.commitment_until = self.commitment_until.max(until);
    }

    /// Releases expired commitments.
    pub fn expire(&mut self, now: f64) {
        if self.state != ResponderState::Free && now >= self.commitment_until {
            self.state = ResponderState::Free;
        }
    }

    pub fn owner(&self) -> NodeId {
        self.owner
    }

    pub fn state(&self) -> ResponderState {
        self.state
    }

    pub fn commitment_until(&self) -> f64 {
        self.commitment_until
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn safe_assessment() -> SafetyAssessment {
        SafetyAssessment::assume_safe(9.4)
    }

    fn unsafe_assessment() -> SafetyAssessment {
        let mut a = SafetyAssessment::assume_safe(9.4);
        a.verdict = Verdict::Unsafe;
        a
    }

    fn ids(xs: &[u32]) -> BTreeSet<NodeId> {
        xs.iter().map(|&x| NodeId(x)).collect()
    }

    fn ack(sender: u32, request_id: u64) -> Message {
        Message {
            kind: MessageKind::Ack,
            sender: NodeId(sender),
            request_id,
            timestamp: 0.0,
            maneuver: ManeuverSummary {
                overtaker_id: NodeId(0),
                tto_s: 9.4,
            },
        }
    }

    fn nack(sender: u32, request_id: u64) -> Message {
        Message {
            kind: MessageKind::Nack,
            ..ack(sender, request_id)
        }
    }

    #[test]
    fn initiate_broadcasts_request_zero() {
        let (fsm, msg) = OvertakerFsm::initiate(
            NodeId(0),
            &safe_assessment(),
            ids(&[1, 2, 3]),
            ProtocolConfig::default(),
            1.0,
        )
        .unwrap();
        assert_eq!(msg.kind, MessageKind::Intent);
        assert_eq!(msg.request_id, 0);
        assert_eq!(fsm.state(), OvertakerState::AwaitingResponses);
        assert_eq!(fsm.pending(), &ids(&[1, 2, 3]));
        assert_eq!(fsm.deadline(), 1.5);
    }

    #[test]
    fn initiate_with_no_neighbors_proceeds_immediately() {
        let (fsm, _msg) = OvertakerFsm::initiate(
            NodeId(0),
            &safe_assessment(),
            BTreeSet::new(),
            ProtocolConfig::default(),
            0.0,
        )
        .unwrap();
        assert_eq!(fsm.state(), OvertakerState::Proceed);
    }

    #[test]
    fn initiate_refuses_unsafe_assessment() {
        assert_eq!(
            OvertakerFsm::initiate(
                NodeId(0),
                &unsafe_assessment(),
                ids(&[1]),
                ProtocolConfig::default(),
                0.0,
            )
            .unwrap_err(),
            ProtocolError::UnsafeAssessment
        );
    }

    #[test]
    fn full_ack_set_proceeds() {
        let (mut fsm, _) = OvertakerFsm::initiate(
            NodeId(0),
            &safe_assessment(),
            ids(&[1]),
            ProtocolConfig::default(),
            0.0,
        )
        .unwrap();
        assert_eq!(fsm.on_message(&ack(1, 0), 0.1), Decision::Proceed);
        assert_eq!(fsm.state(), OvertakerState::Proceed);
    }

    #[test]
    fn nack_aborts_immediately() {
        let (mut fsm, _) = OvertakerFsm::initiate(
            NodeId(0),
            &safe_assessment(),
            ids(&[1, 2]),
            ProtocolConfig::default(),
            0.0,
        )
        .unwrap();
        assert_eq!(fsm.on_message(&ack(1, 0), 0.1), Decision::None);
        assert_eq!(fsm.on_message(&nack(2, 0), 0.2), Decision::Abort);
        assert_eq!(fsm.state(), OvertakerState::Abort);
    }

    #[test]
    fn stale_response_after_resend_is_discarded() {
        let (mut fsm, _) = OvertakerFsm::initiate(
            NodeId(0),
            &safe_assessment(),
            ids(&[1, 2]),
            ProtocolConfig::default(),
            0.0,
        )
        .unwrap();
        let (resend, decision) = fsm.on_timeout(&safe_assessment(), ids(&[1, 2]), 0.5);
        assert_eq!(decision, Decision::None);
        assert_eq!(resend.unwrap().request_id, 1);
        let before = fsm.clone();
        // A late answer to request 0 must not touch anything -- not even a Nack.
        assert_eq!(fsm.on_message(&ack(1, 0), 0.6), Decision::None);
        assert_eq!(fsm.on_message(&nack(2, 0), 0.6), Decision::None);
        assert_eq!(fsm, before);
    }

    #[test]
    fn timeout_rebroadcasts_with_bumped_id_and_fresh_pending() {
        let (mut fsm, _) = OvertakerFsm::initiate(
            NodeId(0),
            &safe_assessment(),
            ids(&[1, 2]),
            ProtocolConfig::default(),
            0.0,
        )
        .unwrap();
        assert_eq!(fsm.on_message(&ack(1, 0), 0.1), Decision::None);
        let (resend, decision) = fsm.on_timeout(&safe_assessment(), ids(&[1, 2]), 0.5);
        assert_eq!(decision, Decision::None);
        assert_eq!(resend.unwrap().request_id, 1);
        // The earlier partial Ack does not carry over.
        assert_eq!(fsm.pending(), &ids(&[1, 2]));
        assert_eq!(fsm.retries_left(), 1);
        assert_eq!(fsm.deadline(), 1.0);
    }

    #[test]
    fn exhausted_retries_abort() {
        let config = ProtocolConfig::default();
        let (mut fsm, _) =
            OvertakerFsm::initiate(NodeId(0), &safe_assessment(), ids(&[1]), config, 0.0)
                .unwrap();
        let mut now = 0.0;
        for expected_id in 1..=config.max_retries as u64 {
            now += config.response_timeout;
            let (resend, decision) = fsm.on_timeout(&safe_assessment(), ids(&[1]), now);
            assert_eq!(decision, Decision::None);
            assert_eq!(resend.unwrap().request_id, expected_id);
        }
        now += config.response_timeout;
        let (resend, decision) = fsm.on_timeout(&safe_assessment(), ids(&[1]), now);
        assert!(resend.is_none());
        assert_eq!(decision, Decision::Abort);
        // Silence never reads as consent, and the whole run fits in
        // (max_retries + 1) timeouts.
        assert!(now <= (config.max_retries as f64 + 1.0) * config.response_timeout);
    }

    #[test]
    fn unsafe_reassessment_aborts_on_timeout() {
        let (mut fsm, _) = OvertakerFsm::initiate(
            NodeId(0),
            &safe_assessment(),
            ids(&[1]),
            ProtocolConfig::default(),
            0.0,
        )
        .unwrap();
        let (resend, decision) = fsm.on_timeout(&unsafe_assessment(), ids(&[1]), 0.5);
        assert!(resend.is_none());
        assert_eq!(decision, Decision::Abort);
    }

    #[test]
    fn free_responder_acks_and_commits() {
        let mut responder = ResponderFsm::new(NodeId(5));
        let intent = Message {
            kind: MessageKind::Intent,
            sender: NodeId(0),
            request_id: 0,
            timestamp: 2.0,
            maneuver: ManeuverSummary {
                overtaker_id: NodeId(0),
                tto_s: 10.0,
            },
        };
        let reply = responder.on_intent(&intent, &[], 2.0);
        assert_eq!(reply.kind, MessageKind::Ack);
        assert_eq!(reply.request_id, 0);
        assert_eq!(responder.state(), ResponderState::CommittedConstantSpeed);
        assert_eq!(responder.commitment_until(), 2.0 + 10.0 * COMMITMENT_MARGIN);
    }

    #[test]
    fn known_conflicting_maneuver_draws_nack() {
        let mut responder = ResponderFsm::new(NodeId(5));
        let intent = Message {
            kind: MessageKind::Intent,
            sender: NodeId(0),
            request_id: 3,
            timestamp: 4.0,
            maneuver: ManeuverSummary {
                overtaker_id: NodeId(0),
                tto_s: 10.0,
            },
        };
        let knowledge = [ActiveManeuver {
            overtaker_id: NodeId(9),
            until: 20.0,
        }];
        let reply = responder.on_intent(&intent, &knowledge, 4.0);
        assert_eq!(reply.kind, MessageKind::Nack);
        assert_eq!(reply.request_id, 3);
        assert_eq!(responder.state(), ResponderState::Free);
    }

    #[test]
    fn a_requesters_own_maneuver_is_not_a_conflict() {
        let mut responder = ResponderFsm::new(NodeId(5));
        let intent = Message {
            kind: MessageKind::Intent,
            sender: NodeId(0),
            request_id: 1,
            timestamp: 4.0,
            maneuver: ManeuverSummary {
                overtaker_id: NodeId(0),
                tto_s: 10.0,
            },
        };
        // The responder already acked request 0 from the same overtaker.
        let knowledge = [ActiveManeuver {
            overtaker_id: NodeId(0),
            until: 20.0,
        }];
        let reply = responder.on_intent(&intent, &knowledge, 4.0);
        assert_eq!(reply.kind, MessageKind::Ack);
    }

    #[test]
    fn each_reply_echoes_its_own_request_id() {
        let mut responder = ResponderFsm::new(NodeId(5));
        for request_id in [0u64, 1] {
            let intent = Message {
                kind: MessageKind::Intent,
                sender: NodeId(0),
                request_id,
                timestamp: 0.0,
                maneuver: ManeuverSummary {
                    overtaker_id: NodeId(0),
                    tto_s: 8.0,
                },
            };
            let reply = responder.on_intent(&intent, &[], 0.1 * request_id as f64);
            assert_eq!(reply.request_id, request_id);
        }
    }

    #[test]
    fn engaged_responder_nacks_and_expires() {
        let mut responder = ResponderFsm::new(NodeId(5));
        responder.engage(12.0);
        let intent = Message {
            kind: MessageKind::Intent,
            sender: NodeId(1),
            request_id: 0,
            timestamp: 5.0,
            maneuver: ManeuverSummary {
                overtaker_id: NodeId(1),
                tto_s: 6.0,
            },
        };
        assert_eq!(responder.on_intent(&intent, &[], 5.0).kind, MessageKind::Nack);
        responder.expire(12.0);
        assert_eq!(responder.state(), ResponderState::Free);
        assert_eq!(responder.on_intent(&intent, &[], 12.5).kind, MessageKind::Ack);
    }

    #[test]
    fn message_wire_format_is_stable() {
        let msg = Message {
            kind: MessageKind::Intent,
            sender: NodeId(7),
            request_id: 1,
            timestamp: 0.5,
            maneuver: ManeuverSummary {
                overtaker_id: NodeId(7),
                tto_s: 9.25,
            },
        };
        assert_eq!(
            serde_json::to_string(&msg).unwrap(),
            r#"{"kind":"intent","sender":7,"request_id":1,"timestamp":0.5,"maneuver":{"overtaker_id":7,"tto_s":9.25}}"#
        );
    }
}
