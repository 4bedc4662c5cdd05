//! Socket-independent message handling for one connection.

use serde::de::DeserializeOwned;
use serde_json::Value;
use vguide_core::session::{ReplanMode, Session, SessionEvent, SessionState};
use vguide_core::{EnvEdit, GuideMixture, Result as GuideResult, Scenario};

use crate::protocol::{ErrorPayload, Kind, PoseUpdate, ReplanNotice, ScenarioSync, WireMessage};

/// Turns client messages into server messages. The server is client driven:
/// the session advances exactly one tick per `pose_update`.
pub struct Handler {
    id: String,
    scenario: Scenario,
    mixture: GuideMixture,
    mode: ReplanMode,
    session: Option<Session>,
    out_seq: u64,
    last_in: Option<u64>,
    last_pose: Option<Vec<f64>>,
}

impl Handler {
    pub fn new(id: impl Into<String>, scenario: Scenario, mixture: GuideMixture, mode: ReplanMode) -> Self {
        Self {
            id: id.into(),
            scenario,
            mixture,
            mode,
            session: None,
            out_seq: 0,
            last_in: None,
            last_pose: None,
        }
    }

    pub fn session_id(&self) -> &str {
        &self.id
    }

    pub fn session(&self) -> Option<&Session> {
        self.session.as_ref()
    }

    /// Handles one raw text message. Malformed input yields an error message.
    pub fn handle_text(&mut self, text: &str) -> Vec<WireMessage> {
        match WireMessage::parse(text) {
            Ok(msg) => self.handle(msg),
            Err(e) => {
                let seq = serde_json::from_str::<Value>(text).ok().and_then(|v| v.get("seq")?.as_u64());
                vec![self.error(seq, format!("malformed message: {e}"))]
            }
        }
    }

    pub fn handle(&mut self, msg: WireMessage) -> Vec<WireMessage> {
        if let Some(last) = self.last_in {
            if msg.seq <= last {
                return vec![self.error(Some(msg.seq), format!("sequence number {} not after {last}", msg.seq))];
            }
        }
        if msg.kind != Kind::Hello {
            if self.session.is_none() {
                return vec![self.error(Some(msg.seq), "hello required before other messages".into())];
            }
            if msg.session != self.id {
                return vec![self.error(Some(msg.seq), format!("unknown session {}", msg.session))];
            }
        }
        self.last_in = Some(msg.seq);
        match msg.kind {
            Kind::Hello => self.hello(msg.seq),
            Kind::PoseUpdate => match parse_payload::<PoseUpdate>(&msg.payload) {
                Ok(p) => self.pose_update(msg.seq, p),
                Err(e) => vec![self.error(Some(msg.seq), e)],
            },
            Kind::EnvEdit => match parse_payload::<EnvEdit>(&msg.payload) {
                Ok(edit) => match self.session.as_mut().expect("checked above").apply_edit(edit) {
                    Ok(()) => Vec::new(),
                    Err(e) => vec![self.error(Some(msg.seq), e.to_string())],
                },
                Err(e) => vec![self.error(Some(msg.seq), e)],
            },
            other => vec![self.error(Some(msg.seq), format!("{other:?} is not a client message"))],
        }
    }

    fn hello(&mut self, seq: u64) -> Vec<WireMessage> {
        if self.session.is_none() {
            match self.open_session() {
                Ok(s) => self.session = Some(s),
                Err(e) => return vec![self.error(Some(seq), e.to_string())],
            }
        }
        let state = &self.session.as_ref().expect("opened above").state;
        let sync = ScenarioSync {
            scenario: state.scenario.clone(),
            guide: state.guide_snapshot(),
            control_rate: state.guidance.control_rate,
        };
        vec![self.message(Kind::ScenarioSync, to_value(&sync), Some(seq))]
    }

    fn open_session(&self) -> GuideResult<Session> {
        let state = SessionState::new(self.scenario.clone(), self.mixture.clone())?;
        Ok(Session::new(state, self.mode))
    }

    fn pose_update(&mut self, seq: u64, p: PoseUpdate) -> Vec<WireMessage> {
        let session = self.session.as_mut().expect("checked by caller");
        let velocity = match (&p.velocity, &self.last_pose) {
            (Some(v), _) => v.clone(),
            // finite difference at the control rate when the client sends poses only
            (None, Some(prev)) if prev.len() == p.pose.len() => {
                let rate = session.state.guidance.control_rate;
                p.pose.iter().zip(prev).map(|(a, b)| (a - b) * rate).collect()
            }
            (None, _) => vec![0.0; p.pose.len()],
        };
        let frame = match session.tick(&p.pose, &velocity) {
            Ok(f) => f,
            Err(e) => return vec![self.error(Some(seq), e.to_string())],
        };
        self.last_pose = Some(p.pose);
        let notices: Vec<ReplanNotice> = frame
            .events
            .iter()
            .filter_map(|e| match e {
                SessionEvent::ReplanIntegrated { trigger, job, added, removed } => Some(ReplanNotice {
                    trigger: *trigger,
                    job: *job,
                    added: added.clone(),
                    removed: removed.clone(),
                    guide: session.state.guide_snapshot(),
                }),
                _ => None,
            })
            .collect();
        let mut out = vec![self.message(Kind::GuidanceFrame, to_value(&frame), Some(seq))];
        for n in notices {
            out.push(self.message(Kind::ReplanNotice, to_value(&n), Some(seq)));
        }
        out
    }

    fn message(&mut self, kind: Kind, payload: Value, in_reply_to: Option<u64>) -> WireMessage {
        self.out_seq += 1;
        WireMessage { session: self.id.clone(), seq: self.out_seq, kind, payload, in_reply_to }
    }

    fn error(&mut self, in_reply_to: Option<u64>, message: String) -> WireMessage {
        self.message(Kind::Error, to_value(&ErrorPayload { message }), in_reply_to)
    }
}

fn parse_payload<T: DeserializeOwned>(v: &Value) -> Result<T, String> {
    serde_json::from_value(v.clone()).map_err(|e| format!("bad payload: {e}"))
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("payload types always serialize")
}
