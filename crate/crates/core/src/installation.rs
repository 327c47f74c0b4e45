//! Exhibition state machine: idle scan, presence activation, capture,
//! processing, reveal and cooldown.
//!
//! [`step`] is the pure edge function. [`Machine`] adds timers read from a
//! [`Clock`] and keeps the [`SessionTrace`].

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backends::{BackendError, ModelBackend};
use crate::clock::Clock;
use crate::pipeline::RunStatus;
use crate::raster::CapturedFrame;

pub const DEFAULT_PRESENCE_THRESHOLD: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InstallationState {
    Idle,
    Activated,
    Capturing,
    Processing,
    Reveal,
    Cooldown,
    Fault,
}

impl InstallationState {
    pub const ALL: [InstallationState; 7] = [
        InstallationState::Idle,
        InstallationState::Activated,
        InstallationState::Capturing,
        InstallationState::Processing,
        InstallationState::Reveal,
        InstallationState::Cooldown,
        InstallationState::Fault,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    PresenceOn,
    PresenceOff,
    CaptureDone,
    RunDone { status: RunStatus },
    TimerExpired,
    Fault,
    /// Operator-forced capture.
    Trigger,
}

impl Event {
    pub fn name(&self) -> &'static str {
        match self {
            Event::PresenceOn => "presence_on",
            Event::PresenceOff => "presence_off",
            Event::CaptureDone => "capture_done",
            Event::RunDone { .. } => "run_done",
            Event::TimerExpired => "timer_expired",
            Event::Fault => "fault",
            Event::Trigger => "trigger",
        }
    }
}

/// Edge function. Pairs with no edge leave the state unchanged.
pub fn step(state: InstallationState, event: &Event) -> InstallationState {
    use InstallationState::*;
    match (state, event) {
        (Idle, Event::PresenceOn) => Activated,
        (Activated, Event::PresenceOff) => Idle,
        (Activated, Event::TimerExpired) => Capturing,
        (Idle | Activated, Event::Trigger) => Capturing,
        (Capturing, Event::CaptureDone) => Processing,
        (Processing, Event::RunDone { status: RunStatus::Ok | RunStatus::Degraded }) => Reveal,
        (Processing, Event::RunDone { status: RunStatus::Failed }) => Fault,
        (Reveal, Event::TimerExpired) => Cooldown,
        (Cooldown, Event::TimerExpired) => Idle,
        (Fault, Event::TimerExpired) => Idle,
        (s, Event::Fault) if s != Fault => Fault,
        (s, _) => s,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Timings {
    pub activate_ms: u64,
    pub reveal_ms: u64,
    pub reveal_after_leave_ms: u64,
    pub cooldown_ms: u64,
    pub fault_ms: u64,
}

impl Default for Timings {
    fn default() -> Self {
        Self {
            activate_ms: 1_000,
            reveal_ms: 20_000,
            reveal_after_leave_ms: 5_000,
            cooldown_ms: 3_000,
            fault_ms: 5_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub state: InstallationState,
    pub enter_ms: u64,
    pub trigger: String,
    /// Set on Processing entries once the run finishes.
    pub run_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SessionTrace {
    pub entries: Vec<TraceEntry>,
}

impl SessionTrace {
    pub fn states(&self) -> Vec<InstallationState> {
        self.entries.iter().map(|e| e.state).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub from: InstallationState,
    pub to: InstallationState,
    pub event: String,
    pub at_ms: u64,
}

pub struct Machine {
    state: InstallationState,
    entered_ms: u64,
    deadline: Option<u64>,
    timings: Timings,
    clock: Arc<dyn Clock>,
    trace: SessionTrace,
}

impl Machine {
    pub fn new(timings: Timings, clock: Arc<dyn Clock>) -> Self {
        let now = clock.now_ms();
        Self {
            state: InstallationState::Idle,
            entered_ms: now,
            deadline: None,
            timings,
            clock,
            trace: SessionTrace {
                entries: vec![TraceEntry {
                    state: InstallationState::Idle,
                    enter_ms: now,
                    trigger: "start".into(),
                    run_id: None,
                }],
            },
        }
    }

    pub fn state(&self) -> InstallationState {
        self.state
    }

    pub fn entered_ms(&self) -> u64 {
        self.entered_ms
    }

    pub fn deadline(&self) -> Option<u64> {
        self.deadline
    }

    pub fn trace(&self) -> &SessionTrace {
        &self.trace
    }

    pub fn timings(&self) -> Timings {
        self.timings
    }

    /// Apply `event` now. Fires any overdue timer first.
    pub fn handle(&mut self, event: Event) -> Vec<Transition> {
        let mut out = self.tick();
        let now = self.clock.now_ms();
        if let Some(t) = self.apply(event, now) {
            out.push(t);
        }
        out
    }

    /// Record the run that a Processing phase produced, then apply its
    /// outcome.
    pub fn run_done(&mut self, status: RunStatus, run_id: &str) -> Vec<Transition> {
        if self.state == InstallationState::Processing {
            if let Some(e) = self.trace.entries.last_mut() {
                e.run_id = Some(run_id.to_string());
            }
        }
        self.handle(Event::RunDone { status })
    }

    /// Fire expired timers; each fires at its own deadline.
    pub fn tick(&mut self) -> Vec<Transition> {
        let now = self.clock.now_ms();
        let mut out = Vec::new();
        while let Some(d) = self.deadline.filter(|&d| d <= now) {
            match self.apply(Event::TimerExpired, d) {
                Some(t) => out.push(t),
                None => self.deadline = None,
            }
        }
        out
    }

    fn apply(&mut self, event: Event, at: u64) -> Option<Transition> {
        let next = step(self.state, &event);
        if next == self.state {
            if self.state == InstallationState::Reveal && event == Event::PresenceOff {
                let leave = at + self.timings.reveal_after_leave_ms;
                self.deadline = Some(self.deadline.map_or(leave, |d| d.min(leave)));
            }
            return None;
        }
        let from = self.state;
        self.state = next;
        self.entered_ms = at;
        self.deadline = match next {
            InstallationState::Activated => Some(at + self.timings.activate_ms),
            InstallationState::Reveal => Some(at + self.timings.reveal_ms),
            InstallationState::Cooldown => Some(at + self.timings.cooldown_ms),
            InstallationState::Fault => Some(at + self.timings.fault_ms),
            _ => None,
        };
        self.trace.entries.push(TraceEntry {
            state: next,
            enter_ms: at,
            trigger: event.name().into(),
            run_id: None,
        });
        Some(Transition {
            from,
            to: next,
            event: event.name().into(),
            at_ms: at,
        })
    }
}

/// Presence from person detection, counting backend outages.
#[derive(Debug, Clone, PartialEq)]
pub struct PresenceDetector {
    pub theta: f64,
    pub faults: u64,
}

impl Default for PresenceDetector {
    fn default() -> Self {
        Self {
            theta: DEFAULT_PRESENCE_THRESHOLD,
            faults: 0,
        }
    }
}

impl PresenceDetector {
    pub fn new(theta: f64) -> Self {
        Self { theta, faults: 0 }
    }

    /// True iff some "person" box covers at least `theta` of the frame.
    pub fn detect(&mut self, frame: &CapturedFrame, backend: &dyn ModelBackend) -> bool {
        let area = frame.width() as f64 * frame.height() as f64;
        match backend.detect(frame, "person") {
            Ok(boxes) => boxes.iter().any(|b| b.area() as f64 >= self.theta * area),
            Err(e) => {
                if matches!(e, BackendError::Unavailable { .. }) {
                    self.faults += 1;
                }
                log::warn!("presence detection failed: {e}");
                false
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::VirtualClock;
    use InstallationState::*;

    fn machine() -> (Machine, Arc<VirtualClock>) {
        let clock = Arc::new(VirtualClock::new(0));
        (Machine::new(Timings::default(), clock.clone()), clock)
    }

    #[test]
    fn step_is_total() {
        let events = [
            Event::PresenceOn,
            Event::PresenceOff,
            Event::CaptureDone,
            Event::RunDone { status: RunStatus::Ok },
            Event::RunDone { status: RunStatus::Failed },
            Event::TimerExpired,
            Event::Fault,
            Event::Trigger,
        ];
        for s in InstallationState::ALL {
            for e in &events {
                let _ = step(s, e);
            }
        }
        assert_eq!(step(Idle, &Event::PresenceOn), Activated);
        assert_eq!(step(Processing, &Event::PresenceOff), Processing);
        assert_eq!(step(Processing, &Event::Trigger), Processing);
    }

    #[test]
    fn happy_path_with_timers() {
        let (mut m, clock) = machine();
        m.handle(Event::PresenceOn);
        clock.advance(999);
        assert!(m.tick().is_empty());
        clock.advance(1);
        assert_eq!(m.tick()[0].to, Capturing);
        m.handle(Event::CaptureDone);
        clock.advance(4_000);
        m.run_done(RunStatus::Ok, "r-1");
        clock.advance(23_000);
        m.tick();
        assert_eq!(m.state(), Idle);
        assert_eq!(m.trace().states(), [Idle, Activated, Capturing, Processing, Reveal, Cooldown, Idle]);
        let enters: Vec<_> = m.trace().entries.iter().map(|e| e.enter_ms).collect();
        assert_eq!(enters, [0, 0, 1_000, 1_000, 5_000, 25_000, 28_000]);
        assert_eq!(m.trace().entries[3].run_id.as_deref(), Some("r-1"));
    }

    #[test]
    fn leaving_during_reveal_shortens_it() {
        let (mut m, clock) = machine();
        m.handle(Event::Trigger);
        m.handle(Event::CaptureDone);
        m.run_done(RunStatus::Degraded, "r");
        clock.advance(2_000);
        m.handle(Event::PresenceOff);
        clock.advance(4_999);
        assert_eq!(m.tick().len(), 0);
        clock.advance(1);
        assert_eq!(m.tick()[0].to, Cooldown);
        assert_eq!(m.trace().entries.last().unwrap().enter_ms, 7_000);
    }
}
