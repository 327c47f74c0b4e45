//! The installation loop. One task owns the state machine and applies
//! commands from a queue in arrival order; HTTP handlers only enqueue and
//! read the published snapshot.

use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, SystemTime};

use airays_core::backends::ModelBackend;
use airays_core::catalog::Catalog;
use airays_core::clock::{Clock, SystemClock, VirtualClock};
use airays_core::installation::{Event, InstallationState, Machine, PresenceDetector, Transition};
use airays_core::pipeline::{run_pipeline, PipelineError, PipelineRunRecord, RunStatus, RunStore};
use airays_core::raster::CapturedFrame;
use tokio::sync::{broadcast, mpsc, oneshot};

use crate::config::ServiceConfig;
use crate::events::{Body, Envelope, StateSnapshot, EVENTS_SCHEMA_VERSION};

const EVENT_BUFFER: usize = 1024;

pub type TriggerReply = Result<InstallationState, InstallationState>;

pub enum Command {
    /// A camera frame with its presence reading.
    Frame { frame: CapturedFrame, present: bool, outage: bool },
    Trigger { frame: Option<CapturedFrame>, reply: oneshot::Sender<TriggerReply> },
    RunFinished { session: u64, result: Result<PipelineRunRecord, PipelineError> },
    /// Re-read the clock now.
    Wake,
}

pub struct Shared {
    pub config: ServiceConfig,
    pub catalog: Arc<Catalog>,
    pub backends: Arc<dyn ModelBackend>,
    pub store: RunStore,
    pub clock: Arc<dyn Clock>,
    pub virtual_clock: Option<Arc<VirtualClock>>,
    pub presence: Mutex<PresenceDetector>,
    events: broadcast::Sender<Envelope>,
    snapshot: RwLock<StateSnapshot>,
    commands: mpsc::UnboundedSender<Command>,
}

impl Shared {
    pub fn snapshot(&self) -> StateSnapshot {
        let mut s = self.snapshot.read().expect("snapshot lock").clone();
        s.now_ms = self.clock.now_ms();
        s
    }

    /// Snapshot plus a receiver holding exactly the envelopes after it.
    pub fn subscribe(&self) -> (StateSnapshot, broadcast::Receiver<Envelope>) {
        let guard = self.snapshot.read().expect("snapshot lock");
        let rx = self.events.subscribe();
        let mut s = guard.clone();
        s.now_ms = self.clock.now_ms();
        (s, rx)
    }

    pub fn send(&self, cmd: Command) -> bool {
        self.commands.send(cmd).is_ok()
    }

    /// Presence reading for a frame; blocks on the detection backend.
    pub fn read_presence(&self, frame: &CapturedFrame) -> (bool, bool) {
        let mut det = self.presence.lock().expect("presence lock");
        let before = det.faults;
        let present = det.detect(frame, &*self.backends);
        (present, det.faults > before)
    }
}

struct Processing {
    session: u64,
    entered_ms: u64,
    result: Option<Result<PipelineRunRecord, PipelineError>>,
    emitted: usize,
}

pub struct Runtime {
    shared: Arc<Shared>,
    machine: Machine,
    commands: mpsc::UnboundedReceiver<Command>,
    seq: u64,
    frame: Option<CapturedFrame>,
    session: u64,
    processing: Option<Processing>,
    outages: u32,
}

pub fn build(config: ServiceConfig, catalog: Catalog, backends: Arc<dyn ModelBackend>) -> (Arc<Shared>, Runtime) {
    let (virtual_clock, clock): (Option<Arc<VirtualClock>>, Arc<dyn Clock>) = if config.virtual_clock {
        let v = Arc::new(VirtualClock::new(0));
        (Some(v.clone()), v)
    } else {
        (None, Arc::new(SystemClock))
    };
    let machine = Machine::new(config.timings, clock.clone());
    let (tx, rx) = mpsc::unbounded_channel();
    let (events, _) = broadcast::channel(EVENT_BUFFER);
    let snapshot = StateSnapshot {
        state: machine.state(),
        entered_ms: machine.entered_ms(),
        deadline_ms: machine.deadline(),
        now_ms: clock.now_ms(),
        seq: 0,
        last_run_id: None,
        presence_faults: 0,
        virtual_clock: virtual_clock.is_some(),
    };
    let shared = Arc::new(Shared {
        store: RunStore::new(&config.runs_dir),
        presence: Mutex::new(PresenceDetector::new(config.presence_threshold)),
        config,
        catalog: Arc::new(catalog),
        backends,
        clock,
        virtual_clock,
        events,
        snapshot: RwLock::new(snapshot),
        commands: tx,
    });
    let runtime = Runtime {
        shared: shared.clone(),
        machine,
        commands: rx,
        seq: 0,
        frame: None,
        session: 0,
        processing: None,
        outages: 0,
    };
    (shared, runtime)
}

impl Runtime {
    pub async fn run(mut self) {
        let mut tick = tokio::time::interval(Duration::from_millis(self.shared.config.tick_ms));
        tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        loop {
            tokio::select! {
                cmd = self.commands.recv() => match cmd {
                    Some(c) => self.on_command(c),
                    None => break,
                },
                _ = tick.tick() => {}
            }
            self.settle();
        }
    }

    fn now(&self) -> u64 {
        self.shared.clock.now_ms()
    }

    fn publish(&mut self, body: Body) {
        let mut snap = self.shared.snapshot.write().expect("snapshot lock");
        self.seq += 1;
        snap.seq = self.seq;
        snap.state = self.machine.state();
        snap.entered_ms = self.machine.entered_ms();
        snap.deadline_ms = self.machine.deadline();
        snap.presence_faults = self.shared.presence.lock().expect("presence lock").faults;
        if let Body::Run { run_id, .. } = &body {
            snap.last_run_id = Some(run_id.clone());
        }
        let env = Envelope {
            v: EVENTS_SCHEMA_VERSION,
            seq: self.seq,
            audience: body.audience(),
            at_ms: self.now(),
            body,
        };
        // no subscribers is fine
        let _ = self.shared.events.send(env);
    }

    fn refresh_snapshot(&self) {
        let mut snap = self.shared.snapshot.write().expect("snapshot lock");
        snap.state = self.machine.state();
        snap.entered_ms = self.machine.entered_ms();
        snap.deadline_ms = self.machine.deadline();
        snap.presence_faults = self.shared.presence.lock().expect("presence lock").faults;
    }

    fn notice(&mut self, message: String) {
        log::warn!("{message}");
        self.publish(Body::Notice { message });
    }

    fn apply(&mut self, transitions: Vec<Transition>) {
        for t in transitions {
            log::info!("{:?} -> {:?} on {}", t.from, t.to, t.event);
            let to = t.to;
            self.publish(Body::State(t));
            if to != InstallationState::Processing {
                self.processing = None;
            }
            if to == InstallationState::Capturing && self.machine.state() == InstallationState::Capturing {
                if let Some(f) = self.frame.take() {
                    self.capture(f);
                }
            }
        }
    }

    fn handle(&mut self, event: Event) {
        let ts = self.machine.handle(event);
        self.apply(ts);
    }

    fn capture(&mut self, frame: CapturedFrame) {
        let ts = self.machine.handle(Event::CaptureDone);
        if self.machine.state() != InstallationState::Processing {
            self.apply(ts);
            return;
        }
        self.session += 1;
        let session = self.session;
        // publish Capturing -> Processing before arming the run
        self.apply(ts);
        self.processing = Some(Processing {
            session,
            entered_ms: self.machine.entered_ms(),
            result: None,
            emitted: 0,
        });
        let shared = self.shared.clone();
        tokio::task::spawn_blocking(move || {
            let result = run_pipeline(
                &frame,
                &shared.config.pipeline(),
                &*shared.backends,
                &shared.catalog,
                &*shared.clock,
                &shared.store,
            );
            shared.send(Command::RunFinished { session, result });
        });
    }

    fn on_command(&mut self, cmd: Command) {
        // timers that expired before this command take effect first
        let ts = self.machine.tick();
        self.apply(ts);
        match cmd {
            Command::Frame { frame, present, outage } => {
                if outage {
                    self.outages += 1;
                    if self.outages >= self.shared.config.presence_fault_after {
                        self.outages = 0;
                        self.notice("presence detection unavailable".into());
                        self.handle(Event::Fault);
                        return;
                    }
                } else {
                    self.outages = 0;
                }
                if self.machine.state() == InstallationState::Capturing && self.processing.is_none() {
                    self.capture(frame);
                    return;
                }
                self.frame = Some(frame);
                self.handle(if present { Event::PresenceOn } else { Event::PresenceOff });
            }
            Command::Trigger { frame, reply } => {
                let state = self.machine.state();
                if !matches!(state, InstallationState::Idle | InstallationState::Activated) {
                    let _ = reply.send(Err(state));
                    return;
                }
                if frame.is_some() {
                    self.frame = frame;
                }
                self.handle(Event::Trigger);
                let _ = reply.send(Ok(self.machine.state()));
            }
            Command::RunFinished { session, result } => match &mut self.processing {
                Some(p) if p.session == session => p.result = Some(result),
                _ => log::info!("dropping result of stale session {session}"),
            },
            Command::Wake => {}
        }
    }

    /// Fire timers, pace keyword events and finish runs until nothing moves.
    fn settle(&mut self) {
        loop {
            let ts = self.machine.tick();
            let moved = !ts.is_empty();
            self.apply(ts);
            if !(self.advance_processing() || self.check_capture_timeout() || moved) {
                break;
            }
        }
        self.refresh_snapshot();
    }

    fn check_capture_timeout(&mut self) -> bool {
        let overdue = self.machine.state() == InstallationState::Capturing
            && self.now().saturating_sub(self.machine.entered_ms()) >= self.shared.config.capture_timeout_ms;
        if overdue {
            self.notice("no frame arrived while capturing".into());
            self.handle(Event::Fault);
        }
        overdue
    }

    /// Emit due keyword events; once all are out, deliver run_done.
    fn advance_processing(&mut self) -> bool {
        let now = self.now();
        let Some(p) = self.processing.as_mut() else {
            return false;
        };
        let record = match p.result.take() {
            None => return false,
            Some(Err(e)) => {
                self.processing = None;
                self.notice(format!("run could not be stored: {e}"));
                self.handle(Event::Fault);
                return true;
            }
            Some(Ok(r)) => r,
        };
        let elapsed = now.saturating_sub(p.entered_ms);
        let mut due = Vec::new();
        while let Some(k) = record.keyword_events.get(p.emitted) {
            if k.offset_ms > elapsed {
                break;
            }
            due.push(k.clone());
            p.emitted += 1;
        }
        let finished = p.emitted == record.keyword_events.len();
        if !finished {
            p.result = Some(Ok(record.clone()));
        }
        let moved = !due.is_empty() || finished;
        for k in due {
            self.publish(Body::Keyword {
                run_id: record.run_id.clone(),
                text: k.text,
                stage: k.stage,
                offset_ms: k.offset_ms,
            });
        }
        if finished {
            self.processing = None;
            self.finish_run(record);
        }
        moved
    }

    fn finish_run(&mut self, record: PipelineRunRecord) {
        self.publish(Body::Run {
            run_id: record.run_id.clone(),
            status: record.status,
            degradations: record.degradations.clone(),
            error_detail: record.error_detail.clone(),
        });
        let ts = self.machine.run_done(record.status, &record.run_id);
        self.apply(ts);
        if record.status != RunStatus::Failed && self.machine.state() == InstallationState::Reveal {
            self.publish(Body::Reveal {
                composite_url: format!("/runs/{}/composite.png", record.run_id),
                record_url: format!("/runs/{}", record.run_id),
                run_id: record.run_id,
                status: record.status,
                panel_meta: record.panel_meta,
            });
        }
    }
}

/// Poll `dir` for PNG files newer than the last one seen and feed them in
/// as frames.
pub async fn watch_capture_dir(shared: Arc<Shared>, dir: PathBuf) {
    let mut last_seen = SystemTime::UNIX_EPOCH;
    let mut every = tokio::time::interval(Duration::from_millis(shared.config.capture_poll_ms));
    loop {
        every.tick().await;
        let (d, since) = (dir.clone(), last_seen);
        let newest = tokio::task::spawn_blocking(move || newest_png(&d, since)).await.ok().flatten();
        let Some((mtime, path)) = newest else { continue };
        last_seen = mtime;
        let s = shared.clone();
        let _ = tokio::task::spawn_blocking(move || {
            let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
            let frame = CapturedFrame::from_png(&bytes, s.clock.now_ms(), path.display().to_string()).map_err(|e| e.to_string())?;
            let (present, outage) = s.read_presence(&frame);
            s.send(Command::Frame { frame, present, outage });
            Ok::<(), String>(())
        })
        .await
        .map(|r| r.map_err(|e| log::warn!("capture dir: {e}")));
    }
}

fn newest_png(dir: &std::path::Path, since: SystemTime) -> Option<(SystemTime, PathBuf)> {
    std::fs::read_dir(dir)
        .ok()?
        .filter_map(Result::ok)
        .filter(|e| e.path().extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .filter_map(|e| Some((e.metadata().ok()?.modified().ok()?, e.path())))
        .filter(|(m, _)| *m > since)
        .max()
}
