//! Human-in-the-loop sessions: a commander types instructions, the autopilot
//! flies up to a fixed number of moves per instruction and either stops or
//! asks for more guidance.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::apply_move;
use crate::agents::{oracle_output, AgentOutput, AgentState, NetworkPolicy, Policy, Vocabulary};
use crate::dataset::phrases::{self, ALLOCENTRIC_MARKERS, EGOCENTRIC_MARKERS};
use crate::dataset::{
    generate_episode, goal_overlap_mask, view_inside_world, DialogRound, Episode, GeneratorConfig, InstructionStyle,
};
use crate::error::{Error, Result};
use crate::geometry::{iou, view_polygon, Trajectory, ViewArea};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionPhase {
    AwaitingInstruction,
    AgentFlying,
    Finished,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SessionEvent {
    Instruction {
        round: usize,
        text: String,
    },
    Moved {
        step: usize,
        view: ViewArea,
        vertices: Vec<(f64, f64)>,
        output: AgentOutput,
        iou: f64,
    },
    Question {
        round: usize,
        text: String,
    },
    Stopped {
        reason: super::StopReason,
        final_iou: f64,
        success: bool,
    },
}

/// Task fixed by the caller instead of drawn from a seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStub {
    pub map_seed: u64,
    pub world_side: f64,
    pub start_view: ViewArea,
    pub goal: ViewArea,
    pub max_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionSource {
    Seed(u64),
    Episode(EpisodeStub),
}

/// What flies the drone between instructions.
#[derive(Debug, Clone)]
pub enum Autopilot {
    /// Scripted flight straight at the (server-known) goal.
    Oracle,
    Network(Arc<NetworkPolicy>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub capacity: usize,
    /// Moves the autopilot may make per instruction.
    pub steps_per_round: usize,
    pub step_max: f64,
    pub stop_threshold: f64,
    pub iou_threshold: f64,
    pub generator: GeneratorConfig,
}

impl Default for SessionConfig {
    fn default() -> Self {
        let generator = GeneratorConfig::default();
        Self {
            capacity: 64,
            steps_per_round: 1,
            step_max: generator.step_max,
            stop_threshold: 0.5,
            iou_threshold: 0.4,
            generator,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SessionState {
    pub session_id: String,
    pub episode: Episode,
    pub trajectory: Trajectory,
    pub dialog: Vec<DialogRound>,
    pub phase: SessionPhase,
    pub events: Vec<SessionEvent>,
    pub last_output: Option<AgentOutput>,
    pending_question: Option<String>,
    rng: ChaCha8Rng,
}

/// Serializable view of a session for clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub session_id: String,
    pub phase: SessionPhase,
    pub world_side: f64,
    pub max_steps: usize,
    pub goal: ViewArea,
    pub goal_vertices: Vec<(f64, f64)>,
    pub trajectory: Trajectory,
    pub current_vertices: Vec<(f64, f64)>,
    pub dialog: Vec<DialogRound>,
    pub attention: Option<Vec<Vec<f64>>>,
    pub current_iou: f64,
    pub events: usize,
}

/// Egocentric unless the text uses only compass words; both kinds → mixed.
pub fn classify_style(text: &str) -> InstructionStyle {
    let ego = phrases::contains_phrase(text, EGOCENTRIC_MARKERS);
    let allo = phrases::contains_phrase(text, ALLOCENTRIC_MARKERS);
    match (ego, allo) {
        (true, true) => InstructionStyle::Mixed,
        (false, true) => InstructionStyle::Allocentric,
        _ => InstructionStyle::Egocentric,
    }
}

impl SessionState {
    fn open(session_id: String, source: &SessionSource, cfg: &SessionConfig) -> Result<Self> {
        let (episode, seed) = match source {
            SessionSource::Seed(seed) => {
                let mut ep = generate_episode(*seed, &cfg.generator)?;
                ep.id = session_id.clone();
                ep.dialog.clear();
                ep.gt_trajectory = Trajectory::single(ep.start_view);
                ep.gt_attention.truncate(1);
                (ep, *seed)
            }
            SessionSource::Episode(stub) => {
                let grid = cfg.generator.patch_grid;
                let ep = Episode {
                    id: session_id.clone(),
                    map_seed: stub.map_seed,
                    world_side: stub.world_side,
                    start_view: stub.start_view,
                    start_direction: stub.start_view.rotation,
                    goal: stub.goal,
                    max_steps: stub.max_steps,
                    dialog: Vec::new(),
                    gt_trajectory: Trajectory::single(stub.start_view),
                    gt_attention: vec![goal_overlap_mask(&stub.start_view, &stub.goal, grid)],
                };
                ep.validate()
                    .map_err(|(field, msg)| Error::Invalid(format!("session episode field `{field}`: {msg}")))?;
                (ep, stub.map_seed)
            }
        };
        Ok(Self {
            session_id,
            trajectory: Trajectory::single(episode.start_view),
            episode,
            dialog: Vec::new(),
            phase: SessionPhase::AwaitingInstruction,
            events: Vec::new(),
            last_output: None,
            pending_question: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn current_view(&self) -> &ViewArea {
        self.trajectory.last()
    }

    pub fn moves(&self) -> usize {
        self.trajectory.len() - 1
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        let current = self.current_view();
        SessionSnapshot {
            session_id: self.session_id.clone(),
            phase: self.phase,
            world_side: self.episode.world_side,
            max_steps: self.episode.max_steps,
            goal: self.episode.goal,
            goal_vertices: view_polygon(&self.episode.goal).vertices().to_vec(),
            trajectory: self.trajectory.clone(),
            current_vertices: view_polygon(current).vertices().to_vec(),
            dialog: self.dialog.clone(),
            attention: self.last_output.as_ref().map(|o| {
                let n = o.attention.size();
                (0..n).map(|r| (0..n).map(|c| o.attention.get(r, c)).collect()).collect()
            }),
            current_iou: iou(current, &self.episode.goal),
            events: self.events.len(),
        }
    }

    fn act(&self, autopilot: &Autopilot, cfg: &SessionConfig) -> Result<AgentOutput> {
        match autopilot {
            Autopilot::Oracle => Ok(oracle_output(
                self.current_view(),
                &self.episode.goal,
                cfg.step_max,
                cfg.iou_threshold,
                self.episode.patch_grid(),
            )),
            Autopilot::Network(policy) => {
                let state = AgentState::from_views(
                    &self.episode,
                    &self.dialog,
                    self.trajectory.views(),
                    &Vocabulary::default(),
                    policy.resolution(),
                )?;
                policy.act(&state)
            }
        }
    }

    /// Records the instruction and flies. Nothing changes on error.
    pub fn submit_instruction(&mut self, text: &str, autopilot: &Autopilot, cfg: &SessionConfig) -> Result<Vec<SessionEvent>> {
        if self.phase != SessionPhase::AwaitingInstruction {
            return Err(Error::Protocol(format!(
                "session {} is {:?}, not awaiting an instruction",
                self.session_id, self.phase
            )));
        }
        let text = text.trim();
        if text.is_empty() {
            return Err(Error::Invalid("instruction text is empty".into()));
        }
        let mut work = self.clone();
        let events = work.fly(text, autopilot, cfg)?;
        *self = work;
        Ok(events)
    }

    fn fly(&mut self, text: &str, autopilot: &Autopilot, cfg: &SessionConfig) -> Result<Vec<SessionEvent>> {
        self.phase = SessionPhase::AgentFlying;
        let round = self.dialog.len();
        self.dialog.push(DialogRound {
            question: self.pending_question.take(),
            instruction: text.to_string(),
            style: classify_style(text),
        });
        let mut events = vec![SessionEvent::Instruction {
            round,
            text: text.to_string(),
        }];
        let goal = self.episode.goal;
        let mut moved = 0;
        loop {
            let out = self.act(autopilot, cfg).map_err(|e| Error::AtStep {
                step: self.moves(),
                source: Box::new(e),
            })?;
            out.validate()?;
            self.last_output = Some(out.clone());
            if out.stop_prob >= cfg.stop_threshold {
                events.push(self.finish(super::StopReason::Stopped, cfg));
                break;
            }
            if moved == cfg.steps_per_round {
                let q = phrases::QUESTIONS[self.rng.gen_range(0..phrases::QUESTIONS.len())].to_string();
                self.pending_question = Some(q.clone());
                self.phase = SessionPhase::AwaitingInstruction;
                events.push(SessionEvent::Question { round, text: q });
                break;
            }
            let next = apply_move(self.current_view(), &out, cfg.step_max, self.episode.world_side)?;
            self.trajectory.push(next);
            moved += 1;
            events.push(SessionEvent::Moved {
                step: self.moves(),
                view: next,
                vertices: view_polygon(&next).vertices().to_vec(),
                output: out,
                iou: iou(&next, &goal),
            });
            if self.moves() >= self.episode.max_steps {
                events.push(self.finish(super::StopReason::MaxSteps, cfg));
                break;
            }
        }
        self.events.extend(events.iter().cloned());
        Ok(events)
    }

    fn finish(&mut self, reason: super::StopReason, cfg: &SessionConfig) -> SessionEvent {
        self.phase = SessionPhase::Finished;
        let final_iou = iou(self.current_view(), &self.episode.goal);
        SessionEvent::Stopped {
            reason,
            final_iou,
            success: final_iou >= cfg.iou_threshold,
        }
    }

    /// The flown session as an episode record: the human dialog and the
    /// flown trajectory become the demonstration.
    pub fn to_episode(&self) -> Result<Episode> {
        if self.phase != SessionPhase::Finished {
            return Err(Error::Protocol(format!("session {} has not finished", self.session_id)));
        }
        let grid = self.episode.patch_grid();
        let ep = Episode {
            id: self.session_id.clone(),
            dialog: self.dialog.clone(),
            gt_trajectory: self.trajectory.clone(),
            gt_attention: self
                .trajectory
                .views()
                .iter()
                .map(|v| goal_overlap_mask(v, &self.episode.goal, grid))
                .collect(),
            ..self.episode.clone()
        };
        ep.validate()
            .map_err(|(field, msg)| Error::Invalid(format!("session episode field `{field}`: {msg}")))?;
        Ok(ep)
    }
}

/// Concurrent session store with a fixed capacity. Each session has its own
/// lock.
pub struct SessionRegistry {
    cfg: SessionConfig,
    autopilot: Autopilot,
    inner: Mutex<RegistryInner>,
}

struct RegistryInner {
    next_id: u64,
    sessions: BTreeMap<String, Arc<Mutex<SessionState>>>,
}

impl SessionRegistry {
    pub fn new(cfg: SessionConfig, autopilot: Autopilot) -> Self {
        Self {
            cfg,
            autopilot,
            inner: Mutex::new(RegistryInner {
                next_id: 1,
                sessions: BTreeMap::new(),
            }),
        }
    }

    pub fn config(&self) -> &SessionConfig {
        &self.cfg
    }

    pub fn autopilot(&self) -> &Autopilot {
        &self.autopilot
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("registry lock").sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn open_session(&self, source: &SessionSource) -> Result<SessionSnapshot> {
        let mut inner = self.inner.lock().expect("registry lock");
        if inner.sessions.len() >= self.cfg.capacity {
            return Err(Error::Capacity(format!("{} sessions open", inner.sessions.len())));
        }
        let id = format!("s{:06}", inner.next_id);
        let state = SessionState::open(id.clone(), source, &self.cfg)?;
        if !view_inside_world(&state.episode.goal, state.episode.world_side) {
            return Err(Error::Invalid("goal lies outside the world".into()));
        }
        inner.next_id += 1;
        let snap = state.snapshot();
        inner.sessions.insert(id, Arc::new(Mutex::new(state)));
        Ok(snap)
    }

    pub fn get(&self, id: &str) -> Option<Arc<Mutex<SessionState>>> {
        self.inner.lock().expect("registry lock").sessions.get(id).cloned()
    }

    /// `None` when the session does not exist.
    pub fn submit_instruction(&self, id: &str, text: &str) -> Option<Result<Vec<SessionEvent>>> {
        let session = self.get(id)?;
        let mut state = session.lock().expect("session lock");
        Some(state.submit_instruction(text, &self.autopilot, &self.cfg))
    }
}
