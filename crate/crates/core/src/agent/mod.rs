//! The remapping agent: state encoding, dueling Q-network, experience
//! replay, ε-greedy action selection, OPC-delta rewards, and the eight
//! page/compute remapping actions.

mod net;

pub use net::{Dense, QNetwork};

use std::fmt;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::memnet::{CubeId, MeshConfig};
use crate::offload::{History, PageInfoEntry, SystemCounters, HISTORY_LEN};
use crate::trace::VPage;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AgentError {
    #[error("state has {got} entries, network expects {expected}")]
    Shape { expected: usize, got: usize },
    #[error("training produced a non-finite loss ({0})")]
    NonFinite(f64),
    #[error("invalid agent configuration: {0}")]
    Config(String),
}

/// Agent invocation intervals, in cycles.
pub const INTERVALS: [u64; 4] = [100, 125, 167, 250];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    DefaultMapping = 0,
    NearDataRemap = 1,
    FarDataRemap = 2,
    NearComputeRemap = 3,
    FarComputeRemap = 4,
    SourceComputeRemap = 5,
    IncreaseInterval = 6,
    DecreaseInterval = 7,
}

impl Action {
    pub const COUNT: usize = 8;
    pub const ALL: [Action; 8] = [
        Action::DefaultMapping,
        Action::NearDataRemap,
        Action::FarDataRemap,
        Action::NearComputeRemap,
        Action::FarComputeRemap,
        Action::SourceComputeRemap,
        Action::IncreaseInterval,
        Action::DecreaseInterval,
    ];

    pub fn from_id(id: usize) -> Option<Action> {
        Self::ALL.get(id).copied()
    }

    pub fn id(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.id())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentConfig {
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_ticks: u64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub train_period: u64,
    pub replay_capacity: usize,
    pub hidden: [usize; 2],
    pub state_len: usize,
    /// Ticks between target-network refreshes; 0 bootstraps from the
    /// online network itself.
    pub target_sync: u64,
    pub reward_tol: f64,
    pub history: usize,
    pub norm: StateNorm,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_ticks: 10_000,
            learning_rate: 1e-3,
            batch_size: 32,
            train_period: 4,
            replay_capacity: 32_768,
            hidden: [256, 256],
            state_len: 144,
            target_sync: 0,
            reward_tol: 1e-3,
            history: HISTORY_LEN,
            norm: StateNorm::default(),
            seed: 0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::Config(m.into()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        let eps_ok = |e: f64| (0.0..=1.0).contains(&e);
        if !eps_ok(self.epsilon_start) || !eps_ok(self.epsilon_end) {
            return bad("epsilon bounds must lie in [0, 1]");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.batch_size == 0 || self.train_period == 0 || self.replay_capacity == 0 {
            return bad("batch size, train period and replay capacity must be positive");
        }
        if self.hidden.contains(&0) {
            return bad("hidden layers must be nonempty");
        }
        Ok(())
    }

    /// Linear decay from start to end over `epsilon_decay_ticks`.
    pub fn epsilon(&self, tick: u64) -> f64 {
        if self.epsilon_decay_ticks == 0 || tick >= self.epsilon_decay_ticks {
            return self.epsilon_end;
        }
        let f = tick as f64 / self.epsilon_decay_ticks as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * f
    }
}

/// Squashing scales for unbounded page features: `v / (v + scale)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateNorm {
    pub access_scale: f64,
    pub latency_scale: f64,
    pub migration_latency_scale: f64,
}

impl Default for StateNorm {
    fn default() -> Self {
        Self { access_scale: 64.0, latency_scale: 256.0, migration_latency_scale: 512.0 }
    }
}

fn squash(v: f64, scale: f64) -> f64 {
    if v <= 0.0 {
        0.0
    } else {
        v / (v + scale)
    }
}

/// What the state is built from.
#[derive(Clone, Copy, Debug)]
pub struct StateInputs<'a> {
    pub counters: &'a SystemCounters,
    pub page: &'a PageInfoEntry,
    pub global_actions: &'a History,
    pub host_cube: Option<CubeId>,
    /// Per-cube share of the last interval's completions, each in [0, 1].
    pub completion_share: &'a [f64],
    pub mesh: &'a MeshConfig,
}

/// Number of entries the layout fills before padding.
pub fn natural_state_len(cubes: usize, mcs: usize, h: usize) -> usize {
    // occupancy, hit rate, MC queues, global actions, two page rates,
    // four page histories, then host / compute / src1 one-hots and the
    // completion share
    2 * cubes + mcs + h + 2 + 4 * h + 4 * cubes
}

/// Lays the state out as
///
/// | block | length |
/// |---|---|
/// | NMP-table occupancy per cube | N |
/// | row-buffer hit rate per cube | N |
/// | MC queue occupancy | M |
/// | global action history (id / 7) | H |
/// | page access rate, migrations per access | 2 |
/// | page hop, latency, migration-latency, action histories | 4H |
/// | page host cube, last compute cube, last src1 cube (one-hot) | 3N |
/// | completion share per cube | N |
///
/// zero-padded to `target_len`.
pub fn encode_state(inp: &StateInputs<'_>, norm: &StateNorm, target_len: usize) -> Vec<f64> {
    let c = inp.counters;
    let n = c.nmp_occupancy.len();
    let p = inp.page;
    let diameter = f64::from(inp.mesh.diameter().max(1));
    let mut s = Vec::with_capacity(target_len);
    s.extend(&c.nmp_occupancy);
    s.extend(&c.row_hit_rate);
    s.extend(&c.mc_queue);
    s.extend(inp.global_actions.padded().iter().map(|a| a / 7.0));
    s.push(squash(p.access_count as f64, norm.access_scale));
    s.push(p.migrations_per_access().min(1.0));
    s.extend(p.hops.padded().iter().map(|h| (h / diameter).min(1.0)));
    s.extend(p.latencies.padded().iter().map(|l| squash(*l, norm.latency_scale)));
    s.extend(p.migration_latencies.padded().iter().map(|l| squash(*l, norm.migration_latency_scale)));
    s.extend(p.actions.padded().iter().map(|a| a / 7.0));
    for cube in [inp.host_cube, p.last_compute_cube, p.last_src1_cube] {
        let at = s.len();
        s.resize(at + n, 0.0);
        if let Some(k) = cube.filter(|&k| k < n) {
            s[at + k] = 1.0;
        }
    }
    let at = s.len();
    s.resize(at + n, 0.0);
    for (d, v) in s[at..].iter_mut().zip(inp.completion_share) {
        *d = v.clamp(0.0, 1.0);
    }
    if s.len() < target_len {
        s.resize(target_len, 0.0);
    }
    s
}

/// +1 when OPC rose by more than `tol` (relative), −1 when it fell by more
/// than `tol`, 0 otherwise.
pub fn compute_reward(opc_prev: f64, opc_cur: f64, tol: f64) -> i8 {
    if opc_cur > opc_prev * (1.0 + tol) {
        1
    } else if opc_cur < opc_prev * (1.0 - tol) {
        -1
    } else {
        0
    }
}

/// With probability ε a uniform action, else the greedy one (ties go to
/// the lowest id).
pub fn select_action<R: Rng>(net: &QNetwork, s: &[f64], eps: f64, rng: &mut R) -> Result<Action, AgentError> {
    if eps > 0.0 && rng.gen::<f64>() < eps {
        return Ok(Action::ALL[rng.gen_range(0..Action::COUNT)]);
    }
    Ok(Action::ALL[argmax(&net.forward(s)?)])
}

fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in q.iter().enumerate() {
        if *v > q[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct Experience {
    pub s: Vec<f64>,
    pub a: Action,
    pub r: i8,
    pub s_next: Vec<f64>,
    pub terminal: bool,
}

#[derive(Clone, Debug)]
struct Stored {
    s: Box<[f32]>,
    a: Action,
    r: i8,
    s_next: Box<[f32]>,
    terminal: bool,
}

/// Ring of past transitions. States are stored in single precision.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Stored>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, items: Vec::new(), next: 0 }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, e: Experience) {
        let narrow = |v: &[f64]| v.iter().map(|x| *x as f32).collect::<Box<[f32]>>();
        let item = Stored { s: narrow(&e.s), a: e.a, r: e.r, s_next: narrow(&e.s_next), terminal: e.terminal };
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.next] = item;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Up to `n` distinct experiences, uniformly at random.
    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<Experience> {
        let widen = |v: &[f32]| v.iter().map(|x| f64::from(*x)).collect::<Vec<f64>>();
        index::sample(rng, self.items.len(), n.min(self.items.len()))
            .into_iter()
            .map(|i| {
                let it = &self.items[i];
                Experience { s: widen(&it.s), a: it.a, r: it.r, s_next: widen(&it.s_next), terminal: it.terminal }
            })
            .collect()
    }
}

/// One SGD step on the squared TD error. Targets bootstrap from `target`
/// (or the online network when `None`). Returns the pre-update loss.
pub fn train_step(
    net: &mut QNetwork,
    target: Option<&QNetwork>,
    batch: &[Experience],
    gamma: f64,
    lr: f64,
) -> Result<f64, AgentError> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    let mut ys = Vec::with_capacity(batch.len());
    for e in batch {
        let y = if e.terminal {
            f64::from(e.r)
        } else {
            let q = target.unwrap_or(net).forward(&e.s_next)?;
            f64::from(e.r) + gamma * q.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        };
        ys.push(y);
    }
    let samples: Vec<(&[f64], usize, f64)> =
        batch.iter().zip(&ys).map(|(e, y)| (e.s.as_slice(), e.a.id(), *y)).collect();
    let (loss, grad) = net.loss_and_grad(&samples);
    if !loss.is_finite() {
        return Err(AgentError::NonFinite(loss));
    }
    net.apply_gradient(&grad, lr);
    Ok(loss)
}

/// What an action asks the system to do.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActionEffect {
    None,
    Migrate { page: VPage, dst: CubeId },
    RemapCompute { page: VPage, cube: CubeId },
    Interval(u64),
}

#[derive(Clone, Copy, Debug)]
pub struct ActionContext<'a> {
    pub page: VPage,
    pub host_cube: CubeId,
    /// Where the page's most recent op computed (its host if unknown).
    pub compute_cube: CubeId,
    pub src1_cube: Option<CubeId>,
    pub mesh: &'a MeshConfig,
}

/// Translates `a` into an effect. Interval actions move `interval_idx`
/// within [`INTERVALS`], clamped at both ends.
pub fn apply_action<R: Rng>(
    a: Action,
    ctx: &ActionContext<'_>,
    interval_idx: &mut usize,
    rng: &mut R,
) -> ActionEffect {
    let near = |rng: &mut R| {
        let n = ctx.mesh.neighbors(ctx.compute_cube);
        n[rng.gen_range(0..n.len())]
    };
    let far = ctx.mesh.diagonal_opposite(ctx.compute_cube);
    match a {
        Action::DefaultMapping => ActionEffect::None,
        Action::NearDataRemap => ActionEffect::Migrate { page: ctx.page, dst: near(rng) },
        Action::FarDataRemap => ActionEffect::Migrate { page: ctx.page, dst: far },
        Action::NearComputeRemap => ActionEffect::RemapCompute { page: ctx.page, cube: near(rng) },
        Action::FarComputeRemap => ActionEffect::RemapCompute { page: ctx.page, cube: far },
        Action::SourceComputeRemap => ActionEffect::RemapCompute {
            page: ctx.page,
            cube: ctx.src1_cube.unwrap_or(ctx.host_cube),
        },
        Action::IncreaseInterval => {
            *interval_idx = (*interval_idx + 1).min(INTERVALS.len() - 1);
            ActionEffect::Interval(INTERVALS[*interval_idx])
        }
        Action::DecreaseInterval => {
            *interval_idx = interval_idx.saturating_sub(1);
            ActionEffect::Interval(INTERVALS[*interval_idx])
        }
    }
}

/// Everything the agent sees at one invocation.
#[derive(Clone, Copy, Debug)]
pub struct TickInput<'a> {
    pub counters: &'a SystemCounters,
    pub candidate: Option<&'a PageInfoEntry>,
    pub host_cube: Option<CubeId>,
    pub completion_share: &'a [f64],
    /// OPC over the interval that just ended.
    pub opc: f64,
    pub mesh: &'a MeshConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TickOutcome {
    pub action: Action,
    pub effect: ActionEffect,
    pub reward: Option<i8>,
    pub loss: Option<f64>,
    pub epsilon: f64,
    pub interval: u64,
}

/// Accesses to the agent's storage structures, for the energy model.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AgentTallies {
    /// One per forward or backward pass over the weights.
    pub weight_accesses: u64,
    pub replay_accesses: u64,
    pub state_accesses: u64,
    pub ticks: u64,
    pub train_steps: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainLogRow {
    pub tick: u64,
    pub epsilon: f64,
    pub loss: Option<f64>,
    pub reward: Option<i8>,
    pub action: Action,
    pub interval: u64,
}

/// The agent. Its network, replay memory, exploration schedule and RNG
/// persist across simulation repeats; [`Agent::begin_episode`] clears only
/// per-episode context.
#[derive(Clone, Debug)]
pub struct Agent {
    pub cfg: AgentConfig,
    pub net: QNetwork,
    target: Option<QNetwork>,
    replay: ReplayBuffer,
    rng: ChaCha8Rng,
    ticks: u64,
    interval_idx: usize,
    prev: Option<(Vec<f64>, Action)>,
    prev_opc: Option<f64>,
    global_actions: History,
    pub tallies: AgentTallies,
    pub log: Vec<TrainLogRow>,
}

impl Agent {
    pub fn new(cfg: AgentConfig, cubes: usize, mcs: usize) -> Result<Self, AgentError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let len = cfg.state_len.max(natural_state_len(cubes, mcs, cfg.history));
        let net = QNetwork::new(len, cfg.hidden, Action::COUNT, &mut rng);
        let target = (cfg.target_sync > 0).then(|| net.clone());
        Ok(Self {
            replay: ReplayBuffer::new(cfg.replay_capacity),
            global_actions: History::new(cfg.history),
            cfg,
            net,
            target,
            rng,
            ticks: 0,
            interval_idx: 0,
            prev: None,
            prev_opc: None,
            tallies: AgentTallies::default(),
            log: Vec::new(),
        })
    }

    pub fn state_len(&self) -> usize {
        self.net.input_len()
    }

    pub fn interval(&self) -> u64 {
        INTERVALS[self.interval_idx]
    }

    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    pub fn replay_len(&self) -> usize {
        self.replay.len()
    }

    pub fn epsilon(&self) -> f64 {
        self.cfg.epsilon(self.ticks)
    }

    /// Starts a new episode: the pending transition is closed as terminal
    /// and the interval returns to its initial value.
    pub fn begin_episode(&mut self) {
        if let Some((s, a)) = self.prev.take() {
            self.replay.push(Experience { s: s.clone(), a, r: 0, s_next: s, terminal: true });
            self.tallies.replay_accesses += 1;
        }
        self.prev_opc = None;
        self.interval_idx = 0;
        self.global_actions = History::new(self.cfg.history);
    }

    pub fn tick(&mut self, inp: &TickInput<'_>) -> Result<Option<TickOutcome>, AgentError> {
        let Some(page) = inp.candidate else { return Ok(None) };
        let s = encode_state(
            &StateInputs {
                counters: inp.counters,
                page,
                global_actions: &self.global_actions,
                host_cube: inp.host_cube,
                completion_share: inp.completion_share,
                mesh: inp.mesh,
            },
            &self.cfg.norm,
            self.state_len(),
        );
        self.tallies.state_accesses += 2;
        let mut reward = None;
        if let (Some((ps, pa)), Some(prev_opc)) = (self.prev.take(), self.prev_opc) {
            let r = compute_reward(prev_opc, inp.opc, self.cfg.reward_tol);
            reward = Some(r);
            self.replay.push(Experience { s: ps, a: pa, r, s_next: s.clone(), terminal: false });
            self.tallies.replay_accesses += 1;
        }
        let epsilon = self.epsilon();
        let action = select_action(&self.net, &s, epsilon, &mut self.rng)?;
        self.tallies.weight_accesses += 1;
        let host = inp.host_cube.unwrap_or(0);
        let ctx = ActionContext {
            page: page.vpage,
            host_cube: host,
            compute_cube: page.last_compute_cube.unwrap_or(host),
            src1_cube: page.last_src1_cube,
            mesh: inp.mesh,
        };
        let effect = apply_action(action, &ctx, &mut self.interval_idx, &mut self.rng);
        self.global_actions.push(action.id() as f64);
        self.prev = Some((s, action));
        self.prev_opc = Some(inp.opc);
        self.ticks += 1;
        self.tallies.ticks += 1;

        let mut loss = None;
        if self.ticks.is_multiple_of(self.cfg.train_period) && self.replay.len() >= self.cfg.batch_size {
            let batch = self.replay.sample(self.cfg.batch_size, &mut self.rng);
            self.tallies.replay_accesses += batch.len() as u64;
            self.tallies.weight_accesses += 3 * batch.len() as u64;
            loss = Some(train_step(&mut self.net, self.target.as_ref(), &batch, self.cfg.gamma, self.cfg.learning_rate)?);
            self.tallies.train_steps += 1;
        }
        if self.cfg.target_sync > 0 && self.ticks.is_multiple_of(self.cfg.target_sync) {
            self.target = Some(self.net.clone());
        }
        let outcome = TickOutcome { action, effect, reward, loss, epsilon, interval: self.interval() };
        self.log.push(TrainLogRow {
            tick: self.ticks,
            epsilon,
            loss,
            reward,
            action,
            interval: outcome.interval,
        });
        Ok(Some(outcome))
    }
}
