//! Joint execution of projected endpoint programs.
//!
//! Endpoints are independent logical processes connected by reliable FIFO
//! point-to-point channels; a harness plays `world`, sampling nature draws
//! from the belief profile's priors and answering `observe` instructions.
//! Choices sample from a policy profile at the endpoint's current
//! information set.
//!
//! Per-decision randomness is derived from `(seed, role, variable)`, never
//! from the interleaving, so for a fixed seed every scheduler order reaches
//! the same terminal bindings (confluence); traces are reproducible from
//! `(seed, schedule)`.
//!
//! The module also houses the exhaustive interleaving explorer used to
//! check deadlock freedom and trace equivalence of projections against the
//! direct choreography walk.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::ast::{Guard, Role, Stmt, Value, VarName};
use crate::checker::{CheckedProtocol, ChoiceInfo};
use crate::eval::{eval_expr, Bindings};
use crate::game::{
    declared_terms, terminal_utilities, BeliefProfile, BuildError, InfoSetKey, PolicyProfile,
};
use crate::project::{Instr, LocalProgram, Sign};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("policy has no entry for encountered information set `{0}`")]
    RuntimePolicy(String),
    #[error("conformance failure: {0}")]
    Conformance(String),
    #[error("no prior for nature variable `{0}`")]
    MissingPrior(VarName),
    #[error("cannot evaluate `{0}`: {1}")]
    Eval(String, String),
    #[error(transparent)]
    Utility(#[from] BuildError),
}

/// Scheduler policy for picking the next endpoint to step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    RoundRobin,
    Random { seed: u64 },
}

impl FromStr for Schedule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "roundrobin" {
            return Ok(Schedule::RoundRobin);
        }
        if let Some(k) = s.strip_prefix("random:") {
            let seed: u64 = k
                .parse()
                .map_err(|_| format!("invalid scheduler seed `{k}`"))?;
            return Ok(Schedule::Random { seed });
        }
        Err(format!(
            "unknown schedule `{s}`; expected `roundrobin` or `random:K`"
        ))
    }
}

/// One observable event of a run.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub enum Event {
    Message {
        from: Role,
        to: Role,
        var: VarName,
        value: Value,
        money: bool,
    },
    Choice {
        role: Role,
        var: VarName,
        value: Value,
        info_set: InfoSetKey,
    },
}

/// Full record of one execution.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct TraceRecord {
    pub seed: u64,
    pub events: Vec<Event>,
    /// Nature draws realized on this path.
    pub nature: BTreeMap<VarName, Value>,
    /// Terminal bindings: every variable bound on the path.
    pub bindings: Bindings,
    pub money: BTreeMap<Role, f64>,
    pub utility: BTreeMap<Role, f64>,
}

impl TraceRecord {
    /// One line of the line-delimited structured trace export.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("trace serializes")
    }
}

/// Aggregates over repeated seeded runs.
#[derive(Debug, Clone, serde::Serialize)]
pub struct RoleStats {
    pub mean: f64,
    pub std_err: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct SimulationReport {
    pub trials: u64,
    pub stats: BTreeMap<Role, RoleStats>,
    /// Empirical action frequencies per information set.
    pub frequencies: BTreeMap<InfoSetKey, BTreeMap<Value, f64>>,
    pub conformance_failures: u64,
}

impl SimulationReport {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("role\tmean_utility\tstd_err\n");
        for (role, s) in &self.stats {
            out.push_str(&format!("{role}\t{:.6}\t{:.6}\n", s.mean, s.std_err));
        }
        out.push_str("\ninfo_set\taction\tfrequency\n");
        for (key, actions) in &self.frequencies {
            for (a, f) in actions {
                out.push_str(&format!(
                    "{}{{{}}}\t{}\t{:.6}\n",
                    key.var,
                    key.obs_text(),
                    a,
                    f
                ));
            }
        }
        out
    }
}

// deterministic, platform-independent stream split: FNV-1a over tag bytes
fn mix(seed: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325 ^ seed.wrapping_mul(0x100000001b3);
    for b in tag.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn unit_sample(seed: u64, tag: &str) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, tag));
    rng.gen::<f64>()
}

#[derive(Clone)]
struct Endpoint<'a> {
    role: Role,
    frames: Vec<(&'a [Instr], usize)>,
    env: Bindings,
    money: f64,
}

impl<'a> Endpoint<'a> {
    fn new(role: Role, program: &'a LocalProgram, checked: &CheckedProtocol) -> Self {
        let mut env = Bindings::new();
        for param in &checked.desugared.params {
            if param.owner == role {
                env.insert(param.var.clone(), Value::Sym(param.var.name().to_string()));
            }
        }
        Endpoint {
            role,
            frames: vec![(&program.instrs, 0)],
            env,
            money: 0.0,
        }
    }

    /// The next instruction, popping exhausted frames.
    fn next_instr(&mut self) -> Option<&'a Instr> {
        loop {
            let (block, idx) = self.frames.last()?;
            if *idx < block.len() {
                return Some(&block[*idx]);
            }
            self.frames.pop();
        }
    }

    fn advance(&mut self) {
        if let Some((_, idx)) = self.frames.last_mut() {
            *idx += 1;
        }
    }

    fn done(&mut self) -> bool {
        self.next_instr().is_none()
    }

    /// Drops exhausted frames so equal logical states key identically.
    fn normalize(&mut self) {
        while let Some((block, idx)) = self.frames.last() {
            if *idx >= block.len() {
                self.frames.pop();
            } else {
                break;
            }
        }
    }
}

type Channels = BTreeMap<(Role, Role), VecDeque<(VarName, Value, bool)>>;

/// How an endpoint obtains values for choices and nature draws.
#[derive(Clone)]
enum ValueSource<'b> {
    /// Sample choices from the policy profile and nature from the priors.
    Sampled {
        pp: &'b PolicyProfile,
        beliefs: &'b BeliefProfile,
        seed: u64,
    },
    /// Read everything from a forced assignment (exhaustive exploration).
    Forced(&'b Bindings),
}

#[derive(Clone)]
struct Runner<'a, 'b> {
    choice_by_var: BTreeMap<VarName, &'a ChoiceInfo>,
    endpoints: BTreeMap<Role, Endpoint<'a>>,
    channels: Channels,
    nature: BTreeMap<VarName, Value>,
    events: Vec<Event>,
    source: ValueSource<'b>,
}

enum StepOutcome {
    Progressed,
    Blocked,
    Done,
}

impl<'a, 'b> Runner<'a, 'b> {
    fn new(
        checked: &'a CheckedProtocol,
        programs: &'a BTreeMap<Role, LocalProgram>,
        source: ValueSource<'b>,
    ) -> Self {
        let endpoints = programs
            .iter()
            .map(|(r, p)| (r.clone(), Endpoint::new(r.clone(), p, checked)))
            .collect();
        let choice_by_var = checked
            .choice_info
            .values()
            .map(|i| (i.var.clone(), i))
            .collect();
        Runner {
            choice_by_var,
            endpoints,
            channels: BTreeMap::new(),
            nature: BTreeMap::new(),
            events: Vec::new(),
            source,
        }
    }

    fn info_key(&self, role: &Role, var: &VarName, env: &Bindings) -> Result<InfoSetKey, SimError> {
        let info = self.choice_by_var.get(var).ok_or_else(|| {
            SimError::Conformance(format!("choice `{var}` has no signature"))
        })?;
        let mut obs = Vec::new();
        for v in &info.known {
            let val = env.get(v).ok_or_else(|| {
                SimError::Conformance(format!("`{role}` should know `{v}` at `{var}`"))
            })?;
            obs.push((v.clone(), val.clone()));
        }
        Ok(InfoSetKey {
            role: role.clone(),
            var: var.clone(),
            obs,
        })
    }

    fn nature_value(&mut self, var: &VarName) -> Result<Value, SimError> {
        if let Some(v) = self.nature.get(var) {
            return Ok(v.clone());
        }
        let value = match &self.source {
            ValueSource::Sampled { beliefs, seed, .. } => {
                let prior = beliefs
                    .priors
                    .get(var)
                    .ok_or_else(|| SimError::MissingPrior(var.clone()))?;
                prior
                    .sample(unit_sample(*seed, &format!("world/{var}")))
                    .clone()
            }
            ValueSource::Forced(forced) => forced
                .get(var)
                .ok_or_else(|| {
                    SimError::Conformance(format!("forced assignment misses nature `{var}`"))
                })?
                .clone(),
        };
        self.nature.insert(var.clone(), value.clone());
        Ok(value)
    }

    /// Executes one instruction of one endpoint, if it is enabled.
    fn step(&mut self, role: &Role) -> Result<StepOutcome, SimError> {
        // the instruction reference lives as long as the program, not the
        // endpoint borrow, so each arm may re-borrow the endpoint
        let instr = match self.endpoints.get_mut(role).expect("endpoint").next_instr() {
            Some(i) => i,
            None => return Ok(StepOutcome::Done),
        };
        match instr {
            Instr::Send { var, to, money } => {
                let endpoint = self.endpoints.get_mut(role).expect("endpoint");
                let value = endpoint.env.get(var).cloned().ok_or_else(|| {
                    SimError::Conformance(format!("`{role}` sends unbound `{var}`"))
                })?;
                endpoint.advance();
                self.channels
                    .entry((role.clone(), to.clone()))
                    .or_default()
                    .push_back((var.clone(), value.clone(), *money));
                self.events.push(Event::Message {
                    from: role.clone(),
                    to: to.clone(),
                    var: var.clone(),
                    value,
                    money: *money,
                });
            }
            Instr::Recv { var, from, money } => {
                let key = (from.clone(), role.clone());
                let front = self.channels.get_mut(&key).and_then(|q| q.pop_front());
                match front {
                    None => return Ok(StepOutcome::Blocked),
                    Some((qvar, value, qmoney)) => {
                        if &qvar != var || qmoney != *money {
                            return Err(SimError::Conformance(format!(
                                "`{role}` expected `{var}` from `{from}`, channel head is `{qvar}`"
                            )));
                        }
                        let endpoint = self.endpoints.get_mut(role).expect("endpoint");
                        endpoint.env.insert(var.clone(), value);
                        endpoint.advance();
                    }
                }
            }
            Instr::ChooseLocal { var, .. } => {
                let env = self.endpoints[role].env.clone();
                let key = self.info_key(role, var, &env)?;
                let value = match &self.source {
                    ValueSource::Sampled { pp, seed, .. } => {
                        let dist = pp
                            .get(role, &key)
                            .ok_or_else(|| SimError::RuntimePolicy(key.to_string()))?;
                        dist.sample(unit_sample(*seed, &format!("{role}/{var}")))
                            .clone()
                    }
                    ValueSource::Forced(forced) => forced
                        .get(var)
                        .ok_or_else(|| {
                            SimError::Conformance(format!(
                                "forced assignment misses choice `{var}`"
                            ))
                        })?
                        .clone(),
                };
                let endpoint = self.endpoints.get_mut(role).expect("endpoint");
                endpoint.env.insert(var.clone(), value.clone());
                endpoint.advance();
                self.events.push(Event::Choice {
                    role: role.clone(),
                    var: var.clone(),
                    value,
                    info_set: key,
                });
            }
            Instr::Observe { var } => {
                let var = var.clone();
                let value = self.nature_value(&var)?;
                let endpoint = self.endpoints.get_mut(role).expect("endpoint");
                endpoint.env.insert(var, value);
                endpoint.advance();
            }
            Instr::BranchOnKnown {
                guard,
                then_branch,
                else_branch,
            } => {
                let endpoint = self.endpoints.get_mut(role).expect("endpoint");
                let value = endpoint.env.get(guard).cloned().ok_or_else(|| {
                    SimError::Conformance(format!("`{role}` branches on unbound `{guard}`"))
                })?;
                let b = value.as_bool().ok_or_else(|| {
                    SimError::Conformance(format!("guard `{guard}` is not boolean"))
                })?;
                endpoint.advance();
                endpoint
                    .frames
                    .push((if b { then_branch } else { else_branch }, 0));
            }
            Instr::ComputeLocal { var, expr } => {
                let endpoint = self.endpoints.get_mut(role).expect("endpoint");
                let value = eval_expr(expr, &endpoint.env).map_err(|e| {
                    SimError::Eval(crate::parser::render_expr(expr), e.to_string())
                })?;
                endpoint.env.insert(var.clone(), value);
                endpoint.advance();
            }
            Instr::MoneyDelta { amount, sign } => {
                let endpoint = self.endpoints.get_mut(role).expect("endpoint");
                let value = eval_expr(amount, &endpoint.env).map_err(|e| {
                    SimError::Eval(crate::parser::render_expr(amount), e.to_string())
                })?;
                let m = value.magnitude().ok_or_else(|| {
                    SimError::Eval(
                        crate::parser::render_expr(amount),
                        "money amount has no magnitude".to_string(),
                    )
                })? as f64;
                endpoint.money += match sign {
                    Sign::Plus => m,
                    Sign::Minus => -m,
                };
                endpoint.advance();
            }
        }
        Ok(StepOutcome::Progressed)
    }

    fn all_done(&mut self) -> bool {
        let roles: Vec<Role> = self.endpoints.keys().cloned().collect();
        roles
            .iter()
            .all(|r| self.endpoints.get_mut(r).expect("endpoint").done())
    }
}

/// Statements executed on the path the bindings describe: the indices of
/// `values` declarations (into [`declared_terms`]) and the nature variables
/// drawn.
fn path_effects(
    checked: &CheckedProtocol,
    bindings: &Bindings,
) -> Result<(Vec<usize>, Vec<VarName>), SimError> {
    let declared = declared_terms(&checked.desugared);
    let mut active = Vec::new();
    let mut nature = Vec::new();
    fn walk(
        stmts: &[Stmt],
        bindings: &Bindings,
        declared: &[(Role, String)],
        active: &mut Vec<usize>,
        nature: &mut Vec<VarName>,
    ) -> Result<(), SimError> {
        for s in stmts {
            match s {
                Stmt::Values { role, term, .. } => {
                    let rendered = crate::parser::render_expr(term);
                    let idx = declared
                        .iter()
                        .position(|(r, t)| r == role && *t == rendered)
                        .expect("declared term");
                    active.push(idx);
                }
                Stmt::NatureChoose { var, .. } => nature.push(var.clone()),
                Stmt::If {
                    guard_var,
                    then_branch,
                    else_branch,
                    ..
                } => {
                    let value = bindings.get(guard_var).ok_or_else(|| {
                        SimError::Conformance(format!("guard `{guard_var}` never bound"))
                    })?;
                    let b = value.as_bool().ok_or_else(|| {
                        SimError::Conformance(format!("guard `{guard_var}` is not boolean"))
                    })?;
                    walk(
                        if b { then_branch } else { else_branch },
                        bindings,
                        declared,
                        active,
                        nature,
                    )?;
                }
                _ => {}
            }
        }
        Ok(())
    }
    walk(
        &checked.desugared.body,
        bindings,
        &declared,
        &mut active,
        &mut nature,
    )?;
    Ok((active, nature))
}

/// Runs all endpoints to completion once, sampling choices from the policy
/// profile and nature from the priors. Deterministic given `(seed,
/// schedule)`; terminal bindings are independent of the schedule.
pub fn run_once(
    checked: &CheckedProtocol,
    programs: &BTreeMap<Role, LocalProgram>,
    pp: &PolicyProfile,
    beliefs: &BeliefProfile,
    seed: u64,
    schedule: Schedule,
) -> Result<TraceRecord, SimError> {
    let mut runner = Runner::new(
        checked,
        programs,
        ValueSource::Sampled {
            pp,
            beliefs,
            seed,
        },
    );
    let roles: Vec<Role> = programs.keys().cloned().collect();
    let mut sched_rng = match schedule {
        Schedule::Random { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        Schedule::RoundRobin => None,
    };
    let mut rr = 0usize;
    loop {
        if roles.is_empty() || runner.all_done() {
            break;
        }
        // pick an enabled endpoint
        let mut progressed = false;
        let order: Vec<usize> = match &mut sched_rng {
            None => (0..roles.len()).map(|i| (rr + i) % roles.len()).collect(),
            Some(rng) => {
                let mut idx: Vec<usize> = (0..roles.len()).collect();
                for i in (1..idx.len()).rev() {
                    let j = rng.gen_range(0..=i);
                    idx.swap(i, j);
                }
                idx
            }
        };
        for i in order {
            match runner.step(&roles[i])? {
                StepOutcome::Progressed => {
                    progressed = true;
                    rr = (i + 1) % roles.len();
                    break;
                }
                StepOutcome::Blocked | StepOutcome::Done => continue,
            }
        }
        if !progressed {
            return Err(SimError::Conformance(
                "deadlock: all endpoints blocked".to_string(),
            ));
        }
    }
    finish_trace(checked, beliefs, runner, seed)
}

fn finish_trace(
    checked: &CheckedProtocol,
    beliefs: &BeliefProfile,
    mut runner: Runner<'_, '_>,
    seed: u64,
) -> Result<TraceRecord, SimError> {
    // assemble terminal bindings from every endpoint plus nature
    let mut bindings = Bindings::new();
    let mut knowledge: BTreeMap<Role, BTreeSet<VarName>> = BTreeMap::new();
    let mut money: BTreeMap<Role, f64> = BTreeMap::new();
    for (role, e) in &runner.endpoints {
        knowledge.insert(role.clone(), e.env.keys().cloned().collect());
        money.insert(role.clone(), e.money);
        for (v, val) in &e.env {
            bindings.insert(v.clone(), val.clone());
        }
    }
    for (v, val) in &runner.nature {
        bindings.insert(v.clone(), val.clone());
    }
    // draws on the path that no endpoint observed still bind
    let (_, nature_on_path) = path_effects(checked, &bindings)?;
    for var in nature_on_path {
        let value = runner.nature_value(&var)?;
        bindings.insert(var, value);
    }
    let (active_terms, _) = path_effects(checked, &bindings)?;
    let utility = terminal_utilities(
        checked,
        beliefs,
        &bindings,
        &knowledge,
        &money,
        &active_terms,
    )?;
    Ok(TraceRecord {
        seed,
        events: runner.events,
        nature: runner.nature,
        bindings,
        money,
        utility,
    })
}

/// Runs `trials` independent seeded executions and aggregates utilities,
/// empirical action frequencies, and conformance failures.
pub fn run_trials(
    checked: &CheckedProtocol,
    programs: &BTreeMap<Role, LocalProgram>,
    pp: &PolicyProfile,
    beliefs: &BeliefProfile,
    trials: u64,
    seed: u64,
    schedule: Schedule,
) -> Result<SimulationReport, SimError> {
    run_trials_with(checked, programs, pp, beliefs, trials, seed, schedule, |_| {})
}

/// As [`run_trials`], invoking `on_trace` with every completed trace (for
/// line-delimited trace export).
#[allow(clippy::too_many_arguments)]
pub fn run_trials_with(
    checked: &CheckedProtocol,
    programs: &BTreeMap<Role, LocalProgram>,
    pp: &PolicyProfile,
    beliefs: &BeliefProfile,
    trials: u64,
    seed: u64,
    schedule: Schedule,
    mut on_trace: impl FnMut(&TraceRecord),
) -> Result<SimulationReport, SimError> {
    assert!(trials >= 1, "at least one trial");
    let mut sums: BTreeMap<Role, (f64, f64)> = BTreeMap::new();
    let mut counts: BTreeMap<InfoSetKey, BTreeMap<Value, u64>> = BTreeMap::new();
    let mut conformance_failures = 0u64;
    for i in 0..trials {
        let trial_seed = mix(seed, &format!("trial/{i}"));
        let trace = run_once(checked, programs, pp, beliefs, trial_seed, schedule)?;
        on_trace(&trace);
        if !check_trace_conformance(&trace, checked) {
            conformance_failures += 1;
        }
        for (role, u) in &trace.utility {
            let entry = sums.entry(role.clone()).or_insert((0.0, 0.0));
            entry.0 += u;
            entry.1 += u * u;
        }
        for ev in &trace.events {
            if let Event::Choice {
                info_set, value, ..
            } = ev
            {
                *counts
                    .entry(info_set.clone())
                    .or_default()
                    .entry(value.clone())
                    .or_insert(0) += 1;
            }
        }
    }
    let n = trials as f64;
    let stats = sums
        .into_iter()
        .map(|(role, (s, s2))| {
            let mean = s / n;
            let var = if trials > 1 {
                ((s2 - n * mean * mean) / (n - 1.0)).max(0.0)
            } else {
                0.0
            };
            (
                role,
                RoleStats {
                    mean,
                    std_err: (var / n).sqrt(),
                },
            )
        })
        .collect();
    let frequencies = counts
        .into_iter()
        .map(|(key, actions)| {
            let total: u64 = actions.values().sum();
            (
                key,
                actions
                    .into_iter()
                    .map(|(a, c)| (a, c as f64 / total as f64))
                    .collect(),
            )
        })
        .collect();
    Ok(SimulationReport {
        trials,
        stats,
        frequencies,
        conformance_failures,
    })
}

/// True iff the trace's event sequence is a valid interleaving of the
/// choreography with consistent values: the events replay against fresh
/// projections, every endpoint runs to completion, no message is left
/// undelivered, and the recorded bindings, money and utilities match the
/// replayed terminal state.
pub fn check_trace_conformance(trace: &TraceRecord, checked: &CheckedProtocol) -> bool {
    replay(trace, checked).is_ok()
}

fn replay(trace: &TraceRecord, checked: &CheckedProtocol) -> Result<(), String> {
    let programs = crate::project::project_all(checked);
    let mut endpoints: BTreeMap<Role, Endpoint> = programs
        .iter()
        .map(|(r, p)| (r.clone(), Endpoint::new(r.clone(), p, checked)))
        .collect();
    let mut channels: Channels = BTreeMap::new();
    let choice_by_var: BTreeMap<VarName, &ChoiceInfo> = checked
        .choice_info
        .values()
        .map(|i| (i.var.clone(), i))
        .collect();

    // run internal instructions (anything but send/choose) to quiescence
    fn advance_internals(
        e: &mut Endpoint,
        channels: &mut Channels,
        nature: &BTreeMap<VarName, Value>,
    ) -> Result<(), String> {
        loop {
            let role = e.role.clone();
            let instr = match e.next_instr() {
                Some(i) => i,
                None => return Ok(()),
            };
            match instr {
                Instr::Send { .. } | Instr::ChooseLocal { .. } => return Ok(()),
                Instr::Recv { var, from, money } => {
                    let key = (from.clone(), role.clone());
                    match channels.get_mut(&key).and_then(|q| q.pop_front()) {
                        None => return Ok(()), // waiting: the send event must come first
                        Some((qvar, value, qmoney)) => {
                            if &qvar != var || qmoney != *money {
                                return Err(format!(
                                    "channel head `{qvar}` does not match recv `{var}`"
                                ));
                            }
                            e.env.insert(var.clone(), value);
                            e.advance();
                        }
                    }
                }
                Instr::Observe { var } => match nature.get(var) {
                    None => return Err(format!("trace has no nature draw for `{var}`")),
                    Some(v) => {
                        let var = var.clone();
                        let v = v.clone();
                        e.env.insert(var, v);
                        e.advance();
                    }
                },
                Instr::BranchOnKnown {
                    guard,
                    then_branch,
                    else_branch,
                } => {
                    let b = e
                        .env
                        .get(guard)
                        .and_then(|v| v.as_bool())
                        .ok_or_else(|| format!("guard `{guard}` unbound or non-boolean"))?;
                    let frame: &[Instr] = if b { then_branch } else { else_branch };
                    e.advance();
                    e.frames.push((frame, 0));
                }
                Instr::ComputeLocal { var, expr } => {
                    let value =
                        eval_expr(expr, &e.env).map_err(|err| format!("eval failed: {err}"))?;
                    e.env.insert(var.clone(), value);
                    e.advance();
                }
                Instr::MoneyDelta { amount, sign } => {
                    let m = eval_expr(amount, &e.env)
                        .ok()
                        .and_then(|v| v.magnitude())
                        .ok_or_else(|| "money amount not numeric".to_string())?
                        as f64;
                    e.money += match sign {
                        Sign::Plus => m,
                        Sign::Minus => -m,
                    };
                    e.advance();
                }
            }
        }
    }

    for event in &trace.events {
        match event {
            Event::Message {
                from,
                to,
                var,
                value,
                money,
            } => {
                let e = endpoints
                    .get_mut(from)
                    .ok_or_else(|| format!("unknown sender `{from}`"))?;
                advance_internals(e, &mut channels, &trace.nature)?;
                match e.next_instr() {
                    Some(Instr::Send {
                        var: pvar,
                        to: pto,
                        money: pmoney,
                    }) if pvar == var && pto == to && pmoney == money => {
                        let sent = e
                            .env
                            .get(var)
                            .cloned()
                            .ok_or_else(|| format!("sender does not know `{var}`"))?;
                        if &sent != value {
                            return Err(format!(
                                "trace value for `{var}` is `{value}`, endpoint holds `{sent}`"
                            ));
                        }
                        e.advance();
                        channels
                            .entry((from.clone(), to.clone()))
                            .or_default()
                            .push_back((var.clone(), sent, *money));
                    }
                    other => {
                        return Err(format!(
                            "endpoint `{from}` is not ready to send `{var}` (next: {other:?})"
                        ))
                    }
                }
            }
            Event::Choice {
                role,
                var,
                value,
                info_set,
            } => {
                let e = endpoints
                    .get_mut(role)
                    .ok_or_else(|| format!("unknown chooser `{role}`"))?;
                advance_internals(e, &mut channels, &trace.nature)?;
                match e.next_instr() {
                    Some(Instr::ChooseLocal { var: pvar, .. }) if pvar == var => {
                        // recompute the information set from the replayed state
                        let info = choice_by_var
                            .get(var)
                            .ok_or_else(|| format!("no signature for `{var}`"))?;
                        let mut obs = Vec::new();
                        for v in &info.known {
                            let val = e
                                .env
                                .get(v)
                                .cloned()
                                .ok_or_else(|| format!("`{role}` should know `{v}`"))?;
                            obs.push((v.clone(), val));
                        }
                        let key = InfoSetKey {
                            role: role.clone(),
                            var: var.clone(),
                            obs,
                        };
                        if &key != info_set {
                            return Err(format!(
                                "recorded info set `{info_set}` does not match replayed `{key}`"
                            ));
                        }
                        e.env.insert(var.clone(), value.clone());
                        e.advance();
                    }
                    other => {
                        return Err(format!(
                            "endpoint `{role}` is not ready to choose `{var}` (next: {other:?})"
                        ))
                    }
                }
            }
        }
    }

    // drain remaining internal work; everything must finish
    let roles: Vec<Role> = endpoints.keys().cloned().collect();
    loop {
        let mut progressed = false;
        for r in &roles {
            let e = endpoints.get_mut(r).expect("endpoint");
            let before = (e.frames.clone(), e.env.len());
            advance_internals(e, &mut channels, &trace.nature)?;
            let after = (e.frames.clone(), e.env.len());
            if before != after {
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    for (r, e) in endpoints.iter_mut() {
        if !e.done() {
            return Err(format!("endpoint `{r}` did not run to completion"));
        }
    }
    for ((from, to), q) in &channels {
        if !q.is_empty() {
            return Err(format!("undelivered messages on channel {from}->{to}"));
        }
    }

    // terminal state must match the record
    let mut bindings = Bindings::new();
    for e in endpoints.values() {
        for (v, val) in &e.env {
            bindings.insert(v.clone(), val.clone());
        }
    }
    for (v, val) in &trace.nature {
        bindings.insert(v.clone(), val.clone());
    }
    if bindings != trace.bindings {
        return Err("terminal bindings do not match the record".to_string());
    }
    for (r, e) in &endpoints {
        let recorded = trace.money.get(r).copied().unwrap_or(0.0);
        if (e.money - recorded).abs() > 1e-9 {
            return Err(format!("money of `{r}` does not match the record"));
        }
    }
    Ok(())
}

/// Outcome set of exhaustively interleaving the projected endpoints under a
/// forced assignment of every choice and nature variable on the path.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplorationResult {
    /// Distinct terminal bindings reached (confluence expects exactly one).
    pub terminals: BTreeSet<Bindings>,
    /// Distinct interleaving states visited.
    pub states_visited: usize,
    /// Whether any schedule reached a state with no enabled endpoint before
    /// completion.
    pub deadlocked: bool,
}

/// Explores every scheduler interleaving (up to state equivalence) of the
/// projected programs with all strategic values forced.
pub fn explore_interleavings(
    checked: &CheckedProtocol,
    programs: &BTreeMap<Role, LocalProgram>,
    forced: &Bindings,
) -> Result<ExplorationResult, SimError> {
    // block table for compact state keys
    let mut blocks: Vec<*const [Instr]> = Vec::new();
    let mut block_ids: BTreeMap<usize, usize> = BTreeMap::new();
    fn register(
        instrs: &[Instr],
        blocks: &mut Vec<*const [Instr]>,
        ids: &mut BTreeMap<usize, usize>,
    ) {
        let ptr = instrs as *const [Instr];
        let addr = ptr as *const Instr as usize;
        if let std::collections::btree_map::Entry::Vacant(e) = ids.entry(addr) {
            e.insert(blocks.len());
            blocks.push(ptr);
        }
        for i in instrs {
            if let Instr::BranchOnKnown {
                then_branch,
                else_branch,
                ..
            } = i
            {
                register(then_branch, blocks, ids);
                register(else_branch, blocks, ids);
            }
        }
    }
    for p in programs.values() {
        register(&p.instrs, &mut blocks, &mut block_ids);
    }

    let state_key = |runner: &mut Runner| -> String {
        let mut key = String::new();
        let roles: Vec<Role> = runner.endpoints.keys().cloned().collect();
        for role in &roles {
            let e = runner.endpoints.get_mut(role).expect("endpoint");
            e.normalize();
            key.push_str(role.name());
            for (block, idx) in &e.frames {
                let addr = (*block) as *const [Instr] as *const Instr as usize;
                key.push_str(&format!(":{}@{idx}", block_ids[&addr]));
            }
            key.push(';');
        }
        for ((from, to), q) in &runner.channels {
            if q.is_empty() {
                continue;
            }
            key.push_str(&format!("{from}>{to}="));
            for (v, val, _) in q {
                key.push_str(&format!("{v}:{val},"));
            }
            key.push(';');
        }
        key
    };

    let roles: Vec<Role> = programs.keys().cloned().collect();
    let mut terminals = BTreeSet::new();
    let mut visited: BTreeSet<String> = BTreeSet::new();
    let mut deadlocked = false;

    let root = Runner::new(checked, programs, ValueSource::Forced(forced));
    let mut stack: Vec<Runner> = vec![root];
    while let Some(mut runner) = stack.pop() {
        let key = state_key(&mut runner);
        if !visited.insert(key) {
            continue;
        }
        if runner.all_done() {
            let mut bindings = Bindings::new();
            for e in runner.endpoints.values() {
                for (v, val) in &e.env {
                    bindings.insert(v.clone(), val.clone());
                }
            }
            for (v, val) in &runner.nature {
                bindings.insert(v.clone(), val.clone());
            }
            terminals.insert(bindings);
            continue;
        }
        let mut any = false;
        for r in &roles {
            let mut next = runner.clone();
            if matches!(next.step(r)?, StepOutcome::Progressed) {
                stack.push(next);
                any = true;
            }
        }
        if !any {
            deadlocked = true;
        }
    }
    Ok(ExplorationResult {
        terminals,
        states_visited: visited.len(),
        deadlocked,
    })
}

/// Direct execution of the choreography itself: enumerates every assignment
/// of choices and nature draws and returns the terminal bindings each one
/// reaches. This is the reference semantics that projected executions are
/// compared against; it never consults the projector or the game builder.
pub fn choreography_outcomes(
    checked: &CheckedProtocol,
) -> Result<Vec<(Bindings, Bindings)>, SimError> {
    // (forced assignment of strategic vars, terminal bindings)
    let mut out = Vec::new();
    let mut bindings = Bindings::new();
    for param in &checked.desugared.params {
        bindings.insert(param.var.clone(), Value::Sym(param.var.name().to_string()));
    }
    walk_choreo(
        checked,
        &[&checked.desugared.body],
        bindings,
        Bindings::new(),
        &mut out,
    )?;
    Ok(out)
}

fn walk_choreo(
    checked: &CheckedProtocol,
    blocks: &[&[Stmt]],
    mut bindings: Bindings,
    forced: Bindings,
    out: &mut Vec<(Bindings, Bindings)>,
) -> Result<(), SimError> {
    let (first, rest) = match blocks.split_first() {
        Some((f, r)) => (*f, r),
        None => {
            out.push((forced, bindings));
            return Ok(());
        }
    };
    let (stmt, tail) = match first.split_first() {
        Some((s, t)) => (s, t),
        None => return walk_choreo(checked, rest, bindings, forced, out),
    };
    let mut with_tail: Vec<&[Stmt]> = vec![tail];
    with_tail.extend_from_slice(rest);
    match stmt {
        Stmt::Choose { var, domain, .. } | Stmt::NatureChoose { var, domain, .. } => {
            let values = checked
                .domain(domain)
                .expect("checked domain")
                .values
                .iter()
                .map(crate::ast::Value::from_literal)
                .collect::<Vec<_>>();
            for v in values {
                let mut b = bindings.clone();
                let mut f = forced.clone();
                b.insert(var.clone(), v.clone());
                f.insert(var.clone(), v);
                walk_choreo(checked, &with_tail, b, f, out)?;
            }
            Ok(())
        }
        Stmt::If {
            guard,
            guard_var,
            then_branch,
            else_branch,
            ..
        } => match guard {
            Guard::Choice { var, domain, .. } => {
                let values = checked
                    .domain(domain)
                    .expect("checked domain")
                    .values
                    .iter()
                    .map(crate::ast::Value::from_literal)
                    .collect::<Vec<_>>();
                for v in values {
                    let b = v.as_bool().expect("boolean guard");
                    let mut bb = bindings.clone();
                    let mut f = forced.clone();
                    bb.insert(var.clone(), v.clone());
                    f.insert(var.clone(), v);
                    let mut blocks2: Vec<&[Stmt]> =
                        vec![if b { then_branch } else { else_branch }];
                    blocks2.extend_from_slice(&with_tail);
                    walk_choreo(checked, &blocks2, bb, f, out)?;
                }
                Ok(())
            }
            Guard::Expr(e) => {
                let v = eval_expr(e, &bindings)
                    .map_err(|err| SimError::Eval(crate::parser::render_expr(e), err.to_string()))?;
                let b = v
                    .as_bool()
                    .ok_or_else(|| SimError::Conformance("guard not boolean".into()))?;
                bindings.insert(guard_var.clone(), v);
                let mut blocks2: Vec<&[Stmt]> = vec![if b { then_branch } else { else_branch }];
                blocks2.extend_from_slice(&with_tail);
                walk_choreo(checked, &blocks2, bindings, forced, out)
            }
        },
        Stmt::Local { var, expr, .. } => {
            let v = eval_expr(expr, &bindings)
                .map_err(|err| SimError::Eval(crate::parser::render_expr(expr), err.to_string()))?;
            bindings.insert(var.clone(), v);
            walk_choreo(checked, &with_tail, bindings, forced, out)
        }
        Stmt::Send { .. } | Stmt::Values { .. } => {
            walk_choreo(checked, &with_tail, bindings, forced, out)
        }
        Stmt::Exchange { .. } => unreachable!("checked protocols are desugared"),
    }
}
