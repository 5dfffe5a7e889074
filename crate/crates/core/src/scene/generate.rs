//! Procedural scenario generators with known causal structure.
//!
//! Each scene kind is a strategy behind [`KindGenerator`], selected by name
//! from config. Generation is split into a `plan` step that draws every
//! latent quantity into a [`Blueprint`], and a pure [`realize`] step that
//! rolls out the closed-form kinematics. Realizing with an ablation set
//! answers the counterfactual "what would the target have done without
//! agent i", which is what the causal labels are checked against.
//!
//! Scene kinds:
//! * `leader_follower` — a braking leader ahead of the target; the target
//!   brakes `react_steps` later, inside the prediction horizon. The leader
//!   is the only Causal agent.
//! * `independent` — bystanders on far lanes that never influence the
//!   target (all NonCausal).
//! * `spurious_distractor` — the target performs a lateral maneuver in its
//!   future; a distractor's lane offset leaks that maneuver during training
//!   (`spur_corr` = 1) and is an independent draw on validation
//!   (`spur_corr` = 0). The distractor never influences the target, so it
//!   is NonCausal despite being predictive at train time.
//! * `mixed` — leader + distractor + bystanders in one scene.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{
    to_frame, wrap_angle, AgentId, AgentState, AgentTrack, CausalLabel, GeneratorKind, Role, Scene,
};
use crate::error::{Error, Result};
use crate::kv::KvReader;
use crate::rng::{mix, rng_from};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            other => Err(Error::config(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct GeneratorConfig {
    pub h: usize,
    pub f: usize,
    pub dt: f64,
    pub n_max: usize,
    pub split: Split,
    pub scenes_leader_follower: usize,
    pub scenes_independent: usize,
    pub scenes_spurious: usize,
    pub scenes_mixed: usize,
    pub bystanders_min: usize,
    pub bystanders_max: usize,
    pub speed_min: f64,
    pub speed_max: f64,
    pub leader_gap_min: f64,
    pub leader_gap_max: f64,
    pub brake_decel_min: f64,
    pub brake_decel_max: f64,
    pub react_steps: usize,
    pub floor_speed: f64,
    /// Probability that a scene's target performs a lateral maneuver in
    /// its future, independent of scene kind. Keeping maneuvers exogenous
    /// means a distractor's presence carries no information about them.
    pub maneuver_prob: f64,
    pub lateral_shift_min: f64,
    pub lateral_shift_max: f64,
    pub distractor_base_lat: f64,
    pub spur_noise: f64,
    /// 1.0 = distractor offset fully tracks the target's future lateral
    /// shift, 0.0 = independent draw with the same marginal.
    pub spur_corr: f64,
    pub future_jitter: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            h: 10,
            f: 12,
            dt: 0.5,
            n_max: 12,
            split: Split::Train,
            scenes_leader_follower: 40,
            scenes_independent: 20,
            scenes_spurious: 25,
            scenes_mixed: 15,
            bystanders_min: 1,
            bystanders_max: 3,
            speed_min: 7.0,
            speed_max: 12.0,
            leader_gap_min: 20.0,
            leader_gap_max: 30.0,
            brake_decel_min: 1.5,
            brake_decel_max: 4.5,
            react_steps: 5,
            floor_speed: 2.0,
            maneuver_prob: 0.5,
            lateral_shift_min: 1.5,
            lateral_shift_max: 3.5,
            distractor_base_lat: 6.0,
            spur_noise: 0.1,
            spur_corr: 1.0,
            future_jitter: 0.1,
        }
    }
}

impl GeneratorConfig {
    /// Reads `<prefix>h`, `<prefix>f`, ... from a flat key-value reader.
    pub fn from_kv(kv: &mut KvReader, prefix: &str) -> Result<Self> {
        let d = GeneratorConfig::default();
        let k = |name: &str| format!("{prefix}{name}");
        let cfg = GeneratorConfig {
            h: kv.usize_or(&k("h"), d.h)?,
            f: kv.usize_or(&k("f"), d.f)?,
            dt: kv.f64_or(&k("dt"), d.dt)?,
            n_max: kv.usize_or(&k("n_max"), d.n_max)?,
            split: Split::parse(&kv.str_or(&k("split"), d.split.as_str()))?,
            scenes_leader_follower: kv.usize_or(&k("scenes_leader_follower"), d.scenes_leader_follower)?,
            scenes_independent: kv.usize_or(&k("scenes_independent"), d.scenes_independent)?,
            scenes_spurious: kv.usize_or(&k("scenes_spurious"), d.scenes_spurious)?,
            scenes_mixed: kv.usize_or(&k("scenes_mixed"), d.scenes_mixed)?,
            bystanders_min: kv.usize_or(&k("bystanders_min"), d.bystanders_min)?,
            bystanders_max: kv.usize_or(&k("bystanders_max"), d.bystanders_max)?,
            speed_min: kv.f64_or(&k("speed_min"), d.speed_min)?,
            speed_max: kv.f64_or(&k("speed_max"), d.speed_max)?,
            leader_gap_min: kv.f64_or(&k("leader_gap_min"), d.leader_gap_min)?,
            leader_gap_max: kv.f64_or(&k("leader_gap_max"), d.leader_gap_max)?,
            brake_decel_min: kv.f64_or(&k("brake_decel_min"), d.brake_decel_min)?,
            brake_decel_max: kv.f64_or(&k("brake_decel_max"), d.brake_decel_max)?,
            react_steps: kv.usize_or(&k("react_steps"), d.react_steps)?,
            floor_speed: kv.f64_or(&k("floor_speed"), d.floor_speed)?,
            maneuver_prob: kv.f64_or(&k("maneuver_prob"), d.maneuver_prob)?,
            lateral_shift_min: kv.f64_or(&k("lateral_shift_min"), d.lateral_shift_min)?,
            lateral_shift_max: kv.f64_or(&k("lateral_shift_max"), d.lateral_shift_max)?,
            distractor_base_lat: kv.f64_or(&k("distractor_base_lat"), d.distractor_base_lat)?,
            spur_noise: kv.f64_or(&k("spur_noise"), d.spur_noise)?,
            spur_corr: kv.f64_or(&k("spur_corr"), d.spur_corr)?,
            future_jitter: kv.f64_or(&k("future_jitter"), d.future_jitter)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.h == 0 || self.f == 0 {
            return Err(Error::config("history and future lengths must be positive"));
        }
        if !(self.dt > 0.0) {
            return Err(Error::config("dt must be positive"));
        }
        if self.react_steps < 2 || self.react_steps + 2 > self.h {
            return Err(Error::config(format!(
                "react_steps must be in [2, h-2]; got {} with h={}",
                self.react_steps, self.h
            )));
        }
        if self.bystanders_min > self.bystanders_max {
            return Err(Error::config("bystanders_min > bystanders_max"));
        }
        if self.n_max > 32 {
            return Err(Error::config("n_max above 32 is not supported"));
        }
        let needs = |base: usize| base.max(self.bystanders_min);
        let worst = if self.scenes_mixed > 0 {
            needs(2)
        } else if self.scenes_leader_follower > 0 || self.scenes_spurious > 0 {
            needs(1)
        } else {
            self.bystanders_min
        };
        if worst > self.n_max {
            return Err(Error::config(format!(
                "n_max={} cannot fit the configured agents per scene",
                self.n_max
            )));
        }
        for (name, lo, hi) in [
            ("speed", self.speed_min, self.speed_max),
            ("leader_gap", self.leader_gap_min, self.leader_gap_max),
            ("brake_decel", self.brake_decel_min, self.brake_decel_max),
            ("lateral_shift", self.lateral_shift_min, self.lateral_shift_max),
        ] {
            if !(lo > 0.0 && hi >= lo) {
                return Err(Error::config(format!("bad {name} range [{lo}, {hi}]")));
            }
        }
        if !(0.0..=1.0).contains(&self.maneuver_prob) {
            return Err(Error::config(format!("maneuver_prob {} outside [0, 1]", self.maneuver_prob)));
        }
        if !(0.0..=1.0).contains(&self.spur_corr) {
            return Err(Error::config(format!("spur_corr {} outside [0, 1]", self.spur_corr)));
        }
        if self.spur_noise < 0.0 || self.future_jitter < 0.0 {
            return Err(Error::config("noise scales must be non-negative"));
        }
        if !(self.floor_speed > 0.0 && self.floor_speed < self.speed_min) {
            return Err(Error::config("floor_speed must be in (0, speed_min)"));
        }
        Ok(())
    }

    fn count_for(&self, kind: GeneratorKind) -> usize {
        match kind {
            GeneratorKind::LeaderFollower => self.scenes_leader_follower,
            GeneratorKind::Independent => self.scenes_independent,
            GeneratorKind::SpuriousDistractor => self.scenes_spurious,
            GeneratorKind::Mixed => self.scenes_mixed,
        }
    }
}

/// All latent draws of one scene; realization is deterministic from this.
#[derive(Clone, Debug)]
pub struct Blueprint {
    pub kind: GeneratorKind,
    pub world_x: f64,
    pub world_y: f64,
    pub world_heading: f64,
    pub target_speed: f64,
    pub target_dims: (f64, f64),
    pub lateral_shift: f64,
    pub jitter: Vec<(f64, f64)>,
    pub agents: Vec<AgentPlan>,
}

#[derive(Clone, Debug)]
pub struct AgentPlan {
    pub agent_id: AgentId,
    pub label: CausalLabel,
    pub dims: (f64, f64),
    pub behavior: AgentBehavior,
}

#[derive(Clone, Debug)]
pub enum AgentBehavior {
    /// Same lane, `gap` meters ahead, braking at `brake_step` with `decel`.
    Leader { gap: f64, brake_step: usize, decel: f64 },
    /// Adjacent lane at `base_lat + offset`; the offset optionally leaks the
    /// target's future lateral shift.
    Distractor { offset: f64, gap_x: f64, speed: f64 },
    /// Far-lane constant-velocity traffic.
    Bystander { x0: f64, y0: f64, speed: f64, heading: f64 },
}

impl Blueprint {
    pub fn leader(&self) -> Option<&AgentPlan> {
        self.agents
            .iter()
            .find(|a| matches!(a.behavior, AgentBehavior::Leader { .. }))
    }
}

/// One scene-kind strategy. Registered by name; `plan` draws every latent
/// from the provided stream.
pub trait KindGenerator: Send + Sync {
    fn name(&self) -> &'static str;
    fn kind(&self) -> GeneratorKind;
    fn plan(&self, cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Blueprint;
}

struct LeaderFollowerGen;
struct IndependentGen;
struct SpuriousGen;
struct MixedGen;

pub fn kind_generators() -> Vec<Box<dyn KindGenerator>> {
    vec![
        Box::new(LeaderFollowerGen),
        Box::new(IndependentGen),
        Box::new(SpuriousGen),
        Box::new(MixedGen),
    ]
}

pub fn generator_by_name(name: &str) -> Result<Box<dyn KindGenerator>> {
    for g in kind_generators() {
        if g.name() == name {
            return Ok(g);
        }
    }
    let known: Vec<&str> = kind_generators().iter().map(|g| g.name()).collect();
    Err(Error::config(format!(
        "unknown scene kind {name:?} (known: {})",
        known.join(", ")
    )))
}

fn base_plan(cfg: &GeneratorConfig, rng: &mut ChaCha8Rng, kind: GeneratorKind) -> Blueprint {
    let jitter_dist = Normal::new(0.0, cfg.future_jitter.max(1e-300)).expect("valid sigma");
    let world_x = rng.gen_range(-60.0..60.0);
    let world_y = rng.gen_range(-60.0..60.0);
    let world_heading = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    let target_speed = rng.gen_range(cfg.speed_min..=cfg.speed_max);
    let target_dims = car_dims(rng);
    let lateral_shift = draw_lateral_shift(cfg, rng);
    Blueprint {
        kind,
        world_x,
        world_y,
        world_heading,
        target_speed,
        target_dims,
        lateral_shift,
        jitter: (0..cfg.f)
            .map(|_| {
                if cfg.future_jitter > 0.0 {
                    (jitter_dist.sample(rng), jitter_dist.sample(rng))
                } else {
                    (0.0, 0.0)
                }
            })
            .collect(),
        agents: Vec::new(),
    }
}

fn car_dims(rng: &mut ChaCha8Rng) -> (f64, f64) {
    (rng.gen_range(1.7..2.1), rng.gen_range(4.0..5.0))
}

/// Draw from the maneuver mixture: zero with probability 1 - maneuver_prob,
/// otherwise a signed magnitude.
fn draw_lateral_shift(cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) -> f64 {
    // Keep the stream layout fixed regardless of the branch taken.
    let mag = rng.gen_range(cfg.lateral_shift_min..=cfg.lateral_shift_max);
    let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    if rng.gen_bool(cfg.maneuver_prob) {
        sign * mag
    } else {
        0.0
    }
}

fn add_leader(bp: &mut Blueprint, cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) {
    let brake_lo = cfg.h - cfg.react_steps;
    let brake_hi = cfg.h - 2;
    bp.agents.push(AgentPlan {
        agent_id: bp.agents.len() as AgentId + 1,
        label: CausalLabel::Causal,
        dims: car_dims(rng),
        behavior: AgentBehavior::Leader {
            gap: rng.gen_range(cfg.leader_gap_min..=cfg.leader_gap_max),
            brake_step: rng.gen_range(brake_lo..=brake_hi),
            decel: rng.gen_range(cfg.brake_decel_min..=cfg.brake_decel_max),
        },
    });
}

fn add_distractor(bp: &mut Blueprint, cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) {
    let fake_shift = draw_lateral_shift(cfg, rng);
    let noise = if cfg.spur_noise > 0.0 {
        Normal::new(0.0, cfg.spur_noise).expect("valid sigma").sample(rng)
    } else {
        0.0
    };
    let offset = cfg.spur_corr * bp.lateral_shift + (1.0 - cfg.spur_corr) * fake_shift + noise;
    bp.agents.push(AgentPlan {
        agent_id: bp.agents.len() as AgentId + 1,
        label: CausalLabel::NonCausal,
        dims: car_dims(rng),
        behavior: AgentBehavior::Distractor {
            offset,
            gap_x: rng.gen_range(-15.0..15.0),
            speed: bp.target_speed * rng.gen_range(0.85..1.15),
        },
    });
}

fn add_bystanders(bp: &mut Blueprint, cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) {
    let room = cfg.n_max.saturating_sub(bp.agents.len());
    let count = rng.gen_range(cfg.bystanders_min..=cfg.bystanders_max).min(room);
    for _ in 0..count {
        let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        bp.agents.push(AgentPlan {
            agent_id: bp.agents.len() as AgentId + 1,
            label: CausalLabel::NonCausal,
            dims: car_dims(rng),
            behavior: AgentBehavior::Bystander {
                x0: rng.gen_range(-35.0..35.0),
                y0: side * rng.gen_range(12.0..18.0),
                speed: rng.gen_range(4.0..12.0),
                heading: if rng.gen_bool(0.5) { 0.0 } else { std::f64::consts::PI },
            },
        });
    }
}

impl KindGenerator for LeaderFollowerGen {
    fn name(&self) -> &'static str {
        "leader_follower"
    }
    fn kind(&self) -> GeneratorKind {
        GeneratorKind::LeaderFollower
    }
    fn plan(&self, cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Blueprint {
        let mut bp = base_plan(cfg, rng, self.kind());
        add_leader(&mut bp, cfg, rng);
        add_bystanders(&mut bp, cfg, rng);
        bp
    }
}

impl KindGenerator for IndependentGen {
    fn name(&self) -> &'static str {
        "independent"
    }
    fn kind(&self) -> GeneratorKind {
        GeneratorKind::Independent
    }
    fn plan(&self, cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Blueprint {
        let mut bp = base_plan(cfg, rng, self.kind());
        add_bystanders(&mut bp, cfg, rng);
        bp
    }
}

impl KindGenerator for SpuriousGen {
    fn name(&self) -> &'static str {
        "spurious_distractor"
    }
    fn kind(&self) -> GeneratorKind {
        GeneratorKind::SpuriousDistractor
    }
    fn plan(&self, cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Blueprint {
        let mut bp = base_plan(cfg, rng, self.kind());
        add_distractor(&mut bp, cfg, rng);
        add_bystanders(&mut bp, cfg, rng);
        bp
    }
}

impl KindGenerator for MixedGen {
    fn name(&self) -> &'static str {
        "mixed"
    }
    fn kind(&self) -> GeneratorKind {
        GeneratorKind::Mixed
    }
    fn plan(&self, cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Blueprint {
        let mut bp = base_plan(cfg, rng, self.kind());
        add_leader(&mut bp, cfg, rng);
        add_distractor(&mut bp, cfg, rng);
        add_bystanders(&mut bp, cfg, rng);
        bp
    }
}

/// Blueprints for the whole dataset, in scene-id order.
pub fn plan_dataset(cfg: &GeneratorConfig, seed: u64) -> Result<Vec<Blueprint>> {
    cfg.validate()?;
    let mut out = Vec::new();
    let mut scene_id = 0u64;
    for gen in kind_generators() {
        for _ in 0..cfg.count_for(gen.kind()) {
            let mut rng = rng_from(&[seed, scene_id]);
            out.push(gen.plan(cfg, &mut rng));
            scene_id += 1;
        }
    }
    Ok(out)
}

/// Deterministic dataset generation: identical `(config, seed)` pairs give
/// byte-identical scene lists.
pub fn generate_dataset(cfg: &GeneratorConfig, seed: u64) -> Result<Vec<Scene>> {
    let blueprints = plan_dataset(cfg, seed)?;
    let mut scenes = Vec::with_capacity(blueprints.len());
    for (i, bp) in blueprints.iter().enumerate() {
        let scene = realize(bp, cfg, i as u64, mix(&[seed, i as u64]), &[]);
        scene.validate()?;
        scenes.push(scene);
    }
    Ok(scenes)
}

fn speed_at(v0: f64, brake: Option<(usize, f64)>, floor: f64, dt: f64, t: usize) -> f64 {
    match brake {
        Some((start, decel)) if t > start => (v0 - decel * dt * (t - start) as f64).max(floor),
        _ => v0,
    }
}

fn smooth_ramp(u: f64) -> f64 {
    u * u * (3.0 - 2.0 * u)
}

/// Rolls a blueprint out into a scene, in the target-centric frame.
/// Agents listed in `ablated` are removed from the scene *and* from the
/// generator dynamics, so the target future is the counterfactual one;
/// this is the hook the causal-label soundness checks use.
pub fn realize(
    bp: &Blueprint,
    cfg: &GeneratorConfig,
    scene_id: u64,
    rng_seed: u64,
    ablated: &[AgentId],
) -> Scene {
    let total = cfg.h + cfg.f;
    let dt = cfg.dt;
    let is_ablated = |id: AgentId| ablated.contains(&id);

    // Target brake reaction exists only while a (non-ablated) leader does.
    let target_brake = bp.leader().and_then(|a| {
        if is_ablated(a.agent_id) {
            return None;
        }
        match a.behavior {
            AgentBehavior::Leader { brake_step, decel, .. } => {
                Some((brake_step + cfg.react_steps, decel))
            }
            _ => None,
        }
    });

    // Local-frame positions for the target.
    let mut target_pos = Vec::with_capacity(total);
    let mut x = 0.0;
    for t in 0..total {
        if t > 0 {
            x += speed_at(bp.target_speed, target_brake, cfg.floor_speed, dt, t) * dt;
        }
        let y = if t >= cfg.h {
            let u = (t - cfg.h + 1) as f64 / cfg.f as f64;
            bp.lateral_shift * smooth_ramp(u)
        } else {
            0.0
        };
        target_pos.push((x, y));
    }
    for (k, (jx, jy)) in bp.jitter.iter().enumerate() {
        target_pos[cfg.h + k].0 += jx;
        target_pos[cfg.h + k].1 += jy;
    }

    let mut agent_pos: Vec<(AgentId, Vec<(f64, f64)>)> = Vec::new();
    for plan in &bp.agents {
        if is_ablated(plan.agent_id) {
            continue;
        }
        let mut pos = Vec::with_capacity(total);
        match plan.behavior {
            AgentBehavior::Leader { gap, brake_step, decel } => {
                let mut lx = gap;
                for t in 0..total {
                    if t > 0 {
                        lx += speed_at(bp.target_speed, Some((brake_step, decel)), cfg.floor_speed, dt, t)
                            * dt;
                    }
                    pos.push((lx, 0.0));
                }
            }
            AgentBehavior::Distractor { offset, gap_x, speed } => {
                let y = cfg.distractor_base_lat + offset;
                for t in 0..total {
                    pos.push((gap_x + speed * dt * t as f64, y));
                }
            }
            AgentBehavior::Bystander { x0, y0, speed, heading } => {
                let (dx, dy) = (heading.cos() * speed * dt, heading.sin() * speed * dt);
                for t in 0..total {
                    pos.push((x0 + dx * t as f64, y0 + dy * t as f64));
                }
            }
        }
        agent_pos.push((plan.agent_id, pos));
    }

    // Local -> world, then backward-difference velocities and headings.
    let (sinp, cosp) = bp.world_heading.sin_cos();
    let to_world = |p: (f64, f64)| {
        (
            bp.world_x + cosp * p.0 - sinp * p.1,
            bp.world_y + sinp * p.0 + cosp * p.1,
        )
    };
    let states_of = |pos: &[(f64, f64)], dims: (f64, f64)| -> Vec<AgentState> {
        let world: Vec<(f64, f64)> = pos.iter().map(|&p| to_world(p)).collect();
        let mut vel = Vec::with_capacity(world.len());
        for t in 0..world.len() {
            let k = t.max(1);
            vel.push((
                (world[k].0 - world[k - 1].0) / dt,
                (world[k].1 - world[k - 1].1) / dt,
            ));
        }
        let mut states = Vec::with_capacity(world.len());
        let mut theta = bp.world_heading;
        for t in 0..world.len() {
            let (vx, vy) = vel[t];
            if vx.hypot(vy) > 1e-9 {
                theta = vy.atan2(vx);
            }
            states.push(AgentState {
                x: world[t].0,
                y: world[t].1,
                vx,
                vy,
                w: dims.0,
                l: dims.1,
                theta: wrap_angle(theta),
            });
        }
        states
    };

    let target_states = states_of(&target_pos, bp.target_dims);
    let anchor = target_states[cfg.h - 1];

    let localize = |states: Vec<AgentState>| -> Vec<AgentState> {
        states
            .into_iter()
            .map(|s| to_frame(&s, anchor.x, anchor.y, anchor.theta))
            .collect()
    };

    let target_local = localize(target_states);
    let target = AgentTrack {
        agent_id: 0,
        role: Role::Target,
        history: target_local[..cfg.h].to_vec(),
        future: target_local[cfg.h..].to_vec(),
        causal_label: CausalLabel::Unlabeled,
    };

    let surrounding = agent_pos
        .into_iter()
        .map(|(id, pos)| {
            let plan = bp.agents.iter().find(|p| p.agent_id == id).expect("plan for id");
            let local = localize(states_of(&pos, plan.dims));
            AgentTrack {
                agent_id: id,
                role: Role::Surrounding,
                history: local[..cfg.h].to_vec(),
                future: Vec::new(),
                causal_label: plan.label,
            }
        })
        .collect();

    Scene {
        scene_id,
        target,
        surrounding,
        generator_kind: bp.kind,
        rng_seed,
    }
}
