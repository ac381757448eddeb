//! A deterministic behaviour-based helm and the mission simulator around it.
//!
//! The helm arbitrates with a fixed priority table, highest first:
//!
//! | priority | trigger                                   | behaviour         |
//! |----------|-------------------------------------------|-------------------|
//! | 1        | obstacle range < `obstacle_trigger_range` | `avoid-obstacles` |
//! | 2        | battery < `battery_wait_threshold`        | `wait`            |
//! | 3        | fix age > `gps_fix_interval`              | `gps`             |
//! | 4        | first incomplete objective                | its behaviour     |
//! | 5        | every objective complete                  | `wait`            |
//!
//! The distiller only ever sees the emitted [`TraceRecord`]s.

use chrono::{DateTime, Duration, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::telemetry::{BehaviourLabel, TraceRecord, VehicleState};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid mission plan: {0}")]
    Plan(String),
    #[error("invalid helm config: {0}")]
    Helm(String),
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("scenario JSON: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Rect {
    pub fn contains(&self, p: Point) -> bool {
        (self.min_x..=self.max_x).contains(&p.x) && (self.min_y..=self.max_y).contains(&p.y)
    }

    fn is_valid(&self) -> bool {
        [self.min_x, self.min_y, self.max_x, self.max_y]
            .iter()
            .all(|v| v.is_finite())
            && self.min_x < self.max_x
            && self.min_y < self.max_y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
}

impl Circle {
    pub fn centre(&self) -> Point {
        Point::new(self.x, self.y)
    }

    /// Distance from `p` to the circle's edge, zero inside.
    pub fn clearance(&self, p: Point) -> f64 {
        (self.centre().distance(p) - self.radius).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObjectiveKind {
    SurveyArea { area: Rect },
    TransitWaypoint { point: Point },
    GotoPoint { point: Point },
}

impl ObjectiveKind {
    pub fn behaviour(&self) -> BehaviourLabel {
        match self {
            ObjectiveKind::SurveyArea { .. } => BehaviourLabel::Survey,
            ObjectiveKind::TransitWaypoint { .. } => BehaviourLabel::Transit,
            ObjectiveKind::GotoPoint { .. } => BehaviourLabel::Goto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub id: String,
    #[serde(flatten)]
    pub kind: ObjectiveKind,
    /// Metres within which a target point counts as reached.
    pub tolerance: f64,
}

impl Objective {
    /// Survey waypoints, or the single target point.
    pub fn waypoints(&self) -> Vec<Point> {
        match &self.kind {
            ObjectiveKind::SurveyArea { area } => lawnmower(area, 2.0 * self.tolerance),
            ObjectiveKind::TransitWaypoint { point } | ObjectiveKind::GotoPoint { point } => {
                vec![*point]
            }
        }
    }
}

/// Back-and-forth legs along x, `spacing` apart in y.
pub fn lawnmower(area: &Rect, spacing: f64) -> Vec<Point> {
    let mut points = Vec::new();
    let mut lane = 0usize;
    loop {
        let y = area.min_y + lane as f64 * spacing;
        if y > area.max_y + 1e-9 {
            break;
        }
        let (a, b) = if lane % 2 == 0 {
            (area.min_x, area.max_x)
        } else {
            (area.max_x, area.min_x)
        };
        points.push(Point::new(a, y));
        points.push(Point::new(b, y));
        lane += 1;
    }
    points
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionPlan {
    pub objectives: Vec<Objective>,
}

impl MissionPlan {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.objectives.is_empty() {
            return Err(ConfigError::Plan(
                "at least one objective is required".into(),
            ));
        }
        for (i, o) in self.objectives.iter().enumerate() {
            if self.objectives[..i].iter().any(|p| p.id == o.id) {
                return Err(ConfigError::Plan(format!(
                    "duplicate objective id `{}`",
                    o.id
                )));
            }
            if !(o.tolerance > 0.0 && o.tolerance.is_finite()) {
                return Err(ConfigError::Plan(format!(
                    "objective `{}`: tolerance must be positive",
                    o.id
                )));
            }
            let ok = match &o.kind {
                ObjectiveKind::SurveyArea { area } => area.is_valid(),
                ObjectiveKind::TransitWaypoint { point } | ObjectiveKind::GotoPoint { point } => {
                    point.x.is_finite() && point.y.is_finite()
                }
            };
            if !ok {
                return Err(ConfigError::Plan(format!(
                    "objective `{}`: invalid geometry",
                    o.id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HelmConfig {
    /// Seconds without a fix before the gps behaviour fires.
    pub gps_fix_interval: f64,
    pub obstacle_trigger_range: f64,
    /// Percent.
    pub battery_wait_threshold: f64,
    pub cruise_speed: f64,
    /// Clearance from the obstacle edge held while avoiding. Must be below
    /// the trigger range.
    pub standoff_radius: f64,
    /// Obstacles further than this are not detected.
    pub sensor_range: f64,
    pub cruise_depth: f64,
    /// Climb and dive rate, m/s.
    pub vertical_speed: f64,
    /// Battery drain in %/s while moving.
    pub cruise_drain: f64,
    /// Battery drain in %/s while waiting.
    pub wait_drain: f64,
    /// Seconds spent holding once every objective is complete.
    pub completion_hold: f64,
}

impl Default for HelmConfig {
    fn default() -> Self {
        Self {
            gps_fix_interval: 300.0,
            obstacle_trigger_range: 30.0,
            battery_wait_threshold: 15.0,
            cruise_speed: 2.0,
            standoff_radius: 12.0,
            sensor_range: 100.0,
            cruise_depth: 5.0,
            vertical_speed: 0.5,
            cruise_drain: 0.02,
            wait_drain: 0.005,
            completion_hold: 0.0,
        }
    }
}

impl HelmConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("gps_fix_interval", self.gps_fix_interval),
            ("obstacle_trigger_range", self.obstacle_trigger_range),
            ("battery_wait_threshold", self.battery_wait_threshold),
            ("cruise_speed", self.cruise_speed),
            ("standoff_radius", self.standoff_radius),
            ("sensor_range", self.sensor_range),
            ("vertical_speed", self.vertical_speed),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError::Helm(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.battery_wait_threshold >= 100.0 {
            return Err(ConfigError::Helm(
                "battery_wait_threshold must be in (0, 100)".into(),
            ));
        }
        if self.standoff_radius >= self.obstacle_trigger_range {
            return Err(ConfigError::Helm(
                "standoff_radius must be below obstacle_trigger_range".into(),
            ));
        }
        if self.sensor_range < self.obstacle_trigger_range {
            return Err(ConfigError::Helm(
                "sensor_range must be at least obstacle_trigger_range".into(),
            ));
        }
        for (name, v) in [
            ("cruise_depth", self.cruise_depth),
            ("cruise_drain", self.cruise_drain),
            ("wait_drain", self.wait_drain),
            ("completion_hold", self.completion_hold),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ConfigError::Helm(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Full simulator state. Only [`WorldState::observe`] leaks out of the helm.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub position: Point,
    pub depth: f64,
    pub heading: f64,
    pub speed: f64,
    pub battery: f64,
    pub clock: f64,
    pub steps: u64,
    pub wall_start: DateTime<Utc>,
    pub obstacles: Vec<Circle>,
    pub exclusion_zones: Vec<Rect>,
    pub completed: Vec<bool>,
    /// Next lawnmower waypoint of the active survey.
    pub survey_leg: usize,
    /// An objective completed during the previous step.
    pub just_completed: bool,
    pub gps_fix_age: f64,
}

impl WorldState {
    pub fn new(plan: &MissionPlan, start: &StartState, wall_start: DateTime<Utc>) -> Self {
        Self {
            position: Point::new(start.x, start.y),
            depth: start.depth,
            heading: start.heading,
            speed: 0.0,
            battery: start.battery,
            clock: 0.0,
            steps: 0,
            wall_start,
            obstacles: Vec::new(),
            exclusion_zones: Vec::new(),
            completed: vec![false; plan.objectives.len()],
            survey_leg: 0,
            just_completed: false,
            gps_fix_age: start.gps_fix_age,
        }
    }

    pub fn active_objective(&self) -> Option<usize> {
        self.completed.iter().position(|c| !c)
    }

    /// Clearance to the nearest obstacle within sensor range, else infinity.
    pub fn obstacle_range(&self, sensor_range: f64) -> f64 {
        self.nearest_obstacle()
            .map(|(_, d)| d)
            .filter(|d| *d <= sensor_range)
            .unwrap_or(f64::INFINITY)
    }

    fn nearest_obstacle(&self) -> Option<(&Circle, f64)> {
        self.obstacles
            .iter()
            .map(|o| (o, o.clearance(self.position)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }

    pub fn in_exclusion_zone(&self) -> bool {
        self.exclusion_zones
            .iter()
            .any(|z| z.contains(self.position))
    }

    pub fn triggers(&self, cfg: &HelmConfig) -> Triggers {
        Triggers {
            obstacle: self.obstacle_range(cfg.sensor_range) < cfg.obstacle_trigger_range,
            battery_low: self.battery < cfg.battery_wait_threshold,
            gps_due: self.gps_fix_age > cfg.gps_fix_interval,
        }
    }

    /// The telemetry tick an outside observer would receive.
    pub fn observe(&self, plan: &MissionPlan, cfg: &HelmConfig) -> VehicleState {
        let millis = (self.clock * 1000.0).round() as i64;
        VehicleState {
            t: self.clock,
            wall: self.wall_start + Duration::milliseconds(millis),
            x: self.position.x,
            y: self.position.y,
            depth: self.depth,
            speed: self.speed,
            heading: self.heading,
            battery: self.battery,
            objective_id: self
                .active_objective()
                .map(|i| plan.objectives[i].id.clone()),
            objective_complete: self.just_completed,
            obstacle_range: self.obstacle_range(cfg.sensor_range),
            in_exclusion_zone: self.in_exclusion_zone(),
            gps_fix_age: self.gps_fix_age,
        }
    }

    fn current_target(&self, plan: &MissionPlan) -> Option<Point> {
        let obj = &plan.objectives[self.active_objective()?];
        obj.waypoints().get(self.survey_leg).copied()
    }
}

/// Which priority triggers fire in a given world.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triggers {
    pub obstacle: bool,
    pub battery_low: bool,
    pub gps_due: bool,
}

/// The priority table on its own.
pub fn arbitrate(triggers: Triggers, active: Option<&ObjectiveKind>) -> BehaviourLabel {
    if triggers.obstacle {
        BehaviourLabel::AvoidObstacles
    } else if triggers.battery_low {
        BehaviourLabel::Wait
    } else if triggers.gps_due {
        BehaviourLabel::Gps
    } else {
        active.map_or(BehaviourLabel::Wait, ObjectiveKind::behaviour)
    }
}

pub fn select_behaviour(
    world: &WorldState,
    plan: &MissionPlan,
    cfg: &HelmConfig,
) -> BehaviourLabel {
    let active = world.active_objective().map(|i| &plan.objectives[i].kind);
    arbitrate(world.triggers(cfg), active)
}

/// Advances the world by `dt` seconds under the behaviour the helm selects.
pub fn step(
    world: &WorldState,
    plan: &MissionPlan,
    cfg: &HelmConfig,
    dt: f64,
) -> (WorldState, BehaviourLabel) {
    let behaviour = select_behaviour(world, plan, cfg);
    let mut next = world.clone();
    let target = world.current_target(plan);
    let mut fix = false;

    match behaviour {
        BehaviourLabel::Wait => {
            next.speed = 0.0;
        }
        BehaviourLabel::Gps => {
            // Keeps making way towards the target while climbing.
            if let Some(t) = target {
                move_towards(&mut next, t, cfg.cruise_speed * dt, dt);
            } else {
                next.speed = 0.0;
            }
            next.depth = approach(world.depth, 0.0, cfg.vertical_speed * dt);
            fix = next.depth == 0.0;
        }
        BehaviourLabel::Goto | BehaviourLabel::Transit | BehaviourLabel::Survey => {
            if let Some(t) = target {
                move_towards(&mut next, t, cfg.cruise_speed * dt, dt);
            } else {
                next.speed = 0.0;
            }
            next.depth = approach(world.depth, cfg.cruise_depth, cfg.vertical_speed * dt);
        }
        BehaviourLabel::AvoidObstacles => {
            if let Some((obstacle, _)) = world.nearest_obstacle() {
                let dir = avoidance_direction(world.position, obstacle, target, cfg);
                let d = cfg.cruise_speed * dt;
                next.position =
                    Point::new(world.position.x + dir.0 * d, world.position.y + dir.1 * d);
                next.heading = heading_of(dir.0, dir.1);
                next.speed = cfg.cruise_speed;
            }
            next.depth = approach(world.depth, cfg.cruise_depth, cfg.vertical_speed * dt);
        }
    }

    next.gps_fix_age = if fix { 0.0 } else { world.gps_fix_age + dt };
    let drain = if behaviour == BehaviourLabel::Wait {
        cfg.wait_drain
    } else {
        cfg.cruise_drain
    };
    next.battery = (world.battery - drain * dt).max(0.0);

    next.just_completed = false;
    if let Some(active) = world.active_objective() {
        let waypoints = plan.objectives[active].waypoints();
        if let Some(wp) = waypoints.get(next.survey_leg) {
            if next.position.distance(*wp) <= plan.objectives[active].tolerance {
                next.survey_leg += 1;
                if next.survey_leg >= waypoints.len() {
                    next.completed[active] = true;
                    next.survey_leg = 0;
                    next.just_completed = true;
                }
            }
        }
    }

    next.steps = world.steps + 1;
    next.clock = next.steps as f64 * dt;
    (next, behaviour)
}

fn approach(from: f64, to: f64, max_delta: f64) -> f64 {
    if (to - from).abs() <= max_delta {
        to
    } else {
        from + max_delta.copysign(to - from)
    }
}

fn move_towards(world: &mut WorldState, target: Point, max_distance: f64, dt: f64) {
    let (dx, dy) = (target.x - world.position.x, target.y - world.position.y);
    let dist = dx.hypot(dy);
    if dist == 0.0 {
        world.speed = 0.0;
        return;
    }
    let d = dist.min(max_distance);
    world.position = Point::new(
        world.position.x + dx / dist * d,
        world.position.y + dy / dist * d,
    );
    world.heading = heading_of(dx, dy);
    world.speed = d / dt;
}

/// Compass heading in degrees, clockwise from +y.
fn heading_of(dx: f64, dy: f64) -> f64 {
    let h = dx.atan2(dy).to_degrees().rem_euclid(360.0);
    if h >= 360.0 {
        0.0
    } else {
        h
    }
}

fn normalize(v: (f64, f64)) -> (f64, f64) {
    let n = v.0.hypot(v.1);
    if n == 0.0 {
        (1.0, 0.0)
    } else {
        (v.0 / n, v.1 / n)
    }
}

/// Head for the target once the obstacle is behind, otherwise circle it on
/// the side facing the target while closing in on the standoff clearance.
fn avoidance_direction(
    position: Point,
    obstacle: &Circle,
    target: Option<Point>,
    cfg: &HelmConfig,
) -> (f64, f64) {
    let away = normalize((position.x - obstacle.x, position.y - obstacle.y));
    let Some(target) = target else {
        return away;
    };
    let to_target = normalize((target.x - position.x, target.y - position.y));
    if to_target.0 * away.0 + to_target.1 * away.1 >= 0.0 {
        return to_target;
    }
    let left = (-away.1, away.0);
    let right = (away.1, -away.0);
    let dot = |v: (f64, f64)| v.0 * to_target.0 + v.1 * to_target.1;
    let tangent = if dot(left) >= dot(right) { left } else { right };
    let error = ((obstacle.clearance(position) - cfg.standoff_radius) / cfg.standoff_radius)
        .clamp(-1.0, 1.0);
    normalize((tangent.0 - away.0 * error, tangent.1 - away.1 * error))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StartState {
    pub x: f64,
    pub y: f64,
    pub depth: f64,
    pub heading: f64,
    pub battery: f64,
    pub gps_fix_age: f64,
}

impl Default for StartState {
    fn default() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            depth: 0.0,
            heading: 0.0,
            battery: 100.0,
            gps_fix_age: 0.0,
        }
    }
}

/// Seeded perturbation amplitudes, metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Jitter {
    pub start_position: f64,
    pub obstacle_position: f64,
}

impl Default for Jitter {
    fn default() -> Self {
        Self {
            start_position: 2.0,
            obstacle_position: 3.0,
        }
    }
}

fn default_wall() -> DateTime<Utc> {
    DateTime::parse_from_rfc3339("2022-07-01T14:00:00Z")
        .expect("valid literal")
        .with_timezone(&Utc)
}

fn default_dt() -> f64 {
    1.0
}

/// Everything needed to reproduce one simulated mission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub plan: MissionPlan,
    #[serde(default)]
    pub helm: HelmConfig,
    #[serde(default)]
    pub obstacles: Vec<Circle>,
    #[serde(default)]
    pub exclusion_zones: Vec<Rect>,
    #[serde(default)]
    pub start: StartState,
    #[serde(default = "default_wall")]
    pub start_wall: DateTime<Utc>,
    #[serde(default)]
    pub jitter: Jitter,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub max_duration: f64,
}

/// Output of [`run_mission`].
#[derive(Debug, Clone, PartialEq)]
pub struct MissionRun {
    pub records: Vec<TraceRecord>,
    /// Stopped at `max_duration` rather than mission completion.
    pub timed_out: bool,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.plan.validate()?;
        self.helm.validate()?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(ConfigError::Scenario("dt must be positive".into()));
        }
        if !(self.max_duration > self.dt && self.max_duration.is_finite()) {
            return Err(ConfigError::Scenario("max_duration must exceed dt".into()));
        }
        if !(0.0..=100.0).contains(&self.start.battery)
            || self.start.depth < 0.0
            || self.start.gps_fix_age < 0.0
        {
            return Err(ConfigError::Scenario("start state out of range".into()));
        }
        if self.obstacles.iter().any(|o| !(o.radius > 0.0)) {
            return Err(ConfigError::Scenario(
                "obstacle radius must be positive".into(),
            ));
        }
        if self.exclusion_zones.iter().any(|z| !z.is_valid()) {
            return Err(ConfigError::Scenario("invalid exclusion zone".into()));
        }
        Ok(())
    }

    /// Runs the scenario with its own seed.
    pub fn run(&self) -> MissionRun {
        self.run_with_seed(self.seed)
    }

    pub fn run_with_seed(&self, seed: u64) -> MissionRun {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut jitter = |amplitude: f64| {
            if amplitude > 0.0 {
                rng.random_range(-amplitude..=amplitude)
            } else {
                0.0
            }
        };
        let mut start = self.start;
        start.x += jitter(self.jitter.start_position);
        start.y += jitter(self.jitter.start_position);
        let obstacles = self
            .obstacles
            .iter()
            .map(|o| Circle {
                x: o.x + jitter(self.jitter.obstacle_position),
                y: o.y + jitter(self.jitter.obstacle_position),
                radius: o.radius,
            })
            .collect();
        let mut world = WorldState::new(&self.plan, &start, self.start_wall);
        world.obstacles = obstacles;
        world.exclusion_zones = self.exclusion_zones.clone();
        simulate(world, &self.plan, &self.helm, self.max_duration, self.dt)
    }
}

/// Runs a mission from its plan and config alone, seeding the start jitter.
pub fn run_mission(
    plan: &MissionPlan,
    cfg: &HelmConfig,
    seed: u64,
    max_duration: f64,
    dt: f64,
) -> MissionRun {
    Scenario {
        name: String::new(),
        plan: plan.clone(),
        helm: cfg.clone(),
        obstacles: Vec::new(),
        exclusion_zones: Vec::new(),
        start: StartState::default(),
        start_wall: default_wall(),
        jitter: Jitter::default(),
        seed,
        dt,
        max_duration,
    }
    .run()
}

/// Steps `world` until the mission completes (plus the configured hold) or
/// `max_duration` elapses, recording each tick's pre-step state with the
/// behaviour selected for it.
pub fn simulate(
    mut world: WorldState,
    plan: &MissionPlan,
    cfg: &HelmConfig,
    max_duration: f64,
    dt: f64,
) -> MissionRun {
    let mut records = Vec::new();
    let mut completed_at: Option<f64> = None;
    loop {
        if world.clock >= max_duration {
            return MissionRun {
                records,
                timed_out: true,
            };
        }
        if world.active_objective().is_none() {
            let since = *completed_at.get_or_insert(world.clock);
            if world.clock - since >= cfg.completion_hold {
                return MissionRun {
                    records,
                    timed_out: false,
                };
            }
        }
        let state = world.observe(plan, cfg);
        let (next, behaviour) = step(&world, plan, cfg, dt);
        records.push(TraceRecord::labelled(state, behaviour));
        world = next;
    }
}

/// Scenario files shipped with the crate.
pub mod bundled {
    pub const OBSTACLE_FIELD: &str = include_str!("../scenarios/obstacle_field.json");
    pub const SINGLE_OBSTACLE: &str = include_str!("../scenarios/single_obstacle.json");
    pub const LOW_BATTERY: &str = include_str!("../scenarios/low_battery.json");
}
