//! Closed-loop gate-crossing simulation: noisy gate perception at 20 Hz, a
//! state machine supervising PID velocity commands, and a kinematic vehicle
//! tracking the commanded velocity with a first-order lag.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraModel, CameraPose, Intrinsics, Viewport};
use crate::dataset::sample_seed;
use crate::error::{Error, Result};
use crate::geometry::{yaw_quat, Vec3};
use crate::mesh::{standard_gate, GateSpec};
use crate::scene::{visible_corner_count, GateInstance, TARGET_MIN_CORNERS};

/// Configured distance MAE of the perception model (meters).
pub const CALIBRATED_DISTANCE_MAE: f64 = 0.660;

/// Default per-axis pixel noise of the detected gate center.
pub const DEFAULT_PIXEL_SIGMA: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub position: Vec3,
    pub velocity: Vec3,
    pub yaw: f64,
}

impl VehicleState {
    pub fn at_rest(position: Vec3, yaw: f64) -> Self {
        Self {
            position,
            velocity: Vec3::zeros(),
            yaw,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().chain(self.velocity.iter()).all(|v| v.is_finite()) && self.yaw.is_finite()
    }

    pub fn camera_pose(&self) -> CameraPose {
        CameraPose {
            position: self.position,
            orientation: yaw_quat(self.yaw),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerceptionSample {
    /// Detected gate center in pixels (noisy); meaningless when not detected.
    pub center: [f64; 2],
    /// Estimated distance to the gate center in meters (noisy).
    pub distance: f64,
    pub detected: bool,
    /// Gate-passage trigger, standing in for the upward range finder.
    pub passed: bool,
}

impl PerceptionSample {
    pub fn missed() -> Self {
        Self {
            center: [0.0, 0.0],
            distance: f64::INFINITY,
            detected: false,
            passed: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerceptionNoise {
    /// Per-axis Gaussian sigma on the gate center, pixels.
    pub pixel_sigma: f64,
    /// Target mean absolute distance error, meters.
    pub distance_mae: f64,
}

impl PerceptionNoise {
    pub fn none() -> Self {
        Self {
            pixel_sigma: 0.0,
            distance_mae: 0.0,
        }
    }

    pub fn calibrated() -> Self {
        Self {
            pixel_sigma: DEFAULT_PIXEL_SIGMA,
            distance_mae: CALIBRATED_DISTANCE_MAE,
        }
    }

    /// Gaussian sigma whose expected absolute value equals `distance_mae`.
    pub fn distance_sigma(&self) -> f64 {
        self.distance_mae * (PI / 2.0).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pixel_sigma >= 0.0 && self.pixel_sigma.is_finite())
            || !(self.distance_mae >= 0.0 && self.distance_mae.is_finite())
        {
            return Err(Error::Validation(format!("invalid perception noise {self:?}")));
        }
        Ok(())
    }
}

impl Default for PerceptionNoise {
    fn default() -> Self {
        Self::calibrated()
    }
}

fn gaussian(rng: &mut impl Rng, sigma: f64) -> f64 {
    if sigma > 0.0 {
        Normal::new(0.0, sigma).expect("sigma checked").sample(rng)
    } else {
        0.0
    }
}

/// Observes `gate` from `camera`. The gate counts as detected when its center is
/// in front of the camera and at least three frame corners are on screen.
pub fn perceive(
    camera: &CameraModel,
    gate: &GateInstance,
    noise: &PerceptionNoise,
    rng: &mut impl Rng,
) -> PerceptionSample {
    let center = gate.world_center();
    let Ok(p) = camera.project_point(&center) else {
        return PerceptionSample::missed();
    };
    if !p.in_front || visible_corner_count(camera, gate) < TARGET_MIN_CORNERS {
        return PerceptionSample::missed();
    }
    // draw order is fixed so that streams stay aligned across configurations
    let du = gaussian(rng, noise.pixel_sigma);
    let dv = gaussian(rng, noise.pixel_sigma);
    let dd = gaussian(rng, noise.distance_sigma());
    PerceptionSample {
        center: [p.pixel.0 + du, p.pixel.1 + dv],
        distance: (camera.pose.position - center).norm() + dd,
        detected: true,
        passed: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        Self {
            kp: 1.0,
            ki: 0.05,
            kd: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PidController {
    pub gains: PidGains,
    /// Symmetric bound on the integral accumulator.
    pub integral_limit: f64,
    /// Symmetric bound on the output.
    pub output_limit: f64,
    integral: f64,
    prev_error: Option<f64>,
}

impl PidController {
    pub fn new(gains: PidGains, integral_limit: f64, output_limit: f64) -> Self {
        Self {
            gains,
            integral_limit: integral_limit.abs(),
            output_limit: output_limit.abs(),
            integral: 0.0,
            prev_error: None,
        }
    }

    pub fn integral(&self) -> f64 {
        self.integral
    }

    pub fn reset(&mut self) {
        self.integral = 0.0;
        self.prev_error = None;
    }

    /// One controller update. The derivative term is zero on the first step.
    pub fn step(&mut self, error: f64, dt: f64) -> f64 {
        debug_assert!(dt > 0.0);
        self.integral = (self.integral + error * dt).clamp(-self.integral_limit, self.integral_limit);
        let derivative = self.prev_error.map_or(0.0, |p| (error - p) / dt);
        self.prev_error = Some(error);
        let g = self.gains;
        (g.kp * error + g.ki * self.integral + g.kd * derivative).clamp(-self.output_limit, self.output_limit)
    }
}

pub fn pid_step(pid: &mut PidController, error: f64, dt: f64) -> f64 {
    pid.step(error, dt)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum GuidanceMode {
    Search,
    Align,
    Approach,
    Cross,
    Done,
}

impl GuidanceMode {
    pub fn name(self) -> &'static str {
        match self {
            GuidanceMode::Search => "SEARCH",
            GuidanceMode::Align => "ALIGN",
            GuidanceMode::Approach => "APPROACH",
            GuidanceMode::Cross => "CROSS",
            GuidanceMode::Done => "DONE",
        }
    }

    /// Edges of the state machine. Losing the gate before the dash returns to
    /// SEARCH; nothing leads back out of CROSS or DONE.
    pub fn can_transition(self, to: GuidanceMode) -> bool {
        use GuidanceMode::*;
        self == to
            || matches!(
                (self, to),
                (Search, Align)
                    | (Align, Approach)
                    | (Align, Search)
                    | (Approach, Cross)
                    | (Approach, Search)
                    | (Cross, Done)
            )
    }
}

impl fmt::Display for GuidanceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidanceState {
    pub mode: GuidanceMode,
    /// Simulation time at which `mode` was entered, seconds.
    pub entered_at: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuidanceConfig {
    /// Bound on the commanded speed, m/s.
    pub cruise: f64,
    /// Estimated distance below which the crossing dash starts, meters.
    pub cross_distance: f64,
    /// Horizontal center error that ends ALIGN, pixels.
    pub align_tolerance_px: f64,
    pub search_yaw_rate: f64,
    pub max_yaw_rate: f64,
    /// Altitude held during SEARCH and ALIGN, meters.
    pub hold_altitude: f64,
    pub altitude_gain: f64,
    pub lateral: PidGains,
    pub vertical: PidGains,
    pub yaw: PidGains,
    pub integral_limit: f64,
    /// Image geometry used to normalize pixel errors.
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            cruise: 1.0,
            cross_distance: 1.5,
            align_tolerance_px: 20.0,
            search_yaw_rate: 0.5,
            max_yaw_rate: 1.0,
            hold_altitude: 1.0,
            altitude_gain: 1.0,
            lateral: PidGains::default(),
            vertical: PidGains::default(),
            yaw: PidGains::default(),
            integral_limit: 1.0,
            fx: 320.0,
            fy: 320.0,
            cx: 320.0,
            cy: 240.0,
        }
    }
}

impl GuidanceConfig {
    /// Nominal dash length in time: threshold plus half a meter at cruise speed.
    pub fn dash_duration(&self) -> f64 {
        (self.cross_distance + 0.5) / self.cruise
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("cruise", self.cruise),
            ("cross_distance", self.cross_distance),
            ("fx", self.fx),
            ("fy", self.fy),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("guidance {name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Velocity command: world-frame velocity plus yaw rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityCommand {
    pub velocity: Vec3,
    pub yaw_rate: f64,
}

impl VelocityCommand {
    pub fn zero() -> Self {
        Self {
            velocity: Vec3::zeros(),
            yaw_rate: 0.0,
        }
    }
}

/// State machine plus the controllers it supervises.
#[derive(Debug, Clone)]
pub struct Guidance {
    pub config: GuidanceConfig,
    pub state: GuidanceState,
    lateral: PidController,
    vertical: PidController,
    yaw: PidController,
}

impl Guidance {
    pub fn new(config: GuidanceConfig) -> Self {
        let lim = config.integral_limit;
        Self {
            config,
            state: GuidanceState {
                mode: GuidanceMode::Search,
                entered_at: 0.0,
            },
            lateral: PidController::new(config.lateral, lim, config.cruise),
            vertical: PidController::new(config.vertical, lim, config.cruise),
            yaw: PidController::new(config.yaw, lim, config.max_yaw_rate),
        }
    }

    pub fn with_mode(config: GuidanceConfig, mode: GuidanceMode) -> Self {
        let mut g = Self::new(config);
        g.state.mode = mode;
        g
    }

    fn enter(&mut self, mode: GuidanceMode, t: f64) {
        if mode != self.state.mode {
            debug_assert!(self.state.mode.can_transition(mode));
            self.state = GuidanceState { mode, entered_at: t };
            self.lateral.reset();
            self.vertical.reset();
            self.yaw.reset();
        }
    }

    /// Runs one guidance tick at time `t` with update period `dt`.
    pub fn step(&mut self, t: f64, dt: f64, vehicle: &VehicleState, sample: &PerceptionSample) -> VelocityCommand {
        use GuidanceMode::*;
        let cfg = self.config;
        let (sin, cos) = vehicle.yaw.sin_cos();
        let forward = Vec3::new(cos, sin, 0.0);
        let left = Vec3::new(-sin, cos, 0.0);
        let hold = (cfg.altitude_gain * (cfg.hold_altitude - vehicle.position.z)).clamp(-cfg.cruise, cfg.cruise);
        // normalized image-plane errors: positive when the gate is right / below
        let ex = (sample.center[0] - cfg.cx) / cfg.fx;
        let ey = (sample.center[1] - cfg.cy) / cfg.fy;

        if sample.passed && matches!(self.state.mode, Cross) {
            self.enter(Done, t);
        }
        if !sample.detected && matches!(self.state.mode, Align | Approach) {
            self.enter(Search, t);
        }
        match self.state.mode {
            Search if sample.detected => self.enter(Align, t),
            Align if (ex * cfg.fx).abs() < cfg.align_tolerance_px => self.enter(Approach, t),
            Approach if sample.distance < cfg.cross_distance => self.enter(Cross, t),
            _ => {}
        }

        match self.state.mode {
            Search => VelocityCommand {
                velocity: Vec3::new(0.0, 0.0, hold),
                yaw_rate: cfg.search_yaw_rate,
            },
            Align => VelocityCommand {
                velocity: Vec3::new(0.0, 0.0, hold),
                yaw_rate: -self.yaw.step(ex, dt),
            },
            Approach => {
                let mut lat = -self.lateral.step(ex, dt);
                let mut vz = -self.vertical.step(ey, dt);
                let side = (lat * lat + vz * vz).sqrt();
                if side > cfg.cruise {
                    lat *= cfg.cruise / side;
                    vz *= cfg.cruise / side;
                }
                let fwd = (cfg.cruise * cfg.cruise - lat * lat - vz * vz).max(0.0).sqrt();
                VelocityCommand {
                    velocity: forward * fwd + left * lat + Vec3::new(0.0, 0.0, vz),
                    yaw_rate: 0.0,
                }
            }
            Cross => VelocityCommand {
                velocity: forward * cfg.cruise,
                yaw_rate: 0.0,
            },
            Done => VelocityCommand::zero(),
        }
    }
}

/// Standalone form of [`Guidance::step`]: returns the command and the next state.
pub fn guidance_step(
    guidance: &mut Guidance,
    t: f64,
    dt: f64,
    vehicle: &VehicleState,
    sample: &PerceptionSample,
) -> (VelocityCommand, GuidanceState) {
    let cmd = guidance.step(t, dt, vehicle, sample);
    (cmd, guidance.state)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StartLabel {
    Left,
    Centre,
    Right,
}

impl StartLabel {
    pub const ALL: [StartLabel; 3] = [StartLabel::Left, StartLabel::Centre, StartLabel::Right];

    pub fn name(self) -> &'static str {
        match self {
            StartLabel::Left => "left",
            StartLabel::Centre => "centre",
            StartLabel::Right => "right",
        }
    }

    pub fn parse(s: &str) -> Option<StartLabel> {
        match s.trim().to_ascii_lowercase().as_str() {
            "left" => Some(StartLabel::Left),
            "centre" | "center" => Some(StartLabel::Centre),
            "right" => Some(StartLabel::Right),
            _ => None,
        }
    }
}

impl fmt::Display for StartLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub physics_dt: f64,
    /// Physics steps per perception/guidance tick.
    pub perception_every: usize,
    /// First-order velocity tracking time constant, seconds.
    pub tau: f64,
    pub timeout: f64,
    pub noise: PerceptionNoise,
    pub guidance: GuidanceConfig,
    /// Distance of the start line in front of the gate, meters.
    pub start_distance: f64,
    /// Lateral offset of the left/right starts, meters.
    pub start_offset: f64,
    pub start_altitude: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            physics_dt: 0.01,
            perception_every: 5,
            tau: 0.3,
            timeout: 60.0,
            noise: PerceptionNoise::calibrated(),
            guidance: GuidanceConfig::default(),
            start_distance: 8.0,
            start_offset: 3.0,
            start_altitude: 1.0,
        }
    }
}

impl SimConfig {
    pub fn noise_free() -> Self {
        Self {
            noise: PerceptionNoise::none(),
            ..Self::default()
        }
    }

    /// Camera for the vehicle at `state`: 640x480, fx = fy = 320, looking along the body x axis.
    pub fn camera(&self, state: &VehicleState) -> Result<CameraModel> {
        let g = &self.guidance;
        let intr = Intrinsics::new(g.fx, g.fy, g.cx, g.cy)?;
        let vp = Viewport::new((2.0 * g.cx).round() as u32, (2.0 * g.cy).round() as u32)?;
        CameraModel::new(state.camera_pose(), intr, vp)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.physics_dt > 0.0) || self.perception_every == 0 || !(self.tau > 0.0) || !(self.timeout >= 0.0) {
            return Err(Error::Validation("invalid simulation timing".into()));
        }
        self.noise.validate()?;
        self.guidance.validate()
    }
}

/// The protocol gate: standard gate at the origin, front panel facing the starts (-x).
pub fn protocol_gate() -> GateInstance {
    protocol_gate_with(Arc::new(standard_gate()))
}

pub fn protocol_gate_with(spec: Arc<GateSpec>) -> GateInstance {
    GateInstance::new(spec, 0, Vec3::zeros(), PI)
}

/// Start point for `label`, `start_distance` in front of the gate. Left is +y
/// when facing the gate from the start line.
pub fn start_position(cfg: &SimConfig, label: StartLabel) -> Vec3 {
    let y = match label {
        StartLabel::Left => cfg.start_offset,
        StartLabel::Centre => 0.0,
        StartLabel::Right => -cfg.start_offset,
    };
    Vec3::new(-cfg.start_distance, y, cfg.start_altitude)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub state: VehicleState,
    pub mode: GuidanceMode,
}

#[derive(Debug, Clone)]
pub struct SimRun {
    pub trajectory: Vec<TrajectoryPoint>,
    /// `[horizontal, vertical]` offset of the gate-plane crossing from the gate
    /// center, meters; horizontal is positive to the right as seen from the front.
    pub crossing: Option<[f64; 2]>,
    pub success: bool,
    pub cruise: f64,
    pub start: StartLabel,
    pub seed: u64,
    /// Mode transitions as `(time, mode entered)`.
    pub transitions: Vec<(f64, GuidanceMode)>,
    pub max_commanded_speed: f64,
    pub max_speed: f64,
}

impl SimRun {
    pub fn offset(&self) -> Option<f64> {
        self.crossing.map(|[h, v]| (h * h + v * v).sqrt())
    }
}

/// Simulates one approach from `start` (facing +x) until the vehicle crosses the
/// gate plane or the timeout expires. A crossing inside the frame is a success.
pub fn simulate_run(
    gate: &GateInstance,
    start: Vec3,
    label: StartLabel,
    cruise: f64,
    seed: u64,
    cfg: &SimConfig,
) -> Result<SimRun> {
    if !(cruise > 0.0 && cruise.is_finite()) {
        return Err(Error::Validation(format!("cruise speed must be > 0, got {cruise}")));
    }
    let mut cfg = *cfg;
    cfg.guidance.cruise = cruise;
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut guidance = Guidance::new(cfg.guidance);
    let mut vehicle = VehicleState::at_rest(start, 0.0);

    let center = gate.world_center();
    let normal = gate.world_normal();
    let h_axis = gate.pose().apply_vector(&gate.spec.horizontal_axis());
    let v_axis = Vec3::z();
    let side = |p: &Vec3| normal.dot(&(p - center));
    let start_side = side(&start).signum();

    let mut run = SimRun {
        trajectory: vec![TrajectoryPoint {
            t: 0.0,
            state: vehicle,
            mode: guidance.state.mode,
        }],
        crossing: None,
        success: false,
        cruise,
        start: label,
        seed,
        transitions: vec![(0.0, guidance.state.mode)],
        max_commanded_speed: 0.0,
        max_speed: 0.0,
    };

    let dt = cfg.physics_dt;
    let tick = dt * cfg.perception_every as f64;
    let alpha = 1.0 - (-dt / cfg.tau).exp();
    let steps = (cfg.timeout / dt).round() as usize;
    let mut cmd = VelocityCommand::zero();
    let mut passed = false;
    let mut elapsed = 0;
    for k in 0..steps {
        let t = k as f64 * dt;
        if k % cfg.perception_every == 0 {
            let cam = cfg.camera(&vehicle)?;
            let mut sample = perceive(&cam, gate, &cfg.noise, &mut rng);
            sample.passed = passed;
            let before = guidance.state.mode;
            cmd = guidance.step(t, tick, &vehicle, &sample);
            if guidance.state.mode != before {
                run.transitions.push((t, guidance.state.mode));
            }
            run.max_commanded_speed = run.max_commanded_speed.max(cmd.velocity.norm());
            run.trajectory.push(TrajectoryPoint {
                t,
                state: vehicle,
                mode: guidance.state.mode,
            });
            if guidance.state.mode == GuidanceMode::Done {
                break;
            }
        }
        let prev = vehicle.position;
        vehicle.velocity += (cmd.velocity - vehicle.velocity) * alpha;
        vehicle.position += vehicle.velocity * dt;
        vehicle.yaw += cmd.yaw_rate * dt;
        run.max_speed = run.max_speed.max(vehicle.velocity.norm());
        elapsed = k + 1;
        if !passed && side(&vehicle.position).signum() != start_side {
            let (s0, s1) = (side(&prev), side(&vehicle.position));
            let p = prev + (vehicle.position - prev) * (s0 / (s0 - s1));
            let d = p - center;
            let offset = [d.dot(&h_axis), d.dot(&v_axis)];
            run.crossing = Some(offset);
            run.success = offset[0].abs() < 0.5 * gate.spec.width && offset[1].abs() < 0.5 * gate.spec.height;
            passed = true;
            if guidance.state.mode != GuidanceMode::Cross {
                // flew past without a dash; nothing will end the run
                break;
            }
        }
    }
    if !passed {
        run.success = false;
    }
    if elapsed > 0 {
        run.trajectory.push(TrajectoryPoint {
            t: elapsed as f64 * dt,
            state: vehicle,
            mode: guidance.state.mode,
        });
    }
    Ok(run)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub speeds: Vec<f64>,
    pub starts: Vec<StartLabel>,
    pub runs_per_cell: usize,
    pub seed: u64,
}

impl Protocol {
    /// Five runs at each of 0.5, 1 and 2 m/s from the left, centre and right starts.
    pub fn standard(seed: u64) -> Self {
        Self {
            speeds: vec![0.5, 1.0, 2.0],
            starts: StartLabel::ALL.to_vec(),
            runs_per_cell: 5,
            seed,
        }
    }

    pub fn run_count(&self) -> usize {
        self.speeds.len() * self.starts.len() * self.runs_per_cell
    }
}

/// Runs every protocol cell in parallel; results are ordered by speed, start, repetition.
pub fn run_protocol(gate: &GateInstance, protocol: &Protocol, cfg: &SimConfig) -> Result<Vec<SimRun>> {
    let mut jobs = Vec::with_capacity(protocol.run_count());
    for &speed in &protocol.speeds {
        for &start in &protocol.starts {
            for _ in 0..protocol.runs_per_cell {
                let seed = sample_seed(protocol.seed, jobs.len() as u64);
                jobs.push((speed, start, seed));
            }
        }
    }
    jobs.into_par_iter()
        .map(|(speed, start, seed)| simulate_run(gate, start_position(cfg, start), start, speed, seed, cfg))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossingStats {
    pub cruise: f64,
    pub start: StartLabel,
    pub runs: usize,
    pub successes: usize,
    /// Euclidean crossing offsets of the runs that reached the gate plane.
    pub offsets: Vec<f64>,
    pub mean: f64,
    pub max: f64,
}

/// Groups runs by `(cruise, start)` in order of first appearance.
pub fn crossing_stats(runs: &[SimRun]) -> Result<Vec<CrossingStats>> {
    if runs.is_empty() {
        return Err(Error::Validation("no runs to summarize".into()));
    }
    let mut groups: Vec<CrossingStats> = Vec::new();
    for run in runs {
        let idx = match groups.iter().position(|g| g.cruise == run.cruise && g.start == run.start) {
            Some(i) => i,
            None => {
                groups.push(CrossingStats {
                    cruise: run.cruise,
                    start: run.start,
                    runs: 0,
                    successes: 0,
                    offsets: Vec::new(),
                    mean: f64::NAN,
                    max: f64::NAN,
                });
                groups.len() - 1
            }
        };
        let g = &mut groups[idx];
        g.runs += 1;
        g.successes += run.success as usize;
        if let Some(o) = run.offset() {
            g.offsets.push(o);
        }
    }
    for g in &mut groups {
        if !g.offsets.is_empty() {
            g.mean = g.offsets.iter().sum::<f64>() / g.offsets.len() as f64;
            g.max = g.offsets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        }
    }
    Ok(groups)
}

/// Mean Euclidean offset over all runs at `cruise` that reached the gate plane.
pub fn mean_offset_at(runs: &[SimRun], cruise: f64) -> Option<f64> {
    let offsets: Vec<f64> = runs.iter().filter(|r| r.cruise == cruise).filter_map(SimRun::offset).collect();
    (!offsets.is_empty()).then(|| offsets.iter().sum::<f64>() / offsets.len() as f64)
}

pub fn stats_table(stats: &[CrossingStats]) -> String {
    let mut out = String::from("speed (m/s) | start  | runs | success | mean offset (m) | max offset (m)\n");
    for g in stats {
        out.push_str(&format!(
            "{:>11.2} | {:<6} | {:>4} | {:>7} | {:>15.3} | {:>14.3}\n",
            g.cruise, g.start, g.runs, g.successes, g.mean, g.max
        ));
    }
    out
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

pub fn write_stats_csv(stats: &[CrossingStats], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["speed", "start", "runs", "successes", "mean_offset", "max_offset"])
        .map_err(|e| csv_err(path, e))?;
    for g in stats {
        w.write_record([
            g.cruise.to_string(),
            g.start.to_string(),
            g.runs.to_string(),
            g.successes.to_string(),
            format!("{:.6}", g.mean),
            format!("{:.6}", g.max),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One row per run with its crossing point.
pub fn write_runs_csv(runs: &[SimRun], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["run", "speed", "start", "seed", "success", "offset_h", "offset_v", "offset"])
        .map_err(|e| csv_err(path, e))?;
    for (i, r) in runs.iter().enumerate() {
        let [h, v] = r.crossing.unwrap_or([f64::NAN; 2]);
        w.write_record([
            i.to_string(),
            r.cruise.to_string(),
            r.start.to_string(),
            r.seed.to_string(),
            r.success.to_string(),
            format!("{h:.6}"),
            format!("{v:.6}"),
            format!("{:.6}", r.offset().unwrap_or(f64::NAN)),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Trajectories of all runs, sampled at the guidance rate.
pub fn write_trajectories_csv(runs: &[SimRun], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["run", "speed", "start", "t", "x", "y", "z", "vx", "vy", "vz", "yaw", "mode"])
        .map_err(|e| csv_err(path, e))?;
    for (i, r) in runs.iter().enumerate() {
        for p in &r.trajectory {
            let s = &p.state;
            w.write_record([
                i.to_string(),
                r.cruise.to_string(),
                r.start.to_string(),
                format!("{:.2}", p.t),
                format!("{:.4}", s.position.x),
                format!("{:.4}", s.position.y),
                format!("{:.4}", s.position.z),
                format!("{:.4}", s.velocity.x),
                format!("{:.4}", s.velocity.y),
                format!("{:.4}", s.velocity.z),
                format!("{:.4}", s.yaw),
                p.mode.to_string(),
            ])
            .map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
