//! Rule-based vehicle controller driven by perceived affordances.
//!
//! Longitudinal control runs a five-state machine. The two nominal states
//! (cruising, following) feed PID loops; the three braking states map speed
//! to a brake command directly. Lateral control is a damped Stanley law on
//! the path angle and centerline offset and is active in every state.

use std::fmt;

use crate::affordance::SignReading;
use crate::perception::PerceivedAffordances;
use crate::town::DirectionalCommand;

pub fn kmh_to_mps(kmh: f64) -> f64 {
    kmh / 3.6
}

pub fn mps_to_kmh(mps: f64) -> f64 {
    mps * 3.6
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

/// Integrator and previous error of one PID loop.
#[derive(Debug, Clone, Copy, Default)]
pub struct PidState {
    pub integral: f64,
    pub prev_error: Option<f64>,
}

impl PidState {
    pub fn reset(&mut self) {
        self.integral = 0.0;
        self.prev_error = None;
    }
}

/// One PID update. The integral is clamped to `±integral_limit` before use
/// and the derivative is zero on the first step after a reset, so a fresh
/// loop cannot kick.
pub fn pid_step(
    gains: &PidGains,
    state: &mut PidState,
    error: f64,
    dt: f64,
    integral_limit: f64,
) -> f64 {
    state.integral = (state.integral + error * dt).clamp(-integral_limit, integral_limit);
    let derivative = match state.prev_error {
        Some(prev) => (error - prev) / dt,
        None => 0.0,
    };
    state.prev_error = Some(error);
    gains.kp * error + gains.ki * state.integral + gains.kd * derivative
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TuneError {
    #[error("ultimate gain must be positive, got {0}")]
    BadGain(String),
    #[error("oscillation period must be positive, got {0}")]
    BadPeriod(String),
}

/// Ziegler-Nichols table as used here: kp = 0.6 Ku, ki = Tu / 2, kd = Tu / 8.
pub fn ziegler_nichols(ku: f64, tu: f64) -> Result<PidGains, TuneError> {
    check_ku_tu(ku, tu)?;
    Ok(PidGains {
        kp: 0.6 * ku,
        ki: tu / 2.0,
        kd: tu / 8.0,
    })
}

/// Textbook variant of the same rule: ki = 1.2 Ku / Tu, kd = 0.075 Ku Tu.
pub fn ziegler_nichols_classic(ku: f64, tu: f64) -> Result<PidGains, TuneError> {
    check_ku_tu(ku, tu)?;
    Ok(PidGains {
        kp: 0.6 * ku,
        ki: 1.2 * ku / tu,
        kd: 0.075 * ku * tu,
    })
}

fn check_ku_tu(ku: f64, tu: f64) -> Result<(), TuneError> {
    if !(ku > 0.0) {
        return Err(TuneError::BadGain(format!("{ku}")));
    }
    if !(tu > 0.0) {
        return Err(TuneError::BadPeriod(format!("{tu}")));
    }
    Ok(())
}

/// Speed error of the car-following law: the target speed rises with the gap
/// as v_max (1 - exp(-(c / v_max) ell) - d), so the loop settles at the gap
/// where that target equals the lead's speed. All speeds in m/s.
pub fn car_following_error(v: f64, v_max: f64, ell: f64, c: f64, d: f64) -> f64 {
    v_max * (1.0 - (-(c / v_max) * ell).exp() - d) - v
}

/// Stanley front-axle steering law. `cross_track` is positive when the front
/// axle should move toward positive steer, i.e. it is the offset measured to
/// the left of the vehicle. `v_eps` bounds the low-speed gain blowup.
pub fn stanley_steering(psi: f64, cross_track: f64, v: f64, k: f64, v_eps: f64) -> f64 {
    psi + (k * cross_track / v.max(v_eps)).atan()
}

/// First-order smoothing toward the raw command, then a symmetric clamp.
/// `damping` = 0 passes the raw value through, 1 freezes the wheel.
pub fn damped_steering(raw: f64, prev: f64, damping: f64, limit: f64) -> f64 {
    let smoothed = raw - damping * (raw - prev);
    smoothed.clamp(-limit, limit)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlState {
    Cruising,
    Following,
    OverLimit,
    RedLight,
    HazardStop,
}

impl ControlState {
    pub const ALL: [ControlState; 5] = [
        ControlState::Cruising,
        ControlState::Following,
        ControlState::OverLimit,
        ControlState::RedLight,
        ControlState::HazardStop,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ControlState::Cruising => "cruising",
            ControlState::Following => "following",
            ControlState::OverLimit => "over_limit",
            ControlState::RedLight => "red_light",
            ControlState::HazardStop => "hazard_stop",
        }
    }

    pub fn parse(s: &str) -> Option<ControlState> {
        Self::ALL.into_iter().find(|c| c.as_str() == s)
    }
}

impl fmt::Display for ControlState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig {
    /// Red-light confidence above which the controller brakes for the light.
    pub p_red_threshold: f64,
    /// Hazard confidence above which the controller performs a full stop.
    pub p_hazard_threshold: f64,
    /// Lead gap below which the car-following loop takes over, m.
    pub follow_trigger_m: f64,
    /// Speed excess over the limit that triggers corrective braking, km/h.
    pub over_limit_margin_kmh: f64,
    /// Speed taken off the cruise target while a turn command is active, km/h.
    pub turn_speed_reduction_kmh: f64,
    /// Optional cap on the cruise target regardless of the posted limit, km/h.
    pub cruise_cap_kmh: Option<f64>,
    pub cruise_gains: PidGains,
    pub follow_gains: PidGains,
    pub integral_limit: f64,
    /// Gap response rate of the car-following law, 1/s.
    pub car_follow_c: f64,
    /// Fractional speed reserve of the car-following law.
    pub car_follow_d: f64,
    pub stanley_k: f64,
    pub stanley_v_eps: f64,
    pub steer_damping: f64,
    /// Steering clamp, rad; roughly 35 degrees of wheel angle.
    pub steer_limit: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            p_red_threshold: 0.9,
            p_hazard_threshold: 0.7,
            follow_trigger_m: 35.0,
            over_limit_margin_kmh: 15.0,
            turn_speed_reduction_kmh: 10.0,
            cruise_cap_kmh: None,
            cruise_gains: PidGains {
                kp: 0.8,
                ki: 0.08,
                kd: 0.0,
            },
            follow_gains: PidGains {
                kp: 0.5,
                ki: 0.05,
                kd: 0.8,
            },
            integral_limit: 10.0,
            car_follow_c: 1.25,
            car_follow_d: 0.05,
            stanley_k: 2.5,
            stanley_v_eps: 0.5,
            steer_damping: 0.5,
            steer_limit: 0.61,
        }
    }
}

/// Picks the active state by fixed priority: hazard stop, then red light,
/// then the over-limit check, then following, then cruising. `v` in m/s,
/// `limit_kmh` is the controller's current speed-limit memory.
pub fn select_state(
    p: &PerceivedAffordances,
    v: f64,
    limit_kmh: f64,
    cfg: &ControllerConfig,
) -> ControlState {
    if p.p_hazard > cfg.p_hazard_threshold {
        ControlState::HazardStop
    } else if p.p_red > cfg.p_red_threshold {
        ControlState::RedLight
    } else if v > kmh_to_mps(limit_kmh + cfg.over_limit_margin_kmh) {
        ControlState::OverLimit
    } else if p.vehicle_distance < cfg.follow_trigger_m {
        ControlState::Following
    } else {
        ControlState::Cruising
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    pub throttle: f64,
    pub brake: f64,
    pub steer: f64,
    pub state: ControlState,
}

#[derive(Debug, Clone)]
pub struct Controller {
    cfg: ControllerConfig,
    limit_kmh: f64,
    cruise_pid: PidState,
    follow_pid: PidState,
    steer_prev: f64,
    state: Option<ControlState>,
}

impl Controller {
    /// `initial_limit_kmh` seeds the speed-limit memory, normally from the
    /// limit of the starting lane.
    pub fn new(cfg: ControllerConfig, initial_limit_kmh: f64) -> Self {
        Controller {
            cfg,
            limit_kmh: initial_limit_kmh,
            cruise_pid: PidState::default(),
            follow_pid: PidState::default(),
            steer_prev: 0.0,
            state: None,
        }
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.cfg
    }

    /// Current speed-limit memory, km/h.
    pub fn limit_kmh(&self) -> f64 {
        self.limit_kmh
    }

    pub fn state(&self) -> Option<ControlState> {
        self.state
    }

    /// Cruise target for the given command, m/s: the lower of the limit
    /// memory and the cap, minus the turn reduction, floored at zero.
    pub fn target_speed_mps(&self, command: DirectionalCommand) -> f64 {
        let mut kmh = match self.cfg.cruise_cap_kmh {
            Some(cap) => self.limit_kmh.min(cap),
            None => self.limit_kmh,
        };
        if command.is_turn() {
            kmh -= self.cfg.turn_speed_reduction_kmh;
        }
        kmh_to_mps(kmh.max(0.0))
    }

    pub fn step(
        &mut self,
        p: &PerceivedAffordances,
        v: f64,
        command: DirectionalCommand,
        dt: f64,
    ) -> ControlOutput {
        if p.speed_sign != SignReading::None {
            self.limit_kmh = p.speed_sign.kmh().unwrap();
        }

        let state = select_state(p, v, self.limit_kmh, &self.cfg);
        if self.state != Some(state) {
            // A loop that is inactive in the new state must come back fresh
            // the next time its state is entered.
            if state != ControlState::Cruising {
                self.cruise_pid.reset();
            }
            if state != ControlState::Following {
                self.follow_pid.reset();
            }
        }
        self.state = Some(state);

        let v_kmh = mps_to_kmh(v);
        let (throttle, brake) = match state {
            ControlState::HazardStop => (0.0, 1.0),
            ControlState::RedLight => (0.0, (0.2 * v_kmh / 30.0).clamp(0.0, 1.0)),
            ControlState::OverLimit => (0.0, (0.3 * v_kmh / self.limit_kmh).clamp(0.0, 1.0)),
            ControlState::Following => {
                let target = self.target_speed_mps(command);
                let error = car_following_error(
                    v,
                    target.max(1e-9),
                    p.vehicle_distance,
                    self.cfg.car_follow_c,
                    self.cfg.car_follow_d,
                );
                let out = pid_step(
                    &self.cfg.follow_gains,
                    &mut self.follow_pid,
                    error,
                    dt,
                    self.cfg.integral_limit,
                );
                (out.clamp(0.0, 1.0), 0.0)
            }
            ControlState::Cruising => {
                let error = self.target_speed_mps(command) - v;
                let out = pid_step(
                    &self.cfg.cruise_gains,
                    &mut self.cruise_pid,
                    error,
                    dt,
                    self.cfg.integral_limit,
                );
                (out.clamp(0.0, 1.0), 0.0)
            }
        };

        // The affordance reports the offset of the path to the left of the
        // vehicle; the Stanley cross-track argument wants the offset of the
        // vehicle relative to the path, hence the sign flip.
        let raw = stanley_steering(
            p.relative_angle,
            -p.center_distance,
            v,
            self.cfg.stanley_k,
            self.cfg.stanley_v_eps,
        );
        let steer = damped_steering(raw, self.steer_prev, self.cfg.steer_damping, self.cfg.steer_limit);
        self.steer_prev = steer;

        ControlOutput {
            throttle,
            brake,
            steer,
            state,
        }
    }
}

/// Longitudinal test plant for the gain probe: throttle and brake
/// accelerations, linear drag, and a measurement delay. The delay is what
/// lets a proportional loop oscillate at all.
#[derive(Debug, Clone, Copy)]
pub struct ProbePlant {
    pub a_max: f64,
    pub b_max: f64,
    pub drag: f64,
    pub dt: f64,
    pub delay_steps: usize,
}

impl Default for ProbePlant {
    fn default() -> Self {
        ProbePlant {
            a_max: 3.0,
            b_max: 8.0,
            drag: 0.02,
            dt: 0.05,
            delay_steps: 6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeResult {
    pub ku: f64,
    pub tu: f64,
}

/// Sweeps a proportional gain upward until the closed loop holds a steady
/// oscillation around `v_target`, then reports that gain and the measured
/// period. Returns None when no gain up to `kp_max` sustains one.
pub fn oscillation_probe(
    plant: &ProbePlant,
    v_target: f64,
    kp_start: f64,
    kp_factor: f64,
    kp_max: f64,
) -> Option<ProbeResult> {
    assert!(kp_start > 0.0 && kp_factor > 1.0);
    let mut kp = kp_start;
    while kp <= kp_max {
        if let Some(tu) = sustained_period(plant, v_target, kp) {
            return Some(ProbeResult { ku: kp, tu });
        }
        kp *= kp_factor;
    }
    None
}

/// Simulates the plant under proportional control and returns the
/// oscillation period when the response settles into steady peaks.
fn sustained_period(plant: &ProbePlant, v_target: f64, kp: f64) -> Option<f64> {
    let total_steps = (80.0 / plant.dt) as usize;
    let settle_steps = total_steps / 2;
    let mut v = 0.0;
    let mut delayed = std::collections::VecDeque::from(vec![0.0; plant.delay_steps + 1]);
    let mut trace = Vec::with_capacity(total_steps - settle_steps);
    for step in 0..total_steps {
        delayed.push_back(v);
        let measured = delayed.pop_front().unwrap();
        let u = kp * (v_target - measured);
        let throttle = u.clamp(0.0, 1.0);
        let brake = (-u).clamp(0.0, 1.0);
        v += (plant.a_max * throttle - plant.b_max * brake - plant.drag * v) * plant.dt;
        v = v.max(0.0);
        if step >= settle_steps {
            trace.push(v - v_target);
        }
    }

    // Local maxima of the settled error signal.
    let mut peaks: Vec<(usize, f64)> = Vec::new();
    for i in 1..trace.len().saturating_sub(1) {
        if trace[i] > trace[i - 1] && trace[i] >= trace[i + 1] {
            peaks.push((i, trace[i]));
        }
    }
    if peaks.len() < 3 {
        return None;
    }
    let tail = &peaks[peaks.len() - 3..];
    let mean_amp = tail.iter().map(|p| p.1).sum::<f64>() / 3.0;
    if mean_amp < 0.05 {
        return None;
    }
    // Steady means the last peaks agree in amplitude to 10%.
    if tail.iter().any(|p| (p.1 - mean_amp).abs() > 0.1 * mean_amp) {
        return None;
    }
    let spacing = (tail[2].0 - tail[0].0) as f64 / 2.0;
    Some(spacing * plant.dt)
}
