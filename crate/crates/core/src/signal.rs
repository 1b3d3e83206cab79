//! Traffic-light phase machines and the rule-based controllers (static timing
//! and the gap/queue actuated controller).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::network::{Heading, IntersectionId};
use crate::sim::LaneObservation;

pub const YELLOW_DURATION: f64 = 2.0;
pub const MIN_GREEN: f64 = 3.0;

/// Signal phases in clockwise order. Characters give the indication for the
/// approaches arriving from N, E, S, W.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    GrGr,
    Yryr,
    RGrG,
    Ryry,
}

impl Phase {
    pub const ALL: [Phase; 4] = [Phase::GrGr, Phase::Yryr, Phase::RGrG, Phase::Ryry];

    pub fn index(self) -> usize {
        match self {
            Phase::GrGr => 0,
            Phase::Yryr => 1,
            Phase::RGrG => 2,
            Phase::Ryry => 3,
        }
    }

    pub fn next(self) -> Phase {
        Phase::ALL[(self.index() + 1) % 4]
    }

    pub fn is_yellow(self) -> bool {
        matches!(self, Phase::Yryr | Phase::Ryry)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::GrGr => "GrGr",
            Phase::Yryr => "yryr",
            Phase::RGrG => "rGrG",
            Phase::Ryry => "ryry",
        }
    }

    /// Indication shown to an approach arriving from `side` (0=N .. 3=W).
    pub fn indication(self, side: usize) -> Indication {
        let c = self.as_str().as_bytes()[side % 4];
        match c {
            b'G' => Indication::Green,
            b'y' => Indication::Yellow,
            _ => Indication::Red,
        }
    }

    /// Whether the north-south axis is the one served (green or yellow).
    pub fn serves_north_south(self) -> bool {
        matches!(self, Phase::GrGr | Phase::Yryr)
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Indication {
    Green,
    Yellow,
    Red,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SignalAction {
    Hold = 0,
    Switch = 1,
}

impl SignalAction {
    pub fn from_bit(bit: u8) -> Self {
        if bit == 0 {
            SignalAction::Hold
        } else {
            SignalAction::Switch
        }
    }

    pub fn bit(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalState {
    pub intersection: IntersectionId,
    pub phase: Phase,
    /// Seconds spent in the current phase.
    pub elapsed: f64,
}

impl SignalState {
    pub fn new(intersection: IntersectionId) -> Self {
        SignalState {
            intersection,
            phase: Phase::GrGr,
            elapsed: 0.0,
        }
    }

    /// Indication shown to lanes travelling with `heading`.
    pub fn indication_for(&self, heading: Heading) -> Indication {
        self.phase.indication(heading.arrival_side())
    }

    pub fn can_switch(&self) -> bool {
        !self.phase.is_yellow() && self.elapsed >= MIN_GREEN
    }
}

/// One step of the phase machine. Illegal switch requests (during yellow or
/// before the minimum green) are dropped.
pub fn advance_phase(sig: SignalState, action: SignalAction, dt: f64) -> SignalState {
    debug_assert!(dt > 0.0);
    let mut next = sig;
    if sig.phase.is_yellow() {
        if sig.elapsed + dt >= YELLOW_DURATION {
            next.phase = sig.phase.next();
            next.elapsed = 0.0;
        } else {
            next.elapsed += dt;
        }
    } else if action == SignalAction::Switch && sig.elapsed >= MIN_GREEN {
        next.phase = sig.phase.next();
        next.elapsed = 0.0;
    } else {
        next.elapsed += dt;
    }
    next
}

/// Fixed green durations for the two axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StaticSchedule {
    pub ns_green: f64,
    pub ew_green: f64,
}

impl Default for StaticSchedule {
    fn default() -> Self {
        StaticSchedule {
            ns_green: 30.0,
            ew_green: 30.0,
        }
    }
}

pub fn static_controller(sig: &SignalState, schedule: &StaticSchedule) -> SignalAction {
    let green = match sig.phase {
        Phase::GrGr => schedule.ns_green,
        Phase::RGrG => schedule.ew_green,
        _ => return SignalAction::Hold,
    };
    if sig.elapsed >= green {
        SignalAction::Switch
    } else {
        SignalAction::Hold
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActuatedConfig {
    pub min_green: f64,
    pub max_green: f64,
    /// Arrival-time headway (s) that counts as a sufficient gap.
    pub gap_threshold: f64,
    /// Queue length (m) on the red approaches above which the green is cut
    /// in favour of the more jammed direction. `None` disables the rule.
    pub queue_threshold: Option<f64>,
}

impl Default for ActuatedConfig {
    fn default() -> Self {
        ActuatedConfig {
            min_green: MIN_GREEN,
            max_green: 90.0,
            gap_threshold: 3.0,
            queue_threshold: None,
        }
    }
}

impl ActuatedConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if !(self.min_green > 0.0 && self.min_green <= self.max_green) {
            return Err(crate::Error::config(
                "controller.actuated.min_green",
                "need 0 < min_green <= max_green",
            ));
        }
        if !(self.gap_threshold > 0.0) {
            return Err(crate::Error::config(
                "controller.actuated.gap_threshold",
                "must be positive",
            ));
        }
        if let Some(q) = self.queue_threshold {
            if !(q > 0.0) {
                return Err(crate::Error::config(
                    "controller.actuated.queue_threshold",
                    "must be positive",
                ));
            }
        }
        Ok(())
    }
}

/// Gap-out / max-out actuated control, optionally with the queue threshold
/// rule of the intersection-level algorithm.
///
/// `served` are the observations of the lanes currently shown green, `waiting`
/// those of the lanes currently shown red.
pub fn actuated_controller(
    sig: &SignalState,
    served: &[LaneObservation],
    waiting: &[LaneObservation],
    cfg: &ActuatedConfig,
) -> SignalAction {
    if sig.phase.is_yellow() || sig.elapsed < cfg.min_green {
        return SignalAction::Hold;
    }
    if sig.elapsed >= cfg.max_green {
        return SignalAction::Switch;
    }
    if let Some(threshold) = cfg.queue_threshold {
        let red_queue = waiting.iter().map(|o| o.queue_length).fold(0.0, f64::max);
        let green_queue = served.iter().map(|o| o.queue_length).fold(0.0, f64::max);
        if red_queue >= threshold && red_queue > green_queue {
            return SignalAction::Switch;
        }
    }
    let stream = served
        .iter()
        .any(|o| o.lead_time.is_some_and(|t| t < cfg.gap_threshold));
    if stream {
        SignalAction::Hold
    } else {
        SignalAction::Switch
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(phase: Phase, elapsed: f64) -> SignalState {
        SignalState {
            intersection: 0,
            phase,
            elapsed,
        }
    }

    fn lane_obs(lead_time: Option<f64>, queue_length: f64) -> LaneObservation {
        LaneObservation {
            lane: 0,
            halting: 0,
            speed_lag: 0.0,
            queue_length,
            queue_wait: 0.0,
            lead_time,
        }
    }

    #[test]
    fn green_to_yellow_after_minimum() {
        let s = advance_phase(state(Phase::GrGr, 5.0), SignalAction::Switch, 1.0);
        assert_eq!((s.phase, s.elapsed), (Phase::Yryr, 0.0));
    }

    #[test]
    fn early_switch_is_dropped() {
        let s = advance_phase(state(Phase::GrGr, 1.0), SignalAction::Switch, 1.0);
        assert_eq!((s.phase, s.elapsed), (Phase::GrGr, 2.0));
    }

    #[test]
    fn yellow_expires() {
        let s = advance_phase(state(Phase::Yryr, 2.0), SignalAction::Hold, 1.0);
        assert_eq!((s.phase, s.elapsed), (Phase::RGrG, 0.0));
        let s = advance_phase(state(Phase::Ryry, 1.0), SignalAction::Switch, 1.0);
        assert_eq!((s.phase, s.elapsed), (Phase::GrGr, 0.0));
    }

    #[test]
    fn yellow_ignores_switch() {
        let s = advance_phase(state(Phase::Yryr, 0.0), SignalAction::Switch, 1.0);
        assert_eq!((s.phase, s.elapsed), (Phase::Yryr, 1.0));
    }

    #[test]
    fn indications() {
        assert_eq!(Phase::GrGr.indication(0), Indication::Green);
        assert_eq!(Phase::GrGr.indication(1), Indication::Red);
        assert_eq!(Phase::RGrG.indication(3), Indication::Green);
        assert_eq!(Phase::Ryry.indication(1), Indication::Yellow);
        let s = state(Phase::GrGr, 0.0);
        assert_eq!(s.indication_for(Heading::South), Indication::Green);
        assert_eq!(s.indication_for(Heading::East), Indication::Red);
    }

    #[test]
    fn static_thresholds() {
        let sched = StaticSchedule {
            ns_green: 30.0,
            ew_green: 30.0,
        };
        assert_eq!(
            static_controller(&state(Phase::GrGr, 30.0), &sched),
            SignalAction::Switch
        );
        assert_eq!(
            static_controller(&state(Phase::GrGr, 29.0), &sched),
            SignalAction::Hold
        );
        assert_eq!(
            static_controller(&state(Phase::Yryr, 50.0), &sched),
            SignalAction::Hold
        );
    }

    /// Cycle length measured by stepping the machine, compared with the dwell
    /// counted from the rules: a green is displayed for elapsed = 0..=g (the
    /// switch is requested once the shown elapsed reaches g) and a yellow for
    /// elapsed = 0, 1.
    #[test]
    fn static_cycle_duration() {
        for g in [3.0, 10.0, 30.0] {
            let sched = StaticSchedule {
                ns_green: g,
                ew_green: g,
            };
            let mut s = SignalState::new(0);
            let mut entries = Vec::new();
            for t in 0..2000u32 {
                let a = static_controller(&s, &sched);
                let next = advance_phase(s, a, 1.0);
                if next.phase == Phase::GrGr && s.phase != Phase::GrGr {
                    entries.push(t);
                }
                s = next;
            }
            let period = entries[2] - entries[1];
            let green_dwell = g as u32 + 1;
            let yellow_dwell = YELLOW_DURATION as u32;
            assert_eq!(period, 2 * green_dwell + 2 * yellow_dwell);
        }
    }

    #[test]
    fn actuated_holds_on_stream() {
        let cfg = ActuatedConfig::default();
        let s = state(Phase::GrGr, 10.0);
        let a = actuated_controller(&s, &[lane_obs(Some(1.0), 0.0)], &[], &cfg);
        assert_eq!(a, SignalAction::Hold);
    }

    #[test]
    fn actuated_gaps_out() {
        let cfg = ActuatedConfig::default();
        let s = state(Phase::GrGr, 10.0);
        let a = actuated_controller(
            &s,
            &[lane_obs(None, 0.0), lane_obs(Some(7.0), 0.0)],
            &[],
            &cfg,
        );
        assert_eq!(a, SignalAction::Switch);
    }

    #[test]
    fn actuated_maxes_out() {
        let cfg = ActuatedConfig::default();
        let s = state(Phase::RGrG, cfg.max_green);
        let a = actuated_controller(&s, &[lane_obs(Some(0.5), 0.0)], &[], &cfg);
        assert_eq!(a, SignalAction::Switch);
    }

    #[test]
    fn actuated_respects_min_green() {
        let cfg = ActuatedConfig::default();
        let a = actuated_controller(&state(Phase::GrGr, 1.0), &[], &[], &cfg);
        assert_eq!(a, SignalAction::Hold);
    }

    #[test]
    fn queue_threshold_cuts_green_for_jammed_direction() {
        let cfg = ActuatedConfig {
            queue_threshold: Some(20.0),
            ..Default::default()
        };
        let s = state(Phase::GrGr, 10.0);
        let served = [lane_obs(Some(1.0), 5.0)];
        let a = actuated_controller(&s, &served, &[lane_obs(None, 30.0)], &cfg);
        assert_eq!(a, SignalAction::Switch);
        let a = actuated_controller(&s, &served, &[lane_obs(None, 10.0)], &cfg);
        assert_eq!(a, SignalAction::Hold);
    }
}
