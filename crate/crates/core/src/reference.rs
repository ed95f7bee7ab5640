//! Online reference signals.
//!
//! A [`ReferenceSignal`] is a sequence of constant and smoothstep segments
//! that can be queried for `y_d` and its derivatives at any time. The
//! smoothstep `v₀ + (v_T − v₀)(3τ² − 2τ³)` joins segments with continuous
//! value and rate; its second derivative jumps at the joints.

use thiserror::Error;

use crate::plant::norm2;

/// Derivatives beyond this order are identically zero for every segment kind.
const MAX_ORDER: usize = 3;

/// Lower floor reported by [`reference_bound`] for an identically zero signal.
pub const MIN_REFERENCE_BOUND: f64 = 1e-12;

const CONTINUITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReferenceError {
    #[error("smoothstep duration must be positive, got {0}")]
    InvalidDuration(f64),
    #[error("wheel radius must be positive, got {0}")]
    InvalidRadius(f64),
    #[error("segment start times must be strictly increasing (segment {index} starts at {start})")]
    UnorderedSegments { index: usize, start: f64 },
    #[error("reference is discontinuous at t = {time} ({what} jumps by {jump:e})")]
    Discontinuous { time: f64, what: &'static str, jump: f64 },
    #[error("reference needs at least one segment")]
    Empty,
    #[error("non-finite reference parameter")]
    NonFinite,
    #[error("query at t = {requested} looks ahead of the current time {now}")]
    Lookahead { requested: f64, now: f64 },
}

/// Value, rate and acceleration of a smoothstep from `v0` to `v_t` over
/// `duration`, queried at local time `t`. Clamped outside `[0, duration]`.
pub fn smoothstep_eval(v0: f64, v_t: f64, duration: f64, t: f64) -> Result<(f64, f64, f64), ReferenceError> {
    if !(duration > 0.0) {
        return Err(ReferenceError::InvalidDuration(duration));
    }
    let d = smoothstep_derivatives(v0, v_t, duration, t);
    Ok((d[0], d[1], d[2]))
}

fn smoothstep_derivatives(v0: f64, v_t: f64, duration: f64, t: f64) -> [f64; MAX_ORDER + 1] {
    if t < 0.0 {
        return [v0, 0.0, 0.0, 0.0];
    }
    if t > duration {
        return [v_t, 0.0, 0.0, 0.0];
    }
    let span = v_t - v0;
    let tau = t / duration;
    [
        v0 + span * tau * tau * (3.0 - 2.0 * tau),
        span * 6.0 * tau * (1.0 - tau) / duration,
        span * (6.0 - 12.0 * tau) / (duration * duration),
        -12.0 * span / (duration * duration * duration),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SegmentKind {
    Constant { value: f64 },
    Smoothstep { from: f64, to: f64, duration: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub kind: SegmentKind,
}

impl Segment {
    fn derivatives(&self, t: f64) -> [f64; MAX_ORDER + 1] {
        match self.kind {
            SegmentKind::Constant { value } => [value, 0.0, 0.0, 0.0],
            SegmentKind::Smoothstep { from, to, duration } => {
                smoothstep_derivatives(from, to, duration, t - self.start)
            }
        }
    }

    fn initial_value(&self) -> f64 {
        match self.kind {
            SegmentKind::Constant { value } => value,
            SegmentKind::Smoothstep { from, .. } => from,
        }
    }
}

/// A transition of the reference to `target`, starting at `start` and
/// lasting `duration` seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub start: f64,
    pub target: f64,
    pub duration: f64,
}

/// `ξ_d = [y_d, ẏ_d, …, y_d^(n−1)]` and `y_d^(n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesiredState {
    pub xi_d: Vec<f64>,
    pub top_derivative: f64,
}

impl DesiredState {
    pub fn zero(n: usize) -> Self {
        Self {
            xi_d: vec![0.0; n],
            top_derivative: 0.0,
        }
    }
}

/// Piecewise reference assembled from constant and smoothstep segments.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSignal {
    segments: Vec<Segment>,
    n_derivatives: usize,
    gain: f64,
}

impl ReferenceSignal {
    pub fn new(segments: Vec<Segment>, n_derivatives: usize) -> Result<Self, ReferenceError> {
        if segments.is_empty() {
            return Err(ReferenceError::Empty);
        }
        for (i, seg) in segments.iter().enumerate() {
            let finite = match seg.kind {
                SegmentKind::Constant { value } => value.is_finite(),
                SegmentKind::Smoothstep { from, to, duration } => {
                    if !(duration > 0.0) {
                        return Err(ReferenceError::InvalidDuration(duration));
                    }
                    from.is_finite() && to.is_finite() && duration.is_finite()
                }
            };
            if !finite || !seg.start.is_finite() {
                return Err(ReferenceError::NonFinite);
            }
            if i > 0 && seg.start <= segments[i - 1].start {
                return Err(ReferenceError::UnorderedSegments {
                    index: i,
                    start: seg.start,
                });
            }
        }
        for pair in segments.windows(2) {
            let t = pair[1].start;
            let left = pair[0].derivatives(t);
            let right = pair[1].derivatives(t);
            for (order, what) in [(0, "value"), (1, "rate")] {
                let jump = (left[order] - right[order]).abs();
                let scale = left[order].abs().max(right[order].abs()).max(1.0);
                if jump > CONTINUITY_TOL * scale {
                    return Err(ReferenceError::Discontinuous { time: t, what, jump });
                }
            }
        }
        Ok(Self {
            segments,
            n_derivatives,
            gain: 1.0,
        })
    }

    pub fn constant(value: f64, n_derivatives: usize) -> Result<Self, ReferenceError> {
        Self::new(
            vec![Segment {
                start: 0.0,
                kind: SegmentKind::Constant { value },
            }],
            n_derivatives,
        )
    }

    /// Holds `initial` from t = 0 and moves through each transition with a
    /// smoothstep, holding the target in between.
    pub fn from_transitions(
        initial: f64,
        transitions: &[Transition],
        n_derivatives: usize,
    ) -> Result<Self, ReferenceError> {
        let mut segments = Vec::with_capacity(transitions.len() + 1);
        let mut level = initial;
        let first_start = transitions.first().map_or(1.0, |t| t.start);
        if first_start > 0.0 {
            segments.push(Segment {
                start: 0.0,
                kind: SegmentKind::Constant { value: initial },
            });
        }
        for tr in transitions {
            segments.push(Segment {
                start: tr.start,
                kind: SegmentKind::Smoothstep {
                    from: level,
                    to: tr.target,
                    duration: tr.duration,
                },
            });
            level = tr.target;
        }
        Self::new(segments, n_derivatives)
    }

    /// Multiplies every output (value and derivatives) by `gain`.
    pub fn scaled(mut self, gain: f64) -> Self {
        self.gain *= gain;
        self
    }

    pub fn n_derivatives(&self) -> usize {
        self.n_derivatives
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    /// Time after which the signal is constant.
    pub fn settle_time(&self) -> f64 {
        let last = self.segments[self.segments.len() - 1];
        match last.kind {
            SegmentKind::Constant { .. } => last.start,
            SegmentKind::Smoothstep { duration, .. } => last.start + duration,
        }
    }

    /// `y_d^(k)(t)` for `k = 0..=order`.
    pub fn derivatives(&self, t: f64, order: usize) -> Vec<f64> {
        let first = &self.segments[0];
        let raw = if t < first.start {
            [first.initial_value(), 0.0, 0.0, 0.0]
        } else {
            let idx = self.segments.partition_point(|s| s.start <= t) - 1;
            self.segments[idx].derivatives(t)
        };
        (0..=order)
            .map(|k| if k <= MAX_ORDER { raw[k] * self.gain } else { 0.0 })
            .collect()
    }

    /// Desired external state and top derivative at time `t`.
    pub fn sample(&self, t: f64) -> DesiredState {
        let n = self.n_derivatives;
        let mut d = self.derivatives(t, n);
        let top = d.pop().unwrap_or(0.0);
        DesiredState {
            xi_d: d,
            top_derivative: top,
        }
    }
}

/// Reference access that refuses queries beyond the current time plus one
/// step, mimicking a trajectory handed over at run-time only.
#[derive(Debug, Clone)]
pub struct OnlineReference<'a> {
    signal: &'a ReferenceSignal,
    now: f64,
    max_lead: f64,
}

impl<'a> OnlineReference<'a> {
    pub fn new(signal: &'a ReferenceSignal, step: f64) -> Self {
        Self {
            signal,
            now: 0.0,
            max_lead: step * (1.0 + 1e-9),
        }
    }

    pub fn advance_to(&mut self, t: f64) {
        self.now = self.now.max(t);
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn sample(&self, t: f64) -> Result<DesiredState, ReferenceError> {
        if t > self.now + self.max_lead {
            return Err(ReferenceError::Lookahead {
                requested: t,
                now: self.now,
            });
        }
        Ok(self.signal.sample(t))
    }
}

/// Converts a vehicle speed triple (m/s, m/s², m/s³) into the wheel-speed
/// reference `y_d = v_x,d / r_r` with its first two derivatives.
pub fn wheel_reference(v_ref: (f64, f64, f64), r_r: f64) -> Result<DesiredState, ReferenceError> {
    if !(r_r > 0.0) {
        return Err(ReferenceError::InvalidRadius(r_r));
    }
    Ok(DesiredState {
        xi_d: vec![v_ref.0 / r_r, v_ref.1 / r_r],
        top_derivative: v_ref.2 / r_r,
    })
}

/// Strict bound `r_d` of `‖ξ_d(t)‖₂` over `[0, horizon]`: the maximum on a
/// 10⁴-point grid inflated by `1 + margin`.
pub fn reference_bound(reference: &ReferenceSignal, horizon: f64, margin: f64) -> f64 {
    const GRID: usize = 10_000;
    let peak = (0..=GRID)
        .map(|i| horizon * i as f64 / GRID as f64)
        .map(|t| norm2(&reference.sample(t).xi_d))
        .fold(0.0, f64::max);
    ((1.0 + margin) * peak).max(MIN_REFERENCE_BOUND)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoothstep_midpoint() {
        let (v, r, _) = smoothstep_eval(90.0, 120.0, 15.0, 7.5).unwrap();
        assert!((v - 105.0).abs() < 1e-12);
        assert!((r - 1.5 * 30.0 / 15.0).abs() < 1e-12);
    }

    #[test]
    fn smoothstep_endpoints() {
        let span = 30.0;
        let dur = 15.0;
        let (v, r, a) = smoothstep_eval(90.0, 120.0, dur, 0.0).unwrap();
        assert_eq!((v, r), (90.0, 0.0));
        assert!((a - 6.0 * span / (dur * dur)).abs() < 1e-12);
        let (v, r, a) = smoothstep_eval(90.0, 120.0, dur, dur).unwrap();
        assert!((v - 120.0).abs() < 1e-12 && r.abs() < 1e-12);
        assert!((a + 6.0 * span / (dur * dur)).abs() < 1e-12);
        assert_eq!(smoothstep_eval(90.0, 120.0, dur, 20.0).unwrap(), (120.0, 0.0, 0.0));
        assert_eq!(smoothstep_eval(90.0, 120.0, dur, -1.0).unwrap(), (90.0, 0.0, 0.0));
    }

    #[test]
    fn smoothstep_rejects_bad_duration() {
        assert_eq!(
            smoothstep_eval(0.0, 1.0, 0.0, 0.5),
            Err(ReferenceError::InvalidDuration(0.0))
        );
    }

    #[test]
    fn constant_sample() {
        let r = ReferenceSignal::constant(3.0, 2).unwrap();
        let d = r.sample(5.0);
        assert_eq!(d.xi_d, vec![3.0, 0.0]);
        assert_eq!(d.top_derivative, 0.0);
    }

    #[test]
    fn transition_midpoint_and_clamp() {
        let tr = [Transition {
            start: 0.0,
            target: 120.0,
            duration: 15.0,
        }];
        let r = ReferenceSignal::from_transitions(90.0, &tr, 2).unwrap();
        let d = r.sample(7.5);
        assert!((d.xi_d[0] - 105.0).abs() < 1e-12);
        assert!((d.xi_d[1] - 3.0).abs() < 1e-12);
        let late = r.sample(100.0);
        assert_eq!(late.xi_d, vec![120.0, 0.0]);
        assert_eq!(late.top_derivative, 0.0);
        assert_eq!(r.sample(1e6), late);
    }

    #[test]
    fn discontinuous_segments_rejected() {
        let segs = vec![
            Segment {
                start: 0.0,
                kind: SegmentKind::Constant { value: 1.0 },
            },
            Segment {
                start: 1.0,
                kind: SegmentKind::Constant { value: 2.0 },
            },
        ];
        assert!(matches!(
            ReferenceSignal::new(segs, 2),
            Err(ReferenceError::Discontinuous { what: "value", .. })
        ));
        // Overlapping transitions leave a jump in the value.
        let tr = [
            Transition {
                start: 0.0,
                target: 1.0,
                duration: 2.0,
            },
            Transition {
                start: 1.0,
                target: 0.0,
                duration: 2.0,
            },
        ];
        assert!(ReferenceSignal::from_transitions(0.0, &tr, 2).is_err());
    }

    #[test]
    fn unordered_segments_rejected() {
        let segs = vec![
            Segment {
                start: 1.0,
                kind: SegmentKind::Constant { value: 1.0 },
            },
            Segment {
                start: 1.0,
                kind: SegmentKind::Constant { value: 1.0 },
            },
        ];
        assert!(matches!(
            ReferenceSignal::new(segs, 1),
            Err(ReferenceError::UnorderedSegments { .. })
        ));
    }

    #[test]
    fn wheel_reference_examples() {
        let d = wheel_reference((120.0 / 3.6, 0.0, 0.0), 0.33).unwrap();
        assert!((d.xi_d[0] - 101.010101).abs() < 1e-5);
        assert_eq!(wheel_reference((0.0, 0.0, 0.0), 0.33).unwrap(), DesiredState::zero(2));
        let d = wheel_reference((2.0, 0.5, -0.1), 1.0).unwrap();
        assert_eq!(d.xi_d, vec![2.0, 0.5]);
        assert_eq!(d.top_derivative, -0.1);
        assert!(wheel_reference((1.0, 0.0, 0.0), 0.0).is_err());
    }

    #[test]
    fn bound_examples() {
        let zero = ReferenceSignal::constant(0.0, 2).unwrap();
        assert_eq!(reference_bound(&zero, 10.0, 0.05), MIN_REFERENCE_BOUND);
        let c = ReferenceSignal::constant(-4.0, 2).unwrap();
        assert!((reference_bound(&c, 10.0, 0.05) - 4.2).abs() < 1e-12);

        let tr = [Transition {
            start: 0.0,
            target: 120.0 / 3.6,
            duration: 15.0,
        }];
        let wheel = ReferenceSignal::from_transitions(90.0 / 3.6, &tr, 2)
            .unwrap()
            .scaled(1.0 / 0.33);
        let r_d = reference_bound(&wheel, 30.0, 0.05);
        assert!(r_d > 101.01);
        for i in 0..=300 {
            assert!(norm2(&wheel.sample(i as f64 * 0.1).xi_d) < r_d);
        }
    }

    #[test]
    fn online_reference_forbids_lookahead() {
        let r = ReferenceSignal::constant(1.0, 2).unwrap();
        let mut online = OnlineReference::new(&r, 0.01);
        assert!(online.sample(0.01).is_ok());
        assert!(matches!(online.sample(0.02), Err(ReferenceError::Lookahead { .. })));
        online.advance_to(0.01);
        assert!(online.sample(0.02).is_ok());
    }
}
