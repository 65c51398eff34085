//! Geodesics, perpendicular Jacobi fields and the Riccati quantity μ_J = J'/J on rotationally
//! symmetric product metrics, with event detection for region crossings and zeros of J.
//!
//! Geodesics are integrated in Clairaut-reduced form: for dt² + c(t)·(round), a unit-speed
//! geodesic moving in a great-circle plane satisfies ẗ = C²·c⁻¹·(shape), θ̇ = C·c⁻¹ with the
//! Clairaut constant C fixed. Perpendicular Jacobi fields decouple into scalar equations
//! J'' + K(s)J = 0, one per channel. Each channel runs either in projective coordinates
//! (J, J') with a running log-scale or in Riccati form (μ, log|J|), switching when |μ| leaves
//! a window so that blow-ups of μ are handled in (J, J').

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::LevelScale;
use crate::profiles::{Interval, RadialSample};

/// Radial data along t for the flow.
pub trait FlowGeometry: Send + Sync + fmt::Debug {
    fn radial(&self, t: f64) -> RadialSample;
    fn domain(&self) -> Interval {
        Interval::REAL
    }
    /// Dimension of the levels (1 for surfaces).
    fn level_dim(&self) -> usize {
        1
    }
}

/// Flow geometry of a family with round levels.
#[derive(Clone, Debug)]
pub struct ScaleGeometry {
    pub scale: Arc<dyn LevelScale>,
    pub level_dim: usize,
}

impl ScaleGeometry {
    pub fn surface(scale: Arc<dyn LevelScale>) -> Self {
        Self {
            scale,
            level_dim: 1,
        }
    }
}

impl FlowGeometry for ScaleGeometry {
    fn radial(&self, t: f64) -> RadialSample {
        self.scale.sample(t)
    }
    fn domain(&self) -> Interval {
        self.scale.domain()
    }
    fn level_dim(&self) -> usize {
        self.level_dim
    }
}

/// A pseudo-geometry whose radial geodesic t = s sees curvature K(s); used to solve scalar
/// equations u'' + K(s)u = 0 with the same integrator.
#[derive(Clone)]
pub struct PrescribedCurvature {
    pub k: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl PrescribedCurvature {
    pub fn new(k: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self { k: Arc::new(k) }
    }
}

impl fmt::Debug for PrescribedCurvature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("PrescribedCurvature")
    }
}

impl FlowGeometry for PrescribedCurvature {
    fn radial(&self, t: f64) -> RadialSample {
        let k = (self.k)(t);
        RadialSample {
            inv_c: 0.0,
            shape: 0.0,
            k_radial: k,
            k_level: k,
        }
    }
}

/// Initial unit vector: position (t, θ), radial speed v = ṫ and Clairaut constant C = c·θ̇.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GeodesicStart {
    pub t: f64,
    pub theta: f64,
    pub v: f64,
    pub c: f64,
}

impl GeodesicStart {
    /// Unit vector at angle `angle` from ∂_t (positive towards +θ).
    pub fn from_angle(geo: &dyn FlowGeometry, t: f64, theta: f64, angle: f64) -> Self {
        let w = 1.0 / geo.radial(t).inv_c.sqrt();
        let (s, c) = angle.sin_cos();
        Self {
            t,
            theta,
            v: c,
            c: w * s,
        }
    }
}

/// Which perpendicular direction a Jacobi channel follows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Channel {
    /// Perpendicular inside the plane of motion (the only one on surfaces); K = k_radial.
    InPlane,
    /// Perpendicular to the plane of motion (n ≥ 3); K = (1−ṫ²)k_level + ṫ²k_radial.
    OutOfPlane,
}

/// Initial data of a channel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum ChannelInit {
    /// J(0), J'(0)
    Field { j: f64, jp: f64 },
    /// μ(0) (J(0) = 1); +∞ means J(0) = 0, J'(0) = 1.
    Mu(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Projective,
    Riccati,
}

#[derive(Clone, Copy, Debug)]
struct ChannelState {
    mode: Mode,
    /// projective: J mantissa; Riccati: μ
    a: f64,
    /// projective: J' mantissa; Riccati: log|J|
    b: f64,
    /// projective: log of the common scale
    log_scale: f64,
    /// Riccati: sign of J
    sign: f64,
}

impl ChannelState {
    fn new(init: ChannelInit) -> Self {
        match init {
            ChannelInit::Mu(mu) if mu.is_finite() => ChannelState {
                mode: Mode::Riccati,
                a: mu,
                b: 0.0,
                log_scale: 0.0,
                sign: 1.0,
            },
            ChannelInit::Mu(mu) => ChannelState {
                mode: Mode::Projective,
                a: 0.0,
                b: mu.signum(),
                log_scale: 0.0,
                sign: 1.0,
            },
            ChannelInit::Field { j, jp } => {
                let mut s = ChannelState {
                    mode: Mode::Projective,
                    a: j,
                    b: jp,
                    log_scale: 0.0,
                    sign: 1.0,
                };
                s.renormalize();
                s
            }
        }
    }

    fn renormalize(&mut self) {
        if self.mode == Mode::Projective {
            let n = self.a.abs().max(self.b.abs());
            if n > 0.0 && n.is_finite() && n != 1.0 {
                self.a /= n;
                self.b /= n;
                self.log_scale += n.ln();
            }
        }
    }

    fn mu(&self) -> f64 {
        match self.mode {
            Mode::Riccati => self.a,
            Mode::Projective => {
                if self.a == 0.0 {
                    if self.b >= 0.0 {
                        f64::INFINITY
                    } else {
                        f64::NEG_INFINITY
                    }
                } else {
                    self.b / self.a
                }
            }
        }
    }

    /// log|J|
    fn log_norm(&self) -> f64 {
        match self.mode {
            Mode::Riccati => self.b,
            Mode::Projective => self.log_scale + self.a.abs().ln(),
        }
    }

    fn sample(&self) -> ChannelSample {
        let (j, jp, log_scale) = match self.mode {
            Mode::Projective => (self.a, self.b, self.log_scale),
            Mode::Riccati => (self.sign, self.sign * self.a, self.b),
        };
        ChannelSample {
            j,
            jp,
            log_scale,
            mu: self.mu(),
            log_norm: self.log_norm(),
            mode: self.mode,
        }
    }
}

/// J = j·e^{log_scale}, J' = jp·e^{log_scale}.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ChannelSample {
    pub j: f64,
    pub jp: f64,
    pub log_scale: f64,
    pub mu: f64,
    pub log_norm: f64,
    pub mode: Mode,
}

impl ChannelSample {
    /// log max(|J|, |J'|)
    pub fn log_sasaki(&self) -> f64 {
        self.log_scale + self.j.abs().max(self.jp.abs()).ln()
    }
}

/// Region of the extended manifold by the collar coordinate s = |t| − b.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Region {
    /// s < −δ
    Sigma0,
    /// |s| ≤ δ
    CollarC1,
    /// δ < s ≤ ε
    CollarC2,
    /// s > ε
    FunnelD,
    /// outside the geometry's domain
    Outside,
}

impl Region {
    pub fn is_collar(&self) -> bool {
        matches!(self, Region::CollarC1 | Region::CollarC2)
    }
    pub fn label(&self) -> &'static str {
        match self {
            Region::Sigma0 => "sigma0",
            Region::CollarC1 => "collar-c1",
            Region::CollarC2 => "collar-c2",
            Region::FunnelD => "funnel-d",
            Region::Outside => "outside",
        }
    }
}

/// The decomposition Σ₀ ∪ C₊¹ ∪ C₊² ∪ D₋ around the two boundary circles |t| = b.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RegionMap {
    pub b: f64,
    pub delta: f64,
    pub eps: f64,
}

impl RegionMap {
    pub fn tag(&self, t: f64) -> Region {
        let s = t.abs() - self.b;
        if s < -self.delta {
            Region::Sigma0
        } else if s <= self.delta {
            Region::CollarC1
        } else if s <= self.eps {
            Region::CollarC2
        } else {
            Region::FunnelD
        }
    }

    /// Region entered when crossing the level `t` with radial speed `v`: the level itself is
    /// ambiguous, so the point is pushed a small fraction of the thinnest band along the motion.
    pub fn tag_crossing(&self, t: f64, v: f64) -> Region {
        let nudge = 1e-3 * self.delta.min(self.eps - self.delta);
        let sign = if t < 0.0 { -1.0 } else { 1.0 };
        self.tag(t + sign * (sign * v).signum() * nudge)
    }

    /// Boundary levels in t: ±(b−δ), ±(b+δ), ±(b+ε).
    pub fn levels(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for s in [-self.delta, self.delta, self.eps] {
            v.push(self.b + s);
            v.push(-(self.b + s));
        }
        v
    }
}

/// Integration controls.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrackOptions {
    pub horizon: f64,
    pub rtol: f64,
    pub atol: f64,
    pub h_init: f64,
    pub h_max: f64,
    /// Fixed step instead of adaptive control.
    pub fixed_step: Option<f64>,
    pub max_steps: usize,
    /// Levels in t at which the trajectory stops.
    pub stop_levels: Vec<f64>,
    pub regions: Option<RegionMap>,
    /// Arc-length values at which samples are recorded.
    pub marks: Vec<f64>,
    pub record_steps: bool,
    pub allow_riccati: bool,
    /// |μ| above which a Riccati channel switches to (J, J').
    pub riccati_exit: f64,
    /// |μ| below which a projective channel may return to Riccati form.
    pub riccati_enter: f64,
}

impl Default for TrackOptions {
    fn default() -> Self {
        Self {
            horizon: 50.0,
            rtol: 1e-10,
            atol: 1e-12,
            h_init: 1e-3,
            h_max: 0.25,
            fixed_step: None,
            max_steps: 20_000_000,
            stop_levels: Vec::new(),
            regions: None,
            marks: Vec::new(),
            record_steps: false,
            allow_riccati: true,
            riccati_exit: 1e3,
            riccati_enter: 1e2,
        }
    }
}

/// One recorded point of a track.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrackSample {
    pub s: f64,
    pub t: f64,
    pub v: f64,
    pub theta: f64,
    /// θ̇ = C/c(t)
    pub theta_dot: f64,
    pub region: Region,
    pub channels: Vec<ChannelSample>,
}

/// Channel data at a region crossing.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EventChannel {
    pub mu: f64,
    pub log_norm: f64,
    /// Minimum of μ over accepted steps since the previous event (or the start).
    pub min_mu: f64,
}

/// A crossing of one of the region levels.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegionEvent {
    pub s: f64,
    pub t: f64,
    pub v: f64,
    pub level: f64,
    pub from: Region,
    pub to: Region,
    pub channels: Vec<EventChannel>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ZeroCrossing {
    pub channel: usize,
    pub s: f64,
}

/// Radial data sampled at every accepted step inside the collar.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CollarProbe {
    pub s: f64,
    pub t: f64,
    /// d' = ṫ·sign(t)
    pub d1: f64,
    /// d'' = sign(t)·ẗ
    pub d2: f64,
    /// principal curvature of the level, outward
    pub shape: f64,
    pub region: Region,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrackEnd {
    Horizon,
    StopLevel(f64),
    DomainExit,
}

/// An integrated geodesic with its Jacobi channels.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Track {
    pub start: GeodesicStart,
    pub channels: Vec<Channel>,
    pub samples: Vec<TrackSample>,
    pub events: Vec<RegionEvent>,
    pub zeros: Vec<ZeroCrossing>,
    pub probes: Vec<CollarProbe>,
    pub end: TrackEnd,
    pub last: TrackSample,
    pub steps: usize,
    pub rejected: usize,
    /// max |ṫ² + C²/c − 1| over accepted steps
    pub max_speed_error: f64,
}

impl Track {
    pub fn length(&self) -> f64 {
        self.last.s
    }

    /// Samples of μ for one channel at recorded points.
    pub fn mu_samples(&self, channel: usize) -> Vec<(f64, f64)> {
        self.samples
            .iter()
            .map(|s| (s.s, s.channels[channel].mu))
            .collect()
    }
}

const MAXS: usize = 7;
type State = [f64; MAXS];

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

struct Engine<'a> {
    geo: &'a dyn FlowGeometry,
    c: f64,
    channels: &'a [Channel],
    len: usize,
}

impl Engine<'_> {
    fn rhs(&self, y: &State, modes: &[Mode], dy: &mut State) {
        let r = self.geo.radial(y[0]);
        let (c2inv, theta_dot) = if self.c == 0.0 {
            (0.0, 0.0)
        } else {
            (self.c * self.c * r.inv_c, self.c * r.inv_c)
        };
        dy[0] = y[1];
        dy[1] = if c2inv == 0.0 { 0.0 } else { c2inv * r.shape };
        dy[2] = theta_dot;
        let v2 = y[1] * y[1];
        for (k, ch) in self.channels.iter().enumerate() {
            let kk = match ch {
                Channel::InPlane => r.k_radial,
                Channel::OutOfPlane => c2inv * r.k_level + v2 * r.k_radial,
            };
            let (ia, ib) = (3 + 2 * k, 4 + 2 * k);
            match modes[k] {
                Mode::Projective => {
                    dy[ia] = y[ib];
                    dy[ib] = -kk * y[ia];
                }
                Mode::Riccati => {
                    dy[ia] = -kk - y[ia] * y[ia];
                    dy[ib] = y[ia];
                }
            }
        }
    }

    /// One Dormand–Prince step; returns the fifth-order solution and the error estimate.
    fn step(&self, y: &State, h: f64, modes: &[Mode]) -> (State, State) {
        let mut k = [[0.0; MAXS]; 7];
        let mut tmp = [0.0; MAXS];
        for stage in 0..7 {
            for i in 0..self.len {
                let mut acc = y[i];
                for (j, a) in A[stage].iter().enumerate().take(stage) {
                    acc += h * a * k[j][i];
                }
                tmp[i] = acc;
            }
            let _ = C[stage];
            let mut out = [0.0; MAXS];
            self.rhs(&tmp, modes, &mut out);
            k[stage] = out;
        }
        // Stage 7 is evaluated at the fifth-order solution (tmp after the last stage).
        let y5 = {
            let mut y5 = [0.0; MAXS];
            for i in 0..self.len {
                let mut acc = y[i];
                for (j, a) in A[6].iter().enumerate() {
                    acc += h * a * k[j][i];
                }
                y5[i] = acc;
            }
            y5
        };
        let mut err = [0.0; MAXS];
        for i in 0..self.len {
            let mut acc = 0.0;
            for (j, e) in E.iter().enumerate() {
                acc += e * k[j][i];
            }
            err[i] = h * acc;
        }
        (y5, err)
    }
}

fn error_norm(len: usize, y0: &State, y1: &State, err: &State, rtol: f64, atol: f64) -> f64 {
    let mut m: f64 = 0.0;
    for i in 0..len {
        let sc = atol + rtol * y0[i].abs().max(y1[i].abs());
        let r = (err[i] / sc).abs();
        if r.is_nan() {
            return f64::INFINITY;
        }
        m = m.max(r);
    }
    m
}

/// Integrate a geodesic with optional Jacobi channels.
pub fn integrate_track(
    geo: &dyn FlowGeometry,
    start: GeodesicStart,
    channels: &[(Channel, ChannelInit)],
    opts: &TrackOptions,
) -> Result<Track> {
    if channels.len() > 2 {
        return Err(Error::ParameterDomain("at most two Jacobi channels".into()));
    }
    if channels.iter().any(|(c, _)| *c == Channel::OutOfPlane) && geo.level_dim() < 2 {
        return Err(Error::ParameterDomain(
            "out-of-plane Jacobi fields need levels of dimension ≥ 2".into(),
        ));
    }
    if !(opts.horizon > 0.0) || !(opts.rtol > 0.0) || !(opts.atol > 0.0) {
        return Err(Error::ParameterDomain(
            "horizon and tolerances must be positive".into(),
        ));
    }
    let kinds: Vec<Channel> = channels.iter().map(|c| c.0).collect();
    let eng = Engine {
        geo,
        c: start.c,
        channels: &kinds,
        len: 3 + 2 * channels.len(),
    };
    let domain = geo.domain();
    let mut states: Vec<ChannelState> = channels.iter().map(|c| ChannelState::new(c.1)).collect();
    let mut y: State = [0.0; MAXS];
    y[0] = start.t;
    y[1] = start.v;
    y[2] = start.theta;
    let load = |y: &mut State, st: &[ChannelState]| {
        for (k, s) in st.iter().enumerate() {
            y[3 + 2 * k] = s.a;
            y[4 + 2 * k] = s.b;
        }
    };
    load(&mut y, &states);

    let mut levels: Vec<(f64, bool)> = Vec::new();
    if let Some(rm) = &opts.regions {
        levels.extend(rm.levels().into_iter().map(|l| (l, false)));
    }
    levels.extend(opts.stop_levels.iter().map(|&l| (l, true)));
    for l in [domain.lo, domain.hi] {
        if l.is_finite() {
            levels.push((l, true));
        }
    }
    let floor = {
        let mut ls: Vec<f64> = levels.iter().map(|l| l.0).collect();
        ls.sort_by(f64::total_cmp);
        let gap = ls
            .windows(2)
            .map(|w| w[1] - w[0])
            .filter(|g| *g > 0.0)
            .fold(f64::INFINITY, f64::min);
        if gap.is_finite() {
            (gap / 4.0).min(opts.h_max)
        } else {
            opts.h_max
        }
    };
    let mut marks: Vec<f64> = opts
        .marks
        .iter()
        .copied()
        .filter(|m| *m > 0.0 && *m <= opts.horizon)
        .collect();
    marks.sort_by(f64::total_cmp);
    marks.dedup();
    let mut next_mark = 0usize;

    let tag = |t: f64| -> Region {
        if !domain.contains(t) {
            Region::Outside
        } else {
            opts.regions.as_ref().map_or(Region::Sigma0, |rm| rm.tag(t))
        }
    };
    let make_sample = |s: f64, y: &State, st: &[ChannelState]| -> TrackSample {
        let r = geo.radial(y[0]);
        TrackSample {
            s,
            t: y[0],
            v: y[1],
            theta: y[2],
            theta_dot: if start.c == 0.0 {
                0.0
            } else {
                start.c * r.inv_c
            },
            region: tag(y[0]),
            channels: st.iter().map(|c| c.sample()).collect(),
        }
    };

    let mut s = 0.0;
    let mut h = opts.fixed_step.unwrap_or(opts.h_init).min(opts.h_max);
    let mut samples = vec![make_sample(0.0, &y, &states)];
    let mut events = Vec::new();
    let mut zeros = Vec::new();
    let mut probes = Vec::new();
    let mut region = tag(y[0]);
    let mut min_mu: Vec<f64> = states.iter().map(|c| c.mu()).collect();
    let mut steps = 0usize;
    let mut rejected = 0usize;
    let mut max_speed_error: f64 = 0.0;
    let end;

    loop {
        let remaining = opts.horizon - s;
        if remaining <= 1e-13 * opts.horizon.max(1.0) {
            end = TrackEnd::Horizon;
            break;
        }
        if steps >= opts.max_steps {
            return Err(Error::Integration {
                s,
                reason: format!("step limit {} reached", opts.max_steps),
            });
        }
        let modes: Vec<Mode> = states.iter().map(|c| c.mode).collect();
        let mut cap = remaining.min(opts.h_max);
        if next_mark < marks.len() {
            cap = cap.min(marks[next_mark] - s);
        }
        let dist = levels
            .iter()
            .map(|l| (y[0] - l.0).abs())
            .fold(f64::INFINITY, f64::min);
        cap = cap.min(dist.max(floor));
        let h_try = h.min(cap);
        let (y_new, err) = eng.step(&y, h_try, &modes);
        let h_next;
        if opts.fixed_step.is_none() {
            let en = error_norm(eng.len, &y, &y_new, &err, opts.rtol, opts.atol);
            if !(en <= 1.0) {
                rejected += 1;
                let f = if en.is_finite() {
                    (0.9 * en.powf(-0.2)).max(0.2)
                } else {
                    0.1
                };
                h = h_try * f;
                if h < 1e-15 * s.abs().max(1.0) {
                    return Err(Error::Integration {
                        s,
                        reason: "step size underflow".into(),
                    });
                }
                continue;
            }
            let f = if en == 0.0 {
                5.0
            } else {
                (0.9 * en.powf(-0.2)).clamp(0.2, 5.0)
            };
            h_next = h_try * f;
        } else {
            h_next = opts.fixed_step.unwrap();
            if y_new[..eng.len].iter().any(|x| !x.is_finite()) {
                return Err(Error::Integration {
                    s,
                    reason: "non-finite state with fixed step".into(),
                });
            }
        }
        steps += 1;

        // Earliest level crossing within the step.
        let mut event: Option<(f64, f64, bool)> = None;
        for &(l, stop) in &levels {
            let f0 = y[0] - l;
            let f1 = y_new[0] - l;
            if f0.abs() <= 1e-14 * l.abs().max(1.0) {
                continue;
            }
            if f0 * f1 <= 0.0 {
                let (mut lo, mut hi) = (0.0, h_try);
                for _ in 0..200 {
                    if hi - lo <= 1e-15 * (s + hi).abs().max(1.0) {
                        break;
                    }
                    let mid = 0.5 * (lo + hi);
                    let (ym, _) = eng.step(&y, mid, &modes);
                    if (ym[0] - l) * f0 > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                if event.map_or(true, |e| hi < e.0) {
                    event = Some((hi, l, stop));
                }
            }
        }
        let (h_acc, mut y_acc) = match event {
            Some((he, _, _)) if he < h_try => (he, eng.step(&y, he, &modes).0),
            _ => (h_try, y_new),
        };

        // Zeros of projective channels inside the accepted step.
        for (k, st) in states.iter().enumerate() {
            if st.mode != Mode::Projective {
                continue;
            }
            let ia = 3 + 2 * k;
            let a0 = y[ia];
            let a1 = y_acc[ia];
            if a0 == 0.0 || a0 * a1 > 0.0 {
                continue;
            }
            let (mut lo, mut hi) = (0.0, h_acc);
            while hi - lo > 1e-12 {
                let mid = 0.5 * (lo + hi);
                let (ym, _) = eng.step(&y, mid, &modes);
                if ym[ia] * a0 > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            zeros.push(ZeroCrossing {
                channel: k,
                s: s + 0.5 * (lo + hi),
            });
            min_mu[k] = f64::NEG_INFINITY;
        }

        s += h_acc;
        // Unit-speed projection away from turning points.
        let r = geo.radial(y_acc[0]);
        let c2inv = if start.c == 0.0 {
            0.0
        } else {
            start.c * start.c * r.inv_c
        };
        let speed_err = (y_acc[1] * y_acc[1] + c2inv - 1.0).abs();
        max_speed_error = max_speed_error.max(speed_err);
        if y_acc[1].abs() > 1e-3 && c2inv <= 1.0 {
            y_acc[1] = y_acc[1].signum() * (1.0 - c2inv).sqrt();
        }
        y = y_acc;
        for (k, st) in states.iter_mut().enumerate() {
            st.a = y[3 + 2 * k];
            st.b = y[4 + 2 * k];
            st.renormalize();
            if opts.allow_riccati {
                match st.mode {
                    Mode::Riccati if st.a.abs() > opts.riccati_exit => {
                        let mu = st.a;
                        let n = mu.abs().max(1.0);
                        *st = ChannelState {
                            mode: Mode::Projective,
                            a: st.sign / n,
                            b: st.sign * mu / n,
                            log_scale: st.b + n.ln(),
                            sign: 1.0,
                        };
                    }
                    Mode::Projective
                        if st.a != 0.0 && (st.b / st.a).abs() <= opts.riccati_enter =>
                    {
                        *st = ChannelState {
                            mode: Mode::Riccati,
                            a: st.b / st.a,
                            b: st.log_scale + st.a.abs().ln(),
                            log_scale: 0.0,
                            sign: st.a.signum(),
                        };
                    }
                    _ => {}
                }
            } else if st.mode == Mode::Riccati && st.a.abs() > opts.riccati_exit {
                let mu = st.a;
                let n = mu.abs().max(1.0);
                *st = ChannelState {
                    mode: Mode::Projective,
                    a: st.sign / n,
                    b: st.sign * mu / n,
                    log_scale: st.b + n.ln(),
                    sign: 1.0,
                };
            }
            min_mu[k] = min_mu[k].min(st.mu());
        }
        load(&mut y, &states);

        let here = match (&event, &opts.regions) {
            (Some((he, l, _)), Some(rm)) if *he <= h_acc && domain.contains(y[0]) => {
                rm.tag_crossing(*l, y[1])
            }
            _ => tag(y[0]),
        };
        if here.is_collar() || region.is_collar() {
            let sign = if y[0] < 0.0 { -1.0 } else { 1.0 };
            probes.push(CollarProbe {
                s,
                t: y[0],
                d1: sign * y[1],
                d2: sign * c2inv * r.shape,
                shape: sign * r.shape,
                region: here,
            });
        }
        if let Some((he, l, stop)) = event {
            if he <= h_acc {
                let ev_channels = states
                    .iter()
                    .enumerate()
                    .map(|(k, st)| EventChannel {
                        mu: st.mu(),
                        log_norm: st.log_norm(),
                        min_mu: min_mu[k],
                    })
                    .collect();
                if !stop || opts.regions.is_some() {
                    events.push(RegionEvent {
                        s,
                        t: y[0],
                        v: y[1],
                        level: l,
                        from: region,
                        to: here,
                        channels: ev_channels,
                    });
                }
                for (k, st) in states.iter().enumerate() {
                    min_mu[k] = st.mu();
                }
                if stop {
                    end = if domain.contains(y[0]) && opts.stop_levels.contains(&l) {
                        TrackEnd::StopLevel(l)
                    } else {
                        TrackEnd::DomainExit
                    };
                    break;
                }
            }
        }
        region = here;
        if next_mark < marks.len() && (marks[next_mark] - s).abs() <= 1e-12 * s.max(1.0) {
            s = marks[next_mark];
            next_mark += 1;
            samples.push(make_sample(s, &y, &states));
        } else if opts.record_steps {
            samples.push(make_sample(s, &y, &states));
        }
        h = h_next;
    }
    let last = make_sample(s, &y, &states);
    if samples.last().map_or(true, |l| l.s != s) {
        samples.push(last.clone());
    }
    Ok(Track {
        start,
        channels: kinds,
        samples,
        events,
        zeros,
        probes,
        end,
        last,
        steps,
        rejected,
        max_speed_error,
    })
}

/// A geodesic without Jacobi channels.
pub fn integrate_geodesic(
    geo: &dyn FlowGeometry,
    start: GeodesicStart,
    opts: &TrackOptions,
) -> Result<Track> {
    integrate_track(geo, start, &[], opts)
}

/// A geodesic with one in-plane Jacobi field J(0) = j0, J'(0) = jp0, kept in (J, J') form.
pub fn integrate_jacobi(
    geo: &dyn FlowGeometry,
    start: GeodesicStart,
    j0: f64,
    jp0: f64,
    opts: &TrackOptions,
) -> Result<Track> {
    let mut o = opts.clone();
    o.allow_riccati = false;
    integrate_track(
        geo,
        start,
        &[(Channel::InPlane, ChannelInit::Field { j: j0, jp: jp0 })],
        &o,
    )
}

/// μ along a geodesic from μ(0) = mu0 in Riccati form; blow-ups to −∞ are followed in
/// (J, J') coordinates and reported as zero crossings.
pub fn riccati_mu(
    geo: &dyn FlowGeometry,
    start: GeodesicStart,
    mu0: f64,
    opts: &TrackOptions,
) -> Result<Track> {
    let mut o = opts.clone();
    o.allow_riccati = true;
    integrate_track(geo, start, &[(Channel::InPlane, ChannelInit::Mu(mu0))], &o)
}

/// u'' + K(s)u = 0 on [0, horizon] with u(0) = j0, u'(0) = jp0.
pub fn scalar_jacobi(
    k: impl Fn(f64) -> f64 + Send + Sync + 'static,
    j0: f64,
    jp0: f64,
    opts: &TrackOptions,
) -> Result<Track> {
    let geo = PrescribedCurvature::new(k);
    let start = GeodesicStart {
        t: 0.0,
        theta: 0.0,
        v: 1.0,
        c: 0.0,
    };
    integrate_jacobi(&geo, start, j0, jp0, opts)
}

/// Lower envelope u'/u for μ_J from a curvature upper bound f on a window starting at s*.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonEnvelope {
    pub s_star: f64,
    pub samples: Vec<(f64, f64)>,
    /// First s where u vanishes (the envelope carries no information beyond it).
    pub expired_at: Option<f64>,
}

impl ComparisonEnvelope {
    /// Envelope value at s by linear interpolation between samples (None past expiry).
    pub fn at(&self, s: f64) -> Option<f64> {
        if let Some(e) = self.expired_at {
            if s >= e {
                return None;
            }
        }
        let i = self.samples.partition_point(|p| p.0 < s);
        if i == 0 {
            return self.samples.first().map(|p| p.1);
        }
        if i >= self.samples.len() {
            return self.samples.last().map(|p| p.1);
        }
        let (a, b) = (self.samples[i - 1], self.samples[i]);
        let w = (s - a.0) / (b.0 - a.0);
        Some(a.1 + w * (b.1 - a.1))
    }
}

/// Solve u'' + f u = 0, u(s*) = u0, u'(s*) = u0p on [s*, s* + window] and report u'/u at the
/// requested offsets.
pub fn comparison_bound(
    f_upper: impl Fn(f64) -> f64 + Send + Sync + 'static,
    s_star: f64,
    u0: f64,
    u0p: f64,
    window: f64,
    offsets: &[f64],
) -> Result<ComparisonEnvelope> {
    let opts = TrackOptions {
        horizon: window,
        marks: offsets.to_vec(),
        allow_riccati: false,
        ..TrackOptions::default()
    };
    let track = scalar_jacobi(move |s| f_upper(s + s_star), u0, u0p, &opts)?;
    let expired_at = track.zeros.first().map(|z| z.s + s_star);
    Ok(ComparisonEnvelope {
        s_star,
        samples: track
            .samples
            .iter()
            .map(|p| (p.s + s_star, p.channels[0].mu))
            .collect(),
        expired_at,
    })
}

/// Closed-form solution of ν' = k² − ν², ν(0) = μ0 > −k: the μ lower bound on a segment where
/// K ≤ −k².
pub fn negative_curvature_envelope(k: f64, mu0: f64, s: f64) -> f64 {
    let th = (k * s).tanh();
    if mu0.is_infinite() && mu0 > 0.0 {
        return k / th;
    }
    let r = mu0 / k;
    k * (r + th) / (1.0 + r * th)
}

/// Description of the sampled region for the scans.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SampleDomain {
    /// Boundary circles at |t| = b.
    pub b: f64,
    /// Position of the closed trapped geodesic, if any.
    pub waist: Option<f64>,
    /// Largest |t| for collar/funnel starts (0 for a compact domain).
    pub outer: f64,
}

/// Mix of starting vectors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SamplerSpec {
    pub total: usize,
    pub seed: u64,
}

/// Deterministic starts: boundary fan (30%), jittered interior grid (30%), neighbourhood of
/// the trapped orbit (10%), collar/funnel starts (30%; interior otherwise).
pub fn sample_starts(
    geo: &dyn FlowGeometry,
    dom: &SampleDomain,
    spec: &SamplerSpec,
) -> Vec<GeodesicStart> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.total;
    let n_fan = n * 3 / 10;
    let n_trap = if dom.waist.is_some() { n / 10 } else { 0 };
    let n_out = if dom.outer > dom.b { n * 3 / 10 } else { 0 };
    let n_grid = n - n_fan - n_trap - n_out;
    let mut out = Vec::with_capacity(n);
    for k in 0..n_fan {
        let t = if k % 2 == 0 { dom.b } else { -dom.b };
        let angle = 2.0 * PI * (k as f64 + rng.gen::<f64>()) / n_fan as f64;
        out.push(GeodesicStart::from_angle(
            geo,
            t,
            rng.gen::<f64>() * 2.0 * PI,
            angle,
        ));
    }
    let side = (n_grid as f64).sqrt().ceil().max(1.0) as usize;
    for k in 0..n_grid {
        let (i, j) = (k / side, k % side);
        let t = -dom.b + 2.0 * dom.b * (i as f64 + rng.gen::<f64>()) / side as f64;
        let angle = 2.0 * PI * (j as f64 + rng.gen::<f64>()) / side as f64;
        out.push(GeodesicStart::from_angle(
            geo,
            t,
            rng.gen::<f64>() * 2.0 * PI,
            angle,
        ));
    }
    if let Some(w) = dom.waist {
        for k in 0..n_trap {
            let t = w + 1e-3 * (2.0 * rng.gen::<f64>() - 1.0);
            let base = if k % 2 == 0 { PI / 2.0 } else { -PI / 2.0 };
            let angle = base + 1e-3 * (2.0 * rng.gen::<f64>() - 1.0);
            out.push(GeodesicStart::from_angle(
                geo,
                t,
                rng.gen::<f64>() * 2.0 * PI,
                angle,
            ));
        }
    }
    for k in 0..n_out {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        let t = sign * (dom.b + (dom.outer - dom.b) * rng.gen::<f64>());
        let angle = 2.0 * PI * rng.gen::<f64>();
        out.push(GeodesicStart::from_angle(
            geo,
            t,
            rng.gen::<f64>() * 2.0 * PI,
            angle,
        ));
    }
    out
}

/// A Jacobi field started at J(0) = 0, J'(0) = 1 and the Eberlein basis fields, on one start.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SampleOutcome {
    pub index: usize,
    pub start: GeodesicStart,
    /// Zeros of the field with J(0) = 0 after s = 0.
    pub zeros: Vec<f64>,
    /// log max(|J|, |J'|) at the horizon for the basis fields (0,1) and (1,0).
    pub log_growth: [f64; 2],
    /// Growth rate of log max(|J|, |J'|) over the last quarter of the horizon.
    pub rate: [f64; 2],
    pub end: TrackEnd,
    pub length: f64,
    pub visits_outside_sigma0: bool,
    pub track: Option<Track>,
}

/// Integrate the basis fields (0,1), (1,0) along every start (in parallel, order preserved).
pub fn scan_samples(
    geo: &dyn FlowGeometry,
    starts: &[GeodesicStart],
    opts: &TrackOptions,
    keep_tracks: bool,
) -> Result<Vec<SampleOutcome>> {
    let h = opts.horizon;
    let mut o = opts.clone();
    o.marks.push(0.75 * h);
    o.marks.push(h);
    let ch = [
        (Channel::InPlane, ChannelInit::Field { j: 0.0, jp: 1.0 }),
        (Channel::InPlane, ChannelInit::Field { j: 1.0, jp: 0.0 }),
    ];
    starts
        .par_iter()
        .enumerate()
        .map(|(index, st)| {
            let track = integrate_track(geo, *st, &ch, &o)?;
            let q = track
                .samples
                .iter()
                .find(|p| (p.s - 0.75 * h).abs() <= 1e-9 * h)
                .cloned();
            let last = &track.last;
            let mut log_growth = [0.0; 2];
            let mut rate = [f64::NAN; 2];
            for k in 0..2 {
                log_growth[k] = last.channels[k].log_sasaki();
                if let Some(q) = &q {
                    rate[k] = (last.channels[k].log_sasaki() - q.channels[k].log_sasaki())
                        / (last.s - q.s);
                }
            }
            let visits = track.events.iter().any(|e| e.to != Region::Sigma0);
            Ok(SampleOutcome {
                index,
                start: *st,
                zeros: track
                    .zeros
                    .iter()
                    .filter(|z| z.channel == 0)
                    .map(|z| z.s)
                    .collect(),
                log_growth,
                rate,
                end: track.end,
                length: track.length(),
                visits_outside_sigma0: visits || track.start_region_outside(),
                track: if keep_tracks { Some(track) } else { None },
            })
        })
        .collect()
}

impl Track {
    fn start_region_outside(&self) -> bool {
        self.samples
            .first()
            .map_or(false, |s| s.region != Region::Sigma0)
    }
}

/// Outcome of the search for conjugate points.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConjugateReport {
    pub samples: usize,
    pub horizon: f64,
    pub with_zero: usize,
    /// (sample index, first zero) for the first few offenders.
    pub examples: Vec<(usize, f64)>,
    pub pass: bool,
}

pub fn conjugate_point_report(outcomes: &[SampleOutcome], horizon: f64) -> ConjugateReport {
    let offenders: Vec<(usize, f64)> = outcomes
        .iter()
        .filter(|o| !o.zeros.is_empty())
        .map(|o| (o.index, o.zeros[0]))
        .collect();
    ConjugateReport {
        samples: outcomes.len(),
        horizon,
        with_zero: offenders.len(),
        examples: offenders.iter().take(10).copied().collect(),
        pass: offenders.is_empty() && !outcomes.is_empty(),
    }
}

/// Scan sampled geodesics for a second zero of the Jacobi field with J(0) = 0.
pub fn conjugate_point_scan(
    geo: &dyn FlowGeometry,
    starts: &[GeodesicStart],
    opts: &TrackOptions,
) -> Result<ConjugateReport> {
    let outcomes = scan_samples(geo, starts, opts, false)?;
    Ok(conjugate_point_report(&outcomes, opts.horizon))
}

/// Growth of perpendicular Jacobi fields: every basis field must grow by `factor` by the
/// horizon with a positive rate over the last quarter.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EberleinReport {
    pub samples: usize,
    pub horizon: f64,
    pub factor: f64,
    pub min_log_growth: f64,
    pub min_rate: f64,
    pub failures: usize,
    pub examples: Vec<usize>,
    pub pass: bool,
}

pub fn eberlein_report(outcomes: &[SampleOutcome], horizon: f64, factor: f64) -> EberleinReport {
    let lf = factor.ln();
    let mut min_log_growth = f64::INFINITY;
    let mut min_rate = f64::INFINITY;
    let mut bad = Vec::new();
    for o in outcomes {
        let mut ok = true;
        for k in 0..2 {
            min_log_growth = min_log_growth.min(o.log_growth[k]);
            min_rate = min_rate.min(o.rate[k]);
            if !(o.log_growth[k] >= lf) || !(o.rate[k] > 0.0) {
                ok = false;
            }
        }
        if !ok {
            bad.push(o.index);
        }
    }
    EberleinReport {
        samples: outcomes.len(),
        horizon,
        factor,
        min_log_growth,
        min_rate,
        failures: bad.len(),
        examples: bad.iter().take(10).copied().collect(),
        pass: bad.is_empty() && !outcomes.is_empty(),
    }
}

pub fn eberlein_certificate(
    geo: &dyn FlowGeometry,
    starts: &[GeodesicStart],
    opts: &TrackOptions,
    factor: f64,
) -> Result<EberleinReport> {
    let outcomes = scan_samples(geo, starts, opts, false)?;
    Ok(eberlein_report(&outcomes, opts.horizon, factor))
}

/// Empirical growth rate of the basis fields along the closed geodesic at t = waist.
pub fn waist_rate(geo: &dyn FlowGeometry, waist: f64, opts: &TrackOptions) -> Result<[f64; 2]> {
    let start = GeodesicStart::from_angle(geo, waist, 0.0, PI / 2.0);
    let start = GeodesicStart { v: 0.0, ..start };
    let out = scan_samples(geo, &[start], opts, false)?;
    Ok(out[0].rate)
}

/// A collar band in the coordinate s = |t| − b with the constants of the travel-time bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CollarBand {
    pub region: Region,
    /// s-range of the band
    pub lo: f64,
    pub hi: f64,
    /// curvature upper bound κ₀ on the band
    pub kappa0: f64,
    /// lower bound λ for the principal curvatures of the levels
    pub lambda: f64,
    pub q: f64,
}

impl CollarBand {
    /// (κ₀ + (Q+1)²)⁻¹
    pub fn time_bound(&self) -> f64 {
        1.0 / (self.kappa0 + (self.q + 1.0).powi(2))
    }

    /// The width hypothesis b₊ − b₋ < λ⁻¹ ln cosh(λ/(2κ₀ + 2(Q+1)²)).
    pub fn width_limit(&self) -> f64 {
        (self.lambda / (2.0 * self.kappa0 + 2.0 * (self.q + 1.0).powi(2)))
            .cosh()
            .ln()
            / self.lambda
    }

    pub fn hypothesis_holds(&self) -> bool {
        self.hi - self.lo < self.width_limit()
    }
}

/// One passage through a collar band.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CollarCrossing {
    pub region: Region,
    pub s_in: f64,
    pub duration: f64,
    pub bound: f64,
    pub time_ok: bool,
    /// min over probes of d'' − (1 − d'²)λ (≥ −tolerance when the inequality holds)
    pub convexity_margin: f64,
    pub convexity_ok: bool,
    /// μ-part of the travel-time bound: entry μ ≥ −Q ⇒ μ > −Q−1 and ∫μ ≥ −1/(Q+1);
    /// entry μ > Q+1 ⇒ μ > Q.
    pub mu_ok: bool,
}

/// Crossing report of one track through the given bands.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CollarReport {
    pub hypothesis_ok: bool,
    pub crossings: Vec<CollarCrossing>,
    pub pass: bool,
}

/// Measure every complete passage of the track through each band.
pub fn collar_crossing_check(track: &Track, bands: &[CollarBand]) -> CollarReport {
    let hypothesis_ok = bands.iter().all(|b| b.hypothesis_holds());
    let mut crossings = Vec::new();
    if hypothesis_ok {
        for band in bands {
            let evs = &track.events;
            for i in 0..evs.len() {
                if evs[i].to != band.region || evs[i].from == band.region {
                    continue;
                }
                let Some(j) = (i + 1..evs.len()).find(|&j| evs[j].from == band.region) else {
                    continue;
                };
                let (a, b) = (&evs[i], &evs[j]);
                let duration = b.s - a.s;
                let bound = band.time_bound();
                let tol = 1e-9;
                let mut margin = f64::INFINITY;
                for p in track
                    .probes
                    .iter()
                    .filter(|p| p.s > a.s && p.s < b.s && p.region == band.region)
                {
                    margin = margin.min(p.d2 - (1.0 - p.d1 * p.d1) * band.lambda);
                }
                let mut mu_ok = true;
                for (k, ca) in a.channels.iter().enumerate() {
                    let cb = &b.channels[k];
                    let min_mu = cb.min_mu.min(ca.mu);
                    let integral = cb.log_norm - ca.log_norm;
                    if ca.mu >= -band.q {
                        mu_ok &= min_mu > -band.q - 1.0 - 1e-9
                            && integral >= -1.0 / (band.q + 1.0) - 1e-9;
                    }
                    if ca.mu > band.q + 1.0 {
                        mu_ok &= min_mu > band.q - 1e-9;
                    }
                }
                crossings.push(CollarCrossing {
                    region: band.region,
                    s_in: a.s,
                    duration,
                    bound,
                    time_ok: duration <= bound * (1.0 + tol),
                    convexity_margin: margin,
                    convexity_ok: margin >= -1e-8,
                    mu_ok,
                });
            }
        }
    }
    let pass = hypothesis_ok
        && crossings
            .iter()
            .all(|c| c.time_ok && c.convexity_ok && c.mu_ok);
    CollarReport {
        hypothesis_ok,
        crossings,
        pass,
    }
}

/// Constants the μ-ledger checks against.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LedgerParams {
    pub q0: f64,
    pub c0: f64,
}

/// One inequality evaluated on a track.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LedgerCheck {
    pub rule: &'static str,
    pub channel: usize,
    pub s: f64,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
}

/// All applicable inequalities on one track.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LedgerReport {
    pub checks: Vec<LedgerCheck>,
    pub violations: usize,
}

fn tol(bound: f64) -> f64 {
    1e-7 * bound.abs().max(1.0)
}

/// A stretch of the track between two region events.
struct Stretch {
    first: usize,
    last: usize,
}

fn on_level(t: f64, level_abs: f64) -> bool {
    (t.abs() - level_abs).abs() <= 1e-9 * level_abs.max(1.0)
}

/// Evaluate the collar-passage, excursion, funnel-envelope, post-zero and Σ₀-segment
/// inequalities along a track (which must carry region events).
pub fn mu_ledger(track: &Track, map: &RegionMap, p: &LedgerParams) -> LedgerReport {
    let mut checks = Vec::new();
    let q = p.q0;
    let mut push =
        |rule: &'static str, channel: usize, s: f64, value: f64, bound: f64, greater: bool| {
            let ok = if greater {
                value > bound - tol(bound)
            } else {
                value < bound + tol(bound)
            };
            checks.push(LedgerCheck {
                rule,
                channel,
                s,
                value,
                bound,
                pass: ok,
            });
        };
    let evs = &track.events;
    let inner = map.b - map.delta;
    let outer = map.b + map.eps;
    let nch = track.channels.len();
    let first_region = track.samples.first().map_or(Region::Sigma0, |s| s.region);

    // Collar passages: maximal stretches in C₊ bounded by events on |t| = b−δ or b+ε.
    let mut k = 0;
    while k < evs.len() {
        let e = &evs[k];
        if e.to.is_collar() && !e.from.is_collar() {
            if let Some(j) = (k + 1..evs.len()).find(|&j| !evs[j].to.is_collar()) {
                let st = Stretch { first: k, last: j };
                let (a, b) = (&evs[st.first], &evs[st.last]);
                let from_sigma = on_level(a.t, inner) && a.from == Region::Sigma0;
                let from_d = on_level(a.t, outer) && a.from == Region::FunnelD;
                let to_d = b.to == Region::FunnelD;
                let to_sigma = b.to == Region::Sigma0;
                for ch in 0..nch {
                    let mu0 = a.channels[ch].mu;
                    let min_mu = (st.first + 1..=st.last)
                        .map(|i| evs[i].channels[ch].min_mu)
                        .fold(mu0, f64::min);
                    let integral = b.channels[ch].log_norm - a.channels[ch].log_norm;
                    let zero_inside = track
                        .zeros
                        .iter()
                        .any(|z| z.channel == ch && z.s > a.s && z.s <= b.s);
                    if from_sigma && to_d && mu0 > -q {
                        push("collar-out-min", ch, b.s, min_mu, -q - 2.0, true);
                        push(
                            "collar-out-integral",
                            ch,
                            b.s,
                            integral,
                            -2.0 / (q + 1.0),
                            true,
                        );
                    }
                    if from_d && to_sigma && mu0 > q + 2.0 {
                        push("collar-in-min", ch, b.s, min_mu, q, true);
                    }
                    if from_d && to_d && mu0 > q + 2.0 {
                        push("collar-dip-min", ch, b.s, min_mu, -q - 2.0, true);
                        push(
                            "collar-dip-integral",
                            ch,
                            b.s,
                            integral,
                            -2.0 / (q + 1.0),
                            true,
                        );
                    }
                    if zero_inside {
                        // A zero inside the collar forces μ > Q on exit.
                        push("collar-zero-exit", ch, b.s, b.channels[ch].mu, q, true);
                    }
                }
            }
        }
        k += 1;
    }

    // Excursions from ∂Σ₀ into C₊ ∪ D₋ (Σ₀ → C₊ on |t| = b − δ).
    for (k, e) in evs.iter().enumerate() {
        if !(e.from == Region::Sigma0 && e.to.is_collar()) {
            continue;
        }
        let ret = (k + 1..evs.len()).find(|&j| evs[j].to == Region::Sigma0);
        let end_idx = ret.unwrap_or(evs.len().saturating_sub(1));
        for ch in 0..nch {
            let mu0 = e.channels[ch].mu;
            if !(mu0 > -q && mu0 < f64::INFINITY) {
                continue;
            }
            let mut min_mu = f64::INFINITY;
            for i in k + 1..evs.len().min(end_idx + 1) {
                min_mu = min_mu.min(evs[i].channels[ch].min_mu);
            }
            let s_end = ret.map_or(track.last.s, |j| evs[j].s);
            if ret.is_none() {
                for smp in track.samples.iter().filter(|x| x.s > e.s) {
                    min_mu = min_mu.min(smp.channels[ch].mu);
                }
                min_mu = min_mu.min(track.last.channels[ch].mu);
            }
            let zero = track
                .zeros
                .iter()
                .any(|z| z.channel == ch && z.s > e.s && z.s <= s_end);
            push(
                "excursion-no-zero",
                ch,
                s_end,
                if zero { 0.0 } else { 1.0 },
                0.5,
                true,
            );
            if min_mu.is_finite() {
                push("excursion-min", ch, s_end, min_mu, -q - 2.0, true);
            }
            if let Some(j) = ret {
                let r = &evs[j];
                push("excursion-return-mu", ch, r.s, r.channels[ch].mu, q, true);
                let integral = r.channels[ch].log_norm - e.channels[ch].log_norm;
                push(
                    "excursion-return-integral",
                    ch,
                    r.s,
                    integral,
                    q + p.c0 + 2.0,
                    true,
                );
            }
        }
    }

    // D₋ segments: μ above the comparison envelope for K ≤ −(Q₀+3)².
    let kk = q + 3.0;
    let mut d_starts: Vec<(f64, Vec<f64>)> = Vec::new();
    if first_region == Region::FunnelD {
        d_starts.push((
            0.0,
            track.samples[0].channels.iter().map(|c| c.mu).collect(),
        ));
    }
    for e in evs.iter().filter(|e| e.to == Region::FunnelD) {
        d_starts.push((e.s, e.channels.iter().map(|c| c.mu).collect()));
    }
    for (s0, mus) in d_starts {
        let s1 = evs
            .iter()
            .find(|e| e.s > s0 && e.from == Region::FunnelD)
            .map_or(track.last.s, |e| e.s);
        for ch in 0..nch {
            let mu0 = mus[ch];
            if !(mu0 > -kk) {
                continue;
            }
            let mut worst: Option<(f64, f64, f64)> = None;
            let mut consider = |s: f64, mu: f64| {
                let env = negative_curvature_envelope(kk, mu0, s - s0);
                if s > s0 && env.is_finite() {
                    let gap = mu - env;
                    if worst.map_or(true, |w| gap < w.1 - w.2) {
                        worst = Some((s, mu, env));
                    }
                }
            };
            for smp in track.samples.iter().filter(|x| x.s > s0 && x.s <= s1) {
                consider(smp.s, smp.channels[ch].mu);
            }
            for e in evs.iter().filter(|e| e.s > s0 && e.s <= s1) {
                consider(e.s, e.channels[ch].mu);
            }
            if let Some((s, mu, env)) = worst {
                push("funnel-envelope", ch, s, mu, env, true);
            }
        }
    }

    // After a zero outside Σ₀, μ stays above −Q₀−2 until the next entry into Σ₀.
    for z in &track.zeros {
        let region_at = region_at(track, z.s);
        if region_at == Region::Sigma0 {
            continue;
        }
        let s_end = evs
            .iter()
            .find(|e| e.s > z.s && e.to == Region::Sigma0)
            .map_or(track.last.s, |e| e.s);
        let mut min_mu = f64::INFINITY;
        for e in evs.iter().filter(|e| e.s > z.s && e.s <= s_end) {
            min_mu = min_mu.min(e.channels[z.channel].mu);
        }
        for smp in track
            .samples
            .iter()
            .filter(|x| x.s > z.s + 1e-6 && x.s <= s_end)
        {
            min_mu = min_mu.min(smp.channels[z.channel].mu);
        }
        if min_mu.is_finite() {
            push("post-zero-min", z.channel, s_end, min_mu, -q - 2.0, true);
        }
        let again = track
            .zeros
            .iter()
            .any(|w| w.channel == z.channel && w.s > z.s && w.s <= s_end);
        push(
            "post-zero-no-zero",
            z.channel,
            s_end,
            if again { 0.0 } else { 1.0 },
            0.5,
            true,
        );
    }
    // J(0) = 0 outside Σ₀ counts as a zero at s = 0.
    if first_region != Region::Sigma0 {
        for ch in 0..nch {
            if track.samples[0].channels[ch].j != 0.0 {
                continue;
            }
            let s_end = evs
                .iter()
                .find(|e| e.to == Region::Sigma0)
                .map_or(track.last.s, |e| e.s);
            let mut min_mu = f64::INFINITY;
            for e in evs.iter().filter(|e| e.s <= s_end) {
                min_mu = min_mu.min(e.channels[ch].min_mu);
            }
            for smp in track.samples.iter().filter(|x| x.s > 0.0 && x.s <= s_end) {
                min_mu = min_mu.min(smp.channels[ch].mu);
            }
            if min_mu.is_finite() {
                push("post-zero-min", ch, s_end, min_mu, -q - 2.0, true);
            }
        }
    }

    // Σ₀ segments entered with μ > Q₀: no zero inside, exit μ > −Q₀ and ∫μ ≥ −C₀.
    for (k, e) in evs.iter().enumerate() {
        if e.to != Region::Sigma0 {
            continue;
        }
        let exit = (k + 1..evs.len()).find(|&j| evs[j].from == Region::Sigma0);
        let s_end = exit.map_or(track.last.s, |j| evs[j].s);
        for ch in 0..nch {
            if !(e.channels[ch].mu > q) {
                continue;
            }
            let zero = track
                .zeros
                .iter()
                .any(|z| z.channel == ch && z.s > e.s && z.s <= s_end);
            push(
                "sigma0-no-zero",
                ch,
                s_end,
                if zero { 0.0 } else { 1.0 },
                0.5,
                true,
            );
            if let Some(j) = exit {
                let x = &evs[j];
                push("sigma0-exit-mu", ch, x.s, x.channels[ch].mu, -q, true);
                let integral = x.channels[ch].log_norm - e.channels[ch].log_norm;
                push("sigma0-exit-integral", ch, x.s, integral, -p.c0, true);
            }
        }
    }

    let violations = checks.iter().filter(|c| !c.pass).count();
    LedgerReport { checks, violations }
}

fn region_at(track: &Track, s: f64) -> Region {
    let mut r = track.samples.first().map_or(Region::Sigma0, |x| x.region);
    for e in &track.events {
        if e.s <= s {
            r = e.to;
        } else {
            break;
        }
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(h: f64) -> TrackOptions {
        TrackOptions {
            horizon: h,
            marks: (1..=20).map(|k| k as f64 * h / 20.0).collect(),
            ..TrackOptions::default()
        }
    }

    #[test]
    fn constant_negative_curvature_gives_sinh() {
        let tr = scalar_jacobi(|_| -1.0, 0.0, 1.0, &opts(5.0)).unwrap();
        for s in &tr.samples[1..] {
            let c = &s.channels[0];
            let j = c.j * c.log_scale.exp();
            assert!((j / s.s.sinh() - 1.0).abs() < 1e-8, "s = {}", s.s);
        }
        assert!(tr.zeros.is_empty());
    }

    #[test]
    fn positive_curvature_zero_at_pi() {
        let tr = scalar_jacobi(|_| 1.0, 0.0, 1.0, &opts(4.0)).unwrap();
        assert_eq!(tr.zeros.len(), 1);
        assert!((tr.zeros[0].s - PI).abs() < 1e-8);
    }

    #[test]
    fn riccati_blowdown_is_a_zero() {
        let geo = PrescribedCurvature::new(|_| 1.0);
        let start = GeodesicStart {
            t: 0.0,
            theta: 0.0,
            v: 1.0,
            c: 0.0,
        };
        let tr = riccati_mu(&geo, start, 0.0, &opts(3.0)).unwrap();
        assert_eq!(tr.zeros.len(), 1);
        assert!((tr.zeros[0].s - PI / 2.0).abs() < 1e-7);
    }

    #[test]
    fn envelope_matches_closed_form() {
        for (mu0, s) in [(0.0, 0.3), (-1.0, 0.1), (2.5, 2.0)] {
            let k = 3.0;
            let v = negative_curvature_envelope(k, mu0, s);
            let exact = k * ((k * s) + (mu0 / k).atanh()).tanh();
            assert!((v - exact).abs() < 1e-12);
        }
    }
}
