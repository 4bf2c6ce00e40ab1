//! Threshold neuron with response-gated Oja plasticity.
//!
//! The neuron `(w, θ)` sees the input `S(t)` through the membrane potential
//! `y = (w, S - c)` and responds with `v = max(0, y - θ)`. Weights follow
//! `ẇ = α v y (E - w y)` with `E = S - c`, and the centre follows
//! `ċ = a (S - c)`. With `a = 0` and `c = 0` this is the plain gated Oja rule.
//!
//! Time is discretized on a fixed grid. Stimulus onsets and the window width
//! are snapped to the grid and the input is held constant over each step
//! (evaluated at the step midpoint), so the classical fourth-order scheme
//! keeps its order between window edges.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::selective_neuron;
use crate::cloud::PointCloud;
use crate::error::{invalid_parameter, Error, Result};
use crate::sampling::{sample_ball, Seed};
use crate::scalar::Scalar;

/// Stimulus contents with their presentation onsets.
#[derive(Debug, Clone, PartialEq)]
pub struct StimulusSchedule<T: Scalar> {
    pub contents: Vec<DVector<T>>,
    /// Onset times per stimulus, increasing.
    pub presentations: Vec<Vec<f64>>,
    /// Width ΔT of the rectangular window.
    pub window: f64,
    /// Stimuli presented together during a learning epoch, if any.
    pub sync_group: Option<SyncGroup>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncGroup {
    pub members: Vec<usize>,
    pub onsets: Vec<f64>,
}

impl<T: Scalar> StimulusSchedule<T> {
    pub fn new(contents: Vec<DVector<T>>, window: f64) -> Result<Self> {
        if !(window > 0.0 && window.is_finite()) {
            return Err(invalid_parameter(format!("window must be positive, got {window}")));
        }
        if let Some(first) = contents.first() {
            if let Some(x) = contents.iter().find(|x| x.len() != first.len()) {
                return Err(Error::DimensionMismatch {
                    expected: first.len(),
                    found: x.len(),
                });
            }
        }
        Ok(Self {
            presentations: vec![Vec::new(); contents.len()],
            contents,
            window,
            sync_group: None,
        })
    }

    pub fn dim(&self) -> Option<usize> {
        self.contents.first().map(DVector::len)
    }

    /// Adds one presentation of stimulus `i`; frames of one stimulus may not overlap.
    pub fn present(&mut self, i: usize, onset: f64) -> Result<()> {
        if i >= self.contents.len() {
            return Err(invalid_parameter(format!("no stimulus with index {i}")));
        }
        if !(onset >= 0.0 && onset.is_finite()) {
            return Err(invalid_parameter(format!("onset must be a non-negative time, got {onset}")));
        }
        let list = &mut self.presentations[i];
        let pos = list.partition_point(|t| *t < onset);
        let clash_before = pos > 0 && onset <= list[pos - 1] + self.window;
        let clash_after = pos < list.len() && list[pos] <= onset + self.window;
        if clash_before || clash_after {
            return Err(invalid_parameter(format!(
                "presentation of stimulus {i} at {onset} overlaps another frame"
            )));
        }
        list.insert(pos, onset);
        Ok(())
    }

    /// Presents every member at each onset simultaneously.
    pub fn synchronize(&mut self, members: &[usize], onsets: &[f64]) -> Result<()> {
        for &t in onsets {
            for &i in members {
                self.present(i, t)?;
            }
        }
        self.sync_group = Some(SyncGroup {
            members: members.to_vec(),
            onsets: onsets.to_vec(),
        });
        Ok(())
    }

    /// Copy with onsets and window rounded to multiples of `dt`.
    fn snapped(&self, dt: f64) -> Self {
        let snap = |t: f64| (t / dt).round() * dt;
        let mut out = self.clone();
        out.window = snap(self.window).max(dt);
        for list in &mut out.presentations {
            for t in list.iter_mut() {
                *t = snap(*t);
            }
        }
        out
    }
}

/// `S(t) = Σ x_i c(t - τ_ij)` with `c = 1` on `[0, ΔT]` and 0 elsewhere.
pub fn input_signal<T: Scalar>(schedule: &StimulusSchedule<T>, t: f64) -> DVector<T> {
    let n = schedule.dim().unwrap_or(0);
    let mut s = DVector::zeros(n);
    for (x, onsets) in schedule.contents.iter().zip(&schedule.presentations) {
        let active = onsets.iter().filter(|tau| t >= **tau && t - **tau <= schedule.window).count();
        for _ in 0..active {
            s += x;
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuronState<T: Scalar> {
    pub w: DVector<T>,
    pub theta: T,
    pub alpha_rate: T,
    pub c: DVector<T>,
    pub a: T,
}

impl<T: Scalar> NeuronState<T> {
    /// Neuron without centre adaptation (`c = 0`, `a = 0`).
    pub fn new(w: DVector<T>, theta: T, alpha_rate: T) -> Result<Self> {
        let n = w.len();
        let state = Self {
            w,
            theta,
            alpha_rate,
            c: DVector::zeros(n),
            a: T::zero(),
        };
        state.validate()?;
        Ok(state)
    }

    pub fn with_center(mut self, c: DVector<T>, a: T) -> Result<Self> {
        self.c = c;
        self.a = a;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if !(self.alpha_rate > T::zero()) {
            return Err(invalid_parameter("plasticity rate must be positive"));
        }
        if !(self.a >= T::zero()) {
            return Err(invalid_parameter("centre adaptation rate must be non-negative"));
        }
        if self.w.iter().all(|v| *v == T::zero()) {
            return Err(invalid_parameter("initial weights must be non-zero"));
        }
        if self.c.len() != self.w.len() {
            return Err(Error::DimensionMismatch {
                expected: self.w.len(),
                found: self.c.len(),
            });
        }
        Ok(())
    }
}

/// Membrane potential `y = (w, S - c)` and response `v = max(0, y - θ)`.
pub fn response<T: Scalar>(state: &NeuronState<T>, s: &DVector<T>) -> Result<(T, T)> {
    if s.len() != state.w.len() {
        return Err(Error::DimensionMismatch {
            expected: state.w.len(),
            found: s.len(),
        });
    }
    let y = potential(&state.w, &state.c, s);
    Ok((y, ramp(y - state.theta)))
}

fn potential<T: Scalar>(w: &DVector<T>, c: &DVector<T>, s: &DVector<T>) -> T {
    w.iter()
        .zip(c.iter())
        .zip(s.iter())
        .fold(T::zero(), |acc, ((wi, ci), si)| acc + *wi * (*si - *ci))
}

fn ramp<T: Scalar>(z: T) -> T {
    if z > T::zero() {
        z
    } else {
        T::zero()
    }
}

/// Threshold switches and other knobs of a simulation run.
#[derive(Clone)]
pub struct IntegrateOptions<T: Scalar> {
    pub t_end: f64,
    pub dt: f64,
    /// Keep every `record_stride`-th step in the trace (the final step is always kept).
    pub record_stride: usize,
    /// Stimuli whose potential `(w, x - c)` is recorded at every kept step.
    pub tracked: Vec<DVector<T>>,
    /// `(time, θ)` pairs: the threshold becomes θ from that time on.
    pub thresholds: Vec<(f64, T)>,
    /// Time-dependent centre adaptation rate; overrides the state's `a`.
    pub center_rate: Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
}

impl<T: Scalar> IntegrateOptions<T> {
    pub fn new(t_end: f64, dt: f64) -> Self {
        Self {
            t_end,
            dt,
            record_stride: 1,
            tracked: Vec::new(),
            thresholds: Vec::new(),
            center_rate: None,
        }
    }
}

/// Recorded run. Row `k` describes time `t[k]` with the input that is held
/// over the step starting there (the last row reuses the final step's input).
#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace<T: Scalar> {
    pub t: Vec<f64>,
    pub theta: Vec<f64>,
    pub y: Vec<f64>,
    pub v: Vec<f64>,
    pub w_norm: Vec<f64>,
    /// Cumulative `∫ v y² dτ`.
    pub nr_time: Vec<f64>,
    /// `responses[i][k]`: potential of tracked stimulus `i` at row `k`.
    pub responses: Vec<Vec<f64>>,
    /// First grid time at which each tracked potential exceeds the threshold
    /// after having been at or below it.
    pub first_crossing: Vec<Option<f64>>,
    pub final_state: NeuronState<T>,
}

impl<T: Scalar> SimTrace<T> {
    pub fn final_nr_time(&self) -> f64 {
        self.nr_time.last().copied().unwrap_or(0.0)
    }
}

struct Deriv<T: Scalar> {
    w: DVector<T>,
    c: DVector<T>,
    nr: T,
}

fn rhs<T: Scalar>(
    w: &DVector<T>,
    c: &DVector<T>,
    s: &DVector<T>,
    theta: T,
    alpha: T,
    a: T,
) -> Deriv<T> {
    let e = s - c;
    let y = w.dot(&e);
    let v = ramp(y - theta);
    let gain = alpha * v * y;
    let dw = if gain == T::zero() {
        DVector::zeros(w.len())
    } else {
        (e - w * y) * gain
    };
    let dc = if a == T::zero() {
        DVector::zeros(c.len())
    } else {
        (s - c) * a
    };
    Deriv {
        w: dw,
        c: dc,
        nr: v * y * y,
    }
}

/// Runs the neuron from time 0 to `t_end` with step `dt` and records every step.
pub fn integrate<T: Scalar>(
    state: &NeuronState<T>,
    schedule: &StimulusSchedule<T>,
    t_end: f64,
    dt: f64,
) -> Result<SimTrace<T>> {
    integrate_with(state, schedule, &IntegrateOptions::new(t_end, dt), |_, _| {})
}

/// Full integrator; `observe(t, state)` runs at time 0 and after every step,
/// with the threshold in effect at that time.
pub fn integrate_with<T: Scalar, F>(
    state: &NeuronState<T>,
    schedule: &StimulusSchedule<T>,
    opts: &IntegrateOptions<T>,
    mut observe: F,
) -> Result<SimTrace<T>>
where
    F: FnMut(f64, &NeuronState<T>),
{
    state.validate()?;
    let n = state.w.len();
    if let Some(d) = schedule.dim() {
        if d != n {
            return Err(Error::DimensionMismatch { expected: n, found: d });
        }
    }
    if let Some(x) = opts.tracked.iter().find(|x| x.len() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: x.len(),
        });
    }
    let dt = opts.dt;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid_parameter(format!("time step must be positive, got {dt}")));
    }
    if dt > schedule.window / 20.0 {
        return Err(invalid_parameter(format!(
            "time step {dt} does not resolve the window {} (need dt <= window / 20)",
            schedule.window
        )));
    }
    if !(opts.t_end >= 0.0 && opts.t_end.is_finite()) {
        return Err(invalid_parameter("end time must be a non-negative number"));
    }
    if opts.record_stride == 0 {
        return Err(invalid_parameter("record stride must be at least 1"));
    }
    let steps = (opts.t_end / dt).round() as usize;
    let schedule = schedule.snapped(dt);
    let mut thresholds = opts.thresholds.clone();
    thresholds.sort_by(|a, b| a.0.total_cmp(&b.0));
    let theta_at = |t: f64| {
        let mut th = state.theta;
        for (start, value) in &thresholds {
            // snapped like the onsets; a half-step tolerance absorbs rounding
            if t + 0.5 * dt >= (start / dt).round() * dt {
                th = *value;
            }
        }
        th
    };
    let input_for_step = |k: usize| input_signal(&schedule, (k as f64 + 0.5) * dt);

    let mut cur = state.clone();
    let mut nr = 0.0f64;
    let mut trace = SimTrace {
        t: Vec::new(),
        theta: Vec::new(),
        y: Vec::new(),
        v: Vec::new(),
        w_norm: Vec::new(),
        nr_time: Vec::new(),
        responses: vec![Vec::new(); opts.tracked.len()],
        first_crossing: vec![None; opts.tracked.len()],
        final_state: state.clone(),
    };
    let mut below: Vec<bool> = vec![false; opts.tracked.len()];
    let mut check_crossings = |t: f64, st: &NeuronState<T>, first: &mut Vec<Option<f64>>| {
        for (i, x) in opts.tracked.iter().enumerate() {
            let p = potential(&st.w, &st.c, x);
            if p > st.theta {
                if below[i] && first[i].is_none() {
                    first[i] = Some(t);
                }
            } else {
                below[i] = true;
            }
        }
    };

    let record = |trace: &mut SimTrace<T>, t: f64, st: &NeuronState<T>, s: &DVector<T>, nr: f64| {
        let y = potential(&st.w, &st.c, s);
        trace.t.push(t);
        trace.theta.push(st.theta.f64());
        trace.y.push(y.f64());
        trace.v.push(ramp(y - st.theta).f64());
        trace.w_norm.push(st.w.norm().f64());
        trace.nr_time.push(nr);
        for (i, x) in opts.tracked.iter().enumerate() {
            trace.responses[i].push(potential(&st.w, &st.c, x).f64());
        }
    };

    cur.theta = theta_at(0.0);
    observe(0.0, &cur);
    check_crossings(0.0, &cur, &mut trace.first_crossing);
    let h = T::of(dt);
    let half = T::of(0.5 * dt);
    let sixth = T::of(dt / 6.0);
    let two = T::of(2.0);
    for k in 0..steps {
        let t = k as f64 * dt;
        let s = input_for_step(k);
        cur.theta = theta_at(t);
        if k % opts.record_stride == 0 {
            record(&mut trace, t, &cur, &s, nr);
        }
        let a = match &opts.center_rate {
            Some(rate) => T::of(rate(t + 0.5 * dt)),
            None => cur.a,
        };
        let (th, al) = (cur.theta, cur.alpha_rate);
        let k1 = rhs(&cur.w, &cur.c, &s, th, al, a);
        let k2 = rhs(&(&cur.w + &k1.w * half), &(&cur.c + &k1.c * half), &s, th, al, a);
        let k3 = rhs(&(&cur.w + &k2.w * half), &(&cur.c + &k2.c * half), &s, th, al, a);
        let k4 = rhs(&(&cur.w + &k3.w * h), &(&cur.c + &k3.c * h), &s, th, al, a);
        let any_w = [&k1, &k2, &k3, &k4].iter().any(|d| d.w.iter().any(|v| *v != T::zero()));
        if any_w {
            cur.w += (&k1.w + &k2.w * two + &k3.w * two + &k4.w) * sixth;
        }
        let any_c = [&k1, &k2, &k3, &k4].iter().any(|d| d.c.iter().any(|v| *v != T::zero()));
        if any_c {
            cur.c += (&k1.c + &k2.c * two + &k3.c * two + &k4.c) * sixth;
        }
        nr += ((k1.nr + k2.nr * two + k3.nr * two + k4.nr) * sixth).f64();
        let t_next = (k + 1) as f64 * dt;
        cur.theta = theta_at(t_next);
        observe(t_next, &cur);
        check_crossings(t_next, &cur, &mut trace.first_crossing);
    }
    let t_end = steps as f64 * dt;
    let last_input = input_signal(&schedule, (steps.max(1) as f64 - 0.5) * dt);
    record(&mut trace, t_end, &cur, &last_input, nr);
    if let (Some(&t_last), true) = (trace.t.iter().rev().nth(1), trace.t.len() >= 2) {
        // the loop may already have recorded t_end when steps == 0
        if t_last == t_end {
            trace.t.pop();
        }
    }
    trace.final_state = cur;
    Ok(trace)
}

/// Outcome of the five association conditions, or of 1-3 with 4'-5' when strict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationConditions {
    /// `(w0, x0) > θ0`.
    pub known_detected: bool,
    /// `(w0, x) > -(θ0 - θ)/(|Y| - 1)` for every other relevant x.
    pub sum_response: bool,
    /// `(w̄, x) > θ` for every relevant x.
    pub mean_detects_relevant: bool,
    /// `(w0, x) < θ` (or `< γθ`) for every background x.
    pub initial_rejects_background: bool,
    /// `(w̄, x) < θ` (or `< γθ`) for every background x.
    pub mean_rejects_background: bool,
    pub strict: bool,
    /// `cos(∠(w0, w̄)/2) = sqrt((1 + (w0, w̄))/2)`.
    pub gamma: f64,
}

impl AssociationConditions {
    pub fn all(&self) -> bool {
        self.known_detected
            && self.sum_response
            && self.mean_detects_relevant
            && self.initial_rejects_background
            && self.mean_rejects_background
    }
}

/// Normalized sum of the relevant contents.
pub fn mean_direction<T: Scalar>(relevant: &PointCloud<T>) -> Result<DVector<T>> {
    let sum: DVector<T> = relevant.points().row_sum().transpose();
    let norm = sum.norm();
    if norm == T::zero() {
        return Err(Error::DegenerateDirection("relevant contents sum to zero".into()));
    }
    Ok(sum / norm)
}

/// Evaluates the association conditions; the first row of `relevant` is the known stimulus.
pub fn check_association<T: Scalar>(
    w0: &DVector<T>,
    theta0: T,
    theta: T,
    relevant: &PointCloud<T>,
    background: &PointCloud<T>,
    strict: bool,
) -> Result<AssociationConditions> {
    let n = w0.len();
    for d in [relevant.dim(), background.dim()] {
        if d != n {
            return Err(Error::DimensionMismatch { expected: n, found: d });
        }
    }
    if (w0.norm().f64() - 1.0).abs() > 1e-6 {
        return Err(invalid_parameter("initial weights must have unit norm"));
    }
    if !(theta0 > theta && theta > T::zero()) {
        return Err(invalid_parameter(format!(
            "need θ0 > θ > 0, got θ0 = {theta0}, θ = {theta}"
        )));
    }
    let w_bar = mean_direction(relevant)?;
    let gamma = ((1.0 + w0.dot(&w_bar).f64()) / 2.0).max(0.0).sqrt();
    let limit = if strict { T::of(gamma) * theta } else { theta };
    let on_relevant = relevant.points() * w0;
    let bar_on_relevant = relevant.points() * &w_bar;
    let on_background = background.points() * w0;
    let bar_on_background = background.points() * &w_bar;
    let others = relevant.len() - 1;
    let sum_response = others == 0 || {
        let floor = -(theta0 - theta) / T::of(others as f64);
        on_relevant.iter().skip(1).all(|p| *p > floor)
    };
    Ok(AssociationConditions {
        known_detected: on_relevant[0] > theta0,
        sum_response,
        mean_detects_relevant: bar_on_relevant.iter().all(|p| *p > theta),
        initial_rejects_background: on_background.iter().all(|p| *p < limit),
        mean_rejects_background: bar_on_background.iter().all(|p| *p < limit),
        strict,
        gamma,
    })
}

/// Parameters of the learning-by-association protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationConfig {
    pub n: usize,
    pub background: usize,
    /// `|Y|`, including the known stimulus.
    pub relevant: usize,
    pub theta: f64,
    pub theta0: f64,
    pub alpha_rate: f64,
    /// Window width ΔT.
    pub window: f64,
    /// Length of the phase before learning, during which the known stimulus is shown once.
    pub pre: f64,
    /// Length of the learning epoch.
    pub epoch: f64,
    /// Time between synchronized presentations.
    pub period: f64,
    /// Length of the phase after learning.
    pub post: f64,
    pub dt: f64,
    pub record_stride: usize,
    pub seed: u64,
}

impl Default for AssociationConfig {
    fn default() -> Self {
        Self {
            n: 400,
            background: 500,
            relevant: 2,
            theta: 0.2,
            theta0: 0.6,
            alpha_rate: 1.0,
            window: 1.0,
            pre: 2.0,
            epoch: 10.0,
            period: 2.0,
            post: 2.0,
            dt: 0.02,
            record_stride: 1,
            seed: 0,
        }
    }
}

impl AssociationConfig {
    pub fn learning_start(&self) -> f64 {
        self.pre
    }

    pub fn learning_end(&self) -> f64 {
        self.pre + self.epoch
    }

    pub fn t_end(&self) -> f64 {
        self.pre + self.epoch + self.post
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.background == 0 || self.relevant == 0 {
            return Err(invalid_parameter("n, background and relevant counts must be positive"));
        }
        let positive = [
            ("theta", self.theta),
            ("alpha_rate", self.alpha_rate),
            ("window", self.window),
            ("epoch", self.epoch),
            ("dt", self.dt),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(invalid_parameter(format!("{name} must be positive, got {v}")));
        }
        if !(self.theta0 > self.theta) {
            return Err(invalid_parameter("theta0 must exceed theta"));
        }
        if !(self.period > self.window) {
            return Err(invalid_parameter("presentation period must exceed the window"));
        }
        if !(self.pre >= self.window && self.post >= 0.0) {
            return Err(invalid_parameter("pre phase must hold one window; post must be non-negative"));
        }
        Ok(())
    }
}

/// What happened in one association run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationOutcome {
    pub relevant: usize,
    /// Every new relevant stimulus is detected by the final neuron.
    pub new_detected: bool,
    pub known_detected: bool,
    /// Some background stimulus is detected by the final neuron.
    pub background_false_positive: bool,
    /// Some background stimulus would have been detected at some time of the learning epoch.
    pub transient_false_positive: bool,
    /// `min (w, x) - θ` over new relevant stimuli at the end; `None` when there are none.
    pub margin: Option<f64>,
    /// Largest background potential minus θ at the end.
    pub background_margin: f64,
    /// First threshold crossing of each new relevant stimulus.
    pub crossing_times: Vec<Option<f64>>,
    /// Every new relevant stimulus first crosses within the learning epoch.
    pub crossed_during_learning: bool,
    pub nr_time: f64,
    pub conditions: AssociationConditions,
    pub strict_conditions: AssociationConditions,
    /// Largest distance of w(t) from span{w0, w̄} during the run.
    pub arc_residual: f64,
    /// Smallest coefficient of w(t) in the basis {w0, w̄}.
    pub arc_min_coefficient: f64,
}

#[derive(Debug, Clone)]
pub struct AssociationRun {
    pub trace: SimTrace<f64>,
    pub outcome: AssociationOutcome,
    pub relevant: PointCloud<f64>,
    pub background: PointCloud<f64>,
}

/// Learning a new stimulus by association with a known one.
///
/// Relevant and background contents are drawn from the unit ball. The neuron
/// starts at `w0 = x0/|x0|` with threshold θ0 and sees `x0` once during the
/// pre phase. From the learning epoch on the threshold is θ and the whole
/// relevant set is presented synchronously every `period`. Detection is
/// evaluated on the final weights, one stimulus at a time.
pub fn run_association_experiment(config: &AssociationConfig) -> Result<AssociationRun> {
    config.validate()?;
    let seed = Seed(config.seed);
    let relevant = sample_ball::<f64>(config.n, config.relevant, seed.child(0))?;
    let background = sample_ball::<f64>(config.n, config.background, seed.child(1))?;
    let x0 = relevant.row_vector(0);
    let tuned = selective_neuron(&x0, &DVector::zeros(config.n), config.theta0)?;
    let w0 = &tuned.weights / tuned.weights.norm();
    let w_bar = mean_direction(&relevant)?;

    let contents: Vec<DVector<f64>> = (0..relevant.len()).map(|i| relevant.row_vector(i)).collect();
    let mut schedule = StimulusSchedule::new(contents.clone(), config.window)?;
    schedule.present(0, 0.0)?;
    let mut onsets = Vec::new();
    let mut t = config.learning_start();
    while t + config.window <= config.learning_end() + 1e-9 {
        onsets.push(t);
        t += config.period;
    }
    schedule.synchronize(&(0..relevant.len()).collect::<Vec<_>>(), &onsets)?;

    let mut opts = IntegrateOptions::new(config.t_end(), config.dt);
    opts.record_stride = config.record_stride;
    opts.tracked = contents;
    opts.thresholds = vec![(config.learning_start(), config.theta)];
    let state = NeuronState::new(w0.clone(), config.theta0, config.alpha_rate)?;

    // basis {w0, w̄} for the arc check
    let basis = DMatrix::from_columns(&[w0.clone(), w_bar.clone()]);
    let gram = basis.transpose() * &basis;
    let gram_inv = gram.try_inverse();
    let mut arc_residual = 0.0f64;
    let mut arc_min_coefficient = f64::INFINITY;
    let mut transient = false;
    let (t_learn, t_stop) = (config.learning_start(), config.learning_end());
    let trace = integrate_with(&state, &schedule, &opts, |t, st| {
        match &gram_inv {
            Some(inv) => {
                let coef = inv * (basis.transpose() * &st.w);
                let residual = (&st.w - &basis * &coef).norm();
                arc_residual = arc_residual.max(residual);
                arc_min_coefficient = arc_min_coefficient.min(coef[0].min(coef[1]));
            }
            None => {
                // w̄ parallel to w0: the arc degenerates to a point
                arc_residual = arc_residual.max((&st.w - &w0 * st.w.dot(&w0)).norm());
                arc_min_coefficient = arc_min_coefficient.min(st.w.dot(&w0));
            }
        }
        if t >= t_learn && t <= t_stop + 1e-9 && !transient {
            let p = background.points() * &st.w;
            transient = p.iter().any(|v| *v > st.theta);
        }
    })?;

    let w = &trace.final_state.w;
    let theta = config.theta;
    let potentials = relevant.points() * w;
    let background_max = (background.points() * w).max();
    let new: Vec<f64> = potentials.iter().skip(1).copied().collect();
    let margin = new.iter().cloned().reduce(f64::min).map(|m| m - theta);
    let crossing_times: Vec<Option<f64>> = trace.first_crossing.iter().skip(1).copied().collect();
    let crossed_during_learning = crossing_times
        .iter()
        .all(|c| matches!(c, Some(t) if *t >= t_learn && *t <= t_stop + 1e-9));
    let outcome = AssociationOutcome {
        relevant: config.relevant,
        new_detected: new.iter().all(|p| *p > theta),
        known_detected: potentials[0] > theta,
        background_false_positive: background_max > theta,
        transient_false_positive: transient,
        margin,
        background_margin: background_max - theta,
        crossing_times,
        crossed_during_learning,
        nr_time: trace.final_nr_time(),
        conditions: check_association(&w0, config.theta0, theta, &relevant, &background, false)?,
        strict_conditions: check_association(&w0, config.theta0, theta, &relevant, &background, true)?,
        arc_residual,
        arc_min_coefficient,
    };
    Ok(AssociationRun {
        trace,
        outcome,
        relevant,
        background,
    })
}

/// Runs the protocol for several seeds in parallel; `seeds[i]` replaces `config.seed`.
pub fn association_sweep(config: &AssociationConfig, seeds: &[u64]) -> Result<Vec<AssociationOutcome>> {
    seeds
        .par_iter()
        .map(|s| {
            let cfg = AssociationConfig {
                seed: *s,
                record_stride: usize::MAX / 2,
                ..config.clone()
            };
            run_association_experiment(&cfg).map(|r| r.outcome)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn unit(v: &[f64]) -> DVector<f64> {
        let d = DVector::from_row_slice(v);
        let n = d.norm();
        d / n
    }

    fn persistent(x: &DVector<f64>, t_end: f64) -> StimulusSchedule<f64> {
        let mut s = StimulusSchedule::new(vec![x.clone()], t_end + 1.0).unwrap();
        s.present(0, 0.0).unwrap();
        s
    }

    #[test]
    fn input_signal_examples() {
        let x = DVector::from_vec(vec![1.0, 0.0]);
        let z = DVector::from_vec(vec![0.0, 2.0]);
        let mut s = StimulusSchedule::new(vec![x.clone(), z.clone()], 1.0).unwrap();
        s.present(0, 1.0).unwrap();
        s.present(1, 1.5).unwrap();
        s.present(0, 3.0).unwrap();
        assert_eq!(input_signal(&s, 0.5), DVector::zeros(2));
        assert_eq!(input_signal(&s, 1.2), x);
        assert_eq!(input_signal(&s, 1.7), &x + &z);
        assert_eq!(input_signal(&s, 2.0), &x + &z);
        assert_eq!(input_signal(&s, 2.2), z);
        assert_eq!(input_signal(&s, 10.0), DVector::zeros(2));
        assert!(s.present(0, 3.5).is_err());
        assert!(s.present(0, 2.0).is_err());
    }

    #[test]
    fn input_signal_matches_direct_sum() {
        let mut rng = Seed(5).stream(0);
        for _ in 0..50 {
            let n = 4;
            let k = rng.random_range(1..5);
            let window = rng.random_range(0.2..1.5);
            let contents: Vec<DVector<f64>> = (0..k)
                .map(|_| DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)))
                .collect();
            let mut s = StimulusSchedule::new(contents.clone(), window).unwrap();
            for i in 0..k {
                let mut t = rng.random_range(0.0..1.0);
                for _ in 0..3 {
                    s.present(i, t).unwrap();
                    t += window + rng.random_range(0.01..1.0);
                }
            }
            for _ in 0..50 {
                let t: f64 = rng.random_range(0.0..8.0);
                let mut direct = DVector::zeros(n);
                for i in 0..k {
                    for tau in &s.presentations[i] {
                        if (0.0..=window).contains(&(t - tau)) {
                            direct += &contents[i];
                        }
                    }
                }
                assert!((input_signal(&s, t) - direct).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn response_examples() {
        let st = NeuronState::new(DVector::from_vec(vec![1.0, 0.0]), 1.0, 1.0).unwrap();
        assert_eq!(response(&st, &DVector::from_vec(vec![2.0, 0.0])).unwrap(), (2.0, 1.0));
        assert_eq!(response(&st, &DVector::zeros(2)).unwrap(), (0.0, 0.0));
        assert!(response(&st, &DVector::zeros(3)).is_err());
        let mut rng = Seed(6).stream(0);
        for _ in 0..10_000 {
            let w = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
            let s = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
            let th = rng.random_range(-0.5..1.0);
            let Ok(st) = NeuronState::new(w, th, 1.0) else { continue };
            let (y, v) = response(&st, &s).unwrap();
            assert!(v >= 0.0);
            assert_eq!(v > 0.0, y > th);
        }
    }

    #[test]
    fn response_uses_the_effective_signal() {
        let st = NeuronState::new(DVector::from_vec(vec![1.0, 0.0]), 0.5, 1.0)
            .unwrap()
            .with_center(DVector::from_vec(vec![0.5, 0.0]), 0.1)
            .unwrap();
        assert_eq!(response(&st, &DVector::from_vec(vec![2.0, 0.0])).unwrap(), (1.5, 1.0));
    }

    #[test]
    fn unit_sphere_is_invariant_over_a_million_steps() {
        let x = DVector::from_vec(vec![0.9, 0.3, -0.2, 0.1, 0.4]);
        let w0 = unit(&[0.5, 0.5, 0.5, -0.3, 0.2]);
        let st = NeuronState::new(w0, 0.05, 1.0).unwrap();
        let t_end = 1000.0;
        let mut s = StimulusSchedule::new(vec![x.clone(), -x.clone()], 0.02).unwrap();
        // alternate x and a silent gap so the neuron both learns and rests
        let mut t = 0.0;
        while t < t_end {
            s.present(0, t).unwrap();
            t += 0.05;
        }
        let mut opts = IntegrateOptions::new(t_end, 0.001);
        opts.record_stride = 10_000;
        let mut worst = 0.0f64;
        let trace = integrate_with(&st, &s, &opts, |_, st| {
            worst = worst.max((st.w.norm() - 1.0).abs());
        })
        .unwrap();
        assert_eq!(trace.t.last().copied(), Some(t_end));
        assert!(worst < 1e-6, "{worst}");
        assert!(trace.final_nr_time() > 0.0);
    }

    #[test]
    fn aligned_weights_are_stationary() {
        let x: DVector<f64> = DVector::from_vec(vec![0.3, -0.4, 0.5, 0.2]);
        let w_star = &x / x.norm();
        let st = NeuronState::new(w_star.clone(), 0.1, 2.0).unwrap();
        let mut drift = 0.0f64;
        integrate_with(&st, &persistent(&x, 50.0), &IntegrateOptions::new(50.0, 0.01), |_, st| {
            drift = drift.max((&st.w - &w_star).norm());
        })
        .unwrap();
        assert!(drift < 1e-8, "{drift}");
    }

    #[test]
    fn silent_neuron_keeps_its_weights() {
        let x = DVector::from_vec(vec![0.1, 0.2, 0.0]);
        let w0 = DVector::from_vec(vec![0.0, 0.6, 0.8]);
        let st = NeuronState::new(w0.clone(), 0.5, 1.0).unwrap();
        let trace = integrate(&st, &persistent(&x, 10.0), 10.0, 0.01).unwrap();
        assert_eq!(trace.final_state.w, w0);
        assert!(trace.v.iter().all(|v| *v == 0.0));
        assert_eq!(trace.final_nr_time(), 0.0);
    }

    #[test]
    fn weights_change_only_while_responding() {
        let x = DVector::from_vec(vec![1.0, 0.2, 0.0]);
        let mut s = StimulusSchedule::new(vec![x], 1.0).unwrap();
        s.present(0, 1.0).unwrap();
        s.present(0, 4.0).unwrap();
        let st = NeuronState::new(unit(&[0.6, 0.0, 0.8]), 0.1, 1.0).unwrap();
        let mut last: Option<(f64, DVector<f64>)> = None;
        let schedule = s.clone();
        integrate_with(&st, &s, &IntegrateOptions::new(7.0, 0.01), |t, st| {
            if let Some((tp, wp)) = &last {
                let mid = 0.5 * (tp + t);
                if input_signal(&schedule, mid).norm() == 0.0 {
                    assert_eq!(&st.w, wp, "weights moved at t = {t}");
                }
            }
            last = Some((t, st.w.clone()));
        })
        .unwrap();
    }

    #[test]
    fn large_weights_shrink_towards_the_sphere() {
        let x = DVector::from_vec(vec![0.8, 0.1, 0.3]);
        let w0 = unit(&[0.7, 0.7, 0.1]) * 1.5;
        let st = NeuronState::new(w0, 0.1, 1.0).unwrap();
        let trace = integrate(&st, &persistent(&x, 20.0), 20.0, 0.01).unwrap();
        assert!(trace.v.iter().all(|v| *v > 0.0));
        assert!(trace.w_norm.windows(2).all(|w| w[1] <= w[0] + 1e-15));
        assert!(trace.w_norm.iter().all(|v| *v >= 1.0 - 1e-9));
        assert!((trace.w_norm.last().unwrap() - 1.0).abs() < 0.05);
    }

    #[test]
    fn fourth_order_convergence() {
        let x = DVector::from_vec(vec![0.9, 0.1, -0.3, 0.2]);
        let w0 = unit(&[0.3, 0.8, 0.1, 0.5]);
        let st = NeuronState::new(w0, 0.05, 1.0).unwrap();
        let s = persistent(&x, 4.0);
        let run = |dt: f64| integrate(&st, &s, 2.0, dt).unwrap().final_state.w;
        let (a, b, c) = (run(0.1), run(0.05), run(0.025));
        let order = ((&a - &b).norm() / (&b - &c).norm()).log2();
        assert!(order >= 3.5, "observed order {order}");
    }

    #[test]
    fn center_adaptation_tracks_the_input() {
        let x = DVector::from_vec(vec![1.0, 1.0]);
        let st = NeuronState::new(unit(&[1.0, 0.0]), 10.0, 1.0)
            .unwrap()
            .with_center(DVector::zeros(2), 0.5)
            .unwrap();
        let trace = integrate(&st, &persistent(&x, 20.0), 20.0, 0.01).unwrap();
        let expected = 1.0 - (-0.5f64 * 20.0).exp();
        assert!((trace.final_state.c[0] - expected).abs() < 1e-9);

        let mut opts = IntegrateOptions::new(20.0, 0.01);
        opts.center_rate = Some(Arc::new(|t| if t < 10.0 { 0.0 } else { 0.5 }));
        let trace = integrate_with(&st, &persistent(&x, 20.0), &opts, |_, _| {}).unwrap();
        let expected = 1.0 - (-0.5f64 * 10.0).exp();
        assert!((trace.final_state.c[0] - expected).abs() < 1e-9);
    }

    #[test]
    fn integrate_rejects_coarse_steps() {
        let x = DVector::from_vec(vec![1.0]);
        let st = NeuronState::new(DVector::from_vec(vec![1.0]), 0.1, 1.0).unwrap();
        let mut s = StimulusSchedule::new(vec![x], 1.0).unwrap();
        s.present(0, 0.0).unwrap();
        assert!(matches!(integrate(&st, &s, 2.0, 0.1), Err(Error::InvalidParameter(_))));
        assert!(integrate(&st, &s, 2.0, 0.05).is_ok());
        assert!(NeuronState::new(DVector::from_vec(vec![1.0]), 0.1, 0.0).is_err());
    }

    #[test]
    fn gamma_and_condition_examples() {
        let w0 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let y = PointCloud::from_rows(&[vec![0.9, 0.0, 0.0], vec![0.0, 0.9, 0.0]]).unwrap();
        let m = PointCloud::from_rows(&[vec![0.0, 0.0, 0.1]]).unwrap();
        let c = check_association(&w0, 0.6, 0.3, &y, &m, false).unwrap();
        assert!((c.gamma - ((1.0 + 0.5f64.sqrt()) / 2.0).sqrt()).abs() < 1e-12);
        assert!(c.all());

        let y = PointCloud::from_rows(&[vec![0.8, 0.6, 0.0], vec![-0.8, 0.6, 0.0]]).unwrap();
        let w0 = DVector::from_vec(vec![0.8, 0.6, 0.0]);
        let w_perp = DVector::from_vec(vec![0.0, 0.0, 1.0]);
        let c = check_association(&w_perp, 0.6, 0.3, &y, &m, false).unwrap();
        assert!((c.gamma - 0.5f64.sqrt()).abs() < 1e-12);
        let c = check_association(&w0, 0.6, 0.3, &y, &m, true).unwrap();
        assert!(c.strict);

        let only = PointCloud::from_rows(&[vec![0.9, 0.1, 0.0]]).unwrap();
        let w = unit(&[0.9, 0.1, 0.0]);
        let c = check_association(&w, 0.6, 0.3, &only, &m, false).unwrap();
        assert!(c.sum_response && c.known_detected && c.mean_detects_relevant);

        let zero_sum = PointCloud::from_rows(&[vec![1.0, 0.0, 0.0], vec![-1.0, 0.0, 0.0]]).unwrap();
        assert!(matches!(
            check_association(&DVector::from_vec(vec![1.0, 0.0, 0.0]), 0.6, 0.3, &zero_sum, &m, false),
            Err(Error::DegenerateDirection(_))
        ));
    }

    #[test]
    fn conditions_match_an_independent_check() {
        let n = 400;
        let y = sample_ball::<f64>(n, 3, Seed(21)).unwrap();
        let m = sample_ball::<f64>(n, 500, Seed(22)).unwrap();
        let x0 = y.row(0);
        let norm0 = x0.iter().map(|v| v * v).sum::<f64>().sqrt();
        let w0: Vec<f64> = x0.iter().map(|v| v / norm0).collect();
        let (theta, theta0) = (0.3, 0.6);
        let ip = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
        let mut sum = vec![0.0; n];
        for r in y.rows() {
            for (s, v) in sum.iter_mut().zip(r) {
                *s += v;
            }
        }
        let sn = ip(&sum, &sum).sqrt();
        let wb: Vec<f64> = sum.iter().map(|v| v / sn).collect();
        let gamma = ((1.0 + ip(&w0, &wb)) / 2.0).sqrt();
        for strict in [false, true] {
            let lim = if strict { gamma * theta } else { theta };
            let c = check_association(&DVector::from_vec(w0.clone()), theta0, theta, &y, &m, strict)
                .unwrap();
            assert_eq!(c.known_detected, ip(&w0, &x0) > theta0);
            assert_eq!(
                c.sum_response,
                y.rows().skip(1).all(|x| ip(&w0, &x) > -(theta0 - theta) / 2.0)
            );
            assert_eq!(c.mean_detects_relevant, y.rows().all(|x| ip(&wb, &x) > theta));
            assert_eq!(c.initial_rejects_background, m.rows().all(|x| ip(&w0, &x) < lim));
            assert_eq!(c.mean_rejects_background, m.rows().all(|x| ip(&wb, &x) < lim));
        }
    }

    #[test]
    fn association_learns_a_pair() {
        // the conditions are sufficient: on draws where they hold, learning must succeed
        let run = (1..20)
            .map(|seed| run_association_experiment(&AssociationConfig { seed, ..Default::default() }).unwrap())
            .find(|r| r.outcome.conditions.all())
            .expect("no draw satisfies the conditions");
        let o = &run.outcome;
        assert!(o.known_detected && o.new_detected, "{o:?}");
        assert!(!o.background_false_positive, "{o:?}");
        assert!(o.crossed_during_learning, "{:?}", o.crossing_times);
        assert!(o.arc_residual < 1e-6, "{}", o.arc_residual);
        assert!(o.arc_min_coefficient > -1e-6);
        assert!(o.margin.unwrap() > 0.0);
        let last = run.trace.w_norm.last().unwrap();
        assert!((last - 1.0).abs() < 1e-6);
    }

    #[test]
    fn single_relevant_stimulus_is_trivially_learned() {
        let cfg = AssociationConfig { relevant: 1, seed: 3, ..Default::default() };
        let o = run_association_experiment(&cfg).unwrap().outcome;
        assert!(o.new_detected && o.margin.is_none() && o.crossing_times.is_empty());
        assert!(!o.background_false_positive);
    }

    #[test]
    fn sweep_is_reproducible() {
        let cfg = AssociationConfig { n: 100, background: 50, ..Default::default() };
        let a = association_sweep(&cfg, &[1, 2, 3]).unwrap();
        let b = association_sweep(&cfg, &[1, 2, 3]).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn norm_law_sign(
            w in proptest::collection::vec(-1.0f64..1.0, 3),
            scale in 0.3f64..2.0,
            x in proptest::collection::vec(-1.0f64..1.0, 3),
        ) {
            let w = DVector::from_vec(w);
            prop_assume!(w.norm() > 0.1);
            let w = &w / w.norm() * scale;
            let x = DVector::from_vec(x);
            let d = rhs(&w, &DVector::zeros(3), &x, 0.0, 1.0, 0.0);
            let y = w.dot(&x);
            let rate = w.dot(&d.w);
            let expected = ramp(y) * y * y * (1.0 - w.norm_squared());
            prop_assert!((rate - expected).abs() < 1e-12);
        }
    }
}
