//! Lattice quantizers, the symbolic (sampled and quantized) model with
//! deterministic cached transitions, parameter feasibility for a target
//! precision, and approximate-bisimulation checking on finite transition
//! systems.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::analysis::DeltaIssCertificate;
use crate::error::{Error, Result};
use crate::systems::{rk4_step, zoh_discretize, DynamicsProvider, LinearSystem};

/// Comparison slack for all lattice-metric thresholds: lattice coordinates
/// are multiples of a binary-inexact pitch, so exact threshold comparisons
/// would drop legitimate neighbors.
pub const DIST_TOL: f64 = 1e-9;

/// Abstraction knobs: sampling period, input/output pitch, state pitch and
/// the target precision of the state matching.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbstractionParams {
    pub tau: f64,
    pub mu: f64,
    pub eta: f64,
    pub epsilon: f64,
}

impl AbstractionParams {
    /// All four parameters strictly positive, as required by every
    /// abstraction construction. Degradation formulas alone tolerate
    /// `mu = 0` and bypass this check.
    pub fn validate_strict(&self) -> Result<()> {
        for (name, v) in [
            ("tau", self.tau),
            ("mu", self.mu),
            ("eta", self.eta),
            ("epsilon", self.epsilon),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParam(format!(
                    "abstraction parameter {name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Uniform per-coordinate quantizer with round-half-up ties.
#[derive(Debug, Clone)]
pub struct Quantizer {
    pitch: f64,
    dim: usize,
}

impl Quantizer {
    pub fn new(pitch: f64, dim: usize) -> Result<Self> {
        if !(pitch > 0.0) || !pitch.is_finite() {
            return Err(Error::InvalidParam(format!(
                "lattice pitch must be positive, got {pitch}"
            )));
        }
        if dim == 0 {
            return Err(Error::InvalidParam("lattice dimension must be positive".into()));
        }
        Ok(Self { pitch, dim })
    }

    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Lattice index of one coordinate, half-ties rounded toward +inf.
    /// A relative slack keeps binary-inexact exact-half values on the upper
    /// side, so `0.25` at pitch `0.1` maps to index 3.
    fn index_of(&self, v: f64) -> i64 {
        let shifted = v / self.pitch + 0.5;
        let mut k = shifted.floor();
        if (shifted - (k + 1.0)).abs() <= 1e-9 * (1.0 + shifted.abs()) {
            k += 1.0;
        }
        k as i64
    }

    pub fn indices(&self, v: &DVector<f64>) -> Result<Vec<i64>> {
        if v.len() != self.dim {
            return Err(Error::Dimension(format!(
                "expected dimension {}, got {}",
                self.dim,
                v.len()
            )));
        }
        if !v.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("quantizer input".into()));
        }
        Ok(v.iter().map(|&x| self.index_of(x)).collect())
    }

    pub fn point(&self, indices: &[i64]) -> DVector<f64> {
        DVector::from_iterator(indices.len(), indices.iter().map(|&k| k as f64 * self.pitch))
    }

    /// Nearest lattice point; the error never exceeds half a pitch in the
    /// sup norm.
    pub fn quantize(&self, v: &DVector<f64>) -> Result<(Vec<i64>, DVector<f64>)> {
        let idx = self.indices(v)?;
        let point = self.point(&idx);
        Ok((idx, point))
    }
}

/// Outcome of the precision feasibility test for abstraction parameters.
#[derive(Debug, Clone, Copy)]
pub struct FeasibilityReport {
    pub feasible: bool,
    /// `epsilon - (c exp(-a tau) epsilon + b mu + eta / 2)`; feasible means
    /// nonnegative. One contraction step from distance `epsilon` plus the
    /// quantization errors must land back within `epsilon`.
    pub margin: f64,
}

/// Checks whether the incremental-stability certificate supports the
/// requested precision at the given lattice pitches and period.
pub fn feasibility_check(
    cert: &DeltaIssCertificate,
    params: &AbstractionParams,
) -> Result<FeasibilityReport> {
    params.validate_strict()?;
    let margin = params.epsilon
        - (cert.c * (-cert.a * params.tau).exp() * params.epsilon
            + cert.b * params.mu
            + params.eta / 2.0);
    Ok(FeasibilityReport {
        feasible: margin >= 0.0,
        margin,
    })
}

/// Smallest sampling period making the precision feasible at fixed pitches,
/// or `None` when no period works because the static quantization errors
/// already exceed the precision.
pub fn solve_min_tau(
    cert: &DeltaIssCertificate,
    epsilon: f64,
    mu: f64,
    eta: f64,
) -> Result<Option<f64>> {
    if !(epsilon > 0.0) || !(mu > 0.0) || !(eta > 0.0) {
        return Err(Error::InvalidParam(
            "precision and pitches must be positive".into(),
        ));
    }
    let slack = epsilon - cert.b * mu - eta / 2.0;
    if slack <= 0.0 {
        return Ok(None);
    }
    Ok(Some((cert.c * epsilon / slack).ln() / cert.a))
}

/// Symbolic model of a continuous system: states on the `eta` lattice,
/// inputs and outputs on the `mu` lattice, transitions through the exact
/// period-`tau` flow quantized to the nearest lattice point.
///
/// The successor map is deterministic and cached by index pair; concurrent
/// readers are safe and recomputation races are benign because the map is a
/// pure function.
pub struct SymbolicModel {
    system: Arc<dyn DynamicsProvider + Send + Sync>,
    params: AbstractionParams,
    state_quant: Quantizer,
    io_quant: Quantizer,
    /// Exact one-period transition for linear dynamics.
    hold_map: Option<LinearSystem>,
    substeps: usize,
    cache: RwLock<HashMap<(Vec<i64>, Vec<i64>), Vec<i64>>>,
}

impl SymbolicModel {
    pub fn new(
        system: Arc<dyn DynamicsProvider + Send + Sync>,
        params: AbstractionParams,
    ) -> Result<Self> {
        params.validate_strict()?;
        let hold_map = match system.as_linear() {
            Some(lin) => Some(zoh_discretize(lin, params.tau)?),
            None => None,
        };
        Ok(Self {
            state_quant: Quantizer::new(params.eta, system.state_dim())?,
            io_quant: Quantizer::new(params.mu, system.input_dim())?,
            system,
            params,
            hold_map,
            substeps: 64,
            cache: RwLock::new(HashMap::new()),
        })
    }

    /// Integration resolution for non-linear dynamics (ignored on the exact
    /// linear path).
    pub fn with_substeps(mut self, substeps: usize) -> Self {
        self.substeps = substeps.max(1);
        self
    }

    pub fn params(&self) -> &AbstractionParams {
        &self.params
    }

    pub fn state_quantizer(&self) -> &Quantizer {
        &self.state_quant
    }

    pub fn io_quantizer(&self) -> &Quantizer {
        &self.io_quant
    }

    pub fn state_dim(&self) -> usize {
        self.system.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.system.input_dim()
    }

    pub fn cached_transitions(&self) -> usize {
        self.cache.read().expect("cache lock poisoned").len()
    }

    pub fn state_point(&self, indices: &[i64]) -> DVector<f64> {
        self.state_quant.point(indices)
    }

    pub fn label_point(&self, indices: &[i64]) -> DVector<f64> {
        self.io_quant.point(indices)
    }

    /// Exact (or finely integrated) state after one period from `x` under
    /// the held input `u`.
    pub fn flow(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        let next = match &self.hold_map {
            Some(d) => d.a() * x + d.b() * u,
            None => {
                let h = self.params.tau / self.substeps as f64;
                let mut state = x.clone();
                for _ in 0..self.substeps {
                    state = rk4_step(self.system.as_ref(), &state, u, h);
                }
                state
            }
        };
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("one-period flow".into()));
        }
        Ok(next)
    }

    /// Deterministic successor on the state lattice: the flow from the
    /// lattice point, quantized back. Cached by `(state, label)` indices.
    pub fn successor(&self, state: &[i64], label: &[i64]) -> Result<Vec<i64>> {
        {
            let cache = self.cache.read().expect("cache lock poisoned");
            if let Some(hit) = cache.get(&(state.to_vec(), label.to_vec())) {
                return Ok(hit.clone());
            }
        }
        let p = self.state_quant.point(state);
        let u = self.io_quant.point(label);
        let next = self.flow(&p, &u)?;
        let (idx, _) = self.state_quant.quantize(&next)?;
        self.cache
            .write()
            .expect("cache lock poisoned")
            .insert((state.to_vec(), label.to_vec()), idx.clone());
        Ok(idx)
    }

    /// Output lattice point for a symbolic state under a lattice input.
    pub fn output(&self, state: &[i64], label: &[i64]) -> Result<Vec<i64>> {
        let x = self.state_quant.point(state);
        let u = self.io_quant.point(label);
        let y = self.system.output(&x, &u);
        if y.len() != self.io_quant.dim() {
            return Err(Error::Dimension(
                "output dimension differs from the input lattice".into(),
            ));
        }
        let (idx, _) = self.io_quant.quantize(&y)?;
        Ok(idx)
    }

    /// Output value before quantization, for monitors that need the real
    /// signal.
    pub fn raw_output(&self, state: &[i64], label: &[i64]) -> DVector<f64> {
        let x = self.state_quant.point(state);
        let u = self.io_quant.point(label);
        self.system.output(&x, &u)
    }
}

/// Finite transition system over embedded states and labels: states and
/// labels carry real-vector embeddings for the sup-norm metrics, transitions
/// are per-(state, label) successor lists, and transitions that would leave
/// the truncation domain are flagged as escaping.
pub struct FiniteTransitionSystem {
    states: Vec<DVector<f64>>,
    labels: Vec<DVector<f64>>,
    outputs: Vec<DVector<f64>>,
    /// successors[s][l]: in-domain successor state ids.
    successors: Vec<Vec<Vec<u32>>>,
    /// escapes[s][l]: some transition target left the domain.
    escapes: Vec<Vec<bool>>,
    /// output_of[s][l]: output id, defined wherever the pair is enabled.
    output_of: Vec<Vec<Option<u32>>>,
}

/// Hard cap on truncated-system sizes.
pub const MAX_TS_STATES: usize = 10_000_000;

impl FiniteTransitionSystem {
    pub fn new(
        states: Vec<DVector<f64>>,
        labels: Vec<DVector<f64>>,
        outputs: Vec<DVector<f64>>,
        successors: Vec<Vec<Vec<u32>>>,
        escapes: Vec<Vec<bool>>,
        output_of: Vec<Vec<Option<u32>>>,
    ) -> Result<Self> {
        let ns = states.len();
        let nl = labels.len();
        if ns == 0 || nl == 0 {
            return Err(Error::InvalidParam(
                "transition system needs at least one state and one label".into(),
            ));
        }
        if ns > MAX_TS_STATES {
            return Err(Error::SizeLimit {
                states: ns,
                limit: MAX_TS_STATES,
            });
        }
        if successors.len() != ns || escapes.len() != ns || output_of.len() != ns {
            return Err(Error::Dimension("per-state table length mismatch".into()));
        }
        for s in 0..ns {
            if successors[s].len() != nl || escapes[s].len() != nl || output_of[s].len() != nl {
                return Err(Error::Dimension("per-label table length mismatch".into()));
            }
            for l in 0..nl {
                for &t in &successors[s][l] {
                    if t as usize >= ns {
                        return Err(Error::InvalidParam(format!(
                            "transition ({s}, {l}) targets missing state {t}"
                        )));
                    }
                }
                let enabled = !successors[s][l].is_empty() || escapes[s][l];
                if enabled {
                    match output_of[s][l] {
                        Some(o) if (o as usize) < outputs.len() => {}
                        _ => {
                            return Err(Error::InvalidParam(format!(
                                "enabled pair ({s}, {l}) lacks a valid output"
                            )))
                        }
                    }
                }
            }
        }
        Ok(Self {
            states,
            labels,
            outputs,
            successors,
            escapes,
            output_of,
        })
    }

    pub fn state_count(&self) -> usize {
        self.states.len()
    }

    pub fn label_count(&self) -> usize {
        self.labels.len()
    }

    pub fn output_count(&self) -> usize {
        self.outputs.len()
    }

    pub fn state_embedding(&self, i: usize) -> &DVector<f64> {
        &self.states[i]
    }

    pub fn label_embedding(&self, l: usize) -> &DVector<f64> {
        &self.labels[l]
    }

    pub fn output_embedding(&self, o: usize) -> &DVector<f64> {
        &self.outputs[o]
    }

    pub fn successors(&self, state: usize, label: usize) -> &[u32] {
        &self.successors[state][label]
    }

    pub fn escapes(&self, state: usize, label: usize) -> bool {
        self.escapes[state][label]
    }

    pub fn output_id(&self, state: usize, label: usize) -> Option<u32> {
        self.output_of[state][label]
    }

    pub fn transition_count(&self) -> usize {
        self.successors
            .iter()
            .map(|row| row.iter().map(|s| s.len()).sum::<usize>())
            .sum()
    }

    /// All edges as (state, label, successor, output); escaping targets are
    /// reported with `successor = None`.
    pub fn edges(&self) -> impl Iterator<Item = (u32, u32, Option<u32>, Option<u32>)> + '_ {
        (0..self.states.len()).flat_map(move |s| {
            (0..self.labels.len()).flat_map(move |l| {
                let out = self.output_of[s][l];
                let concrete = self.successors[s][l]
                    .iter()
                    .map(move |&t| (s as u32, l as u32, Some(t), out));
                let escape = if self.escapes[s][l] {
                    Some((s as u32, l as u32, None, out))
                } else {
                    None
                };
                concrete.chain(escape)
            })
        })
    }
}

/// Per-dimension closed interval box.
pub type Box_ = Vec<(f64, f64)>;

fn lattice_axis(lo: f64, hi: f64, pitch: f64) -> Result<(i64, i64)> {
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::NonFinite("truncation box".into()));
    }
    if hi < lo {
        return Err(Error::InvalidParam(format!("empty box axis [{lo}, {hi}]")));
    }
    let k_lo = (lo / pitch).round();
    let k_hi = (hi / pitch).round();
    if (k_lo * pitch - lo).abs() > 1e-9 * (1.0 + lo.abs())
        || (k_hi * pitch - hi).abs() > 1e-9 * (1.0 + hi.abs())
    {
        return Err(Error::InvalidParam(format!(
            "box axis [{lo}, {hi}] is not aligned to pitch {pitch}"
        )));
    }
    Ok((k_lo as i64, k_hi as i64))
}

/// Enumerates every index vector of the lattice box.
fn enumerate_lattice(axes: &[(i64, i64)]) -> Vec<Vec<i64>> {
    let mut out = vec![Vec::new()];
    for &(lo, hi) in axes {
        let mut next = Vec::with_capacity(out.len() * (hi - lo + 1) as usize);
        for prefix in &out {
            for k in lo..=hi {
                let mut v = prefix.clone();
                v.push(k);
                next.push(v);
            }
        }
        out = next;
    }
    out
}

fn in_axes(idx: &[i64], axes: &[(i64, i64)]) -> bool {
    idx.iter()
        .zip(axes)
        .all(|(&k, &(lo, hi))| k >= lo && k <= hi)
}

/// Lattice index range covering `[center - half, center + half]` with the
/// standard comparison slack.
fn covering_range(center: f64, half: f64, pitch: f64) -> (i64, i64) {
    let lo = ((center - half) / pitch - DIST_TOL).ceil() as i64;
    let hi = ((center + half) / pitch + DIST_TOL).floor() as i64;
    (lo, hi)
}

struct TruncationFrame {
    state_axes: Vec<(i64, i64)>,
    state_index: HashMap<Vec<i64>, u32>,
    state_ids: Vec<Vec<i64>>,
    label_ids: Vec<Vec<i64>>,
}

fn truncation_frame(
    sm: &SymbolicModel,
    state_box: &Box_,
    input_box: &Box_,
) -> Result<TruncationFrame> {
    if state_box.len() != sm.state_dim() {
        return Err(Error::Dimension(format!(
            "state box has {} axes, state dimension is {}",
            state_box.len(),
            sm.state_dim()
        )));
    }
    if input_box.len() != sm.input_dim() {
        return Err(Error::Dimension(format!(
            "input box has {} axes, input dimension is {}",
            input_box.len(),
            sm.input_dim()
        )));
    }
    let eta = sm.params().eta;
    let mu = sm.params().mu;
    let state_axes = state_box
        .iter()
        .map(|&(lo, hi)| lattice_axis(lo, hi, eta))
        .collect::<Result<Vec<_>>>()?;
    let label_axes = input_box
        .iter()
        .map(|&(lo, hi)| lattice_axis(lo, hi, mu))
        .collect::<Result<Vec<_>>>()?;
    let mut count: usize = 1;
    for &(lo, hi) in &state_axes {
        count = count.saturating_mul((hi - lo + 1) as usize);
        if count > MAX_TS_STATES {
            return Err(Error::SizeLimit {
                states: count,
                limit: MAX_TS_STATES,
            });
        }
    }
    let state_ids = enumerate_lattice(&state_axes);
    let label_ids = enumerate_lattice(&label_axes);
    let state_index: HashMap<Vec<i64>, u32> = state_ids
        .iter()
        .enumerate()
        .map(|(i, v)| (v.clone(), i as u32))
        .collect();
    Ok(TruncationFrame {
        state_axes,
        state_index,
        state_ids,
        label_ids,
    })
}

fn build_ts(
    sm: &SymbolicModel,
    state_box: &Box_,
    input_box: &Box_,
    relaxed: bool,
) -> Result<FiniteTransitionSystem> {
    let frame = truncation_frame(sm, state_box, input_box)?;
    let ns = frame.state_ids.len();
    let nl = frame.label_ids.len();
    let eta = sm.params().eta;

    let mut outputs: Vec<DVector<f64>> = Vec::new();
    let mut output_index: HashMap<Vec<i64>, u32> = HashMap::new();
    let mut successors = vec![vec![Vec::new(); nl]; ns];
    let mut escapes = vec![vec![false; nl]; ns];
    let mut output_of = vec![vec![None; nl]; ns];

    for (s, sid) in frame.state_ids.iter().enumerate() {
        for (l, lid) in frame.label_ids.iter().enumerate() {
            let out_idx = sm.output(sid, lid)?;
            let oid = *output_index.entry(out_idx.clone()).or_insert_with(|| {
                outputs.push(sm.io_quantizer().point(&out_idx));
                (outputs.len() - 1) as u32
            });
            output_of[s][l] = Some(oid);

            if relaxed {
                let p = sm.state_point(sid);
                let u = sm.label_point(lid);
                let flow = sm.flow(&p, &u)?;
                let ranges: Vec<(i64, i64)> = flow
                    .iter()
                    .map(|&f| covering_range(f, eta / 2.0, eta))
                    .collect();
                for cand in enumerate_lattice(&ranges) {
                    if in_axes(&cand, &frame.state_axes) {
                        successors[s][l].push(frame.state_index[&cand]);
                    } else {
                        escapes[s][l] = true;
                    }
                }
            } else {
                let succ = sm.successor(sid, lid)?;
                match frame.state_index.get(&succ) {
                    Some(&t) => successors[s][l].push(t),
                    None => escapes[s][l] = true,
                }
            }
        }
    }

    let states = frame
        .state_ids
        .iter()
        .map(|sid| sm.state_point(sid))
        .collect();
    let labels = frame
        .label_ids
        .iter()
        .map(|lid| sm.label_point(lid))
        .collect();
    FiniteTransitionSystem::new(states, labels, outputs, successors, escapes, output_of)
}

/// Truncates the symbolic model to lattice boxes: the deterministic
/// nearest-point successor, one transition per (state, label). Successors
/// outside the box become escaping transitions.
pub fn build_truncated_ts(
    sm: &SymbolicModel,
    state_box: &Box_,
    input_box: &Box_,
) -> Result<FiniteTransitionSystem> {
    build_ts(sm, state_box, input_box, false)
}

/// Same truncation for the lattice-restricted sampled system: every lattice
/// point within half a state pitch of the exact flow is a successor, so the
/// deterministic abstraction is one selection out of this relation.
pub fn build_relaxed_sampled_ts(
    sm: &SymbolicModel,
    state_box: &Box_,
    input_box: &Box_,
) -> Result<FiniteTransitionSystem> {
    build_ts(sm, state_box, input_box, true)
}

/// Dense bit matrix for state-pair relations.
pub struct BitMatrix {
    rows: usize,
    cols: usize,
    words_per_row: usize,
    bits: Vec<u64>,
}

impl BitMatrix {
    pub fn new(rows: usize, cols: usize) -> Self {
        let words_per_row = cols.div_ceil(64);
        Self {
            rows,
            cols,
            words_per_row,
            bits: vec![0; rows * words_per_row],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.bits[r * self.words_per_row + c / 64] & (1u64 << (c % 64)) != 0
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize) {
        self.bits[r * self.words_per_row + c / 64] |= 1u64 << (c % 64);
    }

    #[inline]
    pub fn clear(&mut self, r: usize, c: usize) {
        self.bits[r * self.words_per_row + c / 64] &= !(1u64 << (c % 64));
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Set column indices of one row.
    pub fn row_indices(&self, r: usize) -> Vec<usize> {
        let mut out = Vec::new();
        for w in 0..self.words_per_row {
            let mut word = self.bits[r * self.words_per_row + w];
            while word != 0 {
                let bit = word.trailing_zeros() as usize;
                out.push(w * 64 + bit);
                word &= word - 1;
            }
        }
        out
    }
}

/// Greatest approximate-bisimulation relation between two finite transition
/// systems, with the totality report deciding bisimilarity.
pub struct BisimRelation {
    pub epsilon: f64,
    pub mu: f64,
    matrix: BitMatrix,
    /// Every state of the first system is related to some state of the
    /// second.
    pub left_total: bool,
    pub right_total: bool,
    pub bisimilar: bool,
}

impl BisimRelation {
    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.matrix.get(i, j)
    }

    pub fn pair_count(&self) -> usize {
        self.matrix.count_ones()
    }

    pub fn matrix(&self) -> &BitMatrix {
        &self.matrix
    }

    pub fn pairs(&self) -> Vec<(u32, u32)> {
        let mut out = Vec::new();
        for i in 0..self.matrix.rows() {
            for j in self.matrix.row_indices(i) {
                out.push((i as u32, j as u32));
            }
        }
        out
    }
}

fn sup_distance(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax()
}

/// For each label of `from`, the labels of `to` within `mu` (plus slack) in
/// the sup metric.
fn label_proximity(
    from: &FiniteTransitionSystem,
    to: &FiniteTransitionSystem,
    mu: f64,
) -> Vec<Vec<u32>> {
    (0..from.label_count())
        .map(|a| {
            (0..to.label_count())
                .filter(|&b| {
                    sup_distance(from.label_embedding(a), to.label_embedding(b)) <= mu + DIST_TOL
                })
                .map(|b| b as u32)
                .collect()
        })
        .collect()
}

/// One direction of the transition-matching condition: every enabled
/// transition of `t1` from `i` must be answered by `t2` from `j` under a
/// label within `mu`, with related targets (escapes match escapes).
fn matches_direction(
    t1: &FiniteTransitionSystem,
    t2: &FiniteTransitionSystem,
    prox: &[Vec<u32>],
    rel: impl Fn(usize, usize) -> bool,
    i: usize,
    j: usize,
) -> bool {
    for a in 0..t1.label_count() {
        if t1.escapes(i, a) {
            let ok = prox[a].iter().any(|&b| t2.escapes(j, b as usize));
            if !ok {
                return false;
            }
        }
        for &s in t1.successors(i, a) {
            let ok = prox[a].iter().any(|&b| {
                t2.successors(j, b as usize)
                    .iter()
                    .any(|&t| rel(s as usize, t as usize))
            });
            if !ok {
                return false;
            }
        }
    }
    true
}

/// Computes the greatest relation satisfying the three approximate
/// bisimulation conditions: pairs within `epsilon` in state space whose
/// transitions mutually match within `mu` in label space, recursively.
///
/// Starts from all pairs within `epsilon` and removes violating pairs until
/// a fixed point; removal during the sweep is sound because the conditions
/// are monotone in the relation.
pub fn check_eps_mu_bisimulation(
    t1: &FiniteTransitionSystem,
    t2: &FiniteTransitionSystem,
    epsilon: f64,
    mu: f64,
) -> Result<BisimRelation> {
    if t1.state_embedding(0).len() != t2.state_embedding(0).len() {
        return Err(Error::Dimension("state embeddings differ in dimension".into()));
    }
    if t1.label_embedding(0).len() != t2.label_embedding(0).len() {
        return Err(Error::Dimension("label embeddings differ in dimension".into()));
    }
    if !(epsilon >= 0.0) || !(mu >= 0.0) {
        return Err(Error::InvalidParam("metric thresholds must be nonnegative".into()));
    }
    let n1 = t1.state_count();
    let n2 = t2.state_count();
    let mut matrix = BitMatrix::new(n1, n2);
    for i in 0..n1 {
        for j in 0..n2 {
            if sup_distance(t1.state_embedding(i), t2.state_embedding(j)) <= epsilon + DIST_TOL {
                matrix.set(i, j);
            }
        }
    }
    let prox12 = label_proximity(t1, t2, mu);
    let prox21 = label_proximity(t2, t1, mu);

    loop {
        let mut changed = false;
        for i in 0..n1 {
            for j in matrix.row_indices(i) {
                let fwd =
                    matches_direction(t1, t2, &prox12, |s, t| matrix.get(s, t), i, j);
                let bwd = fwd
                    && matches_direction(t2, t1, &prox21, |s, t| matrix.get(t, s), j, i);
                if !(fwd && bwd) {
                    matrix.clear(i, j);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }

    let mut left = vec![false; n1];
    let mut right = vec![false; n2];
    for i in 0..n1 {
        for j in matrix.row_indices(i) {
            left[i] = true;
            right[j] = true;
        }
    }
    let left_total = left.iter().all(|&b| b);
    let right_total = right.iter().all(|&b| b);
    Ok(BisimRelation {
        epsilon,
        mu,
        bisimilar: left_total && right_total,
        left_total,
        right_total,
        matrix,
    })
}

/// Re-verifies that a relation is an approximate bisimulation by direct
/// enumeration of all three conditions over its pairs.
pub fn is_bisimulation(
    t1: &FiniteTransitionSystem,
    t2: &FiniteTransitionSystem,
    rel: &BisimRelation,
) -> bool {
    let prox12 = label_proximity(t1, t2, rel.mu);
    let prox21 = label_proximity(t2, t1, rel.mu);
    for i in 0..t1.state_count() {
        for j in rel.matrix().row_indices(i) {
            if sup_distance(t1.state_embedding(i), t2.state_embedding(j))
                > rel.epsilon + DIST_TOL
            {
                return false;
            }
            if !matches_direction(t1, t2, &prox12, |s, t| rel.contains(s, t), i, j) {
                return false;
            }
            if !matches_direction(t2, t1, &prox21, |s, t| rel.contains(t, s), j, i) {
                return false;
            }
        }
    }
    true
}

/// Worst deviation seen in randomized trajectory-matching runs, with a
/// counterexample when the precision was exceeded.
#[derive(Debug, Clone)]
pub struct TraceCheckReport {
    pub max_deviation: f64,
    pub counterexample: Option<CounterexampleTrace>,
}

/// A concrete run violating the precision claim.
#[derive(Debug, Clone)]
pub struct CounterexampleTrace {
    pub x0: DVector<f64>,
    pub symbolic_x0: Vec<i64>,
    pub inputs: Vec<DVector<f64>>,
    pub step: usize,
    pub deviation: f64,
}

/// Spot check of the precision guarantee on random trajectory pairs: the
/// exact sampled trajectory under real inputs versus the symbolic trajectory
/// under the quantized inputs, from initial states within `epsilon`.
///
/// Soundness requires a passing [`feasibility_check`]; with infeasible
/// parameters this returns the counterexample instead of erroring.
pub fn empirical_bisim_trace_check(
    sys: &LinearSystem,
    sm: &SymbolicModel,
    epsilon: f64,
    horizon: usize,
    trials: usize,
    seed: u64,
) -> Result<TraceCheckReport> {
    if sys.state_dim() != sm.state_dim() || sys.io_dim() != sm.input_dim() {
        return Err(Error::Dimension(
            "system dimensions differ from the symbolic model".into(),
        ));
    }
    let d = zoh_discretize(sys, sm.params().tau)?;
    let n = sys.state_dim();
    let m = sys.io_dim();
    let eta = sm.params().eta;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_deviation = 0.0_f64;
    for _ in 0..trials.max(1) {
        let lattice0: Vec<i64> = (0..n)
            .map(|_| rng.random_range(-(2.0 / eta) as i64..=(2.0 / eta) as i64))
            .collect();
        let offset = DVector::from_fn(n, |_, _| rng.random_range(-epsilon..epsilon));
        let mut x = sm.state_point(&lattice0) + offset;
        let x0 = x.clone();
        let mut sym = lattice0.clone();
        let mut inputs = Vec::with_capacity(horizon);
        for k in 0..horizon {
            let u = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
            let (u_idx, _) = sm.io_quantizer().quantize(&u)?;
            x = d.a() * &x + d.b() * &u;
            sym = sm.successor(&sym, &u_idx)?;
            inputs.push(u.clone());
            let deviation = sup_distance(&x, &sm.state_point(&sym));
            max_deviation = max_deviation.max(deviation);
            if deviation > epsilon + DIST_TOL {
                return Ok(TraceCheckReport {
                    max_deviation,
                    counterexample: Some(CounterexampleTrace {
                        x0,
                        symbolic_x0: lattice0,
                        inputs,
                        step: k,
                        deviation,
                    }),
                });
            }
        }
    }
    Ok(TraceCheckReport {
        max_deviation,
        counterexample: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn cruise_params() -> AbstractionParams {
        AbstractionParams {
            tau: 0.3,
            mu: 0.1,
            eta: 0.1,
            epsilon: 0.9,
        }
    }

    fn controller() -> LinearSystem {
        LinearSystem::from_rows(
            2,
            1,
            &[-1.0, -1.0, 1.0, -2.0],
            &[0.0, 1.0],
            &[-0.5, -0.5],
            &[2.0],
        )
        .unwrap()
    }

    fn plant() -> LinearSystem {
        LinearSystem::from_rows(1, 1, &[-0.01], &[1.0], &[1.0], &[0.0]).unwrap()
    }

    fn vec1(x: f64) -> DVector<f64> {
        DVector::from_vec(vec![x])
    }

    #[test]
    fn quantizer_examples() {
        let q = Quantizer::new(0.1, 1).unwrap();
        assert_eq!(q.indices(&vec1(0.0)).unwrap(), vec![0]);
        assert_eq!(q.indices(&vec1(0.26)).unwrap(), vec![3]);
        // exact half rounds up
        assert_eq!(q.indices(&vec1(0.25)).unwrap(), vec![3]);
        assert_eq!(q.indices(&vec1(-0.25)).unwrap(), vec![-2]);
        assert_eq!(q.indices(&vec1(0.24)).unwrap(), vec![2]);
        assert!(q.indices(&vec1(f64::NAN)).is_err());
    }

    #[test]
    fn quantizer_handles_inexact_lattice_points() {
        let q = Quantizer::new(0.1, 1).unwrap();
        for k in -50..50_i64 {
            let p = q.point(&[k]);
            assert_eq!(q.indices(&p).unwrap(), vec![k], "k = {k}");
        }
    }

    #[test]
    fn feasibility_frozen_margin() {
        let cert = DeltaIssCertificate::new(1.0, 1.0, 0.1).unwrap();
        let r = feasibility_check(&cert, &cruise_params()).unwrap();
        assert!(r.feasible);
        assert!((r.margin - 0.17327).abs() <= 1e-5);
        assert_relative_eq!(r.margin, 0.17326360138645387, max_relative = 1e-12);
    }

    #[test]
    fn feasibility_boundary_is_zero() {
        let cert = DeltaIssCertificate::new(1.2, 0.8, 0.3).unwrap();
        let (eps, tau, mu) = (0.5, 0.4, 0.05);
        let eta = 2.0 * eps * (1.0 - cert.c * (-cert.a * tau).exp()) - 2.0 * cert.b * mu;
        assert!(eta > 0.0);
        let r = feasibility_check(
            &cert,
            &AbstractionParams {
                tau,
                mu,
                eta,
                epsilon: eps,
            },
        )
        .unwrap();
        assert!(r.margin.abs() <= 1e-12);
        assert!(r.feasible);
    }

    #[test]
    fn min_period_closed_form() {
        let cert = DeltaIssCertificate::new(1.0, 1.0, 0.1).unwrap();
        let t = solve_min_tau(&cert, 0.9, 0.1, 0.1).unwrap().unwrap();
        assert_relative_eq!(t, 0.06899287148695143, max_relative = 1e-12);
        let r = feasibility_check(
            &cert,
            &AbstractionParams {
                tau: t,
                mu: 0.1,
                eta: 0.1,
                epsilon: 0.9,
            },
        )
        .unwrap();
        assert!(r.margin.abs() <= 1e-12);
    }

    #[test]
    fn min_period_infeasible_when_static_errors_dominate() {
        let cert = DeltaIssCertificate::new(1.0, 1.0, 10.0).unwrap();
        assert!(solve_min_tau(&cert, 0.9, 0.1, 0.1).unwrap().is_none());
    }

    #[test]
    fn symbolic_successor_scalar_plant() {
        let sm = SymbolicModel::new(Arc::new(plant()), cruise_params()).unwrap();
        // flow from 3.1 under u = 0 is 3.0907..., nearest tenth is 3.1
        assert_eq!(sm.successor(&[31], &[0]).unwrap(), vec![31]);
        // under u = -1 the flow is 2.7912, nearest tenth is 2.8
        assert_eq!(sm.successor(&[31], &[-10]).unwrap(), vec![28]);
        assert_eq!(sm.cached_transitions(), 2);
        // cached answer is identical
        assert_eq!(sm.successor(&[31], &[-10]).unwrap(), vec![28]);
        assert_eq!(sm.cached_transitions(), 2);
    }

    #[test]
    fn symbolic_output_reference_controller() {
        let sm = SymbolicModel::new(Arc::new(controller()), cruise_params()).unwrap();
        let y = sm.output(&[14, -30], &[0]).unwrap();
        assert_eq!(y, vec![8]);
        assert_relative_eq!(sm.raw_output(&[14, -30], &[0])[0], 0.8, max_relative = 1e-12);
    }

    #[test]
    fn frozen_dynamics_self_loops() {
        let sys = LinearSystem::from_rows(1, 1, &[0.0], &[0.0], &[1.0], &[0.0]).unwrap();
        let sm = SymbolicModel::new(Arc::new(sys), cruise_params()).unwrap();
        assert_eq!(sm.successor(&[7], &[3]).unwrap(), vec![7]);
        let ts = build_truncated_ts(
            &sm,
            &vec![(0.7, 0.7)],
            &vec![(-0.2, 0.2)],
        )
        .unwrap();
        assert_eq!(ts.state_count(), 1);
        assert_eq!(ts.label_count(), 5);
        assert_eq!(ts.transition_count(), 5);
        for l in 0..5 {
            assert_eq!(ts.successors(0, l), &[0]);
            assert!(!ts.escapes(0, l));
        }
    }

    #[test]
    fn truncation_marks_escapes() {
        // unit-gain integrator-like map pushed out of a tight box
        let sys = LinearSystem::from_rows(1, 1, &[0.0], &[1.0], &[1.0], &[0.0]).unwrap();
        let sm = SymbolicModel::new(
            Arc::new(sys),
            AbstractionParams {
                tau: 1.0,
                mu: 0.1,
                eta: 0.1,
                epsilon: 0.9,
            },
        )
        .unwrap();
        let ts = build_truncated_ts(&sm, &vec![(-0.1, 0.1)], &vec![(-0.5, 0.5)]).unwrap();
        let mut saw_escape = false;
        for s in 0..ts.state_count() {
            for l in 0..ts.label_count() {
                saw_escape |= ts.escapes(s, l);
            }
        }
        assert!(saw_escape);
    }

    #[test]
    fn truncation_rejects_misaligned_and_oversized_boxes() {
        let sm = SymbolicModel::new(Arc::new(plant()), cruise_params()).unwrap();
        assert!(build_truncated_ts(&sm, &vec![(-0.05, 0.1)], &vec![(0.0, 0.0)]).is_err());
        assert!(build_truncated_ts(&sm, &vec![(0.1, -0.1)], &vec![(0.0, 0.0)]).is_err());
        let sm2 = SymbolicModel::new(
            Arc::new(controller()),
            AbstractionParams {
                tau: 0.3,
                mu: 0.1,
                eta: 1e-3,
                epsilon: 0.9,
            },
        )
        .unwrap();
        assert!(matches!(
            build_truncated_ts(&sm2, &vec![(-5.0, 5.0), (-5.0, 5.0)], &vec![(0.0, 0.0)]),
            Err(Error::SizeLimit { .. })
        ));
    }

    #[test]
    fn relaxed_system_contains_deterministic_selection() {
        let sm = SymbolicModel::new(Arc::new(controller()), cruise_params()).unwrap();
        let sbox = vec![(-2.0, 2.0), (-2.0, 2.0)];
        let ibox = vec![(-1.0, 1.0)];
        let det = build_truncated_ts(&sm, &sbox, &ibox).unwrap();
        let rel = build_relaxed_sampled_ts(&sm, &sbox, &ibox).unwrap();
        assert_eq!(det.state_count(), rel.state_count());
        for s in 0..det.state_count() {
            for l in 0..det.label_count() {
                for &t in det.successors(s, l) {
                    assert!(
                        rel.successors(s, l).contains(&t),
                        "deterministic edge ({s},{l})->{t} missing from relaxation"
                    );
                }
            }
        }
    }

    #[test]
    fn bisim_identical_systems_is_reflexive() {
        let sm = SymbolicModel::new(Arc::new(controller()), cruise_params()).unwrap();
        let sbox = vec![(-0.5, 0.5), (-0.5, 0.5)];
        let ibox = vec![(-0.5, 0.5)];
        let t1 = build_truncated_ts(&sm, &sbox, &ibox).unwrap();
        let t2 = build_truncated_ts(&sm, &sbox, &ibox).unwrap();
        let rel = check_eps_mu_bisimulation(&t1, &t2, 0.9, 0.1).unwrap();
        for i in 0..t1.state_count() {
            assert!(rel.contains(i, i), "diagonal pair {i} missing");
        }
        assert!(rel.bisimilar);
        assert!(is_bisimulation(&t1, &t2, &rel));
    }

    #[test]
    fn bisim_label_mismatch_empties_relation() {
        // two one-state systems whose only labels are three pitches apart
        let mk = |label: f64| {
            FiniteTransitionSystem::new(
                vec![DVector::from_vec(vec![0.0])],
                vec![DVector::from_vec(vec![label])],
                vec![DVector::from_vec(vec![0.0])],
                vec![vec![vec![0]]],
                vec![vec![false]],
                vec![vec![Some(0)]],
            )
            .unwrap()
        };
        let t1 = mk(0.0);
        let t2 = mk(0.3);
        let rel = check_eps_mu_bisimulation(&t1, &t2, 0.9, 0.1).unwrap();
        assert_eq!(rel.pair_count(), 0);
        assert!(!rel.bisimilar);
    }

    #[test]
    fn bisim_distant_states_never_enter_relation() {
        // identical two-state chains, embeddings offset by twice epsilon
        let mk = |offset: f64| {
            FiniteTransitionSystem::new(
                vec![
                    DVector::from_vec(vec![offset]),
                    DVector::from_vec(vec![offset + 1.0]),
                ],
                vec![DVector::from_vec(vec![0.0])],
                vec![DVector::from_vec(vec![0.0])],
                vec![vec![vec![1]], vec![vec![1]]],
                vec![vec![false], vec![false]],
                vec![vec![Some(0)], vec![Some(0)]],
            )
            .unwrap()
        };
        let t1 = mk(0.0);
        let t2 = mk(0.4);
        let rel = check_eps_mu_bisimulation(&t1, &t2, 0.2, 0.1).unwrap();
        assert_eq!(rel.pair_count(), 0);
    }

    #[test]
    fn bisim_refinement_cascades() {
        // a pair that is close in state space but leads to a label mismatch
        // after one transition must be removed by the recursion
        let mk = |second_label: f64| {
            FiniteTransitionSystem::new(
                vec![
                    DVector::from_vec(vec![0.0]),
                    DVector::from_vec(vec![0.05]),
                ],
                vec![
                    DVector::from_vec(vec![0.0]),
                    DVector::from_vec(vec![second_label]),
                ],
                vec![DVector::from_vec(vec![0.0])],
                // state 0 steps to state 1 under label 0; state 1 self-loops
                // under the second label
                vec![vec![vec![1], vec![]], vec![vec![], vec![1]]],
                vec![vec![false, false], vec![false, false]],
                vec![vec![Some(0), None], vec![None, Some(0)]],
            )
            .unwrap()
        };
        let t1 = mk(0.0);
        let t2 = mk(0.5);
        let rel = check_eps_mu_bisimulation(&t1, &t2, 0.1, 0.1).unwrap();
        // (1,1) dies on the label mismatch, which kills (0,0) recursively
        assert_eq!(rel.pair_count(), 0);
    }

    #[test]
    fn empirical_trace_check_reference_controller() {
        let sm = SymbolicModel::new(Arc::new(controller()), cruise_params()).unwrap();
        let report =
            empirical_bisim_trace_check(&controller(), &sm, 0.9, 60, 60, 42).unwrap();
        assert!(report.counterexample.is_none(), "{report:?}");
        assert!(report.max_deviation <= 0.9 + DIST_TOL);
    }

    #[test]
    fn empirical_trace_check_finds_violation_with_huge_state_pitch() {
        // near-integrator dynamics quantized at a pitch far above the
        // precision: the symbolic state pins to the origin while the real
        // trajectory walks away
        let params = AbstractionParams {
            tau: 0.3,
            mu: 0.1,
            eta: 8.0,
            epsilon: 0.9,
        };
        let sm = SymbolicModel::new(Arc::new(plant()), params).unwrap();
        let report = empirical_bisim_trace_check(&plant(), &sm, 0.9, 80, 40, 42).unwrap();
        assert!(report.counterexample.is_some());
        assert!(report.max_deviation > 0.9);
    }

    #[test]
    fn relation_pairs_roundtrip() {
        let mut m = BitMatrix::new(3, 70);
        m.set(0, 0);
        m.set(1, 64);
        m.set(2, 69);
        assert_eq!(m.count_ones(), 3);
        assert_eq!(m.row_indices(1), vec![64]);
        m.clear(1, 64);
        assert_eq!(m.count_ones(), 2);
        assert!(!m.get(1, 64));
    }

    proptest! {
        #[test]
        fn quantizer_error_bound_and_idempotence(
            v in proptest::collection::vec(-100.0..100.0f64, 1..4),
            pitch in 0.01..2.0f64,
        ) {
            let q = Quantizer::new(pitch, v.len()).unwrap();
            let x = DVector::from_vec(v);
            let (idx, point) = q.quantize(&x).unwrap();
            prop_assert!((&point - &x).amax() <= pitch / 2.0 * (1.0 + 1e-9));
            let (idx2, _) = q.quantize(&point).unwrap();
            prop_assert_eq!(idx, idx2);
        }

        #[test]
        fn feasibility_margin_monotonicity(
            c in 1.0..3.0f64,
            a in 0.1..3.0f64,
            b in 0.0..2.0f64,
            tau in 0.01..2.0f64,
            mu in 0.001..0.5f64,
            eta in 0.001..0.5f64,
            eps in 0.1..2.0f64,
            bump in 1.01..2.0f64,
        ) {
            let cert = DeltaIssCertificate::new(c, a, b).unwrap();
            let base = feasibility_check(&cert, &AbstractionParams { tau, mu, eta, epsilon: eps }).unwrap();
            let worse_mu = feasibility_check(&cert, &AbstractionParams { tau, mu: mu * bump, eta, epsilon: eps }).unwrap();
            let worse_eta = feasibility_check(&cert, &AbstractionParams { tau, mu, eta: eta * bump, epsilon: eps }).unwrap();
            let better_tau = feasibility_check(&cert, &AbstractionParams { tau: tau * bump, mu, eta, epsilon: eps }).unwrap();
            prop_assert!(worse_mu.margin <= base.margin + 1e-12);
            prop_assert!(worse_eta.margin <= base.margin + 1e-12);
            prop_assert!(better_tau.margin >= base.margin - 1e-12);
        }

        #[test]
        fn successor_stays_within_half_pitch_of_flow(
            a11 in -2.0..0.5f64,
            a22 in -2.0..0.5f64,
            cross in -1.0..1.0f64,
            b1 in -1.0..1.0f64,
            b2 in -1.0..1.0f64,
            p1 in -20..20i64,
            p2 in -20..20i64,
            u in -10..10i64,
            eta in 0.05..0.5f64,
        ) {
            let sys = LinearSystem::new(
                DMatrix::from_row_slice(2, 2, &[a11, cross, -cross, a22]),
                DMatrix::from_row_slice(2, 1, &[b1, b2]),
                DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
                DMatrix::from_row_slice(1, 1, &[0.0]),
            ).unwrap();
            let params = AbstractionParams { tau: 0.25, mu: 0.1, eta, epsilon: 1.0 };
            let sm = SymbolicModel::new(Arc::new(sys), params).unwrap();
            let state = vec![p1, p2];
            let label = vec![u];
            let succ = sm.successor(&state, &label).unwrap();
            let flow = sm.flow(&sm.state_point(&state), &sm.label_point(&label)).unwrap();
            let gap = (&flow - sm.state_point(&succ)).amax();
            prop_assert!(gap <= eta / 2.0 * (1.0 + 1e-9) + 1e-12, "gap {gap} vs {}", eta / 2.0);
        }
    }
}
