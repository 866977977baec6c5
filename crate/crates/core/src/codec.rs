//! Adaptive zoom quantizer: encoder, synchronized decoder and
//! certainty-equivalent controller, plus finite-memory coders.
//!
//! Every coordinate is quantized by a `K`-level mid-rise uniform quantizer
//! with one shared bin size `Delta`. If any coordinate falls outside
//! `[-K Delta / 2, K Delta / 2]` a dedicated overflow symbol is sent instead,
//! so a state uses one of `K^N + 1` channel symbols. After each step both
//! sides rescale `Delta`:
//!
//! | condition                         | factor          |
//! |-----------------------------------|-----------------|
//! | overflow (or erasure)             | `2^(n_out s)`   |
//! | in range and `Delta > L`          | `2^(-n_in s)`   |
//! | in range and `Delta <= L`         | `1`             |
//!
//! `Delta` is stored as an integer exponent `g` with `Delta = Delta_0 2^(g s)`,
//! so encoder and decoder agree exactly and the bin-size process lives on a
//! countable grid.

use thiserror::Error;

use crate::dynamics::{ControlFn, SystemModel};
use crate::scalar::{gcd, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodecError {
    #[error("invalid codec parameters: {0}")]
    Invalid(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("unknown channel symbol {symbol} (alphabet has {size} symbols)")]
    UnknownSymbol { symbol: usize, size: usize },
}

/// Reconstruction level of the `K`-level uniform quantizer with bin `bin`.
///
/// Returns `(k - (K + 1) / 2) bin` on the `k`-th half-open bin, the top level
/// at exactly `x = K bin / 2`, and `0` outside the closed range.
pub fn uniform_quantize<T: Real>(x: T, levels: u32, bin: T) -> T {
    match quantizer_bin(x, levels, bin) {
        Some(b) => reconstruction(b, levels, bin),
        None => T::zero(),
    }
}

/// Zero-based bin index, or `None` when `x` is out of range.
pub fn quantizer_bin<T: Real>(x: T, levels: u32, bin: T) -> Option<u32> {
    let k = T::of(levels as f64);
    let half_k = k / T::of(2.0);
    let top = half_k * bin;
    if !(x >= -top && x <= top) {
        return None;
    }
    if x == top {
        return Some(levels - 1);
    }
    // bin b covers [(b - K/2) bin, (b + 1 - K/2) bin)
    let lower = |b: i64| (T::of(b as f64) - half_k) * bin;
    let mut b = (x / bin + half_k).floor().to_i64().unwrap_or(0).clamp(0, levels as i64 - 1);
    while b > 0 && x < lower(b) {
        b -= 1;
    }
    while b + 1 < levels as i64 && x >= lower(b + 1) {
        b += 1;
    }
    Some(b as u32)
}

fn reconstruction<T: Real>(b: u32, levels: u32, bin: T) -> T {
    (T::of(b as f64) - T::of((levels as f64 - 1.0) / 2.0)) * bin
}

/// Zoom parameters shared by encoder and decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct ZoomParams<T: Real> {
    /// Levels per coordinate, `K`.
    pub levels: u32,
    pub dim: usize,
    /// Contraction constant `|a|` of the plant being controlled.
    pub contraction: T,
    /// Grid step `s`.
    pub grid_step: T,
    /// Zoom-out exponent `n_out`: overflow multiplies `Delta` by `2^(n_out s)`.
    pub zoomout_exp: u32,
    /// Zoom-in exponent `n_in`: `alpha = 2^(-n_in s)`.
    pub alpha_exp: u32,
    /// Floor threshold `L`.
    pub floor: T,
    /// Initial bin size `Delta_0`.
    pub delta0: T,
}

impl<T: Real> ZoomParams<T> {
    pub fn validate(&self) -> Result<(), CodecError> {
        let bad = |m: &str| Err(CodecError::Invalid(m.to_string()));
        if self.levels < 2 {
            return bad("K must be at least 2");
        }
        if self.dim == 0 {
            return bad("dimension must be positive");
        }
        if !(self.grid_step > T::zero()) || !self.grid_step.is_finite() {
            return bad("grid step s must be positive");
        }
        if self.zoomout_exp == 0 || self.alpha_exp == 0 {
            return bad("zoom exponents must be positive integers");
        }
        if gcd(self.zoomout_exp, self.alpha_exp) != 1 {
            return bad("zoom exponents must be relatively prime");
        }
        if !(self.floor > T::zero()) || !(self.delta0 > T::zero()) {
            return bad("floor L and Delta_0 must be positive");
        }
        if !(self.contraction >= T::zero()) || !self.contraction.is_finite() {
            return bad("contraction constant must be finite and nonnegative");
        }
        if !(self.zoom_out() > self.contraction) {
            return bad("zoom-out factor 2^(n_out s) must exceed |a|");
        }
        if self.symbols().is_none() {
            return bad("K^N + 1 overflows the symbol index");
        }
        Ok(())
    }

    pub fn zoom_out(&self) -> T {
        (T::of(self.zoomout_exp as f64) * self.grid_step).exp2()
    }

    pub fn alpha(&self) -> T {
        (-T::of(self.alpha_exp as f64) * self.grid_step).exp2()
    }

    /// The margin `delta` with `|a| + delta = 2^(n_out s)`.
    pub fn delta(&self) -> T {
        self.zoom_out() - self.contraction
    }

    /// `K^N + 1`, or `None` if it does not fit in a `usize`.
    pub fn symbols(&self) -> Option<usize> {
        (self.levels as usize).checked_pow(self.dim as u32)?.checked_add(1)
    }

    pub fn overflow_symbol(&self) -> usize {
        self.symbols().expect("validated") - 1
    }

    /// Bits per step needed to carry every symbol, `log2(K^N + 1)`.
    pub fn rate_bits(&self) -> f64 {
        (self.symbols().expect("validated") as f64).log2()
    }

    /// Per-coordinate rate `R' = log2 K`.
    pub fn coordinate_rate(&self) -> f64 {
        (self.levels as f64).log2()
    }

    /// The working rate condition `2^R' > |a| / alpha`.
    pub fn rate_condition(&self) -> bool {
        T::of(self.levels as f64) > self.contraction / self.alpha()
    }

    pub fn bin_size(&self, grid: i64) -> T {
        self.delta0 * (T::of(grid as f64) * self.grid_step).exp2()
    }
}

/// The zoom multiplier for the largest normalized coordinate `h_max` and the
/// smallest current bin size.
pub fn zoom_factor<T: Real>(h_max: T, delta_min: T, params: &ZoomParams<T>) -> T {
    if h_max > T::one() || h_max.is_nan() {
        params.zoom_out()
    } else if delta_min > params.floor {
        params.alpha()
    } else {
        T::one()
    }
}

/// Grid exponent increment matching [`zoom_factor`].
fn grid_increment<T: Real>(in_range: bool, grid: i64, params: &ZoomParams<T>) -> i64 {
    if !in_range {
        params.zoomout_exp as i64
    } else if params.bin_size(grid) > params.floor {
        -(params.alpha_exp as i64)
    } else {
        0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Encoder,
    Decoder,
}

/// Bin-size state held by each side of the link.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CodecState {
    /// Exponent `g` with `Delta = Delta_0 2^(g s)`.
    pub grid: i64,
    pub time: u64,
    pub side: Side,
}

impl CodecState {
    pub fn new(side: Side) -> Self {
        Self { grid: 0, time: 0, side }
    }

    pub fn bin_size<T: Real>(&self, params: &ZoomParams<T>) -> T {
        params.bin_size(self.grid)
    }

    /// Same bin-size trajectory, ignoring which side holds it.
    pub fn synchronized_with(&self, other: &CodecState) -> bool {
        self.grid == other.grid && self.time == other.time
    }

    fn advance<T: Real>(&self, in_range: bool, params: &ZoomParams<T>) -> Self {
        Self {
            grid: self.grid + grid_increment(in_range, self.grid, params),
            time: self.time + 1,
            side: self.side,
        }
    }
}

/// What the decoder sees on its side of the channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Received {
    Symbol(usize),
    Erased,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Quantized<T: Real> {
    pub symbol: usize,
    pub estimate: Vec<T>,
    /// `max_i |x_i| / (Delta K / 2)`.
    pub h_max: T,
}

impl<T: Real> Quantized<T> {
    pub fn in_range(&self) -> bool {
        self.h_max <= T::one()
    }
}

/// Quantize the whole state vector with the current shared bin size.
pub fn vector_quantize<T: Real>(
    x: &[T],
    params: &ZoomParams<T>,
    state: &CodecState,
) -> Result<Quantized<T>, CodecError> {
    if x.len() != params.dim {
        return Err(CodecError::Dimension { expected: params.dim, got: x.len() });
    }
    let bin = state.bin_size(params);
    let half_range = bin * T::of(params.levels as f64 / 2.0);
    let h_max = x.iter().fold(T::zero(), |acc, v| {
        let h = v.abs() / half_range;
        if h.is_nan() { T::infinity() } else { acc.max(h) }
    });
    if !(h_max <= T::one()) {
        return Ok(Quantized {
            symbol: params.overflow_symbol(),
            estimate: vec![T::zero(); params.dim],
            h_max,
        });
    }
    let mut symbol = 0usize;
    let mut radix = 1usize;
    let mut estimate = vec![T::zero(); params.dim];
    for (i, xi) in x.iter().enumerate() {
        // h <= 1 can round in from one ulp outside the range; use the edge bin
        let b = quantizer_bin(*xi, params.levels, bin)
            .unwrap_or(if *xi > T::zero() { params.levels - 1 } else { 0 });
        estimate[i] = reconstruction(b, params.levels, bin);
        symbol += b as usize * radix;
        radix *= params.levels as usize;
    }
    Ok(Quantized { symbol, estimate, h_max })
}

/// Reconstruction for a received cell symbol; `None` for the overflow symbol.
pub fn decode_symbol<T: Real>(
    symbol: usize,
    params: &ZoomParams<T>,
    state: &CodecState,
) -> Result<Option<Vec<T>>, CodecError> {
    let size = params.symbols().expect("validated");
    if symbol >= size {
        return Err(CodecError::UnknownSymbol { symbol, size });
    }
    if symbol == params.overflow_symbol() {
        return Ok(None);
    }
    let bin = state.bin_size(params);
    let k = params.levels as usize;
    let mut rest = symbol;
    let estimate = (0..params.dim)
        .map(|_| {
            let b = (rest % k) as u32;
            rest /= k;
            reconstruction(b, params.levels, bin)
        })
        .collect();
    Ok(Some(estimate))
}

/// Encoder step over a noiseless link: emit the symbol, then rescale.
pub fn encoder_step<T: Real>(
    x: &[T],
    state: &CodecState,
    params: &ZoomParams<T>,
) -> Result<(usize, CodecState), CodecError> {
    let q = vector_quantize(x, params, state)?;
    Ok((q.symbol, state.advance(q.in_range(), params)))
}

/// Encoder state update from the channel output fed back to the encoder.
pub fn encoder_feedback<T: Real>(
    received: Received,
    state: &CodecState,
    params: &ZoomParams<T>,
) -> CodecState {
    let in_range = matches!(received, Received::Symbol(s) if s != params.overflow_symbol());
    state.advance(in_range, params)
}

/// Decoder step: reconstruct, apply `kappa(x_hat)`, rescale. Erasures are
/// handled as overflow.
pub fn decoder_step<T: Real>(
    received: Received,
    state: &CodecState,
    params: &ZoomParams<T>,
    model: &SystemModel<T>,
) -> Result<(Vec<T>, Vec<T>, CodecState), CodecError> {
    let estimate = match received {
        Received::Symbol(s) => decode_symbol(s, params, state)?,
        Received::Erased => None,
    };
    let in_range = estimate.is_some();
    let estimate = estimate.unwrap_or_else(|| vec![T::zero(); params.dim]);
    let control = model.control(&estimate);
    Ok((control, estimate, state.advance(in_range, params)))
}

/// Encoder holding its own state.
#[derive(Debug, Clone)]
pub struct ZoomEncoder<T: Real> {
    params: ZoomParams<T>,
    state: CodecState,
}

impl<T: Real> ZoomEncoder<T> {
    pub fn new(params: ZoomParams<T>) -> Result<Self, CodecError> {
        params.validate()?;
        Ok(Self { params, state: CodecState::new(Side::Encoder) })
    }

    pub fn state(&self) -> &CodecState {
        &self.state
    }

    pub fn params(&self) -> &ZoomParams<T> {
        &self.params
    }

    pub fn encode(&self, x: &[T]) -> Result<Quantized<T>, CodecError> {
        vector_quantize(x, &self.params, &self.state)
    }

    /// Rescale from the channel output the decoder actually saw.
    pub fn feedback(&mut self, received: Received) {
        self.state = encoder_feedback(received, &self.state, &self.params);
    }
}

#[derive(Debug, Clone)]
pub struct ZoomDecoder<T: Real> {
    params: ZoomParams<T>,
    state: CodecState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded<T: Real> {
    pub control: Vec<T>,
    pub estimate: Vec<T>,
}

impl<T: Real> ZoomDecoder<T> {
    pub fn new(params: ZoomParams<T>) -> Result<Self, CodecError> {
        params.validate()?;
        Ok(Self { params, state: CodecState::new(Side::Decoder) })
    }

    pub fn state(&self) -> &CodecState {
        &self.state
    }

    pub fn decode(&mut self, received: Received, model: &SystemModel<T>) -> Result<Decoded<T>, CodecError> {
        let (control, estimate, next) = decoder_step(received, &self.state, &self.params, model)?;
        self.state = next;
        Ok(Decoded { control, estimate })
    }
}

/// One-bit adaptive sign coder for channels too narrow for the zoom
/// quantizer. Symbol `1` means `x >= 0`. Both sides scale `Delta` from the
/// received symbols alone: a repeated symbol zooms out, a sign change zooms
/// in (down to the floor), and the estimate is `+-Delta / 2`.
#[derive(Debug, Clone)]
pub struct SignZoomCoder<T: Real> {
    params: ZoomParams<T>,
    grid: i64,
    last: Option<usize>,
}

impl<T: Real> SignZoomCoder<T> {
    pub fn new(params: ZoomParams<T>) -> Result<Self, CodecError> {
        if params.dim != 1 {
            return Err(CodecError::Invalid("the sign coder is scalar".into()));
        }
        // levels is unused; validate the zoom grid with a dummy K.
        ZoomParams { levels: 2, ..params.clone() }.validate()?;
        Ok(Self { params, grid: 0, last: None })
    }

    pub fn grid(&self) -> i64 {
        self.grid
    }

    pub fn bin_size(&self) -> T {
        self.params.bin_size(self.grid)
    }

    pub fn encode(&self, x: T) -> usize {
        usize::from(x >= T::zero())
    }

    /// Apply a received symbol; returns `(control, estimate)`. Erasures keep
    /// the estimate at zero and zoom out.
    pub fn receive(&mut self, received: Received, model: &SystemModel<T>) -> Result<(Vec<T>, Vec<T>), CodecError> {
        let half = T::of(0.5);
        let (estimate, grow) = match received {
            Received::Symbol(s) if s < 2 => {
                let sign = if s == 1 { T::one() } else { -T::one() };
                (vec![sign * half * self.bin_size()], self.last == Some(s))
            }
            Received::Symbol(s) => return Err(CodecError::UnknownSymbol { symbol: s, size: 2 }),
            Received::Erased => (vec![T::zero()], true),
        };
        self.grid += if grow {
            self.params.zoomout_exp as i64
        } else if self.bin_size() > self.params.floor {
            -(self.params.alpha_exp as i64)
        } else {
            0
        };
        self.last = match received {
            Received::Symbol(s) => Some(s),
            Received::Erased => None,
        };
        Ok((model.control(&estimate), estimate))
    }
}

/// Stationary coder with finite memory set `{0, .., size - 1}`:
/// `q = enc(x, m)`, `u = dec(m, q')`, `m+ = update(m, q')`.
pub trait FiniteMemoryPolicy<T: Real> {
    fn memory_size(&self) -> usize;
    fn symbols(&self) -> usize;
    fn encode(&self, x: T, memory: usize) -> usize;
    fn control(&self, memory: usize, received: usize) -> T;
    fn update(&self, memory: usize, received: usize) -> usize;

    /// `max |u|` over every memory/symbol pair.
    fn control_bound(&self) -> T {
        let mut bound = T::zero();
        for m in 0..self.memory_size() {
            for q in 0..self.symbols() {
                bound = bound.max(self.control(m, q).abs());
            }
        }
        bound
    }
}

/// Fixed-bin `K`-level quantizer with one memory state and control
/// `kappa(Q(x))`; symbol `K` is overflow (estimate `0`).
#[derive(Clone)]
pub struct FixedQuantizerPolicy<T: Real> {
    pub levels: u32,
    pub bin: T,
    pub kappa: ControlFn<T>,
}

impl<T: Real> std::fmt::Debug for FixedQuantizerPolicy<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FixedQuantizerPolicy")
            .field("levels", &self.levels)
            .field("bin", &self.bin)
            .finish_non_exhaustive()
    }
}

impl<T: Real> FixedQuantizerPolicy<T> {
    pub fn for_model(model: &SystemModel<T>, levels: u32, bin: T) -> Result<Self, CodecError> {
        let cert = model
            .certificate
            .as_ref()
            .ok_or_else(|| CodecError::Invalid("model has no control map".into()))?;
        if model.dim != 1 || levels < 2 || !(bin > T::zero()) {
            return Err(CodecError::Invalid("fixed quantizer needs a scalar plant, K >= 2, bin > 0".into()));
        }
        Ok(Self { levels, bin, kappa: cert.control.clone() })
    }
}

impl<T: Real> FiniteMemoryPolicy<T> for FixedQuantizerPolicy<T> {
    fn memory_size(&self) -> usize {
        1
    }

    fn symbols(&self) -> usize {
        self.levels as usize + 1
    }

    fn encode(&self, x: T, _memory: usize) -> usize {
        quantizer_bin(x, self.levels, self.bin).map_or(self.levels as usize, |b| b as usize)
    }

    fn control(&self, _memory: usize, received: usize) -> T {
        let estimate = if received < self.levels as usize {
            reconstruction(received as u32, self.levels, self.bin)
        } else {
            T::zero()
        };
        (self.kappa)(&[estimate])[0]
    }

    fn update(&self, memory: usize, _received: usize) -> usize {
        memory
    }
}

#[derive(Debug, Clone)]
pub struct FiniteMemoryCoder<P> {
    pub policy: P,
    pub memory: usize,
}

impl<P> FiniteMemoryCoder<P> {
    pub fn new(policy: P) -> Self {
        Self { policy, memory: 0 }
    }

    /// One step over a noiseless link; returns `(u, updated memory)`.
    pub fn step<T: Real>(&mut self, x: T) -> (T, usize)
    where
        P: FiniteMemoryPolicy<T>,
    {
        let q = self.policy.encode(x, self.memory);
        self.step_received(q)
    }

    /// One step given the channel output.
    pub fn step_received<T: Real>(&mut self, received: usize) -> (T, usize)
    where
        P: FiniteMemoryPolicy<T>,
    {
        let u = self.policy.control(self.memory, received);
        self.memory = self.policy.update(self.memory, received);
        (u, self.memory)
    }
}
