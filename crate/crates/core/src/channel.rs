//! Finite-alphabet memoryless channels and their Shannon capacity.
//!
//! Symbols are zero-based indices. Erasure channels append one extra output
//! symbol, index `M`, that stands for "erased".

use rand::Rng;
use thiserror::Error;

use crate::scalar::Real;

pub const CAPACITY_TOLERANCE: f64 = 1e-9;
pub const CAPACITY_MAX_ITERATIONS: usize = 10_000;
/// Iterations between attempts to finish by solving the optimality
/// conditions on the current support.
const POLISH_EVERY: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("kernel row {row} is not a probability vector (sum {sum})")]
    NotStochastic { row: usize, sum: f64 },
    #[error("kernel has {got} entries, expected {rows} x {cols}")]
    Shape { rows: usize, cols: usize, got: usize },
    #[error("input symbol {symbol} outside alphabet of size {size}")]
    SymbolOutOfRange { symbol: usize, size: usize },
    #[error("invalid channel parameter: {0}")]
    Invalid(String),
    #[error("capacity iteration did not converge: gap {gap} after {iterations} iterations (lower bound {lower} bits)")]
    NotConverged { gap: f64, iterations: usize, lower: f64 },
    #[error("malformed kernel csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChannelKind<T: Real> {
    Noiseless,
    Erasure { epsilon: T },
    Bsc { p: T },
    General,
}

/// Memoryless channel with row-stochastic kernel `P(q' | q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelModel<T: Real> {
    kind: ChannelKind<T>,
    inputs: usize,
    outputs: usize,
    kernel: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapacityResult<T: Real> {
    /// Bits per channel use.
    pub capacity: T,
    pub input_distribution: Vec<T>,
    pub iterations: usize,
    /// Upper minus lower bound at termination.
    pub gap: T,
    /// Mutual information of the iterate at each step; nondecreasing.
    pub lower_bounds: Vec<T>,
}

fn row_tolerance<T: Real>(cols: usize) -> T {
    T::of(1e-12).max(T::epsilon() * T::of(16.0 * cols as f64))
}

impl<T: Real> ChannelModel<T> {
    pub fn noiseless(symbols: usize) -> Result<Self, ChannelError> {
        if symbols == 0 {
            return Err(ChannelError::Invalid("alphabet must be nonempty".into()));
        }
        let mut kernel = vec![T::zero(); symbols * symbols];
        for i in 0..symbols {
            kernel[i * symbols + i] = T::one();
        }
        Ok(Self { kind: ChannelKind::Noiseless, inputs: symbols, outputs: symbols, kernel })
    }

    /// `symbols` inputs, `symbols + 1` outputs; the last output is the erasure.
    pub fn erasure(symbols: usize, epsilon: T) -> Result<Self, ChannelError> {
        if symbols == 0 || !(epsilon >= T::zero() && epsilon <= T::one()) {
            return Err(ChannelError::Invalid("erasure needs symbols >= 1 and epsilon in [0, 1]".into()));
        }
        let cols = symbols + 1;
        let mut kernel = vec![T::zero(); symbols * cols];
        for i in 0..symbols {
            kernel[i * cols + i] = T::one() - epsilon;
            kernel[i * cols + symbols] = epsilon;
        }
        Ok(Self { kind: ChannelKind::Erasure { epsilon }, inputs: symbols, outputs: cols, kernel })
    }

    pub fn bsc(p: T) -> Result<Self, ChannelError> {
        if !(p >= T::zero() && p <= T::one()) {
            return Err(ChannelError::Invalid("crossover probability must lie in [0, 1]".into()));
        }
        let q = T::one() - p;
        Ok(Self { kind: ChannelKind::Bsc { p }, inputs: 2, outputs: 2, kernel: vec![q, p, p, q] })
    }

    pub fn general(inputs: usize, outputs: usize, kernel: Vec<T>) -> Result<Self, ChannelError> {
        if inputs == 0 || outputs == 0 || kernel.len() != inputs * outputs {
            return Err(ChannelError::Shape { rows: inputs, cols: outputs, got: kernel.len() });
        }
        let tol = row_tolerance::<T>(outputs);
        for (row, chunk) in kernel.chunks(outputs).enumerate() {
            let sum = chunk.iter().fold(T::zero(), |a, b| a + *b);
            let in_unit = chunk.iter().all(|v| *v >= T::zero() && *v <= T::one());
            if !in_unit || (sum - T::one()).abs() > tol {
                return Err(ChannelError::NotStochastic { row, sum: sum.as_f64() });
            }
        }
        Ok(Self { kind: ChannelKind::General, inputs, outputs, kernel })
    }

    /// One row per input symbol, comma separated; blank lines and lines
    /// starting with `#` are skipped.
    pub fn from_csv(text: &str) -> Result<Self, ChannelError> {
        let mut rows: Vec<Vec<T>> = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row = line
                .split(',')
                .map(|cell| {
                    cell.trim()
                        .parse::<f64>()
                        .map(T::of)
                        .map_err(|e| ChannelError::Csv(format!("line {}: {e}", n + 1)))
                })
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(row);
        }
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(ChannelError::Csv("ragged rows".into()));
        }
        let inputs = rows.len();
        Self::general(inputs, cols, rows.into_iter().flatten().collect())
    }

    pub fn kind(&self) -> ChannelKind<T> {
        self.kind
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn probability(&self, input: usize, output: usize) -> T {
        self.kernel[input * self.outputs + output]
    }

    pub fn row(&self, input: usize) -> &[T] {
        &self.kernel[input * self.outputs..(input + 1) * self.outputs]
    }

    /// Index of the erasure output, for erasure channels.
    pub fn erasure_symbol(&self) -> Option<usize> {
        match self.kind {
            ChannelKind::Erasure { .. } => Some(self.inputs),
            _ => None,
        }
    }

    /// Draw the output for input `q`. Noiseless channels consume no randomness.
    pub fn transmit<R: Rng + ?Sized>(&self, q: usize, rng: &mut R) -> Result<usize, ChannelError> {
        if q >= self.inputs {
            return Err(ChannelError::SymbolOutOfRange { symbol: q, size: self.inputs });
        }
        if let ChannelKind::Noiseless = self.kind {
            return Ok(q);
        }
        let u = T::of(rng.random::<f64>());
        let row = self.row(q);
        let mut acc = T::zero();
        for (j, p) in row.iter().enumerate() {
            acc = acc + *p;
            if u < acc {
                return Ok(j);
            }
        }
        // rounding left a sliver above the cumulative sum
        Ok(row.iter().rposition(|p| *p > T::zero()).unwrap_or(self.outputs - 1))
    }

    /// Shannon capacity by alternating maximization over input laws.
    /// Stops when the upper/lower bound gap is at most `tolerance`, or fails
    /// after [`CAPACITY_MAX_ITERATIONS`].
    pub fn capacity(&self, tolerance: T) -> Result<CapacityResult<T>, ChannelError> {
        if !(tolerance > T::zero()) {
            return Err(ChannelError::Invalid("tolerance must be positive".into()));
        }
        if let Some(exact) = self.deterministic_capacity() {
            return Ok(exact);
        }
        let (m, k) = (self.inputs, self.outputs);
        let mut p = vec![T::one() / T::of(m as f64); m];
        let mut divergences = vec![T::zero(); m];
        let mut output = vec![T::zero(); k];
        let mut lower_bounds = Vec::new();
        for iteration in 1..=CAPACITY_MAX_ITERATIONS {
            output.iter_mut().for_each(|v| *v = T::zero());
            for (i, pi) in p.iter().enumerate() {
                for (j, o) in output.iter_mut().enumerate() {
                    *o = *o + *pi * self.probability(i, j);
                }
            }
            for (i, d) in divergences.iter_mut().enumerate() {
                *d = self.row(i).iter().zip(&output).fold(T::zero(), |acc, (pij, qj)| {
                    if *pij > T::zero() {
                        acc + *pij * (*pij / *qj).log2()
                    } else {
                        acc
                    }
                });
            }
            let lower = p.iter().zip(&divergences).fold(T::zero(), |acc, (pi, d)| acc + *pi * *d);
            let upper = divergences.iter().fold(T::neg_infinity(), |acc, d| acc.max(*d));
            lower_bounds.push(lower);
            let gap = (upper - lower).max(T::zero());
            if gap <= tolerance {
                return Ok(CapacityResult {
                    capacity: lower,
                    input_distribution: p,
                    iterations: iteration,
                    gap,
                    lower_bounds,
                });
            }
            if iteration % POLISH_EVERY == 0 {
                if let Some((law, lower, gap)) = self.polish(&p, tolerance) {
                    return Ok(CapacityResult { capacity: lower, input_distribution: law, iterations: iteration, gap, lower_bounds });
                }
            }
            let mut norm = T::zero();
            for (pi, d) in p.iter_mut().zip(&divergences) {
                *pi = *pi * d.exp2();
                norm = norm + *pi;
            }
            p.iter_mut().for_each(|pi| *pi = *pi / norm);
        }
        let last = *lower_bounds.last().expect("at least one iteration ran");
        let upper = divergences.iter().fold(T::neg_infinity(), |acc, d| acc.max(*d));
        Err(ChannelError::NotConverged {
            gap: (upper - last).as_f64(),
            iterations: CAPACITY_MAX_ITERATIONS,
            lower: last.as_f64(),
        })
    }
}

impl<T: Real> ChannelModel<T> {
    /// Mutual information `I(p)` and `max_i D(W_i || pW)`, which bracket the
    /// capacity for every input law `p`.
    fn bounds_at(&self, p: &[f64]) -> (f64, f64) {
        let output: Vec<f64> = (0..self.outputs)
            .map(|j| p.iter().enumerate().map(|(i, pi)| pi * self.probability(i, j).as_f64()).sum())
            .collect();
        let divergence = |i: usize| -> f64 {
            self.row(i)
                .iter()
                .zip(&output)
                .filter(|(w, _)| **w > T::zero())
                .map(|(w, q)| w.as_f64() * (w.as_f64() / q).log2())
                .sum()
        };
        let d: Vec<f64> = (0..self.inputs).map(divergence).collect();
        let lower = p.iter().zip(&d).map(|(pi, di)| pi * di).sum();
        (lower, d.into_iter().fold(f64::NEG_INFINITY, f64::max))
    }

    /// Newton's method on `D_i(pW) = C` over the inputs carrying mass in `p`,
    /// dropping inputs that go negative. Accepted only when the bracket
    /// certifies the result to `tolerance`.
    fn polish(&self, p: &[T], tolerance: T) -> Option<(Vec<T>, T, T)> {
        let w = |i: usize, j: usize| self.probability(i, j).as_f64();
        let peak = p.iter().fold(T::zero(), |a, b| a.max(*b)).as_f64();
        let mut support: Vec<usize> = (0..self.inputs).filter(|i| p[*i].as_f64() > 1e-6 * peak).collect();
        while !support.is_empty() {
            let n = support.len();
            let total: f64 = support.iter().map(|i| p[*i].as_f64()).sum();
            let mut x: Vec<f64> = support.iter().map(|i| p[*i].as_f64() / total).collect();
            let mut c = 0.0;
            let mut negative = None;
            for _ in 0..50 {
                let q: Vec<f64> = (0..self.outputs).map(|j| support.iter().zip(&x).map(|(i, xi)| xi * w(*i, j)).sum()).collect();
                if q.iter().any(|v| !(*v > 0.0)) {
                    return None;
                }
                let mut jac = nalgebra::DMatrix::<f64>::zeros(n + 1, n + 1);
                let mut rhs = nalgebra::DVector::<f64>::zeros(n + 1);
                for (a, &i) in support.iter().enumerate() {
                    let d: f64 = (0..self.outputs).filter(|j| w(i, *j) > 0.0).map(|j| w(i, j) * (w(i, j) / q[j]).log2()).sum();
                    rhs[a] = -(d - c);
                    for (b, &k) in support.iter().enumerate() {
                        jac[(a, b)] = -(0..self.outputs).map(|j| w(i, j) * w(k, j) / q[j]).sum::<f64>() / std::f64::consts::LN_2;
                    }
                    jac[(a, n)] = -1.0;
                    jac[(n, a)] = 1.0;
                }
                rhs[n] = 1.0 - x.iter().sum::<f64>();
                let step = jac.lu().solve(&rhs)?;
                x.iter_mut().enumerate().for_each(|(a, v)| *v += step[a]);
                c += step[n];
                if let Some(a) = (0..n).find(|a| x[*a] < 0.0) {
                    negative = Some(a);
                    break;
                }
                if step.amax() < 1e-15 {
                    break;
                }
            }
            if let Some(a) = negative {
                support.remove(a);
                continue;
            }
            let mut law = vec![0.0; self.inputs];
            support.iter().zip(&x).for_each(|(i, v)| law[*i] = *v);
            let (lower, upper) = self.bounds_at(&law);
            let gap = (upper - lower).max(0.0);
            return (gap <= tolerance.as_f64()).then(|| (law.into_iter().map(T::of).collect(), T::of(lower), T::of(gap)));
        }
        None
    }

    /// A kernel whose rows are all one-hot carries `log2 |image|` bits, with
    /// the uniform law on one input per reachable output.
    fn deterministic_capacity(&self) -> Option<CapacityResult<T>> {
        let mut first_input = vec![None; self.outputs];
        for i in 0..self.inputs {
            let j = self.row(i).iter().position(|p| *p == T::one())?;
            if self.row(i).iter().enumerate().any(|(c, p)| c != j && *p != T::zero()) {
                return None;
            }
            first_input[j].get_or_insert(i);
        }
        let reached: Vec<usize> = first_input.into_iter().flatten().collect();
        let n = reached.len();
        let mut law = vec![T::zero(); self.inputs];
        reached.iter().for_each(|i| law[*i] = T::one() / T::of(n as f64));
        let capacity = T::of((n as f64).log2());
        Some(CapacityResult {
            capacity,
            input_distribution: law,
            iterations: 0,
            gap: T::zero(),
            lower_bounds: vec![capacity],
        })
    }
}

/// Binary entropy in bits.
pub fn binary_entropy(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
}

pub fn bsc_capacity(p: f64) -> f64 {
    1.0 - binary_entropy(p)
}

pub fn erasure_capacity(symbols: usize, epsilon: f64) -> f64 {
    (1.0 - epsilon) * (symbols as f64).log2()
}
