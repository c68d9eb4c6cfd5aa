//! Program difference quotients and the sampled program derivative.
//!
//! For a program `P`, input distance `d_in` and output distance `d_out`, the
//! difference quotient of an input pair is
//!
//! ```text
//! PDQ(a, b) = d_out(P(a), P(b)) / d_in(a, b)
//! ```
//!
//! and the derivative at `a` is the quotient against the closest distinct
//! input. [`pd_approx`] replaces that argmin by the most sensitive of `n`
//! neighbours drawn uniformly from a hypercube around `a`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distance::{Compressor, DistanceError, DistanceFn};
use crate::sut::{input_from_coords, invoke, Concurrency, SlotDomain, Sut, SutError};
use crate::values::{values_equal, Value};

#[derive(Debug, Error)]
pub enum DerivativeError {
    #[error(transparent)]
    Sut(#[from] SutError),
    #[error(transparent)]
    Distance(#[from] DistanceError),
    #[error("no usable neighbour: every sample equalled the input or had an undefined quotient")]
    NoNeighbor,
    #[error("input {0} is not a point of the program's numeric domain")]
    NotNumeric(String),
    #[error("invalid neighbourhood: {0}")]
    BadNeighborhood(String),
}

/// One quotient evaluation with everything that went into it.
#[derive(Debug, Clone, PartialEq)]
pub struct QuotientResult {
    pub input_a: Value,
    pub input_b: Value,
    pub output_a: Value,
    pub output_b: Value,
    pub d_in: f64,
    pub d_out: f64,
    /// `None` when `d_in == 0`.
    pub quotient: Option<f64>,
    pub d_in_name: String,
    pub d_out_name: String,
}

impl QuotientResult {
    #[allow(clippy::too_many_arguments)]
    fn new(
        input_a: Value,
        input_b: Value,
        output_a: Value,
        output_b: Value,
        d_in: f64,
        d_out: f64,
        d_in_fn: &DistanceFn,
        d_out_fn: &DistanceFn,
    ) -> Self {
        let quotient = (d_in > 0.0).then(|| d_out / d_in);
        QuotientResult {
            input_a,
            input_b,
            output_a,
            output_b,
            d_in,
            d_out,
            quotient,
            d_in_name: d_in_fn.name(),
            d_out_name: d_out_fn.name(),
        }
    }

    pub fn is_undefined(&self) -> bool {
        self.quotient.is_none()
    }
}

/// Difference quotient of `sut` over the pair `(a, b)`.
pub fn pdq(
    sut: &dyn Sut,
    d_out: &DistanceFn,
    d_in: &DistanceFn,
    a: &Value,
    b: &Value,
) -> Result<QuotientResult, DerivativeError> {
    let out_a = invoke(sut, a)?;
    let out_b = invoke(sut, b)?;
    quotient_from_outputs(d_out, d_in, a.clone(), b.clone(), out_a, out_b)
}

fn quotient_from_outputs(
    d_out: &DistanceFn,
    d_in: &DistanceFn,
    a: Value,
    b: Value,
    out_a: Value,
    out_b: Value,
) -> Result<QuotientResult, DerivativeError> {
    let din = if values_equal(&a, &b) {
        0.0
    } else {
        d_in.eval(&a, &b)?
    };
    let dout = d_out.eval(&out_a, &out_b)?;
    Ok(QuotientResult::new(
        a, b, out_a, out_b, din, dout, d_in, d_out,
    ))
}

/// Compression difference quotient: [`pdq`] with NCD on both sides.
pub fn cdq(
    sut: &dyn Sut,
    c: &Compressor,
    a: &Value,
    b: &Value,
) -> Result<QuotientResult, DerivativeError> {
    let d = DistanceFn::Ncd(*c);
    pdq(sut, &d, &d, a, b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodSpec {
    /// Number of neighbours drawn.
    pub samples: usize,
    /// Half-width of the sampling hypercube, per numeric dimension.
    pub radius: f64,
    pub seed: u64,
}

impl NeighborhoodSpec {
    pub fn validate(&self) -> Result<(), DerivativeError> {
        if self.samples == 0 {
            return Err(DerivativeError::BadNeighborhood(
                "samples must be >= 1".into(),
            ));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(DerivativeError::BadNeighborhood(format!(
                "radius must be positive, got {}",
                self.radius
            )));
        }
        Ok(())
    }
}

/// The neighbours [`pd_approx`] evaluates, in generation order, before
/// removing those equal to `a`. Coordinates are clamped to the domain and
/// integer slots are rounded.
pub fn neighbors(
    domains: &[SlotDomain],
    a: &Value,
    nbhd: &NeighborhoodSpec,
) -> Result<Vec<Value>, DerivativeError> {
    nbhd.validate()?;
    let center = a
        .coords()
        .filter(|c| c.len() == domains.len())
        .ok_or_else(|| DerivativeError::NotNumeric(a.to_string()))?;
    let bounds = domains
        .iter()
        .map(|d| {
            d.bounds()
                .ok_or_else(|| DerivativeError::NotNumeric(a.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(nbhd.seed);
    let mut out = Vec::with_capacity(nbhd.samples);
    for _ in 0..nbhd.samples {
        let coords: Vec<f64> = center
            .iter()
            .zip(&bounds)
            .map(|(&x, &(lo, hi))| {
                let step = rng.random_range(-nbhd.radius..=nbhd.radius);
                (x + step).clamp(lo, hi)
            })
            .collect();
        out.push(input_from_coords(domains, &coords));
    }
    Ok(out)
}

/// Strict "better than" for quotient results: larger quotient, then smaller
/// input distance. Earlier generation order wins remaining ties.
fn better(candidate: &QuotientResult, incumbent: &QuotientResult) -> bool {
    let (Some(q), Some(best)) = (candidate.quotient, incumbent.quotient) else {
        return candidate.quotient.is_some() && incumbent.quotient.is_none();
    };
    q > best || (q == best && candidate.d_in < incumbent.d_in)
}

/// Approximates the program derivative at `a` by the largest quotient among
/// sampled neighbours. Undefined-quotient neighbours are skipped.
pub fn pd_approx(
    sut: &dyn Sut,
    d_out: &DistanceFn,
    d_in: &DistanceFn,
    a: &Value,
    nbhd: &NeighborhoodSpec,
) -> Result<QuotientResult, DerivativeError> {
    pd_approx_with(sut, d_out, d_in, a, nbhd, false)
}

pub(crate) fn pd_approx_with(
    sut: &dyn Sut,
    d_out: &DistanceFn,
    d_in: &DistanceFn,
    a: &Value,
    nbhd: &NeighborhoodSpec,
    parallel: bool,
) -> Result<QuotientResult, DerivativeError> {
    let candidates: Vec<Value> = neighbors(sut.domains(), a, nbhd)?
        .into_iter()
        .filter(|b| !values_equal(a, b))
        .collect();
    if candidates.is_empty() {
        return Err(DerivativeError::NoNeighbor);
    }
    let out_a = invoke(sut, a)?;
    let eval = |b: &Value| -> Result<QuotientResult, DerivativeError> {
        let out_b = invoke(sut, b)?;
        quotient_from_outputs(d_out, d_in, a.clone(), b.clone(), out_a.clone(), out_b)
    };
    let results: Vec<QuotientResult> = if parallel && sut.concurrency() == Concurrency::ParallelSafe
    {
        candidates.par_iter().map(eval).collect::<Result<_, _>>()?
    } else {
        candidates.iter().map(eval).collect::<Result<_, _>>()?
    };
    let mut best: Option<QuotientResult> = None;
    for r in results {
        if r.quotient.is_none() {
            continue;
        }
        match &best {
            Some(b) if !better(&r, b) => {}
            _ => best = Some(r),
        }
    }
    best.ok_or(DerivativeError::NoNeighbor)
}
