//! Partial Bell polynomials and Faà di Bruno's formula.
//!
//! `B_{k,a}(x_1, ..., x_{k-a+1}) = sum_delta c_delta prod_l x_l^{delta_l}` where
//! `delta` runs over tuples of non-negative integers with
//! `sum_l delta_l = a` and `sum_l l * delta_l = k`, and
//! `c_delta = k! / prod_l (delta_l! * (l!)^{delta_l})`.
//!
//! The polynomial evaluation is generic over [`BellScalar`] so the same
//! partition sums can be taken over plain reals or over polynomials in a
//! design parameter.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{invalid, Error, Result};

/// Largest order for which coefficients are computed exactly (`20!` fits in `u64`).
pub const MAX_EXACT_ORDER: u32 = 20;

/// One term index of `B_{k,a}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PartitionTuple {
    /// `delta[l - 1]` is the multiplicity of blocks of size `l`, length `k - a + 1`.
    pub delta: Vec<u32>,
    pub k: u32,
    pub a: u32,
}

impl PartitionTuple {
    /// Checks both constraint sums.
    pub fn is_valid(&self) -> bool {
        if self.a == 0 || self.a > self.k || self.delta.len() != (self.k - self.a + 1) as usize {
            return false;
        }
        let blocks: u64 = self.delta.iter().map(|&d| d as u64).sum();
        let weight: u64 = self
            .delta
            .iter()
            .enumerate()
            .map(|(i, &d)| (i as u64 + 1) * d as u64)
            .sum();
        blocks == self.a as u64 && weight == self.k as u64
    }
}

type Cache = Mutex<HashMap<(u32, u32), Arc<[PartitionTuple]>>>;

fn cache() -> &'static Cache {
    static CACHE: OnceLock<Cache> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// All tuples of `P_{k,a}`, in descending lexicographic order of `delta`.
pub fn enumerate_partitions(k: u32, a: u32) -> Result<Arc<[PartitionTuple]>> {
    if k == 0 || a == 0 || a > k {
        return Err(invalid(format!("partition sets need 1 <= a <= k, got k={k}, a={a}")));
    }
    if let Some(hit) = cache().lock().expect("partition cache poisoned").get(&(k, a)) {
        return Ok(Arc::clone(hit));
    }

    let len = (k - a + 1) as usize;
    let mut out = Vec::new();
    let mut delta = vec![0u32; len];
    search(0, a, k, &mut delta, &mut out, k, a);
    let shared: Arc<[PartitionTuple]> = out.into();
    cache()
        .lock()
        .expect("partition cache poisoned")
        .insert((k, a), Arc::clone(&shared));
    Ok(shared)
}

// Assigns delta[pos], then recurses; `blocks` and `weight` are what remains to place.
fn search(
    pos: usize,
    blocks: u32,
    weight: u32,
    delta: &mut [u32],
    out: &mut Vec<PartitionTuple>,
    k: u32,
    a: u32,
) {
    if pos == delta.len() {
        if blocks == 0 && weight == 0 {
            out.push(PartitionTuple { delta: delta.to_vec(), k, a });
        }
        return;
    }
    let size = pos as u32 + 1;
    let max_here = blocks.min(weight / size);
    for d in (0..=max_here).rev() {
        let (rb, rw) = (blocks - d, weight - d * size);
        // every remaining block has size > `size`
        if rw < rb * (size + 1) && rb > 0 {
            continue;
        }
        delta[pos] = d;
        search(pos + 1, rb, rw, delta, out, k, a);
    }
    delta[pos] = 0;
}

fn factorial(n: u32) -> Result<u64> {
    if n > MAX_EXACT_ORDER {
        return Err(Error::Overflow(format!("{n}! exceeds the exact range (k <= {MAX_EXACT_ORDER})")));
    }
    Ok((1..=n as u64).product())
}

/// Exact `c_delta`.
pub fn bell_coefficient(delta: &PartitionTuple) -> Result<u64> {
    if !delta.is_valid() {
        return Err(invalid(format!("{delta:?} violates the partition constraints")));
    }
    let num = factorial(delta.k)?;
    let mut den: u64 = 1;
    for (i, &d) in delta.delta.iter().enumerate() {
        let block = factorial(i as u32 + 1)?;
        let term = factorial(d)?
            .checked_mul(block.checked_pow(d).ok_or_else(|| overflow(delta))?)
            .ok_or_else(|| overflow(delta))?;
        den = den.checked_mul(term).ok_or_else(|| overflow(delta))?;
    }
    debug_assert_eq!(num % den, 0);
    Ok(num / den)
}

fn overflow(delta: &PartitionTuple) -> Error {
    Error::Overflow(format!("coefficient denominator for {:?}", delta.delta))
}

/// Values a Bell polynomial can be evaluated over.
pub trait BellScalar: Clone {
    fn zero() -> Self;
    fn one() -> Self;
    fn add(&self, other: &Self) -> Self;
    fn mul(&self, other: &Self) -> Self;
    fn scale(&self, c: f64) -> Self;
}

impl BellScalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn add(&self, other: &Self) -> Self {
        self + other
    }
    fn mul(&self, other: &Self) -> Self {
        self * other
    }
    fn scale(&self, c: f64) -> Self {
        self * c
    }
}

fn power<T: BellScalar>(x: &T, e: u32) -> T {
    let mut acc = T::one();
    for _ in 0..e {
        acc = acc.mul(x);
    }
    acc
}

/// `B_{k,a}` over any [`BellScalar`]; `args` must hold `k - a + 1` entries.
pub fn bell_polynomial_in<T: BellScalar>(k: u32, a: u32, args: &[T]) -> Result<T> {
    let tuples = enumerate_partitions(k, a)?;
    let want = (k - a + 1) as usize;
    if args.len() != want {
        return Err(invalid(format!("B_{{{k},{a}}} takes {want} arguments, got {}", args.len())));
    }
    let mut total = T::zero();
    for t in tuples.iter() {
        let mut term = T::one().scale(bell_coefficient(t)? as f64);
        for (x, &d) in args.iter().zip(&t.delta) {
            if d > 0 {
                term = term.mul(&power(x, d));
            }
        }
        total = total.add(&term);
    }
    Ok(total)
}

/// `B_{k,a}(args)` over the reals.
pub fn bell_polynomial(k: u32, a: u32, args: &[f64]) -> Result<f64> {
    bell_polynomial_in(k, a, args)
}

/// k-th derivative of `rho(phi(t))` from `outer[a-1] = rho^{(a)}(phi(t))` and
/// `inner[l-1] = phi^{(l)}(t)`.
pub fn faa_di_bruno(k: u32, outer: &[f64], inner: &[f64]) -> Result<f64> {
    let k_us = k as usize;
    if k == 0 || outer.len() != k_us || inner.len() != k_us {
        return Err(invalid(format!(
            "faa_di_bruno(k={k}) needs k >= 1 and {k} outer/inner derivatives, got {}/{}",
            outer.len(),
            inner.len()
        )));
    }
    let mut total = 0.0;
    for a in 1..=k {
        let rho_a = outer[a as usize - 1];
        if rho_a == 0.0 {
            continue;
        }
        total += rho_a * bell_polynomial(k, a, &inner[..(k - a + 1) as usize])?;
    }
    Ok(total)
}
