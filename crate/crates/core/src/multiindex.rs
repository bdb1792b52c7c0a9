//! Multi-index arithmetic, downward-closed derivative bases, and the
//! set-partition expansion of mixed derivatives of a composed function.
//!
//! A derivative with respect to a fixed list of variables is written as a
//! multi-index `s = (s_1, s_2, …)`: component `i` is the number of
//! differentiations with respect to variable `i`, and `|s|` is the total
//! order. Expanding `∂^s σ(z)` by the multivariate chain rule produces one
//! term per set partition of the `|s|` differentiation slots; identical
//! partitions merge into a single [`BrunoTerm`] with an integer coefficient.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;

use crate::error::{EngineError, Result};

/// Hard engine limit on the total order of any multi-index: order-5 jets plus
/// one sigma-derivative shift in the backward pass.
pub const MAX_TOTAL_ORDER: usize = 6;

/// Maximum derivative order propagated through a network.
pub const MAX_JET_ORDER: usize = 5;

/// Per-variable derivative orders; `(2, 1)` is `∂³/∂a²∂b`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct MultiIndex {
    orders: Vec<u8>,
}

impl MultiIndex {
    /// Builds a multi-index, enforcing the engine's total-order limit.
    pub fn new(orders: &[u8]) -> Result<Self> {
        let total: usize = orders.iter().map(|&o| o as usize).sum();
        if total > MAX_TOTAL_ORDER {
            return Err(EngineError::OrderLimit {
                got: total,
                limit: MAX_TOTAL_ORDER,
            });
        }
        Ok(MultiIndex {
            orders: orders.to_vec(),
        })
    }

    /// The zero index (the values themselves) over `n_vars` variables.
    pub fn zero(n_vars: usize) -> Self {
        MultiIndex {
            orders: vec![0; n_vars],
        }
    }

    /// Single differentiation with respect to variable `var`.
    pub fn unit(n_vars: usize, var: usize) -> Self {
        let mut orders = vec![0; n_vars];
        orders[var] = 1;
        MultiIndex { orders }
    }

    pub fn orders(&self) -> &[u8] {
        &self.orders
    }

    pub fn n_vars(&self) -> usize {
        self.orders.len()
    }

    /// Total derivative order `|s|`.
    pub fn order(&self) -> usize {
        self.orders.iter().map(|&o| o as usize).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.orders.iter().all(|&o| o == 0)
    }

    /// Componentwise `self + other`.
    pub fn add(&self, other: &MultiIndex) -> Result<MultiIndex> {
        debug_assert_eq!(self.n_vars(), other.n_vars());
        let orders: Vec<u8> = self
            .orders
            .iter()
            .zip(&other.orders)
            .map(|(&a, &b)| a + b)
            .collect();
        MultiIndex::new(&orders)
    }

    /// Componentwise `self - other`, or `None` if any component would go negative.
    pub fn checked_sub(&self, other: &MultiIndex) -> Option<MultiIndex> {
        debug_assert_eq!(self.n_vars(), other.n_vars());
        let mut orders = Vec::with_capacity(self.orders.len());
        for (&a, &b) in self.orders.iter().zip(&other.orders) {
            if b > a {
                return None;
            }
            orders.push(a - b);
        }
        Some(MultiIndex { orders })
    }

    /// Componentwise `self <= other`.
    pub fn le(&self, other: &MultiIndex) -> bool {
        self.orders
            .iter()
            .zip(&other.orders)
            .all(|(&a, &b)| a <= b)
    }

    /// Fixed basis order: ascending total order, then variables earlier in the
    /// input list differentiate first (`(1,0)` precedes `(0,1)`).
    pub fn basis_cmp(&self, other: &MultiIndex) -> Ordering {
        self.order()
            .cmp(&other.order())
            .then_with(|| other.orders.cmp(&self.orders))
    }
}

impl fmt::Debug for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, o) in self.orders.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{o}")?;
        }
        write!(f, ")")
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Generalized binomial coefficient `Π_i s_i! / (r_i! (s_i - r_i)!)`.
///
/// Rejects `r` exceeding `s` in any component.
pub fn binomial(s: &MultiIndex, r: &MultiIndex) -> Result<u64> {
    if s.checked_sub(r).is_none() {
        return Err(EngineError::InvalidConfig(format!(
            "binomial: {r} exceeds {s} componentwise"
        )));
    }
    let mut prod = 1u64;
    for (&si, &ri) in s.orders.iter().zip(&r.orders) {
        prod *= choose(si as u64, ri as u64);
    }
    Ok(prod)
}

fn choose(n: u64, k: u64) -> u64 {
    let k = k.min(n - k);
    let mut num = 1u64;
    for i in 0..k {
        num = num * (n - i) / (i + 1);
    }
    num
}

/// All `r` with `0 <= r <= s` componentwise, in basis order.
///
/// The result has `Π (s_i + 1)` entries; these are exactly the lower
/// derivatives a propagation of `∂^s` depends on.
pub fn lower_set(s: &MultiIndex) -> Vec<MultiIndex> {
    let mut out = vec![MultiIndex::zero(s.n_vars())];
    for (var, &max) in s.orders.iter().enumerate() {
        let mut next = Vec::with_capacity(out.len() * (max as usize + 1));
        for base in &out {
            for o in 0..=max {
                let mut orders = base.orders.clone();
                orders[var] = o;
                next.push(MultiIndex { orders });
            }
        }
        out = next;
    }
    out.sort_by(|a, b| a.basis_cmp(b));
    out
}

/// One merged term of the chain-rule expansion of `∂^s σ(z)`:
/// `coefficient · σ^(sigma_order)(z) · Π factor^multiplicity`.
#[derive(Clone, PartialEq, Eq)]
pub struct BrunoTerm {
    /// Which derivative of the activation multiplies the term (k ≥ 1).
    pub sigma_order: usize,
    /// Jet factors with multiplicities, sorted in basis order.
    pub factors: Vec<(MultiIndex, u32)>,
    /// Number of set partitions that merge into this term.
    pub coefficient: u64,
}

impl BrunoTerm {
    /// Total number of factors counted with multiplicity; equals `sigma_order`.
    pub fn factor_count(&self) -> usize {
        self.factors.iter().map(|&(_, m)| m as usize).sum()
    }
}

impl fmt::Debug for BrunoTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}*s{}", self.coefficient, self.sigma_order)?;
        for (idx, m) in &self.factors {
            write!(f, " z{idx}")?;
            if *m > 1 {
                write!(f, "^{m}")?;
            }
        }
        Ok(())
    }
}

/// Expands `∂^s σ(z)` into merged chain-rule terms.
///
/// The `|s|` differentiation slots are listed out and every set partition of
/// them is enumerated; a partition with `k` blocks contributes to the term
/// multiplying `σ^(k)`, with each block collapsing to the multi-index of the
/// variables it contains. Identical factor multisets merge, so the summed
/// coefficients equal the Bell number of `|s|`. Requires `1 <= |s| <= 5`.
pub fn bruno_terms(s: &MultiIndex) -> Result<Vec<BrunoTerm>> {
    let total = s.order();
    if total == 0 || total > MAX_JET_ORDER {
        return Err(EngineError::OrderLimit {
            got: total,
            limit: MAX_JET_ORDER,
        });
    }

    // slot i holds the variable that differentiation slot i acts on
    let mut slots = Vec::with_capacity(total);
    for (var, &o) in s.orders.iter().enumerate() {
        for _ in 0..o {
            slots.push(var);
        }
    }

    let mut merged: HashMap<Vec<(MultiIndex, u32)>, u64> = HashMap::new();
    for partition in set_partitions(total) {
        let n_blocks = *partition.iter().max().unwrap() as usize + 1;
        let mut block_orders = vec![vec![0u8; s.n_vars()]; n_blocks];
        for (slot, &block) in partition.iter().enumerate() {
            block_orders[block as usize][slots[slot]] += 1;
        }
        let mut factors: Vec<MultiIndex> = block_orders
            .into_iter()
            .map(|orders| MultiIndex { orders })
            .collect();
        factors.sort_by(|a, b| a.basis_cmp(b));

        let mut key: Vec<(MultiIndex, u32)> = Vec::new();
        for factor in factors {
            match key.last_mut() {
                Some((prev, m)) if *prev == factor => *m += 1,
                _ => key.push((factor, 1)),
            }
        }
        *merged.entry(key).or_insert(0) += 1;
    }

    let mut terms: Vec<BrunoTerm> = merged
        .into_iter()
        .map(|(factors, coefficient)| {
            let sigma_order = factors.iter().map(|&(_, m)| m as usize).sum();
            BrunoTerm {
                sigma_order,
                factors,
                coefficient,
            }
        })
        .collect();
    // highest sigma derivative first, then a stable order on the factors
    terms.sort_by(|a, b| {
        b.sigma_order
            .cmp(&a.sigma_order)
            .then_with(|| cmp_factor_lists(&a.factors, &b.factors))
    });
    Ok(terms)
}

fn cmp_factor_lists(a: &[(MultiIndex, u32)], b: &[(MultiIndex, u32)]) -> Ordering {
    for ((ia, ma), (ib, mb)) in a.iter().zip(b.iter()) {
        let c = ia.basis_cmp(ib).then(ma.cmp(mb));
        if c != Ordering::Equal {
            return c;
        }
    }
    a.len().cmp(&b.len())
}

/// Enumerates set partitions of `{0, .., n-1}` as restricted growth strings.
fn set_partitions(n: usize) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    let mut current = vec![0u8; n];
    fn recurse(current: &mut Vec<u8>, pos: usize, max_used: u8, out: &mut Vec<Vec<u8>>) {
        if pos == current.len() {
            out.push(current.clone());
            return;
        }
        for block in 0..=max_used + 1 {
            current[pos] = block;
            recurse(current, pos + 1, max_used.max(block), out);
        }
    }
    if n == 0 {
        return vec![vec![]];
    }
    current[0] = 0;
    recurse(&mut current, 1, 0, &mut out);
    out
}

/// An ordered, deduplicated, downward-closed set of multi-indices.
///
/// Downward closure means: if `s` is present, so is every `r` with `s - r`
/// componentwise nonnegative. Iteration order is fixed (ascending `|s|`, then
/// the [`MultiIndex::basis_cmp`] tie-break) so matrices, caches, and file
/// outputs derived from a basis are reproducible byte for byte.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DerivativeBasis {
    indices: Vec<MultiIndex>,
    positions: HashMap<MultiIndex, usize>,
    n_vars: usize,
    max_order: usize,
}

impl DerivativeBasis {
    /// All multi-indices over `n_vars` variables with `|s| <= max_order`.
    pub fn total_degree(n_vars: usize, max_order: usize) -> Result<Self> {
        if max_order > MAX_JET_ORDER {
            return Err(EngineError::OrderLimit {
                got: max_order,
                limit: MAX_JET_ORDER,
            });
        }
        let mut indices = vec![MultiIndex::zero(n_vars)];
        let mut frontier = indices.clone();
        for _ in 0..max_order {
            let mut next = Vec::new();
            for idx in &frontier {
                for var in 0..n_vars {
                    let mut orders = idx.orders.clone();
                    orders[var] += 1;
                    next.push(MultiIndex { orders });
                }
            }
            next.sort_by(|a, b| a.basis_cmp(b));
            next.dedup();
            indices.extend(next.iter().cloned());
            frontier = next;
        }
        Self::from_sorted(indices, n_vars)
    }

    /// Closes the given indices downward and fixes the iteration order.
    pub fn from_indices(seed: &[MultiIndex]) -> Result<Self> {
        let n_vars = seed.first().map(|s| s.n_vars()).unwrap_or(0);
        if n_vars == 0 {
            return Err(EngineError::InvalidConfig(
                "a derivative basis needs at least one index over at least one variable".into(),
            ));
        }
        let mut all = Vec::new();
        for s in seed {
            if s.n_vars() != n_vars {
                return Err(EngineError::InvalidConfig(
                    "mixed variable counts in basis seed".into(),
                ));
            }
            all.extend(lower_set(s));
        }
        all.sort_by(|a, b| a.basis_cmp(b));
        all.dedup();
        Self::from_sorted(all, n_vars)
    }

    fn from_sorted(indices: Vec<MultiIndex>, n_vars: usize) -> Result<Self> {
        let max_order = indices.iter().map(|s| s.order()).max().unwrap_or(0);
        if max_order > MAX_JET_ORDER {
            return Err(EngineError::OrderLimit {
                got: max_order,
                limit: MAX_JET_ORDER,
            });
        }
        let positions = indices
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Ok(DerivativeBasis {
            indices,
            positions,
            n_vars,
            max_order,
        })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    pub fn iter(&self) -> impl Iterator<Item = &MultiIndex> {
        self.indices.iter()
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn index_at(&self, pos: usize) -> &MultiIndex {
        &self.indices[pos]
    }

    pub fn position(&self, s: &MultiIndex) -> Option<usize> {
        self.positions.get(s).copied()
    }

    pub fn contains(&self, s: &MultiIndex) -> bool {
        self.positions.contains_key(s)
    }

    /// True if every index's lower set is present.
    pub fn is_downward_closed(&self) -> bool {
        self.indices
            .iter()
            .all(|s| lower_set(s).iter().all(|r| self.contains(r)))
    }

    /// True if every index of `self` appears in `other`.
    pub fn is_subset_of(&self, other: &DerivativeBasis) -> bool {
        self.indices.iter().all(|s| other.contains(s))
    }
}

/// Memoized chain-rule expansions for every nonzero index of a basis.
///
/// Built once at engine start-up; the training loop never re-derives
/// partitions. The same table serves the backward pass, where the expansion
/// of `∂^q σ'(z)` uses the partitions of `q` with every sigma order shifted
/// up by one.
#[derive(Clone, Debug)]
pub struct BrunoTable {
    expansions: HashMap<MultiIndex, Vec<BrunoTerm>>,
}

impl BrunoTable {
    pub fn for_basis(basis: &DerivativeBasis) -> Result<Self> {
        let mut expansions = HashMap::new();
        for s in basis.iter() {
            if !s.is_zero() {
                expansions.insert(s.clone(), bruno_terms(s)?);
            }
        }
        Ok(BrunoTable { expansions })
    }

    pub fn terms(&self, s: &MultiIndex) -> &[BrunoTerm] {
        self.expansions
            .get(s)
            .map(Vec::as_slice)
            .expect("expansion memoized for every basis index")
    }
}
