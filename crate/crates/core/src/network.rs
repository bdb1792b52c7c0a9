//! Network topology, seeded parameter initialization, and the jet forward
//! pass.
//!
//! A layer's *jet* bundles the activity matrix `z` (neurons × patterns) with
//! one matrix per derivative multi-index of the active basis. Propagating a
//! jet through a connection is one fused element-wise expansion per index —
//! the chain-rule expansion of `∂^s σ(z)` — followed by one matrix product
//! with the connection's weights.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::activation::{sigma_derivatives, ActivationKind};
use crate::error::{EngineError, Result};
use crate::linalg::{add_column_vector, ewise_sum_of_products, gemm, Gemm, Matrix, ProductTerm};
use crate::multiindex::{BrunoTable, DerivativeBasis, MultiIndex};
use crate::scalar::Scalar;

/// Interval every weight and threshold is clamped to after any update.
pub const WEIGHT_CLAMP: f64 = 20.0;

/// One layer: a width and an activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: ActivationKind,
}

impl LayerSpec {
    pub fn sigmoid(width: usize) -> Self {
        LayerSpec {
            width,
            activation: ActivationKind::Sigmoid,
        }
    }

    pub fn linear(width: usize) -> Self {
        LayerSpec {
            width,
            activation: ActivationKind::Linear,
        }
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActivationKind::Sigmoid => write!(f, "sigmoid"),
            ActivationKind::Linear => write!(f, "linear"),
        }
    }
}

/// Parses the compact layer notation `"2*,8,8,1*"`; a trailing `*` marks a
/// linear layer.
pub fn parse_layers(text: &str) -> Result<Vec<LayerSpec>> {
    let mut layers = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        let (digits, linear) = match part.strip_suffix('*') {
            Some(d) => (d, true),
            None => (part, false),
        };
        let width: usize = digits
            .parse()
            .map_err(|_| EngineError::InvalidConfig(format!("bad layer width {part:?}")))?;
        if width == 0 {
            return Err(EngineError::InvalidConfig("layer width must be >= 1".into()));
        }
        layers.push(LayerSpec {
            width,
            activation: if linear {
                ActivationKind::Linear
            } else {
                ActivationKind::Sigmoid
            },
        });
    }
    if layers.len() < 2 {
        return Err(EngineError::InvalidConfig(
            "a network needs at least two layers".into(),
        ));
    }
    Ok(layers)
}

pub fn layers_to_string(layers: &[LayerSpec]) -> String {
    layers
        .iter()
        .map(|l| match l.activation {
            ActivationKind::Linear => format!("{}*", l.width),
            ActivationKind::Sigmoid => l.width.to_string(),
        })
        .collect::<Vec<_>>()
        .join(",")
}

/// Weight matrices and threshold vectors for every connection.
///
/// Connection `i` maps layer `i` (sender, width `||κ||`) to layer `i+1`
/// (receiver, width `||θ||`); its weight matrix is `||θ|| × ||κ||`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T> {
    layers: Vec<LayerSpec>,
    weights: Vec<Matrix<T>>,
    thresholds: Vec<Vec<T>>,
}

impl<T: Scalar> NetworkParams<T> {
    /// Seeded initialization: weights uniform in `±2/√||κ||` where `||κ||` is
    /// the sender width, thresholds uniform in `±0.1`. Fully determined by
    /// the seed.
    pub fn init(layers: &[LayerSpec], rng_seed: u64) -> Result<Self> {
        if layers.len() < 2 {
            return Err(EngineError::InvalidConfig(
                "a network needs at least two layers".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let mut uniform = |lo: f64, hi: f64| -> T {
            let u: f64 = rng.random();
            T::of(lo + (hi - lo) * u)
        };

        let mut weights = Vec::with_capacity(layers.len() - 1);
        let mut thresholds = Vec::with_capacity(layers.len() - 1);
        for pair in layers.windows(2) {
            let (sender, receiver) = (pair[0].width, pair[1].width);
            let range = 2.0 / (sender as f64).sqrt();
            let mut w = Matrix::zeros(receiver, sender);
            for v in w.data_mut() {
                *v = uniform(-range, range);
            }
            weights.push(w);
            thresholds.push((0..receiver).map(|_| uniform(-0.1, 0.1)).collect());
        }
        Ok(NetworkParams {
            layers: layers.to_vec(),
            weights,
            thresholds,
        })
    }

    pub fn from_parts(
        layers: Vec<LayerSpec>,
        weights: Vec<Matrix<T>>,
        thresholds: Vec<Vec<T>>,
    ) -> Result<Self> {
        if weights.len() + 1 != layers.len() || thresholds.len() + 1 != layers.len() {
            return Err(EngineError::InvalidConfig(
                "connection count must be layer count minus one".into(),
            ));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if weights[i].rows() != pair[1].width
                || weights[i].cols() != pair[0].width
                || thresholds[i].len() != pair[1].width
            {
                return Err(EngineError::DimensionMismatch {
                    op: "NetworkParams::from_parts",
                    details: format!("connection {i}"),
                });
            }
        }
        Ok(NetworkParams {
            layers,
            weights,
            thresholds,
        })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn connection_count(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self, conn: usize) -> &Matrix<T> {
        &self.weights[conn]
    }

    pub fn thresholds(&self, conn: usize) -> &[T] {
        &self.thresholds[conn]
    }

    pub fn weights_mut(&mut self, conn: usize) -> &mut Matrix<T> {
        &mut self.weights[conn]
    }

    pub fn thresholds_mut(&mut self, conn: usize) -> &mut [T] {
        &mut self.thresholds[conn]
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].width
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].width
    }

    pub fn param_count(&self) -> usize {
        self.weights
            .iter()
            .map(|w| w.rows() * w.cols())
            .sum::<usize>()
            + self.thresholds.iter().map(Vec::len).sum::<usize>()
    }

    /// Visits every parameter mutably: per connection, weights in storage
    /// order, then thresholds. The visit order is part of the contract
    /// (optimizer state lines up with it).
    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(&mut T)) {
        for (w, t) in self.weights.iter_mut().zip(&mut self.thresholds) {
            for v in w.data_mut() {
                f(v);
            }
            for v in t {
                f(v);
            }
        }
    }

    pub fn params_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, t) in self.weights.iter().zip(&self.thresholds) {
            out.extend_from_slice(w.data());
            out.extend_from_slice(t);
        }
        out
    }
}

/// A layer's value matrix plus one matrix per basis index.
#[derive(Debug, Clone)]
pub struct Jet<T> {
    basis: Arc<DerivativeBasis>,
    mats: Vec<Matrix<T>>,
}

impl<T: Scalar> Jet<T> {
    pub fn new(basis: Arc<DerivativeBasis>, mats: Vec<Matrix<T>>) -> Result<Self> {
        if mats.len() != basis.len() {
            return Err(EngineError::BasisMismatch("Jet::new"));
        }
        if let Some(first) = mats.first() {
            if mats.iter().any(|m| !m.same_shape(first)) {
                return Err(EngineError::DimensionMismatch {
                    op: "Jet::new",
                    details: "jet matrices must share one shape".into(),
                });
            }
        }
        Ok(Jet { basis, mats })
    }

    pub fn zeros(basis: Arc<DerivativeBasis>, width: usize, patterns: usize) -> Self {
        let mats = (0..basis.len())
            .map(|_| Matrix::zeros(width, patterns))
            .collect();
        Jet { basis, mats }
    }

    pub fn basis(&self) -> &Arc<DerivativeBasis> {
        &self.basis
    }

    pub fn width(&self) -> usize {
        self.mats[0].rows()
    }

    pub fn patterns(&self) -> usize {
        self.mats[0].cols()
    }

    /// The activity matrix `z` (the zero index).
    pub fn values(&self) -> &Matrix<T> {
        &self.mats[0]
    }

    pub fn mat(&self, pos: usize) -> &Matrix<T> {
        &self.mats[pos]
    }

    pub fn mat_mut(&mut self, pos: usize) -> &mut Matrix<T> {
        &mut self.mats[pos]
    }

    pub fn by_index(&self, s: &MultiIndex) -> Option<&Matrix<T>> {
        self.basis.position(s).map(|p| &self.mats[p])
    }

    pub fn mats(&self) -> &[Matrix<T>] {
        &self.mats
    }

    pub fn is_finite(&self) -> bool {
        self.mats.iter().all(Matrix::is_finite)
    }

    /// Same basis (by value) and matrix shape.
    pub fn compatible(&self, other: &Jet<T>) -> bool {
        self.basis.as_ref() == other.basis.as_ref() && self.mats[0].same_shape(&other.mats[0])
    }
}

/// How input-layer derivatives are seeded.
pub enum InputRule<T> {
    /// Inputs are the differentiation variables themselves: the first
    /// derivative with respect to variable `i` is a one-hot row `i`, all
    /// higher and mixed derivatives are zero.
    Coordinates,
    /// Analytic derivative matrix per nonzero basis index (parametric inputs,
    /// e.g. a curve traversed by one parameter).
    Supplied(HashMap<MultiIndex, Matrix<T>>),
}

/// Builds the input-layer jet.
pub fn init_input_jet<T: Scalar>(
    inputs: &Matrix<T>,
    rule: &InputRule<T>,
    basis: &Arc<DerivativeBasis>,
) -> Result<Jet<T>> {
    let (rows, cols) = (inputs.rows(), inputs.cols());
    let mut mats = Vec::with_capacity(basis.len());
    for s in basis.iter() {
        if s.is_zero() {
            mats.push(inputs.clone());
            continue;
        }
        match rule {
            InputRule::Coordinates => {
                if s.n_vars() != rows {
                    return Err(EngineError::DimensionMismatch {
                        op: "init_input_jet",
                        details: format!(
                            "{} coordinate variables for {rows} input rows",
                            s.n_vars()
                        ),
                    });
                }
                let mut m = Matrix::zeros(rows, cols);
                if s.order() == 1 {
                    let var = s.orders().iter().position(|&o| o == 1).unwrap();
                    for c in 0..cols {
                        m.set(var, c, T::one());
                    }
                }
                mats.push(m);
            }
            InputRule::Supplied(map) => {
                let m = map
                    .get(s)
                    .ok_or_else(|| EngineError::MissingInputRule(s.to_string()))?;
                if m.rows() != rows || m.cols() != cols {
                    return Err(EngineError::DimensionMismatch {
                        op: "init_input_jet",
                        details: format!("derivative matrix for {s}"),
                    });
                }
                mats.push(m.clone());
            }
        }
    }
    Jet::new(basis.clone(), mats)
}

/// Chain-rule expansion of `∂^s σ^(shift)(z)` for every basis index, built
/// from the layer's jet and precomputed sigma derivatives.
///
/// `shift = 0` gives the forward brackets `∂^s σ(z)`; `shift = 1` gives the
/// backward brackets `∂^s σ'(z)` (the same partitions with every sigma order
/// raised by one).
pub(crate) fn activation_jet<T: Scalar>(
    kind: ActivationKind,
    jet: &Jet<T>,
    sig: &[Matrix<T>],
    table: &BrunoTable,
    shift: usize,
) -> Result<Vec<Matrix<T>>> {
    let basis = jet.basis();
    let mut out = Vec::with_capacity(basis.len());
    match kind {
        ActivationKind::Linear => {
            // identity activation: the sigma-jet is the jet itself for shift
            // 0; for shift 1 the zero index is all ones and the rest vanish
            for (pos, s) in basis.iter().enumerate() {
                out.push(match (shift, s.is_zero()) {
                    (0, _) => jet.mat(pos).clone(),
                    (_, true) => Matrix::filled(jet.width(), jet.patterns(), T::one()),
                    (_, false) => Matrix::zeros(jet.width(), jet.patterns()),
                });
            }
        }
        ActivationKind::Sigmoid => {
            for s in basis.iter() {
                if s.is_zero() {
                    out.push(sig[shift].clone());
                    continue;
                }
                let terms: Vec<ProductTerm<'_, T>> = table
                    .terms(s)
                    .iter()
                    .map(|t| {
                        let mut factors: Vec<(&Matrix<T>, u32)> =
                            vec![(&sig[t.sigma_order + shift], 1)];
                        for (idx, mult) in &t.factors {
                            let p = basis
                                .position(idx)
                                .expect("downward-closed basis covers all factors");
                            factors.push((jet.mat(p), *mult));
                        }
                        ProductTerm::new(T::of(t.coefficient as f64), factors)
                    })
                    .collect();
                out.push(ewise_sum_of_products(&terms)?);
            }
        }
    }
    Ok(out)
}

/// Per-layer cache the backward pass consumes: every layer's jet (activities
/// plus derivative matrices), and optionally the assembled sigma-jets of each
/// sender layer.
pub struct ForwardTape<T> {
    pub(crate) layer_jets: Vec<Jet<T>>,
    pub(crate) sigma_jets: Option<Vec<Vec<Matrix<T>>>>,
}

impl<T: Scalar> ForwardTape<T> {
    pub fn layer_jet(&self, layer: usize) -> &Jet<T> {
        &self.layer_jets[layer]
    }

    pub fn layer_count(&self) -> usize {
        self.layer_jets.len()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ForwardOptions {
    /// Also cache the assembled `∂^s σ(z)` brackets per connection, trading
    /// roughly triple memory for skipping their recomputation in the
    /// backward pass.
    pub cache_sigma_jets: bool,
}

/// Propagates the input jet through every connection.
///
/// Values move as `z^θ = t^θ + W σ(z^κ)` with the threshold vector added to
/// each column; each derivative moves as `∂^s z^θ = W [∂^s σ(z^κ)]`. A
/// non-finite activity aborts with a divergence report naming the layer.
pub fn forward<T: Scalar>(
    params: &NetworkParams<T>,
    input_jet: &Jet<T>,
    table: &BrunoTable,
    options: ForwardOptions,
) -> Result<(Jet<T>, ForwardTape<T>)> {
    if input_jet.width() != params.input_width() {
        return Err(EngineError::DimensionMismatch {
            op: "forward",
            details: format!(
                "input jet width {} vs network input width {}",
                input_jet.width(),
                params.input_width()
            ),
        });
    }
    let basis = input_jet.basis().clone();
    let max_sigma = basis.max_order();

    let mut layer_jets: Vec<Jet<T>> = Vec::with_capacity(params.layers.len());
    let mut sigma_jets = options.cache_sigma_jets.then(Vec::new);
    layer_jets.push(input_jet.clone());

    for conn in 0..params.connection_count() {
        let sender = params.layers[conn];
        let current = &layer_jets[conn];
        let sig = sigma_derivatives(sender.activation, current.values(), max_sigma);
        let brackets = activation_jet(sender.activation, current, &sig, table, 0)?;

        let w = &params.weights[conn];
        let mut mats = Vec::with_capacity(basis.len());
        for (pos, bracket) in brackets.iter().enumerate() {
            let mut out = gemm(w, bracket, Gemm::NN)?;
            if pos == 0 {
                add_column_vector(&mut out, &params.thresholds[conn])?;
            }
            if !out.is_finite() {
                return Err(EngineError::Divergence {
                    place: "forward activity",
                    layer: conn + 1,
                    epoch: 0,
                });
            }
            mats.push(out);
        }
        if let Some(cache) = sigma_jets.as_mut() {
            cache.push(brackets);
        }
        layer_jets.push(Jet::new(basis.clone(), mats)?);
    }

    let output = layer_jets.last().unwrap().clone();
    Ok((
        output,
        ForwardTape {
            layer_jets,
            sigma_jets,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis2(order: usize) -> Arc<DerivativeBasis> {
        Arc::new(DerivativeBasis::total_degree(2, order).unwrap())
    }

    #[test]
    fn layer_notation_round_trips() {
        let layers = parse_layers("2*,8, 8,1*").unwrap();
        assert_eq!(layers.len(), 4);
        assert_eq!(layers[0], LayerSpec::linear(2));
        assert_eq!(layers[1], LayerSpec::sigmoid(8));
        assert_eq!(layers[3], LayerSpec::linear(1));
        assert_eq!(layers_to_string(&layers), "2*,8,8,1*");
        assert!(parse_layers("2*").is_err());
        assert!(parse_layers("2,x").is_err());
        assert!(parse_layers("0,1").is_err());
    }

    #[test]
    fn init_respects_sender_width_range() {
        // sender width 4 gives the range +-2/sqrt(4) = +-1
        let layers = [LayerSpec::linear(4), LayerSpec::sigmoid(3)];
        let params = NetworkParams::<f64>::init(&layers, 9).unwrap();
        assert!(params.weights(0).data().iter().all(|w| w.abs() <= 1.0));
        assert!(params.thresholds(0).iter().all(|t| t.abs() <= 0.1));
    }

    #[test]
    fn init_is_seed_deterministic() {
        let layers = parse_layers("2*,8,8,1*").unwrap();
        let a = NetworkParams::<f64>::init(&layers, 42).unwrap();
        let b = NetworkParams::<f64>::init(&layers, 42).unwrap();
        assert_eq!(a, b);
        let c = NetworkParams::<f64>::init(&layers, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_samples_cover_the_range() {
        // 100_000 weights from a 400-wide sender: range +-0.1
        let layers = [LayerSpec::linear(400), LayerSpec::sigmoid(250)];
        let params = NetworkParams::<f64>::init(&layers, 7).unwrap();
        let range = 2.0 / (400.0f64).sqrt();
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &w in params.weights(0).data() {
            assert!(w.abs() <= range);
            lo = lo.min(w);
            hi = hi.max(w);
        }
        assert_eq!(params.weights(0).data().len(), 100_000);
        assert!(lo <= -0.99 * range, "min {lo} should reach 99% of -{range}");
        assert!(hi >= 0.99 * range, "max {hi} should reach 99% of {range}");
    }

    #[test]
    fn coordinate_input_jet_is_one_hot() {
        let basis = basis2(2);
        let inputs =
            Matrix::from_fn(2, 3, |r, c| (r as f64) + 10.0 * (c as f64));
        let jet = init_input_jet(&inputs, &InputRule::Coordinates, &basis).unwrap();
        assert_eq!(jet.values().data(), inputs.data());

        let da = jet
            .by_index(&MultiIndex::new(&[1, 0]).unwrap())
            .unwrap();
        for c in 0..3 {
            assert_eq!(da.get(0, c), 1.0);
            assert_eq!(da.get(1, c), 0.0);
        }
        let daa = jet.by_index(&MultiIndex::new(&[2, 0]).unwrap()).unwrap();
        assert!(daa.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn supplied_rule_must_cover_basis() {
        let basis = Arc::new(DerivativeBasis::total_degree(1, 1).unwrap());
        let inputs = Matrix::<f64>::zeros(3, 4);
        let rule = InputRule::Supplied(HashMap::new());
        assert!(matches!(
            init_input_jet(&inputs, &rule, &basis),
            Err(EngineError::MissingInputRule(_))
        ));
    }

    #[test]
    fn zero_params_give_constant_outputs_and_zero_derivatives() {
        let layers = parse_layers("2*,8,8,1*").unwrap();
        let mut params = NetworkParams::<f64>::init(&layers, 1).unwrap();
        params.for_each_param_mut(|v| *v = 0.0);

        let basis = basis2(2);
        let table = BrunoTable::for_basis(&basis).unwrap();
        let inputs = Matrix::from_fn(2, 5, |r, c| (r + c) as f64 * 0.1);
        let jet = init_input_jet(&inputs, &InputRule::Coordinates, &basis).unwrap();
        let (out, _) = forward(&params, &jet, &table, ForwardOptions::default()).unwrap();

        let first = out.values().get(0, 0);
        assert!(out.values().data().iter().all(|&v| v == first));
        for pos in 1..basis.len() {
            assert!(out.mat(pos).data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn identity_linear_layer_passes_jet_through() {
        let layers = [LayerSpec::linear(2), LayerSpec::linear(2)];
        let mut params = NetworkParams::<f64>::init(&layers, 1).unwrap();
        params.for_each_param_mut(|v| *v = 0.0);
        for i in 0..2 {
            params.weights_mut(0).set(i, i, 1.0);
        }

        let basis = basis2(2);
        let table = BrunoTable::for_basis(&basis).unwrap();
        let inputs = Matrix::from_fn(2, 4, |r, c| (1 + r + 2 * c) as f64 * 0.3);
        let jet = init_input_jet(&inputs, &InputRule::Coordinates, &basis).unwrap();
        let (out, _) = forward(&params, &jet, &table, ForwardOptions::default()).unwrap();

        for pos in 0..basis.len() {
            assert_eq!(out.mat(pos).data(), jet.mat(pos).data());
        }
    }

    #[test]
    fn divergence_is_reported_with_layer() {
        let layers = parse_layers("2*,4,1*").unwrap();
        let mut params = NetworkParams::<f64>::init(&layers, 1).unwrap();
        params.weights_mut(1).set(0, 0, f64::NAN);

        let basis = basis2(1);
        let table = BrunoTable::for_basis(&basis).unwrap();
        let inputs = Matrix::from_fn(2, 2, |_, _| 0.5);
        let jet = init_input_jet(&inputs, &InputRule::Coordinates, &basis).unwrap();
        match forward(&params, &jet, &table, ForwardOptions::default()) {
            Err(EngineError::Divergence { layer, .. }) => assert_eq!(layer, 2),
            Err(e) => panic!("expected divergence, got {e}"),
            Ok(_) => panic!("expected divergence"),
        }
    }

    #[test]
    fn sigma_jet_cache_does_not_change_results() {
        let layers = parse_layers("2*,6,6,1*").unwrap();
        let params = NetworkParams::<f64>::init(&layers, 11).unwrap();
        let basis = basis2(3);
        let table = BrunoTable::for_basis(&basis).unwrap();
        let inputs = Matrix::from_fn(2, 7, |r, c| ((r + 1) * (c + 1)) as f64 * 0.07 - 0.5);
        let jet = init_input_jet(&inputs, &InputRule::Coordinates, &basis).unwrap();

        let (plain, _) = forward(&params, &jet, &table, ForwardOptions::default()).unwrap();
        let (cached, tape) = forward(
            &params,
            &jet,
            &table,
            ForwardOptions {
                cache_sigma_jets: true,
            },
        )
        .unwrap();
        assert!(tape.sigma_jets.is_some());
        for pos in 0..basis.len() {
            assert_eq!(plain.mat(pos).data(), cached.mat(pos).data());
        }
    }
}
