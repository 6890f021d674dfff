//! Circuit representation, benchmark families, connectivity analysis and
//! angle binding.
//!
//! Conventions used everywhere in the crate:
//! * `Rz(θ) = diag(e^{-iθ/2}, e^{+iθ/2})`
//! * `Rzz(θ) = exp(-iθ/2 · Z⊗Z)`
//! * bitstrings are little-endian `u64`s: qubit 0 is the least significant bit.

use std::collections::{BTreeSet, VecDeque};
use std::f64::consts::PI;
use std::fmt;
use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest register the `u64` bitstring encoding supports.
pub const MAX_QUBITS: usize = 63;

/// Where a rotation angle comes from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AngleRef {
    Fixed(f64),
    /// Index into the trainable parameter vector.
    Param(usize),
    /// Feature-map slot with exponent `i ≥ 1`: angle `2πx / 2^i`.
    Feature(u32),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Gate {
    HadamardLayer,
    Rz { qubit: usize, angle: AngleRef },
    Rzz { qubits: (usize, usize), angle: AngleRef },
}

impl Gate {
    pub fn angle(&self) -> Option<AngleRef> {
        match self {
            Gate::HadamardLayer => None,
            Gate::Rz { angle, .. } | Gate::Rzz { angle, .. } => Some(*angle),
        }
    }

    pub fn is_diagonal(&self) -> bool {
        !matches!(self, Gate::HadamardLayer)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CircuitFamily {
    Hadamard,
    Product,
    #[serde(rename = "IQP")]
    Iqp,
    #[serde(rename = "IQP1DChain")]
    Iqp1dChain,
    #[serde(rename = "ExtendedIQP")]
    ExtendedIqp,
}

impl CircuitFamily {
    pub const ALL: [CircuitFamily; 5] = [
        CircuitFamily::Hadamard,
        CircuitFamily::Product,
        CircuitFamily::Iqp,
        CircuitFamily::Iqp1dChain,
        CircuitFamily::ExtendedIqp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CircuitFamily::Hadamard => "Hadamard",
            CircuitFamily::Product => "Product",
            CircuitFamily::Iqp => "IQP",
            CircuitFamily::Iqp1dChain => "IQP1DChain",
            CircuitFamily::ExtendedIqp => "ExtendedIQP",
        }
    }
}

impl fmt::Display for CircuitFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for CircuitFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CircuitFamily::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown circuit family {s:?}")))
    }
}

/// How `build_family` fills rotation angles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnglePolicy {
    /// Every Rz/Rzz gets its own trainable parameter.
    Trainable,
    /// Every Rz/Rzz gets the same fixed angle.
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyOptions {
    pub angles: AnglePolicy,
    /// Explicit bipartition for ExtendedIQP; defaults to evens | odds.
    #[serde(default)]
    pub bipartition: Option<Bipartition>,
    /// Number of qubits (0..k) carrying feature-map rotations in the first
    /// diagonal block; qubit q gets exponent q+1.
    #[serde(default)]
    pub feature_qubits: usize,
}

impl Default for FamilyOptions {
    fn default() -> Self {
        FamilyOptions {
            angles: AnglePolicy::Trainable,
            bipartition: None,
            feature_qubits: 0,
        }
    }
}

impl FamilyOptions {
    pub fn fixed(angle: f64) -> Self {
        FamilyOptions {
            angles: AnglePolicy::Fixed(angle),
            ..Default::default()
        }
    }

    pub fn with_features(mut self, k: usize) -> Self {
        self.feature_qubits = k;
        self
    }

    pub fn with_bipartition(mut self, b: Bipartition) -> Self {
        self.bipartition = Some(b);
        self
    }
}

/// An ordered gate program over `n` qubits with symbolic angles.
#[derive(Clone, Debug, PartialEq)]
pub struct Circuit {
    n: usize,
    gates: Vec<Gate>,
    family: Option<CircuitFamily>,
    params: usize,
}

impl Circuit {
    /// Validates qubit ranges, distinct Rzz endpoints, feature placement and
    /// contiguity of parameter indices.
    pub fn new(n: usize, gates: Vec<Gate>, family: Option<CircuitFamily>) -> Result<Self> {
        if n == 0 || n > MAX_QUBITS {
            return Err(Error::InvalidCircuit(format!("qubit count {n} outside 1..={MAX_QUBITS}")));
        }
        let mut seen = BTreeSet::new();
        for (k, g) in gates.iter().enumerate() {
            match g {
                Gate::HadamardLayer => {}
                Gate::Rz { qubit, .. } if *qubit >= n => {
                    return Err(Error::InvalidCircuit(format!("gate {k}: qubit {qubit} >= n = {n}")));
                }
                Gate::Rzz { qubits: (p, q), angle } => {
                    if *p >= n || *q >= n || p == q {
                        return Err(Error::InvalidCircuit(format!(
                            "gate {k}: Rzz pair ({p},{q}) invalid for n = {n}"
                        )));
                    }
                    if matches!(angle, AngleRef::Feature(_)) {
                        return Err(Error::InvalidCircuit(format!(
                            "gate {k}: feature angles are only allowed on Rz"
                        )));
                    }
                }
                Gate::Rz { .. } => {}
            }
            match g.angle() {
                Some(AngleRef::Param(i)) => {
                    seen.insert(i);
                }
                Some(AngleRef::Feature(0)) => {
                    return Err(Error::InvalidCircuit(format!("gate {k}: feature exponent must be >= 1")));
                }
                Some(AngleRef::Fixed(v)) if !v.is_finite() => {
                    return Err(Error::InvalidCircuit(format!("gate {k}: non-finite angle")));
                }
                _ => {}
            }
        }
        let params = seen.len();
        if let Some(&max) = seen.iter().next_back() {
            if max + 1 != params {
                return Err(Error::InvalidCircuit(format!(
                    "parameter indices are not contiguous: {params} distinct, max index {max}"
                )));
            }
        }
        Ok(Circuit { n, gates, family, params })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    pub fn family(&self) -> Option<CircuitFamily> {
        self.family
    }

    pub fn param_count(&self) -> usize {
        self.params
    }

    pub fn has_features(&self) -> bool {
        self.gates
            .iter()
            .any(|g| matches!(g.angle(), Some(AngleRef::Feature(_))))
    }

    /// Qubits carrying a feature rotation, paired with their exponent.
    pub fn feature_slots(&self) -> Vec<(usize, u32)> {
        self.gates
            .iter()
            .filter_map(|g| match g {
                Gate::Rz { qubit, angle: AngleRef::Feature(e) } => Some((*qubit, *e)),
                _ => None,
            })
            .collect()
    }

    fn hadamard_positions(&self) -> Vec<usize> {
        self.gates
            .iter()
            .enumerate()
            .filter(|(_, g)| matches!(g, Gate::HadamardLayer))
            .map(|(k, _)| k)
            .collect()
    }

    /// Gate ranges of the two diagonal blocks of an `H U2 H U1 H` program
    /// (first block `U1` is applied first).
    pub fn extended_iqp_blocks(&self) -> Result<(Range<usize>, Range<usize>)> {
        let h = self.hadamard_positions();
        let last = self.gates.len().wrapping_sub(1);
        if h.len() != 3 || h[0] != 0 || h[2] != last {
            return Err(Error::InvalidCircuit(
                "extended-IQP form needs exactly three H layers: first, interior, last".into(),
            ));
        }
        Ok((1..h[1], h[1] + 1..h[2]))
    }

    /// Gate range of the diagonal block of an `H U H` program.
    pub fn iqp_block(&self) -> Result<Range<usize>> {
        let h = self.hadamard_positions();
        let last = self.gates.len().wrapping_sub(1);
        if h.len() != 2 || h[0] != 0 || h[1] != last {
            return Err(Error::InvalidCircuit("IQP form needs exactly two H layers: first and last".into()));
        }
        Ok(1..h[1])
    }

    /// A copy with every angle passed through `f`; structure is unchanged.
    pub fn map_angles(&self, mut f: impl FnMut(AngleRef) -> AngleRef) -> Result<Circuit> {
        let gates = self
            .gates
            .iter()
            .map(|g| match g {
                Gate::HadamardLayer => Gate::HadamardLayer,
                Gate::Rz { qubit, angle } => Gate::Rz { qubit: *qubit, angle: f(*angle) },
                Gate::Rzz { qubits, angle } => Gate::Rzz { qubits: *qubits, angle: f(*angle) },
            })
            .collect();
        Circuit::new(self.n, gates, self.family)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("circuit serialisation is infallible")
    }

    pub fn from_json(s: &str) -> Result<Circuit> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GateWire {
    kind: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    qubits: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    angle: Option<AngleRef>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CircuitWire {
    n: usize,
    gates: Vec<GateWire>,
    family: Option<CircuitFamily>,
    params: usize,
}

impl Serialize for Circuit {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let gates = self
            .gates
            .iter()
            .map(|g| match g {
                Gate::HadamardLayer => GateWire { kind: "H".into(), qubits: vec![], angle: None },
                Gate::Rz { qubit, angle } => GateWire {
                    kind: "Rz".into(),
                    qubits: vec![*qubit],
                    angle: Some(*angle),
                },
                Gate::Rzz { qubits: (p, q), angle } => GateWire {
                    kind: "Rzz".into(),
                    qubits: vec![*p, *q],
                    angle: Some(*angle),
                },
            })
            .collect();
        CircuitWire { n: self.n, gates, family: self.family, params: self.params }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Circuit {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let wire = CircuitWire::deserialize(d)?;
        let mut gates = Vec::with_capacity(wire.gates.len());
        for g in wire.gates {
            let gate = match (g.kind.as_str(), g.qubits.as_slice(), g.angle) {
                ("H", [], None) => Gate::HadamardLayer,
                ("Rz", [q], Some(angle)) => Gate::Rz { qubit: *q, angle },
                ("Rzz", [p, q], Some(angle)) => Gate::Rzz { qubits: (*p, *q), angle },
                (kind, qs, _) => {
                    return Err(D::Error::custom(format!("malformed gate {kind:?} on qubits {qs:?}")))
                }
            };
            gates.push(gate);
        }
        let c = Circuit::new(wire.n, gates, wire.family).map_err(D::Error::custom)?;
        if c.params != wire.params {
            return Err(D::Error::custom(format!(
                "declared params = {} but gates reference {}",
                wire.params, c.params
            )));
        }
        Ok(c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BoundGate {
    HadamardLayer,
    Rz { qubit: usize, angle: f64 },
    Rzz { qubits: (usize, usize), angle: f64 },
}

/// A circuit with every angle resolved to radians.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundCircuit {
    pub n: usize,
    pub gates: Vec<BoundGate>,
    pub family: Option<CircuitFamily>,
}

impl BoundCircuit {
    /// Re-expresses the bound program as a circuit with only fixed angles.
    pub fn to_circuit(&self) -> Circuit {
        let gates = self
            .gates
            .iter()
            .map(|g| match *g {
                BoundGate::HadamardLayer => Gate::HadamardLayer,
                BoundGate::Rz { qubit, angle } => Gate::Rz { qubit, angle: AngleRef::Fixed(angle) },
                BoundGate::Rzz { qubits, angle } => Gate::Rzz { qubits, angle: AngleRef::Fixed(angle) },
            })
            .collect();
        Circuit::new(self.n, gates, self.family).expect("bound circuits are structurally valid")
    }

    /// Bound gates of `range` (e.g. one diagonal block).
    pub fn slice(&self, range: Range<usize>) -> &[BoundGate] {
        &self.gates[range]
    }
}

/// Feature-map angles `2πx / 2^i` for `i = 1..=n`.
pub fn phase_feature_map(n: usize, x: f64) -> Vec<f64> {
    (1..=n).map(|i| feature_angle(i as u32, x)).collect()
}

pub fn feature_angle(exponent: u32, x: f64) -> f64 {
    2.0 * PI * x / 2f64.powi(exponent as i32)
}

pub fn bind(c: &Circuit, theta: &[f64], x: Option<f64>) -> Result<BoundCircuit> {
    if theta.len() != c.param_count() {
        return Err(Error::ParamLength { expected: c.param_count(), got: theta.len() });
    }
    let resolve = |a: AngleRef| -> Result<f64> {
        Ok(match a {
            AngleRef::Fixed(v) => v,
            AngleRef::Param(i) => theta[i],
            AngleRef::Feature(e) => feature_angle(e, x.ok_or(Error::MissingFeature)?),
        })
    };
    let gates = c
        .gates()
        .iter()
        .map(|g| {
            Ok(match *g {
                Gate::HadamardLayer => BoundGate::HadamardLayer,
                Gate::Rz { qubit, angle } => BoundGate::Rz { qubit, angle: resolve(angle)? },
                Gate::Rzz { qubits, angle } => BoundGate::Rzz { qubits, angle: resolve(angle)? },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BoundCircuit { n: c.n(), gates, family: c.family() })
}

/// Undirected simple graph on the qubits, one edge per Rzz-coupled pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConnectivityGraph {
    pub n: usize,
    /// Normalised `(min, max)` pairs.
    pub edges: BTreeSet<(usize, usize)>,
}

impl ConnectivityGraph {
    pub fn new(n: usize) -> Self {
        ConnectivityGraph { n, edges: BTreeSet::new() }
    }

    pub fn add_edge(&mut self, p: usize, q: usize) {
        if p != q {
            self.edges.insert((p.min(q), p.max(q)));
        }
    }

    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(p, q) in &self.edges {
            adj[p].push(q);
            adj[q].push(p);
        }
        adj
    }
}

pub fn connectivity_graph(c: &Circuit) -> ConnectivityGraph {
    let mut g = ConnectivityGraph::new(c.n());
    for gate in c.gates() {
        if let Gate::Rzz { qubits: (p, q), .. } = gate {
            g.add_edge(*p, *q);
        }
    }
    g
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    A,
    B,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bipartition {
    pub a: Vec<usize>,
    pub b: Vec<usize>,
}

impl Bipartition {
    /// Evens in A, odds in B.
    pub fn even_odd(n: usize) -> Self {
        Bipartition {
            a: (0..n).step_by(2).collect(),
            b: (1..n).step_by(2).collect(),
        }
    }

    pub fn sides(&self, n: usize) -> Result<Vec<Side>> {
        let mut side = vec![None; n];
        for (set, s) in [(&self.a, Side::A), (&self.b, Side::B)] {
            for &q in set {
                if q >= n || side[q].is_some() {
                    return Err(Error::InvalidArgument(format!(
                        "bipartition is not a partition of 0..{n} (qubit {q})"
                    )));
                }
                side[q] = Some(s);
            }
        }
        side.into_iter()
            .enumerate()
            .map(|(q, s)| s.ok_or_else(|| Error::InvalidArgument(format!("qubit {q} missing from bipartition"))))
            .collect()
    }

    pub fn separates(&self, g: &ConnectivityGraph) -> bool {
        match self.sides(g.n) {
            Ok(sides) => g.edges.iter().all(|&(p, q)| sides[p] != sides[q]),
            Err(_) => false,
        }
    }
}

/// BFS two-colouring from the lowest-index unvisited node; each new
/// component's root goes to A. Fails with an odd-cycle witness.
pub fn check_bipartite(g: &ConnectivityGraph) -> Result<Bipartition> {
    let adj = g.adjacency();
    let mut colour: Vec<Option<Side>> = vec![None; g.n];
    let mut parent: Vec<Option<usize>> = vec![None; g.n];
    for root in 0..g.n {
        if colour[root].is_some() {
            continue;
        }
        colour[root] = Some(Side::A);
        let mut queue = VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            let cu = colour[u].unwrap();
            for &v in &adj[u] {
                match colour[v] {
                    None => {
                        colour[v] = Some(if cu == Side::A { Side::B } else { Side::A });
                        parent[v] = Some(u);
                        queue.push_back(v);
                    }
                    Some(cv) if cv == cu => {
                        return Err(Error::OddCycle { cycle: odd_cycle(&parent, u, v) });
                    }
                    Some(_) => {}
                }
            }
        }
    }
    let mut part = Bipartition { a: vec![], b: vec![] };
    for (q, c) in colour.into_iter().enumerate() {
        match c.unwrap() {
            Side::A => part.a.push(q),
            Side::B => part.b.push(q),
        }
    }
    Ok(part)
}

/// Closes the BFS-tree paths of the same-coloured edge `(u, v)` into a cycle.
fn odd_cycle(parent: &[Option<usize>], u: usize, v: usize) -> Vec<usize> {
    let path = |mut x: usize| {
        let mut p = vec![x];
        while let Some(y) = parent[x] {
            p.push(y);
            x = y;
        }
        p
    };
    let pu = path(u);
    let pv = path(v);
    let on_u: BTreeSet<usize> = pu.iter().copied().collect();
    let lca_v = pv.iter().position(|x| on_u.contains(x)).unwrap();
    let lca = pv[lca_v];
    let lca_u = pu.iter().position(|&x| x == lca).unwrap();
    let mut cycle: Vec<usize> = pu[..=lca_u].to_vec();
    cycle.extend(pv[..lca_v].iter().rev());
    cycle
}

/// Builds one of the benchmark families. Parameters are numbered in gate
/// order; feature rotations precede the trainable rotations of the first
/// diagonal block.
pub fn build_family(family: CircuitFamily, n: usize, options: &FamilyOptions) -> Result<Circuit> {
    let unsupported = |reason| Error::UnsupportedFamily { family: family.to_string(), n, reason };
    if n == 0 {
        return Err(unsupported("at least one qubit is required"));
    }
    if n > MAX_QUBITS {
        return Err(unsupported("register exceeds the 63-qubit bitstring encoding"));
    }
    if family == CircuitFamily::ExtendedIqp && n < 2 {
        return Err(unsupported("extended-IQP needs at least two qubits"));
    }
    if options.feature_qubits > n {
        return Err(unsupported("more feature qubits than qubits"));
    }
    if options.feature_qubits > 0 && matches!(family, CircuitFamily::Hadamard) {
        return Err(unsupported("the Hadamard family has no diagonal block for features"));
    }

    let mut next = 0usize;
    let mut angle = || match options.angles {
        AnglePolicy::Trainable => {
            next += 1;
            AngleRef::Param(next - 1)
        }
        AnglePolicy::Fixed(v) => AngleRef::Fixed(v),
    };
    let features = |gates: &mut Vec<Gate>| {
        for q in 0..options.feature_qubits {
            gates.push(Gate::Rz { qubit: q, angle: AngleRef::Feature(q as u32 + 1) });
        }
    };

    let mut gates = vec![Gate::HadamardLayer];
    match family {
        CircuitFamily::Hadamard => {}
        CircuitFamily::Product => {
            features(&mut gates);
            for q in 0..n {
                gates.push(Gate::Rz { qubit: q, angle: angle() });
            }
        }
        CircuitFamily::Iqp | CircuitFamily::Iqp1dChain => {
            features(&mut gates);
            for q in 0..n {
                gates.push(Gate::Rz { qubit: q, angle: angle() });
            }
            for p in 0..n {
                let partners = if family == CircuitFamily::Iqp { p + 1..n } else { p + 1..(p + 2).min(n) };
                for q in partners {
                    gates.push(Gate::Rzz { qubits: (p, q), angle: angle() });
                }
            }
            gates.push(Gate::HadamardLayer);
        }
        CircuitFamily::ExtendedIqp => {
            let part = options.bipartition.clone().unwrap_or_else(|| Bipartition::even_odd(n));
            let sides = part.sides(n)?;
            let edges: Vec<(usize, usize)> = (0..n)
                .flat_map(|p| (p + 1..n).map(move |q| (p, q)))
                .filter(|&(p, q)| sides[p] != sides[q])
                .collect();
            for layer in 0..2 {
                if layer == 0 {
                    features(&mut gates);
                }
                for q in 0..n {
                    gates.push(Gate::Rz { qubit: q, angle: angle() });
                }
                for &(p, q) in &edges {
                    gates.push(Gate::Rzz { qubits: (p, q), angle: angle() });
                }
                gates.push(Gate::HadamardLayer);
            }
        }
    }
    Circuit::new(n, gates, Some(family))
}

/// A random benchmark instance with every rotation angle `kπ/8`,
/// `k ~ U{0..7}`.
pub fn random_ensemble_instance<R: Rng + ?Sized>(
    family: CircuitFamily,
    n: usize,
    rng: &mut R,
) -> Result<BoundCircuit> {
    if !matches!(family, CircuitFamily::Iqp | CircuitFamily::ExtendedIqp) {
        return Err(Error::UnsupportedFamily {
            family: family.to_string(),
            n,
            reason: "random ensembles are defined for IQP and ExtendedIQP only",
        });
    }
    let c = build_family(family, n, &FamilyOptions::default())?;
    let theta: Vec<f64> = (0..c.param_count())
        .map(|_| rng.random_range(0..8u32) as f64 * PI / 8.0)
        .collect();
    bind(&c, &theta, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn count(c: &Circuit, pred: impl Fn(&Gate) -> bool) -> usize {
        c.gates().iter().filter(|g| pred(g)).count()
    }

    #[test]
    fn hadamard_family_is_one_layer() {
        let c = build_family(CircuitFamily::Hadamard, 3, &FamilyOptions::default()).unwrap();
        assert_eq!(c.gates(), &[Gate::HadamardLayer]);
        assert_eq!(c.param_count(), 0);
    }

    #[test]
    fn chain_edges_are_nearest_neighbour() {
        let c = build_family(CircuitFamily::Iqp1dChain, 5, &FamilyOptions::default()).unwrap();
        let g = connectivity_graph(&c);
        assert_eq!(g.edges, BTreeSet::from([(0, 1), (1, 2), (2, 3), (3, 4)]));
        c.iqp_block().unwrap();
    }

    #[test]
    fn extended_iqp_with_explicit_bipartition() {
        let opts = FamilyOptions::default().with_bipartition(Bipartition { a: vec![0, 1], b: vec![2, 3] });
        let c = build_family(CircuitFamily::ExtendedIqp, 4, &opts).unwrap();
        assert_eq!(count(&c, |g| matches!(g, Gate::HadamardLayer)), 3);
        c.extended_iqp_blocks().unwrap();
        let g = connectivity_graph(&c);
        assert!(g.edges.is_subset(&BTreeSet::from([(0, 2), (0, 3), (1, 2), (1, 3)])));
        assert_eq!(check_bipartite(&g).unwrap(), Bipartition { a: vec![0, 1], b: vec![2, 3] });
    }

    #[test]
    fn extended_iqp_rejects_one_qubit() {
        let err = build_family(CircuitFamily::ExtendedIqp, 1, &FamilyOptions::default()).unwrap_err();
        assert!(matches!(err, Error::UnsupportedFamily { .. }));
    }

    #[test]
    fn complete_graph_has_odd_cycle() {
        let c = build_family(CircuitFamily::Iqp, 4, &FamilyOptions::default()).unwrap();
        let g = connectivity_graph(&c);
        assert_eq!(g.edges.len(), 6);
        match check_bipartite(&g) {
            Err(Error::OddCycle { cycle }) => {
                assert_eq!(cycle.len() % 2, 1);
                for k in 0..cycle.len() {
                    let (p, q) = (cycle[k], cycle[(k + 1) % cycle.len()]);
                    assert!(g.edges.contains(&(p.min(q), p.max(q))));
                }
            }
            other => panic!("expected odd cycle, got {other:?}"),
        }
    }

    #[test]
    fn four_cycle_and_empty_graph() {
        let mut g = ConnectivityGraph::new(4);
        for (p, q) in [(0, 2), (2, 1), (1, 3), (3, 0)] {
            g.add_edge(p, q);
        }
        assert_eq!(check_bipartite(&g).unwrap(), Bipartition { a: vec![0, 1], b: vec![2, 3] });
        let empty = ConnectivityGraph::new(3);
        assert_eq!(check_bipartite(&empty).unwrap(), Bipartition { a: vec![0, 1, 2], b: vec![] });
    }

    #[test]
    fn feature_map_values() {
        assert_eq!(phase_feature_map(1, 1.0), vec![PI]);
        assert_eq!(phase_feature_map(2, 1.0), vec![PI, PI / 2.0]);
        assert_eq!(phase_feature_map(3, 0.0), vec![0.0; 3]);
    }

    #[test]
    fn binding_resolves_each_kind() {
        let c = Circuit::new(
            2,
            vec![
                Gate::HadamardLayer,
                Gate::Rz { qubit: 0, angle: AngleRef::Feature(1) },
                Gate::Rz { qubit: 1, angle: AngleRef::Param(0) },
                Gate::Rzz { qubits: (0, 1), angle: AngleRef::Fixed(0.7) },
            ],
            None,
        )
        .unwrap();
        let b = bind(&c, &[0.3], Some(1.0)).unwrap();
        assert_eq!(b.gates[1], BoundGate::Rz { qubit: 0, angle: PI });
        assert_eq!(b.gates[2], BoundGate::Rz { qubit: 1, angle: 0.3 });
        assert_eq!(b.gates[3], BoundGate::Rzz { qubits: (0, 1), angle: 0.7 });
        assert!(matches!(bind(&c, &[0.3], None), Err(Error::MissingFeature)));
        assert!(matches!(bind(&c, &[], Some(1.0)), Err(Error::ParamLength { expected: 1, got: 0 })));
    }

    #[test]
    fn parameterless_bind_is_identity() {
        let c = build_family(CircuitFamily::Iqp, 3, &FamilyOptions::fixed(0.25)).unwrap();
        let b = bind(&c, &[], None).unwrap();
        assert_eq!(b.to_circuit(), c);
    }

    #[test]
    fn invalid_circuits_are_rejected() {
        let bad_pair = vec![Gate::Rzz { qubits: (1, 1), angle: AngleRef::Fixed(0.0) }];
        assert!(Circuit::new(2, bad_pair, None).is_err());
        let gap = vec![Gate::Rz { qubit: 0, angle: AngleRef::Param(1) }];
        assert!(Circuit::new(1, gap, None).is_err());
        let feat = vec![Gate::Rzz { qubits: (0, 1), angle: AngleRef::Feature(1) }];
        assert!(Circuit::new(2, feat, None).is_err());
    }

    #[test]
    fn ensemble_angles_are_eighths_of_pi() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = random_ensemble_instance(CircuitFamily::ExtendedIqp, 2, &mut rng).unwrap();
        let mut rz = 0;
        let mut rzz = 0;
        for g in &b.gates {
            let a = match *g {
                BoundGate::HadamardLayer => continue,
                BoundGate::Rz { angle, .. } => {
                    rz += 1;
                    angle
                }
                BoundGate::Rzz { angle, .. } => {
                    rzz += 1;
                    angle
                }
            };
            let k = a / (PI / 8.0);
            assert!((k - k.round()).abs() < 1e-12 && (0.0..8.0).contains(&k));
        }
        assert_eq!((rz, rzz), (4, 2));
        let again = random_ensemble_instance(CircuitFamily::ExtendedIqp, 2, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(again, b);
        assert!(random_ensemble_instance(CircuitFamily::Product, 2, &mut rng).is_err());
    }

    #[test]
    fn json_shape_and_round_trip() {
        let opts = FamilyOptions::default().with_features(2);
        let c = build_family(CircuitFamily::ExtendedIqp, 3, &opts).unwrap();
        let v: serde_json::Value = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(v["n"], 3);
        assert_eq!(v["family"], "ExtendedIQP");
        assert_eq!(v["params"], c.param_count());
        assert_eq!(v["gates"][0], serde_json::json!({"kind": "H"}));
        assert_eq!(v["gates"][1], serde_json::json!({"kind": "Rz", "qubits": [0], "angle": {"feature": 1}}));
        assert_eq!(Circuit::from_json(&c.to_json()).unwrap(), c);
        let declared = format!("\"params\": {}", c.param_count());
        let tampered = c.to_json().replace(&declared, "\"params\": 99");
        assert!(Circuit::from_json(&tampered).is_err());
    }
}
