//! Tensor-network contraction cost. A circuit becomes a network of small
//! tensors with bond dimension 2; a greedy search picks a contraction order
//! and the largest intermediate rank serves as the log₂ time-complexity
//! proxy.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::FRAC_1_SQRT_2;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::circuit::{bind, build_family, BoundCircuit, BoundGate, CircuitFamily, FamilyOptions};
use crate::error::{Error, Result};

/// Largest rank `contract` will materialise.
pub const MAX_CONTRACT_RANK: usize = 26;

/// A dense tensor over bond-dimension-2 indices. `data` is row-major with
/// the first index most significant.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub id: usize,
    pub indices: Vec<usize>,
    pub data: Vec<Complex64>,
}

impl Tensor {
    pub fn rank(&self) -> usize {
        self.indices.len()
    }

    /// The entries re-ordered so that `order[0]` is the most significant
    /// index. `order` must be a permutation of `indices`.
    pub fn permuted(&self, order: &[usize]) -> Result<Vec<Complex64>> {
        let mut src: BTreeMap<usize, usize> = BTreeMap::new();
        let r = self.rank();
        for (k, &i) in self.indices.iter().enumerate() {
            src.insert(i, r - 1 - k);
        }
        let bit_of: Vec<usize> = order
            .iter()
            .map(|i| src.get(i).copied())
            .collect::<Option<_>>()
            .filter(|_| order.len() == r)
            .ok_or_else(|| Error::InvalidArgument(format!("{order:?} is not a permutation of {:?}", self.indices)))?;
        Ok((0..1usize << r)
            .map(|dst| {
                let mut s = 0;
                for (k, &b) in bit_of.iter().enumerate() {
                    s |= (dst >> (r - 1 - k) & 1) << b;
                }
                self.data[s]
            })
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorNetwork {
    pub tensors: Vec<Tensor>,
    pub index_count: usize,
    /// Per qubit, the output index left open (empty for closed networks).
    pub outputs: Vec<usize>,
}

impl TensorNetwork {
    /// Indices that appear on exactly one tensor.
    pub fn open_indices(&self) -> BTreeSet<usize> {
        let mut seen = vec![0u8; self.index_count];
        for t in &self.tensors {
            for &i in &t.indices {
                seen[i] += 1;
            }
        }
        (0..self.index_count).filter(|&i| seen[i] == 1).collect()
    }

    /// Connected components of the tensors, as lists of ids.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut owner: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for t in &self.tensors {
            for &i in &t.indices {
                owner.entry(i).or_default().push(t.id);
            }
        }
        let mut parent: Vec<usize> = (0..self.tensors.len()).collect();
        fn find(p: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while p[r] != r {
                r = p[r];
            }
            p[x] = r;
            r
        }
        for ids in owner.values() {
            for w in ids.windows(2) {
                let (a, b) = (find(&mut parent, w[0]), find(&mut parent, w[1]));
                parent[a.max(b)] = a.min(b);
            }
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for id in 0..self.tensors.len() {
            let root = find(&mut parent, id);
            groups.entry(root).or_default().push(id);
        }
        groups.into_values().collect()
    }
}

struct Builder {
    tensors: Vec<Tensor>,
    next_index: usize,
}

impl Builder {
    fn index(&mut self) -> usize {
        self.next_index += 1;
        self.next_index - 1
    }

    fn push(&mut self, indices: Vec<usize>, data: Vec<Complex64>) {
        let id = self.tensors.len();
        self.tensors.push(Tensor { id, indices, data });
    }
}

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// One rank-1 tensor per input `|0⟩`, rank-2 per `H` and `Rz`, rank-4 per
/// `Rzz`. Closed networks cap every output with `⟨0|`, so they contract to
/// the amplitude `⟨0|C|0⟩`.
pub fn circuit_to_network(circuit: &BoundCircuit, closed: bool) -> TensorNetwork {
    let n = circuit.n;
    let mut b = Builder { tensors: vec![], next_index: 0 };
    let mut wire: Vec<usize> = (0..n).map(|_| b.index()).collect();
    for &w in &wire {
        b.push(vec![w], vec![c(1.0), c(0.0)]);
    }
    for g in &circuit.gates {
        match *g {
            BoundGate::HadamardLayer => {
                for w in wire.iter_mut() {
                    let out = b.index();
                    let h = FRAC_1_SQRT_2;
                    b.push(vec![*w, out], vec![c(h), c(h), c(h), c(-h)]);
                    *w = out;
                }
            }
            BoundGate::Rz { qubit, angle } => {
                let out = b.index();
                let z = Complex64::new(0.0, 0.0);
                let data = vec![Complex64::from_polar(1.0, -angle / 2.0), z, z, Complex64::from_polar(1.0, angle / 2.0)];
                b.push(vec![wire[qubit], out], data);
                wire[qubit] = out;
            }
            BoundGate::Rzz { qubits: (p, q), angle } => {
                let (op, oq) = (b.index(), b.index());
                let mut data = vec![Complex64::new(0.0, 0.0); 16];
                for zp in 0..2 {
                    for zq in 0..2 {
                        let parity = if zp == zq { -1.0 } else { 1.0 };
                        let k = zp << 3 | zq << 2 | zp << 1 | zq;
                        data[k] = Complex64::from_polar(1.0, parity * angle / 2.0);
                    }
                }
                b.push(vec![wire[p], wire[q], op, oq], data);
                wire[p] = op;
                wire[q] = oq;
            }
        }
    }
    let outputs = if closed {
        for &w in &wire {
            b.push(vec![w], vec![c(1.0), c(0.0)]);
        }
        vec![]
    } else {
        wire
    };
    TensorNetwork { tensors: b.tensors, index_count: b.next_index, outputs }
}

/// A pairwise contraction order. Merge `k` combines two live tensors and
/// creates tensor `tensors.len() + k`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContractionPlan {
    pub merges: Vec<(usize, usize)>,
    /// Largest index count of any input or intermediate tensor.
    pub max_rank: usize,
    /// Largest `log₂` size over merges of the union of both operands'
    /// indices, i.e. the loop size of the most expensive pairwise contraction.
    pub est_log2_cost: usize,
}

fn merged(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> BTreeSet<usize> {
    a.symmetric_difference(b).copied().collect()
}

impl ContractionPlan {
    /// Validates `merges` against `net` and computes its cost. Every merge
    /// must reference live tensors and the plan must leave a single tensor.
    pub fn from_merges(net: &TensorNetwork, merges: Vec<(usize, usize)>) -> Result<Self> {
        let mut live: BTreeMap<usize, BTreeSet<usize>> =
            net.tensors.iter().map(|t| (t.id, t.indices.iter().copied().collect())).collect();
        let mut max_rank = net.tensors.iter().map(Tensor::rank).max().unwrap_or(0);
        let mut cost = 0;
        let mut next = net.tensors.len();
        for &(a, b) in &merges {
            if a == b {
                return Err(Error::InvalidArgument(format!("merge of tensor {a} with itself")));
            }
            let (Some(ia), Some(ib)) = (live.remove(&a), live.remove(&b)) else {
                return Err(Error::InvalidArgument(format!("merge ({a}, {b}) references a dead tensor")));
            };
            cost = cost.max(ia.union(&ib).count());
            let out = merged(&ia, &ib);
            max_rank = max_rank.max(out.len());
            live.insert(next, out);
            next += 1;
        }
        if live.len() > 1 {
            return Err(Error::InvalidArgument(format!("plan leaves {} tensors", live.len())));
        }
        Ok(ContractionPlan { merges, max_rank, est_log2_cost: cost })
    }
}

/// Greedy order: repeatedly merge the pair of index-sharing tensors that
/// shrinks the network most, i.e. minimises result rank minus the operands'
/// combined rank, breaking ties by smaller result rank and then by the
/// lexicographically smallest id pair. Once no two live tensors share an
/// index, the remaining components are joined by outer products, smallest
/// first.
pub fn greedy_plan(net: &TensorNetwork) -> ContractionPlan {
    let mut live: BTreeMap<usize, BTreeSet<usize>> =
        net.tensors.iter().map(|t| (t.id, t.indices.iter().copied().collect())).collect();
    let mut owners: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for t in &net.tensors {
        for &i in &t.indices {
            owners.entry(i).or_default().insert(t.id);
        }
    }
    let mut merges = vec![];
    let mut next = net.tensors.len();
    while live.len() > 1 {
        let mut best: Option<((i64, usize, usize, usize), (usize, usize))> = None;
        for ids in owners.values() {
            if ids.len() != 2 {
                continue;
            }
            let mut it = ids.iter();
            let (a, b) = (*it.next().unwrap(), *it.next().unwrap());
            let (ia, ib) = (&live[&a], &live[&b]);
            let r = merged(ia, ib).len();
            let key = (r as i64 - (ia.len() + ib.len()) as i64, r, a, b);
            if best.is_none_or(|(k, _)| key < k) {
                best = Some((key, (a, b)));
            }
        }
        let (a, b) = match best {
            Some((_, pair)) => pair,
            None => {
                // Disconnected: outer product of the two smallest tensors.
                let mut by_rank: Vec<(usize, usize)> = live.iter().map(|(&id, ix)| (ix.len(), id)).collect();
                by_rank.sort_unstable();
                let (a, b) = (by_rank[0].1, by_rank[1].1);
                (a.min(b), a.max(b))
            }
        };
        let (ia, ib) = (live.remove(&a).unwrap(), live.remove(&b).unwrap());
        for i in ia.union(&ib) {
            let o = owners.get_mut(i).unwrap();
            o.remove(&a);
            o.remove(&b);
            if o.is_empty() {
                owners.remove(i);
            }
        }
        let out = merged(&ia, &ib);
        for &i in &out {
            owners.entry(i).or_default().insert(next);
        }
        live.insert(next, out);
        merges.push((a, b));
        next += 1;
    }
    ContractionPlan::from_merges(net, merges).expect("greedy merges only live tensors")
}

fn contract_pair(a: &Tensor, b: &Tensor, id: usize) -> Tensor {
    let sa: BTreeSet<usize> = a.indices.iter().copied().collect();
    let sb: BTreeSet<usize> = b.indices.iter().copied().collect();
    let shared: Vec<usize> = sa.intersection(&sb).copied().collect();
    let out: Vec<usize> = a
        .indices
        .iter()
        .filter(|i| !sb.contains(i))
        .chain(b.indices.iter().filter(|i| !sa.contains(i)))
        .copied()
        .collect();
    // Bit position of each index within a tensor's flat offset.
    let pos = |t: &Tensor, i: usize| t.rank() - 1 - t.indices.iter().position(|&j| j == i).unwrap();
    let out_a: Vec<(usize, usize)> = out
        .iter()
        .enumerate()
        .filter(|(_, i)| sa.contains(i))
        .map(|(k, &i)| (out.len() - 1 - k, pos(a, i)))
        .collect();
    let out_b: Vec<(usize, usize)> = out
        .iter()
        .enumerate()
        .filter(|(_, i)| sb.contains(i))
        .map(|(k, &i)| (out.len() - 1 - k, pos(b, i)))
        .collect();
    let sh_a: Vec<usize> = shared.iter().map(|&i| pos(a, i)).collect();
    let sh_b: Vec<usize> = shared.iter().map(|&i| pos(b, i)).collect();
    let data = (0..1usize << out.len())
        .map(|o| {
            let mut base_a = 0;
            for &(ob, ab) in &out_a {
                base_a |= (o >> ob & 1) << ab;
            }
            let mut base_b = 0;
            for &(ob, bb) in &out_b {
                base_b |= (o >> ob & 1) << bb;
            }
            let mut acc = Complex64::new(0.0, 0.0);
            for s in 0..1usize << shared.len() {
                let (mut ia, mut ib) = (base_a, base_b);
                for k in 0..shared.len() {
                    let bit = s >> k & 1;
                    ia |= bit << sh_a[k];
                    ib |= bit << sh_b[k];
                }
                acc += a.data[ia] * b.data[ib];
            }
            acc
        })
        .collect();
    Tensor { id, indices: out, data }
}

/// Numerically executes `plan`, returning the final tensor.
pub fn contract(net: &TensorNetwork, plan: &ContractionPlan) -> Result<Tensor> {
    let checked = ContractionPlan::from_merges(net, plan.merges.clone())?;
    if checked.max_rank > MAX_CONTRACT_RANK {
        return Err(Error::CapacityExceeded { n: checked.max_rank, cap: MAX_CONTRACT_RANK });
    }
    let mut live: BTreeMap<usize, Tensor> = net.tensors.iter().map(|t| (t.id, t.clone())).collect();
    let mut next = net.tensors.len();
    for &(a, b) in &plan.merges {
        let (ta, tb) = (live.remove(&a).unwrap(), live.remove(&b).unwrap());
        live.insert(next, contract_pair(&ta, &tb, next));
        next += 1;
    }
    Ok(live.into_values().next().unwrap_or(Tensor { id: 0, indices: vec![], data: vec![Complex64::new(1.0, 0.0)] }))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComplexityRow {
    pub family: CircuitFamily,
    pub n: usize,
    pub max_rank: usize,
    pub est_log2_cost: usize,
}

/// Closed amplitude network of the family's structure at `n` qubits. The
/// angles do not affect the plan, so every rotation is bound to 0.
pub fn family_network(family: CircuitFamily, n: usize) -> Result<TensorNetwork> {
    let c = build_family(family, n, &FamilyOptions::default())?;
    let bound = bind(&c, &vec![0.0; c.param_count()], None)?;
    Ok(circuit_to_network(&bound, true))
}

/// Plans every `(family, n)` cell without contracting anything.
pub fn complexity_sweep(families: &[CircuitFamily], ns: &[usize]) -> Result<Vec<ComplexityRow>> {
    let cells: Vec<(CircuitFamily, usize)> = families.iter().flat_map(|&f| ns.iter().map(move |&n| (f, n))).collect();
    cells
        .into_par_iter()
        .map(|(family, n)| {
            let plan = greedy_plan(&family_network(family, n)?);
            Ok(ComplexityRow { family, n, max_rank: plan.max_rank, est_log2_cost: plan.est_log2_cost })
        })
        .collect()
}
