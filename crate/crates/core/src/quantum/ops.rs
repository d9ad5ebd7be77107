use super::{Circuit, Ket, QuantumError, QubitKey, UnitaryMemo, C64};

/// Kronecker product of kets in list order; keys are concatenated.
pub fn tensor(states: &[&Ket]) -> Result<Ket, QuantumError> {
    let mut keys: Vec<QubitKey> = Vec::new();
    let mut amps = vec![C64::new(1.0, 0.0)];
    for s in states {
        for k in s.keys() {
            if keys.contains(k) {
                return Err(QuantumError::DuplicateKey(*k));
            }
            keys.push(*k);
        }
        let mut next = Vec::with_capacity(amps.len() * s.amplitudes().len());
        for a in &amps {
            for b in s.amplitudes() {
                next.push(a * b);
            }
        }
        amps = next;
    }
    Ket::unchecked(keys, amps)
}

/// Reorders a ket's wires so that `order[i]` becomes wire `i`.
pub fn permute(state: &Ket, order: &[QubitKey]) -> Result<Ket, QuantumError> {
    let n = state.num_qubits();
    if order.len() != n {
        return Err(QuantumError::NotAPermutation);
    }
    // src_pos[i] = position in `state` of the key that becomes wire i
    let mut src_pos = Vec::with_capacity(n);
    for (i, k) in order.iter().enumerate() {
        if order[..i].contains(k) {
            return Err(QuantumError::NotAPermutation);
        }
        src_pos.push(state.position(k).ok_or(QuantumError::NotAPermutation)?);
    }
    if src_pos.iter().enumerate().all(|(i, &p)| i == p) {
        return Ok(state.clone());
    }
    let dim = 1usize << n;
    let mut amps = vec![C64::new(0.0, 0.0); dim];
    let src = state.amplitudes();
    for (new_idx, slot) in amps.iter_mut().enumerate() {
        let mut old_idx = 0;
        for (i, &p) in src_pos.iter().enumerate() {
            let bit = (new_idx >> (n - 1 - i)) & 1;
            old_idx |= bit << (n - 1 - p);
        }
        *slot = src[old_idx];
    }
    Ket::unchecked(order.to_vec(), amps)
}

/// Outcome of measuring some wires of a ket.
#[derive(Clone, Debug, PartialEq)]
pub struct Measured {
    /// One bit per measured wire, in the order the wires were given.
    pub outcome: Vec<u8>,
    /// Post-measurement basis state of each measured qubit.
    pub collapsed: Vec<Ket>,
    /// Renormalized joint state of the unmeasured qubits, if any remain.
    pub residual: Option<Ket>,
}

/// Born-rule measurement driven by a caller-supplied sample.
///
/// Outcome bitstrings are ordered lexicographically (first listed wire most
/// significant) and the first outcome whose cumulative probability exceeds
/// `prob_sample` is selected.
pub fn measure(state: &Ket, wires: &[usize], prob_sample: f64) -> Result<Measured, QuantumError> {
    if !(0.0..1.0).contains(&prob_sample) {
        return Err(QuantumError::BadSample(prob_sample));
    }
    let n = state.num_qubits();
    for (i, &w) in wires.iter().enumerate() {
        if w >= n || wires[..i].contains(&w) {
            return Err(QuantumError::WireOutOfRange { wire: w, width: n });
        }
    }
    let m = wires.len();
    let amps = state.amplitudes();
    let outcome_of = |idx: usize| {
        let mut o = 0usize;
        for &w in wires {
            o = (o << 1) | ((idx >> (n - 1 - w)) & 1);
        }
        o
    };
    let mut probs = vec![0.0f64; 1 << m];
    for (idx, a) in amps.iter().enumerate() {
        probs[outcome_of(idx)] += a.norm_sqr();
    }
    let mut chosen = None;
    let mut cumulative = 0.0;
    for (o, p) in probs.iter().enumerate() {
        cumulative += p;
        if prob_sample < cumulative {
            chosen = Some(o);
            break;
        }
    }
    // Rounding can leave the total a hair under 1; fall back to the last
    // outcome that has support.
    let chosen = match chosen {
        Some(o) => o,
        None => probs
            .iter()
            .rposition(|&p| p > 0.0)
            .ok_or(QuantumError::ZeroNormResidual)?,
    };
    let outcome: Vec<u8> = (0..m).map(|j| ((chosen >> (m - 1 - j)) & 1) as u8).collect();
    let collapsed = wires
        .iter()
        .zip(&outcome)
        .map(|(&w, &b)| Ket::basis(state.keys()[w], b))
        .collect();

    let rest: Vec<usize> = (0..n).filter(|w| !wires.contains(w)).collect();
    let residual = if rest.is_empty() {
        None
    } else {
        let p = probs[chosen];
        if p <= 0.0 {
            return Err(QuantumError::ZeroNormResidual);
        }
        let scale = 1.0 / p.sqrt();
        let r = rest.len();
        let mut out = vec![C64::new(0.0, 0.0); 1 << r];
        for (idx, a) in amps.iter().enumerate() {
            if outcome_of(idx) != chosen {
                continue;
            }
            let mut ridx = 0;
            for &w in &rest {
                ridx = (ridx << 1) | ((idx >> (n - 1 - w)) & 1);
            }
            out[ridx] = a * scale;
        }
        let keys = rest.iter().map(|&w| state.keys()[w]).collect();
        Some(Ket::unchecked(keys, out)?)
    };
    Ok(Measured {
        outcome,
        collapsed,
        residual,
    })
}

/// Result of running a circuit over a set of states.
#[derive(Clone, Debug, PartialEq)]
pub struct Applied {
    pub outcome: Option<Vec<u8>>,
    /// Replacement states for every key that was touched, including
    /// spectators entangled with the circuit's qubits.
    pub states: Vec<Ket>,
}

/// Runs `circuit` with wire `i` bound to `keys[i]`.
///
/// The states holding those keys are tensored in order of first reference,
/// permuted so the circuit keys lead, multiplied by the circuit unitary and,
/// if the circuit measures, collapsed with `prob_sample`.
pub fn apply(
    states: &[&Ket],
    circuit: &Circuit,
    keys: &[QubitKey],
    prob_sample: Option<f64>,
    memo: &UnitaryMemo,
) -> Result<Applied, QuantumError> {
    circuit.validate()?;
    if keys.len() != circuit.width {
        return Err(QuantumError::KeyCount {
            width: circuit.width,
            keys: keys.len(),
        });
    }
    if circuit.measures() && prob_sample.is_none() {
        return Err(QuantumError::MissingSample);
    }
    let mut involved: Vec<&Ket> = Vec::new();
    for (i, k) in keys.iter().enumerate() {
        if keys[..i].contains(k) {
            return Err(QuantumError::DuplicateKey(*k));
        }
        let s = states
            .iter()
            .find(|s| s.contains(k))
            .ok_or(QuantumError::MissingKey(*k))?;
        if !involved.iter().any(|x| std::ptr::eq(*x, *s)) {
            involved.push(s);
        }
    }
    let joint = tensor(&involved)?;
    let mut order: Vec<QubitKey> = keys.to_vec();
    order.extend(joint.keys().iter().filter(|k| !keys.contains(k)).copied());
    let joint = permute(&joint, &order)?;

    let u = memo.unitary(circuit)?;
    let w = circuit.width;
    let rest = joint.num_qubits() - w;
    let cols = 1usize << rest;
    let rows = 1usize << w;
    let src = joint.amplitudes();
    let mut out = vec![C64::new(0.0, 0.0); src.len()];
    for r in 0..rows {
        for k in 0..rows {
            let coef = u.get(r, k);
            if coef == C64::new(0.0, 0.0) {
                continue;
            }
            for c in 0..cols {
                out[r * cols + c] += coef * src[k * cols + c];
            }
        }
    }
    let evolved = Ket::unchecked(order, out)?;

    if !circuit.measures() {
        return Ok(Applied {
            outcome: None,
            states: vec![evolved],
        });
    }
    let m = measure(&evolved, &circuit.measured, prob_sample.unwrap())?;
    let mut states = m.collapsed;
    states.extend(m.residual);
    Ok(Applied {
        outcome: Some(m.outcome),
        states,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::{circuits, Gate};
    use proptest::prelude::*;

    fn k(n: u64) -> QubitKey {
        QubitKey::random_for_tests(n)
    }

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn close(a: &[C64], b: &[C64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).norm() < 1e-12)
    }

    fn random_ket(keys: Vec<QubitKey>, seed: &[f64]) -> Ket {
        let n = 1 << keys.len();
        let raw: Vec<C64> = (0..n)
            .map(|i| C64::new(seed[(2 * i) % seed.len()] - 0.5, seed[(2 * i + 1) % seed.len()] - 0.5))
            .collect();
        let norm = raw.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt().max(1e-6);
        Ket::new(keys, raw.iter().map(|a| a / norm).collect()).unwrap()
    }

    #[test]
    fn tensor_of_basis_states() {
        let t = tensor(&[&Ket::basis(k(0), 0), &Ket::basis(k(1), 1)]).unwrap();
        assert!(close(t.amplitudes(), &[c(0.0), c(1.0), c(0.0), c(0.0)]));
        assert_eq!(t.keys(), &[k(0), k(1)]);
    }

    #[test]
    fn tensor_epr_with_zero() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let t = tensor(&[&Ket::epr(k(0), k(1)), &Ket::zero(k(2))]).unwrap();
        let expect = [h, 0.0, 0.0, 0.0, 0.0, 0.0, h, 0.0].map(c);
        assert!(close(t.amplitudes(), &expect));
    }

    #[test]
    fn tensor_rejects_shared_keys() {
        let a = Ket::zero(k(0));
        assert_eq!(tensor(&[&a, &a]), Err(QuantumError::DuplicateKey(k(0))));
    }

    #[test]
    fn permute_swaps_bits() {
        let s = tensor(&[&Ket::basis(k(0), 0), &Ket::basis(k(1), 1)]).unwrap();
        let p = permute(&s, &[k(1), k(0)]).unwrap();
        assert!(close(p.amplitudes(), &[c(0.0), c(0.0), c(1.0), c(0.0)]));
    }

    #[test]
    fn permute_epr_is_symmetric() {
        let e = Ket::epr(k(0), k(1));
        let p = permute(&e, &[k(1), k(0)]).unwrap();
        assert!(close(p.amplitudes(), e.amplitudes()));
    }

    #[test]
    fn permute_rejects_non_permutation() {
        let e = Ket::epr(k(0), k(1));
        assert_eq!(permute(&e, &[k(0), k(0)]), Err(QuantumError::NotAPermutation));
        assert_eq!(permute(&e, &[k(0), k(5)]), Err(QuantumError::NotAPermutation));
    }

    #[test]
    fn bell_pair_from_zeros() {
        let memo = UnitaryMemo::default();
        let a = Ket::zero(k(0));
        let b = Ket::zero(k(1));
        let r = apply(&[&a, &b], &circuits::bell_pair(), &[k(0), k(1)], None, &memo).unwrap();
        assert!(close(r.states[0].amplitudes(), Ket::epr(k(0), k(1)).amplitudes()));
    }

    #[test]
    fn measure_epr_low_sample_gives_zero() {
        let m = measure(&Ket::epr(k(0), k(1)), &[0], 0.3).unwrap();
        assert_eq!(m.outcome, vec![0]);
        assert!(close(m.residual.unwrap().amplitudes(), &[c(1.0), c(0.0)]));
        let m = measure(&Ket::epr(k(0), k(1)), &[0], 0.7).unwrap();
        assert_eq!(m.outcome, vec![1]);
    }

    #[test]
    fn measure_definite_state() {
        for s in [0.0, 0.5, 0.999] {
            let m = measure(&Ket::basis(k(0), 1), &[0], s).unwrap();
            assert_eq!(m.outcome, vec![1]);
            assert!(m.residual.is_none());
        }
    }

    #[test]
    fn measure_rejects_bad_input() {
        let e = Ket::epr(k(0), k(1));
        assert!(matches!(measure(&e, &[2], 0.1), Err(QuantumError::WireOutOfRange { .. })));
        assert!(matches!(measure(&e, &[0], 1.0), Err(QuantumError::BadSample(_))));
    }

    #[test]
    fn empty_circuit_is_identity() {
        let memo = UnitaryMemo::default();
        let s = Ket::from_real(vec![k(0)], &[0.6, 0.8]).unwrap();
        let r = apply(&[&s], &Circuit::new(1), &[k(0)], None, &memo).unwrap();
        assert_eq!(r.states, vec![s]);
        assert_eq!(r.outcome, None);
    }

    #[test]
    fn measuring_circuit_needs_sample() {
        let memo = UnitaryMemo::default();
        let e = Ket::epr(k(0), k(1));
        let err = apply(&[&e], &circuits::bell_measurement(), &[k(0), k(1)], None, &memo);
        assert_eq!(err, Err(QuantumError::MissingSample));
    }

    #[test]
    fn spectators_are_carried_along() {
        // X on one half of an EPR pair: the partner stays in the result.
        let memo = UnitaryMemo::default();
        let e = Ket::epr(k(0), k(1));
        let x = Circuit::new(1).gate(Gate::X, &[0]);
        let r = apply(&[&e], &x, &[k(1)], None, &memo).unwrap();
        assert_eq!(r.states.len(), 1);
        let out = permute(&r.states[0], &[k(0), k(1)]).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!(close(out.amplitudes(), &[0.0, h, h, 0.0].map(c)));
    }

    #[test]
    fn born_rule_frequency() {
        let e = Ket::epr(k(0), k(1));
        let mut rng = crate::rng::EntityRng::derive(5, "born");
        let n = 10_000;
        let zeros = (0..n)
            .filter(|_| measure(&e, &[0], rng.next_f64()).unwrap().outcome[0] == 0)
            .count();
        let f = zeros as f64 / n as f64;
        assert!((f - 0.5).abs() <= 0.02, "frequency {f}");
    }

    proptest! {
        #[test]
        fn tensor_preserves_norm(a in proptest::collection::vec(0.0f64..1.0, 4), b in proptest::collection::vec(0.0f64..1.0, 8)) {
            let x = random_ket(vec![k(0)], &a);
            let y = random_ket(vec![k(1), k(2)], &b);
            let t = tensor(&[&x, &y]).unwrap();
            prop_assert!((t.norm() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn permute_inverse_round_trips(a in proptest::collection::vec(0.0f64..1.0, 16), perm in Just([2usize, 0, 1]).prop_shuffle()) {
            let keys = vec![k(0), k(1), k(2)];
            let s = random_ket(keys.clone(), &a);
            let order: Vec<QubitKey> = perm.iter().map(|&i| keys[i]).collect();
            let back = permute(&permute(&s, &order).unwrap(), &keys).unwrap();
            prop_assert!(close(back.amplitudes(), s.amplitudes()));
        }

        #[test]
        fn memo_is_transparent(a in proptest::collection::vec(0.0f64..1.0, 16), sample in 0.0f64..0.999) {
            let keys = vec![k(0), k(1), k(2)];
            let s = random_ket(keys.clone(), &a);
            let circ = Circuit::new(2).gate(Gate::H, &[0]).gate(Gate::Cnot, &[0, 1]).gate(Gate::T, &[1]).measure(&[1]);
            let on = UnitaryMemo::default();
            let off = UnitaryMemo::disabled();
            let first = apply(&[&s], &circ, &[k(2), k(0)], Some(sample), &on).unwrap();
            let again = apply(&[&s], &circ, &[k(2), k(0)], Some(sample), &on).unwrap();
            let fresh = apply(&[&s], &circ, &[k(2), k(0)], Some(sample), &off).unwrap();
            prop_assert_eq!(&first, &again);
            prop_assert_eq!(&first, &fresh);
        }

        #[test]
        fn unitary_application_preserves_norm(a in proptest::collection::vec(0.0f64..1.0, 16)) {
            let keys = vec![k(0), k(1), k(2)];
            let s = random_ket(keys, &a);
            let circ = Circuit::new(3).gate(Gate::H, &[2]).gate(Gate::Swap, &[0, 2]).gate(Gate::Y, &[1]).gate(Gate::Cnot, &[1, 0]);
            let r = apply(&[&s], &circ, &[k(0), k(1), k(2)], None, &UnitaryMemo::default()).unwrap();
            prop_assert!((r.states[0].norm() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn disjoint_circuits_commute(a in proptest::collection::vec(0.0f64..1.0, 4), b in proptest::collection::vec(0.0f64..1.0, 4)) {
            let memo = UnitaryMemo::default();
            let x = random_ket(vec![k(0), k(1)], &a);
            let y = random_ket(vec![k(2), k(3)], &b);
            let c1 = Circuit::new(2).gate(Gate::Cnot, &[0, 1]).gate(Gate::H, &[0]);
            let c2 = Circuit::new(1).gate(Gate::S, &[0]);
            let x1 = apply(&[&x], &c1, &[k(0), k(1)], None, &memo).unwrap().states.remove(0);
            let y1 = apply(&[&y], &c2, &[k(3)], None, &memo).unwrap().states.remove(0);
            let y2 = apply(&[&y], &c2, &[k(3)], None, &memo).unwrap().states.remove(0);
            let x2 = apply(&[&x], &c1, &[k(0), k(1)], None, &memo).unwrap().states.remove(0);
            prop_assert_eq!(x1, x2);
            prop_assert_eq!(y1, y2);
        }
    }
}
