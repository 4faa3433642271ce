//! Reference decoders: an exhaustive minimum-weight oracle for small codes and
//! normalized min-sum belief propagation. Both provide pretraining labels and
//! baselines for the learned decoder.

use crate::code::{CodeInstance, PauliError, Syndrome};
use crate::error::{Error, Result};
use crate::gf2::{BitMatrix, BitVector};
use crate::par::{self, Execution};
use crate::rng::{self, Rng};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::sync::RwLock;

/// Largest code the oracle is used on when building datasets.
pub const ORACLE_MAX_QUBITS: usize = 30;
/// Default weight bound for the oracle search.
pub const DEFAULT_ORACLE_WEIGHT: usize = 4;
/// Default iteration cap for belief propagation.
pub const DEFAULT_BP_ITERS: usize = 30;
/// Min-sum normalization factor.
pub const DEFAULT_BP_NORMALIZATION: f64 = 0.625;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pauli {
    X,
    Y,
    Z,
}

const PAULIS: [Pauli; 3] = [Pauli::X, Pauli::Y, Pauli::Z];

/// Exhaustive minimum-weight decoder with a shared syndrome cache.
///
/// Searches weights `0..=w_max` in order; within a weight, qubit subsets are
/// visited lexicographically and Paulis per qubit in the order X < Y < Z, so
/// the result is fully deterministic.
#[derive(Debug)]
pub struct MlOracle {
    n: usize,
    w_max: usize,
    masks: Vec<[u128; 3]>,
    cache: RwLock<HashMap<u128, Option<PauliError>>>,
}

impl MlOracle {
    pub fn new(code: &CodeInstance, w_max: usize) -> Result<Self> {
        if code.n > 64 || code.num_checks() > 128 {
            return Err(Error::Unsupported(format!(
                "oracle supports n ≤ 64 and ≤ 128 checks (got n={}, {} checks)",
                code.n,
                code.num_checks()
            )));
        }
        let mx = code.num_x_checks();
        let masks = (0..code.n)
            .map(|q| {
                let z_part: u128 = code
                    .checks_of_qubit(crate::code::CheckType::X, q)
                    .iter()
                    .fold(0, |m, &c| m | 1u128 << c);
                let x_part: u128 = code
                    .checks_of_qubit(crate::code::CheckType::Z, q)
                    .iter()
                    .fold(0, |m, &c| m | 1u128 << (mx + c));
                [x_part, x_part ^ z_part, z_part]
            })
            .collect();
        Ok(Self {
            n: code.n,
            w_max,
            masks,
            cache: RwLock::new(HashMap::new()),
        })
    }

    fn key(&self, s: &Syndrome) -> u128 {
        let mx = s.sx.len();
        s.sx.ones().fold(0u128, |m, i| m | 1 << i) | s.sz.ones().fold(0u128, |m, i| m | 1 << (mx + i))
    }

    pub fn decode(&self, s: &Syndrome) -> Option<PauliError> {
        let key = self.key(s);
        if let Some(hit) = self.cache.read().expect("oracle cache poisoned").get(&key) {
            return hit.clone();
        }
        let result = self.search(key);
        self.cache
            .write()
            .expect("oracle cache poisoned")
            .insert(key, result.clone());
        result
    }

    fn search(&self, target: u128) -> Option<PauliError> {
        for w in 0..=self.w_max.min(self.n) {
            let mut qubits: Vec<usize> = (0..w).collect();
            loop {
                // Paulis as a base-3 counter, first qubit most significant.
                let mut digits = vec![0usize; w];
                loop {
                    let s = qubits
                        .iter()
                        .zip(&digits)
                        .fold(0u128, |acc, (&q, &d)| acc ^ self.masks[q][d]);
                    if s == target {
                        return Some(self.assemble(&qubits, &digits));
                    }
                    if !increment_base3(&mut digits) {
                        break;
                    }
                }
                if !next_combination(&mut qubits, self.n) {
                    break;
                }
            }
        }
        None
    }

    fn assemble(&self, qubits: &[usize], digits: &[usize]) -> PauliError {
        let mut e = PauliError::identity(self.n);
        for (&q, &d) in qubits.iter().zip(digits) {
            match PAULIS[d] {
                Pauli::X => e.x.set(q, true),
                Pauli::Y => {
                    e.x.set(q, true);
                    e.z.set(q, true)
                }
                Pauli::Z => e.z.set(q, true),
            }
        }
        e
    }
}

fn increment_base3(digits: &mut [usize]) -> bool {
    for d in digits.iter_mut().rev() {
        if *d < 2 {
            *d += 1;
            return true;
        }
        *d = 0;
    }
    false
}

fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    for i in (0..k).rev() {
        if c[i] < n - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Minimum-weight error of weight ≤ `w_max` reproducing `syndrome`, if any.
pub fn ml_oracle_decode(code: &CodeInstance, syndrome: &Syndrome, w_max: usize) -> Result<Option<PauliError>> {
    Ok(MlOracle::new(code, w_max)?.decode(syndrome))
}

/// Normalized min-sum BP on a single Tanner graph. Returns the hard decision
/// and whether it reproduces the syndrome.
pub fn min_sum(h: &BitMatrix, syndrome: &BitVector, prior_llr: &[f64], max_iters: usize, alpha: f64) -> (BitVector, bool) {
    let n = h.num_cols();
    assert_eq!(prior_llr.len(), n, "one prior per variable");
    let checks: Vec<Vec<usize>> = h.rows().iter().map(|r| r.ones().collect()).collect();
    let mut var_edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (c, vs) in checks.iter().enumerate() {
        for (k, &v) in vs.iter().enumerate() {
            var_edges[v].push((c, k));
        }
    }
    let mut v2c: Vec<Vec<f64>> = checks.iter().map(|vs| vs.iter().map(|&v| prior_llr[v]).collect()).collect();
    let mut c2v: Vec<Vec<f64>> = checks.iter().map(|vs| vec![0.0; vs.len()]).collect();
    let mut hard = BitVector::zeros(n);
    if h.mul_vec(&hard) == *syndrome {
        return (hard, true);
    }
    for _ in 0..max_iters.max(1) {
        for (c, msgs) in v2c.iter().enumerate() {
            let sign0 = if syndrome.get(c) { -1.0 } else { 1.0 };
            for k in 0..msgs.len() {
                let mut sign = sign0;
                let mut min = f64::INFINITY;
                for (j, &m) in msgs.iter().enumerate() {
                    if j != k {
                        if m < 0.0 {
                            sign = -sign;
                        }
                        min = min.min(m.abs());
                    }
                }
                if !min.is_finite() {
                    min = 0.0;
                }
                c2v[c][k] = alpha * sign * min;
            }
        }
        for v in 0..n {
            let total = prior_llr[v] + var_edges[v].iter().map(|&(c, k)| c2v[c][k]).sum::<f64>();
            hard.set(v, total < 0.0);
            for &(c, k) in &var_edges[v] {
                v2c[c][k] = total - c2v[c][k];
            }
        }
        if h.mul_vec(&hard) == *syndrome {
            return (hard, true);
        }
    }
    (hard, false)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BpOutcome {
    pub correction: PauliError,
    pub converged: bool,
}

/// Min-sum BP run independently on the X-check and Z-check Tanner graphs.
pub fn bp_decode(code: &CodeInstance, syndrome: &Syndrome, max_iters: usize, p: f64) -> BpOutcome {
    bp_decode_with(code, syndrome, max_iters, p, DEFAULT_BP_NORMALIZATION)
}

pub fn bp_decode_with(code: &CodeInstance, syndrome: &Syndrome, max_iters: usize, p: f64, alpha: f64) -> BpOutcome {
    // Marginal flip probability of each component under depolarizing noise.
    let q = (2.0 * p / 3.0).clamp(1e-9, 0.5 - 1e-9);
    let llr = ((1.0 - q) / q).ln();
    let priors = vec![llr; code.n];
    let (z, cz) = min_sum(&code.hx, &syndrome.sx, &priors, max_iters, alpha);
    let (x, cx) = min_sum(&code.hz, &syndrome.sz, &priors, max_iters, alpha);
    BpOutcome {
        correction: PauliError { x, z },
        converged: cx && cz,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    Oracle,
    Bp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainRecord {
    pub syndrome: Syndrome,
    pub target: PauliError,
    pub source: LabelSource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainDataset {
    pub code_n: usize,
    pub code_distance: Option<usize>,
    pub p: f64,
    pub records: Vec<PretrainRecord>,
    /// Samples discarded because BP did not converge.
    pub discarded: usize,
}

impl PretrainDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n").map_err(|e| Error::io("<dataset>", e))?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(reader: R, code: &CodeInstance, p: f64) -> Result<Self> {
        let mut records = Vec::new();
        for line in reader.lines() {
            let line = line.map_err(|e| Error::io("<dataset>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line)?);
        }
        Ok(Self {
            code_n: code.n,
            code_distance: code.distance(),
            p,
            records,
            discarded: 0,
        })
    }
}

/// Labels a syndrome with the oracle when the code is small enough, falling
/// back to BP. Returns `None` when no label reproduces the syndrome.
pub struct Labeler<'a> {
    code: &'a CodeInstance,
    oracle: Option<MlOracle>,
    p: f64,
}

impl<'a> Labeler<'a> {
    pub fn new(code: &'a CodeInstance, p: f64) -> Self {
        let oracle = (code.n <= ORACLE_MAX_QUBITS)
            .then(|| MlOracle::new(code, DEFAULT_ORACLE_WEIGHT).ok())
            .flatten();
        Self { code, oracle, p }
    }

    pub fn uses_oracle(&self) -> bool {
        self.oracle.is_some()
    }

    pub fn label(&self, s: &Syndrome) -> Option<(PauliError, LabelSource)> {
        if let Some(e) = self.oracle.as_ref().and_then(|o| o.decode(s)) {
            return Some((e, LabelSource::Oracle));
        }
        let bp = bp_decode(self.code, s, DEFAULT_BP_ITERS, self.p.max(1e-3));
        bp.converged.then_some((bp.correction, LabelSource::Bp))
    }
}

/// Sample `n_samples` errors at rate `p` and label their syndromes.
pub fn make_pretrain_dataset(
    code: &CodeInstance,
    p: f64,
    n_samples: usize,
    seed: u64,
    exec: Execution,
) -> Result<PretrainDataset> {
    if n_samples == 0 {
        return Err(Error::Precondition("dataset needs at least one sample".into()));
    }
    let labeler = Labeler::new(code, p);
    // Each slot retries on its own stream until a label reproduces the syndrome.
    let slots = par::map_indexed(exec, n_samples, |i| {
        for attempt in 0..64u64 {
            let mut r: Rng = rng::stream(seed, rng::domain::PRETRAIN_DATA, ((i as u64) << 8) | attempt);
            let e = code.sample_error(p, &mut r);
            let s = code.syndrome_of(&e);
            if let Some((target, source)) = labeler.label(&s) {
                return Some((
                    PretrainRecord {
                        syndrome: s,
                        target,
                        source,
                    },
                    attempt as usize,
                ));
            }
        }
        None
    });
    let mut records = Vec::with_capacity(n_samples);
    let mut discarded = 0;
    for slot in slots {
        let (rec, retries) =
            slot.ok_or_else(|| Error::Precondition("could not label a sample after 64 attempts".into()))?;
        discarded += retries;
        records.push(rec);
    }
    Ok(PretrainDataset {
        code_n: code.n,
        code_distance: code.distance(),
        p,
        records,
        discarded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::code::build_toy_css;

    fn single_errors(n: usize) -> Vec<PauliError> {
        let mut out = Vec::new();
        for q in 0..n {
            for kind in 0..3 {
                let mut e = PauliError::identity(n);
                if kind != 2 {
                    e.x.set(q, true);
                }
                if kind != 0 {
                    e.z.set(q, true);
                }
                out.push(e);
            }
        }
        out
    }

    #[test]
    fn oracle_zero_syndrome() {
        let code = build_toy_css(3).unwrap();
        let s = code.syndrome_of(&PauliError::identity(9));
        assert!(ml_oracle_decode(&code, &s, 4).unwrap().unwrap().is_identity());
    }

    #[test]
    fn oracle_recovers_unique_single_x_errors() {
        let code = build_toy_css(3).unwrap();
        let oracle = MlOracle::new(&code, 4).unwrap();
        for q in 0..9 {
            let mut e = PauliError::identity(9);
            e.x.set(q, true);
            let s = code.syndrome_of(&e);
            let got = oracle.decode(&s).unwrap();
            assert_eq!(got.weight(), 1);
            assert_eq!(code.syndrome_of(&got), s);
            // Weight-1 solutions unique up to qubit choice: check by brute force.
            let matches: Vec<_> = single_errors(9).into_iter().filter(|c| code.syndrome_of(c) == s).collect();
            if matches.len() == 1 {
                assert_eq!(got, e);
            } else {
                assert_eq!(got, matches[0]);
            }
        }
    }

    #[test]
    fn oracle_prefers_lighter_coset_member() {
        let code = build_toy_css(3).unwrap();
        // X on qubits 0 and 1 share a boundary Z-check: the pair has the same
        // syndrome as some single-qubit error.
        let oracle = MlOracle::new(&code, 4).unwrap();
        let mut found = false;
        for a in 0..9 {
            for b in a + 1..9 {
                let mut e = PauliError::identity(9);
                e.x.set(a, true);
                e.x.set(b, true);
                let s = code.syndrome_of(&e);
                let light = single_errors(9).into_iter().find(|c| code.syndrome_of(c) == s);
                if let Some(light) = light {
                    let got = oracle.decode(&s).unwrap();
                    assert_eq!(got, light);
                    found = true;
                }
            }
        }
        assert!(found);
    }

    #[test]
    fn oracle_rejects_large_codes() {
        let code = build_toy_css(9).unwrap();
        assert!(matches!(MlOracle::new(&code, 2), Err(Error::Unsupported(_))));
    }

    #[test]
    fn bp_zero_syndrome() {
        let code = build_toy_css(3).unwrap();
        let out = bp_decode(&code, &code.syndrome_of(&PauliError::identity(9)), 30, 0.01);
        assert!(out.converged);
        assert!(out.correction.is_identity());
    }

    /// Plain BP cannot break ties between equal-weight corrections: two
    /// boundary qubits sharing a single check both sit at marginal ~1/2.
    /// Every disagreement with the oracle must be such a tie.
    #[test]
    fn bp_single_errors_agree_or_tie() {
        let code = build_toy_css(3).unwrap();
        let oracle = MlOracle::new(&code, 4).unwrap();
        let errors = single_errors(9);
        let mut agree = 0;
        for e in &errors {
            let s = code.syndrome_of(e);
            let bp = bp_decode(&code, &s, 30, 0.01);
            let ml = oracle.decode(&s).unwrap();
            if bp.converged {
                assert_eq!(code.syndrome_of(&bp.correction), s);
                let same = code.is_logical_failure(&bp.correction.compose(e)).unwrap()
                    == code.is_logical_failure(&ml.compose(e)).unwrap();
                assert!(same, "converged BP disagrees on {e:?}");
                agree += 1;
            } else {
                // Each unconverged sector must have two single-flip explanations.
                let z_fix = code.syndrome_of(&PauliError { x: BitVector::zeros(9), z: bp.correction.z.clone() });
                let x_fix = code.syndrome_of(&PauliError { x: bp.correction.x.clone(), z: BitVector::zeros(9) });
                let sector_ties = |flip_z: bool, target: &BitVector| {
                    (0..9)
                        .filter(|&q| {
                            let one = BitVector::from_indices(9, [q]);
                            let f = if flip_z {
                                PauliError { x: BitVector::zeros(9), z: one }
                            } else {
                                PauliError { x: one, z: BitVector::zeros(9) }
                            };
                            let fs = code.syndrome_of(&f);
                            if flip_z { fs.sx == *target } else { fs.sz == *target }
                        })
                        .count()
                };
                if z_fix.sx != s.sx {
                    assert!(sector_ties(true, &s.sx) >= 2, "non-degenerate miss on {e:?}");
                }
                if x_fix.sz != s.sz {
                    assert!(sector_ties(false, &s.sz) >= 2, "non-degenerate miss on {e:?}");
                }
            }
        }
        // 4 of 9 qubits per sector lie on such ties at d=3.
        assert_eq!(agree, 11, "agreement {agree}/{}", errors.len());
    }

    #[test]
    fn bp_has_non_converging_syndromes() {
        let code = build_toy_css(3).unwrap();
        let mut failing = None;
        'outer: for sx in 0..16u32 {
            for sz in 0..16u32 {
                let s = Syndrome {
                    sx: BitVector::from_indices(4, (0..4).filter(|i| sx >> i & 1 == 1)),
                    sz: BitVector::from_indices(4, (0..4).filter(|i| sz >> i & 1 == 1)),
                };
                if !bp_decode(&code, &s, 30, 0.01).converged {
                    failing = Some(s);
                    break 'outer;
                }
            }
        }
        let s = failing.expect("search found no trapping syndrome");
        assert!(!bp_decode(&code, &s, 30, 0.01).converged);
    }

    #[test]
    fn dataset_p_zero_is_trivial() {
        let code = build_toy_css(3).unwrap();
        let ds = make_pretrain_dataset(&code, 0.0, 50, 1, Execution::Sequential).unwrap();
        assert_eq!(ds.len(), 50);
        assert!(ds.records.iter().all(|r| r.syndrome.is_zero() && r.target.is_identity()));
    }

    #[test]
    fn dataset_targets_reproduce_syndromes() {
        let code = build_toy_css(3).unwrap();
        let ds = make_pretrain_dataset(&code, 0.01, 10_000, 2, Execution::Parallel).unwrap();
        assert!(ds.records.iter().all(|r| code.syndrome_of(&r.target) == r.syndrome));
        assert!(ds.records.iter().all(|r| r.source == LabelSource::Oracle));
    }

    #[test]
    fn label_source_threshold() {
        let c3 = build_toy_css(3).unwrap();
        let c7 = build_toy_css(7).unwrap();
        assert!(Labeler::new(&c3, 0.01).uses_oracle());
        assert!(!Labeler::new(&c7, 0.01).uses_oracle());
        let ds = make_pretrain_dataset(&c7, 0.01, 200, 3, Execution::Parallel).unwrap();
        assert!(ds.records.iter().all(|r| r.source == LabelSource::Bp));
        assert!(ds.records.iter().all(|r| c7.syndrome_of(&r.target) == r.syndrome));
    }

    #[test]
    fn dataset_jsonl_round_trip() {
        let code = build_toy_css(3).unwrap();
        let ds = make_pretrain_dataset(&code, 0.05, 20, 4, Execution::Sequential).unwrap();
        let mut buf = Vec::new();
        ds.write_jsonl(&mut buf).unwrap();
        assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), 20);
        let back = PretrainDataset::read_jsonl(std::io::Cursor::new(buf), &code, 0.05).unwrap();
        assert_eq!(back.records, ds.records);
    }

    #[test]
    fn oracle_never_heavier_than_bp() {
        let code = build_toy_css(3).unwrap();
        let oracle = MlOracle::new(&code, 4).unwrap();
        let mut r = rng::stream(5, 0, 0);
        for _ in 0..2000 {
            let e = code.sample_error(0.05, &mut r);
            let s = code.syndrome_of(&e);
            let bp = bp_decode(&code, &s, 30, 0.05);
            if let (true, Some(ml)) = (bp.converged, oracle.decode(&s)) {
                assert!(ml.weight() <= bp.correction.weight());
            }
        }
    }
}
