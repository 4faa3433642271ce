//! CSS code construction, Pauli noise, syndromes and logical-failure checks.
//!
//! Two families are supported:
//!
//! * [`build_true_bb`]: bivariate-bicycle codes with `Hx = [A|B]`,
//!   `Hz = [Bᵀ|Aᵀ]`, where `A` and `B` are sums of monomials `xᵃyᵇ` in the
//!   commuting shift matrices `x = S_l ⊗ I_m`, `y = I_l ⊗ S_m`.
//! * [`build_toy_css`]: rotated surface-layout codes on a `d × d` grid, whose
//!   nominal syndrome dimension is reported as `d²`.
//!
//! Each code splits its qubits into a left and a right panel. A check is
//! *local* when its support lies inside one panel and *remote* otherwise.

use crate::error::{Error, Result};
use crate::gf2::{independent_complement, BitMatrix, BitVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Panel {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Locality {
    Local,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum CodeFamily {
    TrueBb {
        l: usize,
        m: usize,
        poly_a: Vec<(usize, usize)>,
        poly_b: Vec<(usize, usize)>,
    },
    ToyCss {
        d: usize,
    },
}

impl CodeFamily {
    pub fn build(&self) -> Result<CodeInstance> {
        match self {
            CodeFamily::TrueBb { l, m, poly_a, poly_b } => build_true_bb(*l, *m, poly_a, poly_b),
            CodeFamily::ToyCss { d } => build_toy_css(*d),
        }
    }
}

/// Positions of each check type inside the factored observation channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelLayout {
    pub x_local: Vec<usize>,
    pub x_remote: Vec<usize>,
    pub z_local: Vec<usize>,
    pub z_remote: Vec<usize>,
}

/// An immutable CSS code with cached logical operators and panel metadata.
#[derive(Debug, Clone)]
pub struct CodeInstance {
    pub family: CodeFamily,
    pub n: usize,
    pub hx: BitMatrix,
    pub hz: BitMatrix,
    pub logical_x: BitMatrix,
    pub logical_z: BitMatrix,
    pub panel_of_qubit: Vec<Panel>,
    pub locality_x: Vec<Locality>,
    pub locality_z: Vec<Locality>,
    pub nominal_syndrome_dim: usize,
    layout: ChannelLayout,
    x_checks_of_qubit: Vec<Vec<usize>>,
    z_checks_of_qubit: Vec<Vec<usize>>,
}

/// A Pauli error as separate X and Z components (`Y = X ∧ Z`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PauliError {
    pub x: BitVector,
    pub z: BitVector,
}

impl PauliError {
    pub fn identity(n: usize) -> Self {
        Self {
            x: BitVector::zeros(n),
            z: BitVector::zeros(n),
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.x.is_zero() && self.z.is_zero()
    }

    /// Number of qubits carrying a non-identity Pauli.
    pub fn weight(&self) -> usize {
        self.x.or(&self.z).weight()
    }

    pub fn y_count(&self) -> usize {
        self.x.and(&self.z).weight()
    }

    pub fn compose(&self, other: &PauliError) -> PauliError {
        PauliError {
            x: self.x.xor(&other.x),
            z: self.z.xor(&other.z),
        }
    }

    pub fn compose_assign(&mut self, other: &PauliError) {
        self.x.xor_assign(&other.x);
        self.z.xor_assign(&other.z);
    }
}

/// Check outcomes. `sx` are X-type checks (they detect Z components), `sz`
/// are Z-type checks (they detect X components).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Syndrome {
    pub sx: BitVector,
    pub sz: BitVector,
}

impl Syndrome {
    pub fn weight(&self) -> usize {
        self.sx.weight() + self.sz.weight()
    }

    pub fn is_zero(&self) -> bool {
        self.sx.is_zero() && self.sz.is_zero()
    }

    pub fn num_checks(&self) -> usize {
        self.sx.len() + self.sz.len()
    }

    pub fn xor(&self, other: &Syndrome) -> Syndrome {
        Syndrome {
            sx: self.sx.xor(&other.sx),
            sz: self.sz.xor(&other.sz),
        }
    }

    /// `sx ‖ sz` as 0/1 floats.
    pub fn to_features(&self) -> Vec<f64> {
        self.sx
            .to_bits()
            .into_iter()
            .chain(self.sz.to_bits())
            .map(f64::from)
            .collect()
    }
}

/// Syndrome split by check type and locality.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationChannels {
    pub x_local: BitVector,
    pub x_remote: BitVector,
    pub z_local: BitVector,
    pub z_remote: BitVector,
}

/// Which check type an agent corrects against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckType {
    X,
    Z,
}

fn shift(size: usize) -> BitMatrix {
    let mut s = BitMatrix::zeros(size, size);
    for i in 0..size {
        s.set(i, (i + 1) % size, true);
    }
    s
}

fn kron(a: &BitMatrix, b: &BitMatrix) -> BitMatrix {
    let (ar, ac, br, bc) = (a.num_rows(), a.num_cols(), b.num_rows(), b.num_cols());
    let mut out = BitMatrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in a.row(i).ones() {
            for k in 0..br {
                for l in b.row(k).ones() {
                    out.set(i * br + k, j * bc + l, true);
                }
            }
        }
    }
    out
}

fn matrix_power(m: &BitMatrix, e: usize) -> BitMatrix {
    let mut out = BitMatrix::identity(m.num_rows());
    for _ in 0..e {
        out = out.mul(m);
    }
    out
}

fn bivariate_poly(l: usize, m: usize, terms: &[(usize, usize)]) -> Result<BitMatrix> {
    if terms.is_empty() {
        return Err(Error::Construction("polynomial has no terms".into()));
    }
    let x = kron(&shift(l), &BitMatrix::identity(m));
    let y = kron(&BitMatrix::identity(l), &shift(m));
    let mut acc = BitMatrix::zeros(l * m, l * m);
    for &(a, b) in terms {
        if a >= l || b >= m {
            return Err(Error::Construction(format!(
                "monomial x^{a} y^{b} out of range for l={l}, m={m}"
            )));
        }
        let term = matrix_power(&x, a).mul(&matrix_power(&y, b));
        acc = BitMatrix::from_rows(
            l * m,
            acc.rows().iter().zip(term.rows()).map(|(p, q)| p.xor(q)).collect(),
        );
    }
    Ok(acc)
}

/// Bivariate-bicycle code from polynomial exponent pairs `(a, b)` meaning `xᵃyᵇ`.
pub fn build_true_bb(
    l: usize,
    m: usize,
    poly_a: &[(usize, usize)],
    poly_b: &[(usize, usize)],
) -> Result<CodeInstance> {
    if l < 2 || m < 2 {
        return Err(Error::Construction(format!("need l, m >= 2 (got {l}, {m})")));
    }
    let a = bivariate_poly(l, m, poly_a)?;
    let b = bivariate_poly(l, m, poly_b)?;
    let hx = a.hstack(&b);
    let hz = b.transpose().hstack(&a.transpose());
    let half = l * m;
    let panels = (0..2 * half)
        .map(|q| if q < half { Panel::Left } else { Panel::Right })
        .collect();
    let family = CodeFamily::TrueBb {
        l,
        m,
        poly_a: poly_a.to_vec(),
        poly_b: poly_b.to_vec(),
    };
    CodeInstance::assemble(family, hx, hz, panels, 2 * half)
}

/// The `[[144, 12, 12]]` gross code: `l=12, m=6, A = x³+y+y², B = y³+x+x²`.
pub fn gross_code() -> Result<CodeInstance> {
    build_true_bb(12, 6, &[(3, 0), (0, 1), (0, 2)], &[(0, 3), (1, 0), (2, 0)])
}

/// Rotated surface-layout CSS code of odd distance `d` (3 ≤ d ≤ 11).
pub fn build_toy_css(d: usize) -> Result<CodeInstance> {
    if d.is_multiple_of(2) || !(3..=11).contains(&d) {
        return Err(Error::Unsupported(format!(
            "toy CSS distance must be odd and in 3..=11 (got {d})"
        )));
    }
    let n = d * d;
    let q = |r: usize, c: usize| r * d + c;
    let di = d as isize;
    let mut x_checks = Vec::new();
    let mut z_checks = Vec::new();
    // Face (i, j) covers qubits (i..=i+1, j..=j+1) clipped to the grid.
    for i in -1..di {
        for j in -1..di {
            let support: Vec<usize> = [(i, j), (i, j + 1), (i + 1, j), (i + 1, j + 1)]
                .into_iter()
                .filter(|&(r, c)| (0..di).contains(&r) && (0..di).contains(&c))
                .map(|(r, c)| q(r as usize, c as usize))
                .collect();
            let is_x = (i + j).rem_euclid(2) == 0;
            let top_or_bottom = i == -1 || i == di - 1;
            let left_or_right = j == -1 || j == di - 1;
            let bulk = !top_or_bottom && !left_or_right;
            let keep = match support.len() {
                4 => bulk,
                2 => (is_x && top_or_bottom) || (!is_x && left_or_right),
                _ => false,
            };
            if keep {
                let row = BitVector::from_indices(n, support);
                if is_x {
                    x_checks.push(row);
                } else {
                    z_checks.push(row);
                }
            }
        }
    }
    let hx = BitMatrix::from_rows(n, x_checks);
    let hz = BitMatrix::from_rows(n, z_checks);
    let panels = (0..n)
        .map(|idx| if 2 * (idx % d) < d { Panel::Left } else { Panel::Right })
        .collect();
    CodeInstance::assemble(CodeFamily::ToyCss { d }, hx, hz, panels, d * d)
}

fn column_supports(h: &BitMatrix, n: usize) -> Vec<Vec<usize>> {
    let mut cols = vec![Vec::new(); n];
    for (r, row) in h.rows().iter().enumerate() {
        for c in row.ones() {
            cols[c].push(r);
        }
    }
    cols
}

fn classify(h: &BitMatrix, panels: &[Panel]) -> Vec<Locality> {
    h.rows()
        .iter()
        .map(|row| {
            let mut seen = row.ones().map(|q| panels[q]);
            match seen.next() {
                Some(first) if seen.all(|p| p == first) => Locality::Local,
                Some(_) => Locality::Remote,
                None => Locality::Local,
            }
        })
        .collect()
}

/// Symplectically paired logical bases `(Lx, Lz)` with `Lx · Lzᵀ = I`.
fn logical_operators(hx: &BitMatrix, hz: &BitMatrix) -> Result<(BitMatrix, BitMatrix)> {
    let n = hx.num_cols();
    let lx = independent_complement(hx, &hz.kernel());
    let lz = independent_complement(hz, &hx.kernel());
    if lx.len() != lz.len() {
        return Err(Error::Construction(format!(
            "logical counts disagree: {} X vs {} Z",
            lx.len(),
            lz.len()
        )));
    }
    let k = lx.len();
    let lx = BitMatrix::from_rows(n, lx);
    let lz = BitMatrix::from_rows(n, lz);
    if k == 0 {
        return Ok((lx, lz));
    }
    let pairing = lx.mul(&lz.transpose());
    let inv = pairing
        .inverse()
        .ok_or_else(|| Error::Construction("logical pairing matrix is singular".into()))?;
    let lz = inv.transpose().mul(&lz);
    Ok((lx, lz))
}

impl CodeInstance {
    fn assemble(
        family: CodeFamily,
        hx: BitMatrix,
        hz: BitMatrix,
        panel_of_qubit: Vec<Panel>,
        nominal_syndrome_dim: usize,
    ) -> Result<Self> {
        let n = hx.num_cols();
        if hz.num_cols() != n || panel_of_qubit.len() != n {
            return Err(Error::Construction("inconsistent qubit counts".into()));
        }
        if !hx.mul(&hz.transpose()).is_zero() {
            return Err(Error::Construction("Hx·Hzᵀ ≠ 0".into()));
        }
        let (logical_x, logical_z) = logical_operators(&hx, &hz)?;
        let locality_x = classify(&hx, &panel_of_qubit);
        let locality_z = classify(&hz, &panel_of_qubit);
        let pick = |loc: &[Locality], want: Locality| {
            loc.iter()
                .enumerate()
                .filter(|(_, &l)| l == want)
                .map(|(i, _)| i)
                .collect::<Vec<_>>()
        };
        let layout = ChannelLayout {
            x_local: pick(&locality_x, Locality::Local),
            x_remote: pick(&locality_x, Locality::Remote),
            z_local: pick(&locality_z, Locality::Local),
            z_remote: pick(&locality_z, Locality::Remote),
        };
        Ok(Self {
            family,
            n,
            x_checks_of_qubit: column_supports(&hx, n),
            z_checks_of_qubit: column_supports(&hz, n),
            hx,
            hz,
            logical_x,
            logical_z,
            panel_of_qubit,
            locality_x,
            locality_z,
            nominal_syndrome_dim,
            layout,
        })
    }

    pub fn num_x_checks(&self) -> usize {
        self.hx.num_rows()
    }

    pub fn num_z_checks(&self) -> usize {
        self.hz.num_rows()
    }

    pub fn num_checks(&self) -> usize {
        self.num_x_checks() + self.num_z_checks()
    }

    /// Number of encoded logical qubits.
    pub fn k(&self) -> usize {
        self.logical_x.num_rows()
    }

    /// Code distance for the toy family; `None` for bivariate-bicycle codes.
    pub fn distance(&self) -> Option<usize> {
        match self.family {
            CodeFamily::ToyCss { d } => Some(d),
            CodeFamily::TrueBb { .. } => None,
        }
    }

    pub fn layout(&self) -> &ChannelLayout {
        &self.layout
    }

    /// Checks of the given type touching qubit `q`.
    pub fn checks_of_qubit(&self, kind: CheckType, q: usize) -> &[usize] {
        match kind {
            CheckType::X => &self.x_checks_of_qubit[q],
            CheckType::Z => &self.z_checks_of_qubit[q],
        }
    }

    pub fn parity_checks(&self, kind: CheckType) -> &BitMatrix {
        match kind {
            CheckType::X => &self.hx,
            CheckType::Z => &self.hz,
        }
    }

    /// Depolarizing noise: each qubit independently suffers X, Y or Z with
    /// probability `p/3` each.
    pub fn sample_error<R: Rng + ?Sized>(&self, p: f64, rng: &mut R) -> PauliError {
        let mut e = PauliError::identity(self.n);
        for q in 0..self.n {
            let u: f64 = rng.random();
            if u < p {
                let third = u * 3.0 / p;
                if third < 1.0 {
                    e.x.set(q, true);
                } else if third < 2.0 {
                    e.x.set(q, true);
                    e.z.set(q, true);
                } else {
                    e.z.set(q, true);
                }
            }
        }
        e
    }

    pub fn syndrome_of(&self, error: &PauliError) -> Syndrome {
        assert_eq!(error.len(), self.n, "error length does not match code");
        Syndrome {
            sx: self.hx.mul_vec(&error.z),
            sz: self.hz.mul_vec(&error.x),
        }
    }

    /// Whether a syndrome-free residual acts nontrivially on the logical space.
    pub fn is_logical_failure(&self, residual: &PauliError) -> Result<bool> {
        if !self.syndrome_of(residual).is_zero() {
            return Err(Error::Precondition(
                "is_logical_failure requires a residual with zero syndrome".into(),
            ));
        }
        let x_flips = self.logical_z.rows().iter().any(|lz| lz.dot(&residual.x));
        let z_flips = self.logical_x.rows().iter().any(|lx| lx.dot(&residual.z));
        Ok(x_flips || z_flips)
    }

    pub fn factor_observation(&self, s: &Syndrome) -> ObservationChannels {
        let gather = |v: &BitVector, idx: &[usize]| {
            BitVector::from_indices(idx.len(), idx.iter().enumerate().filter(|(_, &i)| v.get(i)).map(|(k, _)| k))
        };
        ObservationChannels {
            x_local: gather(&s.sx, &self.layout.x_local),
            x_remote: gather(&s.sx, &self.layout.x_remote),
            z_local: gather(&s.sz, &self.layout.z_local),
            z_remote: gather(&s.sz, &self.layout.z_remote),
        }
    }

    /// Inverse of [`factor_observation`](Self::factor_observation).
    pub fn unfactor_observation(&self, obs: &ObservationChannels) -> Syndrome {
        let scatter = |len: usize, parts: [(&BitVector, &[usize]); 2]| {
            let mut v = BitVector::zeros(len);
            for (bits, idx) in parts {
                for k in bits.ones() {
                    v.set(idx[k], true);
                }
            }
            v
        };
        Syndrome {
            sx: scatter(
                self.num_x_checks(),
                [(&obs.x_local, &self.layout.x_local), (&obs.x_remote, &self.layout.x_remote)],
            ),
            sz: scatter(
                self.num_z_checks(),
                [(&obs.z_local, &self.layout.z_local), (&obs.z_remote, &self.layout.z_remote)],
            ),
        }
    }

    /// Product of the selected X-type and Z-type stabilizer generators.
    pub fn stabilizer(&self, x_gens: &BitVector, z_gens: &BitVector) -> PauliError {
        let mut e = PauliError::identity(self.n);
        for r in x_gens.ones() {
            e.x.xor_assign(self.hx.row(r));
        }
        for r in z_gens.ones() {
            e.z.xor_assign(self.hz.row(r));
        }
        e
    }

    pub fn export(&self) -> CodeExport {
        let strings = |m: &BitMatrix| m.rows().iter().map(BitVector::to_bit_string).collect();
        CodeExport {
            family: self.family.clone(),
            n: self.n,
            k: self.k(),
            nominal_syndrome_dim: self.nominal_syndrome_dim,
            hx: strings(&self.hx),
            hz: strings(&self.hz),
            logical_x: strings(&self.logical_x),
            logical_z: strings(&self.logical_z),
            panel_of_qubit: self.panel_of_qubit.clone(),
            locality_x: self.locality_x.clone(),
            locality_z: self.locality_z.clone(),
        }
    }
}

/// JSON export of a code; rows are bit strings in ascending row order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeExport {
    #[serde(flatten)]
    pub family: CodeFamily,
    pub n: usize,
    pub k: usize,
    pub nominal_syndrome_dim: usize,
    pub hx: Vec<String>,
    pub hz: Vec<String>,
    pub logical_x: Vec<String>,
    pub logical_z: Vec<String>,
    pub panel_of_qubit: Vec<Panel>,
    pub locality_x: Vec<Locality>,
    pub locality_z: Vec<Locality>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn bb22() -> CodeInstance {
        build_true_bb(2, 2, &[(0, 0), (1, 0)], &[(0, 0), (0, 1)]).unwrap()
    }

    #[test]
    fn css_condition_small_codes() {
        for code in [bb22(), build_toy_css(3).unwrap(), build_toy_css(5).unwrap()] {
            assert!(code.hx.mul(&code.hz.transpose()).is_zero());
        }
    }

    #[test]
    fn rank_plus_k_equals_n() {
        for code in [bb22(), build_toy_css(3).unwrap(), build_toy_css(7).unwrap()] {
            assert_eq!(code.hx.rank() + code.hz.rank() + code.k(), code.n);
        }
    }

    #[test]
    fn gross_code_parameters() {
        let code = gross_code().unwrap();
        assert_eq!(code.n, 144);
        assert_eq!(code.k(), 12);
        assert_eq!(code.hx.rank() + code.hz.rank() + 12, 144);
    }

    #[test]
    fn logicals_are_paired() {
        for code in [bb22(), build_toy_css(5).unwrap()] {
            let pairing = code.logical_x.mul(&code.logical_z.transpose());
            assert_eq!(pairing, BitMatrix::identity(code.k()));
            for lx in code.logical_x.rows() {
                assert!(code.hz.mul_vec(lx).is_zero());
            }
            for lz in code.logical_z.rows() {
                assert!(code.hx.mul_vec(lz).is_zero());
            }
        }
    }

    #[test]
    fn toy_css_counts() {
        let c3 = build_toy_css(3).unwrap();
        assert_eq!(c3.n, 9);
        assert_eq!(c3.num_checks(), 8);
        assert_eq!(c3.nominal_syndrome_dim, 9);
        assert_eq!(c3.k(), 1);
        assert_eq!(build_toy_css(5).unwrap().nominal_syndrome_dim, 25);
        assert!(matches!(build_toy_css(4), Err(Error::Unsupported(_))));
        assert!(matches!(build_toy_css(13), Err(Error::Unsupported(_))));
    }

    #[test]
    fn center_x_error_fires_two_z_checks() {
        let code = build_toy_css(3).unwrap();
        let mut e = PauliError::identity(9);
        e.x.set(4, true);
        let s = code.syndrome_of(&e);
        assert_eq!(s.sz.weight(), 2);
        assert!(s.sx.is_zero());
    }

    #[test]
    fn exponent_out_of_range_rejected() {
        assert!(matches!(
            build_true_bb(2, 2, &[(2, 0)], &[(0, 0)]),
            Err(Error::Construction(_))
        ));
        assert!(build_true_bb(2, 2, &[], &[(0, 0)]).is_err());
    }

    #[test]
    fn bb22_remote_checks_match_row_supports() {
        let code = bb22();
        let obs = code.factor_observation(&Syndrome {
            sx: BitVector::zeros(code.num_x_checks()),
            sz: BitVector::zeros(code.num_z_checks()),
        });
        let spanning = code
            .hx
            .rows()
            .iter()
            .filter(|r| {
                let left = r.ones().any(|q| code.panel_of_qubit[q] == Panel::Left);
                let right = r.ones().any(|q| code.panel_of_qubit[q] == Panel::Right);
                left && right
            })
            .count();
        assert_eq!(obs.x_remote.len(), spanning);
    }

    #[test]
    fn single_panel_code_has_no_remote_channels() {
        let mut code = build_toy_css(3).unwrap();
        code.panel_of_qubit = vec![Panel::Left; 9];
        let code = CodeInstance::assemble(
            code.family.clone(),
            code.hx.clone(),
            code.hz.clone(),
            code.panel_of_qubit.clone(),
            9,
        )
        .unwrap();
        let obs = code.factor_observation(&code.syndrome_of(&PauliError::identity(9)));
        assert!(obs.x_remote.is_empty() && obs.z_remote.is_empty());
    }

    #[test]
    fn channel_sizes_survive_in_panel_qubit_permutation() {
        let code = build_toy_css(5).unwrap();
        let left: Vec<usize> = (0..code.n).filter(|&q| code.panel_of_qubit[q] == Panel::Left).collect();
        // swap two left-panel columns of both check matrices
        let (a, b) = (left[0], left[left.len() - 1]);
        let permute = |h: &BitMatrix| {
            let rows = h
                .rows()
                .iter()
                .map(|r| {
                    let mut out = r.clone();
                    out.set(a, r.get(b));
                    out.set(b, r.get(a));
                    out
                })
                .collect();
            BitMatrix::from_rows(code.n, rows)
        };
        let permuted = CodeInstance::assemble(
            code.family.clone(),
            permute(&code.hx),
            permute(&code.hz),
            code.panel_of_qubit.clone(),
            25,
        )
        .unwrap();
        let l0 = code.layout();
        let l1 = permuted.layout();
        assert_eq!(l0.x_local.len(), l1.x_local.len());
        assert_eq!(l0.x_remote.len(), l1.x_remote.len());
        assert_eq!(l0.z_local.len(), l1.z_local.len());
        assert_eq!(l0.z_remote.len(), l1.z_remote.len());
    }

    #[test]
    fn sample_error_extremes() {
        let code = build_toy_css(5).unwrap();
        let mut r = rng::stream(1, 0, 0);
        assert!(code.sample_error(0.0, &mut r).is_identity());
        let e = code.sample_error(1.0, &mut r);
        assert_eq!(e.weight(), 25);
    }

    #[test]
    fn sample_error_mean_weight() {
        let code = build_toy_css(5).unwrap();
        let mut r = rng::stream(2, 0, 0);
        let trials = 100_000;
        let total: usize = (0..trials).map(|_| code.sample_error(0.01, &mut r).weight()).sum();
        let mean = total as f64 / trials as f64;
        // Sum of n·trials Bernoulli(p) variables.
        let sigma = (25.0 * 0.01 * 0.99 / trials as f64).sqrt();
        assert!((mean - 0.25).abs() < 3.0 * sigma, "mean {mean}");
    }

    #[test]
    fn logical_failure_cases() {
        let code = build_toy_css(3).unwrap();
        assert!(!code.is_logical_failure(&PauliError::identity(9)).unwrap());
        let lx = PauliError {
            x: code.logical_x.row(0).clone(),
            z: BitVector::zeros(9),
        };
        assert!(code.is_logical_failure(&lx).unwrap());
        let mut bad = PauliError::identity(9);
        bad.x.set(0, true);
        assert!(matches!(code.is_logical_failure(&bad), Err(Error::Precondition(_))));
    }

    #[test]
    fn unfactor_inverts_factor() {
        let code = build_toy_css(7).unwrap();
        let mut r = rng::stream(3, 0, 0);
        for _ in 0..50 {
            let s = code.syndrome_of(&code.sample_error(0.1, &mut r));
            assert_eq!(code.unfactor_observation(&code.factor_observation(&s)), s);
        }
    }

    #[test]
    fn export_is_row_ordered() {
        let code = build_toy_css(3).unwrap();
        let ex = code.export();
        assert_eq!(ex.hx.len(), 4);
        assert_eq!(ex.hx[0], code.hx.row(0).to_bit_string());
        let json = serde_json::to_string(&ex).unwrap();
        let back: CodeExport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, ex);
    }

    proptest! {
        #[test]
        fn syndrome_is_linear(seed in any::<u64>()) {
            let code = build_toy_css(5).unwrap();
            let mut r = rng::stream(seed, 0, 0);
            let a = code.sample_error(0.2, &mut r);
            let b = code.sample_error(0.2, &mut r);
            prop_assert_eq!(
                code.syndrome_of(&a.compose(&b)),
                code.syndrome_of(&a).xor(&code.syndrome_of(&b))
            );
        }

        #[test]
        fn stabilizers_have_zero_syndrome_and_no_failure(seed in any::<u64>()) {
            let code = bb22();
            let mut r = rng::stream(seed, 0, 0);
            let gx = BitVector::from_bits(&(0..code.num_x_checks()).map(|_| r.random_range(0..2u8)).collect::<Vec<_>>());
            let gz = BitVector::from_bits(&(0..code.num_z_checks()).map(|_| r.random_range(0..2u8)).collect::<Vec<_>>());
            let s = code.stabilizer(&gx, &gz);
            prop_assert!(code.syndrome_of(&s).is_zero());
            prop_assert!(!code.is_logical_failure(&s).unwrap());
        }
    }
}
