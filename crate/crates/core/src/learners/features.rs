use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::LearnerError;

/// Polynomial basis of total degree at most `degree`, constant term first.
///
/// Inputs are optionally standardized (`(v - center) / scale`) before the
/// monomials are formed; [`FeatureMap::new`] uses the identity transform.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "FeatureMapDescriptor", into = "FeatureMapDescriptor")]
pub struct FeatureMap {
    input_dim: usize,
    degree: usize,
    include_interactions: bool,
    center: Vec<f64>,
    scale: Vec<f64>,
    exponents: Vec<Vec<u8>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct FeatureMapDescriptor {
    input_dim: usize,
    degree: usize,
    include_interactions: bool,
    output_dim: usize,
    center: Vec<f64>,
    scale: Vec<f64>,
}

impl From<FeatureMapDescriptor> for FeatureMap {
    fn from(d: FeatureMapDescriptor) -> Self {
        let mut m = FeatureMap::new(d.input_dim, d.degree.max(1), d.include_interactions);
        if d.center.len() == d.input_dim && d.scale.len() == d.input_dim {
            m.center = d.center;
            m.scale = d.scale;
        }
        m
    }
}

impl From<FeatureMap> for FeatureMapDescriptor {
    fn from(m: FeatureMap) -> Self {
        FeatureMapDescriptor {
            input_dim: m.input_dim,
            degree: m.degree,
            include_interactions: m.include_interactions,
            output_dim: m.output_dim(),
            center: m.center,
            scale: m.scale,
        }
    }
}

fn enumerate_exponents(dim: usize, degree: usize, interactions: bool) -> Vec<Vec<u8>> {
    let mut out = vec![vec![0u8; dim]];
    if interactions {
        // all multi-indices of each total degree, in lexicographic order
        fn rec(dim: usize, pos: usize, left: usize, cur: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
            if pos + 1 == dim {
                cur[pos] = left as u8;
                out.push(cur.clone());
                cur[pos] = 0;
                return;
            }
            for e in (0..=left).rev() {
                cur[pos] = e as u8;
                rec(dim, pos + 1, left - e, cur, out);
            }
            cur[pos] = 0;
        }
        if dim > 0 {
            for t in 1..=degree {
                let mut cur = vec![0u8; dim];
                rec(dim, 0, t, &mut cur, &mut out);
            }
        }
    } else {
        for t in 1..=degree {
            for j in 0..dim {
                let mut e = vec![0u8; dim];
                e[j] = t as u8;
                out.push(e);
            }
        }
    }
    out
}

impl FeatureMap {
    /// Unstandardized map. Panics if `degree == 0` or `degree > 255`.
    pub fn new(input_dim: usize, degree: usize, include_interactions: bool) -> Self {
        assert!((1..=255).contains(&degree), "sieve degree must be in 1..=255");
        FeatureMap {
            input_dim,
            degree,
            include_interactions,
            center: vec![0.0; input_dim],
            scale: vec![1.0; input_dim],
            exponents: enumerate_exponents(input_dim, degree, include_interactions),
        }
    }

    /// Map whose inputs are centered and scaled by the sample moments of `inputs`.
    /// Columns with zero spread keep scale 1.
    pub fn standardized(
        input_dim: usize,
        degree: usize,
        include_interactions: bool,
        inputs: &[&[f64]],
    ) -> Result<Self, LearnerError> {
        let mut m = FeatureMap::new(input_dim, degree, include_interactions);
        if inputs.is_empty() {
            return Err(LearnerError::EmptyInput);
        }
        let n = inputs.len() as f64;
        for row in inputs {
            if row.len() != input_dim {
                return Err(LearnerError::DimensionMismatch { expected: input_dim, found: row.len() });
            }
            for (c, v) in m.center.iter_mut().zip(row.iter()) {
                *c += v;
            }
        }
        for c in &mut m.center {
            *c /= n;
        }
        let mut var = vec![0.0; input_dim];
        for row in inputs {
            for ((v, x), c) in var.iter_mut().zip(row.iter()).zip(&m.center) {
                *v += (x - c) * (x - c);
            }
        }
        for ((s, v), c) in m.scale.iter_mut().zip(&var).zip(&m.center) {
            let sd = libm::sqrt(v / n);
            *s = if sd > 1e-12 * (1.0 + c.abs()) { sd } else { 1.0 };
        }
        Ok(m)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn include_interactions(&self) -> bool {
        self.include_interactions
    }

    pub fn output_dim(&self) -> usize {
        self.exponents.len()
    }

    pub fn exponents(&self) -> &[Vec<u8>] {
        &self.exponents
    }

    /// Writes the feature vector of `x` into `out` (resized to `output_dim`).
    pub fn expand_into(&self, x: &[f64], out: &mut Vec<f64>) {
        debug_assert_eq!(x.len(), self.input_dim);
        let j = self.degree;
        // powers[v * (j + 1) + e] = z_v^e
        let mut powers = vec![1.0; self.input_dim * (j + 1)];
        for v in 0..self.input_dim {
            let z = (x[v] - self.center[v]) / self.scale[v];
            for e in 1..=j {
                powers[v * (j + 1) + e] = powers[v * (j + 1) + e - 1] * z;
            }
        }
        out.clear();
        for exps in &self.exponents {
            let mut f = 1.0;
            for (v, &e) in exps.iter().enumerate() {
                if e > 0 {
                    f *= powers[v * (j + 1) + e as usize];
                }
            }
            out.push(f);
        }
    }

    pub fn expand(&self, x: &[f64]) -> Result<Vec<f64>, LearnerError> {
        if x.len() != self.input_dim {
            return Err(LearnerError::DimensionMismatch { expected: self.input_dim, found: x.len() });
        }
        let mut out = Vec::with_capacity(self.output_dim());
        self.expand_into(x, &mut out);
        Ok(out)
    }
}

/// Number of monomials of total degree at most `degree` in `dim` variables.
pub fn monomial_count(dim: usize, degree: usize, include_interactions: bool) -> usize {
    if include_interactions {
        // C(dim + degree, degree)
        let mut c: u128 = 1;
        for i in 1..=degree as u128 {
            c = c * (dim as u128 + i) / i;
        }
        c as usize
    } else {
        1 + dim * degree
    }
}

/// Sieve degree `max(1, round((n / ln n)^(1 / (2 p + dim))))` for smoothness `p`.
pub fn default_degree(n: usize, dim: usize, smoothness: f64) -> usize {
    if n < 3 {
        return 1;
    }
    let n = n as f64;
    let j = libm::pow(n / libm::log(n), 1.0 / (2.0 * smoothness + dim as f64));
    (libm::round(j) as usize).max(1)
}
