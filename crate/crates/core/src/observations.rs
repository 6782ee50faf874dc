//! Sampled entries Ω, the sampling operator P_Ω and the least-squares objective.
//!
//! An [`ObservationSet`] is a multiset: coordinates drawn with replacement are
//! kept once per draw. A cache of distinct coordinates with multiplicities is
//! built at construction and used by the objective and the gradient.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Result, TtError};
use crate::rng::{rng_from_seed, uniform_index};
use crate::tensor::{flat_index_unchecked, DenseTensor, Shape};
use crate::tt::TtTensor;

/// Anything whose entries can be read at a multi-index.
pub trait EntrySource {
    fn source_shape(&self) -> &Shape;
    /// Entry at an in-range index.
    fn entry(&self, x: &[usize]) -> f64;
}

impl EntrySource for TtTensor {
    fn source_shape(&self) -> &Shape {
        self.shape()
    }
    fn entry(&self, x: &[usize]) -> f64 {
        self.eval_unchecked(x)
    }
}

impl EntrySource for DenseTensor {
    fn source_shape(&self) -> &Shape {
        self.shape()
    }
    fn entry(&self, x: &[usize]) -> f64 {
        self.data()[flat_index_unchecked(self.shape().dims(), x)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    shape: Shape,
    /// `n * m` coordinates, sample-major.
    indices: Vec<usize>,
    values: Vec<f64>,
    /// Position of the first occurrence of each distinct coordinate, in order.
    distinct: Vec<usize>,
    multiplicity: Vec<usize>,
}

impl ObservationSet {
    /// Build from sample-major coordinates (`indices.len() == m * values.len()`).
    pub fn new(shape: Shape, indices: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let m = shape.order();
        if indices.len() != m * values.len() {
            return Err(TtError::Shape(format!(
                "{} coordinates for {} samples of an order-{m} tensor",
                indices.len(),
                values.len()
            )));
        }
        for x in indices.chunks_exact(m) {
            shape.check_index(x)?;
        }
        let mut first: HashMap<usize, usize> = HashMap::with_capacity(values.len());
        let mut distinct: Vec<usize> = Vec::new();
        let mut multiplicity: Vec<usize> = Vec::new();
        for (k, x) in indices.chunks_exact(m).enumerate() {
            let flat = flat_index_unchecked(shape.dims(), x);
            match first.get(&flat) {
                Some(&slot) => {
                    let pos = distinct[slot];
                    if values[pos] != values[k] && !(values[pos].is_nan() && values[k].is_nan()) {
                        return Err(TtError::Shape(format!(
                            "samples {pos} and {k} share coordinate {x:?} but carry {} and {}",
                            values[pos], values[k]
                        )));
                    }
                    multiplicity[slot] += 1;
                }
                None => {
                    first.insert(flat, distinct.len());
                    distinct.push(k);
                    multiplicity.push(1);
                }
            }
        }
        Ok(ObservationSet {
            shape,
            indices,
            values,
            distinct,
            multiplicity,
        })
    }

    pub fn from_samples(shape: Shape, samples: &[(Vec<usize>, f64)]) -> Result<Self> {
        let mut indices = Vec::with_capacity(samples.len() * shape.order());
        for (x, _) in samples {
            if x.len() != shape.order() {
                return Err(TtError::Index(format!(
                    "index {x:?} has {} components, shape has {}",
                    x.len(),
                    shape.order()
                )));
            }
            indices.extend_from_slice(x);
        }
        ObservationSet::new(shape, indices, samples.iter().map(|s| s.1).collect())
    }

    /// Read the entries of `source` at the given sample-major coordinates.
    pub fn observe(source: &impl EntrySource, indices: Vec<usize>) -> Result<Self> {
        let shape = source.source_shape().clone();
        let m = shape.order();
        if indices.len() % m != 0 {
            return Err(TtError::Shape(
                "coordinate list is not a multiple of the order".into(),
            ));
        }
        for x in indices.chunks_exact(m) {
            shape.check_index(x)?;
        }
        let values = indices.chunks_exact(m).map(|x| source.entry(x)).collect();
        ObservationSet::new(shape, indices, values)
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn index(&self, k: usize) -> &[usize] {
        let m = self.shape.order();
        &self.indices[k * m..(k + 1) * m]
    }

    pub fn value(&self, k: usize) -> f64 {
        self.values[k]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[usize], f64)> + '_ {
        self.indices
            .chunks_exact(self.shape.order())
            .zip(self.values.iter().copied())
    }

    pub fn distinct_count(&self) -> usize {
        self.distinct.len()
    }

    /// Distinct coordinates in order of first appearance with their
    /// multiplicity and value.
    pub fn aggregated(&self) -> impl Iterator<Item = (&[usize], usize, f64)> + '_ {
        self.distinct
            .iter()
            .zip(&self.multiplicity)
            .map(|(&k, &mult)| (self.index(k), mult, self.values[k]))
    }

    /// Dense `P_Ω`: the sum over samples of `value * E_ω`.
    pub fn scatter_dense(&self, cap: usize) -> Result<DenseTensor> {
        let mut out = DenseTensor::zeros(self.shape.clone(), cap)?;
        let dims = self.shape.dims().to_vec();
        let data = out.data_mut();
        for (x, v) in self.iter() {
            data[flat_index_unchecked(&dims, x)] += v;
        }
        Ok(out)
    }

    /// Indicator multiset as a dense tensor: entry = multiplicity.
    pub fn multiplicity_dense(&self, cap: usize) -> Result<DenseTensor> {
        let mut out = DenseTensor::zeros(self.shape.clone(), cap)?;
        let dims = self.shape.dims().to_vec();
        let data = out.data_mut();
        for (x, mult, _) in self.aggregated() {
            data[flat_index_unchecked(&dims, x)] += mult as f64;
        }
        Ok(out)
    }

    fn subset(&self, positions: &[usize]) -> Result<ObservationSet> {
        let m = self.shape.order();
        let mut indices = Vec::with_capacity(positions.len() * m);
        let mut values = Vec::with_capacity(positions.len());
        for &k in positions {
            indices.extend_from_slice(self.index(k));
            values.push(self.values[k]);
        }
        ObservationSet::new(self.shape.clone(), indices, values)
    }
}

/// Uniform i.i.d. coordinates (with replacement), without values.
pub fn sample_indices(shape: &Shape, n: usize, seed: u64) -> Vec<usize> {
    let mut rng = rng_from_seed(seed);
    let mut indices = Vec::with_capacity(n * shape.order());
    for _ in 0..n {
        for &d in shape.dims() {
            indices.push(uniform_index(&mut rng, d));
        }
    }
    indices
}

/// `n` uniform samples with replacement of `source`, deterministic in `seed`.
pub fn sample_uniform(n: usize, seed: u64, source: &impl EntrySource) -> Result<ObservationSet> {
    if n == 0 {
        return Err(TtError::InsufficientSamples("n must be at least 1".into()));
    }
    ObservationSet::observe(source, sample_indices(source.source_shape(), n, seed))
}

fn check_shapes(t: &TtTensor, omega: &ObservationSet) -> Result<()> {
    if t.shape() != omega.shape() {
        return Err(TtError::Shape(format!(
            "tensor shape {:?} does not match observation shape {:?}",
            t.shape().dims(),
            omega.shape().dims()
        )));
    }
    Ok(())
}

/// `f = 1/2 * sum_i (T(ω_i) - T*(ω_i))^2`, duplicates counted with multiplicity.
pub fn objective_f(t: &TtTensor, omega: &ObservationSet) -> Result<f64> {
    check_shapes(t, omega)?;
    let s: f64 = omega
        .aggregated()
        .map(|(x, mult, v)| {
            let r = t.eval_unchecked(x) - v;
            mult as f64 * r * r
        })
        .sum();
    Ok(0.5 * s)
}

/// Sparse Euclidean gradient `P_Ω(T - T*)`: one entry per distinct coordinate
/// holding the multiplicity-weighted residual.
pub fn residual_gradient(t: &TtTensor, omega: &ObservationSet) -> Result<ObservationSet> {
    Ok(residual_gradient_and_objective(t, omega)?.0)
}

/// [`residual_gradient`] together with the objective value, from one pass
/// over the distinct coordinates.
pub fn residual_gradient_and_objective(
    t: &TtTensor,
    omega: &ObservationSet,
) -> Result<(ObservationSet, f64)> {
    check_shapes(t, omega)?;
    let m = omega.shape().order();
    let mut indices = Vec::with_capacity(omega.distinct_count() * m);
    let mut values = Vec::with_capacity(omega.distinct_count());
    let mut f = 0.0;
    for (x, mult, v) in omega.aggregated() {
        let r = t.eval_unchecked(x) - v;
        indices.extend_from_slice(x);
        values.push(mult as f64 * r);
        f += mult as f64 * r * r;
    }
    let g = ObservationSet {
        shape: omega.shape().clone(),
        indices,
        distinct: (0..values.len()).collect(),
        multiplicity: vec![1; values.len()],
        values,
    };
    Ok((g, 0.5 * f))
}

/// Random partition of the sample list into `k` groups of size ⌊n/k⌋ or ⌈n/k⌉.
/// Within a group samples keep their input order.
pub fn split_observations(
    omega: &ObservationSet,
    k: usize,
    seed: u64,
) -> Result<Vec<ObservationSet>> {
    let n = omega.len();
    if k == 0 || n < k {
        return Err(TtError::InsufficientSamples(format!(
            "cannot split {n} samples into {k} non-empty groups"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng_from_seed(seed));
    let (base, extra) = (n / k, n % k);
    let mut groups = Vec::with_capacity(k);
    let mut start = 0;
    for g in 0..k {
        let len = base + usize::from(g < extra);
        let mut part = perm[start..start + len].to_vec();
        part.sort_unstable();
        groups.push(omega.subset(&part)?);
        start += len;
    }
    Ok(groups)
}

/// Text format: `# shape d1 ... dm`, then `x1 ... xm value` per sample.
pub fn write_observations(omega: &ObservationSet, mut w: impl Write) -> Result<()> {
    let dims: Vec<String> = omega.shape().dims().iter().map(|d| d.to_string()).collect();
    writeln!(w, "# shape {}", dims.join(" "))?;
    let mut line = String::new();
    for (x, v) in omega.iter() {
        line.clear();
        for xi in x {
            line.push_str(&xi.to_string());
            line.push(' ');
        }
        line.push_str(&format!("{v:?}"));
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn read_observations(r: impl BufRead) -> Result<ObservationSet> {
    let mut shape: Option<Shape> = None;
    let mut indices = Vec::new();
    let mut values = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let parse_err = |msg: String| TtError::Parse { line: lineno, msg };
        let Some(sh) = &shape else {
            let rest = trimmed
                .strip_prefix('#')
                .map(str::trim_start)
                .and_then(|s| s.strip_prefix("shape"))
                .ok_or_else(|| parse_err("expected header `# shape d1 ... dm`".into()))?;
            let dims = rest
                .split_whitespace()
                .map(|t| {
                    t.parse::<usize>()
                        .map_err(|e| parse_err(format!("bad dimension {t:?}: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            shape = Some(Shape::new(dims).map_err(|e| parse_err(e.to_string()))?);
            continue;
        };
        if trimmed.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = trimmed.split_whitespace().collect();
        let m = sh.order();
        if tokens.len() != m + 1 {
            return Err(parse_err(format!(
                "expected {} fields (indices and value), found {}",
                m + 1,
                tokens.len()
            )));
        }
        for (k, t) in tokens[..m].iter().enumerate() {
            let xi: usize = t
                .parse()
                .map_err(|e| parse_err(format!("bad index {t:?}: {e}")))?;
            if xi >= sh.dim(k) {
                return Err(parse_err(format!(
                    "index {xi} out of range for mode {} of size {}",
                    k + 1,
                    sh.dim(k)
                )));
            }
            indices.push(xi);
        }
        let v: f64 = tokens[m]
            .parse()
            .map_err(|e| parse_err(format!("bad value {:?}: {e}", tokens[m])))?;
        values.push(v);
    }
    let shape = shape.ok_or(TtError::Parse {
        line: 0,
        msg: "missing `# shape` header".into(),
    })?;
    ObservationSet::new(shape, indices, values)
}

pub fn save_observations(omega: &ObservationSet, path: impl AsRef<Path>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_observations(omega, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_observations(path: impl AsRef<Path>) -> Result<ObservationSet> {
    read_observations(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{multi_index, DEFAULT_DENSE_CAP};
    use crate::tt::{random_tt, RankVector};
    use proptest::prelude::*;

    fn shape(d: &[usize]) -> Shape {
        Shape::new(d.to_vec()).unwrap()
    }

    fn truth() -> TtTensor {
        random_tt(
            &shape(&[4, 5, 3]),
            &RankVector::new(vec![2, 2]).unwrap(),
            5,
            DEFAULT_DENSE_CAP,
        )
        .unwrap()
    }

    #[test]
    fn sampling_is_deterministic() {
        let t = truth();
        let a = sample_uniform(50, 3, &t).unwrap();
        assert_eq!(a, sample_uniform(50, 3, &t).unwrap());
        assert_ne!(a, sample_uniform(50, 4, &t).unwrap());
        let one = sample_uniform(1, 3, &t).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one.value(0), t.eval(one.index(0)).unwrap());
        assert!(sample_uniform(0, 3, &t).is_err());
    }

    #[test]
    fn sampling_frequencies_are_uniform() {
        let s = shape(&[4, 4, 4]);
        let n = 100_000;
        let idx = sample_indices(&s, n, 77);
        let mut counts = vec![0usize; 64];
        for x in idx.chunks_exact(3) {
            counts[x[0] * 16 + x[1] * 4 + x[2]] += 1;
        }
        let p = 1.0 / 64.0;
        let mean = n as f64 * p;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        assert!(counts.iter().all(|&c| (c as f64 - mean).abs() <= 4.0 * sd));
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - mean).powi(2) / mean)
            .sum();
        // 63 degrees of freedom, 99.9% quantile about 103.4
        assert!(chi2 < 103.4, "chi2 = {chi2}");
    }

    #[test]
    fn objective_small_cases() {
        let t = truth();
        let omega = sample_uniform(30, 1, &t).unwrap();
        assert_eq!(objective_f(&t, &omega).unwrap(), 0.0);
        let x = vec![1, 2, 0];
        let single = ObservationSet::from_samples(
            t.shape().clone(),
            &[(x.clone(), t.eval(&x).unwrap() - 2.0)],
        )
        .unwrap();
        assert!((objective_f(&t, &single).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn objective_matches_direct_sum_and_dense_form() {
        let t = truth();
        let other = random_tt(t.shape(), &t.ranks(), 9, DEFAULT_DENSE_CAP).unwrap();
        let omega = sample_uniform(200, 2, &other).unwrap();
        let mut direct = 0.0;
        for k in 0..omega.len() {
            let r = t.eval(omega.index(k)).unwrap() - omega.value(k);
            direct += 0.5 * r * r;
        }
        let f = objective_f(&t, &omega).unwrap();
        assert!((f - direct).abs() <= 1e-12 * direct);
        // 1/2 <E, P_Ω E> with E = T - T*
        let e = t
            .full(DEFAULT_DENSE_CAP)
            .unwrap()
            .sub(&other.full(DEFAULT_DENSE_CAP).unwrap())
            .unwrap();
        let w = omega.multiplicity_dense(DEFAULT_DENSE_CAP).unwrap();
        let dense: f64 = 0.5
            * e.data()
                .iter()
                .zip(w.data())
                .map(|(a, m)| a * a * m)
                .sum::<f64>();
        assert!((f - dense).abs() <= 1e-12 * dense);
    }

    #[test]
    fn gradient_counts_duplicates() {
        let t = truth();
        let x = vec![0, 0, 0];
        let v = t.eval(&x).unwrap() - 1.0;
        let omega =
            ObservationSet::from_samples(t.shape().clone(), &[(x.clone(), v), (x.clone(), v)])
                .unwrap();
        let g = residual_gradient(&t, &omega).unwrap();
        assert_eq!(g.len(), 1);
        assert!((g.value(0) - 2.0).abs() < 1e-12);
        let exact = sample_uniform(40, 1, &t).unwrap();
        assert!(residual_gradient(&t, &exact)
            .unwrap()
            .values()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let t = truth();
        let dense = t.full(DEFAULT_DENSE_CAP).unwrap();
        let other = random_tt(t.shape(), &t.ranks(), 10, DEFAULT_DENSE_CAP).unwrap();
        let omega = sample_uniform(150, 8, &other).unwrap();
        let g = residual_gradient(&t, &omega).unwrap();
        // f as a function of the dense entries
        let f_dense = |a: &DenseTensor| -> f64 {
            omega
                .iter()
                .map(|(x, v)| 0.5 * (a.get(x).unwrap() - v).powi(2))
                .sum()
        };
        let eps = 1e-6;
        for k in 0..10 {
            let x = g.index(k).to_vec();
            let flat = crate::tensor::flat_index(t.shape(), &x).unwrap();
            let mut plus = dense.clone();
            plus.data_mut()[flat] += eps;
            let mut minus = dense.clone();
            minus.data_mut()[flat] -= eps;
            let fd = (f_dense(&plus) - f_dense(&minus)) / (2.0 * eps);
            assert!(
                (fd - g.value(k)).abs() <= 1e-6 * g.value(k).abs().max(1e-3),
                "{fd} vs {}",
                g.value(k)
            );
        }
    }

    #[test]
    fn split_sizes_and_multiset() {
        let t = truth();
        let omega = sample_uniform(101, 4, &t).unwrap();
        let one = split_observations(&omega, 1, 0).unwrap();
        assert_eq!(one[0], omega);
        let groups = split_observations(&omega, 5, 12).unwrap();
        let sizes: Vec<usize> = groups.iter().map(|g| g.len()).collect();
        assert_eq!(sizes.iter().sum::<usize>(), 101);
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let key = |o: &ObservationSet| {
            let mut v: Vec<(Vec<usize>, u64)> =
                o.iter().map(|(x, v)| (x.to_vec(), v.to_bits())).collect();
            v.sort();
            v
        };
        let mut union: Vec<(Vec<usize>, u64)> = groups.iter().flat_map(key).collect();
        union.sort();
        assert_eq!(union, key(&omega));
        assert!(split_observations(&omega, 200, 0).is_err());
    }

    #[test]
    fn inconsistent_duplicates_rejected() {
        let s = shape(&[2, 2]);
        assert!(
            ObservationSet::from_samples(s.clone(), &[(vec![0, 1], 1.0), (vec![0, 1], 2.0)])
                .is_err()
        );
        assert!(ObservationSet::from_samples(s, &[(vec![0, 2], 1.0)]).is_err());
    }

    #[test]
    fn text_round_trip_and_errors() {
        let t = truth();
        let omega = sample_uniform(25, 6, &t).unwrap();
        let mut buf = Vec::new();
        write_observations(&omega, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# shape 4 5 3\n"));
        let back = read_observations(&buf[..]).unwrap();
        assert_eq!(back, omega);

        let bad = "# shape 2 2\n0 1 0.5\n1 x 0.5\n";
        match read_observations(bad.as_bytes()) {
            Err(TtError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let oob = "# shape 2 2\n0 2 0.5\n";
        assert!(matches!(
            read_observations(oob.as_bytes()),
            Err(TtError::Parse { line: 2, .. })
        ));
        let short = "# shape 2 2\n0 0.5\n";
        assert!(matches!(
            read_observations(short.as_bytes()),
            Err(TtError::Parse { line: 2, .. })
        ));
        assert!(read_observations("0 0 1\n".as_bytes()).is_err());
    }

    #[test]
    fn dense_source_sampling() {
        let s = shape(&[3, 3]);
        let a = DenseTensor::from_fn(s.clone(), DEFAULT_DENSE_CAP, |x| (x[0] * 3 + x[1]) as f64)
            .unwrap();
        let omega = sample_uniform(20, 2, &a).unwrap();
        for (x, v) in omega.iter() {
            assert_eq!(v, (x[0] * 3 + x[1]) as f64);
        }
        let full: Vec<usize> = (0..9).flat_map(|f| multi_index(&s, f).unwrap()).collect();
        let all = ObservationSet::observe(&a, full).unwrap();
        assert_eq!(all.scatter_dense(DEFAULT_DENSE_CAP).unwrap(), a);
    }

    proptest! {
        #[test]
        fn prop_values_round_trip_exactly(v in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            let omega = ObservationSet::from_samples(shape(&[2, 3]), &[(vec![1, 2], v)]).unwrap();
            let mut buf = Vec::new();
            write_observations(&omega, &mut buf).unwrap();
            let back = read_observations(&buf[..]).unwrap();
            prop_assert_eq!(back.value(0).to_bits(), v.to_bits());
        }
    }
}
