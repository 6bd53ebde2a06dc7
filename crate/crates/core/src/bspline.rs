//! Clamped B-spline machinery on the unit parameter domain.
//!
//! Basis evaluation follows the usual triangular (Cox-de Boor) recurrence and
//! only ever touches the `degree + 1` functions that can be nonzero on a span.
//! Control points are stored flat: `dim` consecutive values per point.

use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Clamped, non-decreasing knot sequence on `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnotVector {
    degree: usize,
    knots: Vec<f64>,
}

impl KnotVector {
    pub fn new(degree: usize, knots: Vec<f64>) -> Result<Self> {
        let p = degree;
        if knots.len() < 2 * (p + 1) {
            return Err(Error::KnotVector(format!(
                "{} knots is too few for degree {p}",
                knots.len()
            )));
        }
        if knots.iter().any(|k| !k.is_finite()) {
            return Err(Error::KnotVector("non-finite knot".into()));
        }
        if knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::KnotVector("knots must be non-decreasing".into()));
        }
        let last = knots.len() - 1;
        if knots[..=p].iter().any(|&k| k != 0.0) || knots[last - p..].iter().any(|&k| k != 1.0) {
            return Err(Error::KnotVector(format!(
                "knots must be clamped to 0 and 1 with multiplicity {}",
                p + 1
            )));
        }
        let kv = KnotVector { degree, knots };
        let interior = &kv.knots[p + 1..last - p];
        for &k in interior {
            if k == 0.0 || k == 1.0 {
                return Err(Error::KnotVector("end knot multiplicity exceeds degree + 1".into()));
            }
            if kv.multiplicity(k) > p {
                return Err(Error::KnotVector(format!(
                    "interior knot {k} has multiplicity above degree {p}"
                )));
            }
        }
        Ok(kv)
    }

    /// Clamped knot vector with uniformly spaced interior knots.
    pub fn uniform(degree: usize, n_controls: usize) -> Result<Self> {
        if n_controls < degree + 1 {
            return Err(Error::Size(format!(
                "{n_controls} control points cannot carry degree {degree}"
            )));
        }
        let n_spans = n_controls - degree;
        let mut knots = vec![0.0; degree + 1];
        knots.extend((1..n_spans).map(|i| i as f64 / n_spans as f64));
        knots.extend(std::iter::repeat_n(1.0, degree + 1));
        Self::new(degree, knots)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn control_count(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    /// Knot values without the clamped end repetitions.
    pub fn interior(&self) -> &[f64] {
        &self.knots[self.degree + 1..self.knots.len() - self.degree - 1]
    }

    pub fn multiplicity(&self, u: f64) -> usize {
        self.knots.iter().filter(|&&k| k == u).count()
    }

    fn check_domain(u: f64) -> Result<()> {
        if (0.0..=1.0).contains(&u) {
            Ok(())
        } else {
            Err(Error::Domain { value: u })
        }
    }

    /// Index `i` with `knots[i] <= u < knots[i + 1]`; `u = 1` maps into the
    /// last non-degenerate span.
    pub fn find_span(&self, u: f64) -> Result<usize> {
        Self::check_domain(u)?;
        Ok(self.span_unchecked(u))
    }

    fn span_unchecked(&self, u: f64) -> usize {
        let n = self.control_count() - 1;
        let p = self.degree;
        if u >= self.knots[n + 1] {
            return n;
        }
        if u <= self.knots[p] {
            return p;
        }
        // knots[lo] <= u < knots[hi]
        let (mut lo, mut hi) = (p, n + 1);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if u < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// The `degree + 1` basis values `N_{span-p..=span}(u)`.
    pub fn basis_funs(&self, u: f64) -> Result<Basis> {
        let span = self.find_span(u)?;
        let mut values = vec![0.0; self.degree + 1];
        self.basis_into(span, u, &mut values);
        Ok(Basis { span, values })
    }

    pub(crate) fn basis_into(&self, span: usize, u: f64, out: &mut [f64]) {
        let p = self.degree;
        let k = &self.knots;
        debug_assert_eq!(out.len(), p + 1);
        let mut left = [0.0f64; 16];
        let mut right = [0.0f64; 16];
        let (left, right) = if p < 16 {
            (&mut left[..=p], &mut right[..=p])
        } else {
            // degrees this high never show up in practice
            return self.basis_into_alloc(span, u, out);
        };
        out[0] = 1.0;
        for j in 1..=p {
            left[j] = u - k[span + 1 - j];
            right[j] = k[span + j] - u;
            let mut saved = 0.0;
            for r in 0..j {
                let tmp = out[r] / (right[r + 1] + left[j - r]);
                out[r] = saved + right[r + 1] * tmp;
                saved = left[j - r] * tmp;
            }
            out[j] = saved;
        }
    }

    fn basis_into_alloc(&self, span: usize, u: f64, out: &mut [f64]) {
        let p = self.degree;
        let k = &self.knots;
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        out[0] = 1.0;
        for j in 1..=p {
            left[j] = u - k[span + 1 - j];
            right[j] = k[span + j] - u;
            let mut saved = 0.0;
            for r in 0..j {
                let tmp = out[r] / (right[r + 1] + left[j - r]);
                out[r] = saved + right[r + 1] * tmp;
                saved = left[j - r] * tmp;
            }
            out[j] = saved;
        }
    }

    /// Indices of the control points whose basis functions may be nonzero
    /// at `u` (the span window, always `degree + 1` wide).
    pub fn span_window(&self, u: f64) -> Result<RangeInclusive<usize>> {
        let span = self.find_span(u)?;
        Ok(span - self.degree..=span)
    }

    /// Returns a copy with `u` inserted once.
    pub fn with_knot(&self, u: f64) -> Result<KnotVector> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::Refinement(format!("cannot insert end knot {u}")));
        }
        if self.multiplicity(u) + 1 > self.degree {
            return Err(Error::Refinement(format!(
                "knot {u} would exceed multiplicity {}",
                self.degree
            )));
        }
        let pos = self.knots.partition_point(|&k| k <= u);
        let mut knots = self.knots.clone();
        knots.insert(pos, u);
        Ok(KnotVector {
            degree: self.degree,
            knots,
        })
    }

    /// Smallest knot vector containing both inputs as multisets.
    pub fn union(&self, other: &KnotVector) -> Result<KnotVector> {
        if self.degree != other.degree {
            return Err(Error::KnotVector(format!(
                "cannot merge degree {} with degree {}",
                self.degree, other.degree
            )));
        }
        let (a, b) = (&self.knots, &other.knots);
        let mut out = Vec::with_capacity(a.len().max(b.len()));
        let (mut i, mut j) = (0, 0);
        while i < a.len() || j < b.len() {
            if j == b.len() || (i < a.len() && a[i] < b[j]) {
                out.push(a[i]);
                i += 1;
            } else if i == a.len() || b[j] < a[i] {
                out.push(b[j]);
                j += 1;
            } else {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
        KnotVector::new(self.degree, out)
    }

    /// True when `other` contains every knot of `self` (as a multiset).
    pub fn is_subset_of(&self, other: &KnotVector) -> bool {
        let (a, b) = (&self.knots, &other.knots);
        let mut j = 0;
        for &k in a {
            while j < b.len() && b[j] < k {
                j += 1;
            }
            if j == b.len() || b[j] != k {
                return false;
            }
            j += 1;
        }
        true
    }
}

/// Nonzero basis window at a parameter: `values[r] = N_{span - degree + r}(u)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Basis {
    pub span: usize,
    pub values: Vec<f64>,
}

impl Basis {
    pub fn first_index(&self) -> usize {
        self.span + 1 - self.values.len()
    }
}

/// Knot vector whose collocation matrix over `params` is square and
/// non-singular (interior knots are running means of `degree` parameters).
pub fn averaging_knots(params: &[f64], degree: usize) -> Result<KnotVector> {
    check_params(params, degree)?;
    if degree == 0 {
        return Err(Error::KnotVector("averaging needs degree >= 1".into()));
    }
    let p = degree;
    let n = params.len() - 1;
    let mut knots = vec![0.0; p + 1];
    for j in 1..=n - p {
        let s: f64 = params[j..j + p].iter().sum();
        knots.push(s / p as f64);
    }
    knots.extend(std::iter::repeat_n(1.0, p + 1));
    KnotVector::new(p, knots)
}

/// Knot vector for least-squares approximation of `params` with
/// `n_controls` control points. Every knot span receives at least one
/// parameter, so the collocation matrix has full column rank. Falls back to
/// [`averaging_knots`] when `n_controls` equals the parameter count.
pub fn approximation_knots(params: &[f64], degree: usize, n_controls: usize) -> Result<KnotVector> {
    check_params(params, degree)?;
    let count = params.len();
    if n_controls < degree + 1 || n_controls > count {
        return Err(Error::Size(format!(
            "{n_controls} control points for {count} parameters at degree {degree}"
        )));
    }
    if n_controls == count {
        return averaging_knots(params, degree);
    }
    let p = degree;
    let n = n_controls - 1;
    let d = count as f64 / (n - p + 1) as f64;
    let mut knots = vec![0.0; p + 1];
    for j in 1..=n - p {
        let jd = j as f64 * d;
        let i = jd.floor() as usize;
        let alpha = jd - i as f64;
        knots.push((1.0 - alpha) * params[i - 1] + alpha * params[i]);
    }
    knots.extend(std::iter::repeat_n(1.0, p + 1));
    KnotVector::new(p, knots)
}

fn check_params(params: &[f64], degree: usize) -> Result<()> {
    if params.len() < degree + 1 {
        return Err(Error::Size(format!(
            "{} parameters is too few for degree {degree}",
            params.len()
        )));
    }
    if params[0] != 0.0 || params[params.len() - 1] != 1.0 {
        return Err(Error::Size("parameters must start at 0 and end at 1".into()));
    }
    if params.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Size("parameters must be strictly increasing".into()));
    }
    Ok(())
}

/// B-spline curve with `dim`-dimensional control points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BSplineCurve {
    kv: KnotVector,
    dim: usize,
    controls: Vec<f64>,
}

impl BSplineCurve {
    pub fn new(kv: KnotVector, dim: usize, controls: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Size("value dimension must be at least 1".into()));
        }
        if controls.len() != kv.control_count() * dim {
            return Err(Error::Size(format!(
                "{} control values, expected {} x {dim}",
                controls.len(),
                kv.control_count()
            )));
        }
        Ok(BSplineCurve { kv, dim, controls })
    }

    pub fn knot_vector(&self) -> &KnotVector {
        &self.kv
    }

    pub fn degree(&self) -> usize {
        self.kv.degree
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn control_count(&self) -> usize {
        self.kv.control_count()
    }

    pub fn controls(&self) -> &[f64] {
        &self.controls
    }

    pub fn control(&self, i: usize) -> &[f64] {
        &self.controls[i * self.dim..(i + 1) * self.dim]
    }

    pub fn eval(&self, u: f64) -> Result<Vec<f64>> {
        let basis = self.kv.basis_funs(u)?;
        let mut out = vec![0.0; self.dim];
        let first = basis.first_index();
        for (r, &b) in basis.values.iter().enumerate() {
            for (o, c) in out.iter_mut().zip(self.control(first + r)) {
                *o += b * c;
            }
        }
        Ok(out)
    }

    /// Boehm insertion of a single knot; the curve is unchanged as a function.
    pub fn insert_knot(&self, u: f64) -> Result<BSplineCurve> {
        let kv = self.kv.with_knot(u)?;
        let p = self.kv.degree;
        let k = self.kv.span_unchecked(u);
        let s = self.kv.multiplicity(u);
        let n = self.control_count();
        let d = self.dim;
        let old = &self.kv.knots;
        let mut controls = Vec::with_capacity((n + 1) * d);
        for i in 0..=n {
            if i + p <= k {
                controls.extend_from_slice(self.control(i));
            } else if i + s <= k {
                let alpha = (u - old[i]) / (old[i + p] - old[i]);
                let (a, b) = (self.control(i), self.control(i - 1));
                controls.extend(a.iter().zip(b).map(|(a, b)| alpha * a + (1.0 - alpha) * b));
            } else {
                controls.extend_from_slice(self.control(i - 1));
            }
        }
        BSplineCurve::new(kv, d, controls)
    }
}

/// Trivariate tensor-product B-spline.
///
/// Control points are stored row-major over `(i, j, k)`, `i` along `u`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BSplineVolume {
    kv_u: KnotVector,
    kv_v: KnotVector,
    kv_t: KnotVector,
    dim: usize,
    controls: Vec<f64>,
}

impl BSplineVolume {
    pub fn new(
        kv_u: KnotVector,
        kv_v: KnotVector,
        kv_t: KnotVector,
        dim: usize,
        controls: Vec<f64>,
    ) -> Result<Self> {
        let expected = kv_u.control_count() * kv_v.control_count() * kv_t.control_count() * dim;
        if dim == 0 || controls.len() != expected {
            return Err(Error::Size(format!(
                "{} control values, expected {expected}",
                controls.len()
            )));
        }
        Ok(BSplineVolume {
            kv_u,
            kv_v,
            kv_t,
            dim,
            controls,
        })
    }

    pub fn knot_vectors(&self) -> [&KnotVector; 3] {
        [&self.kv_u, &self.kv_v, &self.kv_t]
    }

    pub fn degrees(&self) -> [usize; 3] {
        [self.kv_u.degree, self.kv_v.degree, self.kv_t.degree]
    }

    /// Control counts along `u`, `v`, `t`.
    pub fn dims(&self) -> [usize; 3] {
        [
            self.kv_u.control_count(),
            self.kv_v.control_count(),
            self.kv_t.control_count(),
        ]
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn controls(&self) -> &[f64] {
        &self.controls
    }

    pub fn control_index(&self, i: usize, j: usize, k: usize) -> usize {
        let [_, nv, nt] = self.dims();
        ((i * nv + j) * nt + k) * self.dim
    }

    pub fn control(&self, i: usize, j: usize, k: usize) -> &[f64] {
        let at = self.control_index(i, j, k);
        &self.controls[at..at + self.dim]
    }

    pub fn eval(&self, u: f64, v: f64, t: f64) -> Result<Vec<f64>> {
        let bu = self.kv_u.basis_funs(u)?;
        let bv = self.kv_v.basis_funs(v)?;
        let bt = self.kv_t.basis_funs(t)?;
        let (iu, iv, it) = (bu.first_index(), bv.first_index(), bt.first_index());
        let mut out = vec![0.0; self.dim];
        for (a, &nu) in bu.values.iter().enumerate() {
            for (b, &nv) in bv.values.iter().enumerate() {
                let w = nu * nv;
                for (c, &nt) in bt.values.iter().enumerate() {
                    let wt = w * nt;
                    let p = self.control(iu + a, iv + b, it + c);
                    for (o, x) in out.iter_mut().zip(p) {
                        *o += wt * x;
                    }
                }
            }
        }
        Ok(out)
    }
}
