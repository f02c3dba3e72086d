use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::simulate::streams::{stream, KIND_REFERENCE};

#[derive(Clone, Copy, Debug)]
pub struct ReOptions {
    /// Exhaustive search when the number of supports is at most this.
    pub max_exhaustive: usize,
    /// Supports drawn at random otherwise.
    pub sampled_supports: usize,
    pub starts: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for ReOptions {
    fn default() -> Self {
        ReOptions {
            max_exhaustive: 100_000,
            sampled_supports: 2_000,
            starts: 50,
            iterations: 200,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReWitness {
    pub a: Vec<f64>,
    pub support: Vec<usize>,
    /// `a'Ga`.
    pub quadratic: f64,
    /// `eta ||a_J||^2`.
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum ReVerdict {
    /// Certified: the witness satisfies the cone constraint and breaks the bound.
    Violation(ReWitness),
    /// No violation among the searched supports and starts. When `proven`
    /// is set, `eta` is below the smallest eigenvalue and the property holds
    /// outright.
    NoViolationFound {
        supports_checked: usize,
        exhaustive: bool,
        proven: bool,
        /// Smallest `a'Ga / ||a_J||^2` reached by the search, or the smallest
        /// eigenvalue when `proven`.
        min_ratio: f64,
    },
}

impl ReVerdict {
    pub fn holds(&self) -> bool {
        matches!(self, ReVerdict::NoViolationFound { .. })
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Euclidean projection of `v` onto the l1 ball of radius `r`.
fn project_l1(v: &mut [f64], r: f64) {
    let l1: f64 = v.iter().map(|x| x.abs()).sum();
    if l1 <= r {
        return;
    }
    if r <= 0.0 {
        v.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    let mut u: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, x) in u.iter().enumerate() {
        cum += x;
        let t = (cum - r) / (i + 1) as f64;
        if *x > t {
            theta = t;
        }
    }
    for x in v.iter_mut() {
        *x = x.signum() * (x.abs() - theta).max(0.0);
    }
}

/// Pulls `a` back onto `{||a_J|| = 1, |a_{J^c}|_1 <= c |a_J|_1}`.
fn make_feasible(a: &mut DVector<f64>, in_j: &[bool], c: f64) -> bool {
    let nj: f64 = a.iter().zip(in_j).filter(|(_, j)| **j).map(|(x, _)| x * x).sum::<f64>().sqrt();
    if !(nj > 1e-300) {
        return false;
    }
    for (x, j) in a.iter_mut().zip(in_j) {
        if *j {
            *x /= nj;
        }
    }
    let l1j: f64 = a.iter().zip(in_j).filter(|(_, j)| **j).map(|(x, _)| x.abs()).sum();
    let mut rest: Vec<f64> = a.iter().zip(in_j).filter(|(_, j)| !**j).map(|(x, _)| *x).collect();
    project_l1(&mut rest, c * l1j);
    let mut it = rest.into_iter();
    for (x, j) in a.iter_mut().zip(in_j) {
        if !*j {
            *x = it.next().unwrap();
        }
    }
    true
}

/// Checks the cone condition and the strict bound directly.
fn verify(g: &DMatrix<f64>, a: &DVector<f64>, in_j: &[bool], eta: f64, c: f64) -> Option<(f64, f64)> {
    let l1j: f64 = a.iter().zip(in_j).filter(|(_, j)| **j).map(|(x, _)| x.abs()).sum();
    let l1c: f64 = a.iter().zip(in_j).filter(|(_, j)| !**j).map(|(x, _)| x.abs()).sum();
    let nj2: f64 = a.iter().zip(in_j).filter(|(_, j)| **j).map(|(x, _)| x * x).sum();
    let quad = a.dot(&(g * a));
    let bound = eta * nj2;
    let tol = 1e-12 * bound.abs().max(1.0);
    (l1c <= c * l1j && quad < bound - tol).then_some((quad, bound))
}

/// Since `a'Ga >= lambda_min ||a||^2 >= lambda_min ||a_J||^2`, any `eta` up
/// to the smallest eigenvalue is accepted without search.
///
/// Otherwise searches for `(a, J)` with `|J| <= s`, `|a_{J^c}|_1 <= c |a_J|_1` and
/// `a'Ga < eta ||a_J||^2`.
///
/// A violation on `J` is also one on any superset of `J`, so only supports of
/// size `min(s, dim)` are searched. Each support is probed by projected
/// gradient descent from the eigenvector of the smallest eigenvalue, the
/// coordinate vectors of `J`, and random starts.
pub fn check_re(g: &DMatrix<f64>, eta: f64, c: f64, s: usize) -> ReVerdict {
    check_re_with(g, eta, c, s, ReOptions::default())
}

pub fn check_re_with(g: &DMatrix<f64>, eta: f64, c: f64, s: usize, opts: ReOptions) -> ReVerdict {
    let n = g.nrows();
    let k = s.min(n);
    if k == 0 {
        return ReVerdict::NoViolationFound {
            supports_checked: 0,
            exhaustive: true,
            proven: true,
            min_ratio: f64::INFINITY,
        };
    }
    let sym = (g + g.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    let lmax = eig.eigenvalues.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let imin = eig.eigenvalues.imin();
    let v_min: DVector<f64> = eig.eigenvectors.column(imin).into_owned();
    let lmin = eig.eigenvalues[imin];
    if lmin > 0.0 && eta <= lmin {
        return ReVerdict::NoViolationFound { supports_checked: 0, exhaustive: true, proven: true, min_ratio: lmin };
    }
    let step = if lmax > 0.0 { 0.5 / lmax } else { 1.0 };
    let mut rng = stream(opts.seed, KIND_REFERENCE, 7, 0, 0);

    let exhaustive = binomial(n, k) <= opts.max_exhaustive as f64;
    let supports: Vec<Vec<usize>> = if exhaustive {
        let mut out = Vec::new();
        let mut idx: Vec<usize> = (0..k).collect();
        loop {
            out.push(idx.clone());
            let mut i = k;
            while i > 0 && idx[i - 1] == n - k + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            idx[i - 1] += 1;
            for t in i..k {
                idx[t] = idx[t - 1] + 1;
            }
        }
        out
    } else {
        (0..opts.sampled_supports)
            .map(|_| {
                let mut v = sample(&mut rng, n, k).into_vec();
                v.sort_unstable();
                v
            })
            .collect()
    };

    let mut min_ratio = f64::INFINITY;
    for support in &supports {
        let mut in_j = vec![false; n];
        for &j in support {
            in_j[j] = true;
        }
        let mut starts: Vec<DVector<f64>> = vec![v_min.clone()];
        for &j in support {
            let mut e = DVector::zeros(n);
            e[j] = 1.0;
            starts.push(e);
        }
        while starts.len() < opts.starts {
            starts.push(DVector::from_fn(n, |_, _| rng.sample(StandardNormal)));
        }
        for mut a in starts {
            if !make_feasible(&mut a, &in_j, c) {
                continue;
            }
            for it in 0..=opts.iterations {
                let ga = &sym * &a;
                let quad = a.dot(&ga);
                if quad < min_ratio {
                    min_ratio = quad;
                }
                if quad < eta {
                    if let Some((quadratic, bound)) = verify(g, &a, &in_j, eta, c) {
                        return ReVerdict::Violation(ReWitness {
                            a: a.iter().copied().collect(),
                            support: support.clone(),
                            quadratic,
                            bound,
                        });
                    }
                }
                if it == opts.iterations {
                    break;
                }
                let mut next = &a - &ga * (2.0 * step);
                if !make_feasible(&mut next, &in_j, c) {
                    break;
                }
                if (&next - &a).amax() < 1e-13 {
                    break;
                }
                a = next;
            }
        }
    }
    ReVerdict::NoViolationFound { supports_checked: supports.len(), exhaustive, proven: false, min_ratio }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_has_no_violation() {
        let v = check_re(&DMatrix::identity(4, 4), 1.0, 3.0, 2);
        assert!(matches!(v, ReVerdict::NoViolationFound { proven: true, .. }));
        // Above the smallest eigenvalue the search runs and finds the restricted minimum.
        let g = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 2.0]));
        match check_re(&g, 1.5, 0.5, 1) {
            ReVerdict::Violation(w) => assert_eq!(w.support, vec![0]),
            other => panic!("unexpected {other:?}"),
        }
        match check_re(&g, 0.9, 0.5, 1) {
            ReVerdict::NoViolationFound { proven, .. } => assert!(proven),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_matrix_violates() {
        match check_re(&DMatrix::zeros(3, 3), 0.1, 1.0, 1) {
            ReVerdict::Violation(w) => {
                assert_eq!(w.support.len(), 1);
                assert_eq!(w.quadratic, 0.0);
                assert!(w.bound > 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rank_one_has_cone_violation() {
        let v = DVector::from_vec(vec![1.0, 2.0, -1.0]);
        let g = &v * v.transpose();
        match check_re(&g, 1e-3, 3.0, 1) {
            ReVerdict::Violation(w) => {
                let a = DVector::from_vec(w.a.clone());
                assert!(a.dot(&(&g * &a)) < 1e-3 * a[w.support[0]].powi(2));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn l1_projection() {
        let mut v = vec![3.0, -1.0, 0.5];
        project_l1(&mut v, 2.0);
        let l1: f64 = v.iter().map(|x| x.abs()).sum();
        assert!((l1 - 2.0).abs() < 1e-12);
        assert!(v[0] > 0.0 && v[1] <= 0.0);
    }
}
