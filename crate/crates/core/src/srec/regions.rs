//! Exact counting of the open cells of a hyperplane arrangement in `R^k`.
//!
//! A sign pattern `s ∈ {±1}^c` names the cell `{z : s_i (a_i·z + b_i) > 0}`.
//! A cell is nonempty iff the LP `max t  s.t.  s_i (â_i·z + b̂_i) ≥ t, t ≤ 1`
//! (unit normals) has optimum above [`MARGIN_TOL`]. Patterns are explored
//! depth-first so infeasible prefixes are pruned.

use serde::{Deserialize, Serialize};

use super::lp::{maximize, LpOutcome};
use crate::error::{Error, Result};
use crate::model::GeneratorNet;
use crate::tensor::{dot, norm2, Rng};

pub const MAX_K: usize = 4;
pub const MAX_C: usize = 12;
/// Minimum inscribed margin for a cell to count as open.
pub const MARGIN_TOL: f64 = 1e-9;
const DEGENERATE_NORMAL: f64 = 1e-12;

/// The hyperplane `normal · z + offset = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperplane {
    pub normal: Vec<f64>,
    pub offset: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionCount {
    pub k: usize,
    /// Hyperplanes with a nonzero normal; zero normals are ignored.
    pub c: usize,
    pub exact_count: u64,
    /// `Σ_{i=0}^{k} C(c, i)`, attained under general position.
    pub bound: u64,
}

impl RegionCount {
    pub fn within_bound(&self) -> bool {
        self.exact_count <= self.bound
    }
}

fn binomial(n: usize, r: usize) -> u64 {
    if r > n {
        return 0;
    }
    let r = r.min(n - r);
    (0..r).fold(1u64, |acc, i| acc * (n - i) as u64 / (i + 1) as u64)
}

/// Number of regions cut out by `c` hyperplanes in general position in `R^k`.
pub fn general_position_count(c: usize, k: usize) -> u64 {
    (0..=k.min(c)).map(|i| binomial(c, i)).sum()
}

/// `c` hyperplanes with standard normal normals and offsets.
pub fn random_hyperplanes(k: usize, c: usize, seed: u64) -> Vec<Hyperplane> {
    let mut rng = Rng::new(seed);
    (0..c)
        .map(|_| Hyperplane {
            normal: rng.normal_vector(k).into_inner(),
            offset: rng.normal(),
        })
        .collect()
}

fn normalized(planes: &[Hyperplane], k: usize) -> Result<Vec<(Vec<f64>, f64)>> {
    let mut out = Vec::with_capacity(planes.len());
    for (i, p) in planes.iter().enumerate() {
        if p.normal.len() != k {
            return Err(Error::dims("hyperplane normal", k, p.normal.len()));
        }
        if !p.offset.is_finite() || p.normal.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("hyperplane {i} is not finite")));
        }
        let len = norm2(&p.normal);
        if len < DEGENERATE_NORMAL {
            continue;
        }
        out.push((p.normal.iter().map(|v| v / len).collect(), p.offset / len));
    }
    Ok(out)
}

/// Largest margin `t ≤ 1` of the cell selected by `signs` over the first
/// `signs.len()` planes.
fn cell_margin(planes: &[(Vec<f64>, f64)], signs: &[f64], k: usize) -> f64 {
    // Shift t = τ − B with B > max|b̂| so the origin (z = 0, τ = 0) is
    // feasible and every right-hand side is nonnegative.
    let shift = 1.0 + planes.iter().map(|(_, b)| b.abs()).fold(0.0, f64::max);
    let cols = 2 * k + 1;
    let rows = signs.len() + 1;
    let mut a = vec![0.0; rows * cols];
    let mut b = vec![0.0; rows];
    for (i, (&s, (normal, offset))) in signs.iter().zip(planes).enumerate() {
        for j in 0..k {
            a[i * cols + j] = -s * normal[j];
            a[i * cols + k + j] = s * normal[j];
        }
        a[i * cols + 2 * k] = 1.0;
        b[i] = s * offset + shift;
    }
    a[(rows - 1) * cols + 2 * k] = 1.0;
    b[rows - 1] = 1.0 + shift;
    let mut c = vec![0.0; cols];
    c[2 * k] = 1.0;
    match maximize(&c, &a, &b) {
        LpOutcome::Optimal(tau) => tau - shift,
        // τ is capped by its own row, so this cannot happen.
        LpOutcome::Unbounded => f64::INFINITY,
    }
}

fn count_cells(planes: &[(Vec<f64>, f64)], k: usize) -> u64 {
    if k == 0 {
        return 1;
    }
    fn extend(planes: &[(Vec<f64>, f64)], k: usize, signs: &mut Vec<f64>) -> u64 {
        if signs.len() == planes.len() {
            return 1;
        }
        let mut total = 0;
        for s in [1.0, -1.0] {
            signs.push(s);
            if cell_margin(planes, signs, k) > MARGIN_TOL {
                total += extend(planes, k, signs);
            }
            signs.pop();
        }
        total
    }
    extend(planes, k, &mut Vec::with_capacity(planes.len()))
}

fn check_budget(k: usize, c: usize) -> Result<()> {
    if k > MAX_K || c > MAX_C {
        return Err(Error::BudgetExceeded { k, c });
    }
    Ok(())
}

/// Exact number of open cells of the arrangement in `R^k`.
pub fn count_regions(planes: &[Hyperplane], k: usize) -> Result<RegionCount> {
    check_budget(k, planes.len())?;
    let norm = normalized(planes, k)?;
    let c = norm.len();
    Ok(RegionCount {
        k,
        c,
        exact_count: count_cells(&norm, k),
        bound: general_position_count(c, k),
    })
}

/// The arrangement that the other planes induce on plane `index`, written in
/// an orthonormal coordinate system of that plane (dimension `k − 1`).
pub fn restrict_to_hyperplane(planes: &[Hyperplane], k: usize, index: usize) -> Result<Vec<Hyperplane>> {
    if k == 0 {
        return Err(Error::InvalidParameter("cannot restrict in dimension 0".into()));
    }
    let target = planes
        .get(index)
        .ok_or_else(|| Error::InvalidParameter(format!("no hyperplane {index}")))?;
    if target.normal.len() != k {
        return Err(Error::dims("hyperplane normal", k, target.normal.len()));
    }
    let len = norm2(&target.normal);
    if len < DEGENERATE_NORMAL {
        return Err(Error::InvalidParameter(format!("hyperplane {index} has a zero normal")));
    }
    let a: Vec<f64> = target.normal.iter().map(|v| v / len).collect();
    let origin: Vec<f64> = a.iter().map(|v| -v * target.offset / len).collect();

    // Orthonormal basis of a⊥ by Gram–Schmidt over the standard basis.
    let mut basis: Vec<Vec<f64>> = vec![a.clone()];
    for e in 0..k {
        if basis.len() == k {
            break;
        }
        let mut v = vec![0.0; k];
        v[e] = 1.0;
        for q in &basis {
            let proj = dot(&v, q);
            for (vi, qi) in v.iter_mut().zip(q) {
                *vi -= proj * qi;
            }
        }
        let nv = norm2(&v);
        if nv > 1e-8 {
            basis.push(v.into_iter().map(|x| x / nv).collect());
        }
    }
    let tangent = &basis[1..];

    planes
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != index)
        .map(|(_, p)| {
            if p.normal.len() != k {
                return Err(Error::dims("hyperplane normal", k, p.normal.len()));
            }
            Ok(Hyperplane {
                normal: tangent.iter().map(|q| dot(q, &p.normal)).collect(),
                offset: dot(&p.normal, &origin) + p.offset,
            })
        })
        .collect()
}

/// Counts the activation regions of the first layer of `g`: one hyperplane
/// `w_i · z + b_i = 0` per unit with a nonzero weight row.
pub fn count_net_regions(g: &GeneratorNet) -> Result<RegionCount> {
    let first = &g.layers()[0];
    if !first.activation.has_two_linear_pieces() {
        return Err(Error::NotPiecewiseLinear(first.activation.name()));
    }
    let k = first.in_dim();
    let planes: Vec<Hyperplane> = (0..first.out_dim())
        .map(|r| Hyperplane {
            normal: first.weights.row(r).to_vec(),
            offset: first.bias[r],
        })
        .filter(|p| norm2(&p.normal) >= DEGENERATE_NORMAL)
        .collect();
    count_regions(&planes, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, Layer, RandomNetSpec};
    use crate::tensor::{Matrix, Vector};
    use std::collections::BTreeSet;

    fn plane(normal: &[f64], offset: f64) -> Hyperplane {
        Hyperplane {
            normal: normal.to_vec(),
            offset,
        }
    }

    /// Sign patterns hit by a fine grid; an independent lower bound.
    fn grid_patterns(planes: &[Hyperplane], half: f64, steps: usize) -> usize {
        let mut seen = BTreeSet::new();
        for i in 0..=steps {
            for j in 0..=steps {
                let z = [-half + 2.0 * half * i as f64 / steps as f64, -half + 2.0 * half * j as f64 / steps as f64];
                let vals: Vec<f64> = planes.iter().map(|p| dot(&p.normal, &z) + p.offset).collect();
                if vals.iter().all(|v| v.abs() > 1e-9) {
                    seen.insert(vals.iter().map(|v| *v > 0.0).collect::<Vec<_>>());
                }
            }
        }
        seen.len()
    }

    #[test]
    fn single_plane_gives_two() {
        for k in 1..=4 {
            let r = count_regions(&random_hyperplanes(k, 1, k as u64), k).unwrap();
            assert_eq!(r.exact_count, 2);
        }
    }

    #[test]
    fn points_on_a_line() {
        for c in 1..=12 {
            let r = count_regions(&random_hyperplanes(1, c, 50 + c as u64), 1).unwrap();
            assert_eq!(r.exact_count, c as u64 + 1);
        }
    }

    #[test]
    fn three_lines_in_the_plane() {
        let planes = [plane(&[1.0, 0.0], 0.0), plane(&[0.0, 1.0], 0.0), plane(&[1.0, 1.0], -1.0)];
        let r = count_regions(&planes, 2).unwrap();
        assert_eq!(r.exact_count, 7);
        assert_eq!(r.bound, 7);
        assert_eq!(grid_patterns(&planes, 5.0, 1000), 7);
    }

    /// Sign patterns seen on small circles around every pairwise
    /// intersection and on a huge circle. In general position every cell of
    /// a planar arrangement has a vertex on its boundary, so this is exact.
    fn vertex_probe_patterns(planes: &[Hyperplane]) -> usize {
        let mut probes = Vec::new();
        let ring = |center: [f64; 2], radius: f64, out: &mut Vec<[f64; 2]>| {
            for t in 0..720 {
                let a = t as f64 * std::f64::consts::PI / 360.0;
                out.push([center[0] + radius * a.cos(), center[1] + radius * a.sin()]);
            }
        };
        for i in 0..planes.len() {
            for j in i + 1..planes.len() {
                let (p, q) = (&planes[i], &planes[j]);
                let det = p.normal[0] * q.normal[1] - p.normal[1] * q.normal[0];
                let x = (-p.offset * q.normal[1] + q.offset * p.normal[1]) / det;
                let y = (-p.normal[0] * q.offset + q.normal[0] * p.offset) / det;
                ring([x, y], 1e-6, &mut probes);
            }
        }
        ring([0.0, 0.0], 1e7, &mut probes);
        let mut seen = BTreeSet::new();
        for z in probes {
            let vals: Vec<f64> = planes.iter().map(|p| dot(&p.normal, &z) + p.offset).collect();
            if vals.iter().all(|v| v.abs() > 1e-12) {
                seen.insert(vals.iter().map(|v| *v > 0.0).collect::<Vec<_>>());
            }
        }
        seen.len()
    }

    #[test]
    fn random_lines_match_vertex_probe_oracle() {
        for seed in 0..10 {
            let planes = random_hyperplanes(2, 5, 900 + seed);
            let r = count_regions(&planes, 2).unwrap();
            assert_eq!(r.exact_count as usize, vertex_probe_patterns(&planes), "seed {seed}");
        }
    }

    #[test]
    fn parallel_and_concurrent_planes_fall_short() {
        // Three parallel lines: 4 strips, below the general-position 7.
        let par = [plane(&[1.0, 0.0], 0.0), plane(&[1.0, 0.0], -1.0), plane(&[2.0, 0.0], 4.0)];
        assert_eq!(count_regions(&par, 2).unwrap().exact_count, 4);
        // Three lines through one point: 6 sectors.
        let conc = [plane(&[1.0, 0.0], 0.0), plane(&[0.0, 1.0], 0.0), plane(&[1.0, 1.0], 0.0)];
        assert_eq!(count_regions(&conc, 2).unwrap().exact_count, 6);
    }

    #[test]
    fn general_position_counts() {
        assert_eq!(general_position_count(3, 2), 7);
        assert_eq!(general_position_count(12, 4), 1 + 12 + 66 + 220 + 495);
        assert_eq!(general_position_count(2, 4), 4);
        // f(c, k) = f(c−1, k) + f(c−1, k−1)
        for c in 1..=12 {
            for k in 1..=4 {
                assert_eq!(
                    general_position_count(c, k),
                    general_position_count(c - 1, k) + general_position_count(c - 1, k - 1)
                );
            }
        }
    }

    #[test]
    fn restriction_adds_the_missing_regions() {
        for k in 1..=3 {
            let planes = random_hyperplanes(k, 6, 17 + k as u64);
            let full = count_regions(&planes, k).unwrap().exact_count;
            let without = count_regions(&planes[..5], k).unwrap().exact_count;
            let on_plane = count_regions(&restrict_to_hyperplane(&planes, k, 5).unwrap(), k - 1).unwrap().exact_count;
            assert_eq!(full, without + on_plane, "k {k}");
        }
    }

    #[test]
    fn budget_and_dimension_errors() {
        assert!(matches!(count_regions(&random_hyperplanes(5, 2, 1), 5), Err(Error::BudgetExceeded { .. })));
        assert!(matches!(count_regions(&random_hyperplanes(2, 13, 1), 2), Err(Error::BudgetExceeded { .. })));
        assert!(count_regions(&[plane(&[1.0], 0.0)], 2).is_err());
    }

    #[test]
    fn net_regions_from_first_layer() {
        let mut spec = RandomNetSpec::relu(2, 5, 2, 6, 3);
        spec.bias_scale = 1.0;
        let g = spec.build().unwrap();
        let r = count_net_regions(&g).unwrap();
        assert_eq!((r.k, r.c), (2, 6));
        assert!(r.within_bound());
        assert_eq!(r.exact_count, r.bound);

        let w = Matrix::new(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let zero_row = GeneratorNet::new(vec![Layer::new(w.clone(), Vector::zeros(2), Activation::Relu).unwrap()]).unwrap();
        assert_eq!(count_net_regions(&zero_row).unwrap().c, 1);

        let smooth = GeneratorNet::new(vec![Layer::new(w, Vector::zeros(2), Activation::Tanh).unwrap()]).unwrap();
        assert!(matches!(count_net_regions(&smooth), Err(Error::NotPiecewiseLinear(_))));
    }
}
