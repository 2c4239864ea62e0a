//! Dense single-phase simplex for small problems of the form
//! `max cᵀx  s.t.  A x ≤ b,  x ≥ 0` with `b ≥ 0`, so the origin is a
//! feasible starting basis. Bland's rule rules out cycling.

const PIVOT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LpOutcome {
    Optimal(f64),
    Unbounded,
}

/// `a` is row-major `rows × cols`; requires every `b[i] ≥ 0`.
pub fn maximize(c: &[f64], a: &[f64], b: &[f64]) -> LpOutcome {
    let rows = b.len();
    let cols = c.len();
    debug_assert_eq!(a.len(), rows * cols);
    debug_assert!(b.iter().all(|&v| v >= 0.0));
    let width = cols + rows + 1;
    // Constraint rows then the objective row; last column is the RHS.
    let mut t = vec![0.0; (rows + 1) * width];
    for i in 0..rows {
        t[i * width..i * width + cols].copy_from_slice(&a[i * cols..(i + 1) * cols]);
        t[i * width + cols + i] = 1.0;
        t[i * width + width - 1] = b[i];
    }
    for j in 0..cols {
        t[rows * width + j] = -c[j];
    }
    let mut basis: Vec<usize> = (cols..cols + rows).collect();

    loop {
        let obj = &t[rows * width..rows * width + width - 1];
        let Some(enter) = obj.iter().position(|&v| v < -PIVOT_EPS) else {
            return LpOutcome::Optimal(t[rows * width + width - 1]);
        };
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..rows {
            let coef = t[i * width + enter];
            if coef > PIVOT_EPS {
                let ratio = t[i * width + width - 1] / coef;
                let better = match leave {
                    None => true,
                    Some((l, best)) => ratio < best - PIVOT_EPS || (ratio <= best + PIVOT_EPS && basis[i] < basis[l]),
                };
                if better {
                    leave = Some((i, ratio));
                }
            }
        }
        let Some((pr, _)) = leave else {
            return LpOutcome::Unbounded;
        };
        let pivot = t[pr * width + enter];
        for v in &mut t[pr * width..(pr + 1) * width] {
            *v /= pivot;
        }
        for i in 0..=rows {
            if i == pr {
                continue;
            }
            let f = t[i * width + enter];
            if f != 0.0 {
                for j in 0..width {
                    t[i * width + j] -= f * t[pr * width + j];
                }
            }
        }
        basis[pr] = enter;
    }
}
