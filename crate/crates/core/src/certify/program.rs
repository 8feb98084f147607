//! Eve's guessing probability on |R⟩ for two-outcome qubit measurements
//! correlated with her guess e ∈ {0, 1}.
//!
//! Each conditional POVM is written in Bloch form
//! `N_{0,e} = (c_e I + r_e·σ)/2`, `N_{1,e} = q_e I − N_{0,e}`, with
//! |r_e| ≤ m_e = min(c_e, 2q_e − c_e) for positivity. The test constraints fix
//! Σc_e = 1 + p_h − p_v and Σz_e = p_h + p_v − 1; the y and z split of r_e is
//! solved in closed form, leaving a concave problem in (q₀, c₀).

const GOLDEN_ITERS: usize = 96;
const BISECT_ITERS: usize = 80;
const FEASIBILITY_SLACK: f64 = 1e-12;

pub(super) struct Program {
    c_total: f64,
    z_abs: f64,
}

impl Program {
    pub(super) fn new(p_suc_h: f64, p_suc_v: f64) -> Self {
        Self {
            c_total: 1.0 + p_suc_h - p_suc_v,
            z_abs: (p_suc_h + p_suc_v - 1.0).abs(),
        }
    }

    fn c_range(&self, q0: f64) -> (f64, f64) {
        let lo = (self.c_total - 2.0 * (1.0 - q0)).max(0.0);
        let hi = (2.0 * q0).min(self.c_total);
        (lo, hi.max(lo))
    }

    /// m₀ + m₁: the largest Bloch-vector budget the positivity constraints allow.
    fn radius(&self, q0: f64, c0: f64) -> f64 {
        let (q1, c1) = (1.0 - q0, self.c_total - c0);
        (c0).min(2.0 * q0 - c0) + c1.min(2.0 * q1 - c1)
    }

    fn objective(&self, q0: f64, c0: f64) -> f64 {
        let s = self.radius(q0, c0);
        let y_gap = (s * s - self.z_abs * self.z_abs).max(0.0).sqrt();
        (2.0 * c0 - self.c_total) / 2.0 + (1.0 - q0) + 0.5 * y_gap
    }

    /// Feasible c₀ interval for a fixed q₀.
    fn c_interval(&self, q0: f64) -> Option<(f64, f64)> {
        let (lo, hi) = self.c_range(q0);
        superlevel_interval(|c| self.radius(q0, c), lo, hi, self.z_abs)
    }

    fn best_for_q(&self, q0: f64) -> f64 {
        match self.c_interval(q0) {
            Some((a, b)) => golden_max(|c| self.objective(q0, c), a, b).1,
            None => f64::NEG_INFINITY,
        }
    }

    pub(super) fn solve(&self) -> f64 {
        let max_radius = |q0: f64| {
            let (lo, hi) = self.c_range(q0);
            golden_max(|c| self.radius(q0, c), lo, hi).1
        };
        let (qa, qb) = superlevel_interval(max_radius, 0.0, 1.0, self.z_abs)
            .expect("the projective H/V measurement is always feasible");
        golden_max(|q| self.best_for_q(q), qa, qb).1
    }
}

/// Golden-section maximization of a concave function on [lo, hi]. The
/// endpoints are evaluated as well, so boundary maxima are found exactly.
fn golden_max(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..GOLDEN_ITERS {
        if b - a <= f64::EPSILON * (1.0 + a.abs().max(b.abs())) {
            break;
        }
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        }
    }
    [(lo, f(lo)), (hi, f(hi)), (x1, f1), (x2, f2)]
        .into_iter()
        .fold((lo, f64::NEG_INFINITY), |best, cand| if cand.1 > best.1 { cand } else { best })
}

/// The interval where a concave `g` reaches `threshold`, or None.
fn superlevel_interval(g: impl Fn(f64) -> f64, lo: f64, hi: f64, threshold: f64) -> Option<(f64, f64)> {
    let level = threshold - FEASIBILITY_SLACK;
    let (peak, top) = golden_max(&g, lo, hi);
    if top < level {
        return None;
    }
    let edge = |mut inside: f64, mut outside: f64| {
        if g(outside) >= level {
            return outside;
        }
        for _ in 0..BISECT_ITERS {
            let mid = 0.5 * (inside + outside);
            if g(mid) >= level {
                inside = mid;
            } else {
                outside = mid;
            }
        }
        inside
    };
    Some((edge(peak, lo), edge(peak, hi)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_finds_interior_and_boundary() {
        let (x, fx) = golden_max(|x| -(x - 0.3f64).powi(2), 0.0, 1.0);
        assert!((x - 0.3).abs() < 1e-7 && fx > -1e-14);
        assert_eq!(golden_max(|x| x, 0.0, 2.0), (2.0, 2.0));
    }

    #[test]
    fn superlevel_of_tent() {
        let tent = |x: f64| 1.0 - (x - 0.5).abs();
        let (a, b) = superlevel_interval(tent, 0.0, 1.0, 0.75).unwrap();
        assert!((a - 0.25).abs() < 1e-11 && (b - 0.75).abs() < 1e-11);
        assert!(superlevel_interval(tent, 0.0, 1.0, 1.5).is_none());
        assert_eq!(superlevel_interval(tent, 0.0, 1.0, 0.0), Some((0.0, 1.0)));
    }

    #[test]
    fn ideal_point_is_a_line() {
        let p = Program::new(1.0, 1.0);
        for q in [0.0, 0.25, 0.5, 1.0] {
            assert!((p.best_for_q(q) - 0.5).abs() < 1e-9);
        }
    }
}
