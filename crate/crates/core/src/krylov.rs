//! Matrix-free Krylov solvers for symmetric operators.

use nalgebra::DVector;

#[derive(Clone, Debug)]
pub struct KrylovResult {
    pub x: DVector<f64>,
    pub iterations: usize,
    /// Relative residual `||b - A x|| / ||b||` as tracked by the recurrence.
    pub relative_residual: f64,
    /// Nonpositive curvature was met before convergence (CG only).
    pub breakdown: bool,
}

/// Conjugate gradients for `A x = b` with `A` symmetric positive
/// (semi)definite.
pub fn conjugate_gradient(
    apply: impl Fn(&DVector<f64>) -> DVector<f64>,
    b: &DVector<f64>,
    max_iter: usize,
    tol: f64,
) -> KrylovResult {
    let bn = b.norm();
    let mut x = DVector::zeros(b.len());
    if bn == 0.0 {
        return KrylovResult {
            x,
            iterations: 0,
            relative_residual: 0.0,
            breakdown: false,
        };
    }
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rr = r.dot(&r);
    for it in 0..max_iter {
        let ap = apply(&p);
        let pap = p.dot(&ap);
        if pap <= 0.0 || !pap.is_finite() {
            return KrylovResult {
                x,
                iterations: it,
                relative_residual: rr.sqrt() / bn,
                breakdown: true,
            };
        }
        let alpha = rr / pap;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        let rr_new = r.dot(&r);
        if rr_new.sqrt() <= tol * bn {
            return KrylovResult {
                x,
                iterations: it + 1,
                relative_residual: rr_new.sqrt() / bn,
                breakdown: false,
            };
        }
        p = &r + p * (rr_new / rr);
        rr = rr_new;
    }
    KrylovResult {
        x,
        iterations: max_iter,
        relative_residual: rr.sqrt() / bn,
        breakdown: false,
    }
}

#[derive(Clone, Debug)]
pub struct SteihaugResult {
    pub step: DVector<f64>,
    pub iterations: usize,
    pub on_boundary: bool,
}

/// Steihaug-Toint truncated CG for `min g^T s + 1/2 s^T H s, ||s|| <= radius`.
pub fn steihaug(
    apply: impl Fn(&DVector<f64>) -> DVector<f64>,
    g: &DVector<f64>,
    radius: f64,
    max_iter: usize,
    tol: f64,
) -> SteihaugResult {
    let n = g.len();
    let mut s = DVector::zeros(n);
    let mut r = -g;
    let gn = g.norm();
    if gn == 0.0 {
        return SteihaugResult {
            step: s,
            iterations: 0,
            on_boundary: false,
        };
    }
    let mut p = r.clone();
    let mut rr = r.dot(&r);
    for it in 0..max_iter {
        let hp = apply(&p);
        let php = p.dot(&hp);
        if php <= 0.0 {
            let tau = boundary_step(&s, &p, radius);
            s.axpy(tau, &p, 1.0);
            return SteihaugResult {
                step: s,
                iterations: it + 1,
                on_boundary: true,
            };
        }
        let alpha = rr / php;
        let trial = &s + &p * alpha;
        if trial.norm() >= radius {
            let tau = boundary_step(&s, &p, radius);
            s.axpy(tau, &p, 1.0);
            return SteihaugResult {
                step: s,
                iterations: it + 1,
                on_boundary: true,
            };
        }
        s = trial;
        r.axpy(-alpha, &hp, 1.0);
        let rr_new = r.dot(&r);
        if rr_new.sqrt() <= tol * gn {
            return SteihaugResult {
                step: s,
                iterations: it + 1,
                on_boundary: false,
            };
        }
        p = &r + p * (rr_new / rr);
        rr = rr_new;
    }
    SteihaugResult {
        step: s,
        iterations: max_iter,
        on_boundary: false,
    }
}

/// Positive `tau` with `||s + tau p|| = radius`.
pub(crate) fn boundary_step(s: &DVector<f64>, p: &DVector<f64>, radius: f64) -> f64 {
    let a = p.dot(p);
    let b = 2.0 * s.dot(p);
    let c = s.dot(s) - radius * radius;
    if a == 0.0 {
        return 0.0;
    }
    let disc = (b * b - 4.0 * a * c).max(0.0).sqrt();
    // numerically stable root selection
    if b >= 0.0 {
        (-2.0 * c) / (b + disc)
    } else {
        (-b + disc) / (2.0 * a)
    }
}

/// MINRES for symmetric, possibly indefinite or singular, `A x = b`.
pub fn minres(
    apply: impl Fn(&DVector<f64>) -> DVector<f64>,
    b: &DVector<f64>,
    max_iter: usize,
    tol: f64,
) -> KrylovResult {
    let n = b.len();
    let mut x = DVector::zeros(n);
    let beta1 = b.norm();
    if beta1 == 0.0 {
        return KrylovResult {
            x,
            iterations: 0,
            relative_residual: 0.0,
            breakdown: false,
        };
    }
    let mut r1 = b.clone();
    let mut r2 = b.clone();
    let mut y = b.clone();
    let mut oldb = 0.0;
    let mut beta = beta1;
    let mut dbar = 0.0;
    let mut epsln = 0.0;
    let mut phibar = beta1;
    let mut cs = -1.0;
    let mut sn = 0.0;
    let mut w = DVector::zeros(n);
    let mut w2 = DVector::zeros(n);
    let mut iterations = 0;
    for it in 1..=max_iter {
        iterations = it;
        let v = &y / beta;
        y = apply(&v);
        if it >= 2 {
            y.axpy(-beta / oldb, &r1, 1.0);
        }
        let alfa = v.dot(&y);
        y.axpy(-alfa / beta, &r2, 1.0);
        r1 = std::mem::replace(&mut r2, y.clone());
        oldb = beta;
        beta = y.norm();
        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = gbar.hypot(beta).max(f64::EPSILON);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;
        let w1 = std::mem::replace(&mut w2, w.clone());
        w = (&v - &w1 * oldeps - &w2 * delta) / gamma;
        x.axpy(phi, &w, 1.0);
        if phibar <= tol * beta1 || beta <= f64::EPSILON * beta1 {
            break;
        }
    }
    let res = (b - apply(&x)).norm() / beta1;
    KrylovResult {
        x,
        iterations,
        relative_residual: res,
        breakdown: false,
    }
}
