//! Small dense linear algebra shared by the design calculators and the simulator.
//!
//! Matrices are `nalgebra::DMatrix<f64>`; the matrix norm used everywhere is the
//! spectral (induced 2-) norm.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative tolerance for classifying an eigenvalue as real.
pub const REAL_EIG_TOL: f64 = 1e-9;
/// Eigenvalues must satisfy `Re λ < -HURWITZ_MARGIN`.
pub const HURWITZ_MARGIN: f64 = 1e-9;
/// Relative singular value cutoff used for rank decisions.
pub const RANK_TOL: f64 = 1e-10;

/// Builds a matrix from row slices, rejecting ragged rows and non-finite entries.
pub fn mat_from_rows(rows: &[Vec<f64>]) -> Result<Mat> {
    let nrows = rows.len();
    if nrows == 0 {
        return Err(Error::Dimension("matrix has no rows".into()));
    }
    let ncols = rows[0].len();
    if ncols == 0 {
        return Err(Error::Dimension("matrix has no columns".into()));
    }
    for (i, r) in rows.iter().enumerate() {
        if r.len() != ncols {
            return Err(Error::Dimension(format!(
                "row {i} has {} entries, expected {ncols}",
                r.len()
            )));
        }
    }
    let m = Mat::from_fn(nrows, ncols, |i, j| rows[i][j]);
    check_finite(&m)?;
    Ok(m)
}

pub fn check_finite(m: &Mat) -> Result<()> {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if !m[(i, j)].is_finite() {
                return Err(Error::NonFinite { row: i, col: j });
            }
        }
    }
    Ok(())
}

fn require_square(m: &Mat, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// `e^{A t}`.
pub fn mat_exp(a: &Mat, t: f64) -> Result<Mat> {
    require_square(a, "mat_exp argument")?;
    Ok((a * t).exp())
}

/// `∫_a^b e^{-A s} L ds`, read off the upper-right block of the exponential of
/// the augmented matrix `[[-A, L], [0, 0]]`.
pub fn exp_integral(a: &Mat, l: &Mat, lo: f64, hi: f64) -> Result<Mat> {
    require_square(a, "exp_integral A")?;
    if l.nrows() != a.nrows() {
        return Err(Error::Dimension(format!(
            "exp_integral: L has {} rows, A is {}x{}",
            l.nrows(),
            a.nrows(),
            a.ncols()
        )));
    }
    if !(lo <= hi) {
        return Err(Error::Interval(format!("lower limit {lo} exceeds upper limit {hi}")));
    }
    let n = a.nrows();
    let p = l.ncols();
    if lo == hi {
        return Ok(Mat::zeros(n, p));
    }
    // ∫_a^b e^{-As} L ds = e^{-Aa} ∫_0^{b-a} e^{-Au} L du
    let block = AugmentedExp::new(a, l);
    let (phi_lo, _) = block.eval(lo);
    let (_, int_len) = block.eval(hi - lo);
    Ok(phi_lo * int_len)
}

/// Evaluates `(e^{-Aτ}, ∫_0^τ e^{-Au} L du)` through one exponential of the
/// augmented generator.
#[derive(Debug, Clone)]
pub struct AugmentedExp {
    gen: Mat,
    n: usize,
    p: usize,
}

impl AugmentedExp {
    pub fn new(a: &Mat, l: &Mat) -> Self {
        let n = a.nrows();
        let p = l.ncols();
        let mut gen = Mat::zeros(n + p, n + p);
        gen.view_mut((0, 0), (n, n)).copy_from(&(-a));
        gen.view_mut((0, n), (n, p)).copy_from(l);
        Self { gen, n, p }
    }

    /// The full augmented exponential `[[e^{-Aτ}, I(τ)], [0, I]]`.
    pub fn full(&self, tau: f64) -> Mat {
        (&self.gen * tau).exp()
    }

    pub fn split(&self, e: &Mat) -> (Mat, Mat) {
        (
            e.view((0, 0), (self.n, self.n)).into_owned(),
            e.view((0, self.n), (self.n, self.p)).into_owned(),
        )
    }

    pub fn eval(&self, tau: f64) -> (Mat, Mat) {
        self.split(&self.full(tau))
    }
}

/// Largest singular value.
pub fn spectral_norm(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    if m.nrows() == 1 || m.ncols() == 1 {
        return m.norm();
    }
    m.singular_values().max()
}

pub fn singular_values(m: &Mat) -> Vector {
    m.clone().svd(false, false).singular_values
}

pub fn smallest_singular_value(m: &Mat) -> f64 {
    let sv = singular_values(m);
    sv.iter().cloned().fold(f64::INFINITY, f64::min)
}

pub fn eigenvalues(a: &Mat) -> Result<Vec<Complex<f64>>> {
    require_square(a, "eigenvalue argument")?;
    Ok(a.complex_eigenvalues().iter().cloned().collect())
}

/// `(λ_min, λ_max)` of a symmetric matrix.
pub fn sym_eig_extremes(m: &Mat) -> (f64, f64) {
    let ev = m.clone().symmetric_eigenvalues();
    let lo = ev.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ev.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

fn is_real_eig(l: &Complex<f64>) -> bool {
    l.im.abs() <= REAL_EIG_TOL * (1.0 + l.norm())
}

pub fn check_hurwitz(m: &Mat) -> Result<()> {
    let bad: Vec<String> = eigenvalues(m)?
        .into_iter()
        .filter(|l| !(l.re < -HURWITZ_MARGIN))
        .map(|l| format!("{:.6}{:+.6}i", l.re, l.im))
        .collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::NotHurwitz(bad.join(", ")))
    }
}

pub fn check_spd(q: &Mat) -> Result<()> {
    require_square(q, "SPD candidate")?;
    let asym = (q - q.transpose()).amax();
    let scale = q.amax().max(1.0);
    if asym > 1e-12 * scale {
        return Err(Error::NotSpd(format!("asymmetry {asym:e}")));
    }
    if q.clone().cholesky().is_none() {
        let (lo, _) = sym_eig_extremes(q);
        return Err(Error::NotSpd(format!("smallest eigenvalue {lo:e}")));
    }
    Ok(())
}

/// Solves `Mᵀ P + P M = -Q` by Kronecker vectorisation.
pub fn solve_lyapunov(m: &Mat, q: &Mat) -> Result<Mat> {
    require_square(m, "Lyapunov M")?;
    if q.shape() != m.shape() {
        return Err(Error::Dimension(format!(
            "Lyapunov Q is {}x{}, M is {}x{}",
            q.nrows(),
            q.ncols(),
            m.nrows(),
            m.ncols()
        )));
    }
    check_hurwitz(m)?;
    check_spd(q)?;
    let n = m.nrows();
    let eye = Mat::identity(n, n);
    let mt = m.transpose();
    // column-major vec: vec(MᵀP) = (I⊗Mᵀ) vec P, vec(PM) = (Mᵀ⊗I) vec P
    let kron = eye.kronecker(&mt) + mt.kronecker(&eye);
    let rhs = -Vector::from_column_slice(q.as_slice());
    let sol = kron
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NotHurwitz("Kronecker system is singular".into()))?;
    let p = Mat::from_column_slice(n, n, sol.as_slice());
    let p = (&p + p.transpose()) * 0.5;
    check_spd(&p)?;
    Ok(p)
}

/// Moore–Penrose left inverse of a full column rank matrix.
pub fn left_pinv(n: &Mat) -> Result<Mat> {
    if n.nrows() < n.ncols() {
        return Err(Error::Dimension(format!(
            "left inverse needs rows >= cols, got {}x{}",
            n.nrows(),
            n.ncols()
        )));
    }
    let svd = n.clone().svd(true, true);
    let sv = &svd.singular_values;
    let smax = sv.max();
    let smin = sv.min();
    if !(smin > RANK_TOL * smax.max(1.0)) {
        return Err(Error::RankDeficient { smallest_sv: smin });
    }
    let u = svd.u.as_ref().expect("svd computed with u");
    let vt = svd.v_t.as_ref().expect("svd computed with v_t");
    let sinv = Mat::from_diagonal(&sv.map(|s| 1.0 / s));
    Ok(vt.transpose() * sinv * u.transpose())
}

/// Numerical rank with a relative singular value cutoff.
pub fn rank(m: &Mat) -> usize {
    let sv = singular_values(m);
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * smax.max(1.0)).count()
}

#[derive(Debug, Clone)]
pub struct SpectralInfo {
    pub eigenvalues: Vec<Complex<f64>>,
    pub spec_norm: f64,
    pub all_real_eig: bool,
    /// `max_{i,j} Im(λ_i - λ_j)`.
    pub omega: f64,
}

pub fn spectral_info(a: &Mat) -> Result<SpectralInfo> {
    let eigenvalues = eigenvalues(a)?;
    let all_real_eig = eigenvalues.iter().all(is_real_eig);
    let omega = if all_real_eig {
        0.0
    } else {
        let hi = eigenvalues.iter().map(|l| l.im).fold(f64::NEG_INFINITY, f64::max);
        let lo = eigenvalues.iter().map(|l| l.im).fold(f64::INFINITY, f64::min);
        hi - lo
    };
    Ok(SpectralInfo {
        spec_norm: spectral_norm(a),
        eigenvalues,
        all_real_eig,
        omega,
    })
}

/// Stacks `C, CA, …, CA^{k-1}`.
pub fn observability_matrix(a: &Mat, c: &Mat, k: usize) -> Mat {
    let p = c.nrows();
    let n = a.nrows();
    let mut out = Mat::zeros(p * k, n);
    let mut blk = c.clone();
    for i in 0..k {
        out.view_mut((i * p, 0), (p, n)).copy_from(&blk);
        blk = &blk * a;
    }
    out
}

/// Smallest `η` with `rank col(C, CA, …, CA^{η-1}) = n`.
pub fn observability_index(a: &Mat, c: &Mat) -> Result<usize> {
    require_square(a, "A")?;
    if c.ncols() != a.nrows() {
        return Err(Error::Dimension(format!(
            "C has {} columns, A is {}x{}",
            c.ncols(),
            a.nrows(),
            a.ncols()
        )));
    }
    let n = a.nrows();
    let mut last = 0;
    for k in 1..=n {
        last = rank(&observability_matrix(a, c, k));
        if last == n {
            return Ok(k);
        }
    }
    Err(Error::Unobservable { rank: last, n })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Mat {
        mat_from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn a5() -> Mat {
        m(&[&[1.0, 1.0], &[0.0, 0.5]])
    }

    fn series_exp(a: &Mat, t: f64, terms: usize) -> Mat {
        let n = a.nrows();
        let at = a * t;
        let mut term = Mat::identity(n, n);
        let mut sum = term.clone();
        for k in 1..terms {
            term = &term * &at / k as f64;
            sum += &term;
        }
        sum
    }

    fn simpson(a: &Mat, l: &Mat, lo: f64, hi: f64, panels: usize) -> Mat {
        let h = (hi - lo) / panels as f64;
        let f = |s: f64| series_exp(&(-a), s, 40) * l;
        let mut acc = f(lo) + f(hi);
        for i in 1..panels {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += f(lo + i as f64 * h) * w;
        }
        acc * (h / 3.0)
    }

    #[test]
    fn rejects_non_finite() {
        let err = mat_from_rows(&[vec![1.0, f64::NAN]]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { row: 0, col: 1 }));
        assert!(mat_from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let e = mat_exp(&Mat::zeros(2, 2), 5.0).unwrap();
        assert_eq!(e, Mat::identity(2, 2));
    }

    #[test]
    fn exp_diagonal() {
        let e = mat_exp(&m(&[&[1.0, 0.0], &[0.0, 0.5]]), 1.0).unwrap();
        assert!((e[(0, 0)] - 1f64.exp()).abs() < 1e-14 * 3.0);
        assert!((e[(1, 1)] - 0.5f64.exp()).abs() < 1e-14 * 2.0);
        assert_eq!(e[(0, 1)], 0.0);
    }

    #[test]
    fn exp_matches_series() {
        let a = a5();
        let e = mat_exp(&a, 0.3).unwrap();
        let s = series_exp(&a, 0.3, 40);
        assert!((&e - &s).amax() <= 1e-12 * s.amax());
    }

    #[test]
    fn exp_rejects_non_square() {
        assert!(mat_exp(&Mat::zeros(2, 3), 1.0).is_err());
    }

    #[test]
    fn exp_semigroup() {
        let a = m(&[&[0.3, -2.0, 0.1], &[1.0, -0.4, 0.0], &[0.2, 0.5, -1.0]]);
        for &(t1, t2) in &[(0.1, 0.7), (1.3, 2.2), (-0.5, 3.0)] {
            let lhs = mat_exp(&a, t1).unwrap() * mat_exp(&a, t2).unwrap();
            let rhs = mat_exp(&a, t1 + t2).unwrap();
            assert!((&lhs - &rhs).amax() <= 1e-9 * rhs.amax().max(1.0));
        }
    }

    #[test]
    fn exp_integral_constant_integrand() {
        let l = m(&[&[2.0], &[-1.0]]);
        let r = exp_integral(&Mat::zeros(2, 2), &l, 1.0, 3.0).unwrap();
        assert!((&r - &l * 2.0).amax() < 1e-14);
    }

    #[test]
    fn exp_integral_empty_interval() {
        let r = exp_integral(&a5(), &m(&[&[4.0], &[3.0]]), 0.7, 0.7).unwrap();
        assert_eq!(r, Mat::zeros(2, 1));
        assert!(exp_integral(&a5(), &m(&[&[4.0], &[3.0]]), 1.0, 0.5).is_err());
    }

    #[test]
    fn exp_integral_matches_simpson() {
        let l = m(&[&[4.0], &[3.0]]);
        let r = exp_integral(&a5(), &l, 0.0, 0.2).unwrap();
        let s = simpson(&a5(), &l, 0.0, 0.2, 10_000);
        assert!((&r - &s).amax() <= 1e-10, "{r} vs {s}");
        let r = exp_integral(&a5(), &l, 0.4, 1.1).unwrap();
        let s = simpson(&a5(), &l, 0.4, 1.1, 10_000);
        assert!((&r - &s).amax() <= 1e-10);
    }

    #[test]
    fn exp_integral_derivative_in_upper_limit() {
        let a = a5();
        let l = m(&[&[4.0], &[3.0]]);
        let h = 1e-6;
        for &b in &[0.3, 1.0, 2.5] {
            let fd = (exp_integral(&a, &l, 0.1, b + h).unwrap()
                - exp_integral(&a, &l, 0.1, b - h).unwrap())
                / (2.0 * h);
            let exact = mat_exp(&(-&a), b).unwrap() * &l;
            assert!((&fd - &exact).amax() <= 1e-5);
        }
    }

    #[test]
    fn lyapunov_scalar_multiple_of_identity() {
        let p = solve_lyapunov(&(Mat::identity(2, 2) * -0.5), &Mat::identity(2, 2)).unwrap();
        assert!((&p - Mat::identity(2, 2)).amax() < 1e-14);
    }

    #[test]
    fn lyapunov_observer_pair_from_example() {
        let a = a5();
        let l = m(&[&[4.0], &[3.0]]);
        let c = m(&[&[1.0, 0.0]]);
        let q = m(&[&[1.0, 0.5], &[0.5, 1.0]]);
        let mo = &a - &l * &c;
        let p = solve_lyapunov(&mo, &q).unwrap();
        let expected = m(&[&[1.63, -1.47], &[-1.47, 1.93]]);
        assert!((&p - &expected).amax() <= 0.01, "{p}");
        let res = mo.transpose() * &p + &p * &mo + &q;
        assert!(spectral_norm(&res) <= 1e-10 * spectral_norm(&q));
    }

    #[test]
    fn lyapunov_controller_pair_from_example() {
        let a = a5();
        let b = m(&[&[0.0], &[1.0]]);
        let k = m(&[&[-6.0, -4.5]]);
        let q = m(&[&[1.0, 0.5], &[0.5, 1.0]]);
        let mc = &a + &b * &k;
        let p = solve_lyapunov(&mc, &q).unwrap();
        let res = mc.transpose() * &p + &p * &mc + &q;
        assert!(spectral_norm(&res) <= 1e-10 * spectral_norm(&q));
        let hand = m(&[&[2.5, 0.5], &[0.5, 0.25]]);
        assert!((&p - &hand).amax() < 1e-12, "{p}");
        assert_eq!(p, p.transpose());
        assert!(p.clone().cholesky().is_some());
    }

    #[test]
    fn lyapunov_rejects_unstable_and_non_spd() {
        let err = solve_lyapunov(&a5(), &Mat::identity(2, 2)).unwrap_err();
        match err {
            Error::NotHurwitz(s) => assert!(s.contains("1.0")),
            e => panic!("unexpected {e}"),
        }
        let q = m(&[&[1.0, 0.0], &[0.0, -1.0]]);
        assert!(matches!(
            solve_lyapunov(&(Mat::identity(2, 2) * -1.0), &q),
            Err(Error::NotSpd(_))
        ));
        // marginal
        let osc = m(&[&[0.0, -1.0], &[1.0, 0.0]]);
        assert!(solve_lyapunov(&osc, &Mat::identity(2, 2)).is_err());
    }

    #[test]
    fn pinv_duplicated_identity() {
        let n = m(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 0.0], &[0.0, 1.0]]);
        let p = left_pinv(&n).unwrap();
        let expected = m(&[&[0.5, 0.0, 0.5, 0.0], &[0.0, 0.5, 0.0, 0.5]]);
        assert!((&p - &expected).amax() < 1e-14);
        let p = left_pinv(&m(&[&[1.0], &[0.0]])).unwrap();
        assert!((&p - m(&[&[1.0, 0.0]])).amax() < 1e-15);
    }

    #[test]
    fn pinv_random_tall_and_square() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        for _ in 0..20 {
            let n = Mat::from_fn(6, 2, |_, _| rng.gen_range(-1.0..1.0));
            let p = left_pinv(&n).unwrap();
            assert!((&p * &n - Mat::identity(2, 2)).amax() <= 1e-10);
            let sq = Mat::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0));
            let inv = sq.clone().try_inverse().unwrap();
            assert!((left_pinv(&sq).unwrap() - inv).amax() <= 1e-9);
        }
    }

    #[test]
    fn pinv_rank_deficient_reports_singular_value() {
        let n = m(&[&[1.0, 2.0], &[2.0, 4.0], &[3.0, 6.0]]);
        match left_pinv(&n) {
            Err(Error::RankDeficient { smallest_sv }) => assert!(smallest_sv < 1e-12),
            r => panic!("unexpected {r:?}"),
        }
    }

    #[test]
    fn spectral_info_cases() {
        let s = spectral_info(&m(&[&[1.0, 0.0], &[0.0, 0.5]])).unwrap();
        assert!(s.all_real_eig);
        assert_eq!(s.omega, 0.0);
        assert!((s.spec_norm - 1.0).abs() < 1e-14);

        let s = spectral_info(&m(&[&[0.0, -1.0], &[1.0, 0.0]])).unwrap();
        assert!(!s.all_real_eig);
        assert!((s.omega - 2.0).abs() < 1e-9);
        for l in &s.eigenvalues {
            assert!(l.re.abs() < 1e-9 && (l.im.abs() - 1.0).abs() < 1e-9);
        }

        assert!(spectral_info(&a5()).unwrap().all_real_eig);
    }

    #[test]
    fn observability_indices() {
        let eye = Mat::identity(3, 3);
        let a = m(&[&[0.3, 1.0, 0.0], &[0.0, 0.1, 2.0], &[1.0, 0.0, 0.0]]);
        assert_eq!(observability_index(&a, &eye).unwrap(), 1);
        assert_eq!(observability_index(&a5(), &m(&[&[1.0, 0.0]])).unwrap(), 2);
        let shift = m(&[&[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0], &[0.0, 0.0, 0.0]]);
        assert_eq!(observability_index(&shift, &m(&[&[1.0, 0.0, 0.0]])).unwrap(), 3);
    }

    #[test]
    fn unobservable_pair_reports_rank() {
        let a = m(&[&[1.0, 0.0], &[0.0, 2.0]]);
        match observability_index(&a, &m(&[&[1.0, 0.0]])) {
            Err(Error::Unobservable { rank: 1, n: 2 }) => {}
            r => panic!("unexpected {r:?}"),
        }
    }
}
