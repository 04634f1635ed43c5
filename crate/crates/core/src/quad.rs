//! Adaptive Gauss–Kronrod (7/15) quadrature.
//!
//! Used to evaluate stage integrals for fading laws without closed forms and
//! as an independent check of the closed forms that do exist.

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];

// Gauss weights for the odd-indexed Kronrod nodes (1, 3, 5, 7).
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_DEPTH: u32 = 60;

/// Tail span, in units of the distribution scale, for semi-infinite integrals.
pub const TAIL_SPAN: f64 = 40.0;

fn kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kron = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for (j, (&x, &w)) in XGK.iter().zip(WGK.iter()).take(7).enumerate() {
        let dx = half * x;
        let pair = f(center - dx) + f(center + dx);
        kron += w * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kron * half, ((kron - gauss) * half).abs())
}

/// Integrates `f` over `[a, b]` to an absolute tolerance.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let mut total = 0.0;
    let mut stack = vec![(a, b, abs_tol, 0u32)];
    while let Some((lo, hi, tol, depth)) = stack.pop() {
        let (value, err) = kronrod(&f, lo, hi);
        if err <= tol || depth >= MAX_DEPTH || (hi - lo).abs() <= f64::EPSILON * lo.abs().max(1.0) {
            total += value;
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((lo, mid, 0.5 * tol, depth + 1));
            stack.push((mid, hi, 0.5 * tol, depth + 1));
        }
    }
    total
}

/// Integrates an exponentially decaying integrand over `[a, inf)` by
/// truncating at `a + TAIL_SPAN * scale`.
pub fn integrate_to_infinity<F: Fn(f64) -> f64>(f: F, a: f64, scale: f64, abs_tol: f64) -> f64 {
    integrate(f, a, a + TAIL_SPAN * scale, abs_tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomials_are_exact() {
        let v = integrate(|x| x.powi(5) - 3.0 * x * x, -1.0, 2.0, 1e-14);
        let exact = (64.0 - 1.0) / 6.0 - (8.0 + 1.0);
        assert!((v - exact).abs() < 1e-12);
    }

    #[test]
    fn log_singularity_converges() {
        // int_0^1 ln x dx = -1
        let v = integrate(|x: f64| if x > 0.0 { x.ln() } else { 0.0 }, 0.0, 1.0, 1e-12);
        assert!((v + 1.0).abs() < 1e-10, "{v}");
    }

    #[test]
    fn exponential_tail() {
        let v = integrate_to_infinity(|x: f64| (-x / 2.0).exp() / 2.0, 1.0, 2.0, 1e-13);
        assert!((v - (-0.5f64).exp()).abs() < 1e-12);
    }
}
