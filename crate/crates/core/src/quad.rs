//! Quadrature helpers: Gauss–Legendre panels and composite Simpson tail
//! integrals on uniform grids.

const GL_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683_1,
    0.0,
    0.538_469_310_105_683_1,
    0.906_179_845_938_664,
];
const GL_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189_08,
    0.478_628_670_499_366_47,
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_47,
    0.236_926_885_056_189_08,
];

/// Five-point Gauss–Legendre rule on `[a, b]`; exact for polynomials of degree 9.
pub fn gauss_legendre<F: FnMut(f64) -> f64>(a: f64, b: f64, mut f: F) -> f64 {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    GL_NODES
        .iter()
        .zip(GL_WEIGHTS.iter())
        .map(|(&x, &w)| w * f(mid + half * x))
        .sum::<f64>()
        * half
}

/// Composite Gauss–Legendre over `panels` equal panels of `[a, b]`.
pub fn gauss_legendre_composite<F: FnMut(f64) -> f64>(a: f64, b: f64, panels: usize, mut f: F) -> f64 {
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|i| {
            let lo = a + h * i as f64;
            gauss_legendre(lo, lo + h, &mut f)
        })
        .sum()
}

/// Tail integrals `I_i = ∫_{t_i}^{t_N} f` on a uniform grid with spacing `h`
/// from samples `f_i`. Even tails use composite Simpson; odd tails add a
/// three-point quadratic rule for the first panel.
pub fn simpson_tail(values: &[f64], h: f64) -> Vec<f64> {
    let n = values.len();
    let mut out = vec![0.0; n];
    if n < 2 {
        return out;
    }
    let last = n - 1;
    let mut i = last as isize - 2;
    while i >= 0 {
        let k = i as usize;
        out[k] = out[k + 2] + h / 3.0 * (values[k] + 4.0 * values[k + 1] + values[k + 2]);
        i -= 2;
    }
    let odd_start = if last % 2 == 1 { 0 } else { 1 };
    let mut k = odd_start;
    while k < last {
        let single = if k + 2 <= last {
            h / 12.0 * (5.0 * values[k] + 8.0 * values[k + 1] - values[k + 2])
        } else if k == 0 {
            0.5 * h * (values[0] + values[1])
        } else {
            h / 12.0 * (-values[k - 1] + 8.0 * values[k] + 5.0 * values[k + 1])
        };
        out[k] = out[k + 1] + single;
        k += 2;
    }
    out
}

/// Composite trapezoid integral of samples on an arbitrary grid.
pub fn trapezoid(t: &[f64], values: &[f64]) -> f64 {
    t.windows(2)
        .zip(values.windows(2))
        .map(|(tw, vw)| 0.5 * (tw[1] - tw[0]) * (vw[0] + vw[1]))
        .sum()
}

/// Running trapezoid integrals `∫_{t_0}^{t_i}` on an arbitrary grid.
pub fn cumulative_trapezoid(t: &[f64], values: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; t.len()];
    for i in 1..t.len() {
        out[i] = out[i - 1] + 0.5 * (t[i] - t[i - 1]) * (values[i] + values[i - 1]);
    }
    out
}
