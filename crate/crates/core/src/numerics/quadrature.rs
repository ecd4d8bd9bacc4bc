//! Globally adaptive 21-point Gauss-Kronrod quadrature.
//!
//! Finite segments are integrated directly. A segment ending at `+inf` is
//! mapped onto `t in [0, 1)` via `x = a + t / (1 - t)`. Breakpoints split the
//! range into segments before any adaptive work starts, so kinks and jumps
//! at known locations never sit inside a Kronrod panel.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::NumericsError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            rel_tol: 1e-9,
            max_subdivisions: 2000,
        }
    }
}

impl QuadratureSpec {
    pub fn new(abs_tol: f64, rel_tol: f64, max_subdivisions: usize) -> Result<Self, NumericsError> {
        let spec = Self {
            abs_tol,
            rel_tol,
            max_subdivisions,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), NumericsError> {
        if !(self.abs_tol > 0.0) || !(self.rel_tol > 0.0) {
            return Err(NumericsError::InvalidSpec("tolerances must be strictly positive"));
        }
        if self.max_subdivisions == 0 {
            return Err(NumericsError::InvalidSpec("max_subdivisions must be at least 1"));
        }
        Ok(())
    }
}

// Kronrod abscissae (descending); odd indices are the 10-point Gauss nodes.
#[allow(clippy::excessive_precision)]
const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];

#[allow(clippy::excessive_precision)]
const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_208_463_316_850,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

#[allow(clippy::excessive_precision)]
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

#[derive(Debug, Clone, Copy)]
enum Kind {
    Finite,
    /// `[origin, inf)` mapped onto `t in [0, 1)`.
    Tail { origin: f64 },
}

#[derive(Debug, Clone, Copy)]
struct Panel {
    kind: Kind,
    lo: f64,
    hi: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error
            .total_cmp(&other.error)
            .then_with(|| other.lo.total_cmp(&self.lo))
    }
}

fn eval<F: Fn(f64) -> f64>(f: &F, kind: Kind, v: f64) -> Result<f64, NumericsError> {
    let y = match kind {
        Kind::Finite => f(v),
        Kind::Tail { origin } => {
            if v >= 1.0 {
                return Ok(0.0);
            }
            let s = 1.0 - v;
            let x = origin + v / s;
            let fx = f(x);
            if fx == 0.0 {
                0.0
            } else {
                fx / (s * s)
            }
        }
    };
    if y.is_finite() {
        Ok(y)
    } else {
        let x = match kind {
            Kind::Finite => v,
            Kind::Tail { origin } => origin + v / (1.0 - v),
        };
        Err(NumericsError::NonFinite { x })
    }
}

#[allow(clippy::needless_range_loop)]
fn gauss_kronrod<F: Fn(f64) -> f64>(
    f: &F,
    kind: Kind,
    lo: f64,
    hi: f64,
) -> Result<Panel, NumericsError> {
    let centre = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let abs_half = half.abs();

    let fc = eval(f, kind, centre)?;
    let mut res_gauss = 0.0;
    let mut res_kronrod = WGK[10] * fc;
    let mut res_abs = res_kronrod.abs();
    let mut fv1 = [0.0; 10];
    let mut fv2 = [0.0; 10];

    for j in 0..5 {
        let jtw = 2 * j + 1;
        let dx = half * XGK[jtw];
        let f1 = eval(f, kind, centre - dx)?;
        let f2 = eval(f, kind, centre + dx)?;
        fv1[jtw] = f1;
        fv2[jtw] = f2;
        res_gauss += WG[j] * (f1 + f2);
        res_kronrod += WGK[jtw] * (f1 + f2);
        res_abs += WGK[jtw] * (f1.abs() + f2.abs());
    }
    for j in 0..5 {
        let jtwm1 = 2 * j;
        let dx = half * XGK[jtwm1];
        let f1 = eval(f, kind, centre - dx)?;
        let f2 = eval(f, kind, centre + dx)?;
        fv1[jtwm1] = f1;
        fv2[jtwm1] = f2;
        res_kronrod += WGK[jtwm1] * (f1 + f2);
        res_abs += WGK[jtwm1] * (f1.abs() + f2.abs());
    }

    let mean = 0.5 * res_kronrod;
    let mut res_asc = WGK[10] * (fc - mean).abs();
    for j in 0..10 {
        res_asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }

    let value = res_kronrod * half;
    res_abs *= abs_half;
    res_asc *= abs_half;
    let mut error = ((res_kronrod - res_gauss) * half).abs();
    if res_asc != 0.0 && error != 0.0 {
        error = res_asc * (200.0 * error / res_asc).powf(1.5).min(1.0);
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        error = error.max(50.0 * f64::EPSILON * res_abs);
    }
    Ok(Panel {
        kind,
        lo,
        hi,
        value,
        error,
    })
}

/// Integrates `f` over `[a, b]`, where `b` may be `+inf`.
pub fn integrate<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    spec: &QuadratureSpec,
) -> Result<f64, NumericsError> {
    integrate_with_breakpoints(f, a, b, &[], spec)
}

/// Integrates `f` over `[a, b]` with the range pre-split at `breakpoints`.
///
/// Breakpoints outside `(a, b)` or non-finite are ignored. An empty range
/// (`a == b`) integrates to zero.
pub fn integrate_with_breakpoints<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    breakpoints: &[f64],
    spec: &QuadratureSpec,
) -> Result<f64, NumericsError> {
    spec.validate()?;
    if a.is_nan() || b.is_nan() || a == f64::NEG_INFINITY || a > b {
        return Err(NumericsError::InvalidInterval { a, b });
    }
    if a == b {
        return Ok(0.0);
    }

    let mut cuts: Vec<f64> = breakpoints
        .iter()
        .copied()
        .filter(|&x| x.is_finite() && x > a && x < b)
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let mut edges = Vec::with_capacity(cuts.len() + 2);
    edges.push(a);
    edges.extend(cuts);
    edges.push(b);

    let mut heap = BinaryHeap::new();
    for w in edges.windows(2) {
        let panel = if w[1] == f64::INFINITY {
            gauss_kronrod(&f, Kind::Tail { origin: w[0] }, 0.0, 1.0)?
        } else {
            gauss_kronrod(&f, Kind::Finite, w[0], w[1])?
        };
        heap.push(panel);
    }

    let mut subdivisions = 0usize;
    // Panels too narrow to bisect further; their error stays in the total.
    let mut frozen: Vec<Panel> = Vec::new();
    loop {
        let (value, error) = totals(heap.iter().chain(frozen.iter()));
        if error <= spec.abs_tol.max(spec.rel_tol * value.abs()) {
            return Ok(value);
        }
        let worst = match heap.pop() {
            Some(p) => p,
            None => {
                return Err(NumericsError::QuadratureFailure {
                    estimate: value,
                    error_estimate: error,
                    subdivisions,
                })
            }
        };
        let mid = 0.5 * (worst.lo + worst.hi);
        if mid <= worst.lo || mid >= worst.hi {
            frozen.push(worst);
            continue;
        }
        if subdivisions >= spec.max_subdivisions {
            heap.push(worst);
            let (value, error) = totals(heap.iter().chain(frozen.iter()));
            return Err(NumericsError::QuadratureFailure {
                estimate: value,
                error_estimate: error,
                subdivisions,
            });
        }
        subdivisions += 1;
        heap.push(gauss_kronrod(&f, worst.kind, worst.lo, mid)?);
        heap.push(gauss_kronrod(&f, worst.kind, mid, worst.hi)?);
    }
}

// Summed in a fixed order so the result does not depend on heap layout.
fn totals<'a>(panels: impl Iterator<Item = &'a Panel>) -> (f64, f64) {
    let mut all: Vec<&Panel> = panels.collect();
    all.sort_by(|p, q| {
        p.kind_rank()
            .cmp(&q.kind_rank())
            .then(p.lo.total_cmp(&q.lo))
    });
    let mut value = 0.0;
    let mut comp = 0.0;
    let mut error = 0.0;
    for p in all {
        let t = value + p.value;
        comp += if value.abs() >= p.value.abs() {
            (value - t) + p.value
        } else {
            (p.value - t) + value
        };
        value = t;
        error += p.error;
    }
    (value + comp, error)
}

impl Panel {
    fn kind_rank(&self) -> (u8, u64) {
        match self.kind {
            Kind::Finite => (0, 0),
            Kind::Tail { origin } => (1, origin.to_bits()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec() -> QuadratureSpec {
        QuadratureSpec::default()
    }

    #[test]
    fn kronrod_weights_are_exact_for_degree_31() {
        for d in (0..=30).step_by(2) {
            let mut sum = WGK[10] * if d == 0 { 1.0 } else { 0.0 };
            for j in 0..10 {
                sum += 2.0 * WGK[j] * XGK[j].powi(d);
            }
            assert!((sum - 2.0 / (d as f64 + 1.0)).abs() < 1e-14, "degree {d}");
        }
        let gauss: f64 = WG.iter().map(|w| 2.0 * w).sum();
        assert!((gauss - 2.0).abs() < 1e-14);
    }

    #[test]
    fn spec_examples() {
        let one = integrate(|_| 1.0, 0.0, 1.0, &spec()).unwrap();
        assert!((one - 1.0).abs() < 1e-12);
        let gamma1 = integrate(|x: f64| (-x).exp(), 0.0, f64::INFINITY, &spec()).unwrap();
        assert!((gamma1 - 1.0).abs() < 1e-9);
        let rational =
            integrate(|x| 1.0 / ((1.0 + x) * (1.0 + x)), 0.0, f64::INFINITY, &spec()).unwrap();
        assert!((rational - 1.0).abs() < 1e-9);
    }

    #[test]
    fn breakpoints_handle_jumps() {
        let step = |x: f64| if x < 0.3 { 1.0 } else { 2.0 };
        let v = integrate_with_breakpoints(step, 0.0, 1.0, &[0.3], &spec()).unwrap();
        assert!((v - 1.7).abs() < 1e-12);
        // without the breakpoint it still converges, just with more work
        let w = integrate(step, 0.0, 1.0, &spec()).unwrap();
        assert!((w - 1.7).abs() < 1e-9);
    }

    #[test]
    fn semi_infinite_with_breakpoints() {
        // E1(1) e = int_0^inf e^{-x}/(1+x) dx
        let v = integrate_with_breakpoints(
            |x: f64| (-x).exp() / (1.0 + x),
            0.0,
            f64::INFINITY,
            &[1.0, 5.0, f64::INFINITY, -3.0],
            &spec(),
        )
        .unwrap();
        assert!((v - 0.596_347_362_323_194_1).abs() < 1e-9);
    }

    #[test]
    fn empty_and_invalid_ranges() {
        assert_eq!(integrate(|x| x, 2.0, 2.0, &spec()).unwrap(), 0.0);
        assert!(matches!(
            integrate(|x| x, 2.0, 1.0, &spec()),
            Err(NumericsError::InvalidInterval { .. })
        ));
        assert!(QuadratureSpec::new(0.0, 1e-9, 10).is_err());
        assert!(QuadratureSpec::new(1e-10, 1e-9, 0).is_err());
    }

    #[test]
    fn failure_carries_partial_estimate() {
        let tight = QuadratureSpec::new(1e-300, 1e-300, 3).unwrap();
        match integrate(|x: f64| x.sqrt(), 0.0, 1.0, &tight) {
            Err(NumericsError::QuadratureFailure {
                estimate,
                subdivisions,
                ..
            }) => {
                assert_eq!(subdivisions, 3);
                assert!((estimate - 2.0 / 3.0).abs() < 1e-4);
            }
            other => panic!("expected failure, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_integrand_is_reported() {
        let r = integrate(|x: f64| 1.0 / (x - 0.5), 0.0, 1.0, &spec());
        assert!(r.is_err());
    }

    fn poly(c: &[f64], x: f64) -> f64 {
        c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
    }

    proptest! {
        #[test]
        fn linearity(
            c1 in proptest::collection::vec(-3.0f64..3.0, 1..6),
            c2 in proptest::collection::vec(-3.0f64..3.0, 1..6),
            alpha in -2.0f64..2.0,
            beta in -2.0f64..2.0,
            b in 0.5f64..3.0,
        ) {
            let s = spec();
            let f = |x: f64| poly(&c1, x);
            let g = |x: f64| poly(&c2, x);
            let lhs = integrate(|x| alpha * f(x) + beta * g(x), 0.0, b, &s).unwrap();
            let rhs = alpha * integrate(f, 0.0, b, &s).unwrap()
                + beta * integrate(g, 0.0, b, &s).unwrap();
            let tol = 3.0 * s.abs_tol.max(s.rel_tol * lhs.abs().max(rhs.abs()));
            prop_assert!((lhs - rhs).abs() <= tol, "{lhs} vs {rhs}");
        }

        #[test]
        fn interval_additivity(a in 0.0f64..2.0, w1 in 0.1f64..3.0, w2 in 0.1f64..3.0, k in 0.2f64..3.0) {
            let s = spec();
            let f = |x: f64| (-k * x).exp() * (1.0 + x.sin());
            let c = a + w1;
            let whole = integrate(f, a, f64::INFINITY, &s).unwrap();
            let left = integrate(f, a, c, &s).unwrap();
            let right = integrate(f, c, f64::INFINITY, &s).unwrap();
            let bounded = integrate(f, a, c + w2, &s).unwrap();
            let split = left + integrate(f, c, c + w2, &s).unwrap();
            prop_assert!((whole - left - right).abs() <= 3.0 * s.abs_tol.max(s.rel_tol * whole.abs()));
            prop_assert!((bounded - split).abs() <= 3.0 * s.abs_tol.max(s.rel_tol * bounded.abs()));
        }
    }
}
