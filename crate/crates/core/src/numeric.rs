//! Small numerical kit: compensated summation, golden-section search and
//! bisection.

/// Inverse golden ratio, `(sqrt(5) - 1) / 2`.
const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &CompensatedSum) {
        self.add(other.sum);
        self.add(other.carry);
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

/// Golden-section minimisation of a unimodal `f` on `[lo, hi]`.
///
/// Stops when the bracket is narrower than `tol` and returns the best point
/// seen together with its value.
pub fn golden_section_min<F>(f: F, lo: f64, hi: f64, tol: f64) -> (f64, f64)
where
    F: Fn(f64) -> f64,
{
    let (mut a, mut b) = if lo <= hi { (lo, hi) } else { (hi, lo) };
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    // Each step shrinks the bracket by INV_PHI; 200 steps reach far below f64 resolution.
    for _ in 0..200 {
        if (b - a) <= tol {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let candidates = [(a, f(a)), (c, fc), (d, fd), (b, f(b))];
    candidates
        .into_iter()
        .fold((f64::NAN, f64::INFINITY), |best, (x, fx)| {
            if fx < best.1 || best.0.is_nan() {
                (x, fx)
            } else {
                best
            }
        })
}

/// Bisection for the sign change of `g` on `[lo, hi]`.
///
/// `g(lo)` and `g(hi)` are expected to have opposite signs (zero counts as
/// either). Runs a fixed number of halvings and returns the midpoint.
pub fn bisect<G>(g: G, lo: f64, hi: f64, iterations: usize) -> f64
where
    G: Fn(f64) -> f64,
{
    let (mut a, mut b) = (lo, hi);
    let ga = g(a);
    for _ in 0..iterations {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        let gm = g(mid);
        if gm == 0.0 {
            return mid;
        }
        if (gm > 0.0) == (ga > 0.0) {
            a = mid;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}
