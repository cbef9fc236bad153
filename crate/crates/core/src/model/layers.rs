//! Frame-major building blocks with hand-written gradients. Activations are
//! `frames x features`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

pub const LN_EPS: f64 = 1e-5;

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub fn silu(z: &Array2<f64>) -> Array2<f64> {
    z.mapv(|v| v * sigmoid(v))
}

/// `dy * silu'(z)`.
pub fn silu_backward(z: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut out = dy.clone();
    Zip::from(&mut out).and(z).for_each(|d, &z| {
        let s = sigmoid(z);
        *d *= s * (1.0 + z * (1.0 - s));
    });
    out
}

/// `x W + b`.
pub fn linear(x: &Array2<f64>, w: ArrayView2<f64>, b: Option<ArrayView1<f64>>) -> Array2<f64> {
    let mut y = x.dot(&w);
    if let Some(b) = b {
        y += &b;
    }
    y
}

pub struct LinearGrads {
    pub dx: Array2<f64>,
    pub dw: Array2<f64>,
    pub db: Array1<f64>,
}

pub fn linear_backward(x: &Array2<f64>, w: ArrayView2<f64>, dy: &Array2<f64>) -> LinearGrads {
    LinearGrads {
        dx: dy.dot(&w.t()),
        dw: x.t().dot(dy),
        db: dy.sum_axis(Axis(0)),
    }
}

/// Per-frame normalization without affine parameters. Returns the
/// normalized rows and the reciprocal standard deviation per row.
pub fn layer_norm(x: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
    let n = x.ncols() as f64;
    let mut y = x.clone();
    let mut inv = Array1::zeros(x.nrows());
    for (mut row, r) in y.outer_iter_mut().zip(inv.iter_mut()) {
        let mean = row.sum() / n;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / n;
        *r = 1.0 / (var + LN_EPS).sqrt();
        let s = *r;
        row.mapv_inplace(|v| v * s);
    }
    (y, inv)
}

pub fn layer_norm_backward(y: &Array2<f64>, inv_std: &Array1<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let n = y.ncols() as f64;
    let mut dx = dy.clone();
    for ((mut d, yr), &r) in dx.outer_iter_mut().zip(y.outer_iter()).zip(inv_std) {
        let mean_d = d.sum() / n;
        let mean_dy = d.iter().zip(yr.iter()).map(|(a, b)| a * b).sum::<f64>() / n;
        Zip::from(&mut d).and(&yr).for_each(|d, &y| *d = r * (*d - mean_d - y * mean_dy));
    }
    dx
}

/// Depthwise temporal convolution, zero padded, centered kernel.
/// `w` is `channels x kernel`.
pub fn depthwise_conv(u: &Array2<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let (frames, channels) = u.dim();
    let k = w.ncols();
    let pad = k / 2;
    let mut v = Array2::zeros((frames, channels));
    for t in 0..frames {
        let mut row = v.row_mut(t);
        row.assign(&b);
        for j in 0..k {
            let src = t as isize + j as isize - pad as isize;
            if src < 0 || src >= frames as isize {
                continue;
            }
            let ur = u.row(src as usize);
            for c in 0..channels {
                row[c] += w[[c, j]] * ur[c];
            }
        }
    }
    v
}

pub struct ConvGrads {
    pub du: Array2<f64>,
    pub dw: Array2<f64>,
    pub db: Array1<f64>,
}

pub fn depthwise_conv_backward(u: &Array2<f64>, w: ArrayView2<f64>, dv: &Array2<f64>) -> ConvGrads {
    let (frames, channels) = u.dim();
    let k = w.ncols();
    let pad = k / 2;
    let mut du = Array2::zeros((frames, channels));
    let mut dw = Array2::zeros((channels, k));
    for t in 0..frames {
        let dvr = dv.row(t);
        for j in 0..k {
            let src = t as isize + j as isize - pad as isize;
            if src < 0 || src >= frames as isize {
                continue;
            }
            let s = src as usize;
            for c in 0..channels {
                dw[[c, j]] += dvr[c] * u[[s, c]];
                du[[s, c]] += dvr[c] * w[[c, j]];
            }
        }
    }
    ConvGrads {
        du,
        dw,
        db: dv.sum_axis(Axis(0)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(r: &mut rng::Rng, shape: (usize, usize)) -> Array2<f64> {
        Array2::from_shape_simple_fn(shape, || StandardNormal.sample(r))
    }

    /// Central difference of `sum(f(x) * probe)` against the analytic input
    /// gradient.
    fn check(f: impl Fn(&Array2<f64>) -> Array2<f64>, x: &Array2<f64>, probe: &Array2<f64>, analytic: &Array2<f64>) {
        let eps = 1e-5;
        for idx in 0..x.len() {
            let mut hi = x.clone();
            let mut lo = x.clone();
            hi.as_slice_mut().unwrap()[idx] += eps;
            lo.as_slice_mut().unwrap()[idx] -= eps;
            let fd = ((&f(&hi) * probe).sum() - (&f(&lo) * probe).sum()) / (2.0 * eps);
            let a = analytic.as_slice().unwrap()[idx];
            assert!((fd - a).abs() < 1e-6 * (1.0 + a.abs()), "{idx}: {fd} vs {a}");
        }
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let mut r = rng::from_seed(1);
        let x = randn(&mut r, (4, 6)) * 3.0 + 2.0;
        let (y, _) = layer_norm(&x);
        for row in y.outer_iter() {
            assert!(row.sum().abs() < 1e-12);
            let var = row.mapv(|v| v * v).sum() / 6.0;
            assert!((var - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut r = rng::from_seed(2);
        let x = randn(&mut r, (7, 5));
        let probe = randn(&mut r, (7, 5));

        let (y, inv) = layer_norm(&x);
        check(|x| layer_norm(x).0, &x, &probe, &layer_norm_backward(&y, &inv, &probe));
        check(silu, &x, &probe, &silu_backward(&x, &probe));

        let w = randn(&mut r, (5, 3));
        let b = randn(&mut r, (1, 5)).row(0).to_owned();
        let g = depthwise_conv_backward(&x, w.view(), &probe);
        check(|x| depthwise_conv(x, w.view(), b.view()), &x, &probe, &g.du);
        check(
            |w| depthwise_conv(&x, w.view(), b.view()),
            &w,
            &probe,
            &g.dw,
        );

        let lw = randn(&mut r, (5, 4));
        let lp = randn(&mut r, (7, 4));
        let lg = linear_backward(&x, lw.view(), &lp);
        check(|x| linear(x, lw.view(), None), &x, &lp, &lg.dx);
        check(|w| linear(&x, w.view(), None), &lw, &lp, &lg.dw);
    }

    #[test]
    fn conv_with_centered_unit_kernel_is_identity() {
        let mut r = rng::from_seed(3);
        let u = randn(&mut r, (6, 3));
        let mut w = Array2::zeros((3, 5));
        w.column_mut(2).fill(1.0);
        let v = depthwise_conv(&u, w.view(), Array1::zeros(3).view());
        assert_eq!(v, u);
    }
}
