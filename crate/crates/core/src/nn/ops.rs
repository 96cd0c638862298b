//! Shape-changing glue used by the neck: nearest-neighbour upsampling and
//! channel concatenation, with their adjoints.

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

pub fn upsample2x<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = x.dims4();
    let (oh, ow) = (h * 2, w * 2);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let src = x.data();
    let dst = out.data_mut();
    for p in 0..n * c {
        for y in 0..oh {
            let srow = &src[(p * h + y / 2) * w..(p * h + y / 2 + 1) * w];
            let drow = &mut dst[(p * oh + y) * ow..(p * oh + y + 1) * ow];
            for (x, d) in drow.iter_mut().enumerate() {
                *d = srow[x / 2];
            }
        }
    }
    out
}

pub fn upsample2x_backward<T: Scalar>(dy: &Tensor<T>) -> Tensor<T> {
    let (n, c, oh, ow) = dy.dims4();
    let (h, w) = (oh / 2, ow / 2);
    let mut dx = Tensor::zeros(&[n, c, h, w]);
    let src = dy.data();
    let dst = dx.data_mut();
    for p in 0..n * c {
        for y in 0..oh {
            for x in 0..ow {
                dst[(p * h + y / 2) * w + x / 2] += src[(p * oh + y) * ow + x];
            }
        }
    }
    dx
}

/// Concatenates two NCHW tensors along channels.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, ca, h, w) = a.dims4();
    let (nb, cb, hb, wb) = b.dims4();
    if (n, h, w) != (nb, hb, wb) {
        return Err(Error::shape(
            "concat",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let hw = h * w;
    let mut out = Vec::with_capacity(n * (ca + cb) * hw);
    for i in 0..n {
        out.extend_from_slice(&a.data()[i * ca * hw..(i + 1) * ca * hw]);
        out.extend_from_slice(&b.data()[i * cb * hw..(i + 1) * cb * hw]);
    }
    Tensor::from_vec(&[n, ca + cb, h, w], out)
}

pub fn split_channels<T: Scalar>(dy: &Tensor<T>, ca: usize) -> (Tensor<T>, Tensor<T>) {
    let (n, c, h, w) = dy.dims4();
    let cb = c - ca;
    let hw = h * w;
    let mut a = Vec::with_capacity(n * ca * hw);
    let mut b = Vec::with_capacity(n * cb * hw);
    for i in 0..n {
        let base = i * c * hw;
        a.extend_from_slice(&dy.data()[base..base + ca * hw]);
        b.extend_from_slice(&dy.data()[base + ca * hw..base + c * hw]);
    }
    (
        Tensor::from_vec(&[n, ca, h, w], a).expect("split a"),
        Tensor::from_vec(&[n, cb, h, w], b).expect("split b"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upsample_and_adjoint() {
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let y = upsample2x(&x);
        assert_eq!(
            y.data(),
            &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0]
        );
        // <up(x), g> == <x, up^T(g)>
        let g = Tensor::from_vec(&[1, 1, 4, 4], (0..16).map(|i| i as f64 * 0.5 - 3.0).collect()).unwrap();
        let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let gb = upsample2x_backward(&g);
        let rhs: f64 = x.data().iter().zip(gb.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn concat_split_round_trip() {
        let a = Tensor::from_vec(&[2, 1, 1, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec(&[2, 2, 1, 2], (10..18).map(|v| v as f32).collect()).unwrap();
        let c = concat_channels(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 3, 1, 2]);
        assert_eq!(&c.data()[..6], &[1.0, 2.0, 10.0, 11.0, 12.0, 13.0]);
        let (a2, b2) = split_channels(&c, 1);
        assert_eq!((a2, b2), (a, b));
        assert!(concat_channels(&Tensor::<f32>::zeros(&[1, 1, 2, 2]), &Tensor::zeros(&[1, 1, 3, 2])).is_err());
    }
}
