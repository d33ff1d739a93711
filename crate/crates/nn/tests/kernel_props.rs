//! Convolution kernels against direct loops, and the im2col/col2im adjoint.

use proptest::prelude::*;
use taskmask_nn::exec;
use taskmask_nn::kernels::{col2im, conv_forward, depthwise_forward, im2col, ConvGeom};

fn values(n: usize, seed: u64) -> Vec<f64> {
    (0..n).map(|i| ((i as f64 + 1.0) * 0.37 + seed as f64 * 0.91).sin()).collect()
}

/// Zero-padded input sample, `None` outside the frame.
fn at(x: &[f64], h: usize, w: usize, c: usize, y: isize, xx: isize) -> f64 {
    if y < 0 || xx < 0 || y >= h as isize || xx >= w as isize {
        0.0
    } else {
        x[(c * h + y as usize) * w + xx as usize]
    }
}

fn geom() -> impl Strategy<Value = ConvGeom> {
    (prop::sample::select(vec![1usize, 3, 5]), 1usize..=2, any::<bool>()).prop_map(|(kernel, stride, padded)| ConvGeom {
        kernel,
        stride,
        pad: if padded { kernel / 2 } else { 0 },
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dense_conv_matches_direct_loop(cin in 1usize..4, cout in 1usize..4, h in 5usize..10, w in 5usize..10, g in geom(), seed in 0u64..100) {
        let x = values(cin * h * w, seed);
        let wt = values(cout * cin * g.kernel * g.kernel, seed + 1);
        let b = values(cout, seed + 2);
        let (y, ho, wo) = conv_forward(&x, cin, h, w, &wt, &b, cout, g);
        prop_assert_eq!((ho, wo), g.out_size(h, w));
        let k = g.kernel;
        for co in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut s = b[co];
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                s += wt[((co * cin + ci) * k + ky) * k + kx] * at(&x, h, w, ci, iy, ix);
                            }
                        }
                    }
                    prop_assert!((y[(co * ho + oy) * wo + ox] - s).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn depthwise_conv_matches_direct_loop(c in 1usize..4, h in 5usize..10, w in 5usize..10, g in geom(), seed in 0u64..100) {
        let x = values(c * h * w, seed);
        let wt = values(c * g.kernel * g.kernel, seed + 1);
        let b = values(c, seed + 2);
        let (y, ho, wo) = depthwise_forward(&x, c, h, w, &wt, &b, g);
        let k = g.kernel;
        for ci in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut s = b[ci];
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            s += wt[(ci * k + ky) * k + kx] * at(&x, h, w, ci, iy, ix);
                        }
                    }
                    prop_assert!((y[(ci * ho + oy) * wo + ox] - s).abs() < 1e-12);
                }
            }
        }
    }

    /// `<im2col(x), v> == <x, col2im(v)>`, which is what the backward pass relies on.
    #[test]
    fn col2im_is_the_adjoint_of_im2col(c in 1usize..4, h in 4usize..9, w in 4usize..9, g in geom(), seed in 0u64..100) {
        let (ho, wo) = g.out_size(h, w);
        let n = c * g.kernel * g.kernel * ho * wo;
        let x = values(c * h * w, seed);
        let v = values(n, seed + 7);
        let mut col = vec![0.0; n];
        im2col(&x, c, h, w, g, &mut col);
        let mut gx = vec![0.0; c * h * w];
        col2im(&v, c, h, w, g, &mut gx);
        let lhs: f64 = col.iter().zip(&v).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&gx).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() < 1e-9 * (1.0 + lhs.abs()));
    }

    #[test]
    fn parallel_and_sequential_maps_agree(items in prop::collection::vec(any::<u32>(), 0..200)) {
        let f = |v: &u32| v.wrapping_mul(2_654_435_761).rotate_left(7);
        let par = exec::par_map(&items, f);
        exec::set_sequential(true);
        let seq = exec::par_map(&items, f);
        exec::set_sequential(false);
        prop_assert_eq!(par, seq);
    }
}
