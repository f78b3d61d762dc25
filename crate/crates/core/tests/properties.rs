//! Property tests of the module invariants.

use proptest::prelude::*;
use vimq_core::aux::{
    causal_conv, causal_conv_quantized, extract_cls, flip_sequence, im2col, insert_cls, normalize, residual_add, CausalConvConfig, NormKind,
    PatchEmbedConfig, QuantizedConv,
};
use vimq_core::linear::{linear_forward_reference, Activation, LinearEngine, QuantizedLinear, TileConfig, TileWalker};
use vimq_core::oracle::{self, StagedLinear};
use vimq_core::quant::{compute_smoothing, dequantize_weights, quantize_token, quantize_weights, ActQuant, ApotCodebook};
use vimq_core::ssm::{ssm_scan_oracle, state_project, SsmEngine, SsmParams};
use vimq_core::tensor::{pack_codes, unpack_weights, Container, Tensor};
use vimq_core::Mat;

fn mat(rows: usize, cols: usize) -> impl Strategy<Value = Mat> {
    prop::collection::vec(-4.0f32..4.0, rows * cols).prop_map(move |d| Mat::new(rows, cols, d).unwrap())
}

fn dims() -> impl Strategy<Value = (usize, usize)> {
    (1usize..40, 1usize..40)
}

fn tile() -> impl Strategy<Value = usize> {
    prop::sample::select(vec![16usize, 32, 64])
}

fn tensor() -> impl Strategy<Value = Tensor> {
    let shape = prop::collection::vec(1usize..5, 0..4);
    (shape, 0u8..5, any::<u64>()).prop_map(|(shape, kind, seed)| {
        let n: usize = shape.iter().product();
        let v = |k: usize| (seed.wrapping_mul(6364136223846793005).wrapping_add((k as u64).wrapping_mul(1442695040888963407)) >> 33) as u32;
        match kind {
            0 => Tensor::f32(&shape, (0..n).map(|k| f32::from_bits(v(k) & 0x7f7f_ffff)).collect()).unwrap(),
            1 => Tensor::i8(&shape, (0..n).map(|k| ((v(k) % 255) as i32 - 127) as i8).collect()).unwrap(),
            2 => Tensor::i32(&shape, (0..n).map(|k| v(k) as i32).collect()).unwrap(),
            3 => Tensor::u4_from_codes(&shape, &(0..n).map(|k| (v(k) % 16) as u8).collect::<Vec<_>>()).unwrap(),
            _ => Tensor::u8(&shape, (0..n).map(|k| v(k) as u8).collect()).unwrap(),
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn container_round_trip(ts in prop::collection::vec(tensor(), 0..5)) {
        let c = Container::from_entries(ts.into_iter().enumerate().map(|(k, t)| (format!("t{k}"), t)).collect()).unwrap();
        let back = Container::from_bytes(&c.to_bytes().unwrap()).unwrap();
        prop_assert_eq!(back, c);
    }

    #[test]
    fn pack_unpack_inverse((o, i) in (1usize..130, 1usize..130), t in tile(), seed in any::<u64>()) {
        let codes: Vec<u8> = (0..o * i).map(|k| ((seed >> (k % 60)) as u8 ^ k as u8) & 0xf).collect();
        let blob = pack_codes(&codes, o, i, t, 4).unwrap();
        prop_assert_eq!(unpack_weights(&blob), codes);
        prop_assert_eq!(blob.words.len(), (o.div_ceil(t) * t * i.div_ceil(t) * t).div_ceil(64));
    }

    #[test]
    fn blob_stream_follows_walker((o, i) in (1usize..100, 1usize..100), t in tile()) {
        let codes: Vec<u8> = (0..o * i).map(|k| (k % 16) as u8).collect();
        let blob = pack_codes(&codes, o, i, t, 4).unwrap();
        let w = TileWalker::new(t, o, i);
        let mut stream = blob.stream();
        for tc in w.tiles() {
            for (r, c) in w.elements(tc) {
                let got = stream.next().unwrap();
                let want = if r < o && c < i { codes[r * i + c] } else { 0 };
                prop_assert_eq!(got, want);
            }
        }
    }

    #[test]
    fn token_quant_bounds(x in prop::collection::vec(-1e3f32..1e3, 1..64)) {
        let tq = quantize_token(&x).unwrap();
        let s = tq.scale as f64;
        let amax = x.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        for (&v, &q) in x.iter().zip(&tq.q) {
            prop_assert!(q != i8::MIN);
            prop_assert!((v as f64 - q as f64 * s).abs() <= s / 2.0);
            if amax > 0.0 && v.abs() == amax {
                prop_assert_eq!(q.abs(), 127);
            }
        }
    }

    #[test]
    fn weight_quant_nearest_level(w in prop::collection::vec(-3.0f32..3.0, 1..200), block in 1usize..70) {
        let cb = ApotCodebook::w4();
        let qw = quantize_weights(&w, &[w.len()], block, &cb).unwrap();
        let deq = dequantize_weights(&qw, &cb).unwrap();
        for (k, (&v, &code)) in w.iter().zip(&qw.codes).enumerate() {
            let s = qw.scales[k / block];
            let blk = &w[(k / block) * block..((k / block + 1) * block).min(w.len())];
            let amax = blk.iter().fold(0.0f32, |m, v| m.max(v.abs()));
            prop_assert_eq!(s, if amax == 0.0 { 1.0 } else { amax });
            let (_, mag) = cb.decode(code);
            prop_assert!(oracle::is_nearest_level(v, s, mag, &cb));
            prop_assert!(deq[k].abs() <= s);
        }
    }

    #[test]
    fn smoothing_is_invariant(x in mat(3, 8), w in mat(5, 8), alpha in 0.0f32..1.0) {
        let act: Vec<f32> = (0..8).map(|j| (0..3).fold(0.0f32, |m, r| m.max(x.get(r, j).abs()))).collect();
        let wmax: Vec<f32> = (0..8).map(|j| (0..5).fold(0.0f32, |m, r| m.max(w.get(r, j).abs()))).collect();
        let s = compute_smoothing(&act, &wmax, alpha).unwrap();
        prop_assert!(s.s.iter().all(|v| v.is_finite() && *v > 0.0));
        let mut xs = x.clone();
        for r in 0..3 {
            for (v, sj) in xs.row_mut(r).iter_mut().zip(&s.s) {
                *v /= sj;
            }
        }
        let mut ws = w.data.clone();
        for r in 0..5 {
            for j in 0..8 {
                ws[r * 8 + j] *= s.s[j];
            }
        }
        let a = linear_forward_reference(&x, &w.data, 5, &[0.0; 5], Activation::None).unwrap();
        let b = linear_forward_reference(&xs, &ws, 5, &[0.0; 5], Activation::None).unwrap();
        let scale = x.data.iter().map(|v| v.abs()).sum::<f32>() * w.data.iter().fold(0.0f32, |m, v| m.max(v.abs())) + 1.0;
        for (p, q) in a.data.iter().zip(&b.data) {
            prop_assert!((p - q).abs() <= 1e-5 * scale);
        }
    }

    #[test]
    fn lut_gemm_matches_staged_oracle(
        (o, i) in dims(),
        t in tile(),
        block in 1usize..80,
        rows in 1usize..4,
        act in prop::sample::select(vec![Activation::None, Activation::Relu, Activation::Silu, Activation::Softplus]),
        seed in any::<u32>(),
    ) {
        let cb = ApotCodebook::w4();
        let w: Vec<f32> = (0..o * i).map(|k| ((k as u32).wrapping_mul(2654435761) ^ seed) as f32 / u32::MAX as f32 - 0.5).collect();
        let bias: Vec<f32> = (0..o).map(|k| k as f32 * 0.01 - 0.1).collect();
        let x = Mat::new(rows, i, (0..rows * i).map(|k| ((k as f32 + seed as f32 * 1e-6) * 0.731).sin() * 3.0).collect()).unwrap();
        let layer = QuantizedLinear::from_float(&w, o, i, bias.clone(), act, block, &cb, t).unwrap();
        let engine = LinearEngine::new(TileConfig { tile: t, f_bits: 8 }, cb.clone()).unwrap();
        let (y, c) = engine.forward(&x, &layer, &ActQuant::DynamicPerToken).unwrap();
        let staged = StagedLinear { codes: &layer.weights.codes, scales: &layer.weights.scales, block, out_dim: o, in_dim: i, bias: &bias, act };
        let want = oracle::staged_linear(&x, &staged, &cb, 8).unwrap();
        prop_assert_eq!(y.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), want.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!(c.tiles, (i.div_ceil(t) * o.div_ceil(t) * rows) as u64);
        prop_assert_eq!(c.lut_builds, (i.div_ceil(t) * rows) as u64);
        prop_assert_eq!(c.macs, (o * i * rows) as u64);
        prop_assert_eq!(c.words_streamed, layer.blob.words.len() as u64);
    }

    #[test]
    fn lut_gemm_result_independent_of_tile((o, i) in dims(), block in 1usize..80) {
        let cb = ApotCodebook::w4();
        let w: Vec<f32> = (0..o * i).map(|k| (k as f32 * 0.37).cos()).collect();
        let x = Mat::new(2, i, (0..2 * i).map(|k| (k as f32 * 0.11).sin()).collect()).unwrap();
        let outs: Vec<Vec<u32>> = [16, 32, 64].iter().map(|&t| {
            let layer = QuantizedLinear::from_float(&w, o, i, vec![0.0; o], Activation::None, block, &cb, t).unwrap();
            let e = LinearEngine::new(TileConfig { tile: t, f_bits: 8 }, cb.clone()).unwrap();
            e.forward(&x, &layer, &ActQuant::DynamicPerToken).unwrap().0.data.iter().map(|v| v.to_bits()).collect()
        }).collect();
        prop_assert_eq!(&outs[0], &outs[1]);
        prop_assert_eq!(&outs[1], &outs[2]);
    }

    #[test]
    fn state_tiling_invariant(n in 1usize..40, vals in prop::collection::vec(-2.0f32..2.0, 80)) {
        let h: Vec<f32> = vals.iter().cycle().take(3 * n).copied().collect();
        let c: Vec<f32> = vals.iter().rev().cycle().take(n).copied().collect();
        let base = state_project(&h, &c, 1);
        for nb in [2, 4, 8, 16, 64] {
            prop_assert_eq!(state_project(&h, &c, nb).iter().map(|v| v.to_bits()).collect::<Vec<_>>(), base.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
        let want: Vec<f32> = h.chunks(n).map(|r| oracle::pairwise_dot(r, &c)).collect();
        prop_assert_eq!(base, want);
    }

    #[test]
    fn scan_matches_recurrence(len in 1usize..40, dim in 1usize..6, state in 1usize..20, seed in any::<u32>()) {
        let f = |k: usize, lo: f64, hi: f64| lo + (hi - lo) * ((((k as u64 + 1) * 0x9E37_79B9 + seed as u64) % 10007) as f64 / 10007.0);
        let p = SsmParams::<f64> {
            len, dim, state,
            u: (0..len * dim).map(|k| f(k, -1.0, 1.0)).collect(),
            delta: (0..len * dim).map(|k| f(k + 7, 1e-3, 0.3)).collect(),
            a: (0..dim * state).map(|k| f(k + 13, -6.0, -0.1)).collect(),
            b: (0..len * state).map(|k| f(k + 17, -1.0, 1.0)).collect(),
            c: (0..len * state).map(|k| f(k + 19, -1.0, 1.0)).collect(),
            d_skip: (0..dim).map(|k| f(k + 23, -1.0, 1.0)).collect(),
            z: (0..len * dim).map(|k| f(k + 29, -1.0, 1.0)).collect(),
        };
        let (y, _) = SsmEngine::default().forward(&p).unwrap();
        let scan = ssm_scan_oracle(&p).unwrap();
        let rec = oracle::ssm_recurrence(&p);
        prop_assert!(oracle::max_rel_error(&y, &scan, 1e-3) <= 1e-12);
        prop_assert!(oracle::max_rel_error(&y, &rec, 1e-3) <= 1e-12);
    }

    #[test]
    fn conv_matches_oracles(x in mat(12, 6), w in prop::collection::vec(-1.0f32..1.0, 24), k in 1usize..5) {
        let cb = ApotCodebook::w4();
        let w = &w[..6 * k];
        let cfg = CausalConvConfig { kernel: k, channels: 6 };
        let bias = vec![0.25; 6];
        prop_assert_eq!(causal_conv(&x, &cfg, w, &bias).unwrap(), oracle::naive_conv(&x, w, &bias, k));
        let qc = QuantizedConv::from_float(w, bias.clone(), cfg, &cb).unwrap();
        let (y, _) = causal_conv_quantized(&x, &qc, &cb, 8, &ActQuant::DynamicPerToken).unwrap();
        let want = oracle::staged_conv(&x, &qc.weights.codes, &qc.weights.scales, &bias, k, &cb, 8);
        prop_assert_eq!(y.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), want.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn conv_is_causal(x in mat(10, 3), t in 0usize..9, bump in 0.5f32..5.0) {
        let cfg = CausalConvConfig { kernel: 4, channels: 3 };
        let w: Vec<f32> = (0..12).map(|k| k as f32 * 0.1 - 0.5).collect();
        let y0 = causal_conv(&x, &cfg, &w, &[0.0; 3]).unwrap();
        let mut x2 = x.clone();
        for r in t + 1..10 {
            for v in x2.row_mut(r) {
                *v += bump;
            }
        }
        let y1 = causal_conv(&x2, &cfg, &w, &[0.0; 3]).unwrap();
        prop_assert_eq!(&y0.data[..(t + 1) * 3], &y1.data[..(t + 1) * 3]);
    }

    #[test]
    fn token_plumbing(x in mat(7, 4), pos in 0usize..8, cls in prop::collection::vec(-1.0f32..1.0, 4)) {
        prop_assert_eq!(flip_sequence(&flip_sequence(&x)), x.clone());
        let with = insert_cls(&x, &cls, pos).unwrap();
        let (c, rest) = extract_cls(&with, pos).unwrap();
        prop_assert_eq!(c, cls);
        prop_assert_eq!(rest, x.clone());
        let y = flip_sequence(&x);
        prop_assert_eq!(residual_add(&x, &y).unwrap(), residual_add(&y, &x).unwrap());
    }

    #[test]
    fn norm_matches_formula(x in mat(3, 16), layer in any::<bool>()) {
        let kind = if layer { NormKind::Layer } else { NormKind::Rms };
        let gamma: Vec<f32> = (0..16).map(|k| 0.5 + k as f32 * 0.1).collect();
        let beta: Vec<f32> = (0..16).map(|k| k as f32 * 0.01).collect();
        let y = normalize(&x, kind, &gamma, &beta, 1e-5).unwrap();
        for r in 0..3 {
            let want = oracle::norm_f64(x.row(r), kind, &gamma, &beta, 1e-5);
            for (a, b) in y.row(r).iter().zip(&want) {
                prop_assert!((*a as f64 - b).abs() <= 1e-6 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn im2col_layout(seed in 0u64..1000) {
        let cfg = PatchEmbedConfig { patch: 4, in_channels: 2, embed_dim: 5 };
        let (h, w) = (8, 12);
        let img: Vec<f32> = (0..2 * h * w).map(|k| ((k as u64 * 31 + seed) % 97) as f32 / 97.0).collect();
        let p = im2col(&img, &cfg, h, w).unwrap();
        prop_assert_eq!((p.rows, p.cols), (6, 32));
        // patch (py, px), feature (c, dy, dx)
        for (row, (py, px)) in (0..2).flat_map(|a| (0..3).map(move |b| (a, b))).enumerate() {
            for c in 0..2 {
                for dy in 0..4 {
                    for dx in 0..4 {
                        let v = img[c * h * w + (py * 4 + dy) * w + px * 4 + dx];
                        prop_assert_eq!(p.get(row, c * 16 + dy * 4 + dx), v);
                    }
                }
            }
        }
    }
}
