//! Oracle-equivalence suite. Every check compares a datapath model with an
//! independent reference on seeded random data, so output is reproducible.

use anyhow::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vimq_core::aux::{causal_conv, causal_conv_quantized, CausalConvConfig, QuantizedConv};
use vimq_core::linear::{shift_add, Activation, LinearEngine, QuantizedLinear, TileConfig};
use vimq_core::oracle::{self, StagedLinear};
use vimq_core::quant::{build_codebook, ActQuant, ApotCodebook};
use vimq_core::ssm::{ssm_scan_oracle, state_project, SsmEngine, SsmFloat, SsmParams};
use vimq_core::tensor::{pack_codes, unpack_weights, Container, Tensor};
use vimq_core::Mat;

use crate::{NumericalFailure, SelftestArgs};

type Outcome = std::result::Result<String, String>;

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn random_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    Mat::new(rows, cols, uniform(rng, rows * cols, -2.0, 2.0)).expect("consistent shape")
}

fn check_codebook() -> Outcome {
    let cb = build_codebook(&[1, 2, 4], &[3]).map_err(|e| e.to_string())?;
    let want = [0.0, 0.0625, 0.125, 0.1875, 0.25, 0.375, 0.5, 0.625];
    if cb.levels() != want {
        return Err(format!("levels {:?}", cb.levels()));
    }
    Ok("8 levels".into())
}

fn check_preshift() -> Outcome {
    let cb = ApotCodebook::w4();
    let f = 8;
    let mut n = 0;
    for x in -127i8..=127 {
        for code in 0..(1u8 << cb.code_bits()) {
            let (neg, mag) = cb.decode(code);
            let mut want = oracle::exact_product(x, cb.levels()[mag], f);
            if neg {
                want = -want;
            }
            let got = shift_add(x, code, &cb, f).map_err(|e| e.to_string())?;
            if got as i64 != want {
                return Err(format!("x={x} code={code}: {got} != {want}"));
            }
            n += 1;
        }
    }
    Ok(format!("{n} cases"))
}

struct LayerCase {
    out_dim: usize,
    in_dim: usize,
    tile: usize,
    block: usize,
    act: Activation,
    tokens: usize,
}

fn check_lut_gemm(rng: &mut ChaCha8Rng, inject_fault: bool) -> Outcome {
    let cb = ApotCodebook::w4();
    let mut cases: Vec<LayerCase> = [16, 32, 64]
        .into_iter()
        .map(|tile| LayerCase { out_dim: 384, in_dim: 192, tile, block: 32, act: Activation::None, tokens: 4 })
        .collect();
    let acts = [Activation::None, Activation::Relu, Activation::Silu, Activation::Softplus];
    for k in 0..12 {
        cases.push(LayerCase {
            out_dim: rng.random_range(1..150),
            in_dim: rng.random_range(1..150),
            tile: [16, 32, 64][k % 3],
            block: [1, 7, 16, 32, 64, 100][rng.random_range(0..6)],
            act: acts[k % 4],
            tokens: rng.random_range(1..6),
        });
    }
    for (k, c) in cases.iter().enumerate() {
        let w = uniform(rng, c.out_dim * c.in_dim, -1.0, 1.0);
        let bias = uniform(rng, c.out_dim, -0.5, 0.5);
        let x = random_mat(rng, c.tokens, c.in_dim);
        let ctx = |e: vimq_core::Error| format!("layer {k}: {e}");
        let mut layer = QuantizedLinear::from_float(&w, c.out_dim, c.in_dim, bias.clone(), c.act, c.block, &cb, c.tile).map_err(ctx)?;
        if inject_fault && k == 0 {
            let mut blob = layer.blob.clone();
            blob.words[0][0] ^= 0x07;
            layer.set_blob(blob).map_err(ctx)?;
        }
        let engine = LinearEngine::new(TileConfig { tile: c.tile, f_bits: 8 }, cb.clone()).map_err(ctx)?;
        let (y, counters) = engine.forward(&x, &layer, &ActQuant::DynamicPerToken).map_err(ctx)?;
        let staged = StagedLinear {
            codes: &layer.weights.codes,
            scales: &layer.weights.scales,
            block: c.block,
            out_dim: c.out_dim,
            in_dim: c.in_dim,
            bias: &bias,
            act: c.act,
        };
        let want = oracle::staged_linear(&x, &staged, &cb, 8).map_err(ctx)?;
        if let Some(i) = (0..y.data.len()).find(|&i| y.data[i].to_bits() != want.data[i].to_bits()) {
            return Err(format!(
                "layer {k} (in={}, out={}, T={}, B={}): token {}, output {}: engine {} vs oracle {}",
                c.in_dim,
                c.out_dim,
                c.tile,
                c.block,
                i / c.out_dim,
                i % c.out_dim,
                y.data[i],
                want.data[i]
            ));
        }
        let tiles = c.in_dim.div_ceil(c.tile) * c.out_dim.div_ceil(c.tile) * c.tokens;
        if counters.tiles != tiles as u64 || counters.lut_builds != (c.in_dim.div_ceil(c.tile) * c.tokens) as u64 {
            return Err(format!("layer {k}: counters {counters:?} disagree with the tile formula"));
        }
    }
    Ok(format!("{} layers bit-exact", cases.len()))
}

fn random_ssm<F: SsmFloat>(rng: &mut ChaCha8Rng, len: usize, dim: usize, state: usize) -> SsmParams<F> {
    let mut v = |n: usize, lo: f64, hi: f64| -> Vec<F> { (0..n).map(|_| F::from(rng.random_range(lo..hi)).expect("finite")).collect() };
    SsmParams {
        len,
        dim,
        state,
        u: v(len * dim, -1.0, 1.0),
        delta: v(len * dim, 1e-3, 0.2),
        a: v(dim * state, -8.0, -0.5),
        b: v(len * state, -1.0, 1.0),
        c: v(len * state, -1.0, 1.0),
        d_skip: v(dim, -1.0, 1.0),
        z: v(len * dim, -1.0, 1.0),
    }
}

fn norm_rel<F: SsmFloat>(a: &[F], reference: &[F]) -> f64 {
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for (x, y) in a.iter().zip(reference) {
        let (x, y) = (x.to_f64().unwrap_or(f64::NAN), y.to_f64().unwrap_or(f64::NAN));
        num += (x - y) * (x - y);
        den += y * y;
    }
    (num / den.max(f64::MIN_POSITIVE)).sqrt()
}

fn ssm_case<F: SsmFloat>(rng: &mut ChaCha8Rng, tol: f64) -> Outcome {
    let engine = SsmEngine::default();
    let mut worst = 0.0f64;
    for (len, dim) in [(1, 1), (17, 8), (128, 32), (300, 16)] {
        let p = random_ssm::<F>(rng, len, dim, 16);
        let (y, _) = engine.forward(&p).map_err(|e| e.to_string())?;
        let scan = ssm_scan_oracle(&p).map_err(|e| e.to_string())?;
        let rec = oracle::ssm_recurrence(&p);
        let e = norm_rel(&y, &scan).max(norm_rel(&y, &rec));
        if !(e <= tol) {
            return Err(format!("L={len} D={dim}: relative error {e:.3e} > {tol:.0e}"));
        }
        worst = worst.max(e);
    }
    Ok(format!("max relative error {worst:.2e}"))
}

fn check_state_tiles(rng: &mut ChaCha8Rng) -> Outcome {
    for n in [1, 5, 16, 23] {
        let h: Vec<f32> = uniform(rng, 4 * n, -1.0, 1.0);
        let c: Vec<f32> = uniform(rng, n, -1.0, 1.0);
        let want: Vec<f32> = h.chunks(n).map(|row| oracle::pairwise_dot(row, &c)).collect();
        for nb in [1, 2, 4, 8, 16, 32] {
            let got = state_project(&h, &c, nb);
            if got.iter().zip(&want).any(|(a, b)| a.to_bits() != b.to_bits()) {
                return Err(format!("N={n}, N_B={nb}: {got:?} vs {want:?}"));
            }
        }
    }
    Ok("N_B in {1..32} bit-identical".into())
}

fn check_packing(rng: &mut ChaCha8Rng) -> Outcome {
    for _ in 0..20 {
        let (o, i) = (rng.random_range(1..200), rng.random_range(1..200));
        let tile = [16, 32, 64][rng.random_range(0..3)];
        let codes: Vec<u8> = (0..o * i).map(|_| rng.random_range(0..16)).collect();
        let blob = pack_codes(&codes, o, i, tile, 4).map_err(|e| e.to_string())?;
        if unpack_weights(&blob) != codes {
            return Err(format!("{o}x{i} T={tile}: unpack differs"));
        }
    }
    let mut c = Container::new();
    let t = |r: vimq_core::Result<Tensor>| r.map_err(|e| e.to_string());
    c.insert("a", t(Tensor::f32(&[3, 2], uniform(rng, 6, -1.0, 1.0)))?).map_err(|e| e.to_string())?;
    c.insert("b", t(Tensor::i8(&[5], vec![-127, -1, 0, 1, 127]))?).map_err(|e| e.to_string())?;
    c.insert("c", t(Tensor::u4_from_codes(&[3], &[1, 15, 7]))?).map_err(|e| e.to_string())?;
    let back = Container::from_bytes(&c.to_bytes().map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    if back != c {
        return Err("container round-trip differs".into());
    }
    Ok("20 blobs and a mixed container round-trip".into())
}

fn check_conv(rng: &mut ChaCha8Rng) -> Outcome {
    let cb = ApotCodebook::w4();
    let cfg = CausalConvConfig { kernel: 4, channels: 24 };
    let x = random_mat(rng, 20, 24);
    let w = uniform(rng, 24 * 4, -1.0, 1.0);
    let bias = uniform(rng, 24, -0.5, 0.5);
    let y = causal_conv(&x, &cfg, &w, &bias).map_err(|e| e.to_string())?;
    if y != oracle::naive_conv(&x, &w, &bias, 4) {
        return Err("float conv differs from the direct convolution".into());
    }
    let qc = QuantizedConv::from_float(&w, bias.clone(), cfg, &cb).map_err(|e| e.to_string())?;
    let (yq, _) = causal_conv_quantized(&x, &qc, &cb, 8, &ActQuant::DynamicPerToken).map_err(|e| e.to_string())?;
    let want = oracle::staged_conv(&x, &qc.weights.codes, &qc.weights.scales, &bias, 4, &cb, 8);
    if yq.data.iter().zip(&want.data).any(|(a, b)| a.to_bits() != b.to_bits()) {
        return Err("quantized conv differs from the staged oracle".into());
    }
    Ok("float and quantized bit-exact".into())
}

pub fn run(a: &SelftestArgs) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let checks: Vec<(&str, Outcome)> = vec![
        ("codebook", check_codebook()),
        ("pre-shift", check_preshift()),
        ("lut-gemm", check_lut_gemm(&mut rng, a.inject_fault)),
        ("scan-vs-recurrence f32", ssm_case::<f32>(&mut rng, 1e-5)),
        ("scan-vs-recurrence f64", ssm_case::<f64>(&mut rng, 1e-12)),
        ("state-tiles", check_state_tiles(&mut rng)),
        ("pack-round-trip", check_packing(&mut rng)),
        ("causal-conv", check_conv(&mut rng)),
    ];
    let mut failed = 0;
    for (name, r) in &checks {
        match r {
            Ok(d) => println!("PASS {name:<24} {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL {name:<24} {d}");
            }
        }
    }
    println!("{} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        return Err(NumericalFailure(format!("{failed} selftest check(s) failed")).into());
    }
    Ok(())
}
