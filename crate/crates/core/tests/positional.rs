mod common;

use common::{check_op, weighted_sum};
use pesto::corpus::LanguageTag::{self, En, Hi, Other};
use pesto::positional::{
    attention_logits, head_logits, logits_dynamic, logits_pesto, logits_relative, logits_sinusoidal, logits_spdpe,
    HeadWeights, KernelInputs, PeScheme, RelativeParams, SinusoidalTable,
};
use pesto::switching::{clamp_spi, spi, SpiVariant, SpiVector};
use pesto::tensor::{Tape, Tensor, Var};
use pesto::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const P_MAX: usize = 6;

/// One random single-head problem.
#[derive(Clone, Debug)]
struct Instance {
    words: Tensor,
    wq: Tensor,
    wk: Tensor,
    theta: Tensor,
    rel: Tensor,
    clip: usize,
    tags: Vec<LanguageTag>,
    variant: SpiVariant,
}

impl Instance {
    fn random(seed: u64, even_dim: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = rng.gen_range(1..=4);
        let d = if even_dim { 2 * rng.gen_range(1..=2) } else { rng.gen_range(1..=4) };
        let dh = rng.gen_range(1..=d);
        let clip = rng.gen_range(1..=3);
        let tags = (0..t).map(|_| [Hi, En, Other][rng.gen_range(0..3)]).collect();
        let variant = if rng.gen_bool(0.5) { SpiVariant::ResetAll } else { SpiVariant::BaseMixed };
        Instance {
            words: Tensor::uniform(&[t, d], 1.0, &mut rng),
            wq: Tensor::uniform(&[d, dh], 1.0, &mut rng),
            wk: Tensor::uniform(&[d, dh], 1.0, &mut rng),
            theta: Tensor::uniform(&[P_MAX, d], 1.0, &mut rng),
            rel: Tensor::uniform(&[2 * clip + 1, dh], 1.0, &mut rng),
            clip,
            tags,
            variant,
        }
    }

    fn len(&self) -> usize {
        self.words.rows()
    }

    fn spi(&self) -> SpiVector {
        spi(&self.tags, self.variant)
    }

    /// Absolute rows added to the input under `scheme`.
    fn positions(&self, scheme: PeScheme) -> Vec<Vec<f64>> {
        let t = self.len();
        let d = self.words.cols();
        match scheme {
            PeScheme::Sinusoidal => (0..t).map(|i| sinusoid(i, d)).collect(),
            PeScheme::Dynamic | PeScheme::DynamicRelative => (0..t).map(|i| self.theta.row(i).to_vec()).collect(),
            PeScheme::SpDynamic | PeScheme::SpDynamicRelative => clamp_spi(&self.spi(), P_MAX)
                .indices
                .iter()
                .map(|&s| self.theta.row(s).to_vec())
                .collect(),
            PeScheme::Relative => vec![vec![0.0; d]; t],
        }
    }

    fn logits(&self, scheme: PeScheme) -> Result<Tensor, Error> {
        let mut tape = Tape::new();
        let w = tape.constant(self.words.clone());
        let head = HeadWeights {
            wq: tape.constant(self.wq.clone()),
            wk: tape.constant(self.wk.clone()),
        };
        let table = SinusoidalTable::new(P_MAX, self.words.cols()).ok();
        let spi = self.spi();
        let inputs = KernelInputs {
            head,
            theta: Some(tape.constant(self.theta.clone())),
            relative: Some(RelativeParams {
                table: tape.constant(self.rel.clone()),
                clip: self.clip,
            }),
            sinusoidal: table.as_ref(),
            spi: Some(&spi),
        };
        let out = attention_logits(&mut tape, scheme, w, &inputs)?;
        Ok(tape.value(out).clone())
    }
}

fn sinusoid(i: usize, d: usize) -> Vec<f64> {
    (0..d)
        .map(|c| {
            let angle = i as f64 / 10000f64.powf((c - c % 2) as f64 / d as f64);
            if c % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

/// Three nested loops over (i, j, feature), written from the logit formula.
fn scalar_oracle(inst: &Instance, scheme: PeScheme) -> Vec<Vec<f64>> {
    let t = inst.len();
    let d = inst.words.cols();
    let dh = inst.wq.cols();
    let pos = inst.positions(scheme);
    let input = |i: usize, c: usize| inst.words.at(i, c) + pos[i][c];
    let proj = |m: &Tensor, i: usize, h: usize| (0..d).map(|c| input(i, c) * m.at(c, h)).sum::<f64>();
    let k = inst.clip as i64;
    let mut out = vec![vec![0.0; t]; t];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for h in 0..dh {
                let mut key = proj(&inst.wk, j, h);
                if scheme.has_relative() {
                    let r = (j as i64 - i as i64).clamp(-k, k) + k;
                    key += inst.rel.at(r as usize, h);
                }
                acc += proj(&inst.wq, i, h) * key;
            }
            *cell = acc / (dh as f64).sqrt();
        }
    }
    out
}

fn max_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn kernels_match_scalar_oracle(seed in any::<u64>()) {
        for scheme in PeScheme::ALL {
            let inst = Instance::random(seed, scheme.is_sinusoidal());
            let got = inst.logits(scheme).unwrap();
            let want = scalar_oracle(&inst, scheme);
            for i in 0..inst.len() {
                for j in 0..inst.len() {
                    prop_assert!((got.at(i, j) - want[i][j]).abs() <= 1e-9, "{scheme} ({i},{j})");
                }
            }
        }
    }
}

fn m(rows: &[&[f64]]) -> Tensor {
    Tensor::from_rows(rows).unwrap()
}

fn eye(n: usize) -> Tensor {
    let mut t = Tensor::zeros(&[n, n]);
    for i in 0..n {
        t.data_mut()[i * n + i] = 1.0;
    }
    t
}

fn heads(tape: &mut Tape, wq: &Tensor, wk: &Tensor) -> HeadWeights {
    HeadWeights {
        wq: tape.constant(wq.clone()),
        wk: tape.constant(wk.clone()),
    }
}

#[test]
fn sinusoidal_hand_case() {
    let mut tape = Tape::new();
    let w = tape.constant(m(&[&[1.0, 0.0], &[0.0, 1.0]]));
    let head = heads(&mut tape, &eye(2), &eye(2));
    let table = SinusoidalTable::new(P_MAX, 2).unwrap();
    let out = logits_sinusoidal(&mut tape, w, &table, &head).unwrap();
    let a = tape.value(out);
    let (s, c) = (1f64.sin(), 1f64.cos());
    let x0 = [1.0, 1.0];
    let x1 = [s, 1.0 + c];
    let dot = |a: [f64; 2], b: [f64; 2]| (a[0] * b[0] + a[1] * b[1]) / 2f64.sqrt();
    assert!((a.at(0, 0) - dot(x0, x0)).abs() < 1e-12);
    assert!((a.at(0, 1) - dot(x0, x1)).abs() < 1e-12);
    assert!((a.at(1, 1) - dot(x1, x1)).abs() < 1e-12);
}

#[test]
fn sinusoidal_zero_inputs_and_distinct_rows() {
    let mut tape = Tape::new();
    let w = tape.constant(Tensor::zeros(&[3, 4]));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let wq = Tensor::uniform(&[4, 2], 1.0, &mut rng);
    let wk = Tensor::uniform(&[4, 2], 1.0, &mut rng);
    let head = heads(&mut tape, &wq, &wk);
    let zero = SinusoidalTable::from_tensor(Tensor::zeros(&[P_MAX, 4]));
    let out = logits_sinusoidal(&mut tape, w, &zero, &head).unwrap();
    assert!(tape.value(out).data().iter().all(|&v| v == 0.0));

    // Identical words at different positions see different logit rows.
    let same = tape.constant(m(&[&[0.3, -0.2, 0.5, 0.1], &[0.3, -0.2, 0.5, 0.1]]));
    let table = SinusoidalTable::new(P_MAX, 4).unwrap();
    let out = logits_sinusoidal(&mut tape, same, &table, &head).unwrap();
    let a = tape.value(out);
    assert_ne!(a.row(0), a.row(1));
}

#[test]
fn relative_hand_case_with_clipping() {
    let mut tape = Tape::new();
    let x = tape.constant(m(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]));
    let head = heads(&mut tape, &eye(2), &eye(2));
    let rel = RelativeParams {
        table: tape.constant(m(&[&[1.0, 0.0], &[0.0, 0.0], &[0.0, 2.0]])),
        clip: 1,
    };
    let out = logits_relative(&mut tape, x, rel, &head).unwrap();
    let a = tape.value(out);
    let r2 = 2f64.sqrt();
    // offset +2 clips to +1, offset -2 clips to -1
    assert!((a.at(0, 2) - 1.0 / r2).abs() < 1e-12);
    assert!((a.at(2, 0) - 2.0 / r2).abs() < 1e-12);
    assert!((a.at(1, 1) - 1.0 / r2).abs() < 1e-12);
    assert!((a.at(1, 2) - 3.0 / r2).abs() < 1e-12);
}

#[test]
fn pesto_hand_case() {
    let mut tape = Tape::new();
    let x = tape.constant(m(&[&[1.0], &[2.0]]));
    let head = heads(&mut tape, &eye(1), &eye(1));
    let theta = tape.constant(m(&[&[0.5], &[1.0], &[7.0]]));
    let rel = RelativeParams {
        table: tape.constant(m(&[&[-1.0], &[0.0], &[3.0]])),
        clip: 1,
    };
    let s = spi(&[Hi, En], SpiVariant::ResetAll);
    assert_eq!(s.indices, vec![0, 0]);
    let out = logits_pesto(&mut tape, x, &s, theta, rel, &head).unwrap();
    assert_eq!(tape.value(out).data(), &[2.25, 8.25, 1.25, 6.25]);
}

#[test]
fn spi_sharing_example() {
    let s = spi(&[Hi, Hi, En, Hi], SpiVariant::ResetAll);
    assert_eq!(s.indices, vec![0, 1, 0, 0]);
    let mut tape = Tape::new();
    let theta = tape.constant(Tensor::uniform(&[P_MAX, 3], 1.0, &mut ChaCha8Rng::seed_from_u64(2)));
    let w = tape.constant(Tensor::zeros(&[4, 3]));
    let added = pesto::positional::add_positions(&mut tape, w, theta, &s.indices).unwrap();
    let v = tape.value(added);
    assert_eq!(v.row(0), v.row(2));
    assert_eq!(v.row(0), v.row(3));
    assert_ne!(v.row(0), v.row(1));
}

/// Logits with every table zeroed and no positional term.
fn plain(inst: &Instance) -> Tensor {
    let mut tape = Tape::new();
    let w = tape.constant(inst.words.clone());
    let head = heads(&mut tape, &inst.wq, &inst.wk);
    let q = tape.matmul(w, head.wq).unwrap();
    let k = tape.matmul(w, head.wk).unwrap();
    let out = head_logits(&mut tape, q, k, None).unwrap();
    tape.value(out).clone()
}

#[test]
fn reduction_lattice_is_exact() {
    for seed in 0..50 {
        let inst = Instance::random(seed, false);
        let mut no_rel = inst.clone();
        no_rel.rel = Tensor::zeros(inst.rel.shape());
        let mut no_theta = inst.clone();
        no_theta.theta = Tensor::zeros(inst.theta.shape());
        let mut neither = no_rel.clone();
        neither.theta = Tensor::zeros(inst.theta.shape());

        let tol = 1e-12;
        let pesto = PeScheme::SpDynamicRelative;
        assert!(max_diff(&no_rel.logits(pesto).unwrap(), &no_rel.logits(PeScheme::SpDynamic).unwrap()) <= tol);
        assert!(max_diff(&no_theta.logits(pesto).unwrap(), &no_theta.logits(PeScheme::Relative).unwrap()) <= tol);
        assert!(max_diff(&neither.logits(pesto).unwrap(), &plain(&inst)) <= tol);
        assert!(max_diff(&no_theta.logits(PeScheme::Dynamic).unwrap(), &plain(&inst)) <= tol);
        assert!(max_diff(&no_rel.logits(PeScheme::Relative).unwrap(), &plain(&inst)) <= tol);
        let dr = PeScheme::DynamicRelative;
        assert!(max_diff(&no_rel.logits(dr).unwrap(), &no_rel.logits(PeScheme::Dynamic).unwrap()) <= tol);
    }
}

#[test]
fn monolingual_spdpe_equals_dynamic() {
    for seed in 0..20 {
        let mut inst = Instance::random(seed, false);
        inst.tags = vec![En; inst.len()];
        assert_eq!(
            inst.logits(PeScheme::SpDynamic).unwrap(),
            inst.logits(PeScheme::Dynamic).unwrap()
        );
    }
}

#[test]
fn zero_input_relative_is_zero() {
    let mut inst = Instance::random(3, false);
    inst.words = Tensor::zeros(inst.words.shape());
    assert!(inst.logits(PeScheme::Relative).unwrap().data().iter().all(|&v| v == 0.0));
}

fn grad_check(inst: &Instance, scheme: PeScheme, seed: u64) -> f64 {
    let inputs = [
        inst.words.clone(),
        inst.wq.clone(),
        inst.wk.clone(),
        inst.theta.clone(),
        inst.rel.clone(),
    ];
    let table = SinusoidalTable::new(P_MAX, inst.words.cols()).ok();
    let spi = inst.spi();
    let clip = inst.clip;
    check_op(&inputs, &|tape: &mut Tape, v: &[Var]| {
        let k = KernelInputs {
            head: HeadWeights { wq: v[1], wk: v[2] },
            theta: Some(v[3]),
            relative: Some(RelativeParams { table: v[4], clip }),
            sinusoidal: table.as_ref(),
            spi: Some(&spi),
        };
        let out = attention_logits(tape, scheme, v[0], &k).unwrap();
        weighted_sum(tape, out, seed)
    })
}

#[test]
fn gradients_match_finite_differences() {
    for seed in 0..20 {
        for scheme in PeScheme::ALL {
            let inst = Instance::random(1000 + seed, scheme.is_sinusoidal());
            let e = grad_check(&inst, scheme, seed);
            assert!(e <= 1e-6, "{scheme} seed {seed}: {e:e}");
        }
    }
}

#[test]
fn theta_gradient_touches_only_used_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut tape = Tape::new();
    let w = tape.constant(Tensor::uniform(&[3, 4], 1.0, &mut rng));
    let head = heads(
        &mut tape,
        &Tensor::uniform(&[4, 4], 1.0, &mut rng),
        &Tensor::uniform(&[4, 4], 1.0, &mut rng),
    );
    let theta = tape.param(&Tensor::uniform(&[P_MAX, 4], 1.0, &mut rng));
    let out = logits_dynamic(&mut tape, w, theta, &head).unwrap();
    let loss = weighted_sum(&mut tape, out, 1);
    tape.backward(loss).unwrap();
    let g = tape.grad(theta).unwrap();
    for row in 0..P_MAX {
        let nonzero = g[row * 4..(row + 1) * 4].iter().any(|&x| x != 0.0);
        assert_eq!(nonzero, row < 3, "row {row}");
    }
}

fn permuted(inst: &Instance, perm: &[usize]) -> Instance {
    let mut out = inst.clone();
    let rows: Vec<&[f64]> = perm.iter().map(|&p| inst.words.row(p)).collect();
    out.words = Tensor::from_rows(&rows).unwrap();
    out.tags = perm.iter().map(|&p| inst.tags[p]).collect();
    out
}

/// Logits of a position-free model are equivariant: α(Px) = P α Pᵀ.
fn is_equivariant(a: &Tensor, b: &Tensor, perm: &[usize]) -> bool {
    let t = perm.len();
    (0..t).all(|i| (0..t).all(|j| (b.at(i, j) - a.at(perm[i], perm[j])).abs() < 1e-12))
}

#[test]
fn position_information_is_live() {
    for scheme in PeScheme::ALL {
        let mut changed = false;
        for seed in 0..20 {
            let mut inst = Instance::random(500 + seed, scheme.is_sinusoidal());
            if inst.len() < 2 {
                continue;
            }
            if scheme.uses_spi() {
                // a code-mixed sentence so SPI differs from a constant
                inst.tags = (0..inst.len()).map(|i| if i % 3 == 2 { En } else { Hi }).collect();
            }
            let perm: Vec<usize> = (0..inst.len()).rev().collect();
            let a = inst.logits(scheme).unwrap();
            let b = permuted(&inst, &perm).logits(scheme).unwrap();
            assert!(is_equivariant(&plain(&inst), &plain(&permuted(&inst, &perm)), &perm));
            changed |= !is_equivariant(&a, &b, &perm);
        }
        assert!(changed, "{scheme} ignores token order");
    }
}

#[test]
fn swapping_equal_spi_tokens_is_equivariant() {
    // SPI [0,1,0,0]: tokens 2 and 3 share index 0 and θ(0).
    let tags = vec![Hi, Hi, En, Hi];
    for seed in 0..20 {
        let mut inst = Instance::random(seed, false);
        let d = inst.words.cols();
        inst.words = Tensor::uniform(&[4, d], 1.0, &mut ChaCha8Rng::seed_from_u64(seed));
        inst.tags = tags.clone();
        inst.variant = SpiVariant::ResetAll;
        let perm = [0, 1, 3, 2];
        let mut swapped = permuted(&inst, &perm);
        swapped.tags = tags.clone();
        let a = inst.logits(PeScheme::SpDynamic).unwrap();
        let b = swapped.logits(PeScheme::SpDynamic).unwrap();
        assert!(is_equivariant(&a, &b, &perm));

        // equal word vectors too: PESTO logits unchanged
        let mut twin = inst.clone();
        let row2 = inst.words.row(2).to_vec();
        twin.words.data_mut()[3 * d..4 * d].copy_from_slice(&row2);
        let mut swapped = permuted(&twin, &perm);
        swapped.tags = tags.clone();
        assert_eq!(
            twin.logits(PeScheme::SpDynamicRelative).unwrap(),
            swapped.logits(PeScheme::SpDynamicRelative).unwrap()
        );
    }
}

#[test]
fn error_cases() {
    let mut tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let w = tape.constant(Tensor::uniform(&[P_MAX + 1, 2], 1.0, &mut rng));
    let head = heads(&mut tape, &eye(2), &eye(2));
    let table = SinusoidalTable::new(P_MAX, 2).unwrap();
    assert!(matches!(
        logits_sinusoidal(&mut tape, w, &table, &head),
        Err(Error::Length { len: 7, cap: 6 })
    ));
    let theta = tape.constant(Tensor::zeros(&[P_MAX, 2]));
    assert!(matches!(logits_dynamic(&mut tape, w, theta, &head), Err(Error::Length { .. })));

    let short = tape.constant(Tensor::zeros(&[3, 2]));
    let s = spi(&[Hi, En], SpiVariant::ResetAll);
    assert!(matches!(
        logits_spdpe(&mut tape, short, &s, theta, &head),
        Err(Error::Usage(_))
    ));
    assert!(matches!(SinusoidalTable::new(4, 3), Err(Error::Config(_))));
}

#[test]
fn long_spi_is_clamped() {
    let tags = vec![Hi; 10];
    let s = spi(&tags, SpiVariant::ResetAll);
    let mut tape = Tape::new();
    let w = tape.constant(Tensor::zeros(&[10, 2]));
    let head = heads(&mut tape, &eye(2), &eye(2));
    let theta = tape.constant(Tensor::uniform(&[P_MAX, 2], 1.0, &mut ChaCha8Rng::seed_from_u64(4)));
    let out = logits_spdpe(&mut tape, w, &s, theta, &head).unwrap();
    let a = tape.value(out);
    // positions 5..9 all read the last θ row
    assert_eq!(a.row(6), a.row(9));
}
