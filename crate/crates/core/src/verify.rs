//! Property suites run by `coded-fl verify`, each with fixed seeds.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_bigint::{BigInt, BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::carrier::{Integers, Reals};
use crate::data::gen_synth;
use crate::error::{Error, Result};
use crate::fedsim::{
    partition_noniid, CodedWorld, DropoutModel, LrSchedule, ProtocolSetup, Seeds, TrainConfig,
};
use crate::field::FieldParams;
use crate::fxp::QuantConfig;
use crate::lcc::{decode_gradients, encode_dataset, lagrange_interpolate_eval, CodingConfig, DecodeOutcome};
use crate::matrix::Matrix;
use crate::oracle::{brute_force_composite_check, CentralizedTrainer, CompositeInstance};
use crate::pinn::{batch_capacity_bound, degree_of_gradient, PinnArch, PinnModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Field,
    Coding,
    Pinn,
    Protocol,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Field, Suite::Coding, Suite::Pinn, Suite::Protocol];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Field => "field",
            Suite::Coding => "coding",
            Suite::Pinn => "pinn",
            Suite::Protocol => "protocol",
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.name() == s)
            .ok_or_else(|| Error::config(format!("unknown suite {s:?} (expected field, coding, pinn or protocol)")))
    }
}

/// Outcome of one property.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

fn check(name: &'static str, r: Result<(bool, String)>) -> Check {
    match r {
        Ok((passed, detail)) => Check { name, passed, detail },
        Err(e) => Check {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

pub fn run_suite(suite: Suite) -> Vec<Check> {
    match suite {
        Suite::Field => field_suite(),
        Suite::Coding => coding_suite(),
        Suite::Pinn => pinn_suite(),
        Suite::Protocol => protocol_suite(),
    }
}

fn field_suite() -> Vec<Check> {
    vec![
        check("inverse", field_inverse()),
        check("arithmetic matches integer reduction", field_arith()),
        check("signed embedding round trip", field_signed()),
        check("modulus parsing and primality", field_parse()),
    ]
}

fn field_inverse() -> Result<(bool, String)> {
    let f = FieldParams::parse("2^200-75")?;
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut bad = 0;
    for _ in 0..200 {
        let a = rng.gen_biguint_below(f.modulus());
        if a.is_zero() {
            continue;
        }
        // independent inverse via extended gcd on signed integers
        let p = BigInt::from(f.modulus().clone());
        let e = BigInt::from(a.clone()).extended_gcd(&p);
        let reference = e.x.mod_floor(&p).to_biguint().unwrap_or_default();
        let inv = f.inv(&a)?;
        if inv != reference || !f.mul(&a, &inv).is_one() {
            bad += 1;
        }
    }
    let zero_fails = f.inv(&BigUint::zero()).is_err();
    Ok((bad == 0 && zero_fails, format!("200 random elements, {bad} mismatches; inv(0) rejected: {zero_fails}")))
}

fn field_arith() -> Result<(bool, String)> {
    let f = FieldParams::parse("2^127-1")?;
    let p = BigInt::from(f.modulus().clone());
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut bad = 0;
    for _ in 0..500 {
        let a = rng.gen_biguint_below(f.modulus());
        let b = rng.gen_biguint_below(f.modulus());
        let (ai, bi) = (BigInt::from(a.clone()), BigInt::from(b.clone()));
        let r = |v: BigInt| v.mod_floor(&p).to_biguint().unwrap_or_default();
        if f.add(&a, &b) != r(&ai + &bi) || f.sub(&a, &b) != r(&ai - &bi) || f.mul(&a, &b) != r(&ai * &bi) {
            bad += 1;
        }
    }
    Ok((bad == 0, format!("500 random pairs, {bad} mismatches")))
}

fn field_signed() -> Result<(bool, String)> {
    let f = FieldParams::from_u64(97)?;
    let mut ok = (-48i64..48).all(|z| {
        let z = BigInt::from(z);
        f.from_signed(&z).map(|a| f.to_signed(&a)).ok() == Some(z)
    });
    let half = BigInt::from(f.half().clone());
    ok &= f.from_signed(&half).is_err() && f.from_signed(&-half).is_ok();
    ok &= f.to_signed(&BigUint::from(96u32)) == BigInt::from(-1);
    Ok((ok, "every z in [-(p-1)/2, (p-1)/2) for p = 97".into()))
}

fn field_parse() -> Result<(bool, String)> {
    let big = FieldParams::parse("2^200-75").is_ok() && FieldParams::parse("2^127-1").is_ok();
    let composite = FieldParams::parse("91").is_err() && FieldParams::parse("2^200-73").is_err();
    Ok((big && composite, format!("primes accepted: {big}, composites rejected: {composite}")))
}

fn coding_suite() -> Vec<Check> {
    vec![
        check("share uniformity with T=1", share_uniformity(1, 20_000)),
        check("deterministic shares with T=0", share_uniformity(0, 2_000).map(|(p, d)| (!p, d))),
        check("reconstruction from every minimal subset", subset_reconstruction()),
        check("resiliency boundary", resiliency_boundary()),
        check("composite polynomial brute force", composite_brute_force()),
    ]
}

/// Chi-square statistic of one share entry over `trials` fresh masks, and
/// whether uniformity on F_97 is accepted at level 0.01.
pub fn chi_square_share(privacy: usize, trials: usize, seed: u64) -> Result<(f64, f64)> {
    let f = FieldParams::from_u64(97)?;
    let cfg = CodingConfig::new(f.clone(), 3, 1, privacy, 1)?;
    let shard = Matrix::from_vec(1, 1, vec![BigUint::from(42u32)])?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = [0u64; 97];
    for _ in 0..trials {
        let masks: Vec<Matrix<BigUint>> = (0..privacy)
            .map(|_| Matrix::from_vec(1, 1, vec![f.random(&mut rng)]))
            .collect::<Result<_>>()?;
        let shares = encode_dataset(&f, std::slice::from_ref(&shard), &masks, cfg.betas(), cfg.alphas())?;
        let v = usize::try_from(&shares[0].data()[0]).unwrap_or(0);
        counts[v] += 1;
    }
    let expected = trials as f64 / 97.0;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let critical = ChiSquared::new(96.0)
        .map_err(|e| Error::domain(e.to_string()))?
        .inverse_cdf(0.99);
    Ok((stat, critical))
}

fn share_uniformity(privacy: usize, trials: usize) -> Result<(bool, String)> {
    let (stat, critical) = chi_square_share(privacy, trials, 103 + privacy as u64)?;
    Ok((
        stat <= critical,
        format!("{trials} encodings, chi2 = {stat:.1}, critical = {critical:.1}"),
    ))
}

/// Entry-wise fourth power of a shared vector is a degree-4 composite; every
/// 5-subset of 8 clients must decode it to the same shard value.
fn subset_reconstruction() -> Result<(bool, String)> {
    let f = FieldParams::parse("2^61-1")?;
    let cfg = CodingConfig::new(f.clone(), 8, 1, 1, 4)?;
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let shard = Matrix::from_fn(1, 6, |_, _| f.random(&mut rng));
    let mask = Matrix::from_fn(1, 6, |_, _| f.random(&mut rng));
    let shares = encode_dataset(&f, std::slice::from_ref(&shard), &[mask], cfg.betas(), cfg.alphas())?;
    let pow4 = |v: &BigUint| f.pow(v, &BigUint::from(4u32));
    let uploads: Vec<Vec<BigUint>> = shares.iter().map(|s| s.data().iter().map(pow4).collect()).collect();
    let expected: Vec<BigUint> = shard.data().iter().map(pow4).collect();
    let need = cfg.recovery_threshold();
    let (mut subsets, mut bad) = (0, 0);
    for bits in 0u32..(1 << 8) {
        if bits.count_ones() as usize != need {
            continue;
        }
        subsets += 1;
        let chosen: BTreeMap<usize, Vec<BigUint>> =
            (0..8).filter(|j| bits >> j & 1 == 1).map(|j| (j, uploads[j].clone())).collect();
        match decode_gradients(&chosen, &cfg)? {
            DecodeOutcome::Decoded(d) if d[0] == expected => {}
            _ => bad += 1,
        }
    }
    Ok((bad == 0 && subsets == 56, format!("{subsets} subsets of size {need}, {bad} mismatches")))
}

fn resiliency_boundary() -> Result<(bool, String)> {
    let f = FieldParams::parse("2^200-75")?;
    let cfg = CodingConfig::new(f.clone(), 20, 1, 1, degree_of_gradient(2))?;
    // composite of degree 8 in z: c(z) = (z + 3)^8
    let c = |z: &BigUint| vec![f.pow(&f.add(z, &BigUint::from(3u32)), &BigUint::from(8u32))];
    let upload = |n: usize| -> BTreeMap<usize, Vec<BigUint>> {
        (20 - n..20).map(|j| (j, c(&cfg.alphas()[j]))).collect()
    };
    let nine = decode_gradients(&upload(9), &cfg)?;
    let eight = decode_gradients(&upload(8), &cfg)?;
    let ok_nine = nine == DecodeOutcome::Decoded(vec![c(&cfg.betas()[0])]);
    let ok_eight = matches!(eight, DecodeOutcome::Skip { received: 8, required: 9 });
    let d = cfg.max_dropouts();
    Ok((
        ok_nine && ok_eight && d == 11,
        format!("threshold {}, D = {d}, 9 uploads decode: {ok_nine}, 8 skip: {ok_eight}", cfg.recovery_threshold()),
    ))
}

fn composite_brute_force() -> Result<(bool, String)> {
    let f = FieldParams::parse("2^127-1")?;
    let arch = PinnArch::new(vec![2, 2, 1])?;
    let cfg = CodingConfig::new(f, 12, 2, 1, arch.grad_degree())?;
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let mut inst = CompositeInstance::random(&arch, &cfg, 2, 5, &mut rng);
    let accepts = brute_force_composite_check(&arch, &cfg, &inst)?;
    inst.corrupt = Some(3);
    let rejects = !brute_force_composite_check(&arch, &cfg, &inst)?;
    Ok((accepts && rejects, format!("honest accepted: {accepts}, corrupted rejected: {rejects}")))
}

fn pinn_suite() -> Vec<Check> {
    vec![
        check("gradient degree along a data line", degree_interpolation()),
        check("finite differences", finite_differences()),
        check("field gradient equals integer gradient", field_vs_integer()),
    ]
}

fn degree_interpolation() -> Result<(bool, String)> {
    let f = FieldParams::from_u64(97)?;
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let mut summary = Vec::new();
    let mut all = true;
    for l in 0..=2usize {
        let deg = degree_of_gradient(l);
        let mut dims = vec![2];
        dims.extend(std::iter::repeat_n(2, l));
        dims.push(1);
        let arch = PinnArch::new(dims)?;
        let (mut exact, mut short_miss) = (0, 0);
        for _ in 0..5 {
            let params = (0..arch.param_count()).map(|_| f.random(&mut rng)).collect();
            let m = PinnModel::from_flat(arch.clone(), f.clone(), params)?;
            let rand = |rng: &mut ChaCha8Rng, c: usize| Matrix::from_fn(1, c, |_, _| f.random(rng));
            let (x0, x1, y0, y1) = (rand(&mut rng, 2), rand(&mut rng, 2), rand(&mut rng, 1), rand(&mut rng, 1));
            let eval = |s: u64| -> Result<Vec<BigUint>> {
                let s = BigUint::from(s);
                let line = |a: &Matrix<BigUint>, b: &Matrix<BigUint>| {
                    Matrix::from_fn(a.rows(), a.cols(), |r, c| f.add(a.get(r, c), &f.mul(&s, b.get(r, c))))
                };
                Ok(m.gradient(&line(&x0, &x1), &line(&y0, &y1))?.into_inner())
            };
            let pts = (1..=deg as u64 + 1).map(|s| Ok((BigUint::from(s), eval(s)?))).collect::<Result<Vec<_>>>()?;
            let target = eval(80)?;
            if lagrange_interpolate_eval(&f, &pts, &BigUint::from(80u32))? == target {
                exact += 1;
            }
            if lagrange_interpolate_eval(&f, &pts[..deg], &BigUint::from(80u32))? != target {
                short_miss += 1;
            }
        }
        // a generic model misses with the short set; allow one unlucky draw
        all &= exact == 5 && short_miss >= 4;
        summary.push(format!("L={l}: {exact}/5 exact, {short_miss}/5 short misses"));
    }
    Ok((all, summary.join("; ")))
}

fn finite_differences() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let mut worst: f64 = 0.0;
    for trial in 0..20 {
        let dims = [vec![3, 2], vec![3, 3, 2], vec![2, 3, 2, 2]][trial % 3].clone();
        let arch = PinnArch::new(dims)?;
        let params: Vec<f64> = (0..arch.param_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let m = PinnModel::from_flat(arch.clone(), Reals, params.clone())?;
        let x = Matrix::from_fn(4, arch.input_dim(), |_, _| rng.gen_range(0.0..1.0));
        let y = Matrix::from_fn(4, arch.output_dim(), |_, _| rng.gen_range(0.0..1.0));
        let g = m.gradient(&x, &y)?.into_inner();
        let h = 1e-4;
        let mut num = 0.0;
        for (i, gi) in g.iter().enumerate() {
            let mut plus = params.clone();
            let mut minus = params.clone();
            plus[i] += h;
            minus[i] -= h;
            let lp = PinnModel::from_flat(arch.clone(), Reals, plus)?.loss(&x, &y)?;
            let lm = PinnModel::from_flat(arch.clone(), Reals, minus)?.loss(&x, &y)?;
            num += ((lp - lm) / (2.0 * h) - gi).powi(2);
        }
        let den = g.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        worst = worst.max(num.sqrt() / den);
    }
    Ok((worst < 1e-5, format!("20 models, worst relative error {worst:.2e}")))
}

fn field_vs_integer() -> Result<(bool, String)> {
    let f = FieldParams::parse("2^127-1")?;
    let mut rng = ChaCha8Rng::seed_from_u64(108);
    let mut bad = 0;
    for trial in 0..30 {
        let dims = [vec![3, 2], vec![4, 3, 2], vec![3, 2, 2, 2]][trial % 3].clone();
        let arch = PinnArch::new(dims)?;
        let bound = batch_capacity_bound(&arch, &BigUint::from(8u32), &BigUint::from(4u32), 3);
        if &bound >= f.half() {
            return Err(Error::domain("suite instance exceeds field capacity"));
        }
        let im = PinnModel::init_uniform(arch.clone(), Integers, 4, &mut rng)?;
        let x = Matrix::from_fn(3, arch.input_dim(), |_, _| BigInt::from(rng.gen_range(0..=8)));
        let y = Matrix::from_fn(3, arch.output_dim(), |_, _| BigInt::from(rng.gen_range(0..=8)));
        let fm = im.convert(f.clone(), |v| f.from_signed(v))?;
        let gf = fm.gradient(&x.try_map(|v| f.from_signed(v))?, &y.try_map(|v| f.from_signed(v))?)?;
        let back: Vec<BigInt> = gf.into_inner().iter().map(|r| f.to_signed(r)).collect();
        if back != im.gradient(&x, &y)?.into_inner() {
            bad += 1;
        }
    }
    Ok((bad == 0, format!("30 models, {bad} mismatches")))
}

fn protocol_suite() -> Vec<Check> {
    vec![
        check("coded trajectory equals centralized oracle", coded_vs_oracle()),
        check("all clients dropped skips the round", all_dropped()),
        check("runs are reproducible from seeds", reproducible()),
    ]
}

fn protocol_setup(dims: Vec<usize>, privacy: usize, p_drop: f64, rounds: usize) -> Result<ProtocolSetup> {
    let field = FieldParams::parse("2^200-75")?;
    let arch = PinnArch::new(dims)?;
    let n = 12;
    let coding = CodingConfig::new(field.clone(), n, 1, privacy, arch.grad_degree())?;
    let ds = gen_synth(120, arch.input_dim(), 2, 11)?;
    let (train, test) = ds.split_every(5);
    Ok(ProtocolSetup {
        coding,
        quant: QuantConfig::new(3, 0.0, field)?,
        arch,
        train: TrainConfig {
            batch_rows: 8,
            rounds,
            lr: LrSchedule::constant(1e-6),
            clip_norm: Some(1e9),
            seeds: Seeds::from_base(3),
            init_bound: 2,
        },
        dropout: DropoutModel::constant(n, p_drop)?,
        locals: partition_noniid(&train, n, 1)?,
        test,
        enforce_capacity: true,
    })
}

fn coded_vs_oracle() -> Result<(bool, String)> {
    let setup = protocol_setup(vec![4, 2, 2], 1, 0.2, 12)?;
    let coded = CodedWorld::new(setup.clone())?.run()?;
    let plain = CentralizedTrainer::new(setup)?.run()?;
    let same = coded == plain;
    let skipped = coded.iter().filter(|r| r.skipped).count();
    Ok((same, format!("12 rounds ({skipped} skipped), identical records: {same}")))
}

fn all_dropped() -> Result<(bool, String)> {
    let setup = protocol_setup(vec![4, 2], 1, 1.0, 3)?;
    let mut world = CodedWorld::new(setup)?;
    let before = world.signed_params();
    let recs = world.run()?;
    let ok = recs.iter().all(|r| r.skipped && r.survivors.is_empty()) && world.signed_params() == before;
    Ok((ok, "3 rounds at dropout 1.0".into()))
}

fn reproducible() -> Result<(bool, String)> {
    let setup = protocol_setup(vec![4, 2], 1, 0.3, 5)?;
    let a = CodedWorld::new(setup.clone())?.run()?;
    let b = CodedWorld::new(setup)?.run()?;
    Ok((a == b, "two 5-round runs".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_parse() {
        for s in Suite::ALL {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert!("bogus".parse::<Suite>().is_err());
    }

    #[test]
    fn all_suites_pass() {
        for s in Suite::ALL {
            for c in run_suite(s) {
                assert!(c.passed, "{} / {c}", s.name());
            }
        }
    }
}
