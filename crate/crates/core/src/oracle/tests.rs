use super::*;
use crate::carrier::Integers;
use crate::data::gen_synth;
use crate::fedsim::{partition_noniid, CodedWorld, LrSchedule, Seeds};

fn setup(n: usize, k: usize, t: usize, dims: Vec<usize>, p_drop: f64, rounds: usize) -> ProtocolSetup {
    let field = FieldParams::parse("2^200-75").unwrap();
    let arch = PinnArch::new(dims).unwrap();
    let coding = CodingConfig::new(field.clone(), n, k, t, arch.grad_degree()).unwrap();
    let ds = gen_synth(200, arch.input_dim(), 2, 5).unwrap();
    let (train, test) = ds.split_every(5);
    ProtocolSetup {
        coding,
        quant: QuantConfig::new(3, 0.0, field).unwrap(),
        arch,
        train: TrainConfig {
            batch_rows: 6,
            rounds,
            lr: LrSchedule::constant(1e-9),
            clip_norm: Some(1e12),
            seeds: Seeds::from_base(3),
            init_bound: 2,
        },
        dropout: DropoutModel::constant(n, p_drop).unwrap(),
        locals: partition_noniid(&train, n, k).unwrap(),
        test,
        enforce_capacity: true,
    }
}

#[test]
fn batch_gradient_matches_per_row_backprop() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for dims in [vec![3, 2], vec![3, 4, 2], vec![2, 3, 3, 1]] {
        let arch = PinnArch::new(dims.clone()).unwrap();
        for _ in 0..10 {
            let model = PinnModel::init_uniform(arch.clone(), Integers, 5, &mut rng).unwrap();
            let x = Matrix::from_fn(4, dims[0], |_, _| BigInt::from(rng.gen_range(-9..=9)));
            let y = Matrix::from_fn(4, *dims.last().unwrap(), |_, _| BigInt::from(rng.gen_range(-9..=9)));
            let flat = model.to_flat();
            assert_eq!(batch_gradient(&dims, &flat, &x, &y).unwrap(), model.gradient(&x, &y).unwrap().0);
            assert_eq!(batch_loss(&dims, &flat, &x, &y).unwrap(), model.loss(&x, &y).unwrap());
        }
    }
}

#[test]
fn shard_view_rows() {
    let part = |rows: usize| IntData {
        x: Matrix::from_fn(rows, 1, |r, _| BigInt::from(r)),
        y: Matrix::from_fn(rows, 1, |_, _| BigInt::zero()),
        labels: vec![0; rows],
    };
    let g = GlobalDataset::new(&[part(4), part(6)], 2).unwrap();
    // coded rows: source 0 -> 0..2, source 1 -> 2..5
    assert_eq!(g.shard_rows(0, &[0, 1, 2, 4]).unwrap(), vec![0, 1, 4, 6]);
    assert_eq!(g.shard_rows(1, &[0, 1, 2, 4]).unwrap(), vec![2, 3, 7, 9]);
    assert!(g.shard_rows(0, &[5]).is_err());
}

#[test]
fn plaintext_world_matches_oracle() {
    let s = setup(4, 1, 0, vec![8, 2, 2], 0.0, 5);
    let mut coded = CodedWorld::new(s.clone()).unwrap();
    let mut central = CentralizedTrainer::new(s).unwrap();
    assert_eq!(coded.run().unwrap(), central.run().unwrap());
    assert_eq!(coded.signed_params(), central.params());
}

#[test]
fn one_round_l2_private_world_matches_oracle() {
    let s = setup(20, 1, 1, vec![8, 3, 3, 2], 0.0, 1);
    let mut coded = CodedWorld::new(s.clone()).unwrap();
    let mut central = CentralizedTrainer::new(s).unwrap();
    let a = coded.step().unwrap();
    let b = central.step().unwrap();
    assert!(!a.skipped);
    assert_eq!(a, b);
    assert_eq!(coded.signed_params(), central.params());
    assert_ne!(central.params(), &central.setup.initial_params()[..]);
}

#[test]
fn zero_residual_is_a_fixed_point() {
    let arch = PinnArch::new(vec![2, 2, 1]).unwrap();
    let params: Vec<BigInt> = [1, -1, 2, 0, 1, 1, 3, -2, 5].iter().map(|&v| BigInt::from(v)).collect();
    let x = Matrix::from_fn(3, 2, |r, c| BigInt::from((r + 2 * c) as i64 - 2));
    let out = int_forward(arch.layer_dims(), &params, &x).unwrap();
    let y = Matrix::from_rows(&out).unwrap();
    let part = IntData { x, y, labels: vec![0; 3] };
    let data = GlobalDataset::new(&[part], 1).unwrap();
    let cfg = TrainConfig {
        batch_rows: 3,
        rounds: 1,
        lr: LrSchedule::constant(0.5),
        clip_norm: None,
        seeds: Seeds::from_base(0),
        init_bound: 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (next, loss, norm) = centralized_step(&arch, &params, &data, &[0, 1, 2], &cfg, 0, &mut rng).unwrap();
    assert!(loss.is_zero());
    assert_eq!(norm, 0.0);
    assert_eq!(next, params);
}

#[test]
fn composite_check_accepts_and_rejects() {
    let field = FieldParams::from_u64(1_000_000_007).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for (dims, n, k, t) in [(vec![2, 2], 5, 1, 1), (vec![2, 2], 6, 2, 1), (vec![2, 2, 1], 9, 2, 1)] {
        let arch = PinnArch::new(dims).unwrap();
        let cfg = CodingConfig::new(field.clone(), n, k, t, arch.grad_degree()).unwrap();
        let mut inst = CompositeInstance::random(&arch, &cfg, 2, 3, &mut rng);
        assert!(brute_force_composite_check(&arch, &cfg, &inst).unwrap());
        inst.corrupt = Some(1);
        assert!(!brute_force_composite_check(&arch, &cfg, &inst).unwrap());
    }
}

#[test]
fn eval_metrics_examples() {
    let field = FieldParams::from_u64(1_000_003).unwrap();
    let quant = QuantConfig::new(2, 0.0, field.clone()).unwrap();
    let arch = PinnArch::new(vec![2, 2]).unwrap();
    let ds = Dataset::new(Matrix::from_vec(4, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0]).unwrap(), vec![0, 1, 0, 1], 2).unwrap();
    let ident = PinnModel::from_flat(arch.clone(), field.clone(), [1, 0, 0, 1, 0, 0].iter().map(|&v| field.from_i64(v)).collect()).unwrap();
    assert_eq!(eval_metrics(&ident, &ds, &quant).unwrap(), (0.0, 1.0));
    let constant = PinnModel::from_flat(arch, Integers, vec![BigInt::zero(); 6]).unwrap();
    assert_eq!(eval_metrics(&constant, &ds, &quant).unwrap(), (1.0, 0.5));
}
