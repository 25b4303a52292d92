//! Finite-difference checks for every differentiable op, at 64-bit and 32-bit
//! storage, across several random seeds.

mod support;

use rand::SeedableRng;
use support::probes::{check_desk_net, check_op, KINDS};
use umamba_core::autodiff::{Tape, Var};
use umamba_core::error::Result;
use umamba_core::gradcheck::random_tensor;
use umamba_core::mamba::MambaLayer;
use umamba_core::{Scalar, Tensor};

fn run_all<T: Scalar>(tol: f64, step: f64, seeds: u64) {
    for kind in KINDS {
        for seed in 0..seeds {
            let report = check_op::<T>(kind, seed, step);
            assert!(report.passes(tol), "{kind:?} seed {seed} ({}): {report:?}", T::DTYPE);
        }
    }
}

#[test]
fn every_op_matches_finite_differences_f64() {
    run_all::<f64>(1e-5, 1e-6, 5);
}

#[test]
fn every_op_matches_finite_differences_f32() {
    run_all::<f32>(1e-3, 1e-5, 5);
}

#[test]
fn mamba_layer_gradient_tiny_config() {
    use umamba_core::autodiff::ParamStore;
    use umamba_core::gradcheck::{check_params, ParamProbe};
    use umamba_core::init::InitRng;
    use umamba_core::mamba::MambaConfig;

    struct LayerProbe {
        layer: MambaLayer,
        x: Tensor<f64>,
        w: Tensor<f64>,
    }
    impl ParamProbe for LayerProbe {
        fn loss<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>) -> Result<Var> {
            let x = tape.constant(self.x.cast());
            let y = self.layer.forward(tape, store, x)?;
            let w = tape.constant(self.w.cast());
            let p = tape.mul(y, w)?;
            Ok(tape.sum(p))
        }
    }
    for seed in 0..4 {
        let mut store = ParamStore::<f64>::new();
        let mut rng = InitRng::seed_from_u64(seed);
        let cfg = MambaConfig { expand: 2, state_size: 2, conv_kernel: 4, dt_rank: None };
        let layer = MambaLayer::build(&mut store, "m", 4, cfg, &mut rng);
        let x = random_tensor(&[1, 4, 2, 2, 2], 1.0, &mut rng);
        let w = random_tensor(&[1, 4, 2, 2, 2], 1.0, &mut rng);
        let probe = LayerProbe { layer, x, w };
        let r64 = check_params::<f64, _>(&probe, &store, 1e-6, 6, seed).unwrap();
        assert!(r64.passes(1e-5), "{r64:?}");
        let r32 = check_params::<f32, _>(&probe, &store, 1e-5, 6, seed).unwrap();
        assert!(r32.passes(1e-3), "{r32:?}");
    }
}

#[test]
fn desk_network_gradient() {
    for seed in 0..2 {
        let r = check_desk_net::<f32>(seed, 2);
        assert!(r.passes(1e-3), "seed {seed}: {r:?}");
    }
}
