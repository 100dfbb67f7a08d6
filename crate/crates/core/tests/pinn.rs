use roughflow::autodiff::Activation;
use roughflow::grid::SolidMask;
use roughflow::lbm::{FieldSnapshot, CS2};
use roughflow::metrics::{self, rel_l2};
use roughflow::pinn::{
    predict_fields, sample_collocation, train, Architecture, LabeledDataset, ModelOptions, Phase,
    PinnModel, SamplingConfig, Scales, Strategy, TildeBox, TrainConfig,
};
use roughflow::rng::{stream_rng, uniform};

const NX: usize = 60;
const NY: usize = 22;

fn scales() -> Scales {
    Scales {
        length: (NY - 2) as f64,
        velocity: 0.04,
        outlet_pressure: CS2,
        reynolds: 8.0,
    }
}

/// Exact plane Poiseuille flow between the half-way walls of a smooth channel.
fn poiseuille(t: u64) -> FieldSnapshot {
    let s = scales();
    let h = s.length;
    let nu = s.velocity * h / s.reynolds;
    let umax = 1.5 * s.velocity;
    let grad = 8.0 * nu * umax / (h * h);
    let mut snap = FieldSnapshot::solid(NX, NY, t);
    for j in 1..NY - 1 {
        for i in 0..NX {
            let k = snap.index(i, j);
            let y = j as f64 - 0.5;
            snap.u[k] = 4.0 * umax * y * (h - y) / (h * h);
            snap.v[k] = 0.0;
            snap.p[k] = s.outlet_pressure + grad * (NX - 1 - i) as f64;
            snap.rho[k] = snap.p[k] / CS2;
        }
    }
    snap
}

fn model(
    layers: usize,
    width: usize,
    seed: u64,
    window: (f64, f64),
    data: &LabeledDataset,
) -> PinnModel {
    let s = scales();
    PinnModel::new(
        Architecture {
            hidden_layers: layers,
            hidden_width: width,
            activation: Activation::Tanh,
            init_seed: seed,
        },
        ModelOptions::default(),
        s,
        TildeBox::lattice(NX, NY, window.0, window.1, &s),
        data.output_stats(),
    )
    .unwrap()
}

#[test]
fn autodiff_vorticity_matches_finite_differences_of_predictions() {
    let mask = SolidMask::smooth_channel(NX, NY);
    let snaps = [poiseuille(100), poiseuille(200)];
    let data = LabeledDataset::from_snapshots(&snaps, &mask, &scales(), 200, 1).unwrap();
    let mut m = model(2, 12, 4, (100.0, 200.0), &data);
    let mut rng = stream_rng(4, 8);
    for l in 0..m.params.layer_count() {
        for b in m.params.biases_mut(l) {
            *b = uniform(&mut rng, -0.3, 0.3);
        }
    }
    let exact = metrics::model_vorticity(&m, &mask, 150).unwrap();
    let fd = metrics::vorticity(&predict_fields(&m, &mask, 150).unwrap());
    let scale = exact.max_abs();
    assert!(scale > 0.0);
    let mut worst: f64 = 0.0;
    for j in 2..NY - 2 {
        for i in 1..NX - 1 {
            worst = worst.max((exact.get(i, j) - fd.get(i, j)).abs());
        }
    }
    // Central differences on a lattice much finer than the net's features.
    assert!(worst < 1e-2 * scale, "worst {worst:e} vs max {scale:e}");
}

#[test]
fn training_fits_plane_poiseuille() {
    let mask = SolidMask::smooth_channel(NX, NY);
    let s = scales();
    let snaps = [poiseuille(1000), poiseuille(2000)];
    let window = (1000.0, 2000.0);
    let data = LabeledDataset::from_snapshots(&snaps, &mask, &s, 400, 2).unwrap();
    let colloc = sample_collocation(
        &mask,
        &s,
        window,
        Some(&snaps[0]),
        &SamplingConfig {
            strategy: Strategy::NearWallEnriched,
            n_points: 256,
            n_wall: 64,
            n_inlet: 16,
            n_outlet: 16,
            n_initial: 32,
            seed: 2,
            ..Default::default()
        },
    )
    .unwrap();
    let mut m = model(2, 16, 2, window, &data);
    let mut cfg = TrainConfig {
        adam_iters: 400,
        learning_rate: 3e-3,
        data_batch: 128,
        colloc_batch: 128,
        boundary_batch: 64,
        seed: 2,
        ..Default::default()
    };
    cfg.lbfgs.max_iters = 60;
    let r = train(&mut m, &data, &colloc, &cfg).unwrap();
    let first = r.history[0].loss.total;
    assert!(
        r.final_loss.total < 0.05 * first,
        "{first:e} -> {:e}",
        r.final_loss.total
    );
    let lbfgs: Vec<f64> = r
        .history
        .iter()
        .filter(|h| h.phase == Phase::Lbfgs)
        .map(|h| h.loss.total)
        .collect();
    assert!(!lbfgs.is_empty());
    assert!(
        lbfgs.windows(2).all(|w| w[1] <= w[0]),
        "L-BFGS loss went up"
    );

    let pred = predict_fields(&m, &mask, 1500).unwrap();
    let reference = poiseuille(1500);
    let e = rel_l2(&pred.u, &reference.u).unwrap();
    assert!(e < 0.1, "relL2(u) = {e}");
}
