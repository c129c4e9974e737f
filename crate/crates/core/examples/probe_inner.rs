//! Scratch probe: inner-loss and W2 behavior of the FA solver across inner
//! budgets on the 1-D Gaussian target.

use rand_distr::{Distribution, StandardNormal};
use wpcg::diagnostics::{foc_residual, materialize_reference};
use wpcg::kde::KdeConfig;
use wpcg::model::{BlockState, ParticleEnsemble};
use wpcg::problems::gaussian_mfvi_problem;
use wpcg::steps::{fa_block_step, FaConfig, TransportMapModel};
use wpcg::{rng, w2_1d};

fn main() {
    let problem = gaussian_mfvi_problem(&[1], &[1.0]).unwrap();
    let tau = 0.2;
    let b = 500;
    let outer = 30;
    let reference =
        materialize_reference(problem.analytic_blocks.as_ref().unwrap(), b, 1010).unwrap();
    let kde = KdeConfig::silverman();
    for budget in [5usize, 50, 200, 500] {
        let fa = FaConfig {
            hidden_widths: vec![8],
            inner_iterations: budget,
            ..Default::default()
        };
        let mut init_stream = rng::stream(1000, 0);
        let rows: Vec<Vec<f64>> = (0..b)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut init_stream);
                vec![3.0 * z]
            })
            .collect();
        let start = ParticleEnsemble::from_rows(&rows).unwrap();
        let mut stream = rng::block_stream(1100, 0);
        let mut state = BlockState::new(vec![start]).unwrap();
        let mut warm: Option<TransportMapModel> = None;
        let mut prev = state.clone();
        let mut last_loss = 0.0;
        for k in 0..outer {
            prev = state.clone();
            let (pushed, model, loss) =
                fa_block_step(&problem, &state, 0, tau, &fa, warm.as_ref(), 1, &mut stream)
                    .unwrap();
            state = state.with_block(0, pushed);
            warm = Some(model);
            last_loss = loss;
            if k == outer - 1 {
                let d = w2_1d(state.block(0), reference.block(0)).unwrap();
                let res = foc_residual(&problem, &prev, &state, 0, tau, &kde).unwrap();
                let var = state.block(0).variance()[0];
                println!(
                    "budget {budget:4}: final inner loss {loss:.6}, w2sq {:.6}, foc {:.5}, var {var:.4}",
                    d * d,
                    res.norm
                );
            }
        }
        let _ = (prev, last_loss);
    }
}
