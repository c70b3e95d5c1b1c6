mod common;

use common::{random_tiny, rng};
use ptycho_core::sim::{generate_data, PhantomSpec, ProbeSpec, Scenario};
use ptycho_core::solvers::{run_wf, Algorithm, Problem, SolverConfig, SolverRun};
use ptycho_core::{ComplexImage, DiffractionStack, MaskRegion, PtychoOperator};

fn check_theory(op: &PtychoOperator, b: &DiffractionStack, start: &ComplexImage, horizon: usize) {
    let problem = Problem::new(op, b);
    // Gradients at f_0..f_T need T + 1 iterations.
    let run: SolverRun = run_wf(&problem, &SolverConfig::new(Algorithm::Wf, horizon + 1), start).unwrap();
    // Below this the loss is rounding noise and cannot be compared.
    let floor = b.data().len() as f64 * (f64::EPSILON * b.data().iter().copied().fold(0.0, f64::max)).powi(2);
    let costs: Vec<f64> = run
        .records
        .iter()
        .map(|r| r.cost.unwrap())
        .chain(run.final_cost)
        .collect();
    for w in costs.windows(2).map(|w| [w[0].max(floor), w[1].max(floor)]) {
        assert!(w[1] <= w[0] * (1.0 + 1e-12), "cost rose {} -> {}", w[0], w[1]);
    }
    let best = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let mu = op.fixed_step().unwrap();
    let min_grad_sqr = run
        .records
        .iter()
        .map(|r| r.grad_norm.unwrap().powi(2))
        .fold(f64::INFINITY, f64::min);
    let bound = (costs[0] - best) / (mu * (horizon as f64 + 1.0));
    assert!(min_grad_sqr <= bound, "T={horizon}: {min_grad_sqr} > {bound}");
}

#[test]
fn rate_bound_on_random_instances() {
    let mut r = rng(2024);
    for _ in 0..10 {
        let t = random_tiny(&mut r);
        let (w, h) = t.op.object_dims();
        let start = common::random_image(&mut r, w, h);
        for horizon in [50, 200] {
            check_theory(&t.op, &t.amplitudes, &start, horizon);
        }
    }
}

#[test]
fn rate_bound_on_simulated_chip() {
    let inst = Scenario {
        phantom: PhantomSpec::ic(32, 32, 3),
        probe: ProbeSpec {
            fwhm: 4.0,
            support: 10,
            frame: 16,
            amplitude: 1.0,
        },
        region: MaskRegion::new(8, 8, 16, 16),
        spacing: 2,
    }
    .build()
    .unwrap();
    let (_, b) = generate_data(&inst.op, &inst.object).unwrap();
    let start = ptycho_core::solvers::init_object(&inst.op);
    for horizon in [50, 200] {
        check_theory(&inst.op, &b, &start, horizon);
    }
}
