use binctrl::smoother::{batch_posterior, smooth, InputPrior, ObsSpec};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use binctrl::model::LtiModel;

fn main() {
    let mut worst_overall: f64 = 0.0;
    for seed in 0..40u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed * 7919 + 13);
        let mut worst: f64 = 0.0;
        for _ in 0..120 {
            let n = rng.gen_range(1..=4);
            let l = rng.gen_range(1..=2);
            let k = rng.gen_range(1..=30);
            let scale = rng.gen_range(0.3..1.08);
            let a = DMatrix::<f64>::from_fn(n, n, |_, _| scale * rng.gen_range(-1.0..1.0));
            let b = DVector::<f64>::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
            let c = DMatrix::<f64>::from_fn(l, n, |_, _| rng.gen_range(-1.0..1.0));
            let d = DVector::<f64>::from_fn(n, |_, _| rng.gen_range(-0.3..0.3));
            let x0 = DVector::<f64>::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
            let model = LtiModel::new(a, b, c, d, x0).unwrap();
            let values: Vec<DVector<f64>> = (0..k).map(|_| DVector::from_fn(l, |_, _| rng.gen_range(-2.0..2.0))).collect();
            let weights: Vec<f64> = (0..k).map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.1..3.0) }).collect();
            let s2: f64 = rng.gen_range(0.01..2.0);
            let r = weights.iter().map(|&w| if w > 0.0 { Some(s2 / w) } else { None }).collect();
            let obs = ObsSpec { y: values, r };
            let prior = InputPrior::new(
                (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                (0..k).map(|_| rng.gen_range(0.05..4.0)).collect(),
            ).unwrap();
            let fast = smooth(&model, &obs, &prior).unwrap();
            let dense = batch_posterior(&model, &obs, &prior).unwrap();
            for kk in 0..k {
                let em = (fast.u_hat[kk] - dense.u_hat[kk]).abs() / (1.0 + dense.u_hat[kk].abs());
                let ev = (fast.v_u[kk] - dense.v_u[kk]).abs() / (1.0 + dense.v_u[kk].abs());
                worst = worst.max(em).max(ev);
            }
        }
        worst_overall = worst_overall.max(worst);
        if worst > 5e-9 { println!("seed {seed}: worst {worst:.2e}"); }
    }
    println!("40 seeds x 120 instances: worst rel err {worst_overall:.2e}");
}
