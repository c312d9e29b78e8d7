use dam_core::*;
use dam_core::Rng;
use proptest::prelude::*;

/// Draws `beta` uniformly in `[-k, 0]`, resampling while `n * beta / k`
/// sits within 1e-9 of an integer.
fn draw_beta(rng: &mut Rng, n: usize, k: f64) -> f64 {
    loop {
        let beta = rng.uniform(-k, 0.0);
        let x = n as f64 * beta / k;
        if (x - x.round()).abs() > 1e-9 {
            return beta;
        }
    }
}

#[test]
fn exact_l0_identity_on_random_tuples() {
    let mut rng = Rng::new(2024);
    for _ in 0..1000 {
        let n = 1 + rng.below(512);
        let k = [1.0, 5.0, 10.0][rng.below(3)];
        let alpha = [0.5, 1.0, 2.0][rng.below(3)];
        let beta = draw_beta(&mut rng, n, k);
        let gate = DamGate::new(n, k, alpha, beta).unwrap();
        let positive = gate.gate_values().iter().filter(|&&g| g > 0.0).count();
        let closed = (n as f64 * (1.0 + beta / k)).ceil() as usize;
        assert_eq!(positive, closed, "n={n} k={k} alpha={alpha} beta={beta}");
        assert_eq!(gate.l0_exact(), closed);
    }
}

proptest! {
    #[test]
    fn gates_are_monotone(n in 1usize..200, k in 0.5f64..10.0, alpha in 0.1f64..5.0,
                          beta in -12.0f64..3.0, drop in 0.0f64..2.0) {
        let g = DamGate::new(n, k, alpha, beta).unwrap();
        let lower = DamGate::new(n, k, alpha, beta - drop).unwrap();
        let v = g.gate_values();
        let w = lower.gate_values();
        prop_assert!(v.windows(2).all(|p| p[0] <= p[1]));
        prop_assert!(v.iter().all(|&x| (0.0..=1.0).contains(&x)));
        prop_assert!(v.iter().zip(&w).all(|(a, b)| b <= a));
        prop_assert!(lower.l0_exact() <= g.l0_exact());
        let classes = g.classify_neurons(1e-3);
        for (c, x) in classes.iter().zip(&v) {
            prop_assert_eq!(*c == NeuronClass::Deactivated, *x == 0.0);
        }
    }

    #[test]
    fn closed_columns_are_exactly_zero(seed in any::<u64>(), n in 1usize..40, beta in -5.0f64..0.5) {
        let mut rng = Rng::new(seed);
        let mut gate = DamGate::new(n, 5.0, 1.0, beta).unwrap();
        gate.permute_ordering(&mut rng);
        let h = Tensor::from_vec(3, n, (0..3 * n).map(|_| rng.normal() * 10.0).collect()).unwrap();
        let up = Tensor::from_vec(3, n, (0..3 * n).map(|_| rng.normal()).collect()).unwrap();
        let o = gate.forward(&h).unwrap();
        let gh = gate.backward(&up).unwrap();
        let g = gate.gate_values();
        for j in 0..n {
            if g[j] == 0.0 {
                for r in 0..3 {
                    prop_assert_eq!(o.get(r, j).to_bits(), 0f64.to_bits());
                    prop_assert_eq!(gh.get(r, j).to_bits(), 0f64.to_bits());
                }
                prop_assert_eq!(gate.last_q()[j], 0.0);
            }
        }
        // Permuting the ordering never changes how many neurons survive.
        prop_assert_eq!(gate.l0_exact(), l0_closed_form(n, 5.0, beta));
    }
}

#[test]
fn frozen_offset_survives_nonzero_gradient() {
    let mut net = Network::new(vec![Layer::Gate(DamGate::new(4, 5.0, 1.0, 1.0).unwrap())]);
    net.set_gates_frozen(true);
    let mut opt = Optimizer::sgd(0.5, 0.9, 1e-3);
    let x = Tensor::row_vector(&[1.0, -1.0, 2.0, 0.5]);
    for _ in 0..3 {
        net.zero_grad();
        let out = net.forward(&x).unwrap();
        net.backward(&out).unwrap();
        let p = regularizer(&net.gates().collect::<Vec<_>>(), 0.5, RegMode::SingleGate).unwrap();
        assert_eq!(p.beta_grads, vec![0.0]);
        assert!(net.gates().next().unwrap().grad_beta() != 0.0);
        opt.step(&mut net).unwrap();
    }
    assert_eq!(net.gates().next().unwrap().beta.to_bits(), 1f64.to_bits());
}
