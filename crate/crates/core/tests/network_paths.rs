//! The batched and single-sequence code paths must compute the same thing,
//! and the two precisions must agree.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tokenfix::net::*;
use tokenfix::vocab::Vocabulary;

fn random_seqs(rng: &mut ChaCha8Rng, n: usize, vocab: usize) -> Vec<Vec<u32>> {
    (0..n)
        .map(|k| {
            let len = 4 + (k * 5) % 9;
            (0..len).map(|_| rng.gen_range(0..vocab as u32)).collect()
        })
        .collect()
}

// Rollouts of 4 or more steps take the matrix-product path in both
// directions; the finite-difference check only sees short ones.
#[test]
fn batched_gradient_equals_sum_of_single_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let shape = NetShape {
        vocab: 20,
        embed: 5,
        hidden: 7,
        actions: 14,
    };
    let params: ModelParams<f64> = ModelParams::init(shape, &mut rng);
    let seqs = random_seqs(&mut rng, 9, shape.vocab);
    let refs: Vec<&[u32]> = seqs.iter().map(Vec::as_slice).collect();
    let batched = forward_batch(&params, &refs).unwrap();
    for (b, s) in batched.iter().zip(&seqs) {
        let one = forward(&params, s).unwrap();
        for (x, y) in b.policy().iter().zip(one.policy()) {
            assert!((x - y).abs() < 1e-14);
        }
        assert!((b.value() - one.value()).abs() < 1e-14);
    }

    let steps: Vec<Step<f64>> = batched
        .into_iter()
        .enumerate()
        .map(|(i, fwd)| Step {
            fwd,
            action: i % 14,
            reward: 0.1,
        })
        .collect();
    let targets: Vec<f64> = (0..steps.len()).map(|i| i as f64 * 0.1 - 0.3).collect();
    let mut together = params.zeros_like();
    let traj = Trajectory {
        steps: steps.clone(),
        bootstrap: 0.0,
    };
    loss_and_grads(&params, &traj, &targets, 0.01, &mut together).unwrap();
    let mut apart = params.zeros_like();
    for (s, &t) in steps.iter().zip(&targets) {
        let one = Trajectory {
            steps: vec![s.clone()],
            bootstrap: 0.0,
        };
        loss_and_grads(&params, &one, &[t], 0.01, &mut apart).unwrap();
    }
    for (name, r) in shape.groups() {
        for i in r {
            let scale = together[i].abs().max(apart[i].abs()).max(1e-12);
            assert!(
                (together[i] - apart[i]).abs() / scale < 1e-9,
                "{name}[{i}]: {} vs {}",
                together[i],
                apart[i]
            );
        }
    }
}

#[test]
fn single_precision_tracks_double() {
    let vocab = Vocabulary::builtin();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p64: ModelParams<f64> = ModelParams::init(NetShape::paper(vocab.len()), &mut rng);
    let p32: ModelParams<f32> = p64.cast();
    for ids in random_seqs(&mut rng, 6, vocab.len()) {
        let a = forward(&p64, &ids).unwrap();
        let b = forward(&p32, &ids).unwrap();
        for (x, y) in a.policy().iter().zip(b.policy()) {
            assert!((x - *y as f64).abs() < 1e-5, "{x} vs {y}");
        }
        for (x, y) in a.embedding().iter().zip(b.embedding()) {
            assert!((x - *y as f64).abs() < 1e-5, "{x} vs {y}");
        }
    }
}
