//! Finite-difference check of a conv -> norm -> relu -> Dice+CE chain in f64.
//!
//!     cargo run --release --example gradcheck

use hnseg::autodiff::{BatchNormMode, Tape, Tensor};
use hnseg::loss::{dice_ce, LabelTensor, LossConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn loss(x: &Tensor<f64>, w: &Tensor<f64>, labels: &LabelTensor, grads: bool) -> (f64, Option<Vec<f64>>) {
    let mut tape = Tape::<f64>::new();
    let xv = tape.constant(x.clone());
    let wv = tape.leaf(w.clone(), true);
    let gamma = tape.constant(Tensor::full(vec![3], 1.0));
    let beta = tape.constant(Tensor::zeros(vec![3]));
    let y = tape.conv3d(xv, wv, None, 1, 1).unwrap();
    let (y, _) = tape.batch_norm(y, gamma, beta, BatchNormMode::Train { eps: 1e-5 }).unwrap();
    let y = tape.relu(y);
    let (l, _) = dice_ce(&mut tape, y, labels, &LossConfig::default()).unwrap();
    let value = tape.value(l).data()[0];
    if !grads {
        return (value, None);
    }
    tape.backward(l).unwrap();
    (value, Some(tape.grad(wv).unwrap().to_vec()))
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random(&[2, 2, 4, 4, 4], &mut rng);
    let w = random(&[3, 2, 3, 3, 3], &mut rng);
    let labels = LabelTensor {
        shape: [2, 4, 4, 4],
        data: (0..128).map(|_| rng.random_range(0..3u8)).collect(),
    };
    let (value, g) = loss(&x, &w, &labels, true);
    let g = g.unwrap();
    let h = 1e-6;
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for i in 0..w.numel() {
        let mut plus = w.clone();
        plus.data_mut()[i] += h;
        let mut minus = w.clone();
        minus.data_mut()[i] -= h;
        let fd = (loss(&x, &plus, &labels, false).0 - loss(&x, &minus, &labels, false).0) / (2.0 * h);
        num += (fd - g[i]).powi(2);
        den += g[i].powi(2);
    }
    println!("loss {value:.6}, {} weights, relative gradient error {:.2e}", w.numel(), (num / den).sqrt());
}
