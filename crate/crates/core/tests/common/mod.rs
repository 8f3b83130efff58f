#![allow(dead_code)]

use twophase_core::data::{synthetic, Dataset, Pattern, Split, SplitFractions};

/// Balanced blobs; `separation` 1.0 is comfortably separable at 8×8.
pub fn blobs(classes: usize, samples: usize, channels: usize, size: usize, separation: f64, seed: u64) -> Dataset {
    let (x, y) = synthetic(Pattern::Blobs, classes, samples, channels, size, separation, seed).unwrap();
    Dataset::new(x, y, SplitFractions::default(), seed).unwrap()
}

pub fn small() -> Dataset {
    blobs(2, 200, 1, 8, 1.0, 1)
}

/// Multinomial logistic regression on raw pixels, trained on eval-train by
/// full-batch gradient descent; returns test accuracy.
pub fn linear_probe_accuracy(data: &Dataset, epochs: usize, lr: f64) -> f64 {
    let (c, h, w) = data.image_shape();
    let d = c * h * w;
    let k = data.classes;
    let xs = data.images.data();
    let mut wts = vec![0.0; d * k];
    let mut bias = vec![0.0; k];
    let train = data.split(Split::EvalTrain);
    let scores = |wts: &[f64], bias: &[f64], i: usize| -> Vec<f64> {
        let x = &xs[i * d..(i + 1) * d];
        (0..k).map(|j| bias[j] + (0..d).map(|p| x[p] * wts[p * k + j]).sum::<f64>()).collect()
    };
    for _ in 0..epochs {
        let mut gw = vec![0.0; d * k];
        let mut gb = vec![0.0; k];
        for &i in train {
            let s = scores(&wts, &bias, i);
            let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = s.iter().map(|v| (v - m).exp()).sum();
            let x = &xs[i * d..(i + 1) * d];
            for j in 0..k {
                let g = (s[j] - m).exp() / z - f64::from(u8::from(data.labels[i] == j));
                gb[j] += g;
                for p in 0..d {
                    gw[p * k + j] += g * x[p];
                }
            }
        }
        let n = train.len() as f64;
        wts.iter_mut().zip(&gw).for_each(|(w, g)| *w -= lr * g / n);
        bias.iter_mut().zip(&gb).for_each(|(b, g)| *b -= lr * g / n);
    }
    let test = data.split(Split::Test);
    let hits = test
        .iter()
        .filter(|&&i| {
            let s = scores(&wts, &bias, i);
            let best = (0..k).fold(0, |b, j| if s[j] > s[b] { j } else { b });
            best == data.labels[i]
        })
        .count();
    hits as f64 / test.len() as f64
}
