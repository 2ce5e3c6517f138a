//! Confusion-matrix recomputation of the evaluation metrics in exact integer
//! arithmetic, rounded to `f64` once per quantity.

use idrr::data::metrics::{accuracy_multigold, f1_binary, macro_f1_4way};
use rand::Rng;

use super::rng;

fn gcd(a: u128, b: u128) -> u128 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// `confusion[g][p]` counts instances with gold `g` predicted as `p`.
pub fn confusion(pred: &[usize], gold: &[usize], k: usize) -> Vec<Vec<u128>> {
    let mut m = vec![vec![0u128; k]; k];
    for (&p, &g) in pred.iter().zip(gold) {
        m[g][p] += 1;
    }
    m
}

/// `2PR/(P+R)` in percent for `class`, from precision and recall as reduced
/// fractions; 0 when either is undefined or zero.
pub fn class_f1(m: &[Vec<u128>], class: usize) -> f64 {
    let tp = m[class][class];
    let predicted: u128 = m.iter().map(|row| row[class]).sum();
    let actual: u128 = m[class].iter().sum();
    if tp == 0 || predicted == 0 || actual == 0 {
        return 0.0;
    }
    // P = tp/predicted, R = tp/actual
    // 2PR/(P+R) = 2·tp² / (tp·actual + tp·predicted)
    let num = 2 * tp * tp;
    let den = tp * actual + tp * predicted;
    let g = gcd(num, den);
    (100 * (num / g)) as f64 / (den / g) as f64
}

pub fn accuracy(pred: &[usize], gold: &[Vec<usize>]) -> f64 {
    let hits = pred.iter().zip(gold).filter(|(p, g)| g.iter().any(|x| x == *p)).count();
    hits as f64 / pred.len() as f64
}

pub fn macro_f1(pred: &[usize], gold: &[usize], k: usize) -> f64 {
    let m = confusion(pred, gold, k);
    let mut sum = 0.0;
    for c in 0..k {
        sum += class_f1(&m, c);
    }
    sum / k as f64
}

/// Checks all three metrics on `n` random sets, bit for bit.
pub fn compare(n: u64) -> Result<(), String> {
    for seed in 0..n {
        let mut r = rng(10_000 + seed);
        let len = r.gen_range(1..=40);
        let pred: Vec<usize> = (0..len).map(|_| r.gen_range(0..4)).collect();
        let gold: Vec<usize> = (0..len).map(|_| r.gen_range(0..4)).collect();
        let multi: Vec<Vec<usize>> = gold
            .iter()
            .map(|&g| {
                let mut set = vec![g];
                if r.gen_bool(0.2) {
                    set.push(r.gen_range(0..11));
                }
                set
            })
            .collect();
        let bin_pred: Vec<usize> = pred.iter().map(|p| p % 2).collect();
        let bin_gold: Vec<usize> = gold.iter().map(|g| g % 2).collect();

        let acc = accuracy_multigold(&pred, &multi).map_err(|e| e.to_string())?;
        let checks = [
            ("accuracy_multigold", acc, accuracy(&pred, &multi)),
            (
                "f1_binary",
                f1_binary(&bin_pred, &bin_gold),
                class_f1(&confusion(&bin_pred, &bin_gold, 2), 1),
            ),
            ("macro_f1_4way", macro_f1_4way(&pred, &gold), macro_f1(&pred, &gold, 4)),
        ];
        for (name, got, want) in checks {
            if got.to_bits() != want.to_bits() {
                return Err(format!("set {seed}: {name} {got:?} vs oracle {want:?}"));
            }
        }
    }
    Ok(())
}
