//! Scores predictions with multi-gold accuracy, binary F1 and four-way macro F1.

use idrr::data::metrics::{accuracy_multigold, f1_binary, macro_f1_4way, resolve_gold};

fn main() -> idrr::Result<()> {
    let pred = [0, 0, 0, 2, 3, 2, 3, 1];
    // the fourth instance carries two gold senses
    let gold = vec![vec![0], vec![0], vec![0], vec![1, 2], vec![3], vec![1], vec![1], vec![3]];
    let acc = accuracy_multigold(&pred, &gold)?;
    let single = resolve_gold(&pred, &gold);
    let macro_f1 = macro_f1_4way(&pred, &single);
    let binary = f1_binary(
        &pred.map(|p| usize::from(p == 0)),
        &single.iter().map(|&g| usize::from(g == 0)).collect::<Vec<_>>(),
    );
    println!("resolved gold {single:?}");
    println!("accuracy={acc:.4} macro_f1={macro_f1:.2} comparison_f1={binary:.2}");
    Ok(())
}
