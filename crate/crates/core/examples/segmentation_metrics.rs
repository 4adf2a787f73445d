//! Dice, object F1 and their average on a hand-made pair of masks.

use inqkit::harness::metrics::segmentation_scores;

fn main() -> inqkit::Result<()> {
    #[rustfmt::skip]
    let truth = [
        1, 1, 0, 0, 0, 0,
        1, 1, 0, 0, 1, 1,
        0, 0, 0, 0, 1, 1,
        0, 0, 0, 0, 0, 0,
    ];
    #[rustfmt::skip]
    let pred = [
        1, 1, 0, 0, 0, 0,
        1, 0, 0, 0, 0, 0,
        0, 0, 0, 0, 0, 1,
        0, 0, 1, 0, 0, 0,
    ];
    let s = segmentation_scores(&pred, &truth, 1, 4, 6)?;
    println!("dice {:.2}%, object F1 {:.2}%, average {:.2}%", s.dice, s.object_f1, s.seg_avg);
    Ok(())
}
