//! Level set of a weight tensor and what quantization does to a few values.

use inqkit::LevelSet;

fn main() -> inqkit::Result<()> {
    let weights = [0.9f32, -0.31, 0.12, 0.05, -0.02, 0.004, 0.0];
    for bits in [3, 5] {
        let ls = LevelSet::for_weights(&weights, bits, None)?;
        println!("{bits}-bit: exponents {}..={} ({} magnitudes)", ls.n2(), ls.n1(), ls.n1() - ls.n2() + 1);
        for &w in &weights {
            let q = ls.quantize(w)?;
            let code = ls.encode(q)?;
            println!("  {w:>7} -> {q:>9} code {:0width$b}", code.to_bits(bits), width = bits as usize);
        }
    }
    Ok(())
}
