//! Decomposes a chirp with the Haar and Daubechies-4 banks, prints the energy
//! in each band and the reconstruction error.
//!
//! `cargo run --release --example fwt_roundtrip -- [n] [levels]`

use wavegru::fwt::{analyze_signal, band_sizes, synthesize_signal, FilterBank};

fn main() -> wavegru::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n: usize = args.first().and_then(|s| s.parse().ok()).unwrap_or(256);
    let levels: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(4);

    let x: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / n as f64;
            (2.0 * std::f64::consts::PI * (4.0 + 40.0 * t) * t).sin()
        })
        .collect();

    let s3 = 3f64.sqrt();
    let norm = 4.0 * 2f64.sqrt();
    let db4 = FilterBank::orthogonal(vec![(1.0 + s3) / norm, (3.0 + s3) / norm, (3.0 - s3) / norm, (1.0 - s3) / norm])?;

    println!("bands (coarse to fine): {:?}", band_sizes(n, levels));
    for (name, fb) in [("haar", FilterBank::haar()), ("db4", db4)] {
        let p = analyze_signal(&x, &fb, levels)?;
        let energy: Vec<String> =
            p.flat_order().iter().map(|band| format!("{:.2}", band.iter().map(|v| v * v).sum::<f64>())).collect();
        let y = synthesize_signal(&p, &fb)?;
        let err = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        println!("{name:>4}: band energy [{}]  max reconstruction error {err:.2e}", energy.join(", "));
    }
    Ok(())
}
