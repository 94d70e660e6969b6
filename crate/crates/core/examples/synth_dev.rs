//! Development driver for the metric search: prints stage progress and the
//! final coefficients for the two pitch scenarios.

use nalgebra::DVector;
use safe_adapt_core::metrics::{pitch_grid, pitch_grid_rect, synthesize_quadratic_metric, verify_ccm, SynthesisOpts};
use safe_adapt_core::smid::ParameterBox;
use safe_adapt_core::sysmodel::pitch_plant;

fn show(name: &str, fam: &safe_adapt_core::metrics::MetricFamily) {
    let th = DVector::zeros(2);
    // Recover coefficients by evaluating the known quadratic at alpha = 0, +-1.
    let x0 = DVector::from_column_slice(&[0.0, 0.0, 0.0]);
    let x1 = DVector::from_column_slice(&[0.0, 1.0, 0.0]);
    let xm1 = DVector::from_column_slice(&[0.0, -1.0, 0.0]);
    let w0 = fam.eval_w(&x0, &th);
    let wp = fam.eval_w(&x1, &th);
    let wm = fam.eval_w(&xm1, &th);
    let w1 = (&wp - &wm) * 0.5;
    let w2 = (&wp + &wm) * 0.5 - &w0;
    println!("=== {name} (lambda = {}) ===", fam.lambda);
    for (label, m) in [("W0", w0), ("W1", w1), ("W2", w2)] {
        print!("{label} = [");
        for i in 0..3 {
            for j in 0..3 {
                print!("{:.12e}, ", if m[(i, j)].abs() < 1e-12 { 0.0 } else { m[(i, j)] });
            }
        }
        println!("]");
    }
}

fn main() {
    let sys = pitch_plant();
    let vertices = ParameterBox::pitch_default().vertices();
    let deg = std::f64::consts::PI / 180.0;

    let t0 = std::time::Instant::now();
    let grid1 = pitch_grid_rect((-5.0 * deg, 50.0 * deg), (-10.0 * deg, 40.0 * deg), 25, 2);
    let opts1 = SynthesisOpts { budget: 150_000, seed: 3, ..Default::default() };
    match synthesize_quadratic_metric(&sys, &grid1, &vertices, 0.35, &opts1) {
        Ok(fam) => {
            let dense = pitch_grid((-5.0 * deg, 50.0 * deg), (-10.0 * deg, 40.0 * deg), 25);
            let rep = verify_ccm(&fam, &sys, &dense, &vertices);
            println!(
                "scenario1 band: C1 worst {:.3e}, C2 {:.3e}, pass {} ({:.1?})",
                rep.c1_worst_eig,
                rep.c2_worst_residual,
                rep.pass(),
                t0.elapsed()
            );
            show("scenario1", &fam);
        }
        Err(e) => println!("scenario1 band failed: {e} ({:.1?})", t0.elapsed()),
    }

    let t0 = std::time::Instant::now();
    let grid2 = pitch_grid_rect((-60.0 * deg, 60.0 * deg), (-20.0 * deg, 20.0 * deg), 25, 2);
    let opts2 = SynthesisOpts { budget: 400_000, seed: 5, ..Default::default() };
    match synthesize_quadratic_metric(&sys, &grid2, &vertices, 0.5, &opts2) {
        Ok(fam) => {
            let dense2 = pitch_grid((-60.0 * deg, 60.0 * deg), (-20.0 * deg, 20.0 * deg), 25);
            let rep = verify_ccm(&fam, &sys, &dense2, &vertices);
            println!(
                "scenario2: C1 worst {:.3e}, C2 {:.3e}, pass {} ({:.1?})",
                rep.c1_worst_eig,
                rep.c2_worst_residual,
                rep.pass(),
                t0.elapsed()
            );
            show("scenario2", &fam);
        }
        Err(e) => println!("scenario2 failed: {e} ({:.1?})", t0.elapsed()),
    }
}
