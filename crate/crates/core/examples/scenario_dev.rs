//! Development shakedown of the pitch scenarios: prints the summary
//! quantities the acceptance criteria look at.

use nalgebra::{DMatrix, DVector};
use safe_adapt_core::barriers::{BarrierSpec, TighteningData};
use safe_adapt_core::geodesics::{GeodesicOpts, GeodesicWorkspace};
use safe_adapt_core::metrics::shipped;
use safe_adapt_core::safeloop::{
    BarrierMethod, ControllerState, SafetyController, SmidSettings,
};
use safe_adapt_core::smid::ParameterBox;
use safe_adapt_core::sysmodel::{integrate, make_desired_motion, pitch_plant};

fn run(scenario: &str, method: BarrierMethod, horizon: f64) {
    let dt = 1e-3;
    let sys = pitch_plant();
    let theta_true = DVector::from_column_slice(&[0.2, -1.0]);
    let (metric, q_m, barrier, x0, lambda) = match scenario {
        "immelmann" => {
            let q_m = 50f64.to_radians();
            (
                shipped::scenario1_metric(),
                q_m,
                BarrierSpec::pitch_rate_ceiling(q_m, 10.0, 2),
                DVector::zeros(3),
                shipped::SCENARIO1_LAMBDA,
            )
        }
        _ => {
            let q_m = 20f64.to_radians();
            (
                shipped::scenario2_metric(),
                q_m,
                BarrierSpec::pitch_rate_symmetric(q_m, 10.0, 2),
                DVector::from_column_slice(&[-20f64.to_radians(), 0.0, 0.0]),
                shipped::SCENARIO2_LAMBDA,
            )
        }
    };
    let motion = make_desired_motion(scenario).unwrap();
    let state = ControllerState {
        theta_hat_c: DVector::from_column_slice(&[0.45, -1.0]),
        theta_hat_b: DVector::from_column_slice(&[0.45, -1.0]),
        param_box: ParameterBox::pitch_default(),
        vartheta: DVector::from_column_slice(&[0.7, 4.0]),
        freeze_c: false,
        slack_weight: 1e3,
        lambda,
        gamma_c: DMatrix::identity(2, 2) * 50.0,
        gamma_b: DMatrix::identity(2, 2) * 20.0,
    };
    let sigma = if scenario == "immelmann" { 0.1 * q_m } else { 0.1 };
    let mut ctl = SafetyController::new(
        method,
        state,
        sys.clone(),
        barrier.clone(),
        sigma,
        Some(metric),
        Some(motion),
        GeodesicWorkspace::new(GeodesicOpts::default()),
        SmidSettings::default(),
        dt,
    )
    .unwrap();
    let start = std::time::Instant::now();
    let trace = match integrate(&sys, &mut ctl, x0, &theta_true, horizon, dt) {
        Ok(t) => t,
        Err(e) => {
            println!("{scenario} {method:?}: FAILED {e}");
            return;
        }
    };
    let wall = start.elapsed().as_secs_f64();
    let q_max = trace.states.iter().map(|x| x[2]).fold(f64::MIN, f64::max);
    let q_absmax = trace.states.iter().map(|x| x[2].abs()).fold(0.0, f64::max);
    let util =
        if scenario == "immelmann" { q_max / q_m } else { q_absmax / q_m };
    let h_min = trace.logs.iter().map(|l| l.barrier).fold(f64::MAX, f64::min);
    // Margin track (only meaningful for fixed bounds).
    let tight = TighteningData::isotropic(
        20.0,
        DVector::from_column_slice(&[0.7, 4.0]),
    )
    .unwrap();
    let h_minus_margin = trace
        .logs
        .iter()
        .map(|l| l.barrier - tight.margin())
        .fold(f64::MAX, f64::min);
    let last = trace.logs.last().unwrap();
    let red_k = (0.7 - (last.box_hi[0] - last.box_lo[0])) / 0.7;
    let red_l = (4.0 - (last.box_hi[1] - last.box_lo[1])) / 4.0;
    // Chatter switches.
    let u: Vec<f64> = trace.inputs.iter().map(|u| u[0]).collect();
    let u_inf = u.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let band = 0.05 * u_inf;
    let mut switches = 0usize;
    let mut dir = 0i8;
    for w in u.windows(2) {
        let du = w[1] - w[0];
        if du.abs() > band {
            let s = if du > 0.0 { 1 } else { -1 };
            if dir != 0 && s != dir {
                switches += 1;
            }
            dir = s;
        }
    }
    let alpha_max = trace.states.iter().map(|x| x[1]).fold(f64::MIN, f64::max);
    let eps_max = trace.logs.iter().map(|l| l.slack).fold(0.0f64, f64::max);
    let nlp: f64 = trace.logs.iter().map(|l| l.nlp_seconds).sum();
    let qp: f64 = trace.logs.iter().map(|l| l.qp_seconds).sum();
    let lp: f64 = trace.logs.iter().map(|l| l.lp_seconds).sum();
    println!(
        "{scenario:<10} {method:?}: wall {wall:6.1}s util {util:5.3} h_min {h_min:+.4e} \
         (h-margin)_min {h_minus_margin:+.3e} red=({red_k:.3},{red_l:.3}) switches {switches} \
         alpha_max {:5.1} deg eps_max {eps_max:.2e} t(nlp/qp/lp) {nlp:.1}/{qp:.1}/{lp:.1}s",
        alpha_max.to_degrees()
    );
}

fn main() {
    for method in [BarrierMethod::ModifiedAcbf, BarrierMethod::Racbf, BarrierMethod::RacbfSmid] {
        run("immelmann", method, 10.0);
    }
    for method in [BarrierMethod::ModifiedAcbf, BarrierMethod::Racbf, BarrierMethod::RacbfSmid] {
        run("sine_tracking", method, 12.0);
    }
}
