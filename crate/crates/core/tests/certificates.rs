//! Certificates must be borne out by the dynamics: decay-certified probes
//! keep decaying, blowup-certified probes reach the cap.

use kgdelta::evolution::ExitReason;
use kgdelta::experiments::{bisect_threshold, confirm_decay, Classification, ShootOptions};
use kgdelta::{make_grid, PhysParams};

#[test]
fn decay_certificates_are_confirmed_by_continued_evolution() {
    let params = PhysParams::new(3.0, 1.0, -1.0).unwrap();
    let grid = make_grid(40.0, 1601).unwrap();
    let mut o = ShootOptions::new(0, 5.0, 0.025);
    o.tol = 1e-4;
    o.classify.t_max = 100.0;
    let r = bisect_threshold(&params, &grid, &o).unwrap();
    let decays: Vec<_> = r.probes.iter().filter(|p| p.outcome.classification == Classification::Decays).collect();
    assert!(decays.len() >= 5, "only {} decaying probes", decays.len());
    for p in decays.iter().rev().take(5) {
        let norm = confirm_decay(&p.outcome, &params, &grid, 0.025, 20.0).unwrap();
        assert!(norm < 1e-3, "lambda = {}: norm {norm:e} after 20 more time units", p.lambda);
    }
    for p in r.probes.iter().filter(|p| p.outcome.classification == Classification::BlowsUp) {
        assert!(
            matches!(p.outcome.summary.exit, ExitReason::BlowupCap | ExitReason::NonFinite),
            "lambda = {}: exit {}",
            p.lambda,
            p.outcome.summary.exit.label()
        );
    }
}
