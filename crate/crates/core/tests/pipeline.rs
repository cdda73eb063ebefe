use kforge::backstep::{
    build_srclf, feedback_law, synthesize, verify_master_inequality, Manifest, Overrides, SynthesisOptions, TriangularSpec,
};
use kforge::lyapunov::{certify_decay, DecayMode};
use kforge::sim::{integrate_with, make_disturbance, random_history, IntegrateOptions, Scheme};
use kforge::History;

fn reference() -> (TriangularSpec, kforge::backstep::SynthesisResult) {
    let spec = TriangularSpec::reference_system(0.1, 1.0);
    let res = synthesize(&spec, &Overrides::default(), &SynthesisOptions::default()).unwrap();
    (spec, res)
}

#[test]
fn synthesize_simulate_certify() {
    let (spec, res) = reference();
    assert!(verify_master_inequality(&res, 2, 2000, -3.0, 3.0).pass);
    let law = feedback_law(&res);
    let f = spec.rfde().unwrap();
    let v = build_srclf(&res);
    for seed in [100, 101] {
        let x0 = random_history(seed, 1.0, 128, 2, 2.0).unwrap();
        let d = make_disturbance(seed, 0.25, &spec.disturbance_box, 0.0, 5.0).unwrap();
        let tr = integrate_with(&f, &x0, &d, law.as_feedback(), 0.0, 5.0, 1.0 / 128.0, IntegrateOptions::with_scheme(Scheme::Sdirk2))
            .unwrap();
        assert!(tr.status.is_completed());
        let rep = certify_decay(&tr, &v, &DecayMode::Exponential { sigma: 0.1 }, 1e-3).unwrap();
        assert!(rep.pass, "seed {seed}: {rep:?}");
    }
}

#[test]
fn zero_history_stays_at_rest() {
    let (spec, res) = reference();
    let law = feedback_law(&res);
    let x0 = History::zeros(1.0, 128, 2).unwrap();
    let d = make_disturbance(3, 0.25, &spec.disturbance_box, 0.0, 2.0).unwrap();
    let tr = integrate_with(&spec.rfde().unwrap(), &x0, &d, law.as_feedback(), 0.0, 2.0, 1.0 / 128.0, IntegrateOptions::with_scheme(Scheme::Sdirk2))
        .unwrap();
    let rep = certify_decay(&tr, &build_srclf(&res), &DecayMode::Exponential { sigma: 0.1 }, 1e-3).unwrap();
    assert!(rep.pass);
    assert!(rep.values.iter().all(|&v| v == 0.0));
}

#[test]
fn manifest_survives_json() {
    let (_, res) = reference();
    let m = res.manifest(5.0, 5.0, 41);
    let text = serde_json::to_string(&m).unwrap();
    let back: Manifest = serde_json::from_str(&text).unwrap();
    assert_eq!(back, m);
    let again = back.result.manifest(5.0, 5.0, 41);
    assert_eq!(again.mu1, m.mu1);
}

#[test]
fn single_precision_simulation() {
    let spec = kforge::sim::GeneralRfdeSpec::<f32>::new(1, 1.0, |_, _, x, _, out| {
        out[0] = -x.newest()[0];
        Ok(())
    });
    let x0 = kforge::history::HistorySegment::<f32>::constant(1.0, 64, &[1.0]).unwrap();
    let d = kforge::sim::DisturbanceSignal::zero(0, 1.0 / 64.0);
    let tr = kforge::sim::integrate(&spec, &x0, &d, |_, _| vec![], 0.0, 1.0, 1.0 / 64.0).unwrap();
    assert!((tr.final_state()[0] - (-1.0f32).exp()).abs() < 1e-5);
}
