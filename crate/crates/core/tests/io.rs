use lpc_core::drlpc::{ActorCriticState, BasisSpec};
use lpc_core::harness::{offline_design, ControllerKind, EpisodeTrace, ExperimentConfig, PlantKind, StepBranch, StepRecord, TraceStatus};
use lpc_core::io::{
    from_json, read_json, read_long_csv, read_trace_csv, to_json, trace_long_rows, write_json, write_long_csv, write_trace_csv,
    BundleRecord, WeightCheckpoint,
};
use lpc_core::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const BRANCHES: [StepBranch; 6] =
    [StepBranch::Learned, StepBranch::Backup, StepBranch::Recovery, StepBranch::Qp, StepBranch::Shifted, StepBranch::Baseline];

fn trace(seed: u64, values: &[(f64, f64, f64, f64)]) -> EpisodeTrace {
    let steps = values
        .iter()
        .enumerate()
        .map(|(k, &(x0, x1, u, v_b))| StepRecord {
            k,
            x: vec![x0, x1],
            u: vec![u],
            v_b,
            branch: BRANCHES[k % BRANCHES.len()],
            safe: k % 2 == 0,
            saturated: false,
            violation: k % 3 == 0,
            step_time_s: 1e-6 * (k as f64 + 0.5),
        })
        .collect();
    EpisodeTrace {
        seed,
        controller: ControllerKind::Drlpc,
        steps,
        status: TraceStatus::Success,
        no_safe_policy: false,
        actor_residuals: Vec::new(),
    }
}

#[test]
fn baseline_cost_survives_as_nan() {
    let dir = tempfile::tempdir().unwrap();
    let t = trace(4, &[(0.1, 0.2, 0.3, f64::NAN)]);
    let path = write_trace_csv(dir.path(), &t).unwrap();
    let back = read_trace_csv(&path).unwrap();
    assert!(back[0].v_b.is_nan());
}

#[test]
fn corrupted_trace_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace_0.csv");
    std::fs::write(&path, "k,x1,u1,V_b,branch,safe,violation,step_time_s\n0,abc,0,0,learned,true,false,0\n").unwrap();
    assert!(matches!(read_trace_csv(&path), Err(Error::Serialization(_))));
    std::fs::write(&path, "k,y1\n0,1\n").unwrap();
    assert!(matches!(read_trace_csv(&path), Err(Error::Serialization(_))));
}

#[test]
fn checkpoint_restores_state() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let st = ActorCriticState::random(BasisSpec { lifted_dim: 4, nu: 0.01 }, 1, 0.5, &mut rng);
    let ck = WeightCheckpoint::from_state(&st);
    let back: WeightCheckpoint = from_json(&to_json(&ck).unwrap()).unwrap();
    assert_eq!(back, ck);
    let restored = back.to_state().unwrap();
    assert_eq!(restored.w_c, st.w_c);
    assert_eq!(restored.w_a, st.w_a);
    assert_eq!(restored.basis, st.basis);
}

#[test]
fn checkpoint_with_wrong_shape_is_rejected() {
    let mut ck = WeightCheckpoint::from_state(&ActorCriticState::zeros(BasisSpec { lifted_dim: 2, nu: 1.0 }, 1));
    ck.lifted_dim = 3;
    assert!(matches!(ck.to_state(), Err(Error::Serialization(_))));
}

#[test]
fn design_bundle_round_trips_bit_exactly() {
    let cfg = ExperimentConfig::for_plant(PlantKind::LinearTest);
    let bundle = offline_design(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bundle.json");
    let rec = BundleRecord::from_bundle(&bundle);
    write_json(&path, &rec).unwrap();
    let back: BundleRecord = read_json(&path).unwrap();
    assert_eq!(back, rec);
    let b = back.to_bundle().unwrap();
    assert_eq!(b.model.a, bundle.model.a);
    assert_eq!(b.model.b, bundle.model.b);
    assert_eq!(b.model.c, bundle.model.c);
    assert_eq!(b.model.dictionary, bundle.model.dictionary);
    assert_eq!(b.p_lpc, bundle.p_lpc);
    assert_eq!(b.k, bundle.k);
    assert_eq!(b.sets.terminal, bundle.sets.terminal);
    assert_eq!(b.sets.state.offsets, bundle.sets.state.offsets);
    assert_eq!(b.costates, bundle.costates);
    assert_eq!(b.w_box, bundle.w_box);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn trace_csv_round_trips_bit_exactly(
        seed in any::<u64>(),
        values in prop::collection::vec((-1e3f64..1e3, -1e-8f64..1e-8, -10.0f64..10.0, 0.0f64..1e6), 0..40),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let t = trace(seed, &values);
        let path = write_trace_csv(dir.path(), &t).unwrap();
        prop_assert_eq!(path.file_name().unwrap().to_str().unwrap(), format!("trace_{seed}.csv"));
        let back = read_trace_csv(&path).unwrap();
        prop_assert_eq!(back.len(), t.steps.len());
        prop_assert_eq!(&back, &t.steps);
    }

    #[test]
    fn long_csv_round_trips(values in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -1.0f64..1.0, 0.0f64..9.0), 1..20)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("long.csv");
        let rows = trace_long_rows("drlpc", 2, &trace(7, &values));
        prop_assert_eq!(rows.len(), 4 * values.len());
        write_long_csv(&path, &rows).unwrap();
        prop_assert_eq!(read_long_csv(&path).unwrap(), rows);
    }
}
