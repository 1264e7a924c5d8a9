use std::ffi::{CStr, CString};
use std::ptr;

use slicetwin::experiment::Scenario;
use slicetwin_ffi::*;

fn last_error() -> String {
    let p = st_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn scalar_functions_match_the_library() {
    let mut v = 0.0;
    unsafe {
        assert_eq!(st_path_loss_db(100.0, 2000.0, &mut v), StStatus::Ok);
        assert!((v - (40.0 + 20.0 * 2000f64.log10() - 27.55)).abs() < 1e-12);
        assert_eq!(st_achievable_rate(1e6, 1.0, 1.0, 1.0, &mut v), StStatus::Ok);
        assert!((v - 1e6).abs() < 1e-6);
        assert_eq!(st_average_delay(24_000.0, 1.0, 12_000.0, 10.0, &mut v), StStatus::Ok);
        assert!((v - 1.0).abs() < 1e-12);
        assert_eq!(st_rate_utility(2e5, 2e5, 1e-5, &mut v), StStatus::Ok);
        assert!((v - 0.5).abs() < 1e-12);
        assert_eq!(st_delay_utility(0.1, 0.1, 50.0, &mut v), StStatus::Ok);
        assert!((v - 0.5).abs() < 1e-12);
        assert_eq!(st_reward(0.8, 0.6, 0.5, 0.5, &mut v), StStatus::Ok);
        assert!((v - 0.7).abs() < 1e-12);
        let (mut raw, mut clipped) = (0.0, 0.0);
        assert_eq!(st_utilization(15, 10, &mut raw, &mut clipped), StStatus::Ok);
        assert_eq!((raw, clipped), (1.5, 10.0 / 15.0));
    }
}

#[test]
fn invalid_input_sets_status_and_message() {
    let mut v = 0.0;
    unsafe {
        assert_eq!(st_path_loss_db(-1.0, 2000.0, &mut v), StStatus::InvalidArgument);
        assert!(last_error().contains("distance"));
        assert_eq!(st_path_loss_db(1.0, 2000.0, ptr::null_mut()), StStatus::NullPointer);
        assert!(last_error().contains("null"));
        assert_eq!(st_reward(f64::NAN, 0.5, 0.5, 0.5, &mut v), StStatus::InvalidArgument);
    }
}

#[test]
fn allocation_projection_through_the_abi() {
    let grants = [10u32, 10, 10];
    let caps = [50u32; 3];
    let deltas = [25i64, 25, -20];
    let mut out = [0u32; 3];
    unsafe {
        assert_eq!(
            st_apply_allocation(grants.as_ptr(), caps.as_ptr(), 3, 50, deltas.as_ptr(), out.as_mut_ptr()),
            StStatus::Ok
        );
    }
    assert!(out.iter().all(|&w| w >= 1) && out.iter().sum::<u32>() <= 50);
    assert_eq!(out[0], out[1]);

    let bad = [40u32, 40, 40];
    unsafe {
        assert_eq!(
            st_apply_allocation(bad.as_ptr(), caps.as_ptr(), 3, 50, deltas.as_ptr(), out.as_mut_ptr()),
            StStatus::InvalidArgument
        );
    }

    let demands = [10.0, 30.0];
    let mut split = [0u32; 2];
    unsafe {
        assert_eq!(st_netshare_grants(demands.as_ptr(), 2, 50, split.as_mut_ptr()), StStatus::Ok);
    }
    assert_eq!(split, [13, 37]);
}

#[test]
fn twin_handle_lifecycle() {
    let (nodes, window) = (4usize, 12usize);
    let mut twin = ptr::null_mut();
    unsafe {
        assert_eq!(st_twin_new(nodes, 1, window, 3, &mut twin), StStatus::Ok);
        assert!(!twin.is_null());
        let mut count = 0;
        assert_eq!(st_twin_param_count(twin, &mut count), StStatus::Ok);
        assert!(count > 0);

        let data: Vec<f64> = (0..nodes * window).map(|i| 0.1 + 0.01 * (i % 7) as f64).collect();
        assert_eq!(st_twin_fit_normalizer(twin, data.as_ptr(), data.len()), StStatus::Ok);
        let mut forecast = -1.0;
        assert_eq!(st_twin_predict(twin, 20, data.as_ptr(), data.len(), &mut forecast), StStatus::Ok);
        assert!(forecast.is_finite() && forecast >= 0.0);

        let next = vec![0.12; nodes];
        let mut loss = -1.0;
        assert_eq!(
            st_twin_train_step(twin, 20, data.as_ptr(), data.len(), next.as_ptr(), nodes, &mut loss),
            StStatus::Ok
        );
        assert!(loss >= 0.0);

        assert_eq!(
            st_twin_predict(twin, 20, data.as_ptr(), data.len() - 1, &mut forecast),
            StStatus::InvalidArgument
        );
        assert!(last_error().contains("expected"));
        st_twin_free(twin);
        st_twin_free(ptr::null_mut());
    }
}

#[test]
fn scenarios_run_through_the_abi() {
    let bad = CString::new(r#"{"agent": {"gamma": 2}}"#).unwrap();
    assert_eq!(unsafe { st_scenario_validate(bad.as_ptr()) }, StStatus::Schema);

    let mut s = Scenario::reference().with_device_count(4);
    s.slices.truncate(2);
    s.steps = 20;
    s.warmup_steps = 30;
    s.twin.pretrain_epochs = 1;
    s.seeds = vec![0];
    let json = CString::new(s.to_json()).unwrap();
    assert_eq!(unsafe { st_scenario_validate(json.as_ptr()) }, StStatus::Ok);

    let mut summary = StRunSummary::default();
    let alloc = CString::new("madqn").unwrap();
    assert_eq!(unsafe { st_run_single(json.as_ptr(), alloc.as_ptr(), 1, &mut summary) }, StStatus::Ok);
    assert!(summary.reward > 0.0 && summary.report_scalars > 0 && summary.federation_scalars == 0);

    let unknown = CString::new("round-robin").unwrap();
    assert_eq!(
        unsafe { st_run_single(json.as_ptr(), unknown.as_ptr(), 1, &mut summary) },
        StStatus::InvalidArgument
    );

    let dir = tempfile::tempdir().unwrap();
    let out = CString::new(dir.path().to_str().unwrap()).unwrap();
    assert_eq!(unsafe { st_run_experiment(json.as_ptr(), out.as_ptr()) }, StStatus::Ok);
    assert!(dir.path().join("metrics.csv").exists());
}

#[test]
fn errors_are_per_thread() {
    let mut v = 0.0;
    unsafe { st_path_loss_db(-1.0, 1.0, &mut v) };
    let here = last_error();
    let other = std::thread::spawn(|| st_last_error().is_null()).join().unwrap();
    assert!(other);
    assert!(here.contains("distance"));
}
