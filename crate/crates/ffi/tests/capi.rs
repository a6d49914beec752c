use std::ffi::{c_char, CStr, CString};
use std::ptr;

use modelrisk_ffi::*;

const WELD_CSV: &str = "true_class,none,cracking,porosity,lack_of_penetration
none,72,1,4,0
cracking,2,62,0,0
porosity,7,0,37,1
lack_of_penetration,0,0,0,60
";

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(mr_last_error_message()) }.to_string_lossy().into_owned()
}

fn weld_posterior() -> *mut MrPosterior {
    let mut post = ptr::null_mut();
    let text = c(WELD_CSV);
    assert_eq!(unsafe { mr_posterior_from_csv(text.as_ptr(), 1.0, &mut post) }, MrStatus::Ok);
    post
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(mr_version()) }.to_str().unwrap();
    assert_eq!(v, modelrisk::VERSION);
}

#[test]
fn posterior_round_trip() {
    let post = weld_posterior();
    unsafe {
        assert_eq!(mr_posterior_num_classes(post), 4);
        let mut alpha = [0.0; 16];
        assert_eq!(mr_posterior_alpha(post, alpha.as_mut_ptr(), alpha.len()), MrStatus::Ok);
        assert_eq!(&alpha[..4], &[73.0, 2.0, 5.0, 1.0]);

        let mut label: *mut c_char = ptr::null_mut();
        assert_eq!(mr_posterior_class_label(post, 3, &mut label), MrStatus::Ok);
        assert_eq!(CStr::from_ptr(label).to_str().unwrap(), "lack_of_penetration");
        mr_string_free(label);

        let mut q = 0.0;
        assert_eq!(mr_posterior_marginal_quantile(post, 0, 0, 0.5, &mut q), MrStatus::Ok);
        assert!(q > 0.85 && q < 0.95);

        let mut json: *mut c_char = ptr::null_mut();
        assert_eq!(mr_posterior_to_json(post, &mut json), MrStatus::Ok);
        let parsed: modelrisk::ReliabilityPosterior =
            serde_json::from_str(CStr::from_ptr(json).to_str().unwrap()).unwrap();
        assert_eq!(parsed.posterior_alpha[3][3], 61.0);
        mr_string_free(json);
        mr_posterior_free(post);
    }
}

#[test]
fn incremental_update_matches_batch() {
    let labels = [c("a"), c("b")];
    let ptrs: Vec<*const c_char> = labels.iter().map(|l| l.as_ptr()).collect();
    let (first, second) = ([3u64, 1, 0, 5], [2u64, 2, 1, 1]);
    let total: Vec<u64> = first.iter().zip(&second).map(|(a, b)| a + b).collect();
    unsafe {
        let (mut inc, mut batch) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(mr_posterior_from_counts(ptrs.as_ptr(), 2, first.as_ptr(), ptr::null(), &mut inc), MrStatus::Ok);
        assert_eq!(mr_posterior_update(inc, second.as_ptr()), MrStatus::Ok);
        assert_eq!(mr_posterior_from_counts(ptrs.as_ptr(), 2, total.as_ptr(), ptr::null(), &mut batch), MrStatus::Ok);
        let (mut a, mut b) = ([0.0; 4], [0.0; 4]);
        mr_posterior_alpha(inc, a.as_mut_ptr(), 4);
        mr_posterior_alpha(batch, b.as_mut_ptr(), 4);
        assert_eq!(a, b);
        mr_posterior_free(inc);
        mr_posterior_free(batch);
    }
}

#[test]
fn risk_table_and_threshold() {
    let post = weld_posterior();
    unsafe {
        let mut costs = ptr::null_mut();
        assert_eq!(mr_costs_default(&mut costs), MrStatus::Ok);
        let mut ecf = 0.0;
        assert_eq!(mr_costs_expected_failure_cost(costs, &mut ecf), MrStatus::Ok);
        assert!((ecf - 97_500.0).abs() < 1e-6);

        let mut table = ptr::null_mut();
        assert_eq!(mr_risk_table_new(post, costs, ptr::null(), 50_000, 7, &mut table), MrStatus::Ok);
        let (mut mean, mut se) = (0.0, 0.0);
        let (none, automated) = (c("none"), c("automated"));
        assert_eq!(mr_risk_table_cell(table, none.as_ptr(), automated.as_ptr(), &mut mean, &mut se), MrStatus::Ok);
        assert!((mean - 7_500.0 / 81.0).abs() < 4.0 * se + 0.5, "{mean} ± {se}");

        let (hybrid, manual, uniform) = (c("hybrid"), c("manual"), c("uniform"));
        let (mut threshold, mut regime) = (0.0, MrRegime::Identical);
        let status = mr_break_even(table, hybrid.as_ptr(), manual.as_ptr(), uniform.as_ptr(), &mut threshold, &mut regime);
        assert_eq!(status, MrStatus::Ok);
        assert_eq!(regime, MrRegime::ChallengerAbove);
        assert!(threshold > 0.8 && threshold < 0.9);

        let mut json: *mut c_char = ptr::null_mut();
        assert_eq!(mr_risk_table_to_json(table, &mut json), MrStatus::Ok);
        assert!(CStr::from_ptr(json).to_str().unwrap().contains("\"config_hash\""));
        mr_string_free(json);

        mr_risk_table_free(table);
        mr_costs_free(costs);
        mr_posterior_free(post);
    }
}

#[test]
fn vopi_is_zero_when_no_anomaly_and_positive_for_lack_of_penetration() {
    let post = weld_posterior();
    unsafe {
        let mut costs = ptr::null_mut();
        mr_costs_default(&mut costs);
        let (mut v, mut se, mut prior, mut pre) = (f64::NAN, 0.0, 0.0, 0.0);
        let none = c("none");
        let status = mr_vopi(post, costs, ptr::null(), none.as_ptr(), 5_000, 3, 0, &mut v, &mut se, &mut prior, &mut pre);
        assert_eq!(status, MrStatus::Ok);
        assert_eq!(v, 0.0);
        let lop = c("lack_of_penetration");
        let status = mr_vopi(post, costs, ptr::null(), lop.as_ptr(), 5_000, 3, 0, &mut v, &mut se, &mut prior, &mut pre);
        assert_eq!(status, MrStatus::Ok);
        assert!(v > 0.0 && pre <= prior);
        mr_costs_free(costs);
        mr_posterior_free(post);
    }
}

#[test]
fn errors_map_to_status_codes() {
    unsafe {
        let mut post = ptr::null_mut();
        assert_eq!(mr_posterior_from_csv(ptr::null(), 1.0, &mut post), MrStatus::NullPointer);
        assert!(last_error().contains("csv_text"));

        let bad = c("true_class,a,b\na,1,x\nb,0,1\n");
        assert_eq!(mr_posterior_from_csv(bad.as_ptr(), 1.0, &mut post), MrStatus::ParseError);
        assert!(last_error().contains(":2:"), "{}", last_error());

        let good = c("true_class,a,b\na,1,0\nb,0,1\n");
        assert_eq!(mr_posterior_from_csv(good.as_ptr(), 0.0, &mut post), MrStatus::InvalidArgument);
        assert!(post.is_null());

        let mut costs = ptr::null_mut();
        let toml = c("no_anomaly = \"none\"\nbogus = 1\n");
        assert_eq!(mr_costs_from_toml(toml.as_ptr(), &mut costs), MrStatus::ParseError);

        assert_eq!(mr_posterior_num_classes(ptr::null()), 0);
        mr_posterior_free(ptr::null_mut());
        mr_string_free(ptr::null_mut());

        let p = weld_posterior();
        assert_eq!(last_error(), "");
        let mut small = [0.0; 3];
        assert_eq!(mr_posterior_mean(p, small.as_mut_ptr(), small.len()), MrStatus::InvalidArgument);
        mr_posterior_free(p);
    }
}

/// Compiles and runs a C client against the generated header and the static
/// library, when a C compiler is available.
#[test]
fn c_client_links_and_runs() {
    let manifest = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = manifest.join("include/modelrisk.h");
    assert!(header.is_file(), "header not generated");
    // The archive next to the test binary is rebuilt with it; the uplifted
    // copy one level up is only refreshed by `cargo build`.
    let deps_dir = std::env::current_exe().unwrap().parent().unwrap().to_path_buf();
    let lib = deps_dir.join("libmodelrisk_ffi.a");
    if !lib.is_file() || std::process::Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no static library or C compiler");
        return;
    }
    let exe = std::path::PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("smoke");
    let status = std::process::Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C client failed to compile");
    let out = std::process::Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "C client failed: {:?} {}", out.status, String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}
