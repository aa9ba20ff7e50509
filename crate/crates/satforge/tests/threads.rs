use satforge::cli::{run, THREADS_ENV};

// One test per process: the variable is process-wide.
#[test]
fn thread_cap_must_be_a_positive_integer() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("corpus");
    let gen = || run(["satforge", "gen-data", "--out", out.to_str().unwrap(), "--force"]);
    for bad in ["0", "-2", "many", ""] {
        std::env::set_var(THREADS_ENV, bad);
        assert_eq!(gen(), 1, "{bad:?}");
    }
    for good in ["1", "8"] {
        std::env::set_var(THREADS_ENV, good);
        assert_eq!(gen(), 0, "{good:?}");
    }
}
