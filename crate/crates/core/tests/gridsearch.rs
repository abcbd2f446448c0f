use std::collections::BTreeSet;
use std::net::TcpStream;
use std::thread;
use std::time::{Duration, Instant};

use gpuarray_core::gridsearch::{
    best_candidate, desk_grid, enumerate_grid, read_message, run_job, worker_loop, write_message, Backoff, Coordinator,
    JobResult, JobTemplate, Message, ServeOptions, WorkerBackend, WorkerOptions,
};
use proptest::prelude::*;

fn host_worker() -> WorkerOptions {
    WorkerOptions::new(WorkerBackend::Host)
}

fn stub_template(ms: u64) -> JobTemplate {
    JobTemplate {
        stub_ms: Some(ms),
        ..Default::default()
    }
}

fn serve_with_workers(
    jobs: Vec<gpuarray_core::gridsearch::JobSpec>,
    workers: usize,
    opts: ServeOptions,
) -> gpuarray_core::gridsearch::Summary {
    let c = Coordinator::bind("127.0.0.1:0").unwrap();
    let addr = c.local_addr().unwrap().to_string();
    let handles: Vec<_> = (0..workers)
        .map(|_| {
            let addr = addr.clone();
            thread::spawn(move || worker_loop(&addr, &host_worker()))
        })
        .collect();
    let summary = c.run(jobs, &opts).unwrap();
    for h in handles {
        h.join().unwrap().unwrap();
    }
    summary
}

#[test]
fn grid_sizes_and_order() {
    let t = JobTemplate::default();
    assert_eq!(enumerate_grid(&vec![vec![4, 16, 64, 256]; 3], &t).unwrap().len(), 64);
    assert_eq!(enumerate_grid(&[vec![8]], &t).unwrap().len(), 1);
    let jobs = enumerate_grid(&vec![vec![4, 8]; 2], &t).unwrap();
    let widths: Vec<Vec<usize>> = jobs.iter().map(|j| j.widths.clone()).collect();
    assert_eq!(widths, vec![vec![4, 4], vec![4, 8], vec![8, 4], vec![8, 8]]);
    assert_eq!(jobs.iter().map(|j| j.id).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
    assert!(enumerate_grid(&[], &t).is_err());
    assert!(enumerate_grid(&[vec![4], vec![]], &t).is_err());
}

#[test]
fn desk_grid_completes_exactly_once() {
    let jobs = enumerate_grid(&desk_grid(), &JobTemplate::default()).unwrap();
    assert_eq!(jobs.len(), 27);
    let s = serve_with_workers(jobs, 3, ServeOptions::default());
    let ids: Vec<usize> = s.results.iter().map(|r| r.job_id).collect();
    assert_eq!(ids, (0..27).collect::<Vec<_>>());
    assert_eq!((s.requeues, s.duplicate_results, s.rejected_results), (0, 0, 0));
    let best = s.best.unwrap();
    assert!(s.results.iter().all(|r| r.accuracy <= best.accuracy));
    assert!(s
        .results
        .iter()
        .all(|r| r.accuracy.is_finite() && (0.0..=1.0).contains(&r.accuracy)));
}

#[test]
fn small_model_beats_chance_and_is_deterministic() {
    let t = JobTemplate::default();
    let job = enumerate_grid(&[vec![4], vec![4], vec![4]], &t).unwrap().remove(0);
    let a = run_job(&job, &WorkerBackend::Host).unwrap();
    let b = run_job(&job, &WorkerBackend::Host).unwrap();
    assert_eq!(a, b);
    assert!(a > 1.0 / t.classes as f64, "accuracy {a}");
}

#[test]
fn serial_and_parallel_stub_timing() {
    let jobs = enumerate_grid(&[vec![1, 2, 3, 4]], &stub_template(300)).unwrap();
    let one = serve_with_workers(jobs.clone(), 1, ServeOptions::default());
    assert!(one.total_seconds >= 1.2, "{}", one.total_seconds);
    let four = serve_with_workers(jobs, 4, ServeOptions::default());
    assert!(four.total_seconds >= 0.3);
    assert!(four.total_seconds < 1.0, "{}", four.total_seconds);
}

#[test]
fn zero_jobs_worker_exits_cleanly() {
    let c = Coordinator::bind("127.0.0.1:0").unwrap();
    let addr = c.local_addr().unwrap().to_string();
    let w = thread::spawn(move || worker_loop(&addr, &host_worker()));
    let opts = ServeOptions {
        expect_workers: 1,
        ..Default::default()
    };
    let s = c.run(Vec::new(), &opts).unwrap();
    assert!(s.results.is_empty() && s.best.is_none());
    assert_eq!(w.join().unwrap().unwrap().jobs_done, 0);
}

#[test]
fn unreachable_coordinator_gives_up() {
    // bind then drop to find a port with nobody listening
    let addr = Coordinator::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .to_string();
    let mut opts = host_worker();
    opts.backoff = Backoff {
        base: Duration::from_millis(5),
        cap: Duration::from_millis(20),
        tries: 8,
    };
    let t = Instant::now();
    assert!(worker_loop(&addr, &opts).is_err());
    // 7 pauses: 5+10+20·5
    assert!(t.elapsed() >= Duration::from_millis(115));
}

#[test]
fn abandoned_job_is_requeued_after_deadline() {
    let jobs = enumerate_grid(&[vec![1, 2, 3]], &stub_template(50)).unwrap();
    let c = Coordinator::bind("127.0.0.1:0").unwrap();
    let addr = c.local_addr().unwrap().to_string();
    let opts = ServeOptions {
        deadline: Duration::from_millis(400),
        ..Default::default()
    };
    let server = thread::spawn(move || c.run(jobs, &opts).unwrap());

    // a worker that takes a job and vanishes
    let mut s = TcpStream::connect(&addr).unwrap();
    write_message(
        &mut s,
        &Message::GetJob {
            worker_id: "ghost".into(),
        },
    )
    .unwrap();
    let taken = match read_message(&mut s).unwrap() {
        Some(Message::Job { spec }) => spec.id,
        other => panic!("expected a job, got {other:?}"),
    };
    drop(s);

    let stats = worker_loop(&addr, &host_worker()).unwrap();
    let summary = server.join().unwrap();
    assert_eq!(stats.jobs_done, 3);
    assert_eq!(summary.requeues, 1);
    assert_eq!(summary.results.len(), 3);
    assert!(summary.results.iter().any(|r| r.job_id == taken));
}

#[test]
fn late_duplicate_and_unassigned_results() {
    let jobs = enumerate_grid(&[vec![1, 2]], &stub_template(0)).unwrap();
    let c = Coordinator::bind("127.0.0.1:0").unwrap();
    let addr = c.local_addr().unwrap().to_string();
    let server = thread::spawn(move || c.run(jobs, &ServeOptions::default()).unwrap());
    let mut s = TcpStream::connect(&addr).unwrap();
    let mut ask = |m: Message| {
        write_message(&mut s, &m).unwrap();
        read_message(&mut s).unwrap().unwrap()
    };
    let result = |id| Message::Result {
        result: JobResult {
            job_id: id,
            accuracy: 0.5,
            worker_id: "x".into(),
            train_seconds: 0.0,
        },
    };
    assert!(matches!(ask(result(1)), Message::Error { .. }));
    assert!(matches!(ask(result(7)), Message::Error { .. }));
    for _ in 0..2 {
        let Message::Job { spec } = ask(Message::GetJob { worker_id: "x".into() }) else {
            panic!("expected job")
        };
        assert_eq!(ask(result(spec.id)), Message::Ok);
    }
    assert_eq!(ask(result(0)), Message::Ok);
    assert_eq!(ask(Message::GetJob { worker_id: "x".into() }), Message::Done);
    drop(s);
    let summary = server.join().unwrap();
    assert_eq!(
        (
            summary.results.len(),
            summary.duplicate_results,
            summary.rejected_results
        ),
        (2, 1, 2)
    );
}

#[test]
fn bind_conflict_is_an_error() {
    let c = Coordinator::bind("127.0.0.1:0").unwrap();
    let addr = c.local_addr().unwrap();
    assert!(Coordinator::bind(addr).is_err());
}

fn arb_results() -> impl Strategy<Value = Vec<JobResult>> {
    prop::collection::vec(0u8..5, 1..30).prop_map(|accs| {
        accs.into_iter()
            .enumerate()
            .map(|(id, a)| JobResult {
                job_id: id,
                accuracy: a as f64 / 4.0,
                worker_id: String::new(),
                train_seconds: 0.0,
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn best_is_argmax_with_lowest_id_tiebreak(results in arb_results(), seed in any::<u64>()) {
        let top = results.iter().map(|r| r.accuracy).fold(f64::MIN, f64::max);
        let expected = results.iter().find(|r| r.accuracy == top).unwrap().job_id;
        let mut shuffled = results.clone();
        let n = shuffled.len();
        let mut x = seed;
        for i in (1..n).rev() {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (x >> 33) as usize % (i + 1));
        }
        prop_assert_eq!(best_candidate(&results).unwrap().job_id, expected);
        prop_assert_eq!(best_candidate(&shuffled).unwrap().job_id, expected);
    }

    #[test]
    fn grid_is_full_product(choices in prop::collection::vec(prop::collection::btree_set(1usize..20, 1..4), 1..4)) {
        let choices: Vec<Vec<usize>> = choices.into_iter().map(|s| s.into_iter().collect()).collect();
        let jobs = enumerate_grid(&choices, &JobTemplate::default()).unwrap();
        let n: usize = choices.iter().map(Vec::len).product();
        prop_assert_eq!(jobs.len(), n);
        let distinct: BTreeSet<Vec<usize>> = jobs.iter().map(|j| j.widths.clone()).collect();
        prop_assert_eq!(distinct.len(), n);
        for (i, j) in jobs.iter().enumerate() {
            prop_assert_eq!(j.id, i);
            for (w, c) in j.widths.iter().zip(&choices) {
                prop_assert!(c.contains(w));
            }
        }
    }
}
