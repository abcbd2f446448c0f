use gpuarray_core::device::MIN_SIZE_CLASS;
use gpuarray_core::ops::{self, BinaryOpKind, ReduceOp};
use gpuarray_core::{create_context, BackendChoice, DType, DeviceConfig, DeviceContext, Error, HostArray, KernelSpec};
use proptest::prelude::*;

fn emu(config: DeviceConfig) -> DeviceContext {
    create_context(DeviceConfig {
        backend: BackendChoice::Emulated,
        ..config
    })
    .unwrap()
}

fn ctx() -> DeviceContext {
    emu(DeviceConfig::default())
}

#[test]
fn default_config() {
    let c = ctx();
    assert_eq!(c.config().pool_cap, 256 << 20);
    assert_eq!(c.config().workgroup_size, 64);
    assert_eq!(c.pool_stats().bytes_resident, 0);
    assert_eq!(c.counters().compilations, 0);
}

#[test]
fn explicit_gpu_request_without_adapter_is_no_adapter() {
    let r = create_context(DeviceConfig {
        backend: BackendChoice::Gpu,
        ..Default::default()
    });
    match r {
        Ok(c) => assert!(!c.is_emulated()),
        Err(e) => assert!(matches!(e, Error::NoAdapter(_)), "{e}"),
    }
}

#[test]
fn size_classes_and_pool_hits() {
    let c = ctx();
    let h = c.alloc(100).unwrap();
    assert_eq!(h.capacity(), 256);
    assert_eq!(MIN_SIZE_CLASS, 256);
    assert_eq!(c.alloc(257).unwrap().capacity(), 512);
    c.free(&h).unwrap();
    let hits = c.counters().pool_hits;
    let again = c.alloc(200).unwrap();
    assert_eq!(c.counters().pool_hits, hits + 1);
    assert_eq!(again.capacity(), 256);
}

#[test]
fn disabled_pool_always_allocates() {
    let c = emu(DeviceConfig {
        pool_cap: 0,
        ..Default::default()
    });
    for _ in 0..5 {
        let h = c.alloc(1024).unwrap();
        c.free(&h).unwrap();
    }
    assert_eq!(c.counters().pool_hits, 0);
    assert_eq!(c.counters().allocations, 5);
    assert_eq!(c.pool_stats().bytes_resident, 0);
}

#[test]
fn allocation_cap_is_exact() {
    let c = ctx();
    let cap = c.config().max_alloc;
    assert!(matches!(c.alloc(1 << 30), Err(Error::AllocTooLarge { .. })));
    assert!(matches!(c.alloc(cap + 1), Err(Error::AllocTooLarge { .. })));
    let h = c.alloc(cap).unwrap();
    assert_eq!(h.capacity(), cap);
    assert!(matches!(c.alloc(0), Err(Error::ZeroSizedAllocation)));
}

#[test]
fn double_free_and_use_after_free() {
    let c = ctx();
    let h = c.alloc(64).unwrap();
    c.free(&h).unwrap();
    assert!(matches!(c.free(&h), Err(Error::DoubleFree(_))));

    let a = c
        .upload(&HostArray::from_f32(&[3], vec![1.0, 2.0, 3.0]).unwrap())
        .unwrap();
    let b = ops::binary_scalar(BinaryOpKind::Add, &a, 1.0).unwrap();
    c.free(a.buffer()).unwrap();
    // the recorded add still references the freed input
    assert!(matches!(c.submit(), Err(Error::UseAfterFree(_))));
    assert!(matches!(ops::copy(&a), Err(Error::UseAfterFree(_))));
    drop(b);
}

#[test]
fn pool_at_cap_never_grows() {
    let c = emu(DeviceConfig {
        pool_cap: 1024,
        ..Default::default()
    });
    let hs: Vec<_> = (0..8).map(|_| c.alloc(512).unwrap()).collect();
    let mut last = 0;
    for h in &hs {
        c.free(h).unwrap();
        let now = c.pool_stats().bytes_resident;
        assert!(now <= 1024);
        if last == 1024 {
            assert!(now <= last);
        }
        last = now;
    }
}

#[test]
fn round_trip_examples() {
    let c = ctx();
    let x = HostArray::from_f32(&[3], vec![1.5, -2.0, 3.25]).unwrap();
    assert_eq!(c.upload(&x).unwrap().to_host().unwrap().words(), x.words());
    let z = c.upload(&HostArray::zeros(DType::F32, &[1024, 1024]).unwrap()).unwrap();
    let s = ops::reduce(&z, ReduceOp::Sum, None).unwrap().to_host().unwrap();
    assert_eq!(s.to_f32_vec().unwrap(), vec![0.0]);
}

#[test]
fn readback_without_flush_sees_prior_ops() {
    let c = ctx();
    let a = c
        .upload(&HostArray::from_f32(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap())
        .unwrap();
    let b = ops::binary(BinaryOpKind::Add, &a, &a).unwrap();
    assert!(c.pending_commands() > 0);
    assert_eq!(b.to_host().unwrap().to_f32_vec().unwrap(), vec![2.0, 4.0, 6.0, 8.0]);
    assert_eq!(c.pending_commands(), 0);
}

#[test]
fn broadcast_view_readback() {
    let c = ctx();
    let a = c.upload(&HostArray::from_i32(&[3, 1], vec![1, 2, 3]).unwrap()).unwrap();
    let v = a.broadcast_to(&[3, 4]).unwrap();
    let h = v.to_host().unwrap();
    assert_eq!(h.dims(), &[3, 4]);
    assert_eq!(h.to_i32_vec().unwrap(), vec![1, 1, 1, 1, 2, 2, 2, 2, 3, 3, 3, 3]);
}

#[test]
fn hundred_enqueue_readback_cycles() {
    let c = ctx();
    let mut host: Vec<f32> = (0..257).map(|i| i as f32 * 0.5).collect();
    let mut dev = c.upload(&HostArray::from_f32(&[257], host.clone()).unwrap()).unwrap();
    for step in 0..100 {
        let k = (step % 7) as f64 - 3.0;
        dev = ops::binary_scalar(BinaryOpKind::Mul, &dev, 0.5).unwrap();
        dev = ops::binary_scalar(BinaryOpKind::Add, &dev, k).unwrap();
        for v in host.iter_mut() {
            *v = *v * 0.5 + k as f32;
        }
        assert_eq!(dev.to_host().unwrap().to_f32_vec().unwrap(), host, "cycle {step}");
    }
}

#[test]
fn empty_submit_is_noop_and_lost_device_errors() {
    let c = ctx();
    let before = c.counters().submissions;
    c.submit().unwrap();
    assert_eq!(c.counters().submissions, before);
    let a = c.upload(&HostArray::from_f32(&[2], vec![1.0, 2.0]).unwrap()).unwrap();
    c.lose_device();
    assert!(matches!(c.submit(), Err(Error::DeviceLost(_))));
    assert!(matches!(a.to_host(), Err(Error::DeviceLost(_))));
}

#[test]
fn write_then_double_in_queue_order() {
    let c = ctx();
    let fill = KernelSpec::new("fill_seven", "f32 x", "f32 y", "y = 7.0;").unwrap();
    let double = KernelSpec::new("double_it", "f32 x", "f32 y", "y = x * 2.0;").unwrap();
    let src = c.zeros(DType::F32, &[100]).unwrap();
    let buf = c.zeros(DType::F32, &[100]).unwrap();
    let out = c.zeros(DType::F32, &[100]).unwrap();
    let k1 = c.compile_or_get(&fill, 1, &Default::default()).unwrap();
    let k2 = c.compile_or_get(&double, 1, &Default::default()).unwrap();
    c.launch(&k1, &[&src], &[&buf]).unwrap();
    c.submit().unwrap();
    c.launch(&k2, &[&buf], &[&out]).unwrap();
    c.submit().unwrap();
    assert!(out.to_host().unwrap().to_f32_vec().unwrap().iter().all(|&v| v == 14.0));
}

fn dtype() -> impl Strategy<Value = DType> {
    prop_oneof![Just(DType::F32), Just(DType::I32), Just(DType::U32), Just(DType::Bool)]
}

fn random_host() -> impl Strategy<Value = HostArray> {
    (dtype(), prop::collection::vec(1usize..5, 0..5)).prop_flat_map(|(dt, dims)| {
        let n: usize = dims.iter().product();
        prop::collection::vec(any::<u32>(), n).prop_map(move |words| {
            let words = match dt {
                DType::Bool => words.into_iter().map(|w| w & 1).collect(),
                _ => words,
            };
            let desc = gpuarray_core::ArrayDescriptor::contiguous(dt, gpuarray_core::Shape::new(dims.clone()).unwrap());
            HostArray::from_words(desc, words).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn round_trip_is_bitwise(x in random_host()) {
        let c = ctx();
        let back = c.upload(&x).unwrap().to_host().unwrap();
        prop_assert_eq!(back.dims(), x.dims());
        prop_assert_eq!(back.dtype(), x.dtype());
        prop_assert_eq!(back.words(), x.words());
    }

    #[test]
    fn kernel_sequences_match_host_order(seq in prop::collection::vec((0u8..4, -4i32..5), 1..12), n in 1usize..300) {
        let c = ctx();
        let mut host: Vec<i32> = (0..n as i32).map(|i| i - 100).collect();
        let mut dev = c.upload(&HostArray::from_i32(&[n], host.clone()).unwrap()).unwrap();
        for (op, k) in seq {
            let kind = [BinaryOpKind::Add, BinaryOpKind::Sub, BinaryOpKind::Mul, BinaryOpKind::Maximum][op as usize];
            dev = ops::binary_scalar(kind, &dev, k as f64).unwrap();
            for v in host.iter_mut() {
                *v = match op {
                    0 => v.wrapping_add(k),
                    1 => v.wrapping_sub(k),
                    2 => v.wrapping_mul(k),
                    _ => (*v).max(k),
                };
            }
        }
        prop_assert_eq!(dev.to_host().unwrap().to_i32_vec().unwrap(), host);
    }

    #[test]
    fn counters_are_monotone(sizes in prop::collection::vec(1u64..5000, 1..40)) {
        let c = ctx();
        let mut prev = c.counters();
        let mut live = Vec::new();
        for (i, s) in sizes.into_iter().enumerate() {
            let h = c.alloc(s).unwrap();
            prop_assert_eq!(h.capacity() % 4, 0);
            prop_assert!(h.capacity() >= s);
            if i % 2 == 0 { c.free(&h).unwrap(); } else { live.push(h); }
            let now = c.counters();
            prop_assert!(now.allocations >= prev.allocations && now.pool_hits >= prev.pool_hits);
            prop_assert!(now.pool_hits <= now.allocations);
            prev = now;
        }
    }
}

#[test]
fn long_chains_fit_a_small_device() {
    // 200 launches of 256 KiB each through a 4 MiB device without readback:
    // allocation must wait for deferred frees instead of failing.
    for pool_cap in [0, 1 << 20] {
        let c = emu(DeviceConfig {
            emulated_memory: 4 << 20,
            pool_cap,
            ..Default::default()
        });
        let n = 1 << 16;
        let mut x = c.upload(&HostArray::from_f32(&[n], vec![2.0; n]).unwrap()).unwrap();
        for _ in 0..200 {
            x = ops::binary_scalar(BinaryOpKind::Mul, &x, 1.0).unwrap();
        }
        assert!(x.to_host().unwrap().to_f32_vec().unwrap().iter().all(|&v| v == 2.0));
    }
}
