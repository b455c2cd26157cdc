use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use elpasso_bench::fixture::{Fixture, DOMAIN};
use elpasso_bench::phases::BENCH_NOW;
use elpasso_core::protocol::{check_signon, prove_id, SignOnFlags};

const ATTRIBUTES: [usize; 2] = [3, 13];

fn phases(c: &mut Criterion) {
    let mut group = c.benchmark_group("phase");
    group.sample_size(20);
    for n in ATTRIBUTES {
        let mut fx = Fixture::new(n - 3, false, 42);
        let user = fx.user("bench");
        let secrets = fx.secrets();
        let (d, req) = fx.request(&secrets);
        let blinded = fx.provide(&user, &req, BENCH_NOW);
        let bundle = fx.unblind(&d, &secrets, &blinded);
        let session = fx.session(BENCH_NOW);
        let flags = SignOnFlags {
            retrieval: true,
            ..SignOnFlags::default()
        };
        let signon = prove_id(
            &fx.params,
            &fx.kp.pk,
            &bundle,
            &secrets,
            &session,
            &[],
            flags,
            BENCH_NOW,
            &mut fx.rng,
        )
        .unwrap();

        group.bench_with_input(BenchmarkId::new("request_id", n), &n, |b, _| {
            b.iter(|| fx.request(&secrets))
        });
        group.bench_with_input(BenchmarkId::new("provide_id", n), &n, |b, _| {
            b.iter(|| fx.provide(&user, &req, BENCH_NOW))
        });
        group.bench_with_input(BenchmarkId::new("unblind_id", n), &n, |b, _| {
            b.iter(|| fx.unblind(&d, &secrets, &blinded))
        });
        group.bench_with_input(BenchmarkId::new("prove_id", n), &n, |b, _| {
            b.iter(|| {
                prove_id(
                    &fx.params,
                    &fx.kp.pk,
                    &bundle,
                    &secrets,
                    &session,
                    &[],
                    flags,
                    BENCH_NOW,
                    &mut fx.rng,
                )
                .unwrap()
            })
        });
        group.bench_with_input(BenchmarkId::new("verify_id", n), &n, |b, _| {
            b.iter(|| {
                check_signon(
                    &fx.params,
                    &fx.kp.pk,
                    &signon,
                    DOMAIN,
                    Some(&fx.authorities.public.y),
                    BENCH_NOW,
                    &fx.policy,
                )
                .unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, phases);
criterion_main!(benches);
