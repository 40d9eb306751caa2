use ddlab_core::azema_yor::{euler_integrate, read_batch, write_batch};
use ddlab_core::drawdown::{DrawdownSpec, TransformPair};
use ddlab_core::{ay_inverse, ay_transform, check_drawdown, SamplePath};
use proptest::prelude::*;

fn path_strategy() -> impl Strategy<Value = SamplePath> {
    prop::collection::vec(-0.08f64..0.08, 2..200).prop_map(|steps| {
        let mut v = vec![1.0];
        for s in steps {
            let last = *v.last().unwrap();
            v.push(last * s.exp());
        }
        SamplePath::uniform(0.01, v).unwrap()
    })
}

fn drawdown_strategy() -> impl Strategy<Value = DrawdownSpec> {
    prop_oneof![
        (0.05f64..0.95).prop_map(|a| DrawdownSpec::linear(a).unwrap()),
        (0.05f64..0.9).prop_map(|c| DrawdownSpec::constant(c).unwrap()),
        (0.1f64..0.6, 0.1f64..0.5).prop_map(|(a, t)| {
            DrawdownSpec::piecewise_linear(vec![(1.0, a * 0.9), (2.0, a * 1.9)], t).unwrap()
        }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn transform_round_trip_and_floor(path in path_strategy(), w in drawdown_strategy()) {
        let pair = TransformPair::new(&w, 1.0).unwrap();
        let x = ay_transform(&pair.f, &path).unwrap();
        let back = ay_inverse(&pair.k, &x).unwrap();
        for (a, b) in back.values().iter().zip(path.values()) {
            prop_assert!((a / b - 1.0).abs() < 1e-9);
        }
        // running max maps through F
        for (m, vm) in x.runmax().iter().zip(path.runmax()) {
            prop_assert!((m / pair.f.eval(*vm) - 1.0).abs() < 1e-12);
        }
        let rep = check_drawdown(&x, &w, 0.0);
        prop_assert!(rep.satisfied, "margin {}", rep.min_margin);
    }

    #[test]
    fn transform_dominates_composition(path in path_strategy(), w in drawdown_strategy()) {
        let pair = TransformPair::new(&w, 1.0).unwrap();
        let x = ay_transform(&pair.f, &path).unwrap();
        for (xv, v) in x.values().iter().zip(path.values()) {
            prop_assert!(*xv >= pair.f.eval(*v) * (1.0 - 1e-12));
        }
    }

    #[test]
    fn batch_io_round_trip(paths in prop::collection::vec(path_strategy(), 1..5)) {
        let mut buf = Vec::new();
        write_batch(&paths, &mut buf).unwrap();
        let back = read_batch(buf.as_slice()).unwrap();
        prop_assert_eq!(back, paths);
    }
}

#[test]
fn csv_round_trip_through_file() {
    let p = SamplePath::uniform(0.5, vec![1.0, 1.25, 0.75, 2.0]).unwrap();
    let file = tempfile::NamedTempFile::new().unwrap();
    p.write_csv(std::fs::File::create(file.path()).unwrap()).unwrap();
    let text = std::fs::read(file.path()).unwrap();
    let q = SamplePath::read_csv(text.as_slice()).unwrap();
    assert_eq!(p, q);
}

#[test]
fn euler_error_shrinks_with_step() {
    let w = DrawdownSpec::linear(0.5).unwrap();
    let pair = TransformPair::new(&w, 1.0).unwrap();
    let fine: Vec<f64> = (0..=4000)
        .map(|i| {
            let t = i as f64 / 4000.0;
            (0.05 * t + 0.2 * (7.0 * t).sin() * (3.0 * t).cos()).exp()
        })
        .collect();
    let path = SamplePath::uniform(1.0 / 4000.0, fine).unwrap();
    let err = |step: usize| {
        let sub = path.subsample(step).unwrap();
        let e = euler_integrate(&sub, &w).unwrap();
        let x = ay_transform(&pair.f, &sub).unwrap();
        e.values()
            .iter()
            .zip(x.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    };
    let (coarse, finer) = (err(40), err(4));
    assert!(finer < coarse / 4.0, "{coarse} -> {finer}");
}

#[test]
fn malformed_csv_is_rejected() {
    assert!(SamplePath::read_csv("t,value\n0,1\n".as_bytes()).is_err());
    assert!(SamplePath::read_csv("t,value,runmax\n0,1,1\n1,2,1\n".as_bytes()).is_err());
    assert!(read_batch(&b"NOTPATHS"[..]).is_err());
}
