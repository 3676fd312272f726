use mvfnet::io::{WeightEntry, WeightFile};
use mvfnet::net::{build_network, NetworkSpec};
use mvfnet::{DType, Error, VideoTensor};

fn spec() -> NetworkSpec {
    NetworkSpec::new("tiny", 4, &["res2"], 0.5, 8).with_resolution(16)
}

#[test]
fn network_round_trip_reproduces_logits() {
    let net = build_network::<f32>(&spec(), 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.mvfw");
    WeightFile::from_params(&net).save(&path).unwrap();

    let mut other = build_network::<f32>(&spec(), 2).unwrap();
    let x = VideoTensor::from_fn(net.input_shape(2), |n, c, t, h, w| ((n + 2 * c + 3 * t + 5 * h + 7 * w) % 11) as f32 / 11.0);
    assert_ne!(other.logits(&x).unwrap().data, net.logits(&x).unwrap().data);
    WeightFile::load(&path).unwrap().apply_to(&mut other).unwrap();
    let (a, b) = (net.logits(&x).unwrap().data, other.logits(&x).unwrap().data);
    assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
    assert_eq!(WeightFile::from_params(&other), WeightFile::load(&path).unwrap());
}

#[test]
fn mismatches_are_rejected_without_side_effects() {
    let net = build_network::<f32>(&spec(), 1).unwrap();
    let file = WeightFile::from_params(&net);

    let mut wider = build_network::<f32>(&NetworkSpec { classes: 9, ..spec() }, 1).unwrap();
    let before = WeightFile::from_params(&wider);
    assert!(matches!(file.apply_to(&mut wider), Err(Error::Weights(_))));
    assert_eq!(WeightFile::from_params(&wider), before);

    let mut c2d = build_network::<f32>(&NetworkSpec::new("tiny", 4, &[], 0.0, 8).with_resolution(16), 1).unwrap();
    assert!(matches!(file.apply_to(&mut c2d), Err(Error::Weights(_))));
    let mut double = build_network::<f64>(&spec(), 1).unwrap();
    assert!(matches!(file.apply_to(&mut double), Err(Error::Weights(_))));
}

#[test]
fn corrupt_files_are_rejected() {
    let file = WeightFile {
        entries: vec![WeightEntry { name: "w".into(), dtype: DType::F64, dims: vec![2, 1], payload: [1.5f64, -2.0].iter().flat_map(|v| v.to_le_bytes()).collect() }],
    };
    let bytes = file.to_bytes().unwrap();
    assert_eq!(WeightFile::from_bytes(&bytes).unwrap(), file);
    assert_eq!(file.entries[0].values::<f64>().unwrap(), vec![1.5, -2.0]);

    let mut wrong_version = bytes.clone();
    wrong_version[4] = 9;
    let mut bad_dtype = bytes.clone();
    bad_dtype[4 + 4 + 4 + 4 + 1] = 7;
    let mut trailing = bytes.clone();
    trailing.push(0);
    for bad in [&bytes[..bytes.len() - 1], &b"MVFX"[..], &wrong_version, &bad_dtype, &trailing] {
        assert!(matches!(WeightFile::from_bytes(bad), Err(Error::Weights(_))));
    }
}
