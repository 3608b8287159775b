use dcnt::io::*;

#[test]
fn every_format_survives_a_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cube = HsiCube::new(2, 3, 4, (0..24).map(|v| v as f32 * 0.25 - 1.0).collect()).unwrap();
    save_cube(&cube, dir.path().join("c.hsc")).unwrap();
    assert_eq!(load_cube(dir.path().join("c.hsc")).unwrap(), cube);

    let labels = LabelMap::new(2, 3, vec![0, 1, 2, 0, 65535, 3]).unwrap();
    save_labels(&labels, dir.path().join("l.lbl")).unwrap();
    assert_eq!(load_labels(dir.path().join("l.lbl")).unwrap(), labels);

    let probs = ProbMap::new(2, 1, 3, vec![0.1, 0.9, 0.5, 0.9, 0.1, 0.5]).unwrap();
    save_probmap(&probs, dir.path().join("p.prb")).unwrap();
    assert_eq!(load_probmap(dir.path().join("p.prb")).unwrap(), probs);

    let img = RgbImage::new(2, 2, (0..12).map(|v| v * 20).collect()).unwrap();
    write_ppm(&img, dir.path().join("i.ppm")).unwrap();
    assert_eq!(read_ppm(dir.path().join("i.ppm")).unwrap(), img);
}

#[test]
fn corrupt_headers_are_rejected() {
    let cube = HsiCube::new(1, 1, 3, vec![1.0, 2.0, 3.0]).unwrap();
    let mut bytes = encode_cube(&cube);
    bytes[0] = b'X';
    assert!(decode_cube(&bytes).is_err());
    let labels = encode_labels(&LabelMap::new(1, 2, vec![1, 2]).unwrap());
    assert!(decode_labels(&labels[..labels.len() - 1]).is_err());
    assert!(decode_ppm(b"P3\n1 1\n255\n0 0 0").is_err());
}
