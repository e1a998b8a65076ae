use seedmem_core::binfmt::{ArrayFile, NamedArray};
use seedmem_core::CoreError;

const MAGIC: &[u8; 8] = b"TESTFILE";

fn sample() -> ArrayFile {
    let mut f = ArrayFile::new(*MAGIC, 3);
    f.metadata.insert("seed".into(), "42".into());
    f.metadata.insert("note".into(), "ünïcode ok".into());
    f.arrays.push(NamedArray::new("w", vec![2, 3], vec![1.0, -2.5, 3.25, f32::MIN_POSITIVE, 0.0, -0.0]));
    f.arrays.push(NamedArray::new("b", vec![4], vec![0.1, 0.2, 0.3, 0.4]));
    f
}

#[test]
fn round_trip_is_bitwise() {
    let f = sample();
    let bytes = f.to_bytes();
    let g = ArrayFile::from_bytes(&bytes, MAGIC).unwrap();
    assert_eq!(g.version, 3);
    assert_eq!(g.metadata, f.metadata);
    for (a, b) in f.arrays.iter().zip(&g.arrays) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.shape, b.shape);
        let ab: Vec<u32> = a.data.iter().map(|v| v.to_bits()).collect();
        let bb: Vec<u32> = b.data.iter().map(|v| v.to_bits()).collect();
        assert_eq!(ab, bb);
    }
    assert_eq!(g.to_bytes(), bytes);
}

#[test]
fn header_layout_is_little_endian() {
    let bytes = sample().to_bytes();
    assert_eq!(&bytes[..8], MAGIC);
    assert_eq!(&bytes[8..12], &3u32.to_le_bytes());
    assert_eq!(&bytes[12..16], &2u32.to_le_bytes());
    let tail = &bytes[bytes.len() - 16..];
    let last: Vec<f32> = tail.chunks(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    assert_eq!(last, vec![0.1, 0.2, 0.3, 0.4]);
}

#[test]
fn wrong_magic_and_truncation_are_rejected() {
    let bytes = sample().to_bytes();
    assert!(matches!(ArrayFile::from_bytes(&bytes, b"OTHERMAG"), Err(CoreError::Format(_))));
    assert!(ArrayFile::from_bytes(&bytes[..bytes.len() - 1], MAGIC).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(ArrayFile::from_bytes(&extra, MAGIC).is_err());
}
