use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use soupsr::error::Error;
use soupsr::volume_io::{load_volume, save_volume};
use soupsr_core::Volume;

/// Minimal NIfTI-1 writer laid out field by field from the format
/// definition, independent of the crate's writer.
fn write_nifti(path: &Path, big_endian: bool, dims: [i16; 3], pixdim: [f32; 3], datatype: i16, bitpix: i16, slope: f32, payload: &[u8]) {
    let mut h = vec![0u8; 352];
    let put = |h: &mut Vec<u8>, at: usize, b: &[u8]| {
        let mut b = b.to_vec();
        if big_endian {
            b.reverse();
        }
        h[at..at + b.len()].copy_from_slice(&b);
    };
    put(&mut h, 0, &348i32.to_le_bytes());
    let dim = [3, dims[0], dims[1], dims[2], 1, 1, 1, 1];
    for (i, d) in dim.iter().enumerate() {
        put(&mut h, 40 + 2 * i, &d.to_le_bytes());
    }
    put(&mut h, 70, &datatype.to_le_bytes());
    put(&mut h, 72, &bitpix.to_le_bytes());
    let pix = [1.0, pixdim[0], pixdim[1], pixdim[2], 0.0, 0.0, 0.0, 0.0f32];
    for (i, p) in pix.iter().enumerate() {
        put(&mut h, 76 + 4 * i, &p.to_le_bytes());
    }
    put(&mut h, 108, &352f32.to_le_bytes());
    put(&mut h, 112, &slope.to_le_bytes());
    h[344..348].copy_from_slice(b"n+1\0");
    h.extend_from_slice(payload);
    fs::write(path, h).unwrap();
}

#[test]
fn independent_header_is_read_back() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("cube.nii");
    let payload: Vec<u8> = (0..512).flat_map(|i| ((i % 100) as i16).to_le_bytes()).collect();
    write_nifti(&p, false, [8, 8, 8], [2.0, 2.0, 1.0], 4, 16, 0.5, &payload);
    let v = load_volume(&p).unwrap();
    assert_eq!(v.dims(), [8, 8, 8]);
    assert_eq!(v.spacing(), [1.0, 2.0, 2.0]);
    assert_eq!(v.id, "cube");
    assert_eq!(v.at(0, 0, 3), 1.5);
    assert_eq!(v.at(1, 2, 3), (((64 + 16 + 3) % 100) as f32) * 0.5);
}

#[test]
fn big_endian_float64_with_anisotropic_axes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("be.nii");
    let (nx, ny, nz) = (5usize, 4usize, 3usize);
    let payload: Vec<u8> = (0..nx * ny * nz).flat_map(|i| (i as f64 * 0.25).to_be_bytes()).collect();
    write_nifti(&p, true, [nx as i16, ny as i16, nz as i16], [0.7, 0.8, 3.0], 64, 64, 0.0, &payload);
    let v = load_volume(&p).unwrap();
    assert_eq!(v.dims(), [3, 4, 5]);
    assert_eq!(v.spacing(), [3.0, 0.800000011920929, 0.699999988079071]);
    assert_eq!(v.at(2, 1, 4), ((2 * 20 + 5 + 4) as f32) * 0.25);
}

fn random(dims: [usize; 3], seed: u64) -> Volume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..dims.iter().product::<usize>()).map(|_| rng.gen_range(-100.0..100.0f32)).collect();
    Volume::new("r", dims, [2.5, 0.9, 1.1], data).unwrap()
}

#[test]
fn nifti_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let v = random([8, 8, 8], 1);
    let p = dir.path().join("r.nii");
    save_volume(&v, &p).unwrap();
    let back = load_volume(&p).unwrap();
    assert_eq!(back.dims(), v.dims());
    assert!(back.data().iter().zip(v.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    for (a, b) in back.spacing().iter().zip(v.spacing()) {
        assert!((a - b).abs() <= 1e-6 * b);
    }
}

#[test]
fn raw_round_trip_keeps_payload_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let v = random([6, 7, 8], 2);
    let p = dir.path().join("r.vol");
    save_volume(&v, &p).unwrap();
    let bytes = fs::read(&p).unwrap();
    let want: Vec<u8> = v.data().iter().flat_map(|x| x.to_le_bytes()).collect();
    assert_eq!(bytes, want);
    let back = load_volume(&dir.path().join("r.json")).unwrap();
    assert_eq!(back, v);

    let zeros = Volume::new("z", [4, 4, 4], [1.0; 3], vec![0.0; 64]).unwrap();
    save_volume(&zeros, &dir.path().join("z.vol")).unwrap();
    let z = load_volume(&dir.path().join("z.vol")).unwrap();
    assert_eq!((z.dims(), z.data().iter().all(|&x| x == 0.0)), ([4, 4, 4], true));
}

#[test]
fn bad_inputs_map_to_typed_errors() {
    let dir = tempfile::tempdir().unwrap();
    let v = random([4, 4, 4], 3);
    let p = dir.path().join("nan.vol");
    save_volume(&v, &p).unwrap();
    let mut bytes = fs::read(&p).unwrap();
    bytes[20..24].copy_from_slice(&f32::NAN.to_le_bytes());
    fs::write(&p, bytes).unwrap();
    assert!(matches!(load_volume(&p), Err(Error::Core(soupsr_core::Error::Data(_)))));

    let short = dir.path().join("short.nii");
    fs::write(&short, [0u8; 100]).unwrap();
    assert!(matches!(load_volume(&short), Err(Error::Format(_))));

    let odd = dir.path().join("odd.nii");
    write_nifti(&odd, false, [2, 2, 2], [1.0; 3], 128, 24, 0.0, &[0; 24]);
    assert!(matches!(load_volume(&odd), Err(Error::Unsupported(_))));

    assert!(matches!(load_volume(&dir.path().join("x.nii.gz")), Err(Error::Unsupported(_))));
    assert!(matches!(load_volume(&dir.path().join("missing.nii")), Err(Error::Io { .. })));
}

#[test]
fn unwritable_location_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    let v = random([4, 4, 4], 4);
    let err = save_volume(&v, &blocker.join("out.nii")).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert_eq!(err.exit_code(), 2);
}
