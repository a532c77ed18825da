use std::path::PathBuf;

use ptychodip::data::{
    center_crop, encode_idx, encode_pgm, load_idx, load_image_dir, load_image_file, parse_idx,
    resize_bilinear, write_pgm, Image,
};

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/tiny-images-idx3-ubyte")
}

#[test]
fn idx_fixture_decodes() {
    let set = load_idx(fixture()).unwrap();
    assert_eq!(set.len(), 3);
    assert_eq!(set.dims(), Some((2, 3)));
    for (n, img) in set.images.iter().enumerate() {
        for (j, &v) in img.pixels.iter().enumerate() {
            let byte = (17 * (n * 6 + j) + 5) % 256;
            assert_eq!(v, byte as f64 / 255.0);
        }
    }
}

#[test]
fn idx_encoding_round_trips_the_fixture() {
    let bytes = std::fs::read(fixture()).unwrap();
    let images = parse_idx(&bytes).unwrap();
    assert_eq!(encode_idx(&images).unwrap(), bytes);
    let mut label = bytes.clone();
    label[3] = 0x01;
    assert!(parse_idx(&label).is_err());
    assert!(parse_idx(&bytes[..bytes.len() - 1]).is_err());
}

#[test]
fn resize_of_a_linear_ramp_is_exact() {
    // 128 rows x 96 columns, value r / 127 along the rows
    let (h, w) = (128, 96);
    let img = Image::new(h, w, (0..h * w).map(|i| (i / w) as f64 / 127.0).collect()).unwrap();
    let crop = center_crop(&img);
    assert_eq!((crop.height, crop.width), (96, 96));
    assert_eq!(crop.pixels[0], 16.0 / 127.0);
    let small = resize_bilinear(&crop, 64);
    for r in 0..64 {
        let s = (r as f64 + 0.5) * 1.5 - 0.5;
        let expected = (s + 16.0) / 127.0;
        for c in 0..64 {
            assert!(
                (small.pixels[r * 64 + c] - expected).abs() < 1e-12,
                "row {r}"
            );
        }
    }
}

#[test]
fn directory_loader_reads_png_and_pgm() {
    let dir = tempfile::tempdir().unwrap();
    let ramp: Vec<f64> = (0..12 * 8).map(|i| (i % 8) as f64 / 7.0).collect();
    write_pgm(dir.path().join("b.pgm"), 12, 8, &ramp).unwrap();
    let png = image::GrayImage::from_fn(8, 8, |x, _| image::Luma([(x * 30) as u8]));
    png.save(dir.path().join("a.png")).unwrap();
    std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
    std::fs::write(dir.path().join("broken.png"), "not a png").unwrap();

    let set = load_image_dir(dir.path(), 8).unwrap();
    assert_eq!(set.len(), 2);
    let a = &set.images[0];
    for (j, &v) in a.pixels.iter().enumerate() {
        assert!((v - ((j % 8) * 30) as f64 / 255.0).abs() < 1e-6);
    }
    // 12 x 8 PGM: cropped to its middle 8 rows, already 8 wide
    let b = &set.images[1];
    for (j, &v) in b.pixels.iter().enumerate() {
        let byte = ((j % 8) as f64 / 7.0 * 255.0 + 0.5).floor();
        assert!((v - byte / 255.0).abs() < 1e-6);
    }
    let raw = load_image_file(dir.path().join("b.pgm"), None).unwrap();
    assert_eq!((raw.height, raw.width), (12, 8));
}

#[test]
fn constant_half_is_mid_gray() {
    let bytes = encode_pgm(3, 4, &[0.5; 12]);
    let header = b"P5\n4 3\n255\n";
    assert_eq!(&bytes[..header.len()], header);
    assert!(bytes[header.len()..].iter().all(|&b| b == 128));
    assert_eq!(bytes.len(), header.len() + 12);
}
