use std::io::Cursor;

use golp::table_io::{
    dump_len, load_table, read_table, save_table, write_table, TableIoError, HEADER_BYTES,
};
use golp_core::generate_table;

#[test]
fn round_trip() {
    let table = generate_table(1000, 188, 7).unwrap();
    let mut buf = Vec::new();
    write_table(&mut buf, &table, 7).unwrap();
    assert_eq!(buf.len() as u64, dump_len(1000, 188));
    assert_eq!(&buf[..4], b"GOLP");
    let (head, back) = read_table(Cursor::new(&buf)).unwrap();
    assert_eq!((head.n, head.payload_bytes, head.seed), (1000, 188, 7));
    assert_eq!(back, table);
}

#[test]
fn header_layout_is_little_endian() {
    let table = generate_table(3, 2, 0x0102).unwrap();
    let mut buf = Vec::new();
    write_table(&mut buf, &table, 0x0102).unwrap();
    assert_eq!(&buf[4..8], &[1, 0, 0, 0]);
    assert_eq!(&buf[8..16], &[3, 0, 0, 0, 0, 0, 0, 0]);
    assert_eq!(&buf[16..20], &[2, 0, 0, 0]);
    assert_eq!(&buf[20..28], &[2, 1, 0, 0, 0, 0, 0, 0]);
    assert_eq!(
        &buf[HEADER_BYTES..HEADER_BYTES + 8],
        &table.keys()[0].to_le_bytes()
    );
}

#[test]
fn empty_table() {
    let table = generate_table(0, 100, 42).unwrap();
    let mut buf = Vec::new();
    write_table(&mut buf, &table, 42).unwrap();
    assert_eq!(buf.len(), HEADER_BYTES);
    assert_eq!(read_table(Cursor::new(&buf)).unwrap().1.row_count(), 0);
}

#[test]
fn rejects_damage() {
    let table = generate_table(10, 4, 1).unwrap();
    let mut buf = Vec::new();
    write_table(&mut buf, &table, 1).unwrap();

    let mut bad = buf.clone();
    bad[0] = b'X';
    assert!(matches!(
        read_table(Cursor::new(&bad)),
        Err(TableIoError::BadMagic)
    ));

    let mut bad = buf.clone();
    bad[4] = 9;
    assert!(matches!(
        read_table(Cursor::new(&bad)),
        Err(TableIoError::Version(9))
    ));

    assert!(matches!(
        read_table(Cursor::new(&buf[..buf.len() - 1])),
        Err(TableIoError::Length)
    ));
    assert!(matches!(
        read_table(Cursor::new(&buf[..10])),
        Err(TableIoError::Length)
    ));

    let mut long = buf.clone();
    long.push(0);
    assert!(matches!(
        read_table(Cursor::new(&long)),
        Err(TableIoError::Length)
    ));

    let mut nan = buf.clone();
    nan[HEADER_BYTES..HEADER_BYTES + 8].copy_from_slice(&f64::NAN.to_le_bytes());
    assert!(matches!(
        read_table(Cursor::new(&nan)),
        Err(TableIoError::Table(_))
    ));
}

#[test]
fn files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.golp");
    let table = generate_table(500, 16, 3).unwrap();
    save_table(&path, &table, 3).unwrap();
    assert_eq!(load_table(&path).unwrap().1, table);
}
