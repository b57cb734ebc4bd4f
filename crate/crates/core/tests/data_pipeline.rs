use std::io::Cursor;

use dpads::data::{
    hash_feature, read_criteo, split_chronological, synth_generate, write_tsv, CriteoReadOptions, SynthConfig,
    TaskKind,
};

fn line(label: u32, ints: &[&str], tokens: &[&str]) -> String {
    let mut f = vec![label.to_string()];
    f.extend(ints.iter().map(|s| s.to_string()));
    f.extend(tokens.iter().map(|s| s.to_string()));
    f.join("\t")
}

#[test]
fn hash_reference_value() {
    // FNV-1a 64 of "f:0:abc" is 0xcba42b8eb90835fd.
    assert_eq!(hash_feature(0, "abc", 100), 61);
    assert_eq!(hash_feature(0, "abc", 1 << 20) as u64, 0xcba42b8eb90835fd % (1 << 20));
}

#[test]
fn criteo_lines_preprocess() {
    let mut ints = vec![""; 13];
    ints[0] = "0";
    ints[1] = "-3";
    ints[2] = "9";
    let tokens = vec!["abc"; 26];
    let text = format!("{}\n{}\n", line(1, &ints, &tokens), line(0, &vec!["1"; 13], &vec![""; 26]));
    let ds = read_criteo(Cursor::new(text), &CriteoReadOptions::binary(100)).unwrap();
    assert_eq!(ds.len(), 2);
    let ex = &ds.examples()[0];
    assert_eq!(ex.label, 1);
    assert_eq!(&ex.dense[..4], &[0.0, 0.0, 10f64.ln(), 0.0]);
    assert_eq!(ex.categorical[0], 61);
    assert!(ds.examples()[1].dense.iter().all(|&d| d == 2f64.ln()));
}

#[test]
fn malformed_line_reports_line_number() {
    let text = format!("{}\n1\t2\n", line(0, &vec!["1"; 13], &vec!["x"; 26]));
    let err = read_criteo(Cursor::new(text), &CriteoReadOptions::binary(10)).unwrap_err();
    assert!(err.to_string().contains('2'), "{err}");
}

#[test]
fn stride_and_row_cap() {
    let text: String = (0..10).map(|i| line(i % 2, &vec!["1"; 13], &vec!["t"; 26]) + "\n").collect();
    let opts = CriteoReadOptions { stride: 3, ..CriteoReadOptions::binary(10) };
    let ds = read_criteo(Cursor::new(text.clone()), &opts).unwrap();
    assert_eq!(ds.labels().collect::<Vec<_>>(), vec![0, 1, 0, 1]);
    let opts = CriteoReadOptions { max_rows: Some(2), ..opts };
    assert_eq!(read_criteo(Cursor::new(text), &opts).unwrap().len(), 2);
}

#[test]
fn synth_tsv_round_trip() {
    let mut cfg = SynthConfig::count(500, 1.5, 3);
    cfg.vocab_sizes = vec![1 << 20; 26];
    let ds = synth_generate(&cfg).unwrap();
    let mut buf = Vec::new();
    write_tsv(&ds, &mut buf).unwrap();
    let opts = CriteoReadOptions { task: TaskKind::Count, ..CriteoReadOptions::binary(1 << 20) };
    let back = read_criteo(Cursor::new(buf), &opts).unwrap();
    assert_eq!(back.len(), ds.len());
    for (a, b) in ds.examples().iter().zip(back.examples()) {
        assert_eq!(a.label, b.label);
        for (x, y) in a.dense.iter().zip(&b.dense) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn chronological_split_is_80_10_10() {
    let ds = synth_generate(&SynthConfig::binary(1000, 0.3, 1)).unwrap();
    let (tr, va, te) = split_chronological(&ds).unwrap();
    assert_eq!((tr.len(), va.len(), te.len()), (800, 100, 100));
    assert_eq!(tr.examples()[0], ds.examples()[0]);
    assert_eq!(te.examples()[99], ds.examples()[999]);
}
