use fel::checkpoint::{checkpoint_config, load_checkpoint, save_checkpoint, CheckpointError, MAGIC};
use fel::config::RunConfig;
use fel::jsonl::{read_jsonl, write_jsonl};
use fel::tsv::{loss_log, ordering_matrix, parse_loss_log, LOSS_HEADER};
use fel::vocab_file::{read_vocab, write_vocab, VocabFileError};
use fel_core::datagen::{CtExample, Head, HeadSet};
use fel_core::model::{init_model, ModelConfig};
use fel_core::tokenizer::{build_vocab, Vocab};
use fel_core::train::{LossRecord, Objective, PairDiff};

fn small_vocab() -> Vocab {
    let text = ["the cat sat on the mat", "a tab\there", "back\\slash and more cats", "naïve café"];
    build_vocab(text.iter().copied(), 60).unwrap()
}

#[test]
fn vocab_file_round_trips_ids_and_scores() {
    let v = small_vocab();
    let text = write_vocab(&v);
    assert!(text.starts_with(&format!("#unigram-vocab v1 size={}\n", v.len())));
    assert!(text.lines().nth(1).unwrap().starts_with("[PAD]\t"));
    let back = read_vocab(&text).unwrap();
    assert_eq!(back, v);
    assert_eq!(write_vocab(&back), text);
}

#[test]
fn vocab_file_rejects_damage() {
    let text = write_vocab(&small_vocab());
    assert_eq!(read_vocab(&text[1..]).unwrap_err(), VocabFileError::Header);
    let short: String = text.lines().take(10).map(|l| format!("{l}\n")).collect();
    assert!(matches!(read_vocab(&short), Err(VocabFileError::Size { .. })));
    let swapped = text.replacen("[PAD]", "[UNK]", 1);
    assert!(matches!(read_vocab(&swapped), Err(VocabFileError::Line { line: 2, .. })));
}

fn toy_model() -> fel_core::model::Model {
    let mut cfg = ModelConfig::new(16, 1, 40);
    cfg.head_dim = 8;
    cfg.ffn_dim = 32;
    cfg.max_seq_len = 12;
    init_model(&cfg, 5).unwrap()
}

#[test]
fn checkpoint_round_trip_is_bit_identical() {
    let m = toy_model();
    let bytes = save_checkpoint(&m);
    let back = load_checkpoint(&bytes).unwrap();
    assert_eq!(back, m);
    assert_eq!(save_checkpoint(&back), bytes);
    assert_eq!(checkpoint_config(&bytes).unwrap(), *m.config());

    let ex = fel_core::datagen::TrainingExample {
        ids: vec![2, 9, 17, 3],
        segment_ids: vec![0; 4],
        mlm_positions: vec![1],
        mlm_labels: vec![11],
        nsp_label: Some(1),
        boundary_labels: None,
        pad_label: None,
        objective_mask: HeadSet::new(&[Head::Mlm, Head::Nsp]),
    };
    let heads = HeadSet::new(&[Head::Mlm, Head::Nsp]);
    let a = m.eval(std::slice::from_ref(&ex), &heads).unwrap();
    let b = back.eval(std::slice::from_ref(&ex), &heads).unwrap();
    assert_eq!(a, b);
}

#[test]
fn every_truncation_is_reported() {
    let bytes = save_checkpoint(&toy_model());
    let cuts = [0, 4, 8, 11, 12, 19, 20, 40, bytes.len() / 2, bytes.len() - 1];
    for &n in &cuts {
        let err = load_checkpoint(&bytes[..n]).unwrap_err();
        assert!(
            matches!(err, CheckpointError::Truncated(_) | CheckpointError::BadMagic),
            "cut at {n}: {err:?}"
        );
    }
    let mut long = bytes.clone();
    long.push(0);
    assert_eq!(load_checkpoint(&long).unwrap_err(), CheckpointError::TrailingBytes(1));
}

#[test]
fn header_damage_is_reported() {
    let bytes = save_checkpoint(&toy_model());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert_eq!(load_checkpoint(&bad).unwrap_err(), CheckpointError::BadMagic);
    let mut v2 = bytes.clone();
    v2[MAGIC.len()..MAGIC.len() + 4].copy_from_slice(&2u32.to_le_bytes());
    assert_eq!(load_checkpoint(&v2).unwrap_err(), CheckpointError::Version(2));
}

#[test]
fn shape_mismatch_is_rejected() {
    let m = toy_model();
    let mut other_cfg = m.config().clone();
    other_cfg.ffn_dim = 40;
    let other = init_model(&other_cfg, 5).unwrap();
    // splice the first model's header onto the second model's records
    let a = save_checkpoint(&m);
    let b = save_checkpoint(&other);
    let header_len = |bytes: &[u8]| {
        let n = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        20 + n
    };
    let mut spliced = a[..header_len(&a)].to_vec();
    spliced.extend_from_slice(&b[header_len(&b)..]);
    assert!(matches!(load_checkpoint(&spliced), Err(CheckpointError::Model(_))));
}

/// Number of stored values, read straight from the record layout.
fn stored_values(bytes: &[u8]) -> usize {
    let u = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap()) as usize;
    let mut pos = 12;
    pos += 8 + u(pos);
    let count = u(pos);
    pos += 8;
    let mut total = 0;
    for _ in 0..count {
        pos += 1;
        pos += 8 + u(pos);
        let ndim = u(pos);
        pos += 8;
        let mut n = 1;
        for _ in 0..ndim {
            n *= u(pos);
            pos += 8;
        }
        total += n;
        pos += 8 * n;
    }
    assert_eq!(pos, bytes.len());
    total
}

#[test]
fn large_checkpoint_matches_closed_form_count() {
    // 768 x 3 with 64-dim heads and a 3072 FFN
    let (d, f, v, p, t, layers) = (768usize, 3072usize, 100usize, 128usize, 2usize, 3usize);
    let mut cfg = ModelConfig::new(d, layers, v);
    cfg.head_dim = 64;
    cfg.ffn_dim = f;
    cfg.max_seq_len = p;
    let m = init_model(&cfg, 0).unwrap();
    let embedding = (v + p + t) * d + 2 * d;
    let layer = (d * d + d) + d * d + (d * d + d) + (d * d + d) + 2 * d + (d * f + f) + (f * d + d) + 2 * d;
    let mlm = (d * d + d) + 2 * d + (d * v + v);
    let nsp = (d * d + d) + (d * 2 + 2);
    let pad = nsp;
    let boundary = (d * d + d) + (d * 4 + 4);
    let expected = embedding + layers * layer + mlm + nsp + pad + boundary;
    assert_eq!(stored_values(&save_checkpoint(&m)), expected);
    assert_eq!(m.param_count(), expected);
}

#[test]
fn jsonl_round_trip_and_line_numbers() {
    let recs = vec![
        CtExample {
            query: "when was super mario released".into(),
            spans: vec![(9, 20)],
        },
        CtExample {
            query: "a \"quoted\" query".into(),
            spans: vec![],
        },
    ];
    let text = write_jsonl(&recs);
    assert_eq!(text.lines().count(), 2);
    assert_eq!(read_jsonl::<CtExample>(&text).unwrap(), recs);
    let with_blank = format!("\n{text}\n");
    assert_eq!(read_jsonl::<CtExample>(&with_blank).unwrap(), recs);
    let err = read_jsonl::<CtExample>(&format!("{text}{{\"query\": 3}}\n")).unwrap_err();
    assert_eq!(err.line, 3);
}

#[test]
fn loss_log_format() {
    let recs = vec![
        LossRecord {
            step: 10,
            objective: Objective::Mlm,
            loss: 6.25,
        },
        LossRecord {
            step: 10,
            objective: Objective::Hyp,
            loss: 0.1 + 0.2,
        },
    ];
    let text = loss_log(&recs);
    assert_eq!(text, format!("{LOSS_HEADER}\n10\tmlm\t6.25\n10\thyp\t0.30000000000000004\n"));
    let parsed = parse_loss_log(&text).unwrap();
    assert_eq!(parsed[1], (10, "hyp".to_string(), 0.1 + 0.2));
}

#[test]
fn ordering_matrix_layout() {
    let d = |a: &str, b: &str, m: f64| PairDiff {
        size: 50,
        a: a.into(),
        b: b.into(),
        mean_diff: m,
        pooled_std: 0.5,
    };
    let diffs = vec![d("x", "x", 0.0), d("x", "y", 0.25), d("y", "x", -0.25), d("y", "y", 0.0)];
    let text = ordering_matrix(&["x".into(), "y".into()], &diffs);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "statistic\tsize\tarm\tx\ty");
    assert_eq!(lines[1], "mean_diff\t50\tx\t0\t0.25");
    assert_eq!(lines[2], "mean_diff\t50\ty\t-0.25\t0");
    assert_eq!(lines[3], "pooled_std\t50\tx\t0.5\t0.5");
    assert_eq!(lines.len(), 5);
}

#[test]
fn config_defaults_and_unknown_keys() {
    let cfg = RunConfig::from_json("{}").unwrap();
    assert_eq!(cfg, RunConfig::default());
    assert_eq!(cfg.pretrain.batch_size, 256);
    assert_eq!(cfg.finetune.batch_size, 64);
    assert_eq!(cfg.finetune.lr, 1e-4);
    assert!(RunConfig::from_json(r#"{"modle": {}}"#).is_err());
    assert!(RunConfig::from_json(r#"{"model": {"emb": 3}}"#).is_err());
    assert!(RunConfig::from_json(r#"{"pretrain": {"learning_rate": 0.1}}"#).is_err());
    assert!(RunConfig::from_json(r#"{"data": {"encoding": {"alpha": 0.5, "x": 1}}}"#).is_err());
}

#[test]
fn resolution_is_idempotent_and_round_trips() {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/toy.json")).unwrap();
    let cfg = RunConfig::from_json(&text).unwrap().resolve();
    cfg.validate().unwrap();
    assert_eq!(cfg.clone().resolve(), cfg);
    let echoed = RunConfig::from_json(&cfg.to_json()).unwrap();
    assert_eq!(echoed, cfg);
    let other = RunConfig {
        master_seed: cfg.master_seed + 1,
        ..cfg.clone()
    }
    .resolve();
    assert_ne!(other.pretrain.seed, cfg.pretrain.seed);
}
