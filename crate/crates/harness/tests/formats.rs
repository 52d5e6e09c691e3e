use std::path::PathBuf;

use condenser::checkpoint::{self, decode, encode, Checkpoint, TrainingMeta};
use condenser::dataset::synth_shapes;
use condenser::report::{read_log, write_log, LogLine};
use condenser::specio::{canonical_json, parse_spec, pretty_json, read_spec, spec_digest};
use condenser::train::{evaluate, train, EpochMetrics, TrainConfig};
use condenser::{CheckpointError, HarnessError};
use condenser_core::backbone::{micro_spec, reference_spec, validate, Network};
use condenser_core::explorer::{explore, ConstraintSet, NetScoreWeights, PerfRecord, SearchConfig};
use condenser_core::Rng;
use sha2::{Digest, Sha256};

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("golden").join(name)
}

fn schema() -> serde_json::Value {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("schema/architecture.schema.json");
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn micro_checkpoint() -> Checkpoint {
    let mut net = Network::build(micro_spec(), &mut Rng::new(3)).unwrap();
    let x = condenser_core::Tensor::uniform(condenser_core::Shape::new(4, 2, 8, 8).unwrap(), -1.0, 1.0, &mut Rng::new(4));
    net.forward_train(&x).unwrap();
    let meta = TrainingMeta {
        epoch: 2,
        seed: 3,
        metrics: vec![EpochMetrics {
            epoch: 1,
            loss: 1.25,
            train_top1: 40.0,
            eval_top1: None,
            lr: 0.05,
            seconds: 0.5,
        }],
    };
    Checkpoint::from_network(&net, meta)
}

/// Rewrites the trailing digest after editing the body.
fn reseal(mut bytes: Vec<u8>) -> Vec<u8> {
    let n = bytes.len() - 32;
    let d = Sha256::digest(&bytes[..n]);
    bytes[n..].copy_from_slice(&d);
    bytes
}

#[test]
fn golden_documents_are_canonical_and_valid() {
    for (file, spec) in [("reference.json", reference_spec()), ("micro.json", micro_spec())] {
        let text = std::fs::read_to_string(golden(file)).unwrap();
        let parsed = read_spec(&golden(file)).unwrap();
        assert_eq!(parsed, spec, "{file}");
        assert!(validate(&parsed).is_ok());
        assert_eq!(pretty_json(&parsed).unwrap(), text, "{file} is not in canonical form");
        // parse → serialize → parse
        assert_eq!(parse_spec(&canonical_json(&parsed).unwrap()).unwrap(), parsed);
    }
}

#[test]
fn golden_documents_match_the_schema() {
    let validator = jsonschema::validator_for(&schema()).unwrap();
    for file in ["reference.json", "micro.json"] {
        let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(golden(file)).unwrap()).unwrap();
        let errors: Vec<String> = validator.iter_errors(&doc).map(|e| e.to_string()).collect();
        assert!(errors.is_empty(), "{file}: {errors:?}");
    }
    let mut bad: serde_json::Value = serde_json::to_value(micro_spec()).unwrap();
    bad["stages"][1].as_object_mut().unwrap().remove("merge_channels");
    assert!(!validator.is_valid(&bad));
    bad = serde_json::to_value(micro_spec()).unwrap();
    bad["stem"][0]["k"] = 4.into();
    assert!(!validator.is_valid(&bad));
    bad = serde_json::to_value(micro_spec()).unwrap();
    bad["stem"][1]["kind"] = "pool".into();
    assert!(!validator.is_valid(&bad));
}

#[test]
fn unknown_fields_are_rejected() {
    let mut v = serde_json::to_value(micro_spec()).unwrap();
    v["extra"] = 1.into();
    assert!(matches!(parse_spec(&v.to_string()), Err(HarnessError::Json { .. })));
}

#[test]
fn digest_is_stable_under_key_order() {
    let spec = micro_spec();
    let shuffled = r#"{"stem":[{"kind":"conv","relu":true,"c_out":4,"c_in":2,"stride":1,"k":3,"groups":1,"bn":true},{"kind":"aads","k":3}],
        "num_classes":3,"head":{"pool":"global_avg"},"input_res":{"w":8,"h":8,"c":2},
        "stages":[{"interaction":"independent","columns":[[{"kind":"conv","c_in":4,"c_out":4,"k":3,"stride":1,"groups":1,"bn":true,"relu":true}],
        [{"kind":"conv","c_in":4,"c_out":4,"k":1,"stride":1,"groups":1,"bn":false,"relu":true}]]},
        {"interaction":"merge_all","merge_channels":6,"columns":[[{"kind":"dcac","c_in":8,"c_out":4,"c_emb":2,"condense":2,"n_emb":1,"groups_emb":1}],
        [{"kind":"dcac","c_in":8,"c_out":4,"c_emb":4,"condense":2,"n_emb":2,"groups_emb":2,"bn":true}]]}]}"#;
    let parsed = parse_spec(shuffled).unwrap();
    assert_eq!(parsed, spec);
    assert_eq!(spec_digest(&parsed).unwrap(), spec_digest(&spec).unwrap());
    assert_ne!(spec_digest(&reference_spec()).unwrap(), spec_digest(&spec).unwrap());
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let ckpt = micro_checkpoint();
    let bytes = encode(&ckpt).unwrap();
    let back = decode(&bytes).unwrap();
    assert_eq!(back.spec, ckpt.spec);
    assert!(back.params.bit_eq(&ckpt.params));
    assert_eq!(back.training, ckpt.training);
    assert_eq!(encode(&back).unwrap(), bytes);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.acnx");
    checkpoint::save(&path, &ckpt).unwrap();
    let loaded = checkpoint::load(&path).unwrap();
    let again = dir.path().join("m2.acnx");
    checkpoint::save(&again, &loaded).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    assert_eq!(&std::fs::read(&path).unwrap()[..4], b"ACNX");
}

#[test]
fn every_tampered_byte_is_caught() {
    let bytes = encode(&micro_checkpoint()).unwrap();
    for i in (8..bytes.len()).step_by(7) {
        let mut b = bytes.clone();
        b[i] ^= 0x40;
        assert!(matches!(decode(&b), Err(CheckpointError::Digest)), "byte {i}");
    }
}

#[test]
fn header_errors_have_their_own_class() {
    let bytes = encode(&micro_checkpoint()).unwrap();
    let mut b = bytes.clone();
    b[0] = b'X';
    assert!(matches!(decode(&b), Err(CheckpointError::BadMagic(_))));
    let mut b = bytes.clone();
    b[4] = 2;
    assert!(matches!(decode(&b), Err(CheckpointError::Version(2))));
    for cut in [0, 5, 20, bytes.len() - 1] {
        assert!(decode(&bytes[..cut]).is_err(), "cut at {cut}");
    }
    assert!(matches!(decode(&bytes[..bytes.len() - 1]), Err(CheckpointError::Digest)));
}

#[test]
fn resealed_structural_damage_is_corruption() {
    let bytes = encode(&micro_checkpoint()).unwrap();
    // tensor count field sits right after the document
    let doc_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let mut b = bytes.clone();
    b[16 + doc_len] += 1;
    let err = decode(&reseal(b)).unwrap_err();
    assert!(matches!(err, CheckpointError::Corrupt(_)), "{err}");
    assert_eq!(err.code(), "checkpoint.corrupt");
    // extra bytes before the digest
    let mut b = bytes[..bytes.len() - 32].to_vec();
    b.extend_from_slice(&[0, 0, 0]);
    b.extend_from_slice(&[0; 32]);
    assert!(matches!(decode(&reseal(b)), Err(CheckpointError::Corrupt(_))));
}

#[test]
fn invalid_embedded_spec_is_rejected() {
    let bytes = encode(&micro_checkpoint()).unwrap();
    let doc_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let doc = std::str::from_utf8(&bytes[16..16 + doc_len]).unwrap();
    // same length, broken channel threading: the second stem conv input
    let broken = doc.replacen(r#""c_in":4,"c_out":4,"groups":1,"k":3"#, r#""c_in":5,"c_out":4,"groups":1,"k":3"#, 1);
    assert_ne!(broken, doc);
    let mut b = bytes.clone();
    b[16..16 + doc_len].copy_from_slice(broken.as_bytes());
    let err = decode(&reseal(b)).unwrap_err();
    assert!(matches!(err, CheckpointError::InvalidSpec(_)), "{err}");
    assert_eq!(err.code(), "checkpoint.invalid_spec");
}

#[test]
fn evaluation_survives_a_checkpoint_round_trip() {
    let spec = micro_spec();
    let res = spec.input_res;
    let data = {
        let d = synth_shapes(6, 1, condenser_core::backbone::InputRes { c: 2, ..res }).unwrap();
        let labels = d.labels.iter().map(|l| l % 3).collect();
        condenser::dataset::Dataset::new(d.images, labels, vec!["a".into(), "b".into(), "c".into()]).unwrap()
    };
    let mut net = Network::build(spec, &mut Rng::new(1)).unwrap();
    train(&mut net, &data, &TrainConfig { epochs: 2, batch_size: 8, ..TrainConfig::default() }, None).unwrap();
    let before = evaluate(&net, &data, 1).unwrap();
    let ckpt = decode(&encode(&Checkpoint::from_network(&net, TrainingMeta::default())).unwrap()).unwrap();
    let restored = ckpt.into_network().unwrap();
    assert_eq!(evaluate(&restored, &data, 1).unwrap(), before);
    let x = data.range(0, 5).unwrap().0;
    assert!(net.forward(&x).unwrap().bit_eq(&restored.forward(&x).unwrap()));
}

#[test]
fn generation_log_lines_carry_every_field() {
    let cfg = SearchConfig {
        population: 3,
        generations: 2,
        seed: 5,
        ..SearchConfig::default()
    };
    let eval = |s: &condenser_core::backbone::ArchitectureSpec, seed: u64| {
        let p = condenser_core::backbone::count_params(s)? as u64;
        let m = condenser_core::backbone::count_macs(s)?;
        // zero accuracy for one candidate exercises the null score
        let a = if seed % 3 == 0 { 0.0 } else { 50.0 };
        PerfRecord::new(a, p, m, 1.5, NetScoreWeights::default())
    };
    let out = explore(&cfg, &ConstraintSet::structural(), eval).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.jsonl");
    write_log(&path, &out.log).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 6);
    let lines = read_log(&path).unwrap();
    for (line, c) in lines.iter().zip(&out.log) {
        assert_eq!(line, &LogLine::new(c).unwrap());
        assert_eq!(line.spec_digest, spec_digest(&c.spec).unwrap());
        assert_eq!(line.u.is_none(), c.perf.a == 0.0);
        assert_eq!(line.verdicts, c.verdicts.0);
    }
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    for key in ["spec_digest", "p", "m", "a", "latency_ms", "u", "verdicts", "seed"] {
        assert!(first.get(key).is_some(), "{key}");
    }
}
