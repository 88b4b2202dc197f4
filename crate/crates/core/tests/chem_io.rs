mod common;

use proptest::prelude::*;
use rand::{Rng, RngCore};
use simg::active_learning::{synth_label, synth_simg, OracleRules};
use simg::chem_io::*;
use simg::synth::{dataset, item_rng, SynthConfig};

fn fixtures(seed: u64, n: usize) -> Vec<Molecule> {
    dataset(seed, n, &SynthConfig::default())
}

fn within_extent(text: &str, e: &ParseError) -> bool {
    let lines: Vec<&str> = text.split('\n').collect();
    if e.line == 0 || e.column == 0 {
        return false;
    }
    if text.is_empty() {
        return (e.line, e.column) == (1, 1);
    }
    e.line <= lines.len() && e.column <= lines[e.line - 1].chars().count() + 1
}

#[test]
fn molj_round_trip_over_generated_fixtures() {
    for m in fixtures(1, 100) {
        let text = serialize_molecule(&m);
        let back = parse_molecule(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(serialize_molecule(&back), text);
    }
}

#[test]
fn nboj_and_nbotxt_round_trip_over_oracle_records() {
    let rules = OracleRules::default();
    for m in fixtures(2, 100) {
        let rec = synth_label(&m, &rules).unwrap();
        let json = serialize_nbo_json(&rec);
        let parsed = parse_nbo_json(&json, Validation::Strict).unwrap();
        assert!(parsed.warnings.is_empty());
        assert_eq!(parsed.record, rec);
        assert_eq!(serialize_nbo_json(&parsed.record), json);

        let text = serialize_nbo_text(&rec);
        let parsed = parse_nbo_text(&text, Validation::Strict).unwrap();
        assert_eq!(parsed.record, rec);
        assert_eq!(serialize_nbo_text(&parsed.record), text);
        assert_eq!(parse_nbo_record(&text, Validation::Strict).unwrap().record, rec);
    }
}

#[test]
fn simg_round_trip_and_determinism() {
    let rules = OracleRules::default();
    for m in fixtures(3, 100) {
        let g = synth_simg(&m, &rules).unwrap();
        let text = serialize_simg(&g);
        assert_eq!(text, serialize_simg(&g));
        let back = parse_simg(&text).unwrap();
        assert_eq!(back, g);
        assert_eq!(parse_molecule(&text).unwrap(), m);
    }
}

#[test]
fn empty_interaction_graph_keeps_an_empty_array() {
    let g = synth_simg(&common::hydrogen(), &OracleRules::default()).unwrap();
    assert!(g.interactions.is_empty());
    let text = serialize_simg(&g);
    assert!(text.contains("\"interactions\": []"), "{text}");
    assert_eq!(parse_simg(&text).unwrap(), g);
}

#[test]
fn simg_checksum_detects_edits() {
    let g = synth_simg(&common::water(), &OracleRules::default()).unwrap();
    let text = serialize_simg(&g);
    let tampered = text.replacen("\"charge\": 0", "\"charge\": 1", 1);
    assert_ne!(tampered, text);
    assert_eq!(parse_simg(&tampered).unwrap_err().kind, ParseErrorKind::Checksum);
}

#[test]
fn water_molj_maps_fields() {
    let text = serialize_molecule(&common::water());
    let m = parse_molecule(&text).unwrap();
    assert_eq!((m.atoms.len(), m.bonds.len()), (3, 2));
    assert!(m.bonds.iter().all(|b| b.order == 1));
    let bad = text.replace("\"j\": 2", "\"j\": 99");
    let e = parse_molecule(&bad).unwrap_err();
    assert_eq!(e.kind, ParseErrorKind::Reference);
    assert!(within_extent(&bad, &e));
}

#[test]
fn strict_and_lenient_occupancy() {
    let line = "LP O1 s= 0.50 p=99.50 d= 0.00 f= 0.00 occ=2.3\n";
    assert_eq!(parse_nbo_text(line, Validation::Strict).unwrap_err().kind, ParseErrorKind::Range);
    let lenient = parse_nbo_text(line, Validation::Lenient).unwrap();
    assert_eq!(lenient.warnings.len(), 1);
    assert_eq!(lenient.record.lone_pairs[0].occupancy, 2.3);
}

/// Mutations of valid documents: every failure is located inside the input.
#[test]
fn mutated_documents_fail_with_located_errors() {
    let rules = OracleRules::default();
    let mut rng = item_rng(4, "mutate", 0);
    let mut failures = 0;
    for m in fixtures(4, 40) {
        let rec = synth_label(&m, &rules).unwrap();
        let docs = [serialize_molecule(&m), serialize_nbo_json(&rec), serialize_nbo_text(&rec), serialize_simg(&synth_simg(&m, &rules).unwrap())];
        for (k, doc) in docs.iter().enumerate() {
            for _ in 0..10 {
                let mut bytes = doc.as_bytes().to_vec();
                let at = rng.random_range(0..bytes.len());
                match rng.random_range(0..3) {
                    0 => bytes[at] = b"{}[]:,\"0-x9.e \n"[rng.random_range(0..15)],
                    1 => {
                        bytes.remove(at);
                    }
                    _ => bytes.truncate(at),
                }
                let Ok(text) = String::from_utf8(bytes) else { continue };
                let res = match k {
                    0 => parse_molecule(&text).map(|_| ()),
                    1 => parse_nbo_json(&text, Validation::Strict).map(|_| ()),
                    2 => parse_nbo_text(&text, Validation::Strict).map(|_| ()),
                    _ => parse_simg(&text).map(|_| ()),
                };
                if let Err(e) = res {
                    failures += 1;
                    assert!(within_extent(&text, &e), "{e} outside input");
                }
            }
        }
    }
    assert!(failures > 500);
}

#[test]
fn ten_thousand_random_byte_strings_never_panic() {
    let mut rng = item_rng(5, "fuzz", 0);
    let alphabet = b"{}[]\":,.-+0123456789eEabcdfghijklmnopqrstuvwxyzLPBDNAE2*=># \n\t\r\xff\xc3";
    for i in 0..10_000 {
        let len = rng.random_range(0..200);
        let bytes: Vec<u8> = if i % 2 == 0 {
            let mut b = vec![0u8; len];
            rng.fill_bytes(&mut b);
            b
        } else {
            (0..len).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect()
        };
        let _ = parse_molecule_bytes(&bytes);
        let _ = parse_nbo_record_bytes(&bytes, Validation::Strict);
        let _ = parse_nbo_record_bytes(&bytes, Validation::Lenient);
        let _ = parse_simg_bytes(&bytes);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn parsers_are_total_and_errors_are_located(s in "\\PC{0,160}") {
        for res in [
            parse_molecule(&s).err(),
            parse_nbo_json(&s, Validation::Strict).err(),
            parse_nbo_text(&s, Validation::Strict).err(),
            parse_simg(&s).err(),
        ].into_iter().flatten() {
            prop_assert!(within_extent(&s, &res), "{} outside input", res);
        }
    }

    #[test]
    fn serialization_is_a_fixed_point(seed in 0u64..10_000) {
        let m = dataset(seed, 1, &SynthConfig::default()).remove(0);
        let rec = synth_label(&m, &OracleRules::default()).unwrap();
        let json = serialize_nbo_json(&rec);
        let once = parse_nbo_json(&json, Validation::Strict).unwrap().record;
        prop_assert_eq!(serialize_nbo_json(&once), json);
        let text = serialize_molecule(&m);
        prop_assert_eq!(serialize_molecule(&parse_molecule(&text).unwrap()), text);
    }

    #[test]
    fn canonical_floats_round_trip(x in -1e6f64..1e6) {
        let c = canonical_f64(x);
        let text = format_f64(c);
        prop_assert_eq!(text.parse::<f64>().unwrap(), c);
        prop_assert!((c - x).abs() <= 1e-8 * x.abs().max(1e-300));
    }
}
