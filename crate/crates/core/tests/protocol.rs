mod common;

use common::{random_vec, rng, tiny_model};
use serde_json::Value;
use steer_core::model::{InterventionSpec, LanguageModel, PositionPolicy, TokenSequence};
use steer_core::protocol::{handle_line, serve, LocalTransport, RemoteEmbedder, RemoteModel, Transport};
use steer_core::retrieval::{EmbeddingProvider, HashProjectionEmbedder};
use steer_core::Error;

fn remote(seed: u64) -> (RemoteModel, steer_core::model::ToyModel) {
    let local = tiny_model(seed);
    let transport = LocalTransport {
        model: local.clone(),
        embedder: Some(Box::new(HashProjectionEmbedder::new(24, 3))),
    };
    let vocab = local.vocabulary().clone();
    (RemoteModel::connect(Box::new(transport), vocab).unwrap(), local)
}

#[test]
fn handshake_reports_shape_and_options() {
    let m = tiny_model(1);
    let reply = handle_line(&m, None, r#"{"op":"handshake"}"#).unwrap();
    assert_eq!(reply["L"], 4);
    assert_eq!(reply["d"], 16);
    assert_eq!(reply["vocab_size"], m.vocabulary().len());
    for (k, word) in ["0", "1", "2", "3"].iter().enumerate() {
        assert_eq!(reply["options"][word], m.vocabulary().option_token(k));
    }
}

#[test]
fn strength_zero_over_the_wire_is_a_no_op() {
    let (r, _) = remote(2);
    let seq = TokenSequence::new(vec![1, 6, 7, 8]);
    let v = random_vec(&mut rng(3), 16, 2.0);
    let base = r.forward(&seq, None, &[2]).unwrap();
    let zero = r
        .forward(&seq, Some(&InterventionSpec::final_token(2, v, 0.0)), &[2])
        .unwrap();
    for (a, b) in base.logits.iter().zip(&zero.logits) {
        assert!((a - b).abs() < 1e-4);
    }
    assert_eq!(base, zero);
}

#[test]
fn additive_diff_over_the_wire() {
    let (r, local) = remote(5);
    let l = r.shape().steering_layer();
    let seq = TokenSequence::new(vec![1, 9, 10, 7, 11]);
    let v = random_vec(&mut rng(8), 16, 1.0);
    let lambda = 1.75;
    let base = r.forward(&seq, None, &[l]).unwrap();
    let steered = r
        .forward(&seq, Some(&InterventionSpec::final_token(l, v.clone(), lambda)), &[l])
        .unwrap();
    let b = &base.captured[0].states;
    let s = &steered.captured[0].states;
    let t = b.len() - 1;
    for i in 0..16 {
        assert!((s[t][i] - b[t][i] - lambda * v[i]).abs() < 1e-4);
    }
    assert_eq!(&b[..t], &s[..t]);
    // the wire adds no drift relative to the in-process model
    assert_eq!(base, local.forward(&seq, None, &[l]).unwrap());
}

#[test]
fn bad_requests_get_error_frames_and_session_survives() {
    let m = tiny_model(0);
    let input = concat!(
        "{\"op\":\"handshake\"}\n",
        "not json\n",
        "\n",
        "{\"op\":\"forward\",\"tokens\":[]}\n",
        "{\"op\":\"embed\",\"text\":\"hello\"}\n",
        "{\"op\":\"forward\",\"tokens\":[1,2],\"capture_layers\":[9]}\n",
        "{\"op\":\"forward\",\"tokens\":[1,2]}\n",
    );
    let mut out = Vec::new();
    let n = serve(&m, None, input.as_bytes(), &mut out).unwrap();
    assert_eq!(n, 6);
    let replies: Vec<Value> = String::from_utf8(out)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert!(replies[0].get("L").is_some());
    for r in &replies[1..5] {
        assert!(r["error"].is_string(), "{r}");
    }
    assert_eq!(replies[5]["logits"].as_array().unwrap().len(), m.vocabulary().len());
}

#[test]
fn remote_model_rejects_all_positions_and_option_mismatch() {
    let (r, _) = remote(6);
    let spec = InterventionSpec {
        layer: 2,
        vector: vec![0.0; 16],
        strength: 1.0,
        position_policy: PositionPolicy::AllPositions,
    };
    let seq = TokenSequence::new(vec![1, 2]);
    assert!(matches!(r.forward(&seq, Some(&spec), &[]), Err(Error::Protocol(_))));

    // a vocabulary that places the digits elsewhere cannot talk to this server
    struct Swapped(LocalTransport<steer_core::model::ToyModel>);
    impl Transport for Swapped {
        fn round_trip(&self, request: &str) -> steer_core::Result<String> {
            let reply = self.0.round_trip(request)?;
            Ok(reply.replace("\"0\":2", "\"0\":5"))
        }
    }
    let local = tiny_model(6);
    let vocab = local.vocabulary().clone();
    let t = Swapped(LocalTransport {
        model: local,
        embedder: None,
    });
    assert!(matches!(
        RemoteModel::connect(Box::new(t), vocab),
        Err(Error::Protocol(_))
    ));
}

#[test]
fn remote_embedder_matches_local_provider() {
    let local = HashProjectionEmbedder::new(24, 3);
    let t = LocalTransport {
        model: tiny_model(0),
        embedder: Some(Box::new(local)),
    };
    let e = RemoteEmbedder::connect(Box::new(t)).unwrap();
    assert_eq!(e.dim(), 24);
    let text = "i feel tired and sad";
    let got = e.embed(text).unwrap();
    let want = local.embed(text).unwrap();
    for (a, b) in got.iter().zip(&want) {
        assert!((a - b).abs() < 1e-12);
    }
    let none = LocalTransport {
        model: tiny_model(0),
        embedder: None,
    };
    assert!(matches!(
        RemoteEmbedder::connect(Box::new(none)),
        Err(Error::Protocol(_))
    ));
}
