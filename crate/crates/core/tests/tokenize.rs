use factorix::tokenize::{ensure_same_provenance, pack_corpus, PackedDataset, Split, Tokenizer, BASE_VOCAB, BOS_ID};
use proptest::prelude::*;

fn trained() -> Tokenizer {
    let text = "she sells sea shells by the sea shore; the shells she sells are surely sea shells. ";
    Tokenizer::train(text.repeat(4).as_bytes(), BASE_VOCAB + 1 + 40).unwrap()
}

proptest! {
    #[test]
    fn decode_inverts_encode(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
        let tok = trained();
        let ids = tok.encode(&bytes);
        prop_assert!(ids.iter().all(|&i| i != BOS_ID && (i as usize) < tok.vocab_size()));
        prop_assert_eq!(tok.decode(&ids).unwrap(), bytes);
    }

    #[test]
    fn packing_keeps_order_and_bos(stream in prop::collection::vec(1u32..50, 0..200), window in 2usize..12) {
        let packed = pack_corpus(&stream, window, BOS_ID, 50, "h", Split::Train).unwrap();
        let span = window - 1;
        prop_assert_eq!(packed.dataset.len(), stream.len() / span);
        prop_assert_eq!(packed.discarded, stream.len() % span);
        let mut flat = Vec::new();
        for s in &packed.dataset.sequences {
            prop_assert_eq!(s.tokens().len(), window);
            prop_assert_eq!(s.tokens()[0], BOS_ID);
            prop_assert!(s.content().iter().all(|&t| t != BOS_ID));
            flat.extend_from_slice(s.content());
        }
        prop_assert_eq!(&flat[..], &stream[..flat.len()]);
        let again = pack_corpus(&stream, window, BOS_ID, 50, "h", Split::Train).unwrap();
        prop_assert_eq!(again.dataset.to_bytes(), packed.dataset.to_bytes());
    }
}

#[test]
fn tokenizer_file_round_trip_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.bpe"), dir.path().join("b.bpe"));
    trained().save(&a).unwrap();
    trained().save(&b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(Tokenizer::load(&a).unwrap(), trained());
}

#[test]
fn packed_file_round_trip_and_provenance() {
    let tok = trained();
    let stream = tok.encode(b"the sea shells she sells are sea shells for sure, she says");
    let train = pack_corpus(&stream, 4, BOS_ID, tok.vocab_size(), &tok.content_hash(), Split::Train).unwrap().dataset;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.pkds");
    train.save(&path).unwrap();
    let back = PackedDataset::load(&path).unwrap();
    assert_eq!(back, train);
    assert_eq!(back.to_bytes(), std::fs::read(&path).unwrap());

    let mut bytes = std::fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 5);
    assert!(PackedDataset::from_bytes(&bytes, &path).is_err());

    let other = pack_corpus(&stream, 4, BOS_ID, tok.vocab_size(), "another", Split::Validation).unwrap().dataset;
    assert!(ensure_same_provenance(&[&train, &back]).is_ok());
    assert!(ensure_same_provenance(&[&train, &other]).is_err());
}
