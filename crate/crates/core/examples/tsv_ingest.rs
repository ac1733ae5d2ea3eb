//! Reads a GLUE-style pair TSV, builds the vocabulary and encodes it.
//!
//!     cargo run --example tsv_ingest -- [file.tsv]

use beexformer::data::{build_vocabulary, encode, load_tsv, LabelSet, TsvSchema};

const SAMPLE: &str = "index\tsentence1\tsentence2\tlabel
0\tThe cat sat on the mat.\tA cat is sitting.\tentailment
1\tIt rained all day.\tThe ground stayed dry.\tcontradiction
2\tShe plays the violin.\tShe owns a car.\tneutral
";

fn main() -> beexformer::Result<()> {
    let dir = tempfile::tempdir()?;
    let path = match std::env::args().nth(1) {
        Some(p) => p.into(),
        None => {
            let p = dir.path().join("sample.tsv");
            std::fs::write(&p, SAMPLE)?;
            p
        }
    };
    let schema = TsvSchema {
        text_a: "sentence1".into(),
        text_b: Some("sentence2".into()),
        label: "label".into(),
    };
    let raw = load_tsv(&path, &schema)?;
    let labels = LabelSet::infer(&raw);
    let vocab = build_vocabulary(&raw);
    let data = encode("sample", &raw, &vocab, &labels, 16)?;
    println!(
        "{} rows, {} tokens, labels {:?}",
        data.len(),
        vocab.len(),
        labels.labels
    );
    for (r, ex) in raw.iter().zip(&data.examples) {
        let toks: Vec<&str> = ex.seq.ids[..ex.seq.len]
            .iter()
            .map(|&i| vocab.decode(i).unwrap_or("?"))
            .collect();
        println!("{} -> {:?}", r.label, toks);
    }
    Ok(())
}
