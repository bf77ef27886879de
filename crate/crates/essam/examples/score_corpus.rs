//! Rule-based reward over a small response corpus.
//!
//! Each line of the corpus is scored for numeric accuracy (the value after
//! the final "####" marker against the gold answer) and format adherence
//! (think tags and answer marker), combined as accuracy + 0.1 * format.

use std::path::Path;

use essam::reward::score_corpus;

fn main() {
    let corpus = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/demo_corpus.jsonl");
    let report = score_corpus(&corpus).unwrap();
    for item in &report.items {
        println!(
            "line {}: accuracy {}, format {:.1}, total {:.2}",
            item.line, item.accuracy, item.format, item.total
        );
    }
    println!("mean total {:.6}", report.mean_total);
}
