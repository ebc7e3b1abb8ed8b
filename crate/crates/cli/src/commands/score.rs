//! `ape score`: TER and BLEU for a hypothesis file against a line-aligned
//! reference file. Prints the plain report to standard output; `--json`
//! adds a machine-readable record with every metric component.

use std::path::PathBuf;

use ape_core::evaluate::{bleu_corpus, lowercase_corpus, report_line, ter_corpus};
use ape_core::text::{read_lines, tokenize};
use ape_core::{CoreError, Result};

#[derive(clap::Args)]
pub struct Args {
    /// Hypothesis sentences, one per line.
    #[arg(long)]
    hyp: PathBuf,
    /// Reference sentences, line-aligned with --hyp.
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Lowercase both sides before scoring (default is case-sensitive).
    #[arg(long)]
    lowercase: bool,
    /// Also print a JSON record with all metric components.
    #[arg(long)]
    json: bool,
}

pub fn run(args: Args) -> Result<()> {
    let hyp_lines = read_lines(&args.hyp)?;
    let ref_lines = read_lines(&args.reference)?;
    if hyp_lines.len() != ref_lines.len() {
        return Err(CoreError::LineCountMismatch {
            left: args.hyp.clone(),
            left_lines: hyp_lines.len(),
            right: args.reference.clone(),
            right_lines: ref_lines.len(),
        });
    }
    let split = |lines: &[String]| -> Vec<Vec<String>> {
        lines.iter().map(|l| tokenize(l)).collect()
    };
    let mut hyps = split(&hyp_lines);
    let mut refs = split(&ref_lines);
    if args.lowercase {
        hyps = lowercase_corpus(&hyps);
        refs = lowercase_corpus(&refs);
    }
    let ter = ter_corpus(&hyps, &refs)?;
    let bleu = bleu_corpus(&hyps, &refs)?;
    println!("{}", report_line(&ter, &bleu));
    if args.json {
        let record = serde_json::json!({
            "ter": ter,
            "ter_score": ter.score(),
            "bleu": bleu,
            "segments": hyps.len(),
            "lowercase": args.lowercase,
        });
        println!("{record}");
    }
    Ok(())
}
