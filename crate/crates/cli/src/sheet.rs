//! Annotation spreadsheet: one row per (record, method), methods shuffled
//! per record, answer columns left blank.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use smv_core::{SaliencyRecord, Verbalization};

pub const HEADER: [&str; 8] =
    ["instance_id", "text", "explanation", "label_options", "task_a", "task_b1", "task_b2", "method"];

fn record_seed(seed: u64, id: &str) -> u64 {
    id.bytes().fold(seed ^ 0x9e37_79b9_7f4a_7c15, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Writes the sheet. `methods` maps a method name to its verbalizations by
/// record id; records missing from a method are listed in the error.
pub fn write_sheet(
    out: impl Write,
    records: &[SaliencyRecord],
    methods: &BTreeMap<String, BTreeMap<String, Verbalization>>,
    seed: u64,
) -> anyhow::Result<()> {
    let missing: Vec<String> = methods
        .iter()
        .flat_map(|(m, verbs)| {
            records.iter().filter(|r| !verbs.contains_key(r.id())).map(move |r| format!("{m}:{}", r.id()))
        })
        .collect();
    if !missing.is_empty() {
        anyhow::bail!("no verbalization for {}", missing.join(", "));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER)?;
    for record in records {
        let mut order: Vec<&String> = methods.keys().collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(record_seed(seed, record.id())));
        let text = record.tokens().join(" ");
        let labels = record.label_set().join(" | ");
        for method in order {
            let verb = &methods[method][record.id()];
            w.write_record([record.id(), &text, &verb.text, &labels, "", "", "", method])?;
        }
    }
    w.flush()?;
    Ok(())
}
