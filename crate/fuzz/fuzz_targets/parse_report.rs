#![no_main]

use libfuzzer_sys::fuzz_target;
use loggas_cli::report::{parse_report, summarize};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(doc) = parse_report(text) {
        let s = summarize(std::slice::from_ref(&doc));
        assert_eq!(s.rows.len(), doc.reports.len());
        assert_eq!(s.all_pass, doc.all_pass);
    }
});
