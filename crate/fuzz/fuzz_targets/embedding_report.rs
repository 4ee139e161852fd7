#![no_main]
use hornet::harness::EmbeddingReport;
use hornet::retrieval::RerankParams;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(report) = EmbeddingReport::from_json(s) {
            let _ = report.metrics();
            let params = RerankParams { k1: 3, k2: 2, lambda: 0.3 };
            let _ = report.reranked_metrics(&params);
        }
    }
});
