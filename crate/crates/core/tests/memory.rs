mod common;

use common::alloc_audit::CountingAlloc;
use common::memory_audit::audit;
use hrt::model::ModelConfig;

#[global_allocator]
static ALLOC: CountingAlloc = CountingAlloc;

#[test]
fn arena_stays_within_estimate_without_heap_traffic() {
    let config = ModelConfig {
        d_model: 16,
        d_ff: 32,
        n_heads: 2,
        enc_layers: 1,
        dec_layers: 1,
        vocab_size: 30,
        max_len: 40,
        chunk_sizes: vec![2, 3, 4],
    };
    let r = audit(&config, 1, 200, 2);
    for (phase, peak, est) in &r.peaks {
        assert!(peak <= est, "{phase}: {peak} > {est}");
        assert!(*peak > 0, "{phase} never used");
    }
    assert_eq!(r.heap_allocations, 0);
    assert!(r.max_output_len <= config.max_len);
}
