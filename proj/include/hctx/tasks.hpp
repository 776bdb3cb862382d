#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace hctx {

// One synthetic training sequence: next-token inputs/targets plus a loss
// mask selecting the scored positions. Generation is a pure function of
// the seed.
struct TaskSample {
    std::vector<int> input;
    std::vector<int> target;
    std::vector<std::uint8_t> mask;
};

struct CopyTaskConfig {
    std::size_t seq_len = 160;
    std::size_t vocab = 64;
    std::size_t span = 8;
};

struct KvRecallConfig {
    std::size_t seq_len = 160;
    std::size_t chunk_size = 32;
    std::size_t vocab = 64;
    std::size_t n_pairs = 1;
    std::size_t gap_chunks = 3;
    // Decoy key/value pairs sprinkled into the filler chunks; they reuse
    // the key vocabulary (including the queried key) with unrelated
    // values, so matching a key occurrence elsewhere in the sequence is
    // not enough - the answer is defined by the store chunk.
    std::size_t decoys_per_gap_chunk = 0;
    // Sizes of the key and value token ranges; 0 splits the non-marker
    // vocabulary into three equal ranges (keys, values, filler).
    std::size_t key_count = 0;
    std::size_t value_count = 0;
    // Number of distinct filler tokens actually sampled (0 = the whole
    // filler range). 1 makes the gap deterministic, which removes
    // filler-induced variance at the scored position.
    std::size_t filler_count = 0;
    // Replace part of the query chunk's filler with a random permutation
    // of the whole value range. The set is identical in every sample, so
    // it carries no information about the answer, but it lets the model
    // resolve the recalled value by matching against in-context
    // candidates instead of decoding it from the summary alone.
    bool candidates_in_query = false;
    // Draw values from the key range (value != its key). Because every
    // query presents a key as input, the shared token family keeps
    // receiving input-side gradient, which prevents the tied value
    // embeddings from collapsing when the store chunk itself is behind a
    // gradient-truncation boundary.
    bool shared_key_value = false;
    // Number of query/key/answer blocks at the tail, all querying the
    // same stored pair; every answer position is scored. Repeats after
    // the first are trivially solvable by in-context copy, but they give
    // the value tokens an input role inside the loss-bearing window,
    // which keeps the tied value embeddings from collapsing.
    std::size_t queries = 1;
};

// Token id layout shared by both tasks (vocab >= 16 required):
//   0 pad, 1 store marker, 2 query marker, 3 repeat marker,
//   then keys, values and filler. key_count/value_count of 0 split the
//   remaining vocabulary into three equal ranges.
struct TaskVocab {
    explicit TaskVocab(std::size_t vocab, std::size_t key_count = 0,
                       std::size_t value_count = 0);
    int pad = 0, store = 1, query = 2, repeat = 3;
    int key_begin, key_end;      // [key_begin, key_end)
    int value_begin, value_end;  // [value_begin, value_end)
    int filler_begin, filler_end;
};

// Random span early, repeated after a marker late; only the repeated span
// positions are scored.
TaskSample gen_copy_task(std::uint64_t seed, const CopyTaskConfig& cfg);

// Key/value pairs stored in chunk 0, queried after gap_chunks chunks of
// filler; only the answer position is scored.
TaskSample gen_kv_recall(std::uint64_t seed, const KvRecallConfig& cfg);

// Mixes a stream seed with per-sample indices (splitmix64).
std::uint64_t sample_seed(std::uint64_t base, std::uint64_t step, std::uint64_t index);

}  // namespace hctx
