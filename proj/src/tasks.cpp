#include "hctx/tasks.hpp"

#include <algorithm>
#include <random>
#include <stdexcept>

namespace hctx {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

int pick(std::mt19937_64& rng, int begin, int end) {
    return begin + static_cast<int>(rng() % static_cast<std::uint64_t>(end - begin));
}

}  // namespace

std::uint64_t sample_seed(std::uint64_t base, std::uint64_t step, std::uint64_t index) {
    return splitmix64(base ^ splitmix64(step * 0x51ED270B7A14C453ull + index));
}

TaskVocab::TaskVocab(std::size_t vocab, std::size_t key_count,
                     std::size_t value_count) {
    if (vocab < 16) throw std::invalid_argument("task vocab must be >= 16");
    const int usable = static_cast<int>(vocab) - 4;
    const int keys = key_count ? static_cast<int>(key_count) : usable / 3;
    const int vals = value_count ? static_cast<int>(value_count) : usable / 3;
    if (keys < 1 || vals < 1 || keys + vals + 1 > usable) {
        throw std::invalid_argument("task vocab: key/value ranges leave no filler");
    }
    key_begin = 4;
    key_end = key_begin + keys;
    value_begin = key_end;
    value_end = value_begin + vals;
    filler_begin = value_end;
    filler_end = static_cast<int>(vocab);
}

TaskSample gen_copy_task(std::uint64_t seed, const CopyTaskConfig& cfg) {
    const std::size_t t = cfg.seq_len, s = cfg.span;
    if (s == 0 || 2 * s + 1 > t) {
        throw std::invalid_argument("copy task: span does not fit in sequence");
    }
    TaskVocab tv(cfg.vocab);
    std::mt19937_64 rng(seed);
    std::vector<int> seq(t + 1);
    std::vector<int> payload(s);
    for (std::size_t i = 0; i < s; ++i) {
        payload[i] = pick(rng, tv.filler_begin, tv.filler_end);
        seq[i] = payload[i];
    }
    for (std::size_t i = s; i < t - s; ++i) {
        seq[i] = pick(rng, tv.filler_begin, tv.filler_end);
    }
    seq[t - s] = tv.repeat;
    for (std::size_t i = 0; i < s; ++i) seq[t - s + 1 + i] = payload[i];

    TaskSample out;
    out.input.assign(seq.begin(), seq.end() - 1);
    out.target.assign(seq.begin() + 1, seq.end());
    out.mask.assign(t, 0);
    for (std::size_t i = t - s; i < t; ++i) out.mask[i] = 1;
    return out;
}

TaskSample gen_kv_recall(std::uint64_t seed, const KvRecallConfig& cfg) {
    const std::size_t t = cfg.seq_len, c = cfg.chunk_size;
    if (cfg.n_pairs == 0 || 1 + 2 * cfg.n_pairs > c) {
        throw std::invalid_argument("kv recall: pairs do not fit in chunk 0");
    }
    if (cfg.queries == 0) throw std::invalid_argument("kv recall: queries must be >= 1");
    if (cfg.gap_chunks * c >= t || (cfg.gap_chunks + 1) * c + 3 * cfg.queries > t + 1) {
        throw std::invalid_argument("kv recall: gap does not fit in sequence");
    }
    TaskVocab tv(cfg.vocab, cfg.key_count, cfg.value_count);
    if (cfg.shared_key_value) {
        tv.value_begin = tv.key_begin;
        tv.value_end = tv.key_end;
        if (tv.key_end - tv.key_begin < 2) {
            throw std::invalid_argument("kv recall: shared range needs >= 2 keys");
        }
    }
    const std::size_t n_keys = static_cast<std::size_t>(tv.key_end - tv.key_begin);
    if (cfg.n_pairs > n_keys) {
        throw std::invalid_argument("kv recall: more pairs than distinct keys");
    }
    std::mt19937_64 rng(seed);

    // Store chunk: marker at 0, pairs at random non-overlapping odd offsets
    // (so their positions carry no information), pad elsewhere.
    std::vector<int> seq(t + 1, tv.pad);
    seq[0] = tv.store;
    std::vector<int> keys(n_keys);
    for (std::size_t i = 0; i < n_keys; ++i) keys[i] = tv.key_begin + static_cast<int>(i);
    for (std::size_t i = 0; i + 1 < n_keys; ++i) {  // Fisher-Yates
        std::size_t j = i + rng() % (n_keys - i);
        std::swap(keys[i], keys[j]);
    }
    std::vector<std::size_t> slots;  // pair start offsets inside chunk 0
    for (std::size_t p = 1; p + 1 < c; p += 2) slots.push_back(p);
    for (std::size_t i = 0; i + 1 < slots.size(); ++i) {
        std::size_t j = i + rng() % (slots.size() - i);
        std::swap(slots[i], slots[j]);
    }
    if (cfg.n_pairs > slots.size()) {
        throw std::invalid_argument("kv recall: pairs do not fit in chunk 0");
    }
    std::vector<int> values(cfg.n_pairs);
    for (std::size_t i = 0; i < cfg.n_pairs; ++i) {
        do {
            values[i] = pick(rng, tv.value_begin, tv.value_end);
        } while (cfg.shared_key_value && values[i] == keys[i]);
    }
    // Each pair is repeated across the free slots so the stored content
    // dominates the chunk instead of being diluted by padding; the slot
    // shuffle keeps positions uninformative.
    for (std::size_t i = 0; i < slots.size(); ++i) {
        const std::size_t p = i % cfg.n_pairs;
        seq[slots[i]] = keys[p];
        seq[slots[i] + 1] = values[p];
    }

    // Filler from chunk 1 up to the query tail.
    const int filler_end =
        cfg.filler_count
            ? std::min(tv.filler_end,
                       tv.filler_begin + static_cast<int>(cfg.filler_count))
            : tv.filler_end;
    for (std::size_t i = c; i + 2 < t + 1; ++i) {
        seq[i] = pick(rng, tv.filler_begin, filler_end);
    }
    // Decoy pairs inside the gap chunks. Half of them reuse the stored keys
    // (with unrelated values), so matching a key occurrence elsewhere in
    // the sequence cannot identify the stored pair; the answer is defined
    // by the store chunk alone.
    for (std::size_t g = 1; g <= cfg.gap_chunks; ++g) {
        for (std::size_t d = 0; d < cfg.decoys_per_gap_chunk; ++d) {
            const std::size_t pos = g * c + rng() % (c - 1);
            const int decoy_key =
                rng() % 2 ? keys[rng() % cfg.n_pairs]
                          : tv.key_begin + static_cast<int>(rng() % n_keys);
            const int decoy_value = pick(rng, tv.value_begin, tv.value_end);
            if (pos + 2 >= t) continue;
            seq[pos] = decoy_key;
            seq[pos + 1] = decoy_value;
        }
    }

    const std::size_t tail_begin = t + 1 - 3 * cfg.queries;  // first query block
    if (cfg.candidates_in_query) {
        const std::size_t nv = static_cast<std::size_t>(tv.value_end - tv.value_begin);
        const std::size_t q_begin = t - c, q_end = tail_begin;
        if (q_end - q_begin < nv) {
            throw std::invalid_argument("kv recall: candidate set does not fit");
        }
        std::vector<std::size_t> pos(q_end - q_begin);
        for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = q_begin + i;
        for (std::size_t i = 0; i + 1 < pos.size(); ++i) {
            std::size_t j = i + rng() % (pos.size() - i);
            std::swap(pos[i], pos[j]);
        }
        std::vector<int> cands(nv);
        for (std::size_t i = 0; i < nv; ++i) cands[i] = tv.value_begin + static_cast<int>(i);
        for (std::size_t i = 0; i + 1 < nv; ++i) {
            std::size_t j = i + rng() % (nv - i);
            std::swap(cands[i], cands[j]);
        }
        for (std::size_t i = 0; i < nv; ++i) seq[pos[i]] = cands[i];
    }

    // Successive query blocks walk through distinct pairs when several are
    // stored, so no answer can be copied from an earlier block.
    const std::size_t q = rng() % cfg.n_pairs;
    TaskSample out;
    out.mask.assign(t, 0);
    for (std::size_t j = 0; j < cfg.queries; ++j) {
        const std::size_t s = tail_begin + 3 * j;
        const std::size_t p = (q + j) % cfg.n_pairs;
        seq[s] = tv.query;
        seq[s + 1] = keys[p];
        seq[s + 2] = values[p];
        out.mask[s + 1] = 1;  // the key position predicts the answer
    }

    out.input.assign(seq.begin(), seq.end() - 1);
    out.target.assign(seq.begin() + 1, seq.end());
    return out;
}

}  // namespace hctx
