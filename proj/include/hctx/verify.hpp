#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace hctx {

struct VerifyCheck {
    std::string name;
    bool pass = false;
    std::string detail;
};

// Self-contained numerical invariant suite: kernel oracles, gradient
// checks, rotation/attention/memory identities, optimizer convergence and
// checkpoint round-trip. Each check runs independently; an exception
// fails that check only.
std::vector<VerifyCheck> run_verification(std::uint64_t seed);

}  // namespace hctx
