#include "maskasr/cer.hpp"

#include <algorithm>
#include <vector>

#include "maskasr/common.hpp"

namespace maskasr {

int64_t edit_distance(const Transcript& a, const Transcript& b) {
    const size_t n = a.size(), m = b.size();
    std::vector<int64_t> prev(m + 1), curr(m + 1);
    for (size_t j = 0; j <= m; ++j) prev[j] = static_cast<int64_t>(j);
    for (size_t i = 1; i <= n; ++i) {
        curr[0] = static_cast<int64_t>(i);
        for (size_t j = 1; j <= m; ++j) {
            const int64_t subst = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            curr[j] = std::min({prev[j] + 1, curr[j - 1] + 1, subst});
        }
        std::swap(prev, curr);
    }
    return prev[m];
}

CerReport cer(const Transcript& hyp, const Transcript& ref) {
    if (ref.empty()) fail(ErrorCode::kInvalidArg, "per-utterance CER needs a non-empty reference");
    CerReport r;
    r.distance = edit_distance(hyp, ref);
    r.ref_length = static_cast<int64_t>(ref.size());
    r.cer = static_cast<double>(r.distance) / static_cast<double>(r.ref_length);
    return r;
}

void CerAccumulator::add(const Transcript& hyp, const Transcript& ref) {
    total_distance += edit_distance(hyp, ref);
    total_ref_length += static_cast<int64_t>(ref.size());
    ++utterances;
}

double CerAccumulator::value() const {
    if (total_ref_length == 0) return 0.0;
    return static_cast<double>(total_distance) / static_cast<double>(total_ref_length);
}

}  // namespace maskasr
