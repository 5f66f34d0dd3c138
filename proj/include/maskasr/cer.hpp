#pragma once

#include <cstdint>

#include "maskasr/ctc.hpp"

namespace maskasr {

// Per-utterance character-error-rate report.
struct CerReport {
    int64_t distance = 0;
    int64_t ref_length = 0;
    double cer = 0.0;
};

// Levenshtein distance with unit insert/delete/substitute costs.
int64_t edit_distance(const Transcript& a, const Transcript& b);

// distance / ref_length; the reference must be non-empty (empty references are
// only meaningful under corpus-level micro-averaging).
CerReport cer(const Transcript& hyp, const Transcript& ref);

// Micro-averaged corpus CER: total edit distance over total reference length.
struct CerAccumulator {
    int64_t total_distance = 0;
    int64_t total_ref_length = 0;
    int64_t utterances = 0;
    void add(const Transcript& hyp, const Transcript& ref);
    double value() const;  // 0 when nothing was accumulated
};

}  // namespace maskasr
