#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "maskasr/model.hpp"

namespace maskasr {

struct NamedParam {
    std::string name;
    ParamSelector group;
    TensorPtr tensor;
};

// Canonical traversal of every value array of a model: the params() partition
// in selector order (backbone, specialist, mapping, biases, heads) followed
// by the adaptation bias overlays and the dedicated score copies. The same
// model always yields the same names in the same order, so the list doubles
// as the checkpoint's parameter table.
std::vector<NamedParam> named_parameters(const EncoderModel& model);

// Checkpoint layout: a line-oriented text manifest (format version, encoder
// geometry, optional config echo, language and head registries, parameter
// table with name / group / dtype / frozen flag / byte offset / shape), then
// `payload <bytes>` and the concatenated parameter values as little-endian
// IEEE-754 doubles in table order. Offsets are contiguous from zero and
// exhaust the payload.
void save_checkpoint(const std::string& path, const EncoderModel& model,
                     const std::vector<std::pair<std::string, std::string>>& config_echo = {});

struct CheckpointData {
    EncoderModel model;
    std::vector<std::pair<std::string, std::string>> config_echo;
};

// Rebuilds the model structure from the registries, then checks the manifest
// against it entry by entry; a corrupt file fails with the first violated
// invariant named. Loading then saving reproduces the file byte for byte.
CheckpointData load_checkpoint(const std::string& path);

// Sidecar persistence for the recorded mapping snapshots (the checkpoint
// stores only final parameters): one CSV row per snapshot.
void save_t_history_csv(const std::string& path,
                        const std::vector<std::vector<double>>& history);
std::vector<std::vector<double>> load_t_history_csv(const std::string& path);

}  // namespace maskasr
