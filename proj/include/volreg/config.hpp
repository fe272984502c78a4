#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "volreg/models.hpp"
#include "volreg/training.hpp"

namespace volreg {

// Flat `key = value` text with dotted namespaces (model.d, train.lr).
// '#' starts a comment; later assignments win.
using KvMap = std::map<std::string, std::string>;

KvMap parse_config_text(const std::string& text);
KvMap parse_config_file(const std::filesystem::path& path);
// override in "key=value" form, as passed on the command line
void apply_override(KvMap& kv, const std::string& assignment);

// Fully resolved run description: the resolved text is written beside every
// run's outputs so a run can be reproduced from it alone.
struct RunConfig {
    ModelSpec model;
    TrainConfig train;
    std::string data_manifest;

    std::string to_text() const;
};

// Validates keys and applies family defaults (slice_rnn gets grad clip 1
// unless train.grad_clip is set explicitly).
RunConfig resolve_run_config(const KvMap& kv);

}  // namespace volreg
