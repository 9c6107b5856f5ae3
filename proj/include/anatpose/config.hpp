#pragma once

#include <filesystem>
#include <string>

#include "anatpose/datagen.hpp"
#include "anatpose/trainer.hpp"

namespace anatpose::io {

// JSON <-> config structs. Missing fields keep their defaults, unknown fields
// are rejected so typos fail loudly.
TrainConfig load_train_config(const std::filesystem::path& path, const TrainConfig& defaults);
TrainConfig train_config_from_json_text(const std::string& text, const TrainConfig& defaults);
std::string train_config_to_json_text(const TrainConfig& config);

GenConfig load_gen_config(const std::filesystem::path& path);
GenConfig gen_config_from_json_text(const std::string& text);
std::string gen_config_to_json_text(const GenConfig& config);

}  // namespace anatpose::io
