#pragma once

// Parameter checkpoints: a JSON manifest plus a sidecar blob.
//
//   <path>      {"format":"neurodec-checkpoint","version":1,"meta":{...},
//                "tensors":[{"name","shape","dtype":"f64","byte_offset","byte_length"}]}
//   <path>.bin  little-endian IEEE-754 doubles, tensors back to back
//
// Round trips are bit-exact.

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "neurodec/params.hpp"

namespace neurodec {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
    nlohmann::json meta = nlohmann::json::object();
    std::vector<std::pair<std::string, Tensor>> tensors;

    const Tensor* find(std::string_view name) const;
};

std::filesystem::path checkpoint_blob_path(const std::filesystem::path& manifest);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint checkpoint_from(const ParamSet& params, nlohmann::json meta = nlohmann::json::object(),
                           std::string_view prefix = {});

// Copies tensors named `prefix + param.name` into `params`. Every parameter
// must be present with a matching shape.
void restore_params(const Checkpoint& ckpt, const ParamSet& params, std::string_view prefix = {});

// Raw little-endian array helpers shared with the dataset format.
void write_f64_le(std::ostream& os, const double* data, std::size_t n);
void read_f64_le(std::istream& is, double* data, std::size_t n);

}  // namespace neurodec
