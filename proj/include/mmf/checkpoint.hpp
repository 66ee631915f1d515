#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>

#include "mmf/archive.hpp"
#include "mmf/fusion.hpp"

namespace mmf {

inline constexpr int kModelFormatVersion = 1;

// Model checkpoint: an archive whose meta block records format_version,
// method, strategy tag ("single" for one-modality models), preset and the
// component groups; tensors are named "<component>.<parameter>" with one
// group per modality network plus the decision head(s).
void save_model(const std::filesystem::path& path, const Classifier& model,
                const std::map<std::string, std::string>& extra_meta = {});

struct LoadedModel {
  std::unique_ptr<Classifier> model;
  std::map<std::string, std::string> meta;
};

// Rebuilds the model from its meta block and restores every parameter and
// buffer; any missing, extra, or mis-shaped tensor is an error.
LoadedModel load_model(const std::filesystem::path& path);

// In-memory snapshot/restore of all parameters and buffers.
NamedTensors snapshot(const Classifier& model);
void restore(Classifier& model, const NamedTensors& state);

}  // namespace mmf
