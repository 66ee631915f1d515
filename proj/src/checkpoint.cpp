#include "mmf/checkpoint.hpp"

#include <set>

#include "mmf/error.hpp"

namespace mmf {

namespace {

NamedTensors all_tensors(const Classifier& model) {
  nn::Registry reg = model.registry();
  NamedTensors out = std::move(reg.params);
  for (auto& b : reg.buffers) out.push_back(std::move(b));
  return out;
}

}  // namespace

NamedTensors snapshot(const Classifier& model) {
  NamedTensors out;
  for (const auto& [name, t] : all_tensors(model)) out.emplace_back(name, t.clone());
  return out;
}

void restore(Classifier& model, const NamedTensors& state) {
  NamedTensors targets = all_tensors(model);
  restore_tensors(state, targets);
}

void save_model(const std::filesystem::path& path, const Classifier& model,
                const std::map<std::string, std::string>& extra_meta) {
  Archive archive;
  archive.meta = extra_meta;
  archive.meta["format_version"] = std::to_string(kModelFormatVersion);
  archive.meta["method"] = method_name(model.method());
  archive.meta["strategy"] = std::holds_alternative<FusionStrategy>(model.method())
                                 ? std::string(strategy_name(std::get<FusionStrategy>(model.method())))
                                 : "single";
  archive.meta["preset"] = model.preset();
  archive.tensors = all_tensors(model);
  std::set<std::string> groups;
  std::string components;
  for (const auto& [name, t] : archive.tensors) {
    const std::string group = name.substr(0, name.find('.'));
    if (groups.insert(group).second) components += (components.empty() ? "" : ",") + group;
  }
  archive.meta["components"] = components;
  save_archive(path, archive);
}

LoadedModel load_model(const std::filesystem::path& path) {
  Archive archive = load_archive(path);
  const auto get = [&](const std::string& key) {
    auto it = archive.meta.find(key);
    if (it == archive.meta.end()) throw FormatError(path.string() + ": checkpoint meta lacks '" + key + "'");
    return it->second;
  };
  if (get("format_version") != std::to_string(kModelFormatVersion)) {
    throw FormatError(path.string() + ": unsupported model format version " + get("format_version"));
  }
  LoadedModel loaded;
  loaded.model = build_model(parse_method(get("method")), get("preset"), 0);
  try {
    restore(*loaded.model, archive.tensors);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  loaded.meta = std::move(archive.meta);
  return loaded;
}

}  // namespace mmf
