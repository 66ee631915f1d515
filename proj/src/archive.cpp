#include "mmf/archive.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "mmf/error.hpp"
#include "mmf/tensor_io.hpp"

namespace mmf {

namespace {

constexpr const char* kArchiveMagic = "MMFARCHIVE";
constexpr int kArchiveVersion = 1;

bool has_space(const std::string& s) { return s.find_first_of(" \t\r\n") != std::string::npos; }

}  // namespace

const Tensor* Archive::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

void save_archive(const std::filesystem::path& path, const Archive& archive) {
  std::ostringstream header;
  header << kArchiveMagic << ' ' << kArchiveVersion << '\n';
  for (const auto& [k, v] : archive.meta) {
    if (k.empty() || has_space(k) || v.find('\n') != std::string::npos) throw FormatError("invalid meta entry '" + k + "'");
    header << "meta " << k << ' ' << v << '\n';
  }
  std::set<std::string> seen;
  std::size_t offset = 0;
  for (const auto& [name, t] : archive.tensors) {
    if (name.empty() || has_space(name)) throw FormatError("invalid tensor name '" + name + "'");
    if (!seen.insert(name).second) throw FormatError("duplicate tensor name '" + name + "'");
    const std::size_t size = ften_size(t);
    header << "tensor " << name << ' ' << offset << ' ' << size << '\n';
    offset += size;
  }
  header << "end\n";

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  const std::string h = header.str();
  os.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const auto& [name, t] : archive.tensors) write_ften(os, t);
  if (!os) throw FormatError("failed writing archive " + path.string());
}

Archive load_archive(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open archive " + path.string());
  const auto fail = [&](const std::string& what) { return FormatError(path.string() + ": " + what); };

  std::string line;
  if (!std::getline(is, line)) throw fail("empty archive");
  {
    std::istringstream ls(line);
    std::string magic;
    int version = 0;
    ls >> magic >> version;
    if (magic != kArchiveMagic) throw fail("not an archive");
    if (version != kArchiveVersion) throw fail("unsupported archive version " + std::to_string(version));
  }
  Archive archive;
  struct Entry {
    std::string name;
    std::size_t offset, size;
  };
  std::vector<Entry> entries;
  bool ended = false;
  while (std::getline(is, line)) {
    if (line == "end") {
      ended = true;
      break;
    }
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "meta") {
      std::string key;
      ls >> key;
      std::string value;
      std::getline(ls, value);
      if (!value.empty() && value.front() == ' ') value.erase(0, 1);
      archive.meta[key] = value;
    } else if (kind == "tensor") {
      Entry e;
      if (!(ls >> e.name >> e.offset >> e.size)) throw fail("malformed tensor entry: " + line);
      entries.push_back(e);
    } else {
      throw fail("unexpected manifest line: " + line);
    }
  }
  if (!ended) throw fail("manifest missing 'end'");
  const auto payload_start = is.tellg();
  for (const Entry& e : entries) {
    is.seekg(payload_start + static_cast<std::streamoff>(e.offset));
    Tensor t = read_ften(is);
    if (ften_size(t) != e.size) throw fail("size mismatch for tensor " + e.name);
    archive.tensors.emplace_back(e.name, std::move(t));
  }
  return archive;
}

void restore_tensors(const NamedTensors& source, NamedTensors& targets) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : source) by_name[name] = &t;
  std::vector<std::string> problems;
  std::set<std::string> used;
  for (auto& [name, target] : targets) {
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      problems.push_back("missing '" + name + "'");
      continue;
    }
    used.insert(name);
    if (it->second->shape() != target.shape()) {
      problems.push_back("shape mismatch for '" + name + "': stored " + to_string(it->second->shape()) +
                         ", expected " + to_string(target.shape()));
    }
  }
  for (const auto& [name, t] : source) {
    if (!used.contains(name)) problems.push_back("unexpected '" + name + "'");
  }
  if (!problems.empty()) {
    std::string msg = "checkpoint does not match model:";
    for (const auto& p : problems) msg += " " + p + ";";
    throw FormatError(msg);
  }
  for (auto& [name, target] : targets) target.copy_from(*by_name[name]);
}

}  // namespace mmf
