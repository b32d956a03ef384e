#ifndef GDPS_GRADBUNDLE_HPP
#define GDPS_GRADBUNDLE_HPP

// Gradient-snapshot bundles: per-(task, layer) matrices of per-sample
// gradients, stored on disk as a JSON manifest plus one `.gdm` file per entry.
//
// .gdm layout (little-endian):
//   bytes 0..3   magic "GDM1"
//   bytes 4..7   u32 rows
//   bytes 8..11  u32 cols
//   then rows*cols f32, row-major.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "gdps/error.hpp"
#include "gdps/util.hpp"

namespace gdps {

inline constexpr char kGdmMagic[4] = {'G', 'D', 'M', '1'};
inline constexpr std::size_t kGdmHeaderBytes = 12;
inline constexpr const char* kBundleVersion = "1";
inline constexpr const char* kElementType = "f32le";

/// Identifiers become file-name components, so they are restricted to a
/// portable character set.
inline bool valid_identifier(std::string_view id) {
  if (id.empty() || id == "." || id == "..") return false;
  for (char c : id) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                    c == '-' || c == '_' || c == '.';
    if (!ok) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// .gdm matrix files

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

/// Serializes a matrix to `.gdm` bytes. Entries are narrowed to f32.
inline std::string encode_gdm(const Eigen::Ref<const RowMatrix>& m) {
  std::string out;
  out.reserve(kGdmHeaderBytes + static_cast<std::size_t>(m.size()) * 4);
  out.append(kGdmMagic, 4);
  detail::put_u32(out, static_cast<std::uint32_t>(m.rows()));
  detail::put_u32(out, static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      detail::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(m(i, j))));
  return out;
}

struct GdmHeader {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
};

/// Parses `.gdm` bytes; `where` names the source in error messages.
inline RowMatrix decode_gdm(const std::string& bytes, const std::string& where) {
  if (bytes.size() < kGdmHeaderBytes)
    throw validation_error("gdm.read", where + ": file shorter than the 12-byte header");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (std::memcmp(p, kGdmMagic, 4) != 0) throw validation_error("gdm.read", where + ": bad magic");
  const std::uint32_t rows = detail::get_u32(p + 4);
  const std::uint32_t cols = detail::get_u32(p + 8);
  if (rows == 0 || cols == 0)
    throw validation_error("gdm.read", where + ": header declares an empty matrix (" +
                                           std::to_string(rows) + "x" + std::to_string(cols) + ")");
  const std::uint64_t expected = kGdmHeaderBytes + 4ULL * rows * cols;
  if (bytes.size() != expected)
    throw validation_error("gdm.read", where + ": shape mismatch, header " + std::to_string(rows) +
                                           "x" + std::to_string(cols) + " needs " +
                                           std::to_string(expected) + " bytes, file has " +
                                           std::to_string(bytes.size()));
  RowMatrix m(rows, cols);
  const unsigned char* payload = p + kGdmHeaderBytes;
  for (std::uint32_t i = 0; i < rows; ++i) {
    for (std::uint32_t j = 0; j < cols; ++j) {
      const float v = std::bit_cast<float>(detail::get_u32(payload + 4ULL * (i * cols + j)));
      if (!std::isfinite(v))
        throw validation_error("gdm.read", where + ": non-finite entry at row " + std::to_string(i) +
                                               ", col " + std::to_string(j));
      m(i, j) = static_cast<double>(v);
    }
  }
  return m;
}

inline std::string read_file_bytes(const std::filesystem::path& path, const std::string& stage) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw validation_error(stage, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file_bytes(const std::filesystem::path& path, const std::string& bytes,
                             const std::string& stage) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw validation_error(stage, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw validation_error(stage, "short write to " + path.string());
}

inline void write_gdm(const std::filesystem::path& path, const Eigen::Ref<const RowMatrix>& m) {
  write_file_bytes(path, encode_gdm(m), "gdm.write");
}

inline RowMatrix read_gdm(const std::filesystem::path& path) {
  return decode_gdm(read_file_bytes(path, "gdm.read"), path.string());
}

// ---------------------------------------------------------------------------
// In-memory bundle

/// One (task, layer) block of per-sample gradients, one row per sample.
/// Entries are held at storage precision (f32-representable doubles), which
/// makes write/read an exact round trip; analysis arithmetic runs in double.
class GradientMatrix {
 public:
  GradientMatrix(std::string task, std::string layer, const Eigen::Ref<const RowMatrix>& data)
      : task_(std::move(task)), layer_(std::move(layer)), data_(data.cast<float>().cast<double>()) {
    const std::string where = "(" + task_ + ", " + layer_ + ")";
    if (data_.rows() < 1 || data_.cols() < 1)
      throw validation_error("bundle.validate", where + ": matrix must have at least one row and column");
    for (Eigen::Index i = 0; i < data_.rows(); ++i)
      for (Eigen::Index j = 0; j < data_.cols(); ++j)
        if (!std::isfinite(data_(i, j)))
          throw validation_error("bundle.validate", where + ": non-finite entry at row " +
                                                        std::to_string(i) + ", col " + std::to_string(j));
  }

  const std::string& task() const { return task_; }
  const std::string& layer() const { return layer_; }
  Eigen::Index rows() const { return data_.rows(); }
  Eigen::Index cols() const { return data_.cols(); }
  const RowMatrix& data() const { return data_; }

 private:
  std::string task_;
  std::string layer_;
  RowMatrix data_;
};

struct LayerSpec {
  std::string name;
  Eigen::Index cols = 0;
};

/// Immutable after construction; the constructor enforces every invariant.
class GradientBundle {
 public:
  GradientBundle(std::vector<std::string> tasks, std::vector<LayerSpec> layers,
                 std::vector<GradientMatrix> entries)
      : tasks_(std::move(tasks)), layers_(std::move(layers)) {
    if (tasks_.empty()) throw validation_error("bundle.validate", "bundle has no tasks");
    if (layers_.empty()) throw validation_error("bundle.validate", "bundle has no layers");
    std::set<std::string> seen;
    for (const auto& t : tasks_) {
      if (!valid_identifier(t)) throw validation_error("bundle.validate", "invalid task identifier '" + t + "'");
      if (!seen.insert(t).second) throw validation_error("bundle.validate", "duplicate task '" + t + "'");
    }
    std::set<std::string> seen_layers;
    for (const auto& l : layers_) {
      if (!valid_identifier(l.name))
        throw validation_error("bundle.validate", "invalid layer identifier '" + l.name + "'");
      if (!seen_layers.insert(l.name).second)
        throw validation_error("bundle.validate", "duplicate layer '" + l.name + "'");
      if (l.cols < 1) throw validation_error("bundle.validate", "layer '" + l.name + "' declares no columns");
    }
    for (auto& e : entries) {
      const std::string where = "(" + e.task() + ", " + e.layer() + ")";
      if (!seen.count(e.task())) throw validation_error("bundle.validate", where + ": unknown task");
      const LayerSpec* spec = find_layer(e.layer());
      if (!spec) throw validation_error("bundle.validate", where + ": unknown layer");
      if (e.cols() != spec->cols)
        throw validation_error("bundle.validate", where + ": has " + std::to_string(e.cols()) +
                                                      " columns, layer declares " + std::to_string(spec->cols));
      auto key = std::make_pair(e.task(), e.layer());
      if (entries_.count(key)) throw validation_error("bundle.validate", where + ": duplicate entry");
      entries_.emplace(std::move(key), std::move(e));
    }
    for (const auto& t : tasks_)
      for (const auto& l : layers_)
        if (!entries_.count({t, l.name}))
          throw validation_error("bundle.validate", "(" + t + ", " + l.name + "): missing entry");
  }

  const std::vector<std::string>& tasks() const { return tasks_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }

  bool has_task(const std::string& task) const {
    return std::find(tasks_.begin(), tasks_.end(), task) != tasks_.end();
  }
  bool has_layer(const std::string& layer) const { return find_layer(layer) != nullptr; }

  const GradientMatrix& entry(const std::string& task, const std::string& layer) const {
    auto it = entries_.find({task, layer});
    if (it == entries_.end()) {
      if (!has_task(task)) throw validation_error("bundle.lookup", "unknown task '" + task + "'");
      throw validation_error("bundle.lookup", "unknown layer '" + layer + "'");
    }
    return it->second;
  }

  Eigen::Index layer_cols(const std::string& layer) const {
    const LayerSpec* spec = find_layer(layer);
    if (!spec) throw validation_error("bundle.lookup", "unknown layer '" + layer + "'");
    return spec->cols;
  }

 private:
  const LayerSpec* find_layer(const std::string& name) const {
    for (const auto& l : layers_)
      if (l.name == name) return &l;
    return nullptr;
  }

  std::vector<std::string> tasks_;
  std::vector<LayerSpec> layers_;
  std::map<std::pair<std::string, std::string>, GradientMatrix> entries_;
};

/// Read-only access to the stored per-sample gradients (rows g_{t,i}).
inline const RowMatrix& sample_gradients(const GradientBundle& bundle, const std::string& task,
                                         const std::string& layer) {
  return bundle.entry(task, layer).data();
}

/// Arithmetic mean over samples, in double precision.
inline Eigen::VectorXd mean_gradient(const GradientBundle& bundle, const std::string& task,
                                     const std::string& layer) {
  const RowMatrix& g = sample_gradients(bundle, task, layer);
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(g.cols());
  for (Eigen::Index i = 0; i < g.rows(); ++i) sum += g.row(i).transpose();
  return sum / static_cast<double>(g.rows());
}

// ---------------------------------------------------------------------------
// On-disk bundles

struct MatrixRecord {
  std::string task;
  std::string layer;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::string path;
};

struct BundleManifest {
  std::string version = kBundleVersion;
  std::string element_type = kElementType;
  std::vector<std::string> tasks;
  std::vector<LayerSpec> layers;
  std::vector<MatrixRecord> records;
};

inline std::string matrix_file_name(const std::string& task, const std::string& layer) {
  return task + "__" + layer + ".gdm";
}

inline nlohmann::ordered_json manifest_to_json(const BundleManifest& m) {
  nlohmann::ordered_json j;
  j["version"] = m.version;
  j["element_type"] = m.element_type;
  j["tasks"] = m.tasks;
  j["layers"] = nlohmann::ordered_json::array();
  for (const auto& l : m.layers) j["layers"].push_back({{"name", l.name}, {"cols", l.cols}});
  j["matrices"] = nlohmann::ordered_json::array();
  for (const auto& r : m.records)
    j["matrices"].push_back(
        {{"task", r.task}, {"layer", r.layer}, {"rows", r.rows}, {"cols", r.cols}, {"path", r.path}});
  return j;
}

inline BundleManifest manifest_from_json(const nlohmann::json& j) {
  BundleManifest m;
  try {
    m.version = j.at("version").get<std::string>();
    m.element_type = j.at("element_type").get<std::string>();
    m.tasks = j.at("tasks").get<std::vector<std::string>>();
    for (const auto& l : j.at("layers")) m.layers.push_back({l.at("name").get<std::string>(), l.at("cols").get<Eigen::Index>()});
    for (const auto& r : j.at("matrices"))
      m.records.push_back({r.at("task").get<std::string>(), r.at("layer").get<std::string>(),
                           r.at("rows").get<std::uint32_t>(), r.at("cols").get<std::uint32_t>(),
                           r.at("path").get<std::string>()});
  } catch (const nlohmann::json::exception& e) {
    throw validation_error("bundle.manifest", std::string("malformed manifest: ") + e.what());
  }
  if (m.version != kBundleVersion)
    throw validation_error("bundle.manifest", "unrecognized bundle version '" + m.version + "'");
  if (m.element_type != kElementType)
    throw validation_error("bundle.manifest", "unsupported element type '" + m.element_type + "'");
  return m;
}

inline void write_bundle(const GradientBundle& bundle, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw validation_error("bundle.write", "cannot create " + dir.string() + ": " + ec.message());
  BundleManifest manifest;
  manifest.tasks = bundle.tasks();
  manifest.layers = bundle.layers();
  for (const auto& t : bundle.tasks()) {
    for (const auto& l : bundle.layers()) {
      const GradientMatrix& e = bundle.entry(t, l.name);
      const std::string file = matrix_file_name(t, l.name);
      write_file_bytes(dir / file, encode_gdm(e.data()), "bundle.write");
      manifest.records.push_back({t, l.name, static_cast<std::uint32_t>(e.rows()),
                                  static_cast<std::uint32_t>(e.cols()), file});
    }
  }
  write_file_bytes(dir / "manifest.json", manifest_to_json(manifest).dump(2) + "\n", "bundle.write");
}

inline GradientBundle read_bundle(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!std::filesystem::exists(manifest_path))
    throw validation_error("bundle.read", "missing manifest: " + manifest_path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file_bytes(manifest_path, "bundle.read"));
  } catch (const nlohmann::json::parse_error& e) {
    throw validation_error("bundle.manifest", std::string("manifest is not valid JSON: ") + e.what());
  }
  const BundleManifest manifest = manifest_from_json(j);
  std::vector<GradientMatrix> entries;
  for (const auto& r : manifest.records) {
    const std::string where = "(" + r.task + ", " + r.layer + ") " + r.path;
    if (r.path.find('/') != std::string::npos || r.path.find('\\') != std::string::npos)
      throw validation_error("bundle.read", where + ": matrix paths must be plain file names");
    const auto file = dir / r.path;
    if (!std::filesystem::exists(file)) throw validation_error("bundle.read", where + ": matrix file missing");
    RowMatrix m = decode_gdm(read_file_bytes(file, "bundle.read"), where);
    if (m.rows() != r.rows || m.cols() != r.cols)
      throw validation_error("bundle.read", where + ": header " + std::to_string(m.rows()) + "x" +
                                                std::to_string(m.cols()) + " disagrees with manifest " +
                                                std::to_string(r.rows) + "x" + std::to_string(r.cols));
    entries.emplace_back(r.task, r.layer, m);
  }
  return GradientBundle(manifest.tasks, manifest.layers, std::move(entries));
}

/// Content fingerprint over identifiers and stored values (storage precision).
inline std::string bundle_fingerprint(const GradientBundle& bundle) {
  Fnv1a h;
  for (const auto& t : bundle.tasks()) {
    for (const auto& l : bundle.layers()) {
      h.update(t);
      h.update("\x1f", 1);
      h.update(l.name);
      h.update(encode_gdm(bundle.entry(t, l.name).data()));
    }
  }
  return hex64(h.digest());
}

}  // namespace gdps

#endif
