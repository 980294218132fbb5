#pragma once

#include <map>
#include <string>

#include <json.hpp>

#include "pinet/layer.hpp"
#include "pinet/problems.hpp"
#include "pinet/tensor.hpp"

namespace pinet {

/**
 * Versioned binary container:
 *
 *   8 bytes   magic "PINETBIN"
 *   u32       format version
 *   u64       header length L
 *   L bytes   JSON header (sorted keys); "arrays" maps each name to
 *             {rows, cols, offset} with offsets in doubles into the payload
 *   payload   float64, little-endian, row-major, arrays in key order
 */
struct Container {
  std::string kind;
  nlohmann::json header = nlohmann::json::object();
  std::map<std::string, RowMatrix> arrays;

  void put(const std::string& name, const Eigen::Ref<const Matrix>& m) { arrays[name] = m; }
  void put_vector(const std::string& name, const Vector& v) { arrays[name] = v; }
  const RowMatrix& get(const std::string& name) const;
  Matrix matrix(const std::string& name) const { return get(name); }
  Vector vector(const std::string& name) const;
  bool has(const std::string& name) const { return arrays.count(name) > 0; }
};

inline constexpr std::uint32_t kContainerVersion = 1;

std::string encode_container(const Container& c);
Container decode_container(const std::string& bytes);

/// Throws MissingArtifactError when the file is absent and FormatError on a
/// bad magic, version or layout.
void write_container(const std::string& path, const Container& c);
Container read_container(const std::string& path, const std::string& expected_kind = "");

Container dataset_to_container(const Dataset& ds);
Dataset dataset_from_container(const Container& c);
void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);

Container model_to_container(const PinetModel& model);
PinetModel model_from_container(const Container& c);
void save_model(const std::string& path, const PinetModel& model);
PinetModel load_model(const std::string& path);

nlohmann::json settings_to_json(const DRSettings& s);
DRSettings settings_from_json(const nlohmann::json& j);

}  // namespace pinet
